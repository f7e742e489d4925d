//! Static hybrid models: an interpretable part plus a kernel residual
//! `Σ c_i κ(x_i, x)` anchored at the training inputs.
//!
//! Three ways to pick the interpretable part:
//!
//! - a fixed reference model, with the residual fitted by kernel ridge
//!   regression ([`fit_reference_krr`]);
//! - a linear combination `φ(x)ᵀθ` fitted jointly with the residual
//!   ([`fit_subspace`]);
//! - a convex mixture `Σ b_j h(x|θ_j)` over sampled parameters, fitted with
//!   the residual as a simplex-constrained QP ([`fit_mixture`]).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram, KernelSpec};
use crate::linalg::{dot, solve_spd, Matrix};
use crate::simplex_qp::{self, QpOptions, SimplexQpProblem};

/// Minimum distance between two dataset inputs.
pub const DUPLICATE_TOL: f64 = 1e-9;

pub trait ScalarModel {
    fn eval(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> ScalarModel for F {
    fn eval(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

pub trait FeatureMap {
    fn dim(&self) -> usize;
    fn features(&self, x: &[f64]) -> Vec<f64>;
}

/// A feature map from a closure with a declared output dimension.
#[derive(Debug, Clone, Copy)]
pub struct FnFeatures<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FeatureMap for FnFeatures<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

/// `h(x | θ)`.
pub trait ParametricModel {
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64;
}

impl<F: Fn(&[f64], &[f64]) -> f64> ParametricModel for F {
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        self(x, theta)
    }
}

pub trait Predictor {
    fn predict(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    /// Rejects empty data, ragged inputs, non-finite values and inputs closer
    /// than [`DUPLICATE_TOL`].
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::dims(inputs.len(), targets.len()));
        }
        if inputs.is_empty() {
            return Err(Error::param("dataset", "must be nonempty"));
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(Error::param("inputs", "must have at least one coordinate"));
        }
        for x in &inputs {
            if x.len() != d {
                return Err(Error::dims(d, x.len()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset inputs"));
            }
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset targets"));
        }
        for i in 0..inputs.len() {
            for j in 0..i {
                let d2: f64 = inputs[i]
                    .iter()
                    .zip(&inputs[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 < DUPLICATE_TOL * DUPLICATE_TOL {
                    return Err(Error::DuplicateInput(j, i));
                }
            }
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn from_scalar(xs: &[f64], ys: &[f64]) -> Result<Self> {
        Dataset::new(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// `x ↦ Σ c_i κ(x_i, x)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelResidual {
    pub kernel: KernelSpec,
    pub anchors: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
}

impl KernelResidual {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.anchors
            .iter()
            .zip(&self.coeffs)
            .map(|(a, c)| c * self.kernel.eval_unchecked(a, x))
            .sum()
    }

    /// `cᵀGc`, the squared RKHS norm.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let g = gram(&self.kernel, &self.anchors).expect("anchors are nonempty");
        dot(&self.coeffs, &g.mul_vec(&self.coeffs))
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceKrrModel<R> {
    pub reference: R,
    pub residual: KernelResidual,
    pub lambda: f64,
}

impl<R: ScalarModel> Predictor for ReferenceKrrModel<R> {
    fn predict(&self, x: &[f64]) -> f64 {
        self.reference.eval(x) + self.residual.eval(x)
    }
}

#[derive(Debug, Clone)]
pub struct SubspaceModel<F> {
    pub feature_map: F,
    pub theta: Vec<f64>,
    pub residual: KernelResidual,
    pub lambda_theta: f64,
    pub lambda_r: f64,
}

impl<F: FeatureMap> Predictor for SubspaceModel<F> {
    fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.feature_map.features(x), &self.theta) + self.residual.eval(x)
    }
}

#[derive(Debug, Clone)]
pub struct MixtureModel<H> {
    pub family: H,
    pub theta_samples: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub residual: KernelResidual,
    pub kernel_theta: KernelSpec,
    pub lambda_omega: f64,
    pub lambda_r: f64,
    /// Value of the fitted objective, including the `yᵀy` constant.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl<H: ParametricModel> MixtureModel<H> {
    pub fn interpretable(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.theta_samples)
            .filter(|(b, _)| **b != 0.0)
            .map(|(b, t)| b * self.family.eval(x, t))
            .sum()
    }
}

impl<H: ParametricModel> Predictor for MixtureModel<H> {
    fn predict(&self, x: &[f64]) -> f64 {
        self.interpretable(x) + self.residual.eval(x)
    }
}

fn check_lambda(name: &'static str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = v.is_finite() && if allow_zero { v >= 0.0 } else { v > 0.0 };
    if ok {
        Ok(())
    } else if allow_zero {
        Err(Error::param(name, "must be nonnegative and finite"))
    } else {
        Err(Error::param(name, "must be positive and finite"))
    }
}

fn residual(kernel: &KernelSpec, data: &Dataset, coeffs: Vec<f64>) -> KernelResidual {
    KernelResidual {
        kernel: *kernel,
        anchors: data.inputs.clone(),
        coeffs,
    }
}

/// `c = (G + λI)⁻¹ η` with `η_i = y_i − h°(x_i)`.
pub fn fit_reference_krr<R: ScalarModel>(
    data: &Dataset,
    reference: R,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<ReferenceKrrModel<R>> {
    check_lambda("lambda", lambda, false)?;
    let eta: Vec<f64> = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, y)| y - reference.eval(x))
        .collect();
    let mut g = gram(kernel, &data.inputs)?;
    g.add_diagonal(lambda);
    let c = solve_spd(&g, &Matrix::column(&eta))?;
    Ok(ReferenceKrrModel {
        reference,
        residual: residual(kernel, data, c.as_slice().to_vec()),
        lambda,
    })
}

/// `‖η − Gc‖² + λ cᵀGc`.
pub fn reference_objective<R: ScalarModel>(data: &Dataset, model: &ReferenceKrrModel<R>) -> f64 {
    let fit: f64 = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, y)| {
            let r = y - model.predict(x);
            r * r
        })
        .sum();
    fit + model.lambda * model.residual.rkhs_norm_sq()
}

fn feature_matrix<F: FeatureMap>(phi: &F, inputs: &[Vec<f64>]) -> Result<Matrix> {
    let n = phi.dim();
    let rows: Vec<Vec<f64>> = inputs.iter().map(|x| phi.features(x)).collect();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::dims(n, bad.len()));
    }
    Matrix::from_rows(&rows)
}

/// Joint fit of `θ` and `c` from the stacked normal equations
///
/// ```text
/// [ΦᵀΦ + λθI   ΦᵀG      ] [θ]   [Φᵀy]
/// [GᵀΦ         GᵀG + λrG] [c] = [Gᵀy]
/// ```
pub fn fit_subspace<F: FeatureMap>(
    data: &Dataset,
    feature_map: F,
    kernel: &KernelSpec,
    lambda_theta: f64,
    lambda_r: f64,
) -> Result<SubspaceModel<F>> {
    check_lambda("lambda_theta", lambda_theta, false)?;
    check_lambda("lambda_r", lambda_r, false)?;
    let phi = feature_matrix(&feature_map, &data.inputs)?;
    let g = gram(kernel, &data.inputs)?;
    let (n, p) = (data.len(), feature_map.dim());

    let mut ptp = phi.tr_matmul(&phi);
    ptp.add_diagonal(lambda_theta);
    let ptg = phi.tr_matmul(&g);
    let mut gg = g.tr_matmul(&g);
    gg.add_scaled(lambda_r, &g);

    let mut k = Matrix::zeros(p + n, p + n);
    k.set_block(0, 0, &ptp);
    k.set_block(0, p, &ptg);
    k.set_block(p, 0, &ptg.transpose());
    k.set_block(p, p, &gg);
    k.symmetrize();

    let mut rhs = phi.tr_mul_vec(&data.targets);
    rhs.extend(g.tr_mul_vec(&data.targets));
    let sol = solve_spd(&k, &Matrix::column(&rhs))?;
    let sol = sol.as_slice();
    Ok(SubspaceModel {
        feature_map,
        theta: sol[..p].to_vec(),
        residual: residual(kernel, data, sol[p..].to_vec()),
        lambda_theta,
        lambda_r,
    })
}

/// `‖y − Φθ − Gc‖² + λθ‖θ‖² + λr cᵀGc` for any `(θ, c)`.
pub fn subspace_objective<F: FeatureMap>(
    data: &Dataset,
    feature_map: &F,
    kernel: &KernelSpec,
    theta: &[f64],
    coeffs: &[f64],
    lambda_theta: f64,
    lambda_r: f64,
) -> f64 {
    let res = residual(kernel, data, coeffs.to_vec());
    let fit: f64 = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, y)| {
            let r = y - dot(&feature_map.features(x), theta) - res.eval(x);
            r * r
        })
        .sum();
    fit + lambda_theta * dot(theta, theta) + lambda_r * res.rkhs_norm_sq()
}

/// Fits `Σ b_j h(x|θ_j) + Σ c_i κ(x_i, x)` with `b` on the simplex:
///
/// ```text
/// minimize ‖Hb + Gc − y‖² + λω bᵀGθb + λr cᵀGc
/// ```
///
/// where `H_ij = h(x_i|θ_j)` and `Gθ` is the Gram matrix of the samples under
/// `kernel_theta`.
#[allow(clippy::too_many_arguments)]
pub fn fit_mixture<H: ParametricModel>(
    data: &Dataset,
    family: H,
    theta_samples: Vec<Vec<f64>>,
    kernel_x: &KernelSpec,
    kernel_theta: &KernelSpec,
    lambda_omega: f64,
    lambda_r: f64,
    opts: &QpOptions,
) -> Result<MixtureModel<H>> {
    check_lambda("lambda_omega", lambda_omega, true)?;
    check_lambda("lambda_r", lambda_r, false)?;
    if theta_samples.is_empty() {
        return Err(Error::param("theta_samples", "need at least one sample"));
    }
    let (n, m) = (data.len(), theta_samples.len());
    let h = Matrix::from_fn(n, m, |i, j| family.eval(&data.inputs[i], &theta_samples[j]));
    if !h.is_finite() {
        return Err(Error::NonFinite("model family evaluations"));
    }
    let g = gram(kernel_x, &data.inputs)?;
    let g_theta = gram(kernel_theta, &theta_samples)?;
    let y = &data.targets;

    let mut hh = h.tr_matmul(&h);
    hh.add_scaled(lambda_omega, &g_theta);
    let hg = h.tr_matmul(&g);
    let mut gg = g.matmul(&g);
    gg.add_scaled(lambda_r, &g);
    let mut quad = Matrix::zeros(m + n, m + n);
    quad.set_block(0, 0, &hh);
    quad.set_block(0, m, &hg);
    quad.set_block(m, 0, &hg.transpose());
    quad.set_block(m, m, &gg);
    quad.symmetrize();

    let mut linear: Vec<f64> = h.tr_mul_vec(y).iter().map(|v| -2.0 * v).collect();
    linear.extend(g.mul_vec(y).iter().map(|v| -2.0 * v));

    let problem = SimplexQpProblem::new(quad, linear, m)?;
    let sol = simplex_qp::solve(&problem, opts)?;
    Ok(MixtureModel {
        family,
        theta_samples,
        weights: sol.b,
        residual: residual(kernel_x, data, sol.c_free),
        kernel_theta: *kernel_theta,
        lambda_omega,
        lambda_r,
        objective: sol.objective + dot(y, y),
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
    })
}

/// Direct evaluation of the mixture objective at the model's `(b, c)`.
pub fn mixture_objective<H: ParametricModel>(data: &Dataset, model: &MixtureModel<H>) -> f64 {
    let fit: f64 = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, y)| {
            let r = y - model.predict(x);
            r * r
        })
        .sum();
    let g_theta = gram(&model.kernel_theta, &model.theta_samples).expect("samples are nonempty");
    fit + model.lambda_omega * dot(&model.weights, &g_theta.mul_vec(&model.weights))
        + model.lambda_r * model.residual.rkhs_norm_sq()
}

/// `θ* = Σ b_j θ_j`.
pub fn effective_parameter<H>(model: &MixtureModel<H>) -> Vec<f64> {
    let d = model.theta_samples.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (b, t) in model.weights.iter().zip(&model.theta_samples) {
        for (o, ti) in out.iter_mut().zip(t) {
            *o += b * ti;
        }
    }
    out
}

pub fn rmse<M: Predictor + ?Sized>(model: &M, data: &Dataset) -> f64 {
    let sse: f64 = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, y)| {
            let r = model.predict(x) - y;
            r * r
        })
        .sum();
    libm::sqrt(sse / data.len() as f64)
}

/// Predictions of `model` at each input, as a convenience for reporting.
pub fn predict_all<M: Predictor + ?Sized, P: AsRef<[f64]>>(model: &M, xs: &[P]) -> Vec<f64> {
    xs.iter().map(|x| model.predict(x.as_ref())).collect()
}

/// Cross-Gram between new inputs and a residual's anchors.
pub fn residual_design(res: &KernelResidual, xs: &[Vec<f64>]) -> Result<Matrix> {
    cross_gram(&res.kernel, xs, &res.anchors)
}
