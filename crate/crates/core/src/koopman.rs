//! Continuous-time Koopman generator models on a planar state space.
//!
//! Observables are the monomials
//! `ψ(x) = (x1, x1², …, x1^q, x2, x1x2, …, x1^(q−1)x2)`, so `N = 2q` and the
//! state is read back from components `0` and `q`.
//!
//! The hybrid generator is `Σ b_j A_j + R`: a convex mixture of generators of
//! a parameterized drift family plus an unconstrained residual matrix, fitted
//! against `ψ̇(x) = Dψ(x)·ẋ` as a simplex-constrained QP over `(b, vec R)`.
//! Each `A_j` and the input channels come from least-squares closures on a
//! dense state lattice, giving the bilinear lifted model
//!
//! ```text
//! ż = (Σ b_j A_j + R) z + Σ_k u_k (β_k + Γ_k z)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, kron, solve_least_squares, unvec, vec as vec_of, Matrix};
use crate::rng;
use crate::simplex_qp::{self, QpOptions, SimplexQpProblem};

/// Half-width of the square state domain `[−0.25, 0.25]²`.
pub const STATE_HALF_WIDTH: f64 = 0.25;
pub const DEFAULT_LATTICE: usize = 33;

pub type State = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonomialBasis {
    q: usize,
}

impl MonomialBasis {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::param("q", "must be at least 1"));
        }
        Ok(MonomialBasis { q })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        2 * self.q
    }

    pub fn eval(&self, x: State) -> Vec<f64> {
        let [x1, x2] = x;
        let mut out = Vec::with_capacity(self.dim());
        let mut p = 1.0;
        for _ in 0..self.q {
            p *= x1;
            out.push(p);
        }
        let mut p = 1.0;
        for _ in 0..self.q {
            out.push(p * x2);
            p *= x1;
        }
        out
    }

    /// `N × 2` matrix of partial derivatives.
    pub fn jacobian(&self, x: State) -> Matrix {
        let [x1, x2] = x;
        let q = self.q;
        let mut jac = Matrix::zeros(self.dim(), 2);
        // powers[k] = x1^k
        let mut powers = vec![1.0; q + 1];
        for k in 1..=q {
            powers[k] = powers[k - 1] * x1;
        }
        for k in 1..=q {
            jac[(k - 1, 0)] = k as f64 * powers[k - 1];
        }
        for k in 0..q {
            if k > 0 {
                jac[(q + k, 0)] = k as f64 * powers[k - 1] * x2;
            }
            jac[(q + k, 1)] = powers[k];
        }
        jac
    }

    /// `Dψ(x)·v`.
    pub fn lie_derivative(&self, x: State, v: State) -> Vec<f64> {
        self.jacobian(x).mul_vec(&v)
    }
}

pub trait VectorField {
    fn eval(&self, x: State) -> State;
}

impl<F: Fn(State) -> State> VectorField for F {
    fn eval(&self, x: State) -> State {
        self(x)
    }
}

/// `f0(x | θ)`: a drift parameterized by `θ`.
pub trait ParamDriftFamily {
    fn eval(&self, x: State, theta: &[f64]) -> State;
}

impl<F: Fn(State, &[f64]) -> State> ParamDriftFamily for F {
    fn eval(&self, x: State, theta: &[f64]) -> State {
        self(x, theta)
    }
}

/// A family member at a fixed parameter, usable as a vector field.
#[derive(Debug, Clone, Copy)]
pub struct FamilyMember<'a, F> {
    pub family: &'a F,
    pub theta: &'a [f64],
}

impl<F: ParamDriftFamily> VectorField for FamilyMember<'_, F> {
    fn eval(&self, x: State) -> State {
        self.family.eval(x, self.theta)
    }
}

/// Reactor drift in deviation variables. Non-finite at `x1 = −3/2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CstrDrift;

/// Reactor input channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CstrInput;

/// `f0(x|θ) = (−x1/4 − θ1x1 − θ2x1², −3x2/4 + θ1x1 + θ2x1²)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CstrFamily;

pub fn cstr_drift(x: State) -> Result<State> {
    let [x1, x2] = x;
    let denom = 3.0 + 2.0 * x1;
    if denom == 0.0 {
        return Err(Error::Domain("reactor drift singular at x1 = -3/2"));
    }
    let rate = 9.0 * (1.0 + x1) / (4.0 * denom);
    Ok([(3.0 - x1) / 4.0 - rate, -3.0 * (1.0 + x2) / 4.0 + rate])
}

impl VectorField for CstrDrift {
    fn eval(&self, x: State) -> State {
        cstr_drift(x).unwrap_or([f64::NAN; 2])
    }
}

impl VectorField for CstrInput {
    fn eval(&self, x: State) -> State {
        let [x1, x2] = x;
        [(3.0 - x1) / 4.0, -(1.0 + x2) / 4.0]
    }
}

impl ParamDriftFamily for CstrFamily {
    fn eval(&self, x: State, theta: &[f64]) -> State {
        let [x1, x2] = x;
        let s = theta[0] * x1 + theta[1] * x1 * x1;
        [-x1 / 4.0 - s, -3.0 * x2 / 4.0 + s]
    }
}

/// `(f0_true, f1, f0_family)` for the reactor example.
pub fn cstr_fields() -> (CstrDrift, CstrInput, CstrFamily) {
    (CstrDrift, CstrInput, CstrFamily)
}

/// States with their drift velocities `ẋ = f(x)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftSample {
    pub states: Vec<State>,
    pub velocities: Vec<State>,
}

impl DriftSample {
    pub fn from_field<F: VectorField + ?Sized>(states: Vec<State>, field: &F) -> Result<Self> {
        let velocities: Vec<State> = states.iter().map(|&x| field.eval(x)).collect();
        if velocities
            .iter()
            .flatten()
            .chain(states.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("drift sample"));
        }
        Ok(DriftSample { states, velocities })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `n` states drawn uniformly from the square state domain.
pub fn sample_states(n: usize, seed: u64) -> Vec<State> {
    rng::uniform_points::<2>(n, -STATE_HALF_WIDTH, STATE_HALF_WIDTH, seed)
}

/// `m` parameters drawn uniformly from `[0, 1]²`.
pub fn sample_parameters(m: usize, seed: u64) -> Vec<Vec<f64>> {
    rng::uniform_points::<2>(m, 0.0, 1.0, seed)
        .into_iter()
        .map(|t| t.to_vec())
        .collect()
}

/// `k × k` lattice on `[lo, hi]²`, first coordinate varying slowest.
pub fn state_lattice(k: usize, lo: f64, hi: f64) -> Vec<State> {
    let step = if k > 1 {
        (hi - lo) / (k - 1) as f64
    } else {
        0.0
    };
    let ticks: Vec<f64> = (0..k).map(|i| lo + step * i as f64).collect();
    ticks
        .iter()
        .flat_map(|&a| ticks.iter().map(move |&b| [a, b]))
        .collect()
}

/// The default closure lattice on the state domain.
pub fn default_lattice() -> Vec<State> {
    state_lattice(DEFAULT_LATTICE, -STATE_HALF_WIDTH, STATE_HALF_WIDTH)
}

fn lifted_rows(basis: &MonomialBasis, sample: &DriftSample) -> (Matrix, Matrix) {
    let psi: Vec<Vec<f64>> = sample.states.iter().map(|&x| basis.eval(x)).collect();
    let psi_dot: Vec<Vec<f64>> = sample
        .states
        .iter()
        .zip(&sample.velocities)
        .map(|(&x, &v)| basis.lie_derivative(x, v))
        .collect();
    (
        Matrix::from_rows(&psi).expect("consistent basis rows"),
        Matrix::from_rows(&psi_dot).expect("consistent basis rows"),
    )
}

/// Generator EDMD: `argmin_A Σ ‖A ψ(x_i) − ψ̇(x_i)‖²`.
pub fn gedmd(sample: &DriftSample, basis: &MonomialBasis) -> Result<Matrix> {
    if sample.len() < basis.dim() {
        return Err(Error::param("sample", "needs at least N states"));
    }
    let (psi, psi_dot) = lifted_rows(basis, sample);
    Ok(solve_least_squares(&psi, &psi_dot)?.transpose())
}

/// `Σ ‖A ψ(x_i) − ψ̇(x_i)‖²`.
pub fn generator_residual(sample: &DriftSample, basis: &MonomialBasis, a: &Matrix) -> f64 {
    sample
        .states
        .iter()
        .zip(&sample.velocities)
        .map(|(&x, &v)| {
            let pred = a.mul_vec(&basis.eval(x));
            let target = basis.lie_derivative(x, v);
            pred.iter()
                .zip(&target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
        })
        .sum()
}

/// The hybrid generator problem as a QP over `(b, vec R)`, with the constant
/// `Σ ‖ψ̇_i‖²` that the QP objective omits.
///
/// With `M_iᵀ = [Ψ̇_i, ψ_iᵀ ⊗ I_N]` and `Ψ̇_i` the matrix whose column `j` is
/// `Dψ(x_i) f0(x_i|θ_j)`:
///
/// ```text
/// Q = Σ M_i M_iᵀ + diag(λ_b I, λ_R I),    q = −2 Σ M_i ψ̇_i
/// ```
pub fn generator_qp<F: ParamDriftFamily>(
    sample: &DriftSample,
    family: &F,
    theta_samples: &[Vec<f64>],
    basis: &MonomialBasis,
    lambda_b: f64,
    lambda_r: f64,
) -> Result<(SimplexQpProblem, f64)> {
    if theta_samples.is_empty() {
        return Err(Error::param("theta_samples", "need at least one sample"));
    }
    if !(lambda_b >= 0.0 && lambda_b.is_finite()) {
        return Err(Error::param("lambda_b", "must be nonnegative and finite"));
    }
    if !(lambda_r > 0.0 && lambda_r.is_finite()) {
        return Err(Error::param("lambda_R", "must be positive and finite"));
    }
    let m = theta_samples.len();
    let n = basis.dim();
    let dim = m + n * n;
    let eye = Matrix::identity(n);
    let mut quad = Matrix::zeros(dim, dim);
    let mut linear = vec![0.0; dim];
    let mut constant = 0.0;
    for (&x, &v) in sample.states.iter().zip(&sample.velocities) {
        let jac = basis.jacobian(x);
        let psi = basis.eval(x);
        let target = jac.mul_vec(&v);
        let mut mt = Matrix::zeros(n, dim);
        for (j, theta) in theta_samples.iter().enumerate() {
            let col = jac.mul_vec(&family.eval(x, theta));
            for (r, c) in col.into_iter().enumerate() {
                mt[(r, j)] = c;
            }
        }
        mt.set_block(0, m, &kron(&Matrix::from_rows(&[psi]).expect("row"), &eye));
        quad.add_scaled(1.0, &mt.tr_matmul(&mt));
        for (l, t) in linear.iter_mut().zip(mt.tr_mul_vec(&target)) {
            *l -= 2.0 * t;
        }
        constant += dot(&target, &target);
    }
    for i in 0..dim {
        quad[(i, i)] += if i < m { lambda_b } else { lambda_r };
    }
    quad.symmetrize();
    if !quad.is_finite() || linear.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generator QP"));
    }
    Ok((SimplexQpProblem::new(quad, linear, m)?, constant))
}

/// Direct evaluation of
/// `Σ ‖Σ_j b_j Dψ f0(x_i|θ_j) + R ψ(x_i) − ψ̇(x_i)‖² + λ_b‖b‖² + λ_R‖R‖²_F`.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<F: ParamDriftFamily>(
    sample: &DriftSample,
    family: &F,
    theta_samples: &[Vec<f64>],
    basis: &MonomialBasis,
    lambda_b: f64,
    lambda_r: f64,
    b: &[f64],
    r: &Matrix,
) -> f64 {
    let fit: f64 = sample
        .states
        .iter()
        .zip(&sample.velocities)
        .map(|(&x, &v)| {
            let mut drift = [0.0; 2];
            for (bj, theta) in b.iter().zip(theta_samples) {
                let f = family.eval(x, theta);
                drift[0] += bj * f[0];
                drift[1] += bj * f[1];
            }
            let pred = basis.lie_derivative(x, drift);
            let corr = r.mul_vec(&basis.eval(x));
            let target = basis.lie_derivative(x, v);
            pred.iter()
                .zip(&corr)
                .zip(&target)
                .map(|((p, c), t)| (p + c - t) * (p + c - t))
                .sum::<f64>()
        })
        .sum();
    let fro = r.frobenius_norm();
    fit + lambda_b * dot(b, b) + lambda_r * fro * fro
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorFit {
    pub weights: Vec<f64>,
    pub residual: Matrix,
    /// Full objective, constant included.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn fit_hybrid_generator<F: ParamDriftFamily>(
    sample: &DriftSample,
    family: &F,
    theta_samples: &[Vec<f64>],
    basis: &MonomialBasis,
    lambda_b: f64,
    lambda_r: f64,
    opts: &QpOptions,
) -> Result<GeneratorFit> {
    let (problem, constant) =
        generator_qp(sample, family, theta_samples, basis, lambda_b, lambda_r)?;
    let sol = simplex_qp::solve(&problem, opts)?;
    let n = basis.dim();
    Ok(GeneratorFit {
        weights: sol.b,
        residual: unvec(&sol.c_free, n, n)?,
        objective: sol.objective + constant,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
    })
}

/// Least-squares closure `Dψ(x) f(x) ≈ β + Γ ψ(x)` (or `Γ ψ(x)` when not
/// affine).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Closure {
    pub beta: Vec<f64>,
    pub gamma: Matrix,
    /// Largest absolute fit error over the lattice.
    pub residual: f64,
}

impl Closure {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.gamma.mul_vec(z);
        for (o, b) in out.iter_mut().zip(&self.beta) {
            *o += b;
        }
        out
    }
}

pub fn closure_fit<F: VectorField + ?Sized>(
    field: &F,
    basis: &MonomialBasis,
    grid: &[State],
    affine: bool,
) -> Result<Closure> {
    let n = basis.dim();
    let width = n + usize::from(affine);
    if grid.len() < n + 1 {
        return Err(Error::param("grid", "needs at least N + 1 states"));
    }
    let design = Matrix::from_fn(grid.len(), width, |g, c| {
        if affine && c == 0 {
            1.0
        } else {
            basis.eval(grid[g])[c - usize::from(affine)]
        }
    });
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .map(|&x| basis.lie_derivative(x, field.eval(x)))
        .collect();
    let target = Matrix::from_rows(&rows)?;
    if !target.is_finite() {
        return Err(Error::NonFinite("closure targets"));
    }
    let w = solve_least_squares(&design, &target)?;
    let residual = design.matmul(&w).sub(&target).max_abs();
    let beta = if affine {
        w.row(0).to_vec()
    } else {
        vec![0.0; n]
    };
    let gamma = w.submatrix(usize::from(affine), 0, n, n).transpose();
    Ok(Closure {
        beta,
        gamma,
        residual,
    })
}

/// Closures `A_j` of each family member on the grid.
pub fn family_closures<F: ParamDriftFamily>(
    family: &F,
    theta_samples: &[Vec<f64>],
    basis: &MonomialBasis,
    grid: &[State],
) -> Result<Vec<Matrix>> {
    theta_samples
        .iter()
        .map(|theta| {
            let member = FamilyMember { family, theta };
            Ok(closure_fit(&member, basis, grid, false)?.gamma)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KoopmanHybridModel {
    pub basis: MonomialBasis,
    pub weights: Vec<f64>,
    pub residual: Matrix,
    pub closure_a: Vec<Matrix>,
    pub inputs: Vec<Closure>,
    /// `Σ b_j A_j + R`.
    pub a_eff: Matrix,
}

pub fn assemble_bilinear(
    basis: MonomialBasis,
    weights: Vec<f64>,
    residual: Matrix,
    closure_a: Vec<Matrix>,
    inputs: Vec<Closure>,
) -> Result<KoopmanHybridModel> {
    let n = basis.dim();
    if weights.len() != closure_a.len() {
        return Err(Error::dims(closure_a.len(), weights.len()));
    }
    let square = |m: &Matrix| m.rows() == n && m.cols() == n;
    if !square(&residual) {
        return Err(Error::dims(n, residual.rows()));
    }
    if let Some(bad) = closure_a.iter().find(|a| !square(a)) {
        return Err(Error::dims(n, bad.rows()));
    }
    if let Some(bad) = inputs
        .iter()
        .find(|c| !square(&c.gamma) || c.beta.len() != n)
    {
        return Err(Error::dims(n, bad.beta.len()));
    }
    let mut a_eff = residual.clone();
    for (b, a) in weights.iter().zip(&closure_a) {
        a_eff.add_scaled(*b, a);
    }
    Ok(KoopmanHybridModel {
        basis,
        weights,
        residual,
        closure_a,
        inputs,
        a_eff,
    })
}

impl KoopmanHybridModel {
    /// `ż = A_eff z + Σ_k u_k (β_k + Γ_k z)`.
    pub fn rhs(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.inputs.len(), "one control per input channel");
        let mut out = self.a_eff.mul_vec(z);
        for (uk, ch) in u.iter().zip(&self.inputs) {
            for (o, v) in out.iter_mut().zip(ch.apply(z)) {
                *o += uk * v;
            }
        }
        out
    }

    /// Free parameters: `N²` entries of `R` plus `m` weights.
    pub fn dof(&self) -> usize {
        let n = self.basis.dim();
        n * n + self.weights.len()
    }

    /// Drift velocity of the state read from the lifted model at `ψ(x)`.
    pub fn predict_velocity(&self, x: State) -> State {
        let z = self.a_eff.mul_vec(&self.basis.eval(x));
        [z[0], z[self.basis.q()]]
    }
}

/// `sqrt(mean ‖ẋ_pred − ẋ‖²/2)` over the sample, i.e. RMSE over both
/// velocity components.
pub fn velocity_rmse(model: &KoopmanHybridModel, sample: &DriftSample) -> f64 {
    let sse: f64 = sample
        .states
        .iter()
        .zip(&sample.velocities)
        .map(|(&x, v)| {
            let p = model.predict_velocity(x);
            let (e0, e1) = (p[0] - v[0], p[1] - v[1]);
            e0 * e0 + e1 * e1
        })
        .sum();
    libm::sqrt(sse / (2 * sample.len()) as f64)
}

/// Column-major `vec R`, exposed for callers building their own stacks.
pub fn vec_residual(r: &Matrix) -> Vec<f64> {
    vec_of(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn q3() -> MonomialBasis {
        MonomialBasis::new(3).unwrap()
    }

    #[test]
    fn basis_examples() {
        let b = q3();
        assert_eq!(b.dim(), 6);
        assert_eq!(b.eval([0.0, 0.0]), [0.0; 6]);
        assert_eq!(b.eval([1.0, 1.0]), [1.0; 6]);
        assert_eq!(b.eval([0.5, 2.0]), [0.5, 0.25, 0.125, 2.0, 1.0, 0.5]);
        assert!(MonomialBasis::new(0).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let b = q3();
        let j = b.jacobian([0.3, -0.7]);
        assert_eq!(j.row(0), [1.0, 0.0]);
        // ψ_4 = x1 x2
        assert!((j[(4, 0)] + 0.7).abs() < 1e-15 && (j[(4, 1)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let b = MonomialBasis::new(4).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for x in sample_states(20, 5) {
            let j = b.jacobian(x);
            for d in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let (fp, fm) = (b.eval(xp), b.eval(xm));
                for k in 0..b.dim() {
                    worst = worst.max(((fp[k] - fm[k]) / (2.0 * h) - j[(k, d)]).abs());
                }
            }
        }
        assert!(worst < 1e-6, "{worst:e}");
    }

    #[test]
    fn cstr_examples() {
        let (f0, f1, fam) = cstr_fields();
        let v = f0.eval([0.0, 0.0]);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        assert_eq!(f1.eval([0.0, 0.0]), [0.75, -0.25]);
        let x = [0.2, -0.1];
        let g = fam.eval(x, &[0.0, 0.0]);
        assert_eq!(g, [-0.2 / 4.0, -3.0 * -0.1 / 4.0]);
        assert!(cstr_drift([-1.5, 0.0]).is_err());
    }

    #[test]
    fn gedmd_recovers_linear_generator() {
        let a = -0.8;
        let states = sample_states(30, 1);
        let sample =
            DriftSample::from_field(states.clone(), &|x: State| [a * x[0], a * x[1]]).unwrap();
        let basis = MonomialBasis::new(1).unwrap();
        let gen = gedmd(&sample, &basis).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { a } else { 0.0 };
                assert!((gen[(i, j)] - expect).abs() < 1e-12);
            }
        }

        let sample = DriftSample::from_field(states, &|x: State| [a * x[0], 0.0]).unwrap();
        let basis = MonomialBasis::new(2).unwrap();
        let gen = gedmd(&sample, &basis).unwrap();
        // (x1, x1², x2, x1x2) → diag(a, 2a, 0, a)
        let diag = [a, 2.0 * a, 0.0, a];
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { diag[i] } else { 0.0 };
                assert!(
                    (gen[(i, j)] - expect).abs() < 1e-10,
                    "({i},{j}) = {}",
                    gen[(i, j)]
                );
            }
        }
    }

    #[test]
    fn gedmd_residual_positive_on_reactor() {
        let sample = DriftSample::from_field(sample_states(200, 2), &CstrDrift).unwrap();
        let basis = q3();
        let gen = gedmd(&sample, &basis).unwrap();
        assert!(generator_residual(&sample, &basis, &gen) > 1e-12);
    }

    #[test]
    fn input_closure_is_exact() {
        let c = closure_fit(&CstrInput, &q3(), &default_lattice(), true).unwrap();
        assert!(c.residual < 1e-10, "{:e}", c.residual);
    }

    #[test]
    fn linear_family_member_closure_is_exact() {
        let member = FamilyMember {
            family: &CstrFamily,
            theta: &[0.6, 0.0],
        };
        let c = closure_fit(&member, &q3(), &default_lattice(), false).unwrap();
        assert!(c.residual < 1e-10);
        assert!(c.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_field_closure_vanishes() {
        let c = closure_fit(&|_: State| [0.0, 0.0], &q3(), &default_lattice(), true).unwrap();
        assert!(c.beta.iter().all(|&b| b == 0.0));
        assert_eq!(c.gamma.max_abs(), 0.0);
    }

    #[test]
    fn qp_matches_direct_objective() {
        let basis = q3();
        let thetas = sample_parameters(4, 9);
        let sample = DriftSample::from_field(sample_states(40, 10), &CstrDrift).unwrap();
        let (lb, lr) = (1e-3, 0.1);
        let (problem, constant) =
            generator_qp(&sample, &CstrFamily, &thetas, &basis, lb, lr).unwrap();
        let mut r = rng::seeded(12);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..4).map(|_| r.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let b: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let rm = Matrix::from_fn(6, 6, |_, _| r.gen_range(-1.0..1.0));
            let via_qp = problem.objective(&b, &vec_residual(&rm)) + constant;
            let direct =
                generator_objective(&sample, &CstrFamily, &thetas, &basis, lb, lr, &b, &rm);
            assert!(
                (via_qp - direct).abs() <= 1e-8 * direct.abs(),
                "{via_qp} vs {direct}"
            );
        }
    }

    #[test]
    fn degenerate_mixture_is_ridge_on_residual() {
        let basis = q3();
        let theta = vec![vec![0.3, 0.2]];
        let sample = DriftSample::from_field(sample_states(50, 4), &CstrDrift).unwrap();
        let fit = fit_hybrid_generator(
            &sample,
            &CstrFamily,
            &theta,
            &basis,
            1e-8,
            0.1,
            &QpOptions::default(),
        )
        .unwrap();
        assert_eq!(fit.weights, [1.0]);
        // ridge: R = argmin Σ‖Rψ − (ψ̇ − Dψ f0(θ))‖² + λ‖R‖²
        let member = FamilyMember {
            family: &CstrFamily,
            theta: &theta[0],
        };
        let psi = Matrix::from_rows(
            &sample
                .states
                .iter()
                .map(|&x| basis.eval(x))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let resid: Vec<Vec<f64>> = sample
            .states
            .iter()
            .zip(&sample.velocities)
            .map(|(&x, &v)| {
                let f = member.eval(x);
                basis.lie_derivative(x, [v[0] - f[0], v[1] - f[1]])
            })
            .collect();
        let mut normal = psi.tr_matmul(&psi);
        normal.add_diagonal(0.1);
        let rt =
            crate::linalg::solve_spd(&normal, &psi.tr_matmul(&Matrix::from_rows(&resid).unwrap()))
                .unwrap();
        let diff = rt.transpose().sub(&fit.residual).max_abs();
        assert!(diff < 1e-8, "{diff:e}");
    }

    #[test]
    fn assembled_model_examples() {
        let basis = q3();
        let a: Vec<Matrix> = (0..3)
            .map(|j| Matrix::identity(6).scale(j as f64 + 1.0))
            .collect();
        let input = Closure {
            beta: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            gamma: Matrix::identity(6),
            residual: 0.0,
        };
        let model = assemble_bilinear(
            basis,
            vec![0.0, 1.0, 0.0],
            Matrix::zeros(6, 6),
            a,
            vec![input],
        )
        .unwrap();
        let z = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let expect: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        assert_eq!(model.rhs(&z, &[0.0]), expect);
        assert_eq!(
            model.rhs(&[0.0; 6], &[2.0]),
            [2.0, 4.0, 6.0, 8.0, 10.0, 12.0]
        );
        assert_eq!(model.dof(), 36 + 3);
        assert!(assemble_bilinear(
            basis,
            vec![1.0],
            Matrix::zeros(5, 5),
            vec![Matrix::zeros(6, 6)],
            vec![]
        )
        .is_err());
    }

    #[test]
    fn dof_matches_reactor_setup() {
        let basis = q3();
        let model = assemble_bilinear(
            basis,
            vec![0.04; 25],
            Matrix::zeros(6, 6),
            vec![Matrix::zeros(6, 6); 25],
            vec![],
        )
        .unwrap();
        assert_eq!(model.dof(), 4 * 3 * 3 + 25);
        assert_eq!(model.dof(), 61);
    }

    #[test]
    fn lifted_model_consistent_with_direct_rhs() {
        let basis = q3();
        let grid = default_lattice();
        let thetas = sample_parameters(5, 2);
        let a = family_closures(&CstrFamily, &thetas, &basis, &grid).unwrap();
        let input = closure_fit(&CstrInput, &basis, &grid, true).unwrap();
        let b = vec![0.1, 0.2, 0.3, 0.15, 0.25];
        let r = Matrix::from_fn(6, 6, |i, j| 0.01 * (i as f64 - j as f64));
        let bound: f64 = thetas
            .iter()
            .map(|t| {
                closure_fit(
                    &FamilyMember {
                        family: &CstrFamily,
                        theta: t,
                    },
                    &basis,
                    &grid,
                    false,
                )
                .unwrap()
                .residual
            })
            .fold(0.0, f64::max);
        let model = assemble_bilinear(basis, b.clone(), r.clone(), a, vec![input.clone()]).unwrap();
        for x in grid.iter().step_by(37) {
            let u = 0.7;
            let z = basis.eval(*x);
            let lifted = model.rhs(&z, &[u]);
            let mut f = [0.0; 2];
            for (bj, t) in b.iter().zip(&thetas) {
                let v = CstrFamily.eval(*x, t);
                f[0] += bj * v[0];
                f[1] += bj * v[1];
            }
            let g = CstrInput.eval(*x);
            let direct = basis.lie_derivative(*x, [f[0] + u * g[0], f[1] + u * g[1]]);
            let rz = r.mul_vec(&z);
            for k in 0..6 {
                assert!(
                    (lifted[k] - direct[k] - rz[k]).abs() <= bound + u * input.residual + 1e-12
                );
            }
        }
    }

    #[test]
    fn lattice_shape() {
        let g = state_lattice(3, -1.0, 1.0);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], [-1.0, -1.0]);
        assert_eq!(g[1], [-1.0, 0.0]);
        assert_eq!(g[8], [1.0, 1.0]);
    }
}
