//! Convex QPs over stacked variables `z = (b, c)` where `b` lives on the
//! probability simplex and `c` is free:
//!
//! ```text
//! minimize  zᵀ Q z + qᵀ z    subject to  b ≥ 0,  Σ b = 1
//! ```
//!
//! Constant terms are never part of the objective; callers add their own.
//!
//! The free block is eliminated exactly through a Cholesky solve, leaving a
//! reduced QP in `b` with the Schur complement as its Hessian. That reduced
//! problem is solved by accelerated projected gradient (FISTA) with restart on
//! objective increase. Every few iterations the solver also tries the exact
//! minimizer restricted to the current support (an equality-constrained solve);
//! the candidate is kept only when it is feasible and does not increase the
//! objective.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Cholesky, Matrix, SYMMETRY_TOL};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50_000;

const POLISH_EVERY: usize = 50;
const POWER_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexQpProblem {
    quad: Matrix,
    linear: Vec<f64>,
    m_simplex: usize,
}

impl SimplexQpProblem {
    /// `quad` must be symmetric with dimension `m_simplex + n_free`.
    pub fn new(quad: Matrix, linear: Vec<f64>, m_simplex: usize) -> Result<Self> {
        if !quad.is_square() {
            return Err(Error::dims(quad.rows(), quad.cols()));
        }
        if linear.len() != quad.rows() {
            return Err(Error::dims(quad.rows(), linear.len()));
        }
        if m_simplex == 0 || m_simplex > quad.rows() {
            return Err(Error::param("m_simplex", "must be in 1..=dim"));
        }
        if !quad.is_finite() || linear.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP data"));
        }
        let asym = quad.asymmetry().unwrap_or(0.0);
        if asym > SYMMETRY_TOL * quad.max_abs() {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(SimplexQpProblem {
            quad,
            linear,
            m_simplex,
        })
    }

    pub fn m_simplex(&self) -> usize {
        self.m_simplex
    }

    pub fn n_free(&self) -> usize {
        self.quad.rows() - self.m_simplex
    }

    pub fn quad(&self) -> &Matrix {
        &self.quad
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    fn stack(&self, b: &[f64], c: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.m_simplex, "weight block length");
        assert_eq!(c.len(), self.n_free(), "free block length");
        let mut z = Vec::with_capacity(self.quad.rows());
        z.extend_from_slice(b);
        z.extend_from_slice(c);
        z
    }

    pub fn objective(&self, b: &[f64], c: &[f64]) -> f64 {
        let z = self.stack(b, c);
        dot(&z, &self.quad.mul_vec(&z)) + dot(&self.linear, &z)
    }

    /// Gradient `2Qz + q`, split into the weight and free blocks.
    pub fn gradient(&self, b: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = self.stack(b, c);
        let mut g = self.quad.mul_vec(&z);
        for (gi, qi) in g.iter_mut().zip(&self.linear) {
            *gi = 2.0 * *gi + qi;
        }
        let free = g.split_off(self.m_simplex);
        (g, free)
    }
}

/// Feasible set for the weight block. `Unconstrained` exists so the solver can
/// be checked against a closed-form solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDomain {
    #[default]
    Simplex,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub domain: WeightDomain,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            domain: WeightDomain::Simplex,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QpSolution {
    pub b: Vec<f64>,
    pub c_free: Vec<f64>,
    /// Full stacked objective `zᵀQz + qᵀz` at `(b, c_free)`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Reduced KKT residual each time the best iterate improved.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub kkt_history: Vec<f64>,
}

/// Euclidean projection onto `{b ≥ 0, Σ b = 1}` (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "project_simplex: empty input");
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut threshold = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            threshold = t;
        }
    }
    v.iter().map(|&x| (x - threshold).max(0.0)).collect()
}

/// `max(‖∇_c f‖, ‖b − P(b − ∇_b f)‖)`.
pub fn kkt_residual(problem: &SimplexQpProblem, b: &[f64], c_free: &[f64]) -> f64 {
    let (gb, gc) = problem.gradient(b, c_free);
    let stepped: Vec<f64> = b.iter().zip(&gb).map(|(x, g)| x - g).collect();
    let proj = project_simplex(&stepped);
    let stationarity = norm(&b.iter().zip(&proj).map(|(x, p)| x - p).collect::<Vec<_>>());
    stationarity.max(norm(&gc))
}

/// The problem after eliminating the free block.
struct Reduced {
    hess: Matrix,
    lin: Vec<f64>,
    /// `Qcc⁻¹ Qcb` and `Qcc⁻¹ q_c`, to recover `c` from `b`.
    back: Option<(Matrix, Vec<f64>)>,
}

impl Reduced {
    fn new(problem: &SimplexQpProblem) -> Result<Self> {
        let m = problem.m_simplex;
        let n = problem.n_free();
        let q = &problem.quad;
        if n == 0 {
            return Ok(Reduced {
                hess: q.clone(),
                lin: problem.linear.clone(),
                back: None,
            });
        }
        let qbb = q.submatrix(0, 0, m, m);
        let qcb = q.submatrix(m, 0, n, m);
        let qcc = q.submatrix(m, m, n, n);
        let chol = Cholesky::factor(&qcc).map_err(psd_error)?;
        let x_b = chol.solve(&qcb);
        let x_q = chol.solve_vec(&problem.linear[m..]);
        let mut hess = qbb.sub(&qcb.tr_matmul(&x_b));
        hess.symmetrize();
        let correction = qcb.tr_mul_vec(&x_q);
        let lin = problem.linear[..m]
            .iter()
            .zip(&correction)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Reduced {
            hess,
            lin,
            back: Some((x_b, x_q)),
        })
    }

    fn objective(&self, b: &[f64]) -> f64 {
        dot(b, &self.hess.mul_vec(b)) + dot(&self.lin, b)
    }

    fn gradient(&self, b: &[f64]) -> Vec<f64> {
        let mut g = self.hess.mul_vec(b);
        for (gi, li) in g.iter_mut().zip(&self.lin) {
            *gi = 2.0 * *gi + li;
        }
        g
    }

    fn kkt(&self, b: &[f64], domain: WeightDomain) -> f64 {
        let g = self.gradient(b);
        match domain {
            WeightDomain::Unconstrained => norm(&g),
            WeightDomain::Simplex => {
                let stepped: Vec<f64> = b.iter().zip(&g).map(|(x, gi)| x - gi).collect();
                let p = project_simplex(&stepped);
                norm(&b.iter().zip(&p).map(|(x, pi)| x - pi).collect::<Vec<_>>())
            }
        }
    }

    fn free_block(&self, b: &[f64]) -> Vec<f64> {
        match &self.back {
            None => Vec::new(),
            Some((x_b, x_q)) => x_b
                .mul_vec(b)
                .iter()
                .zip(x_q)
                .map(|(u, v)| -(u + 0.5 * v))
                .collect(),
        }
    }

    /// Exact minimizer on the support of `b` with `Σ b = 1`, if it stays feasible.
    fn polish(&self, b: &[f64]) -> Option<Vec<f64>> {
        let support: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
        if support.is_empty() {
            return None;
        }
        let chol = Cholesky::factor(&self.hess.select(&support)).ok()?;
        let ones = vec![1.0; support.len()];
        let lin_s: Vec<f64> = support.iter().map(|&j| self.lin[j]).collect();
        let u = chol.solve_vec(&ones);
        let v = chol.solve_vec(&lin_s);
        let denom: f64 = u.iter().sum();
        if !(denom > 0.0) || !denom.is_finite() {
            return None;
        }
        let nu = (2.0 + v.iter().sum::<f64>()) / denom;
        let mut out = vec![0.0; b.len()];
        for (k, &j) in support.iter().enumerate() {
            let val = 0.5 * (nu * u[k] - v[k]);
            if !(val >= 0.0) {
                return None;
            }
            out[j] = val;
        }
        let total: f64 = out.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        out.iter_mut().for_each(|x| *x /= total);
        Some(out)
    }

    /// Largest eigenvalue of the (PSD) reduced Hessian by power iteration.
    fn spectral_bound(&self) -> f64 {
        let m = self.hess.rows();
        let mut v: Vec<f64> = (0..m).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERS {
            let nv = norm(&v);
            if nv == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let w = self.hess.mul_vec(&v);
            lambda = dot(&v, &w);
            v = w;
        }
        let trace_bound = self.hess.trace().max(0.0);
        lambda.max(0.0).min(trace_bound)
    }
}

fn psd_error(e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite => Error::NotPsd,
        other => other,
    }
}

fn project(v: &[f64], domain: WeightDomain) -> Vec<f64> {
    match domain {
        WeightDomain::Simplex => project_simplex(v),
        WeightDomain::Unconstrained => v.to_vec(),
    }
}

/// Solves the QP to a reduced KKT residual of `opts.tol`.
///
/// Starts from uniform weights. If the iteration budget runs out the best
/// iterate is returned inside [`Error::MaxIterExceeded`].
pub fn solve(problem: &SimplexQpProblem, opts: &QpOptions) -> Result<QpSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    Cholesky::factor(&problem.quad).map_err(psd_error)?;
    let reduced = Reduced::new(problem)?;
    let m = problem.m_simplex;

    let mut b = vec![1.0 / m as f64; m];
    if m == 1 && opts.domain == WeightDomain::Simplex {
        return Ok(finish(problem, &reduced, b, 0, vec![0.0]));
    }
    let mut f_b = reduced.objective(&b);
    let mut best = b.clone();
    let mut best_kkt = reduced.kkt(&b, opts.domain);
    let mut history = vec![best_kkt];
    if best_kkt <= opts.tol {
        return Ok(finish(problem, &reduced, best, 0, history));
    }

    let mut lip = 2.0 * reduced.spectral_bound() * 1.05;
    if !(lip > 0.0) {
        lip = 1.0;
    }
    let mut y = b.clone();
    let mut t = 1.0;
    let mut momentum_reset = true;
    let polish = opts.domain == WeightDomain::Simplex;

    for iter in 1..=opts.max_iter {
        let g = reduced.gradient(&y);
        let step: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - gi / lip).collect();
        let b_next = project(&step, opts.domain);
        let f_next = reduced.objective(&b_next);
        if f_next > f_b + 1e-14 * (1.0 + f_b.abs()) {
            if momentum_reset {
                // even a plain gradient step went uphill
                lip *= 2.0;
            }
            y.clone_from(&b);
            t = 1.0;
            momentum_reset = true;
            continue;
        }
        let t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
        let beta = (t - 1.0) / t_next;
        y = b_next
            .iter()
            .zip(&b)
            .map(|(bn, bo)| bn + beta * (bn - bo))
            .collect();
        b = b_next;
        f_b = f_next;
        t = t_next;
        momentum_reset = false;

        if polish && iter % POLISH_EVERY == 1 {
            if let Some(cand) = reduced.polish(&b) {
                let f_cand = reduced.objective(&cand);
                if f_cand <= f_b {
                    b = cand;
                    f_b = f_cand;
                    y.clone_from(&b);
                    t = 1.0;
                    momentum_reset = true;
                }
            }
        }

        let kkt = reduced.kkt(&b, opts.domain);
        if kkt < best_kkt {
            best_kkt = kkt;
            best.clone_from(&b);
            history.push(kkt);
        }
        if best_kkt <= opts.tol {
            return Ok(finish(problem, &reduced, best, iter, history));
        }
    }
    let sol = finish(problem, &reduced, best, opts.max_iter, history);
    Err(Error::MaxIterExceeded(alloc::boxed::Box::new(sol)))
}

fn finish(
    problem: &SimplexQpProblem,
    reduced: &Reduced,
    b: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
) -> QpSolution {
    let c_free = reduced.free_block(&b);
    let objective = problem.objective(&b, &c_free);
    let kkt_residual = kkt_residual(problem, &b, &c_free);
    QpSolution {
        b,
        c_free,
        objective,
        kkt_residual,
        iterations,
        kkt_history: history,
    }
}
