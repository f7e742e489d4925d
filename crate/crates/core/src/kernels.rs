//! Gaussian kernels and the Gram matrices built from them.
//!
//! The bandwidth is the raw multiplier `γ` in `exp(−γ‖x − x'‖²)`, not a
//! length scale.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum KernelFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::param("gamma", "must be positive and finite"));
        }
        Ok(KernelSpec {
            family: KernelFamily::Gaussian,
            gamma,
        })
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::dims(a.len(), b.len()));
        }
        Ok(self.eval_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                libm::exp(-self.gamma * d2)
            }
        }
    }
}

fn common_dim<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    for p in points {
        if p.as_ref().len() != dim {
            return Err(Error::dims(dim, p.as_ref().len()));
        }
    }
    Ok(dim)
}

/// `G_ij = k(x_i, x_j)`.
pub fn gram<P: AsRef<[f64]>>(k: &KernelSpec, points: &[P]) -> Result<Matrix> {
    if points.is_empty() {
        return Err(Error::param("points", "must be nonempty"));
    }
    common_dim(points)?;
    let n = points.len();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = 1.0;
        for j in 0..i {
            let v = k.eval_unchecked(points[i].as_ref(), points[j].as_ref());
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Entry `(i, j)` is `k(a_i, b_j)`.
pub fn cross_gram<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    k: &KernelSpec,
    a: &[P],
    b: &[Q],
) -> Result<Matrix> {
    let da = common_dim(a)?;
    let db = common_dim(b)?;
    if !a.is_empty() && !b.is_empty() && da != db {
        return Err(Error::dims(da, db));
    }
    Ok(Matrix::from_fn(a.len(), b.len(), |i, j| {
        k.eval_unchecked(a[i].as_ref(), b[j].as_ref())
    }))
}

/// Product kernel on `X × Θ`: `k_x(x, x')·k_θ(θ, θ')`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProductKernelSpec {
    pub kx: KernelSpec,
    pub ktheta: KernelSpec,
}

impl ProductKernelSpec {
    pub fn eval(&self, x: &[f64], theta: &[f64], x2: &[f64], theta2: &[f64]) -> Result<f64> {
        Ok(self.kx.eval(x, x2)? * self.ktheta.eval(theta, theta2)?)
    }

    /// Gram matrix over paired points `(x_i, θ_i)`.
    pub fn gram<P: AsRef<[f64]>, T: AsRef<[f64]>>(&self, xs: &[P], thetas: &[T]) -> Result<Matrix> {
        if xs.len() != thetas.len() {
            return Err(Error::dims(xs.len(), thetas.len()));
        }
        common_dim(xs)?;
        common_dim(thetas)?;
        let n = xs.len();
        Ok(Matrix::from_fn(n, n, |i, j| {
            self.kx.eval_unchecked(xs[i].as_ref(), xs[j].as_ref())
                * self
                    .ktheta
                    .eval_unchecked(thetas[i].as_ref(), thetas[j].as_ref())
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Cholesky;
    use crate::rng;
    use alloc::vec::Vec;
    use rand::Rng;

    fn k100() -> KernelSpec {
        KernelSpec::gaussian(100.0).unwrap()
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
    }

    #[test]
    fn eval_examples() {
        let k = k100();
        assert_eq!(k.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        let v = k.eval(&[0.0], &[0.1]).unwrap();
        assert!((v - libm::exp(-1.0)).abs() < 1e-12);
        assert!((v - 0.3679).abs() < 1e-4);
        assert!(k.eval(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn eval_symmetric_and_bounded() {
        let k = KernelSpec::gaussian(3.0).unwrap();
        let mut r = rng::seeded(4);
        for _ in 0..100 {
            let a = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let b = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let ab = k.eval(&a, &b).unwrap();
            assert_eq!(ab, k.eval(&b, &a).unwrap());
            assert!(ab > 0.0 && ab <= 1.0);
            if a != b {
                assert!(ab < 1.0);
            }
        }
    }

    #[test]
    fn gram_examples() {
        let k = k100();
        assert_eq!(gram(&k, &[[0.5]]).unwrap().as_slice(), &[1.0]);
        assert_eq!(gram(&k, &[[0.5], [0.5]]).unwrap().as_slice(), &[1.0; 4]);
        let g = gram(&k, &[[0.0], [0.1]]).unwrap();
        let e = libm::exp(-1.0);
        for (a, b) in g.as_slice().iter().zip([1.0, e, e, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let empty: [[f64; 1]; 0] = [];
        assert!(gram(&k, &empty).is_err());
        assert!(gram(&k, &[alloc::vec![0.0], alloc::vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn gram_is_psd_certified() {
        let pts: Vec<[f64; 1]> = (0..60).map(|i| [i as f64 / 59.0]).collect();
        let g = gram(&k100(), &pts).unwrap();
        assert!(Cholesky::factor(&g).is_ok());
    }

    #[test]
    fn cross_gram_examples() {
        let k = k100();
        let a = [[0.0], [0.2], [0.7]];
        let b = [[0.1], [0.9]];
        assert_eq!(cross_gram(&k, &a, &a).unwrap(), gram(&k, &a).unwrap());
        let single = cross_gram(&k, &[[0.0]], &[[0.1]]).unwrap();
        assert_eq!(single.as_slice(), &[k.eval(&[0.0], &[0.1]).unwrap()]);
        let ab = cross_gram(&k, &a, &b).unwrap();
        let ba = cross_gram(&k, &b, &a).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(ab[(i, j)], ba[(j, i)]);
                assert_eq!(ab[(i, j)], k.eval(&a[i], &b[j]).unwrap());
            }
        }
        assert!(cross_gram(&k, &a, &[[0.0, 1.0]]).is_err());
    }

    #[test]
    fn product_kernel_examples() {
        let pk = ProductKernelSpec {
            kx: k100(),
            ktheta: KernelSpec::gaussian(10.0).unwrap(),
        };
        assert_eq!(
            pk.eval(&[0.2], &[0.1, 0.9], &[0.2], &[0.1, 0.9]).unwrap(),
            1.0
        );
        let mut r = rng::seeded(9);
        for _ in 0..20 {
            let (x, y) = ([r.gen_range(0.0..1.0)], [r.gen_range(0.0..1.0)]);
            let (t, s) = ([r.gen_range(0.0..1.0)], [r.gen_range(0.0..1.0)]);
            let v = pk.eval(&x, &t, &y, &s).unwrap();
            let expected = pk.kx.eval(&x, &y).unwrap() * pk.ktheta.eval(&t, &s).unwrap();
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn product_gram_is_hadamard_of_factors() {
        let pk = ProductKernelSpec {
            kx: KernelSpec::gaussian(2.0).unwrap(),
            ktheta: KernelSpec::gaussian(10.0).unwrap(),
        };
        // 2×2 grid of (x, θ) pairs
        let xs = [[0.0], [0.0], [0.5], [0.5]];
        let ts = [[0.1, 0.2], [0.8, 0.3], [0.1, 0.2], [0.8, 0.3]];
        let g = pk.gram(&xs, &ts).unwrap();
        let h = gram(&pk.kx, &xs)
            .unwrap()
            .hadamard(&gram(&pk.ktheta, &ts).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                // brute-force entry
                let brute = libm::exp(-2.0 * (xs[i][0] - xs[j][0]).powi(2))
                    * libm::exp(
                        -10.0 * ((ts[i][0] - ts[j][0]).powi(2) + (ts[i][1] - ts[j][1]).powi(2)),
                    );
                assert!((g[(i, j)] - brute).abs() < 1e-15);
                assert!((g[(i, j)] - h[(i, j)]).abs() < 1e-15);
            }
        }
    }
}
