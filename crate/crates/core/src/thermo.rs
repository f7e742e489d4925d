//! Ethanol/toluene vapor–liquid equilibrium.
//!
//! The ground truth is UNIQUAC activity coefficients with Antoine vapor
//! pressures and an ideal vapor phase (modified Raoult's law). Alongside it
//! live the interpretable families used as hybrid-model anchors: constant
//! relative volatility, two-parameter Margules, and Wilson.
//!
//! Units: temperatures passed to Antoine and stored in [`VlePoint`] are °C;
//! activity-model temperatures are Kelvin; pressures are mmHg.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hybrid::FeatureMap;
use crate::rng;

pub const KELVIN_OFFSET: f64 = 273.15;
pub const ATMOSPHERE_MMHG: f64 = 760.0;
/// Gas constant in cal/(mol·K), the unit convention for Wilson energies.
pub const GAS_CONSTANT_CAL: f64 = 1.987;
/// Bubble-point search window in °C.
pub const T_WINDOW: (f64, f64) = (60.0, 115.0);
/// Liquid compositions sampled for datasets.
pub const X_RANGE: (f64, f64) = (0.01, 0.99);

/// `log10 P[mmHg] = A − B / (T[°C] + C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AntoineConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AntoineConstants {
    pub const ETHANOL: AntoineConstants = AntoineConstants {
        a: 8.11220,
        b: 1592.864,
        c: 226.184,
    };
    pub const TOLUENE: AntoineConstants = AntoineConstants {
        a: 6.95087,
        b: 1342.31,
        c: 219.187,
    };

    pub fn psat(&self, t_c: f64) -> Result<f64> {
        let denom = t_c + self.c;
        if !(denom > 0.0) {
            return Err(Error::Domain("Antoine denominator T + C must be positive"));
        }
        Ok(libm::pow(10.0, self.a - self.b / denom))
    }

    /// Temperature (°C) at which the saturation pressure equals `p`.
    pub fn boiling_point(&self, p: f64) -> Result<f64> {
        if !(p > 0.0) {
            return Err(Error::param("pressure", "must be positive"));
        }
        let gap = self.a - libm::log10(p);
        if !(gap > 0.0) {
            return Err(Error::Domain("pressure above Antoine asymptote"));
        }
        Ok(self.b / gap - self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UniquacParams {
    pub r1: f64,
    pub r2: f64,
    pub q1: f64,
    pub q2: f64,
    /// Interaction energies in Kelvin; `τ_ij = exp(−a_ij / T)`.
    pub a12: f64,
    pub a21: f64,
}

impl UniquacParams {
    pub const ETHANOL_TOLUENE: UniquacParams = UniquacParams {
        r1: 2.1055,
        r2: 3.9228,
        q1: 1.972,
        q2: 2.968,
        a12: -76.1573,
        a21: 438.005,
    };

    /// `(ln γ1, ln γ2)` at liquid mole fraction `x1` and temperature `t_k`.
    ///
    /// The ratios `φ_j/x_j` and `φ_j/ϑ_j` are formed without dividing by `x_j`,
    /// so the pure-component endpoints give the infinite-dilution limit for the
    /// absent species and exactly zero for the present one.
    pub fn ln_gamma(&self, x1: f64, t_k: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&x1) {
            return Err(Error::Domain("mole fraction outside [0, 1]"));
        }
        if !(t_k > 0.0) {
            return Err(Error::Domain("temperature must be positive Kelvin"));
        }
        let Self { r1, r2, q1, q2, .. } = *self;
        let x2 = 1.0 - x1;
        let rsum = x1 * r1 + x2 * r2;
        let qsum = x1 * q1 + x2 * q2;
        let th1 = x1 * q1 / qsum;
        let th2 = x2 * q2 / qsum;
        // φ_j / x_j and φ_j / ϑ_j
        let px1 = r1 / rsum;
        let px2 = r2 / rsum;
        let pt1 = r1 * qsum / (q1 * rsum);
        let pt2 = r2 * qsum / (q2 * rsum);
        let t12 = libm::exp(-self.a12 / t_k);
        let t21 = libm::exp(-self.a21 / t_k);
        let s1 = th1 + th2 * t21;
        let s2 = th1 * t12 + th2;

        let comb1 = libm::log(px1) + 1.0 - px1 - 5.0 * q1 * (libm::log(pt1) + 1.0 - pt1);
        let comb2 = libm::log(px2) + 1.0 - px2 - 5.0 * q2 * (libm::log(pt2) + 1.0 - pt2);
        let res1 = q1 * (1.0 - libm::log(s1) - th1 / s1 - th2 * t12 / s2);
        let res2 = q2 * (1.0 - libm::log(s2) - th1 * t21 / s1 - th2 / s2);
        Ok((comb1 + res1, comb2 + res2))
    }

    pub fn gamma(&self, x1: f64, t_k: f64) -> Result<(f64, f64)> {
        let (l1, l2) = self.ln_gamma(x1, t_k)?;
        Ok((libm::exp(l1), libm::exp(l2)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VlePoint {
    /// Liquid ethanol mole fraction.
    pub x: f64,
    /// Vapor ethanol mole fraction.
    pub y: f64,
    /// Bubble temperature in °C.
    pub t: f64,
}

/// A binary mixture: activity model plus the two pure-component vapor pressures.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VleSystem {
    pub activity: UniquacParams,
    pub antoine1: AntoineConstants,
    pub antoine2: AntoineConstants,
}

impl VleSystem {
    pub const ETHANOL_TOLUENE: VleSystem = VleSystem {
        activity: UniquacParams::ETHANOL_TOLUENE,
        antoine1: AntoineConstants::ETHANOL,
        antoine2: AntoineConstants::TOLUENE,
    };

    fn partial_pressures(&self, x1: f64, t_c: f64) -> Result<(f64, f64)> {
        let (g1, g2) = self.activity.gamma(x1, t_c + KELVIN_OFFSET)?;
        Ok((
            x1 * g1 * self.antoine1.psat(t_c)?,
            (1.0 - x1) * g2 * self.antoine2.psat(t_c)?,
        ))
    }

    /// Solves `x1γ1P1sat + x2γ2P2sat = P` for the bubble temperature by
    /// bisection on [`T_WINDOW`]. Returns `(T °C, y1)`.
    pub fn bubble_point(&self, x1: f64, p: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&x1) {
            return Err(Error::Domain("mole fraction outside [0, 1]"));
        }
        if !(p > 0.0) {
            return Err(Error::param("pressure", "must be positive"));
        }
        let excess = |t: f64| -> Result<f64> {
            let (p1, p2) = self.partial_pressures(x1, t)?;
            Ok(p1 + p2 - p)
        };
        let (mut lo, mut hi) = T_WINDOW;
        let f_lo = excess(lo)?;
        let f_hi = excess(hi)?;
        if f_lo.signum() == f_hi.signum() {
            return Err(Error::NoBracket);
        }
        let rising = f_hi > 0.0;
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if (excess(mid)? > 0.0) == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let (p1, _) = self.partial_pressures(x1, t)?;
        Ok((t, (p1 / p).clamp(0.0, 1.0)))
    }

    /// Mean of the two pure-component boiling points at pressure `p`, in °C.
    pub fn nominal_temperature(&self, p: f64) -> Result<f64> {
        Ok(0.5 * (self.antoine1.boiling_point(p)? + self.antoine2.boiling_point(p)?))
    }

    /// `n` bubble points at compositions drawn uniformly from [`X_RANGE`].
    pub fn generate_dataset(&self, n: usize, p: f64, seed: u64) -> Result<Vec<VlePoint>> {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        rng::uniform_points::<1>(n, X_RANGE.0, X_RANGE.1, seed)
            .into_iter()
            .map(|[x]| {
                let (t, y) = self.bubble_point(x, p)?;
                Ok(VlePoint { x, y, t })
            })
            .collect()
    }

    /// Dimensionless Gibbs energy recovered from a measured `T–x–y` point.
    pub fn gibbs_from_txy(&self, form: GibbsForm, pt: &VlePoint, p: f64) -> Result<f64> {
        let VlePoint { x, y, t } = *pt;
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain("mole fraction outside [0, 1]"));
        }
        let p1 = self.antoine1.psat(t)?;
        let p2 = self.antoine2.psat(t)?;
        let term = |frac: f64, vap: f64, psat: f64| -> Result<f64> {
            if frac == 0.0 {
                return Ok(0.0);
            }
            if vap <= 0.0 {
                return Err(Error::Domain(
                    "vapor fraction vanishes where liquid does not",
                ));
            }
            let ratio = match form {
                GibbsForm::Mixing => p * vap / psat,
                GibbsForm::Excess => p * vap / (frac * psat),
            };
            Ok(frac * libm::log(ratio))
        };
        Ok(term(x, y, p1)? + term(1.0 - x, 1.0 - y, p2)?)
    }

    /// `G^ex/RT = x ln γ1 + (1−x) ln γ2` with `γ_i = P y_i / (x_i P_i^sat)`.
    pub fn excess_gibbs_from_txy(&self, pt: &VlePoint, p: f64) -> Result<f64> {
        if !(pt.x > 0.0 && pt.x < 1.0 && pt.y > 0.0 && pt.y < 1.0) {
            return Err(Error::Domain("excess Gibbs energy needs interior x and y"));
        }
        self.gibbs_from_txy(GibbsForm::Excess, pt, p)
    }
}

/// How a `T–x–y` point is turned into a Gibbs-energy target.
///
/// `Mixing` is `x ln(Py/P1sat) + (1−x) ln(P(1−y)/P2sat)`, which equals the
/// excess energy plus the ideal mixing term `x ln x + (1−x) ln(1−x)`.
/// `Excess` divides each pressure ratio by the liquid mole fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GibbsForm {
    #[default]
    Mixing,
    Excess,
}

/// `y = αx / (αx + 1 − x)`.
pub fn rel_volatility(alpha: f64, x: f64) -> f64 {
    alpha * x / (alpha * x + 1.0 - x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelativeVolatilityModel {
    pub alpha: f64,
}

impl RelativeVolatilityModel {
    pub const ETHANOL_TOLUENE: RelativeVolatilityModel = RelativeVolatilityModel { alpha: 2.973 };

    pub fn vapor_fraction(&self, x: f64) -> f64 {
        rel_volatility(self.alpha, x)
    }
}

/// The relative-volatility model pushed through a Gibbs conversion at a fixed
/// temperature, giving a reference for Gibbs-energy targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsReference {
    pub model: RelativeVolatilityModel,
    pub system: VleSystem,
    pub form: GibbsForm,
    pub pressure: f64,
    /// °C.
    pub temperature: f64,
}

impl GibbsReference {
    pub fn eval(&self, x: f64) -> Result<f64> {
        let pt = VlePoint {
            x,
            y: self.model.vapor_fraction(x),
            t: self.temperature,
        };
        self.system.gibbs_from_txy(self.form, &pt, self.pressure)
    }
}

/// `(x²(1−x), x(1−x)²)`.
pub fn margules_features(x: f64) -> [f64; 2] {
    let w = 1.0 - x;
    [x * x * w, x * w * w]
}

/// Two-parameter Margules model as a linear feature map on scalar inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MargulesFeatures;

impl FeatureMap for MargulesFeatures {
    fn dim(&self) -> usize {
        2
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        margules_features(x[0]).to_vec()
    }
}

/// Wilson model with parameters encoded on the unit square:
/// `A_ij = 10^(4θ − 2)` cal/mol.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WilsonParams {
    /// Molar volumes in mL/mol.
    pub v1: f64,
    pub v2: f64,
    pub theta: [f64; 2],
}

impl WilsonParams {
    pub const ETHANOL_V: f64 = 58.7;
    pub const TOLUENE_V: f64 = 106.8;

    pub fn ethanol_toluene(theta: [f64; 2]) -> Self {
        WilsonParams {
            v1: Self::ETHANOL_V,
            v2: Self::TOLUENE_V,
            theta,
        }
    }

    pub fn energies(&self) -> (f64, f64) {
        let decode = |t: f64| libm::pow(10.0, 4.0 * t - 2.0);
        (decode(self.theta[0]), decode(self.theta[1]))
    }

    /// `(Λ12, Λ21)` at `t_k` Kelvin.
    pub fn lambdas(&self, t_k: f64) -> (f64, f64) {
        let (a12, a21) = self.energies();
        let rt = GAS_CONSTANT_CAL * t_k;
        (
            self.v2 / self.v1 * libm::exp(-a12 / rt),
            self.v1 / self.v2 * libm::exp(-a21 / rt),
        )
    }
}

/// `−x1 ln(x1 + x2Λ12) − x2 ln(x2 + x1Λ21)`, zero at the pure endpoints.
pub fn wilson_gex_from_lambdas(l12: f64, l21: f64, x1: f64) -> f64 {
    if x1 <= 0.0 || x1 >= 1.0 {
        return 0.0;
    }
    let x2 = 1.0 - x1;
    -x1 * libm::log(x1 + x2 * l12) - x2 * libm::log(x2 + x1 * l21)
}

pub fn wilson_gex(w: &WilsonParams, x1: f64, t_k: f64) -> f64 {
    let (l12, l21) = w.lambdas(t_k);
    wilson_gex_from_lambdas(l12, l21, x1)
}

/// Wilson models at a fixed temperature, indexed by `θ ∈ [0, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilsonFamily {
    pub v1: f64,
    pub v2: f64,
    pub t_k: f64,
}

impl WilsonFamily {
    pub fn ethanol_toluene(t_k: f64) -> Self {
        WilsonFamily {
            v1: WilsonParams::ETHANOL_V,
            v2: WilsonParams::TOLUENE_V,
            t_k,
        }
    }

    pub fn eval(&self, x: f64, theta: &[f64]) -> f64 {
        let w = WilsonParams {
            v1: self.v1,
            v2: self.v2,
            theta: [theta[0], theta[1]],
        };
        wilson_gex(&w, x, self.t_k)
    }
}

impl crate::hybrid::ParametricModel for WilsonFamily {
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        WilsonFamily::eval(self, x[0], theta)
    }
}
