//! Experiment configuration: a flat `key = value` file plus command-line
//! overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Every key has a default, so an empty file is valid.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 7 | base seed; see [`Seeds`] |
//! | `lambda` | per experiment | regularization grid (`λ`, `λ_r` or `λ_R`) |
//! | `m` | `25,50,100` (setting3), `25` (koopman, control) | parameter-sample counts |
//! | `n` | 50 static, 200 dynamic | training size |
//! | `n_val` | same as `n` | validation size |
//! | `pressure` | 760 | mmHg |
//! | `alpha` | 2.973 | relative volatility of the reference model |
//! | `gamma_x` | 100 | input-kernel bandwidth |
//! | `gamma_theta` | 10 | parameter-kernel bandwidth |
//! | `lambda_theta` | 1e-6 | ridge on Margules coefficients |
//! | `lambda_omega` | 0 | mixture-weight regularization |
//! | `lambda_b` | 1e-8 | weight ridge in the generator fit |
//! | `gibbs` | `mixing` | `mixing` or `excess` target conversion |
//! | `q` | 3 | monomial degree |
//! | `lattice` | 33 | closure lattice points per axis |
//! | `n_initial` | 5 | closed-loop initial states |
//! | `dt` | 0.01 | integration step |
//! | `horizon` | 10 | simulated time |
//! | `bound` | 1 | control magnitude bound |
//! | `tol` | 1e-8 | QP tolerance |
//! | `max_iter` | 50000 | QP iteration cap |
//! | `out` | `out/<experiment>` | output directory |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hybridkernel_core::thermo::GibbsForm;
use serde::Serialize;

use crate::error::{io_err, AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    VleData,
    Setting1,
    Setting2,
    Setting3,
    Koopman,
    Control,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::VleData,
        Experiment::Setting1,
        Experiment::Setting2,
        Experiment::Setting3,
        Experiment::Koopman,
        Experiment::Control,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::VleData => "vle-data",
            Experiment::Setting1 => "setting1",
            Experiment::Setting2 => "setting2",
            Experiment::Setting3 => "setting3",
            Experiment::Koopman => "koopman",
            Experiment::Control => "control",
        }
    }

    fn is_dynamic(self) -> bool {
        matches!(self, Experiment::Koopman | Experiment::Control)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| AppError::config(format!("unknown experiment `{s}`")))
    }
}

/// Seeds derived from the base seed, one per random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub data: u64,
    pub validation: u64,
    pub theta: u64,
    pub initial_states: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            data: seed,
            validation: seed.wrapping_add(1),
            theta: seed.wrapping_add(2),
            initial_states: seed.wrapping_add(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    pub m: Vec<usize>,
    pub n: usize,
    pub n_val: usize,
    pub output_dir: PathBuf,
    pub pressure: f64,
    pub alpha: f64,
    pub gamma_x: f64,
    pub gamma_theta: f64,
    pub lambda_theta: f64,
    pub lambda_omega: f64,
    pub lambda_b: f64,
    pub gibbs: GibbsForm,
    pub q: usize,
    pub lattice: usize,
    pub n_initial: usize,
    pub dt: f64,
    pub horizon: f64,
    pub bound: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// `count` log-spaced points from `lo` to `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| {
            let t = if count > 1 {
                i as f64 / (count - 1) as f64
            } else {
                0.0
            };
            10f64.powf(a + t * (b - a))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let dynamic = experiment.is_dynamic();
        let n = if dynamic { 200 } else { 50 };
        ExperimentConfig {
            experiment,
            seed: 7,
            lambda_grid: if dynamic {
                log_grid(1e-4, 1e2, 7)
            } else {
                log_grid(1e-3, 1e2, 13)
            },
            m: if experiment == Experiment::Setting3 {
                vec![25, 50, 100]
            } else {
                vec![25]
            },
            n,
            n_val: n,
            output_dir: PathBuf::from("out").join(experiment.name()),
            pressure: 760.0,
            alpha: 2.973,
            gamma_x: 100.0,
            gamma_theta: 10.0,
            lambda_theta: 1e-6,
            lambda_omega: 0.0,
            lambda_b: 1e-8,
            gibbs: GibbsForm::Mixing,
            q: 3,
            lattice: 33,
            n_initial: 5,
            dt: 0.01,
            horizon: 10.0,
            bound: 1.0,
            tol: 1e-8,
            max_iter: 50_000,
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_base(self.seed)
    }

    /// Applies `key = value` pairs on top of the current values.
    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<()> {
        let mut n_val_set = false;
        for (key, value) in entries {
            let bad =
                |what: &str| AppError::config(format!("field `{key}`: {what}, got `{value}`"));
            match key.as_str() {
                "experiment" => {
                    let e: Experiment = value.parse()?;
                    if e != self.experiment {
                        return Err(bad(&format!("config is for `{}`", self.experiment)));
                    }
                }
                "seed" => {
                    self.seed = value
                        .parse()
                        .map_err(|_| bad("expected an unsigned integer"))?
                }
                "lambda" | "lambda_grid" => self.lambda_grid = parse_list(value, key)?,
                "m" => self.m = parse_list(value, key)?,
                "n" => self.n = value.parse().map_err(|_| bad("expected an integer"))?,
                "n_val" => {
                    self.n_val = value.parse().map_err(|_| bad("expected an integer"))?;
                    n_val_set = true;
                }
                "out" | "output_dir" => self.output_dir = PathBuf::from(value),
                "pressure" => self.pressure = parse_f64(value, key)?,
                "alpha" => self.alpha = parse_f64(value, key)?,
                "gamma_x" => self.gamma_x = parse_f64(value, key)?,
                "gamma_theta" => self.gamma_theta = parse_f64(value, key)?,
                "lambda_theta" => self.lambda_theta = parse_f64(value, key)?,
                "lambda_omega" => self.lambda_omega = parse_f64(value, key)?,
                "lambda_b" => self.lambda_b = parse_f64(value, key)?,
                "gibbs" => {
                    self.gibbs = match value.as_str() {
                        "mixing" => GibbsForm::Mixing,
                        "excess" => GibbsForm::Excess,
                        _ => return Err(bad("expected `mixing` or `excess`")),
                    }
                }
                "q" => self.q = value.parse().map_err(|_| bad("expected an integer"))?,
                "lattice" => {
                    self.lattice = value.parse().map_err(|_| bad("expected an integer"))?
                }
                "n_initial" => {
                    self.n_initial = value.parse().map_err(|_| bad("expected an integer"))?
                }
                "dt" => self.dt = parse_f64(value, key)?,
                "horizon" => self.horizon = parse_f64(value, key)?,
                "bound" => self.bound = parse_f64(value, key)?,
                "tol" => self.tol = parse_f64(value, key)?,
                "max_iter" => {
                    self.max_iter = value.parse().map_err(|_| bad("expected an integer"))?
                }
                _ => return Err(AppError::config(format!("unknown key `{key}`"))),
            }
            if key == "n" && !n_val_set {
                self.n_val = self.n;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let fail =
            |field: &str, what: &str| Err(AppError::config(format!("field `{field}`: {what}")));
        if self.lambda_grid.is_empty() {
            return fail("lambda", "grid must be nonempty");
        }
        if self
            .lambda_grid
            .iter()
            .any(|l| !(l.is_finite() && *l > 0.0))
        {
            return fail("lambda", "entries must be positive and finite");
        }
        if self.m.is_empty() || self.m.contains(&0) {
            return fail("m", "need one or more counts, each at least 1");
        }
        if self.experiment.is_dynamic() && self.m.len() != 1 {
            return fail("m", "dynamic experiments take a single sample count");
        }
        if self.n == 0 || self.n_val == 0 {
            return fail("n", "must be at least 1");
        }
        if self.q == 0 {
            return fail("q", "must be at least 1");
        }
        if self.lattice < 2 || self.lattice * self.lattice < 2 * self.q + 2 {
            return fail("lattice", "too coarse for the basis");
        }
        let positive = [
            ("pressure", self.pressure),
            ("alpha", self.alpha),
            ("gamma_x", self.gamma_x),
            ("gamma_theta", self.gamma_theta),
            ("lambda_theta", self.lambda_theta),
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("bound", self.bound),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(name, "must be positive and finite");
            }
        }
        for (name, v) in [
            ("lambda_omega", self.lambda_omega),
            ("lambda_b", self.lambda_b),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(name, "must be nonnegative and finite");
            }
        }
        if self.horizon < self.dt {
            return fail("horizon", "must be at least dt");
        }
        if self.n_initial == 0 {
            return fail("n_initial", "must be at least 1");
        }
        if self.max_iter == 0 {
            return fail("max_iter", "must be at least 1");
        }
        Ok(())
    }

    /// Every setting except the output directory, as sorted strings. Used for
    /// the manifest so reruns into different directories match.
    pub fn echo(&self) -> BTreeMap<&'static str, String> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let gibbs = match self.gibbs {
            GibbsForm::Mixing => "mixing",
            GibbsForm::Excess => "excess",
        };
        BTreeMap::from([
            ("experiment", self.experiment.to_string()),
            ("seed", self.seed.to_string()),
            ("lambda", join(&self.lambda_grid)),
            (
                "m",
                self.m
                    .iter()
                    .map(|m| m.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("n", self.n.to_string()),
            ("n_val", self.n_val.to_string()),
            ("pressure", self.pressure.to_string()),
            ("alpha", self.alpha.to_string()),
            ("gamma_x", self.gamma_x.to_string()),
            ("gamma_theta", self.gamma_theta.to_string()),
            ("lambda_theta", self.lambda_theta.to_string()),
            ("lambda_omega", self.lambda_omega.to_string()),
            ("lambda_b", self.lambda_b.to_string()),
            ("gibbs", gibbs.to_string()),
            ("q", self.q.to_string()),
            ("lattice", self.lattice.to_string()),
            ("n_initial", self.n_initial.to_string()),
            ("dt", self.dt.to_string()),
            ("horizon", self.horizon.to_string()),
            ("bound", self.bound.to_string()),
            ("tol", self.tol.to_string()),
            ("max_iter", self.max_iter.to_string()),
        ])
    }
}

fn parse_f64(value: &str, key: &str) -> Result<f64> {
    value
        .trim()
        .parse()
        .map_err(|_| AppError::config(format!("field `{key}`: expected a number, got `{value}`")))
}

fn parse_list<T: FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| {
                AppError::config(format!("field `{key}`: cannot parse list entry `{s}`"))
            })
        })
        .collect()
}

/// Splits config text into ordered `(key, value)` pairs.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(AppError::config(format!(
                "line {}: expected `key = value`",
                lineno + 1
            )));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(AppError::config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Defaults, then the file at `path` (if any), then `overrides`.
pub fn parse_config(
    experiment: Experiment,
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        cfg.apply(&parse_entries(&text)?)?;
    }
    cfg.apply(overrides)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_text_gives_defaults() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Setting1);
        cfg.apply(&parse_entries("").unwrap()).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(Experiment::Setting1));
        assert_eq!(cfg.lambda_grid.len(), 13);
        assert!((cfg.lambda_grid[0] - 1e-3).abs() < 1e-18);
        assert!((cfg.lambda_grid[12] - 1e2).abs() < 1e-12);
        assert_eq!(cfg.n, 50);
    }

    #[test]
    fn dynamic_defaults() {
        let cfg = ExperimentConfig::defaults(Experiment::Koopman);
        assert_eq!(cfg.n, 200);
        assert_eq!(cfg.m, [25]);
        assert_eq!(cfg.lambda_grid.len(), 7);
        assert_eq!(
            ExperimentConfig::defaults(Experiment::Setting3).m,
            [25, 50, 100]
        );
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Setting1);
        let err = cfg.apply(&[kv("lamda", "1")]).unwrap_err();
        assert!(err.to_string().contains("`lamda`"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn lambda_list_round_trip() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Setting1);
        cfg.apply(&[kv("lambda", "1e-2,1e0")]).unwrap();
        assert_eq!(cfg.lambda_grid, [1e-2, 1.0]);
        let mut again = ExperimentConfig::defaults(Experiment::Setting1);
        again.apply(&[kv("lambda", &cfg.echo()["lambda"])]).unwrap();
        assert_eq!(again.lambda_grid, cfg.lambda_grid);
    }

    #[test]
    fn file_syntax() {
        let text = "# comment\n\nseed = 3\n m = 10, 20 \ngibbs=excess\n";
        let mut cfg = ExperimentConfig::defaults(Experiment::Setting3);
        cfg.apply(&parse_entries(text).unwrap()).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.m, [10, 20]);
        assert_eq!(cfg.gibbs, GibbsForm::Excess);
        assert!(parse_entries("seed 3").is_err());
    }

    #[test]
    fn overrides_win_and_n_val_follows_n() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Setting1);
        cfg.apply(&[kv("n", "30"), kv("seed", "5"), kv("seed", "9")])
            .unwrap();
        assert_eq!((cfg.seed, cfg.n, cfg.n_val), (9, 30, 30));
        cfg.apply(&[kv("n_val", "10"), kv("n", "40")]).unwrap();
        assert_eq!((cfg.n, cfg.n_val), (40, 10));
    }

    #[test]
    fn invalid_values_rejected() {
        for (k, v) in [
            ("lambda", "0"),
            ("lambda", ""),
            ("lambda", "1,x"),
            ("m", "0"),
            ("n", "-1"),
            ("gibbs", "ideal"),
            ("dt", "0"),
            ("experiment", "koopman"),
        ] {
            let mut cfg = ExperimentConfig::defaults(Experiment::Setting1);
            assert!(cfg.apply(&[kv(k, v)]).is_err(), "{k} = {v}");
        }
        let mut cfg = ExperimentConfig::defaults(Experiment::Koopman);
        assert!(cfg.apply(&[kv("m", "25,50")]).is_err());
    }

    #[test]
    fn seeds_are_distinct() {
        let s = Seeds::from_base(7);
        assert_eq!(
            (s.data, s.validation, s.theta, s.initial_states),
            (7, 8, 9, 10)
        );
    }

    #[test]
    fn echo_excludes_output_dir() {
        let mut a = ExperimentConfig::defaults(Experiment::Control);
        let mut b = a.clone();
        a.output_dir = "x".into();
        b.output_dir = "y".into();
        assert_eq!(a.echo(), b.echo());
    }
}
