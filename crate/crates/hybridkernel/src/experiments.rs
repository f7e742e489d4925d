//! The six experiments, each returning structured results. Writing them to
//! disk is [`crate::output`]'s job.

use std::env;

use hybridkernel_core::control::{self, Trajectory};
use hybridkernel_core::hybrid::{
    self, effective_parameter, fit_mixture, fit_reference_krr, fit_subspace, Dataset,
    KernelResidual,
};
use hybridkernel_core::koopman::{
    self, assemble_bilinear, closure_fit, family_closures, CstrDrift, CstrFamily, CstrInput,
    DriftSample, FamilyMember, KoopmanHybridModel, MonomialBasis, State, VectorField,
};
use hybridkernel_core::simplex_qp::QpOptions;
use hybridkernel_core::thermo::{
    GibbsReference, MargulesFeatures, RelativeVolatilityModel, VlePoint, VleSystem, WilsonFamily,
    KELVIN_OFFSET,
};
use hybridkernel_core::{KernelSpec, Matrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{AppError, Context, Result};

pub const THREADS_ENV: &str = "HYBRIDKERNEL_THREADS";

/// Worker pool sized by `HYBRIDKERNEL_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = env::var(THREADS_ENV) {
        let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            AppError::config(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| AppError::config(format!("cannot start worker pool: {e}")))
}

fn qp_options(cfg: &ExperimentConfig) -> QpOptions {
    QpOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..QpOptions::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

/// Bubble-point data plus the Gibbs-energy target of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct VleSplit {
    pub points: Vec<VlePoint>,
    pub gibbs: Vec<f64>,
}

impl VleSplit {
    fn generate(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Self> {
        let sys = VleSystem::ETHANOL_TOLUENE;
        let points = sys
            .generate_dataset(n, cfg.pressure, seed)
            .context("VLE data generation")?;
        let gibbs = points
            .iter()
            .map(|p| sys.gibbs_from_txy(cfg.gibbs, p, cfg.pressure))
            .collect::<hybridkernel_core::Result<Vec<_>>>()
            .context("Gibbs conversion")?;
        Ok(VleSplit { points, gibbs })
    }

    fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    fn vapor_dataset(&self) -> Result<Dataset> {
        let ys: Vec<f64> = self.points.iter().map(|p| p.y).collect();
        Dataset::from_scalar(&self.xs(), &ys).context("dataset")
    }

    fn gibbs_dataset(&self) -> Result<Dataset> {
        Dataset::from_scalar(&self.xs(), &self.gibbs).context("dataset")
    }
}

/// Training and validation splits drawn with independent seeds.
pub fn vle_splits(cfg: &ExperimentConfig) -> Result<(VleSplit, VleSplit)> {
    let seeds = cfg.seeds();
    Ok((
        VleSplit::generate(cfg, cfg.n, seeds.data)?,
        VleSplit::generate(cfg, cfg.n_val, seeds.validation)?,
    ))
}

pub fn vle_data(cfg: &ExperimentConfig) -> Result<VleSplit> {
    VleSplit::generate(cfg, cfg.n, cfg.seeds().data)
}

#[derive(Debug, Clone, Serialize)]
pub struct KrrDoc {
    pub lambda: f64,
    pub reference: String,
    pub residual: KernelResidual,
}

#[derive(Debug, Clone)]
pub struct Setting1 {
    pub train: VleSplit,
    pub val: VleSplit,
    pub rows: Vec<SweepRow>,
    pub models: Vec<KrrDoc>,
}

/// KRR around the constant relative-volatility model, one fit per `λ`.
pub fn setting1(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Setting1> {
    let (train, val) = vle_splits(cfg)?;
    let (dtrain, dval) = (train.vapor_dataset()?, val.vapor_dataset()?);
    let kernel = KernelSpec::gaussian(cfg.gamma_x).context("kernel")?;
    let model = RelativeVolatilityModel { alpha: cfg.alpha };
    let reference = move |x: &[f64]| model.vapor_fraction(x[0]);
    let fits: Vec<(SweepRow, KrrDoc)> = pool.install(|| {
        cfg.lambda_grid
            .par_iter()
            .map(|&lambda| {
                let m = fit_reference_krr(&dtrain, reference, &kernel, lambda)
                    .context("setting1 fit")?;
                let row = SweepRow {
                    lambda,
                    train_rmse: hybrid::rmse(&m, &dtrain),
                    val_rmse: hybrid::rmse(&m, &dval),
                };
                let doc = KrrDoc {
                    lambda,
                    reference: format!("relative volatility, alpha = {}", cfg.alpha),
                    residual: m.residual,
                };
                Ok((row, doc))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (rows, models) = fits.into_iter().unzip();
    Ok(Setting1 {
        train,
        val,
        rows,
        models,
    })
}

/// The relative-volatility model translated into a Gibbs-energy reference at
/// the mean pure-component boiling temperature.
pub fn gibbs_reference(cfg: &ExperimentConfig) -> Result<GibbsReference> {
    let system = VleSystem::ETHANOL_TOLUENE;
    Ok(GibbsReference {
        model: RelativeVolatilityModel { alpha: cfg.alpha },
        system,
        form: cfg.gibbs,
        pressure: cfg.pressure,
        temperature: system
            .nominal_temperature(cfg.pressure)
            .context("nominal temperature")?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SubspaceDoc {
    pub lambda_r: f64,
    pub lambda_theta: f64,
    pub theta: Vec<f64>,
    pub residual: KernelResidual,
}

#[derive(Debug, Clone)]
pub struct Setting2 {
    pub train: VleSplit,
    pub val: VleSplit,
    pub reference_rows: Vec<SweepRow>,
    pub margules_rows: Vec<SweepRow>,
    pub reference_models: Vec<KrrDoc>,
    pub margules_models: Vec<SubspaceDoc>,
}

/// Gibbs-energy targets: KRR around the translated reference versus the joint
/// Margules-plus-kernel fit, at each `λ`.
pub fn setting2(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Setting2> {
    let (train, val) = vle_splits(cfg)?;
    let (dtrain, dval) = (train.gibbs_dataset()?, val.gibbs_dataset()?);
    let kernel = KernelSpec::gaussian(cfg.gamma_x).context("kernel")?;
    let gref = gibbs_reference(cfg)?;
    let reference = move |x: &[f64]| gref.eval(x[0]).unwrap_or(f64::NAN);
    type Pair = ((SweepRow, KrrDoc), (SweepRow, SubspaceDoc));
    let fits: Vec<Pair> = pool.install(|| {
        cfg.lambda_grid
            .par_iter()
            .map(|&lambda| {
                let r = fit_reference_krr(&dtrain, reference, &kernel, lambda)
                    .context("setting2 reference fit")?;
                let s = fit_subspace(&dtrain, MargulesFeatures, &kernel, cfg.lambda_theta, lambda)
                    .context("setting2 Margules fit")?;
                let rrow = SweepRow {
                    lambda,
                    train_rmse: hybrid::rmse(&r, &dtrain),
                    val_rmse: hybrid::rmse(&r, &dval),
                };
                let srow = SweepRow {
                    lambda,
                    train_rmse: hybrid::rmse(&s, &dtrain),
                    val_rmse: hybrid::rmse(&s, &dval),
                };
                let rdoc = KrrDoc {
                    lambda,
                    reference: format!(
                        "relative volatility, alpha = {}, through {:?} Gibbs form at {} C",
                        cfg.alpha, cfg.gibbs, gref.temperature
                    ),
                    residual: r.residual,
                };
                let sdoc = SubspaceDoc {
                    lambda_r: lambda,
                    lambda_theta: cfg.lambda_theta,
                    theta: s.theta,
                    residual: s.residual,
                };
                Ok(((rrow, rdoc), (srow, sdoc)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (refs, margs): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    let (reference_rows, reference_models) = refs.into_iter().unzip();
    let (margules_rows, margules_models) = margs.into_iter().unzip();
    Ok(Setting2 {
        train,
        val,
        reference_rows,
        margules_rows,
        reference_models,
        margules_models,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureRow {
    pub m: usize,
    pub lambda: f64,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub theta_star: Vec<f64>,
    /// Number of weights at or above `1/m`.
    pub support: usize,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureDoc {
    pub m: usize,
    pub lambda_r: f64,
    pub lambda_omega: f64,
    pub kernel_theta: KernelSpec,
    pub temperature_k: f64,
    pub theta_samples: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub objective: f64,
    pub residual: KernelResidual,
}

#[derive(Debug, Clone)]
pub struct Setting3 {
    pub train: VleSplit,
    pub val: VleSplit,
    pub rows: Vec<MixtureRow>,
    pub models: Vec<MixtureDoc>,
}

/// Wilson-family parameters sampled on the unit square; the first `m` draws
/// of one seeded stream, so smaller samples are prefixes of larger ones.
pub fn wilson_samples(cfg: &ExperimentConfig, m: usize) -> Vec<Vec<f64>> {
    koopman::sample_parameters(m, cfg.seeds().theta)
}

/// Mixtures over sampled Wilson models for every `(m, λ_r)` pair.
pub fn setting3(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Setting3> {
    let (train, val) = vle_splits(cfg)?;
    let (dtrain, dval) = (train.gibbs_dataset()?, val.gibbs_dataset()?);
    let kx = KernelSpec::gaussian(cfg.gamma_x).context("kernel")?;
    let kt = KernelSpec::gaussian(cfg.gamma_theta).context("parameter kernel")?;
    let t_k = VleSystem::ETHANOL_TOLUENE
        .nominal_temperature(cfg.pressure)
        .context("nominal temperature")?
        + KELVIN_OFFSET;
    let family = WilsonFamily::ethanol_toluene(t_k);
    let opts = qp_options(cfg);
    let jobs: Vec<(usize, f64)> = cfg
        .m
        .iter()
        .flat_map(|&m| cfg.lambda_grid.iter().map(move |&l| (m, l)))
        .collect();
    let fits: Vec<(MixtureRow, MixtureDoc)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, lambda)| {
                let thetas = wilson_samples(cfg, m);
                let fit = fit_mixture(
                    &dtrain,
                    family,
                    thetas,
                    &kx,
                    &kt,
                    cfg.lambda_omega,
                    lambda,
                    &opts,
                )
                .context(&format!("setting3 fit (m = {m}, lambda = {lambda})"))?;
                let theta_star = effective_parameter(&fit);
                let row = MixtureRow {
                    m,
                    lambda,
                    train_rmse: hybrid::rmse(&fit, &dtrain),
                    val_rmse: hybrid::rmse(&fit, &dval),
                    theta_star: theta_star.clone(),
                    support: fit.weights.iter().filter(|&&b| b >= 1.0 / m as f64).count(),
                    iterations: fit.iterations,
                    kkt_residual: fit.kkt_residual,
                };
                let doc = MixtureDoc {
                    m,
                    lambda_r: lambda,
                    lambda_omega: cfg.lambda_omega,
                    kernel_theta: kt,
                    temperature_k: t_k,
                    theta_samples: fit.theta_samples,
                    weights: fit.weights,
                    theta_star,
                    objective: fit.objective,
                    residual: fit.residual,
                };
                Ok((row, doc))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (rows, models) = fits.into_iter().unzip();
    Ok(Setting3 {
        train,
        val,
        rows,
        models,
    })
}

/// Everything the generator fits share: basis, parameter samples, closures.
#[derive(Debug, Clone)]
pub struct KoopmanSetup {
    pub basis: MonomialBasis,
    pub thetas: Vec<Vec<f64>>,
    pub closure_a: Vec<Matrix>,
    pub input: koopman::Closure,
    pub lambda_b: f64,
    pub opts: QpOptions,
}

impl KoopmanSetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let basis = MonomialBasis::new(cfg.q).context("basis")?;
        let h = koopman::STATE_HALF_WIDTH;
        let grid = koopman::state_lattice(cfg.lattice, -h, h);
        let thetas = koopman::sample_parameters(cfg.m[0], cfg.seeds().theta);
        let closure_a =
            family_closures(&CstrFamily, &thetas, &basis, &grid).context("drift closures")?;
        let input = closure_fit(&CstrInput, &basis, &grid, true).context("input closure")?;
        Ok(KoopmanSetup {
            basis,
            thetas,
            closure_a,
            input,
            lambda_b: cfg.lambda_b,
            opts: qp_options(cfg),
        })
    }

    /// Fits `(b, R)` on `sample` and assembles the bilinear model.
    pub fn fit(&self, sample: &DriftSample, lambda_r: f64) -> Result<KoopmanHybridModel> {
        let fit = koopman::fit_hybrid_generator(
            sample,
            &CstrFamily,
            &self.thetas,
            &self.basis,
            self.lambda_b,
            lambda_r,
            &self.opts,
        )
        .context(&format!("generator fit (lambda_R = {lambda_r})"))?;
        assemble_bilinear(
            self.basis,
            fit.weights,
            fit.residual,
            self.closure_a.clone(),
            vec![self.input.clone()],
        )
        .context("bilinear assembly")
    }

    pub fn theta_star(&self, model: &KoopmanHybridModel) -> Vec<f64> {
        let mut out = vec![0.0; 2];
        for (b, t) in model.weights.iter().zip(&self.thetas) {
            out[0] += b * t[0];
            out[1] += b * t[1];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KoopmanRow {
    pub lambda_r: f64,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub frob_r: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KoopmanDoc {
    pub lambda_r: f64,
    pub lambda_b: f64,
    pub theta_samples: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    pub model: KoopmanHybridModel,
}

#[derive(Debug, Clone)]
pub struct KoopmanRun {
    pub setup: KoopmanSetup,
    pub train: DriftSample,
    pub val: DriftSample,
    pub rows: Vec<KoopmanRow>,
    pub models: Vec<KoopmanDoc>,
}

/// Drift samples of the true reactor at seeded states.
pub fn reactor_samples(cfg: &ExperimentConfig) -> Result<(DriftSample, DriftSample)> {
    let seeds = cfg.seeds();
    let train = DriftSample::from_field(koopman::sample_states(cfg.n, seeds.data), &CstrDrift)
        .context("samples")?;
    let val = DriftSample::from_field(
        koopman::sample_states(cfg.n_val, seeds.validation),
        &CstrDrift,
    )
    .context("samples")?;
    Ok((train, val))
}

/// Hybrid generator fits across the `λ_R` grid.
pub fn koopman_sweep(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<KoopmanRun> {
    let setup = KoopmanSetup::new(cfg)?;
    let (train, val) = reactor_samples(cfg)?;
    let fits: Vec<(KoopmanRow, KoopmanDoc)> = pool.install(|| {
        cfg.lambda_grid
            .par_iter()
            .map(|&lambda_r| {
                let model = setup.fit(&train, lambda_r)?;
                let row = KoopmanRow {
                    lambda_r,
                    train_rmse: koopman::velocity_rmse(&model, &train),
                    val_rmse: koopman::velocity_rmse(&model, &val),
                    frob_r: model.residual.frobenius_norm(),
                };
                let doc = KoopmanDoc {
                    lambda_r,
                    lambda_b: setup.lambda_b,
                    theta_samples: setup.thetas.clone(),
                    theta_star: setup.theta_star(&model),
                    model,
                };
                Ok((row, doc))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (rows, models) = fits.into_iter().unzip();
    Ok(KoopmanRun {
        setup,
        train,
        val,
        rows,
        models,
    })
}

/// Result of fitting against a drift planted inside the family.
#[derive(Debug, Clone)]
pub struct PlantedFit {
    pub theta_bar: Vec<f64>,
    pub planted_index: usize,
    pub model: KoopmanHybridModel,
    pub rmse: f64,
}

/// Replaces the true drift by the family member with the largest `θ1` and
/// refits at `lambda_r`.
pub fn koopman_planted(cfg: &ExperimentConfig, lambda_r: f64) -> Result<PlantedFit> {
    let setup = KoopmanSetup::new(cfg)?;
    let planted_index = (0..setup.thetas.len())
        .max_by(|&a, &b| setup.thetas[a][0].total_cmp(&setup.thetas[b][0]))
        .expect("at least one sample");
    let theta_bar = setup.thetas[planted_index].clone();
    let truth = FamilyMember {
        family: &CstrFamily,
        theta: &theta_bar,
    };
    let sample = DriftSample::from_field(koopman::sample_states(cfg.n, cfg.seeds().data), &truth)
        .context("samples")?;
    let model = setup.fit(&sample, lambda_r)?;
    let rmse = koopman::velocity_rmse(&model, &sample);
    Ok(PlantedFit {
        theta_bar: theta_bar.clone(),
        planted_index,
        model,
        rmse,
    })
}

fn reactor(x: State, u: f64) -> State {
    let (d, g) = (CstrDrift.eval(x), CstrInput.eval(x));
    [d[0] + u * g[0], d[1] + u * g[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlRow {
    pub lambda_r: f64,
    pub max_deviation: f64,
    /// Largest one-step increase of `V` along the truth-controlled runs.
    pub truth_clf_increase: f64,
    /// Same for the model-controlled runs.
    pub model_clf_increase: f64,
}

#[derive(Debug, Clone)]
pub struct ControlRun {
    pub initial_states: Vec<State>,
    pub truth: Vec<Trajectory>,
    /// `model[i][k]`: `λ_R` index `i`, initial state `k`.
    pub model: Vec<Vec<Trajectory>>,
    pub rows: Vec<ControlRow>,
    pub basis: MonomialBasis,
}

/// Distance below which `V` increases are not counted.
pub const CLF_FLOOR: f64 = 1e-6;

/// Closed-loop runs of the true reactor under the truth-based controller and
/// under controllers built from each fitted lifted model.
pub fn control(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<ControlRun> {
    let sweep = koopman_sweep(cfg, pool)?;
    let basis = sweep.setup.basis;
    let x0s = koopman::sample_states(cfg.n_initial, cfg.seeds().initial_states);
    let (dt, horizon, bound) = (cfg.dt, cfg.horizon, cfg.bound);
    let truth: Vec<Trajectory> = pool.install(|| {
        x0s.par_iter()
            .map(|&x0| {
                let ctrl = |x: State| {
                    let (a, b) = control::true_rates(&basis, &CstrDrift, &CstrInput, x);
                    control::lin_sontag(a, b, bound)
                };
                control::simulate(reactor, ctrl, x0, dt, horizon)
                    .context("truth-controlled simulation")
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let model: Vec<Vec<Trajectory>> = pool.install(|| {
        sweep
            .models
            .par_iter()
            .map(|doc| {
                x0s.iter()
                    .map(|&x0| {
                        let ctrl = |x: State| {
                            let (a, b) = control::model_rates(&doc.model, x);
                            control::lin_sontag(a, b, bound)
                        };
                        control::simulate(reactor, ctrl, x0, dt, horizon)
                            .context("model-controlled simulation")
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let worst_increase = |ts: &[Trajectory]| {
        ts.iter()
            .map(|t| control::max_clf_increase(&basis, t, CLF_FLOOR))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let truth_increase = worst_increase(&truth);
    let mut rows = Vec::with_capacity(model.len());
    for (doc, runs) in sweep.models.iter().zip(&model) {
        let mut dev: f64 = 0.0;
        for (a, b) in truth.iter().zip(runs) {
            dev = dev.max(control::compare_trajectories(a, b).context("trajectory comparison")?);
        }
        rows.push(ControlRow {
            lambda_r: doc.lambda_r,
            max_deviation: dev,
            truth_clf_increase: truth_increase,
            model_clf_increase: worst_increase(runs),
        });
    }
    Ok(ControlRun {
        initial_states: x0s,
        truth,
        model,
        rows,
        basis,
    })
}
