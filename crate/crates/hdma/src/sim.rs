//! Synthetic data generation and the replication harness for the prediction
//! and coverage experiments.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HdmaError, Result};
use crate::loss::{loss_value, sigmoid, LossKind};
use crate::pipeline::{fit_hdma, infer_hdma, HdmaConfig, InferParams};
use crate::solver::{fit_candidate, select_lambda_cv, CoefVector, PenaltyKind};

/// Response model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear { sigma: f64 },
    Logistic,
}

impl ModelKind {
    pub fn loss(&self) -> LossKind {
        match self {
            ModelKind::Linear { .. } => LossKind::Squared,
            ModelKind::Logistic => LossKind::Logistic,
        }
    }
}

/// Covariance structure of the Gaussian covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovKind {
    /// `Sigma_{j,j'} = rho^{|j-j'|}`.
    Ar1 { rho: f64 },
    /// `Sigma_{j,j'} = rho^{|j-j'|} 1{|j-j'| <= 1}`.
    Band { rho: f64 },
}

/// Coefficient designs. The decaying shapes differ between the linear and
/// logistic models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefDesign {
    Sparse,
    PolyDecay,
    ExpDecay,
    InferenceDefault,
    Custom { values: Vec<f64> },
}

/// Prediction-error metric: mean squared error for linear models, mean
/// logistic deviance for logistic models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeKind {
    Pe1,
    Pe2,
}

/// What the harness measures per replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Prediction,
    Coverage,
}

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// The full model-averaging pipeline with the given penalty.
    Hdma { penalty: PenaltyKind },
    /// A single penalized fit on all covariates (lambda by CV).
    Plain { penalty: PenaltyKind },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Hdma { penalty } => format!("HDMA ({})", penalty.label()),
            Method::Plain { penalty } => penalty.label().to_string(),
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub model: ModelKind,
    pub cov: CovKind,
    pub coef_design: CoefDesign,
    pub n: usize,
    pub p: usize,
    pub n_test: usize,
    /// Replication count.
    pub r: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub methods: Vec<Method>,
    /// Pipeline knobs.
    pub k_ne: usize,
    pub d2: usize,
    pub j_folds: usize,
    pub cv_folds: usize,
    pub grid_size: usize,
    pub standardize: bool,
    /// Coverage-mode knobs.
    pub b_boot: usize,
    pub alpha: f64,
    /// 0-based coverage index set; empty means `{0,...,4}`.
    pub g: Vec<usize>,
    pub gamma_n: Option<f64>,
    /// Record per-replication weight-solver trajectories in the report.
    pub save_trajectories: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            model: ModelKind::Linear { sigma: 0.5 },
            cov: CovKind::Ar1 { rho: 0.5 },
            coef_design: CoefDesign::Sparse,
            n: 100,
            p: 100,
            n_test: 1000,
            r: 10,
            seed: 0,
            mode: SimMode::Prediction,
            methods: vec![Method::Hdma {
                penalty: PenaltyKind::Lasso,
            }],
            k_ne: 4,
            d2: 10,
            j_folds: 5,
            cv_folds: 10,
            grid_size: 100,
            standardize: true,
            b_boot: 500,
            alpha: 0.05,
            g: Vec::new(),
            gamma_n: None,
            save_trajectories: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.n_test == 0 || self.r == 0 {
            return Err(HdmaError::Config("n, p, n_test and r must be positive".into()));
        }
        let rho = match self.cov {
            CovKind::Ar1 { rho } | CovKind::Band { rho } => rho,
        };
        if !(0.0..1.0).contains(&rho) || rho <= 0.0 {
            return Err(HdmaError::Config(format!("rho must lie in (0,1), got {rho}")));
        }
        if self.methods.is_empty() {
            return Err(HdmaError::Config("methods list must be nonempty".into()));
        }
        Ok(())
    }

    pub fn coverage_indices(&self) -> Vec<usize> {
        if self.g.is_empty() {
            (0..5.min(self.p)).collect()
        } else {
            self.g.clone()
        }
    }

    fn pipeline_config(&self, penalty: PenaltyKind) -> HdmaConfig {
        HdmaConfig {
            penalty,
            loss: self.model.loss(),
            k_ne: self.k_ne,
            d2: self.d2,
            j_folds: self.j_folds,
            cv_folds: self.cv_folds,
            grid_size: self.grid_size,
            standardize: self.standardize,
            ..HdmaConfig::default()
        }
    }
}

/// Exact coefficient vectors of the experiment designs.
pub fn gen_coefficients(design: &CoefDesign, model: &ModelKind, p: usize) -> Result<Array1<f64>> {
    let logistic = matches!(model, ModelKind::Logistic);
    match design {
        CoefDesign::Sparse => {
            if p < 20 {
                return Err(HdmaError::Config(format!(
                    "sparse design needs p >= 20, got {p}"
                )));
            }
            let mut beta = Array1::zeros(p);
            for j in 0..20 {
                beta[j] = if logistic {
                    match j {
                        0..=4 => 3.0,
                        5..=14 => 1.0,
                        _ => -0.2,
                    }
                } else {
                    match j {
                        0..=4 => 1.0,
                        5..=14 => 0.2,
                        _ => 1.0,
                    }
                };
            }
            Ok(beta)
        }
        CoefDesign::PolyDecay => Ok(Array1::from_shape_fn(p, |idx| {
            let j = (idx + 1) as f64;
            if logistic {
                if j <= 5.0 {
                    5.0
                } else {
                    5.0 * (j - 5.0).powi(-4)
                }
            } else {
                5.0 * j.powi(-2)
            }
        })),
        CoefDesign::ExpDecay => Ok(Array1::from_shape_fn(p, |idx| {
            let j = (idx + 1) as f64;
            if logistic {
                if j <= 5.0 {
                    5.0
                } else {
                    5.0 * (-0.5 * (j - 5.0)).exp()
                }
            } else {
                5.0 * (-0.3 * j).exp()
            }
        })),
        CoefDesign::InferenceDefault => {
            if p < 3 {
                return Err(HdmaError::Config(format!(
                    "inference design needs p >= 3, got {p}"
                )));
            }
            let mut beta = Array1::zeros(p);
            beta[0] = 2.0;
            beta[1] = 0.5;
            beta[2] = 1.0;
            Ok(beta)
        }
        CoefDesign::Custom { values } => {
            if values.len() != p {
                return Err(HdmaError::Dimension {
                    context: "custom coefficient design".into(),
                    expected: p,
                    found: values.len(),
                });
            }
            Ok(Array1::from(values.clone()))
        }
    }
}

/// Samples an n x p Gaussian covariate matrix with the requested covariance.
/// AR(1) uses the stationary recursion; Band uses its bandwidth-1 Cholesky
/// factor.
fn sample_covariates(rng: &mut ChaCha8Rng, cov: &CovKind, n: usize, p: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((n, p));
    match cov {
        CovKind::Ar1 { rho } => {
            let innov = (1.0 - rho * rho).sqrt();
            for i in 0..n {
                let mut prev: f64 = StandardNormal.sample(rng);
                x[[i, 0]] = prev;
                for j in 1..p {
                    let e: f64 = StandardNormal.sample(rng);
                    prev = rho * prev + innov * e;
                    x[[i, j]] = prev;
                }
            }
        }
        CovKind::Band { rho } => {
            // Cholesky of the tridiagonal correlation: l_diag[0] = 1,
            // l_sub[j] = rho / l_diag[j-1], l_diag[j] = sqrt(1 - l_sub[j]^2).
            let mut l_diag = vec![0.0f64; p];
            let mut l_sub = vec![0.0f64; p];
            l_diag[0] = 1.0;
            for j in 1..p {
                l_sub[j] = rho / l_diag[j - 1];
                let d = 1.0 - l_sub[j] * l_sub[j];
                if d <= 0.0 {
                    return Err(HdmaError::Numerical(format!(
                        "band covariance not positive definite at rho = {rho}"
                    )));
                }
                l_diag[j] = d.sqrt();
            }
            for i in 0..n {
                let mut prev_e = 0.0;
                for j in 0..p {
                    let e: f64 = StandardNormal.sample(rng);
                    x[[i, j]] = if j == 0 {
                        e
                    } else {
                        l_sub[j] * prev_e + l_diag[j] * e
                    };
                    prev_e = e;
                }
            }
        }
    }
    Ok(x)
}

fn sample_response(rng: &mut ChaCha8Rng, model: &ModelKind, x: &Array2<f64>, beta: &Array1<f64>) -> Array1<f64> {
    let mu = x.dot(beta);
    match model {
        ModelKind::Linear { sigma } => {
            Array1::from_shape_fn(x.nrows(), |i| {
                let e: f64 = StandardNormal.sample(rng);
                mu[i] + sigma * e
            })
        }
        ModelKind::Logistic => Array1::from_shape_fn(x.nrows(), |i| {
            f64::from(rng.random_bool(sigmoid(mu[i]).clamp(0.0, 1.0)))
        }),
    }
}

/// Generates the training set for one replication plus the test set shared
/// by all replications. Replication indices are 1-based; stream 0 is
/// reserved for the test set so it never varies across replications.
pub fn gen_dataset(cfg: &SimConfig, replication: usize) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    if replication == 0 {
        return Err(HdmaError::Config("replication indices are 1-based".into()));
    }
    let beta = gen_coefficients(&cfg.coef_design, &cfg.model, cfg.p)?;

    let mut test_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    test_rng.set_stream(0);
    let x_test = sample_covariates(&mut test_rng, &cfg.cov, cfg.n_test, cfg.p)?;
    let y_test = sample_response(&mut test_rng, &cfg.model, &x_test, &beta);
    let test = Dataset::new(y_test, x_test, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replication as u64);
    let x = sample_covariates(&mut rng, &cfg.cov, cfg.n, cfg.p)?;
    let y = sample_response(&mut rng, &cfg.model, &x, &beta);
    let train = Dataset::new(y, x, None)?;
    Ok((train, test))
}

/// Per-replication out-of-sample prediction error.
pub fn prediction_error(kind: PeKind, beta_hat: &CoefVector, test: &Dataset) -> f64 {
    let n = test.n() as f64;
    let total: f64 = (0..test.n())
        .map(|i| {
            let mu = beta_hat.predict_linear(&test.x.row(i));
            match kind {
                PeKind::Pe1 => {
                    let r = test.y[i] - mu;
                    r * r
                }
                PeKind::Pe2 => loss_value(LossKind::Logistic, test.y[i], mu),
            }
        })
        .sum();
    total / n
}

/// Per-method aggregate over replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodResult {
    pub name: String,
    /// Prediction mode: PE mean/SD. Coverage mode: average-length mean/SD.
    pub metric_mean: f64,
    pub metric_sd: f64,
    pub per_replication: Vec<f64>,
    /// Present in coverage mode.
    pub coverage: Option<CoverageStats>,
    /// Per-replication weight-solver trajectories (CV/n), when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectories: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Fraction of replications where every coordinate in G was covered.
    pub coverage_rate: f64,
    /// Mean over replications of the mean interval length over G.
    pub average_length: f64,
    pub per_rep_covered: Vec<bool>,
}

/// Harness output: config echo, per-method aggregates, failures, timing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub methods: Vec<MethodResult>,
    /// (replication, error) pairs for excluded replications.
    pub failures: Vec<(usize, String)>,
    /// False when more than 10% of replications failed.
    pub valid: bool,
    /// Wall-clock time of the run. Not serialized, so report files are
    /// byte-reproducible for a fixed config and seed.
    #[serde(skip, default)]
    pub wall_secs: f64,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HdmaError::Config(e.to_string()))
    }

    /// Table-style CSV: one column per method, Mean/SD rows (prediction) or
    /// CR/AL rows (coverage).
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "stat")?;
        for m in &self.methods {
            write!(out, ",{}", m.name)?;
        }
        writeln!(out)?;
        match self.config.mode {
            SimMode::Prediction => {
                write!(out, "Mean")?;
                for m in &self.methods {
                    write!(out, ",{:.6}", m.metric_mean)?;
                }
                writeln!(out)?;
                write!(out, "SD")?;
                for m in &self.methods {
                    write!(out, ",{:.6}", m.metric_sd)?;
                }
                writeln!(out)?;
            }
            SimMode::Coverage => {
                write!(out, "CR")?;
                for m in &self.methods {
                    write!(out, ",{:.4}", m.coverage.as_ref().map_or(f64::NAN, |c| c.coverage_rate))?;
                }
                writeln!(out)?;
                write!(out, "AL")?;
                for m in &self.methods {
                    write!(out, ",{:.4}", m.coverage.as_ref().map_or(f64::NAN, |c| c.average_length))?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (r - 1.0)).sqrt())
}

struct RepOutcome {
    metric: Vec<f64>,
    covered: Vec<bool>,
    trajectories: Vec<Vec<f64>>,
}

/// Fits one method and returns it as a fitted model (plain penalized fits
/// are wrapped as a degenerate one-candidate average so prediction and
/// inference flow through the same interfaces).
fn fit_method(
    train: &Dataset,
    cfg: &SimConfig,
    method: &Method,
    rep_seed: u64,
) -> Result<crate::pipeline::HdmaModel> {
    match method {
        Method::Hdma { penalty } => {
            let mut pc = cfg.pipeline_config(*penalty);
            pc.seed = rep_seed;
            fit_hdma(train, &pc)
        }
        Method::Plain { penalty } => plain_as_model(train, cfg, *penalty, rep_seed),
    }
}

fn model_coef(model: &crate::pipeline::HdmaModel) -> CoefVector {
    let beta = Array1::from(model.beta_ma.clone());
    let support = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    CoefVector {
        beta,
        intercept: model.intercept_ma,
        support,
        lambda: 0.0,
        warning: None,
    }
}

/// Runs the replication protocol: per replication, generate data, fit every
/// method, and record the metric (prediction error, or coverage + length).
/// Failed replications are excluded; the report is flagged invalid when more
/// than 10% fail.
pub fn run_replications(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let beta_true = gen_coefficients(&cfg.coef_design, &cfg.model, cfg.p)?;
    let g = cfg.coverage_indices();
    let pe_kind = match cfg.model {
        ModelKind::Linear { .. } => PeKind::Pe1,
        ModelKind::Logistic => PeKind::Pe2,
    };

    let outcomes: Vec<(usize, Result<RepOutcome>)> = (1..=cfg.r)
        .into_par_iter()
        .map(|rep| {
            let run = || -> Result<RepOutcome> {
                let (train, test) = gen_dataset(cfg, rep)?;
                let rep_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(rep as u64);
                let mut metric = Vec::with_capacity(cfg.methods.len());
                let mut covered = Vec::with_capacity(cfg.methods.len());
                let mut trajectories = Vec::new();
                for method in &cfg.methods {
                    let model = fit_method(&train, cfg, method, rep_seed)?;
                    if cfg.save_trajectories {
                        trajectories.push(model.weights.cv_trajectory.clone());
                    }
                    match cfg.mode {
                        SimMode::Prediction => {
                            metric.push(prediction_error(pe_kind, &model_coef(&model), &test));
                        }
                        SimMode::Coverage => {
                            let params = InferParams {
                                b: cfg.b_boot,
                                alpha: cfg.alpha,
                                g: g.clone(),
                                gamma_n: cfg.gamma_n,
                                seed: rep_seed,
                                use_raw_w: false,
                            };
                            let res = infer_hdma(&train, &model, &params)?;
                            let all_covered = res
                                .intervals
                                .iter()
                                .all(|iv| {
                                    let truth = beta_true[iv.index - 1];
                                    iv.lower <= truth && truth <= iv.upper
                                });
                            let avg_len: f64 = res
                                .intervals
                                .iter()
                                .map(|iv| iv.upper - iv.lower)
                                .sum::<f64>()
                                / res.intervals.len() as f64;
                            metric.push(avg_len);
                            covered.push(all_covered);
                        }
                    }
                }
                Ok(RepOutcome {
                    metric,
                    covered,
                    trajectories,
                })
            };
            (rep, run())
        })
        .collect();

    let mut failures = Vec::new();
    let mut kept: Vec<(usize, RepOutcome)> = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(o) => kept.push((rep, o)),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    kept.sort_by_key(|(rep, _)| *rep);
    if kept.is_empty() {
        return Err(HdmaError::Numerical("every replication failed".into()));
    }

    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let vals: Vec<f64> = kept.iter().map(|(_, o)| o.metric[mi]).collect();
            let (mean, sd) = mean_sd(&vals);
            let coverage = match cfg.mode {
                SimMode::Prediction => None,
                SimMode::Coverage => {
                    let flags: Vec<bool> = kept.iter().map(|(_, o)| o.covered[mi]).collect();
                    let cr = flags.iter().filter(|c| **c).count() as f64 / flags.len() as f64;
                    Some(CoverageStats {
                        coverage_rate: cr,
                        average_length: mean,
                        per_rep_covered: flags,
                    })
                }
            };
            let trajectories = cfg
                .save_trajectories
                .then(|| kept.iter().map(|(_, o)| o.trajectories[mi].clone()).collect());
            MethodResult {
                name: method.name(),
                metric_mean: mean,
                metric_sd: sd,
                per_replication: vals,
                coverage,
                trajectories,
            }
        })
        .collect();

    let valid = failures.len() * 10 <= cfg.r;
    if !valid {
        log::warn!(
            "{} of {} replications failed; report marked invalid",
            failures.len(),
            cfg.r
        );
    }
    Ok(SimReport {
        config: cfg.clone(),
        methods,
        failures,
        valid,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Fits a single penalized model (lambda by CV) and wraps it as a degenerate
/// one-candidate model average so prediction and inference reuse the
/// pipeline machinery.
fn plain_as_model(
    train: &Dataset,
    cfg: &SimConfig,
    penalty: PenaltyKind,
    rep_seed: u64,
) -> Result<crate::pipeline::HdmaModel> {
    use crate::candidates::CandidateSet;
    use crate::weights::{FitBundle, Termination, WeightSolution};

    let mut pc = cfg.pipeline_config(penalty);
    pc.k_ne = 1;
    pc.seed = rep_seed;
    let (work, scaling) = if cfg.standardize {
        let (sd, info) = crate::data::standardize(train);
        (sd, Some(info))
    } else {
        (train.clone(), None)
    };
    let fit_cfg = crate::solver::FitConfig::default();
    let path = select_lambda_cv(
        &work,
        penalty,
        cfg.model.loss(),
        cfg.cv_folds,
        cfg.grid_size,
        rep_seed,
        &fit_cfg,
    )?;
    let support: Vec<usize> = (0..work.p()).collect();
    let coef = fit_candidate(
        &work,
        &support,
        penalty,
        path.selected_lambda,
        cfg.model.loss(),
        &fit_cfg,
    )?;
    let p = work.p();
    let cs = CandidateSet {
        groups: vec![support],
        k_ne: 1,
        d1: p,
        p0: p,
        d2: p,
        lambdas: vec![path.selected_lambda],
        lambda_n: path.selected_lambda,
    };
    let mut b_full = Array2::zeros((p, 1));
    b_full.column_mut(0).assign(&coef.beta);
    let fb = FitBundle::new(
        b_full,
        Array1::from(vec![coef.intercept]),
        Array2::zeros((work.n(), 1)),
        work.y.clone(),
        cfg.model.loss(),
    )?;
    let weights = WeightSolution {
        w: vec![1.0],
        cv_trajectory: vec![f64::NAN],
        iterations: 0,
        terminated_by: Termination::GradientCriterion,
        algorithm: crate::weights::WeightAlgorithm::Fgma,
    };
    Ok(crate::pipeline::assemble_model(
        train, &pc, scaling, cs, &fb, weights,
    ))
}
