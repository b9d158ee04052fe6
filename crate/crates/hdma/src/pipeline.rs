//! End-to-end model averaging pipeline: standardize, rank, build candidates,
//! fit the bundle, solve for weights, and run post-averaging inference.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::candidates::{build_candidate_set, rank_covariates, CandidateSet};
use crate::data::{make_folds, standardize, Dataset, ScalingInfo};
use crate::error::{HdmaError, Result};
use crate::inference::{
    bootstrap_quantile, debias, default_gamma_n, estimate_inverse_hessian, s_hat, simultaneous_ci,
    symmetrize, CiMeta, InferenceResult,
};
use crate::loss::{sigmoid, LossKind};
use crate::solver::{CoefVector, FitConfig, PenaltyKind};
use crate::weights::{
    build_fit_bundle, fgma_solve, gma_solve, model_average, FgmaConfig, FitBundle, GmaConfig,
    WeightAlgorithm, WeightSolution,
};

/// Everything needed to reproduce a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HdmaConfig {
    pub penalty: PenaltyKind,
    pub loss: LossKind,
    /// Number of nested candidate models.
    pub k_ne: usize,
    /// Group size in the non-nested part.
    pub d2: usize,
    /// Folds for the weight-selection criterion.
    pub j_folds: usize,
    /// Folds for tuning-parameter selection.
    pub cv_folds: usize,
    /// Lambda grid size for tuning-parameter selection.
    pub grid_size: usize,
    pub seed: u64,
    pub standardize: bool,
    pub algorithm: WeightAlgorithm,
    pub fit: FitConfig,
    pub fgma: FgmaConfig,
    pub gma: GmaConfig,
}

impl Default for HdmaConfig {
    fn default() -> Self {
        HdmaConfig {
            penalty: PenaltyKind::Lasso,
            loss: LossKind::Squared,
            k_ne: 4,
            d2: 10,
            j_folds: 5,
            cv_folds: 10,
            grid_size: 100,
            seed: 0,
            standardize: true,
            algorithm: WeightAlgorithm::Fgma,
            fit: FitConfig::default(),
            fgma: FgmaConfig::default(),
            gma: GmaConfig::default(),
        }
    }
}

impl HdmaConfig {
    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        self.fit.validate()?;
        if self.k_ne < 1 {
            return Err(HdmaError::Config("k_ne must be >= 1".into()));
        }
        if self.d2 < 1 {
            return Err(HdmaError::Config("d2 must be >= 1".into()));
        }
        if self.j_folds < 2 {
            return Err(HdmaError::Config("j_folds must be >= 2".into()));
        }
        if self.cv_folds < 2 {
            return Err(HdmaError::Config("cv_folds must be >= 2".into()));
        }
        if self.grid_size < 2 {
            return Err(HdmaError::Config("grid_size must be >= 2".into()));
        }
        Ok(())
    }
}

/// One stored candidate fit: coefficient values aligned with the candidate's
/// group in [`CandidateSet::groups`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateFitRecord {
    pub values: Vec<f64>,
    pub intercept: f64,
}

/// A fitted model-averaging estimator, serializable as the model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HdmaModel {
    pub schema_version: u32,
    pub config: HdmaConfig,
    pub n: usize,
    pub p: usize,
    pub feature_names: Option<Vec<String>>,
    /// Present when the fit standardized the covariates.
    pub scaling: Option<ScalingInfo>,
    pub candidate_set: CandidateSet,
    /// Full-data candidate fits on the fitting scale.
    pub candidates: Vec<CandidateFitRecord>,
    pub weights: WeightSolution,
    /// Averaged coefficients on the fitting (standardized) scale.
    pub beta_ma_std: Vec<f64>,
    pub intercept_ma_std: f64,
    /// Averaged coefficients mapped to the original covariate scale.
    pub beta_ma: Vec<f64>,
    /// Prediction offset on the original scale (0 unless standardization or
    /// an intercept introduced one).
    pub intercept_ma: f64,
}

impl HdmaModel {
    /// Linear predictor on original-scale covariates.
    pub fn predict_linear(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.p {
            return Err(HdmaError::Dimension {
                context: "prediction covariates".into(),
                expected: self.p,
                found: x.ncols(),
            });
        }
        let beta = Array1::from(self.beta_ma.clone());
        Ok(x.dot(&beta) + self.intercept_ma)
    }

    /// Predictions on the response scale: identity for the squared loss,
    /// probabilities for the logistic loss.
    pub fn predict_response(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let mut mu = self.predict_linear(x)?;
        if self.config.loss == LossKind::Logistic {
            mu.mapv_inplace(sigmoid);
        }
        Ok(mu)
    }

    /// Model-averaged coefficients on the fitting scale as a [`CoefVector`].
    pub fn beta_ma_std_coef(&self) -> CoefVector {
        let beta = Array1::from(self.beta_ma_std.clone());
        let support: Vec<usize> = (0..self.p).filter(|&j| beta[j] != 0.0).collect();
        CoefVector {
            beta,
            intercept: self.intercept_ma_std,
            support,
            lambda: 0.0,
            warning: None,
        }
    }

    /// Rebuilds the p x K full-data candidate coefficient matrix.
    pub fn b_full(&self) -> Array2<f64> {
        let k = self.candidate_set.k();
        let mut b = Array2::zeros((self.p, k));
        for (ki, rec) in self.candidates.iter().enumerate() {
            for (slot, &j) in self.candidate_set.groups[ki].iter().enumerate() {
                b[[j, ki]] = rec.values[slot];
            }
        }
        b
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HdmaError::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| HdmaError::Config(format!("invalid model file: {e}")))
    }
}

/// Derives independent sub-seeds for the pipeline stages (splitmix64 step).
fn subseed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Candidate construction and fold fitting, stopped just before weight
/// selection; useful for benchmarking the weight solvers on a shared bundle.
pub struct PreparedFit {
    pub bundle: FitBundle,
    pub candidate_set: CandidateSet,
    pub scaling: Option<ScalingInfo>,
}

/// Standardizes, ranks, builds candidates and fits the full-data and
/// out-of-fold estimators.
pub fn prepare_fit(d: &Dataset, cfg: &HdmaConfig) -> Result<PreparedFit> {
    cfg.validate()?;
    if cfg.loss == LossKind::Logistic {
        d.validate_binary()?;
    }
    let (work, scaling) = if cfg.standardize {
        let (sd, info) = standardize(d);
        (sd, Some(info))
    } else {
        (d.clone(), None)
    };

    let ranking = rank_covariates(
        &work,
        cfg.penalty,
        cfg.loss,
        cfg.cv_folds,
        cfg.grid_size,
        subseed(cfg.seed, 1),
        &cfg.fit,
    )?;
    let cs = build_candidate_set(&ranking, cfg.k_ne, cfg.d2, work.p())?;
    let folds = make_folds(work.n(), cfg.j_folds, subseed(cfg.seed, 2))?;
    let bundle = build_fit_bundle(&work, &cs, &folds, cfg.penalty, cfg.loss, &cfg.fit)?;
    Ok(PreparedFit {
        bundle,
        candidate_set: cs,
        scaling,
    })
}

/// Runs the full model-averaging pipeline on `d`.
pub fn fit_hdma(d: &Dataset, cfg: &HdmaConfig) -> Result<HdmaModel> {
    let prepared = prepare_fit(d, cfg)?;
    let weights = match cfg.algorithm {
        WeightAlgorithm::Fgma => fgma_solve(&prepared.bundle, &cfg.fgma),
        WeightAlgorithm::Gma => gma_solve(&prepared.bundle, &cfg.gma),
    };
    Ok(assemble_model(
        d,
        cfg,
        prepared.scaling,
        prepared.candidate_set,
        &prepared.bundle,
        weights,
    ))
}

/// Packs the fitted pieces into a serializable model.
pub(crate) fn assemble_model(
    d: &Dataset,
    cfg: &HdmaConfig,
    scaling: Option<ScalingInfo>,
    cs: CandidateSet,
    fb: &FitBundle,
    weights: WeightSolution,
) -> HdmaModel {
    let w = Array1::from(weights.w.clone());
    let ma = model_average(&fb.b_full.view(), &w.view());
    let intercept_ma_std = fb.intercepts.dot(&w);
    let (beta_orig, offset) = match &scaling {
        Some(info) => info.coef_to_original(&ma.beta, intercept_ma_std),
        None => (ma.beta.clone(), intercept_ma_std),
    };
    let candidates = (0..cs.k())
        .map(|ki| CandidateFitRecord {
            values: cs.groups[ki]
                .iter()
                .map(|&j| fb.b_full[[j, ki]])
                .collect(),
            intercept: fb.intercepts[ki],
        })
        .collect();
    HdmaModel {
        schema_version: 1,
        config: cfg.clone(),
        n: d.n(),
        p: d.p(),
        feature_names: d.feature_names.clone(),
        scaling,
        candidate_set: cs,
        candidates,
        weights,
        beta_ma_std: ma.beta.to_vec(),
        intercept_ma_std,
        beta_ma: beta_orig.to_vec(),
        intercept_ma: offset,
    }
}

/// Inference controls for [`infer_hdma`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferParams {
    pub b: usize,
    pub alpha: f64,
    /// 0-based covariate indices to cover simultaneously.
    pub g: Vec<usize>,
    /// Defaults to `sqrt(log p / n)` when absent.
    pub gamma_n: Option<f64>,
    pub seed: u64,
    /// Use the raw (unsymmetrized) CLIME estimate.
    pub use_raw_w: bool,
}

impl Default for InferParams {
    fn default() -> Self {
        InferParams {
            b: 500,
            alpha: 0.05,
            g: Vec::new(),
            gamma_n: None,
            seed: 0,
            use_raw_w: false,
        }
    }
}

/// Runs the post-averaging inference chain (CLIME, debias, multiplier
/// bootstrap, simultaneous intervals) for a fitted model against its
/// training data. Results are reported on the original covariate scale.
pub fn infer_hdma(d: &Dataset, model: &HdmaModel, params: &InferParams) -> Result<InferenceResult> {
    if d.p() != model.p {
        return Err(HdmaError::Dimension {
            context: "inference covariates".into(),
            expected: model.p,
            found: d.p(),
        });
    }
    if params.g.is_empty() {
        return Err(HdmaError::Config("index set G must be nonempty".into()));
    }
    let work = match &model.scaling {
        Some(info) => Dataset::from_parts(d.y.clone(), info.transform_matrix(&d.x), None)?,
        None => d.clone(),
    };
    let loss = model.config.loss;
    if loss == LossKind::Logistic {
        work.validate_binary()?;
    }
    let beta_ma = model.beta_ma_std_coef();
    let gamma = params.gamma_n.unwrap_or_else(|| default_gamma_n(work.n(), work.p()));
    let est = estimate_inverse_hessian(&work, &beta_ma, gamma, loss)?;
    let bad = est.infeasible_rows();
    if !bad.is_empty() {
        return Err(HdmaError::ClimeInfeasible {
            rows: bad,
            gamma,
        });
    }
    let w_used = if params.use_raw_w {
        est.w.clone()
    } else {
        symmetrize(&est.w)
    };
    let beta_tilde = debias(&work, &beta_ma, &w_used, loss);
    let (s, _flags) = s_hat(&work, &beta_ma, loss);
    let q = bootstrap_quantile(
        &work, &beta_ma, &w_used, &s, &params.g, params.b, params.alpha, params.seed, loss,
    )?;

    // Map the debiased estimate and the scaling vector to the original
    // covariate scale; the half-width formula q/(s_j sqrt(n)) then yields the
    // original-scale intervals directly.
    let (beta_rep, s_rep) = match &model.scaling {
        Some(info) => {
            let mut b = beta_tilde.clone();
            let mut s2 = s.clone();
            for j in 0..b.len() {
                b[j] /= info.scales[j];
                s2[j] *= info.scales[j];
            }
            (b, s2)
        }
        None => (beta_tilde, s),
    };
    simultaneous_ci(
        &beta_rep,
        &s_rep,
        q,
        &params.g,
        work.n(),
        params.alpha,
        CiMeta {
            b: params.b,
            seed: params.seed,
            symmetrized: !params.use_raw_w,
            gamma_n: gamma,
        },
    )
}
