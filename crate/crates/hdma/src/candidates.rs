//! Covariate-importance ranking and construction of the nested + non-nested
//! candidate model set with per-candidate tuning parameters.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HdmaError, Result};
use crate::loss::LossKind;
use crate::solver::{fit_candidate, select_lambda_cv, CoefVector, CvPath, FitConfig, PenaltyKind};

/// Importance ordering of the covariates (most important first).
#[derive(Debug, Clone)]
pub struct Ranking {
    /// Permutation of `0..p`.
    pub order: Vec<usize>,
    /// Initial penalized fit at the CV-selected lambda.
    pub initial_fit: CoefVector,
    /// Marginal association scores used to order covariates outside the
    /// initial support.
    pub marginal_scores: Array1<f64>,
    /// Diagnostics from the lambda selection.
    pub cv_path: CvPath,
}

/// Candidate index sets: a nested chain of `k_ne` models over the top-ranked
/// covariates followed by disjoint groups covering the rest, each with its
/// scaled tuning parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Candidate supports as original column ids.
    pub groups: Vec<Vec<usize>>,
    /// Number of nested candidates.
    pub k_ne: usize,
    /// Group size within the nested part.
    pub d1: usize,
    /// Size of the largest nested model.
    pub p0: usize,
    /// Nominal group size within the non-nested part.
    pub d2: usize,
    /// Per-candidate tuning parameters.
    pub lambdas: Vec<f64>,
    /// Tuning parameter of the initial estimator the scaling is anchored to.
    pub lambda_n: f64,
}

impl CandidateSet {
    pub fn k(&self) -> usize {
        self.groups.len()
    }
}

/// Orders covariates: initial-fit support first (by |coefficient| descending),
/// then the rest by marginal score descending; ties break by column index.
pub fn order_covariates(beta: &Array1<f64>, scores: &Array1<f64>) -> Vec<usize> {
    let p = beta.len();
    let mut in_support: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
    in_support.sort_by(|&a, &b| {
        beta[b]
            .abs()
            .partial_cmp(&beta[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut rest: Vec<usize> = (0..p).filter(|&j| beta[j] == 0.0).collect();
    rest.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    in_support.extend(rest);
    in_support
}

/// Absolute standardized marginal association of each column with the
/// response: |correlation| for the squared loss, the absolute score
/// statistic for the logistic loss.
pub fn marginal_scores(d: &Dataset, kind: LossKind) -> Array1<f64> {
    let n = d.n() as f64;
    let y_bar = d.y.sum() / n;
    let y_ss: f64 = d.y.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    Array1::from_iter((0..d.p()).map(|j| {
        let col = d.x.column(j);
        let x_bar = col.sum() / n;
        let x_ss: f64 = col.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
        let cross: f64 = col.iter().zip(d.y.iter()).map(|(x, y)| (y - y_bar) * x).sum();
        match kind {
            LossKind::Squared => {
                if x_ss <= 0.0 || y_ss <= 0.0 {
                    0.0
                } else {
                    (cross / (x_ss.sqrt() * y_ss.sqrt())).abs()
                }
            }
            LossKind::Logistic => {
                let var = y_bar * (1.0 - y_bar) * x_ss;
                if var <= 0.0 {
                    0.0
                } else {
                    (cross / var.sqrt()).abs()
                }
            }
        }
    }))
}

/// Computes the initial penalized estimator (lambda by cross-validation) and
/// derives the covariate importance order.
pub fn rank_covariates(
    d: &Dataset,
    pkind: PenaltyKind,
    lkind: LossKind,
    cv_folds: usize,
    grid_size: usize,
    seed: u64,
    cfg: &FitConfig,
) -> Result<Ranking> {
    let cv_path = select_lambda_cv(d, pkind, lkind, cv_folds, grid_size, seed, cfg)?;
    let support: Vec<usize> = (0..d.p()).collect();
    let initial_fit = fit_candidate(d, &support, pkind, cv_path.selected_lambda, lkind, cfg)?;
    let scores = marginal_scores(d, lkind);
    let order = order_covariates(&initial_fit.beta, &scores);
    Ok(Ranking {
        order,
        initial_fit,
        marginal_scores: scores,
        cv_path,
    })
}

/// `lambda_{n,k} = sqrt(log |A_k| / log p0) * lambda_n`, with `|A_k|` floored
/// at 2 so singleton groups keep a positive penalty.
pub fn scale_lambda(lambda_n: f64, size_k: usize, p0: usize) -> Result<f64> {
    if size_k < 1 {
        return Err(HdmaError::Config("candidate size must be >= 1".into()));
    }
    if p0 < 2 {
        return Err(HdmaError::Config(format!("p0 must be >= 2, got {p0}")));
    }
    let num = (size_k.max(2) as f64).ln();
    let den = (p0 as f64).ln();
    Ok((num / den).sqrt() * lambda_n)
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Builds the candidate set from a ranking: `d1 = 2 * ceil(s / K_ne)` with
/// `s` the initial support size, nested groups of the top `p0 = K_ne * d1`
/// ranked covariates, then disjoint groups of `d2` over the remainder.
/// Ranked covariates the `K` formula leaves unassigned are appended to the
/// last non-nested group so every covariate enters some candidate.
pub fn build_candidate_set(r: &Ranking, k_ne: usize, d2: usize, p: usize) -> Result<CandidateSet> {
    if k_ne < 1 || d2 < 1 || p == 0 {
        return Err(HdmaError::Config(format!(
            "need K_ne >= 1, d2 >= 1, p >= 1; got K_ne={k_ne}, d2={d2}, p={p}"
        )));
    }
    if r.order.len() != p {
        return Err(HdmaError::Dimension {
            context: "ranking length vs p".into(),
            expected: p,
            found: r.order.len(),
        });
    }
    let s = r.initial_fit.nnz();
    let lambda_n = r.initial_fit.lambda;

    let mut d1 = (2 * ceil_div(s, k_ne)).max(1);
    let mut p0 = k_ne * d1;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let nested_count;

    if p0 >= p {
        // Degenerate: nested-only chain over all p covariates.
        d1 = ceil_div(p, k_ne);
        p0 = p;
        let mut prev_len = 0;
        for k in 1..=k_ne {
            let len = (k * d1).min(p);
            if len == prev_len {
                break; // clamped duplicates add nothing
            }
            groups.push(r.order[..len].to_vec());
            prev_len = len;
        }
        nested_count = groups.len();
    } else {
        for k in 1..=k_ne {
            groups.push(r.order[..k * d1].to_vec());
        }
        nested_count = k_ne;
        let non_nested = (p - p0) / d2;
        if non_nested == 0 {
            // Fewer than d2 covariates remain; they still get one candidate.
            groups.push(r.order[p0..].to_vec());
        } else {
            for g in 0..non_nested {
                let start = p0 + g * d2;
                let mut end = start + d2;
                if g + 1 == non_nested {
                    end = p; // leftovers appended to the final group
                }
                groups.push(r.order[start..end].to_vec());
            }
        }
    }

    let lambdas = groups
        .iter()
        .map(|g| scale_lambda(lambda_n, g.len(), p0.max(2)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        groups,
        k_ne: nested_count,
        d1,
        p0,
        d2,
        lambdas,
        lambda_n,
    })
}
