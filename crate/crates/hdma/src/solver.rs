//! Penalized empirical-risk minimization restricted to a support set:
//! weighted-Lasso coordinate descent (IRLS for the logistic loss),
//! folded-concave penalties via local linear approximation, and tuning
//! parameter selection by cross-validation.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, Dataset};
use crate::error::{HdmaError, Result};
use crate::loss::{loss_grad, loss_value, sigmoid, LossKind};

/// Penalty family. SCAD and MCP are handled through their local linear
/// approximation, so only the derivative of the penalty is ever evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    Lasso,
    Scad { a: f64 },
    Mcp { gamma: f64 },
}

impl PenaltyKind {
    pub fn scad() -> Self {
        PenaltyKind::Scad { a: 3.7 }
    }

    pub fn mcp() -> Self {
        PenaltyKind::Mcp { gamma: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PenaltyKind::Lasso => Ok(()),
            PenaltyKind::Scad { a } if *a > 2.0 => Ok(()),
            PenaltyKind::Scad { a } => Err(HdmaError::Config(format!("SCAD needs a > 2, got {a}"))),
            PenaltyKind::Mcp { gamma } if *gamma > 1.0 => Ok(()),
            PenaltyKind::Mcp { gamma } => {
                Err(HdmaError::Config(format!("MCP needs gamma > 1, got {gamma}")))
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Scad { .. } => "scad",
            PenaltyKind::Mcp { .. } => "mcp",
        }
    }
}

/// Solver controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitConfig {
    /// Cap on coordinate-descent sweeps per weighted-Lasso solve.
    pub max_iter: usize,
    /// Convergence threshold on the max absolute coefficient change.
    pub tol: f64,
    /// Number of LLA reweighting steps for folded-concave penalties.
    pub lla_steps: usize,
    /// Cap on IRLS outer iterations for the logistic loss.
    pub irls_max: usize,
    /// Augment the model with an unpenalized intercept.
    pub intercept: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 10_000,
            tol: 1e-7,
            lla_steps: 3,
            irls_max: 50,
            intercept: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.lla_steps == 0 || self.irls_max == 0 || self.tol <= 0.0 {
            return Err(HdmaError::Config("FitConfig fields must be positive".into()));
        }
        Ok(())
    }
}

/// Soft (non-fatal) solver diagnostics carried on the returned fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverWarning {
    MaxIterReached,
    IrlsDiverged,
}

/// A fitted coefficient vector restricted to a support set.
#[derive(Debug, Clone)]
pub struct CoefVector {
    /// Full-length coefficient vector; zero outside `support`.
    pub beta: Array1<f64>,
    pub intercept: f64,
    /// Index set the fit was restricted to.
    pub support: Vec<usize>,
    pub lambda: f64,
    pub warning: Option<SolverWarning>,
}

impl CoefVector {
    pub fn nnz(&self) -> usize {
        self.beta.iter().filter(|v| **v != 0.0).count()
    }

    pub fn predict_linear(&self, x: &ndarray::ArrayView1<f64>) -> f64 {
        self.beta.dot(x) + self.intercept
    }
}

/// `sign(z) * max(|z| - tau, 0)`.
pub fn soft_threshold(z: f64, tau: f64) -> f64 {
    let mag = (z.abs() - tau).max(0.0);
    if z < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Derivative of the penalty at `t >= 0`; supplies LLA weights.
pub fn penalty_deriv(kind: PenaltyKind, lambda: f64, t: f64) -> f64 {
    match kind {
        PenaltyKind::Lasso => lambda,
        PenaltyKind::Scad { a } => {
            if t <= lambda {
                lambda
            } else {
                (a * lambda - t).max(0.0) / (a - 1.0)
            }
        }
        PenaltyKind::Mcp { gamma } => (lambda - t / gamma).max(0.0),
    }
}

fn validate_support(p: usize, support: &[usize]) -> Result<()> {
    let mut seen = vec![false; p];
    for &j in support {
        if j >= p {
            return Err(HdmaError::Config(format!("support index {j} out of range (p={p})")));
        }
        if seen[j] {
            return Err(HdmaError::Config(format!("duplicate support index {j}")));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Support columns copied out contiguously so coordinate sweeps stay
/// cache-friendly; reused across an entire lambda path.
pub(crate) struct WorkingSet {
    pub cols: Vec<Vec<f64>>,
    pub support: Vec<usize>,
    pub n: usize,
    pub p: usize,
}

impl WorkingSet {
    pub fn new(d: &Dataset, support: &[usize]) -> Result<Self> {
        validate_support(d.p(), support)?;
        let n = d.n();
        let cols = support
            .iter()
            .map(|&j| d.x.column(j).to_vec())
            .collect();
        Ok(WorkingSet {
            cols,
            support: support.to_vec(),
            n,
            p: d.p(),
        })
    }
}

/// Dense-in-support coefficients during optimization.
struct InnerState {
    beta: Vec<f64>,
    intercept: f64,
}

/// One pass of cyclic coordinate descent on the quadratic problem
/// `(1/2n) sum_i w_i (z_i - b0 - <beta, x_i>)^2 + sum_j lambda_j |beta_j|`.
/// `residual` holds `z - b0 - X beta` and is kept in sync. Returns the max
/// absolute coefficient change over the sweep.
#[allow(clippy::too_many_arguments)]
fn cd_sweep(
    ws: &WorkingSet,
    obs_w: Option<&[f64]>,
    col_sq: &[f64],
    lambdas: &[f64],
    state: &mut InnerState,
    residual: &mut [f64],
    active_only: bool,
    intercept: bool,
    sum_w: f64,
) -> f64 {
    let n = ws.n as f64;
    let mut max_delta = 0.0f64;
    if intercept {
        let num: f64 = match obs_w {
            Some(w) => residual.iter().zip(w).map(|(r, wi)| r * wi).sum(),
            None => residual.iter().sum(),
        };
        let delta = num / sum_w;
        if delta != 0.0 {
            state.intercept += delta;
            for r in residual.iter_mut() {
                *r -= delta;
            }
            max_delta = max_delta.max(delta.abs());
        }
    }
    for (idx, col) in ws.cols.iter().enumerate() {
        if active_only && state.beta[idx] == 0.0 {
            continue;
        }
        let a = col_sq[idx];
        if a == 0.0 {
            continue;
        }
        let g: f64 = match obs_w {
            Some(w) => col
                .iter()
                .zip(residual.iter())
                .zip(w.iter())
                .map(|((x, r), wi)| x * r * wi)
                .sum::<f64>()
                / n,
            None => col.iter().zip(residual.iter()).map(|(x, r)| x * r).sum::<f64>() / n,
        };
        let z = g + a * state.beta[idx];
        let new = soft_threshold(z, lambdas[idx]) / a;
        let delta = new - state.beta[idx];
        if delta != 0.0 {
            state.beta[idx] = new;
            for (r, x) in residual.iter_mut().zip(col.iter()) {
                *r -= delta * x;
            }
            max_delta = max_delta.max(delta.abs());
        }
    }
    max_delta
}

/// Full coordinate-descent solve of the quadratic problem above. Active-set
/// sweeps between full sweeps; convergence is declared only on a full sweep.
#[allow(clippy::too_many_arguments)]
fn cd_solve(
    ws: &WorkingSet,
    z: &[f64],
    obs_w: Option<&[f64]>,
    lambdas: &[f64],
    state: &mut InnerState,
    cfg: &FitConfig,
) -> bool {
    let n = ws.n as f64;
    let col_sq: Vec<f64> = ws
        .cols
        .iter()
        .map(|col| match obs_w {
            Some(w) => col.iter().zip(w).map(|(x, wi)| x * x * wi).sum::<f64>() / n,
            None => col.iter().map(|x| x * x).sum::<f64>() / n,
        })
        .collect();
    let sum_w = match obs_w {
        Some(w) => w.iter().sum::<f64>(),
        None => ws.n as f64,
    };
    let mut residual: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(i, zi)| {
            let mut fit = state.intercept;
            for (idx, col) in ws.cols.iter().enumerate() {
                if state.beta[idx] != 0.0 {
                    fit += state.beta[idx] * col[i];
                }
            }
            zi - fit
        })
        .collect();

    let mut force_full = true;
    for iter in 1..=cfg.max_iter {
        let full = force_full || iter % 10 == 1;
        let max_delta = cd_sweep(
            ws,
            obs_w,
            &col_sq,
            lambdas,
            state,
            &mut residual,
            !full,
            cfg.intercept,
            sum_w,
        );
        if full && max_delta < cfg.tol {
            return true;
        }
        // An inactive-to-active transition can only happen on a full sweep,
        // so once the active set settles, go straight to a full check.
        force_full = !full && max_delta < cfg.tol;
    }
    false
}

fn build_coef(ws: &WorkingSet, state: &InnerState, lambda: f64, warning: Option<SolverWarning>) -> CoefVector {
    let mut beta = Array1::zeros(ws.p);
    for (idx, &j) in ws.support.iter().enumerate() {
        beta[j] = state.beta[idx];
    }
    CoefVector {
        beta,
        intercept: state.intercept,
        support: ws.support.clone(),
        lambda,
        warning,
    }
}

fn penalized_objective(
    ws: &WorkingSet,
    y: &[f64],
    kind: LossKind,
    lambdas: &[f64],
    state: &InnerState,
) -> f64 {
    let n = ws.n as f64;
    let mut mu = vec![state.intercept; ws.n];
    for (idx, col) in ws.cols.iter().enumerate() {
        let b = state.beta[idx];
        if b != 0.0 {
            for (m, x) in mu.iter_mut().zip(col.iter()) {
                *m += b * x;
            }
        }
    }
    let fit: f64 = y
        .iter()
        .zip(mu.iter())
        .map(|(yi, mi)| loss_value(kind, *yi, *mi))
        .sum::<f64>()
        / n;
    let pen: f64 = state
        .beta
        .iter()
        .zip(lambdas.iter())
        .map(|(b, l)| l * b.abs())
        .sum();
    fit + pen
}

const IRLS_WEIGHT_FLOOR: f64 = 1e-6;

fn fit_weighted_on_ws(
    ws: &WorkingSet,
    y: &[f64],
    lambdas: &[f64],
    kind: LossKind,
    cfg: &FitConfig,
    warm: Option<&CoefVector>,
) -> Result<CoefVector> {
    if lambdas.len() != ws.support.len() {
        return Err(HdmaError::Dimension {
            context: "per-coefficient lambdas vs support".into(),
            expected: ws.support.len(),
            found: lambdas.len(),
        });
    }
    if lambdas.iter().any(|l| *l < 0.0 || !l.is_finite()) {
        return Err(HdmaError::Config("per-coefficient lambdas must be finite and >= 0".into()));
    }
    let mut state = InnerState {
        beta: match warm {
            Some(w) => ws.support.iter().map(|&j| w.beta[j]).collect(),
            None => vec![0.0; ws.support.len()],
        },
        intercept: warm.map(|w| w.intercept).unwrap_or(0.0),
    };
    let lambda_ref = lambdas.iter().cloned().fold(0.0, f64::max);

    match kind {
        LossKind::Squared => {
            let converged = cd_solve(ws, y, None, lambdas, &mut state, cfg);
            let warning = (!converged).then_some(SolverWarning::MaxIterReached);
            let coef = build_coef(ws, &state, lambda_ref, warning);
            check_finite(&coef)?;
            Ok(coef)
        }
        LossKind::Logistic => {
            let mut warning = None;
            let mut prev_obj = penalized_objective(ws, y, kind, lambdas, &state);
            let mut prev_state = InnerState {
                beta: state.beta.clone(),
                intercept: state.intercept,
            };
            let mut converged = false;
            for _ in 0..cfg.irls_max {
                let mut mu = vec![state.intercept; ws.n];
                for (idx, col) in ws.cols.iter().enumerate() {
                    let b = state.beta[idx];
                    if b != 0.0 {
                        for (m, x) in mu.iter_mut().zip(col.iter()) {
                            *m += b * x;
                        }
                    }
                }
                let mut w = vec![0.0; ws.n];
                let mut z = vec![0.0; ws.n];
                for i in 0..ws.n {
                    let p = sigmoid(mu[i]);
                    let wi = (p * (1.0 - p)).max(IRLS_WEIGHT_FLOOR);
                    w[i] = wi;
                    z[i] = mu[i] + (y[i] - p) / wi;
                }
                let inner_ok = cd_solve(ws, &z, Some(&w), lambdas, &mut state, cfg);
                if !inner_ok {
                    warning = Some(SolverWarning::MaxIterReached);
                }
                let obj = penalized_objective(ws, y, kind, lambdas, &state);
                if !obj.is_finite() || obj > prev_obj + 1e-8 * (1.0 + prev_obj.abs()) {
                    state = prev_state;
                    warning = Some(SolverWarning::IrlsDiverged);
                    converged = true;
                    break;
                }
                let step: f64 = state
                    .beta
                    .iter()
                    .zip(prev_state.beta.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold((state.intercept - prev_state.intercept).abs(), f64::max);
                prev_obj = obj;
                prev_state = InnerState {
                    beta: state.beta.clone(),
                    intercept: state.intercept,
                };
                if step < cfg.tol {
                    converged = true;
                    break;
                }
            }
            if !converged && warning.is_none() {
                warning = Some(SolverWarning::MaxIterReached);
            }
            let coef = build_coef(ws, &state, lambda_ref, warning);
            check_finite(&coef)?;
            Ok(coef)
        }
    }
}

fn check_finite(coef: &CoefVector) -> Result<()> {
    if coef.beta.iter().any(|v| !v.is_finite()) || !coef.intercept.is_finite() {
        return Err(HdmaError::Numerical("solver produced non-finite coefficients".into()));
    }
    Ok(())
}

/// Minimizes `(1/n) sum_i L(y_i, <beta, X_i>) + sum_j lambda_j |beta_j|`
/// over coefficient vectors supported on `support`. `per_coef_lambda` is
/// aligned with `support`.
pub fn fit_weighted_lasso(
    d: &Dataset,
    support: &[usize],
    per_coef_lambda: &[f64],
    kind: LossKind,
    cfg: &FitConfig,
) -> Result<CoefVector> {
    cfg.validate()?;
    if kind == LossKind::Logistic {
        d.validate_binary()?;
    }
    let ws = WorkingSet::new(d, support)?;
    fit_weighted_on_ws(&ws, d.y.as_slice().unwrap(), per_coef_lambda, kind, cfg, None)
}

fn lla_fit_on_ws(
    ws: &WorkingSet,
    y: &[f64],
    pkind: PenaltyKind,
    lambda: f64,
    lkind: LossKind,
    cfg: &FitConfig,
    warm: Option<&CoefVector>,
) -> Result<CoefVector> {
    match pkind {
        PenaltyKind::Lasso => {
            let lambdas = vec![lambda; ws.support.len()];
            let mut coef = fit_weighted_on_ws(ws, y, &lambdas, lkind, cfg, warm)?;
            coef.lambda = lambda;
            Ok(coef)
        }
        _ => {
            // LLA from zero: the first step uses r'(0) = lambda, i.e. a plain
            // Lasso; later steps reweight by the penalty derivative at the
            // previous iterate.
            let mut coef: Option<CoefVector> = None;
            for step in 0..cfg.lla_steps {
                let lambdas: Vec<f64> = match (step, &coef) {
                    (0, _) => vec![penalty_deriv(pkind, lambda, 0.0); ws.support.len()],
                    (_, Some(prev)) => ws
                        .support
                        .iter()
                        .map(|&j| penalty_deriv(pkind, lambda, prev.beta[j].abs()))
                        .collect(),
                    _ => unreachable!(),
                };
                let warm_ref = coef.as_ref().or(warm);
                coef = Some(fit_weighted_on_ws(ws, y, &lambdas, lkind, cfg, warm_ref)?);
            }
            let mut coef = coef.unwrap();
            coef.lambda = lambda;
            Ok(coef)
        }
    }
}

/// Fits one candidate model: plain weighted Lasso for the Lasso penalty,
/// `lla_steps` reweighted Lasso solves for SCAD/MCP.
pub fn fit_candidate(
    d: &Dataset,
    support: &[usize],
    pkind: PenaltyKind,
    lambda: f64,
    lkind: LossKind,
    cfg: &FitConfig,
) -> Result<CoefVector> {
    cfg.validate()?;
    pkind.validate()?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(HdmaError::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if lkind == LossKind::Logistic {
        d.validate_binary()?;
    }
    let ws = WorkingSet::new(d, support)?;
    lla_fit_on_ws(&ws, d.y.as_slice().unwrap(), pkind, lambda, lkind, cfg, None)
}

/// Smallest lambda that yields the all-zero solution:
/// `max_j |(1/n) sum_i dL(y_i, 0)/dmu * X_ij|`.
pub fn lambda_max(d: &Dataset, kind: LossKind) -> f64 {
    let n = d.n() as f64;
    let grad0: Vec<f64> = d.y.iter().map(|&y| loss_grad(kind, y, 0.0)).collect();
    (0..d.p())
        .map(|j| {
            let s: f64 = d
                .x
                .column(j)
                .iter()
                .zip(grad0.iter())
                .map(|(x, g)| x * g)
                .sum();
            (s / n).abs()
        })
        .fold(0.0, f64::max)
}

/// Diagnostics from [`select_lambda_cv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvPath {
    /// Grid, descending from `lambda_max` to `lambda_max * 1e-3`.
    pub lambdas: Vec<f64>,
    /// Mean held-out loss at each grid point (pooled over folds).
    pub cv_mean: Vec<f64>,
    pub selected_lambda: f64,
    pub selected_index: usize,
    /// Set when `lambda_max` was zero and no grid could be built.
    pub degenerate: bool,
}

/// Picks the penalized-fit tuning parameter by `nfolds`-fold cross-validation
/// over a log-spaced grid; ties break toward the larger lambda.
pub fn select_lambda_cv(
    d: &Dataset,
    pkind: PenaltyKind,
    lkind: LossKind,
    nfolds: usize,
    grid_size: usize,
    seed: u64,
    cfg: &FitConfig,
) -> Result<CvPath> {
    cfg.validate()?;
    pkind.validate()?;
    if grid_size < 2 {
        return Err(HdmaError::Config(format!("grid_size must be >= 2, got {grid_size}")));
    }
    if lkind == LossKind::Logistic {
        d.validate_binary()?;
    }
    let lmax = lambda_max(d, lkind);
    if lmax <= 0.0 {
        log::warn!("lambda_max is zero; data carry no marginal signal, selecting lambda = 0");
        return Ok(CvPath {
            lambdas: vec![0.0],
            cv_mean: vec![f64::NAN],
            selected_lambda: 0.0,
            selected_index: 0,
            degenerate: true,
        });
    }
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| lmax * 1e-3f64.powf(i as f64 / (grid_size - 1) as f64))
        .collect();

    let folds = make_folds(d.n(), nfolds, seed)?;
    let support: Vec<usize> = (0..d.p()).collect();

    // held_out[m][g] = total held-out loss of fold m at grid point g
    let held_out: Vec<Vec<f64>> = (0..nfolds)
        .into_par_iter()
        .map(|m| -> Result<Vec<f64>> {
            let train = d.subset(&folds.complement(m));
            let test_rows = folds.members(m);
            let ws = WorkingSet::new(&train, &support)?;
            let y_train: Vec<f64> = train.y.to_vec();
            let mut warm: Option<CoefVector> = None;
            let mut losses = Vec::with_capacity(grid.len());
            for &lam in &grid {
                let coef = lla_fit_on_ws(&ws, &y_train, pkind, lam, lkind, cfg, warm.as_ref())?;
                let total: f64 = test_rows
                    .iter()
                    .map(|&i| loss_value(lkind, d.y[i], coef.predict_linear(&d.x.row(i))))
                    .sum();
                losses.push(total);
                warm = Some(coef);
            }
            Ok(losses)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = d.n() as f64;
    let cv_mean: Vec<f64> = (0..grid.len())
        .map(|g| held_out.iter().map(|fold| fold[g]).sum::<f64>() / n)
        .collect();

    let mut best = 0;
    for (g, val) in cv_mean.iter().enumerate() {
        if *val < cv_mean[best] {
            best = g;
        }
    }
    Ok(CvPath {
        selected_lambda: grid[best],
        selected_index: best,
        lambdas: grid,
        cv_mean,
        degenerate: false,
    })
}

/// Max KKT violation of a fit, for diagnostics and tests. For active
/// coordinates this is `|(1/n) sum dL x_j + lambda_j sign(beta_j)|`; for
/// inactive ones, the excess of `|(1/n) sum dL x_j|` over `lambda_j`.
pub fn kkt_residual(
    d: &Dataset,
    coef: &CoefVector,
    per_coef_lambda: &[f64],
    kind: LossKind,
) -> f64 {
    let n = d.n() as f64;
    let grads: Vec<f64> = (0..d.n())
        .map(|i| loss_grad(kind, d.y[i], coef.predict_linear(&d.x.row(i))))
        .collect();
    let mut worst = 0.0f64;
    for (idx, &j) in coef.support.iter().enumerate() {
        let g: f64 = d
            .x
            .column(j)
            .iter()
            .zip(grads.iter())
            .map(|(x, gr)| x * gr)
            .sum::<f64>()
            / n;
        let b = coef.beta[j];
        let viol = if b != 0.0 {
            (g + per_coef_lambda[idx] * b.signum()).abs()
        } else {
            (g.abs() - per_coef_lambda[idx]).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(y: Vec<f64>, x: Vec<f64>, p: usize) -> Dataset {
        let n = y.len();
        Dataset::new(Array1::from(y), Array2::from_shape_vec((n, p), x).unwrap(), None).unwrap()
    }

    /// Tiny Gaussian-elimination solve, used as the least-squares oracle.
    fn solve_dense(a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in row + 1..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    fn ols_oracle(d: &Dataset, support: &[usize]) -> Vec<f64> {
        let n = d.n() as f64;
        let s = support.len();
        let mut gram = vec![vec![0.0; s]; s];
        let mut rhs = vec![0.0; s];
        for (ai, &ji) in support.iter().enumerate() {
            for (bi, &jj) in support.iter().enumerate() {
                gram[ai][bi] = d.x.column(ji).dot(&d.x.column(jj)) / n;
            }
            rhs[ai] = d.x.column(ji).dot(&d.y) / n;
        }
        solve_dense(&mut gram, &mut rhs)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(2.0, 1.0), 1.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    }

    #[test]
    fn penalty_deriv_examples() {
        assert_eq!(penalty_deriv(PenaltyKind::Lasso, 0.5, 7.0), 0.5);
        assert_eq!(penalty_deriv(PenaltyKind::Mcp { gamma: 3.0 }, 1.0, 3.0), 0.0);
        assert_eq!(penalty_deriv(PenaltyKind::Scad { a: 3.7 }, 1.0, 0.5), 1.0);
    }

    #[test]
    fn penalty_deriv_bounded_and_monotone() {
        let kinds = [PenaltyKind::Lasso, PenaltyKind::scad(), PenaltyKind::mcp()];
        for kind in kinds {
            for lam in [0.0, 0.3, 1.7] {
                let mut prev = f64::INFINITY;
                for step in 0..200 {
                    let t = step as f64 * 0.05;
                    let v = penalty_deriv(kind, lam, t);
                    assert!((0.0..=lam).contains(&v), "{kind:?} lam={lam} t={t} v={v}");
                    if kind != PenaltyKind::Lasso {
                        assert!(v <= prev + 1e-15);
                    }
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn lasso_orthonormal_closed_form() {
        // (1/n) sum x*y = 2, (1/n) sum x^2 = 1 => beta = soft(2, 1) = 1.
        let d = dataset(vec![2.0, -2.0], vec![1.0, -1.0], 1);
        let coef =
            fit_weighted_lasso(&d, &[0], &[1.0], LossKind::Squared, &FitConfig::default()).unwrap();
        assert_abs_diff_eq!(coef.beta[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_lambda_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40;
        let p = 5;
        let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = dataset(y, x, p);
        let support: Vec<usize> = (0..p).collect();
        let coef = fit_weighted_lasso(
            &d,
            &support,
            &vec![0.0; p],
            LossKind::Squared,
            &FitConfig::default(),
        )
        .unwrap();
        let oracle = ols_oracle(&d, &support);
        for (j, o) in oracle.iter().enumerate() {
            assert_abs_diff_eq!(coef.beta[j], o, epsilon = 1e-6);
        }
    }

    #[test]
    fn huge_lambda_kills_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = dataset(y, x, 3);
        let lmax = lambda_max(&d, LossKind::Squared);
        let coef = fit_weighted_lasso(
            &d,
            &[0, 1, 2],
            &vec![lmax * 1.0001; 3],
            LossKind::Squared,
            &FitConfig::default(),
        )
        .unwrap();
        assert_eq!(coef.nnz(), 0);
    }

    #[test]
    fn fit_candidate_lasso_is_weighted_lasso() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = dataset(y, x, 4);
        let a = fit_candidate(
            &d,
            &[0, 2],
            PenaltyKind::Lasso,
            0.1,
            LossKind::Squared,
            &FitConfig::default(),
        )
        .unwrap();
        let b = fit_weighted_lasso(&d, &[0, 2], &[0.1, 0.1], LossKind::Squared, &FitConfig::default())
            .unwrap();
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn mcp_three_step_orthonormal_trace() {
        // Orthonormal design with z = 3, lambda = 1, gamma = 3. Hand trace:
        // step 1: soft(3,1) = 2; step 2 weight max(1-2/3,0) = 1/3, beta = 8/3;
        // step 3 weight max(1-8/9,0) = 1/9, beta = 3 - 1/9 = 26/9.
        let d = dataset(vec![3.0, -3.0], vec![1.0, -1.0], 1);
        let coef = fit_candidate(
            &d,
            &[0],
            PenaltyKind::Mcp { gamma: 3.0 },
            1.0,
            LossKind::Squared,
            &FitConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(coef.beta[0], 26.0 / 9.0, epsilon = 1e-9);
        // Bias reduced relative to the Lasso solution 2.
        assert!((coef.beta[0] - 3.0).abs() < (2.0 - 3.0f64).abs());
    }

    #[test]
    fn lla_beats_lasso_on_strong_signals() {
        // |signal| > a*lambda (resp. gamma*lambda): the folded-concave fit
        // should land closer to the oracle value than the Lasso fit.
        for (pkind, signal) in [
            (PenaltyKind::scad(), 4.5),
            (PenaltyKind::Mcp { gamma: 3.0 }, 3.5),
        ] {
            let d = dataset(vec![signal, -signal], vec![1.0, -1.0], 1);
            let lla = fit_candidate(&d, &[0], pkind, 1.0, LossKind::Squared, &FitConfig::default())
                .unwrap();
            let lasso = fit_candidate(
                &d,
                &[0],
                PenaltyKind::Lasso,
                1.0,
                LossKind::Squared,
                &FitConfig::default(),
            )
            .unwrap();
            let oracle = signal; // least squares on the true support
            assert!(
                (lla.beta[0] - oracle).abs() < (lasso.beta[0] - oracle).abs(),
                "{pkind:?}: lla={} lasso={}",
                lla.beta[0],
                lasso.beta[0]
            );
        }
    }

    #[test]
    fn zero_signal_zeroes_out_near_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = dataset(y, x, 4);
        let lmax = lambda_max(&d, LossKind::Squared);
        for pkind in [PenaltyKind::Lasso, PenaltyKind::scad(), PenaltyKind::mcp()] {
            let coef = fit_candidate(
                &d,
                &[0, 1, 2, 3],
                pkind,
                lmax,
                LossKind::Squared,
                &FitConfig::default(),
            )
            .unwrap();
            assert_eq!(coef.nnz(), 0, "{pkind:?}");
        }
    }

    #[test]
    fn lambda_max_examples() {
        let d = dataset(vec![1.0, -1.0], vec![1.0, -1.0], 1);
        assert_abs_diff_eq!(lambda_max(&d, LossKind::Squared), 1.0);

        let d0 = dataset(vec![0.0, 0.0], vec![1.0, -1.0], 1);
        assert_eq!(lambda_max(&d0, LossKind::Squared), 0.0);

        let dl = dataset(vec![1.0, 0.0], vec![1.0, -1.0], 1);
        assert_abs_diff_eq!(lambda_max(&dl, LossKind::Logistic), 0.5);
    }

    #[test]
    fn kkt_residual_small_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = FitConfig::default();
        for trial in 0..25 {
            let n = 30;
            let p = 8;
            let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d = dataset(y, x, p);
            let support: Vec<usize> = (0..p).collect();
            let lambdas: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..0.3)).collect();
            let coef = fit_weighted_lasso(&d, &support, &lambdas, LossKind::Squared, &cfg).unwrap();
            let res = kkt_residual(&d, &coef, &lambdas, LossKind::Squared);
            assert!(res <= 10.0 * cfg.tol, "trial {trial}: kkt residual {res}");
        }
    }

    #[test]
    fn objective_nonincreasing_across_sweeps() {
        // Re-running with growing sweep caps replays the same deterministic
        // sweep sequence, so objectives across caps trace per-sweep progress.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 25;
        let p = 6;
        let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = dataset(y, x, p);
        let support: Vec<usize> = (0..p).collect();
        let lambdas = vec![0.05; p];
        let mut prev = f64::INFINITY;
        for cap in 1..=12 {
            let cfg = FitConfig {
                max_iter: cap,
                ..FitConfig::default()
            };
            let coef = fit_weighted_lasso(&d, &support, &lambdas, LossKind::Squared, &cfg).unwrap();
            let ws = WorkingSet::new(&d, &support).unwrap();
            let state = InnerState {
                beta: support.iter().map(|&j| coef.beta[j]).collect(),
                intercept: coef.intercept,
            };
            let obj = penalized_objective(&ws, d.y.as_slice().unwrap(), LossKind::Squared, &lambdas, &state);
            assert!(obj <= prev + 1e-10, "objective rose: {obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn support_containment() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<f64> = (0..120).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = dataset(y, x, 6);
        let coef = fit_candidate(
            &d,
            &[1, 3, 4],
            PenaltyKind::Lasso,
            0.01,
            LossKind::Squared,
            &FitConfig::default(),
        )
        .unwrap();
        for j in [0, 2, 5] {
            assert_eq!(coef.beta[j], 0.0);
        }
    }

    #[test]
    fn logistic_fit_recovers_separating_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let n = 200;
        let mut x = Vec::with_capacity(n * 2);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x1: f64 = rng.random_range(-2.0..2.0);
            let x2: f64 = rng.random_range(-2.0..2.0);
            let p = crate::loss::sigmoid(2.0 * x1);
            y.push(f64::from(rng.random_bool(p.clamp(0.0, 1.0))));
            x.push(x1);
            x.push(x2);
        }
        let d = dataset(y, x, 2);
        let coef = fit_weighted_lasso(
            &d,
            &[0, 1],
            &[0.01, 0.01],
            LossKind::Logistic,
            &FitConfig::default(),
        )
        .unwrap();
        assert!(coef.beta[0] > 1.0, "beta1 = {}", coef.beta[0]);
        assert!(coef.beta[0].abs() > 5.0 * coef.beta[1].abs());
        let res = kkt_residual(&d, &coef, &[0.01, 0.01], LossKind::Logistic);
        assert!(res < 1e-4, "logistic kkt residual {res}");
    }

    #[test]
    fn cv_selects_large_lambda_on_noise() {
        let mut hits = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 50;
            let p = 10;
            let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = dataset(y, x, p);
            let path = select_lambda_cv(
                &d,
                PenaltyKind::Lasso,
                LossKind::Squared,
                5,
                40,
                seed,
                &FitConfig::default(),
            )
            .unwrap();
            if path.selected_index < path.lambdas.len() / 2 {
                hits += 1;
            }
        }
        assert!(hits >= 40, "selected lambda in upper half only {hits}/50 times");
    }

    #[test]
    fn cv_beats_lambda_max_on_strong_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let n = 60;
        let p = 5;
        let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d0 = dataset(vec![0.0; n], x, p);
        let y: Vec<f64> = (0..n)
            .map(|i| 5.0 * d0.x[[i, 0]] + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        let d = Dataset::new(Array1::from(y), d0.x.clone(), None).unwrap();
        let cfg = FitConfig::default();
        let path =
            select_lambda_cv(&d, PenaltyKind::Lasso, LossKind::Squared, 5, 30, 3, &cfg).unwrap();
        // Evaluate lambda_max * 0.999 on the same folds and compare.
        let folds = make_folds(d.n(), 5, 3).unwrap();
        let support: Vec<usize> = (0..p).collect();
        let eval = |lam: f64| -> f64 {
            let mut total = 0.0;
            for m in 0..5 {
                let train = d.subset(&folds.complement(m));
                let coef =
                    fit_candidate(&train, &support, PenaltyKind::Lasso, lam, LossKind::Squared, &cfg)
                        .unwrap();
                for i in folds.members(m) {
                    total += loss_value(LossKind::Squared, d.y[i], coef.predict_linear(&d.x.row(i)));
                }
            }
            total / d.n() as f64
        };
        let at_selected = eval(path.selected_lambda);
        let near_max = eval(lambda_max(&d, LossKind::Squared) * 0.999);
        assert!(at_selected <= near_max, "{at_selected} > {near_max}");
    }

    #[test]
    fn cv_grid_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = dataset(y, x, 3);
        let path = select_lambda_cv(
            &d,
            PenaltyKind::Lasso,
            LossKind::Squared,
            4,
            2,
            0,
            &FitConfig::default(),
        )
        .unwrap();
        assert_eq!(path.lambdas.len(), 2);
        assert!(path.lambdas.contains(&path.selected_lambda));
    }

    #[test]
    fn cv_degenerate_data() {
        let d = dataset(vec![0.0; 6], vec![1.0; 12], 2);
        let path = select_lambda_cv(
            &d,
            PenaltyKind::Lasso,
            LossKind::Squared,
            3,
            10,
            0,
            &FitConfig::default(),
        )
        .unwrap();
        assert!(path.degenerate);
        assert_eq!(path.selected_lambda, 0.0);
    }
}
