//! Post-averaging simultaneous inference: CLIME inverse-Hessian estimation,
//! symmetrization, one-step debiasing, diagonal scaling, multiplier bootstrap
//! and interval construction.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HdmaError, Result};
use crate::loss::{loss_grad, loss_hess, LossKind};
use crate::solver::{soft_threshold, CoefVector};

/// Convergence status of one CLIME row program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Converged { iterations: usize },
    /// Hit the iteration cap with the constraint still violated by `residual`
    /// beyond tolerance; typically means gamma_n is too small.
    NotFeasible { residual: f64 },
}

/// Row-wise CLIME estimate of the inverse Hessian.
#[derive(Debug, Clone)]
pub struct InverseHessianEstimate {
    pub w: Array2<f64>,
    pub gamma_n: f64,
    pub per_row_status: Vec<RowStatus>,
}

impl InverseHessianEstimate {
    pub fn infeasible_rows(&self) -> Vec<usize> {
        self.per_row_status
            .iter()
            .enumerate()
            .filter_map(|(j, s)| matches!(s, RowStatus::NotFeasible { .. }).then_some(j))
            .collect()
    }
}

/// One simultaneous confidence interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Interval {
    /// Original (1-based) covariate index.
    pub index: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Significance at the report's alpha: zero excluded from the interval.
    pub fn significant(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// Output of the inference chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    pub beta_debiased: Vec<f64>,
    /// Diagonal scaling entering the interval half-widths, in the same units
    /// as `beta_debiased`.
    pub s_hat: Vec<f64>,
    pub q_hat: f64,
    pub intervals: Vec<Interval>,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    /// Whether the symmetrized inverse-Hessian estimate was used.
    pub symmetrized: bool,
    pub gamma_n: f64,
}

impl InferenceResult {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,estimate,lower,upper,significant")?;
        for iv in &self.intervals {
            writeln!(
                out,
                "{},{},{},{},{}",
                iv.index,
                iv.estimate,
                iv.lower,
                iv.upper,
                u8::from(iv.significant())
            )?;
        }
        Ok(())
    }
}

/// Sample Hessian of the empirical risk at `beta_ma`:
/// `(1/n) sum_i d2L/dmu2 * X_i X_i^T`.
pub fn sample_hessian(d: &Dataset, beta_ma: &CoefVector, kind: LossKind) -> Array2<f64> {
    let n = d.n() as f64;
    let mut xh = d.x.clone();
    for i in 0..d.n() {
        let mu = beta_ma.predict_linear(&d.x.row(i));
        let h = loss_hess(kind, d.y[i], mu).max(0.0);
        let scale = (h / n).sqrt();
        xh.row_mut(i).mapv_inplace(|v| v * scale);
    }
    xh.t().dot(&xh)
}

fn spectral_norm(a: &Array2<f64>) -> f64 {
    let p = a.nrows();
    let mut v = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    let mut norm = 0.0;
    for _ in 0..200 {
        let av = a.dot(&v);
        let new_norm = av.dot(&av).sqrt();
        if new_norm <= 0.0 {
            return 0.0;
        }
        v = av / new_norm;
        if (new_norm - norm).abs() <= 1e-12 * new_norm {
            return new_norm;
        }
        norm = new_norm;
    }
    norm
}

const CLIME_RHO: f64 = 1.0;
const CLIME_MAX_ITER: usize = 5000;
const CLIME_PRIMAL_TOL: f64 = 1e-7;
const CLIME_STEP_TOL: f64 = 1e-9;
/// Feasibility slack accepted when flagging rows.
const CLIME_FEAS_TOL: f64 = 1e-6;

/// Solves one CLIME row: `min ||w||_1 s.t. ||J w - e_j||_inf <= gamma` via
/// linearized ADMM with an l-inf ball projection and a soft-threshold step.
fn clime_row(j_mat: &Array2<f64>, j_norm: f64, row: usize, gamma: f64) -> (Array1<f64>, RowStatus) {
    let p = j_mat.nrows();
    let eta = CLIME_RHO * (j_norm * j_norm).max(1e-12) * 1.001;
    let mut w = Array1::<f64>::zeros(p);
    let mut u = Array1::<f64>::zeros(p);
    let mut jw = Array1::<f64>::zeros(p);
    let mut e = Array1::<f64>::zeros(p);
    e[row] = 1.0;

    let mut status = RowStatus::NotFeasible { residual: f64::INFINITY };
    for iter in 1..=CLIME_MAX_ITER {
        // z-update: project J w - e + u onto the l-inf ball of radius gamma
        let z = (&jw - &e + &u).mapv(|v| v.clamp(-gamma, gamma));
        // w-update: one linearized proximal step
        let r = &jw - &e - &z + &u;
        let grad = j_mat.dot(&r);
        let mut step = 0.0f64;
        for k in 0..p {
            let new = soft_threshold(w[k] - (CLIME_RHO / eta) * grad[k], 1.0 / eta);
            step = step.max((new - w[k]).abs());
            w[k] = new;
        }
        jw = j_mat.dot(&w);
        u = &u + &jw - &e - &z;

        if iter % 10 == 0 || iter == CLIME_MAX_ITER {
            let primal = (&jw - &e - &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if primal <= CLIME_PRIMAL_TOL && step <= CLIME_STEP_TOL {
                status = RowStatus::Converged { iterations: iter };
                break;
            }
        }
    }
    let feas = (&jw - &e).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if feas > gamma + CLIME_FEAS_TOL {
        status = RowStatus::NotFeasible { residual: feas };
    } else if matches!(status, RowStatus::NotFeasible { .. }) {
        // Feasible but the step tolerance never fired; good enough to use.
        status = RowStatus::Converged { iterations: CLIME_MAX_ITER };
    }
    (w, status)
}

/// Row-by-row CLIME estimate of the inverse Hessian at `beta_ma`.
pub fn estimate_inverse_hessian(
    d: &Dataset,
    beta_ma: &CoefVector,
    gamma_n: f64,
    kind: LossKind,
) -> Result<InverseHessianEstimate> {
    if gamma_n <= 0.0 || !gamma_n.is_finite() {
        return Err(HdmaError::Config(format!("gamma_n must be positive, got {gamma_n}")));
    }
    let j_mat = sample_hessian(d, beta_ma, kind);
    if j_mat.iter().any(|v| !v.is_finite()) {
        return Err(HdmaError::Numerical("non-finite sample Hessian".into()));
    }
    let j_norm = spectral_norm(&j_mat);
    let p = d.p();
    let rows: Vec<(Array1<f64>, RowStatus)> = (0..p)
        .into_par_iter()
        .map(|row| clime_row(&j_mat, j_norm, row, gamma_n))
        .collect();
    let mut w = Array2::zeros((p, p));
    let mut per_row_status = Vec::with_capacity(p);
    for (row, (sol, status)) in rows.into_iter().enumerate() {
        w.row_mut(row).assign(&sol);
        per_row_status.push(status);
    }
    Ok(InverseHessianEstimate {
        w,
        gamma_n,
        per_row_status,
    })
}

/// Entrywise symmetrization keeping the smaller-magnitude member of each
/// `(i,j)/(j,i)` pair; on exact magnitude ties the upper-triangle value is
/// used for both slots so the output is always symmetric.
pub fn symmetrize(w: &Array2<f64>) -> Array2<f64> {
    let p = w.nrows();
    let mut out = w.clone();
    for i in 0..p {
        for j in i + 1..p {
            let a = w[[i, j]];
            let b = w[[j, i]];
            let keep = if a.abs() <= b.abs() { a } else { b };
            out[[i, j]] = keep;
            out[[j, i]] = keep;
        }
    }
    out
}

/// Per-observation loss gradients at `beta_ma`.
fn score_gradients(d: &Dataset, beta_ma: &CoefVector, kind: LossKind) -> Array1<f64> {
    Array1::from_iter(
        (0..d.n()).map(|i| loss_grad(kind, d.y[i], beta_ma.predict_linear(&d.x.row(i)))),
    )
}

/// One-step debiased estimator `beta_MA - W * (1/n) sum dL/dmu X_i`.
pub fn debias(d: &Dataset, beta_ma: &CoefVector, w: &Array2<f64>, kind: LossKind) -> Array1<f64> {
    let n = d.n() as f64;
    let grads = score_gradients(d, beta_ma, kind);
    let mean_score = d.x.t().dot(&grads) / n;
    &beta_ma.beta - &w.dot(&mean_score)
}

pub const S_HAT_FLOOR: f64 = 1e-8;

/// Diagonal of the sample Hessian, floored at `S_HAT_FLOOR`. The returned
/// flags mark floored coordinates.
pub fn s_hat(d: &Dataset, beta_ma: &CoefVector, kind: LossKind) -> (Array1<f64>, Vec<bool>) {
    let n = d.n() as f64;
    let hess: Vec<f64> = (0..d.n())
        .map(|i| loss_hess(kind, d.y[i], beta_ma.predict_linear(&d.x.row(i))))
        .collect();
    let mut flags = vec![false; d.p()];
    let s = Array1::from_iter((0..d.p()).map(|j| {
        let v: f64 = d
            .x
            .column(j)
            .iter()
            .zip(hess.iter())
            .map(|(x, h)| h * x * x)
            .sum::<f64>()
            / n;
        if v < S_HAT_FLOOR {
            flags[j] = true;
            log::warn!("s_hat[{j}] = {v:.3e} floored to {S_HAT_FLOOR:.0e}");
            S_HAT_FLOOR
        } else {
            v
        }
    }));
    (s, flags)
}

/// Upper-alpha empirical quantile of the bootstrap max-norms over `g`:
/// the ceil((1-alpha) B)-th ascending order statistic. Multipliers for
/// replicate b come from an independent seeded stream, so results do not
/// depend on the parallel schedule.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_quantile(
    d: &Dataset,
    beta_ma: &CoefVector,
    w: &Array2<f64>,
    s: &Array1<f64>,
    g: &[usize],
    b: usize,
    alpha: f64,
    seed: u64,
    kind: LossKind,
) -> Result<f64> {
    if b == 0 {
        return Err(HdmaError::Config("bootstrap replication count must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(HdmaError::Config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if g.is_empty() {
        return Err(HdmaError::Config("index set G must be nonempty".into()));
    }
    let p = d.p();
    if let Some(&bad) = g.iter().find(|&&j| j >= p) {
        return Err(HdmaError::Config(format!("G index {bad} out of range (p={p})")));
    }
    let n = d.n();
    let grads = score_gradients(d, beta_ma, kind);

    // m[g_idx, i] = s_j * <W_j, psi_i> / sqrt(n), so each bootstrap draw is
    // one matrix-vector product with the multiplier vector.
    let sqrt_n = (n as f64).sqrt();
    let mut w_g = Array2::zeros((g.len(), p));
    for (gi, &j) in g.iter().enumerate() {
        w_g.row_mut(gi).assign(&w.row(j));
    }
    let mut m = w_g.dot(&d.x.t());
    for (gi, &j) in g.iter().enumerate() {
        for i in 0..n {
            m[[gi, i]] *= s[j] * grads[i] / sqrt_n;
        }
    }

    let mut norms: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let mult: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut worst = 0.0f64;
            for gi in 0..g.len() {
                let z: f64 = m
                    .row(gi)
                    .iter()
                    .zip(mult.iter())
                    .map(|(mv, e)| mv * e)
                    .sum();
                worst = worst.max(z.abs());
            }
            worst
        })
        .collect();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (((1.0 - alpha) * b as f64).ceil() as usize).clamp(1, b);
    Ok(norms[rank - 1])
}

/// Builds the simultaneous intervals
/// `beta_j -/+ q_hat / (s_j sqrt(n))` for `j` in `g` (0-based internally;
/// reported indices are 1-based).
#[allow(clippy::too_many_arguments)]
pub fn simultaneous_ci(
    beta_debiased: &Array1<f64>,
    s: &Array1<f64>,
    q_hat: f64,
    g: &[usize],
    n: usize,
    alpha: f64,
    meta: CiMeta,
) -> Result<InferenceResult> {
    if q_hat < 0.0 {
        return Err(HdmaError::Config(format!("q_hat must be >= 0, got {q_hat}")));
    }
    let sqrt_n = (n as f64).sqrt();
    let intervals = g
        .iter()
        .map(|&j| {
            let half = q_hat / (s[j] * sqrt_n);
            Interval {
                index: j + 1,
                estimate: beta_debiased[j],
                lower: beta_debiased[j] - half,
                upper: beta_debiased[j] + half,
            }
        })
        .collect();
    Ok(InferenceResult {
        beta_debiased: beta_debiased.to_vec(),
        s_hat: s.to_vec(),
        q_hat,
        intervals,
        alpha,
        b: meta.b,
        seed: meta.seed,
        symmetrized: meta.symmetrized,
        gamma_n: meta.gamma_n,
    })
}

/// Provenance recorded alongside the intervals.
#[derive(Debug, Clone, Copy)]
pub struct CiMeta {
    pub b: usize,
    pub seed: u64,
    pub symmetrized: bool,
    pub gamma_n: f64,
}

/// Canonical default `gamma_n = sqrt(log p / n)`.
pub fn default_gamma_n(n: usize, p: usize) -> f64 {
    ((p as f64).ln() / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};

    fn coef(beta: Vec<f64>) -> CoefVector {
        let support = (0..beta.len()).collect();
        CoefVector {
            beta: Array1::from(beta),
            intercept: 0.0,
            support,
            lambda: 0.0,
            warning: None,
        }
    }

    /// Orthogonal design with (1/n) X^T X = diag(d).
    fn diag_design(diag: &[f64]) -> Dataset {
        let base = [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let p = diag.len();
        let mut x = Array2::zeros((4, p));
        for j in 0..p {
            let scale = diag[j].sqrt();
            for i in 0..4 {
                x[[i, j]] = base[i][j] * scale;
            }
        }
        Dataset::new(Array1::zeros(4), x, None).unwrap()
    }

    #[test]
    fn hessian_identity_case() {
        let d = diag_design(&[1.0, 1.0, 1.0]);
        let j = sample_hessian(&d, &coef(vec![0.0; 3]), LossKind::Squared);
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(j[[a, b]], f64::from(a == b), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn clime_identity_shrinks_diag() {
        let d = diag_design(&[1.0, 1.0, 1.0]);
        let est = estimate_inverse_hessian(&d, &coef(vec![0.0; 3]), 0.1, LossKind::Squared).unwrap();
        assert!(est.infeasible_rows().is_empty());
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 0.9 } else { 0.0 };
                assert_abs_diff_eq!(est.w[[a, b]], want, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn clime_gamma_one_gives_zero_matrix() {
        let d = diag_design(&[1.0, 1.0]);
        let est = estimate_inverse_hessian(&d, &coef(vec![0.0; 2]), 1.0, LossKind::Squared).unwrap();
        for v in est.w.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn clime_diagonal_closed_form() {
        let diag = [2.0, 1.0, 0.5];
        let d = diag_design(&diag);
        let est = estimate_inverse_hessian(&d, &coef(vec![0.0; 3]), 0.1, LossKind::Squared).unwrap();
        for (j, dj) in diag.iter().enumerate() {
            assert_abs_diff_eq!(est.w[[j, j]], 0.9 / dj, epsilon = 1e-6);
            for k in 0..3 {
                if k != j {
                    assert_abs_diff_eq!(est.w[[j, k]], 0.0, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn clime_feasibility_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let n = 60;
        let p = 8;
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        let d = Dataset::new(y, x, None).unwrap();
        let gamma = 0.2;
        let est = estimate_inverse_hessian(&d, &coef(vec![0.0; p]), gamma, LossKind::Squared).unwrap();
        assert!(est.infeasible_rows().is_empty());
        let j = sample_hessian(&d, &coef(vec![0.0; p]), LossKind::Squared);
        let prod = est.w.dot(&j);
        for a in 0..p {
            for b in 0..p {
                let target = f64::from(a == b);
                assert!(
                    (prod[[a, b]] - target).abs() <= gamma + 1e-6,
                    "constraint violated at ({a},{b}): {}",
                    prod[[a, b]]
                );
            }
        }
    }

    #[test]
    fn symmetrize_examples() {
        let w = arr2(&[[1.0, 2.0], [0.5, 1.0]]);
        let s = symmetrize(&w);
        assert_eq!(s, arr2(&[[1.0, 0.5], [0.5, 1.0]]));

        let sym = arr2(&[[1.0, -0.3], [-0.3, 2.0]]);
        assert_eq!(symmetrize(&sym), sym);

        let w2 = arr2(&[[0.0, -3.0], [1.0, 0.0]]);
        assert_eq!(symmetrize(&w2), arr2(&[[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn symmetrize_idempotent_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let w = Array2::from_shape_fn((6, 6), |_| rng.random_range(-2.0..2.0f64));
        let s = symmetrize(&w);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(s[[i, j]], s[[j, i]]);
            }
        }
        assert_eq!(symmetrize(&s), s);
    }

    #[test]
    fn debias_identities() {
        // Zero gradient at beta_ma: no correction.
        let d = diag_design(&[1.0, 1.0]);
        let dd = Dataset::new(d.x.dot(&Array1::from(vec![1.0, -2.0])), d.x.clone(), None).unwrap();
        let bma = coef(vec![1.0, -2.0]);
        let w = Array2::eye(2);
        let out = debias(&dd, &bma, &w, LossKind::Squared);
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], -2.0, epsilon = 1e-12);

        // W = 0: debiasing is a no-op.
        let z = Array2::zeros((2, 2));
        let out0 = debias(&dd, &coef(vec![0.3, 0.4]), &z, LossKind::Squared);
        assert_eq!(out0.to_vec(), vec![0.3, 0.4]);
    }

    #[test]
    fn debias_orthonormal_is_exact_projection() {
        // Orthonormal design, W = I: one Newton step lands on least squares.
        let d0 = diag_design(&[1.0, 1.0, 1.0]);
        let y = Array1::from(vec![1.3, -0.2, 0.8, -1.9]);
        let d = Dataset::new(y, d0.x.clone(), None).unwrap();
        let w = Array2::eye(3);
        let start = coef(vec![5.0, -7.0, 0.1]);
        let out = debias(&d, &start, &w, LossKind::Squared);
        // Normal-equations oracle: beta = (X^T X / n)^{-1} X^T y / n = X^T y / n here.
        let oracle = d.x.t().dot(&d.y) / 4.0;
        for j in 0..3 {
            assert_abs_diff_eq!(out[j], oracle[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn s_hat_matches_column_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let n = 30;
        let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(-2.0..2.0f64));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        let d = Dataset::new(y, x, None).unwrap();
        let (s, flags) = s_hat(&d, &coef(vec![0.0; 4]), LossKind::Squared);
        for j in 0..4 {
            let direct: f64 = d.x.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64;
            assert_abs_diff_eq!(s[j], direct, epsilon = 1e-12);
            assert!(!flags[j]);
        }
    }

    #[test]
    fn s_hat_logistic_quarter_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let n = 25;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0f64));
        let y = Array1::from_shape_fn(n, |_| f64::from(rng.random_bool(0.5)));
        let d = Dataset::new(y, x, None).unwrap();
        let (s, _) = s_hat(&d, &coef(vec![0.0; 3]), LossKind::Logistic);
        for j in 0..3 {
            let direct: f64 = d.x.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64;
            assert_abs_diff_eq!(s[j], 0.25 * direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn s_hat_floors_zero_column() {
        let mut x = Array2::zeros((4, 2));
        for i in 0..4 {
            x[[i, 0]] = (i as f64) - 1.5;
        }
        let d = Dataset::new(Array1::zeros(4), x, None).unwrap();
        let (s, flags) = s_hat(&d, &coef(vec![0.0; 2]), LossKind::Squared);
        assert_eq!(s[1], S_HAT_FLOOR);
        assert!(flags[1]);
        assert!(!flags[0]);
    }

    #[test]
    fn bootstrap_zero_gradient_gives_zero_quantile() {
        let d0 = diag_design(&[1.0, 1.0]);
        let beta = Array1::from(vec![0.7, -0.3]);
        let d = Dataset::new(d0.x.dot(&beta), d0.x.clone(), None).unwrap();
        let bma = coef(beta.to_vec());
        let w = Array2::eye(2);
        let s = Array1::from(vec![1.0, 1.0]);
        let q = bootstrap_quantile(&d, &bma, &w, &s, &[0, 1], 100, 0.05, 3, LossKind::Squared)
            .unwrap();
        assert_abs_diff_eq!(q, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_single_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = 12;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        let d = Dataset::new(y, x, None).unwrap();
        let bma = coef(vec![0.0; 3]);
        let w = Array2::eye(3);
        let (s, _) = s_hat(&d, &bma, LossKind::Squared);
        let q1 = bootstrap_quantile(&d, &bma, &w, &s, &[0, 1, 2], 1, 0.05, 9, LossKind::Squared)
            .unwrap();
        let q2 = bootstrap_quantile(&d, &bma, &w, &s, &[0, 1, 2], 1, 0.5, 9, LossKind::Squared)
            .unwrap();
        assert_eq!(q1, q2);
        assert!(q1 > 0.0);
    }

    #[test]
    fn bootstrap_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let n = 20;
        let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        let d = Dataset::new(y, x, None).unwrap();
        let bma = coef(vec![0.1; 4]);
        let w = Array2::eye(4);
        let (s, _) = s_hat(&d, &bma, LossKind::Squared);
        let a = bootstrap_quantile(&d, &bma, &w, &s, &[0, 2], 64, 0.05, 11, LossKind::Squared)
            .unwrap();
        let b = bootstrap_quantile(&d, &bma, &w, &s, &[0, 2], 64, 0.05, 11, LossKind::Squared)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_stabilizes_with_large_b() {
        // 20-dim instance; compare B in {500, 5000} against a 50000-draw
        // oracle computed with independent loops and its own RNG stream.
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let n = 40;
        let p = 20;
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0f64));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        let d = Dataset::new(y, x, None).unwrap();
        let bma = coef(vec![0.0; p]);
        let w = Array2::eye(p);
        let (s, _) = s_hat(&d, &bma, LossKind::Squared);
        let g: Vec<usize> = (0..p).collect();
        let alpha = 0.05;

        // Independent oracle: direct formula, own normal draws.
        let sqrt_n = (n as f64).sqrt();
        let mut m = vec![vec![0.0f64; n]; p];
        for (row, mj) in m.iter_mut().enumerate() {
            for (i, cell) in mj.iter_mut().enumerate() {
                let mu = 0.0;
                let grad = mu - d.y[i];
                // w = I so <W_j, psi_i> = psi_i[j] = grad * x_ij
                *cell = s[row] * grad * d.x[[i, row]] / sqrt_n;
            }
        }
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(987_654);
        let mut oracle_norms: Vec<f64> = (0..50_000)
            .map(|_| {
                let e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut oracle_rng)).collect();
                m.iter()
                    .map(|mj| mj.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>().abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        oracle_norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle_q = |level: f64| {
            let idx = ((level * 50_000.0).ceil() as usize).clamp(1, 50_000);
            oracle_norms[idx - 1]
        };

        for b in [500usize, 5000] {
            let q = bootstrap_quantile(&d, &bma, &w, &s, &g, b, alpha, 13, LossKind::Squared)
                .unwrap();
            let level_sd = (alpha * (1.0 - alpha) / b as f64).sqrt();
            let lo = oracle_q(1.0 - alpha - 4.0 * level_sd);
            let hi = oracle_q((1.0 - alpha + 4.0 * level_sd).min(0.99999));
            assert!(
                (lo..=hi).contains(&q),
                "B={b}: Q={q} outside oracle band [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn ci_examples() {
        let meta = CiMeta {
            b: 10,
            seed: 0,
            symmetrized: true,
            gamma_n: 0.1,
        };
        // q_hat = 0: degenerate intervals at the estimate.
        let r = simultaneous_ci(
            &Array1::from(vec![1.5]),
            &Array1::from(vec![1.0]),
            0.0,
            &[0],
            25,
            0.05,
            meta,
        )
        .unwrap();
        assert_eq!(r.intervals[0].lower, 1.5);
        assert_eq!(r.intervals[0].upper, 1.5);

        // beta=[1], s=[2], q=4, n=100: half-width 0.2.
        let r2 = simultaneous_ci(
            &Array1::from(vec![1.0]),
            &Array1::from(vec![2.0]),
            4.0,
            &[0],
            100,
            0.05,
            meta,
        )
        .unwrap();
        assert_abs_diff_eq!(r2.intervals[0].lower, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(r2.intervals[0].upper, 1.2, epsilon = 1e-12);
        assert_eq!(r2.intervals[0].index, 1);
        assert!(r2.intervals[0].significant());

        // Doubling s halves the width; growing n shrinks it; growing q widens it.
        let width = |s: f64, q: f64, n: usize| {
            let r = simultaneous_ci(
                &Array1::from(vec![0.0]),
                &Array1::from(vec![s]),
                q,
                &[0],
                n,
                0.05,
                meta,
            )
            .unwrap();
            r.intervals[0].upper - r.intervals[0].lower
        };
        assert_abs_diff_eq!(width(4.0, 4.0, 100), 0.5 * width(2.0, 4.0, 100), epsilon = 1e-12);
        assert!(width(2.0, 4.0, 400) < width(2.0, 4.0, 100));
        assert!(width(2.0, 8.0, 100) > width(2.0, 4.0, 100));
    }
}
