//! The cross-validation weight criterion over the simplex and its solvers:
//! exact simplex projection, the accelerated projected-gradient FGMA solver,
//! and the zero-order greedy GMA baseline.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldAssignment};
use crate::error::{HdmaError, Result};
use crate::loss::{loss_grad, loss_value, LossKind};
use crate::candidates::CandidateSet;
use crate::solver::{fit_candidate, CoefVector, FitConfig, PenaltyKind};

/// Full-data candidate fits plus the held-out prediction matrix the CV
/// criterion is evaluated against. Row i of `z` is computed exclusively from
/// estimators that never saw observation i.
#[derive(Debug, Clone)]
pub struct FitBundle {
    /// p x K matrix of full-data candidate coefficients.
    pub b_full: Array2<f64>,
    /// Per-candidate intercepts of the full-data fits (zeros when disabled).
    pub intercepts: Array1<f64>,
    /// n x K held-out predictions: `z[i, k] = <beta_k^{[-m(i)]}, x_i>`.
    pub z: Array2<f64>,
    pub y: Array1<f64>,
    pub loss: LossKind,
}

impl FitBundle {
    pub fn new(
        b_full: Array2<f64>,
        intercepts: Array1<f64>,
        z: Array2<f64>,
        y: Array1<f64>,
        loss: LossKind,
    ) -> Result<Self> {
        if b_full.ncols() != z.ncols() || intercepts.len() != z.ncols() {
            return Err(HdmaError::Dimension {
                context: "candidate counts in FitBundle".into(),
                expected: z.ncols(),
                found: b_full.ncols(),
            });
        }
        if z.nrows() != y.len() {
            return Err(HdmaError::Dimension {
                context: "rows of Z vs response".into(),
                expected: y.len(),
                found: z.nrows(),
            });
        }
        Ok(FitBundle {
            b_full,
            intercepts,
            z,
            y,
            loss,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }
}

/// Weight solver used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightAlgorithm {
    Fgma,
    Gma,
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// First-order optimality on the simplex reached the tolerance.
    GradientCriterion,
    /// GMA's step-size/step-change rule fired.
    StepTolerance,
    MaxIter,
}

/// Solution of the simplex-constrained CV minimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSolution {
    pub w: Vec<f64>,
    /// CV(w)/n at the initial point and each accepted iterate.
    pub cv_trajectory: Vec<f64>,
    pub iterations: usize,
    pub terminated_by: Termination,
    pub algorithm: WeightAlgorithm,
}

impl WeightSolution {
    pub fn final_cv_over_n(&self) -> f64 {
        *self.cv_trajectory.last().unwrap()
    }

    pub fn write_trajectory_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,cv_over_n")?;
        for (i, v) in self.cv_trajectory.iter().enumerate() {
            writeln!(out, "{i},{v}")?;
        }
        Ok(())
    }
}

/// FGMA controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FgmaConfig {
    /// Initial majorizer curvature.
    pub l0: f64,
    /// Backtracking multiplier, > 1.
    pub gamma: f64,
    /// First-order optimality tolerance.
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for FgmaConfig {
    fn default() -> Self {
        FgmaConfig {
            l0: 1.0,
            gamma: 2.0,
            eps: 1e-6,
            max_iter: 500,
        }
    }
}

/// GMA controls; stops once `alpha_N < eps1` and the sup-norm step falls
/// below `eps2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GmaConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
}

impl Default for GmaConfig {
    fn default() -> Self {
        GmaConfig {
            eps1: 1e-2,
            eps2: 1e-3,
            max_iter: 2000,
        }
    }
}

/// Assembles the fit bundle behind the CV criterion: one full-data fit per
/// candidate plus J out-of-fold fits per candidate, evaluated on the held-out
/// rows. Fold and candidate fits run in parallel.
pub fn build_fit_bundle(
    d: &Dataset,
    cs: &CandidateSet,
    folds: &FoldAssignment,
    pkind: PenaltyKind,
    lkind: LossKind,
    cfg: &FitConfig,
) -> Result<FitBundle> {
    let n = d.n();
    let k = cs.k();
    if folds.fold_of.len() != n {
        return Err(HdmaError::Dimension {
            context: "fold assignment vs dataset".into(),
            expected: n,
            found: folds.fold_of.len(),
        });
    }

    let full: Vec<CoefVector> = (0..k)
        .into_par_iter()
        .map(|ki| {
            fit_candidate(d, &cs.groups[ki], pkind, cs.lambdas[ki], lkind, cfg).map_err(|e| {
                HdmaError::CandidateFit {
                    k: ki,
                    m: None,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..folds.j)
        .flat_map(|m| (0..k).map(move |ki| (m, ki)))
        .collect();
    let fold_fits: Vec<((usize, usize), CoefVector)> = jobs
        .into_par_iter()
        .map(|(m, ki)| {
            let train = d.subset(&folds.complement(m));
            fit_candidate(&train, &cs.groups[ki], pkind, cs.lambdas[ki], lkind, cfg)
                .map(|c| ((m, ki), c))
                .map_err(|e| HdmaError::CandidateFit {
                    k: ki,
                    m: Some(m),
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_key = vec![None; folds.j * k];
    for ((m, ki), coef) in fold_fits {
        by_key[m * k + ki] = Some(coef);
    }

    let mut z = Array2::zeros((n, k));
    for i in 0..n {
        let m = folds.fold_of[i];
        let row = d.x.row(i);
        for ki in 0..k {
            let coef = by_key[m * k + ki].as_ref().unwrap();
            z[[i, ki]] = coef.predict_linear(&row);
        }
    }

    let mut b_full = Array2::zeros((d.p(), k));
    let mut intercepts = Array1::zeros(k);
    for (ki, coef) in full.iter().enumerate() {
        b_full.column_mut(ki).assign(&coef.beta);
        intercepts[ki] = coef.intercept;
    }
    FitBundle::new(b_full, intercepts, z, d.y.clone(), lkind)
}

/// `CV(w) = sum_i L(y_i, <Z_i, w>)` (not divided by n).
pub fn cv_value(w: &ArrayView1<f64>, fb: &FitBundle) -> f64 {
    let mu = fb.z.dot(w);
    fb.y
        .iter()
        .zip(mu.iter())
        .map(|(y, m)| loss_value(fb.loss, *y, *m))
        .sum()
}

/// Gradient of `CV` at `w`: `Z^T [dL/dmu]_i`.
pub fn cv_grad(w: &ArrayView1<f64>, fb: &FitBundle) -> Array1<f64> {
    let mu = fb.z.dot(w);
    let g = Array1::from_iter(
        fb.y
            .iter()
            .zip(mu.iter())
            .map(|(y, m)| loss_grad(fb.loss, *y, *m)),
    );
    fb.z.t().dot(&g)
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(v: &ArrayView1<f64>) -> Array1<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut running = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        running += ui;
        let t = (running - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    Array1::from_iter(v.iter().map(|vi| (vi - theta).max(0.0)))
}

fn best_vertex(fb: &FitBundle) -> (usize, f64) {
    let mut best = 0;
    let mut best_cv = f64::INFINITY;
    for k in 0..fb.k() {
        let mut w = Array1::zeros(fb.k());
        w[k] = 1.0;
        let v = cv_value(&w.view(), fb);
        if v < best_cv {
            best_cv = v;
            best = k;
        }
    }
    (best, best_cv)
}

fn first_order_optimal(g: &Array1<f64>, w: &Array1<f64>, eps: f64) -> bool {
    let min_g = g.iter().cloned().fold(f64::INFINITY, f64::min);
    min_g >= g.dot(w) - eps
}

/// Accelerated projected-gradient minimization of CV over the simplex with
/// backtracked isotropic quadratic majorization and Nesterov momentum. The
/// majorizer curvature never resets downward between iterations. Acceptance
/// is monotone: if the proximal candidate would increase CV the previous
/// iterate is kept while the momentum sequence still advances, which keeps
/// the O(1/N^2) rate and makes the recorded trajectory nonincreasing.
pub fn fgma_solve(fb: &FitBundle, cfg: &FgmaConfig) -> WeightSolution {
    let k = fb.k();
    let n = fb.n() as f64;
    if k == 1 {
        let w = Array1::from(vec![1.0]);
        let cv0 = cv_value(&w.view(), fb) / n;
        return WeightSolution {
            w: vec![1.0],
            cv_trajectory: vec![cv0],
            iterations: 0,
            terminated_by: Termination::GradientCriterion,
            algorithm: WeightAlgorithm::Fgma,
        };
    }

    let (vertex, cv0) = best_vertex(fb);
    let mut w = Array1::zeros(k);
    w[vertex] = 1.0;
    let mut z = w.clone();
    let mut a_n = 1.0f64;
    let mut l = cfg.l0;
    let mut traj = vec![cv0 / n];

    let g0 = cv_grad(&w.view(), fb);
    if first_order_optimal(&g0, &w, cfg.eps) {
        return WeightSolution {
            w: w.to_vec(),
            cv_trajectory: traj,
            iterations: 0,
            terminated_by: Termination::GradientCriterion,
            algorithm: WeightAlgorithm::Fgma,
        };
    }

    let mut cv_w = cv0;

    for iter in 1..=cfg.max_iter {
        let g_z = cv_grad(&z.view(), fb);
        let cv_z = cv_value(&z.view(), fb);
        let (u, cv_u) = loop {
            let trial = project_simplex(&(&z - &(&g_z / l)).view());
            let diff = &trial - &z;
            let majorizer = cv_z + g_z.dot(&diff) + 0.5 * l * diff.dot(&diff);
            let cv_trial = cv_value(&trial.view(), fb);
            if cv_trial <= majorizer + 1e-12 * (1.0 + majorizer.abs()) || l > 1e18 {
                break (trial, cv_trial);
            }
            l *= cfg.gamma;
        };
        let a_next = 0.5 * (1.0 + (1.0 + 4.0 * a_n * a_n).sqrt());
        let (w_next, cv_next) = if cv_u <= cv_w {
            (u.clone(), cv_u)
        } else {
            (w.clone(), cv_w)
        };
        z = &w_next
            + &((&u - &w_next) * (a_n / a_next))
            + &((&w_next - &w) * ((a_n - 1.0) / a_next));
        w = w_next;
        cv_w = cv_next;
        a_n = a_next;
        traj.push(cv_w / n);
        let g_w = cv_grad(&w.view(), fb);
        if first_order_optimal(&g_w, &w, cfg.eps) {
            return WeightSolution {
                w: w.to_vec(),
                cv_trajectory: traj,
                iterations: iter,
                terminated_by: Termination::GradientCriterion,
                algorithm: WeightAlgorithm::Fgma,
            };
        }
    }

    log::warn!("FGMA hit max_iter = {}; returning best iterate seen", cfg.max_iter);
    WeightSolution {
        w: w.to_vec(),
        cv_trajectory: traj,
        iterations: cfg.max_iter,
        terminated_by: Termination::MaxIter,
        algorithm: WeightAlgorithm::Fgma,
    }
}

/// Zero-order greedy baseline: step size `2/(N+2)` toward the best vertex
/// mixing, ties toward the smallest index. After N iterations the iterate has
/// at most N+1 nonzero entries.
pub fn gma_solve(fb: &FitBundle, cfg: &GmaConfig) -> WeightSolution {
    let k = fb.k();
    let n = fb.n() as f64;
    if k == 1 {
        let w = Array1::from(vec![1.0]);
        let cv0 = cv_value(&w.view(), fb) / n;
        return WeightSolution {
            w: vec![1.0],
            cv_trajectory: vec![cv0],
            iterations: 0,
            terminated_by: Termination::StepTolerance,
            algorithm: WeightAlgorithm::Gma,
        };
    }

    let (vertex, cv0) = best_vertex(fb);
    let mut w = Array1::zeros(k);
    w[vertex] = 1.0;
    let mut mu = fb.z.column(vertex).to_owned();
    let mut traj = vec![cv0 / n];

    for iter in 1..=cfg.max_iter {
        let alpha = 2.0 / (iter as f64 + 2.0);
        let mut best_k = 0;
        let mut best_cv = f64::INFINITY;
        for cand in 0..k {
            let col = fb.z.column(cand);
            let cv: f64 = fb
                .y
                .iter()
                .zip(mu.iter().zip(col.iter()))
                .map(|(y, (m, zk))| loss_value(fb.loss, *y, (1.0 - alpha) * m + alpha * zk))
                .sum();
            if cv < best_cv {
                best_cv = cv;
                best_k = cand;
            }
        }
        let mut step = 0.0f64;
        for j in 0..k {
            let target = if j == best_k { 1.0 } else { 0.0 };
            let new = (1.0 - alpha) * w[j] + alpha * target;
            step = step.max((new - w[j]).abs());
            w[j] = new;
        }
        let col = fb.z.column(best_k);
        for (m, zk) in mu.iter_mut().zip(col.iter()) {
            *m = (1.0 - alpha) * *m + alpha * zk;
        }
        traj.push(best_cv / n);
        if alpha < cfg.eps1 && step < cfg.eps2 {
            return WeightSolution {
                w: w.to_vec(),
                cv_trajectory: traj,
                iterations: iter,
                terminated_by: Termination::StepTolerance,
                algorithm: WeightAlgorithm::Gma,
            };
        }
    }

    log::warn!("GMA hit max_iter = {}", cfg.max_iter);
    WeightSolution {
        w: w.to_vec(),
        cv_trajectory: traj,
        iterations: cfg.max_iter,
        terminated_by: Termination::MaxIter,
        algorithm: WeightAlgorithm::Gma,
    }
}

/// `beta_MA(w) = B w`; the support is the union of the nonzero patterns of
/// the candidates that receive nonzero weight.
pub fn model_average(b_full: &ArrayView2<f64>, w: &ArrayView1<f64>) -> CoefVector {
    let beta = b_full.dot(w);
    let mut support: Vec<usize> = Vec::new();
    for j in 0..b_full.nrows() {
        let used = (0..b_full.ncols()).any(|k| w[k] != 0.0 && b_full[[j, k]] != 0.0);
        if used {
            support.push(j);
        }
    }
    CoefVector {
        beta,
        intercept: 0.0,
        support,
        lambda: 0.0,
        warning: None,
    }
}
