//! Shared oracles for the acceptance suite: a dense linear solver, an
//! exhaustive simplex minimizer for quadratic criteria, and instance
//! generators. Everything here is independent of the library's solvers.

use hdma::weights::FitBundle;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
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

/// Explicit matrix inverse via column-by-column solves.
pub fn invert_dense(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut inv = Array2::zeros((n, n));
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve_dense(rows.clone(), e);
        for row in 0..n {
            inv[[row, col]] = x[row];
        }
    }
    inv
}

/// Spectral norm of a symmetric PSD matrix by power iteration.
pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    let p = a.nrows();
    let mut v = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    let mut norm = 0.0;
    for _ in 0..500 {
        let av = a.dot(&v);
        let new_norm = av.dot(&av).sqrt();
        if new_norm <= 0.0 {
            return 0.0;
        }
        v = av / new_norm;
        if (new_norm - norm).abs() <= 1e-14 * new_norm.max(1.0) {
            return new_norm;
        }
        norm = new_norm;
    }
    norm
}

/// A quadratic CV instance `CV(w) = sum_i (y_i - <Z_i, w>)^2 / 2` with a
/// near-interior simplex minimizer.
pub struct QuadInstance {
    pub bundle: FitBundle,
    /// Brute-force simplex minimizer.
    pub w_star: Array1<f64>,
    /// CV(w_star)/n.
    pub cv_star_over_n: f64,
    /// Spectral norm of the Hessian of CV/n.
    pub l_cv: f64,
}

/// Minimizes the quadratic CV over the simplex by enumerating every face:
/// for each support set solve the equality-constrained normal equations and
/// keep the best nonnegative candidate.
pub fn brute_force_simplex_min(z: &Array2<f64>, y: &Array1<f64>) -> (Array1<f64>, f64) {
    let k = z.ncols();
    assert!(k <= 20, "face enumeration explodes past K = 20");
    let h = z.t().dot(z);
    let g = z.t().dot(y);
    let cv = |w: &Array1<f64>| -> f64 {
        let r = y - &z.dot(w);
        0.5 * r.dot(&r)
    };
    let mut best: Option<(f64, Array1<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let m = members.len();
        // KKT system of min 1/2 w'Hw - g'w subject to sum(w) = 1 on the face.
        let mut kkt = vec![vec![0.0; m + 1]; m + 1];
        let mut rhs = vec![0.0; m + 1];
        for (ai, &ja) in members.iter().enumerate() {
            for (bi, &jb) in members.iter().enumerate() {
                kkt[ai][bi] = h[[ja, jb]];
            }
            kkt[ai][m] = 1.0;
            kkt[m][ai] = 1.0;
            rhs[ai] = g[ja];
        }
        rhs[m] = 1.0;
        let sol = solve_dense(kkt, rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut w = Array1::zeros(k);
        let mut feasible = true;
        for (ai, &ja) in members.iter().enumerate() {
            if sol[ai] < -1e-12 {
                feasible = false;
                break;
            }
            w[ja] = sol[ai].max(0.0);
        }
        if !feasible {
            continue;
        }
        let val = cv(&w);
        if best.as_ref().is_none_or(|(bv, _)| val < *bv) {
            best = Some((val, w));
        }
    }
    let (val, w) = best.expect("at least the vertices are feasible");
    (w, val)
}

/// Builds one quadratic instance with mildly correlated candidate columns
/// and a minimizer mixing several candidates.
pub fn quad_instance(seed: u64, k: usize, n: usize) -> QuadInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Array2::zeros((n, k));
    for i in 0..n {
        let shared: f64 = rng.random_range(-1.0..1.0);
        for j in 0..k {
            z[[i, j]] = 0.4 * shared + rng.random_range(-1.0..1.0);
        }
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let y = Array1::from_shape_fn(n, |i| {
        let mut v = 0.0;
        for j in 0..k {
            v += z[[i, j]] * raw[j] / total;
        }
        v + 0.05 * rng.random_range(-1.0..1.0)
    });

    let hessian = z.t().dot(&z);
    let l_cv = spectral_norm(&hessian) / n as f64;
    drop(hessian);
    let (w_star, cv_star) = brute_force_simplex_min(&z, &y);
    let bundle = FitBundle::new(
        Array2::zeros((2, k)),
        Array1::zeros(k),
        z,
        y,
        hdma::loss::LossKind::Squared,
    )
    .unwrap();
    QuadInstance {
        bundle,
        w_star,
        cv_star_over_n: cv_star / n as f64,
        l_cv,
    }
}

/// CV(e_k)-minimizing vertex, the initial point of both weight solvers.
pub fn best_vertex_distance(inst: &QuadInstance) -> f64 {
    let k = inst.bundle.k();
    let mut best = 0;
    let mut best_cv = f64::INFINITY;
    for j in 0..k {
        let mut w = Array1::zeros(k);
        w[j] = 1.0;
        let v = hdma::weights::cv_value(&w.view(), &inst.bundle);
        if v < best_cv {
            best_cv = v;
            best = j;
        }
    }
    let mut w0 = Array1::zeros(k);
    w0[best] = 1.0;
    let d = &w0 - &inst.w_star;
    d.dot(&d)
}
