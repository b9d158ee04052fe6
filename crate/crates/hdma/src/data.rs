//! Dataset representation, CSV ingestion, standardization and fold assignment.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HdmaError, Result};

/// A response vector paired with an n x p covariate matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub x: Array2<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(y: Array1<f64>, x: Array2<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let d = Self::from_parts(y, x, feature_names)?;
        if d.n() < 2 {
            return Err(HdmaError::Config(format!(
                "need at least 2 observations, got {}",
                d.n()
            )));
        }
        Ok(d)
    }

    /// Like [`Dataset::new`] but without the n >= 2 requirement, for internal
    /// fold subsets (a leave-one-out training split can have a single row).
    pub(crate) fn from_parts(
        y: Array1<f64>,
        x: Array2<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(HdmaError::Dimension {
                context: "response length vs covariate rows".into(),
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(HdmaError::Config("covariate matrix has no columns".into()));
        }
        if let Some(names) = &feature_names {
            if names.len() != x.ncols() {
                return Err(HdmaError::Dimension {
                    context: "feature names vs covariate columns".into(),
                    expected: x.ncols(),
                    found: names.len(),
                });
            }
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(HdmaError::Numerical("non-finite entry in dataset".into()));
        }
        Ok(Dataset {
            y,
            x,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Checks the 0/1 coding required by the logistic loss.
    pub fn validate_binary(&self) -> Result<()> {
        match self.y.iter().position(|&v| v != 0.0 && v != 1.0) {
            None => Ok(()),
            Some(i) => Err(HdmaError::Config(format!(
                "logistic loss needs y in {{0,1}}, found {} at row {}",
                self.y[i],
                i + 1
            ))),
        }
    }

    /// New dataset containing the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let y = Array1::from_iter(rows.iter().map(|&i| self.y[i]));
        let mut x = Array2::zeros((rows.len(), self.p()));
        for (out, &i) in rows.iter().enumerate() {
            x.row_mut(out).assign(&self.x.row(i));
        }
        Dataset {
            y,
            x,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Column means and scales recorded by [`standardize`], sufficient to map
/// standardized-scale coefficients back to the original scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub means: Vec<f64>,
    /// Sample standard deviations (n-1 denominator); 1.0 for flagged columns.
    pub scales: Vec<f64>,
    /// Constant columns pass through unscaled and are flagged here.
    pub constant: Vec<bool>,
}

impl ScalingInfo {
    pub fn identity(p: usize) -> Self {
        ScalingInfo {
            means: vec![0.0; p],
            scales: vec![1.0; p],
            constant: vec![false; p],
        }
    }

    /// Applies the stored transform to a matrix of new observations.
    pub fn transform_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.means[j]) / self.scales[j]);
        }
        out
    }

    /// Inverse of [`standardize`] on the covariate matrix.
    pub fn unstandardize_matrix(&self, x_std: &Array2<f64>) -> Array2<f64> {
        let mut out = x_std.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.scales[j] + self.means[j]);
        }
        out
    }

    /// Maps a coefficient vector fitted on the standardized scale to the
    /// original covariate scale, returning `(beta, offset)` such that
    /// `<beta_std, (x - m)/s> + b0 == <beta, x> + offset`.
    pub fn coef_to_original(&self, beta_std: &Array1<f64>, intercept_std: f64) -> (Array1<f64>, f64) {
        let mut beta = beta_std.clone();
        let mut offset = intercept_std;
        for j in 0..beta.len() {
            beta[j] /= self.scales[j];
            offset -= beta_std[j] * self.means[j] / self.scales[j];
        }
        (beta, offset)
    }
}

/// Centers each column to mean zero and scales to unit sample SD.
/// Constant columns are left untouched and flagged.
pub fn standardize(d: &Dataset) -> (Dataset, ScalingInfo) {
    let n = d.n() as f64;
    let p = d.p();
    let mut x = d.x.clone();
    let mut info = ScalingInfo::identity(p);
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1.0)).sqrt();
        if sd > 0.0 {
            info.means[j] = mean;
            info.scales[j] = sd;
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            info.constant[j] = true;
        }
    }
    (
        Dataset {
            y: d.y.clone(),
            x,
            feature_names: d.feature_names.clone(),
        },
        info,
    )
}

/// Which column of a CSV file holds the response.
#[derive(Debug, Clone)]
pub enum ResponseCol {
    Name(String),
    Index(usize),
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| HdmaError::NonNumericCell {
        row,
        col: col.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a comma-separated file into a [`Dataset`]. The response column is
/// extracted; remaining columns become X in file order.
pub fn load_csv(path: &Path, response: &ResponseCol, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => HdmaError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => HdmaError::Csv {
                path: path.to_path_buf(),
                msg: e.to_string(),
            },
        })?;

    let headers: Option<Vec<String>> = if has_header {
        Some(
            reader
                .headers()
                .map_err(|e| HdmaError::Csv {
                    path: path.to_path_buf(),
                    msg: e.to_string(),
                })?
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut col_names: Option<Vec<String>> = None;
    // Rows are reported 1-based counting the header line if present.
    let first_data_row = if has_header { 2 } else { 1 };
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HdmaError::Csv {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let row_no = first_data_row + rec_idx;
        if col_names.is_none() {
            col_names = Some(match &headers {
                Some(h) => h.clone(),
                None => (0..record.len()).map(|i| format!("{i}")).collect(),
            });
        }
        let names = col_names.as_ref().unwrap();
        if record.len() != names.len() {
            return Err(HdmaError::Csv {
                path: path.to_path_buf(),
                msg: format!(
                    "row {row_no} has {} fields, expected {}",
                    record.len(),
                    names.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (cell, name) in record.iter().zip(names) {
            row.push(parse_cell(cell, row_no, name)?);
        }
        rows.push(row);
    }
    let names = col_names.ok_or_else(|| HdmaError::Csv {
        path: path.to_path_buf(),
        msg: "file has no data rows".into(),
    })?;

    let resp_idx = match response {
        ResponseCol::Index(i) => {
            if *i >= names.len() {
                return Err(HdmaError::MissingResponse(format!("index {i}")));
            }
            *i
        }
        ResponseCol::Name(name) => match &headers {
            Some(h) => h
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| HdmaError::MissingResponse(name.clone()))?,
            None => return Err(HdmaError::MissingResponse(name.clone())),
        },
    };

    let n = rows.len();
    let p = names.len() - 1;
    if p == 0 {
        return Err(HdmaError::Config("no covariate columns besides the response".into()));
    }
    let mut y = Array1::zeros(n);
    let mut x = Array2::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        y[i] = row[resp_idx];
        let mut out = 0;
        for (j, v) in row.iter().enumerate() {
            if j != resp_idx {
                x[[i, out]] = *v;
                out += 1;
            }
        }
    }
    let feature_names = headers.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(j, _)| *j != resp_idx)
            .map(|(_, name)| name)
            .collect()
    });
    Dataset::new(y, x, feature_names)
}

/// Reads a covariate-only CSV (no response column), e.g. for prediction.
pub fn load_matrix_csv(path: &Path, has_header: bool) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HdmaError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let headers: Option<Vec<String>> = if has_header {
        Some(
            reader
                .headers()
                .map_err(|e| HdmaError::Csv {
                    path: path.to_path_buf(),
                    msg: e.to_string(),
                })?
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
    } else {
        None
    };
    let first_data_row = if has_header { 2 } else { 1 };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HdmaError::Csv {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let row_no = first_data_row + rec_idx;
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let name = headers
                .as_ref()
                .map(|h| h[j].clone())
                .unwrap_or_else(|| format!("{j}"));
            row.push(parse_cell(cell, row_no, &name)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(HdmaError::Csv {
            path: path.to_path_buf(),
            msg: "file has no data rows".into(),
        });
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(HdmaError::Csv {
            path: path.to_path_buf(),
            msg: "ragged rows".into(),
        });
    }
    let mut x = Array2::zeros((rows.len(), p));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    Ok((x, headers))
}

/// J-fold partition of `0..n`, reproducible for a fixed seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// Fold id in `0..j` for each observation.
    pub fold_of: Vec<usize>,
    pub j: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// Observation indices in fold `m`.
    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == m).collect()
    }

    /// Observation indices outside fold `m`.
    pub fn complement(&self, m: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != m).collect()
    }
}

/// Splits `0..n` into J near-equal folds via a seeded random permutation.
/// Remainder observations go to the lowest-indexed folds.
pub fn make_folds(n: usize, j: usize, seed: u64) -> Result<FoldAssignment> {
    if j < 2 || j > n {
        return Err(HdmaError::Config(format!(
            "fold count must satisfy 2 <= J <= n, got J={j}, n={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let base = n / j;
    let extra = n % j;
    let mut fold_of = vec![0usize; n];
    let mut pos = 0;
    for m in 0..j {
        let size = base + usize::from(m < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = m;
        }
        pos += size;
    }
    Ok(FoldAssignment { fold_of, j, seed })
}
