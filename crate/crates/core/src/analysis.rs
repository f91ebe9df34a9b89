//! Standardization, PCA and the pattern-level summaries built on it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{Pattern, PatternLabelSet};
use crate::susceptibility::SusceptibilityMatrix;

/// Column-standardized copy of a row-major matrix. Zero-variance columns
/// are dropped from `data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardized {
    pub n_rows: usize,
    /// Original indices of the kept columns.
    pub columns: Vec<usize>,
    /// Original indices of zero-variance columns.
    pub dropped: Vec<usize>,
    /// Row-major `n_rows x columns.len()`.
    pub data: Vec<f64>,
    /// Per original column.
    pub means: Vec<f64>,
    /// Per original column, population standard deviation.
    pub stds: Vec<f64>,
}

impl Standardized {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_cols();
        &self.data[i * k..(i + 1) * k]
    }
}

const ZERO_VARIANCE: f64 = 1e-300;

/// Subtract column means and divide by population standard deviations.
pub fn standardize(values: &[f64], n_cols: usize) -> Result<Standardized> {
    if n_cols == 0 || values.len() % n_cols != 0 {
        return Err(Error::Invalid(format!(
            "{} values do not form rows of {n_cols}",
            values.len()
        )));
    }
    let n = values.len() / n_cols;
    if n < 2 {
        return Err(Error::Invalid(
            "standardization needs at least 2 rows".into(),
        ));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix to standardize".into()));
    }
    let mut means = vec![0.0; n_cols];
    let mut stds = vec![0.0; n_cols];
    for j in 0..n_cols {
        let mean = (0..n).map(|i| values[i * n_cols + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (values[i * n_cols + j] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        means[j] = mean;
        stds[j] = var.sqrt();
    }
    let (columns, dropped): (Vec<usize>, Vec<usize>) =
        (0..n_cols).partition(|&j| stds[j] * stds[j] > ZERO_VARIANCE);
    for &j in &dropped {
        log::warn!("column {j} has zero variance and is excluded");
    }
    if columns.is_empty() {
        return Err(Error::Invalid("every column has zero variance".into()));
    }
    let mut data = Vec::with_capacity(n * columns.len());
    for i in 0..n {
        for &j in &columns {
            data.push((values[i * n_cols + j] - means[j]) / stds[j]);
        }
    }
    Ok(Standardized {
        n_rows: n,
        columns,
        dropped,
        data,
        means,
        stds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCAResult {
    pub n_rows: usize,
    /// Original column indices the components are expressed in.
    pub columns: Vec<usize>,
    /// `k x k`, row = feature, column = component.
    pub loadings: Vec<f64>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// Row-major `n_rows x k`.
    pub scores: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl PCAResult {
    pub fn n_components(&self) -> usize {
        self.columns.len()
    }

    /// Loading vector of component `pc` over the kept features.
    pub fn loading(&self, pc: usize) -> Vec<f64> {
        let k = self.n_components();
        (0..k).map(|f| self.loadings[f * k + pc]).collect()
    }

    pub fn score(&self, row: usize, pc: usize) -> f64 {
        self.scores[row * self.n_components() + pc]
    }

    pub fn component_scores(&self, pc: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.score(i, pc)).collect()
    }
}

/// Principal components of standardized data via the eigendecomposition of
/// the population covariance. Each loading is signed so that its largest
/// magnitude entry is positive.
pub fn pca(std: &Standardized) -> Result<PCAResult> {
    let n = std.n_rows;
    let k = std.n_cols();
    if n < 2 {
        return Err(Error::Invalid("PCA needs at least 2 rows".into()));
    }
    if !std.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let x = DMatrix::from_row_slice(n, k, &std.data);
    let cov = (x.transpose() * &x) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut loadings = vec![0.0; k * k];
    let mut eigenvalues = Vec::with_capacity(k);
    for (c, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let pivot = (0..k).fold(
            0,
            |best, f| if v[f].abs() > v[best].abs() { f } else { best },
        );
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for f in 0..k {
            loadings[f * k + c] = sign * v[f];
        }
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
    }
    let total: f64 = eigenvalues.iter().sum();
    let explained_variance = eigenvalues
        .iter()
        .map(|e| if total > 0.0 { e / total } else { 0.0 })
        .collect();
    let w = DMatrix::from_row_slice(k, k, &loadings);
    let s = x * w;
    let mut scores = Vec::with_capacity(n * k);
    for i in 0..n {
        for c in 0..k {
            scores.push(s[(i, c)]);
        }
    }
    Ok(PCAResult {
        n_rows: n,
        columns: std.columns.clone(),
        loadings,
        eigenvalues,
        explained_variance,
        scores,
        means: std.means.clone(),
        stds: std.stds.clone(),
    })
}

/// Standardize and decompose a susceptibility matrix in one go.
pub fn pca_of_matrix(matrix: &SusceptibilityMatrix) -> Result<(Standardized, PCAResult)> {
    let std = standardize(&matrix.values, matrix.n_cols())?;
    let p = pca(&std)?;
    Ok((std, p))
}

/// PCA run separately on each layer's columns.
pub fn per_layer_pca(
    matrix: &SusceptibilityMatrix,
    heads_per_layer: usize,
) -> Result<Vec<(usize, PCAResult)>> {
    if heads_per_layer == 0 || matrix.n_cols() % heads_per_layer != 0 {
        return Err(Error::Invalid(format!(
            "{} columns do not split into layers of {heads_per_layer}",
            matrix.n_cols()
        )));
    }
    (0..matrix.n_cols() / heads_per_layer)
        .map(|l| {
            let cols: Vec<usize> = (l * heads_per_layer..(l + 1) * heads_per_layer).collect();
            let sub = matrix.select_columns(&cols);
            Ok((l, pca_of_matrix(&sub)?.1))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub pc: usize,
    pub sign: Sign,
    pub quantile: f64,
    /// Rows in the selected extreme, most extreme first.
    pub rows: Vec<usize>,
    /// Percentage of the selected rows carrying each pattern; empty when
    /// no row has the requested sign.
    pub percentages: Vec<(Pattern, f64)>,
}

impl Composition {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn percent(&self, p: Pattern) -> Option<f64> {
        self.percentages
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, v)| *v)
    }
}

/// Pattern make-up of the `quantile` most extreme rows (by |score|) among
/// those whose score on `pc` has `sign`. Ties at the boundary go to the
/// smaller sample id.
pub fn pc_extreme_pattern_composition(
    pca: &PCAResult,
    labels: &[PatternLabelSet],
    sample_ids: &[usize],
    pc: usize,
    sign: Sign,
    quantile: f64,
) -> Result<Composition> {
    if labels.len() != pca.n_rows || sample_ids.len() != pca.n_rows {
        return Err(Error::Invalid(
            "labels, ids and scores are not aligned".into(),
        ));
    }
    if pc >= pca.n_components() {
        return Err(Error::Invalid(format!("no component {pc}")));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Invalid("quantile must lie in (0, 1]".into()));
    }
    let mut subset: Vec<usize> = (0..pca.n_rows)
        .filter(|&i| match sign {
            Sign::Positive => pca.score(i, pc) > 0.0,
            Sign::Negative => pca.score(i, pc) < 0.0,
        })
        .collect();
    let mut out = Composition {
        pc,
        sign,
        quantile,
        rows: Vec::new(),
        percentages: Vec::new(),
    };
    if subset.is_empty() {
        return Ok(out);
    }
    subset.sort_by(|&a, &b| {
        pca.score(b, pc)
            .abs()
            .total_cmp(&pca.score(a, pc).abs())
            .then(sample_ids[a].cmp(&sample_ids[b]))
    });
    let m = ((quantile * subset.len() as f64).ceil() as usize).clamp(1, subset.len());
    subset.truncate(m);
    out.percentages = Pattern::ALL
        .into_iter()
        .map(|p| {
            let hits = subset.iter().filter(|&&i| labels[i].has(p)).count();
            (p, 100.0 * hits as f64 / m as f64)
        })
        .collect();
    out.rows = subset;
    Ok(out)
}

fn population_variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Share of a pattern subset's total score variance that lies along `pc`.
pub fn pattern_pc_variance_fraction(
    pca: &PCAResult,
    labels: &[PatternLabelSet],
    pattern: Pattern,
    pc: usize,
) -> Result<f64> {
    if labels.len() != pca.n_rows {
        return Err(Error::Invalid("labels and scores are not aligned".into()));
    }
    if pc >= pca.n_components() {
        return Err(Error::Invalid(format!("no component {pc}")));
    }
    let rows: Vec<usize> = (0..pca.n_rows)
        .filter(|&i| labels[i].has(pattern))
        .collect();
    if rows.len() < 2 {
        return Err(Error::Invalid(format!(
            "pattern {pattern} has fewer than 2 samples"
        )));
    }
    let vars: Vec<f64> = (0..pca.n_components())
        .map(|c| population_variance(&rows.iter().map(|&i| pca.score(i, c)).collect::<Vec<_>>()))
        .collect();
    let total: f64 = vars.iter().sum();
    if total <= 0.0 {
        return Err(Error::Undefined("pattern subset has zero variance"));
    }
    Ok(vars[pc] / total)
}

/// Pearson correlation, or `None` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Correlation between each row's mean susceptibility across heads (raw,
/// unstandardized) and its PC1 score.
pub fn mean_susceptibility_alignment(
    matrix: &SusceptibilityMatrix,
    pca: &PCAResult,
) -> Result<f64> {
    if matrix.n_rows() != pca.n_rows {
        return Err(Error::Invalid(
            "matrix and PCA have different row counts".into(),
        ));
    }
    if matrix.n_rows() < 3 {
        return Err(Error::Invalid("alignment needs at least 3 rows".into()));
    }
    let means: Vec<f64> = (0..matrix.n_rows())
        .map(|i| matrix.row(i).iter().sum::<f64>() / matrix.n_cols() as f64)
        .collect();
    pearson(&means, &pca.component_scores(0)).ok_or(Error::Undefined("a series has zero variance"))
}

/// In-sample accuracy of a ridge-regularized logistic regression separating
/// `positive` rows from the rest, fit by Newton's method on standardized
/// features.
pub fn linear_separability(features: &[Vec<f64>], positive: &[bool]) -> Result<f64> {
    let n = features.len();
    if n == 0 || positive.len() != n {
        return Err(Error::Invalid(
            "features and labels must be non-empty and aligned".into(),
        ));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Invalid("ragged feature rows".into()));
    }
    let flat: Vec<f64> = features.iter().flatten().copied().collect();
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| flat[i * d + j]).sum::<f64>() / n as f64)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = (0..n)
                .map(|i| (flat[i * d + j] - mean[j]).powi(2))
                .sum::<f64>()
                / n as f64;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let p = d + 1;
    let x = DMatrix::from_fn(n, p, |i, j| {
        if j == d {
            1.0
        } else {
            (flat[i * d + j] - mean[j]) / scale[j]
        }
    });
    let y = DVector::from_fn(n, |i, _| if positive[i] { 1.0 } else { 0.0 });
    let ridge = 1e-3;
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = &x * &beta;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let wts = mu.map(|m| (m * (1.0 - m)).max(1e-10));
        let mut grad = x.transpose() * (&mu - &y);
        grad += &beta * ridge;
        let mut hess = x.transpose() * DMatrix::from_diagonal(&wts) * &x;
        for j in 0..p {
            hess[(j, j)] += ridge;
        }
        let Some(chol) = hess.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        beta -= &step;
        if step.norm() < 1e-10 {
            break;
        }
    }
    let eta = &x * &beta;
    let correct = (0..n).filter(|&i| (eta[i] > 0.0) == positive[i]).count();
    Ok(correct as f64 / n as f64)
}
