//! Per-patch contrast normalization and PCA whitening.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{DdrlError, Result};

/// Default variance floor: 10 on the 0-255 pixel scale, expressed on the
/// [0,1] scale images are decoded to.
pub const DEFAULT_SIGMA: f64 = 10.0 / (255.0 * 255.0);
pub const DEFAULT_EPSILON: f64 = 0.01;

/// n patch vectors of dimension N = p*p*d, stored row after row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    side: usize,
    depth: usize,
}

impl PatchMatrix {
    pub fn new(data: Vec<f64>, side: usize, depth: usize) -> Result<Self> {
        let dim = side * side * depth;
        if dim == 0 {
            return Err(DdrlError::shape("patch dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(DdrlError::shape(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(PatchMatrix {
            rows: data.len() / dim,
            data,
            dim,
            side,
            depth,
        })
    }

    /// Rows of arbitrary dimension with no spatial interpretation
    /// (side = 1, depth = dim).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(DdrlError::shape("rows have unequal dimension"));
        }
        PatchMatrix::new(rows.concat(), 1, dim)
    }

    pub(crate) fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        PatchMatrix::new(data, 1, dim).map(|mut m| {
            m.side = 1;
            m.depth = dim;
            m
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// View as an N x n column-major matrix: one patch per column.
    pub fn as_columns(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.dim, self.rows)
    }

    fn with_data(&self, data: Vec<f64>) -> PatchMatrix {
        PatchMatrix {
            data,
            rows: self.rows,
            dim: self.dim,
            side: self.side,
            depth: self.depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    pub sigma: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        NormalizationParams {
            sigma: DEFAULT_SIGMA,
        }
    }
}

/// Normalize one row in place: (x - mean) / sqrt(var + sigma), population variance.
/// Returns false when the denominator is zero.
#[inline]
pub fn normalize_row(row: &mut [f64], sigma: f64) -> bool {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + sigma).sqrt();
    if denom == 0.0 {
        return false;
    }
    let inv = 1.0 / denom;
    for v in row.iter_mut() {
        *v = (*v - mean) * inv;
    }
    true
}

pub fn normalize_in_place(patches: &mut PatchMatrix, params: NormalizationParams) -> Result<()> {
    if !(params.sigma >= 0.0) {
        return Err(DdrlError::config(format!("sigma must be >= 0, got {}", params.sigma)));
    }
    for i in 0..patches.rows() {
        if !normalize_row(patches.row_mut(i), params.sigma) {
            return Err(DdrlError::DivisionByZero { row: i });
        }
    }
    Ok(())
}

/// Brightness and contrast normalization of every patch.
pub fn normalize(patches: &PatchMatrix, params: NormalizationParams) -> Result<PatchMatrix> {
    let mut out = patches.clone();
    normalize_in_place(&mut out, params)?;
    Ok(out)
}

/// Fitted PCA whitening: x -> diag(1/sqrt(lambda + epsilon)) U^T (x - mean).
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// Eigenvectors as columns, ordered by descending eigenvalue.
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub epsilon: f64,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-component scale 1/sqrt(lambda_i + epsilon).
    pub fn scales(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| {
                let d = (l + self.epsilon).sqrt();
                if d > 0.0 {
                    1.0 / d
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// The full linear map W = diag(scales) U^T as an N x N matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut w = self.eigenvectors.transpose();
        for (i, s) in self.scales().into_iter().enumerate() {
            w.row_mut(i).scale_mut(s);
        }
        w
    }
}

/// Fit mean, eigenvectors and eigenvalues of the sample covariance (1/(n-1)).
pub fn fit_whitening(patches: &PatchMatrix, epsilon: f64) -> Result<WhiteningTransform> {
    let n = patches.rows();
    if n < 2 {
        return Err(DdrlError::insufficient(format!(
            "whitening needs at least 2 patches, got {n}"
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(DdrlError::config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let dim = patches.dim();
    let mut mean = vec![0.0; dim];
    for row in patches.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = patches.data().to_vec();
    for row in centered.chunks_exact_mut(dim) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let xc = DMatrixView::from_slice(&centered, dim, n);
    let mut cov = &xc * xc.transpose();
    cov /= (n - 1) as f64;
    // enforce exact symmetry before the symmetric solver
    for i in 0..dim {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(cov);
    Ok(WhiteningTransform {
        mean,
        eigenvectors,
        eigenvalues,
        epsilon,
    })
}

/// Eigenpairs sorted by descending eigenvalue (ties keep solver order),
/// negatives clamped to 0, each eigenvector signed so that its first
/// non-negligible component is positive.
pub(crate) fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let dim = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vectors = DMatrix::zeros(dim, dim);
    let mut values = Vec::with_capacity(dim);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src].max(0.0));
        let col = eig.eigenvectors.column(src);
        let sign = col
            .iter()
            .find(|v| v.abs() > 1e-12)
            .map(|v| v.signum())
            .unwrap_or(1.0);
        vectors.set_column(dst, &(col * sign));
    }
    (values, vectors)
}

pub fn apply_whitening(patches: &PatchMatrix, w: &WhiteningTransform) -> Result<PatchMatrix> {
    if patches.dim() != w.dim() {
        return Err(DdrlError::shape(format!(
            "patch dimension {} does not match whitening dimension {}",
            patches.dim(),
            w.dim()
        )));
    }
    let dim = patches.dim();
    let mut centered = patches.data().to_vec();
    for row in centered.chunks_exact_mut(dim) {
        for (v, m) in row.iter_mut().zip(&w.mean) {
            *v -= m;
        }
    }
    let xc = DMatrixView::from_slice(&centered, dim, patches.rows());
    let out = w.matrix() * xc;
    Ok(patches.with_data(out.as_slice().to_vec()))
}

/// Whitening applied to a single vector.
pub fn whiten_vector(x: &[f64], w: &WhiteningTransform) -> Result<Vec<f64>> {
    if x.len() != w.dim() {
        return Err(DdrlError::shape(format!(
            "vector dimension {} does not match whitening dimension {}",
            x.len(),
            w.dim()
        )));
    }
    let centered = DVector::from_iterator(x.len(), x.iter().zip(&w.mean).map(|(a, m)| a - m));
    Ok((w.matrix() * centered).as_slice().to_vec())
}
