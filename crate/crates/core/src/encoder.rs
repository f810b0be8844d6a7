//! Dense receptive-field extraction, soft-threshold encoding and quadrant
//! average pooling.

use std::io::Write;

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{DdrlError, Result};
use crate::grid::{FeatureTensor, Grid};
use crate::pipeline::LayerModel;
use crate::preprocess::{normalize_row, PatchMatrix, WhiteningTransform};

pub const DEFAULT_ZETA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub rf_size: usize,
    pub stride: usize,
    pub zeta: f64,
}

impl EncoderConfig {
    pub fn new(rf_size: usize, stride: usize) -> Self {
        EncoderConfig {
            rf_size,
            stride,
            zeta: DEFAULT_ZETA,
        }
    }

    /// Grid of receptive-field positions over an `h x w` input.
    pub fn grid_shape(&self, h: usize, w: usize) -> Result<GridShape> {
        if self.rf_size == 0 || self.stride == 0 {
            return Err(DdrlError::config(format!(
                "receptive field {} and stride {} must both be >= 1",
                self.rf_size, self.stride
            )));
        }
        if self.rf_size > h || self.rf_size > w {
            return Err(DdrlError::config(format!(
                "receptive field {} does not fit a {h}x{w} input",
                self.rf_size
            )));
        }
        Ok(GridShape {
            rows: (h - self.rf_size) / self.stride + 1,
            cols: (w - self.rf_size) / self.stride + 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Copy the `rf x rf x |channels|` window at grid position into `out`,
/// in (dy, dx, channel) order.
#[inline]
fn copy_window(input: &Grid, y0: usize, x0: usize, rf: usize, channels: Option<&[usize]>, out: &mut [f64]) {
    let mut o = 0;
    for dy in 0..rf {
        for dx in 0..rf {
            let px = input.pixel(y0 + dy, x0 + dx);
            match channels {
                None => {
                    out[o..o + px.len()].copy_from_slice(px);
                    o += px.len();
                }
                Some(ch) => {
                    for &c in ch {
                        out[o] = px[c];
                        o += 1;
                    }
                }
            }
        }
    }
}

/// One row per grid position (row-major grid order), each row the flattened window.
pub fn extract_grid(input: &Grid, cfg: &EncoderConfig) -> Result<(PatchMatrix, GridShape)> {
    extract_grid_channels(input, cfg, None)
}

/// As [`extract_grid`], restricted to a subset of input channels.
pub fn extract_grid_channels(
    input: &Grid,
    cfg: &EncoderConfig,
    channels: Option<&[usize]>,
) -> Result<(PatchMatrix, GridShape)> {
    let shape = cfg.grid_shape(input.height(), input.width())?;
    let depth = match channels {
        Some(ch) => {
            if let Some(&bad) = ch.iter().find(|&&c| c >= input.channels()) {
                return Err(DdrlError::shape(format!(
                    "channel {bad} out of range for a {}-channel input",
                    input.channels()
                )));
            }
            ch.len()
        }
        None => input.channels(),
    };
    let rf = cfg.rf_size;
    let dim = rf * rf * depth;
    let mut data = vec![0.0; shape.len() * dim];
    for gy in 0..shape.rows {
        for gx in 0..shape.cols {
            let r = gy * shape.cols + gx;
            copy_window(
                input,
                gy * cfg.stride,
                gx * cfg.stride,
                rf,
                channels,
                &mut data[r * dim..(r + 1) * dim],
            );
        }
    }
    Ok((PatchMatrix::new(data, rf, depth)?, shape))
}

/// Extract the windows at selected grid positions only.
pub(crate) fn extract_positions(
    input: &Grid,
    cfg: &EncoderConfig,
    channels: Option<&[usize]>,
    positions: &[(usize, usize)],
    out: &mut Vec<f64>,
) {
    let depth = channels.map_or(input.channels(), <[usize]>::len);
    let dim = cfg.rf_size * cfg.rf_size * depth;
    for &(gy, gx) in positions {
        let start = out.len();
        out.resize(start + dim, 0.0);
        copy_window(input, gy * cfg.stride, gx * cfg.stride, cfg.rf_size, channels, &mut out[start..]);
    }
}

/// Soft-threshold feature map `max(0, D^T x - zeta)` for every row, laid out
/// as a grid of k-vectors.
pub fn encode(patches: &PatchMatrix, shape: GridShape, dict: &Dictionary, zeta: f64) -> Result<FeatureTensor> {
    if patches.dim() != dict.dim() {
        return Err(DdrlError::shape(format!(
            "patch dimension {} does not match dictionary dimension {}",
            patches.dim(),
            dict.dim()
        )));
    }
    if patches.rows() != shape.len() {
        return Err(DdrlError::shape(format!(
            "{} patches cannot fill a {}x{} grid",
            patches.rows(),
            shape.rows,
            shape.cols
        )));
    }
    let mut out = dict.as_matrix().transpose() * patches.as_columns();
    out.apply(|v| *v = (*v - zeta).max(0.0));
    Grid::from_vec(shape.rows, shape.cols, dict.k(), out.as_slice().to_vec())
}

/// Pooled classifier descriptor: 4K values, quadrants TL, TR, BL, BR.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub k: usize,
    pub values: Vec<f64>,
}

impl PooledFeatures {
    pub fn quadrant(&self, q: usize) -> &[f64] {
        &self.values[q * self.k..(q + 1) * self.k]
    }
}

/// Average each of the four quadrants; the split is at floor(G/2) on both axes.
pub fn pool_quadrants(t: &FeatureTensor) -> Result<PooledFeatures> {
    let (h, w, k) = (t.height(), t.width(), t.channels());
    if h < 2 || w < 2 {
        return Err(DdrlError::config(format!(
            "quadrant pooling needs at least a 2x2 grid, got {h}x{w}"
        )));
    }
    let (my, mx) = (h / 2, w / 2);
    let bands = [(0, my, 0, mx), (0, my, mx, w), (my, h, 0, mx), (my, h, mx, w)];
    let mut values = vec![0.0; 4 * k];
    for (q, &(y0, y1, x0, x1)) in bands.iter().enumerate() {
        let acc = &mut values[q * k..(q + 1) * k];
        for y in y0..y1 {
            for x in x0..x1 {
                for (a, v) in acc.iter_mut().zip(t.pixel(y, x)) {
                    *a += v;
                }
            }
        }
        let count = ((y1 - y0) * (x1 - x0)) as f64;
        for a in acc.iter_mut() {
            *a /= count;
        }
    }
    Ok(PooledFeatures { k, values })
}

/// Write pooled features as CSV rows: label, then 4K floats.
pub fn write_features_csv<W: Write>(mut out: W, rows: &[(usize, PooledFeatures)]) -> Result<()> {
    for (label, f) in rows {
        write!(out, "{label}")?;
        for v in &f.values {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Normalization, whitening and the dictionary folded into one affine map:
/// responses = max(0, P x_norm - b) with P = D^T W, b = P mean + zeta.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEncoder {
    projection: DMatrix<f64>,
    offset: DVector<f64>,
    sigma: f64,
}

impl UnitEncoder {
    pub fn new(dict: &Dictionary, whitening: Option<&WhiteningTransform>, sigma: f64, zeta: f64) -> Result<Self> {
        let dt = dict.as_matrix().transpose();
        let (projection, offset) = match whitening {
            Some(w) => {
                if w.dim() != dict.dim() {
                    return Err(DdrlError::shape(format!(
                        "whitening dimension {} does not match dictionary dimension {}",
                        w.dim(),
                        dict.dim()
                    )));
                }
                let p = dt * w.matrix();
                let mean = DVector::from_column_slice(&w.mean);
                let b = &p * mean;
                (p, b)
            }
            None => (dt.clone_owned(), DVector::zeros(dict.k())),
        };
        Ok(UnitEncoder {
            offset: offset.add_scalar(zeta),
            projection,
            sigma,
        })
    }

    pub fn k(&self) -> usize {
        self.projection.nrows()
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    /// Encode raw (unnormalized) windows, one per column of the returned k x n matrix.
    pub fn encode_raw(&self, mut windows: Vec<f64>) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        for (r, row) in windows.chunks_exact_mut(dim).enumerate() {
            if !normalize_row(row, self.sigma) {
                return Err(DdrlError::DivisionByZero { row: r });
            }
        }
        let n = windows.len() / dim;
        let x = DMatrixView::from_slice(&windows, dim, n);
        let mut out = &self.projection * x;
        for mut col in out.column_iter_mut() {
            for (v, b) in col.iter_mut().zip(self.offset.iter()) {
                *v = (*v - b).max(0.0);
            }
        }
        Ok(out)
    }
}

/// Encode an image or feature-map stack through one fitted layer
/// (extract windows, normalize, whiten, soft-threshold) into its pre-pool grid.
pub fn encode_image(input: &Grid, layer: &LayerModel) -> Result<FeatureTensor> {
    layer.encode(input)
}
