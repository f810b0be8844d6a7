//! Dataset ingestion: CIFAR binary decoding, resizing to the working
//! resolution and the six-way role partition ID_0..ID_5.
//!
//! CIFAR-10 records are 3073 bytes (label, then 3072 pixel bytes); CIFAR-100
//! records are 3074 bytes (coarse label, fine label, pixels). Pixels are
//! channel-planar: 1024 red bytes, 1024 green, 1024 blue, each row-major.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DdrlError, Result};
use crate::grid::Grid;
use crate::rng;

/// Working resolution every image is brought to.
pub const WORKING_SIZE: usize = 32;
const PLANE: usize = WORKING_SIZE * WORKING_SIZE;
const PIXEL_BYTES: usize = 3 * PLANE;

/// Number of role subsets a training corpus is split into.
pub const NUM_SUBSETS: usize = 6;

/// Default subset fractions for ID_0..ID_5.
pub const DEFAULT_FRACTIONS: [f64; NUM_SUBSETS] = [0.3, 0.1, 0.1, 0.1, 0.1, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarFormat {
    Cifar10,
    Cifar100,
}

impl CifarFormat {
    pub fn record_size(self) -> usize {
        match self {
            CifarFormat::Cifar10 => PIXEL_BYTES + 1,
            CifarFormat::Cifar100 => PIXEL_BYTES + 2,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarFormat::Cifar10 => 10,
            CifarFormat::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        self.record_size() - PIXEL_BYTES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Grid,
    pub label: usize,
}

impl LabeledImage {
    pub fn new(pixels: Grid, label: usize) -> Self {
        LabeledImage { pixels, label }
    }
}

/// Load every record of a CIFAR binary file.
pub fn load_cifar(path: impl AsRef<Path>, format: CifarFormat) -> Result<Vec<LabeledImage>> {
    let bytes = fs::read(path)?;
    decode_cifar(&bytes, format)
}

/// Decode an in-memory CIFAR binary buffer.
pub fn decode_cifar(bytes: &[u8], format: CifarFormat) -> Result<Vec<LabeledImage>> {
    let rec = format.record_size();
    if bytes.len() % rec != 0 {
        let offset = (bytes.len() / rec * rec) as u64;
        return Err(DdrlError::Format {
            offset,
            message: format!(
                "truncated record: {} trailing bytes, expected records of {rec} bytes",
                bytes.len() % rec
            ),
        });
    }
    bytes
        .chunks_exact(rec)
        .enumerate()
        .map(|(i, chunk)| decode_record(chunk, format, (i * rec) as u64))
        .collect()
}

fn decode_record(chunk: &[u8], format: CifarFormat, offset: u64) -> Result<LabeledImage> {
    let label = match format {
        CifarFormat::Cifar10 => {
            let l = chunk[0] as usize;
            if l >= 10 {
                return Err(DdrlError::Format {
                    offset,
                    message: format!("label {l} outside 0..10"),
                });
            }
            l
        }
        CifarFormat::Cifar100 => {
            let coarse = chunk[0] as usize;
            if coarse >= 20 {
                return Err(DdrlError::Format {
                    offset,
                    message: format!("coarse label {coarse} outside 0..20"),
                });
            }
            let fine = chunk[1] as usize;
            if fine >= 100 {
                return Err(DdrlError::Format {
                    offset: offset + 1,
                    message: format!("fine label {fine} outside 0..100"),
                });
            }
            fine
        }
    };
    let px = &chunk[format.label_bytes()..];
    let pixels = Grid::from_fn(WORKING_SIZE, WORKING_SIZE, 3, |y, x, c| {
        px[c * PLANE + y * WORKING_SIZE + x] as f64 / 255.0
    });
    Ok(LabeledImage::new(pixels, label))
}

/// Encode images back into CIFAR records. Pixels are rounded to the nearest
/// byte; images must be 32x32x3. For cifar100 the coarse label is written as 0.
pub fn encode_cifar(images: &[LabeledImage], format: CifarFormat) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * format.record_size());
    for (i, img) in images.iter().enumerate() {
        let g = &img.pixels;
        if g.height() != WORKING_SIZE || g.width() != WORKING_SIZE || g.channels() != 3 {
            return Err(DdrlError::shape(format!(
                "image {i} is {}x{}x{}, cifar records need 32x32x3",
                g.height(),
                g.width(),
                g.channels()
            )));
        }
        if img.label >= format.num_classes() {
            return Err(DdrlError::InvalidLabel(format!(
                "image {i} label {} outside 0..{}",
                img.label,
                format.num_classes()
            )));
        }
        if format == CifarFormat::Cifar100 {
            out.push(0);
        }
        out.push(img.label as u8);
        for c in 0..3 {
            for y in 0..WORKING_SIZE {
                for x in 0..WORKING_SIZE {
                    let v = (g.get(y, x, c).clamp(0.0, 1.0) * 255.0).round();
                    out.push(v as u8);
                }
            }
        }
    }
    Ok(out)
}

/// Bilinearly resample a raster of any size to 32x32 (corner-aligned).
pub fn resize_to_working(img: &LabeledImage) -> Result<LabeledImage> {
    let src = &img.pixels;
    let (h, w, c) = (src.height(), src.width(), src.channels());
    if h == 0 || w == 0 || c == 0 {
        return Err(DdrlError::InvalidInput(format!(
            "cannot resize a {h}x{w}x{c} raster"
        )));
    }
    if h == WORKING_SIZE && w == WORKING_SIZE {
        return Ok(img.clone());
    }
    let scale = |n: usize| {
        if n == 1 {
            0.0
        } else {
            (n - 1) as f64 / (WORKING_SIZE - 1) as f64
        }
    };
    let (sy, sx) = (scale(h), scale(w));
    let pixels = Grid::from_fn(WORKING_SIZE, WORKING_SIZE, c, |y, x, ch| {
        let fy = y as f64 * sy;
        let fx = x as f64 * sx;
        let y0 = (fy.floor() as usize).min(h - 1);
        let x0 = (fx.floor() as usize).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let ty = fy - y0 as f64;
        let tx = fx - x0 as f64;
        let top = src.get(y0, x0, ch) * (1.0 - tx) + src.get(y0, x1, ch) * tx;
        let bot = src.get(y1, x0, ch) * (1.0 - tx) + src.get(y1, x1, ch) * tx;
        (top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0)
    });
    Ok(LabeledImage::new(pixels, img.label))
}

/// The corpus split into ID_0..ID_5. `indices[j]` records which input
/// positions landed in subset j.
#[derive(Debug, Clone)]
pub struct DatasetPartition {
    pub subsets: Vec<Vec<LabeledImage>>,
    pub indices: Vec<Vec<usize>>,
    pub seed: u64,
}

impl DatasetPartition {
    pub fn subset(&self, j: usize) -> &[LabeledImage] {
        &self.subsets[j]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.subsets.iter().map(Vec::len).collect()
    }
}

/// Boundaries of the contiguous split: round(n * cumulative fraction).
pub fn split_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.len() != NUM_SUBSETS {
        return Err(DdrlError::config(format!(
            "expected {NUM_SUBSETS} partition fractions, got {}",
            fractions.len()
        )));
    }
    if let Some(f) = fractions.iter().find(|f| !f.is_finite() || **f < 0.0) {
        return Err(DdrlError::config(format!(
            "partition fraction {f} is not a non-negative number"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DdrlError::config(format!(
            "partition fractions sum to {total}, expected 1"
        )));
    }
    let mut sizes = Vec::with_capacity(NUM_SUBSETS);
    let mut cum = 0.0;
    let mut prev = 0usize;
    for (j, f) in fractions.iter().enumerate() {
        cum += f;
        let bound = if j + 1 == NUM_SUBSETS {
            n
        } else {
            ((n as f64 * cum).round() as usize).clamp(prev, n)
        };
        sizes.push(bound - prev);
        prev = bound;
    }
    Ok(sizes)
}

/// Shuffle deterministically under `seed`, then split contiguously.
pub fn partition(images: Vec<LabeledImage>, fractions: &[f64], seed: u64) -> Result<DatasetPartition> {
    if images.is_empty() {
        return Err(DdrlError::InvalidInput("cannot partition an empty image list".into()));
    }
    let sizes = split_sizes(images.len(), fractions)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng::stage_rng(seed, "partition"));

    let mut slots: Vec<Option<LabeledImage>> = images.into_iter().map(Some).collect();
    let mut subsets = Vec::with_capacity(NUM_SUBSETS);
    let mut indices = Vec::with_capacity(NUM_SUBSETS);
    let mut cursor = 0;
    for size in sizes {
        let idx: Vec<usize> = order[cursor..cursor + size].to_vec();
        cursor += size;
        subsets.push(idx.iter().map(|&i| slots[i].take().expect("index used once")).collect());
        indices.push(idx);
    }
    Ok(DatasetPartition {
        subsets,
        indices,
        seed,
    })
}
