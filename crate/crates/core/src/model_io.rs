//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "DDRL" | u32 version | section* | u32 crc32 of everything before it
//! section = u32 tag | u64 payload length | payload
//! ```
//!
//! Sections appear in order: one header, one per layer, one classifier.
//! Floats are stored as raw bits so a save/load round trip is exact and two
//! identical models produce identical files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::classifier::{LinearModel, Standardizer, SvmConfig};
use crate::dictionary::Dictionary;
use crate::error::{DdrlError, Result};
use crate::grouping::GroupAssignment;
use crate::pipeline::{EncodingUnit, LayerConfig, LayerModel, Provenance, StackModel};
use crate::preprocess::WhiteningTransform;

pub const MAGIC: &[u8; 4] = b"DDRL";
pub const FORMAT_VERSION: u32 = 1;

const TAG_HEADER: u32 = 1;
const TAG_LAYER: u32 = 2;
const TAG_CLASSIFIER: u32 = 3;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn lens(&mut self, v: &[usize]) {
        self.len(v.len());
        for &x in v {
            self.len(x);
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.buf.extend_from_slice(v);
    }
    fn section(&mut self, tag: u32, body: Writer) {
        self.u32(tag);
        self.bytes(&body.buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> DdrlError {
    DdrlError::ModelFile(msg.into())
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt(format!("value too large at byte {}", self.pos)))
    }
    /// An element count; every element takes at least one byte, which bounds allocations.
    fn count(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > (self.buf.len() - self.pos) as u64 {
            return Err(corrupt(format!("implausible length {v} at byte {}", self.pos)));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn lens(&mut self) -> Result<Vec<usize>> {
        let n = self.count()?;
        (0..n).map(|_| self.usize()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.count()?;
        self.take(n)
    }
    fn section(&mut self, tag: u32) -> Result<Reader<'a>> {
        let found = self.u32()?;
        if found != tag {
            return Err(corrupt(format!("expected section {tag}, found {found}")));
        }
        Ok(Reader::new(self.bytes()?))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_whitening(w: &mut Writer, t: &WhiteningTransform) {
    w.len(t.dim());
    w.f64s(&t.mean);
    w.f64s(&t.eigenvalues);
    // U row-major
    let n = t.dim();
    for i in 0..n {
        for j in 0..n {
            w.f64(t.eigenvectors[(i, j)]);
        }
    }
    w.f64(t.epsilon);
}

fn read_whitening(r: &mut Reader) -> Result<WhiteningTransform> {
    let n = r.usize()?;
    let mean = r.f64s()?;
    let eigenvalues = r.f64s()?;
    if mean.len() != n || eigenvalues.len() != n {
        return Err(corrupt("whitening section lengths disagree"));
    }
    let mut u = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        u.push(r.f64()?);
    }
    let epsilon = r.f64()?;
    Ok(WhiteningTransform {
        mean,
        eigenvectors: DMatrix::from_row_slice(n, n, &u),
        eigenvalues,
        epsilon,
    })
}

fn write_dictionary(w: &mut Writer, d: &Dictionary) {
    w.len(d.dim());
    w.len(d.k());
    for &x in d.raw() {
        w.f64(x);
    }
    for &x in d.weights() {
        w.u64(x);
    }
}

fn read_dictionary(r: &mut Reader) -> Result<Dictionary> {
    let dim = r.usize()?;
    let k = r.usize()?;
    let count = dim
        .checked_mul(k)
        .ok_or_else(|| corrupt("dictionary size overflows"))?;
    let centroids = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let weights = (0..k).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    Dictionary::new(dim, centroids, weights).map_err(|e| corrupt(format!("dictionary: {e}")))
}

fn write_layer(layer: &LayerModel) -> Writer {
    let mut w = Writer::default();
    let cfg = serde_json::to_vec(&layer.cfg).expect("layer config serializes");
    w.bytes(&cfg);
    w.len(layer.input_channels);
    w.len(layer.units.len());
    for unit in &layer.units {
        w.lens(&unit.channels);
        match &unit.whitening {
            Some(t) => {
                w.u32(1);
                write_whitening(&mut w, t);
            }
            None => w.u32(0),
        }
        write_dictionary(&mut w, &unit.dict);
    }
    match &layer.groups {
        Some(g) => {
            w.u32(1);
            w.len(g.group_size);
            w.len(g.groups.len());
            for group in &g.groups {
                w.lens(group);
            }
        }
        None => w.u32(0),
    }
    w
}

fn read_layer(r: &mut Reader) -> Result<LayerModel> {
    let cfg: LayerConfig =
        serde_json::from_slice(r.bytes()?).map_err(|e| corrupt(format!("layer config: {e}")))?;
    let input_channels = r.usize()?;
    let n_units = r.count()?;
    let mut units = Vec::with_capacity(n_units);
    for _ in 0..n_units {
        let channels = r.lens()?;
        let whitening = match r.u32()? {
            0 => None,
            1 => Some(read_whitening(r)?),
            f => return Err(corrupt(format!("bad whitening flag {f}"))),
        };
        let dict = read_dictionary(r)?;
        if channels.iter().any(|&c| c >= input_channels) {
            return Err(corrupt("unit reads a channel outside the layer input"));
        }
        units.push(EncodingUnit::new(channels, whitening, dict, &cfg).map_err(|e| corrupt(e.to_string()))?);
    }
    let groups = match r.u32()? {
        0 => None,
        1 => {
            let group_size = r.usize()?;
            let n = r.count()?;
            let groups = (0..n).map(|_| r.lens()).collect::<Result<Vec<_>>>()?;
            Some(GroupAssignment { groups, group_size })
        }
        f => return Err(corrupt(format!("bad groups flag {f}"))),
    };
    r.finish()?;
    Ok(LayerModel {
        cfg,
        input_channels,
        units,
        groups,
    })
}

fn write_classifier(m: &LinearModel) -> Writer {
    let mut w = Writer::default();
    w.len(m.classes);
    w.len(m.features);
    for &x in &m.weights {
        w.f64(x);
    }
    for &x in &m.biases {
        w.f64(x);
    }
    w.f64s(&m.standardizer.mean);
    w.f64s(&m.standardizer.std);
    w.f64(m.config.reg);
    w.len(m.config.epochs);
    w.f64(m.config.lr0);
    w.u64(m.config.seed);
    w
}

fn read_classifier(r: &mut Reader) -> Result<LinearModel> {
    let classes = r.usize()?;
    let features = r.usize()?;
    let count = classes
        .checked_mul(features)
        .ok_or_else(|| corrupt("classifier size overflows"))?;
    let weights = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let biases = (0..classes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mean = r.f64s()?;
    let std = r.f64s()?;
    if mean.len() != features || std.len() != features {
        return Err(corrupt("standardizer length does not match feature count"));
    }
    let config = SvmConfig {
        reg: r.f64()?,
        epochs: r.usize()?,
        lr0: r.f64()?,
        seed: r.u64()?,
    };
    r.finish()?;
    Ok(LinearModel {
        weights,
        biases,
        classes,
        features,
        standardizer: Standardizer { mean, std },
        config,
    })
}

/// Serialize a model to bytes.
pub fn to_bytes(model: &StackModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let mut header = Writer::default();
    header.bytes(model.provenance.config_hash.as_bytes());
    header.u64(model.provenance.seed);
    header.len(model.layers.len());
    w.section(TAG_HEADER, header);
    for layer in &model.layers {
        w.section(TAG_LAYER, write_layer(layer));
    }
    w.section(TAG_CLASSIFIER, write_classifier(&model.classifier));
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

/// Parse a model from bytes, checking magic, version and checksum.
pub fn from_bytes(bytes: &[u8]) -> Result<StackModel> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(corrupt("not a model file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(DdrlError::ModelVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DdrlError::Checksum { stored, computed });
    }

    let mut r = Reader::new(&body[8..]);
    let mut h = r.section(TAG_HEADER)?;
    let config_hash = String::from_utf8(h.bytes()?.to_vec()).map_err(|_| corrupt("config hash is not utf-8"))?;
    let seed = h.u64()?;
    let depth = h.usize()?;
    h.finish()?;
    let mut layers = Vec::new();
    for _ in 0..depth {
        layers.push(read_layer(&mut r.section(TAG_LAYER)?)?);
    }
    let classifier = read_classifier(&mut r.section(TAG_CLASSIFIER)?)?;
    r.finish()?;
    Ok(StackModel {
        layers,
        classifier,
        provenance: Provenance { config_hash, seed },
    })
}

pub fn save_model(model: &StackModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<StackModel> {
    from_bytes(&fs::read(path)?)
}
