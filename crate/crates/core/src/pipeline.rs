//! The L-layer stack: per layer, sample receptive fields, normalize and
//! whiten, learn the dictionary through a map/reduce job, then group the
//! layer's features into feature maps for the next layer. The labeled subset
//! is finally encoded through every layer, pooled and fed to the SVM.
//!
//! Layer i (0-based) learns its dictionary from subset ID_i seen through
//! layers 0..i, and groups its features on ID_{i+1}. The classifier always
//! trains on ID_5. Layers hand their pre-pool grids to the next layer; only
//! the final grid is pooled.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, LinearModel, SvmConfig};
use crate::dictionary::{self, Dictionary, KMeansConfig, MergeStrategy, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::encoder::{self, EncoderConfig, PooledFeatures, UnitEncoder, DEFAULT_ZETA};
use crate::error::{DdrlError, Result};
use crate::executor::{self, AuditLog, Executor, ExecutorConfig, MapReduceJob, TaskContext, DEFAULT_MAP_TASKS};
use crate::grid::Grid;
use crate::grouping::{self, FeatureColumns, GroupAssignment};
use crate::ingest::{DatasetPartition, LabeledImage, NUM_SUBSETS};
use crate::par;
use crate::preprocess::{self, NormalizationParams, PatchMatrix, WhiteningTransform, DEFAULT_EPSILON, DEFAULT_SIGMA};
use crate::rng::{self, derive_indexed, derive_seed, StageRng};

pub const MAX_DEPTH: usize = 5;
/// Index of the labeled subset the classifier trains on.
pub const CLASSIFIER_SUBSET: usize = NUM_SUBSETS - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    /// Centroid count K for this layer.
    pub k: usize,
    pub rf_size: usize,
    pub stride: usize,
    pub zeta: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub whitening: bool,
    /// Feature-map size handed to the next layer; ignored on the last layer.
    pub group_t: Option<usize>,
    pub patches_per_image: usize,
    pub max_patches: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub kmeans_restarts: usize,
    pub merge: MergeStrategy,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig {
            k: 1600,
            rf_size: 6,
            stride: 1,
            zeta: DEFAULT_ZETA,
            epsilon: DEFAULT_EPSILON,
            sigma: DEFAULT_SIGMA,
            whitening: true,
            group_t: None,
            patches_per_image: 400,
            max_patches: 400_000,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            kmeans_restarts: 1,
            merge: MergeStrategy::Recluster,
        }
    }
}

impl LayerConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            rf_size: self.rf_size,
            stride: self.stride,
            zeta: self.zeta,
        }
    }

    fn validate(&self, i: usize) -> Result<()> {
        let bad = |what: &str| Err(DdrlError::config(format!("layer {i}: {what}")));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if self.rf_size == 0 || self.stride == 0 {
            return bad("rf_size and stride must be >= 1");
        }
        if !(self.zeta >= 0.0) || !(self.epsilon >= 0.0) || !(self.sigma >= 0.0) {
            return bad("zeta, epsilon and sigma must be >= 0");
        }
        if self.patches_per_image == 0 || self.max_patches == 0 {
            return bad("patches_per_image and max_patches must be >= 1");
        }
        if self.max_iters == 0 || self.kmeans_restarts == 0 || !(self.tol >= 0.0) {
            return bad("max_iters and kmeans_restarts must be >= 1, tol >= 0");
        }
        Ok(())
    }
}

/// The full-scale configuration: five layers of 1600..3200 centroids, 6x6
/// fields, stride 1, each layer split into `groups` feature maps.
pub fn full_scale_layers(groups: usize) -> Vec<LayerConfig> {
    [1600, 2000, 2400, 2800, 3200]
        .iter()
        .enumerate()
        .map(|(i, &k)| LayerConfig {
            k,
            group_t: (i < 4).then_some(k / groups.max(1)),
            ..Default::default()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layers: Vec<LayerConfig>,
    pub executor: ExecutorConfig,
    /// Number of shards the first-layer dictionary job is split into.
    pub map_tasks: usize,
    /// Response vectors sampled per layer for feature grouping.
    pub grouping_samples: usize,
    /// SVM hyperparameters; the shuffle seed is derived from `seed`.
    pub svm: SvmConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: vec![LayerConfig::default()],
            executor: ExecutorConfig::default(),
            map_tasks: DEFAULT_MAP_TASKS,
            grouping_samples: 100_000,
            svm: SvmConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Stable hash of the configuration, hex encoded. The executor section
    /// (workers, retries, fault plan) is excluded because it cannot change
    /// the trained model.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.executor = ExecutorConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        format!("{:016x}", rng::derive_seed(0, &json))
    }
}

/// One dictionary together with the input channels it reads and the
/// whitening fitted on those channels' receptive fields.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingUnit {
    pub channels: Vec<usize>,
    pub whitening: Option<WhiteningTransform>,
    pub dict: Dictionary,
    encoder: UnitEncoder,
}

impl EncodingUnit {
    pub fn new(
        channels: Vec<usize>,
        whitening: Option<WhiteningTransform>,
        dict: Dictionary,
        cfg: &LayerConfig,
    ) -> Result<Self> {
        let expected = cfg.rf_size * cfg.rf_size * channels.len();
        if dict.dim() != expected {
            return Err(DdrlError::shape(format!(
                "dictionary dimension {} != rf^2 * channels = {expected}",
                dict.dim()
            )));
        }
        let encoder = UnitEncoder::new(&dict, whitening.as_ref(), cfg.sigma, cfg.zeta)?;
        Ok(EncodingUnit {
            channels,
            whitening,
            dict,
            encoder,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerModel {
    pub cfg: LayerConfig,
    pub input_channels: usize,
    pub units: Vec<EncodingUnit>,
    /// Feature maps handed to the next layer; absent on the last layer.
    pub groups: Option<GroupAssignment>,
}

impl LayerModel {
    pub fn output_channels(&self) -> usize {
        self.units.iter().map(|u| u.dict.k()).sum()
    }

    fn uses_all_channels(&self, unit: &EncodingUnit) -> bool {
        unit.channels.len() == self.input_channels && unit.channels.iter().enumerate().all(|(i, &c)| i == c)
    }

    /// Pre-pool feature grid of one input.
    pub fn encode(&self, input: &Grid) -> Result<Grid> {
        if input.channels() != self.input_channels {
            return Err(DdrlError::shape(format!(
                "layer expects {} input channels, got {}",
                self.input_channels,
                input.channels()
            )));
        }
        let ecfg = self.cfg.encoder();
        let shape = ecfg.grid_shape(input.height(), input.width())?;
        let k_total = self.output_channels();
        let mut out = Grid::zeros(shape.rows, shape.cols, k_total);
        let mut offset = 0;
        for unit in &self.units {
            let channels = (!self.uses_all_channels(unit)).then_some(unit.channels.as_slice());
            let (patches, _) = encoder::extract_grid_channels(input, &ecfg, channels)?;
            let resp = unit.encoder.encode_raw(patches.into_vec())?;
            let k = unit.dict.k();
            if self.units.len() == 1 {
                return Grid::from_vec(shape.rows, shape.cols, k, resp.as_slice().to_vec());
            }
            let data = out.data_mut();
            for (pos, col) in resp.column_iter().enumerate() {
                let base = pos * k_total + offset;
                for (dst, v) in data[base..base + k].iter_mut().zip(col.iter()) {
                    *dst = *v;
                }
            }
            offset += k;
        }
        Ok(out)
    }
}

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackModel {
    pub layers: Vec<LayerModel>,
    pub classifier: LinearModel,
    pub provenance: Provenance,
}

impl StackModel {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Final pre-pool grid of one input.
    pub fn encode(&self, img: &Grid) -> Result<Grid> {
        encode_through(&self.layers, img)
    }

    /// Pooled 4K descriptor of one input.
    pub fn features(&self, img: &Grid) -> Result<PooledFeatures> {
        encoder::pool_quadrants(&self.encode(img)?)
    }
}

fn encode_through(layers: &[LayerModel], img: &Grid) -> Result<Grid> {
    let mut cur = None::<Grid>;
    for layer in layers {
        let next = layer.encode(cur.as_ref().unwrap_or(img))?;
        cur = Some(next);
    }
    Ok(cur.unwrap_or_else(|| img.clone()))
}

/// Timing and audit information from a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub layer_seconds: Vec<f64>,
    pub classifier_seconds: f64,
    pub audit: AuditLog,
    pub training_accuracy: f64,
}

/// Per-layer facts derived without touching pixel data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub input: (usize, usize, usize),
    pub grid: (usize, usize),
    pub units: usize,
    pub unit_channels: usize,
    pub atoms_per_unit: usize,
    pub output_channels: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackPlan {
    pub layers: Vec<LayerPlan>,
    pub feature_dim: usize,
}

/// Shape and data-sufficiency check for a configuration, run before any heavy
/// compute. `subset_sizes` are the sizes of ID_0..ID_5, `input` the image
/// shape, `classifier_labels` the distinct labels in ID_5.
pub fn plan_stack(
    cfg: &TrainConfig,
    subset_sizes: &[usize],
    input: (usize, usize, usize),
    classifier_labels: usize,
) -> Result<StackPlan> {
    let depth = cfg.layers.len();
    if depth == 0 || depth > MAX_DEPTH {
        return Err(DdrlError::config(format!(
            "stack depth {depth} outside supported range 1..={MAX_DEPTH}"
        )));
    }
    cfg.executor.validate()?;
    if cfg.map_tasks == 0 {
        return Err(DdrlError::config("map_tasks must be >= 1"));
    }
    if subset_sizes.len() != NUM_SUBSETS {
        return Err(DdrlError::config(format!("expected {NUM_SUBSETS} subsets")));
    }
    let mut plans = Vec::with_capacity(depth);
    let (mut h, mut w, mut c) = input;
    let mut units = 1;
    let mut unit_channels = c;
    for (i, l) in cfg.layers.iter().enumerate() {
        l.validate(i)?;
        let grid = l
            .encoder()
            .grid_shape(h, w)
            .map_err(|e| DdrlError::config(format!("layer {i}: {e}")))?;
        let source = subset_sizes[i];
        if source == 0 {
            return Err(DdrlError::insufficient(format!("layer {i}: subset ID_{i} is empty")));
        }
        let samples = source.saturating_mul(l.patches_per_image).min(l.max_patches);
        let atoms_per_unit;
        let output_channels;
        if i == 0 {
            atoms_per_unit = l.k;
            let smallest = executor::shard_ranges(samples, cfg.map_tasks)
                .iter()
                .map(|(a, b)| b - a)
                .min()
                .unwrap_or(0);
            if smallest < l.k {
                return Err(DdrlError::insufficient(format!(
                    "layer {i}: {samples} samples over {} map tasks leaves a shard of {smallest} < k = {}",
                    cfg.map_tasks, l.k
                )));
            }
            output_channels = match l.merge {
                MergeStrategy::Recluster => l.k,
                MergeStrategy::Concatenate => l.k * cfg.map_tasks,
            };
        } else {
            if l.k % units != 0 {
                return Err(DdrlError::config(format!(
                    "layer {i}: k = {} is not divisible by the {units} incoming feature maps",
                    l.k
                )));
            }
            atoms_per_unit = l.k / units;
            if samples < atoms_per_unit {
                return Err(DdrlError::insufficient(format!(
                    "layer {i}: {samples} samples < {atoms_per_unit} atoms per feature map"
                )));
            }
            output_channels = l.k;
        }
        if l.whitening && samples < 2 {
            return Err(DdrlError::insufficient(format!("layer {i}: whitening needs >= 2 samples")));
        }
        plans.push(LayerPlan {
            input: (h, w, c),
            grid: (grid.rows, grid.cols),
            units,
            unit_channels,
            atoms_per_unit,
            output_channels,
            samples,
        });
        h = grid.rows;
        w = grid.cols;
        c = output_channels;
        if i + 1 < depth {
            let t = l.group_t.ok_or_else(|| {
                DdrlError::config(format!("layer {i}: group_t is required on every layer but the last"))
            })?;
            if t == 0 || t > output_channels || output_channels % t != 0 {
                return Err(DdrlError::config(format!(
                    "layer {i}: group_t = {t} must divide the layer's {output_channels} features"
                )));
            }
            if subset_sizes[i + 1] == 0 {
                return Err(DdrlError::insufficient(format!(
                    "layer {i}: subset ID_{} for grouping is empty",
                    i + 1
                )));
            }
            if cfg.grouping_samples == 0 {
                return Err(DdrlError::config("grouping_samples must be >= 1"));
            }
            units = output_channels / t;
            unit_channels = t;
        }
    }
    if h < 2 || w < 2 {
        return Err(DdrlError::config(format!(
            "final grid {h}x{w} is too small for quadrant pooling"
        )));
    }
    if subset_sizes[CLASSIFIER_SUBSET] < 2 || classifier_labels < 2 {
        return Err(DdrlError::insufficient(
            "classifier subset ID_5 needs at least 2 images of 2 distinct labels",
        ));
    }
    Ok(StackPlan {
        feature_dim: 4 * c,
        layers: plans,
    })
}

/// [`plan_stack`] against an actual partition.
pub fn dry_run(partition: &DatasetPartition, cfg: &TrainConfig) -> Result<StackPlan> {
    let first = partition
        .subsets
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| DdrlError::insufficient("partition holds no images"))?;
    let shape = (first.pixels.height(), first.pixels.width(), first.pixels.channels());
    if let Some(img) = partition
        .subsets
        .iter()
        .flatten()
        .find(|img| (img.pixels.height(), img.pixels.width(), img.pixels.channels()) != shape)
    {
        return Err(DdrlError::shape(format!(
            "mixed image shapes: {:?} and {}x{}x{}",
            shape,
            img.pixels.height(),
            img.pixels.width(),
            img.pixels.channels()
        )));
    }
    let mut labels: Vec<usize> = partition.subset(CLASSIFIER_SUBSET).iter().map(|i| i.label).collect();
    labels.sort_unstable();
    labels.dedup();
    plan_stack(cfg, &partition.sizes(), shape, labels.len())
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

/// Number of encoding shards for image-parallel jobs. Results never depend on it.
fn image_shards(n: usize, workers: usize) -> usize {
    n.clamp(1, 4 * workers.max(1))
}

/// Encode each image of `images` through `layers`, hand the representation
/// and a per-image rng to `pick`, and concatenate the per-slot outputs in
/// image order. `count(i)` is how many samples image i contributes.
fn sample_images<F>(
    exec: &Executor,
    images: &[LabeledImage],
    layers: &[LayerModel],
    counts: &[usize],
    slots: usize,
    seed: u64,
    pick: F,
) -> Result<(Vec<Vec<f64>>, AuditLog)>
where
    F: Fn(&Grid, usize, &mut StageRng, &mut [Vec<f64>]) -> Result<()> + Sync,
{
    let used: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
    let shards = executor::partition_shards(&used, image_shards(used.len(), exec.config().workers));
    let map = |shard: &Vec<usize>, _ctx: &TaskContext| -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); slots];
        for &i in shard {
            let rep = encode_through(layers, &images[i].pixels)?;
            let mut rng = rng::rng_from(derive_indexed(seed, i as u64));
            pick(&rep, counts[i], &mut rng, &mut out)?;
        }
        Ok(out)
    };
    exec.run(MapReduceJob::new(shards, seed, map, |parts: Vec<Vec<Vec<f64>>>| {
        let mut out = vec![Vec::new(); slots];
        for part in parts {
            for (dst, src) in out.iter_mut().zip(part) {
                dst.extend(src);
            }
        }
        Ok(out)
    }))
}

/// Samples per image: `per_image` each until `total` is reached.
fn per_image_counts(n_images: usize, per_image: usize, total: usize) -> Vec<usize> {
    let mut left = total;
    (0..n_images)
        .map(|_| {
            let c = per_image.min(left);
            left -= c;
            c
        })
        .collect()
}

fn random_positions(rng: &mut StageRng, rows: usize, cols: usize, count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| (rng.random_range(0..rows), rng.random_range(0..cols)))
        .collect()
}

/// Normalize in place, then fit and apply whitening when enabled.
fn preprocess_samples(
    mut patches: PatchMatrix,
    l: &LayerConfig,
) -> Result<(PatchMatrix, Option<WhiteningTransform>)> {
    preprocess::normalize_in_place(&mut patches, NormalizationParams { sigma: l.sigma })?;
    if l.whitening {
        let w = preprocess::fit_whitening(&patches, l.epsilon)?;
        let white = preprocess::apply_whitening(&patches, &w)?;
        Ok((white, Some(w)))
    } else {
        Ok((patches, None))
    }
}

/// Train the full stack and the classifier on a partition.
pub fn train_stack(partition: &DatasetPartition, cfg: &TrainConfig) -> Result<(StackModel, TrainReport)> {
    let plan = dry_run(partition, cfg)?;
    let exec = Executor::new(cfg.executor.clone())?;
    let mut report = TrainReport::default();
    let mut layers: Vec<LayerModel> = Vec::with_capacity(cfg.layers.len());

    for i in 0..cfg.layers.len() {
        let lp = &plan.layers[i];
        let layer_seed = derive_seed(cfg.seed, &format!("layer-{i}"));
        let ((layer, audit), secs) = timed(|| train_layer(&exec, partition, &layers, cfg, i, lp, layer_seed))?;
        report.audit.extend(audit);
        report.layer_seconds.push(secs);
        layers.push(layer);
    }

    let t = Instant::now();
    let labeled = partition.subset(CLASSIFIER_SUBSET);
    let (features, audit) = pooled_features(&exec, labeled, &layers)?;
    report.audit.extend(audit);
    let labels: Vec<usize> = labeled.iter().map(|img| img.label).collect();
    let svm = SvmConfig {
        seed: derive_seed(cfg.seed, "svm"),
        ..cfg.svm
    };
    let classifier = classifier::train_svm(&features, &labels, &svm)?;
    report.training_accuracy = classifier::evaluate(&classifier::predict(&classifier, &features)?, &labels)?.accuracy;
    report.classifier_seconds = t.elapsed().as_secs_f64();

    Ok((
        StackModel {
            layers,
            classifier,
            provenance: Provenance {
                config_hash: cfg.hash(),
                seed: cfg.seed,
            },
        },
        report,
    ))
}

/// The first-layer dictionary job: shard the preprocessed samples into
/// `map_tasks` contiguous pieces, train k centroids per shard, then merge on
/// the reduce side (re-cluster to k, or concatenate).
pub fn dictionary_job(
    exec: &Executor,
    samples: &PatchMatrix,
    l: &LayerConfig,
    map_tasks: usize,
    seed: u64,
) -> Result<(Dictionary, AuditLog)> {
    let dim = samples.dim();
    let shards: Vec<PatchMatrix> = executor::shard_ranges(samples.rows(), map_tasks)
        .into_iter()
        .map(|(a, b)| PatchMatrix::from_flat(samples.data()[a * dim..b * dim].to_vec(), dim))
        .collect::<Result<_>>()?;
    let kcfg = |seed: u64| KMeansConfig {
        k: l.k,
        max_iters: l.max_iters,
        tol: l.tol,
        seed,
        restarts: l.kmeans_restarts,
    };
    let merge_cfg = kcfg(derive_seed(seed, "merge"));
    let strategy = l.merge;
    exec.run(MapReduceJob::new(
        shards,
        derive_seed(seed, "dictionary"),
        |shard: &PatchMatrix, ctx: &TaskContext| dictionary::train(shard, &kcfg(ctx.seed)),
        |parts: Vec<Dictionary>| match strategy {
            MergeStrategy::Recluster => dictionary::merge(&parts, l.k, &merge_cfg),
            MergeStrategy::Concatenate => dictionary::concatenate(&parts),
        },
    ))
}

fn train_layer(
    exec: &Executor,
    partition: &DatasetPartition,
    below: &[LayerModel],
    cfg: &TrainConfig,
    i: usize,
    lp: &LayerPlan,
    seed: u64,
) -> Result<(LayerModel, AuditLog)> {
    let l = &cfg.layers[i];
    let mut audit = AuditLog::default();
    let unit_channels: Vec<Vec<usize>> = match below.last() {
        None => vec![(0..lp.input.2).collect()],
        Some(prev) => prev
            .groups
            .as_ref()
            .ok_or_else(|| DdrlError::config(format!("layer {} has no feature maps to hand on", i - 1)))?
            .groups
            .clone(),
    };

    // receptive fields from ID_i, one sample matrix per unit
    let source = partition.subset(i);
    let counts = per_image_counts(source.len(), l.patches_per_image, lp.samples);
    let ecfg = l.encoder();
    let (rows, cols) = lp.grid;
    let full_input = unit_channels.len() == 1;
    let (raw, log) = sample_images(
        exec,
        source,
        below,
        &counts,
        unit_channels.len(),
        derive_seed(seed, "sample"),
        |rep, count, rng, out| {
            let pos = random_positions(rng, rows, cols, count);
            for (slot, ch) in out.iter_mut().zip(&unit_channels) {
                let channels = (!full_input).then_some(ch.as_slice());
                encoder::extract_positions(rep, &ecfg, channels, &pos, slot);
            }
            Ok(())
        },
    )?;
    audit.extend(log);

    let kcfg = |k: usize, seed: u64| KMeansConfig {
        k,
        max_iters: l.max_iters,
        tol: l.tol,
        seed,
        restarts: l.kmeans_restarts,
    };
    let units: Vec<EncodingUnit> = if i == 0 {
        let samples = PatchMatrix::new(raw.into_iter().next().unwrap_or_default(), l.rf_size, lp.input.2)?;
        let (white, whitening) = preprocess_samples(samples, l)?;
        let (dict, log) = dictionary_job(exec, &white, l, cfg.map_tasks, seed)?;
        audit.extend(log);
        vec![EncodingUnit::new(unit_channels[0].clone(), whitening, dict, l)?]
    } else {
        // one map task per incoming feature map; reduce keeps them in group order
        let depth = unit_channels[0].len();
        let parts: Vec<PatchMatrix> = raw
            .into_iter()
            .map(|data| PatchMatrix::new(data, l.rf_size, depth))
            .collect::<Result<_>>()?;
        let atoms = lp.atoms_per_unit;
        let (fitted, log) = exec.run(MapReduceJob::new(
            parts,
            derive_seed(seed, "dictionary"),
            |samples: &PatchMatrix, ctx: &TaskContext| {
                let (white, whitening) = preprocess_samples(samples.clone(), l)?;
                let dict = dictionary::train(&white, &kcfg(atoms, ctx.seed))?;
                Ok((whitening, dict))
            },
            Ok,
        ))?;
        audit.extend(log);
        fitted
            .into_iter()
            .zip(unit_channels)
            .map(|((w, d), ch)| EncodingUnit::new(ch, w, d, l))
            .collect::<Result<_>>()?
    };

    let mut layer = LayerModel {
        cfg: l.clone(),
        input_channels: lp.input.2,
        units,
        groups: None,
    };

    if i + 1 < cfg.layers.len() {
        let t = l.group_t.expect("checked by plan_stack");
        let k = layer.output_channels();
        let stack: Vec<LayerModel> = below.iter().cloned().chain(std::iter::once(layer.clone())).collect();
        let target = partition.subset(i + 1);
        let per_image = cfg.grouping_samples.div_ceil(target.len());
        let counts = per_image_counts(target.len(), per_image, cfg.grouping_samples);
        let (resp, log) = sample_images(
            exec,
            target,
            &stack,
            &counts,
            1,
            derive_seed(seed, "grouping"),
            |rep, count, rng, out| {
                for (y, x) in random_positions(rng, rep.height(), rep.width(), count) {
                    out[0].extend_from_slice(rep.pixel(y, x));
                }
                Ok(())
            },
        )?;
        audit.extend(log);
        let cols = FeatureColumns::standardize(&resp[0], k)?;
        layer.groups = Some(grouping::build_groups(&cols, t)?);
    }
    Ok((layer, audit))
}

/// Pooled descriptors of every image, in input order.
fn pooled_features(exec: &Executor, images: &[LabeledImage], layers: &[LayerModel]) -> Result<(Vec<Vec<f64>>, AuditLog)> {
    if images.is_empty() {
        return Ok((Vec::new(), AuditLog::default()));
    }
    let idx: Vec<usize> = (0..images.len()).collect();
    let shards = executor::partition_shards(&idx, image_shards(images.len(), exec.config().workers));
    exec.run(MapReduceJob::new(
        shards,
        0,
        |shard: &Vec<usize>, _: &TaskContext| {
            shard
                .iter()
                .map(|&i| Ok(encoder::pool_quadrants(&encode_through(layers, &images[i].pixels)?)?.values))
                .collect::<Result<Vec<_>>>()
        },
        |parts: Vec<Vec<Vec<f64>>>| Ok(parts.concat()),
    ))
}

/// Pooled descriptors of images under a trained model.
pub fn extract_features(model: &StackModel, images: &[LabeledImage]) -> Result<Vec<PooledFeatures>> {
    par::map_slice(images, |img| model.features(&img.pixels))
        .into_iter()
        .collect()
}

/// Predicted labels for each image.
pub fn infer(model: &StackModel, images: &[LabeledImage]) -> Result<Vec<usize>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let features: Vec<Vec<f64>> = extract_features(model, images)?.into_iter().map(|f| f.values).collect();
    classifier::predict(&model.classifier, &features)
}
