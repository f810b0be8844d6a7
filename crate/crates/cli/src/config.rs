//! Experiment configuration: a strict JSON document, defaults filled in,
//! and the sweep grid expanded into individual runs.

use std::fmt;
use std::path::{Path, PathBuf};

use ddrl_core::classifier::SvmConfig;
use ddrl_core::executor::ExecutorConfig;
use ddrl_core::ingest::{CifarFormat, DEFAULT_FRACTIONS, NUM_SUBSETS};
use ddrl_core::pipeline::{LayerConfig, TrainConfig, MAX_DEPTH};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// A config problem located by JSON pointer ("" is the document root).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn at(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "config error at {at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// A CIFAR binary file, or a directory of them.
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CifarFormat,
    /// Held-out evaluation file; without it `test_fraction` of `path` is held out.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Use only the first `limit` training images.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

fn default_format() -> CifarFormat {
    CifarFormat::Cifar10
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            seed: 0,
        }
    }
}

/// `"on"` / `"off"` in configs and CSVs; plain booleans are accepted too.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Switch(pub bool);

impl fmt::Display for Switch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0 { "on" } else { "off" })
    }
}

impl Serialize for Switch {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Switch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bool(bool),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Bool(b) => Ok(Switch(b)),
            Raw::Word(w) => match w.as_str() {
                "on" => Ok(Switch(true)),
                "off" => Ok(Switch(false)),
                other => Err(serde::de::Error::custom(format!("expected \"on\" or \"off\", got {other:?}"))),
            },
        }
    }
}

/// Values to sweep; an empty axis is not swept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub omega: Vec<usize>,
    pub stride: Vec<usize>,
    pub whitening: Vec<Switch>,
    pub depth: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    /// Base stack. A depth sweep uses the first `depth` entries; omega,
    /// stride and whitening sweeps apply to every layer of a run.
    pub layers: Vec<LayerConfig>,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub executor: ExecutorConfig,
    #[serde(default = "default_map_tasks")]
    pub map_tasks: usize,
    #[serde(default = "default_grouping_samples")]
    pub grouping_samples: usize,
    #[serde(default)]
    pub classifier: SvmConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Run sweep entries concurrently. Off by default so timings stay clean.
    #[serde(default)]
    pub parallel_runs: bool,
}

fn default_map_tasks() -> usize {
    TrainConfig::default().map_tasks
}

fn default_grouping_samples() -> usize {
    TrainConfig::default().grouping_samples
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

/// Parse and validate a config document. Relative dataset paths are taken as is.
pub fn parse_config_str(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        ConfigError::at(pointer, e.into_inner().to_string())
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Read, parse and validate a config file. Relative dataset paths resolve
/// against the config file's directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentSpec, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at("", format!("{}: {e}", path.display())))?;
    let mut spec = parse_config_str(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    spec.dataset.path = base.join(&spec.dataset.path);
    if let Some(t) = &spec.dataset.test_path {
        spec.dataset.test_path = Some(base.join(t));
    }
    if spec.output_dir.is_relative() {
        spec.output_dir = base.join(&spec.output_dir);
    }
    spec.check_paths()?;
    Ok(spec)
}

impl ExperimentSpec {
    /// Constraint checks that need no filesystem access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dataset;
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(ConfigError::at("/dataset/test_fraction", "must be in [0, 1)"));
        }
        if d.test_path.is_none() && d.test_fraction == 0.0 {
            return Err(ConfigError::at(
                "/dataset/test_fraction",
                "must be positive when no test_path is given",
            ));
        }
        let fr = &self.partition.fractions;
        if fr.len() != NUM_SUBSETS {
            return Err(ConfigError::at(
                "/partition/fractions",
                format!("expected {NUM_SUBSETS} fractions, got {}", fr.len()),
            ));
        }
        if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ConfigError::at("/partition/fractions", "fractions must be >= 0 and sum to 1"));
        }
        if self.layers.is_empty() {
            return Err(ConfigError::at("/layers", "at least one layer is required"));
        }
        if self.layers.len() > MAX_DEPTH {
            return Err(ConfigError::at("/layers", format!("at most {MAX_DEPTH} layers are supported")));
        }
        if self.map_tasks == 0 {
            return Err(ConfigError::at("/map_tasks", "must be >= 1"));
        }
        if self.executor.workers == 0 {
            return Err(ConfigError::at("/executor/workers", "must be >= 1"));
        }
        let s = &self.sweep;
        for (i, &w) in s.omega.iter().enumerate() {
            if w == 0 {
                return Err(ConfigError::at(format!("/sweep/omega/{i}"), "must be >= 1"));
            }
        }
        for (i, &v) in s.stride.iter().enumerate() {
            if v == 0 {
                return Err(ConfigError::at(format!("/sweep/stride/{i}"), "must be >= 1"));
            }
        }
        for (i, &depth) in s.depth.iter().enumerate() {
            if depth == 0 || depth > MAX_DEPTH {
                return Err(ConfigError::at(
                    format!("/sweep/depth/{i}"),
                    format!("depth must be in 1..={MAX_DEPTH}"),
                ));
            }
            if depth > self.layers.len() {
                return Err(ConfigError::at(
                    format!("/sweep/depth/{i}"),
                    format!("depth {depth} needs {depth} entries in /layers, found {}", self.layers.len()),
                ));
            }
        }
        Ok(())
    }

    /// Referenced input files must exist.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        if !self.dataset.path.exists() {
            return Err(ConfigError::at(
                "/dataset/path",
                format!("{} does not exist", self.dataset.path.display()),
            ));
        }
        if let Some(t) = &self.dataset.test_path {
            if !t.exists() {
                return Err(ConfigError::at("/dataset/test_path", format!("{} does not exist", t.display())));
            }
        }
        Ok(())
    }

    /// The fully defaulted document.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Base training configuration with no sweep applied.
    pub fn base_train_config(&self) -> TrainConfig {
        TrainConfig {
            layers: self.layers.clone(),
            executor: self.executor.clone(),
            map_tasks: self.map_tasks,
            grouping_samples: self.grouping_samples,
            svm: self.classifier,
            seed: self.seed,
        }
    }

    /// Cartesian product of the sweep axes, depth outermost, whitening innermost.
    pub fn enumerate_runs(&self) -> Vec<RunSpec> {
        let depths = axis(&self.sweep.depth, self.layers.len());
        let omegas: Vec<Option<usize>> = optional_axis(&self.sweep.omega);
        let strides: Vec<Option<usize>> = optional_axis(&self.sweep.stride);
        let whitenings: Vec<Option<Switch>> = optional_axis(&self.sweep.whitening);
        let mut runs = Vec::new();
        for &depth in &depths {
            for &omega in &omegas {
                for &stride in &strides {
                    for &white in &whitenings {
                        let mut train = self.base_train_config();
                        train.layers.truncate(depth);
                        for l in &mut train.layers {
                            if let Some(w) = omega {
                                l.rf_size = w;
                            }
                            if let Some(s) = stride {
                                l.stride = s;
                            }
                            if let Some(Switch(on)) = white {
                                l.whitening = on;
                            }
                        }
                        let run_id = format!("run-{:03}", runs.len());
                        let hash = self.run_hash(&train);
                        runs.push(RunSpec {
                            run_id,
                            config_hash: hash,
                            train,
                        });
                    }
                }
            }
        }
        runs
    }

    /// Hash of everything that determines a run's result: data source,
    /// partition and training config (executor settings excluded).
    fn run_hash(&self, train: &TrainConfig) -> String {
        let mut t = train.clone();
        t.executor = ExecutorConfig::default();
        let doc = serde_json::json!({
            "dataset": self.dataset,
            "partition": self.partition,
            "train": t,
        });
        let digest = Sha256::digest(serde_json::to_vec(&doc).expect("serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn axis(values: &[usize], default: usize) -> Vec<usize> {
    if values.is_empty() {
        vec![default]
    } else {
        values.to_vec()
    }
}

fn optional_axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// One enumerated run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: String,
    pub config_hash: String,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn depth(&self) -> usize {
        self.train.layers.len()
    }
    pub fn omega(&self) -> usize {
        self.train.layers[0].rf_size
    }
    pub fn stride(&self) -> usize {
        self.train.layers[0].stride
    }
    pub fn whitening(&self) -> Switch {
        Switch(self.train.layers[0].whitening)
    }
    /// Centroid counts per layer, e.g. `200/200`.
    pub fn centroids(&self) -> String {
        self.train.layers.iter().map(|l| l.k.to_string()).collect::<Vec<_>>().join("/")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset": {"path": "data.bin"}, "layers": [{"k": 50}]}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = parse_config_str(MINIMAL).unwrap();
        assert_eq!(spec.dataset.format, CifarFormat::Cifar10);
        assert_eq!(spec.partition.fractions, DEFAULT_FRACTIONS.to_vec());
        assert_eq!(spec.layers[0].k, 50);
        assert_eq!(spec.layers[0].rf_size, 6);
        assert_eq!(spec.map_tasks, 4);
        assert!(!spec.parallel_runs);
        assert_eq!(spec.enumerate_runs().len(), 1);
    }

    #[test]
    fn unknown_key_is_named_with_its_location() {
        let err = parse_config_str(r#"{"dataset": {"path": "d"}, "layers": [{"k": 5, "striide": 2}]}"#).unwrap_err();
        assert!(err.message.contains("striide"), "{err}");
        assert_eq!(err.pointer, "/layers/0/striide");
    }

    #[test]
    fn type_mismatch_has_pointer() {
        let err = parse_config_str(r#"{"dataset": {"path": "d"}, "layers": [{"k": "many"}]}"#).unwrap_err();
        assert_eq!(err.pointer, "/layers/0/k");
    }

    #[test]
    fn constraint_violations() {
        let err = parse_config_str(r#"{"dataset": {"path": "d"}, "layers": []}"#).unwrap_err();
        assert_eq!(err.pointer, "/layers");
        let err = parse_config_str(
            r#"{"dataset": {"path": "d"}, "layers": [{}], "partition": {"fractions": [0.5, 0.5]}}"#,
        )
        .unwrap_err();
        assert_eq!(err.pointer, "/partition/fractions");
        let err = parse_config_str(r#"{"dataset": {"path": "d"}, "layers": [{}], "sweep": {"depth": [2]}}"#).unwrap_err();
        assert_eq!(err.pointer, "/sweep/depth/0");
    }

    #[test]
    fn sweep_enumerates_cartesian_product() {
        let spec = parse_config_str(
            r#"{"dataset": {"path": "d"}, "layers": [{}],
                "sweep": {"omega": [6, 8], "stride": [1, 2], "whitening": ["on", "off"]}}"#,
        )
        .unwrap();
        let runs = spec.enumerate_runs();
        assert_eq!(runs.len(), 8);
        let combos: std::collections::BTreeSet<_> =
            runs.iter().map(|r| (r.omega(), r.stride(), r.whitening().0)).collect();
        assert_eq!(combos.len(), 8);
        let hashes: std::collections::BTreeSet<_> = runs.iter().map(|r| r.config_hash.clone()).collect();
        assert_eq!(hashes.len(), 8);
        assert_eq!(runs[0].run_id, "run-000");
        assert_eq!(runs[7].run_id, "run-007");
    }

    #[test]
    fn whitening_accepts_booleans() {
        let spec =
            parse_config_str(r#"{"dataset": {"path": "d"}, "layers": [{}], "sweep": {"whitening": [true, false]}}"#)
                .unwrap();
        assert_eq!(spec.sweep.whitening, vec![Switch(true), Switch(false)]);
        assert!(parse_config_str(r#"{"dataset": {"path": "d"}, "layers": [{}], "sweep": {"whitening": ["maybe"]}}"#).is_err());
    }

    #[test]
    fn resolved_dump_round_trips() {
        let spec = parse_config_str(
            r#"{"dataset": {"path": "d", "limit": 100}, "layers": [{"k": 8, "group_t": 2}, {"k": 4}],
                "sweep": {"depth": [1, 2], "whitening": ["off"]}, "seed": 9}"#,
        )
        .unwrap();
        let again = parse_config_str(&spec.resolved_json()).unwrap();
        assert_eq!(again, spec);
        assert_eq!(again.resolved_json(), spec.resolved_json());
    }

    #[test]
    fn executor_settings_do_not_change_the_hash() {
        let a = parse_config_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.executor.workers = 7;
        assert_eq!(a.enumerate_runs()[0].config_hash, b.enumerate_runs()[0].config_hash);
        b.seed = 1;
        assert_ne!(a.enumerate_runs()[0].config_hash, b.enumerate_runs()[0].config_hash);
    }
}
