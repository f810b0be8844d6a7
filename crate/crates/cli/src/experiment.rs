//! Loading data for an experiment, running each enumerated config, and
//! writing the metrics, logs, models and figure tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ddrl_core::classifier;
use ddrl_core::ingest::{self, CifarFormat, DatasetPartition, LabeledImage};
use ddrl_core::pipeline::{self, StackModel, TrainReport};
use ddrl_core::rng::derive_indexed;
use ddrl_core::{model_io, rng};
use serde::Serialize;

use crate::config::{DatasetSpec, ExperimentSpec, RunSpec};

pub const METRICS_HEADER: &str = "run_id,depth,omega,stride,whitening,centroids,accuracy,train_seconds,config_hash";

/// Training images and held-out evaluation images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

/// CIFAR binaries under `path`: the file itself, or every `.bin` file in the
/// directory except the test batch, in name order.
pub fn cifar_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "bin"))
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name != "test_batch.bin" && name != "test.bin"
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .bin files in {}", path.display());
    }
    Ok(files)
}

pub fn load_images(path: &Path, format: CifarFormat, limit: Option<usize>) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::new();
    for f in cifar_files(path)? {
        if limit.is_some_and(|n| out.len() >= n) {
            break;
        }
        out.extend(ingest::load_cifar(&f, format).with_context(|| format!("loading {}", f.display()))?);
    }
    if let Some(n) = limit {
        out.truncate(n);
    }
    Ok(out)
}

pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let images = load_images(&spec.path, spec.format, spec.limit)?;
    let (train, mut test) = match &spec.test_path {
        Some(t) => (images, load_images(t, spec.format, None)?),
        None => hold_out(images, spec.test_fraction, seed),
    };
    if let Some(n) = spec.test_limit {
        test.truncate(n);
    }
    if test.is_empty() {
        bail!("no evaluation images");
    }
    Ok(Dataset { train, test })
}

/// Deterministic held-out split: images ordered by a per-index hash, the
/// first `fraction` of that order goes to test.
fn hold_out(images: Vec<LabeledImage>, fraction: f64, seed: u64) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let n = images.len();
    let n_test = ((n as f64 * fraction).round() as usize).clamp(1.min(n), n);
    let key = rng::derive_seed(seed, "holdout");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| derive_indexed(key, i as u64));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (img, t) in images.into_iter().zip(is_test) {
        if t {
            test.push(img);
        } else {
            train.push(img);
        }
    }
    (train, test)
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub training_accuracy: f64,
    pub train_seconds: f64,
    pub layer_seconds: Vec<f64>,
    pub classifier_seconds: f64,
    pub retried_attempts: usize,
    pub model_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: RunSpec,
    pub result: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub outcomes: Vec<RunOutcome>,
    pub out_dir: PathBuf,
}

impl ExperimentSummary {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }
}

fn train_one(run: &RunSpec, part: &DatasetPartition, test: &[LabeledImage], out: &Path) -> Result<RunMetrics> {
    pipeline::dry_run(part, &run.train)?;
    let t0 = Instant::now();
    let (model, report) = pipeline::train_stack(part, &run.train)?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let accuracy = test_accuracy(&model, test)?;
    let model_path = out.join("models").join(format!("{}.ddrl", run.run_id));
    model_io::save_model(&model, &model_path)?;
    write_audit(&report, &out.join("audit").join(format!("{}.jsonl", run.run_id)))?;
    Ok(RunMetrics {
        accuracy,
        training_accuracy: report.training_accuracy,
        train_seconds,
        layer_seconds: report.layer_seconds.clone(),
        classifier_seconds: report.classifier_seconds,
        retried_attempts: report.audit.records.iter().filter(|r| r.attempt > 0).count(),
        model_path,
    })
}

pub fn test_accuracy(model: &StackModel, test: &[LabeledImage]) -> Result<f64> {
    let pred = pipeline::infer(model, test)?;
    let truth: Vec<usize> = test.iter().map(|i| i.label).collect();
    Ok(classifier::evaluate(&pred, &truth)?.accuracy)
}

fn write_audit(report: &TrainReport, path: &Path) -> Result<()> {
    let f = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    report.audit.write_jsonl(f)?;
    Ok(())
}

/// Run every enumerated config. Individual run failures are recorded, not
/// returned; only setup and output errors come back as `Err`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    let out = spec.output_dir.clone();
    fs::create_dir_all(out.join("models"))?;
    fs::create_dir_all(out.join("audit"))?;
    fs::write(out.join("resolved_config.json"), spec.resolved_json())?;

    let data = load_dataset(&spec.dataset, spec.partition.seed)?;
    let part = ingest::partition(data.train, &spec.partition.fractions, spec.partition.seed)?;
    let runs = spec.enumerate_runs();

    let go = |run: &RunSpec| RunOutcome {
        run: run.clone(),
        result: train_one(run, &part, &data.test, &out).map_err(|e| format!("{e:#}")),
    };
    let outcomes: Vec<RunOutcome> = if spec.parallel_runs {
        let width = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut all = Vec::with_capacity(runs.len());
        for chunk in runs.chunks(width) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|r| s.spawn(|| go(r))).collect();
                all.extend(handles.into_iter().map(|h| h.join().expect("run thread panicked")));
            });
        }
        all
    } else {
        runs.iter()
            .map(|r| {
                let o = go(r);
                match &o.result {
                    Ok(m) => eprintln!("{} accuracy {:.4} ({:.1}s)", r.run_id, m.accuracy, m.train_seconds),
                    Err(e) => eprintln!("{} failed: {e}", r.run_id),
                }
                o
            })
            .collect()
    };

    let summary = ExperimentSummary { outcomes, out_dir: out };
    write_outputs(spec, &summary)?;
    Ok(summary)
}

fn write_outputs(spec: &ExperimentSpec, summary: &ExperimentSummary) -> Result<()> {
    let out = &summary.out_dir;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    let mut log = String::new();
    for o in &summary.outcomes {
        let r = &o.run;
        if let Ok(m) = &o.result {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.3},{}\n",
                r.run_id,
                r.depth(),
                r.omega(),
                r.stride(),
                r.whitening(),
                r.centroids(),
                m.accuracy,
                m.train_seconds,
                r.config_hash
            ));
        }
        let line = serde_json::json!({
            "run_id": r.run_id,
            "status": if o.result.is_ok() { "ok" } else { "failed" },
            "error": o.result.as_ref().err(),
            "config_hash": r.config_hash,
            "seed": r.train.seed,
            "dataset": spec.dataset,
            "partition": spec.partition,
            "config": r.train,
            "metrics": o.result.as_ref().ok(),
        });
        log.push_str(&serde_json::to_string(&line)?);
        log.push('\n');
    }
    fs::write(out.join("metrics.csv"), csv)?;
    fs::write(out.join("runs.jsonl"), log)?;
    write_figures(spec, summary)
}

/// One table per swept axis: x is the axis value, series names the other
/// swept values, y is accuracy.
fn write_figures(spec: &ExperimentSpec, summary: &ExperimentSummary) -> Result<()> {
    let s = &spec.sweep;
    let swept: Vec<&str> = [
        ("depth", s.depth.len()),
        ("omega", s.omega.len()),
        ("stride", s.stride.len()),
        ("whitening", s.whitening.len()),
    ]
    .into_iter()
    .filter(|(_, n)| *n > 1)
    .map(|(a, _)| a)
    .collect();
    for &axis in &swept {
        let mut rows: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        let mut text = format!("{axis},series,accuracy\n");
        for o in &summary.outcomes {
            let Ok(m) = &o.result else { continue };
            let series: Vec<String> = swept
                .iter()
                .filter(|&&a| a != axis)
                .map(|&a| format!("{a}={}", axis_value(&o.run, a)))
                .collect();
            let series = if series.is_empty() { "all".to_string() } else { series.join(";") };
            rows.entry((series.clone(), axis_value(&o.run, axis)))
                .or_default()
                .push(format!("{},{},{:.6}", axis_value(&o.run, axis), series, m.accuracy));
        }
        for lines in rows.into_values() {
            for l in lines {
                text.push_str(&l);
                text.push('\n');
            }
        }
        fs::write(summary.out_dir.join(format!("figure_{axis}.csv")), text)?;
    }
    Ok(())
}

fn axis_value(run: &RunSpec, axis: &str) -> String {
    match axis {
        "depth" => run.depth().to_string(),
        "omega" => run.omega().to_string(),
        "stride" => run.stride().to_string(),
        _ => run.whitening().to_string(),
    }
}

/// Subset sizes and label counts, for `ddrl ingest`.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub train_images: usize,
    pub test_images: usize,
    pub subset_sizes: Vec<usize>,
    pub subset_labels: Vec<BTreeMap<usize, usize>>,
}

pub fn ingest_report(spec: &ExperimentSpec) -> Result<IngestReport> {
    let data = load_dataset(&spec.dataset, spec.partition.seed)?;
    let train_images = data.train.len();
    let part = ingest::partition(data.train, &spec.partition.fractions, spec.partition.seed)?;
    let subset_labels = (0..ingest::NUM_SUBSETS)
        .map(|j| {
            let mut counts = BTreeMap::new();
            for img in part.subset(j) {
                *counts.entry(img.label).or_insert(0) += 1;
            }
            counts
        })
        .collect();
    Ok(IngestReport {
        train_images,
        test_images: data.test.len(),
        subset_sizes: part.sizes(),
        subset_labels,
    })
}

/// Predictions (and optionally pooled features) for a batch of images.
pub fn write_predictions(
    model: &StackModel,
    images: &[LabeledImage],
    predictions: &Path,
    features_csv: Option<&Path>,
) -> Result<f64> {
    let pred = pipeline::infer(model, images)?;
    let mut w = BufWriter::new(fs::File::create(predictions)?);
    writeln!(w, "index,label,predicted")?;
    for (i, (img, p)) in images.iter().zip(&pred).enumerate() {
        writeln!(w, "{i},{},{p}", img.label)?;
    }
    w.flush()?;
    if let Some(path) = features_csv {
        let feats = pipeline::extract_features(model, images)?;
        let mut w = BufWriter::new(fs::File::create(path)?);
        for f in feats {
            let row: Vec<String> = f.values.iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
    }
    let truth: Vec<usize> = images.iter().map(|i| i.label).collect();
    Ok(classifier::evaluate(&pred, &truth)?.accuracy)
}
