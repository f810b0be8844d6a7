//! Acceptance suite: one line per criterion, PASS / FAIL / BLOCKED.
//!
//! Criteria 5-8 need the CIFAR-10 binary batches. Point `DDRL_CIFAR10_DIR` at
//! the extracted `cifar-10-batches-bin` directory; without it those criteria
//! are reported BLOCKED. `DDRL_ACCEPTANCE_STRICT=1` turns BLOCKED into a
//! failing exit code. `DDRL_ACCEPTANCE_ONLY=3,9` runs a subset.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ddrl_core::classifier;
use ddrl_core::dictionary::{self, Dictionary, KMeansConfig};
use ddrl_core::encoder::{self, EncoderConfig, GridShape};
use ddrl_core::executor::{Executor, ExecutorConfig, FaultPlan};
use ddrl_core::grouping::{self, FeatureColumns};
use ddrl_core::ingest::{self, CifarFormat, LabeledImage, DEFAULT_FRACTIONS};
use ddrl_core::model_io;
use ddrl_core::pipeline::{self, LayerConfig, TrainConfig};
use ddrl_core::preprocess::{self, NormalizationParams, PatchMatrix};
use ddrl_core::Grid;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

enum Verdict {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Verdict::*;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

// 1 -------------------------------------------------------------------------

fn whitening_exactness() -> Verdict {
    let (n, d) = (5000, 36);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // correlated data: z * A with a random mixing matrix and uneven scales
    let mix = gaussian_matrix(&mut rng, d, d);
    let rows: Vec<Vec<f64>> = gaussian_matrix(&mut rng, n, d)
        .into_iter()
        .map(|z| {
            (0..d)
                .map(|j| (0..d).map(|i| z[i] * mix[i][j] * (1.0 + i as f64 / 4.0)).sum::<f64>() + 3.0)
                .collect()
        })
        .collect();
    let patches = PatchMatrix::from_rows(&rows).unwrap();
    let w = preprocess::fit_whitening(&patches, 0.0).unwrap();
    let white = preprocess::apply_whitening(&patches, &w).unwrap();

    // independent covariance of the output
    let mut mean = vec![0.0; d];
    for r in white.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in white.iter_rows() {
        for i in 0..d {
            let a = r[i] - mean[i];
            for j in 0..d {
                cov[i][j] += a * (r[j] - mean[j]);
            }
        }
    }
    let mut off = 0.0f64;
    let mut diag = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let c = cov[i][j] / (n - 1) as f64;
            if i == j {
                diag = diag.max((c - 1.0).abs());
            } else {
                off = off.max(c.abs());
            }
        }
    }
    check(
        off < 1e-6 && diag < 1e-6,
        format!("max |off-diagonal| {off:.2e}, max |diagonal - 1| {diag:.2e} (limit 1e-6)"),
    )
}

// 2 -------------------------------------------------------------------------

/// Best spherical k-means objective over every assignment of points to k labels.
fn brute_force_optimum(points: &[[f64; 2]], k: usize) -> f64 {
    let n = points.len();
    let unit: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            [p[0] / r, p[1] / r]
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        // for a fixed partition the best unit centroid is the normalized sum,
        // and the cost is |C| - |sum|
        let mut sums = vec![[0.0f64; 2]; k];
        let mut sizes = vec![0usize; k];
        for (u, &l) in unit.iter().zip(&labels) {
            sums[l][0] += u[0];
            sums[l][1] += u[1];
            sizes[l] += 1;
        }
        let cost: f64 = (0..k)
            .map(|c| sizes[c] as f64 - (sums[c][0] * sums[c][0] + sums[c][1] * sums[c][1]).sqrt())
            .sum();
        best = best.min(cost);
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

const KMEANS_RESTARTS: usize = 3;

fn kmeans_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 30;
    let mut optimal = 0;
    let mut single_optimal = 0;
    let mut below = 0;
    let mut worst_gap = 0.0f64;
    for inst in 0..instances {
        let n = rng.random_range(3..=8);
        let k = rng.random_range(1..=3usize.min(n));
        let points: Vec<[f64; 2]> = (0..n)
            .map(|_| loop {
                let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                if p[0] * p[0] + p[1] * p[1] > 1e-4 {
                    break p;
                }
            })
            .collect();
        let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        let patches = PatchMatrix::from_rows(&rows).unwrap();
        let opt = brute_force_optimum(&points, k);
        let solve = |restarts: usize| {
            let cfg = KMeansConfig {
                restarts,
                ..KMeansConfig::new(k, inst as u64)
            };
            dictionary::objective(&patches, &dictionary::train(&patches, &cfg).unwrap()).unwrap()
        };
        let got = solve(KMEANS_RESTARTS);
        if (solve(1) - opt).abs() <= 1e-9 {
            single_optimal += 1;
        }
        if got < opt - 1e-9 {
            below += 1;
        }
        if (got - opt).abs() <= 1e-9 {
            optimal += 1;
        } else {
            worst_gap = worst_gap.max(got - opt);
        }
    }
    let share = optimal as f64 / instances as f64;
    check(
        share >= 0.8 && below == 0,
        format!(
            "{optimal}/{instances} instances at the brute-force optimum with {KMEANS_RESTARTS} seedings ({:.0}%, need 80%; \
             single seeding {single_optimal}/{instances}), {below} below it, worst gap {worst_gap:.3e}",
            share * 100.0
        ),
    )
}

// 3 -------------------------------------------------------------------------

fn executor_determinism() -> Verdict {
    let images = common::toy_images(200, 16, 3);
    let ecfg = EncoderConfig::new(6, 1);
    let mut rows = Vec::with_capacity(2000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for img in &images {
        let (p, _) = encoder::extract_grid(&img.pixels, &ecfg).unwrap();
        for _ in 0..10 {
            rows.push(p.row(rng.random_range(0..p.rows())).to_vec());
        }
    }
    let patches = PatchMatrix::from_rows(&rows).unwrap();
    let normalized = preprocess::normalize(&patches, NormalizationParams::default()).unwrap();
    let w = preprocess::fit_whitening(&normalized, 0.01).unwrap();
    let white = preprocess::apply_whitening(&normalized, &w).unwrap();
    let layer = LayerConfig {
        k: 32,
        ..Default::default()
    };

    let run = |cfg: ExecutorConfig| -> Vec<u64> {
        let exec = Executor::new(cfg).unwrap();
        let (dict, _) = pipeline::dictionary_job(&exec, &white, &layer, 4, 33).unwrap();
        dict.raw().iter().map(|v| v.to_bits()).chain(dict.weights().iter().copied()).collect()
    };
    let base = run(ExecutorConfig::with_workers(1));
    let mut mismatches = Vec::new();
    for workers in [1, 2, 4, 8] {
        let plans = [
            FaultPlan::none(),
            FaultPlan::none().fail(1, 1),
            FaultPlan::none().fail(0, 1).fail(3, 1),
            FaultPlan::none().fail(0, 1).fail(2, 1).fail(3, 1),
        ];
        for plan in plans {
            let faults = plan.0.len();
            let out = run(ExecutorConfig {
                workers,
                max_retries: 3,
                fault_plan: plan,
            });
            if out != base {
                mismatches.push(format!("workers={workers} faults={faults}"));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "2000 patches, k=32, workers {{1,2,4,8}} x 0..3 injected faults: {}",
            if mismatches.is_empty() {
                "all dictionaries bitwise identical".to_string()
            } else {
                format!("differs for {}", mismatches.join(", "))
            }
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn column_pair() -> impl Strategy<Value = Vec<f64>> {
    (20usize..200, 0u8..4, 0u8..4, -1.0f64..1.0, any::<u64>()).prop_map(|(n, da, db, mixw, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |kind: u8, rng: &mut ChaCha8Rng| -> f64 {
            match kind {
                0 => Normal::new(0.0, 1.0).unwrap().sample(rng),
                1 => rng.random_range(-2.0..3.0),
                2 => Exp::new(1.5).unwrap().sample(rng),
                _ => {
                    let v: f64 = StandardNormal.sample(rng);
                    (v - 0.5).max(0.0)
                }
            }
        };
        let mut raw = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let a = draw(da, &mut rng);
            let b = mixw * a + draw(db, &mut rng);
            raw.push(a);
            raw.push(b);
        }
        raw
    })
}

fn similarity_properties() -> Verdict {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let checked = std::cell::Cell::new(0u32);
    let result = runner.run(&column_pair(), |raw| {
        let cols = FeatureColumns::standardize(&raw, 2).unwrap();
        prop_assume!(!cols.is_degenerate(0) && !cols.is_degenerate(1));
        let d00 = grouping::similarity(&cols, 0, 0).unwrap();
        let d11 = grouping::similarity(&cols, 1, 1).unwrap();
        let d01 = grouping::similarity(&cols, 0, 1).unwrap();
        let d10 = grouping::similarity(&cols, 1, 0).unwrap();
        prop_assert!((d00 - 1.0).abs() < 1e-9 && (d11 - 1.0).abs() < 1e-9, "self {d00} {d11}");
        prop_assert!((d01 - d10).abs() < 1e-12, "asymmetric {d01} {d10}");
        prop_assert!(d01.abs() <= 1.0 + 1e-9, "out of range {d01}");
        checked.set(checked.get() + 1);
        Ok(())
    });
    match result {
        Ok(()) => Pass(format!(
            "{} random column pairs: d(j,j)=1, symmetric, |d|<=1",
            checked.get()
        )),
        Err(e) => Fail(format!("{e}")),
    }
}

// 5-8 -----------------------------------------------------------------------

struct Cifar {
    train: Vec<LabeledImage>,
    test: Vec<LabeledImage>,
}

fn load_cifar() -> Result<Cifar, String> {
    let dir = std::env::var_os("DDRL_CIFAR10_DIR")
        .map(PathBuf::from)
        .ok_or("DDRL_CIFAR10_DIR is not set; CIFAR-10 binary batches are required")?;
    let read = |name: &str, n: usize| -> Result<Vec<LabeledImage>, String> {
        let path = dir.join(name);
        let mut imgs = ingest::load_cifar(&path, CifarFormat::Cifar10).map_err(|e| format!("{}: {e}", path.display()))?;
        if imgs.len() < n {
            return Err(format!("{} holds {} images, need {n}", path.display(), imgs.len()));
        }
        imgs.truncate(n);
        Ok(imgs)
    };
    Ok(Cifar {
        train: read("data_batch_1.bin", 5000)?,
        test: read("test_batch.bin", 1000)?,
    })
}

fn desk_layer(rf: usize, stride: usize, whitening: bool) -> LayerConfig {
    LayerConfig {
        k: 200,
        rf_size: rf,
        stride,
        whitening,
        max_patches: 100_000,
        ..Default::default()
    }
}

fn cifar_accuracy(data: &Cifar, layers: Vec<LayerConfig>, seed: u64) -> Result<f64, String> {
    let part = ingest::partition(data.train.clone(), &DEFAULT_FRACTIONS, seed).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        layers,
        seed,
        ..Default::default()
    };
    let (model, _) = pipeline::train_stack(&part, &cfg).map_err(|e| e.to_string())?;
    let pred = pipeline::infer(&model, &data.test).map_err(|e| e.to_string())?;
    let truth: Vec<usize> = data.test.iter().map(|i| i.label).collect();
    Ok(classifier::evaluate(&pred, &truth).map_err(|e| e.to_string())?.accuracy * 100.0)
}

/// Mean over seeds of accuracy(a) - accuracy(b), in percentage points.
fn trend(
    data: &Option<Result<Cifar, String>>,
    a: impl Fn() -> Vec<LayerConfig>,
    b: impl Fn() -> Vec<LayerConfig>,
    threshold: f64,
    label: &str,
) -> Verdict {
    let data = match data {
        Some(Ok(d)) => d,
        Some(Err(e)) => return Blocked(e.clone()),
        None => return Blocked("CIFAR-10 not loaded".into()),
    };
    let mut diffs = Vec::new();
    let mut pairs = Vec::new();
    for seed in 0..3 {
        let acc = cifar_accuracy(data, a(), seed).and_then(|x| Ok((x, cifar_accuracy(data, b(), seed)?)));
        match acc {
            Ok((x, y)) => {
                diffs.push(x - y);
                pairs.push(format!("{x:.2}/{y:.2}"));
            }
            Err(e) => return Fail(format!("seed {seed}: {e}")),
        }
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    check(
        mean >= threshold,
        format!("{label}: mean difference {mean:+.2}pp (need >= {threshold:+.1}pp), per seed {}", pairs.join(", ")),
    )
}

// 9 -------------------------------------------------------------------------

fn end_to_end_determinism() -> Verdict {
    let images = common::toy_images(500, 16, 9);
    let test = common::toy_images(150, 16, 90);
    let truth: Vec<usize> = test.iter().map(|i| i.label).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let mut accs = Vec::new();
    for (run, workers) in [(0, 1), (1, 4)] {
        let part = ingest::partition(images.clone(), &common::equal_fractions(), 9).unwrap();
        let mut cfg = common::tiny_two_layer(9);
        cfg.executor = ExecutorConfig::with_workers(workers);
        let (model, _) = pipeline::train_stack(&part, &cfg).unwrap();
        let path = dir.path().join(format!("run{run}.ddrl"));
        model_io::save_model(&model, &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
        let pred = pipeline::infer(&model_io::load_model(&path).unwrap(), &test).unwrap();
        accs.push(classifier::evaluate(&pred, &truth).unwrap().accuracy);
    }
    check(
        files[0] == files[1] && accs[0] == accs[1],
        format!(
            "two runs (1 and 4 workers): model files {} ({} bytes), accuracy {:.4} vs {:.4}",
            if files[0] == files[1] { "identical" } else { "differ" },
            files[0].len(),
            accs[0],
            accs[1]
        ),
    )
}

// 10 ------------------------------------------------------------------------

fn random_dictionary(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Dictionary {
    let mut c = Vec::with_capacity(dim * k);
    for _ in 0..k {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        c.extend(v.iter().map(|x| x / norm));
    }
    Dictionary::new(dim, c, vec![1; k]).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PatchMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    PatchMatrix::from_rows(&rows).unwrap()
}

fn encoder_properties() -> Verdict {
    let cases = 1000;
    let config = || Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut failures = Vec::new();

    let r = TestRunner::new(config()).run(
        &(1usize..6, 1usize..8, 1usize..20, 0.0f64..1.5, any::<u64>()),
        |(dim, k, n, zeta, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = random_dictionary(&mut rng, dim, k);
            let x = random_rows(&mut rng, n, dim);
            let out = encoder::encode(&x, GridShape { rows: n, cols: 1 }, &dict, zeta).unwrap();
            prop_assert!(out.data().iter().all(|&v| v >= 0.0));
            Ok(())
        },
    );
    if let Err(e) = r {
        failures.push(format!("non-negativity: {e}"));
    }

    let r = TestRunner::new(config()).run(
        &(1usize..40, 1usize..40, 1usize..6, 1usize..4)
            .prop_flat_map(|(h, w, s, c)| (Just(h), Just(w), 1..=h.min(w), Just(s), Just(c))),
        |(h, w, rf, stride, c)| {
            let img = Grid::from_fn(h, w, c, |y, x, ch| (y * 31 + x * 7 + ch) as f64);
            let (p, shape) = encoder::extract_grid(&img, &EncoderConfig::new(rf, stride)).unwrap();
            let (gh, gw) = ((h - rf) / stride + 1, (w - rf) / stride + 1);
            prop_assert_eq!((shape.rows, shape.cols), (gh, gw));
            prop_assert_eq!(p.rows(), gh * gw);
            prop_assert_eq!(p.dim(), rf * rf * c);
            Ok(())
        },
    );
    if let Err(e) = r {
        failures.push(format!("grid shape: {e}"));
    }

    let r = TestRunner::new(config()).run(&(2usize..15, 2usize..15, 1usize..5, any::<u64>()), |(h, w, k, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::from_fn(h, w, k, |_, _, _| rng.random_range(0.0..5.0));
        let pooled = encoder::pool_quadrants(&g).unwrap();
        let (my, mx) = (h / 2, w / 2);
        let sizes = [my * mx, my * (w - mx), (h - my) * mx, (h - my) * (w - mx)];
        for ch in 0..k {
            let total: f64 = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| g.get(y, x, ch)).sum();
            let weighted: f64 = (0..4).map(|q| sizes[q] as f64 * pooled.quadrant(q)[ch]).sum();
            prop_assert!((total - weighted).abs() <= 1e-9 * total.abs().max(1.0), "{total} vs {weighted}");
        }
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("pooling mean: {e}"));
    }

    let r = TestRunner::new(config()).run(
        &(1usize..6, 1usize..8, 1usize..10, 0.01f64..20.0, any::<u64>()),
        |(dim, k, n, a, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = random_dictionary(&mut rng, dim, k);
            let x = random_rows(&mut rng, n, dim);
            let scaled = PatchMatrix::from_rows(&x.iter_rows().map(|r| r.iter().map(|v| a * v).collect()).collect::<Vec<_>>()).unwrap();
            let shape = GridShape { rows: n, cols: 1 };
            let base = encoder::encode(&x, shape, &dict, 0.0).unwrap();
            let out = encoder::encode(&scaled, shape, &dict, 0.0).unwrap();
            for (b, o) in base.data().iter().zip(out.data()) {
                prop_assert!((a * b - o).abs() <= 1e-9 * (a * b).abs().max(1.0), "{} vs {o}", a * b);
            }
            Ok(())
        },
    );
    if let Err(e) = r {
        failures.push(format!("homogeneity: {e}"));
    }

    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("non-negativity, grid shape, pooled mean, homogeneity: {cases} cases each")
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: Box<dyn Fn(&Option<Result<Cifar, String>>) -> Verdict>,
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("DDRL_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var_os("DDRL_ACCEPTANCE_STRICT").is_some_and(|v| v != "0");
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));

    let mins = |m: u64| Duration::from_secs(60 * m);
    let criteria = vec![
        Criterion { id: 1, name: "whitening exactness", limit: Duration::from_secs(5), run: Box::new(|_| whitening_exactness()) },
        Criterion { id: 2, name: "k-means vs brute force", limit: Duration::from_secs(10), run: Box::new(|_| kmeans_oracle()) },
        Criterion { id: 3, name: "executor determinism", limit: Duration::from_secs(30), run: Box::new(|_| executor_determinism()) },
        Criterion { id: 4, name: "similarity properties", limit: mins(1), run: Box::new(|_| similarity_properties()) },
        Criterion {
            id: 5,
            name: "whitening trend",
            limit: mins(10),
            run: Box::new(|d| trend(d, || vec![desk_layer(6, 1, true)], || vec![desk_layer(6, 1, false)], 1.0, "whitened - raw")),
        },
        Criterion {
            id: 6,
            name: "stride trend",
            limit: mins(15),
            run: Box::new(|d| trend(d, || vec![desk_layer(6, 1, true)], || vec![desk_layer(6, 3, true)], -0.5, "S=1 - S=3")),
        },
        Criterion {
            id: 7,
            name: "receptive field trend",
            limit: mins(15),
            run: Box::new(|d| trend(d, || vec![desk_layer(6, 1, true)], || vec![desk_layer(12, 1, true)], -0.5, "w=6 - w=12")),
        },
        Criterion {
            id: 8,
            name: "depth sanity",
            limit: mins(30),
            run: Box::new(|d| {
                let two = || {
                    let mut first = desk_layer(6, 1, true);
                    first.group_t = Some(50);
                    // layer 2 windows are 6x6x50 at w=6; a 3x3 window
                    // keeps whitening and encoding inside the time budget
                    let second = LayerConfig {
                        max_patches: 10_000,
                        ..desk_layer(3, 1, true)
                    };
                    vec![first, second]
                };
                trend(d, two, || vec![desk_layer(6, 1, true)], -1.0, "2 layers - 1 layer")
            }),
        },
        Criterion { id: 9, name: "end-to-end determinism", limit: mins(5), run: Box::new(|_| end_to_end_determinism()) },
        Criterion { id: 10, name: "encoder and pooling properties", limit: mins(1), run: Box::new(|_| encoder_properties()) },
    ];

    let cifar = if (5..=8).any(wanted) { Some(load_cifar()) } else { None };

    let (mut passed, mut failed, mut blocked) = (0, 0, 0);
    for c in criteria.iter().filter(|c| wanted(c.id)) {
        let start = Instant::now();
        let verdict = (c.run)(&cifar);
        let took = start.elapsed();
        let verdict = match verdict {
            Pass(d) if took > c.limit => Fail(format!("{d}; took {:.1}s over the {}s limit", took.as_secs_f64(), c.limit.as_secs())),
            v => v,
        };
        let (tag, detail) = match verdict {
            Pass(d) => {
                passed += 1;
                ("PASS", d)
            }
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Blocked(d) => {
                blocked += 1;
                ("BLOCKED", d)
            }
        };
        println!(
            "criterion {:>2} [{tag}] {}: {detail} ({:.1}s, limit {}s)",
            c.id,
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    println!("acceptance: {passed} passed, {failed} failed, {blocked} blocked");
    if failed > 0 || (strict && blocked > 0) {
        std::process::exit(1);
    }
}
