//! Spherical k-means dictionary learning and the reduce-side merge of
//! per-worker dictionaries.
//!
//! Rows are projected to the unit sphere before clustering; assignment is by
//! maximal dot product with unit centroids and the update is the re-normalized
//! (weighted) mean of the assigned rows. The objective is
//! `sum_i w_i * (1 - max_j <x_i/|x_i|, d_j>)`, which the two steps never
//! increase.

use nalgebra::DMatrixView;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DdrlError, Result};
use crate::preprocess::PatchMatrix;
use crate::rng::{self, StageRng};

pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Slack allowed when checking the objective never goes up between
/// iterations (pure rounding noise).
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Independent seedings; the run with the lowest final objective is kept.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed,
            restarts: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(DdrlError::config("k must be >= 1"));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(DdrlError::config("max_iters and restarts must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(DdrlError::config(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// How per-worker dictionaries are combined on the reduce side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    /// Weighted spherical k-means over the union of centroids.
    #[default]
    Recluster,
    /// Stack every centroid; the merged dictionary has sum(k_i) atoms.
    Concatenate,
}

/// k unit-norm atoms of dimension N, stored atom after atom (column-major N x k).
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    dim: usize,
    centroids: Vec<f64>,
    weights: Vec<u64>,
}

impl Dictionary {
    pub fn new(dim: usize, centroids: Vec<f64>, weights: Vec<u64>) -> Result<Self> {
        if dim == 0 || centroids.len() != dim * weights.len() {
            return Err(DdrlError::shape(format!(
                "{} centroid values do not form {} atoms of dimension {dim}",
                centroids.len(),
                weights.len()
            )));
        }
        Ok(Dictionary {
            dim,
            centroids,
            weights,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f64]> {
        self.centroids.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    /// Column-major storage: atom j occupies `[j*N, (j+1)*N)`.
    pub fn raw(&self) -> &[f64] {
        &self.centroids
    }

    /// D as an N x k matrix view.
    pub fn as_matrix(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.centroids, self.dim, self.k())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KMeansReport {
    /// Objective after every assignment step.
    pub objective_history: Vec<f64>,
    /// Centroid updates performed.
    pub iterations: usize,
    /// Rows skipped because they are exactly zero.
    pub zero_rows: usize,
    /// Empty clusters that were reseeded.
    pub reseeds: usize,
}

impl KMeansReport {
    pub fn final_objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

/// Learn a k-atom dictionary from (normalized, whitened) patches.
pub fn train(patches: &PatchMatrix, cfg: &KMeansConfig) -> Result<Dictionary> {
    train_with_report(patches, cfg).map(|(d, _)| d)
}

pub fn train_with_report(patches: &PatchMatrix, cfg: &KMeansConfig) -> Result<(Dictionary, KMeansReport)> {
    cfg.validate()?;
    let n = patches.rows();
    if n < cfg.k {
        return Err(DdrlError::insufficient(format!(
            "k-means with k = {} needs at least that many patches, got {n}",
            cfg.k
        )));
    }
    let dim = patches.dim();
    let mut points = Vec::with_capacity(patches.data().len());
    let mut zero_rows = 0;
    for row in patches.iter_rows() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_rows += 1;
            continue;
        }
        points.extend(row.iter().map(|v| v / norm));
    }
    let weights = vec![1.0; points.len() / dim];
    let mut rng = rng::stage_rng(cfg.seed, "kmeans-train");
    let fit = best_of(&points, &weights, dim, cfg, &mut rng);
    let counts = fit.cluster_weights.iter().map(|w| w.round() as u64).collect();
    let mut report = fit.report;
    report.zero_rows = zero_rows;
    Ok((Dictionary::new(dim, fit.centroids, counts)?, report))
}

/// Reduce step: re-cluster the weighted union of all input atoms to `k_target` atoms.
pub fn merge(dicts: &[Dictionary], k_target: usize, cfg: &KMeansConfig) -> Result<Dictionary> {
    merge_with_report(dicts, k_target, cfg).map(|(d, _)| d)
}

pub fn merge_with_report(
    dicts: &[Dictionary],
    k_target: usize,
    cfg: &KMeansConfig,
) -> Result<(Dictionary, KMeansReport)> {
    let dim = check_same_dim(dicts)?;
    let total: usize = dicts.iter().map(Dictionary::k).sum();
    if total < k_target {
        return Err(DdrlError::insufficient(format!(
            "cannot merge {total} atoms into {k_target}"
        )));
    }
    let cfg = KMeansConfig { k: k_target, ..*cfg };
    cfg.validate()?;
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let mut raw_weights = Vec::with_capacity(total);
    for d in dicts {
        points.extend_from_slice(d.raw());
        for &w in d.weights() {
            // an atom that attracted nothing still represents itself once
            weights.push(w.max(1) as f64);
            raw_weights.push(w);
        }
    }
    let mut rng = rng::stage_rng(cfg.seed, "kmeans-merge");
    let fit = best_of(&points, &weights, dim, &cfg, &mut rng);
    let mut merged = vec![0u64; k_target];
    for (i, &c) in fit.assignment.iter().enumerate() {
        merged[c] += raw_weights[i];
    }
    Ok((Dictionary::new(dim, fit.centroids, merged)?, fit.report))
}

/// Reduce step without re-clustering: stack every atom in input order.
pub fn concatenate(dicts: &[Dictionary]) -> Result<Dictionary> {
    let dim = check_same_dim(dicts)?;
    let mut centroids = Vec::new();
    let mut weights = Vec::new();
    for d in dicts {
        centroids.extend_from_slice(d.raw());
        weights.extend_from_slice(d.weights());
    }
    Dictionary::new(dim, centroids, weights)
}

fn check_same_dim(dicts: &[Dictionary]) -> Result<usize> {
    let first = dicts
        .first()
        .ok_or_else(|| DdrlError::insufficient("no dictionaries to merge"))?;
    if let Some(d) = dicts.iter().find(|d| d.dim() != first.dim()) {
        return Err(DdrlError::shape(format!(
            "cannot merge dictionaries of dimension {} and {}",
            first.dim(),
            d.dim()
        )));
    }
    Ok(first.dim())
}

struct Fit {
    centroids: Vec<f64>,
    assignment: Vec<usize>,
    cluster_weights: Vec<f64>,
    report: KMeansReport,
}

struct Assignment {
    labels: Vec<usize>,
    best: Vec<f64>,
    objective: f64,
}

/// `cfg.restarts` runs drawing seeds from one rng; ties keep the earlier run.
fn best_of(points: &[f64], weights: &[f64], dim: usize, cfg: &KMeansConfig, rng: &mut StageRng) -> Fit {
    let mut best = weighted_spherical_kmeans(points, weights, dim, cfg, rng);
    for _ in 1..cfg.restarts {
        let fit = weighted_spherical_kmeans(points, weights, dim, cfg, rng);
        if fit.report.final_objective() < best.report.final_objective() {
            best = fit;
        }
    }
    best
}

/// Spherical k-means over unit-norm points (rows of `points`).
fn weighted_spherical_kmeans(
    points: &[f64],
    weights: &[f64],
    dim: usize,
    cfg: &KMeansConfig,
    rng: &mut StageRng,
) -> Fit {
    let n = weights.len();
    let k = cfg.k;
    let mut centroids = seed_centroids(points, weights, dim, k, rng);
    let mut report = KMeansReport::default();

    let mut current = assign(points, weights, &centroids, dim, k);
    report.objective_history.push(current.objective);
    while report.iterations < cfg.max_iters && current.objective > 0.0 {
        let emptied = update(points, weights, &current, &mut centroids, dim, k);
        report.reseeds += emptied;
        report.iterations += 1;
        let next = assign(points, weights, &centroids, dim, k);
        let prev = current.objective;
        debug_assert!(
            next.objective <= prev + MONOTONE_SLACK * (1.0 + prev),
            "k-means objective increased: {prev} -> {}",
            next.objective
        );
        report.objective_history.push(next.objective);
        let unchanged = next.labels == current.labels && emptied == 0;
        current = next;
        if unchanged || prev - current.objective <= cfg.tol * prev {
            break;
        }
    }

    let mut cluster_weights = vec![0.0; k];
    for (i, &c) in current.labels.iter().enumerate() {
        cluster_weights[c] += weights[i];
    }
    debug_assert_eq!(current.labels.len(), n);
    Fit {
        centroids,
        assignment: current.labels,
        cluster_weights,
        report,
    }
}

fn dots(points: &[f64], centroids: &[f64], dim: usize, k: usize) -> nalgebra::DMatrix<f64> {
    let n = points.len() / dim;
    let x = DMatrixView::from_slice(points, dim, n);
    let c = DMatrixView::from_slice(centroids, dim, k);
    // k x n, column i holds the k dot products of point i
    c.transpose() * x
}

fn assign(points: &[f64], weights: &[f64], centroids: &[f64], dim: usize, k: usize) -> Assignment {
    let n = weights.len();
    let mut labels = vec![0usize; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut objective = 0.0;
    if n == 0 {
        return Assignment {
            labels,
            best,
            objective,
        };
    }
    let prod = dots(points, centroids, dim, k);
    for i in 0..n {
        let col = prod.column(i);
        let (mut arg, mut val) = (0, col[0]);
        for j in 1..k {
            if col[j] > val {
                arg = j;
                val = col[j];
            }
        }
        labels[i] = arg;
        best[i] = val;
        objective += weights[i] * (1.0 - val).max(0.0);
    }
    Assignment {
        labels,
        best,
        objective,
    }
}

/// Move every centroid to its cluster's re-normalized weighted mean and
/// reseed empty clusters at the worst-served points. Returns the number of
/// reseeded clusters.
fn update(
    points: &[f64],
    weights: &[f64],
    a: &Assignment,
    centroids: &mut [f64],
    dim: usize,
    k: usize,
) -> usize {
    let mut sums = vec![0.0; k * dim];
    let mut mass = vec![0.0; k];
    for (i, &c) in a.labels.iter().enumerate() {
        let w = weights[i];
        mass[c] += w;
        let p = &points[i * dim..(i + 1) * dim];
        for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
            *s += w * v;
        }
    }
    let mut empty = Vec::new();
    for j in 0..k {
        if mass[j] == 0.0 {
            empty.push(j);
            continue;
        }
        let s = &sums[j * dim..(j + 1) * dim];
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        // a zero mean leaves every unit centroid equally good; keep the old one
        if norm > 0.0 {
            for (c, v) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(s) {
                *c = v / norm;
            }
        }
    }
    if !empty.is_empty() {
        let mut best = a.best.clone();
        for &j in &empty {
            let far = best
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |acc, (i, &b)| match acc {
                    Some((_, v)) if v <= b => acc,
                    _ => Some((i, b)),
                });
            if let Some((i, _)) = far {
                centroids[j * dim..(j + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
                best[i] = f64::INFINITY;
            }
        }
    }
    empty.len()
}

/// k-means++ seeding on the sphere: the first atom is drawn proportionally to
/// weight, later ones proportionally to weight * (1 - best cosine).
fn seed_centroids(points: &[f64], weights: &[f64], dim: usize, k: usize, rng: &mut StageRng) -> Vec<f64> {
    let n = weights.len();
    let mut centroids = Vec::with_capacity(k * dim);
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut mass: Vec<f64> = weights.to_vec();
    for _ in 0..k {
        let total: f64 = mass.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &m) in mass.iter().enumerate() {
                if m <= 0.0 {
                    continue;
                }
                chosen = Some(i);
                if target < m {
                    break;
                }
                target -= m;
            }
            chosen
        } else {
            None
        };
        match pick {
            Some(i) => {
                let c = &points[i * dim..(i + 1) * dim];
                centroids.extend_from_slice(c);
                for p in 0..n {
                    let d: f64 = points[p * dim..(p + 1) * dim].iter().zip(c).map(|(a, b)| a * b).sum();
                    if d > best[p] {
                        best[p] = d;
                    }
                    mass[p] = if p == i { 0.0 } else { weights[p] * (1.0 - best[p]).max(0.0) };
                }
            }
            None => {
                // every point already coincides with an atom; fill with random directions
                let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                centroids.extend(v.iter().map(|x| x / norm));
            }
        }
    }
    centroids
}

/// Objective of a dictionary on a set of rows, skipping zero rows.
pub fn objective(patches: &PatchMatrix, dict: &Dictionary) -> Result<f64> {
    if patches.dim() != dict.dim() {
        return Err(DdrlError::shape(format!(
            "patch dimension {} does not match dictionary dimension {}",
            patches.dim(),
            dict.dim()
        )));
    }
    let mut total = 0.0;
    for row in patches.iter_rows() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let best = dict
            .centroids()
            .map(|c| c.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() / norm)
            .fold(f64::NEG_INFINITY, f64::max);
        total += (1.0 - best).max(0.0);
    }
    Ok(total)
}
