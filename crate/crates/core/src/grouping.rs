//! Energy-correlation similarity between learned features and the greedy
//! partition of K features into equal-size feature maps.
//!
//! Columns are standardized to zero mean and unit second moment, so
//! `(1/n) sum z_j^2 z_k^2 - 1` is the covariance of the squared responses and
//! the similarity is their correlation.

use crate::error::{DdrlError, Result};
use crate::par;

/// A column whose fourth moment minus one is at or below this is degenerate.
const DEGENERATE_EPS: f64 = 1e-12;

/// n samples x K features, standardized per column; stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumns {
    data: Vec<f64>,
    samples: usize,
    features: usize,
    degenerate: Vec<bool>,
    /// (1/n) sum z^4 - 1 per column.
    excess: Vec<f64>,
}

impl FeatureColumns {
    /// Standardize raw responses (row-major, `features` per row).
    pub fn standardize(raw: &[f64], features: usize) -> Result<Self> {
        if features == 0 || raw.len() % features != 0 {
            return Err(DdrlError::shape(format!(
                "{} values do not form rows of {features} features",
                raw.len()
            )));
        }
        let n = raw.len() / features;
        if n == 0 {
            return Err(DdrlError::insufficient("no samples to standardize"));
        }
        let nf = n as f64;
        let mut mean = vec![0.0; features];
        for row in raw.chunks_exact(features) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![0.0; features];
        for row in raw.chunks_exact(features) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= nf);

        let mut data = Vec::with_capacity(raw.len());
        for row in raw.chunks_exact(features) {
            for j in 0..features {
                let z = if var[j] > 0.0 {
                    (row[j] - mean[j]) / var[j].sqrt()
                } else {
                    0.0
                };
                data.push(z);
            }
        }
        let mut cols = FeatureColumns {
            data,
            samples: n,
            features,
            degenerate: vec![false; features],
            excess: vec![0.0; features],
        };
        for j in 0..features {
            let fourth = (0..n).map(|i| cols.z(i, j).powi(4)).sum::<f64>() / nf;
            cols.excess[j] = fourth - 1.0;
            cols.degenerate[j] = var[j] <= 0.0 || cols.excess[j] <= DEGENERATE_EPS;
        }
        Ok(cols)
    }

    #[inline]
    fn z(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.features + j]
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn is_degenerate(&self, j: usize) -> bool {
        self.degenerate[j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.samples).map(|i| self.z(i, j)).collect()
    }
}

/// Similarity of features j and k: correlation of their squared standardized responses.
pub fn similarity(cols: &FeatureColumns, j: usize, k: usize) -> Result<f64> {
    for idx in [j, k] {
        if idx >= cols.features {
            return Err(DdrlError::shape(format!(
                "feature {idx} out of range for {} features",
                cols.features
            )));
        }
        if cols.degenerate[idx] {
            return Err(DdrlError::DegenerateFeature { index: idx });
        }
    }
    let n = cols.samples as f64;
    let cross = (0..cols.samples)
        .map(|i| {
            let a = cols.z(i, j);
            let b = cols.z(i, k);
            a * a * b * b
        })
        .sum::<f64>()
        / n;
    Ok((cross - 1.0) / (cols.excess[j] * cols.excess[k]).sqrt())
}

/// Full K x K similarity matrix; rows/columns of degenerate features are NaN.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    k: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn compute(cols: &FeatureColumns) -> Self {
        let k = cols.features;
        let n = cols.samples;
        let nf = n as f64;
        // squared responses, column-major so each feature is contiguous
        let mut sq = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                let z = cols.z(i, j);
                sq[j * n + i] = z * z;
            }
        }
        let rows = par::map_range(k, |a| {
            (0..k)
                .map(|b| {
                    if cols.degenerate[a] || cols.degenerate[b] {
                        return f64::NAN;
                    }
                    // compute each unordered pair in one fixed orientation
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    let (ql, qh) = (&sq[lo * n..(lo + 1) * n], &sq[hi * n..(hi + 1) * n]);
                    let cross = ql.iter().zip(qh).map(|(x, y)| x * y).sum::<f64>() / nf;
                    (cross - 1.0) / (cols.excess[lo] * cols.excess[hi]).sqrt()
                })
                .collect::<Vec<f64>>()
        });
        SimilarityMatrix {
            k,
            values: rows.concat(),
        }
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.k + k]
    }

    pub fn size(&self) -> usize {
        self.k
    }
}

/// Disjoint feature maps of exactly T features each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    pub groups: Vec<Vec<usize>>,
    pub group_size: usize,
}

impl GroupAssignment {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn features(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Every feature appears once and every group has exactly T members.
    pub fn is_partition_of(&self, k: usize) -> bool {
        let mut seen = vec![false; k];
        for g in &self.groups {
            if g.len() != self.group_size {
                return false;
            }
            for &f in g {
                if f >= k || seen[f] {
                    return false;
                }
                seen[f] = true;
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// Greedy seed-and-grab grouping.
///
/// Among unassigned non-degenerate features, the one with the largest summed
/// similarity to the others seeds a group, which takes its T-1 most similar
/// unassigned peers (ties to the lower index). Degenerate features are dealt
/// round-robin into groups that still have room.
pub fn build_groups(cols: &FeatureColumns, group_size: usize) -> Result<GroupAssignment> {
    let k = cols.features();
    if group_size == 0 || group_size > k {
        return Err(DdrlError::config(format!(
            "group size {group_size} must be in 1..={k}"
        )));
    }
    if k % group_size != 0 {
        return Err(DdrlError::config(format!(
            "group size {group_size} does not divide {k} features"
        )));
    }
    let num_groups = k / group_size;
    if group_size == 1 {
        return Ok(GroupAssignment {
            groups: (0..k).map(|j| vec![j]).collect(),
            group_size,
        });
    }
    let sim = SimilarityMatrix::compute(cols);
    Ok(greedy_groups(&sim, |j| cols.is_degenerate(j), group_size, num_groups))
}

fn greedy_groups(
    sim: &SimilarityMatrix,
    degenerate: impl Fn(usize) -> bool,
    group_size: usize,
    num_groups: usize,
) -> GroupAssignment {
    let k = sim.size();
    let mut open: Vec<usize> = (0..k).filter(|&j| !degenerate(j)).collect();
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(num_groups);

    while !open.is_empty() && groups.len() < num_groups {
        // first maximum in index order wins ties
        let mut seed = open[0];
        let mut seed_score = f64::NEG_INFINITY;
        for &a in &open {
            let s: f64 = open.iter().filter(|&&b| b != a).map(|&b| sim.get(a, b)).sum();
            if s > seed_score {
                seed = a;
                seed_score = s;
            }
        }
        let mut peers: Vec<usize> = open.iter().copied().filter(|&b| b != seed).collect();
        peers.sort_by(|&a, &b| {
            sim.get(seed, b)
                .partial_cmp(&sim.get(seed, a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut group = vec![seed];
        group.extend(peers.into_iter().take(group_size - 1));
        open.retain(|f| !group.contains(f));
        group.sort_unstable();
        groups.push(group);
    }
    while groups.len() < num_groups {
        groups.push(Vec::new());
    }
    let leftovers: Vec<usize> = open.into_iter().chain((0..k).filter(|&j| degenerate(j))).collect();
    let mut g = 0;
    for f in leftovers {
        while groups[g].len() >= group_size {
            g = (g + 1) % num_groups;
        }
        groups[g].push(f);
        g = (g + 1) % num_groups;
    }
    for group in &mut groups {
        group.sort_unstable();
    }
    GroupAssignment { groups, group_size }
}
