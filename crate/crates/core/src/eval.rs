//! Correlation and ranking metrics, and the report format they are saved in.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datasets::{BinaryTree, HypernymyGraph, TreeSample};
use crate::error::{Error, Result};
use crate::geometry::lorentz_inner_unchecked;
use crate::linalg;
use crate::special;

pub const SCHEMA_VERSION: u32 = 1;
/// Above this many test pairs, distance correlations use a random subset.
pub const MAX_PAIRS: usize = 2_000_000;

/// Number of worker threads for pairwise metrics, from `HYPROWN_THREADS`.
pub fn metric_threads() -> usize {
    std::env::var("HYPROWN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("pearson of lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedMetric("pearson needs at least 2 values".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("pearson with zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// How embeddings are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Lorentz coordinates; distance `arcosh(−⟨x,y⟩_L)`, norm = Poincaré norm.
    Lorentz,
    /// Plain vectors; Euclidean distance and norm.
    Euclidean,
}

impl Space {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Space::Lorentz => special::acosh_clamped(-lorentz_inner_unchecked(a, b)),
            Space::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }

    pub fn norm(self, a: &[f64]) -> f64 {
        match self {
            Space::Lorentz => linalg::norm(&a[1..]) / (a[0] + 1.0),
            Space::Euclidean => linalg::norm(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeCorrelations {
    pub r_distance: f64,
    pub r_depth: f64,
    pub pairs: usize,
}

/// Pearson correlations of (Hamming distance, embedding distance) over test
/// pairs and of (depth, norm) over test samples. When there are more than
/// [`MAX_PAIRS`] pairs, that many are drawn uniformly with `seed`.
pub fn tree_correlations(
    embeddings: &[Vec<f64>],
    samples: &[&TreeSample],
    space: Space,
    seed: u64,
) -> Result<TreeCorrelations> {
    if embeddings.len() != samples.len() {
        return Err(Error::dim("one embedding per sample is required"));
    }
    let m = samples.len();
    if m < 2 {
        return Err(Error::UndefinedMetric("fewer than 2 test samples".into()));
    }
    let total = m * (m - 1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= MAX_PAIRS {
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect()
    } else {
        let mut rng = crate::seeded_rng(seed);
        (0..MAX_PAIRS)
            .map(|_| loop {
                let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
                if i != j {
                    break (i.min(j), i.max(j));
                }
            })
            .collect()
    };
    let threads = metric_threads().min(pairs.len()).max(1);
    let chunk = pairs.len().div_ceil(threads);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = std::thread::scope(|sc| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|ps| {
                sc.spawn(move || {
                    let mut h = Vec::with_capacity(ps.len());
                    let mut d = Vec::with_capacity(ps.len());
                    for &(i, j) in ps {
                        h.push(BinaryTree::path_length(samples[i].base, samples[j].base) as f64);
                        d.push(space.distance(&embeddings[i], &embeddings[j]));
                    }
                    (h, d)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("metric worker panicked")).collect()
    });
    let (mut ham, mut dist) = (Vec::with_capacity(pairs.len()), Vec::with_capacity(pairs.len()));
    for (h, d) in parts {
        ham.extend(h);
        dist.extend(d);
    }
    let r_distance = pearson(&ham, &dist)?;
    let depth: Vec<f64> = samples.iter().map(|s| s.depth as f64).collect();
    let norms: Vec<f64> = embeddings.iter().map(|e| space.norm(e)).collect();
    let r_depth = pearson(&depth, &norms)?;
    Ok(TreeCorrelations { r_distance, r_depth, pairs: pairs.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mean_rank: f64,
    pub map: f64,
}

/// Mean rank and mean average precision for the graph's edges under the
/// dissimilarity `dist(s, t)`.
///
/// The rank of an edge `(s, t)` is one plus the number of words unrelated to
/// `s` that are strictly closer to `s` than `t` is. The average precision of
/// `s` is taken over its hypernyms, each counted at its optimistic position
/// among the hypernyms and unrelated words.
pub fn rank_metrics_by<F>(graph: &HypernymyGraph, dist: F) -> RankMetrics
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let v = graph.num_words();
    let sources: Vec<usize> = (0..v).filter(|&s| !graph.targets(s).is_empty()).collect();
    let threads = metric_threads().min(sources.len()).max(1);
    let chunk = sources.len().div_ceil(threads).max(1);
    // (rank sum, edge count, AP sum) per source chunk, reduced in order.
    let parts: Vec<(f64, usize, f64)> = std::thread::scope(|sc| {
        let handles: Vec<_> = sources
            .chunks(chunk)
            .map(|ss| {
                let dist = &dist;
                sc.spawn(move || {
                    let (mut rank_sum, mut count, mut ap_sum) = (0.0, 0usize, 0.0);
                    let mut neg = Vec::new();
                    for &s in ss {
                        neg.clear();
                        neg.extend((0..v).filter(|&t| t != s && !graph.related(s, t)).map(|t| dist(s, t)));
                        neg.sort_by(f64::total_cmp);
                        let pos: Vec<f64> = graph.targets(s).iter().map(|&t| dist(s, t)).collect();
                        let mut ap = 0.0;
                        for &d in &pos {
                            let neg_lt = neg.partition_point(|&x| x < d);
                            let pos_lt = pos.iter().filter(|&&x| x < d).count();
                            rank_sum += (neg_lt + 1) as f64;
                            count += 1;
                            ap += (pos_lt + 1) as f64 / (pos_lt + neg_lt + 1) as f64;
                        }
                        ap_sum += ap / pos.len() as f64;
                    }
                    (rank_sum, count, ap_sum)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("metric worker panicked")).collect()
    });
    let (mut rank_sum, mut count, mut ap_sum) = (0.0, 0usize, 0.0);
    for (r, c, a) in parts {
        rank_sum += r;
        count += c;
        ap_sum += a;
    }
    RankMetrics {
        mean_rank: rank_sum / count.max(1) as f64,
        map: ap_sum / sources.len().max(1) as f64,
    }
}

/// [`rank_metrics_by`] with the distance between mean embeddings.
pub fn rank_metrics(points: &[Vec<f64>], graph: &HypernymyGraph, space: Space) -> Result<RankMetrics> {
    if points.len() != graph.num_words() {
        return Err(Error::dim(format!(
            "{} embeddings for {} words",
            points.len(),
            graph.num_words()
        )));
    }
    Ok(rank_metrics_by(graph, |s, t| space.distance(&points[s], &points[t])))
}

/// Poincaré norm of a Lorentz point.
pub fn root_norm(point: &[f64]) -> f64 {
    Space::Lorentz.norm(point)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Self { values, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    #[serde(default)]
    pub label: String,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricReport {
    /// Aggregates per-seed metric maps; every map must have the same keys.
    pub fn from_runs(label: impl Into<String>, runs: &[(u64, BTreeMap<String, f64>)]) -> Result<Self> {
        let mut metrics = BTreeMap::new();
        if let Some((_, first)) = runs.first() {
            for key in first.keys() {
                let vals: Option<Vec<f64>> = runs.iter().map(|(_, m)| m.get(key).copied()).collect();
                let vals = vals.ok_or_else(|| Error::contract(format!("metric `{key}` missing in a run")))?;
                metrics.insert(key.clone(), MetricSummary::from_values(vals));
            }
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            label: label.into(),
            seeds: runs.iter().map(|(s, _)| *s).collect(),
            metrics,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn mean(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).map(|m| m.mean)
    }
}

/// A results table: rows are distribution kinds, columns are a swept
/// setting (tree depth or embedding dimension). Cells read `mean±std`.
pub fn table_csv(metric: &str, columns: &[String], rows: &[(String, Vec<Option<MetricSummary>>)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{metric}");
    for c in columns {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for (name, cells) in rows {
        out.push_str(name);
        for c in cells {
            match c {
                Some(MetricSummary { mean, std: Some(s), .. }) => {
                    let _ = write!(out, ",{mean:.3}±{s:.3}");
                }
                Some(MetricSummary { mean, .. }) => {
                    let _ = write!(out, ",{mean:.3}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
