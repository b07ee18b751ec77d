#![allow(dead_code)]

use hyprown::datasets::HypernymyGraph;
use hyprown::geometry::{parallel_transport, LorentzPoint, TangentVector};
use hyprown::{seeded_rng, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> Rng {
    seeded_rng(seed)
}

pub fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(rng: &mut Rng, n: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, n);
        let r = norm(&g);
        if r > 1e-6 {
            return g.iter().map(|x| x / r).collect();
        }
    }
}

/// A vector with uniformly random direction and norm in `[0, max_r]`.
pub fn ball(rng: &mut Rng, n: usize, max_r: f64) -> Vec<f64> {
    let r = rng.random::<f64>() * max_r;
    unit(rng, n).into_iter().map(|x| x * r).collect()
}

/// A point at geodesic distance at most `max_r` from the origin.
pub fn point(rng: &mut Rng, n: usize, max_r: f64) -> LorentzPoint {
    LorentzPoint::lift(&ball(rng, n, max_r))
}

/// A tangent vector at `x` with Lorentz norm at most `max_r`.
pub fn tangent(rng: &mut Rng, x: &LorentzPoint, max_r: f64) -> TangentVector {
    let v = TangentVector::at_origin(&ball(rng, x.dim(), max_r));
    parallel_transport(&LorentzPoint::origin(x.dim()), x, &v).unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + dot(&a[1..], &b[1..])
}

/// A random DAG on `v` words: every word except word 0 gets 1..=3 parents
/// among earlier words, optionally closed transitively.
pub fn random_graph(rng: &mut Rng, v: usize, closure: bool) -> HypernymyGraph {
    let names: Vec<String> = (0..v).map(|i| format!("w{i}")).collect();
    let mut g = HypernymyGraph::default();
    for c in 1..v {
        let k = rng.random_range(1..=3usize.min(c));
        for _ in 0..k {
            let p = rng.random_range(0..c);
            g.add_edge(&names[c], &names[p]);
        }
    }
    if closure {
        g.transitive_closure()
    } else {
        g
    }
}

/// Mean rank and mAP by exhaustive enumeration: for every source, list every
/// other word with its distance and a positive flag, then count.
pub fn brute_force_ranks(graph: &HypernymyGraph, dist: impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let v = graph.num_words();
    let positive = |s: usize, t: usize| graph.edges().contains(&(s, t));
    let unrelated = |s: usize, t: usize| t != s && !positive(s, t) && !positive(t, s);
    let (mut ranks, mut aps) = (Vec::new(), Vec::new());
    for s in 0..v {
        let pos: Vec<usize> = (0..v).filter(|&t| positive(s, t)).collect();
        if pos.is_empty() {
            continue;
        }
        let mut precisions = Vec::new();
        for &t in &pos {
            let d = dist(s, t);
            let closer_neg = (0..v).filter(|&u| unrelated(s, u) && dist(s, u) < d).count();
            let closer_pos = pos.iter().filter(|&&u| dist(s, u) < d).count();
            ranks.push((closer_neg + 1) as f64);
            precisions.push((closer_pos + 1) as f64 / (closer_pos + closer_neg + 1) as f64);
        }
        aps.push(precisions.iter().sum::<f64>() / precisions.len() as f64);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&ranks), mean(&aps))
}
