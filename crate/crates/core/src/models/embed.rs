use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, ModelType};
use crate::autodiff::{clip_global_norm, Sgd, Tape, Tensor, Var};
use crate::datasets::{negative_sample, HypernymyGraph};
use crate::distributions::{check_combination, standard_normal, BatchDist, CovarianceSpec, Flavor, Kind, WrappedDistribution};
use crate::error::{Error, Result};
use crate::eval::{rank_metrics, rank_metrics_by, RankMetrics, Space};
use crate::geometry::{self, LorentzPoint};
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub kind: Kind,
    pub flavor: Flavor,
    pub epochs: usize,
    /// Positive edges per SGD step.
    pub batch_size: usize,
    pub negatives: usize,
    pub margin: f64,
    pub kl_samples: usize,
    /// Learning rate after burn-in.
    pub lr: f64,
    pub burnin_epochs: usize,
    pub burnin_lr: f64,
    /// Flat learning rate used instead of the burn-in schedule for `full`.
    pub full_lr: f64,
    /// Standard deviation of the `N(0, σ²)` initialization.
    pub init_std: f64,
    pub clip_norm: f64,
    /// Evaluate MR/mAP every this many epochs (0: only at the end).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self::for_flavor(10, Kind::Rown, Flavor::Diagonal)
    }
}

impl EmbedConfig {
    pub fn for_flavor(dim: usize, kind: Kind, flavor: Flavor) -> Self {
        Self {
            dim,
            kind,
            flavor,
            epochs: 300,
            batch_size: 50,
            negatives: 10,
            margin: 1.0,
            kl_samples: if flavor == Flavor::Full { 50 } else { 1 },
            lr: 0.6,
            burnin_epochs: 100,
            burnin_lr: 0.015,
            full_lr: 0.01,
            init_std: 0.1,
            clip_norm: 10.0,
            eval_every: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_combination(self.kind, self.flavor)?;
        for (name, v) in [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("kl_samples", self.kl_samples),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.burnin_lr > 0.0 && self.full_lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rates and clip_norm must be positive".into()));
        }
        if !(self.margin >= 0.0 && self.init_std >= 0.0) {
            return Err(Error::Config("margin and init_std must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.flavor == Flavor::Full {
            self.full_lr
        } else if epoch <= self.burnin_epochs {
            self.burnin_lr
        } else {
            self.lr
        }
    }
}

/// Per-word distribution parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub kind: Kind,
    pub flavor: Flavor,
    /// `[V, n]` mean parameters.
    pub loc: Tensor,
    /// `[V, 1]`, `[V, n]` or `[V, n, n]` raw covariance parameters.
    pub raw: Tensor,
}

impl EmbeddingTable {
    /// Means and covariance parameters from `N(0, std²)`; for the full
    /// flavor only the diagonal of `M` is drawn and the rest is zero.
    pub fn init(words: usize, dim: usize, kind: Kind, flavor: Flavor, std: f64, rng: &mut Rng) -> Result<Self> {
        check_combination(kind, flavor)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| normal.sample(rng)).collect() };
        let loc = Tensor::new(vec![words, dim], draw(words * dim))?;
        let raw = match flavor {
            Flavor::Isotropic => Tensor::new(vec![words, 1], draw(words))?,
            Flavor::Diagonal => Tensor::new(vec![words, dim], draw(words * dim))?,
            Flavor::Full => {
                let mut m = vec![0.0; words * dim * dim];
                let d = draw(words * dim);
                for w in 0..words {
                    for i in 0..dim {
                        m[w * dim * dim + i * dim + i] = d[w * dim + i];
                    }
                }
                Tensor::new(vec![words, dim, dim], m)?
            }
        };
        Ok(Self { kind, flavor, loc, raw })
    }

    pub fn words(&self) -> usize {
        self.loc.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.loc.shape()[1]
    }

    fn raw_width(&self) -> usize {
        self.raw.numel() / self.words().max(1)
    }

    pub fn space(&self) -> Space {
        if self.kind.is_hyperbolic() {
            Space::Lorentz
        } else {
            Space::Euclidean
        }
    }

    /// Mean of word `i`: a Lorentz point or an `ℝⁿ` vector.
    pub fn mean(&self, i: usize) -> Vec<f64> {
        let m = self.loc.row(i);
        if self.kind.is_hyperbolic() {
            LorentzPoint::lift(m).into_coords()
        } else {
            m.to_vec()
        }
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        (0..self.words()).map(|i| self.mean(i)).collect()
    }

    /// Poincaré coordinates of every mean (the mean itself for Euclidean).
    pub fn poincare(&self) -> Vec<Vec<f64>> {
        (0..self.words())
            .map(|i| {
                if self.kind.is_hyperbolic() {
                    geometry::to_poincare(&LorentzPoint::lift(self.loc.row(i))).coords().to_vec()
                } else {
                    self.loc.row(i).to_vec()
                }
            })
            .collect()
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.space().norm(&self.mean(i))
    }

    pub fn distribution(&self, i: usize) -> Result<WrappedDistribution> {
        let w = self.raw_width();
        let raw = self.raw.data()[i * w..(i + 1) * w].to_vec();
        WrappedDistribution::new(self.kind, self.loc.row(i).to_vec(), CovarianceSpec { flavor: self.flavor, raw })
    }

    pub fn is_valid(&self) -> bool {
        self.loc.is_finite() && self.raw.is_finite()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: ModelType::Embedding,
            dim: self.dim(),
            kind: self.kind,
            flavor: self.flavor,
            tensors: vec![self.loc.clone(), self.raw.clone()],
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.model != ModelType::Embedding || ckpt.tensors.len() != 2 {
            return Err(Error::Config("not an embedding checkpoint".into()));
        }
        let mut it = ckpt.tensors.into_iter();
        let (loc, raw) = (it.next().unwrap(), it.next().unwrap());
        if loc.rank() != 2 || loc.shape()[1] != ckpt.dim || raw.shape()[0] != loc.shape()[0] {
            return Err(Error::Config("embedding checkpoint tensors have inconsistent shapes".into()));
        }
        Ok(Self { kind: ckpt.kind, flavor: ckpt.flavor, loc, raw })
    }

    /// CSV `word,poincare_norm,x_1..x_n` with Poincaré coordinates.
    pub fn write_csv<W: Write>(&self, graph: &HypernymyGraph, mut w: W) -> Result<()> {
        if graph.num_words() != self.words() {
            return Err(Error::dim("graph and table sizes differ"));
        }
        write!(w, "word,poincare_norm")?;
        for i in 1..=self.dim() {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for (i, p) in self.poincare().iter().enumerate() {
            let norm = crate::linalg::norm(p);
            write!(w, "{},{norm}", csv_field(graph.word(i)))?;
            for x in p {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// MR and mAP from distances between means.
    pub fn rank_metrics(&self, graph: &HypernymyGraph) -> Result<RankMetrics> {
        rank_metrics(&self.means(), graph, self.space())
    }

    /// MR and mAP ranking by Monte Carlo `KL(q_s ‖ q_t)` instead of distance.
    pub fn rank_metrics_kl(&self, graph: &HypernymyGraph, samples: usize, seed: u64) -> Result<RankMetrics> {
        let v = self.words();
        let mut rng = crate::seeded_rng(seed);
        let mut kl = vec![0.0; v * v];
        for s in 0..v {
            let tape = Tape::new();
            let loc = tape.constant(self.loc.clone());
            let raw = tape.constant(self.raw.clone());
            let src: Vec<usize> = (0..samples).flat_map(|_| std::iter::repeat_n(s, v)).collect();
            let dst: Vec<usize> = (0..samples).flat_map(|_| 0..v).collect();
            let q = self.batch(&tape, loc, raw, &src)?;
            let p = self.batch(&tape, loc, raw, &dst)?;
            let eps = tape.constant(standard_normal(&mut rng, samples * v, self.dim()));
            let per = crate::distributions::kl_single(&q, &p, eps)?;
            let per = tape.value(per);
            for (r, x) in per.data().iter().enumerate() {
                kl[s * v + r % v] += x / samples as f64;
            }
        }
        Ok(rank_metrics_by(graph, |s, t| kl[s * v + t]))
    }

    fn batch<'t>(&self, tape: &'t Tape, loc: Var, raw: Var, idx: &[usize]) -> Result<BatchDist<'t>> {
        let l = tape.gather(loc, idx)?;
        let r = tape.gather(raw, idx)?;
        BatchDist::new(tape, self.kind, self.flavor, l, r)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One training example: source, positive target, negative targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub s: usize,
    pub t: usize,
    pub negatives: Vec<usize>,
}

/// Mean over triples and negatives of
/// `max(0, m + KL(q_s ‖ q_t) − KL(q_s ‖ q_t′))`.
///
/// `loc`/`raw` hold the parameters of the words indexed by the triples.
/// Every triple draws `S` samples from `q_s` (`eps` is `[S·B, n]`,
/// sample-major) and reuses them for the positive and all negative KL terms.
pub fn word_loss(
    tape: &Tape,
    kind: Kind,
    flavor: Flavor,
    loc: Var,
    raw: Var,
    triples: &[Triple],
    eps: Var,
    margin: f64,
) -> Result<Var> {
    let b = triples.len();
    if b == 0 {
        return Err(Error::contract("word_loss of an empty batch"));
    }
    let k = triples[0].negatives.len();
    if k == 0 || triples.iter().any(|t| t.negatives.len() != k) {
        return Err(Error::contract("every triple needs the same, positive number of negatives"));
    }
    let rows = tape.shape(eps)[0];
    if rows % b != 0 {
        return Err(Error::dim("noise rows must be a multiple of the batch size"));
    }
    let s = rows / b;
    let gather = |idx: &[usize]| -> Result<BatchDist<'_>> {
        let l = tape.gather(loc, idx)?;
        let r = tape.gather(raw, idx)?;
        BatchDist::new(tape, kind, flavor, l, r)
    };
    let src: Vec<usize> = (0..s).flat_map(|_| triples.iter().map(|t| t.s)).collect();
    let q = gather(&src)?;
    let (z, lq) = q.rsample_with_log_prob(eps)?;

    // Targets laid out as [1 + k, S, B]: the positive first, then negatives.
    let mut dst = Vec::with_capacity((k + 1) * s * b);
    for j in 0..=k {
        for _ in 0..s {
            dst.extend(triples.iter().map(|t| if j == 0 { t.t } else { t.negatives[j - 1] }));
        }
    }
    let p = gather(&dst)?;
    let rep: Vec<usize> = (0..=k).flat_map(|_| 0..s * b).collect();
    let zz = tape.gather(z, &rep)?;
    let lqq = tape.gather(lq, &rep)?;
    let lp = p.log_prob(zz)?;
    let diff = tape.sub(lqq, lp)?;
    let diff = tape.reshape(diff, &[k + 1, s, b])?;
    let kl = tape.sum_axis(diff, 1)?;
    let kl = tape.scale(kl, 1.0 / s as f64)?;
    let kl = tape.reshape(kl, &[k + 1, b])?;
    let pos = tape.slice(kl, 0, 0, 1)?;
    let neg = tape.slice(kl, 0, 1, k + 1)?;
    let h = tape.sub(pos, neg)?;
    let h = tape.shift(h, margin)?;
    let h = tape.relu(h)?;
    tape.mean(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_rank: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct EmbedRun {
    pub table: EmbeddingTable,
    pub history: Vec<EmbedEpoch>,
    /// Set when training stopped on a non-finite value; `table` then holds
    /// the last finite parameters.
    pub diverged: Option<Error>,
}

/// Builds one batch of triples with freshly drawn negatives. Edges whose
/// source has no unrelated word are skipped.
fn make_triples(graph: &HypernymyGraph, edges: &[(usize, usize)], k: usize, rng: &mut Rng) -> Vec<Triple> {
    edges
        .iter()
        .filter_map(|&(s, t)| {
            let negatives = negative_sample(graph, s, k, rng);
            (negatives.len() == k).then_some(Triple { s, t, negatives })
        })
        .collect()
}

/// One SGD step on the rows touched by `triples`. Returns the loss and the
/// pre-clipping gradient norm.
fn sgd_step(
    table: &mut EmbeddingTable,
    triples: &[Triple],
    config: &EmbedConfig,
    lr: f64,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    // Local re-indexing so the tape only holds the rows in this batch.
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut words: Vec<usize> = Vec::new();
    let mut id = |w: usize| -> usize {
        *local.entry(w).or_insert_with(|| {
            words.push(w);
            words.len() - 1
        })
    };
    let remapped: Vec<Triple> = triples
        .iter()
        .map(|t| Triple { s: id(t.s), t: id(t.t), negatives: t.negatives.iter().map(|&w| id(w)).collect() })
        .collect();
    let n = table.dim();
    let w = table.raw_width();
    let mut loc = Vec::with_capacity(words.len() * n);
    let mut raw = Vec::with_capacity(words.len() * w);
    for &i in &words {
        loc.extend_from_slice(table.loc.row(i));
        raw.extend_from_slice(&table.raw.data()[i * w..(i + 1) * w]);
    }
    let mut raw_shape = table.raw.shape().to_vec();
    raw_shape[0] = words.len();
    let eps = standard_normal(rng, config.kl_samples * remapped.len(), n);

    let tape = Tape::new();
    let lv = tape.leaf(Tensor::new(vec![words.len(), n], loc)?);
    let rv = tape.leaf(Tensor::new(raw_shape, raw)?);
    let loss = word_loss(&tape, table.kind, table.flavor, lv, rv, &remapped, tape.constant(eps), config.margin)?;
    let value = tape.item(loss)?;
    let g = tape.backward(loss)?;
    let mut grads = vec![g.wrt(lv), g.wrt(rv)];
    let norm = clip_global_norm(&mut grads, config.clip_norm);
    let mut sub = vec![tape.value(lv).clone(), tape.value(rv).clone()];
    Sgd.step(&mut sub, &grads, lr)?;
    if !(sub[0].is_finite() && sub[1].is_finite()) {
        return Err(Error::NumericDetail("parameters became non-finite".into()));
    }
    for (j, &i) in words.iter().enumerate() {
        table.loc.data_mut()[i * n..(i + 1) * n].copy_from_slice(&sub[0].data()[j * n..(j + 1) * n]);
        table.raw.data_mut()[i * w..(i + 1) * w].copy_from_slice(&sub[1].data()[j * w..(j + 1) * w]);
    }
    Ok((value, norm))
}

pub fn train_embeddings(config: &EmbedConfig, graph: &HypernymyGraph) -> Result<EmbedRun> {
    train_embeddings_with(config, graph, |_| {})
}

/// SGD on the hinge loss over shuffled positive edges, with the burn-in
/// learning-rate schedule and all randomness from `config.seed`.
pub fn train_embeddings_with(
    config: &EmbedConfig,
    graph: &HypernymyGraph,
    mut on_epoch: impl FnMut(&EmbedEpoch),
) -> Result<EmbedRun> {
    config.validate()?;
    if graph.num_edges() == 0 {
        return Err(Error::Config("graph has no edges".into()));
    }
    let mut rng = crate::seeded_rng(config.seed);
    let mut table =
        EmbeddingTable::init(graph.num_words(), config.dim, config.kind, config.flavor, config.init_std, &mut rng)?;
    let mut edges = graph.edges().to_vec();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        let lr = config.lr_at(epoch);
        edges.shuffle(&mut rng);
        let (mut sum, mut count, mut gmax) = (0.0, 0usize, 0.0f64);
        for chunk in edges.chunks(config.batch_size) {
            let triples = make_triples(graph, chunk, config.negatives, &mut rng);
            if triples.is_empty() {
                continue;
            }
            match sgd_step(&mut table, &triples, config, lr, &mut rng) {
                Ok((loss, norm)) => {
                    sum += loss * triples.len() as f64;
                    count += triples.len();
                    gmax = gmax.max(norm);
                }
                Err(e) => {
                    let e = Error::Diverged { epoch, detail: e.to_string() };
                    return Ok(EmbedRun { table, history, diverged: Some(e) });
                }
            }
        }
        let eval_now = epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0);
        let (mean_rank, map) = if eval_now {
            let m = table.rank_metrics(graph)?;
            (Some(m.mean_rank), Some(m.map))
        } else {
            (None, None)
        };
        let rec = EmbedEpoch {
            epoch,
            loss: sum / count.max(1) as f64,
            lr,
            grad_norm: gmax,
            mean_rank,
            map,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {:.4}", rec.loss);
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(EmbedRun { table, history, diverged: None })
}
