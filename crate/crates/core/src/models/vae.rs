use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, ModelType};
use super::mlp::Mlp;
use crate::autodiff::{clip_global_norm, Adam, Tape, Tensor, UnaryOp, Var};
use crate::datasets::{Split, TreeDataset};
use crate::distributions::{check_combination, standard_normal, BatchDist, Flavor, Kind};
use crate::error::{Error, Result};
use crate::eval::{tree_correlations, Space, TreeCorrelations};
use crate::hyper;
use crate::special;
use crate::Rng;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub depth: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub kind: Kind,
    pub flavor: Flavor,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub kl_samples: usize,
    pub sigma_obs: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self::for_depth(4, Kind::Rown, Flavor::Diagonal)
    }
}

impl VaeConfig {
    /// Latent dimension equal to the depth and `2^{d+3}` hidden units.
    pub fn for_depth(depth: usize, kind: Kind, flavor: Flavor) -> Self {
        Self {
            depth,
            latent_dim: depth,
            hidden: 1 << (depth + 3),
            kind,
            flavor,
            lr: 1e-3,
            epochs: 500,
            batch_size: 100,
            kl_samples: 1,
            sigma_obs: 0.01,
            clip_norm: 10.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_combination(self.kind, self.flavor)?;
        let positive = [
            ("depth", self.depth),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("kl_samples", self.kl_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.sigma_obs > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("lr, sigma_obs and clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        (1 << self.depth) - 1
    }

    /// Raw covariance outputs of the encoder: `n` for the diagonal-based
    /// flavors (averaged for isotropic), `n²` for full.
    pub fn cov_outputs(&self) -> usize {
        match self.flavor {
            Flavor::Full => self.latent_dim * self.latent_dim,
            _ => self.latent_dim,
        }
    }
}

/// Encoder/decoder pair with a latent distribution layer.
#[derive(Debug, Clone)]
pub struct Vae {
    pub config: VaeConfig,
    encoder: Mlp,
    decoder: Mlp,
    params: Vec<Tensor>,
}

/// Scalar pieces of one ELBO evaluation, averaged over rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboParts {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

impl Vae {
    pub fn new(config: VaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (d, h, n) = (config.input_dim(), config.hidden, config.latent_dim);
        let encoder = Mlp::new(vec![d, h, h, n + config.cov_outputs()])?;
        let decoder = Mlp::new(vec![n, h, h, d])?;
        let mut params = encoder.init(rng);
        params.extend(decoder.init(rng));
        Ok(Self { config, encoder, decoder, params })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        let k = self.encoder.num_tensors();
        if params.len() != k + self.decoder.num_tensors() {
            return Err(Error::Config(format!("expected {} parameter tensors, got {}", k + self.decoder.num_tensors(), params.len())));
        }
        self.encoder.check_params(&params[..k])?;
        self.decoder.check_params(&params[k..])?;
        self.params = params;
        Ok(())
    }

    fn split_vars<'a>(&self, vars: &'a [Var]) -> (&'a [Var], &'a [Var]) {
        vars.split_at(self.encoder.num_tensors())
    }

    /// `q(z | x)` for a `[B, D]` batch.
    pub fn posterior<'t>(&self, tape: &'t Tape, vars: &[Var], x: Var) -> Result<BatchDist<'t>> {
        let (enc, _) = self.split_vars(vars);
        let n = self.config.latent_dim;
        let out = self.encoder.forward(tape, enc, x)?;
        let loc = tape.cols(out, 0, n)?;
        let raw = tape.cols(out, n, n + self.config.cov_outputs())?;
        let raw = match self.config.flavor {
            Flavor::Isotropic => tape.mean_last(raw)?,
            Flavor::Diagonal => raw,
            Flavor::Full => {
                let b = tape.shape(raw)[0];
                tape.reshape(raw, &[b, n, n])?
            }
        };
        BatchDist::new(tape, self.config.kind, self.config.flavor, loc, raw)
    }

    /// Standard prior at the origin with identity covariance, `rows` copies.
    pub fn prior<'t>(&self, tape: &'t Tape, rows: usize) -> Result<BatchDist<'t>> {
        let n = self.config.latent_dim;
        let loc = tape.constant(Tensor::zeros(&[rows, n]));
        let raw = tape.constant(Tensor::full(&[rows, 1], special::softplus_inv(1.0)));
        let kind = if self.config.kind.is_hyperbolic() { Kind::Hwn } else { Kind::Euclidean };
        BatchDist::new(tape, kind, Flavor::Isotropic, loc, raw)
    }

    /// Decoder input: `log_𝟎(z)` without its zero time coordinate, or `z`.
    fn decoder_input(&self, tape: &Tape, z: Var) -> Result<Var> {
        if !self.config.kind.is_hyperbolic() {
            return Ok(z);
        }
        let (z0, zs) = hyper::split_time(tape, z)?;
        let g = tape.unary(UnaryOp::AcoshRatio, z0)?;
        tape.mul(g, zs)
    }

    /// Mean ELBO over the batch `x` (`[B, D]`), with `eps` of shape
    /// `[S·B, n]` supplying `S` posterior samples per row.
    pub fn elbo(&self, tape: &Tape, vars: &[Var], x: Var, eps: Var) -> Result<(Var, Var, Var)> {
        let b = tape.shape(x)[0];
        let rows = tape.shape(eps)[0];
        if b == 0 || rows % b != 0 {
            return Err(Error::dim("noise rows must be a multiple of the batch size"));
        }
        let s = rows / b;
        let q = self.posterior(tape, vars, x)?.repeated(s)?;
        let (z, lq) = q.rsample_with_log_prob(eps)?;
        let lp = self.prior(tape, rows)?.log_prob(z)?;
        let kl = tape.sub(lq, lp)?;

        let (_, dec) = self.split_vars(vars);
        let h = self.decoder_input(tape, z)?;
        let xhat = self.decoder.forward(tape, dec, h)?;
        let xr = if s == 1 {
            x
        } else {
            let idx: Vec<usize> = (0..s).flat_map(|_| 0..b).collect();
            tape.gather(x, &idx)?
        };
        let diff = tape.sub(xr, xhat)?;
        let sq = tape.square(diff)?;
        let sse = tape.sum_last(sq)?;
        let sigma = self.config.sigma_obs;
        let d = self.config.input_dim() as f64;
        let recon = tape.scale(sse, -0.5 / (sigma * sigma))?;
        let recon = tape.shift(recon, -d * (HALF_LOG_2PI + sigma.ln()))?;
        let per = tape.sub(recon, kl)?;
        Ok((tape.mean(per)?, tape.mean(recon)?, tape.mean(kl)?))
    }

    /// ELBO of `xs` without gradients, processed in chunks.
    pub fn evaluate_elbo(&self, xs: &[Vec<f64>], kl_samples: usize, rng: &mut Rng) -> Result<ElboParts> {
        let mut acc = ElboParts { elbo: 0.0, recon: 0.0, kl: 0.0 };
        let mut seen = 0usize;
        for (ci, chunk) in xs.chunks(1000).enumerate() {
            let tape = Tape::new();
            let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
            let x = tape.constant(Tensor::from_rows(chunk)?);
            let eps = tape.constant(standard_normal(rng, kl_samples * chunk.len(), self.config.latent_dim));
            let (e, r, k) = self.elbo(&tape, &vars, x, eps).map_err(|e| with_batch(e, ci))?;
            let w = chunk.len() as f64;
            acc.elbo += w * tape.item(e)?;
            acc.recon += w * tape.item(r)?;
            acc.kl += w * tape.item(k)?;
            seen += chunk.len();
        }
        let n = seen.max(1) as f64;
        Ok(ElboParts { elbo: acc.elbo / n, recon: acc.recon / n, kl: acc.kl / n })
    }

    /// Posterior means: Lorentz points (`n+1` coordinates) or `ℝⁿ` vectors.
    pub fn encode_means(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(1000) {
            let tape = Tape::new();
            let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
            let x = tape.constant(Tensor::from_rows(chunk)?);
            let q = self.posterior(&tape, &vars, x)?;
            let m = tape.value(q.mean());
            out.extend(m.rows().map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn space(&self) -> Space {
        if self.config.kind.is_hyperbolic() {
            Space::Lorentz
        } else {
            Space::Euclidean
        }
    }

    /// Correlations on the dataset's test split.
    pub fn tree_metrics(&self, data: &TreeDataset) -> Result<TreeCorrelations> {
        let test: Vec<_> = data.split(Split::Test).collect();
        let xs: Vec<Vec<f64>> = test.iter().map(|s| s.x.clone()).collect();
        let emb = self.encode_means(&xs)?;
        tree_correlations(&emb, &test, self.space(), self.config.seed)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: ModelType::Vae,
            dim: self.config.latent_dim,
            kind: self.config.kind,
            flavor: self.config.flavor,
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(config: VaeConfig, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.model != ModelType::Vae
            || ckpt.dim != config.latent_dim
            || ckpt.kind != config.kind
            || ckpt.flavor != config.flavor
        {
            return Err(Error::Config("checkpoint does not match the VAE configuration".into()));
        }
        let mut vae = Self::new(config, &mut crate::seeded_rng(0))?;
        vae.set_params(ckpt.tensors)?;
        Ok(vae)
    }
}

fn with_batch(e: Error, batch: usize) -> Error {
    match e {
        Error::Numeric { op } => Error::NumericDetail(format!("non-finite `{op}` in batch {batch}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_elbo: f64,
    pub test_elbo: f64,
    pub test_kl: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct VaeRun {
    pub vae: Vae,
    pub init_test_elbo: f64,
    pub history: Vec<EpochMetrics>,
    /// Set when training stopped on a non-finite value; `vae` then holds the
    /// last parameters that produced finite values.
    pub diverged: Option<Error>,
}

/// Adam on the negative ELBO with global-norm clipping. Every random draw
/// comes from `config.seed`; the test ELBO uses its own fixed noise stream.
pub fn train_vae(config: &VaeConfig, data: &TreeDataset) -> Result<VaeRun> {
    train_vae_with(config, data, |_| {})
}

/// [`train_vae`] with a callback after every epoch.
pub fn train_vae_with(
    config: &VaeConfig,
    data: &TreeDataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<VaeRun> {
    config.validate()?;
    if data.config.depth != config.depth {
        return Err(Error::Config(format!(
            "dataset depth {} does not match model depth {}",
            data.config.depth, config.depth
        )));
    }
    let mut rng = crate::seeded_rng(config.seed);
    let mut vae = Vae::new(config.clone(), &mut rng)?;
    let train: Vec<Vec<f64>> = data.split(Split::Train).map(|s| s.x.clone()).collect();
    let test: Vec<Vec<f64>> = data.split(Split::Test).map(|s| s.x.clone()).collect();
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let eval_seed = config.seed ^ 0x7E57_E1B0;
    let eval = |vae: &Vae| -> Result<ElboParts> {
        let xs = if test.is_empty() { &train } else { &test };
        vae.evaluate_elbo(xs, 1, &mut crate::seeded_rng(eval_seed))
    };
    let init_test_elbo = eval(&vae)?.elbo;
    let mut adam = Adam::new(vae.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let n = config.latent_dim;

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum, mut count, mut gmax) = (0.0, 0usize, 0.0f64);
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| train[i].clone()).collect();
            let eps = standard_normal(&mut rng, config.kl_samples * rows.len(), n);
            let step = (|| -> Result<(f64, Vec<Tensor>)> {
                let tape = Tape::new();
                let vars: Vec<Var> = vae.params.iter().map(|p| tape.leaf(p.clone())).collect();
                let x = tape.constant(Tensor::from_rows(&rows)?);
                let (elbo, _, _) = vae.elbo(&tape, &vars, x, tape.constant(eps))?;
                let value = tape.item(elbo)?;
                let loss = tape.neg(elbo)?;
                let g = tape.backward(loss)?;
                Ok((value, vars.iter().map(|&v| g.wrt(v)).collect()))
            })();
            let (value, mut grads) = match step {
                Ok(r) => r,
                Err(e) => {
                    let e = Error::Diverged { epoch, detail: with_batch(e, bi).to_string() };
                    return Ok(VaeRun { vae, init_test_elbo, history, diverged: Some(e) });
                }
            };
            gmax = gmax.max(clip_global_norm(&mut grads, config.clip_norm));
            adam.step(&mut vae.params, &grads, config.lr)?;
            sum += value * rows.len() as f64;
            count += rows.len();
        }
        let test_parts = match eval(&vae) {
            Ok(p) => p,
            Err(e) => {
                let e = Error::Diverged { epoch, detail: e.to_string() };
                return Ok(VaeRun { vae, init_test_elbo, history, diverged: Some(e) });
            }
        };
        let m = EpochMetrics {
            epoch,
            train_elbo: sum / count as f64,
            test_elbo: test_parts.elbo,
            test_kl: test_parts.kl,
            grad_norm: gmax,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: train {:.3} test {:.3}", m.train_elbo, m.test_elbo);
        on_epoch(&m);
        history.push(m);
    }
    Ok(VaeRun { vae, init_test_elbo, history, diverged: None })
}
