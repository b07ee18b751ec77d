use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hyprown::datasets::{TreeConfig, DEFAULT_THETA_MAX};
use hyprown::distributions::{check_combination, Flavor, Kind};
use hyprown::models::{EmbedConfig, VaeConfig};
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    TreeVae,
    Embed,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::TreeVae => "tree-vae",
            Experiment::Embed => "embed",
        })
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tree-vae" | "vae" => Ok(Experiment::TreeVae),
            "embed" => Ok(Experiment::Embed),
            _ => Err(format!("unknown experiment `{s}` (expected tree-vae or embed)")),
        }
    }
}

pub const DEFAULT_GRAPH: &str = "data/mammal_closure.tsv";

/// Flat run configuration. Optional fields default to the experiment's
/// own defaults and are filled in by [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub kind: Kind,
    pub flavor: Flavor,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Tree CSV or hypernymy TSV; tree data is generated when absent.
    pub data: Option<PathBuf>,

    // tree data
    pub depth: usize,
    pub samples_per_node: usize,
    pub theta_max: f64,
    pub test_fraction: f64,
    pub data_seed: u64,

    // shared
    /// Latent (VAE) or embedding dimension.
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub kl_samples: Option<usize>,
    pub clip_norm: f64,

    // vae
    pub hidden: Option<usize>,
    pub sigma_obs: f64,

    // embed
    pub negatives: usize,
    pub margin: f64,
    pub burnin_epochs: usize,
    pub burnin_lr: f64,
    pub full_lr: f64,
    pub init_std: f64,
    pub eval_every: usize,
    pub transitive_closure: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EmbedConfig::default();
        Self {
            experiment: Experiment::TreeVae,
            kind: Kind::Rown,
            flavor: Flavor::Diagonal,
            seeds: vec![0],
            out: PathBuf::from("runs/latest"),
            data: None,
            depth: 4,
            samples_per_node: 50,
            theta_max: DEFAULT_THETA_MAX,
            test_fraction: 0.1,
            data_seed: 0,
            dim: None,
            epochs: None,
            lr: None,
            batch_size: None,
            kl_samples: None,
            clip_norm: 10.0,
            hidden: None,
            sigma_obs: 0.01,
            negatives: e.negatives,
            margin: e.margin,
            burnin_epochs: e.burnin_epochs,
            burnin_lr: e.burnin_lr,
            full_lr: e.full_lr,
            init_std: e.init_std,
            eval_every: e.eval_every,
            transitive_closure: true,
        }
    }
}

impl RunConfig {
    /// Parses a config file's text with `overrides` (TOML key/value pairs)
    /// applied on top.
    pub fn from_toml(text: &str, overrides: toml::Table) -> CliResult<Self> {
        let mut table: toml::Table = if text.trim().is_empty() { toml::Table::new() } else { text.parse()? };
        table.extend(overrides);
        Ok(table.try_into()?)
    }

    pub fn load(path: Option<&Path>, overrides: toml::Table) -> CliResult<Self> {
        let text = match path {
            Some(p) => crate::error::read_input(p)?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Fills every optional field and validates the model settings.
    pub fn resolve(mut self) -> CliResult<Self> {
        check_combination(self.kind, self.flavor)?;
        if self.seeds.is_empty() {
            return Err(usage("seeds must not be empty"));
        }
        match self.experiment {
            Experiment::TreeVae => {
                let d = VaeConfig::for_depth(self.depth, self.kind, self.flavor);
                self.dim.get_or_insert(d.latent_dim);
                self.epochs.get_or_insert(d.epochs);
                self.lr.get_or_insert(d.lr);
                self.batch_size.get_or_insert(d.batch_size);
                self.kl_samples.get_or_insert(d.kl_samples);
                self.hidden.get_or_insert(d.hidden);
                self.tree().validate()?;
                self.vae(self.seeds[0]).validate()?;
            }
            Experiment::Embed => {
                let d = EmbedConfig::for_flavor(self.dim.unwrap_or(10), self.kind, self.flavor);
                self.dim.get_or_insert(d.dim);
                self.epochs.get_or_insert(d.epochs);
                self.lr.get_or_insert(d.lr);
                self.batch_size.get_or_insert(d.batch_size);
                self.kl_samples.get_or_insert(d.kl_samples);
                self.data.get_or_insert_with(|| PathBuf::from(DEFAULT_GRAPH));
                self.embed(self.seeds[0]).validate()?;
            }
        }
        Ok(self)
    }

    pub fn tree(&self) -> TreeConfig {
        TreeConfig {
            depth: self.depth,
            samples_per_node: self.samples_per_node,
            theta_max: self.theta_max,
            test_fraction: self.test_fraction,
            seed: self.data_seed,
        }
    }

    pub fn vae(&self, seed: u64) -> VaeConfig {
        let mut c = VaeConfig::for_depth(self.depth, self.kind, self.flavor);
        c.latent_dim = self.dim.unwrap_or(c.latent_dim);
        c.hidden = self.hidden.unwrap_or(c.hidden);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.lr = self.lr.unwrap_or(c.lr);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.kl_samples = self.kl_samples.unwrap_or(c.kl_samples);
        c.sigma_obs = self.sigma_obs;
        c.clip_norm = self.clip_norm;
        c.seed = seed;
        c
    }

    pub fn embed(&self, seed: u64) -> EmbedConfig {
        let mut c = EmbedConfig::for_flavor(self.dim.unwrap_or(10), self.kind, self.flavor);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.lr = self.lr.unwrap_or(c.lr);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.kl_samples = self.kl_samples.unwrap_or(c.kl_samples);
        c.negatives = self.negatives;
        c.margin = self.margin;
        c.burnin_epochs = self.burnin_epochs;
        c.burnin_lr = self.burnin_lr;
        c.full_lr = self.full_lr;
        c.init_std = self.init_std;
        c.clip_norm = self.clip_norm;
        c.eval_every = self.eval_every;
        c.seed = seed;
        c
    }

    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.experiment, self.kind, self.flavor.as_str())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Parses `key=value` overrides. Values are read as TOML and fall back to
/// plain strings, so `kind=rown` and `seeds=[1,2]` both work.
pub fn parse_sets(sets: &[String]) -> CliResult<toml::Table> {
    let mut t = toml::Table::new();
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("`--set {s}` is not key=value")))?;
        let k = k.trim().replace('-', "_");
        let v = v.trim();
        let value = format!("x = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("x"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        t.insert(k, value);
    }
    Ok(t)
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|_| format!("bad seed `{p}`")))
        .collect()
}
