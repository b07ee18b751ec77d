use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use hyprown::datasets::{load_hypernymy, HypernymyGraph, Split, TreeConfig, TreeDataset};
use hyprown::eval::{median, MetricReport, Space, SCHEMA_VERSION};
use hyprown::geometry::{to_poincare, LorentzPoint};
use hyprown::models::{
    train_embeddings_with, train_vae_with, Checkpoint, EmbeddingTable, ModelType, Vae, VaeConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, RunConfig};
use crate::error::{io_at, read_err, read_input, usage, write_err, CliError, CliResult};
use crate::project::poincare_2d;

const EVAL_NOISE_SALT: u64 = 0x7E57_E1B0;

pub enum Data {
    Tree(TreeDataset),
    Graph(HypernymyGraph),
}

pub enum Model {
    Vae(Vae),
    Embed(EmbeddingTable),
}

pub fn load_tree(path: &Path) -> CliResult<TreeDataset> {
    let f = fs::File::open(path).map_err(|e| read_err(path)(e.into()))?;
    TreeDataset::read_csv(BufReader::new(f), None).map_err(read_err(path))
}

pub fn load_graph(path: &Path, closure: bool) -> CliResult<HypernymyGraph> {
    let g = load_hypernymy(path).map_err(read_err(path))?;
    Ok(if closure { g.transitive_closure() } else { g })
}

/// Sniffs the format from the header line: tree CSVs start with `sample_id`.
pub fn load_data(path: &Path) -> CliResult<Data> {
    let f = fs::File::open(path).map_err(|e| read_err(path)(e.into()))?;
    let mut first = String::new();
    BufReader::new(f).read_line(&mut first).map_err(io_at(path))?;
    if first.starts_with("sample_id,") {
        Ok(Data::Tree(load_tree(path)?))
    } else {
        Ok(Data::Graph(load_graph(path, true)?))
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(io_at(path))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(io_at(path))
}

// ---------------------------------------------------------------- gen-tree

pub fn gen_tree(config: TreeConfig, out: &Path, meta: Option<&Path>) -> CliResult<TreeDataset> {
    let data = TreeDataset::generate(config)?;
    let meta = meta.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("json"));
    data.save(out, &meta).map_err(write_err(out))?;
    Ok(data)
}

// ------------------------------------------------------------------- train

#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub seed: u64,
    pub model: serde_json::Value,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diverged: Option<String>,
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

fn run_data(cfg: &RunConfig, run: &Path) -> CliResult<Data> {
    match cfg.experiment {
        Experiment::TreeVae => Ok(Data::Tree(load_tree(&run.join("data.csv"))?)),
        Experiment::Embed => {
            let path = cfg.data.as_deref().ok_or_else(|| usage("embed runs need `data`"))?;
            Ok(Data::Graph(load_graph(path, cfg.transitive_closure)?))
        }
    }
}

pub fn vae_metrics(vae: &Vae, data: &TreeDataset) -> CliResult<BTreeMap<String, f64>> {
    let c = vae.tree_metrics(data)?;
    let test: Vec<Vec<f64>> = data.split(Split::Test).map(|s| s.x.clone()).collect();
    let mut rng = hyprown::seeded_rng(vae.config.seed ^ EVAL_NOISE_SALT);
    let elbo = vae.evaluate_elbo(&test, vae.config.kl_samples, &mut rng)?;
    Ok(BTreeMap::from([
        ("r_distance".into(), c.r_distance),
        ("r_depth".into(), c.r_depth),
        ("test_elbo".into(), elbo.elbo),
    ]))
}

/// Dissimilarity used to rank embedding candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankBy {
    /// Distance between means.
    Distance,
    /// Monte Carlo `KL(q_s ‖ q_t)` with this many samples.
    Kl { samples: usize, seed: u64 },
}

pub fn embed_metrics(
    table: &EmbeddingTable,
    graph: &HypernymyGraph,
    rank_by: RankBy,
) -> CliResult<BTreeMap<String, f64>> {
    let r = match rank_by {
        RankBy::Distance => table.rank_metrics(graph)?,
        RankBy::Kl { samples, seed } => table.rank_metrics_kl(graph, samples, seed)?,
    };
    let norms: Vec<f64> = (0..table.words()).map(|i| table.norm(i)).collect();
    let mut m = BTreeMap::from([
        ("mean_rank".into(), r.mean_rank),
        ("map".into(), r.map),
        ("median_norm".into(), median(&norms)),
    ]);
    if let Some(root) = graph.root() {
        m.insert("root_norm".into(), norms[root]);
    }
    Ok(m)
}

fn model_metrics(model: &Model, data: &Data, rank_by: RankBy) -> CliResult<BTreeMap<String, f64>> {
    match (model, data) {
        (Model::Vae(v), Data::Tree(d)) => vae_metrics(v, d),
        (Model::Embed(t), Data::Graph(g)) => embed_metrics(t, g, rank_by),
        _ => Err(usage("checkpoint and data are of different experiment types")),
    }
}

struct JsonLines {
    w: BufWriter<fs::File>,
    path: PathBuf,
    err: Option<std::io::Error>,
}

impl JsonLines {
    fn create(path: PathBuf) -> CliResult<Self> {
        let f = fs::File::create(&path).map_err(io_at(&path))?;
        Ok(Self { w: BufWriter::new(f), path, err: None })
    }

    fn push<T: Serialize>(&mut self, rec: &T) {
        if self.err.is_none() {
            let line = serde_json::to_string(rec).expect("epoch record serializes");
            if let Err(e) = writeln!(self.w, "{line}").and_then(|_| self.w.flush()) {
                self.err = Some(e);
            }
        }
    }

    fn finish(mut self) -> CliResult<()> {
        match self.err.take() {
            Some(e) => Err(CliError::Io { path: self.path, source: e }),
            None => self.w.flush().map_err(io_at(&self.path)),
        }
    }
}

/// Trains one seed into `run/seed-<seed>/`. A diverged run still leaves its
/// last good checkpoint and sidecar behind before the error is returned.
pub fn run_seed(cfg: &RunConfig, run: &Path, seed: u64, data: &Data) -> CliResult<BTreeMap<String, f64>> {
    let dir = seed_dir(run, seed);
    create_dir(&dir)?;
    let mut sink = JsonLines::create(dir.join("metrics.jsonl"))?;
    let (ckpt, model_cfg, metrics, diverged) = match (cfg.experiment, data) {
        (Experiment::TreeVae, Data::Tree(d)) => {
            let c = cfg.vae(seed);
            let run = train_vae_with(&c, d, |e| {
                log::info!("seed {seed} epoch {}: test elbo {:.3}", e.epoch, e.test_elbo);
                sink.push(e)
            })?;
            let metrics = match &run.diverged {
                None => vae_metrics(&run.vae, d)?,
                Some(_) => BTreeMap::new(),
            };
            (run.vae.to_checkpoint(), serde_json::to_value(&c), metrics, run.diverged)
        }
        (Experiment::Embed, Data::Graph(g)) => {
            let c = cfg.embed(seed);
            let run = train_embeddings_with(&c, g, |e| {
                log::info!("seed {seed} epoch {}: loss {:.4}", e.epoch, e.loss);
                sink.push(e)
            })?;
            let metrics = match &run.diverged {
                None => embed_metrics(&run.table, g, RankBy::Distance)?,
                Some(_) => BTreeMap::new(),
            };
            (run.table.to_checkpoint(), serde_json::to_value(&c), metrics, run.diverged)
        }
        _ => return Err(usage("data does not match the experiment type")),
    };
    sink.finish()?;
    let path = dir.join("checkpoint.bin");
    ckpt.save(&path).map_err(write_err(&path))?;
    let sidecar = Sidecar {
        schema_version: SCHEMA_VERSION,
        seed,
        model: model_cfg.map_err(hyprown::Error::from)?,
        metrics: metrics.clone(),
        diverged: diverged.as_ref().map(ToString::to_string),
    };
    let text = serde_json::to_string_pretty(&sidecar).map_err(hyprown::Error::from)?;
    write_file(&dir.join("checkpoint.json"), &(text + "\n"))?;
    match diverged {
        Some(e) => Err(e.into()),
        None => Ok(metrics),
    }
}

/// Child-process entry point used by `--parallel`.
pub fn run_seed_in(run: &Path, seed: u64) -> CliResult<()> {
    let cfg = RunConfig::load(Some(&run.join("config.toml")), toml::Table::new())?;
    let data = run_data(&cfg, run)?;
    run_seed(&cfg, run, seed, &data).map(|_| ())
}

fn read_sidecar(run: &Path, seed: u64) -> CliResult<Sidecar> {
    let path = seed_dir(run, seed).join("checkpoint.json");
    let text = read_input(&path)?;
    Ok(serde_json::from_str(&text).map_err(hyprown::Error::from)?)
}

/// Resolves, echoes the config, prepares data, trains every seed and writes
/// `report.json`. Returns the report and the first per-seed failure.
pub fn train(cfg: RunConfig, parallel: usize, verbose: bool) -> CliResult<(MetricReport, Option<CliError>)> {
    let cfg = cfg.resolve()?;
    let run = cfg.out.clone();
    // Validate inputs before touching the output directory.
    let data = match cfg.experiment {
        Experiment::TreeVae => match &cfg.data {
            Some(p) => Data::Tree(load_tree(p)?),
            None => Data::Tree(TreeDataset::generate(cfg.tree())?),
        },
        Experiment::Embed => run_data(&cfg, &run)?,
    };
    create_dir(&run)?;
    write_file(&run.join("config.toml"), &cfg.to_toml())?;
    if let Data::Tree(d) = &data {
        let csv = run.join("data.csv");
        d.save(&csv, &run.join("data.json")).map_err(write_err(&csv))?;
    }

    let mut runs = Vec::new();
    let mut failure = None;
    if parallel <= 1 {
        for &seed in &cfg.seeds {
            eprintln!("[{}] seed {seed}", cfg.label());
            match run_seed(&cfg, &run, seed, &data) {
                Ok(m) => runs.push((seed, m)),
                Err(e) => {
                    eprintln!("seed {seed}: {e}");
                    failure.get_or_insert(e);
                }
            }
        }
    } else {
        let exe = std::env::current_exe().map_err(io_at(Path::new("hyprown")))?;
        for wave in cfg.seeds.chunks(parallel) {
            let mut children = Vec::new();
            for &seed in wave {
                eprintln!("[{}] seed {seed} (process)", cfg.label());
                let mut cmd = Command::new(&exe);
                if verbose {
                    cmd.arg("--verbose");
                }
                cmd.arg("run-seed").arg("--run").arg(&run).arg("--seed").arg(seed.to_string());
                children.push((seed, cmd.spawn().map_err(io_at(&exe))?));
            }
            for (seed, mut child) in children {
                let status = child.wait().map_err(io_at(&exe))?;
                if status.success() {
                    runs.push((seed, read_sidecar(&run, seed)?.metrics));
                } else {
                    failure.get_or_insert(CliError::Child { seed, code: status.code().unwrap_or(1) });
                }
            }
        }
    }
    let report = MetricReport::from_runs(cfg.label(), &runs)?;
    write_file(&run.join("report.json"), &(report.to_json()? + "\n"))?;
    Ok((report, failure))
}

pub fn summary_lines(report: &MetricReport) -> String {
    let mut s = format!("{} (seeds {:?})\n", report.label, report.seeds);
    for (k, m) in &report.metrics {
        match m.std {
            Some(sd) => s += &format!("  {k:<12} {:.4} ± {:.4}\n", m.mean, sd),
            None => s += &format!("  {k:<12} {:.4}\n", m.mean),
        }
    }
    s
}

// -------------------------------------------------------------- eval/export

/// A model plus the data it is evaluated on.
pub struct Loaded {
    pub label: String,
    pub seed: u64,
    pub model: Model,
    pub data: Data,
}

/// `vae` overrides the configuration otherwise inferred from the checkpoint
/// and data (used for run directories, which record it).
fn load_model(ckpt_path: &Path, data: &Data, seed: u64, vae: Option<VaeConfig>) -> CliResult<Model> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(read_err(ckpt_path))?;
    match (ckpt.model, data) {
        (ModelType::Vae, Data::Tree(_)) if vae.is_some() => {
            Ok(Model::Vae(Vae::from_checkpoint(vae.unwrap(), ckpt)?))
        }
        (ModelType::Vae, Data::Tree(d)) => {
            let hidden = ckpt.tensors.first().filter(|t| t.rank() == 2).map(|t| t.shape()[1]);
            let hidden = hidden.ok_or_else(|| usage("VAE checkpoint has no encoder weights"))?;
            let mut c = VaeConfig::for_depth(d.config.depth, ckpt.kind, ckpt.flavor);
            c.latent_dim = ckpt.dim;
            c.hidden = hidden;
            c.seed = seed;
            Ok(Model::Vae(Vae::from_checkpoint(c, ckpt)?))
        }
        (ModelType::Embedding, Data::Graph(g)) => {
            let t = EmbeddingTable::from_checkpoint(ckpt)?;
            if t.words() != g.num_words() {
                return Err(usage(format!(
                    "checkpoint has {} words but the graph has {}",
                    t.words(),
                    g.num_words()
                )));
            }
            Ok(Model::Embed(t))
        }
        _ => Err(usage(format!("{} does not match the data's experiment type", ckpt_path.display()))),
    }
}

/// Loads every seed of a run directory.
pub fn load_run(run: &Path) -> CliResult<(RunConfig, Vec<Loaded>)> {
    let cfg = RunConfig::load(Some(&run.join("config.toml")), toml::Table::new())?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let data = run_data(&cfg, run)?;
        let vae = (cfg.experiment == Experiment::TreeVae).then(|| cfg.vae(seed));
        let model = load_model(&seed_dir(run, seed).join("checkpoint.bin"), &data, seed, vae)?;
        out.push(Loaded { label: cfg.label(), seed, model, data });
    }
    Ok((cfg, out))
}

pub fn load_single(ckpt: &Path, data: &Path, seed: u64) -> CliResult<Loaded> {
    let data = load_data(data)?;
    let model = load_model(ckpt, &data, seed, None)?;
    let label = match &model {
        Model::Vae(v) => format!("tree-vae-{}-{}", v.config.kind, v.config.flavor.as_str()),
        Model::Embed(t) => format!("embed-{}-{}", t.kind, t.flavor.as_str()),
    };
    Ok(Loaded { label, seed, model, data })
}

pub fn evaluate(items: &[Loaded], rank_by: RankBy) -> CliResult<MetricReport> {
    let label = items.first().map(|l| l.label.clone()).unwrap_or_default();
    let runs = items
        .iter()
        .map(|l| Ok((l.seed, model_metrics(&l.model, &l.data, rank_by)?)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(MetricReport::from_runs(label, &runs)?)
}

fn space_of(model: &Model) -> Space {
    match model {
        Model::Vae(v) => v.space(),
        Model::Embed(t) => t.space(),
    }
}

fn poincare_coords(p: &[f64], space: Space) -> CliResult<Vec<f64>> {
    Ok(match space {
        Space::Euclidean => p.to_vec(),
        Space::Lorentz => to_poincare(&LorentzPoint::new(p.to_vec())?).coords().to_vec(),
    })
}

/// Writes 2-d plotting coordinates: `word,x,y` for embeddings and
/// `sample_id,base_node,depth,split,x,y` for tree samples.
pub fn export_poincare(item: &Loaded, path: &Path, pca: bool) -> CliResult<()> {
    let space = space_of(&item.model);
    let mut s = String::new();
    match (&item.model, &item.data) {
        (Model::Embed(t), Data::Graph(g)) => {
            let xy = poincare_2d(&t.means(), space, pca)?;
            s += "word,x,y\n";
            for (i, [x, y]) in xy.iter().enumerate() {
                s += &format!("{},{x},{y}\n", g.word(i));
            }
        }
        (Model::Vae(v), Data::Tree(d)) => {
            let xs: Vec<Vec<f64>> = d.samples.iter().map(|s| s.x.clone()).collect();
            let xy = poincare_2d(&v.encode_means(&xs)?, space, pca)?;
            s += "sample_id,base_node,depth,split,x,y\n";
            for (smp, [x, y]) in d.samples.iter().zip(&xy) {
                s += &format!("{},{},{},{},{x},{y}\n", smp.id, smp.base, smp.depth, smp.split.as_str());
            }
        }
        _ => unreachable!("model and data kinds are checked on load"),
    }
    write_file(path, &s)
}

/// Full-dimensional export: the embedding CSV for tables, per-sample
/// encoded means for VAEs.
pub fn export(item: &Loaded, path: &Path) -> CliResult<()> {
    let f = fs::File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(f);
    match (&item.model, &item.data) {
        (Model::Embed(t), Data::Graph(g)) => t.write_csv(g, &mut w).map_err(write_err(path))?,
        (Model::Vae(v), Data::Tree(d)) => {
            let space = v.space();
            let xs: Vec<Vec<f64>> = d.samples.iter().map(|s| s.x.clone()).collect();
            let means = v.encode_means(&xs)?;
            let mut head = String::from("sample_id,base_node,depth,split,poincare_norm");
            for i in 1..=v.config.latent_dim {
                head += &format!(",x_{i}");
            }
            writeln!(w, "{head}").map_err(io_at(path))?;
            for (smp, m) in d.samples.iter().zip(&means) {
                let p = poincare_coords(m, space)?;
                let mut line = format!(
                    "{},{},{},{},{}",
                    smp.id,
                    smp.base,
                    smp.depth,
                    smp.split.as_str(),
                    space.norm(m)
                );
                for x in p {
                    line += &format!(",{x}");
                }
                writeln!(w, "{line}").map_err(io_at(path))?;
            }
        }
        _ => unreachable!("model and data kinds are checked on load"),
    }
    w.flush().map_err(io_at(path))
}
