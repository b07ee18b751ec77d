mod commands;
mod config;
mod error;
mod project;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyprown::datasets::{TreeConfig, DEFAULT_THETA_MAX};
use hyprown::distributions::{Flavor, Kind};

use config::{parse_sets, parse_seeds, Experiment, RunConfig};
use error::{usage, CliResult};

#[derive(Parser)]
#[command(name = "hyprown", version, about = "Hyperbolic wrapped normal experiments")]
struct Cli {
    /// Log per-epoch progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a noisy binary-tree dataset (CSV plus JSON metadata).
    GenTree(GenTreeArgs),
    /// Train a tree VAE or hypernymy embeddings over one or more seeds.
    Train(TrainArgs),
    /// Evaluate a run directory or a checkpoint against data.
    Eval(EvalArgs),
    /// Export embedding coordinates as CSV.
    Export(ExportArgs),
    #[command(hide = true)]
    RunSeed {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Args)]
struct GenTreeArgs {
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 50)]
    samples_per_node: usize,
    #[arg(long, default_value_t = DEFAULT_THETA_MAX)]
    theta_max: f64,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Metadata path (default: `--out` with a .json extension).
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

impl FromStr for Seeds {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_seeds(s).map(Seeds)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Flat TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long)]
    kind: Option<Kind>,
    #[arg(long)]
    flavor: Option<Flavor>,
    #[arg(long)]
    depth: Option<usize>,
    /// Latent or embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    kl_samples: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    /// Comma-separated seeds, e.g. `1,2,3`.
    #[arg(long)]
    seeds: Option<Seeds>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Tree CSV or hypernymy TSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run up to this many seeds as parallel processes.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Any config key, e.g. `--set burnin_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainArgs {
    /// Config file, then `--set`, then dedicated flags.
    fn overrides(&self) -> CliResult<toml::Table> {
        use toml::Value;
        let mut t = parse_sets(&self.set)?;
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                t.insert(k.into(), v);
            }
        };
        let int = |x: Option<usize>| x.map(|x| Value::Integer(x as i64));
        let float = |x: Option<f64>| x.map(Value::Float);
        let path = |x: &Option<PathBuf>| x.as_ref().map(|p| Value::String(p.display().to_string()));
        put("experiment", self.experiment.map(|e| Value::String(e.to_string())));
        put("kind", self.kind.map(|k| Value::String(k.as_str().into())));
        put("flavor", self.flavor.map(|f| Value::String(f.as_str().into())));
        put("depth", int(self.depth));
        put("dim", int(self.dim));
        put("epochs", int(self.epochs));
        put("lr", float(self.lr));
        put("batch_size", int(self.batch_size));
        put("kl_samples", int(self.kl_samples));
        put("negatives", int(self.negatives));
        put("margin", float(self.margin));
        let seeds = self.seeds.as_ref().map(|s| s.0.clone()).or(self.seed.map(|s| vec![s]));
        put("seeds", seeds.map(|s| Value::Array(s.into_iter().map(|x| Value::Integer(x as i64)).collect())));
        put("data", path(&self.data));
        put("out", path(&self.out));
        Ok(t)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Projection {
    Pca,
}

#[derive(Args)]
struct Source {
    /// Run directory written by `train`.
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    run: Option<PathBuf>,
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    data: Option<PathBuf>,
    /// Seed recorded for a bare checkpoint (also salts its ELBO noise).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Source {
    fn load(&self) -> CliResult<Vec<commands::Loaded>> {
        match (&self.run, &self.checkpoint, &self.data) {
            (Some(run), _, _) => Ok(commands::load_run(run)?.1),
            (None, Some(c), Some(d)) => Ok(vec![commands::load_single(c, d, self.seed)?]),
            _ => Err(usage("pass --run DIR or --checkpoint FILE --data FILE")),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    /// Report path (default: `<run>/eval.json`; stdout only for checkpoints).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 2-d Poincaré coordinates of the first model here.
    #[arg(long)]
    export_poincare: Option<PathBuf>,
    /// Projection for embeddings with more than two dimensions.
    #[arg(long, value_enum)]
    project: Option<Projection>,
    /// Rank hypernymy candidates by mean distance or by Monte Carlo KL.
    #[arg(long, value_enum, default_value_t = RankArg::Distance)]
    rank_by: RankArg,
    /// Samples per KL estimate for `--rank-by kl`.
    #[arg(long, default_value_t = 100)]
    rank_samples: usize,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum RankArg {
    Distance,
    Kl,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::GenTree(a) => {
            let cfg = TreeConfig {
                depth: a.depth,
                samples_per_node: a.samples_per_node,
                theta_max: a.theta_max,
                test_fraction: a.test_fraction,
                seed: a.seed,
            };
            let d = commands::gen_tree(cfg, &a.out, a.meta.as_deref())?;
            println!("{} samples over {} nodes -> {}", d.samples.len(), d.tree.len(), a.out.display());
            Ok(())
        }
        Cmd::Train(a) => {
            let cfg = RunConfig::load(a.config.as_deref(), a.overrides()?)?;
            let (report, failure) = commands::train(cfg, a.parallel, cli.verbose)?;
            print!("{}", commands::summary_lines(&report));
            failure.map_or(Ok(()), Err)
        }
        Cmd::Eval(a) => {
            let items = a.source.load()?;
            let rank_by = match a.rank_by {
                RankArg::Distance => commands::RankBy::Distance,
                RankArg::Kl => commands::RankBy::Kl { samples: a.rank_samples.max(1), seed: a.source.seed },
            };
            let report = commands::evaluate(&items, rank_by)?;
            let json = report.to_json()? + "\n";
            let out = a.out.clone().or_else(|| a.source.run.as_ref().map(|r| r.join("eval.json")));
            if let Some(p) = out {
                std::fs::write(&p, &json).map_err(error::io_at(&p))?;
            }
            if let Some(p) = &a.export_poincare {
                commands::export_poincare(&items[0], p, a.project.is_some())?;
            }
            print!("{json}");
            Ok(())
        }
        Cmd::Export(a) => {
            let items = a.source.load()?;
            commands::export(&items[0], &a.out)
        }
        Cmd::RunSeed { run, seed } => commands::run_seed_in(&run, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
