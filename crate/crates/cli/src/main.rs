mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gravnet", version, about = "N-body simulation with a graph-network acceleration surrogate")]
struct Cli {
    /// Worker threads for the parallel paths (also GRAVNET_THREADS).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set bh_fraction=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "G", value_name = "G")]
    g: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long = "history-depth")]
    history_depth: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long = "L", value_name = "L")]
    layers: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long = "train-fraction")]
    train_fraction: Option<String>,
    #[arg(long = "with-edge-attrs")]
    with_edge_attrs: bool,
    #[arg(long = "project-back")]
    project_back: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, String> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        let flags = [
            ("dt", &self.dt),
            ("G", &self.g),
            ("eps", &self.eps),
            ("steps", &self.steps),
            ("scenario", &self.scenario),
            ("n", &self.n),
            ("seed", &self.seed),
            ("k", &self.k),
            ("history_depth", &self.history_depth),
            ("d", &self.d),
            ("L", &self.layers),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("train_fraction", &self.train_fraction),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                c.set(key, v)?;
            }
        }
        if self.with_edge_attrs {
            c.with_edge_attrs = true;
        }
        if self.project_back {
            c.project_back = true;
        }
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            c.set(key.trim(), value)?;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scene and store it as a one-scene dataset.
    Simulate {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write the trajectory as CSV.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Simulate `scenes_per_size` scenes for every size in `scene_sizes`.
    GenDataset {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the surrogate on a dataset and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Write the `epoch,mean_loss,seconds` log here instead of stdout.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Mean per-frame MSE of a checkpoint on every scene of a dataset.
    Eval {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
    },
    /// Roll a checkpoint out on a fresh scene and compare with exact gravity.
    Rollout {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Seed of the generated initial condition.
        #[arg(long = "scene-seed", value_name = "SEED", default_value_t = 0)]
        scene_seed: u64,
        /// Per-step errors as CSV.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        /// Running sums of the errors as CSV.
        #[arg(long, value_name = "FILE")]
        cumulative: Option<PathBuf>,
    },
    /// Time exact versus surrogate steps for every size in `scene_sizes`.
    Bench {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Dump one scene of a dataset as per-particle CSV rows.
    ExportCsv {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<gravnet::Error> for CliError {
    fn from(e: gravnet::Error) -> Self {
        match e {
            gravnet::Error::Argument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn setup_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("GRAVNET_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("GRAVNET_THREADS must be a number, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    setup_threads(cli.threads)?;
    let cfg = |o: &Overrides| o.resolve().map_err(CliError::Usage);
    match cli.command {
        Command::Simulate { cfg: o, out, csv } => commands::simulate(&cfg(&o)?, &out, csv.as_deref()),
        Command::GenDataset { cfg: o, out } => commands::gen_dataset(&cfg(&o)?, &out),
        Command::Train { cfg: o, data, out, log } => commands::train(&cfg(&o)?, &data, &out, log.as_deref()),
        Command::Eval { model, data } => commands::eval(&model, &data),
        Command::Rollout { cfg: o, model, scene_seed, csv, cumulative } => {
            commands::rollout(&cfg(&o)?, &model, scene_seed, csv.as_deref(), cumulative.as_deref())
        }
        Command::Bench { cfg: o, model, csv } => commands::bench(&cfg(&o)?, &model, csv.as_deref()),
        Command::ExportCsv { data, scene, out } => commands::export_csv(&data, scene, &out),
    }
}

fn main() -> ExitCode {
    let keys = config::key_table();
    let mut command = Cli::command().after_help(keys.clone());
    let names: Vec<String> = command.get_subcommands().map(|s| s.get_name().to_owned()).collect();
    for name in names {
        let keys = keys.clone();
        command = command.mut_subcommand(name, |s| s.after_help(keys));
    }
    let cli = match command
        .try_get_matches_from(std::env::args_os())
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
