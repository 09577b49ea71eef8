//! Command-line front end: `asmlab <gen-data|train|eval|analyze|report>`.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{network_task, prepare_out, THREADS_ENV};
pub use config::{parse_bool, RunConfig, KEYS};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "asmlab", version, about = "Adversarial structure matching lab")]
pub struct Cli {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Extra `key=value` override (repeatable, applied last).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset and its manifests.
    GenData(GenDataArgs),
    /// Train a predictor under one regime.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Analyzer introspection and theory probes.
    Analyze(AnalyzeArgs),
    /// Compare evaluation reports (first input against each other one).
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Training samples.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub n_val: Option<String>,
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub clutter: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub regime: Option<String>,
    /// Dataset directory from `gen-data`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub max_iter: Option<String>,
    #[arg(long)]
    pub lr_s: Option<String>,
    #[arg(long)]
    pub lr_a: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long)]
    pub label: Option<String>,
    /// Score the ground truth itself.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    LossMaps,
    TopStimuli,
    TheoryProbe,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub mode: AnalyzeMode,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub analyzer: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long)]
    pub sample: Option<String>,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    /// Use the ground truth as the prediction.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report CSVs or eval output directories; the first is compared with the rest.
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
}

fn flags(pairs: &[(&str, &Option<String>)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn flag_on(key: &str, on: bool) -> Vec<(String, String)> {
    if on {
        vec![(key.to_string(), "true".to_string())]
    } else {
        Vec::new()
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
            Command::Report(_) => "report",
        }
    }

    fn overrides(&self) -> Vec<(String, String)> {
        match self {
            Command::GenData(a) => flags(&[
                ("task", &a.task),
                ("n", &a.n),
                ("n_val", &a.n_val),
                ("size", &a.size),
                ("classes", &a.classes),
                ("clutter", &a.clutter),
            ]),
            Command::Train(a) => flags(&[
                ("regime", &a.regime),
                ("data", &a.data),
                ("task", &a.task),
                ("max_iter", &a.max_iter),
                ("lr_s", &a.lr_s),
                ("lr_a", &a.lr_a),
                ("lambda", &a.lambda),
            ]),
            Command::Eval(a) => {
                let mut v = flags(&[
                    ("checkpoint", &a.checkpoint),
                    ("data", &a.data),
                    ("manifest", &a.manifest),
                    ("label", &a.label),
                ]);
                v.extend(flag_on("oracle", a.oracle));
                v
            }
            Command::Analyze(a) => {
                let mut v = flags(&[
                    ("checkpoint", &a.checkpoint),
                    ("analyzer", &a.analyzer),
                    ("data", &a.data),
                    ("manifest", &a.manifest),
                    ("sample", &a.sample),
                    ("layer", &a.layer),
                    ("filter", &a.filter),
                    ("k", &a.k),
                ]);
                v.extend(flag_on("oracle", a.oracle));
                v
            }
            Command::Report(_) => Vec::new(),
        }
    }
}

impl Cli {
    /// The config file merged with flag overrides: file, then subcommand flags, then
    /// global flags, then `--set` pairs.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in self.command.overrides() {
            cfg.set(&k, &v)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.set("out", &o.to_string_lossy())?;
        }
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        Ok(cfg)
    }

    /// Executes the command and returns its stdout text.
    pub fn execute(&self) -> Result<String> {
        let cfg = self.run_config()?;
        let out = cfg
            .get_path("out")
            .unwrap_or_else(|| PathBuf::from(format!("asmlab-{}", self.command.name())));
        let force = self.force;
        match &self.command {
            Command::GenData(_) => commands::gen_data(&cfg, &out, force),
            Command::Train(_) => commands::train(&cfg, &out, force),
            Command::Eval(_) => commands::eval(&cfg, &out, force),
            Command::Analyze(a) => match a.mode {
                AnalyzeMode::LossMaps => commands::loss_maps(&cfg, &out, force),
                AnalyzeMode::TopStimuli => commands::stimuli(&cfg, &out, force),
                AnalyzeMode::TheoryProbe => commands::probe(&cfg, &out, force),
            },
            Command::Report(r) => commands::report(&r.inputs, &out, force),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the process exit
/// code: 0 on success, 2 for configuration or usage problems, 3 for numeric failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.execute() {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
