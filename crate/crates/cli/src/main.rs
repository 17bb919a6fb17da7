use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nilink_cli::{dispatch, replay, CliError, CliResult, Command, RunConfig};

#[derive(Parser)]
#[command(name = "nilink", version, about = "NIL-aware entity linking pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate a synthetic ontology and train/valid/test mentions.
    Synth(Common),
    /// Remove a fraction of entities, reconnecting parents to children.
    Prune(Common),
    /// List ids of the newer ontology absent from the older one.
    Diff(Common),
    /// Relabel splits against a pruned or older ontology.
    BuildDataset(Common),
    /// Entity and out-of-KB counts per split.
    Stats(Common),
    /// Train the bi-encoder and write the vocabulary.
    TrainBi(Common),
    /// Encode every entity, synonym and the NIL row.
    Index(Common),
    /// Train the cross-encoder or feature classifier of the method.
    TrainCross(Common),
    /// Write predictions for one split.
    Predict(Common),
    /// Score a predictions file against gold labels.
    Eval(Common),
    /// Evaluate over the candidate-count grid.
    SweepK(Common),
    /// Train, predict and evaluate in one go.
    Run(Common),
    /// Re-run a recorded command and check its outputs are byte-identical.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    work: Option<String>,
    #[arg(long)]
    ontology: Option<String>,
    #[arg(long)]
    old_ontology: Option<String>,
    #[arg(long)]
    merges: Option<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    valid: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    word_vectors: Option<String>,
    #[arg(long)]
    predictions: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    fraction: Option<String>,
    #[arg(long)]
    nil_rep: Option<String>,
    #[arg(long)]
    th_cross: Option<String>,
    #[arg(long)]
    lambda_nil: Option<String>,
}

impl Common {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    fn config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for s in &self.set {
            cfg.apply_override(s)?;
        }
        let flags = [
            ("out", &self.out),
            ("work", &self.work),
            ("ontology", &self.ontology),
            ("old_ontology", &self.old_ontology),
            ("merges", &self.merges),
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
            ("word_vectors", &self.word_vectors),
            ("predictions", &self.predictions),
            ("method", &self.method),
            ("split", &self.split),
            ("k", &self.k),
            ("seed", &self.seed),
            ("fraction", &self.fraction),
            ("nil_rep", &self.nil_rep),
            ("th_cross", &self.th_cross),
            ("lambda_nil", &self.lambda_nil),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

fn execute(sub: Sub) -> CliResult<()> {
    let (cmd, common) = match sub {
        Sub::Replay { manifest, out } => {
            replay(&manifest, &out)?;
            println!("replay of {} reproduced every output", manifest.display());
            return Ok(());
        }
        Sub::Synth(c) => (Command::Synth, c),
        Sub::Prune(c) => (Command::Prune, c),
        Sub::Diff(c) => (Command::Diff, c),
        Sub::BuildDataset(c) => (Command::BuildDataset, c),
        Sub::Stats(c) => (Command::Stats, c),
        Sub::TrainBi(c) => (Command::TrainBi, c),
        Sub::Index(c) => (Command::Index, c),
        Sub::TrainCross(c) => (Command::TrainCross, c),
        Sub::Predict(c) => (Command::Predict, c),
        Sub::Eval(c) => (Command::Eval, c),
        Sub::SweepK(c) => (Command::SweepK, c),
        Sub::Run(c) => (Command::Run, c),
    };
    let cfg = common.config()?;
    let manifest = dispatch(cmd, &cfg)?;
    let out = cfg.out_dir()?;
    for name in manifest.outputs.keys() {
        println!("{}", out.join(name).display());
    }
    for report in ["report.txt", "stats.txt", "sweep_k.txt"] {
        if manifest.outputs.contains_key(report) {
            let p = out.join(report);
            let text = std::fs::read_to_string(&p).map_err(|e| nilink_cli::error::io_err(&p, e))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { kind, msg }) => {
            eprintln!("error: {msg}");
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
