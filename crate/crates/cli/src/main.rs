use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use dysflux_core::config::PipelineConfig;
use dysflux_core::pipeline::{self, HypSource, Manifest, RunSummary};
use dysflux_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dysflux",
    version,
    about = "Disfluent speech alignment and detection from phoneme emissions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode, build 2D alignments and segment words at every order.
    Align(Common),
    /// Phoneme and word disfluency events.
    Detect(Common),
    /// Write a seeded synthetic dataset and its manifest.
    Simulate(Common),
    /// Score predictions in --out against the ground truth in --manifest.
    Evaluate(Common),
    /// Simulate (unless --manifest is given), align, detect and evaluate.
    Run(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Highest recursion order.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of `<utterance_id>.json` ASR hypotheses.
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// Utterances to simulate.
    #[arg(long, default_value_t = 100)]
    count: usize,
}

enum Failure {
    Usage(anyhow::Error),
    Core(anyhow::Error, bool),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let data = e.is_data_error();
        Failure::Core(e.into(), data)
    }
}

fn config(c: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)
            .with_context(|| format!("loading config {}", p.display()))
            .map_err(Failure::Usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(k) = c.order {
        cfg.max_order = k;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()
        .map_err(|e| Failure::Usage(anyhow::Error::new(e).context("invalid configuration")))?;
    Ok(cfg)
}

fn manifest(c: &Common) -> Result<Manifest, Failure> {
    let p = c
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::Usage(anyhow::anyhow!("--manifest is required")))?;
    Manifest::load(p)
        .with_context(|| format!("loading manifest {}", p.display()))
        .map_err(|e| Failure::Core(e, true))
}

fn summary_status(s: &RunSummary) -> Result<(), Failure> {
    if s.failed == 0 {
        return Ok(());
    }
    let msg = anyhow::anyhow!(
        "{} of {} utterances failed; see summary.json",
        s.failed,
        s.utterances.len()
    );
    Err(Failure::Core(msg, !s.has_internal_error()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Align(c) => {
            let cfg = config(&c)?;
            let s = pipeline::cmd_align(&manifest(&c)?, &cfg, &c.out)?;
            summary_status(&s)
        }
        Command::Detect(c) => {
            let cfg = config(&c)?;
            let hyp = HypSource { dir: c.hyp.clone() };
            let s = pipeline::cmd_detect(&manifest(&c)?, &cfg, &hyp, &c.out)?;
            summary_status(&s)
        }
        Command::Simulate(c) => {
            let cfg = config(&c)?;
            let m = pipeline::cmd_simulate(&cfg, c.count, &c.out)?;
            println!("{}", c.out.join(pipeline::MANIFEST_FILE).display());
            tracing::info!(utterances = m.utterances.len(), "simulated");
            Ok(())
        }
        Command::Evaluate(c) => {
            let cfg = config(&c)?;
            let r = pipeline::cmd_evaluate(&c.out, &manifest(&c)?, &cfg)?;
            println!("{}", summary_line(&r.aggregate));
            Ok(())
        }
        Command::Run(c) => {
            let cfg = config(&c)?;
            let m = match &c.manifest {
                Some(_) => Some(manifest(&c)?),
                None => None,
            };
            let hyp = HypSource { dir: c.hyp.clone() };
            let (s, report) = pipeline::cmd_run(m.as_ref(), &cfg, c.count, &hyp, &c.out)?;
            if let Some(r) = report {
                println!("{}", summary_line(&r.aggregate));
            }
            summary_status(&s)
        }
    }
}

fn summary_line(a: &pipeline::Aggregate) -> String {
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    format!(
        "per {} dper {} micro_f1 {} macro_f1 {} iwer {} ms_f1 {}",
        f(a.per),
        f(a.dper),
        f(a.micro_f1),
        f(a.macro_f1),
        f(a.iwer),
        f(a.ms_f1)
    )
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("DYSFLUX_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // a panic inside the pipeline is a bug, not bad input
    let result = std::panic::catch_unwind(|| run(cli));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Usage(e))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Ok(Err(Failure::Core(e, data))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if data { EXIT_DATA } else { EXIT_INTERNAL })
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
