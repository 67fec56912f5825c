use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use varhorse::experiment::{find_summaries, render_table, run, ExperimentConfig, RunSummary};
use varhorse::horseshoe::refine;
use varhorse::measures::{measure_sweep, rows_to_csv, Stage};

#[derive(Parser)]
#[command(name = "varhorse", version, about = "Variable-time horseshoe experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (stdout when omitted, except for `run`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "VARHORSE_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct StageArg {
    /// 1-based schedule entry.
    #[arg(long, default_value_t = 1)]
    stage: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the full schedule and writes all artifacts.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Certifies the branches of one stage and prints them as JSON.
    CertifyBranch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stage: StageArg,
    },
    /// Cylinder refinement of one stage's horseshoe as CSV.
    Refine {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stage: StageArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        depth: u64,
        #[arg(long, default_value_t = varhorse::horseshoe::DEFAULT_CAP)]
        cap: u64,
    },
    /// 3ρ check for every periodic word up to a length, as CSV.
    MeasureSweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stage: StageArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        max_word_len: u64,
    },
    /// Summary table of the runs stored under a directory.
    Report {
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
}

fn setup(common: &Common) -> Result<(ExperimentConfig, usize)> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let threads = common.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        bail!("--threads must be positive");
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("thread pool")?;
    Ok((config, threads))
}

fn stage_of(config: &ExperimentConfig, stage: usize) -> Result<(Stage<f64>, f64, usize)> {
    let Some(entry) = stage.checked_sub(1).and_then(|i| config.schedule.get(i)) else {
        bail!("stage {stage} outside 1..={}", config.schedule.len());
    };
    let family = config.family();
    let mu_ref = config.reference(&family)?;
    let st = config.source()?.stage(&family, &mu_ref, entry.rho, entry.s)?;
    Ok((st, entry.rho, entry.s))
}

fn emit(out: &Option<PathBuf>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(file);
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    find_summaries(dir)?
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).with_context(|| format!("reading {}", p.display()))
        })
        .collect()
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common } => {
            let (config, threads) = setup(&common)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&config.name));
            let summary = run(&config, &out, threads)?;
            print!("{}", render_table(std::slice::from_ref(&summary)));
            Ok(summary.pass)
        }
        Command::CertifyBranch { common, stage } => {
            let (config, _) = setup(&common)?;
            let (st, _, _) = stage_of(&config, stage.stage)?;
            emit(&common.out, "horseshoe.json", &(serde_json::to_string_pretty(&st.horseshoe)? + "\n"))?;
            Ok(true)
        }
        Command::Refine { common, stage, depth, cap } => {
            let (config, _) = setup(&common)?;
            let (st, _, _) = stage_of(&config, stage.stage)?;
            let r = refine(st.map.as_ref(), &st.horseshoe, depth as usize, cap)?;
            emit(&common.out, "refinement.csv", &r.to_csv(&st.horseshoe.rectangle)?)?;
            Ok(true)
        }
        Command::MeasureSweep { common, stage, max_word_len } => {
            let (config, _) = setup(&common)?;
            let (st, rho, s) = stage_of(&config, stage.stage)?;
            let family = config.family();
            let mu_ref = config.reference(&family)?;
            let rows = measure_sweep(st.map.as_ref(), &st.horseshoe, &family, &mu_ref, rho, s, max_word_len as usize)?;
            emit(&common.out, "measures.csv", &rows_to_csv(&rows)?)?;
            Ok(rows.iter().all(|r| r.pass))
        }
        Command::Report { dir } => {
            print!("{}", render_table(&load_summaries(&dir)?));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
