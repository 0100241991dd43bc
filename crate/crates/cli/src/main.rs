use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use seldecomp::data::{write_csv, Severity};
use seldecomp::error::{Error, ErrorKind, Result};
use seldecomp::oracle::{closed_form_effects, simulate_hsm, HSMParams};
use seldecomp::study::{fit_all, fit_hours, run_study, write_manifest, OutputDir, Study, StudyConfig, Tasks};

#[derive(Parser)]
#[command(name = "seldecomp", version, about = "Selection-corrected wage decompositions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration (study, simulator parameters or oracle pair).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, or output file for `simulate` and `oracle`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the bootstrap seed, or the draw seed for `simulate` and `oracle`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Makes this group the base of its family.
    #[arg(long, global = true)]
    base: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from the parametric selection model.
    Simulate {
        #[arg(long)]
        n: usize,
    },
    /// Fit the hours distribution regression of every group.
    FitHours,
    /// Fit both stages of every group.
    FitWages,
    /// Quantile decompositions per family.
    Decompose,
    /// Decompositions of the configured quantile ratio.
    Ratio,
    /// Difference between two families' decompositions.
    Between,
    /// Average effects of education contrasts.
    Ate,
    /// Weighted-bootstrap intervals for the decompositions.
    Bootstrap,
    /// Closed-form mean effects between two parameter sets.
    Oracle,
    /// Check every group's sample and report problems.
    Validate,
}

#[derive(Deserialize)]
struct OracleConfig {
    p1: HSMParams,
    p0: HSMParams,
    #[serde(default = "default_draws")]
    mc_draws: usize,
    #[serde(default)]
    seed: u64,
}

fn default_draws() -> usize {
    1_000_000
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Estimation => 4,
            })
        }
    }
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::Config(format!("stdout: {e}"))),
    }
}

fn load_study(cli: &Cli) -> Result<Study> {
    let path = config_path(cli)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: StudyConfig = serde_json::from_str(&text)?;
    if let Some(base) = &cli.base {
        cfg.set_base(base)?;
    }
    if let (Some(seed), Some(b)) = (cli.seed, cfg.bootstrap.as_mut()) {
        b.seed = seed;
    }
    let root = path.parent().unwrap_or(Path::new("."));
    Study::load(cfg, root)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: &Cli) -> Result<()> {
    let only = |f: fn(&mut Tasks)| {
        let mut t = Tasks::fits_only();
        f(&mut t);
        t
    };
    match &cli.command {
        Command::Simulate { n } => {
            let params: HSMParams = read_json(config_path(cli)?)?;
            let sample = simulate_hsm(&params, *n, cli.seed.unwrap_or(0))?;
            let mut buf = Vec::new();
            write_csv(&sample, &mut buf)?;
            emit(cli.out.as_deref(), &buf)
        }
        Command::Oracle => {
            let cfg: OracleConfig = read_json(config_path(cli)?)?;
            let effects = closed_form_effects(&cfg.p1, &cfg.p0, cfg.mc_draws, cli.seed.unwrap_or(cfg.seed))?;
            let mut text = serde_json::to_string_pretty(&effects)?;
            text.push('\n');
            emit(cli.out.as_deref(), text.as_bytes())
        }
        Command::Validate => {
            let study = load_study(cli)?;
            let mut errors = 0;
            for (group, report) in study.validate() {
                if report.is_empty() {
                    println!("{group}: ok");
                }
                for issue in report.issues {
                    let tag = match issue.severity {
                        Severity::Error => {
                            errors += 1;
                            "error"
                        }
                        Severity::Warning => "warning",
                    };
                    match issue.index {
                        Some(i) => println!("{group}: {tag}: {} (row {i})", issue.message),
                        None => println!("{group}: {tag}: {}", issue.message),
                    }
                }
            }
            if errors > 0 {
                return Err(Error::Data(format!("{errors} validation error(s)")));
            }
            Ok(())
        }
        Command::FitHours => {
            let study = load_study(cli)?;
            let mut out = OutputDir::create(&out_dir(cli))?;
            fit_hours(&study, &mut out)?;
            write_manifest(&study.config, &mut out).map(drop)
        }
        Command::FitWages => {
            let study = load_study(cli)?;
            let mut out = OutputDir::create(&out_dir(cli))?;
            fit_all(&study, &mut out)?;
            write_manifest(&study.config, &mut out).map(drop)
        }
        Command::Decompose => {
            let study = load_study(cli)?;
            run_study(&study, &out_dir(cli), only(|t| t.decompose = true)).map(drop)
        }
        Command::Ratio => {
            let study = load_study(cli)?;
            run_study(&study, &out_dir(cli), only(|t| t.ratio = true)).map(drop)
        }
        Command::Between => {
            let study = load_study(cli)?;
            run_study(&study, &out_dir(cli), only(|t| t.between = true)).map(drop)
        }
        Command::Ate => {
            let study = load_study(cli)?;
            run_study(&study, &out_dir(cli), only(|t| t.ate = true)).map(drop)
        }
        Command::Bootstrap => {
            let study = load_study(cli)?;
            run_study(&study, &out_dir(cli), only(|t| t.bootstrap = true)).map(drop)
        }
    }
}
