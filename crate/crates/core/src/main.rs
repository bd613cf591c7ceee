use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opinion_steer::harness::config::{ControllerConfig, ExperimentConfig, SweepConfig};
use opinion_steer::harness::emit::{write_json, write_records_csv};
use opinion_steer::harness::run::{run_experiment, run_feasibility, sweep};
use opinion_steer::{Error, Result};

#[derive(Parser)]
#[command(name = "opsteer", version, about = "Budgeted opinion steering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment (or sweep) config, JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override every random seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run any controller and write its trajectory.
    Simulate(Common),
    /// Solve the feasibility problem and verify the schedule by simulation.
    Feasibility(Common),
    /// Identification run with excitation control (`pe_probe`).
    Estimate(Common),
    /// Two-phase online control (`adaptive_online`).
    Online(Common),
    /// Gradient or budget-optimal baseline.
    Baseline(Common),
    /// Run a sweep config in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides the sweep file's `parallelism`.
        #[arg(long)]
        parallelism: Option<usize>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(&common.config)?;
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn require(cfg: &ExperimentConfig, allowed: &[&str]) -> Result<()> {
    let name = cfg.controller.name();
    if allowed.contains(&name) {
        Ok(())
    } else {
        Err(Error::ConfigInvalid {
            field: "controller.kind".into(),
            message: format!("`{name}` not valid here; expected one of {allowed:?}"),
        })
    }
}

fn single(common: &Common, allowed: Option<&[&str]>) -> Result<()> {
    let cfg = load(common)?;
    if let Some(allowed) = allowed {
        require(&cfg, allowed)?;
    }
    let rec = run_experiment(&cfg, Some(&common.out), None)?;
    write_json(&rec, create(&common.out.join("record.json"))?)?;
    println!(
        "{} {}: final_err_inf={:.6e} cost={:.6e} steps={} status={}",
        rec.run_id, rec.controller, rec.final_err_inf, rec.cumulative_cost, rec.steps, rec.status
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => single(&c, None),
        Command::Estimate(c) => single(&c, Some(&["pe_probe"])),
        Command::Online(c) => single(&c, Some(&["adaptive_online"])),
        Command::Baseline(c) => single(&c, Some(&["gradient_baseline", "budget_optimal"])),
        Command::Feasibility(c) => {
            let cfg = load(&c)?;
            if !matches!(cfg.controller, ControllerConfig::KnownAnalytic { .. }) {
                require(&cfg, &["known_analytic"])?;
            }
            let report = run_feasibility(&cfg)?;
            ensure_dir(&c.out)?;
            write_json(&report, create(&c.out.join("feasibility.json"))?)?;
            match (&report.result.schedule, &report.verification) {
                (Some(s), Some(v)) => println!(
                    "feasible: a={:.6e} b={:.6e} simulated err={:.6e} cost={:.6e}",
                    s.a(),
                    s.b(),
                    v.final_err_inf,
                    v.cumulative_cost
                ),
                _ => println!("infeasible: {:?}", report.result.infeasible_reason),
            }
            Ok(())
        }
        Command::Sweep { common, parallelism } => {
            let mut cfg = SweepConfig::load(&common.config)?;
            if let Some(s) = common.seed {
                cfg = cfg.with_seed(s);
            }
            let runs = cfg.expand();
            for (i, r) in runs.iter().enumerate() {
                r.validate().map_err(|e| match e {
                    Error::ConfigInvalid { field, message } => Error::ConfigInvalid {
                        field: format!("runs[{i}].{field}"),
                        message,
                    },
                    other => other,
                })?;
            }
            ensure_dir(&common.out)?;
            let records = sweep(&runs, parallelism.unwrap_or(cfg.parallelism), Some(&common.out))?;
            write_records_csv(&records, create(&common.out.join("sweep.csv"))?)?;
            write_json(&records, create(&common.out.join("records.json"))?)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            println!("{} runs, {} failed", records.len(), failed);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
