use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corrbandit_core::belief::{toy_belief, BeliefState, UpdateMode};
use corrbandit_core::env::ReplayEnv;
use corrbandit_core::harness::{run_and_emit, ExperimentConfig};
use corrbandit_core::planner::{plan, value_t1, value_t2, DominanceRegion, ExactPlan, ObservationDensity};
use corrbandit_core::{Error, ErrorClass, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "corrbandit", version, about = "Correlated Gaussian bandits: planning, policies and replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `<config stem>_out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the two-arm example exactly.
    Toy {
        #[arg(long)]
        json: bool,
    },
    /// Exact planner on a JSON belief file.
    Plan {
        #[arg(long)]
        belief: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        horizon: u64,
        /// Integrate over the predictive density instead of the belief.
        #[arg(long)]
        predictive: bool,
        #[arg(long)]
        json: bool,
    },
    /// Check a replay CSV file.
    Validate { csv: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Internal => 3,
            })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| default_out(&config));
            let results = run_and_emit(&cfg, &dir)?;
            println!("{} runs written to {}", results.len(), dir.display());
            Ok(())
        }
        Command::Toy { json } => toy(json),
        Command::Plan { belief, horizon, predictive, json } => {
            let text = fs::read_to_string(&belief)
                .map_err(|e| Error::Config(format!("{}: {e}", belief.display())))?;
            let b: BeliefState = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", belief.display())))?;
            let density = if predictive { ObservationDensity::Predictive } else { ObservationDensity::Belief };
            let p = plan(&b, horizon as usize, density)?;
            if json {
                println!("{}", plan_json(&p));
            } else {
                print_plan(&p);
            }
            Ok(())
        }
        Command::Validate { csv } => {
            let env = ReplayEnv::load(&csv)?;
            let dates = env.dates();
            println!(
                "ok: {} rows x {} arms ({} .. {})",
                env.rows(),
                env.arm_names().len(),
                dates.first().map_or("-", String::as_str),
                dates.last().map_or("-", String::as_str)
            );
            Ok(())
        }
    }
}

fn default_out(config: &Path) -> PathBuf {
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
    config.with_file_name(format!("{stem}_out"))
}

fn regions_json(regions: &[DominanceRegion]) -> serde_json::Value {
    regions
        .iter()
        .map(|r| json!({"arm": r.arm + 1, "lower": finite(r.interval.lower), "upper": finite(r.interval.upper)}))
        .collect()
}

fn finite(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Interior breakpoints of a region list.
fn thresholds(regions: &[DominanceRegion]) -> Vec<f64> {
    regions.iter().map(|r| r.interval.upper).filter(|u| u.is_finite()).collect()
}

fn plan_json(p: &ExactPlan) -> serde_json::Value {
    match p {
        ExactPlan::OneStep { value, arm } => json!({"horizon": 1, "value": value, "arm": arm + 1}),
        ExactPlan::TwoStep(t) => json!({
            "horizon": 2,
            "value": t.value,
            "first_arm": t.first_arm + 1,
            "branch_values": t.branch_values,
            "second_step": regions_json(&t.regions),
        }),
    }
}

fn describe(regions: &[DominanceRegion]) -> String {
    regions
        .iter()
        .map(|r| {
            let lo = if r.interval.lower.is_finite() { format!("{:.6}", r.interval.lower) } else { "-inf".into() };
            let hi = if r.interval.upper.is_finite() { format!("{:.6}", r.interval.upper) } else { "inf".into() };
            format!("x in ({lo}, {hi}] -> arm {}", r.arm + 1)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn print_plan(p: &ExactPlan) {
    match p {
        ExactPlan::OneStep { value, arm } => println!("horizon 1: value {value:.6}, arm {}", arm + 1),
        ExactPlan::TwoStep(t) => {
            println!("horizon 2: value {:.6}, first arm {}", t.value, t.first_arm + 1);
            for (i, v) in t.branch_values.iter().enumerate() {
                println!("  first arm {}: {v:.6}", i + 1);
            }
            println!("  second step: {}", describe(&t.regions));
        }
    }
}

fn toy(as_json: bool) -> Result<()> {
    let b = toy_belief(UpdateMode::DiagonalOnly);
    let (v1, a1) = value_t1(&b)?;
    let exact = value_t2(&b, ObservationDensity::Belief)?;
    let pred = value_t2(&b, ObservationDensity::Predictive)?;
    let branches: Vec<_> = (0..b.arms())
        .map(|i| corrbandit_core::planner::dominance_regions(&b, i))
        .collect::<Result<_>>()?;
    if as_json {
        let out = json!({
            "one_step": {"value": v1, "arm": a1 + 1},
            "branch_values": exact.branch_values,
            "thresholds": branches.iter().map(|r| thresholds(r)).collect::<Vec<_>>(),
            "second_step": branches.iter().map(|r| regions_json(r)).collect::<Vec<_>>(),
            "first_arm": exact.first_arm + 1,
            "value": exact.value,
            "predictive_branch_values": pred.branch_values,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    println!("belief: theta = [1, 0.95], Sigma = [[10, 0.2], [0.2, 50]], noise variance 0.1");
    println!("one step: value {v1}, arm {}", a1 + 1);
    for (i, (v, r)) in exact.branch_values.iter().zip(&branches).enumerate() {
        println!("two steps, first arm {}: value {v:.6}; {}", i + 1, describe(r));
    }
    println!("optimal first arm: {} (value {:.6})", exact.first_arm + 1, exact.value);
    let pv: Vec<String> = pred.branch_values.iter().map(|v| format!("{v:.6}")).collect();
    println!("predictive-density branch values: [{}]", pv.join(", "));
    Ok(())
}
