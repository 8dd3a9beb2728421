use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adrc_core::equiv::run_verification;
use adrc_core::experiments::{compute_metrics, suite_ids, SuiteConfig, SuiteResult};
use adrc_core::{builtin_suite, run_closed_loop, AdrcError, Scenario};
use anyhow::Context;
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "adrc-lab",
    version,
    about = "Run ADRC scenarios, experiment suites and design checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario file and write its trajectory CSV
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a built-in suite (or a suite file) and write CSVs and plots
    Suite {
        /// Suite id from `list-suites`, or a path to a suite file
        id: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List the built-in suite ids
    ListSuites,
    /// Check ADRC gains against the state-space design and the pole placement
    Verify {
        /// Random designs per order on top of the nominal ones
        #[arg(long, default_value_t = 200)]
        random: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Run { scenario, out } => run_scenario(&scenario, &out),
        Command::Suite { id, out } => run_suite(&id, &out),
        Command::ListSuites => {
            list_suites();
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { random, seed } => Ok(verify(random, seed)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(
                e.downcast_ref::<AdrcError>(),
                Some(AdrcError::UnknownSuite { .. })
            );
            ExitCode::from(if usage { EXIT_USAGE } else { 1 })
        }
    }
}

fn run_scenario(path: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario = Scenario::from_toml(&text)?;
    let traj = run_closed_loop(&scenario)?;
    fs::create_dir_all(out)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    let csv = out.join(format!("{stem}.csv"));
    fs::write(&csv, traj.to_csv_string())?;
    println!("wrote {} ({} rows)", csv.display(), traj.len());

    // metrics only make sense when the reference starts with a step
    if let Some([t0, r0]) = scenario.reference.0.first() {
        if let Ok(m) = compute_metrics(&traj, *t0, *r0) {
            println!(
                "settling_time={:.4} overshoot_pct={:.3} iae={:.5} u_max={:.4} steady_state_error={:.3e}",
                m.settling_time, m.overshoot_pct, m.iae, m.u_max, m.steady_state_error
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_suite(id: &str, out: &Path) -> anyhow::Result<ExitCode> {
    let path = Path::new(id);
    let cfg = if path.is_file() {
        SuiteConfig::from_file(path)?
    } else {
        builtin_suite(id)?
    };
    let dir = out.join(&cfg.id);
    let result = cfg.run()?;
    let files = result.write(&dir)?;
    print_summary(&result);
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn print_summary(result: &SuiteResult) {
    println!("{}: {}", result.id, result.description);
    for g in &result.groups {
        println!("\n  {} / {}", g.sweep, g.series);
        println!(
            "  {:>10} {:>10} {:>10} {:>10} {:>10}",
            "value", "settle", "overshoot", "iae", "u_max"
        );
        for p in &g.points {
            match &p.outcome {
                Ok(r) => println!(
                    "  {:>10} {:>10.4} {:>10.3} {:>10.5} {:>10.4}",
                    p.value,
                    r.metrics.settling_time,
                    r.metrics.overshoot_pct,
                    r.metrics.iae,
                    r.metrics.u_max
                ),
                Err(e) => println!("  {:>10} failed: {e}", p.value),
            }
        }
    }
}

fn list_suites() {
    for id in suite_ids() {
        let desc = builtin_suite(id).map(|c| c.description).unwrap_or_default();
        println!("{id:<20} {desc}");
    }
}

fn verify(random: usize, seed: u64) -> ExitCode {
    let rows = run_verification(random, seed);
    println!("{:<36} {:>6} {:>12}  result", "check", "cases", "max dev");
    for r in &rows {
        println!(
            "{:<36} {:>6} {:>12.3e}  {}",
            r.check,
            r.cases,
            r.max_deviation,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    if rows.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY_FAILED)
    }
}
