//! Configuration-driven entry point: pair selection, experiment runs, the
//! built-in verification suite, and report re-rendering.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pairs_rl::backtest::{render_report, BacktestReport};
use pairs_rl::experiment::{config_hash, parse_config, run_experiment, ExperimentConfig};
use pairs_rl::marketdata::load_eod_csv;
use pairs_rl::pairselect::rank_pairs;
use pairs_rl::verify::run_checks;

/// Output root override; replaces `output_dir` from the config when set.
const OUT_ENV: &str = "PAIRS_RL_OUT";

#[derive(Parser)]
#[command(name = "pairs-rl", about = "Pairs-trading research engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank every pair of the data-directory universe by cointegration p-value.
    SelectPairs {
        #[arg(long)]
        config: PathBuf,
        /// Keep only the best N pairs.
        #[arg(long)]
        top: Option<usize>,
        /// Override config values, e.g. --set rolling.window_months=18
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the configured method over every rolling and write the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the built-in verification suite (needs no data files).
    Verify,
    /// Re-render the aggregate table from an existing report JSON.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>, String> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("override `{kv}` is not KEY=VALUE"))
        })
        .collect()
}

fn load(config: &PathBuf, set: &[String]) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| format!("{}: {e}", config.display()))?;
    let overrides = parse_overrides(set)?;
    let mut cfg = parse_config(&text, &overrides).map_err(|e| e.to_string())?;
    if let Ok(out) = std::env::var(OUT_ENV) {
        cfg.output_dir = PathBuf::from(out);
    }
    Ok(cfg)
}

fn cmd_select_pairs(config: PathBuf, top: Option<usize>, set: Vec<String>) -> Result<(), String> {
    let cfg = load(&config, &set)?;
    let mut universe = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&cfg.data.dir)
        .map_err(|e| format!("{}: {e}", cfg.data.dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    entries.sort();
    for path in entries {
        universe.push(load_eod_csv(&path).map_err(|e| format!("{}: {e}", path.display()))?);
    }
    // fit on the training range of the first rolling window
    let first = universe.first().ok_or("empty universe")?;
    let pair_for_range = pairs_rl::marketdata::align_pair(first, universe.get(1).unwrap_or(first))
        .map_err(|e| e.to_string())?;
    let rollings = pairs_rl::marketdata::make_rollings(
        &pair_for_range,
        cfg.rolling.window_months,
        cfg.rolling.stride_months,
        (cfg.rolling.split[0], cfg.rolling.split[1], cfg.rolling.split[2]),
    )
    .map_err(|e| e.to_string())?;
    let outcome = rank_pairs(&universe, &rollings[0].train).map_err(|e| e.to_string())?;
    for warning in &outcome.skipped {
        eprintln!("skipped: {warning}");
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| e.to_string())?;
    let path = cfg.output_dir.join("pairs.csv");
    let mut f = std::fs::File::create(&path).map_err(|e| e.to_string())?;
    writeln!(f, "symbol_x,symbol_y,beta,statistic,p_value,lags").map_err(|e| e.to_string())?;
    let limit = top.unwrap_or(usize::MAX);
    for p in outcome.ranked.iter().take(limit) {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            p.symbol_x, p.symbol_y, p.beta, p.result.statistic, p.result.p_value, p.result.lags
        )
        .map_err(|e| e.to_string())?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(config: PathBuf, set: Vec<String>) -> Result<(), String> {
    let cfg = load(&config, &set)?;
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    println!(
        "method {} hash {} rollings {} failed {} -> {}",
        report.method,
        config_hash(&cfg),
        report.rollings.len(),
        report.failed.len(),
        cfg.output_dir.display()
    );
    if !report.failed.is_empty() {
        for fr in &report.failed {
            eprintln!("rolling {} failed: {}", fr.index, fr.reason);
        }
        return Err("some rollings failed".into());
    }
    Ok(())
}

fn cmd_verify() -> Result<(), String> {
    let results = run_checks(false);
    let mut ok = true;
    for r in &results {
        println!("{} {:<28} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    if ok {
        Ok(())
    } else {
        Err("verification failed".into())
    }
}

fn cmd_report(report: PathBuf, out: Option<PathBuf>) -> Result<(), String> {
    let text = std::fs::read_to_string(&report).map_err(|e| format!("{}: {e}", report.display()))?;
    let parsed: BacktestReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let out_dir = out
        .or_else(|| report.parent().map(|p| p.to_path_buf()))
        .unwrap_or_else(|| PathBuf::from("."));
    render_report(&parsed, &out_dir).map_err(|e| e.to_string())?;
    println!("re-rendered into {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SelectPairs { config, top, set } => cmd_select_pairs(config, top, set),
        Command::Run { config, set } => cmd_run(config, set),
        Command::Verify => cmd_verify(),
        Command::Report { report, out } => cmd_report(report, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
