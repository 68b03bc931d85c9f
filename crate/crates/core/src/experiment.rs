//! Declarative experiment runner: loads a TOML config, executes the chosen
//! method over every rolling in parallel, and renders the backtest report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{self, AgentConfig, AgentError};
use crate::backtest::{
    aggregate, episode_metrics, render_report, write_trace, BacktestReport, FailedRolling,
    MetricsConfig, MetricsError, RollingReport,
};
use crate::baselines::{bah_policy, cpm_policy, BaselineError, CpmConfig};
use crate::env::{Action, EnvConfig, EnvError, TradingEnv};
use crate::marketdata::{
    align_pair, load_eod_csv, log_normalize, make_rollings, MarketDataError, PairSeries,
    RollingSplit,
};
use crate::nn::EncoderKind;
use crate::reward::{RewardConfig, RewardMode};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] MarketDataError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("config parse: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("test range of rolling {0} is too short")]
    TestRangeTooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Credit,
    CreditNoRisk,
    CreditNoBigru,
    MlpRl,
    Cpm,
    BahLong,
    BahShort,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Credit => "credit",
            Method::CreditNoRisk => "credit_no_risk",
            Method::CreditNoBigru => "credit_no_bigru",
            Method::MlpRl => "mlp_rl",
            Method::Cpm => "cpm",
            Method::BahLong => "bah_long",
            Method::BahShort => "bah_short",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub symbol_x: String,
    pub symbol_y: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RollingConfig {
    pub window_months: u32,
    pub stride_months: u32,
    pub split: [u32; 3],
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig { window_months: 18, stride_months: 3, split: [12, 3, 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpmSettings {
    pub open_threshold: f64,
    pub stop_threshold: f64,
}

impl Default for CpmSettings {
    fn default() -> Self {
        CpmSettings { open_threshold: 1.0, stop_threshold: 2.0 }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub rolling: RollingConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub cpm: CpmSettings,
    /// When non-empty, alpha is tuned per rolling by validation objective.
    #[serde(default)]
    pub alpha_grid: Vec<f64>,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &[])
}

/// Parse config text and apply `--set key.path=value` overrides before
/// deserializing, so unknown keys are still rejected.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig, ExperimentError> {
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
    for (path, raw) in overrides {
        let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
            .ok()
            .and_then(|t: toml::Value| t.get("v").cloned())
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let mut cursor = &mut value;
        let parts: Vec<&str> = path.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cursor = cursor
                .as_table_mut()
                .ok_or_else(|| ExperimentError::Config(format!("{path}: not a table")))?
                .entry(part.to_string())
                .or_insert(toml::Value::Table(Default::default()));
        }
        cursor
            .as_table_mut()
            .ok_or_else(|| ExperimentError::Config(format!("{path}: not a table")))?
            .insert(parts.last().unwrap().to_string(), parsed);
    }
    value.try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))
}

/// Canonical hash of the fully resolved config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canon = toml::to_string(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(canon.as_bytes());
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent per-rolling RNG stream: hash(seed, rolling index).
pub fn derive_seed(seed: u64, rolling: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((rolling as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn agent_config_for(cfg: &ExperimentConfig, method: Method, seed: u64) -> AgentConfig {
    let mut a = cfg.agent.clone();
    a.seed = seed;
    a.reward = cfg.reward;
    match method {
        Method::Credit => {}
        Method::CreditNoRisk => a.reward.mode = RewardMode::ProfitOnly,
        Method::CreditNoBigru => a.encoder = EncoderKind::Feedforward,
        Method::MlpRl => {
            a.encoder = EncoderKind::Feedforward;
            a.reward.mode = RewardMode::ProfitOnly;
        }
        _ => {}
    }
    a
}

fn best_validation(log: &[agent::LogRow]) -> Option<f64> {
    log.iter().filter_map(|r| r.val_objective).fold(None, |acc, v| {
        Some(match acc {
            None => v,
            Some(a) if v > a => v,
            Some(a) => a,
        })
    })
}

struct RollingOutcome {
    report: RollingReport,
}

fn run_rolling(
    cfg: &ExperimentConfig,
    pair: &PairSeries,
    rolling: &RollingSplit,
) -> Result<RollingOutcome, ExperimentError> {
    let k = rolling.index;
    let features = log_normalize(pair, &rolling.train)?;
    let (s, e) = pair.index_range(&rolling.test);
    if e < s + 2 {
        return Err(ExperimentError::TestRangeTooShort(k));
    }
    let n = e - s;
    let rolling_dir = cfg.output_dir.join(format!("rolling_{k}"));
    std::fs::create_dir_all(&rolling_dir)?;
    let seed = derive_seed(cfg.seed, k);

    // day-indexed actions over the test range; day 0 is flat (the first
    // position takes effect at the close of day 1)
    let day_actions: Vec<Action> = match cfg.method {
        Method::BahLong => bah_policy(Action::Long, n),
        Method::BahShort => bah_policy(Action::Short, n),
        Method::Cpm => {
            let fit = CpmConfig::fit(pair, &rolling.train, cfg.cpm.open_threshold, cfg.cpm.stop_threshold)?;
            cpm_policy(pair, &rolling.test, &fit)?
        }
        _ => {
            let alphas: Vec<f64> = if cfg.alpha_grid.is_empty() {
                vec![cfg.reward.alpha]
            } else {
                cfg.alpha_grid.clone()
            };
            let mut best: Option<(f64, agent::TrainOutput)> = None;
            for &alpha in &alphas {
                let mut a_cfg = agent_config_for(cfg, cfg.method, seed);
                a_cfg.reward.alpha = alpha;
                let out = agent::train(pair, rolling, &cfg.env, &a_cfg)?;
                let score = best_validation(&out.log).unwrap_or(f64::NEG_INFINITY);
                if best.as_ref().map_or(true, |(b, _)| score > *b) {
                    best = Some((score, out));
                }
            }
            let (_, out) = best.expect("at least one alpha");
            agent::write_log_csv(&out.log, rolling_dir.join("training_log.csv"))?;
            out.params
                .save(rolling_dir.join("checkpoint.json"))
                .map_err(AgentError::Nn)?;
            let (steps, _) = agent::evaluate(&out.params, pair, &features, &rolling.test, &cfg.env)?;
            let mut day = vec![Action::Clear];
            day.extend(steps);
            day
        }
    };

    // execute the day-indexed policy on the environment
    let (mut env, _) = TradingEnv::new(pair, &features, s, e - 1, cfg.env)?;
    for &a in &day_actions[1..] {
        env.step(a)?;
    }
    let returns = env.episode_returns()?.to_vec();

    let dates: Vec<chrono::NaiveDate> = pair.dates()[s..e].to_vec();
    let r_x: Vec<f64> = (s + 1..e)
        .map(|t| pair.x.rows[t].close / pair.x.rows[t - 1].close - 1.0)
        .collect();
    let r_y: Vec<f64> = (s + 1..e)
        .map(|t| pair.y.rows[t].close / pair.y.rows[t - 1].close - 1.0)
        .collect();
    let trace_path = rolling_dir.join("trace.csv");
    write_trace(&trace_path, &dates, &day_actions, &r_x, &r_y, &returns)?;

    let metrics = episode_metrics(&returns, &day_actions, &cfg.metrics)?;
    Ok(RollingOutcome {
        report: RollingReport {
            index: k,
            metrics,
            trace_path: format!("rolling_{k}/trace.csv"),
        },
    })
}

/// Run every rolling (failures are recorded, not fatal), aggregate, and write
/// `report.json`, `aggregate.csv` and per-rolling trace files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BacktestReport, ExperimentError> {
    let x = load_eod_csv(cfg.data.dir.join(format!("{}.csv", cfg.data.symbol_x)))?;
    let y = load_eod_csv(cfg.data.dir.join(format!("{}.csv", cfg.data.symbol_y)))?;
    let pair = align_pair(&x, &y)?;
    let rollings = make_rollings(
        &pair,
        cfg.rolling.window_months,
        cfg.rolling.stride_months,
        (cfg.rolling.split[0], cfg.rolling.split[1], cfg.rolling.split[2]),
    )?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let outcomes: Vec<(usize, Result<RollingOutcome, ExperimentError>)> = rollings
        .par_iter()
        .map(|r| (r.index, run_rolling(cfg, &pair, r)))
        .collect();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (index, outcome) in outcomes {
        match outcome {
            Ok(o) => reports.push(o.report),
            Err(e) => failed.push(FailedRolling { index, reason: e.to_string() }),
        }
    }
    let report = BacktestReport {
        config_hash: config_hash(cfg),
        method: cfg.method.name().to_string(),
        aggregate: aggregate(&reports),
        rollings: reports,
        failed,
    };
    render_report(&report, &cfg.output_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{ou_pair, OuParams};
    use std::io::Write;

    pub(crate) fn write_pair_csvs(pair: &PairSeries, dir: &Path) {
        for series in [&pair.x, &pair.y] {
            let mut f = std::fs::File::create(dir.join(format!("{}.csv", series.symbol))).unwrap();
            writeln!(f, "date,open,close,volume").unwrap();
            for r in &series.rows {
                writeln!(f, "{},{},{},{}", r.date, r.open, r.close, r.volume).unwrap();
            }
        }
    }

    fn base_config(dir: &Path, method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            seed: 1,
            output_dir: dir.join("out"),
            data: DataConfig {
                dir: dir.to_path_buf(),
                symbol_x: "SYN_X".into(),
                symbol_y: "SYN_Y".into(),
            },
            rolling: RollingConfig::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            reward: RewardConfig::default(),
            metrics: MetricsConfig::default(),
            cpm: CpmSettings::default(),
            alpha_grid: vec![],
        }
    }

    #[test]
    fn parse_config_rejects_unknown_keys() {
        let text = r#"
method = "cpm"
[data]
dir = "d"
symbol_x = "A"
symbol_y = "B"
[bogus]
x = 1
"#;
        assert!(matches!(parse_config(text, &[]), Err(ExperimentError::Config(_))));
        let ok = r#"
method = "cpm"
[data]
dir = "d"
symbol_x = "A"
symbol_y = "B"
"#;
        let cfg = parse_config(ok, &[]).unwrap();
        assert_eq!(cfg.method, Method::Cpm);
        assert_eq!(cfg.rolling.window_months, 18);
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let text = r#"
method = "cpm"
[data]
dir = "d"
symbol_x = "A"
symbol_y = "B"
"#;
        let a = parse_config(text, &[]).unwrap();
        let b = parse_config(text, &[("cpm.open_threshold".into(), "1.5".into())]).unwrap();
        assert_eq!(b.cpm.open_threshold, 1.5);
        assert_ne!(config_hash(&a), config_hash(&b));
        let c = parse_config(text, &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn derived_seeds_differ_per_rolling() {
        let s: Vec<u64> = (0..11).map(|k| derive_seed(7, k)).collect();
        let unique: std::collections::HashSet<u64> = s.iter().copied().collect();
        assert_eq!(unique.len(), 11);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn bah_report_on_synthetic_pair() {
        let dir = tempfile::tempdir().unwrap();
        let pair = ou_pair(&OuParams::default(), 5);
        write_pair_csvs(&pair, dir.path());
        let cfg = base_config(dir.path(), Method::BahLong);
        let report = run_experiment(&cfg).unwrap();
        assert!(report.failed.is_empty(), "failed: {:?}", report.failed);
        assert!(!report.rollings.is_empty());
        for r in &report.rollings {
            assert_eq!(r.metrics.tt, 1);
            assert_eq!(r.metrics.abd, 0.0);
            assert!(cfg.output_dir.join(&r.trace_path).exists());
        }
        assert!(cfg.output_dir.join("report.json").exists());
        assert!(cfg.output_dir.join("aggregate.csv").exists());
    }

    #[test]
    fn cpm_report_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let pair = ou_pair(&OuParams::default(), 6);
        write_pair_csvs(&pair, dir.path());
        let cfg = base_config(dir.path(), Method::Cpm);
        run_experiment(&cfg).unwrap();
        let first = std::fs::read(cfg.output_dir.join("report.json")).unwrap();
        run_experiment(&cfg).unwrap();
        let second = std::fs::read(cfg.output_dir.join("report.json")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn missing_symbol_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_config(dir.path(), Method::Cpm);
        let err = run_experiment(&cfg).unwrap_err();
        assert!(err.to_string().contains("SYN_X"), "{err}");
    }
}
