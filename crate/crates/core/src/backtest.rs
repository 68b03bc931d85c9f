//! Return/risk and trading-activity metrics per rolling, aggregation across
//! rollings as mean and standard deviation, and report rendering.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("too few returns ({0})")]
    TooFewReturns(usize),
    #[error("zero dispersion of returns")]
    ZeroDispersion,
    #[error("non-positive equity")]
    NonPositiveEquity,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub risk_free_daily: f64,
    pub trading_days_per_year: u32,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { risk_free_daily: 0.000085, trading_days_per_year: 252 }
    }
}

fn population_stdev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// (mean - R_f) / population stdev of daily returns.
pub fn sharpe_ratio(returns: &[f64], cfg: &MetricsConfig) -> Result<f64, MetricsError> {
    if returns.len() < 2 {
        return Err(MetricsError::TooFewReturns(returns.len()));
    }
    let sd = population_stdev(returns);
    if sd <= 0.0 {
        return Err(MetricsError::ZeroDispersion);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok((mean - cfg.risk_free_daily) / sd)
}

/// Geometric annualization: (prod(1 + R_t))^(252/n) - 1.
pub fn annualized_return(returns: &[f64], cfg: &MetricsConfig) -> Result<f64, MetricsError> {
    if returns.is_empty() {
        return Err(MetricsError::TooFewReturns(0));
    }
    let growth: f64 = returns.iter().map(|r| 1.0 + r).product();
    if growth <= 0.0 {
        return Err(MetricsError::NonPositiveEquity);
    }
    let exponent = cfg.trading_days_per_year as f64 / returns.len() as f64;
    Ok(growth.powf(exponent) - 1.0)
}

/// Largest peak-to-trough fraction of the equity curve.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd = 0.0f64;
    for &v in equity {
        peak = peak.max(v);
        mdd = mdd.max((peak - v) / peak);
    }
    mdd
}

/// Population stdev of daily returns scaled by sqrt(252).
pub fn annualized_volatility(returns: &[f64], cfg: &MetricsConfig) -> Result<f64, MetricsError> {
    if returns.len() < 2 {
        return Err(MetricsError::TooFewReturns(returns.len()));
    }
    Ok(population_stdev(returns) * (cfg.trading_days_per_year as f64).sqrt())
}

/// A trading is a maximal run of constant nonzero action (a sign flip closes
/// one trading and opens another). Returns (AHD, TT, ABD): mean holding days
/// per trading, trading count, and mean zero-gap length strictly between two
/// tradings.
pub fn trading_activity(actions: &[Action]) -> (f64, usize, f64) {
    let mut runs: Vec<usize> = Vec::new();
    let mut gaps: Vec<usize> = Vec::new();
    let mut cur: Option<(Action, usize)> = None;
    let mut gap = 0usize;
    let mut pending_gap: Option<usize> = None;
    for &a in actions {
        match (cur, a) {
            (None, Action::Clear) => gap += 1,
            (None, _) => {
                if !runs.is_empty() {
                    pending_gap = Some(gap);
                }
                gap = 0;
                cur = Some((a, 1));
            }
            (Some((held, len)), _) if a == held => cur = Some((held, len + 1)),
            (Some((_, len)), Action::Clear) => {
                runs.push(len);
                if let Some(g) = pending_gap.take() {
                    gaps.push(g);
                }
                cur = None;
                gap = 1;
            }
            (Some((_, len)), _) => {
                // sign flip: close and immediately open
                runs.push(len);
                if let Some(g) = pending_gap.take() {
                    gaps.push(g);
                }
                pending_gap = Some(0);
                cur = Some((a, 1));
            }
        }
    }
    if let Some((_, len)) = cur {
        runs.push(len);
        if let Some(g) = pending_gap.take() {
            gaps.push(g);
        }
    }
    let tt = runs.len();
    let ahd = if tt == 0 { 0.0 } else { runs.iter().sum::<usize>() as f64 / tt as f64 };
    let abd = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<usize>() as f64 / gaps.len() as f64 };
    (ahd, tt, abd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sr: f64,
    pub ar: f64,
    pub mdd: f64,
    pub av: f64,
    pub ahd: f64,
    pub tt: usize,
    pub abd: f64,
}

/// All metrics of one test episode: `returns` are the daily step profits,
/// `actions` the day-indexed positions (day 0 is flat by construction).
pub fn episode_metrics(
    returns: &[f64],
    actions: &[Action],
    cfg: &MetricsConfig,
) -> Result<Metrics, MetricsError> {
    let mut equity = Vec::with_capacity(returns.len() + 1);
    let mut net = 1.0;
    equity.push(net);
    for r in returns {
        net *= 1.0 + r;
        equity.push(net);
    }
    let (ahd, tt, abd) = trading_activity(actions);
    Ok(Metrics {
        sr: sharpe_ratio(returns, cfg)?,
        ar: annualized_return(returns, cfg)?,
        mdd: max_drawdown(&equity),
        av: annualized_volatility(returns, cfg)?,
        ahd,
        tt,
        abd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub sr: MeanStd,
    pub ar: MeanStd,
    pub mdd: MeanStd,
    pub av: MeanStd,
    pub ahd: MeanStd,
    pub tt: MeanStd,
    pub abd: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingReport {
    pub index: usize,
    pub metrics: Metrics,
    pub trace_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRolling {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config_hash: String,
    pub method: String,
    pub rollings: Vec<RollingReport>,
    pub failed: Vec<FailedRolling>,
    pub aggregate: Option<AggregateMetrics>,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

/// Per-metric mean and sample standard deviation across rollings.
pub fn aggregate(rollings: &[RollingReport]) -> Option<AggregateMetrics> {
    if rollings.is_empty() {
        return None;
    }
    let col = |f: &dyn Fn(&Metrics) -> f64| {
        mean_std(&rollings.iter().map(|r| f(&r.metrics)).collect::<Vec<f64>>())
    };
    Some(AggregateMetrics {
        sr: col(&|m| m.sr),
        ar: col(&|m| m.ar),
        mdd: col(&|m| m.mdd),
        av: col(&|m| m.av),
        ahd: col(&|m| m.ahd),
        tt: col(&|m| m.tt as f64),
        abd: col(&|m| m.abd),
    })
}

/// One row per test day: `date,action,r_x,r_y,step_profit,net_value`.
/// Day 0 carries action 0, zero returns and net 1.0.
pub fn write_trace(
    path: impl AsRef<Path>,
    dates: &[NaiveDate],
    actions: &[Action],
    r_x: &[f64],
    r_y: &[f64],
    step_profits: &[f64],
) -> Result<(), MetricsError> {
    assert_eq!(dates.len(), actions.len());
    assert_eq!(step_profits.len() + 1, dates.len());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "date,action,r_x,r_y,step_profit,net_value")?;
    let mut net = 1.0;
    for (t, date) in dates.iter().enumerate() {
        let (rx, ry, p) = if t == 0 { (0.0, 0.0, 0.0) } else { (r_x[t - 1], r_y[t - 1], step_profits[t - 1]) };
        net *= 1.0 + p;
        writeln!(f, "{},{},{},{},{},{}", date, actions[t].value() as i64, rx, ry, p, net)?;
    }
    Ok(())
}

/// Write report JSON plus an aggregate CSV table (values in the table are
/// rounded to two decimals; the JSON keeps full precision).
pub fn render_report(report: &BacktestReport, out_dir: impl AsRef<Path>) -> Result<(), MetricsError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(out_dir.join("report.json"), json)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("aggregate.csv"))?);
    writeln!(f, "method,SR,AR(%),MDD(%),AV(%),AHD,TT,ABD")?;
    if let Some(a) = &report.aggregate {
        let cell = |m: &MeanStd, scale: f64| format!("{:.2}±{:.2}", m.mean * scale, m.std * scale);
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            report.method,
            cell(&a.sr, 1.0),
            cell(&a.ar, 100.0),
            cell(&a.mdd, 100.0),
            cell(&a.av, 100.0),
            cell(&a.ahd, 1.0),
            cell(&a.tt, 1.0),
            cell(&a.abd, 1.0),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> MetricsConfig {
        MetricsConfig::default()
    }

    #[test]
    fn sharpe_fixtures() {
        let zero_rf = MetricsConfig { risk_free_daily: 0.0, ..cfg() };
        assert_eq!(sharpe_ratio(&[0.01, -0.01], &zero_rf).unwrap(), 0.0);
        assert!(matches!(sharpe_ratio(&[0.01, 0.01], &cfg()), Err(MetricsError::ZeroDispersion)));
        let sr = sharpe_ratio(&[0.002, 0.000, 0.001], &cfg()).unwrap();
        assert!((sr - 1.1207).abs() < 1e-3, "sr={sr}");
    }

    #[test]
    fn sharpe_scale_invariant_at_zero_rf() {
        let zero_rf = MetricsConfig { risk_free_daily: 0.0, ..cfg() };
        let r = [0.004, -0.002, 0.001, 0.003];
        let scaled: Vec<f64> = r.iter().map(|v| v * 3.0).collect();
        let a = sharpe_ratio(&r, &zero_rf).unwrap();
        let b = sharpe_ratio(&scaled, &zero_rf).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn annualized_return_fixtures() {
        assert_eq!(annualized_return(&vec![0.0; 252], &cfg()).unwrap(), 0.0);
        // 126 days compounding to 1.05 -> 1.05^2 - 1
        let per_day = 1.05f64.powf(1.0 / 126.0) - 1.0;
        let ar = annualized_return(&vec![per_day; 126], &cfg()).unwrap();
        assert!((ar - 0.1025).abs() < 1e-9, "ar={ar}");
        assert!(matches!(annualized_return(&[], &cfg()), Err(MetricsError::TooFewReturns(0))));
        assert!(matches!(annualized_return(&[-1.5], &cfg()), Err(MetricsError::NonPositiveEquity)));
    }

    #[test]
    fn drawdown_fixtures() {
        assert!((max_drawdown(&[1.0, 1.1, 0.99, 1.2]) - 0.1).abs() < 1e-12);
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.1, 1.5]), 0.0);
        assert_eq!(max_drawdown(&[1.0, 0.5]), 0.5);
        let scaled: Vec<f64> = [1.0, 1.1, 0.99, 1.2].iter().map(|v| v * 7.0).collect();
        assert!((max_drawdown(&scaled) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn volatility_fixtures() {
        assert_eq!(annualized_volatility(&[0.01, 0.01, 0.01], &cfg()).unwrap(), 0.0);
        let r = [0.01, -0.01, 0.01, -0.01];
        let av = annualized_volatility(&r, &cfg()).unwrap();
        assert!((av - 0.01 * 252.0f64.sqrt()).abs() < 1e-12);
        let doubled: Vec<f64> = r.iter().map(|v| v * 2.0).collect();
        assert!((annualized_volatility(&doubled, &cfg()).unwrap() - 2.0 * av).abs() < 1e-12);
    }

    fn a(vals: &[i64]) -> Vec<Action> {
        vals.iter()
            .map(|v| match v {
                1 => Action::Long,
                -1 => Action::Short,
                _ => Action::Clear,
            })
            .collect()
    }

    #[test]
    fn activity_fixtures() {
        let (ahd, tt, abd) = trading_activity(&a(&[0, 1, 1, 0, 0, -1, 0]));
        assert_eq!((ahd, tt, abd), (1.5, 2, 2.0));
        assert_eq!(trading_activity(&a(&[0, 0, 0])), (0.0, 0, 0.0));
        let (ahd, tt, abd) = trading_activity(&a(&[1, -1, 1]));
        assert_eq!((ahd, tt, abd), (1.0, 3, 0.0));
        assert_eq!(trading_activity(&[]), (0.0, 0, 0.0));
    }

    #[test]
    fn activity_identities() {
        let seqs: [&[i64]; 4] = [
            &[0, 1, 1, 0, 0, -1, 0],
            &[1, -1, 1, 0, 0, 1, 1, 0, -1, -1],
            &[0, 0, 1, 0, 1, 1, 1, 0, 0, 0, -1],
            &[1, 1, 1],
        ];
        for s in seqs {
            let actions = a(s);
            let (ahd, tt, _) = trading_activity(&actions);
            let positioned = actions.iter().filter(|x| **x != Action::Clear).count();
            assert!((ahd * tt as f64 - positioned as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_fixture() {
        let mk = |sr: f64| RollingReport {
            index: 0,
            metrics: Metrics { sr, ar: 0.1, mdd: 0.05, av: 0.2, ahd: 3.0, tt: 4, abd: 1.0 },
            trace_path: String::new(),
        };
        let agg = aggregate(&[mk(0.8), mk(1.0)]).unwrap();
        assert!((agg.sr.mean - 0.9).abs() < 1e-12);
        assert!((agg.sr.std - 0.1414).abs() < 1e-4);
        let single = aggregate(&[mk(0.8)]).unwrap();
        assert_eq!(single.sr.mean, 0.8);
        assert_eq!(single.sr.std, 0.0);
        assert!(aggregate(&[]).is_none());
    }

    #[test]
    fn report_round_trip() {
        let report = BacktestReport {
            config_hash: "abc".into(),
            method: "cpm".into(),
            rollings: vec![RollingReport {
                index: 0,
                metrics: Metrics { sr: 1.0, ar: 0.1, mdd: 0.02, av: 0.15, ahd: 2.5, tt: 3, abd: 1.0 },
                trace_path: "rolling_0/trace.csv".into(),
            }],
            failed: vec![],
            aggregate: None,
        };
        let dir = tempfile::tempdir().unwrap();
        render_report(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let loaded: BacktestReport = serde_json::from_str(&text).unwrap();
        assert_eq!(loaded, report);
    }

    #[test]
    fn trace_row_count_and_consistency() {
        use crate::synthetic::business_days;
        let dates = business_days(chrono::NaiveDate::from_ymd_opt(2020, 3, 2).unwrap(), 4);
        let actions = a(&[0, 1, 1, 0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &dates, &actions, &[0.01, 0.0, -0.01], &[0.0, 0.0, 0.0], &[0.0, 0.01, -0.003])
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("date,action"));
        assert!(lines[1].ends_with(",0,0,0,0,1"));
    }

    proptest! {
        #[test]
        fn ar_consistent_with_equity(returns in proptest::collection::vec(-0.05f64..0.05, 2..40)) {
            let c = cfg();
            let ar1 = annualized_return(&returns, &c).unwrap();
            // recompute from the compounded equity curve's per-day returns
            let mut equity = vec![1.0];
            for r in &returns { let last = *equity.last().unwrap(); equity.push(last * (1.0 + r)); }
            let rederived: Vec<f64> = equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            let ar2 = annualized_return(&rederived, &c).unwrap();
            prop_assert!((ar1 - ar2).abs() < 1e-10);
        }
    }
}
