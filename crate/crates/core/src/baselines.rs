//! Non-learned comparison policies: buy-and-hold in either direction and the
//! constant-parameters threshold method (CPM) on the z-scored log spread.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;
use crate::marketdata::{DateRange, PairSeries};
use crate::pairselect::{ols_hedge, PairSelectError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("degenerate spread: zero dispersion on the training range")]
    DegenerateSpread,
    #[error(transparent)]
    Fit(#[from] PairSelectError),
    #[error("empty range")]
    EmptyRange,
}

/// Thresholds plus the spread statistics fitted on the training range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpmConfig {
    /// Entry |z| threshold.
    pub open_threshold: f64,
    /// Stop-loss |z| threshold.
    pub stop_threshold: f64,
    pub mean: f64,
    pub std: f64,
    pub beta: f64,
}

impl CpmConfig {
    /// Fit the hedge ratio and spread statistics on the training range:
    /// spread = ln p^X - beta ln p^Y with beta from least squares.
    pub fn fit(
        pair: &PairSeries,
        train: &DateRange,
        open_threshold: f64,
        stop_threshold: f64,
    ) -> Result<CpmConfig, BaselineError> {
        let (s, e) = pair.index_range(train);
        if e <= s {
            return Err(BaselineError::EmptyRange);
        }
        let lx: Vec<f64> = pair.x.rows[s..e].iter().map(|r| r.close.ln()).collect();
        let ly: Vec<f64> = pair.y.rows[s..e].iter().map(|r| r.close.ln()).collect();
        let fit = ols_hedge(&lx, &ly)?;
        let spreads: Vec<f64> = lx.iter().zip(&ly).map(|(a, b)| a - fit.beta * b).collect();
        let mean = spreads.iter().sum::<f64>() / spreads.len() as f64;
        let var = spreads.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / spreads.len() as f64;
        if var <= 0.0 {
            return Err(BaselineError::DegenerateSpread);
        }
        Ok(CpmConfig { open_threshold, stop_threshold, mean, std: var.sqrt(), beta: fit.beta })
    }

    /// Day-indexed z-scores over `range`.
    pub fn zscores(&self, pair: &PairSeries, range: &DateRange) -> Vec<f64> {
        let (s, e) = pair.index_range(range);
        pair.x.rows[s..e]
            .iter()
            .zip(&pair.y.rows[s..e])
            .map(|(x, y)| (x.close.ln() - self.beta * y.close.ln() - self.mean) / self.std)
            .collect()
    }
}

/// Hold `direction` every day, clear on the final day.
pub fn bah_policy(direction: Action, horizon: usize) -> Vec<Action> {
    assert!(horizon >= 1, "horizon must be at least one day");
    let mut out = vec![direction; horizon - 1];
    out.push(Action::Clear);
    out
}

/// Threshold policy on a day-indexed z path. Flat: open short when
/// open < z <= stop, long when -stop <= z < -open. Positioned: clear on a
/// zero cross or the final day; stop out when |z| > stop and stay flat until
/// z re-crosses zero.
pub fn cpm_actions(z: &[f64], cfg: &CpmConfig) -> Result<Vec<Action>, BaselineError> {
    if !(cfg.std > 0.0) {
        return Err(BaselineError::DegenerateSpread);
    }
    let mut out = Vec::with_capacity(z.len());
    let mut pos = Action::Clear;
    let mut entry_sign = 0.0;
    let mut blocked_sign = 0.0; // sign at stop-out; no entries until z re-crosses 0
    for (t, &zt) in z.iter().enumerate() {
        let last = t + 1 == z.len();
        if blocked_sign != 0.0 && (zt == 0.0 || zt.signum() != blocked_sign) {
            blocked_sign = 0.0;
        }
        if pos == Action::Clear {
            if !last && blocked_sign == 0.0 {
                if zt > cfg.open_threshold && zt <= cfg.stop_threshold {
                    pos = Action::Short;
                    entry_sign = 1.0;
                } else if zt < -cfg.open_threshold && zt >= -cfg.stop_threshold {
                    pos = Action::Long;
                    entry_sign = -1.0;
                }
            }
        } else {
            let crossed = zt == 0.0 || zt.signum() != entry_sign;
            let stopped = zt.abs() > cfg.stop_threshold;
            if last || crossed || stopped {
                pos = Action::Clear;
                if stopped && !crossed {
                    blocked_sign = entry_sign;
                }
                entry_sign = 0.0;
            }
        }
        out.push(pos);
    }
    Ok(out)
}

/// CPM over the test range of an aligned pair.
pub fn cpm_policy(
    pair: &PairSeries,
    test: &DateRange,
    cfg: &CpmConfig,
) -> Result<Vec<Action>, BaselineError> {
    let z = cfg.zscores(pair, test);
    if z.is_empty() {
        return Err(BaselineError::EmptyRange);
    }
    cpm_actions(&z, cfg)
}
