//! Episode objectives and per-step training rewards: cumulative profit,
//! quadratic utility, the mean-variance risk-aware objective and its
//! telescoping per-step decomposition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("return {0} is not greater than -1")]
    ReturnBelowNegOne(f64),
    #[error("empty return list")]
    EmptyReturns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    RiskAware,
    ProfitOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mode: RewardMode,
    /// Risk-aversion weight on the return variance.
    pub alpha: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { mode: RewardMode::RiskAware, alpha: 0.5 }
    }
}

/// Π(1 + R_t); 1.0 for an empty episode.
pub fn cumulative_profit(returns: &[f64]) -> Result<f64, RewardError> {
    let mut p = 1.0;
    for &r in returns {
        if r <= -1.0 {
            return Err(RewardError::ReturnBelowNegOne(r));
        }
        p *= 1.0 + r;
    }
    Ok(p)
}

/// Second-order expansion of ln(1+r) around 0.
pub fn quadratic_utility(r: f64) -> f64 {
    r - 0.5 * r * r
}

fn mean_and_population_variance(returns: &[f64]) -> (f64, f64) {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// mean(returns) - alpha * population_variance(returns).
pub fn risk_aware_objective(returns: &[f64], alpha: f64) -> Result<f64, RewardError> {
    if returns.is_empty() {
        return Err(RewardError::EmptyReturns);
    }
    let (mean, var) = mean_and_population_variance(returns);
    Ok(mean - alpha * var)
}

/// Per-step training reward over the returns observed so far (the last entry
/// is the current step's return). Risk-aware mode credits the increment of
/// the episodic objective so the undiscounted sum telescopes to it exactly;
/// profit-only mode is ln(1 + R_t).
pub fn per_step_reward(returns_so_far: &[f64], cfg: &RewardConfig) -> Result<f64, RewardError> {
    if returns_so_far.is_empty() {
        return Err(RewardError::EmptyReturns);
    }
    match cfg.mode {
        RewardMode::ProfitOnly => {
            let r = *returns_so_far.last().unwrap();
            if r <= -1.0 {
                return Err(RewardError::ReturnBelowNegOne(r));
            }
            Ok((1.0 + r).ln())
        }
        RewardMode::RiskAware => {
            let t = returns_so_far.len();
            let s_now = risk_aware_objective(returns_so_far, cfg.alpha)?;
            let s_prev = if t == 1 {
                0.0
            } else {
                risk_aware_objective(&returns_so_far[..t - 1], cfg.alpha)?
            };
            Ok(s_now - s_prev)
        }
    }
}
