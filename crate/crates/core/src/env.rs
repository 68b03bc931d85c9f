//! The hedged two-asset trading environment: account bookkeeping, per-step
//! market-neutral profit, observation emission and causality guarantees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::{FeatureRow, PairSeries};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode range out of bounds")]
    RangeOutOfBounds,
    #[error("episode already done")]
    EpisodeDone,
    #[error("episode not finished")]
    EpisodeNotFinished,
    #[error("net value dropped to {0}, episode bankrupt")]
    Bankrupt(f64),
}

/// long = +1 (long X, short Y), clear = 0, short = -1 (short X, long Y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Short,
    Clear,
    Long,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Short, Action::Clear, Action::Long];

    pub fn value(self) -> f64 {
        match self {
            Action::Short => -1.0,
            Action::Clear => 0.0,
            Action::Long => 1.0,
        }
    }

    /// Index into Q-value vectors (order: short, clear, long).
    pub fn index(self) -> usize {
        match self {
            Action::Short => 0,
            Action::Clear => 1,
            Action::Long => 2,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Transaction cost per unit of position change.
    pub cost: f64,
    /// Observation history length available to the agent.
    pub window_days: usize,
    pub initial_net: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { cost: 0.001, window_days: 60, initial_net: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountState {
    pub prev_action: Action,
    pub cash: f64,
    pub asset_value: f64,
    pub net_value: f64,
}

/// What the agent sees on one day: scaled account features plus the six
/// normalized price features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub prev_action: Action,
    pub cash_ratio: f64,
    pub asset_ratio: f64,
    pub net_ratio: f64,
    pub prices: FeatureRow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub step_profit: f64,
    pub done: bool,
}

/// a_prev * (r_x - r_y) - c * |a_now - a_prev|.
pub fn step_profit(a_prev: Action, a_now: Action, r_x: f64, r_y: f64, c: f64) -> f64 {
    a_prev.value() * (r_x - r_y) - c * (a_now.value() - a_prev.value()).abs()
}

/// One trading episode over a contiguous index range of an aligned pair.
/// `features` must be aligned with `pair` dates (one row per day).
pub struct TradingEnv<'a> {
    pair: &'a PairSeries,
    features: &'a [FeatureRow],
    cfg: EnvConfig,
    start: usize,
    end: usize, // inclusive final day index
    cur: usize,
    account: AccountState,
    returns: Vec<f64>,
    done: bool,
}

impl<'a> TradingEnv<'a> {
    /// Initialize an episode over days [start, end] (indices into the pair).
    /// Returns the environment and the first observation.
    pub fn new(
        pair: &'a PairSeries,
        features: &'a [FeatureRow],
        start: usize,
        end: usize,
        cfg: EnvConfig,
    ) -> Result<(Self, Observation), EnvError> {
        if start >= end || end >= pair.len() || features.len() != pair.len() {
            return Err(EnvError::RangeOutOfBounds);
        }
        let account = AccountState {
            prev_action: Action::Clear,
            cash: cfg.initial_net,
            asset_value: 0.0,
            net_value: cfg.initial_net,
        };
        let env = TradingEnv {
            pair,
            features,
            cfg,
            start,
            end,
            cur: start,
            account,
            returns: Vec::with_capacity(end - start),
            done: false,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn current_day(&self) -> usize {
        self.cur
    }

    pub fn start_day(&self) -> usize {
        self.start
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn account(&self) -> &AccountState {
        &self.account
    }

    fn observation(&self) -> Observation {
        let n0 = self.cfg.initial_net;
        Observation {
            prev_action: self.account.prev_action,
            cash_ratio: self.account.cash / n0,
            asset_ratio: self.account.asset_value / n0,
            net_ratio: self.account.net_value / n0,
            prices: self.features[self.cur],
        }
    }

    /// Advance one day: the new day's asset returns accrue to the previous
    /// position, the position change to `action` is charged at cost, and the
    /// account compounds by the step profit.
    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let next = self.cur + 1;
        let r_x = self.pair.x.rows[next].close / self.pair.x.rows[self.cur].close - 1.0;
        let r_y = self.pair.y.rows[next].close / self.pair.y.rows[self.cur].close - 1.0;
        let profit = step_profit(self.account.prev_action, action, r_x, r_y, self.cfg.cost);
        let net = self.account.net_value * (1.0 + profit);
        if net <= 0.0 {
            return Err(EnvError::Bankrupt(net));
        }
        let exposure = action.value().abs();
        self.account = AccountState {
            prev_action: action,
            cash: net * (1.0 - exposure),
            asset_value: net * exposure,
            net_value: net,
        };
        self.returns.push(profit);
        self.cur = next;
        self.done = self.cur == self.end;
        Ok(StepResult {
            observation: self.observation(),
            step_profit: profit,
            done: self.done,
        })
    }

    /// Per-day step profits of the finished episode (length = days - 1).
    pub fn episode_returns(&self) -> Result<&[f64], EnvError> {
        if !self.done {
            return Err(EnvError::EpisodeNotFinished);
        }
        Ok(&self.returns)
    }

    /// Returns collected so far, usable mid-episode for reward shaping.
    pub fn returns_so_far(&self) -> &[f64] {
        &self.returns
    }
}
