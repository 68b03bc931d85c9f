//! Research engine for recurrent, risk-aware reinforcement learning on
//! pairs trading: data ingestion, cointegration pair selection, a hedged
//! two-asset trading environment, a Bi-GRU/attention double-Q agent,
//! rule-based baselines and a rolling backtest harness.

pub mod backtest;
pub mod baselines;
pub mod env;
pub mod experiment;
pub mod marketdata;
pub mod nn;
pub mod pairselect;
pub mod reward;
pub mod synthetic;
pub mod verify;

pub mod agent;
