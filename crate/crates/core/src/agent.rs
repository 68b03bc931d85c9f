//! Double deep Q-learning over the recurrent encoder: experience collection,
//! replay of episode subsequences, DDQN targets, the training loop and greedy
//! evaluation.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvConfig, EnvError, TradingEnv};
use crate::marketdata::{log_normalize, DateRange, FeatureRow, MarketDataError, PairSeries, RollingSplit};
use crate::nn::{backward, forward_q, Adam, AdamConfig, Dims, EncoderKind, NetInput, NnError, QParams};
use crate::reward::{risk_aware_objective, per_step_reward, RewardConfig, RewardError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] MarketDataError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("non-finite loss {loss} at episode {episode}")]
    NonFiniteLoss { loss: f64, episode: usize },
    #[error("range too short to trade")]
    RangeTooShort,
    #[error("empty batch")]
    EmptyBatch,
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of the
/// total environment steps, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.05, decay_fraction: 0.5 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: usize, total_steps: usize) -> f64 {
        let decay_steps = (total_steps as f64 * self.decay_fraction).max(1.0);
        let frac = (step as f64 / decay_steps).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub epsilon: EpsilonSchedule,
    /// Hard target-network copy every this many gradient steps.
    pub target_sync_every: usize,
    /// Replay ring-buffer capacity, in episodes.
    pub replay_capacity: usize,
    /// Subsequences per gradient step.
    pub batch: usize,
    /// Length of replayed subsequences, in days.
    pub subseq_len: usize,
    pub episodes_per_rolling: usize,
    /// Episode length in trading days.
    pub episode_len: usize,
    pub encoder: EncoderKind,
    pub dims: Dims,
    pub reward: RewardConfig,
    pub seed: u64,
    /// Updates start once the replay holds this many episodes.
    pub min_replay_episodes: usize,
    /// Greedy validation evaluation every this many episodes.
    pub validate_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            lr: 1e-3,
            epsilon: EpsilonSchedule::default(),
            target_sync_every: 100,
            replay_capacity: 64,
            batch: 16,
            subseq_len: 40,
            episodes_per_rolling: 300,
            episode_len: 63,
            encoder: EncoderKind::BigruAttention,
            dims: Dims::default(),
            reward: RewardConfig::default(),
            seed: 0,
            min_replay_episodes: 5,
            validate_every: 10,
        }
    }
}

/// One stored episode: day-indexed observations plus the action taken and the
/// shaped reward received on each of the `obs.len() - 1` steps.
#[derive(Debug, Clone)]
pub struct Episode {
    pub obs: Vec<NetInput>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// A replayed subsequence: the recurrent state is always recomputed from the
/// start of `window`, never carried over from storage.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub window: &'a [NetInput],
    pub action: usize,
    pub reward: f64,
    pub next_window: &'a [NetInput],
    pub done: bool,
}

/// Argmax over Q with ties broken toward clear, then long.
pub fn greedy_action(q: &[f64; 3]) -> Action {
    let mut best = Action::Clear;
    for cand in [Action::Long, Action::Short] {
        if q[cand.index()] > q[best.index()] {
            best = cand;
        }
    }
    best
}

pub fn select_action(
    window: &[NetInput],
    params: &QParams,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<Action, NnError> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(Action::from_index(rng.gen_range(0..3)));
    }
    let (q, _) = forward_q(window, params)?;
    Ok(greedy_action(&q))
}

/// y = r for terminal transitions, else r + gamma * Q_target(next, argmax_a
/// Q_online(next, a)).
pub fn ddqn_target(
    batch: &[Transition],
    online: &QParams,
    target: &QParams,
    gamma: f64,
) -> Result<Vec<f64>, NnError> {
    batch
        .iter()
        .map(|tr| {
            if tr.done {
                return Ok(tr.reward);
            }
            let (q_online, _) = forward_q(tr.next_window, online)?;
            let a = greedy_action(&q_online).index();
            let (q_target, _) = forward_q(tr.next_window, target)?;
            Ok(tr.reward + gamma * q_target[a])
        })
        .collect()
}

/// One optimizer step on the mean squared TD error; returns the pre-step loss.
pub fn td_update(
    batch: &[Transition],
    online: &mut QParams,
    target: &QParams,
    adam: &mut Adam,
    gamma: f64,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let ys = ddqn_target(batch, online, target, gamma)?;
    let mut grads = online.zeros_like();
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for (tr, &y) in batch.iter().zip(&ys) {
        let (q, tape) = forward_q(tr.window, online)?;
        let err = q[tr.action] - y;
        loss += err * err / b;
        let mut dq = [0.0; 3];
        dq[tr.action] = 2.0 * err / b;
        backward(&tape, online, &dq, &mut grads);
    }
    if !loss.is_finite() {
        return Err(AgentError::NonFiniteLoss { loss, episode: 0 });
    }
    adam.step(online, &grads);
    Ok(loss)
}

/// Hard copy of every parameter.
pub fn sync_target(online: &QParams) -> QParams {
    online.clone()
}

/// Sample one transition; the subsequence never crosses an episode boundary.
fn sample_transition<'a>(
    replay: &'a VecDeque<Episode>,
    subseq_len: usize,
    rng: &mut impl Rng,
) -> Transition<'a> {
    let ep = &replay[rng.gen_range(0..replay.len())];
    let t = rng.gen_range(0..ep.actions.len());
    let w0 = (t + 1).saturating_sub(subseq_len);
    let n0 = (t + 2).saturating_sub(subseq_len);
    Transition {
        window: &ep.obs[w0..=t],
        action: ep.actions[t],
        reward: ep.rewards[t],
        next_window: &ep.obs[n0..=t + 1],
        done: t + 1 == ep.obs.len() - 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub steps: usize,
    pub epsilon: f64,
    pub mean_loss: f64,
    pub train_objective: f64,
    pub val_objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: QParams,
    pub log: Vec<LogRow>,
}

/// CSV schema `episode,steps,epsilon,mean_loss,train_objective,val_objective`.
pub fn write_log_csv(log: &[LogRow], path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "episode,steps,epsilon,mean_loss,train_objective,val_objective")?;
    for row in log {
        let val = row.val_objective.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{}",
            row.episode, row.steps, row.epsilon, row.mean_loss, row.train_objective, val
        )?;
    }
    Ok(())
}

/// Train on the rolling's train range with epsilon-greedy exploration and the
/// shaped per-step reward; model selection keeps the parameters with the best
/// periodic greedy validation objective.
pub fn train(
    pair: &PairSeries,
    rolling: &RollingSplit,
    env_cfg: &EnvConfig,
    cfg: &AgentConfig,
) -> Result<TrainOutput, AgentError> {
    let (t0, t1) = pair.index_range(&rolling.train);
    if t1 < t0 + 2 {
        return Err(AgentError::RangeTooShort);
    }
    let features = log_normalize(pair, &rolling.train)?;
    let ep_len = cfg.episode_len.max(2).min(t1 - t0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut online = QParams::init(cfg.encoder, cfg.dims, &mut rng);
    let mut target = online.clone();
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, online.n_params());
    let total_steps = cfg.episodes_per_rolling * (ep_len - 1);
    let mut replay: VecDeque<Episode> = VecDeque::with_capacity(cfg.replay_capacity);
    let (v0, v1) = pair.index_range(&rolling.validation);
    let mut env_step = 0usize;
    let mut grad_steps = 0usize;
    let mut best: Option<(f64, QParams)> = None;
    let mut log = Vec::with_capacity(cfg.episodes_per_rolling);

    for episode in 0..cfg.episodes_per_rolling {
        let ep_epsilon = cfg.epsilon.value(env_step, total_steps);
        let start = t0 + rng.gen_range(0..=(t1 - t0 - ep_len));
        let (mut env, obs0) = TradingEnv::new(pair, &features, start, start + ep_len - 1, *env_cfg)?;
        let mut obs = vec![NetInput::from_observation(&obs0)];
        let mut actions = Vec::with_capacity(ep_len - 1);
        let mut rewards = Vec::with_capacity(ep_len - 1);
        while !env.is_done() {
            let eps = cfg.epsilon.value(env_step, total_steps);
            let w0 = obs.len().saturating_sub(env_cfg.window_days);
            let a = select_action(&obs[w0..], &online, eps, &mut rng)?;
            let res = env.step(a)?;
            let r = per_step_reward(env.returns_so_far(), &cfg.reward)?;
            obs.push(NetInput::from_observation(&res.observation));
            actions.push(a.index());
            rewards.push(r);
            env_step += 1;
        }
        let train_objective = risk_aware_objective(env.episode_returns()?, cfg.reward.alpha)?;
        if replay.len() == cfg.replay_capacity {
            replay.pop_front();
        }
        replay.push_back(Episode { obs, actions, rewards });

        let mut losses = Vec::new();
        if replay.len() >= cfg.min_replay_episodes {
            for _ in 0..ep_len - 1 {
                let batch: Vec<Transition> = (0..cfg.batch)
                    .map(|_| sample_transition(&replay, cfg.subseq_len, &mut rng))
                    .collect();
                let loss =
                    td_update(&batch, &mut online, &target, &mut adam, cfg.gamma).map_err(|e| {
                        match e {
                            AgentError::NonFiniteLoss { loss, .. } => {
                                AgentError::NonFiniteLoss { loss, episode }
                            }
                            other => other,
                        }
                    })?;
                losses.push(loss);
                grad_steps += 1;
                if cfg.target_sync_every > 0 && grad_steps % cfg.target_sync_every == 0 {
                    target = sync_target(&online);
                }
            }
        }

        let mut val_objective = None;
        if v1 >= v0 + 2 && cfg.validate_every > 0 && (episode + 1) % cfg.validate_every == 0 {
            let (_, returns) = evaluate_indices(&online, pair, &features, v0, v1 - 1, env_cfg)?;
            let obj = risk_aware_objective(&returns, cfg.reward.alpha)?;
            val_objective = Some(obj);
            if best.as_ref().map_or(true, |(b, _)| obj > *b) {
                best = Some((obj, online.clone()));
            }
        }
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        log.push(LogRow {
            episode,
            steps: ep_len - 1,
            epsilon: ep_epsilon,
            mean_loss,
            train_objective,
            val_objective,
        });
    }
    let params = match best {
        Some((_, p)) => p,
        None => online,
    };
    Ok(TrainOutput { params, log })
}

/// Greedy rollout over the whole date range as one episode; no updates.
/// Returns the per-step actions (length = days - 1) and step profits.
pub fn evaluate(
    params: &QParams,
    pair: &PairSeries,
    features: &[FeatureRow],
    range: &DateRange,
    env_cfg: &EnvConfig,
) -> Result<(Vec<Action>, Vec<f64>), AgentError> {
    let (s, e) = pair.index_range(range);
    if e < s + 2 {
        return Err(AgentError::RangeTooShort);
    }
    evaluate_indices(params, pair, features, s, e - 1, env_cfg)
}

fn evaluate_indices(
    params: &QParams,
    pair: &PairSeries,
    features: &[FeatureRow],
    start: usize,
    end: usize,
    env_cfg: &EnvConfig,
) -> Result<(Vec<Action>, Vec<f64>), AgentError> {
    let (mut env, obs0) = TradingEnv::new(pair, features, start, end, *env_cfg)?;
    let mut obs = vec![NetInput::from_observation(&obs0)];
    let mut actions = Vec::with_capacity(end - start);
    while !env.is_done() {
        let w0 = obs.len().saturating_sub(env_cfg.window_days);
        let (q, _) = forward_q(&obs[w0..], params)?;
        let a = greedy_action(&q);
        let res = env.step(a)?;
        obs.push(NetInput::from_observation(&res.observation));
        actions.push(a);
    }
    Ok((actions, env.episode_returns()?.to_vec()))
}
