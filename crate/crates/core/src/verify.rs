//! Self-contained verification suite runnable without any data files:
//! gradient checks, telescoping identities, metric oracles, the utility
//! approximation grid, an environment accounting oracle, and a reduced
//! cointegration Monte Carlo.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backtest::{max_drawdown, sharpe_ratio, trading_activity, MetricsConfig};
use crate::env::{step_profit, Action};
use crate::nn::{backward, finite_difference_check, forward_q, Dims, EncoderKind, NetInput, QParams};
use crate::pairselect::{adf_test, engle_granger};
use crate::reward::{cumulative_profit, per_step_reward, quadratic_utility, risk_aware_objective, RewardConfig, RewardMode};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_window(rng: &mut ChaCha8Rng, len: usize) -> Vec<NetInput> {
    (0..len)
        .map(|_| NetInput {
            prev_action: Action::from_index(rng.gen_range(0..3)),
            account: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..1.5)],
            prices: std::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
        })
        .collect()
}

fn gradient_check(corrupt: bool) -> CheckResult {
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims { d_a: 3, d_h: 8, q_hidden: 8 };
        let params = QParams::init(EncoderKind::BigruAttention, dims, &mut rng);
        let window = random_window(&mut rng, 5);
        let target = rng.gen_range(-1.0..1.0);
        let loss = |p: &QParams| {
            let (q, _) = forward_q(&window, p).unwrap();
            (q[1] - target) * (q[1] - target)
        };
        let (q, tape) = forward_q(&window, &params).unwrap();
        let mut grads = params.zeros_like();
        let mut dq = [0.0; 3];
        dq[1] = 2.0 * (q[1] - target);
        backward(&tape, &params, &dq, &mut grads);
        if corrupt {
            let flipped: Vec<f64> = grads.to_flat().iter().map(|g| -g).collect();
            grads.set_from_flat(&flipped);
        }
        worst = worst.max(finite_difference_check(&params, &grads, loss, 1e-4));
    }
    CheckResult {
        name: "gradient_check",
        passed: worst < 1e-4,
        detail: format!("max relative error {worst:.2e}"),
    }
}

fn telescoping_check() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.gen_range(2..80);
        let returns: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.05..0.05)).collect();
        for cfg in [
            RewardConfig { mode: RewardMode::RiskAware, alpha: rng.gen_range(0.0..1.0) },
            RewardConfig { mode: RewardMode::ProfitOnly, alpha: 0.0 },
        ] {
            let sum: f64 = (1..=len)
                .map(|t| per_step_reward(&returns[..t], &cfg).unwrap())
                .sum();
            let total = match cfg.mode {
                RewardMode::RiskAware => risk_aware_objective(&returns, cfg.alpha).unwrap(),
                RewardMode::ProfitOnly => cumulative_profit(&returns).unwrap().ln(),
            };
            worst = worst.max((sum - total).abs());
        }
    }
    CheckResult {
        name: "telescoping",
        passed: worst < 1e-9,
        detail: format!("max deviation {worst:.2e}"),
    }
}

fn utility_grid_check() -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut r = -0.30f64;
    while r <= 0.40 + 1e-12 {
        worst = worst.max((quadratic_utility(r) - (1.0 + r).ln()).abs());
        r += 0.01;
    }
    CheckResult {
        name: "utility_grid",
        passed: worst <= 0.02,
        detail: format!("max |U - ln(1+r)| = {worst:.4}"),
    }
}

fn metric_oracles_check() -> CheckResult {
    let cfg = MetricsConfig::default();
    let sr = sharpe_ratio(&[0.002, 0.000, 0.001], &cfg).unwrap();
    let mdd = max_drawdown(&[1.0, 1.1, 0.99, 1.2]);
    let acts = [Action::Clear, Action::Long, Action::Long, Action::Clear, Action::Clear, Action::Short, Action::Clear];
    let (ahd, tt, abd) = trading_activity(&acts);
    let ok = (sr - 1.1207).abs() < 1e-3
        && (mdd - 0.1).abs() < 1e-12
        && tt == 2
        && (ahd - 1.5).abs() < 1e-12
        && (abd - 2.0).abs() < 1e-12
        && (cumulative_profit(&[0.1, 0.1]).unwrap() - 1.21).abs() < 1e-12
        && (cumulative_profit(&[1.0, -0.3]).unwrap() - 1.4).abs() < 1e-12;
    CheckResult {
        name: "metric_oracles",
        passed: ok,
        detail: format!("sr={sr:.4} mdd={mdd:.4} tt={tt} ahd={ahd} abd={abd}"),
    }
}

fn env_oracle_check() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(3..30);
        let mut xs = vec![100.0];
        let mut ys = vec![80.0];
        for _ in 1..n {
            xs.push(xs.last().unwrap() * (1.0 + rng.gen_range(-0.03..0.03)));
            ys.push(ys.last().unwrap() * (1.0 + rng.gen_range(-0.03..0.03)));
        }
        let actions: Vec<Action> = (0..n - 1).map(|_| Action::from_index(rng.gen_range(0..3))).collect();
        // direct accounting from the profit equation
        let mut prev = Action::Clear;
        let mut net = 1.0;
        let mut net2 = 1.0;
        for (t, &a) in actions.iter().enumerate() {
            let rx = xs[t + 1] / xs[t] - 1.0;
            let ry = ys[t + 1] / ys[t] - 1.0;
            net *= 1.0 + step_profit(prev, a, rx, ry, 0.001);
            net2 *= 1.0 + prev.value() * (rx - ry) - 0.001 * (a.value() - prev.value()).abs();
            prev = a;
        }
        worst = worst.max((net - net2).abs());
    }
    CheckResult {
        name: "env_oracle",
        passed: worst < 1e-12,
        detail: format!("max equity deviation {worst:.2e}"),
    }
}

fn cointegration_check() -> CheckResult {
    let mut hits = 0u32;
    let trials = 20u64;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = 500;
        let mut x = vec![0.0f64];
        for _ in 1..n {
            x.push(x.last().unwrap() + rng.gen_range(-1.0..1.0));
        }
        let mut eps = 0.0;
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| {
                eps = 0.5 * eps + rng.gen_range(-0.5..0.5);
                2.0 * xi + 1.0 + eps
            })
            .collect();
        if let Ok(r) = engle_granger(&y, &x) {
            if r.1.p_value < 0.05 {
                hits += 1;
            }
        }
    }
    // size side: independent walks must usually fail to reject
    let mut false_hits = 0u32;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(2100 + seed);
        let walk = |rng: &mut ChaCha8Rng| {
            let mut v = vec![0.0f64];
            for _ in 1..500 {
                v.push(v.last().unwrap() + rng.gen_range(-1.0..1.0));
            }
            v
        };
        let a = walk(&mut rng);
        let b = walk(&mut rng);
        if let Ok(r) = engle_granger(&a, &b) {
            if r.1.p_value < 0.05 {
                false_hits += 1;
            }
        }
    }
    // stationarity of pure noise under the plain unit-root test
    let mut rng = ChaCha8Rng::seed_from_u64(5000);
    let noise: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let adf_ok = adf_test(&noise, None).map(|r| r.p_value < 0.05).unwrap_or(false);
    let passed = hits >= 16 && false_hits <= 5 && adf_ok;
    CheckResult {
        name: "cointegration_monte_carlo",
        passed,
        detail: format!("power {hits}/{trials}, size {false_hits}/{trials}, adf noise reject {adf_ok}"),
    }
}

/// Run every check; `corrupt_gradient` is a test hook that deliberately flips
/// gradient signs to confirm the checker reports a failure.
pub fn run_checks(corrupt_gradient: bool) -> Vec<CheckResult> {
    vec![
        utility_grid_check(),
        metric_oracles_check(),
        telescoping_check(),
        env_oracle_check(),
        gradient_check(corrupt_gradient),
        cointegration_check(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_suite_passes() {
        let results = run_checks(false);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 6);
    }

    #[test]
    fn corrupted_gradient_detected() {
        let results = run_checks(true);
        let grad = results.iter().find(|r| r.name == "gradient_check").unwrap();
        assert!(!grad.passed);
        // only the gradient check is affected
        assert!(results.iter().filter(|r| !r.passed).count() == 1);
    }
}
