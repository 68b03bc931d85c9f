use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pairs_rl::env::{Action, EnvConfig, TradingEnv};
use pairs_rl::marketdata::{log_normalize, DateRange};
use pairs_rl::nn::{backward, forward_q, Dims, EncoderKind, NetInput, QParams};
use pairs_rl::pairselect::adf_test;
use pairs_rl::synthetic::{ou_pair, OuParams};

fn make_window(len: usize, rng: &mut impl Rng) -> Vec<NetInput> {
    (0..len)
        .map(|_| NetInput {
            prev_action: Action::ALL[rng.gen_range(0..3)],
            account: [rng.gen(), rng.gen(), rng.gen()],
            prices: std::array::from_fn(|_| rng.gen::<f64>() - 0.5),
        })
        .collect()
}

fn bench_network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = Dims::default();
    let params = QParams::init(EncoderKind::BigruAttention, dims, &mut rng);
    let window = make_window(30, &mut rng);

    c.bench_function("forward_q_bigru_w30", |b| {
        b.iter(|| forward_q(black_box(&window), black_box(&params)).unwrap())
    });

    c.bench_function("forward_backward_bigru_w30", |b| {
        let mut grads = params.clone();
        b.iter(|| {
            let (_, tape) = forward_q(black_box(&window), black_box(&params)).unwrap();
            backward(&tape, &params, &[1.0, 0.0, -1.0], &mut grads);
            black_box(&grads);
        })
    });
}

fn bench_adf(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut series = vec![0.0f64];
    for _ in 1..750 {
        let prev = *series.last().unwrap();
        series.push(0.9 * prev + rng.gen::<f64>() - 0.5);
    }
    c.bench_function("adf_test_750", |b| {
        b.iter(|| adf_test(black_box(&series), None).unwrap())
    });
}

fn bench_env(c: &mut Criterion) {
    let pair = ou_pair(&OuParams::default(), 3);
    let dates = pair.dates();
    let fit = DateRange { start: dates[0], end: dates[dates.len() - 1] };
    let features = log_normalize(&pair, &fit).unwrap();
    let cfg = EnvConfig { cost: 0.001, window_days: 30, initial_net: 1.0 };
    let end = pair.len() - 1;
    c.bench_function("env_rollout_full", |b| {
        b.iter(|| {
            let (mut env, _) = TradingEnv::new(&pair, &features, 0, end, cfg.clone()).unwrap();
            let mut i = 0usize;
            while !env.is_done() {
                let a = Action::ALL[i % 3];
                env.step(a).unwrap();
                i += 1;
            }
            black_box(env.episode_returns().unwrap().len())
        })
    });
}

criterion_group!(benches, bench_network, bench_adf, bench_env);
criterion_main!(benches);
