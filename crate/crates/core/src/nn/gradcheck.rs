//! Central finite-difference verification of the analytic gradients.

use super::QParams;

/// Compare analytic gradients against central finite differences of
/// `loss_fn`, perturbing every parameter by ±eps. Returns the maximum
/// relative error; pairs where both gradients are below 1e-12 count as 0.
pub fn finite_difference_check(
    params: &QParams,
    analytic: &QParams,
    loss_fn: impl Fn(&QParams) -> f64,
    eps: f64,
) -> f64 {
    let flat = params.to_flat();
    let gflat = analytic.to_flat();
    let mut work = params.clone();
    let mut max_rel: f64 = 0.0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += eps;
        work.set_from_flat(&plus);
        let lp = loss_fn(&work);
        let mut minus = flat.clone();
        minus[i] -= eps;
        work.set_from_flat(&minus);
        let lm = loss_fn(&work);
        let fd = (lp - lm) / (2.0 * eps);
        let an = gflat[i];
        if fd.abs() < 1e-12 && an.abs() < 1e-12 {
            continue;
        }
        let rel = (fd - an).abs() / fd.abs().max(an.abs());
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use crate::env::Action;
    use crate::nn::{
        backward, finite_difference_check, forward_q, Dims, EncoderKind, NetInput, QParams,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_window(rng: &mut ChaCha8Rng, len: usize) -> Vec<NetInput> {
        (0..len)
            .map(|_| NetInput {
                prev_action: Action::from_index(rng.gen_range(0..3)),
                account: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..1.5)],
                prices: std::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
            })
            .collect()
    }

    /// Scalar training-style loss: squared error of one Q output.
    fn loss_and_grads(
        window: &[NetInput],
        params: &QParams,
        target: f64,
        action_idx: usize,
    ) -> (f64, QParams) {
        let (q, tape) = forward_q(window, params).unwrap();
        let err = q[action_idx] - target;
        let mut dq = [0.0; 3];
        dq[action_idx] = 2.0 * err;
        let mut grads = params.zeros_like();
        backward(&tape, params, &dq, &mut grads);
        (err * err, grads)
    }

    fn check(kind: EncoderKind, d_h: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims { d_a: 3, d_h, q_hidden: 8 };
        let params = QParams::init(kind, dims, &mut rng);
        let window_len = rng.gen_range(2..7);
        let window = random_window(&mut rng, window_len);
        let action_idx = rng.gen_range(0..3);
        let target = rng.gen_range(-1.0..1.0);
        let (_, grads) = loss_and_grads(&window, &params, target, action_idx);
        finite_difference_check(
            &params,
            &grads,
            |p| loss_and_grads(&window, p, target, action_idx).0,
            1e-4,
        )
    }

    #[test]
    fn bigru_gradients_match_finite_differences() {
        for seed in 0..5 {
            for d_h in [4, 8, 16] {
                let err = check(EncoderKind::BigruAttention, d_h, seed);
                assert!(err < 1e-4, "d_h={d_h} seed={seed}: max rel error {err}");
            }
        }
    }

    #[test]
    fn feedforward_gradients_match_finite_differences() {
        for seed in 0..5 {
            let err = check(EncoderKind::Feedforward, 8, 100 + seed);
            assert!(err < 1e-4, "seed={seed}: max rel error {err}");
        }
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = Dims { d_a: 2, d_h: 4, q_hidden: 4 };
        let params = QParams::init(EncoderKind::BigruAttention, dims, &mut rng);
        let grads = params.zeros_like();
        let err = finite_difference_check(&params, &grads, |_| 0.0, 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sign_flipped_gradient_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = Dims { d_a: 2, d_h: 4, q_hidden: 4 };
        let params = QParams::init(EncoderKind::BigruAttention, dims, &mut rng);
        let window = random_window(&mut rng, 4);
        let (_, mut grads) = loss_and_grads(&window, &params, 0.5, 1);
        // flip every gradient sign
        let flipped: Vec<f64> = grads.to_flat().iter().map(|g| -g).collect();
        grads.set_from_flat(&flipped);
        let err = finite_difference_check(
            &params,
            &grads,
            |p| loss_and_grads(&window, p, 0.5, 1).0,
            1e-5,
        );
        assert!((err - 2.0).abs() < 0.1, "expected ~2.0, got {err}");
    }

    #[test]
    fn unused_embedding_row_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = Dims { d_a: 3, d_h: 4, q_hidden: 4 };
        let params = QParams::init(EncoderKind::BigruAttention, dims, &mut rng);
        // window never contains the Short action
        let window: Vec<NetInput> = (0..4)
            .map(|i| NetInput {
                prev_action: if i % 2 == 0 { Action::Clear } else { Action::Long },
                account: [1.0, 0.0, 1.0],
                prices: [0.1 * i as f64; 6],
            })
            .collect();
        let (_, grads) = loss_and_grads(&window, &params, 0.2, 2);
        let row = grads.embed.row(Action::Short.index());
        assert!(row.iter().all(|&g| g == 0.0));
        assert!(grads.embed.row(Action::Clear.index()).iter().any(|&g| g != 0.0));
    }
}
