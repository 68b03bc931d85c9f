//! Exact reverse-mode gradients through the Q head, temporal attention, both
//! GRU directions and the embedding rows touched by the window.

use super::forward::{EncoderTape, GruStepCache, Tape};
use super::mat::add_vec;
use super::{EncoderParams, GruWeights, QParams};

/// One GRU cell backward step. Accumulates weight gradients into `gw` and
/// returns (d h_prev, d x).
fn gru_step_backward(
    w: &GruWeights,
    cache: &GruStepCache,
    dh: &[f64],
    gw: &mut GruWeights,
) -> (Vec<f64>, Vec<f64>) {
    let h = w.hidden();
    let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * cache.z[i]).collect();
    let dn: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - cache.z[i])).collect();
    let dz: Vec<f64> = (0..h).map(|i| dh[i] * (cache.h_prev[i] - cache.n[i])).collect();

    // candidate path
    let da_n: Vec<f64> = (0..h).map(|i| dn[i] * (1.0 - cache.n[i] * cache.n[i])).collect();
    let gated: Vec<f64> = (0..h).map(|i| cache.r[i] * cache.h_prev[i]).collect();
    gw.wn.add_outer(&da_n, &cache.x);
    gw.un.add_outer(&da_n, &gated);
    add_vec(&mut gw.bn, &da_n);
    let dgated = w.un.matvec_t(&da_n);
    let dr: Vec<f64> = (0..h).map(|i| dgated[i] * cache.h_prev[i]).collect();
    for i in 0..h {
        dh_prev[i] += dgated[i] * cache.r[i];
    }

    // update gate
    let da_z: Vec<f64> = (0..h).map(|i| dz[i] * cache.z[i] * (1.0 - cache.z[i])).collect();
    gw.wz.add_outer(&da_z, &cache.x);
    gw.uz.add_outer(&da_z, &cache.h_prev);
    add_vec(&mut gw.bz, &da_z);
    add_vec(&mut dh_prev, &w.uz.matvec_t(&da_z));

    // reset gate
    let da_r: Vec<f64> = (0..h).map(|i| dr[i] * cache.r[i] * (1.0 - cache.r[i])).collect();
    gw.wr.add_outer(&da_r, &cache.x);
    gw.ur.add_outer(&da_r, &cache.h_prev);
    add_vec(&mut gw.br, &da_r);
    add_vec(&mut dh_prev, &w.ur.matvec_t(&da_r));

    let mut dx = w.wz.matvec_t(&da_z);
    add_vec(&mut dx, &w.wr.matvec_t(&da_r));
    add_vec(&mut dx, &w.wn.matvec_t(&da_n));
    (dh_prev, dx)
}

/// Accumulate the gradients of a scalar loss with gradient `dq` at the final
/// Q output into `grads` (same structure as `params`, typically zeroed).
pub fn backward(tape: &Tape, params: &QParams, dq: &[f64; 3], grads: &mut QParams) {
    let d_h = params.dims.d_h;
    let d_a = params.dims.d_a;

    // Q head
    grads.q_w2.add_outer(dq, &tape.q_y1);
    add_vec(&mut grads.q_b2, dq);
    let dy1 = params.q_w2.matvec_t(dq);
    let da1: Vec<f64> = dy1
        .iter()
        .zip(&tape.q_a1)
        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
        .collect();
    grads.q_w1.add_outer(&da1, &tape.h_hat);
    add_vec(&mut grads.q_b1, &da1);
    let dh_hat = params.q_w1.matvec_t(&da1);

    let dxs: Vec<Vec<f64>> = match (&tape.encoder, &params.encoder, &mut grads.encoder) {
        (
            EncoderTape::BiGru { xs, fwd_caches, bwd_caches, hs, attn_weights },
            EncoderParams::BiGru { fwd, bwd },
            EncoderParams::BiGru { fwd: gfwd, bwd: gbwd },
        ) => {
            let len = hs.len();
            let mut dh: Vec<Vec<f64>> = vec![vec![0.0; d_h]; len];
            add_vec(&mut dh[len - 1], &dh_hat[..d_h]);
            let dc = &dh_hat[d_h..];
            if len > 1 {
                let scale = (d_h as f64).sqrt();
                let da: Vec<f64> = (0..len - 1)
                    .map(|i| dc.iter().zip(&hs[i]).map(|(a, b)| a * b).sum())
                    .collect();
                let wsum: f64 = attn_weights.iter().zip(&da).map(|(w, g)| w * g).sum();
                let ds: Vec<f64> = attn_weights
                    .iter()
                    .zip(&da)
                    .map(|(w, g)| w * (g - wsum))
                    .collect();
                for i in 0..len - 1 {
                    for k in 0..d_h {
                        dh[len - 1][k] += ds[i] * hs[i][k] / scale;
                        dh[i][k] += ds[i] * hs[len - 1][k] / scale + attn_weights[i] * dc[k];
                    }
                }
            }
            let half = d_h / 2;
            let mut dxs = vec![vec![0.0; params.dims.input_dim()]; len];
            // forward direction: reverse over time
            let mut carry = vec![0.0; half];
            for t in (0..len).rev() {
                let mut d: Vec<f64> = dh[t][..half].to_vec();
                add_vec(&mut d, &carry);
                let (prev, dx) = gru_step_backward(fwd, &fwd_caches[t], &d, gfwd);
                carry = prev;
                add_vec(&mut dxs[t], &dx);
            }
            // backward direction processed positions len-1..0; its "previous"
            // hidden state lives at t+1, so reverse-mode walks t ascending
            let mut carry = vec![0.0; half];
            for t in 0..len {
                let mut d: Vec<f64> = dh[t][half..].to_vec();
                add_vec(&mut d, &carry);
                let cache = &bwd_caches[len - 1 - t];
                let (prev, dx) = gru_step_backward(bwd, cache, &d, gbwd);
                carry = prev;
                add_vec(&mut dxs[t], &dx);
            }
            let _ = xs;
            dxs
        }
        (
            EncoderTape::Feedforward { x, a1, y1 },
            EncoderParams::Feedforward { w1, w2, .. },
            EncoderParams::Feedforward { w1: gw1, b1: gb1, w2: gw2, b2: gb2 },
        ) => {
            gw2.add_outer(&dh_hat, y1);
            add_vec(gb2, &dh_hat);
            let dy = w2.matvec_t(&dh_hat);
            let da: Vec<f64> = dy
                .iter()
                .zip(a1)
                .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                .collect();
            gw1.add_outer(&da, x);
            add_vec(gb1, &da);
            let dx = w1.matvec_t(&da);
            // only the final observation feeds the perceptron
            let mut dxs = vec![vec![0.0; params.dims.input_dim()]; tape.actions.len()];
            *dxs.last_mut().unwrap() = dx;
            dxs
        }
        _ => unreachable!("tape/params/grads encoder kinds must agree"),
    };

    for (t, dx) in dxs.iter().enumerate() {
        let row = grads.embed.row_mut(tape.actions[t]);
        for (g, v) in row.iter_mut().zip(&dx[..d_a]) {
            *g += v;
        }
    }
}
