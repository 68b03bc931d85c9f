//! Forward passes with recorded intermediates for the exact backward pass.

use super::mat::sigmoid;
use super::{EncoderParams, GruWeights, NetInput, NnError, QParams};

/// Intermediates of one GRU cell application.
#[derive(Debug, Clone)]
pub(crate) struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
}

pub(crate) fn gru_step(w: &GruWeights, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruStepCache) {
    let h = w.hidden();
    let mut z = w.wz.matvec(x);
    let mut r = w.wr.matvec(x);
    add3(&mut z, &w.uz.matvec(h_prev), &w.bz);
    add3(&mut r, &w.ur.matvec(h_prev), &w.br);
    for v in z.iter_mut() {
        *v = sigmoid(*v);
    }
    for v in r.iter_mut() {
        *v = sigmoid(*v);
    }
    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
    let mut n = w.wn.matvec(x);
    add3(&mut n, &w.un.matvec(&gated), &w.bn);
    for v in n.iter_mut() {
        *v = v.tanh();
    }
    let out: Vec<f64> = (0..h).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
    let cache = GruStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
    };
    (out, cache)
}

fn add3(acc: &mut [f64], a: &[f64], b: &[f64]) {
    for ((v, x), y) in acc.iter_mut().zip(a).zip(b) {
        *v += x + y;
    }
}

/// h = (1-z) ⊙ ñ + z ⊙ h_prev with the standard update/reset gates.
pub fn gru_cell_forward(w: &GruWeights, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() != w.wz.cols || h_prev.len() != w.hidden() {
        return Err(NnError::ShapeMismatch(format!(
            "gru input {} / hidden {} vs weights {}x{}",
            x.len(),
            h_prev.len(),
            w.hidden(),
            w.wz.cols
        )));
    }
    Ok(gru_step(w, x, h_prev).0)
}

/// State of one window position after encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    /// Concatenated forward/backward hidden state.
    pub h: Vec<f64>,
    /// Attention context over strictly earlier positions (zero when none).
    pub c: Vec<f64>,
    /// [h, c].
    pub h_hat: Vec<f64>,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn attention(hs: &[Vec<f64>], t: usize, d_h: usize) -> (Vec<f64>, Vec<f64>) {
    // context for position t over history i in [0, t)
    if t == 0 {
        return (vec![0.0; d_h], Vec::new());
    }
    let scale = (d_h as f64).sqrt();
    let scores: Vec<f64> = (0..t)
        .map(|i| hs[t].iter().zip(&hs[i]).map(|(a, b)| a * b).sum::<f64>() / scale)
        .collect();
    let weights = softmax(&scores);
    let mut c = vec![0.0; d_h];
    for (i, w) in weights.iter().enumerate() {
        for (cv, hv) in c.iter_mut().zip(&hs[i]) {
            *cv += w * hv;
        }
    }
    (c, weights)
}

fn bigru_hidden_states(
    fwd: &GruWeights,
    bwd: &GruWeights,
    xs: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<GruStepCache>, Vec<GruStepCache>) {
    let half = fwd.hidden();
    let len = xs.len();
    let mut fwd_caches = Vec::with_capacity(len);
    let mut bwd_caches = Vec::with_capacity(len);
    let mut fh = Vec::with_capacity(len);
    let mut h = vec![0.0; half];
    for x in xs {
        let (next, cache) = gru_step(fwd, x, &h);
        fwd_caches.push(cache);
        fh.push(next.clone());
        h = next;
    }
    let mut bh = vec![Vec::new(); len];
    let mut h = vec![0.0; half];
    for i in (0..len).rev() {
        let (next, cache) = gru_step(bwd, &xs[i], &h);
        bwd_caches.push(cache); // stored in processing order T-1..0
        bh[i] = next.clone();
        h = next;
    }
    let hs: Vec<Vec<f64>> = (0..len)
        .map(|i| {
            let mut v = fh[i].clone();
            v.extend_from_slice(&bh[i]);
            v
        })
        .collect();
    (hs, fwd_caches, bwd_caches)
}

/// Encode an observation window: forward GRU left-to-right, backward GRU
/// right-to-left over the window only, and per-position temporal attention
/// over strictly earlier positions. Only the final position is causal with
/// respect to days inside the window.
pub fn encode_window(obs: &[NetInput], params: &QParams) -> Result<Vec<EncodedState>, NnError> {
    if obs.is_empty() {
        return Err(NnError::EmptyWindow);
    }
    let d_h = params.dims.d_h;
    let xs: Vec<Vec<f64>> = obs.iter().map(|o| params.input_vector(o)).collect();
    match &params.encoder {
        EncoderParams::BiGru { fwd, bwd } => {
            let (hs, _, _) = bigru_hidden_states(fwd, bwd, &xs);
            Ok((0..hs.len())
                .map(|t| {
                    let (c, _) = attention(&hs, t, d_h);
                    let mut h_hat = hs[t].clone();
                    h_hat.extend_from_slice(&c);
                    EncodedState { h: hs[t].clone(), c, h_hat }
                })
                .collect())
        }
        EncoderParams::Feedforward { w1, b1, w2, b2 } => Ok(xs
            .iter()
            .map(|x| {
                let mut a1 = w1.matvec(x);
                for (v, b) in a1.iter_mut().zip(b1) {
                    *v += b;
                }
                let y1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
                let mut h_hat = w2.matvec(&y1);
                for (v, b) in h_hat.iter_mut().zip(b2) {
                    *v += b;
                }
                let (h, c) = h_hat.split_at(d_h);
                EncodedState { h: h.to_vec(), c: c.to_vec(), h_hat: h_hat.clone() }
            })
            .collect()),
    }
}

/// Q head: two affine layers with a rectifier between. Output order is
/// [short, clear, long].
pub fn q_forward(h_hat: &[f64], params: &QParams) -> Result<[f64; 3], NnError> {
    if h_hat.len() != 2 * params.dims.d_h {
        return Err(NnError::ShapeMismatch(format!(
            "h_hat length {} vs expected {}",
            h_hat.len(),
            2 * params.dims.d_h
        )));
    }
    let (_, _, q) = q_head(h_hat, params);
    Ok(q)
}

fn q_head(h_hat: &[f64], params: &QParams) -> (Vec<f64>, Vec<f64>, [f64; 3]) {
    let mut a1 = params.q_w1.matvec(h_hat);
    for (v, b) in a1.iter_mut().zip(&params.q_b1) {
        *v += b;
    }
    let y1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
    let mut out = params.q_w2.matvec(&y1);
    for (v, b) in out.iter_mut().zip(&params.q_b2) {
        *v += b;
    }
    (a1, y1, [out[0], out[1], out[2]])
}

/// Recorded forward pass through encoder, attention (final position only)
/// and Q head; consumed by [`backward`](super::backward).
pub struct Tape {
    pub(crate) actions: Vec<usize>,
    pub(crate) encoder: EncoderTape,
    pub(crate) h_hat: Vec<f64>,
    pub(crate) q_a1: Vec<f64>,
    pub(crate) q_y1: Vec<f64>,
}

pub(crate) enum EncoderTape {
    BiGru {
        xs: Vec<Vec<f64>>,
        fwd_caches: Vec<GruStepCache>,
        /// Stored in processing order (last window position first).
        bwd_caches: Vec<GruStepCache>,
        hs: Vec<Vec<f64>>,
        attn_weights: Vec<f64>,
    },
    Feedforward {
        x: Vec<f64>,
        a1: Vec<f64>,
        y1: Vec<f64>,
    },
}

/// Q-values at the final window position, with the tape recorded.
pub fn forward_q(obs: &[NetInput], params: &QParams) -> Result<([f64; 3], Tape), NnError> {
    if obs.is_empty() {
        return Err(NnError::EmptyWindow);
    }
    let d_h = params.dims.d_h;
    let actions: Vec<usize> = obs.iter().map(|o| o.prev_action.index()).collect();
    let xs: Vec<Vec<f64>> = obs.iter().map(|o| params.input_vector(o)).collect();
    let (h_hat, encoder) = match &params.encoder {
        EncoderParams::BiGru { fwd, bwd } => {
            let (hs, fwd_caches, bwd_caches) = bigru_hidden_states(fwd, bwd, &xs);
            let t = hs.len() - 1;
            let (c, attn_weights) = attention(&hs, t, d_h);
            let mut h_hat = hs[t].clone();
            h_hat.extend_from_slice(&c);
            (h_hat, EncoderTape::BiGru { xs, fwd_caches, bwd_caches, hs, attn_weights })
        }
        EncoderParams::Feedforward { w1, b1, w2, b2 } => {
            let x = xs.last().unwrap().clone();
            let mut a1 = w1.matvec(&x);
            for (v, b) in a1.iter_mut().zip(b1) {
                *v += b;
            }
            let y1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
            let mut h_hat = w2.matvec(&y1);
            for (v, b) in h_hat.iter_mut().zip(b2) {
                *v += b;
            }
            (h_hat, EncoderTape::Feedforward { x, a1, y1 })
        }
    };
    let (q_a1, q_y1, q) = q_head(&h_hat, params);
    Ok((q, Tape { actions, encoder, h_hat, q_a1, q_y1 }))
}
