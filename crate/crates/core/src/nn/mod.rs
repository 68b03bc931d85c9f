//! Neural toolkit with exact hand-derived gradients: action embedding, GRU
//! cells, bidirectional window encoding with scaled dot-product temporal
//! attention, a two-layer Q-head, Adam, and finite-difference verification.

mod adam;
mod backward;
mod forward;
mod gradcheck;
mod mat;

pub use adam::{Adam, AdamConfig};
pub use backward::backward;
pub use forward::{encode_window, forward_q, gru_cell_forward, q_forward, EncodedState, Tape};
pub use gradcheck::finite_difference_check;
pub use mat::Mat;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty observation window")]
    EmptyWindow,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Network sizes. The feature dimension per day is d_a (embedded previous
/// action) + 3 account scalars + 6 price features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_a: usize,
    /// Concatenated hidden size; half per GRU direction. Must be even.
    pub d_h: usize,
    pub q_hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { d_a: 4, d_h: 32, q_hidden: 64 }
    }
}

impl Dims {
    pub fn input_dim(&self) -> usize {
        self.d_a + 9
    }

    pub fn half(&self) -> usize {
        self.d_h / 2
    }
}

/// One day of agent input before embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetInput {
    pub prev_action: Action,
    pub account: [f64; 3],
    pub prices: [f64; 6],
}

impl NetInput {
    pub fn from_observation(obs: &crate::env::Observation) -> Self {
        NetInput {
            prev_action: obs.prev_action,
            account: [obs.cash_ratio, obs.asset_ratio, obs.net_ratio],
            prices: obs.prices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruWeights {
    pub wz: Mat,
    pub uz: Mat,
    pub bz: Vec<f64>,
    pub wr: Mat,
    pub ur: Mat,
    pub br: Vec<f64>,
    pub wn: Mat,
    pub un: Mat,
    pub bn: Vec<f64>,
}

impl GruWeights {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruWeights {
            wz: Mat::zeros(hidden, input),
            uz: Mat::zeros(hidden, hidden),
            bz: vec![0.0; hidden],
            wr: Mat::zeros(hidden, input),
            ur: Mat::zeros(hidden, hidden),
            br: vec![0.0; hidden],
            wn: Mat::zeros(hidden, input),
            un: Mat::zeros(hidden, hidden),
            bn: vec![0.0; hidden],
        }
    }

    fn uniform(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        GruWeights {
            wz: Mat::uniform(hidden, input, rng),
            uz: Mat::uniform(hidden, hidden, rng),
            bz: vec![0.0; hidden],
            wr: Mat::uniform(hidden, input, rng),
            ur: Mat::uniform(hidden, hidden, rng),
            br: vec![0.0; hidden],
            wn: Mat::uniform(hidden, input, rng),
            un: Mat::uniform(hidden, hidden, rng),
            bn: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.wz.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    BigruAttention,
    Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderParams {
    BiGru { fwd: GruWeights, bwd: GruWeights },
    /// Per-day perceptron over the latest observation ("w/o Bi-GRU" ablation).
    Feedforward { w1: Mat, b1: Vec<f64>, w2: Mat, b2: Vec<f64> },
}

/// All learnable parameters of the Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub dims: Dims,
    /// 3 x d_a action embedding table.
    pub embed: Mat,
    pub encoder: EncoderParams,
    pub q_w1: Mat,
    pub q_b1: Vec<f64>,
    pub q_w2: Mat,
    pub q_b2: Vec<f64>,
}

impl QParams {
    pub fn init(kind: EncoderKind, dims: Dims, rng: &mut impl Rng) -> Self {
        assert!(dims.d_h % 2 == 0, "d_h must be even");
        let d = dims.input_dim();
        let encoder = match kind {
            EncoderKind::BigruAttention => EncoderParams::BiGru {
                fwd: GruWeights::uniform(dims.half(), d, rng),
                bwd: GruWeights::uniform(dims.half(), d, rng),
            },
            EncoderKind::Feedforward => EncoderParams::Feedforward {
                w1: Mat::uniform(dims.d_h, d, rng),
                b1: vec![0.0; dims.d_h],
                w2: Mat::uniform(2 * dims.d_h, dims.d_h, rng),
                b2: vec![0.0; 2 * dims.d_h],
            },
        };
        QParams {
            dims,
            embed: Mat::uniform(3, dims.d_a, rng),
            encoder,
            q_w1: Mat::uniform(dims.q_hidden, 2 * dims.d_h, rng),
            q_b1: vec![0.0; dims.q_hidden],
            q_w2: Mat::uniform(3, dims.q_hidden, rng),
            q_b2: vec![0.0; 3],
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self.encoder {
            EncoderParams::BiGru { .. } => EncoderKind::BigruAttention,
            EncoderParams::Feedforward { .. } => EncoderKind::Feedforward,
        }
    }

    /// Same structure with all values zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> QParams {
        let dims = self.dims;
        let d = dims.input_dim();
        let encoder = match &self.encoder {
            EncoderParams::BiGru { .. } => EncoderParams::BiGru {
                fwd: GruWeights::zeros(dims.half(), d),
                bwd: GruWeights::zeros(dims.half(), d),
            },
            EncoderParams::Feedforward { .. } => EncoderParams::Feedforward {
                w1: Mat::zeros(dims.d_h, d),
                b1: vec![0.0; dims.d_h],
                w2: Mat::zeros(2 * dims.d_h, dims.d_h),
                b2: vec![0.0; 2 * dims.d_h],
            },
        };
        QParams {
            dims,
            embed: Mat::zeros(3, dims.d_a),
            encoder,
            q_w1: Mat::zeros(dims.q_hidden, 2 * dims.d_h),
            q_b1: vec![0.0; dims.q_hidden],
            q_w2: Mat::zeros(3, dims.q_hidden),
            q_b2: vec![0.0; 3],
        }
    }

    /// Named parameter arrays in a fixed canonical order.
    pub fn arrays(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![("embed", &self.embed.data)];
        match &self.encoder {
            EncoderParams::BiGru { fwd, bwd } => {
                for (prefix, g) in [("fwd", fwd), ("bwd", bwd)] {
                    let names: [(&'static str, &[f64]); 9] = match prefix {
                        "fwd" => [
                            ("fwd.wz", &g.wz.data),
                            ("fwd.uz", &g.uz.data),
                            ("fwd.bz", &g.bz),
                            ("fwd.wr", &g.wr.data),
                            ("fwd.ur", &g.ur.data),
                            ("fwd.br", &g.br),
                            ("fwd.wn", &g.wn.data),
                            ("fwd.un", &g.un.data),
                            ("fwd.bn", &g.bn),
                        ],
                        _ => [
                            ("bwd.wz", &g.wz.data),
                            ("bwd.uz", &g.uz.data),
                            ("bwd.bz", &g.bz),
                            ("bwd.wr", &g.wr.data),
                            ("bwd.ur", &g.ur.data),
                            ("bwd.br", &g.br),
                            ("bwd.wn", &g.wn.data),
                            ("bwd.un", &g.un.data),
                            ("bwd.bn", &g.bn),
                        ],
                    };
                    out.extend(names);
                }
            }
            EncoderParams::Feedforward { w1, b1, w2, b2 } => {
                out.push(("ff.w1", &w1.data));
                out.push(("ff.b1", b1));
                out.push(("ff.w2", &w2.data));
                out.push(("ff.b2", b2));
            }
        }
        out.push(("q.w1", &self.q_w1.data));
        out.push(("q.b1", &self.q_b1));
        out.push(("q.w2", &self.q_w2.data));
        out.push(("q.b2", &self.q_b2));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![&mut self.embed.data];
        match &mut self.encoder {
            EncoderParams::BiGru { fwd, bwd } => {
                for g in [fwd, bwd] {
                    out.push(&mut g.wz.data);
                    out.push(&mut g.uz.data);
                    out.push(&mut g.bz);
                    out.push(&mut g.wr.data);
                    out.push(&mut g.ur.data);
                    out.push(&mut g.br);
                    out.push(&mut g.wn.data);
                    out.push(&mut g.un.data);
                    out.push(&mut g.bn);
                }
            }
            EncoderParams::Feedforward { w1, b1, w2, b2 } => {
                out.push(&mut w1.data);
                out.push(b1);
                out.push(&mut w2.data);
                out.push(b2);
            }
        }
        out.push(&mut self.q_w1.data);
        out.push(&mut self.q_b1);
        out.push(&mut self.q_w2.data);
        out.push(&mut self.q_b2);
        out
    }

    pub fn n_params(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for (_, a) in self.arrays() {
            v.extend_from_slice(a);
        }
        v
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for a in self.arrays_mut() {
            let len = a.len();
            a.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len());
    }

    /// Assemble one day's input vector [embedded action, account, prices].
    pub(crate) fn input_vector(&self, obs: &NetInput) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dims.input_dim());
        x.extend_from_slice(self.embed.row(obs.prev_action.index()));
        x.extend_from_slice(&obs.account);
        x.extend_from_slice(&obs.prices);
        x
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), NnError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<QParams, NnError> {
        let text = std::fs::read_to_string(path)?;
        let params: QParams = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }

    /// Consistency of every array shape against the declared dims.
    pub fn validate(&self) -> Result<(), NnError> {
        let d = self.dims.input_dim();
        let check = |m: &Mat, rows: usize, cols: usize, name: &str| {
            if m.rows != rows || m.cols != cols || !m.shape_ok() {
                Err(NnError::ShapeMismatch(format!(
                    "{name}: expected {rows}x{cols}, got {}x{} ({} values)",
                    m.rows,
                    m.cols,
                    m.data.len()
                )))
            } else {
                Ok(())
            }
        };
        check(&self.embed, 3, self.dims.d_a, "embed")?;
        match &self.encoder {
            EncoderParams::BiGru { fwd, bwd } => {
                let h = self.dims.half();
                for (g, p) in [(fwd, "fwd"), (bwd, "bwd")] {
                    check(&g.wz, h, d, &format!("{p}.wz"))?;
                    check(&g.uz, h, h, &format!("{p}.uz"))?;
                    check(&g.wr, h, d, &format!("{p}.wr"))?;
                    check(&g.ur, h, h, &format!("{p}.ur"))?;
                    check(&g.wn, h, d, &format!("{p}.wn"))?;
                    check(&g.un, h, h, &format!("{p}.un"))?;
                    if g.bz.len() != h || g.br.len() != h || g.bn.len() != h {
                        return Err(NnError::ShapeMismatch(format!("{p} bias length")));
                    }
                }
            }
            EncoderParams::Feedforward { w1, b1, w2, b2 } => {
                check(w1, self.dims.d_h, d, "ff.w1")?;
                check(w2, 2 * self.dims.d_h, self.dims.d_h, "ff.w2")?;
                if b1.len() != self.dims.d_h || b2.len() != 2 * self.dims.d_h {
                    return Err(NnError::ShapeMismatch("ff bias length".into()));
                }
            }
        }
        check(&self.q_w1, self.dims.q_hidden, 2 * self.dims.d_h, "q.w1")?;
        check(&self.q_w2, 3, self.dims.q_hidden, "q.w2")?;
        if self.q_b1.len() != self.dims.q_hidden || self.q_b2.len() != 3 {
            return Err(NnError::ShapeMismatch("q bias length".into()));
        }
        Ok(())
    }
}
