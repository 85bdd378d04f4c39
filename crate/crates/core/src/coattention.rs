//! Intent-slot co-attention over a chain of label-specific matrices.
//!
//! The chain is `Q_1 = V^I, Q_2 = V^{S,1}, ..., Q_{l+1} = V^{S,l}, Q_{l+2} = S`
//! where `S` holds one soft slot-tag embedding per token. Neighbouring
//! matrices are related by a bilinear score `C_t = Q_{t-1}ᵀ X_t Q_t`; a
//! backward recursion carries slot information down to the intent end of the
//! chain and a forward recursion carries intent information up to the token
//! end. The two recursions do not read each other's outputs.
//!
//! Indices in this module are 1-based to match the chain positions, so `C_t`
//! lives at `c[t - 2]` and `H←_t` at `back[t - 1]`.

use std::fmt::Write as _;

use rand::Rng;

use crate::encoders::INIT_BOUND;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, ParamId, ParamStore, Var};

/// `S = W^S · softmax_cols(U^S · E^S)`; `U^S` maps features to BIO-tag
/// scores and `W^S` embeds the resulting tag distribution.
pub fn soft_slot_embed(g: &mut Graph, e_s: Var, w_s: Var, u_s: Var) -> Result<Var> {
    let scores = g.matmul(u_s, e_s)?;
    let dist = g.softmax_cols(scores);
    g.matmul(w_s, dist)
}

#[derive(Debug, Clone)]
pub struct SoftSlotEmbedding {
    pub embed: ParamId,
    pub scorer: ParamId,
}

impl SoftSlotEmbedding {
    pub fn new<R: Rng>(store: &mut ParamStore, tags: usize, feature_dim: usize, embed_dim: usize, rng: &mut R) -> Self {
        SoftSlotEmbedding {
            embed: store.add("coattention.W_S", Matrix::uniform(embed_dim, tags, INIT_BOUND, rng)),
            scorer: store.add("coattention.U_S", Matrix::uniform(tags, feature_dim, INIT_BOUND, rng)),
        }
    }

    pub fn run(&self, g: &mut Graph, e_s: Var) -> Result<Var> {
        let w = g.param(self.embed);
        let u = g.param(self.scorer);
        soft_slot_embed(g, e_s, w, u)
    }
}

/// Projections and bilinear maps of one chain, as graph values.
pub struct ChainWeights {
    pub fwd: Vec<Var>,
    pub bwd: Vec<Var>,
    /// `X_2..X_L`
    pub bilinear: Vec<Var>,
}

/// Everything computed before the recursions.
pub struct CoAttentionStack {
    pub q: Vec<Var>,
    pub q_fwd: Vec<Var>,
    pub q_bwd: Vec<Var>,
    /// `C_2..C_L`
    pub c: Vec<Var>,
}

impl CoAttentionStack {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `C_t` for `t` in `2..=L`.
    pub fn correlation(&self, t: usize) -> Var {
        self.c[t - 2]
    }
}

pub struct CoAttentionOutput {
    /// `H←_1..H←_{L-1}`
    pub back: Vec<Var>,
    /// `H→_2..H→_L`
    pub fwd: Vec<Var>,
}

impl CoAttentionOutput {
    /// `H←_1`: `d x m_1`, one column per intent label.
    pub fn intent_side(&self) -> Var {
        self.back[0]
    }

    /// `H→_L`: `d x n`, one column per token.
    pub fn slot_side(&self) -> Var {
        *self.fwd.last().expect("chain has at least two layers")
    }

    /// `H←_t` for `t` in `1..L`.
    pub fn back_at(&self, t: usize) -> Var {
        self.back[t - 1]
    }

    /// `H→_t` for `t` in `2..=L`.
    pub fn fwd_at(&self, t: usize) -> Var {
        self.fwd[t - 2]
    }
}

fn layer_error(t: usize, what: &str, got: (usize, usize), want: (usize, usize)) -> Error {
    Error::Config(format!(
        "co-attention layer {t}: {what} has shape {got:?}, expected {want:?}"
    ))
}

/// Projects every `Q_t` both ways and forms the bilinear correlations.
pub fn build_chain(g: &mut Graph, q: &[Var], w: &ChainWeights) -> Result<CoAttentionStack> {
    let len = q.len();
    if len < 2 {
        return Err(Error::Config(format!("co-attention chain needs at least 2 matrices, got {len}")));
    }
    if w.fwd.len() != len || w.bwd.len() != len || w.bilinear.len() != len - 1 {
        return Err(Error::Config(format!(
            "co-attention chain of {len} matrices got {} forward, {} backward projections and {} bilinear maps",
            w.fwd.len(),
            w.bwd.len(),
            w.bilinear.len()
        )));
    }
    let mut stack = CoAttentionStack {
        q: q.to_vec(),
        q_fwd: Vec::with_capacity(len),
        q_bwd: Vec::with_capacity(len),
        c: Vec::with_capacity(len - 1),
    };
    for t in 1..=len {
        let qt = q[t - 1];
        let d_t = g.shape(qt).0;
        for (proj, name) in [(w.fwd[t - 1], "forward projection"), (w.bwd[t - 1], "backward projection")] {
            let (rows, cols) = g.shape(proj);
            if cols != d_t {
                return Err(layer_error(t, name, (rows, cols), (rows, d_t)));
            }
        }
        stack.q_fwd.push(g.matmul(w.fwd[t - 1], qt)?);
        stack.q_bwd.push(g.matmul(w.bwd[t - 1], qt)?);
        if t >= 2 {
            let prev = q[t - 2];
            let x = w.bilinear[t - 2];
            let want = (g.shape(prev).0, d_t);
            if g.shape(x) != want {
                return Err(layer_error(t, "bilinear map", g.shape(x), want));
            }
            let pt = g.transpose(prev);
            let px = g.matmul(pt, x)?;
            stack.c.push(g.matmul(px, qt)?);
        }
    }
    Ok(stack)
}

/// Runs both recursions over a built chain.
pub fn run_coattention(g: &mut Graph, stack: &CoAttentionStack) -> Result<CoAttentionOutput> {
    let len = stack.len();
    // backward: H←_{L-1} from ←Q_L, then down to H←_1
    let mut back: Vec<Option<Var>> = vec![None; len - 1];
    let mut carry = stack.q_bwd[len - 1];
    for t in (1..len).rev() {
        let ct = g.transpose(stack.correlation(t + 1));
        let moved = g.matmul(carry, ct)?;
        let pre = g.add(moved, stack.q_bwd[t - 1])?;
        let h = g.tanh(pre);
        back[t - 1] = Some(h);
        carry = h;
    }
    // forward: H→_2 from →Q_1, then up to H→_L
    let mut fwd = Vec::with_capacity(len - 1);
    let mut carry = stack.q_fwd[0];
    for t in 2..=len {
        let moved = g.matmul(carry, stack.correlation(t))?;
        let pre = g.add(moved, stack.q_fwd[t - 1])?;
        let h = g.tanh(pre);
        fwd.push(h);
        carry = h;
    }
    Ok(CoAttentionOutput {
        back: back.into_iter().map(|h| h.expect("filled")).collect(),
        fwd,
    })
}

/// Trainable weights for a chain whose matrices have row counts
/// `layer_dims` (`d_1..d_L`).
#[derive(Debug, Clone)]
pub struct CoAttention {
    pub fwd: Vec<ParamId>,
    pub bwd: Vec<ParamId>,
    pub bilinear: Vec<ParamId>,
    pub dim: usize,
}

impl CoAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, layer_dims: &[usize], dim: usize, rng: &mut R) -> Self {
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        let mut bilinear = Vec::new();
        for (i, &d_t) in layer_dims.iter().enumerate() {
            let t = i + 1;
            fwd.push(store.add(format!("coattention.W_fwd{t}"), Matrix::uniform(dim, d_t, INIT_BOUND, rng)));
            bwd.push(store.add(format!("coattention.W_bwd{t}"), Matrix::uniform(dim, d_t, INIT_BOUND, rng)));
            if t >= 2 {
                bilinear.push(store.add(
                    format!("coattention.X{t}"),
                    Matrix::uniform(layer_dims[i - 1], d_t, INIT_BOUND, rng),
                ));
            }
        }
        CoAttention { fwd, bwd, bilinear, dim }
    }

    pub fn weights(&self, g: &mut Graph) -> ChainWeights {
        ChainWeights {
            fwd: self.fwd.iter().map(|&p| g.param(p)).collect(),
            bwd: self.bwd.iter().map(|&p| g.param(p)).collect(),
            bilinear: self.bilinear.iter().map(|&p| g.param(p)).collect(),
        }
    }

    pub fn run(&self, g: &mut Graph, q: &[Var]) -> Result<(CoAttentionStack, CoAttentionOutput)> {
        let w = self.weights(g);
        let stack = build_chain(g, q, &w)?;
        let out = run_coattention(g, &stack)?;
        Ok((stack, out))
    }
}

fn dump_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "[{name}] {} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row_slice(r).iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Text dump of every `Q_t`, `C_t`, `H←_t` and `H→_t`: a `[name] rows cols`
/// header followed by one whitespace-separated line per row.
pub fn debug_dump(g: &Graph, stack: &CoAttentionStack, out: &CoAttentionOutput) -> String {
    let mut s = String::new();
    let len = stack.len();
    let _ = writeln!(s, "# chain length {len}");
    for t in 1..=len {
        dump_matrix(&mut s, &format!("Q{t}"), g.value(stack.q[t - 1]));
    }
    for t in 2..=len {
        dump_matrix(&mut s, &format!("C{t}"), g.value(stack.correlation(t)));
    }
    for t in 1..len {
        dump_matrix(&mut s, &format!("H_back{t}"), g.value(out.back_at(t)));
    }
    for t in 2..=len {
        dump_matrix(&mut s, &format!("H_fwd{t}"), g.value(out.fwd_at(t)));
    }
    s
}
