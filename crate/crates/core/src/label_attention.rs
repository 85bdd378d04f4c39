//! Label-specific representations.
//!
//! Each label owns a query row; attending over the task features yields one
//! representation column per label. For a slot hierarchy, label probabilities
//! of level `k-1` are projected to a `d_p` vector that is appended to every
//! column of level `k`.

use rand::Rng;

use crate::encoders::INIT_BOUND;
use crate::error::Result;
use crate::numerics::{Graph, Matrix, ParamId, ParamStore, Var};

/// `A = softmax_rows(B · tanh(D · E))`, `V = E · Aᵀ`.
///
/// `E` is `d_e x n`, `B` is `labels x d_a`, `D` is `d_a x d_e`. Returns
/// `(A: labels x n, V: d_e x labels)`.
pub fn attend_labels(g: &mut Graph, e: Var, b: Var, d: Var, mask: Option<&[bool]>) -> Result<(Var, Var)> {
    let de = g.matmul(d, e)?;
    let act = g.tanh(de);
    let logits = g.matmul(b, act)?;
    let a = g.softmax_rows(logits, mask)?;
    let at = g.transpose(a);
    let v = g.matmul(e, at)?;
    Ok((a, v))
}

/// Label probabilities of the previous level and the `d_p x 1` vector they
/// project to.
pub struct Propagated {
    /// `1 x |L^{k-1}|` pre-sigmoid scores `w_j · v_j`.
    pub logits: Var,
    pub probs: Var,
    pub suffix: Var,
}

/// `p_j = sigmoid(w_j · v_j)` over the columns of `v_prev`, then `Z · p`.
/// Column `j` of `w` is `w_j`; `z` is `d_p x |L^{k-1}|`.
pub fn propagate_hierarchy(g: &mut Graph, v_prev: Var, w: Var, z: Var) -> Result<Propagated> {
    let prod = g.mul(w, v_prev)?;
    let logits = g.sum_rows(prod);
    let probs = g.sigmoid(logits);
    let pt = g.transpose(probs);
    let suffix = g.matmul(z, pt)?;
    Ok(Propagated { logits, probs, suffix })
}

/// Appends the same column `suffix` below every column of `v`.
pub fn append_to_columns(g: &mut Graph, v: Var, suffix: Var) -> Result<Var> {
    let m = g.shape(v).1;
    let ones = g.input(Matrix::filled(1, m, 1.0));
    let tiled = g.matmul(suffix, ones)?;
    g.concat_rows(&[v, tiled])
}

/// Query (`B`) and projection (`D`) weights for one label set.
#[derive(Debug, Clone)]
pub struct LabelAttention {
    pub queries: ParamId,
    pub projection: ParamId,
    pub labels: usize,
}

impl LabelAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        labels: usize,
        feature_dim: usize,
        attention_dim: usize,
        rng: &mut R,
    ) -> Self {
        LabelAttention {
            queries: store.add(format!("{name}.B"), Matrix::uniform(labels, attention_dim, INIT_BOUND, rng)),
            projection: store.add(format!("{name}.D"), Matrix::uniform(attention_dim, feature_dim, INIT_BOUND, rng)),
            labels,
        }
    }

    pub fn run(&self, g: &mut Graph, e: Var, mask: Option<&[bool]>) -> Result<(Var, Var)> {
        let b = g.param(self.queries);
        let d = g.param(self.projection);
        attend_labels(g, e, b, d, mask)
    }
}

/// Weights that carry level `k-1` probabilities into level `k`.
#[derive(Debug, Clone)]
pub struct HierarchyLink {
    /// `in_dim x |L^{k-1}|`, column `j` is `w_j`.
    pub label_weights: ParamId,
    /// `d_p x |L^{k-1}|`
    pub projection: ParamId,
}

#[derive(Debug, Clone)]
pub struct SlotLabelAttention {
    pub levels: Vec<LabelAttention>,
    pub links: Vec<HierarchyLink>,
    pub feature_dim: usize,
    pub prob_dim: usize,
}

pub struct SlotLabelOutput {
    pub attention: Vec<Var>,
    /// `V^{S,k}` after any appended hierarchy suffix.
    pub reprs: Vec<Var>,
    /// One entry per link: probabilities of level `k-1` labels.
    pub propagated: Vec<Propagated>,
}

impl SlotLabelAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        level_sizes: &[usize],
        feature_dim: usize,
        attention_dim: usize,
        prob_dim: usize,
        rng: &mut R,
    ) -> Self {
        let levels: Vec<LabelAttention> = level_sizes
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                LabelAttention::new(store, &format!("label_attention.slot{}", k + 1), m, feature_dim, attention_dim, rng)
            })
            .collect();
        let links = (1..level_sizes.len())
            .map(|k| {
                let prev = level_sizes[k - 1];
                let in_dim = if k == 1 { feature_dim } else { feature_dim + prob_dim };
                HierarchyLink {
                    label_weights: store.add(
                        format!("label_attention.slot{k}.w"),
                        Matrix::uniform(in_dim, prev, INIT_BOUND, rng),
                    ),
                    projection: store.add(
                        format!("label_attention.slot{k}.Z"),
                        Matrix::uniform(prob_dim, prev, INIT_BOUND, rng),
                    ),
                }
            })
            .collect();
        SlotLabelAttention {
            levels,
            links,
            feature_dim,
            prob_dim,
        }
    }

    pub fn run(&self, g: &mut Graph, e_s: Var, mask: Option<&[bool]>) -> Result<SlotLabelOutput> {
        let mut out = SlotLabelOutput {
            attention: Vec::new(),
            reprs: Vec::new(),
            propagated: Vec::new(),
        };
        for (k, level) in self.levels.iter().enumerate() {
            let (a, mut v) = level.run(g, e_s, mask)?;
            if k > 0 {
                let link = &self.links[k - 1];
                let w = g.param(link.label_weights);
                let z = g.param(link.projection);
                let prop = propagate_hierarchy(g, out.reprs[k - 1], w, z)?;
                v = append_to_columns(g, v, prop.suffix)?;
                out.propagated.push(prop);
            }
            out.attention.push(a);
            out.reprs.push(v);
        }
        Ok(out)
    }
}
