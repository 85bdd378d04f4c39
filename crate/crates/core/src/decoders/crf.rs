//! Linear-chain CRF over BIO tags.
//!
//! Emissions are `K x n` (one column per token). Transitions are
//! `(K+2) x (K+2)` with `T[i][j]` scoring `i -> j`; row/column `K` is the
//! virtual start state and `K+1` the virtual end state.

use rand::Rng;

use crate::encoders::INIT_BOUND;
use crate::error::{Error, Result};
use crate::numerics::{logsumexp, Graph, Matrix, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct CrfLayer {
    /// `K x input_dim`
    pub projection: ParamId,
    pub transitions: ParamId,
    pub tags: usize,
}

impl CrfLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, tags: usize, input_dim: usize, rng: &mut R) -> Self {
        CrfLayer {
            projection: store.add("crf.X_S", Matrix::uniform(tags, input_dim, INIT_BOUND, rng)),
            transitions: store.add("crf.transitions", Matrix::zeros(tags + 2, tags + 2)),
            tags,
        }
    }

    pub fn emissions(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let x = g.param(self.projection);
        g.matmul(x, h)
    }

    pub fn nll(&self, g: &mut Graph, emissions: Var, gold: &[usize], mask: Option<&[bool]>) -> Result<Var> {
        let t = g.param(self.transitions);
        crf_nll(g, emissions, t, gold, mask)
    }
}

fn active_positions(n: usize, mask: Option<&[bool]>) -> Vec<usize> {
    match mask {
        Some(m) => (0..n).filter(|&i| m[i]).collect(),
        None => (0..n).collect(),
    }
}

fn check_shapes(em: &Matrix, t: &Matrix) -> Result<usize> {
    let k = em.rows();
    if t.shape() != (k + 2, k + 2) {
        return Err(Error::Dimension {
            op: "crf",
            left: em.shape(),
            right: t.shape(),
        });
    }
    Ok(k)
}

/// Score of a tag path over the given positions.
pub fn path_score(em: &Matrix, t: &Matrix, positions: &[usize], path: &[usize]) -> f64 {
    let k = em.rows();
    let mut s = 0.0;
    let mut prev = k;
    for (&pos, &tag) in positions.iter().zip(path) {
        s = s + t.get(prev, tag) + em.get(tag, pos);
        prev = tag;
    }
    s + t.get(prev, k + 1)
}

/// Forward log-scores `alpha[i][j]` over `positions`.
fn forward(em: &Matrix, t: &Matrix, positions: &[usize]) -> Vec<Vec<f64>> {
    let k = em.rows();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(positions.len());
    for (i, &pos) in positions.iter().enumerate() {
        let row: Vec<f64> = (0..k)
            .map(|j| {
                let incoming = if i == 0 {
                    t.get(k, j)
                } else {
                    let terms: Vec<f64> = (0..k).map(|p| alpha[i - 1][p] + t.get(p, j)).collect();
                    logsumexp(&terms)
                };
                incoming + em.get(j, pos)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

fn backward(em: &Matrix, t: &Matrix, positions: &[usize]) -> Vec<Vec<f64>> {
    let k = em.rows();
    let len = positions.len();
    let mut beta = vec![vec![0.0; k]; len];
    if len == 0 {
        return beta;
    }
    for j in 0..k {
        beta[len - 1][j] = t.get(j, k + 1);
    }
    for i in (0..len - 1).rev() {
        let next = positions[i + 1];
        for j in 0..k {
            let terms: Vec<f64> = (0..k)
                .map(|q| t.get(j, q) + em.get(q, next) + beta[i + 1][q])
                .collect();
            beta[i][j] = logsumexp(&terms);
        }
    }
    beta
}

fn log_z_from_alpha(alpha: &[Vec<f64>], t: &Matrix, k: usize) -> f64 {
    match alpha.last() {
        Some(last) => {
            let terms: Vec<f64> = (0..k).map(|j| last[j] + t.get(j, k + 1)).collect();
            logsumexp(&terms)
        }
        None => t.get(k, k + 1),
    }
}

/// Log partition function via the forward algorithm.
pub fn log_partition(em: &Matrix, t: &Matrix, mask: Option<&[bool]>) -> Result<f64> {
    let k = check_shapes(em, t)?;
    let positions = active_positions(em.cols(), mask);
    Ok(log_z_from_alpha(&forward(em, t, &positions), t, k))
}

/// `log Z - score(gold)` with gradients from forward-backward marginals.
/// `gold` holds one tag per unmasked position.
pub fn crf_nll(g: &mut Graph, emissions: Var, transitions: Var, gold: &[usize], mask: Option<&[bool]>) -> Result<Var> {
    let em = g.value(emissions).clone();
    let t = g.value(transitions).clone();
    let k = check_shapes(&em, &t)?;
    let positions = active_positions(em.cols(), mask);
    if gold.len() != positions.len() {
        return Err(Error::Contract(format!(
            "crf_nll: {} gold tags for {} unmasked positions",
            gold.len(),
            positions.len()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("crf_nll: gold tag {bad} outside {k} tags")));
    }
    if positions.is_empty() {
        return Err(Error::Contract("crf_nll: no unmasked positions".into()));
    }

    let alpha = forward(&em, &t, &positions);
    let beta = backward(&em, &t, &positions);
    let log_z = log_z_from_alpha(&alpha, &t, k);
    let loss = log_z - path_score(&em, &t, &positions, gold);

    // d loss / d emissions and d loss / d transitions
    let mut d_em = Matrix::zeros(k, em.cols());
    let mut d_t = Matrix::zeros(k + 2, k + 2);
    for (i, &pos) in positions.iter().enumerate() {
        for j in 0..k {
            let marginal = (alpha[i][j] + beta[i][j] - log_z).exp();
            d_em.add_at(j, pos, marginal);
            if i == 0 {
                d_t.add_at(k, j, marginal);
            }
            if i + 1 == positions.len() {
                d_t.add_at(j, k + 1, marginal);
            }
        }
        if i > 0 {
            for p in 0..k {
                for j in 0..k {
                    let edge = alpha[i - 1][p] + t.get(p, j) + em.get(j, pos) + beta[i][j] - log_z;
                    d_t.add_at(p, j, edge.exp());
                }
            }
        }
    }
    let mut prev = k;
    for (&pos, &y) in positions.iter().zip(gold) {
        d_em.add_at(y, pos, -1.0);
        d_t.add_at(prev, y, -1.0);
        prev = y;
    }
    d_t.add_at(prev, k + 1, -1.0);

    Ok(g.custom(
        &[emissions, transitions],
        Matrix::scalar(loss),
        Box::new(move |upstream, _, _| {
            let s = upstream.get(0, 0);
            vec![d_em.scale(s), d_t.scale(s)]
        }),
    ))
}

/// Copy of `t` with invalid BIO moves set to `-inf`: `O -> I-x`,
/// `B-x/I-x -> I-y` for `x != y`, and `start -> I-x`. Tags are laid out as
/// `O, B-l0, I-l0, B-l1, I-l1, ...`.
pub fn hard_bio_transitions(t: &Matrix) -> Matrix {
    let k = t.rows() - 2;
    let mut out = t.clone();
    for next in (2..k).step_by(2) {
        for prev in 0..=k {
            let continues = prev == next - 1 || prev == next;
            if !continues {
                out.set(prev, next, f64::NEG_INFINITY);
            }
        }
    }
    out
}

/// Best path over the unmasked positions and its score. Ties in both the
/// final state and backpointers go to the lower tag index.
pub fn viterbi(em: &Matrix, t: &Matrix, mask: Option<&[bool]>) -> Result<(Vec<usize>, f64)> {
    let k = check_shapes(em, t)?;
    let positions = active_positions(em.cols(), mask);
    if positions.is_empty() {
        return Err(Error::Contract("viterbi: no unmasked positions".into()));
    }
    let mut score: Vec<f64> = (0..k).map(|j| t.get(k, j) + em.get(j, positions[0])).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(positions.len());
    for &pos in &positions[1..] {
        let mut next = vec![0.0; k];
        let mut ptr = vec![0; k];
        for j in 0..k {
            let mut best = 0;
            let mut best_score = score[0] + t.get(0, j);
            for p in 1..k {
                let s = score[p] + t.get(p, j);
                if s > best_score {
                    best = p;
                    best_score = s;
                }
            }
            next[j] = best_score + em.get(j, pos);
            ptr[j] = best;
        }
        back.push(ptr);
        score = next;
    }
    let mut last = 0;
    let mut best = score[0] + t.get(0, k + 1);
    for j in 1..k {
        let s = score[j] + t.get(j, k + 1);
        if s > best {
            last = j;
            best = s;
        }
    }
    let mut path = vec![last];
    for ptr in back.iter().rev() {
        let prev = ptr[*path.last().expect("non-empty")];
        path.push(prev);
    }
    path.reverse();
    Ok((path, best))
}
