//! Utterance encoders.
//!
//! The task-shared encoder turns each token into
//! `[word BiLSTM state ; self-attention output ; character BiLSTM summary]`.
//! Two independent BiLSTMs then read that sequence to produce the intent and
//! slot feature matrices `E^I` and `E^S` (`d_e x n`, one column per token).

use rand::Rng;

use crate::corpus::Utterance;
use crate::error::Result;
use crate::numerics::{Graph, Matrix, ParamId, ParamStore, Var};

/// Initial range of every weight drawn uniformly.
pub const INIT_BOUND: f64 = 0.1;

/// Unidirectional LSTM with the standard four gates, stacked in the order
/// input, forget, cell, output. States start at zero.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), Matrix::uniform(4 * hidden, input, INIT_BOUND, rng));
        let u = store.add(format!("{name}.u"), Matrix::uniform(4 * hidden, hidden, INIT_BOUND, rng));
        let mut bias = Matrix::uniform(4 * hidden, 1, INIT_BOUND, rng);
        for r in hidden..2 * hidden {
            bias.set(r, 0, 1.0);
        }
        let b = store.add(format!("{name}.b"), bias);
        Lstm { w, u, b, hidden }
    }

    /// Runs over the columns of `x` (`input x n`), right to left when
    /// `reverse`. Returns the hidden state at every position, indexed by
    /// position in `x`.
    pub fn run(&self, g: &mut Graph, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let n = g.shape(x).1;
        let h = self.hidden;
        let w = g.param(self.w);
        let u = g.param(self.u);
        let b = g.param(self.b);
        let wx = g.matmul(w, x)?;
        let mut states: Vec<Option<Var>> = vec![None; n];
        let mut prev: Option<(Var, Var)> = None;
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..n).rev())
        } else {
            Box::new(0..n)
        };
        for t in order {
            let mut pre = g.column(wx, t)?;
            if let Some((h_prev, _)) = prev {
                let uh = g.matmul(u, h_prev)?;
                pre = g.add(pre, uh)?;
            }
            pre = g.add(pre, b)?;
            let i_pre = g.slice_rows(pre, 0, h)?;
            let f_pre = g.slice_rows(pre, h, h)?;
            let c_pre = g.slice_rows(pre, 2 * h, h)?;
            let o_pre = g.slice_rows(pre, 3 * h, h)?;
            let i = g.sigmoid(i_pre);
            let cand = g.tanh(c_pre);
            let o = g.sigmoid(o_pre);
            let mut c = g.mul(i, cand)?;
            if let Some((_, c_prev)) = prev {
                let f = g.sigmoid(f_pre);
                let kept = g.mul(f, c_prev)?;
                c = g.add(c, kept)?;
            }
            let tc = g.tanh(c);
            let h_t = g.mul(o, tc)?;
            states[t] = Some(h_t);
            prev = Some((h_t, c));
        }
        Ok(states.into_iter().map(|s| s.expect("every position visited")).collect())
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            forward: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// Per-position states `[forward ; backward]`, `2h x n`.
    pub fn run(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let f = self.forward.run(g, x, false)?;
        let b = self.backward.run(g, x, true)?;
        let f = g.concat_cols(&f)?;
        let b = g.concat_cols(&b)?;
        g.concat_rows(&[f, b])
    }

    /// Final states of both directions, `2h x 1`: the forward state after the
    /// last column and the backward state after the first.
    pub fn summary(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let f = self.forward.run(g, x, false)?;
        let b = self.backward.run(g, x, true)?;
        g.concat_rows(&[*f.last().expect("non-empty"), b[0]])
    }
}

/// Single-head scaled dot-product self-attention with learned query, key and
/// value projections.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, dim: usize, rng: &mut R) -> Self {
        SelfAttention {
            query: store.add(format!("{name}.query"), Matrix::uniform(dim, input, INIT_BOUND, rng)),
            key: store.add(format!("{name}.key"), Matrix::uniform(dim, input, INIT_BOUND, rng)),
            value: store.add(format!("{name}.value"), Matrix::uniform(dim, input, INIT_BOUND, rng)),
            dim,
        }
    }

    /// Returns `(output dim x n, weights n x n)`; row `i` of the weights is
    /// the distribution of query `i` over keys. Masked keys get weight 0.
    pub fn run(&self, g: &mut Graph, x: Var, mask: Option<&[bool]>) -> Result<(Var, Var)> {
        let wq = g.param(self.query);
        let wk = g.param(self.key);
        let wv = g.param(self.value);
        let q = g.matmul(wq, x)?;
        let k = g.matmul(wk, x)?;
        let v = g.matmul(wv, x)?;
        let qt = g.transpose(q);
        let scores = g.matmul(qt, k)?;
        let scores = g.scale(scores, 1.0 / (self.dim as f64).sqrt());
        let weights = g.softmax_rows(scores, mask)?;
        let wt = g.transpose(weights);
        let out = g.matmul(v, wt)?;
        Ok((out, weights))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedDims {
    pub word_dim: usize,
    pub word_hidden: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub attention_dim: usize,
}

impl SharedDims {
    /// Width of `e_i`.
    pub fn output_dim(&self) -> usize {
        2 * self.word_hidden + self.attention_dim + 2 * self.char_hidden
    }
}

#[derive(Debug, Clone)]
pub struct SharedEncoder {
    pub word_embeddings: ParamId,
    pub char_embeddings: ParamId,
    pub word_lstm: BiLstm,
    pub char_lstm: BiLstm,
    pub attention: SelfAttention,
    pub dims: SharedDims,
}

/// Pieces of the shared encoding, kept separately for inspection.
pub struct SharedOutput {
    /// `e_1..e_n` as columns.
    pub e: Var,
    pub word_states: Var,
    pub attention_out: Var,
    pub attention_weights: Var,
    pub char_states: Var,
}

impl SharedEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        words: usize,
        chars: usize,
        dims: SharedDims,
        rng: &mut R,
    ) -> Self {
        SharedEncoder {
            word_embeddings: store.add(
                "shared.word_embeddings",
                Matrix::uniform(words, dims.word_dim, INIT_BOUND, rng),
            ),
            char_embeddings: store.add(
                "shared.char_embeddings",
                Matrix::uniform(chars, dims.char_dim, INIT_BOUND, rng),
            ),
            word_lstm: BiLstm::new(store, "shared.word_lstm", dims.word_dim, dims.word_hidden, rng),
            char_lstm: BiLstm::new(store, "shared.char_lstm", dims.char_dim, dims.char_hidden, rng),
            attention: SelfAttention::new(store, "shared.self_attention", dims.word_dim, dims.attention_dim, rng),
            dims,
        }
    }

    pub fn encode(&self, g: &mut Graph, utt: &Utterance) -> Result<SharedOutput> {
        let x = g.embed(self.word_embeddings, &utt.word_ids)?;
        let word_states = self.word_lstm.run(g, x)?;
        let (attention_out, attention_weights) = self.attention.run(g, x, None)?;
        let mut summaries = Vec::with_capacity(utt.char_ids.len());
        for chars in &utt.char_ids {
            let s = if chars.is_empty() {
                g.input(Matrix::zeros(self.char_lstm.output_dim(), 1))
            } else {
                let c = g.embed(self.char_embeddings, chars)?;
                self.char_lstm.summary(g, c)?
            };
            summaries.push(s);
        }
        let char_states = g.concat_cols(&summaries)?;
        let e = g.concat_rows(&[word_states, attention_out, char_states])?;
        Ok(SharedOutput {
            e,
            word_states,
            attention_out,
            attention_weights,
            char_states,
        })
    }
}

/// The two task-specific BiLSTMs. They share no parameters.
#[derive(Debug, Clone)]
pub struct TaskEncoder {
    pub intent: BiLstm,
    pub slot: BiLstm,
}

impl TaskEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut R) -> Self {
        TaskEncoder {
            intent: BiLstm::new(store, "task.intent_lstm", input, hidden, rng),
            slot: BiLstm::new(store, "task.slot_lstm", input, hidden, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.intent.output_dim()
    }

    /// `(E^I, E^S)`, each `d_e x n`.
    pub fn encode(&self, g: &mut Graph, e: Var) -> Result<(Var, Var)> {
        Ok((self.intent.run(g, e)?, self.slot.run(g, e)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain-loop LSTM, independent of the tape.
    fn oracle_lstm(store: &ParamStore, cell: &Lstm, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
        let (w, u, b) = (store.value(cell.w), store.value(cell.u), store.value(cell.b));
        let h = cell.hidden;
        let n = xs.len();
        let mut hs = vec![vec![0.0; h]; n];
        let mut hp = vec![0.0; h];
        let mut cp = vec![0.0; h];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let mut pre = vec![0.0; 4 * h];
            for (r, p) in pre.iter_mut().enumerate() {
                let mut s = 0.0;
                for (k, xv) in xs[t].iter().enumerate() {
                    s += w.get(r, k) * xv;
                }
                for (k, hv) in hp.iter().enumerate() {
                    s += u.get(r, k) * hv;
                }
                *p = s + b.get(r, 0);
            }
            let mut hn = vec![0.0; h];
            let mut cn = vec![0.0; h];
            for j in 0..h {
                let i = sigmoid(pre[j]);
                let f = sigmoid(pre[h + j]);
                let c = pre[2 * h + j].tanh();
                let o = sigmoid(pre[3 * h + j]);
                cn[j] = f * cp[j] + i * c;
                hn[j] = o * cn[j].tanh();
            }
            hs[t] = hn.clone();
            hp = hn;
            cp = cn;
        }
        hs
    }

    fn columns(m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.cols()).map(|c| m.col_vec(c)).collect()
    }

    #[test]
    fn bilstm_matches_standalone_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "t", 3, 4, &mut rng);
        let x = Matrix::uniform(3, 5, 1.0, &mut rng);
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let out = bi.run(&mut g, xv).unwrap();
        let out = g.value(out).clone();
        let xs = columns(&x);
        let fwd = oracle_lstm(&store, &bi.forward, &xs, false);
        let bwd = oracle_lstm(&store, &bi.backward, &xs, true);
        for t in 0..5 {
            for j in 0..4 {
                assert!((out.get(j, t) - fwd[t][j]).abs() < 1e-12);
                assert!((out.get(4 + j, t) - bwd[t][j]).abs() < 1e-12);
            }
        }
        // reversing the input swaps the roles of the two directions
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let fwd_rev = oracle_lstm(&store, &bi.backward, &rev, false);
        for t in 0..5 {
            for j in 0..4 {
                assert!((fwd_rev[4 - t][j] - bwd[t][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_with_zero_bias_gives_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = TaskEncoder::new(&mut store, 3, 2, &mut rng);
        for bi in [&enc.intent, &enc.slot] {
            for cell in [&bi.forward, &bi.backward] {
                store.value_mut(cell.b).fill(0.0);
            }
        }
        let mut g = Graph::new(&store);
        let x = g.input(Matrix::zeros(3, 4));
        let (ei, es) = enc.encode(&mut g, x).unwrap();
        assert_eq!(g.value(ei).sum(), 0.0);
        assert_eq!(g.value(es).sum(), 0.0);
        assert!(g.value(ei).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn task_encoders_are_parameter_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = TaskEncoder::new(&mut store, 3, 2, &mut rng);
        let x = Matrix::uniform(3, 4, 1.0, &mut rng);
        let run = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let xv = g.input(x.clone());
            let (ei, es) = enc.encode(&mut g, xv).unwrap();
            (g.value(ei).clone(), g.value(es).clone())
        };
        let (ei0, es0) = run(&store);
        store.value_mut(enc.intent.forward.w).data_mut()[0] += 0.5;
        let (ei1, es1) = run(&store);
        assert_ne!(ei0, ei1);
        assert_eq!(es0, es1);

        // an intent-only loss leaves the slot BiLSTM without gradient
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let (ei, _es) = enc.encode(&mut g, xv).unwrap();
        let loss = g.sum(ei);
        let grads = g.backward(loss).unwrap();
        for cell in [&enc.slot.forward, &enc.slot.backward] {
            for id in [cell.w, cell.u, cell.b] {
                assert!(grads.param(id).is_none_or(|m| m.data().iter().all(|&v| v == 0.0)));
            }
        }
    }

    fn tiny_shared(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> SharedEncoder {
        let dims = SharedDims {
            word_dim: 4,
            word_hidden: 3,
            char_dim: 3,
            char_hidden: 2,
            attention_dim: 5,
        };
        SharedEncoder::new(store, 6, 8, dims, rng)
    }

    #[test]
    fn single_token_attention_returns_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let enc = tiny_shared(&mut rng, &mut store);
        let utt = Utterance {
            word_ids: vec![3],
            char_ids: vec![vec![2, 5]],
        };
        let mut g = Graph::new(&store);
        let out = enc.encode(&mut g, &utt).unwrap();
        assert_eq!(g.value(out.attention_weights), &Matrix::scalar(1.0));
        let emb = Matrix::column(store.value(enc.word_embeddings).row_slice(3));
        let expected = store.value(enc.attention.value).matmul(&emb).unwrap();
        assert!(g.value(out.attention_out).max_abs_diff(&expected) < 1e-15);
        assert_eq!(g.shape(out.e), (enc.dims.output_dim(), 1));
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let att = SelfAttention::new(&mut store, "sa", 3, 4, &mut rng);
        let x = Matrix::uniform(3, 4, 1.0, &mut rng);
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let mask = [true, true, true, false];
        let (_, w) = att.run(&mut g, xv, Some(&mask)).unwrap();
        let w = g.value(w);
        for r in 0..4 {
            assert_eq!(w.get(r, 3), 0.0);
            let total: f64 = w.row_slice(r).iter().sum();
            assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn shared_output_is_concatenation_of_sub_encoders() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let enc = tiny_shared(&mut rng, &mut store);
        let utt = Utterance {
            word_ids: vec![2, 4],
            char_ids: vec![vec![2, 3, 4], vec![7]],
        };
        let mut g = Graph::new(&store);
        let out = enc.encode(&mut g, &utt).unwrap();
        let e = g.value(out.e).clone();

        // standalone runs of each sub-encoder
        let table = store.value(enc.word_embeddings);
        let xs: Vec<Vec<f64>> = utt.word_ids.iter().map(|&i| table.row_slice(i).to_vec()).collect();
        let wf = oracle_lstm(&store, &enc.word_lstm.forward, &xs, false);
        let wb = oracle_lstm(&store, &enc.word_lstm.backward, &xs, true);
        let mut g2 = Graph::new(&store);
        let x = g2.embed(enc.word_embeddings, &utt.word_ids).unwrap();
        let (sa, _) = enc.attention.run(&mut g2, x, None).unwrap();
        let sa = g2.value(sa).clone();
        let ctable = store.value(enc.char_embeddings);
        for (t, chars) in utt.char_ids.iter().enumerate() {
            let cs: Vec<Vec<f64>> = chars.iter().map(|&i| ctable.row_slice(i).to_vec()).collect();
            let cf = oracle_lstm(&store, &enc.char_lstm.forward, &cs, false);
            let cb = oracle_lstm(&store, &enc.char_lstm.backward, &cs, true);
            let mut expected = Vec::new();
            expected.extend(&wf[t]);
            expected.extend(&wb[t]);
            expected.extend(sa.col_vec(t));
            expected.extend(cf.last().unwrap());
            expected.extend(&cb[0]);
            let got = e.col_vec(t);
            assert_eq!(got.len(), expected.len());
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
