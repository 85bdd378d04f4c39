use rand::Rng;

use crate::encoders::INIT_BOUND;
use crate::error::Result;
use crate::numerics::{Graph, Matrix, ParamId, ParamStore, Var};

/// Per-label sigmoid heads over `H^I` plus the intent-count classifier.
#[derive(Debug, Clone)]
pub struct IntentHead {
    /// Column `j` is `w_j`; `input_dim x |L^I|`.
    pub label_weights: ParamId,
    /// `z x |L^I|`
    pub count_labels: ParamId,
    /// `d_e x 1`
    pub count_features: ParamId,
    pub max_intents: usize,
}

pub struct IntentOutput {
    /// `1 x |L^I|`
    pub logits: Var,
    /// `z x 1`, class `c` means `c + 1` intents.
    pub count_logits: Var,
}

impl IntentHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        input_dim: usize,
        feature_dim: usize,
        intents: usize,
        max_intents: usize,
        rng: &mut R,
    ) -> Self {
        IntentHead {
            label_weights: store.add("intent.W_I", Matrix::uniform(input_dim, intents, INIT_BOUND, rng)),
            count_labels: store.add("intent.W_INP", Matrix::uniform(max_intents, intents, INIT_BOUND, rng)),
            count_features: store.add("intent.w_INP", Matrix::uniform(feature_dim, 1, INIT_BOUND, rng)),
            max_intents,
        }
    }

    /// `h` is `H^I` (or `V^I` alone), `v_i` is `V^I`.
    pub fn run(&self, g: &mut Graph, h: Var, v_i: Var) -> Result<IntentOutput> {
        let w = g.param(self.label_weights);
        let prod = g.mul(w, h)?;
        let logits = g.sum_rows(prod);

        let w_inp = g.param(self.count_labels);
        let f = g.param(self.count_features);
        let vt = g.transpose(v_i);
        let per_label = g.matmul(vt, f)?;
        let count_logits = g.matmul(w_inp, per_label)?;
        Ok(IntentOutput { logits, count_logits })
    }
}

/// Index of the largest value; the lower index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted number of intents: argmax class + 1.
pub fn predicted_count(count_logits: &[f64]) -> usize {
    argmax(count_logits) + 1
}

/// Indices of the `count` largest probabilities in ascending index order.
/// Equal probabilities are ranked by lower index first.
pub fn select_top(probs: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(count.min(probs.len()));
    order.sort_unstable();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(select_top(&[0.5, 0.5, 0.5, 0.5], 2), vec![0, 1]);
        assert_eq!(select_top(&[0.1, 0.9, 0.9], 1), vec![1]);
        assert_eq!(predicted_count(&[0.0, 0.0, 0.0]), 1);
    }

    #[test]
    fn single_count_picks_the_argmax() {
        assert_eq!(select_top(&[0.2, 0.7, 0.6], 1), vec![1]);
    }

    #[test]
    fn matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = rng.gen_range(1..8);
            let probs: Vec<f64> = (0..m).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let k = rng.gen_range(1..=m);
            // oracle: repeatedly take the first maximum among the remaining
            let mut left: Vec<Option<f64>> = probs.iter().copied().map(Some).collect();
            let mut expected = Vec::new();
            for _ in 0..k {
                let mut best: Option<usize> = None;
                for (i, p) in left.iter().enumerate() {
                    if let Some(p) = p {
                        if best.is_none_or(|b| *p > left[b].unwrap()) {
                            best = Some(i);
                        }
                    }
                }
                let b = best.unwrap();
                expected.push(b);
                left[b] = None;
            }
            expected.sort_unstable();
            assert_eq!(select_top(&probs, k), expected, "{probs:?} k={k}");
        }
    }

    #[test]
    fn raising_a_probability_never_drops_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let m = rng.gen_range(2..7);
            let mut probs: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            let k = rng.gen_range(1..=m);
            let j = rng.gen_range(0..m);
            let before = select_top(&probs, k);
            probs[j] += rng.gen::<f64>();
            let after = select_top(&probs, k);
            if before.contains(&j) {
                assert!(after.contains(&j));
            }
            assert_eq!(after.len(), k);
        }
    }

    #[test]
    fn zero_weights_give_half_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let head = IntentHead::new(&mut store, 5, 3, 4, 2, &mut rng);
        store.value_mut(head.label_weights).fill(0.0);
        let g_store = store;
        let mut g = Graph::new(&g_store);
        let h = g.input(Matrix::uniform(5, 4, 1.0, &mut rng));
        let v = g.input(Matrix::uniform(3, 4, 1.0, &mut rng));
        let out = head.run(&mut g, h, v).unwrap();
        let p = g.sigmoid(out.logits);
        assert!(g.value(p).data().iter().all(|&x| x == 0.5));
        assert_eq!(g.shape(out.count_logits), (2, 1));
        assert_eq!(select_top(g.value(p).data(), 2), vec![0, 1]);
    }

    #[test]
    fn count_logits_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::new();
        let head = IntentHead::new(&mut store, 3, 3, 2, 3, &mut rng);
        let vi = Matrix::uniform(3, 2, 1.0, &mut rng);
        let w_inp = store.value(head.count_labels).clone();
        let f = store.value(head.count_features).clone();
        let wi = store.value(head.label_weights).clone();
        let mut g = Graph::new(&store);
        let v = g.input(vi.clone());
        let out = head.run(&mut g, v, v).unwrap();
        for c in 0..3 {
            let mut s = 0.0;
            for j in 0..2 {
                let dot: f64 = (0..3).map(|r| vi.get(r, j) * f.get(r, 0)).sum();
                s += w_inp.get(c, j) * dot;
            }
            assert!((g.value(out.count_logits).get(c, 0) - s).abs() < 1e-14);
        }
        for j in 0..2 {
            let dot: f64 = (0..3).map(|r| vi.get(r, j) * wi.get(r, j)).sum();
            assert!((g.value(out.logits).get(0, j) - dot).abs() < 1e-14);
        }
    }
}
