//! Full model assembly: encoders, label attention, co-attention and both
//! decoders, with the two ablations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coattention::{debug_dump, CoAttention, CoAttentionOutput, CoAttentionStack, SoftSlotEmbedding};
use crate::corpus::{encode_sample, Gold, Sample, Schema, Utterance};
use crate::decoders::{hard_bio_transitions, predicted_count, select_top, viterbi, CrfLayer, IntentHead};
use crate::encoders::{SharedDims, SharedEncoder, TaskEncoder};
use crate::error::{Error, Result};
use crate::label_attention::{LabelAttention, SlotLabelAttention, SlotLabelOutput};
use crate::metrics::Prediction;
use crate::numerics::{gradcheck, sigmoid, GradcheckOptions, GradcheckReport, Graph, Matrix, ParamStore, Var};

/// Layer widths. `task_hidden` is per direction, so `d_e = 2 * task_hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub word_dim: usize,
    pub word_hidden: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub self_attention_dim: usize,
    pub task_hidden: usize,
    pub label_attention_dim: usize,
    pub prob_dim: usize,
    pub slot_embed_dim: usize,
    pub coattention_dim: usize,
}

impl Dims {
    pub fn mixatis() -> Self {
        Dims {
            word_dim: 64,
            word_hidden: 64,
            char_dim: 32,
            char_hidden: 32,
            self_attention_dim: 256,
            task_hidden: 128,
            label_attention_dim: 256,
            prob_dim: 32,
            slot_embed_dim: 128,
            coattention_dim: 128,
        }
    }

    pub fn mixsnips() -> Self {
        Dims {
            word_hidden: 128,
            ..Self::mixatis()
        }
    }

    /// Small widths for tests and the synthetic corpus.
    pub fn tiny() -> Self {
        Dims {
            word_dim: 8,
            word_hidden: 6,
            char_dim: 4,
            char_hidden: 3,
            self_attention_dim: 6,
            task_hidden: 6,
            label_attention_dim: 8,
            prob_dim: 4,
            slot_embed_dim: 6,
            coattention_dim: 8,
        }
    }

    /// Middle ground for quick experiments on small corpora.
    pub fn small() -> Self {
        Dims {
            word_dim: 32,
            word_hidden: 32,
            char_dim: 16,
            char_hidden: 16,
            self_attention_dim: 32,
            task_hidden: 32,
            label_attention_dim: 32,
            prob_dim: 16,
            slot_embed_dim: 32,
            coattention_dim: 32,
        }
    }

    /// `d_e`
    pub fn feature_dim(&self) -> usize {
        2 * self.task_hidden
    }

    pub fn shared(&self) -> SharedDims {
        SharedDims {
            word_dim: self.word_dim,
            word_hidden: self.word_hidden,
            char_dim: self.char_dim,
            char_hidden: self.char_hidden,
            attention_dim: self.self_attention_dim,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "mixatis" => Ok(Self::mixatis()),
            "mixsnips" => Ok(Self::mixsnips()),
            "small" => Ok(Self::small()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown dims preset `{other}` (mixatis|mixsnips|small|tiny)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoSlotLabelAttention,
    NoCoattention,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoSlotLabelAttention, Ablation::NoCoattention];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSlotLabelAttention => "no_slot_label_attention",
            Ablation::NoCoattention => "no_coattention",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation `{s}` (full|no_slot_label_attention|no_coattention)"
                ))
            })
    }
}

/// Everything a forward pass produces for one utterance.
pub struct ForwardOutput {
    pub e: Var,
    pub e_i: Var,
    pub e_s: Var,
    pub v_i: Var,
    pub slots: Option<SlotLabelOutput>,
    pub chain: Option<(CoAttentionStack, CoAttentionOutput)>,
    /// `1 x |L^I|`
    pub intent_logits: Var,
    /// `z x 1`
    pub count_logits: Var,
    /// `K x n`
    pub emissions: Var,
}

/// Loss terms of one utterance, all as graph scalars.
pub struct LossParts {
    pub intent_bce: Var,
    pub count_ce: Var,
    pub slot_nll: Var,
    pub hierarchy_bce: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub lambda: f64,
    /// Supervise coarse-level probabilities with labels derived from gold
    /// fine tags.
    pub hierarchy_bce: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            lambda: 0.5,
            hierarchy_bce: false,
        }
    }
}

/// Decoded output in id space.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub intent_probs: Vec<f64>,
    pub count: usize,
    pub intents: Vec<usize>,
    pub tags: Vec<usize>,
}

pub struct MiscaModel {
    pub store: ParamStore,
    pub schema: Schema,
    pub dims: Dims,
    pub ablation: Ablation,
    pub shared: SharedEncoder,
    pub task: TaskEncoder,
    pub intent_attention: LabelAttention,
    pub slot_attention: Option<SlotLabelAttention>,
    pub soft_slots: Option<SoftSlotEmbedding>,
    pub coattention: Option<CoAttention>,
    pub intent_head: IntentHead,
    pub crf: CrfLayer,
}

impl MiscaModel {
    pub fn new(schema: Schema, dims: Dims, ablation: Ablation, seed: u64) -> Result<Self> {
        let h = &schema.hierarchy;
        if h.num_intents() == 0 {
            return Err(Error::Config("schema has no labels".into()));
        }
        if schema.max_intents == 0 {
            return Err(Error::Config("schema has max_intents = 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d_e = dims.feature_dim();
        let shared = SharedEncoder::new(
            &mut store,
            schema.vocab.word_count(),
            schema.vocab.char_count(),
            dims.shared(),
            &mut rng,
        );
        let task = TaskEncoder::new(&mut store, dims.shared().output_dim(), dims.task_hidden, &mut rng);
        let intent_attention = LabelAttention::new(
            &mut store,
            "label_attention.intent",
            h.num_intents(),
            d_e,
            dims.label_attention_dim,
            &mut rng,
        );
        let tags = h.tag_count();
        let (slot_attention, soft_slots, coattention) = match ablation {
            Ablation::NoCoattention => (None, None, None),
            _ => {
                let slot_attention = (ablation == Ablation::Full).then(|| {
                    SlotLabelAttention::new(
                        &mut store,
                        &h.level_sizes(),
                        d_e,
                        dims.label_attention_dim,
                        dims.prob_dim,
                        &mut rng,
                    )
                });
                let soft = SoftSlotEmbedding::new(&mut store, tags, d_e, dims.slot_embed_dim, &mut rng);
                let layer_dims = Self::chain_dims(&dims, ablation, h.levels());
                let co = CoAttention::new(&mut store, &layer_dims, dims.coattention_dim, &mut rng);
                (slot_attention, Some(soft), Some(co))
            }
        };
        let head_dim = match ablation {
            Ablation::NoCoattention => d_e,
            _ => d_e + dims.coattention_dim,
        };
        let intent_head = IntentHead::new(&mut store, head_dim, d_e, h.num_intents(), schema.max_intents, &mut rng);
        let crf = CrfLayer::new(&mut store, tags, head_dim, &mut rng);
        Ok(MiscaModel {
            store,
            schema,
            dims,
            ablation,
            shared,
            task,
            intent_attention,
            slot_attention,
            soft_slots,
            coattention,
            intent_head,
            crf,
        })
    }

    /// Row counts `d_1..d_L` of the co-attention chain.
    pub fn chain_dims(dims: &Dims, ablation: Ablation, levels: usize) -> Vec<usize> {
        let d_e = dims.feature_dim();
        match ablation {
            Ablation::Full => {
                let mut out = vec![d_e, d_e];
                out.extend(std::iter::repeat_n(d_e + dims.prob_dim, levels - 1));
                out.push(dims.slot_embed_dim);
                out
            }
            Ablation::NoSlotLabelAttention => vec![d_e, dims.slot_embed_dim],
            Ablation::NoCoattention => Vec::new(),
        }
    }

    pub fn levels(&self) -> usize {
        self.schema.hierarchy.levels()
    }

    pub fn forward(&self, g: &mut Graph, utt: &Utterance) -> Result<ForwardOutput> {
        self.forward_with_dropout(g, utt, None)
    }

    /// `dropout` is `(rate, rng)`; the mask is applied to the shared
    /// encoding `e`.
    pub fn forward_with_dropout(
        &self,
        g: &mut Graph,
        utt: &Utterance,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<ForwardOutput> {
        if utt.word_ids.is_empty() {
            return Err(Error::Contract("empty utterance".into()));
        }
        let mut e = self.shared.encode(g, utt)?.e;
        if let Some((rate, rng)) = dropout {
            if rate > 0.0 {
                let (r, c) = g.shape(e);
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..r * c)
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                e = g.dropout(e, Matrix::from_vec(r, c, mask)?)?;
            }
        }
        let (e_i, e_s) = self.task.encode(g, e)?;
        let (_, v_i) = self.intent_attention.run(g, e_i, None)?;

        let slots = match &self.slot_attention {
            Some(sa) => Some(sa.run(g, e_s, None)?),
            None => None,
        };
        let chain = match (&self.coattention, &self.soft_slots) {
            (Some(co), Some(soft)) => {
                let s = soft.run(g, e_s)?;
                let mut q = vec![v_i];
                if let Some(slots) = &slots {
                    q.extend(slots.reprs.iter().copied());
                }
                q.push(s);
                Some(co.run(g, &q)?)
            }
            _ => None,
        };
        let (h_i, h_s) = match &chain {
            Some((_, out)) => {
                let h_i = g.concat_rows(&[v_i, out.intent_side()])?;
                let h_s = g.concat_rows(&[e_s, out.slot_side()])?;
                (h_i, h_s)
            }
            None => (v_i, e_s),
        };
        let intent = self.intent_head.run(g, h_i, v_i)?;
        let emissions = self.crf.emissions(g, h_s)?;
        Ok(ForwardOutput {
            e,
            e_i,
            e_s,
            v_i,
            slots,
            chain,
            intent_logits: intent.logits,
            count_logits: intent.count_logits,
            emissions,
        })
    }

    /// `λ (BCE + CE) + (1 - λ) NLL` for one utterance.
    pub fn loss(&self, g: &mut Graph, out: &ForwardOutput, gold: &Gold, opts: LossOptions) -> Result<LossParts> {
        let m = self.schema.hierarchy.num_intents();
        let targets = Matrix::from_vec(1, m, gold.intents.iter().map(|&b| b as f64).collect())?;
        let intent_bce = g.bce_with_logits(out.intent_logits, &targets)?;
        let count_ce = g.softmax_cross_entropy(out.count_logits, gold.intent_count - 1)?;
        let slot_nll = self.crf.nll(g, out.emissions, &gold.tags, None)?;

        let mut l_id = g.add(intent_bce, count_ce)?;
        let mut hierarchy_bce = None;
        if opts.hierarchy_bce {
            if let Some(slots) = &out.slots {
                let mut acc: Option<Var> = None;
                for (level, prop) in slots.propagated.iter().enumerate() {
                    let t = self.coarse_targets(&gold.tags, level);
                    let b = g.bce_with_logits(prop.logits, &t)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, b)?,
                        None => b,
                    });
                }
                if let Some(a) = acc {
                    l_id = g.add(l_id, a)?;
                    hierarchy_bce = Some(a);
                }
            }
        }
        let total = joint_loss(g, l_id, slot_nll, opts.lambda)?;
        Ok(LossParts {
            intent_bce,
            count_ce,
            slot_nll,
            hierarchy_bce,
            total,
        })
    }

    /// `1 x |level|` multi-hot of labels at `level` that are ancestors of a
    /// gold fine label.
    fn coarse_targets(&self, tags: &[usize], level: usize) -> Matrix {
        let h = &self.schema.hierarchy;
        let mut t = Matrix::zeros(1, h.level_sizes()[level]);
        for &tag in tags {
            if let Some(fine) = h.tag_label(tag) {
                t.set(0, h.ancestor(fine, level), 1.0);
            }
        }
        t
    }

    pub fn decode(&self, utt: &Utterance, hard_bio: bool) -> Result<Decoded> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, utt)?;
        let intent_probs: Vec<f64> = g.value(out.intent_logits).data().iter().map(|&x| sigmoid(x)).collect();
        let count = predicted_count(g.value(out.count_logits).data());
        let intents = select_top(&intent_probs, count);
        let t = self.store.value(self.crf.transitions);
        let t = if hard_bio { hard_bio_transitions(t) } else { t.clone() };
        let (tags, _) = viterbi(g.value(out.emissions), &t, None)?;
        Ok(Decoded {
            intent_probs,
            count,
            intents,
            tags,
        })
    }

    pub fn to_prediction(&self, d: &Decoded) -> Prediction {
        let h = &self.schema.hierarchy;
        Prediction {
            intents: d.intents.iter().map(|&i| h.intent_labels[i].clone()).collect(),
            tags: d.tags.iter().map(|&t| h.tags[t].clone()).collect(),
        }
    }

    pub fn predict(&self, sample: &Sample, hard_bio: bool) -> Result<Prediction> {
        let (utt, _) = encode_sample(sample, &self.schema);
        Ok(self.to_prediction(&self.decode(&utt, hard_bio)?))
    }

    pub fn predict_all(&self, samples: &[Sample], hard_bio: bool) -> Result<Vec<Prediction>> {
        samples.iter().map(|s| self.predict(s, hard_bio)).collect()
    }

    /// Checks the taped gradient of the joint loss on `sample` against
    /// central differences for every parameter. The model is left untouched.
    pub fn gradcheck_sample(
        &self,
        sample: &Sample,
        opts: LossOptions,
        check: GradcheckOptions,
    ) -> Result<GradcheckReport> {
        let (utt, gold) = encode_sample(sample, &self.schema);
        let mut store = self.store.clone();
        gradcheck(
            &mut store,
            |g| {
                let out = self.forward(g, &utt)?;
                Ok(self.loss(g, &out, &gold, opts)?.total)
            },
            check,
        )
    }

    /// Text dump of the co-attention chain for one utterance.
    pub fn coattention_dump(&self, sample: &Sample) -> Result<String> {
        let (utt, _) = encode_sample(sample, &self.schema);
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, &utt)?;
        match &out.chain {
            Some((stack, co)) => Ok(debug_dump(&g, stack, co)),
            None => Err(Error::Config(format!("the {} model has no co-attention to inspect", self.ablation))),
        }
    }

    /// Parameter names and shapes in creation order.
    pub fn parameter_census(&self) -> Vec<(String, (usize, usize))> {
        self.store.iter().map(|(_, p)| (p.name.clone(), p.value.shape())).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.total_count()
    }
}

/// `λ · L_ID + (1 - λ) · L_SF`.
pub fn joint_loss(g: &mut Graph, l_id: Var, l_sf: Var, lambda: f64) -> Result<Var> {
    let a = g.scale(l_id, lambda);
    let b = g.scale(l_sf, 1.0 - lambda);
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PAD;
    use crate::synthetic::{toy_dims, toy_sample, toy_schema};

    fn toy_utterance() -> (Utterance, Gold) {
        encode_sample(&toy_sample(), &toy_schema(2))
    }

    fn toy_model(ablation: Ablation, seed: u64) -> MiscaModel {
        MiscaModel::new(toy_schema(2), toy_dims(), ablation, seed).unwrap()
    }

    #[test]
    fn shapes_follow_the_dimension_list() {
        let schema = toy_schema(2);
        let model = MiscaModel::new(schema, Dims::mixatis(), Ablation::Full, 1).unwrap();
        let (utt, _) = toy_utterance();
        let mut g = Graph::new(&model.store);
        let out = model.forward(&mut g, &utt).unwrap();
        let (stack, co) = out.chain.as_ref().unwrap();
        assert_eq!(stack.len(), 4);
        assert_eq!(g.shape(co.intent_side()), (128, 2));
        assert_eq!(g.shape(co.slot_side()), (128, 2));
        assert_eq!(g.shape(stack.q[2]), (256 + 32, 3));
        assert_eq!(g.shape(out.emissions), (7, 2));
        assert_eq!(g.shape(out.count_logits), (2, 1));
    }

    #[test]
    fn ablations_shape_the_chain() {
        let (utt, _) = toy_utterance();
        let m = toy_model(Ablation::NoSlotLabelAttention, 1);
        let mut g = Graph::new(&m.store);
        let out = m.forward(&mut g, &utt).unwrap();
        assert_eq!(out.chain.as_ref().unwrap().0.len(), 2);
        assert!(m.parameter_census().iter().all(|(n, _)| !n.starts_with("label_attention.slot")));

        let m = toy_model(Ablation::NoCoattention, 1);
        let census = m.parameter_census();
        assert!(census.iter().all(|(n, _)| !n.starts_with("coattention.")));
        let w_i = census.iter().find(|(n, _)| n == "intent.W_I").unwrap().1;
        assert_eq!(w_i.0, toy_dims().feature_dim());
        let mut g = Graph::new(&m.store);
        assert!(m.forward(&mut g, &utt).unwrap().chain.is_none());

        let full = toy_model(Ablation::Full, 1).parameter_count();
        assert!(full > toy_model(Ablation::NoSlotLabelAttention, 1).parameter_count());
        assert!(full > m.parameter_count());
        assert_eq!(
            toy_model(Ablation::Full, 1).parameter_census(),
            toy_model(Ablation::Full, 9).parameter_census()
        );
        assert!("bogus".parse::<Ablation>().is_err());
    }

    /// LSTM(x -> h), both directions.
    fn bilstm(x: usize, h: usize) -> usize {
        2 * (4 * h * x + 4 * h * h + 4 * h)
    }

    fn analytic_count(s: &Schema, d: &Dims, ablation: Ablation) -> usize {
        let h = &s.hierarchy;
        let (m_i, k) = (h.num_intents(), h.tag_count());
        let d_e = d.feature_dim();
        let shared_out = 2 * d.word_hidden + d.self_attention_dim + 2 * d.char_hidden;
        let mut n = s.vocab.word_count() * d.word_dim
            + s.vocab.char_count() * d.char_dim
            + bilstm(d.word_dim, d.word_hidden)
            + bilstm(d.char_dim, d.char_hidden)
            + 3 * d.self_attention_dim * d.word_dim
            + 2 * bilstm(shared_out, d.task_hidden)
            + m_i * d.label_attention_dim
            + d.label_attention_dim * d_e;
        let sizes = h.level_sizes();
        let head_in = if ablation == Ablation::NoCoattention { d_e } else { d_e + d.coattention_dim };
        if ablation != Ablation::NoCoattention {
            let mut chain = vec![d_e];
            if ablation == Ablation::Full {
                for (lvl, &m) in sizes.iter().enumerate() {
                    n += m * d.label_attention_dim + d.label_attention_dim * d_e;
                    if lvl > 0 {
                        let prev = sizes[lvl - 1];
                        let w_rows = if lvl == 1 { d_e } else { d_e + d.prob_dim };
                        n += w_rows * prev + d.prob_dim * prev;
                    }
                    chain.push(if lvl == 0 { d_e } else { d_e + d.prob_dim });
                }
            }
            chain.push(d.slot_embed_dim);
            n += d.slot_embed_dim * k + k * d_e;
            n += chain.iter().map(|&dt| 2 * d.coattention_dim * dt).sum::<usize>();
            n += chain.windows(2).map(|w| w[0] * w[1]).sum::<usize>();
        }
        n += head_in * m_i + s.max_intents * m_i + d_e;
        n += k * head_in + (k + 2) * (k + 2);
        n
    }

    #[test]
    fn census_matches_closed_form() {
        for levels in [1, 2] {
            for ablation in Ablation::ALL {
                for dims in [toy_dims(), Dims::tiny(), Dims::mixatis()] {
                    let s = toy_schema(levels);
                    let m = MiscaModel::new(s.clone(), dims, ablation, 3).unwrap();
                    assert_eq!(m.parameter_count(), analytic_count(&s, &dims, ablation), "{ablation} {levels}");
                }
            }
        }
    }

    #[test]
    fn zero_parameters_give_neutral_intent_outputs() {
        let mut m = toy_model(Ablation::Full, 2);
        for p in m.store.iter_mut() {
            p.value.fill(0.0);
        }
        let utt = Utterance {
            word_ids: vec![2],
            char_ids: vec![vec![2, 3]],
        };
        let mut g = Graph::new(&m.store);
        let out = m.forward(&mut g, &utt).unwrap();
        let p = g.sigmoid(out.intent_logits);
        assert!(g.value(p).data().iter().all(|&x| x == 0.5));
        let c = g.value(out.count_logits);
        assert!(c.data().iter().all(|&x| x == c.data()[0]));
        let d = m.decode(&utt, false).unwrap();
        assert_eq!(d.count, 1);
        assert_eq!(d.intents, vec![0]);
    }

    #[test]
    fn padding_never_reaches_the_outputs() {
        let m = toy_model(Ablation::Full, 4);
        let schema = toy_schema(2);
        let a = Sample::new(vec!["to".into()], vec!["O".into()], ["atis_flight".to_string()]);
        let b = Sample::new(
            vec!["boston".into(), "to".into(), "denver".into()],
            vec!["B-fromloc.city_name".into(), "O".into(), "B-toloc.city_name".into()],
            ["atis_flight".to_string()],
        );
        let mut batch = crate::corpus::make_batches(&[a.clone(), b], &schema, 2, None).remove(0);
        let reference = m.decode(&batch.utterance(0), false).unwrap();
        let row = batch.sample_index.iter().position(|&i| i == 0).unwrap();
        for pad in [PAD, 2, 3, 4] {
            for p in 1..batch.max_len() {
                batch.token_ids[row][p] = pad;
            }
            let utt = batch.utterance(row);
            assert_eq!(utt, encode_sample(&a, &schema).0);
            assert_eq!(m.decode(&utt, false).unwrap(), reference);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (utt, gold) = toy_utterance();
        let run = || {
            let m = toy_model(Ablation::Full, 5);
            let mut g = Graph::new(&m.store);
            let out = m.forward(&mut g, &utt).unwrap();
            let l = m.loss(&mut g, &out, &gold, LossOptions::default()).unwrap();
            g.value(l.total).get(0, 0)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn lambda_endpoints_silence_the_other_task() {
        let (utt, gold) = toy_utterance();
        let m = toy_model(Ablation::Full, 6);
        for (lambda, silent) in [(1.0, vec!["crf."]), (0.0, vec!["intent."])] {
            let mut g = Graph::new(&m.store);
            let out = m.forward(&mut g, &utt).unwrap();
            let parts = m.loss(&mut g, &out, &gold, LossOptions { lambda, hierarchy_bce: false }).unwrap();
            let (bce, ce, nll) = (
                g.value(parts.intent_bce).get(0, 0),
                g.value(parts.count_ce).get(0, 0),
                g.value(parts.slot_nll).get(0, 0),
            );
            let expect = if lambda == 1.0 { bce + ce } else { nll };
            assert_eq!(g.value(parts.total).get(0, 0), expect);
            let grads = g.backward(parts.total).unwrap();
            for (id, p) in m.store.iter() {
                if silent.iter().any(|s| p.name.starts_with(s)) {
                    if let Some(gr) = grads.param(id) {
                        assert!(gr.data().iter().all(|&v| v == 0.0), "{} at lambda {lambda}", p.name);
                    }
                }
            }
        }
    }

    #[test]
    fn joint_loss_arithmetic() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Matrix::scalar(2.0));
        let b = g.input(Matrix::scalar(4.0));
        let l = joint_loss(&mut g, a, b, 0.5).unwrap();
        assert_eq!(g.value(l).get(0, 0), 3.0);
    }

    #[test]
    fn end_to_end_gradcheck() {
        for ablation in Ablation::ALL {
            let opts = LossOptions {
                lambda: 0.5,
                hierarchy_bce: true,
            };
            let report = toy_model(ablation, 7)
                .gradcheck_sample(&toy_sample(), opts, GradcheckOptions::default())
                .unwrap();
            assert!(report.passed(), "{ablation}\n{report}");
        }
    }

    #[test]
    fn cross_task_gradients_exist() {
        // slot-to-intent: intent logits depend on E^S; intent-to-slot:
        // emissions depend on E^I
        let (utt, _) = toy_utterance();
        let m = toy_model(Ablation::Full, 8);
        let mut g = Graph::new(&m.store);
        let out = m.forward(&mut g, &utt).unwrap();
        let (_, co) = out.chain.as_ref().unwrap();
        let back = g.sum(co.intent_side());
        let grads = g.backward(back).unwrap();
        assert!(grads.wrt(out.e_s).unwrap().data().iter().any(|&v| v != 0.0));
        let fwd = g.sum(co.slot_side());
        let grads = g.backward(fwd).unwrap();
        assert!(grads.wrt(out.e_i).unwrap().data().iter().any(|&v| v != 0.0));
    }
}
