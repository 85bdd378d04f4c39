//! A small generated corpus in the MixATIS style: three intents, four fine
//! slot labels under the coarse labels `fromloc` and `toloc`, multi-word
//! values, and two-clause utterances carrying two intents.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::collections::BTreeSet;

use crate::corpus::{coarse_label, LabelHierarchy, Sample, Schema, Vocab};
use crate::metrics::extract_spans;
use crate::model::Dims;

const CITIES: &[&str] = &["boston", "dallas", "san francisco"];
const STATES: &[&str] = &["texas", "north carolina"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Intent {
    Flight,
    Airfare,
    Ground,
}

impl Intent {
    const ALL: [Intent; 3] = [Intent::Flight, Intent::Airfare, Intent::Ground];

    fn label(self) -> &'static str {
        match self {
            Intent::Flight => "atis_flight",
            Intent::Airfare => "atis_airfare",
            Intent::Ground => "atis_ground_service",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub train: usize,
    pub dev: usize,
    /// Share of utterances with two clauses and two intents.
    pub multi_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train: 20,
            dev: 10,
            multi_fraction: 0.4,
            seed: 0,
        }
    }
}

pub struct SyntheticCorpus {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
}

struct Builder {
    tokens: Vec<String>,
    tags: Vec<String>,
}

impl Builder {
    fn words(&mut self, text: &str) {
        for w in text.split(' ') {
            self.tokens.push(w.to_string());
            self.tags.push("O".into());
        }
    }

    fn value(&mut self, text: &str, label: &str) {
        for (i, w) in text.split(' ').enumerate() {
            self.tokens.push(w.to_string());
            self.tags.push(format!("{}-{label}", if i == 0 { "B" } else { "I" }));
        }
    }
}

/// A place and its fine label suffix.
fn place<R: Rng>(rng: &mut R, cities: &[&'static str], states: &[&'static str]) -> (&'static str, &'static str) {
    if rng.gen_bool(0.6) {
        (cities.choose(rng).expect("non-empty"), "city_name")
    } else {
        (states.choose(rng).expect("non-empty"), "state_name")
    }
}

fn clause<R: Rng>(b: &mut Builder, intent: Intent, rng: &mut R, cities: &[&'static str], states: &[&'static str]) {
    let (from, from_kind) = place(rng, cities, states);
    let (to, to_kind) = place(rng, cities, states);
    match intent {
        Intent::Flight => b.words("show flights from"),
        Intent::Airfare => b.words("what is the fare from"),
        Intent::Ground => {
            b.words("list ground service to");
            b.value(to, &format!("toloc.{to_kind}"));
            return;
        }
    }
    b.value(from, &format!("fromloc.{from_kind}"));
    b.words("to");
    b.value(to, &format!("toloc.{to_kind}"));
}

fn utterance<R: Rng>(rng: &mut R, shape: &[Intent], cities: &[&'static str], states: &[&'static str]) -> Sample {
    let mut b = Builder {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    for (i, &intent) in shape.iter().enumerate() {
        if i > 0 {
            b.words("and");
        }
        clause(&mut b, intent, rng, cities, states);
    }
    Sample::new(b.tokens, b.tags, shape.iter().map(|i| i.label().to_string()))
}

fn random_shape<R: Rng>(rng: &mut R, multi_fraction: f64) -> Vec<Intent> {
    let a = *Intent::ALL.choose(rng).expect("non-empty");
    if !rng.gen_bool(multi_fraction) {
        return vec![a];
    }
    let others: Vec<Intent> = Intent::ALL.iter().copied().filter(|&i| i != a).collect();
    vec![a, *others.choose(rng).expect("non-empty")]
}

/// Intent sequences for a split of `n`: one-clause utterances cycle through
/// the intents and two-clause ones through the ordered pairs, so every
/// intent is seen alone about equally often.
fn stratified_shapes<R: Rng>(rng: &mut R, n: usize, multi_fraction: f64) -> Vec<Vec<Intent>> {
    let multi = (n as f64 * multi_fraction).round() as usize;
    let pairs: Vec<Vec<Intent>> = Intent::ALL
        .iter()
        .flat_map(|&a| Intent::ALL.iter().filter(move |&&b| b != a).map(move |&b| vec![a, b]))
        .collect();
    let mut shapes: Vec<Vec<Intent>> = (0..n - multi).map(|i| vec![Intent::ALL[i % Intent::ALL.len()]]).collect();
    shapes.extend((0..multi).map(|i| pairs[i % pairs.len()].clone()));
    shapes.shuffle(rng);
    shapes
}

/// Every value in both the `from` and `to` role and in both one- and
/// two-clause utterances, every intent alone, and every ordered pair of
/// intents on some two-clause utterance.
fn covers_everything(train: &[Sample]) -> bool {
    let mut seen = BTreeSet::new();
    for s in train {
        let Ok(spans) = extract_spans(&s.slot_tags) else { return false };
        for span in spans {
            let role = coarse_label(&span.label).to_string();
            let value = s.tokens[span.start..=span.end].join(" ");
            seen.insert((value.clone(), role));
            seen.insert((value, if s.intents.len() > 1 { "multi" } else { "single" }.to_string()));
        }
    }
    let all = CITIES.iter().chain(STATES).all(|v| {
        ["fromloc", "toloc", "single", "multi"]
            .iter()
            .all(|r| seen.contains(&(v.to_string(), r.to_string())))
    });
    // clause openers in order identify the ordered intent sequence
    let shapes: BTreeSet<Vec<&str>> = train
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(String::as_str)
                .filter(|t| matches!(*t, "show" | "what" | "list"))
                .collect()
        })
        .collect();
    all && shapes.len() == Intent::ALL.len() * Intent::ALL.len()
}

const MAX_DRAWS: usize = 10_000;

/// Generates train and dev splits. Train is redrawn until it covers every
/// value in both roles and every intent sequence, so dev only recombines
/// what train has shown. Splits too small to ever cover get the last draw.
pub fn generate(spec: SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draws = 0;
    let train = loop {
        draws += 1;
        let candidate: Vec<Sample> = stratified_shapes(&mut rng, spec.train, spec.multi_fraction)
            .iter()
            .map(|shape| utterance(&mut rng, shape, CITIES, STATES))
            .collect();
        if covers_everything(&candidate) || draws == MAX_DRAWS {
            break candidate;
        }
    };
    let dev = (0..spec.dev)
        .map(|_| {
            let shape = random_shape(&mut rng, spec.multi_fraction);
            utterance(&mut rng, &shape, CITIES, STATES)
        })
        .collect();
    SyntheticCorpus { train, dev }
}

/// A hand-sized schema for derivative checks: 2 intents and 3 fine slot
/// labels under 2 coarse parents.
pub fn toy_schema(levels: usize) -> Schema {
    let intents = ["atis_airfare", "atis_flight"];
    let fine = ["fromloc.city_name", "toloc.city_name", "toloc.state_name"];
    Schema {
        vocab: Vocab::from_parts(
            vec!["boston".into(), "to".into(), "denver".into()],
            "bostndve".chars().collect(),
        ),
        hierarchy: LabelHierarchy::from_labels(intents, fine, levels).expect("fixed labels are valid"),
        max_intents: 2,
    }
}

/// Two tokens carrying both toy intents.
pub fn toy_sample() -> Sample {
    Sample::new(
        vec!["to".into(), "boston".into()],
        vec!["O".into(), "B-toloc.city_name".into()],
        ["atis_flight".to_string(), "atis_airfare".to_string()],
    )
}

/// Widths of 2 and 3 so finite differences stay cheap.
pub fn toy_dims() -> Dims {
    Dims {
        word_dim: 3,
        word_hidden: 2,
        char_dim: 2,
        char_hidden: 2,
        self_attention_dim: 2,
        task_hidden: 2,
        label_attention_dim: 3,
        prob_dim: 2,
        slot_embed_dim: 3,
        coattention_dim: 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_the_requested_shape() {
        let c = generate(SyntheticSpec::default());
        assert_eq!((c.train.len(), c.dev.len()), (20, 10));
        let h = LabelHierarchy::build(&c.train, 2).unwrap();
        assert_eq!(h.num_intents(), 3);
        assert_eq!(h.fine_labels().len(), 4);
        assert_eq!(h.level_sizes(), vec![2, 4]);
        assert!(c.train.iter().any(|s| s.intents.len() == 2));
        assert!(c.train.iter().any(|s| s.slot_tags.iter().any(|t| t.starts_with("I-"))));
    }

    #[test]
    fn dev_words_and_labels_are_seen_in_train() {
        for seed in 0..40 {
            let c = generate(SyntheticSpec {
                seed,
                ..Default::default()
            });
            let vocab = Vocab::build(&c.train);
            let tags: BTreeSet<&String> = c.train.iter().flat_map(|s| &s.slot_tags).collect();
            let intents: BTreeSet<&String> = c.train.iter().flat_map(|s| &s.intents).collect();
            for s in &c.dev {
                assert!(s.tokens.iter().all(|t| vocab.word_id(t) > 1), "seed {seed}");
                assert!(s.slot_tags.iter().all(|t| tags.contains(t)), "seed {seed}");
                assert!(s.intents.iter().all(|t| intents.contains(t)), "seed {seed}");
            }
        }
    }

    #[test]
    fn tiny_splits_still_terminate() {
        let c = generate(SyntheticSpec {
            train: 2,
            dev: 1,
            ..Default::default()
        });
        assert_eq!(c.train.len(), 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(SyntheticSpec::default());
        let b = generate(SyntheticSpec::default());
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
    }
}
