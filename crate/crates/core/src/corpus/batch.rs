use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::PAD;
use super::{Sample, Schema};

/// Padded, masked mini-batch. Row `b` corresponds to `samples[sample_index[b]]`
/// of the slice the batch was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sample_index: Vec<usize>,
    /// batch x max_n
    pub token_ids: Vec<Vec<usize>>,
    /// batch x max_n x max_wordlen, padded with [`PAD`]
    pub char_ids: Vec<Vec<Vec<usize>>>,
    /// batch x max_n, 1 for real tokens
    pub mask: Vec<Vec<u8>>,
    /// batch x max_n; unknown and pad tags map to `O` (0)
    pub gold_tags: Vec<Vec<usize>>,
    /// batch x |intents| multi-hot
    pub gold_intents: Vec<Vec<u8>>,
    /// number of known gold intents, clamped to `1..=z`
    pub gold_intent_count: Vec<usize>,
}

/// One unpadded utterance extracted from a batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
}

/// Gold annotations in id space.
#[derive(Debug, Clone, PartialEq)]
pub struct Gold {
    pub tags: Vec<usize>,
    pub intents: Vec<u8>,
    pub intent_count: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.mask.first().map_or(0, Vec::len)
    }

    pub fn length(&self, b: usize) -> usize {
        self.mask[b].iter().map(|&m| m as usize).sum()
    }

    pub fn utterance(&self, b: usize) -> Utterance {
        let n = self.length(b);
        Utterance {
            word_ids: self.token_ids[b][..n].to_vec(),
            char_ids: self.char_ids[b][..n]
                .iter()
                .map(|w| w.iter().copied().take_while(|&c| c != PAD).collect())
                .collect(),
        }
    }

    pub fn gold(&self, b: usize) -> Gold {
        let n = self.length(b);
        Gold {
            tags: self.gold_tags[b][..n].to_vec(),
            intents: self.gold_intents[b].clone(),
            intent_count: self.gold_intent_count[b],
        }
    }
}

/// Encodes one sample as ids against `schema`.
pub fn encode_sample(sample: &Sample, schema: &Schema) -> (Utterance, Gold) {
    let h = &schema.hierarchy;
    let word_ids = sample.tokens.iter().map(|t| schema.vocab.word_id(t)).collect();
    let char_ids = sample.tokens.iter().map(|t| schema.vocab.char_ids(t)).collect();
    let tags = sample
        .slot_tags
        .iter()
        .map(|t| h.tag_index(t).unwrap_or(0))
        .collect();
    let mut intents = vec![0u8; h.num_intents()];
    for label in &sample.intents {
        if let Some(j) = h.intent_index(label) {
            intents[j] = 1;
        }
    }
    let known: usize = intents.iter().map(|&v| v as usize).sum();
    let intent_count = known.clamp(1, schema.max_intents.max(1));
    (
        Utterance { word_ids, char_ids },
        Gold {
            tags,
            intents,
            intent_count,
        },
    )
}

/// Splits `samples` into padded batches of at most `batch_size`, optionally
/// shuffling the order with a seeded generator first.
pub fn make_batches(
    samples: &[Sample],
    schema: &Schema,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size.max(1))
        .map(|chunk| build_batch(samples, schema, chunk))
        .collect()
}

fn build_batch(samples: &[Sample], schema: &Schema, indices: &[usize]) -> Batch {
    let encoded: Vec<(Utterance, Gold)> = indices
        .iter()
        .map(|&i| encode_sample(&samples[i], schema))
        .collect();
    let max_n = encoded.iter().map(|(u, _)| u.word_ids.len()).max().unwrap_or(0);
    let max_w = encoded
        .iter()
        .flat_map(|(u, _)| u.char_ids.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut batch = Batch {
        sample_index: indices.to_vec(),
        token_ids: Vec::new(),
        char_ids: Vec::new(),
        mask: Vec::new(),
        gold_tags: Vec::new(),
        gold_intents: Vec::new(),
        gold_intent_count: Vec::new(),
    };
    for (u, g) in encoded {
        let n = u.word_ids.len();
        let mut ids = u.word_ids;
        ids.resize(max_n, PAD);
        let mut chars: Vec<Vec<usize>> = u
            .char_ids
            .into_iter()
            .map(|mut w| {
                w.resize(max_w, PAD);
                w
            })
            .collect();
        chars.resize(max_n, vec![PAD; max_w]);
        let mut mask = vec![1u8; n];
        mask.resize(max_n, 0);
        let mut tags = g.tags;
        tags.resize(max_n, 0);
        batch.token_ids.push(ids);
        batch.char_ids.push(chars);
        batch.mask.push(mask);
        batch.gold_tags.push(tags);
        batch.gold_intents.push(g.intents);
        batch.gold_intent_count.push(g.intent_count);
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(count: usize) -> Vec<Sample> {
        (0..count)
            .map(|i| {
                let n = 1 + i % 4;
                Sample::new(
                    (0..n).map(|k| format!("w{k}")).collect(),
                    (0..n).map(|k| if k == 0 { "B-x".into() } else { "O".into() }).collect(),
                    [if i % 2 == 0 { "a" } else { "b" }.to_string()],
                )
            })
            .collect()
    }

    #[test]
    fn batch_sizes_follow_arithmetic() {
        let s = samples(70);
        let schema = Schema::from_train(&s, 1).unwrap();
        let sizes: Vec<usize> = make_batches(&s, &schema, 32, None).iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![32, 32, 6]);
        assert!(make_batches(&[], &schema, 32, Some(1)).is_empty());
    }

    #[test]
    fn short_samples_get_trailing_zero_mask() {
        let s = samples(4);
        let schema = Schema::from_train(&s, 1).unwrap();
        let b = &make_batches(&s, &schema, 4, None)[0];
        assert_eq!(b.max_len(), 4);
        assert_eq!(b.mask[0], vec![1, 0, 0, 0]);
        assert_eq!(b.token_ids[0][1..], [PAD, PAD, PAD]);
        assert_eq!(b.utterance(0).word_ids.len(), 1);
        for (row, counts) in b.gold_intents.iter().zip(&b.gold_intent_count) {
            assert_eq!(row.iter().map(|&v| v as usize).sum::<usize>(), *counts);
        }
    }

    #[test]
    fn shuffling_is_seeded() {
        let s = samples(50);
        let schema = Schema::from_train(&s, 1).unwrap();
        let a = make_batches(&s, &schema, 8, Some(9));
        let b = make_batches(&s, &schema, 8, Some(9));
        let c = make_batches(&s, &schema, 8, Some(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn eval_only_tokens_map_to_unk() {
        let train = samples(4);
        let schema = Schema::from_train(&train, 1).unwrap();
        let eval = [Sample::new(vec!["unseen".into()], vec!["O".into()], ["a".to_string()])];
        let (u, _) = encode_sample(&eval[0], &schema);
        assert_eq!(u.word_ids, vec![super::super::vocab::UNK]);
    }
}
