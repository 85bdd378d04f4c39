//! Corpus files, label hierarchy, vocabularies and padded batches.

mod batch;
mod hierarchy;
mod sample;
mod vocab;

pub use batch::{encode_sample, make_batches, Batch, Gold, Utterance};
pub use hierarchy::{coarse_label, LabelHierarchy};
pub use sample::{parse_corpus, parse_corpus_str, repair_bio, write_corpus, Bio, ParsedCorpus, Sample, Split};
pub use vocab::{Schema, Vocab, PAD, UNK};

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;
    use std::path::Path;

    fn sample_strategy() -> impl Strategy<Value = Sample> {
        let tag = prop_oneof![
            Just("O".to_string()),
            "[a-c](\\.[xy])?".prop_map(|l| format!("B-{l}")),
            "[a-c](\\.[xy])?".prop_map(|l| format!("I-{l}")),
        ];
        (1usize..8)
            .prop_flat_map(move |n| {
                (
                    prop::collection::vec("[A-Za-z']{1,6}", n),
                    prop::collection::vec(tag.clone(), n),
                    prop::collection::btree_set("atis_[a-z]{1,4}", 1..4),
                )
            })
            .prop_map(|(tokens, mut tags, intents)| {
                repair_bio(&mut tags);
                Sample { tokens, slot_tags: tags, intents }
            })
    }

    proptest! {
        #[test]
        fn serialized_samples_reparse_equal(samples in prop::collection::vec(sample_strategy(), 1..6)) {
            let text = write_corpus(&samples);
            let back = parse_corpus_str(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(back.repaired_tags, 0);
            prop_assert_eq!(back.samples, samples);
        }

        #[test]
        fn parents_are_label_prefixes(samples in prop::collection::vec(sample_strategy(), 1..6)) {
            let h = LabelHierarchy::build(&samples, 2).unwrap();
            for (j, fine) in h.slot_levels[1].iter().enumerate() {
                let parent = &h.slot_levels[0][h.parents[0][j]];
                let expected = fine.split('.').next().unwrap();
                prop_assert_eq!(parent.as_str(), expected);
            }
            prop_assert_eq!(h.tag_count(), 2 * h.fine_labels().len() + 1);
        }
    }
}
