//! Intent and slot decoders plus the prediction file format.

pub mod crf;
pub mod intent;

use std::fmt::Write as _;

pub use crf::{crf_nll, hard_bio_transitions, log_partition, path_score, viterbi, CrfLayer};
pub use intent::{argmax, predicted_count, select_top, IntentHead, IntentOutput};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::metrics::Prediction;

/// One block per utterance: `token<TAB>gold<TAB>pred` lines, then
/// `INTENTS gold=a#b pred=c#d`, blocks separated by a blank line. `header`
/// lines are written first, each prefixed with `# `.
pub fn write_predictions(header: &[String], samples: &[Sample], preds: &[Prediction]) -> Result<String> {
    if samples.len() != preds.len() {
        return Err(Error::Contract(format!(
            "{} samples but {} predictions",
            samples.len(),
            preds.len()
        )));
    }
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    if !header.is_empty() {
        out.push('\n');
    }
    for (i, (s, p)) in samples.iter().zip(preds).enumerate() {
        if p.tags.len() != s.len() {
            return Err(Error::Contract(format!(
                "utterance {i}: {} predicted tags for {} tokens",
                p.tags.len(),
                s.len()
            )));
        }
        if i > 0 {
            out.push('\n');
        }
        for ((tok, gold), pred) in s.tokens.iter().zip(&s.slot_tags).zip(&p.tags) {
            let _ = writeln!(out, "{tok}\t{gold}\t{pred}");
        }
        let pred_intents = p.intents.iter().cloned().collect::<Vec<_>>().join("#");
        let _ = writeln!(out, "INTENTS gold={} pred={}", s.intent_line(), pred_intents);
    }
    Ok(out)
}
