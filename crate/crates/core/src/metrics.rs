//! Intent accuracy, span-level slot F1 and overall (sentence-level)
//! accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::corpus::{Bio, Sample};
use crate::error::{Error, Result};

/// Model output for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub intents: BTreeSet<String>,
    pub tags: Vec<String>,
}

/// A labelled span over token positions `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Extracts spans CoNLL-style: a span opens at `B-x`, or at an `I-x` that does
/// not continue an `x` span, and runs over the following `I-x` tags.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let bio = Bio::parse(tag.as_ref())?;
        let continues = matches!((bio, open), (Bio::Inside(l), Some((_, o))) if l == o);
        if continues {
            continue;
        }
        if let Some((start, label)) = open.take() {
            spans.push(Span {
                start,
                end: i - 1,
                label: label.to_string(),
            });
        }
        if let Some(label) = bio.label() {
            open = Some((i, label));
        }
    }
    if let Some((start, label)) = open {
        spans.push(Span {
            start,
            end: tags.len() - 1,
            label: label.to_string(),
        });
    }
    Ok(spans)
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!(
            "{what}: {a} predictions vs {b} references"
        )));
    }
    Ok(())
}

/// Fraction of utterances whose predicted intent set equals the gold set.
pub fn intent_accuracy(preds: &[BTreeSet<String>], golds: &[BTreeSet<String>]) -> Result<f64> {
    check_len(preds.len(), golds.len(), "intent_accuracy")?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: Counts,
    pub per_label: BTreeMap<String, Counts>,
}

/// Micro-averaged exact-match span F1 over a corpus.
pub fn slot_f1<S: AsRef<str>>(preds: &[Vec<S>], golds: &[Vec<S>]) -> Result<SlotScores> {
    check_len(preds.len(), golds.len(), "slot_f1")?;
    let mut total = Counts::default();
    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Contract(format!(
                "utterance {i}: {} predicted tags vs {} gold tags",
                p.len(),
                g.len()
            )));
        }
        let ps: BTreeSet<Span> = extract_spans(p)?.into_iter().collect();
        let gs: BTreeSet<Span> = extract_spans(g)?.into_iter().collect();
        for s in &ps {
            let c = per_label.entry(s.label.clone()).or_default();
            if gs.contains(s) {
                c.tp += 1;
                total.tp += 1;
            } else {
                c.fp += 1;
                total.fp += 1;
            }
        }
        for s in gs.difference(&ps) {
            per_label.entry(s.label.clone()).or_default().fn_ += 1;
            total.fn_ += 1;
        }
    }
    Ok(SlotScores {
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        total,
        per_label,
    })
}

/// Fraction of utterances with both the exact intent set and the exact tag
/// sequence.
pub fn overall_accuracy(preds: &[Prediction], golds: &[Sample]) -> Result<f64> {
    check_len(preds.len(), golds.len(), "overall_accuracy")?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.intents == g.intents && p.tags == g.slot_tags)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of utterances whose full tag sequence is correct.
pub fn sequence_accuracy(preds: &[Prediction], golds: &[Sample]) -> Result<f64> {
    check_len(preds.len(), golds.len(), "sequence_accuracy")?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p.tags == g.slot_tags).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub utterances: usize,
    pub intent_accuracy: f64,
    pub slot: SlotScores,
    pub sequence_accuracy: f64,
    pub overall_accuracy: f64,
    /// Per intent label: tp/fp/fn over predicted vs gold sets.
    pub per_intent: BTreeMap<String, Counts>,
}

impl EvalReport {
    pub fn compute(preds: &[Prediction], golds: &[Sample]) -> Result<Self> {
        check_len(preds.len(), golds.len(), "evaluate")?;
        let pi: Vec<BTreeSet<String>> = preds.iter().map(|p| p.intents.clone()).collect();
        let gi: Vec<BTreeSet<String>> = golds.iter().map(|g| g.intents.clone()).collect();
        let pt: Vec<Vec<String>> = preds.iter().map(|p| p.tags.clone()).collect();
        let gt: Vec<Vec<String>> = golds.iter().map(|g| g.slot_tags.clone()).collect();
        let mut per_intent: BTreeMap<String, Counts> = BTreeMap::new();
        for (p, g) in pi.iter().zip(&gi) {
            for l in p {
                let c = per_intent.entry(l.clone()).or_default();
                if g.contains(l) {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                }
            }
            for l in g.difference(p) {
                per_intent.entry(l.clone()).or_default().fn_ += 1;
            }
        }
        Ok(EvalReport {
            utterances: preds.len(),
            intent_accuracy: intent_accuracy(&pi, &gi)?,
            slot: slot_f1(&pt, &gt)?,
            sequence_accuracy: sequence_accuracy(preds, golds)?,
            overall_accuracy: overall_accuracy(preds, golds)?,
            per_intent,
        })
    }

    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "utterances={}", self.utterances);
        let _ = writeln!(out, "intent_accuracy={}", self.intent_accuracy);
        let _ = writeln!(out, "slot_precision={}", self.slot.precision);
        let _ = writeln!(out, "slot_recall={}", self.slot.recall);
        let _ = writeln!(out, "slot_f1={}", self.slot.f1);
        let _ = writeln!(out, "sequence_accuracy={}", self.sequence_accuracy);
        let _ = writeln!(out, "overall_accuracy={}", self.overall_accuracy);
        for (l, c) in &self.slot.per_label {
            let _ = writeln!(out, "slot.{l}.f1={}", c.f1());
        }
        for (l, c) in &self.per_intent {
            let _ = writeln!(out, "intent.{l}.f1={}", c.f1());
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "utterances          {:>8}", self.utterances)?;
        writeln!(f, "intent accuracy     {:>8.2}", 100.0 * self.intent_accuracy)?;
        writeln!(
            f,
            "slot P / R / F1     {:>8.2} {:>8.2} {:>8.2}",
            100.0 * self.slot.precision,
            100.0 * self.slot.recall,
            100.0 * self.slot.f1
        )?;
        writeln!(f, "sequence accuracy   {:>8.2}", 100.0 * self.sequence_accuracy)?;
        writeln!(f, "overall accuracy    {:>8.2}", 100.0 * self.overall_accuracy)?;
        writeln!(f)?;
        writeln!(f, "{:<32} {:>5} {:>5} {:>5} {:>7}", "slot label", "tp", "fp", "fn", "f1")?;
        for (l, c) in &self.slot.per_label {
            writeln!(f, "{l:<32} {:>5} {:>5} {:>5} {:>7.2}", c.tp, c.fp, c.fn_, 100.0 * c.f1())?;
        }
        writeln!(f)?;
        writeln!(f, "{:<32} {:>5} {:>5} {:>5} {:>7}", "intent", "tp", "fp", "fn", "f1")?;
        for (l, c) in &self.per_intent {
            writeln!(f, "{l:<32} {:>5} {:>5} {:>5} {:>7.2}", c.tp, c.fp, c.fn_, 100.0 * c.f1())?;
        }
        Ok(())
    }
}
