//! Scores a prediction file written by `misca predict` (or any file in the
//! same layout) without a model: intent accuracy, span F1, overall accuracy.
//!
//!     cargo run --release --example evaluate_predictions -- predictions.txt

use std::collections::BTreeSet;

use misca::corpus::Sample;
use misca::metrics::{EvalReport, Prediction};

fn intents(field: &str) -> BTreeSet<String> {
    field.split('#').filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn main() -> misca::Result<()> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: evaluate_predictions <prediction file>");
        std::process::exit(2);
    };
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| {
        eprintln!("{path}: {e}");
        std::process::exit(1);
    });

    let (mut golds, mut preds) = (Vec::new(), Vec::new());
    let (mut tokens, mut gold_tags, mut pred_tags) = (Vec::new(), Vec::new(), Vec::new());
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        if let Some(rest) = line.strip_prefix("INTENTS ") {
            let mut gold = BTreeSet::new();
            let mut pred = BTreeSet::new();
            for field in rest.split_whitespace() {
                if let Some(v) = field.strip_prefix("gold=") {
                    gold = intents(v);
                } else if let Some(v) = field.strip_prefix("pred=") {
                    pred = intents(v);
                }
            }
            golds.push(Sample::new(std::mem::take(&mut tokens), std::mem::take(&mut gold_tags), gold));
            preds.push(Prediction {
                intents: pred,
                tags: std::mem::take(&mut pred_tags),
            });
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            eprintln!("{path}: expected `token<TAB>gold<TAB>pred`, got `{line}`");
            std::process::exit(1);
        }
        tokens.push(cols[0].to_string());
        gold_tags.push(cols[1].to_string());
        pred_tags.push(cols[2].to_string());
    }
    print!("{}", EvalReport::compute(&preds, &golds)?);
    Ok(())
}
