//! Trains the full model on the generated corpus, prints one line per epoch
//! and then lists any validation utterance the selected model gets wrong.
//!
//!     cargo run --release --example train_synthetic -- [seed] [epochs] [dims] [ablation] [lr] [train_size] [batch_size] [dropout] [corpus_seed]

use std::time::Instant;

use misca::synthetic::{generate, SyntheticSpec};
use misca::training::{evaluate, train, TrainConfig};

fn main() -> misca::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let dims = args.get(2).cloned().unwrap_or_else(|| "small".into());
    let ablation = match args.get(3) {
        Some(a) => a.parse()?,
        None => Default::default(),
    };
    let lr = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let train_size = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(SyntheticSpec::default().train);
    let batch_size = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(4);
    let dropout = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let corpus_seed = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0);

    let corpus = generate(SyntheticSpec {
        train: train_size,
        seed: corpus_seed,
        ..SyntheticSpec::default()
    });
    let config = TrainConfig {
        dims,
        ablation,
        batch_size,
        dropout,
        lr,
        epochs,
        seed,
        stop_at_overall: Some(1.0),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&config, &corpus.train, &corpus.dev, &mut |r| println!("{r}"))?;
    println!(
        "best epoch {} with validation overall accuracy {:.4} after {:.1}s",
        outcome.best_epoch(),
        outcome.checkpoint.val_overall_accuracy,
        start.elapsed().as_secs_f64()
    );
    let (report, preds) = evaluate(&outcome.model, &corpus.dev, false)?;
    print!("{report}");
    for (s, p) in corpus.dev.iter().zip(&preds) {
        if p.intents == s.intents && p.tags == s.slot_tags {
            continue;
        }
        println!("miss: {}", s.tokens.join(" "));
        println!("  gold {} | {}", s.intent_line(), s.slot_tags.join(" "));
        println!("  pred {:?} | {}", p.intents, p.tags.join(" "));
    }
    Ok(())
}
