//! Trains the full model and both ablations on the generated corpus with the
//! same budget over several seeds and prints mean validation scores.
//!
//!     cargo run --release --example ablation_study -- [seeds] [epochs]

use misca::model::Ablation;
use misca::synthetic::{generate, SyntheticSpec};
use misca::training::{evaluate, train, TrainConfig};

fn main() -> misca::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let corpus = generate(SyntheticSpec::default());

    println!("{:<26} {:>10} {:>10} {:>10} {:>8}", "ablation", "intent", "slot_f1", "overall", "params");
    for ablation in Ablation::ALL {
        let (mut intent, mut slot, mut overall, mut params) = (0.0, 0.0, 0.0, 0);
        for seed in 1..=seeds {
            let config = TrainConfig {
                dims: "small".into(),
                lr: 3e-3,
                batch_size: 4,
                epochs,
                seed,
                ablation,
                stop_at_overall: Some(1.0),
                ..TrainConfig::default()
            };
            let out = train(&config, &corpus.train, &corpus.dev, &mut |_| {})?;
            let (report, _) = evaluate(&out.model, &corpus.dev, false)?;
            intent += report.intent_accuracy;
            slot += report.slot.f1;
            overall += report.overall_accuracy;
            params = out.model.parameter_count();
        }
        let n = seeds as f64;
        println!(
            "{:<26} {:>10.4} {:>10.4} {:>10.4} {:>8}",
            ablation.name(),
            intent / n,
            slot / n,
            overall / n,
            params
        );
    }
    Ok(())
}
