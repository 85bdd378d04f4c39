//! Trains briefly on the generated corpus, then prints the co-attention
//! chain for one validation utterance: correlation matrices and the
//! backward and forward hidden states.
//!
//!     cargo run --release --example inspect_coattention -- [index]

use misca::synthetic::{generate, SyntheticSpec};
use misca::training::{train, TrainConfig};

fn main() -> misca::Result<()> {
    let index: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = generate(SyntheticSpec::default());
    let config = TrainConfig {
        dims: "tiny".into(),
        lr: 1e-2,
        batch_size: 4,
        epochs: 20,
        ..TrainConfig::default()
    };
    let out = train(&config, &corpus.train, &corpus.dev, &mut |_| {})?;
    let sample = &corpus.dev[index.min(corpus.dev.len() - 1)];
    println!("# {}", sample.tokens.join(" "));
    print!("{}", out.model.coattention_dump(sample)?);
    Ok(())
}
