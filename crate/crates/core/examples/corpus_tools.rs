//! Loads a dataset directory (or writes the generated one first) and prints
//! split sizes, the label hierarchy and the tag inventory.
//!
//!     cargo run --release --example corpus_tools -- [dataset_dir] [levels]
//!
//! Without a directory the generated corpus is written to a temporary
//! directory and read back.

use std::path::PathBuf;

use misca::corpus::{parse_corpus, write_corpus, Schema, Split};
use misca::synthetic::{generate, SyntheticSpec};

fn main() -> misca::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let levels = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let dir = match args.first() {
        Some(d) => PathBuf::from(d),
        None => {
            let dir = std::env::temp_dir().join("misca-synthetic");
            std::fs::create_dir_all(&dir).expect("temp dir");
            let c = generate(SyntheticSpec::default());
            for (split, samples) in [(Split::Train, &c.train), (Split::Dev, &c.dev), (Split::Test, &c.dev)] {
                std::fs::write(split.path_in(&dir), write_corpus(samples)).expect("write split");
            }
            println!("wrote the generated corpus to {}", dir.display());
            dir
        }
    };

    let train = parse_corpus(Split::Train.path_in(&dir))?;
    for split in [Split::Train, Split::Dev, Split::Test] {
        let path = split.path_in(&dir);
        if path.exists() {
            let samples = parse_corpus(&path)?;
            let multi = samples.iter().filter(|s| s.intents.len() > 1).count();
            println!("{:<5} {:>7} utterances, {:>6} with several intents", split.name(), samples.len(), multi);
        }
    }

    let schema = Schema::from_train(&train, levels)?;
    let h = &schema.hierarchy;
    println!(
        "{} words, {} characters, {} intents, level sizes {:?}, {} tags",
        schema.vocab.word_count(),
        schema.vocab.char_count(),
        h.num_intents(),
        h.level_sizes(),
        h.tag_count()
    );
    for (j, fine) in h.fine_labels().iter().enumerate() {
        let parents: Vec<usize> = (0..levels).map(|l| h.ancestor(j, l)).collect();
        println!("  {fine:<32} ancestors per level {parents:?}");
    }
    Ok(())
}
