//! Scores every tag path of a small CRF by hand and compares the result with
//! the forward algorithm and Viterbi, with and without hard BIO
//! constraints.
//!
//!     cargo run --release --example crf_decoding

use misca::decoders::{hard_bio_transitions, log_partition, path_score, viterbi};
use misca::numerics::Matrix;

fn main() -> misca::Result<()> {
    // tags: O, B-city, I-city; three tokens
    let names = ["O", "B-city", "I-city"];
    let em = Matrix::from_rows(&[&[0.2, 1.0, 0.1], &[1.5, 0.3, 0.0], &[0.4, 1.2, 0.9]]);
    let mut t = Matrix::zeros(5, 5);
    t.set(0, 2, 0.8); // O -> I-city is tempting but invalid
    t.set(1, 2, 0.3);

    let positions = [0, 1, 2];
    let mut paths = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let p = vec![a, b, c];
                paths.push((path_score(&em, &t, &positions, &p), p));
            }
        }
    }
    paths.sort_by(|x, y| y.0.total_cmp(&x.0));
    for (s, p) in paths.iter().take(5) {
        let tags: Vec<&str> = p.iter().map(|&i| names[i]).collect();
        println!("{s:>8.4}  {}", tags.join(" "));
    }
    let brute = paths.iter().map(|(s, _)| s.exp()).sum::<f64>().ln();
    println!("log Z: enumeration {brute:.12}, forward {:.12}", log_partition(&em, &t, None)?);

    for (label, trans) in [("soft", t.clone()), ("hard", hard_bio_transitions(&t))] {
        let (path, score) = viterbi(&em, &trans, None)?;
        let tags: Vec<&str> = path.iter().map(|&i| names[i]).collect();
        println!("viterbi ({label} BIO): {} score {score:.4}", tags.join(" "));
    }
    Ok(())
}
