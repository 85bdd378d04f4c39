//! Finite-difference check of every parameter gradient of the joint loss on
//! the two-token toy model, for each ablation.
//!
//!     cargo run --release --example gradient_check -- [seed]

use misca::model::{Ablation, LossOptions, MiscaModel};
use misca::numerics::GradcheckOptions;
use misca::synthetic::{toy_dims, toy_sample, toy_schema};

fn main() -> misca::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let opts = LossOptions {
        hierarchy_bce: true,
        ..LossOptions::default()
    };
    for ablation in Ablation::ALL {
        let model = MiscaModel::new(toy_schema(2), toy_dims(), ablation, seed)?;
        let report = model.gradcheck_sample(&toy_sample(), opts, GradcheckOptions::default())?;
        println!("== {ablation} ({} parameters)", model.parameter_count());
        println!("{report}\n");
    }
    Ok(())
}
