pub mod cli;
pub mod coattention;
pub mod corpus;
pub mod decoders;
pub mod encoders;
pub mod error;
pub mod label_attention;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
