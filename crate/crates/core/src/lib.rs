pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod feature_bank;
pub mod metrics;
pub mod rank_agg;
pub mod ranker;
pub mod synth;
pub mod tokens;
pub mod training;
pub mod util;

pub use error::{Error, Result};
