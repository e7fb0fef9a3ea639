// mdbook cannot run Rust listings as tests, so every chapter is pulled in as
// the doc comment of an empty module and `cargo test --doc` runs them. One
// module per chapter keeps failures traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/feature-banks.md")]
pub mod feature_banks {}
#[doc = include_str!("src/estimators.md")]
pub mod estimators {}
#[doc = include_str!("src/aggregation.md")]
pub mod aggregation {}
#[doc = include_str!("src/tokens-and-ranker.md")]
pub mod tokens_and_ranker {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("src/synthetic-benchmark.md")]
pub mod synthetic_benchmark {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
