//! Question/program toolkit for a four-box AMOC surrogate.
//!
//! - [`boxmodel`]: the simulator
//! - [`dsl`]: program grammar, parser and canonical printer
//! - [`executor`]: program semantics over simulator runs
//! - [`qforms`]: question templates and the reference translator
//! - [`datagen`]: seeded dataset generation and train/test splitting
//! - [`textcodec`]: tokenization, vocabulary and VALUE masking
//! - [`metrics`]: normalized Levenshtein scoring and evaluation reports
//! - [`wire`]: JSON types shared by the HTTP service and its client

pub mod boxmodel;
pub mod datagen;
pub mod dsl;
pub mod executor;
pub mod metrics;
pub mod qforms;
pub mod textcodec;
pub mod wire;
