//! Synthesizable molecule co-generation over building-block reaction graphs.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod acceptance;
pub mod cli;
pub mod constraints;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod embed;
pub mod flow;
pub mod graph;
pub mod metrics;
pub mod record;
pub mod sampler;
pub mod vocabulary;
