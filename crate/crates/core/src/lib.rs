//! Joint forecasting of drought severity and its societal impact.
//!
//! Pipeline: [`ingest`] reads severity and text, [`dsiq`] turns text into
//! weekly determinant distributions, [`model`] is a cross-attention
//! encoder-decoder built on the [`numerics`] autodiff engine, and
//! [`train_eval`] trains, evaluates and runs ablations. [`pipeline`] wires
//! these together for the `side` binary, whose commands live in [`cli`].

pub mod cli;
pub mod config;
pub mod dsiq;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synth;
pub mod train_eval;
pub mod types;
