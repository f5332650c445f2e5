//! Generative recommender built on hierarchical item identifiers.

pub mod cf;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod eval;
pub mod fsutil;
pub mod gid;
pub mod numerics;
pub mod pipeline;
pub mod seq2seq;
pub mod synth;
pub mod text;
