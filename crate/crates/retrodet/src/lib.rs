//! Spatio-temporal change detection toolkit built around retrospective
//! convolutions, static sample synthesis and an encoder-decoder fusion
//! network, with a from-scratch reverse-mode autodiff engine.

pub mod elem;
pub mod gradcheck;
pub mod graph;
pub mod cli;
pub mod config;
pub mod data;
pub mod model;
pub mod metrics;
pub mod ops;
pub mod train;
pub mod tensor;
