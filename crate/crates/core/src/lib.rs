//! Neural causal models: identification and estimation of causal effects
//! from observational data and a causal diagram.

pub mod autodiff;
pub mod cli;
pub mod graph;
pub mod identify;
pub mod ncm;
pub mod nn;
pub mod scm;
pub mod train;
pub mod util;
