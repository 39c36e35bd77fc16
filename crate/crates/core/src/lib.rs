//! Differentiable architecture search with perturbation-based stabilizers.

pub mod autodiff;
pub mod supernet;
pub mod analysis;
pub mod data;
pub mod minibench;
pub mod search;
pub mod harness;
