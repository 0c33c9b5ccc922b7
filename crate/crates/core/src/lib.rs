//! Interpretable stand-ins for learned networking controllers.
//!
//! Two toolchains live here:
//!
//! * **Local policies** are distilled into decision trees: the teacher is
//!   rolled out, every visited state is labelled, samples are re-weighted by
//!   how much the best action matters ([`env::advantage_weight`]), a CART tree
//!   is grown and then cut back with weakest-link pruning ([`tree`],
//!   [`distill`]).
//! * **Global decisions** are cast as hypergraphs ([`hypergraph`]) and
//!   explained by optimizing a fractional mask over vertex/hyperedge
//!   connections ([`mask`]).
//!
//! [`abr`] and [`route`] provide small environments to exercise both.

pub mod abr;
pub mod config;
pub mod distill;
pub mod env;
pub mod error;
pub mod hypergraph;
pub mod mask;
pub mod matrix;
pub mod pipeline;
pub mod route;
pub mod seed;
pub mod tree;

pub use error::{Error, Result};
