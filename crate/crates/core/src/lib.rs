//! Cross-language code similarity over unified abstract syntax trees.
//!
//! Parse trees from any toolchain are mapped onto a shared label set
//! ([`unify`]), structurally normalized ([`enhance`]) and encoded pairwise
//! by a graph matching network ([`gmn`]) built on a small reverse-mode
//! engine ([`diff`]). [`train`] holds pair construction, objectives,
//! metrics and split auditing.

pub mod diff;
pub mod enhance;
pub mod gmn;
pub mod interchange;
pub mod pipeline;
pub mod provenance;
pub mod synth;
pub mod train;
pub mod unify;
