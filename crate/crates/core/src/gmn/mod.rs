//! Graph matching network over unified ASTs.
//!
//! Per graph: node features from a label embedding and the mean of
//! attribute-token embeddings, projected by a two-layer ReLU MLP with
//! LayerNorm (and dropout when training). Then `T` rounds, with weights
//! shared across rounds, of cross-graph attention followed by a GRU update
//! whose input is `[z ‖ c]` and whose hidden state is the neighbor mean.
//! Finally attention pooling gives one vector per graph; the pair score is
//! their cosine.

pub mod encode;
pub mod model;

pub use encode::{encode_pair, encode_pair_on_tape, similarity, standalone_embedding, GraphInput, PairEncoding, PairVars};
pub use model::{GmnConfig, GmnError, GmnModel, ParamIds, Sidecar, Vocab, OOV_TOKEN, PAD_TOKEN};
