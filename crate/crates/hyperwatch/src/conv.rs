//! Attention message passing over a hypergraph.
//!
//! One round runs in two phases. Phase one scores every (hyperedge, member)
//! pair from the member's window features (optionally concatenated with its
//! embedding), softmaxes the scores inside each hyperedge, and aggregates
//! the weighted member projections into a sigmoid edge feature. Phase two
//! scores every pair from the member feature together with the projected
//! edge feature, softmaxes over the hyperedges around each node, and adds
//! the weighted edge projections to the node's own projection under a relu.
//!
//! Edge features therefore live in (0, 1) and node features are
//! nonnegative. The ablated `UniformMean` mode replaces both softmaxes with
//! plain means over the same neighborhoods.

use thiserror::Error;

use crate::hypergraph::{Hypergraph, HypergraphError, Slots};
use crate::tensor::{Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ConvError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] HypergraphError),
}

/// Attention weighting over neighborhood slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    /// Learned scores, softmax-normalized per group.
    Softmax,
    /// Ablation: constant 1/|group| weights.
    UniformMean,
}

/// Tape ids of the convolution weights.
///
/// `w1`, `w3` project window features (d x w); `w4` projects edge features
/// (d x d); `w2` and `w5` are scoring vectors whose height tracks whether
/// embeddings are part of the score input.
#[derive(Debug, Clone, Copy)]
pub struct ConvWeights {
    pub w1: TensorId,
    pub w2: TensorId,
    pub w3: TensorId,
    pub w4: TensorId,
    pub w5: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvOutput {
    /// n x d, nonnegative.
    pub node_features: TensorId,
    /// m x d, entries in (0, 1).
    pub edge_features: TensorId,
    /// Per-slot member weights, normalized within each hyperedge.
    pub alpha: TensorId,
    /// Per-slot edge weights, normalized within each node's hyperedges.
    pub beta: TensorId,
}

/// Score every incidence slot from the per-node inputs `g` and normalize
/// within each hyperedge.
pub fn edge_attention(
    tape: &mut Tape,
    slots: &Slots,
    g: TensorId,
    w2: TensorId,
    attention: Attention,
) -> Result<TensorId, ConvError> {
    match attention {
        Attention::Softmax => {
            let raw = tape.matmul(g, w2)?;
            let scores = tape.relu(raw);
            let flat = tape.reshape(scores, vec![slots.n_nodes])?;
            let per_slot = tape.gather_rows(flat, &slots.node_of_slot)?;
            Ok(tape.grouped_softmax(per_slot, &slots.edge_of_slot, slots.n_edges)?)
        }
        Attention::UniformMean => {
            let w = slots.uniform_weights(true);
            Ok(tape.constant(w, vec![slots.len()])?)
        }
    }
}

/// Weighted sum of member projections per hyperedge, squashed to (0, 1).
pub fn aggregate_edges(
    tape: &mut Tape,
    slots: &Slots,
    projected: TensorId,
    alpha: TensorId,
) -> Result<TensorId, ConvError> {
    let msgs = tape.gather_rows(projected, &slots.node_of_slot)?;
    let weighted = tape.scale_rows(msgs, alpha)?;
    let agg = tape.segment_sum(weighted, &slots.edge_of_slot, slots.n_edges)?;
    Ok(tape.sigmoid(agg))
}

/// Phase two: weight each node's incident edge projections and add them to
/// the node's own projection under a relu.
#[allow(clippy::too_many_arguments)]
pub fn node_update(
    tape: &mut Tape,
    slots: &Slots,
    g: TensorId,
    edge_features: TensorId,
    own_projection: TensorId,
    w4: TensorId,
    w5: TensorId,
    attention: Attention,
) -> Result<(TensorId, TensorId), ConvError> {
    let w4t = tape.transpose(w4)?;
    let edge_proj = tape.matmul(edge_features, w4t)?;
    let beta = match attention {
        Attention::Softmax => {
            let g_slot = tape.gather_rows(g, &slots.node_of_slot)?;
            let e_slot = tape.gather_rows(edge_proj, &slots.edge_of_slot)?;
            let pair = tape.concat(&[g_slot, e_slot], 1)?;
            let raw = tape.matmul(pair, w5)?;
            let scores = tape.relu(raw);
            let flat = tape.reshape(scores, vec![slots.len()])?;
            tape.grouped_softmax(flat, &slots.node_of_slot, slots.n_nodes)?
        }
        Attention::UniformMean => {
            let w = slots.uniform_weights(false);
            tape.constant(w, vec![slots.len()])?
        }
    };
    let inc = tape.gather_rows(edge_proj, &slots.edge_of_slot)?;
    let weighted = tape.scale_rows(inc, beta)?;
    let agg = tape.segment_sum(weighted, &slots.node_of_slot, slots.n_nodes)?;
    let summed = tape.add(own_projection, agg)?;
    Ok((tape.relu(summed), beta))
}

/// One full convolution round over `graph`.
///
/// `f` is the n x w window feature matrix (already carrying any positional
/// term); `z` is the n x d embedding table when embeddings participate in
/// the attention scores, `None` when that input is ablated.
pub fn convolve(
    tape: &mut Tape,
    graph: &Hypergraph,
    f: TensorId,
    z: Option<TensorId>,
    w: &ConvWeights,
    attention: Attention,
) -> Result<ConvOutput, ConvError> {
    graph.check_coverage()?;
    let slots = graph.slots();

    let w1t = tape.transpose(w.w1)?;
    let projected = tape.matmul(f, w1t)?;
    let g = match z {
        Some(z) => tape.concat(&[z, projected], 1)?,
        None => projected,
    };

    let alpha = edge_attention(tape, &slots, g, w.w2, attention)?;
    let edge_features = aggregate_edges(tape, &slots, projected, alpha)?;

    let w3t = tape.transpose(w.w3)?;
    let own = tape.matmul(f, w3t)?;
    let (node_features, beta) =
        node_update(tape, &slots, g, edge_features, own, w.w4, w.w5, attention)?;

    Ok(ConvOutput {
        node_features,
        edge_features,
        alpha,
        beta,
    })
}
