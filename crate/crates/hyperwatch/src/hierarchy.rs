//! Pooling / unpooling hierarchy around the convolution round.
//!
//! The encoder scores every node, keeps the top ceil(p_r * n), gates the
//! kept features by their (relu'd) scores, and runs one message-passing
//! round on the restricted hypergraph. The decoder scatters the pooled
//! features back to the full node set, adds the pre-pool features as a skip
//! connection, and refines each node with edge messages weighted by a
//! difference score: the attention logit for pair (node i, hyperedge p) is
//! ||W(g_p)||^2 - ||W(g_i)||^2 written in its factored form
//! (W(g_p - g_i))^T (W(g_p + g_i)), so a node leans on hyperedges whose
//! projected summary is stronger than its own.
//!
//! Selection indices are treated as constants by the tape: gradients reach
//! the score vector only through the gating multiplication.

use thiserror::Error;

use crate::conv::{Attention, ConvError, ConvOutput, ConvWeights};
use crate::hypergraph::{Hypergraph, HypergraphError};
use crate::tensor::{Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] HypergraphError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error("retain ratio {0} must be in (0, 1]")]
    BadRatio(f64),
}

/// How node retention scores are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Softmax of the score projection over all nodes; gating uses relu.
    Softmax,
    /// Ablation: score by projection onto the unit score vector; gating
    /// uses tanh.
    Projection,
}

/// How the decoder's difference score is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// (W(g_p - g_i))^T (W(g_p + g_i)).
    Difference,
    /// Ablation: plain bilinear (W g_i)^T (W g_p).
    Bilinear,
}

/// Toggles shared by the whole hierarchy pass.
#[derive(Debug, Clone, Copy)]
pub struct HierarchyMode {
    pub attention: Attention,
    pub scoring: Scoring,
    /// Multiply kept features by their scores. Off in the no-gating
    /// ablation.
    pub gating: bool,
    pub delta: DeltaMode,
}

impl Default for HierarchyMode {
    fn default() -> Self {
        HierarchyMode {
            attention: Attention::Softmax,
            scoring: Scoring::Softmax,
            gating: true,
            delta: DeltaMode::Difference,
        }
    }
}

/// Tape ids for the pooling weights. `theta` is the d x 1 score vector,
/// `w6`/`w7` are d x d feature and edge projections, `w8` scores pooled
/// (node, edge) pairs.
#[derive(Debug, Clone, Copy)]
pub struct PoolWeights {
    pub theta: TensorId,
    pub w6: TensorId,
    pub w7: TensorId,
    pub w8: TensorId,
}

/// Tape ids for the unpooling weights; all d x d except `w11`, which maps
/// the (embedding, projected feature) concatenation down to d.
#[derive(Debug, Clone, Copy)]
pub struct UnpoolWeights {
    pub w9: TensorId,
    pub w10: TensorId,
    pub w11: TensorId,
    pub w12: TensorId,
}

/// Retention scores for every node.
pub fn node_scores(
    tape: &mut Tape,
    node_features: TensorId,
    theta: TensorId,
    scoring: Scoring,
) -> Result<TensorId, HierarchyError> {
    let n = tape.shape(node_features)[0];
    let raw = tape.matmul(node_features, theta)?;
    let flat = tape.reshape(raw, vec![n])?;
    match scoring {
        Scoring::Softmax => {
            let seg = vec![0usize; n];
            Ok(tape.grouped_softmax(flat, &seg, 1)?)
        }
        Scoring::Projection => {
            let tt = tape.transpose(theta)?;
            let sq = tape.row_dot(tt, tt)?;
            let nrm = tape.sqrt(sq)?;
            let inv = tape.recip(nrm)?;
            Ok(tape.mul_scalar(flat, inv)?)
        }
    }
}

/// Indices of the ceil(p_r * n) highest scores, ties broken toward the
/// lower index, returned ascending.
pub fn topk_nodes(scores: &[f64], p_r: f64) -> Result<Vec<usize>, HierarchyError> {
    if !(p_r > 0.0 && p_r <= 1.0) {
        return Err(HierarchyError::BadRatio(p_r));
    }
    let n = scores.len();
    let keep = ((p_r * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut idx = order[..keep].to_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub graph: Hypergraph,
    pub idx: Vec<usize>,
    /// Kept features after score gating, before message passing.
    pub gated: TensorId,
    /// n_p x d refined pooled node features, entries in (0, 1).
    pub node_features: TensorId,
    /// n_p x d pooled edge features, entries in (0, 1).
    pub edge_features: TensorId,
    /// Per-slot pooled attention weights.
    pub zeta: TensorId,
}

/// Pool the kept nodes and run one refinement round on the restricted
/// hypergraph.
#[allow(clippy::too_many_arguments)]
pub fn pool(
    tape: &mut Tape,
    graph: &Hypergraph,
    node_features: TensorId,
    z: Option<TensorId>,
    scores: TensorId,
    idx: &[usize],
    w: &PoolWeights,
    mode: &HierarchyMode,
) -> Result<PoolOutput, HierarchyError> {
    let restricted = graph.restrict(idx)?;
    restricted.check_coverage()?;
    let slots = restricted.slots();

    let kept = tape.gather_rows(node_features, idx)?;
    let gated = if mode.gating {
        let s_kept = tape.gather_rows(scores, idx)?;
        let gate = match mode.scoring {
            Scoring::Softmax => tape.relu(s_kept),
            Scoring::Projection => tape.tanh(s_kept),
        };
        tape.scale_rows(kept, gate)?
    } else {
        kept
    };

    let w6t = tape.transpose(w.w6)?;
    let proj = tape.matmul(gated, w6t)?;
    let member_msgs = tape.gather_rows(proj, &slots.node_of_slot)?;
    let edge_sum = tape.segment_sum(member_msgs, &slots.edge_of_slot, slots.n_edges)?;
    let edge_features = tape.sigmoid(edge_sum);

    let w7t = tape.transpose(w.w7)?;
    let edge_proj = tape.matmul(edge_features, w7t)?;
    let zeta = match mode.attention {
        Attention::Softmax => {
            let mut parts: Vec<TensorId> = Vec::new();
            if let Some(z) = z {
                let z_kept = tape.gather_rows(z, idx)?;
                parts.push(tape.gather_rows(z_kept, &slots.node_of_slot)?);
            }
            parts.push(tape.gather_rows(proj, &slots.node_of_slot)?);
            parts.push(tape.gather_rows(edge_proj, &slots.edge_of_slot)?);
            let pair = tape.concat(&parts, 1)?;
            let raw = tape.matmul(pair, w.w8)?;
            let kappa = tape.relu(raw);
            let flat = tape.reshape(kappa, vec![slots.len()])?;
            tape.grouped_softmax(flat, &slots.node_of_slot, slots.n_nodes)?
        }
        Attention::UniformMean => {
            let u = slots.uniform_weights(false);
            tape.constant(u, vec![slots.len()])?
        }
    };
    let inc = tape.gather_rows(edge_proj, &slots.edge_of_slot)?;
    let weighted = tape.scale_rows(inc, zeta)?;
    let agg = tape.segment_sum(weighted, &slots.node_of_slot, slots.n_nodes)?;
    let summed = tape.add(proj, agg)?;
    let node_out = tape.sigmoid(summed);

    Ok(PoolOutput {
        graph: restricted,
        idx: idx.to_vec(),
        gated,
        node_features: node_out,
        edge_features,
        zeta,
    })
}

/// Spread pooled rows back onto `n` rows of zeros.
pub fn unpool_scatter(
    tape: &mut Tape,
    pooled: TensorId,
    idx: &[usize],
    n: usize,
) -> Result<TensorId, HierarchyError> {
    Ok(tape.scatter_rows(pooled, idx, n)?)
}

/// Kept rows become the sum of the scattered and pre-pool features; dropped
/// rows keep their pre-pool features.
pub fn skip_connect(
    tape: &mut Tape,
    scattered: TensorId,
    pre_pool: TensorId,
) -> Result<TensorId, HierarchyError> {
    Ok(tape.add(scattered, pre_pool)?)
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOutput {
    /// n x d refined node features (linear output).
    pub node_features: TensorId,
    /// Per-slot decoder attention weights.
    pub gamma: TensorId,
}

/// Decoder refinement round on the full hypergraph.
pub fn unpool_refine(
    tape: &mut Tape,
    graph: &Hypergraph,
    node_features: TensorId,
    z: Option<TensorId>,
    w: &UnpoolWeights,
    mode: &HierarchyMode,
) -> Result<RefineOutput, HierarchyError> {
    graph.check_coverage()?;
    let slots = graph.slots();

    let w9t = tape.transpose(w.w9)?;
    let proj = tape.matmul(node_features, w9t)?;
    let member_msgs = tape.gather_rows(proj, &slots.node_of_slot)?;
    let edge_sum = tape.segment_sum(member_msgs, &slots.edge_of_slot, slots.n_edges)?;
    let edge_features = tape.sigmoid(edge_sum);

    let w10t = tape.transpose(w.w10)?;
    let g_edge = tape.matmul(edge_features, w10t)?;
    let cat = match z {
        Some(z) => tape.concat(&[z, proj], 1)?,
        None => proj,
    };
    let w11t = tape.transpose(w.w11)?;
    let g_node = tape.matmul(cat, w11t)?;

    let gamma = match mode.attention {
        Attention::Softmax => {
            let w12t = tape.transpose(w.w12)?;
            let p_edge = tape.matmul(g_edge, w12t)?;
            let p_node = tape.matmul(g_node, w12t)?;
            let pe = tape.gather_rows(p_edge, &slots.edge_of_slot)?;
            let pn = tape.gather_rows(p_node, &slots.node_of_slot)?;
            let delta = match mode.delta {
                DeltaMode::Difference => {
                    let diff = tape.sub(pe, pn)?;
                    let sum = tape.add(pe, pn)?;
                    tape.row_dot(diff, sum)?
                }
                DeltaMode::Bilinear => tape.row_dot(pn, pe)?,
            };
            tape.grouped_softmax(delta, &slots.node_of_slot, slots.n_nodes)?
        }
        Attention::UniformMean => {
            let u = slots.uniform_weights(false);
            tape.constant(u, vec![slots.len()])?
        }
    };

    let inc = tape.gather_rows(g_edge, &slots.edge_of_slot)?;
    let weighted = tape.scale_rows(inc, gamma)?;
    let agg = tape.segment_sum(weighted, &slots.node_of_slot, slots.n_nodes)?;
    let out = tape.add(proj, agg)?;

    Ok(RefineOutput {
        node_features: out,
        gamma,
    })
}

/// Weights for the full encoder/decoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncDecWeights {
    pub conv: ConvWeights,
    pub pool: PoolWeights,
    pub unpool: UnpoolWeights,
}

#[derive(Debug, Clone)]
pub struct EncDecOutput {
    /// n x d decoder output.
    pub node_features: TensorId,
    /// Retention scores over all nodes.
    pub scores: TensorId,
    pub conv: ConvOutput,
    pub pool: PoolOutput,
    pub refine: RefineOutput,
}

/// Convolve, pool, scatter back, skip-connect, refine.
pub fn encoder_decoder(
    tape: &mut Tape,
    graph: &Hypergraph,
    f: TensorId,
    z: Option<TensorId>,
    weights: &EncDecWeights,
    p_r: f64,
    mode: &HierarchyMode,
) -> Result<EncDecOutput, HierarchyError> {
    let conv = crate::conv::convolve(tape, graph, f, z, &weights.conv, mode.attention)?;
    let scores = node_scores(tape, conv.node_features, weights.pool.theta, mode.scoring)?;
    let idx = topk_nodes(tape.value(scores), p_r)?;
    let pooled = pool(
        tape,
        graph,
        conv.node_features,
        z,
        scores,
        &idx,
        &weights.pool,
        mode,
    )?;
    let scattered = unpool_scatter(tape, pooled.node_features, &idx, graph.n())?;
    let skipped = skip_connect(tape, scattered, conv.node_features)?;
    let refine = unpool_refine(tape, graph, skipped, z, &weights.unpool, mode)?;
    Ok(EncDecOutput {
        node_features: refine.node_features,
        scores,
        conv,
        pool: pooled,
        refine,
    })
}

#[cfg(test)]
mod tests {
    // oracle math is written in subscript form on purpose
    #![allow(clippy::needless_range_loop)]

    use super::*;
    use crate::tensor::tests_xorshift;

    fn ring(n: usize) -> Hypergraph {
        let members = (0..n).map(|i| vec![i, (i + 1) % n]).collect();
        Hypergraph::from_edge_members(n, members).unwrap()
    }

    struct Rig {
        tape: Tape,
        weights: EncDecWeights,
        f: TensorId,
        z: TensorId,
        raw: RigRaw,
    }

    struct RigRaw {
        d: usize,
        w6: Vec<f64>,
        w7: Vec<f64>,
        w8: Vec<f64>,
        w9: Vec<f64>,
        w10: Vec<f64>,
        w11: Vec<f64>,
        w12: Vec<f64>,
        zv: Vec<f64>,
    }

    fn rig(n: usize, w: usize, d: usize, seed: u64) -> Rig {
        let mut rng = tests_xorshift(seed);
        let mut take = |len: usize| -> Vec<f64> { (0..len).map(|_| rng() * 0.8).collect() };
        let fv = take(n * w);
        let zv = take(n * d);
        let w1 = take(d * w);
        let w2 = take(2 * d);
        let w3 = take(d * w);
        let w4 = take(d * d);
        let w5 = take(3 * d);
        let theta = take(d);
        let w6 = take(d * d);
        let w7 = take(d * d);
        let w8 = take(3 * d);
        let w9 = take(d * d);
        let w10 = take(d * d);
        let w11 = take(d * 2 * d);
        let w12 = take(d * d);
        let mut tape = Tape::new();
        let f = tape.var(fv, vec![n, w]).unwrap();
        let z = tape.var(zv.clone(), vec![n, d]).unwrap();
        let weights = EncDecWeights {
            conv: ConvWeights {
                w1: tape.var(w1, vec![d, w]).unwrap(),
                w2: tape.var(w2, vec![2 * d, 1]).unwrap(),
                w3: tape.var(w3, vec![d, w]).unwrap(),
                w4: tape.var(w4, vec![d, d]).unwrap(),
                w5: tape.var(w5, vec![3 * d, 1]).unwrap(),
            },
            pool: PoolWeights {
                theta: tape.var(theta, vec![d, 1]).unwrap(),
                w6: tape.var(w6.clone(), vec![d, d]).unwrap(),
                w7: tape.var(w7.clone(), vec![d, d]).unwrap(),
                w8: tape.var(w8.clone(), vec![3 * d, 1]).unwrap(),
            },
            unpool: UnpoolWeights {
                w9: tape.var(w9.clone(), vec![d, d]).unwrap(),
                w10: tape.var(w10.clone(), vec![d, d]).unwrap(),
                w11: tape.var(w11.clone(), vec![d, 2 * d]).unwrap(),
                w12: tape.var(w12.clone(), vec![d, d]).unwrap(),
            },
        };
        Rig {
            tape,
            weights,
            f,
            z,
            raw: RigRaw {
                d,
                w6,
                w7,
                w8,
                w9,
                w10,
                w11,
                w12,
                zv,
            },
        }
    }

    #[test]
    fn softmax_scores_match_direct_formula() {
        let mut tape = Tape::new();
        let xv = tape
            .var(vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0], vec![3, 2])
            .unwrap();
        let theta = tape.var(vec![1.0, 0.0], vec![2, 1]).unwrap();
        let s = node_scores(&mut tape, xv, theta, Scoring::Softmax).unwrap();
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, raw) in [1f64, 2.0, 3.0].iter().enumerate() {
            assert!((tape.value(s)[i] - raw.exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_scores_divide_by_theta_norm() {
        let mut tape = Tape::new();
        let xv = tape.var(vec![3.0, 4.0, 1.0, 0.0], vec![2, 2]).unwrap();
        let theta = tape.var(vec![3.0, 4.0], vec![2, 1]).unwrap();
        let s = node_scores(&mut tape, xv, theta, Scoring::Projection).unwrap();
        assert!((tape.value(s)[0] - 5.0).abs() < 1e-12);
        assert!((tape.value(s)[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn topk_keeps_ceil_and_breaks_ties_low() {
        assert_eq!(topk_nodes(&[0.5, 0.5, 0.5, 0.5], 0.5).unwrap(), vec![0, 1]);
        assert_eq!(topk_nodes(&[0.1, 0.9, 0.3], 1.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(topk_nodes(&[0.1, 0.9, 0.3], 0.4).unwrap(), vec![1, 2]);
        assert_eq!(topk_nodes(&[0.2, 0.1], 0.01).unwrap(), vec![0]);
        assert!(matches!(
            topk_nodes(&[0.1], 0.0),
            Err(HierarchyError::BadRatio(_))
        ));
    }

    #[test]
    fn full_retention_uniform_scores_gate_by_reciprocal_n() {
        // equal scores under softmax scoring: every kept row is x / n
        let graph = ring(4);
        let mut tape = Tape::new();
        let xv_data: Vec<f64> = (0..8).map(|i| i as f64 + 1.0).collect();
        let xv = tape.var(xv_data.clone(), vec![4, 2]).unwrap();
        let theta = tape.var(vec![0.0, 0.0], vec![2, 1]).unwrap();
        let s = node_scores(&mut tape, xv, theta, Scoring::Softmax).unwrap();
        let idx = topk_nodes(tape.value(s), 1.0).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let mut rng = tests_xorshift(9);
        let w6: Vec<f64> = (0..4).map(|_| rng()).collect();
        let w = PoolWeights {
            theta,
            w6: tape.var(w6, vec![2, 2]).unwrap(),
            w7: tape.var(vec![0.1, 0.2, 0.3, 0.4], vec![2, 2]).unwrap(),
            // no embeddings in this rig, so the pair score input is 2d wide
            w8: tape.var(vec![0.1; 4], vec![4, 1]).unwrap(),
        };
        let out = pool(
            &mut tape,
            &graph,
            xv,
            None,
            s,
            &idx,
            &w,
            &HierarchyMode::default(),
        )
        .unwrap();
        assert_eq!(out.graph.n(), 4);
        for (got, want) in tape.value(out.gated).iter().zip(&xv_data) {
            assert!((got - want / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_gating_keeps_features_verbatim() {
        let graph = ring(4);
        let mut r = rig(4, 3, 2, 21);
        let conv = crate::conv::convolve(
            &mut r.tape,
            &graph,
            r.f,
            Some(r.z),
            &r.weights.conv,
            Attention::Softmax,
        )
        .unwrap();
        let s = node_scores(&mut r.tape, conv.node_features, r.weights.pool.theta, Scoring::Softmax)
            .unwrap();
        let idx = topk_nodes(r.tape.value(s), 0.5).unwrap();
        let mode = HierarchyMode {
            gating: false,
            ..HierarchyMode::default()
        };
        let out = pool(
            &mut r.tape,
            &graph,
            conv.node_features,
            Some(r.z),
            s,
            &idx,
            &r.weights.pool,
            &mode,
        )
        .unwrap();
        let d = 2;
        let full = r.tape.value(conv.node_features).to_vec();
        let gated = r.tape.value(out.gated);
        for (j, &i) in idx.iter().enumerate() {
            assert_eq!(&gated[j * d..(j + 1) * d], &full[i * d..(i + 1) * d]);
        }
    }

    fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        (0..rows)
            .map(|r| (0..cols).map(|c| m[r * cols + c] * x[c]).sum())
            .collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn pool_refinement_matches_scalar_oracle() {
        let graph = ring(4);
        let mut r = rig(4, 3, 2, 57);
        let d = r.raw.d;
        let conv = crate::conv::convolve(
            &mut r.tape,
            &graph,
            r.f,
            Some(r.z),
            &r.weights.conv,
            Attention::Softmax,
        )
        .unwrap();
        let s = node_scores(&mut r.tape, conv.node_features, r.weights.pool.theta, Scoring::Softmax)
            .unwrap();
        let idx = topk_nodes(r.tape.value(s), 0.5).unwrap();
        let out = pool(
            &mut r.tape,
            &graph,
            conv.node_features,
            Some(r.z),
            s,
            &idx,
            &r.weights.pool,
            &HierarchyMode::default(),
        )
        .unwrap();

        // scalar re-computation from the gated features and restricted graph
        let gated = r.tape.value(out.gated).to_vec();
        let rg = &out.graph;
        let np = idx.len();
        let proj: Vec<Vec<f64>> = (0..np)
            .map(|j| matvec(&r.raw.w6, d, d, &gated[j * d..(j + 1) * d]))
            .collect();
        let mut want_edges = vec![vec![0.0; d]; rg.m()];
        for p in 0..rg.m() {
            for &j in rg.edge_members(p) {
                for t in 0..d {
                    want_edges[p][t] += proj[j][t];
                }
            }
            for t in 0..d {
                want_edges[p][t] = sig(want_edges[p][t]);
            }
        }
        let got_edges = r.tape.value(out.edge_features);
        for p in 0..rg.m() {
            for t in 0..d {
                assert!((got_edges[p * d + t] - want_edges[p][t]).abs() < 1e-12);
            }
        }

        let edge_proj: Vec<Vec<f64>> = (0..rg.m())
            .map(|p| matvec(&r.raw.w7, d, d, &want_edges[p]))
            .collect();
        let got_nodes = r.tape.value(out.node_features);
        for j in 0..np {
            let zrow = &r.raw.zv[idx[j] * d..(idx[j] + 1) * d];
            let kappas: Vec<f64> = rg
                .node_edges(j)
                .iter()
                .map(|&p| {
                    let mut cat = zrow.to_vec();
                    cat.extend_from_slice(&proj[j]);
                    cat.extend_from_slice(&edge_proj[p]);
                    dot(&r.raw.w8, &cat).max(0.0)
                })
                .collect();
            let mx = kappas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = kappas.iter().map(|&v| (v - mx).exp()).sum();
            for t in 0..d {
                let mut acc = proj[j][t];
                for (ei, &p) in rg.node_edges(j).iter().enumerate() {
                    acc += (kappas[ei] - mx).exp() / denom * edge_proj[p][t];
                }
                let want = sig(acc);
                assert!((got_nodes[j * d + t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scatter_skip_hand_case() {
        let mut tape = Tape::new();
        let pooled = tape.var(vec![10.0, 20.0], vec![2, 1]).unwrap();
        let pre = tape.var(vec![1.0, 2.0, 3.0], vec![3, 1]).unwrap();
        let scattered = unpool_scatter(&mut tape, pooled, &[0, 2], 3).unwrap();
        assert_eq!(tape.value(scattered), &[10.0, 0.0, 20.0]);
        let skipped = skip_connect(&mut tape, scattered, pre).unwrap();
        assert_eq!(tape.value(skipped), &[11.0, 2.0, 23.0]);
    }

    #[test]
    fn difference_score_equals_norm_difference() {
        let mut rng = tests_xorshift(99);
        for _ in 0..100 {
            let d = 3;
            let gp: Vec<f64> = (0..d).map(|_| rng()).collect();
            let gi: Vec<f64> = (0..d).map(|_| rng()).collect();
            let w: Vec<f64> = (0..d * d).map(|_| rng()).collect();
            let pe = matvec(&w, d, d, &gp);
            let pn = matvec(&w, d, d, &gi);
            let diff: Vec<f64> = pe.iter().zip(&pn).map(|(a, b)| a - b).collect();
            let sum: Vec<f64> = pe.iter().zip(&pn).map(|(a, b)| a + b).collect();
            let factored = dot(&diff, &sum);
            let norms = dot(&pe, &pe) - dot(&pn, &pn);
            assert!((factored - norms).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_w12_makes_decoder_attention_uniform() {
        let graph = ring(4);
        let mut r = rig(4, 3, 2, 41);
        let d = 2;
        let zero = r.tape.var(vec![0.0; d * d], vec![d, d]).unwrap();
        let w = UnpoolWeights {
            w12: zero,
            ..r.weights.unpool
        };
        let x = r.tape.var(vec![0.3; 4 * d], vec![4, d]).unwrap();
        let out = unpool_refine(
            &mut r.tape,
            &graph,
            x,
            Some(r.z),
            &w,
            &HierarchyMode::default(),
        )
        .unwrap();
        let slots = graph.slots();
        let uniform = slots.uniform_weights(false);
        for (got, want) in r.tape.value(out.gamma).iter().zip(&uniform) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn unpool_refine_matches_scalar_oracle() {
        let graph = ring(3);
        let mut r = rig(3, 2, 2, 63);
        let d = 2;
        let xdata: Vec<f64> = (0..3 * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = r.tape.var(xdata.clone(), vec![3, d]).unwrap();
        let out = unpool_refine(
            &mut r.tape,
            &graph,
            x,
            Some(r.z),
            &r.weights.unpool,
            &HierarchyMode::default(),
        )
        .unwrap();

        let proj: Vec<Vec<f64>> = (0..3)
            .map(|i| matvec(&r.raw.w9, d, d, &xdata[i * d..(i + 1) * d]))
            .collect();
        let mut edges = vec![vec![0.0; d]; graph.m()];
        for p in 0..graph.m() {
            for &i in graph.edge_members(p) {
                for t in 0..d {
                    edges[p][t] += proj[i][t];
                }
            }
            for t in 0..d {
                edges[p][t] = sig(edges[p][t]);
            }
        }
        let g_edge: Vec<Vec<f64>> = (0..graph.m())
            .map(|p| matvec(&r.raw.w10, d, d, &edges[p]))
            .collect();
        let g_node: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let mut cat = r.raw.zv[i * d..(i + 1) * d].to_vec();
                cat.extend_from_slice(&proj[i]);
                matvec(&r.raw.w11, d, 2 * d, &cat)
            })
            .collect();
        let got = r.tape.value(out.node_features);
        for i in 0..3 {
            let deltas: Vec<f64> = graph
                .node_edges(i)
                .iter()
                .map(|&p| {
                    let pe = matvec(&r.raw.w12, d, d, &g_edge[p]);
                    let pn = matvec(&r.raw.w12, d, d, &g_node[i]);
                    dot(&pe, &pe) - dot(&pn, &pn)
                })
                .collect();
            let mx = deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = deltas.iter().map(|&v| (v - mx).exp()).sum();
            for t in 0..d {
                let mut acc = proj[i][t];
                for (ei, &p) in graph.node_edges(i).iter().enumerate() {
                    acc += (deltas[ei] - mx).exp() / denom * g_edge[p][t];
                }
                assert!(
                    (got[i * d + t] - acc).abs() < 1e-9,
                    "node {i} dim {t}: {} vs {acc}",
                    got[i * d + t]
                );
            }
        }
    }

    #[test]
    fn encoder_decoder_shapes_and_determinism() {
        let graph = ring(5);
        let run = || {
            let mut r = rig(5, 4, 3, 13);
            let out = encoder_decoder(
                &mut r.tape,
                &graph,
                r.f,
                Some(r.z),
                &r.weights,
                0.6,
                &HierarchyMode::default(),
            )
            .unwrap();
            assert_eq!(r.tape.shape(out.node_features), &[5, 3]);
            assert_eq!(out.pool.idx.len(), 3);
            r.tape.value(out.node_features).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn encoder_decoder_full_retention_keeps_all_nodes() {
        let graph = ring(4);
        let mut r = rig(4, 3, 2, 31);
        let out = encoder_decoder(
            &mut r.tape,
            &graph,
            r.f,
            Some(r.z),
            &r.weights,
            1.0,
            &HierarchyMode::default(),
        )
        .unwrap();
        assert_eq!(out.pool.idx, vec![0, 1, 2, 3]);
        assert_eq!(out.pool.graph.n(), 4);
    }

    #[test]
    fn single_node_pool_is_valid() {
        let graph = ring(3);
        let mut r = rig(3, 2, 2, 8);
        let conv = crate::conv::convolve(
            &mut r.tape,
            &graph,
            r.f,
            Some(r.z),
            &r.weights.conv,
            Attention::Softmax,
        )
        .unwrap();
        let s = node_scores(&mut r.tape, conv.node_features, r.weights.pool.theta, Scoring::Softmax)
            .unwrap();
        let idx = topk_nodes(r.tape.value(s), 0.01).unwrap();
        assert_eq!(idx.len(), 1);
        let out = pool(
            &mut r.tape,
            &graph,
            conv.node_features,
            Some(r.z),
            s,
            &idx,
            &r.weights.pool,
            &HierarchyMode::default(),
        )
        .unwrap();
        assert_eq!(out.graph.n(), 1);
        out.graph.check_coverage().unwrap();
    }
}
