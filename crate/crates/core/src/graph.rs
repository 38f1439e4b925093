//! Graph attention over fully connected node sets, gated top-k pooling,
//! and extraction of spectral/temporal node sets from encoder feature maps.
//!
//! Nodes are rows of an `[N, D]` tensor; the graph is complete, so
//! attention is an `[N, N]` softmax over projected pairwise scores.

use rand::Rng;

use crate::layers::{batchnorm, BnBound, BnParams, Fwd};
use crate::params::{join, param_group, Binder, Param};
use crate::tensor::{Tape, TensorId};

// ── Attention layer ─────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct GatParams {
    pub weight: Param,
    pub att: Param,
    pub bn: BnParams,
}
param_group!(GatParams { weight, att, bn });

impl GatParams {
    pub fn init(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        GatParams {
            weight: Param::kaiming(rng, vec![d_in, d_out], d_in),
            att: Param::kaiming(rng, vec![d_out], d_out),
            bn: BnParams::new(d_out),
        }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> GatBound {
        GatBound {
            weight: b.bind(&join(path, "weight"), &self.weight),
            att: b.bind(&join(path, "att"), &self.att),
            bn: self.bn.bind(b, &join(path, "bn")),
        }
    }
}

pub struct GatBound {
    pub weight: TensorId,
    pub att: TensorId,
    pub bn: BnBound,
}

/// Attention layer output plus the intermediate tensors invariants care
/// about: raw pairwise scores (symmetric) and row-normalized attention.
pub struct GatOut {
    pub nodes: TensorId,
    pub scores: TensorId,
    pub attention: TensorId,
}

/// One attention layer over a complete graph.
///
/// Projects nodes, scores every ordered pair through a learned channel
/// gate (`W n_i . diag(a) . W n_j`, symmetric by construction), normalizes
/// each row with softmax, mixes, then applies batchnorm, a residual
/// connection, and SELU.
pub fn gat_layer(
    f: &mut Fwd,
    nodes: TensorId,
    p: &GatParams,
    b: &GatBound,
    path: &str,
) -> GatOut {
    let wn = f.tape.matmul(nodes, b.weight);
    let gated = f.tape.mul_row_vec(wn, b.att);
    let wnt = f.tape.transpose(wn);
    let scores = f.tape.matmul(gated, wnt);
    let attention = f.tape.softmax(scores, 1);
    let mixed = f.tape.matmul(attention, wn);
    let normed = batchnorm(f, mixed, &p.bn, &b.bn, &join(path, "bn"), 1);
    let res = f.tape.add(normed, wn);
    let out = f.tape.selu(res);
    GatOut { nodes: out, scores, attention }
}

// ── Top-k pooling ───────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct PoolParams {
    pub gate: Param,
}
param_group!(PoolParams { gate });

impl PoolParams {
    pub fn init(rng: &mut impl Rng, d: usize) -> Self {
        PoolParams { gate: Param::kaiming(rng, vec![d], d) }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> PoolBound {
        PoolBound { gate: b.bind(&join(path, "gate"), &self.gate) }
    }
}

pub struct PoolBound {
    pub gate: TensorId,
}

pub struct PoolOut {
    pub nodes: TensorId,
    /// Original indices of the surviving nodes, ascending.
    pub kept: Vec<usize>,
}

/// Number of nodes a pool with ratio `keep` retains: at least one node
/// always survives.
pub fn pool_size(n: usize, keep: f64) -> usize {
    ((keep * n as f64).floor() as usize).max(1)
}

/// Indices of the `k` highest scores; ties break toward the lower index.
/// The result is sorted ascending so pooling preserves node order.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    assert!(k <= scores.len(), "k exceeds node count");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut kept = idx[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Gated top-k node selection.
///
/// Each node scores itself through a sigmoid gate; surviving nodes are the
/// top `pool_size(N, keep)` by gate value, scaled by their gate so the
/// selection stays differentiable. Discarded rows receive no gradient.
pub fn graph_pool(tape: &mut Tape, nodes: TensorId, b: &PoolBound, keep: f64) -> PoolOut {
    assert!(keep > 0.0 && keep <= 1.0, "keep ratio must be in (0, 1], got {keep}");
    let shape = tape.shape(nodes).to_vec();
    let (n, d) = (shape[0], shape[1]);
    let gate_col = tape.reshape(b.gate, vec![d, 1]);
    let raw = tape.matmul(nodes, gate_col);
    let raw_flat = tape.reshape(raw, vec![n]);
    let gate = tape.sigmoid(raw_flat);
    let scaled = tape.mul_col_vec(nodes, gate);
    let kept = match tape.replayed_selection() {
        Some(k) => {
            assert_eq!(k.len(), pool_size(n, keep), "graph_pool: replayed keep-set mismatch");
            k
        }
        None => top_k_indices(tape.data(gate), pool_size(n, keep)),
    };
    tape.log_selection(&kept);
    let out = tape.gather_rows(scaled, &kept);
    PoolOut { nodes: out, kept }
}

// ── Node extraction from feature maps ───────────────────────────────────

/// Spectral nodes: max of `|feature|` over time. `[C, F, T] -> [F, C]`.
pub fn spectral_nodes(tape: &mut Tape, fm: TensorId) -> TensorId {
    assert_eq!(tape.shape(fm).len(), 3, "feature map must be [C, F, T]");
    let a = tape.abs(fm);
    let m = tape.reduce_max(a, 2);
    tape.transpose(m)
}

/// Temporal nodes: max of `|feature|` over the filter axis.
/// `[C, F, T] -> [T, C]`.
pub fn temporal_nodes(tape: &mut Tape, fm: TensorId) -> TensorId {
    assert_eq!(tape.shape(fm).len(), 3, "feature map must be [C, F, T]");
    let a = tape.abs(fm);
    let m = tape.reduce_max(a, 1);
    tape.transpose(m)
}
