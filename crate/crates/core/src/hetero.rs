//! Heterogeneous graph attention with a stack node.
//!
//! A heterogeneous graph holds spectral nodes (rows `0..n_spectral`) and
//! temporal nodes (remaining rows) in one `[N, D]` tensor. Attention over
//! the complete graph uses three learned score gates, one per pair type
//! (spectral-spectral, cross, temporal-temporal), blended with constant
//! 0/1 masks. An optional stack node accumulates a graph-level summary;
//! information flows from the nodes into the stack but never back, so node
//! outputs are independent of the incoming stack value.

use rand::Rng;

use crate::graph::{graph_pool, PoolBound};
use crate::layers::{batchnorm, linear, BnBound, BnParams, Fwd, LinearBound, LinearParams};
use crate::params::{join, param_group, Binder, Param, ParamWalk};
use crate::tensor::{Tape, TensorId};

/// Node tensor plus the boundary between the two node types.
#[derive(Clone, Copy)]
pub struct HeteroGraph {
    pub nodes: TensorId,
    pub n_spectral: usize,
}

impl HeteroGraph {
    pub fn n_temporal(&self, tape: &Tape) -> usize {
        tape.shape(self.nodes)[0] - self.n_spectral
    }
}

/// Stack spectral nodes `[Ns, D]` on top of temporal nodes `[Nt, D]`.
pub fn combine(tape: &mut Tape, spectral: TensorId, temporal: TensorId) -> HeteroGraph {
    let ns = tape.shape(spectral)[0];
    let nodes = tape.concat(&[spectral, temporal], 0);
    HeteroGraph { nodes, n_spectral: ns }
}

// ── Attention score gates ───────────────────────────────────────────────

/// Pair-type score gates: one per block when heterogeneous attention is
/// on, a single shared gate when it is ablated.
#[derive(Clone, Debug)]
pub enum AttVectors {
    Hetero { ss: Param, st: Param, tt: Param },
    Shared(Param),
}

impl ParamWalk for AttVectors {
    fn walk<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Param)) {
        match self {
            AttVectors::Hetero { ss, st, tt } => {
                f(join(path, "ss"), ss);
                f(join(path, "st"), st);
                f(join(path, "tt"), tt);
            }
            AttVectors::Shared(a) => f(join(path, "shared"), a),
        }
    }
    fn walk_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Param)) {
        match self {
            AttVectors::Hetero { ss, st, tt } => {
                f(join(path, "ss"), ss);
                f(join(path, "st"), st);
                f(join(path, "tt"), tt);
            }
            AttVectors::Shared(a) => f(join(path, "shared"), a),
        }
    }
}

pub enum AttBound {
    Hetero { ss: TensorId, st: TensorId, tt: TensorId },
    Shared(TensorId),
}

// ── Layer parameters ────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct HsGalParams {
    /// Input projections, present exactly when the incoming node dimension
    /// differs from the layer dimension.
    pub proj_s: Option<LinearParams>,
    pub proj_t: Option<LinearParams>,
    pub weight: Param,
    pub att: AttVectors,
    pub bn: BnParams,
    /// Attention gate for the stack-node update; absent when the stack is
    /// ablated.
    pub stack_att: Option<Param>,
}
param_group!(HsGalParams { proj_s, proj_t, weight, att, bn, stack_att });

impl HsGalParams {
    pub fn init(
        rng: &mut impl Rng,
        d_in_s: usize,
        d_in_t: usize,
        d_st: usize,
        hetero_attention: bool,
        stack_node: bool,
    ) -> Self {
        HsGalParams {
            proj_s: (d_in_s != d_st).then(|| LinearParams::init(rng, d_in_s, d_st, true)),
            proj_t: (d_in_t != d_st).then(|| LinearParams::init(rng, d_in_t, d_st, true)),
            weight: Param::kaiming(rng, vec![d_st, d_st], d_st),
            att: if hetero_attention {
                AttVectors::Hetero {
                    ss: Param::kaiming(rng, vec![d_st], d_st),
                    st: Param::kaiming(rng, vec![d_st], d_st),
                    tt: Param::kaiming(rng, vec![d_st], d_st),
                }
            } else {
                AttVectors::Shared(Param::kaiming(rng, vec![d_st], d_st))
            },
            bn: BnParams::new(d_st),
            stack_att: stack_node.then(|| Param::kaiming(rng, vec![d_st], d_st)),
        }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> HsGalBound {
        HsGalBound {
            proj_s: self.proj_s.as_ref().map(|p| p.bind(b, &join(path, "proj_s"))),
            proj_t: self.proj_t.as_ref().map(|p| p.bind(b, &join(path, "proj_t"))),
            weight: b.bind(&join(path, "weight"), &self.weight),
            att: match &self.att {
                AttVectors::Hetero { ss, st, tt } => AttBound::Hetero {
                    ss: b.bind(&join(path, "att.ss"), ss),
                    st: b.bind(&join(path, "att.st"), st),
                    tt: b.bind(&join(path, "att.tt"), tt),
                },
                AttVectors::Shared(a) => AttBound::Shared(b.bind(&join(path, "att.shared"), a)),
            },
            bn: self.bn.bind(b, &join(path, "bn")),
            stack_att: self
                .stack_att
                .as_ref()
                .map(|p| b.bind(&join(path, "stack_att"), p)),
        }
    }
}

pub struct HsGalBound {
    pub proj_s: Option<LinearBound>,
    pub proj_t: Option<LinearBound>,
    pub weight: TensorId,
    pub att: AttBound,
    pub bn: BnBound,
    pub stack_att: Option<TensorId>,
}

pub struct HsGalOut {
    pub graph: HeteroGraph,
    pub stack: Option<TensorId>,
    pub scores: TensorId,
    pub attention: TensorId,
}

/// 0/1 block masks partitioning an `[N, N]` score matrix by pair type:
/// within-spectral, cross, within-temporal.
fn type_masks(tape: &mut Tape, n: usize, ns: usize) -> (TensorId, TensorId, TensorId) {
    let mut ss = vec![0.0; n * n];
    let mut st = vec![0.0; n * n];
    let mut tt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let cell = i * n + j;
            match (i < ns, j < ns) {
                (true, true) => ss[cell] = 1.0,
                (false, false) => tt[cell] = 1.0,
                _ => st[cell] = 1.0,
            }
        }
    }
    (
        tape.leaf(ss, vec![n, n]),
        tape.leaf(st, vec![n, n]),
        tape.leaf(tt, vec![n, n]),
    )
}

fn pair_scores(tape: &mut Tape, wn: TensorId, wnt: TensorId, att: TensorId) -> TensorId {
    let gated = tape.mul_row_vec(wn, att);
    tape.matmul(gated, wnt)
}

/// One heterogeneous attention layer.
///
/// Optionally projects each node type into the layer dimension, scores all
/// pairs with the pair-type gates, softmax-normalizes rows, then applies
/// the same mix/batchnorm/residual/SELU update as the homogeneous layer.
/// When a stack gate is present, the updated nodes are aggregated by a
/// second softmax attention and added onto the incoming stack value.
///
/// `stack_in` must be present exactly when the layer has a stack gate.
pub fn hs_gal(
    f: &mut Fwd,
    g: HeteroGraph,
    stack_in: Option<TensorId>,
    p: &HsGalParams,
    b: &HsGalBound,
    path: &str,
) -> HsGalOut {
    assert_eq!(
        stack_in.is_some(),
        b.stack_att.is_some(),
        "stack input and stack gate must be present together"
    );
    let n = f.tape.shape(g.nodes)[0];
    let ns = g.n_spectral;
    assert!(ns <= n, "spectral count exceeds node count");

    // per-type input projection
    let nodes = if b.proj_s.is_some() || b.proj_t.is_some() {
        let s_idx: Vec<usize> = (0..ns).collect();
        let t_idx: Vec<usize> = (ns..n).collect();
        let s_rows = f.tape.gather_rows(g.nodes, &s_idx);
        let t_rows = f.tape.gather_rows(g.nodes, &t_idx);
        let s_proj = match &b.proj_s {
            Some(l) => linear(f.tape, s_rows, l),
            None => s_rows,
        };
        let t_proj = match &b.proj_t {
            Some(l) => linear(f.tape, t_rows, l),
            None => t_rows,
        };
        f.tape.concat(&[s_proj, t_proj], 0)
    } else {
        g.nodes
    };

    let wn = f.tape.matmul(nodes, b.weight);
    let wnt = f.tape.transpose(wn);
    let scores = match &b.att {
        AttBound::Shared(a) => pair_scores(f.tape, wn, wnt, *a),
        AttBound::Hetero { ss, st, tt } => {
            let s_ss = pair_scores(f.tape, wn, wnt, *ss);
            let s_st = pair_scores(f.tape, wn, wnt, *st);
            let s_tt = pair_scores(f.tape, wn, wnt, *tt);
            let (m_ss, m_st, m_tt) = type_masks(f.tape, n, ns);
            let b_ss = f.tape.mul(s_ss, m_ss);
            let b_st = f.tape.mul(s_st, m_st);
            let b_tt = f.tape.mul(s_tt, m_tt);
            let partial = f.tape.add(b_ss, b_st);
            f.tape.add(partial, b_tt)
        }
    };
    let attention = f.tape.softmax(scores, 1);
    let mixed = f.tape.matmul(attention, wn);
    let normed = batchnorm(f, mixed, &p.bn, &b.bn, &join(path, "bn"), 1);
    let res = f.tape.add(normed, wn);
    let out = f.tape.selu(res);

    let stack = match (stack_in, b.stack_att) {
        (Some(sin), Some(gate)) => {
            let d = f.tape.shape(out)[1];
            let gate_col = f.tape.reshape(gate, vec![d, 1]);
            let raw = f.tape.matmul(out, gate_col);
            let raw_flat = f.tape.reshape(raw, vec![n]);
            let beta = f.tape.softmax(raw_flat, 0);
            let beta_row = f.tape.reshape(beta, vec![1, n]);
            let agg = f.tape.matmul(beta_row, out);
            let agg_vec = f.tape.reshape(agg, vec![d]);
            Some(f.tape.add(agg_vec, sin))
        }
        _ => None,
    };

    HsGalOut {
        graph: HeteroGraph { nodes: out, n_spectral: ns },
        stack,
        scores,
        attention,
    }
}

/// Pool a heterogeneous graph, tracking how many survivors are spectral.
pub fn hetero_pool(tape: &mut Tape, g: HeteroGraph, b: &PoolBound, keep: f64) -> HeteroGraph {
    let out = graph_pool(tape, g.nodes, b, keep);
    let ns = out.kept.iter().filter(|&&i| i < g.n_spectral).count();
    HeteroGraph { nodes: out.nodes, n_spectral: ns }
}
