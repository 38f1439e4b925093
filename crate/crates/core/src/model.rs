//! Full model assembly: sinc encoder, spectral/temporal attention branches,
//! heterogeneous layers with optional max-merged parallel branches, readout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode, EncoderBound, EncoderParams};
use crate::graph::{
    gat_layer, graph_pool, pool_size, spectral_nodes, temporal_nodes, GatBound, GatParams,
    PoolBound, PoolParams,
};
use crate::hetero::{combine, hetero_pool, hs_gal, HeteroGraph, HsGalBound, HsGalParams};
use crate::layers::{linear_vec, Fwd, LinearBound, LinearParams};
use crate::params::{param_count, param_group, Binder, Bindings};
use crate::tensor::{Tape, TensorId};

/// Class index for spoofed audio.
pub const CLASS_SPOOF: usize = 0;
/// Class index for bona-fide audio.
pub const CLASS_BONAFIDE: usize = 1;

/// Detection score: positive favors bona-fide, negative favors spoof.
pub fn spoof_score(logits: &[f64]) -> f64 {
    logits[CLASS_BONAFIDE] - logits[CLASS_SPOOF]
}

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: usize,
    /// Waveform length every input is cropped or tiled to.
    pub input_samples: usize,
    pub sinc_filters: usize,
    pub sinc_kernel_len: usize,
    /// Output channels of each residual encoder block.
    pub channels: Vec<usize>,
    /// Node dimension after the per-domain attention layers.
    pub gat_dim: usize,
    /// Keep ratio of the spectral pool feeding the combined graph.
    pub spectral_keep: f64,
    /// Keep ratio of the temporal pool feeding the combined graph.
    pub temporal_keep: f64,
    /// Node dimension inside the heterogeneous layers (also the stack size).
    pub dst_dim: usize,
    /// Keep ratio of each pool inside a branch.
    pub branch_keep: f64,
    /// Separate attention vectors per node-type pair (vs one shared vector).
    pub hetero_attention: bool,
    /// Thread a stack node through each branch and into the readout.
    pub stack_node: bool,
    /// Run two parallel branches merged by elementwise max.
    pub mgo: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sample_rate: 16_000,
            input_samples: 64_600,
            sinc_filters: 70,
            sinc_kernel_len: 129,
            channels: vec![32, 32, 64, 64, 64, 64],
            gat_dim: 64,
            spectral_keep: 0.5,
            temporal_keep: 0.7,
            dst_dim: 32,
            branch_keep: 0.5,
            hetero_attention: true,
            stack_node: true,
            mgo: true,
        }
    }
}

impl ModelConfig {
    /// Reduced preset: quarter-scale channel widths and node dimensions.
    pub fn small() -> Self {
        ModelConfig {
            channels: vec![16, 16, 24, 24, 24, 24],
            gat_dim: 24,
            dst_dim: 16,
            ..ModelConfig::default()
        }
    }

    /// Desk-scale preset for tests and quick runs: short input, few filters.
    pub fn debug() -> Self {
        ModelConfig { input_samples: 2_000, sinc_filters: 8, ..ModelConfig::small() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sample_rate < 200 {
            return Err(format!("sample_rate {} too low for band-pass filters", self.sample_rate));
        }
        if self.sinc_filters == 0 {
            return Err("sinc_filters must be positive".into());
        }
        if self.sinc_kernel_len < 3 {
            return Err(format!("sinc_kernel_len {} too short", self.sinc_kernel_len));
        }
        if self.input_samples < self.sinc_kernel_len {
            return Err(format!(
                "input_samples {} shorter than sinc kernel {}",
                self.input_samples, self.sinc_kernel_len
            ));
        }
        if self.channels.is_empty() {
            return Err("channels must list at least one encoder block".into());
        }
        if self.gat_dim == 0 || self.dst_dim == 0 {
            return Err("node dimensions must be positive".into());
        }
        for (name, keep) in [
            ("spectral_keep", self.spectral_keep),
            ("temporal_keep", self.temporal_keep),
            ("branch_keep", self.branch_keep),
        ] {
            if !(keep > 0.0 && keep <= 1.0) {
                return Err(format!("{name} must lie in (0, 1], got {keep}"));
            }
        }
        if self.feature_time() == 0 {
            return Err(format!(
                "input_samples {} leaves no time frames after {} pooling stages",
                self.input_samples,
                self.channels.len()
            ));
        }
        Ok(())
    }

    /// Time frames remaining after the sinc convolution and every block pool.
    pub fn feature_time(&self) -> usize {
        let mut t = self.input_samples - self.sinc_kernel_len + 1;
        for _ in &self.channels {
            t /= 3;
        }
        t
    }

    pub fn node_trajectory(&self) -> NodeTrajectory {
        let spectral_in = self.sinc_filters;
        let temporal_in = self.feature_time();
        let spectral_kept = pool_size(spectral_in, self.spectral_keep);
        let temporal_kept = pool_size(temporal_in, self.temporal_keep);
        let n0 = spectral_kept + temporal_kept;
        let n1 = pool_size(n0, self.branch_keep);
        let n2 = pool_size(n1, self.branch_keep);
        NodeTrajectory {
            spectral_in,
            spectral_kept,
            temporal_in,
            temporal_kept,
            combined: vec![n0, n1, n2],
        }
    }

    /// Width of the readout vector feeding the final affine map.
    pub fn readout_dim(&self) -> usize {
        if self.stack_node {
            3 * self.dst_dim
        } else {
            2 * self.dst_dim
        }
    }
}

/// Node counts through the graph stages.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTrajectory {
    pub spectral_in: usize,
    pub spectral_kept: usize,
    pub temporal_in: usize,
    pub temporal_kept: usize,
    /// Combined-graph node count entering, then after each branch pool.
    pub combined: Vec<usize>,
}

// ── Parameters ──────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct BranchParams {
    pub layer1: HsGalParams,
    pub pool1: PoolParams,
    pub layer2: HsGalParams,
    pub pool2: PoolParams,
}
param_group!(BranchParams { layer1, pool1, layer2, pool2 });

impl BranchParams {
    fn init(rng: &mut impl rand::Rng, cfg: &ModelConfig) -> Self {
        BranchParams {
            layer1: HsGalParams::init(
                rng,
                cfg.gat_dim,
                cfg.gat_dim,
                cfg.dst_dim,
                cfg.hetero_attention,
                cfg.stack_node,
            ),
            pool1: PoolParams::init(rng, cfg.dst_dim),
            layer2: HsGalParams::init(
                rng,
                cfg.dst_dim,
                cfg.dst_dim,
                cfg.dst_dim,
                cfg.hetero_attention,
                cfg.stack_node,
            ),
            pool2: PoolParams::init(rng, cfg.dst_dim),
        }
    }

    fn bind(&self, b: &mut Binder, path: &str) -> BranchBound {
        BranchBound {
            layer1: self.layer1.bind(b, &format!("{path}.layer1")),
            pool1: self.pool1.bind(b, &format!("{path}.pool1")),
            layer2: self.layer2.bind(b, &format!("{path}.layer2")),
            pool2: self.pool2.bind(b, &format!("{path}.pool2")),
        }
    }
}

pub struct BranchBound {
    pub layer1: HsGalBound,
    pub pool1: PoolBound,
    pub layer2: HsGalBound,
    pub pool2: PoolBound,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub gat_s: GatParams,
    pub gat_t: GatParams,
    pub pool_s: PoolParams,
    pub pool_t: PoolParams,
    pub branches: Vec<BranchParams>,
    pub readout: LinearParams,
}
param_group!(ModelParams { encoder, gat_s, gat_t, pool_s, pool_t, branches, readout });

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c_last = *cfg.channels.last().expect("validated config");
        let n_branches = if cfg.mgo { 2 } else { 1 };
        ModelParams {
            encoder: EncoderParams::init(
                rng,
                cfg.sinc_filters,
                cfg.sample_rate as f64,
                &cfg.channels,
            ),
            gat_s: GatParams::init(rng, c_last, cfg.gat_dim),
            gat_t: GatParams::init(rng, c_last, cfg.gat_dim),
            pool_s: PoolParams::init(rng, cfg.gat_dim),
            pool_t: PoolParams::init(rng, cfg.gat_dim),
            branches: (0..n_branches).map(|_| BranchParams::init(rng, cfg)).collect(),
            readout: {
                // damp the classifier head so initial logits start near zero
                // (initial loss ~ ln 2) instead of wasting early steps
                let mut head = LinearParams::init(rng, cfg.readout_dim(), 2, true);
                for w in head.weight.data.iter_mut() {
                    *w *= 0.1;
                }
                head
            },
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> (ModelBound, Bindings) {
        let mut b = Binder::new(tape);
        let bound = ModelBound {
            encoder: self.encoder.bind(&mut b, "encoder"),
            gat_s: self.gat_s.bind(&mut b, "gat_s"),
            gat_t: self.gat_t.bind(&mut b, "gat_t"),
            pool_s: self.pool_s.bind(&mut b, "pool_s"),
            pool_t: self.pool_t.bind(&mut b, "pool_t"),
            branches: self
                .branches
                .iter()
                .enumerate()
                .map(|(i, br)| br.bind(&mut b, &format!("branches.{i}")))
                .collect(),
            readout: self.readout.bind(&mut b, "readout"),
        };
        (bound, b.finish())
    }
}

pub struct ModelBound {
    pub encoder: EncoderBound,
    pub gat_s: GatBound,
    pub gat_t: GatBound,
    pub pool_s: PoolBound,
    pub pool_t: PoolBound,
    pub branches: Vec<BranchBound>,
    pub readout: LinearBound,
}

/// Total learnable parameter count for a configuration.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    param_count(&ModelParams::init(cfg, 0))
}

// ── Forward pass ────────────────────────────────────────────────────────

pub struct ForwardOut {
    /// `[2]` class logits, indexed by [`CLASS_SPOOF`] / [`CLASS_BONAFIDE`].
    pub logits: TensorId,
    /// Fixed-size graph summary feeding the affine classifier.
    pub readout: TensorId,
    pub merged: HeteroGraph,
    pub merged_stack: Option<TensorId>,
    pub branch_graphs: Vec<HeteroGraph>,
    pub branch_stacks: Vec<Option<TensorId>>,
}

/// Reduce a graph to `concat(node-max, node-mean[, stack])`.
pub fn graph_readout(tape: &mut Tape, nodes: TensorId, stack: Option<TensorId>) -> TensorId {
    let node_max = tape.reduce_max(nodes, 0);
    let node_mean = tape.reduce_mean(nodes, 0);
    match stack {
        Some(s) => tape.concat(&[node_max, node_mean, s], 0),
        None => tape.concat(&[node_max, node_mean], 0),
    }
}

pub fn model_forward(
    f: &mut Fwd,
    wave: TensorId,
    cfg: &ModelConfig,
    p: &ModelParams,
    b: &ModelBound,
) -> ForwardOut {
    assert_eq!(
        f.tape.shape(wave),
        &[cfg.input_samples],
        "waveform length must match the configured input size"
    );
    let fm = encode(
        f,
        wave,
        &p.encoder,
        &b.encoder,
        cfg.sample_rate as f64,
        cfg.sinc_kernel_len,
        "encoder",
    );
    let free = !f.tape.grad_enabled();
    let s_raw = spectral_nodes(f.tape, fm);
    let t_raw = temporal_nodes(f.tape, fm);
    if free {
        f.tape.free_data(fm);
    }
    let gs = gat_layer(f, s_raw, &p.gat_s, &b.gat_s, "gat_s");
    let gt = gat_layer(f, t_raw, &p.gat_t, &b.gat_t, "gat_t");
    let ps = graph_pool(f.tape, gs.nodes, &b.pool_s, cfg.spectral_keep);
    let pt = graph_pool(f.tape, gt.nodes, &b.pool_t, cfg.temporal_keep);
    let combined = combine(f.tape, ps.nodes, pt.nodes);

    let mut branch_graphs = Vec::with_capacity(p.branches.len());
    let mut branch_stacks = Vec::with_capacity(p.branches.len());
    for (i, br) in p.branches.iter().enumerate() {
        let bb = &b.branches[i];
        let path = format!("branches.{i}");
        let stack0 = cfg
            .stack_node
            .then(|| f.tape.leaf(vec![0.0; cfg.dst_dim], vec![cfg.dst_dim]));
        let l1 = hs_gal(f, combined, stack0, &br.layer1, &bb.layer1, &format!("{path}.layer1"));
        let g1 = hetero_pool(f.tape, l1.graph, &bb.pool1, cfg.branch_keep);
        let l2 = hs_gal(f, g1, l1.stack, &br.layer2, &bb.layer2, &format!("{path}.layer2"));
        let g2 = hetero_pool(f.tape, l2.graph, &bb.pool2, cfg.branch_keep);
        branch_graphs.push(g2);
        branch_stacks.push(l2.stack);
    }

    let (merged, merged_stack) = if branch_graphs.len() == 2 {
        let nodes = f.tape.elementwise_max(branch_graphs[0].nodes, branch_graphs[1].nodes);
        let stack = match (branch_stacks[0], branch_stacks[1]) {
            (Some(a), Some(c)) => Some(f.tape.elementwise_max(a, c)),
            _ => None,
        };
        // Surviving-node types may differ between branches; the merged graph
        // adopts the first branch's labeling.
        (
            HeteroGraph { nodes, n_spectral: branch_graphs[0].n_spectral },
            stack,
        )
    } else {
        (branch_graphs[0], branch_stacks[0])
    };

    let readout = graph_readout(f.tape, merged.nodes, merged_stack);
    let logits = linear_vec(f.tape, readout, &b.readout);
    ForwardOut { logits, readout, merged, merged_stack, branch_graphs, branch_stacks }
}

// ── Reporting ───────────────────────────────────────────────────────────

/// Human-readable configuration report for the `info` command.
pub fn describe(cfg: &ModelConfig) -> String {
    let traj = cfg.node_trajectory();
    let combined: Vec<String> = traj.combined.iter().map(|n| n.to_string()).collect();
    let mut s = String::new();
    s.push_str(&format!("sample_rate        {}\n", cfg.sample_rate));
    s.push_str(&format!("input_samples      {}\n", cfg.input_samples));
    s.push_str(&format!(
        "sinc_filters       {} (kernel length {})\n",
        cfg.sinc_filters, cfg.sinc_kernel_len
    ));
    s.push_str(&format!("channels           {:?}\n", cfg.channels));
    s.push_str(&format!("feature_map        [{}, {}, {}]\n", cfg.channels.last().unwrap(), cfg.sinc_filters, cfg.feature_time()));
    s.push_str(&format!("gat_dim            {}\n", cfg.gat_dim));
    s.push_str(&format!("d_st               {}\n", cfg.dst_dim));
    s.push_str(&format!(
        "keep_ratios        spectral {} / temporal {} / branch {}\n",
        cfg.spectral_keep, cfg.temporal_keep, cfg.branch_keep
    ));
    s.push_str(&format!(
        "spectral_nodes     {} -> {}\n",
        traj.spectral_in, traj.spectral_kept
    ));
    s.push_str(&format!(
        "temporal_nodes     {} -> {}\n",
        traj.temporal_in, traj.temporal_kept
    ));
    s.push_str(&format!("combined_nodes     {}\n", combined.join(" -> ")));
    s.push_str(&format!(
        "ablations          hetero_attention={} stack_node={} mgo={}\n",
        cfg.hetero_attention, cfg.stack_node, cfg.mgo
    ));
    s.push_str(&format!("parameters         {}\n", count_parameters(cfg)));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::params::{named_params, ParamWalk};

    /// Full architecture at toy scale: two encoder blocks, tiny dims.
    fn tiny_config() -> ModelConfig {
        ModelConfig {
            sample_rate: 16_000,
            input_samples: 64,
            sinc_filters: 3,
            sinc_kernel_len: 17,
            channels: vec![2, 3],
            gat_dim: 4,
            spectral_keep: 0.6,
            temporal_keep: 0.6,
            dst_dim: 3,
            branch_keep: 0.5,
            hetero_attention: true,
            stack_node: true,
            mgo: true,
        }
    }

    fn wave_data(n: usize) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..n)
            .map(|i| (0.37 * i as f64).sin() * 0.5 + rng.random_range(-0.4..0.4))
            .collect()
    }

    fn run(cfg: &ModelConfig, params: &ModelParams, mode: Mode) -> (Tape, ForwardOut) {
        let mut tape = Tape::new();
        let (bound, _) = params.bind(&mut tape);
        let wave = tape.leaf(wave_data(cfg.input_samples), vec![cfg.input_samples]);
        let mut f = Fwd::new(&mut tape, mode);
        let out = model_forward(&mut f, wave, cfg, params, &bound);
        (tape, out)
    }

    #[test]
    fn debug_config_shapes_follow_trajectory() {
        let cfg = ModelConfig::debug();
        cfg.validate().unwrap();
        let traj = cfg.node_trajectory();
        assert_eq!(traj.spectral_in, 8);
        assert_eq!(traj.temporal_in, 2);
        let params = ModelParams::init(&cfg, 1);
        let (tape, out) = run(&cfg, &params, Mode::Train);
        assert_eq!(tape.shape(out.logits), &[2]);
        assert_eq!(tape.shape(out.readout), &[cfg.readout_dim()]);
        assert_eq!(
            tape.shape(out.merged.nodes),
            &[*traj.combined.last().unwrap(), cfg.dst_dim]
        );
        for g in &out.branch_graphs {
            assert_eq!(tape.shape(g.nodes), tape.shape(out.merged.nodes));
        }
        assert_eq!(out.merged.n_spectral, out.branch_graphs[0].n_spectral);
        assert!(tape.data(out.logits).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_config_matches_reference_scale() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.channels, vec![32, 32, 64, 64, 64, 64]);
        assert_eq!(cfg.feature_time(), 88);
        let traj = cfg.node_trajectory();
        assert_eq!((traj.spectral_in, traj.spectral_kept), (70, 35));
        assert_eq!((traj.temporal_in, traj.temporal_kept), (88, 61));
        assert_eq!(traj.combined, vec![96, 48, 24]);
        let n = count_parameters(&cfg);
        assert!((150_000..=450_000).contains(&n), "default params {n}");
        let small = count_parameters(&ModelConfig::small());
        assert!(small < 120_000, "small params {small}");
        assert!(small < n);
    }

    #[test]
    fn count_is_seed_independent_and_affine_count_is_exact() {
        let lin = LinearParams::init(&mut ChaCha8Rng::seed_from_u64(3), 5, 3, true);
        assert_eq!(param_count(&lin), 5 * 3 + 3);
        let cfg = tiny_config();
        assert_eq!(
            param_count(&ModelParams::init(&cfg, 1)),
            param_count(&ModelParams::init(&cfg, 2))
        );
    }

    #[test]
    fn merged_nodes_dominate_each_branch_exactly() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 5);
        let (tape, out) = run(&cfg, &params, Mode::Train);
        let merged = tape.data(out.merged.nodes);
        let a = tape.data(out.branch_graphs[0].nodes);
        let b = tape.data(out.branch_graphs[1].nodes);
        assert!(a.iter().zip(b).any(|(x, y)| x != y), "branches should differ");
        for i in 0..merged.len() {
            assert_eq!(merged[i], a[i].max(b[i]));
            assert!(merged[i] >= a[i] && merged[i] >= b[i]);
        }
        let ms = tape.data(out.merged_stack.unwrap());
        let sa = tape.data(out.branch_stacks[0].unwrap());
        let sb = tape.data(out.branch_stacks[1].unwrap());
        for i in 0..ms.len() {
            assert_eq!(ms[i], sa[i].max(sb[i]));
        }
    }

    #[test]
    fn tied_branches_collapse_to_one_branch() {
        let cfg = tiny_config();
        let mut params = ModelParams::init(&cfg, 5);
        params.branches[1] = params.branches[0].clone();
        let (tape, out) = run(&cfg, &params, Mode::Train);
        assert_eq!(
            tape.data(out.merged.nodes),
            tape.data(out.branch_graphs[0].nodes)
        );
        assert_eq!(
            tape.data(out.merged_stack.unwrap()),
            tape.data(out.branch_stacks[0].unwrap())
        );
    }

    #[test]
    fn single_branch_mode_skips_the_merge() {
        let cfg = ModelConfig { mgo: false, ..tiny_config() };
        let params = ModelParams::init(&cfg, 5);
        assert_eq!(params.branches.len(), 1);
        let (tape, out) = run(&cfg, &params, Mode::Train);
        assert_eq!(out.branch_graphs.len(), 1);
        assert_eq!(out.merged.nodes, out.branch_graphs[0].nodes);
        assert!(tape.data(out.logits).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stack_ablation_shrinks_the_readout() {
        let cfg = ModelConfig { stack_node: false, ..tiny_config() };
        assert_eq!(cfg.readout_dim(), 2 * cfg.dst_dim);
        let params = ModelParams::init(&cfg, 5);
        let (tape, out) = run(&cfg, &params, Mode::Train);
        assert!(out.merged_stack.is_none());
        assert!(out.branch_stacks.iter().all(|s| s.is_none()));
        assert_eq!(tape.shape(out.readout), &[2 * cfg.dst_dim]);
    }

    #[test]
    fn readout_of_single_node_repeats_it() {
        let mut tape = Tape::new();
        let v = vec![1.5, -2.0, 0.25];
        let nodes = tape.leaf(v.clone(), vec![1, 3]);
        let stack = tape.leaf(vec![9.0, 8.0, 7.0], vec![3]);
        let r = graph_readout(&mut tape, nodes, Some(stack));
        assert_eq!(tape.data(r), &[1.5, -2.0, 0.25, 1.5, -2.0, 0.25, 9.0, 8.0, 7.0]);
    }

    #[test]
    fn readout_of_opposite_nodes_has_zero_mean_and_abs_max() {
        let mut tape = Tape::new();
        let v = [0.5, -1.25, 2.0];
        let data: Vec<f64> = v.iter().copied().chain(v.iter().map(|x| -x)).collect();
        let nodes = tape.leaf(data, vec![2, 3]);
        let r = graph_readout(&mut tape, nodes, None);
        let got = tape.data(r);
        for i in 0..3 {
            assert_eq!(got[i], v[i].abs());
            assert_eq!(got[3 + i], 0.0);
        }
    }

    #[test]
    fn readout_ignores_node_order() {
        let mut tape = Tape::new();
        let rows = [
            vec![0.3, -0.7, 1.1, 0.0],
            vec![-0.2, 0.9, 0.4, 2.0],
            vec![1.3, 0.1, -0.5, -1.0],
        ];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let perm: Vec<f64> = [2usize, 0, 1].iter().flat_map(|&i| rows[i].clone()).collect();
        let a = tape.leaf(flat, vec![3, 4]);
        let b = tape.leaf(perm, vec![3, 4]);
        let ra = graph_readout(&mut tape, a, None);
        let rb = graph_readout(&mut tape, b, None);
        let (da, db) = (tape.data(ra), tape.data(rb));
        // max half is exact; mean half only up to summation order
        assert_eq!(da[..4], db[..4]);
        for i in 4..8 {
            assert!((da[i] - db[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_still_produces_finite_logits() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 3);
        let mut tape = Tape::new();
        let (bound, _) = params.bind(&mut tape);
        let wave = tape.leaf(vec![0.0; cfg.input_samples], vec![cfg.input_samples]);
        let mut f = Fwd::new(&mut tape, Mode::Train);
        let out = model_forward(&mut f, wave, &cfg, &params, &bound);
        assert!(tape.data(out.logits).iter().all(|v| v.is_finite()));
    }

    #[test]
    #[should_panic(expected = "waveform length")]
    fn wrong_waveform_length_is_rejected() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 1);
        let mut tape = Tape::new();
        let (bound, _) = params.bind(&mut tape);
        let wave = tape.leaf(vec![0.0; 32], vec![32]);
        let mut f = Fwd::new(&mut tape, Mode::Train);
        model_forward(&mut f, wave, &cfg, &params, &bound);
    }

    #[test]
    fn init_is_deterministic_per_seed_and_varies_across_seeds() {
        let cfg = tiny_config();
        let a = ModelParams::init(&cfg, 7);
        let b = ModelParams::init(&cfg, 7);
        let c = ModelParams::init(&cfg, 8);
        let (na, nb, nc) = (named_params(&a), named_params(&b), named_params(&c));
        assert_eq!(na.len(), nb.len());
        for i in 0..na.len() {
            assert_eq!(na[i].0, nb[i].0);
            assert_eq!(na[i].1.data, nb[i].1.data);
        }
        assert!(
            na.iter().zip(&nc).any(|(x, y)| x.1.data != y.1.data),
            "different seeds should differ somewhere"
        );
        let (t1, o1) = run(&cfg, &a, Mode::Train);
        let (t2, o2) = run(&cfg, &b, Mode::Train);
        assert_eq!(t1.data(o1.logits), t2.data(o2.logits));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { input_samples: 100, ..ModelConfig::debug() }
            .validate()
            .is_err());
        assert!(ModelConfig { spectral_keep: 0.0, ..ModelConfig::debug() }
            .validate()
            .is_err());
        assert!(ModelConfig { channels: vec![], ..ModelConfig::debug() }
            .validate()
            .is_err());
        assert!(ModelConfig { input_samples: 16, ..ModelConfig::debug() }
            .validate()
            .is_err());
    }

    #[test]
    fn describe_reports_the_headline_numbers() {
        let text = describe(&ModelConfig::default());
        assert!(text.contains("[32, 32, 64, 64, 64, 64]"));
        assert!(text.contains("70"));
        assert!(text.contains("spectral 0.5 / temporal 0.7"));
        assert!(text.contains("96 -> 48 -> 24"));
        assert!(text.contains("70 -> 35"));
        assert!(text.contains("88 -> 61"));
    }

    #[test]
    fn score_polarity_favors_bonafide() {
        let mut logits = [0.0; 2];
        logits[CLASS_BONAFIDE] = 2.0;
        logits[CLASS_SPOOF] = 0.5;
        assert!((spoof_score(&logits) - 1.5).abs() < 1e-15);
    }

    use crate::gradcheck::GradCheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 11);
        let wave = wave_data(cfg.input_samples);

        let mut tape = Tape::new();
        let (bound, binds) = params.bind(&mut tape);
        let w = tape.leaf(wave.clone(), vec![cfg.input_samples]);
        let mut f = Fwd::new(&mut tape, Mode::Train);
        let out = model_forward(&mut f, w, &cfg, &params, &bound);
        let loss = tape.cross_entropy(out.logits, CLASS_BONAFIDE);
        tape.backward(loss);

        let mut flat: Vec<(String, Vec<f64>)> = Vec::new();
        params.walk("", &mut |name, p| flat.push((name.to_string(), p.data.clone())));
        let walk_names: Vec<String> = flat.iter().map(|(n, _)| n.clone()).collect();
        let bind_names: Vec<String> = binds.names().iter().map(|s| s.to_string()).collect();
        assert_eq!(walk_names, bind_names, "bind order must mirror walk order");

        let analytic: Vec<Vec<f64>> = walk_names
            .iter()
            .map(|n| tape.grad(binds.id(n)).unwrap().to_vec())
            .collect();

        let base = params.clone();
        let check = GradCheck { step: 1e-5, samples_per_tensor: 3, seed: 42 };
        let report = check.check(&mut flat, &analytic, |vals| {
            let mut p2 = base.clone();
            let mut it = vals.iter();
            p2.walk_mut("", &mut |_, param| {
                param.data = it.next().unwrap().1.clone();
            });
            let mut tape = Tape::new();
            let (bound, _) = p2.bind(&mut tape);
            let w = tape.leaf(wave.clone(), vec![cfg.input_samples]);
            let mut f = Fwd::new(&mut tape, Mode::Train);
            let out = model_forward(&mut f, w, &cfg, &p2, &bound);
            let loss = tape.cross_entropy(out.logits, CLASS_BONAFIDE);
            tape.scalar(loss)
        });
        assert!(report.passes(1e-4), "{}", report.summary());
    }
}
