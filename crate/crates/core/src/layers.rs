//! Shared building blocks: batch normalization with running statistics,
//! biased 2-D convolution, and affine layers, each with its off-tape
//! parameter group and the tape-side forward that consumes it.

use rand::Rng;

use crate::params::{join, param_group, Binder, Param, ParamWalk};
use crate::tensor::{Tape, TensorId};

/// Variance guard inside batch normalization. Small enough that a batch
/// already at zero mean and unit variance passes through unchanged to well
/// below 1e-6.
pub const BN_EPS: f64 = 1e-9;

/// Fraction of the fresh batch statistics blended into the running
/// statistics after each training forward.
pub const BN_MOMENTUM_DEFAULT: f64 = 0.1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward context: the tape, the normalization mode, and a record of
/// every train-mode batchnorm output so the caller can fold the batch
/// statistics into the running buffers afterwards.
pub struct Fwd<'a> {
    pub tape: &'a mut Tape,
    pub mode: Mode,
    pub bn_trace: Vec<(String, TensorId)>,
}

impl<'a> Fwd<'a> {
    pub fn new(tape: &'a mut Tape, mode: Mode) -> Self {
        Fwd { tape, mode, bn_trace: Vec::new() }
    }
}

// ── Batch normalization ─────────────────────────────────────────────────

/// Scale/shift parameters plus running statistics buffers.
#[derive(Clone, Debug)]
pub struct BnParams {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnParams {
    pub fn new(dim: usize) -> Self {
        BnParams {
            gamma: Param::ones(vec![dim]),
            beta: Param::zeros(vec![dim]),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> BnBound {
        BnBound {
            gamma: b.bind(&join(path, "gamma"), &self.gamma),
            beta: b.bind(&join(path, "beta"), &self.beta),
        }
    }
}

impl ParamWalk for BnParams {
    fn walk<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join(path, "gamma"), &self.gamma);
        f(join(path, "beta"), &self.beta);
    }
    fn walk_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(path, "gamma"), &mut self.gamma);
        f(join(path, "beta"), &mut self.beta);
    }
    fn walk_buffers<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(path, "running_mean"), &self.running_mean);
        f(join(path, "running_var"), &self.running_var);
    }
    fn walk_buffers_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        f(join(path, "running_mean"), &mut self.running_mean);
        f(join(path, "running_var"), &mut self.running_var);
    }
}

pub struct BnBound {
    pub gamma: TensorId,
    pub beta: TensorId,
}

/// Normalize `x` over every axis except `channel_axis`.
///
/// Train mode standardizes with the batch's own statistics (biased
/// variance) and records the output in `bn_trace` so the harness can update
/// the running buffers; eval mode uses the stored running statistics.
pub fn batchnorm(
    f: &mut Fwd,
    x: TensorId,
    p: &BnParams,
    b: &BnBound,
    path: &str,
    channel_axis: usize,
) -> TensorId {
    match f.mode {
        Mode::Train => {
            let y = f.tape.batchnorm_train(x, b.gamma, b.beta, channel_axis, BN_EPS);
            f.bn_trace.push((path.to_string(), y));
            y
        }
        Mode::Eval => f.tape.batchnorm_eval(
            x,
            b.gamma,
            b.beta,
            channel_axis,
            BN_EPS,
            p.running_mean.clone(),
            p.running_var.clone(),
        ),
    }
}

/// Fold traced batch statistics into running buffers:
/// `running = (1 - momentum) * running + momentum * batch`.
///
/// `trace` entries are keyed by the batchnorm group's path; `group` is the
/// parameter tree that owns the matching `running_mean` / `running_var`
/// buffers.
pub fn apply_bn_updates<G: ParamWalk>(
    group: &mut G,
    tape: &Tape,
    trace: &[(String, TensorId)],
    momentum: f64,
) {
    let mut updates: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (path, id) in trace {
        let (mean, var) = tape.batchnorm_stats(*id);
        updates.push((path.clone(), mean.to_vec(), var.to_vec()));
    }
    apply_bn_stats(group, &updates, momentum);
}

/// Same as [`apply_bn_updates`] but from already-extracted statistics,
/// letting a caller blend stats gathered across several forward passes.
pub fn apply_bn_stats<G: ParamWalk>(
    group: &mut G,
    updates: &[(String, Vec<f64>, Vec<f64>)],
    momentum: f64,
) {
    group.walk_buffers_mut("", &mut |name, buf| {
        let (bn_path, is_mean) = if let Some(p) = name.strip_suffix("running_mean") {
            (p.trim_end_matches('.').to_string(), true)
        } else if let Some(p) = name.strip_suffix("running_var") {
            (p.trim_end_matches('.').to_string(), false)
        } else {
            return;
        };
        for (path, mean, var) in updates {
            if *path == bn_path {
                let src = if is_mean { mean } else { var };
                assert_eq!(buf.len(), src.len(), "running stat length mismatch at {name}");
                for (r, s) in buf.iter_mut().zip(src) {
                    *r = (1.0 - momentum) * *r + momentum * s;
                }
            }
        }
    });
}

// ── Convolution ─────────────────────────────────────────────────────────

/// Bias is omitted when the convolution feeds a batchnorm, where a
/// per-channel shift is exactly redundant (the mean subtraction removes it).
#[derive(Clone, Debug)]
pub struct Conv2dParams {
    pub weight: Param,
    pub bias: Option<Param>,
}
param_group!(Conv2dParams { weight, bias });

impl Conv2dParams {
    pub fn init(
        rng: &mut impl Rng,
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        bias: bool,
    ) -> Self {
        Conv2dParams {
            weight: Param::kaiming(rng, vec![out_c, in_c, kh, kw], in_c * kh * kw),
            bias: bias.then(|| Param::zeros(vec![out_c])),
        }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> Conv2dBound {
        Conv2dBound {
            weight: b.bind(&join(path, "weight"), &self.weight),
            bias: self.bias.as_ref().map(|p| b.bind(&join(path, "bias"), p)),
        }
    }
}

pub struct Conv2dBound {
    pub weight: TensorId,
    pub bias: Option<TensorId>,
}

pub fn conv2d(tape: &mut Tape, x: TensorId, b: &Conv2dBound, pad: (usize, usize)) -> TensorId {
    let y = tape.conv2d(x, b.weight, pad);
    match b.bias {
        Some(bias) => {
            let z = tape.add_chan_bias(y, bias);
            if !tape.grad_enabled() {
                tape.free_data(y);
            }
            z
        }
        None => y,
    }
}

// ── Affine ──────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct LinearParams {
    pub weight: Param,
    pub bias: Option<Param>,
}
param_group!(LinearParams { weight, bias });

impl LinearParams {
    pub fn init(rng: &mut impl Rng, in_d: usize, out_d: usize, bias: bool) -> Self {
        LinearParams {
            weight: Param::kaiming(rng, vec![in_d, out_d], in_d),
            bias: bias.then(|| Param::zeros(vec![out_d])),
        }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> LinearBound {
        LinearBound {
            weight: b.bind(&join(path, "weight"), &self.weight),
            bias: self.bias.as_ref().map(|p| b.bind(&join(path, "bias"), p)),
        }
    }
}

pub struct LinearBound {
    pub weight: TensorId,
    pub bias: Option<TensorId>,
}

/// `[N, in] -> [N, out]`.
pub fn linear(tape: &mut Tape, x: TensorId, b: &LinearBound) -> TensorId {
    let y = tape.matmul(x, b.weight);
    match b.bias {
        Some(bias) => tape.add_row_vec(y, bias),
        None => y,
    }
}

/// `[in] -> [out]` for rank-1 inputs.
pub fn linear_vec(tape: &mut Tape, x: TensorId, b: &LinearBound) -> TensorId {
    let in_d = tape.shape(x)[0];
    let row = tape.reshape(x, vec![1, in_d]);
    let y = linear(tape, row, b);
    let out_d = tape.shape(y)[1];
    tape.reshape(y, vec![out_d])
}
