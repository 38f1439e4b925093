//! Raw-waveform encoder: a learnable band-pass sinc filter bank followed by
//! residual 2-D convolution blocks that pool aggressively along time.
//!
//! Input is a mono waveform `[L]`; output is a feature map
//! `[channels, filters, time]`.

use rand::Rng;

use crate::layers::{batchnorm, conv2d, BnBound, BnParams, Conv2dBound, Conv2dParams, Fwd};
use crate::params::{join, param_group, Binder, Param};
use crate::tensor::{Tape, TensorId};

/// Lowest admissible band edge in Hz.
pub const MIN_LOW_HZ: f64 = 1.0;
/// Smallest admissible bandwidth in Hz before the upper clamp.
pub const MIN_BAND_HZ: f64 = 50.0;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

// ── Sinc filter bank ────────────────────────────────────────────────────

/// Learnable band edges, stored raw in Hz; the forward pass applies the
/// feasibility constraints.
#[derive(Clone, Debug)]
pub struct SincParams {
    pub low_hz: Param,
    pub high_hz: Param,
}
param_group!(SincParams { low_hz, high_hz });

impl SincParams {
    /// Band edges at mel-spaced boundaries covering 0 Hz to Nyquist:
    /// filter `i` spans boundary `i` to boundary `i+1`.
    pub fn mel_spaced(n_filters: usize, sample_rate: f64) -> Self {
        assert!(n_filters > 0, "need at least one filter");
        let mel_max = hz_to_mel(sample_rate / 2.0);
        let bound = |i: usize| mel_to_hz(mel_max * i as f64 / n_filters as f64);
        let low: Vec<f64> = (0..n_filters).map(bound).collect();
        let high: Vec<f64> = (1..=n_filters).map(bound).collect();
        SincParams {
            low_hz: Param::new(low, vec![n_filters]),
            high_hz: Param::new(high, vec![n_filters]),
        }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> SincBound {
        SincBound {
            low_hz: b.bind(&join(path, "low_hz"), &self.low_hz),
            high_hz: b.bind(&join(path, "high_hz"), &self.high_hz),
        }
    }
}

pub struct SincBound {
    pub low_hz: TensorId,
    pub high_hz: TensorId,
}

/// Constrain raw band edges to a feasible band, then build the kernels.
///
/// The low edge lands in `[MIN_LOW_HZ, nyquist - MIN_BAND_HZ - 1]`; the
/// high edge is forced at least `MIN_BAND_HZ` above it and strictly below
/// Nyquist. All constraints are differentiable clamp/max ops.
pub fn sinc_bank(
    tape: &mut Tape,
    b: &SincBound,
    sample_rate: f64,
    kernel_len: usize,
) -> TensorId {
    let nyq = sample_rate / 2.0;
    let low = tape.clamp(b.low_hz, MIN_LOW_HZ, nyq - MIN_BAND_HZ - 1.0);
    let band_floor = tape.add_scalar(low, MIN_BAND_HZ);
    let high_raw = tape.elementwise_max(b.high_hz, band_floor);
    let high = tape.clamp(high_raw, MIN_LOW_HZ + MIN_BAND_HZ, nyq - 1.0);
    tape.sinc_kernel(low, high, sample_rate, kernel_len)
}

// ── Residual blocks ─────────────────────────────────────────────────────

/// Pre-activation residual block over `[C, filters, time]`:
/// `pool(conv(selu(bn(conv(selu(bn(x)))))) + shortcut(x))` with a 1x1
/// shortcut convolution exactly when the channel count changes. The pool is
/// 1x3 stride 3 along time.
#[derive(Clone, Debug)]
pub struct ResBlockParams {
    pub bn1: BnParams,
    pub conv1: Conv2dParams,
    pub bn2: BnParams,
    pub conv2: Conv2dParams,
    pub shortcut: Option<Conv2dParams>,
}
param_group!(ResBlockParams { bn1, conv1, bn2, conv2, shortcut });

impl ResBlockParams {
    pub fn init(rng: &mut impl Rng, in_c: usize, out_c: usize) -> Self {
        ResBlockParams {
            bn1: BnParams::new(in_c),
            conv1: Conv2dParams::init(rng, out_c, in_c, 3, 3, false),
            bn2: BnParams::new(out_c),
            conv2: Conv2dParams::init(rng, out_c, out_c, 3, 3, false),
            shortcut: (in_c != out_c).then(|| Conv2dParams::init(rng, out_c, in_c, 1, 1, false)),
        }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> ResBlockBound {
        ResBlockBound {
            bn1: self.bn1.bind(b, &join(path, "bn1")),
            conv1: self.conv1.bind(b, &join(path, "conv1")),
            bn2: self.bn2.bind(b, &join(path, "bn2")),
            conv2: self.conv2.bind(b, &join(path, "conv2")),
            shortcut: self.shortcut.as_ref().map(|s| s.bind(b, &join(path, "shortcut"))),
        }
    }
}

pub struct ResBlockBound {
    pub bn1: BnBound,
    pub conv1: Conv2dBound,
    pub bn2: BnBound,
    pub conv2: Conv2dBound,
    pub shortcut: Option<Conv2dBound>,
}

/// In inference mode the block frees its intermediates (including `x`) as
/// soon as each is consumed, so peak memory stays near three activations.
pub fn res_block(
    f: &mut Fwd,
    x: TensorId,
    p: &ResBlockParams,
    b: &ResBlockBound,
    path: &str,
) -> TensorId {
    let free = !f.tape.grad_enabled();
    let n1 = batchnorm(f, x, &p.bn1, &b.bn1, &join(path, "bn1"), 0);
    let a1 = f.tape.selu(n1);
    if free {
        f.tape.free_data(n1);
    }
    let c1 = conv2d(f.tape, a1, &b.conv1, (1, 1));
    if free {
        f.tape.free_data(a1);
    }
    let n2 = batchnorm(f, c1, &p.bn2, &b.bn2, &join(path, "bn2"), 0);
    if free {
        f.tape.free_data(c1);
    }
    let a2 = f.tape.selu(n2);
    if free {
        f.tape.free_data(n2);
    }
    let c2 = conv2d(f.tape, a2, &b.conv2, (1, 1));
    if free {
        f.tape.free_data(a2);
    }
    let sc = match &b.shortcut {
        Some(s) => conv2d(f.tape, x, s, (0, 0)),
        None => x,
    };
    let y = f.tape.add(c2, sc);
    if free {
        f.tape.free_data(c2);
        f.tape.free_data(sc);
        if sc != x {
            f.tape.free_data(x);
        }
    }
    let out = f.tape.maxpool2d(y, (1, 3), (1, 3));
    if free {
        f.tape.free_data(y);
    }
    out
}

// ── Encoder ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub sinc: SincParams,
    pub blocks: Vec<ResBlockParams>,
}
param_group!(EncoderParams { sinc, blocks });

impl EncoderParams {
    /// `channels` lists the output channels of each block; block inputs
    /// chain from the single sinc-output channel.
    pub fn init(
        rng: &mut impl Rng,
        n_filters: usize,
        sample_rate: f64,
        channels: &[usize],
    ) -> Self {
        assert!(!channels.is_empty(), "need at least one block");
        let mut blocks = Vec::with_capacity(channels.len());
        let mut in_c = 1;
        for &out_c in channels {
            blocks.push(ResBlockParams::init(rng, in_c, out_c));
            in_c = out_c;
        }
        EncoderParams { sinc: SincParams::mel_spaced(n_filters, sample_rate), blocks }
    }

    pub fn bind(&self, b: &mut Binder, path: &str) -> EncoderBound {
        EncoderBound {
            sinc: self.sinc.bind(b, &join(path, "sinc")),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, blk)| blk.bind(b, &join(&join(path, "blocks"), &i.to_string())))
                .collect(),
        }
    }
}

pub struct EncoderBound {
    pub sinc: SincBound,
    pub blocks: Vec<ResBlockBound>,
}

/// Waveform `[L]` to feature map `[channels.last(), n_filters, T]`.
///
/// In inference mode this consumes `wave` (its buffer is freed).
pub fn encode(
    f: &mut Fwd,
    wave: TensorId,
    p: &EncoderParams,
    b: &EncoderBound,
    sample_rate: f64,
    kernel_len: usize,
    path: &str,
) -> TensorId {
    assert_eq!(f.tape.shape(wave).len(), 1, "waveform must be rank 1");
    let free = !f.tape.grad_enabled();
    let kernels = sinc_bank(f.tape, &b.sinc, sample_rate, kernel_len);
    let filtered = f.tape.conv1d(wave, kernels);
    if free {
        f.tape.free_data(wave);
    }
    let s = f.tape.shape(filtered).to_vec();
    let mut x = f.tape.reshape(filtered, vec![1, s[0], s[1]]);
    if free {
        f.tape.free_data(filtered);
    }
    let blocks_path = join(path, "blocks");
    for (i, blk) in p.blocks.iter().enumerate() {
        x = res_block(f, x, blk, &b.blocks[i], &join(&blocks_path, &i.to_string()));
    }
    x
}
