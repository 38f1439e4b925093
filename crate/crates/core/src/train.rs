//! Training harness: a synthetic two-class audio set, batched Adam steps on
//! a cosine schedule, deterministic end to end.
//!
//! Gradients are accumulated one sample at a time (each sample gets its own
//! tape seeded with `1/batch`), so peak memory stays at a single forward
//! pass regardless of batch size.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::layers::{apply_bn_stats, Fwd, Mode};
use crate::model::{model_forward, ModelConfig, ModelParams, CLASS_BONAFIDE, CLASS_SPOOF};
use crate::optim::{cosine_lr, Adam};
use crate::params::ParamWalk;
use crate::tensor::Tape;
use crate::wav::crop_or_tile;

/// Sample rate of every generated waveform, Hz.
pub const SYNTH_SAMPLE_RATE: usize = 16_000;
/// Length of every generated waveform (~4 s); models consume a prefix.
pub const SYNTH_LEN: usize = 64_600;

// ── Synthetic dataset ───────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub waves: Vec<Vec<f64>>,
    /// [`CLASS_BONAFIDE`] or [`CLASS_SPOOF`] per wave.
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }
}

fn sample_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Spoofed samples carry extra energy here (see [`spoof_artefacts`]).
pub const ARTEFACT_BAND_HZ: (f64, f64) = (5_000.0, 7_000.0);

fn harmonic_complex(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let f0 = rng.random_range(100.0..240.0);
    let n_harmonics = 6;
    let phases: Vec<f64> = (0..n_harmonics)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let dt = 1.0 / SYNTH_SAMPLE_RATE as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 * dt;
        let mut acc = 0.0;
        for (h, ph) in phases.iter().enumerate() {
            let k = (h + 1) as f64;
            acc += (std::f64::consts::TAU * k * f0 * t + ph).sin() / k;
        }
        *o = acc;
    }
}

/// Inject the spoofing cues: a coarse amplitude quantization of the whole
/// harmonic signal (strong odd-harmonic distortion) plus a band-limited
/// tone cluster running the full length of the clip. Both cues span the
/// entire waveform, so any crop window contains them.
fn spoof_artefacts(rng: &mut ChaCha8Rng, wave: &mut [f64]) {
    let peak = wave.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let levels = 2.0;
    for v in wave.iter_mut() {
        *v = (*v / peak * levels).round() / levels * peak;
    }

    let n_tones = 24;
    let tones: Vec<(f64, f64, f64)> = (0..n_tones)
        .map(|_| {
            (
                rng.random_range(ARTEFACT_BAND_HZ.0..ARTEFACT_BAND_HZ.1),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let scale = 1.0 * peak / (n_tones as f64).sqrt();
    let dt = 1.0 / SYNTH_SAMPLE_RATE as f64;
    for (i, v) in wave.iter_mut().enumerate() {
        let t = i as f64 * dt;
        let mut acc = 0.0;
        for (f, ph, a) in &tones {
            acc += a * (std::f64::consts::TAU * f * t + ph).sin();
        }
        *v += scale * acc;
    }
}

fn normalize_peak(wave: &mut [f64]) {
    let peak = wave.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in wave.iter_mut() {
            *v /= peak;
        }
    }
}

/// Generate `n_per_class` bona-fide and `n_per_class` spoofed waveforms.
///
/// Pair `i` shares one harmonic complex: the spoofed copy is the same tone
/// stack with injected artefacts. Every waveform derives from
/// `(seed, index)` alone and is normalized to unit peak.
pub fn synth_dataset(seed: u64, n_per_class: usize) -> SynthDataset {
    assert!(n_per_class >= 1, "need at least one sample per class");
    let mut waves = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    let mut ids = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        let mut base = vec![0.0; SYNTH_LEN];
        let mut rng = sample_rng(seed, i as u64);
        harmonic_complex(&mut rng, &mut base);

        let mut bona = base.clone();
        for v in bona.iter_mut() {
            *v += rng.random_range(-0.02..0.02);
        }
        normalize_peak(&mut bona);
        waves.push(bona);
        labels.push(CLASS_BONAFIDE);
        ids.push(format!("bona_{i:04}"));

        let mut spoof = base;
        spoof_artefacts(&mut rng, &mut spoof);
        for v in spoof.iter_mut() {
            *v += rng.random_range(-0.02..0.02);
        }
        normalize_peak(&mut spoof);
        waves.push(spoof);
        labels.push(CLASS_SPOOF);
        ids.push(format!("spoof_{i:04}"));
    }
    SynthDataset { waves, labels, ids }
}

/// Mean energy of `samples` in `[lo_hz, hi_hz)`, by direct projection onto
/// the DFT basis (an oracle, not a fast path).
pub fn band_energy(samples: &[f64], sample_rate: f64, lo_hz: f64, hi_hz: f64) -> f64 {
    let n = samples.len();
    let df = sample_rate / n as f64;
    let (k0, k1) = ((lo_hz / df).ceil() as usize, (hi_hz / df).floor() as usize);
    let mut total = 0.0;
    for k in k0..k1.min(n / 2) {
        let w = std::f64::consts::TAU * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &s) in samples.iter().enumerate() {
            let (sin, cos) = (w * i as f64).sin_cos();
            re += s * cos;
            im += s * sin;
        }
        total += re * re + im * im;
    }
    total / n as f64
}

// ── Trainer ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub n_per_class: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::debug(),
            seed: 1,
            steps: 200,
            batch_size: 8,
            n_per_class: 16,
            lr: 1e-4,
            lr_min: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("non-finite loss {value} at step {step} (sample {sample_id})")]
    NonFiniteLoss { step: usize, value: f64, sample_id: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRecord {
    pub history: Vec<StepRecord>,
    pub final_accuracy: f64,
    pub final_mean_loss: f64,
}

/// History serialized as `step<TAB>loss<TAB>lr` lines.
pub fn history_tsv(history: &[StepRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&format!("{}\t{}\t{}\n", r.step, r.loss, r.lr));
    }
    out
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: ModelParams,
    /// Dataset waveforms conditioned to the model input length.
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    ids: Vec<String>,
    adam: Adam,
    order: Vec<usize>,
    cursor: usize,
    shuffle_rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: &SynthDataset) -> Result<Self, TrainError> {
        cfg.model.validate().map_err(TrainError::BadConfig)?;
        if cfg.steps == 0 || cfg.batch_size == 0 {
            return Err(TrainError::BadConfig("steps and batch_size must be positive".into()));
        }
        if data.is_empty() {
            return Err(TrainError::BadConfig("dataset is empty".into()));
        }
        let inputs: Vec<Vec<f64>> = data
            .waves
            .iter()
            .map(|w| crop_or_tile(w, cfg.model.input_samples).expect("non-empty wave"))
            .collect();
        let params = ModelParams::init(&cfg.model, cfg.seed);
        let adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
        let shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5E3D_1B2A_9C4F_7788);
        Ok(Trainer {
            cfg,
            params,
            inputs,
            labels: data.labels.clone(),
            ids: data.ids.clone(),
            adam,
            order: Vec::new(),
            cursor: 0,
            shuffle_rng,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Next deterministic batch: a reshuffled pass over the dataset,
    /// refilled whenever exhausted.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..self.inputs.len()).collect();
                self.order.shuffle(&mut self.shuffle_rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer step on `batch`: forward/backward per sample with the
    /// gradient seeded by `1/batch`, one Adam update at the scheduled rate,
    /// one running-statistics blend from the averaged batch statistics.
    /// Returns the mean loss over the batch (before the update).
    pub fn train_step(&mut self, batch: &[usize]) -> Result<f64, TrainError> {
        assert!(!batch.is_empty(), "empty batch");
        let inv = 1.0 / batch.len() as f64;
        let mut grad_acc: Vec<Vec<f64>> = Vec::new();
        self.params.walk("", &mut |_, p| grad_acc.push(vec![0.0; p.data.len()]));
        let mut bn_acc: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut loss_sum = 0.0;

        for &si in batch {
            let mut tape = Tape::new();
            let (bound, binds) = self.params.bind(&mut tape);
            let wave = tape.leaf(self.inputs[si].clone(), vec![self.cfg.model.input_samples]);
            let mut f = Fwd::new(&mut tape, Mode::Train);
            let out = model_forward(&mut f, wave, &self.cfg.model, &self.params, &bound);
            let trace = f.bn_trace.clone();
            let loss = tape.cross_entropy(out.logits, self.labels[si]);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: self.step,
                    value,
                    sample_id: self.ids[si].clone(),
                });
            }
            loss_sum += value;
            tape.backward_seeded(loss, inv);
            for (gi, (_, g)) in binds.gradients(&tape).into_iter().enumerate() {
                for (a, v) in grad_acc[gi].iter_mut().zip(g) {
                    *a += v;
                }
            }
            for (path, id) in &trace {
                let (mean, var) = tape.batchnorm_stats(*id);
                match bn_acc.iter_mut().find(|(p, _, _)| p == path) {
                    Some((_, ms, vs)) => {
                        for (a, v) in ms.iter_mut().zip(mean) {
                            *a += v * inv;
                        }
                        for (a, v) in vs.iter_mut().zip(var) {
                            *a += v * inv;
                        }
                    }
                    None => bn_acc.push((
                        path.clone(),
                        mean.iter().map(|v| v * inv).collect(),
                        var.iter().map(|v| v * inv).collect(),
                    )),
                }
            }
        }

        let lr = cosine_lr(self.step, self.cfg.steps, self.cfg.lr, self.cfg.lr_min);
        self.adam.begin_step();
        let mut slot = 0;
        let adam = &mut self.adam;
        self.params.walk_mut("", &mut |_, p| {
            adam.update(slot, lr, &mut p.data, &grad_acc[slot]);
            slot += 1;
        });
        apply_bn_stats(&mut self.params, &bn_acc, self.cfg.bn_momentum);
        self.step += 1;
        Ok(loss_sum * inv)
    }

    /// Scheduled learning rate for the upcoming step.
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.step, self.cfg.steps, self.cfg.lr, self.cfg.lr_min)
    }

    /// Training-mode loss and score for one conditioned waveform: the same
    /// per-sample batch statistics the optimizer sees, no gradients.
    pub fn evaluate_sample(&self, si: usize) -> (f64, f64) {
        forward_loss(
            &self.cfg.model,
            &self.params,
            &self.inputs[si],
            self.labels[si],
            Mode::Train,
        )
    }

    /// Train accuracy and mean loss over the whole set, in the batch
    /// statistics mode training itself runs under.
    pub fn evaluate(&self) -> (f64, f64) {
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        for si in 0..self.inputs.len() {
            let (loss, score) = self.evaluate_sample(si);
            loss_sum += loss;
            let predicted = if score > 0.0 { CLASS_BONAFIDE } else { CLASS_SPOOF };
            if predicted == self.labels[si] {
                correct += 1;
            }
        }
        (
            correct as f64 / self.inputs.len() as f64,
            loss_sum / self.inputs.len() as f64,
        )
    }
}

/// Gradient-free forward for one conditioned waveform:
/// `(cross-entropy vs label, detection score)`.
fn forward_loss(
    cfg: &ModelConfig,
    params: &ModelParams,
    input: &[f64],
    label: usize,
    mode: Mode,
) -> (f64, f64) {
    let mut tape = Tape::new_inference();
    let (bound, _) = params.bind(&mut tape);
    let wave = tape.leaf(input.to_vec(), vec![cfg.input_samples]);
    let mut f = Fwd::new(&mut tape, mode);
    let out = model_forward(&mut f, wave, cfg, params, &bound);
    let logits = tape.data(out.logits);
    let score = crate::model::spoof_score(logits);
    let loss = tape.cross_entropy(out.logits, label);
    (tape.scalar(loss), score)
}

/// Inference-mode forward (stored running statistics) for one conditioned
/// waveform: `(cross-entropy vs label, detection score)`.
pub fn infer(
    cfg: &ModelConfig,
    params: &ModelParams,
    input: &[f64],
    label: usize,
) -> (f64, f64) {
    forward_loss(cfg, params, input, label, Mode::Eval)
}

/// Score one raw waveform (cropped/tiled to the model length), inference
/// mode. Positive means bona-fide.
pub fn score_wave(cfg: &ModelConfig, params: &ModelParams, samples: &[f64]) -> f64 {
    let input = crop_or_tile(samples, cfg.input_samples).expect("non-empty wave");
    infer(cfg, params, &input, CLASS_BONAFIDE).1
}

/// Train from scratch on the synthetic set; deterministic in `cfg.seed`.
pub fn fit(cfg: TrainConfig) -> Result<(TrainRecord, ModelParams), TrainError> {
    let data = synth_dataset(cfg.seed, cfg.n_per_class);
    let mut trainer = Trainer::new(cfg, &data)?;
    let mut history = Vec::with_capacity(trainer.cfg.steps);
    for _ in 0..trainer.cfg.steps {
        let step = trainer.step_count();
        let lr = trainer.current_lr();
        let batch = trainer.next_batch();
        let loss = trainer.train_step(&batch)?;
        history.push(StepRecord { step, loss, lr });
    }
    let (final_accuracy, final_mean_loss) = trainer.evaluate();
    Ok((
        TrainRecord { history, final_accuracy, final_mean_loss },
        trainer.params,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::named_params;

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                input_samples: 600,
                sinc_filters: 4,
                sinc_kernel_len: 65,
                channels: vec![4, 6],
                gat_dim: 6,
                dst_dim: 4,
                ..ModelConfig::debug()
            },
            steps: 10,
            batch_size: 4,
            n_per_class: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn dataset_is_deterministic_and_unit_peak() {
        let a = synth_dataset(3, 2);
        let b = synth_dataset(3, 2);
        assert_eq!(a.waves, b.waves);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.ids, b.ids);
        let c = synth_dataset(4, 2);
        assert_ne!(a.waves, c.waves);
        assert_eq!(a.len(), 4);
        for w in &a.waves {
            assert_eq!(w.len(), SYNTH_LEN);
            let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 1.0).abs() < 1e-12, "peak {peak}");
        }
        assert_eq!(a.labels, vec![CLASS_BONAFIDE, CLASS_SPOOF, CLASS_BONAFIDE, CLASS_SPOOF]);
    }

    #[test]
    fn spoof_band_energy_exceeds_bonafide() {
        let data = synth_dataset(11, 4);
        let sr = SYNTH_SAMPLE_RATE as f64;
        // the head of the clip: exactly what short crop windows see
        let w0 = 0;
        let mut ratios = [Vec::new(), Vec::new()];
        for i in 0..data.len() {
            let win = &data.waves[i][w0..w0 + 2048];
            let hi = band_energy(win, sr, ARTEFACT_BAND_HZ.0, ARTEFACT_BAND_HZ.1);
            let lo = band_energy(win, sr, 50.0, 2_000.0);
            ratios[data.labels[i]].push(hi / lo);
        }
        let worst_spoof = ratios[CLASS_SPOOF].iter().cloned().fold(f64::INFINITY, f64::min);
        let best_bona = ratios[CLASS_BONAFIDE].iter().cloned().fold(0.0f64, f64::max);
        assert!(
            worst_spoof > 10.0 * best_bona,
            "artefact band should separate classes: spoof {worst_spoof} vs bona {best_bona}"
        );
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let cfg = TrainConfig { lr: 0.0, lr_min: 0.0, steps: 2, ..tiny_train_config() };
        let data = synth_dataset(cfg.seed, cfg.n_per_class);
        let mut tr = Trainer::new(cfg, &data).unwrap();
        let before: Vec<Vec<f64>> =
            named_params(&tr.params).iter().map(|(_, p)| p.data.clone()).collect();
        for _ in 0..2 {
            let batch = tr.next_batch();
            tr.train_step(&batch).unwrap();
        }
        let after: Vec<Vec<f64>> =
            named_params(&tr.params).iter().map(|(_, p)| p.data.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn one_step_reduces_loss_on_a_fixed_batch() {
        let cfg = TrainConfig { lr: 3e-5, lr_min: 3e-5, ..tiny_train_config() };
        let data = synth_dataset(cfg.seed, cfg.n_per_class);
        let mut tr = Trainer::new(cfg, &data).unwrap();
        let batch: Vec<usize> = (0..4).collect();
        let first = tr.train_step(&batch).unwrap();
        let second = tr.train_step(&batch).unwrap();
        assert!(
            second < first,
            "loss should drop on the same batch: {first} -> {second}"
        );
    }

    #[test]
    fn twenty_steps_on_a_fixed_batch_descend_almost_monotonically() {
        let cfg = TrainConfig { lr: 1e-5, lr_min: 1e-5, ..TrainConfig::default() };
        let data = synth_dataset(cfg.seed, cfg.n_per_class);
        let batch: Vec<usize> = (0..cfg.batch_size).collect();
        let mut tr = Trainer::new(cfg, &data).unwrap();
        let mut losses = Vec::with_capacity(20);
        for _ in 0..20 {
            losses.push(tr.train_step(&batch).unwrap());
        }
        let violations = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(
            violations <= 2,
            "{violations} increases in 20 fixed-batch steps: {losses:?}"
        );
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "no net progress: {losses:?}"
        );
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let cfg = tiny_train_config();
        let (ra, pa) = fit(cfg.clone()).unwrap();
        let (rb, pb) = fit(cfg).unwrap();
        assert_eq!(ra.history, rb.history);
        let na = named_params(&pa);
        let nb = named_params(&pb);
        for (a, b) in na.iter().zip(&nb) {
            assert_eq!(a.1.data, b.1.data, "parameter {} diverged", a.0);
        }
        let mut buf_a = Vec::new();
        pa.walk_buffers("", &mut |name, d| buf_a.push((name.to_string(), d.to_vec())));
        let mut buf_b = Vec::new();
        pb.walk_buffers("", &mut |name, d| buf_b.push((name.to_string(), d.to_vec())));
        assert_eq!(buf_a, buf_b, "running statistics diverged");
    }

    #[test]
    fn lr_history_follows_the_cosine_schedule_exactly() {
        let cfg = tiny_train_config();
        let (rec, _) = fit(cfg.clone()).unwrap();
        for r in &rec.history {
            assert_eq!(r.lr, cosine_lr(r.step, cfg.steps, cfg.lr, cfg.lr_min));
        }
        assert_eq!(rec.history.len(), cfg.steps);
        assert_eq!(rec.history[0].lr, cfg.lr);
    }

    #[test]
    fn history_lines_are_tab_separated() {
        let history = vec![
            StepRecord { step: 0, loss: 0.75, lr: 1e-4 },
            StepRecord { step: 1, loss: 0.5, lr: 5e-5 },
        ];
        assert_eq!(history_tsv(&history), "0\t0.75\t0.0001\n1\t0.5\t0.00005\n");
    }

    #[test]
    fn batches_cycle_through_every_sample() {
        let cfg = tiny_train_config();
        let data = synth_dataset(cfg.seed, cfg.n_per_class);
        let mut tr = Trainer::new(cfg, &data).unwrap();
        let mut seen = vec![0usize; 8];
        for _ in 0..2 {
            for i in tr.next_batch() {
                seen[i] += 1;
            }
        }
        assert_eq!(seen, vec![1; 8], "one full epoch should touch every sample once");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = SynthDataset { waves: vec![], labels: vec![], ids: vec![] };
        assert!(matches!(
            Trainer::new(tiny_train_config(), &data),
            Err(TrainError::BadConfig(_))
        ));
    }
}
