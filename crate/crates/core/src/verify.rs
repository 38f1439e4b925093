//! End-to-end gradient verification: a finite-difference sweep over every
//! parameter tensor of the debug-size model, reported per module.
//!
//! This is the runtime-facing counterpart of the unit-level gradient tests:
//! it exists so a build can be checked on demand (`gradcheck` command) and
//! so the same sweep can gate releases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::GradCheck;
use crate::layers::{Fwd, Mode};
use crate::model::{model_forward, ModelConfig, ModelParams, CLASS_BONAFIDE};
use crate::params::ParamWalk;
use crate::tensor::Tape;

/// Gradients must match central differences to this relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct ModuleErr {
    pub module: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub modules: Vec<ModuleErr>,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }

    /// One line per module plus a verdict, e.g. for CLI output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.modules {
            out.push_str(&format!(
                "{:<24} {:>4} elements  max rel err {:.3e}\n",
                m.module, m.checked, m.max_rel_err
            ));
        }
        out.push_str(&format!(
            "overall: {} elements, max rel err {:.3e} (tolerance {:.0e}) -> {}\n",
            self.checked,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        ));
        out
    }
}

/// Coarse module bucket for a parameter path.
fn module_of(tensor: &str) -> &'static str {
    if tensor.starts_with("encoder.sinc") {
        "sinc front end"
    } else if tensor.starts_with("encoder") {
        "residual encoder"
    } else if tensor.starts_with("gat_") || tensor.starts_with("pool_") {
        "graph attention + pool"
    } else if tensor.starts_with("branches") {
        "heterogeneous stack"
    } else {
        "readout"
    }
}

/// A broadband probe waveform: a tone plus dense noise, so no batchnorm
/// channel sees a near-constant input (those amplify rounding noise in the
/// numeric difference).
fn probe_wave(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|i| (0.37 * i as f64).sin() * 0.5 + rng.random_range(-0.4..0.4))
        .collect()
}

/// Run the full finite-difference sweep on the debug configuration.
///
/// `samples_per_tensor` elements of every parameter tensor are probed with
/// central differences and compared against the reverse-mode gradients.
pub fn verify_gradients(samples_per_tensor: usize, seed: u64) -> VerifyReport {
    let cfg = ModelConfig::debug();
    let params = ModelParams::init(&cfg, 11);
    let wave = probe_wave(cfg.input_samples, 99);

    let mut tape = Tape::new();
    tape.record_selections();
    let (bound, binds) = params.bind(&mut tape);
    let w = tape.leaf(wave.clone(), vec![cfg.input_samples]);
    let mut f = Fwd::new(&mut tape, Mode::Train);
    let out = model_forward(&mut f, w, &cfg, &params, &bound);
    let loss = tape.cross_entropy(out.logits, CLASS_BONAFIDE);
    tape.backward(loss);
    let trace = tape.take_selections();

    let mut flat: Vec<(String, Vec<f64>)> = Vec::new();
    params.walk("", &mut |name, p| flat.push((name.to_string(), p.data.clone())));
    let analytic: Vec<Vec<f64>> = flat
        .iter()
        .map(|(n, _)| tape.grad(binds.id(n)).unwrap().to_vec())
        .collect();
    drop(tape);

    // Replaying the recorded selections keeps every probe on the same smooth
    // branch of the piecewise loss that the backward pass differentiated;
    // otherwise an argmax flip inside the step interval (a kink) contaminates
    // the quotient with a jump that is not part of either branch's derivative.
    let base = params.clone();
    let check = GradCheck { step: 1e-5, samples_per_tensor, seed };
    let report = check.check(&mut flat, &analytic, |vals| {
        let mut p2 = base.clone();
        let mut it = vals.iter();
        p2.walk_mut("", &mut |_, param| {
            param.data = it.next().unwrap().1.clone();
        });
        let mut tape = Tape::new_inference();
        tape.replay_selections(&trace);
        let (bound, _) = p2.bind(&mut tape);
        let w = tape.leaf(wave.clone(), vec![cfg.input_samples]);
        let mut f = Fwd::new(&mut tape, Mode::Train);
        let out = model_forward(&mut f, w, &cfg, &p2, &bound);
        let loss = tape.cross_entropy(out.logits, CLASS_BONAFIDE);
        tape.scalar(loss)
    });

    let order = [
        "sinc front end",
        "residual encoder",
        "graph attention + pool",
        "heterogeneous stack",
        "readout",
    ];
    let modules = order
        .iter()
        .map(|&module| {
            let mut checked = 0;
            let mut max_rel_err = 0.0f64;
            for e in &report.entries {
                if module_of(&e.tensor) == module {
                    checked += 1;
                    max_rel_err = max_rel_err.max(e.rel_err);
                }
            }
            ModuleErr { module, checked, max_rel_err }
        })
        .collect();

    VerifyReport {
        modules,
        checked: report.entries.len(),
        max_rel_err: report.max_rel_err,
        tolerance: GRAD_TOLERANCE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucketing_covers_every_parameter_family() {
        assert_eq!(module_of("encoder.sinc.low_hz"), "sinc front end");
        assert_eq!(module_of("encoder.blocks.0.conv1.weight"), "residual encoder");
        assert_eq!(module_of("gat_s.attn"), "graph attention + pool");
        assert_eq!(module_of("pool_t.proj"), "graph attention + pool");
        assert_eq!(module_of("branches.1.layer2.w"), "heterogeneous stack");
        assert_eq!(module_of("readout.weight"), "readout");
    }

    #[test]
    fn sweep_with_one_sample_per_tensor_passes() {
        let report = verify_gradients(1, 7);
        assert!(report.passed(), "{}", report.render());
        assert!(report.modules.iter().all(|m| m.checked > 0), "{}", report.render());
    }
}
