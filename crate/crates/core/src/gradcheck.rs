//! Finite-difference verification of analytic gradients.
//!
//! The harness never looks at the tape's backward pass: it probes a pure
//! forward closure with central differences and compares against gradients
//! the caller obtained however it likes. Sampling is seeded so failures
//! reproduce exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One compared gradient element.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a [`GradCheck::check`] sweep.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.entries.is_empty() && self.max_rel_err < tol
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
    }

    pub fn summary(&self) -> String {
        match self.worst() {
            Some(w) => format!(
                "checked {} elements, max rel err {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
                self.entries.len(),
                self.max_rel_err,
                w.tensor,
                w.index,
                w.analytic,
                w.numeric
            ),
            None => "checked 0 elements".to_string(),
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from exploding the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient checker.
pub struct GradCheck {
    /// Relative perturbation size: each element moves by
    /// `step * max(|value|, 1)`, so parameters living at large scales
    /// (e.g. frequencies in Hz) get a proportionate probe.
    pub step: f64,
    /// Elements sampled per tensor; 0 checks every element.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-6, samples_per_tensor: 0, seed: 0 }
    }
}

impl GradCheck {
    /// Compare `analytic` against central differences of `loss`.
    ///
    /// `params` and `analytic` are parallel: same names, same order, same
    /// lengths. `loss` must be a pure function of `params`.
    pub fn check<F>(
        &self,
        params: &mut [(String, Vec<f64>)],
        analytic: &[Vec<f64>],
        mut loss: F,
    ) -> GradCheckReport
    where
        F: FnMut(&[(String, Vec<f64>)]) -> f64,
    {
        assert_eq!(params.len(), analytic.len(), "params/gradients count mismatch");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport::default();
        for ti in 0..params.len() {
            let len = params[ti].1.len();
            assert_eq!(len, analytic[ti].len(), "gradient length mismatch for {}", params[ti].0);
            let picks: Vec<usize> = if self.samples_per_tensor == 0 || self.samples_per_tensor >= len
            {
                (0..len).collect()
            } else {
                rand::seq::index::sample(&mut rng, len, self.samples_per_tensor).into_vec()
            };
            for ei in picks {
                let orig = params[ti].1[ei];
                let h = self.step * orig.abs().max(1.0);
                params[ti].1[ei] = orig + h;
                let up = loss(params);
                params[ti].1[ei] = orig - h;
                let down = loss(params);
                params[ti].1[ei] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[ti][ei];
                let rel = relative_error(a, numeric);
                report.max_rel_err = report.max_rel_err.max(rel);
                report.entries.push(GradCheckEntry {
                    tensor: params[ti].0.clone(),
                    index: ei,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
        report
    }
}
