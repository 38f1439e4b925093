//! Adam optimizer and cosine learning-rate annealing.

/// Cosine annealing from `lr_max` at step 0 down to `lr_min` at
/// `total_steps`. Steps past the end stay at `lr_min`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    assert!(total_steps > 0, "cosine_lr: total_steps must be positive");
    assert!(lr_max >= lr_min, "cosine_lr: lr_max < lr_min");
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. One moment slot per parameter tensor; slots
/// are addressed by a stable index so optimizer state survives across steps.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2), "betas must be in [0, 1)");
        assert!(eps > 0.0, "eps must be positive");
        Adam { beta1, beta2, eps, t: 0, slots: Vec::new() }
    }

    /// Advance the shared timestep. Call once per optimization step, before
    /// any [`Adam::update`] of that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// Apply one Adam update to a single parameter tensor.
    ///
    /// `slot` must identify the same tensor on every call; slots are created
    /// on first use, so updates must always visit tensors in the same order.
    pub fn update(&mut self, slot: usize, lr: f64, data: &mut [f64], grad: &[f64]) {
        assert!(self.t > 0, "update before begin_step");
        assert_eq!(data.len(), grad.len(), "param/grad length mismatch");
        while self.slots.len() <= slot {
            self.slots.push(Slot { m: Vec::new(), v: Vec::new() });
        }
        let s = &mut self.slots[slot];
        if s.m.is_empty() {
            s.m = vec![0.0; data.len()];
            s.v = vec![0.0; data.len()];
        }
        assert_eq!(s.m.len(), data.len(), "slot {slot} bound to a different tensor size");
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..data.len() {
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * grad[i];
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = s.m[i] / bc1;
            let v_hat = s.v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
