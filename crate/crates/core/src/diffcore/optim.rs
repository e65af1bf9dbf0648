//! Adaptive-moment optimizers: Adam and its decoupled-weight-decay variant.

use super::DiffError;

/// Which update rule to apply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimKind {
    /// Standard Adam.
    Adam,
    /// AdamW: parameters are first shrunk by `lr * weight_decay * param`,
    /// then receive the standard adaptive-moment update.
    AdamW { weight_decay: f64 },
}

/// Optimizer state: step count plus first/second moment buffers, one pair per
/// parameter tensor, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimKind, lr: f64, param_lens: &[usize]) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: param_lens.iter().map(|&l| (vec![0.0; l], vec![0.0; l])).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Access for checkpoint serialization.
    pub fn moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.moments
    }

    /// Restore from checkpointed state.
    pub fn restore(&mut self, step: u64, moments: Vec<(Vec<f64>, Vec<f64>)>) -> Result<(), DiffError> {
        if moments.len() != self.moments.len()
            || moments
                .iter()
                .zip(&self.moments)
                .any(|(a, b)| a.0.len() != b.0.len() || a.1.len() != b.1.len())
        {
            return Err(DiffError::OptimMismatch("restored moment shapes differ".into()));
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }

    /// One update over all parameter tensors. `params[i]` and `grads[i]` must
    /// have the length registered at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), DiffError> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(DiffError::OptimMismatch(format!(
                "{} params / {} grads for {} registered tensors",
                params.len(),
                grads.len(),
                self.moments.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if p.len() != self.moments[i].0.len() || g.len() != p.len() {
                return Err(DiffError::OptimMismatch(format!(
                    "tensor {i}: param {} / grad {} / state {}",
                    p.len(),
                    g.len(),
                    self.moments[i].0.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
            if let OptimKind::AdamW { weight_decay } = self.kind {
                if weight_decay != 0.0 {
                    let shrink = self.lr * weight_decay;
                    p.iter_mut().for_each(|x| *x -= shrink * *x);
                }
            }
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
