//! Adam moments for flat parameter vectors.
//!
//! The optimizer only produces the bias-corrected step direction; callers
//! scale it by their per-group (or per-component) learning rates.

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Update the moments with `grad` and return `m_hat / (sqrt(v_hat) + eps)`.
    pub fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grad)
            .map(|((m, v), &g)| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                (*m / bc1) / ((*v / bc2).sqrt() + self.eps)
            })
            .collect()
    }

    /// `params -= lr * direction(grad)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let dir = self.direction(grad);
        for (p, d) in params.iter_mut().zip(dir) {
            *p -= lr * d;
        }
    }
}
