//! Adam-style per-parameter adaptive updates over flat slices.
//!
//! Model structs expose their tensors as an ordered list of mutable slices;
//! one [`Adam`] instance carries the moment state for the whole list.

/// First/second-moment state plus the shared step count and learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// One moment buffer per tensor, sized from `lens`.
    pub fn new(lr: f64, lens: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `params` and `grads` must list the same tensors in
    /// the order given at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len(), "tensor count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), self.m[k].len(), "tensor {k} length");
            assert_eq!(g.len(), self.m[k].len(), "gradient {k} length");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With zero moment state, the bias-corrected first update is
        // lr * g / (|g| + eps) ≈ lr * sign(g).
        let mut opt = Adam::new(0.1, &[3]);
        let mut p = vec![1.0, 1.0, 1.0];
        let g = vec![0.5, -2.0, 0.0];
        opt.step(&mut [&mut p], &[&g]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut opt = Adam::new(0.05, &[1]);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 0.7)];
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!((p[0] - 0.7).abs() < 1e-3, "ended at {}", p[0]);
    }

    #[test]
    fn lr_can_be_lowered_mid_run() {
        let mut opt = Adam::new(0.1, &[1]);
        let mut p = vec![0.0];
        opt.step(&mut [&mut p], &[&[1.0][..]]);
        let after_first = p[0];
        opt.lr = 0.05;
        opt.step(&mut [&mut p], &[&[1.0][..]]);
        let second_move = (p[0] - after_first).abs();
        assert!(second_move < 0.06);
    }
}
