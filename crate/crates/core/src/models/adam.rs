/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: one first/second moment buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// `sizes[i]` is the element count of parameter tensor `i`.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update in place:
    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Panics if the tensor list does not match the sizes given at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len(), "parameter tensor count");
        assert_eq!(grads.len(), self.m.len(), "gradient tensor count");
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), m.len(), "parameter shape");
            assert_eq!(g.len(), m.len(), "gradient shape");
            for i in 0..m.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grads: &[f64], p0: f64) -> f64 {
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = [p0];
        for &g in grads {
            state.step(&mut [&mut p], &[&[g]]);
        }
        p[0]
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 1e-4, 250.0] {
            let p = run(&[g], 1.0);
            let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "g={g}: {p} vs {expected}");
            assert!((p - (1.0 - 1e-3 * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        assert_eq!(run(&[0.0; 50], 0.75), 0.75);
    }

    #[test]
    fn two_constant_steps_match_scalar_recursion() {
        let (g, b1, b2, lr, eps) = (0.3_f64, 0.9_f64, 0.999_f64, 1e-3, 1e-8);
        let mut p = -0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        assert_eq!(run(&[g, g], -0.5), p);
        // constant gradient: both bias-corrected moments equal g and g^2
        assert!((p - (-0.5 - 2.0 * lr * g / (g + eps))).abs() < 1e-15);
    }

    #[test]
    fn step_counter_increments() {
        let mut state = AdamState::new(AdamConfig::default(), &[2, 3]);
        let (mut a, mut b) = (vec![0.0; 2], vec![0.0; 3]);
        for _ in 0..4 {
            state.step(&mut [&mut a, &mut b], &[&[1.0, 1.0], &[1.0, 1.0, 1.0]]);
        }
        assert_eq!(state.step_count(), 4);
    }
}
