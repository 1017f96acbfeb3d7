use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update applied in place.
///
/// Panics if `params`, `grads`, and `state` are not aligned.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, cfg: AdamConfig) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state matches parameters");
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Adam with its own state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState::new(params),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        adam_step(params, grads, &mut self.state, lr, self.config);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 3.5])];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01, AdamConfig::default());
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+eps).
        let mut params = vec![Tensor::vector(vec![0.0, 0.0, 0.0])];
        let grads = vec![Tensor::vector(vec![0.3, -7.0, 1e-3])];
        let mut opt = Adam::new(&params, AdamConfig::default());
        let lr = 0.0025;
        opt.step(&mut params, &grads, lr);
        for (w, g) in params[0].data().iter().zip(grads[0].data()) {
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
            assert!((w.abs() - lr).abs() < 1e-7);
            assert_eq!(w.signum(), -g.signum());
        }
    }

    #[test]
    fn step_counter_increments() {
        let mut params = vec![Tensor::vector(vec![1.0])];
        let grads = vec![Tensor::vector(vec![1.0])];
        let mut opt = Adam::new(&params, AdamConfig::default());
        for expected in 1..=3 {
            opt.step(&mut params, &grads, 0.1);
            assert_eq!(opt.state.step, expected);
        }
    }
}
