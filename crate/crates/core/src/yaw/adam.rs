use serde::{Deserialize, Serialize};

use super::YawError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<(), YawError> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && 0.0 < self.beta1
            && self.beta1 < 1.0
            && 0.0 < self.beta2
            && self.beta2 < 1.0
            && self.eps.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(YawError::InvalidConfig(format!("invalid ADAM hyperparameters {self:?}")))
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected ADAM update at step `t` (1-based).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    t: u64,
    hyper: &AdamHyper,
) -> Result<(), YawError> {
    if t == 0 {
        return Err(YawError::InvalidConfig("ADAM step counter starts at 1".into()));
    }
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(YawError::Shape { expected: n, got: grads.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(YawError::NonFinite("gradient"));
    }
    let AdamHyper { lr, beta1, beta2, eps } = *hyper;
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let hyper = AdamHyper { lr: 0.001, ..AdamHyper::default() };
        let mut p = [2.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1, &hyper).unwrap();
        let expected = 2.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = [1.0, -2.0, 3.5];
        let mut s = AdamState::new(3);
        for t in 1..=10 {
            adam_step(&mut p, &[0.0; 3], &mut s, t, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.5]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = [1.0];
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut p, &[f64::NAN], &mut s, 1, &AdamHyper::default()).is_err());
        assert!(adam_step(&mut p, &[1.0], &mut s, 0, &AdamHyper::default()).is_err());
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut s, 1, &AdamHyper::default()).is_err());
        assert_eq!(p, [1.0]);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x) = 0.5 * sum a_i (x_i - c_i)^2
        let a = [1.0, 4.0, 0.5, 2.0];
        let c = [0.3, -0.2, 0.1, 0.0];
        let grad = |x: &[f64]| -> Vec<f64> { x.iter().zip(a.iter().zip(&c)).map(|(x, (a, c))| a * (x - c)).collect() };
        let mut x = vec![1.0, 1.0, -1.0, 0.5];
        let mut s = AdamState::new(4);
        let hyper = AdamHyper { lr: 0.1, beta1: 0.8, beta2: 0.999, eps: 1e-8 };
        for t in 1..=200 {
            let g = grad(&x);
            adam_step(&mut x, &g, &mut s, t, &hyper).unwrap();
        }
        let norm = grad(&x).iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }
}
