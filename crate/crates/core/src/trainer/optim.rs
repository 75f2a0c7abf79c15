use crate::error::{DdkError, Result};

/// Adam with bias correction and the usual coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One update in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DdkError::ShapeMismatch(format!(
                "adam holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `ema <- decay * ema + (1 - decay) * params`, written as
/// `ema + (1 - decay) (params - ema)` so that equal inputs stay bit-identical.
/// `decay = 0` copies.
pub fn ema_update(ema: &mut [f64], params: &[f64], decay: f64) -> Result<()> {
    if ema.len() != params.len() {
        return Err(DdkError::ShapeMismatch(format!(
            "ema has {} entries, params {}",
            ema.len(),
            params.len()
        )));
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(DdkError::InvalidArgument(format!("ema decay must lie in [0, 1), got {decay}")));
    }
    if decay == 0.0 {
        ema.copy_from_slice(params);
        return Ok(());
    }
    let k = 1.0 - decay;
    for (e, p) in ema.iter_mut().zip(params) {
        *e += k * (p - *e);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Adam::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            a.update(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut a = Adam::new(2, 0.01);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..2000 {
            a.update(&mut p, &[3.0, -0.2]).unwrap();
            let d0 = prev[0] - p[0];
            let d1 = prev[1] - p[1];
            assert!((d0 - 0.01).abs() < 1e-6 && (d1 + 0.01).abs() < 1e-6);
            prev = p.clone();
        }
    }

    #[test]
    fn ema_decay_zero_copies() {
        let mut e = vec![5.0, 6.0];
        ema_update(&mut e, &[0.1, 0.3], 0.0).unwrap();
        assert_eq!(e, vec![0.1, 0.3]);
    }

    #[test]
    fn ema_gap_shrinks_geometrically() {
        let mut e = vec![1.0];
        for k in 1..=50 {
            ema_update(&mut e, &[0.0], 0.9).unwrap();
            assert!((e[0] - 0.9f64.powi(k)).abs() < 1e-14);
        }
        assert!(ema_update(&mut e, &[0.0], 1.0).is_err());
    }

    #[test]
    fn half_life_at_default_decay() {
        let mut e = vec![1.0];
        let mut k = 0;
        while e[0] > 0.5 {
            ema_update(&mut e, &[0.0], 0.999).unwrap();
            k += 1;
        }
        let predicted = std::f64::consts::LN_2 / 0.001;
        assert!((k as f64 - predicted).abs() < 2.0, "{k}");
    }
}
