use super::{Float, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Linear warm-up to `peak` over `warmup` steps, then `1/sqrt(step)` decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup: u64) -> Self {
        Self { peak, warmup }
    }

    /// Learning rate for the 1-based optimizer step `step`.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        if self.warmup == 0 {
            return self.peak;
        }
        let w = self.warmup as f64;
        self.peak * (s / w).min((w / s).sqrt())
    }
}

/// First/second moment estimates for a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        Self { m, v, t: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config }
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    ///
    /// `params[i]` is updated from `grads[i]`; every entry needs a gradient,
    /// `names[i]` labels the error otherwise.
    pub fn step<T: Float>(
        &self,
        state: &mut AdamState<T>,
        params: &mut [&mut [T]],
        grads: &[Option<&[T]>],
        names: &[&str],
        lr: f64,
    ) -> Result<()> {
        assert_eq!(params.len(), state.m.len(), "adam state does not match parameter list");
        if let Some(i) = grads.iter().position(Option::is_none) {
            return Err(TensorError::MissingGradient(names.get(i).unwrap_or(&"?").to_string()));
        }
        state.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(state.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(state.t as i32));
        let (lr, eps) = (T::of(lr), T::of(c.eps));
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].unwrap();
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let adam = Adam::default();
        let mut st = AdamState::<f64>::new([3]);
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        adam.step(&mut st, &mut [&mut p], &[Some(&g)], &["w"], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let adam = Adam::default();
        let mut st = AdamState::<f64>::new([3]);
        let mut p = vec![0.0; 3];
        let g = vec![0.5, -3.0, 1e-3];
        adam.step(&mut st, &mut [&mut p], &[Some(&g)], &["w"], 1e-2).unwrap();
        for (x, gi) in p.iter().zip(&g) {
            assert!((x + 1e-2 * gi.signum()).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn missing_gradient_is_named() {
        let adam = Adam::default();
        let mut st = AdamState::<f32>::new([1]);
        let mut p = vec![0.0f32];
        let err = adam.step(&mut st, &mut [&mut p], &[None], &["enc.0.w"], 1e-3).unwrap_err();
        assert_eq!(err, TensorError::MissingGradient("enc.0.w".into()));
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule::new(5e-4, 400);
        assert!((s.lr(200) - 2.5e-4).abs() < 1e-12);
        assert!((s.lr(400) - 5e-4).abs() < 1e-12);
        assert!((s.lr(1600) - 2.5e-4).abs() < 1e-12);
    }
}
