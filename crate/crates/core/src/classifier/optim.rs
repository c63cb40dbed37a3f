//! Adam with decoupled weight decay, and the one-cycle learning-rate
//! schedule.

use std::f64::consts::PI;

use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    params: AdamParams,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Float> AdamW<T> {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update with learning rate `lr`.
    ///
    /// The decay is applied to the weights directly (`θ ← θ(1 − lr·λ)`),
    /// not folded into the gradient.
    pub fn step(&mut self, theta: &mut [T], grad: &[T], lr: f64) {
        debug_assert_eq!(theta.len(), grad.len());
        self.t += 1;
        let c = |x: f64| T::from(x).expect("finite hyperparameter");
        let b1 = c(self.params.beta1);
        let b2 = c(self.params.beta2);
        let one = T::one();
        let bias1 = one - b1.powi(self.t);
        let bias2 = one - b2.powi(self.t);
        let lr_t = c(lr);
        let eps = c(self.params.eps);
        let decay = self.params.weight_decay != 0.0;
        let shrink = one - lr_t * c(self.params.weight_decay);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            if decay {
                theta[i] = theta[i] * shrink;
            }
            theta[i] = theta[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One-cycle schedule: cosine warm-up from `max_lr / div_factor` to
/// `max_lr` over the first `pct_start` of the steps, then cosine annealing
/// down to `initial / final_div_factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    /// Step index at which `max_lr` is reached.
    pub fn peak_step(&self) -> usize {
        if self.total_steps <= 1 {
            return 0;
        }
        let peak = (self.pct_start * self.total_steps as f64).round() as usize;
        peak.clamp(1, self.total_steps - 1)
    }

    pub fn lr(&self, step: usize) -> f64 {
        let initial = self.max_lr / self.div_factor;
        let min = initial / self.final_div_factor;
        if self.total_steps <= 1 {
            return self.max_lr;
        }
        let peak = self.peak_step();
        if step <= peak {
            cosine(initial, self.max_lr, step as f64 / peak as f64)
        } else {
            let span = (self.total_steps - 1 - peak).max(1) as f64;
            let pct = ((step - peak) as f64 / span).min(1.0);
            cosine(self.max_lr, min, pct)
        }
    }
}

fn cosine(start: f64, end: f64, pct: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (PI * pct).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER_ADAM: AdamParams = AdamParams {
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-9,
        weight_decay: 0.0,
    };

    #[test]
    fn single_step_matches_closed_form() {
        // loss = θ²/2, gradient θ. After one step m̂ = g and v̂ = g², so the
        // update is lr·g/(|g| + ε).
        for &theta0 in &[3.0f64, -0.25, 1e-3] {
            let lr = 5e-4;
            let mut theta = [theta0];
            let mut opt = AdamW::new(1, PAPER_ADAM);
            opt.step(&mut theta, &[theta0], lr);
            let expected = theta0 - lr * theta0 / (theta0.abs() + 1e-9);
            assert!((theta[0] - expected).abs() <= 1e-12, "{} vs {}", theta[0], expected);
        }
    }

    #[test]
    fn zero_decay_is_plain_adam() {
        let grads = [[0.3f32, -1.2, 0.0], [0.1, 0.5, -2.0], [-0.7, 0.2, 0.9]];
        let mut a = [0.5f32, -0.5, 1.0];
        let mut b = a;
        let mut opt = AdamW::new(3, PAPER_ADAM);
        let (mut m, mut v) = ([0f32; 3], [0f32; 3]);
        for (t, g) in grads.iter().enumerate() {
            opt.step(&mut a, g, 1e-3);
            let t = t as i32 + 1;
            for i in 0..3 {
                m[i] = 0.9 * m[i] + (1.0 - 0.9) * g[i];
                v[i] = 0.98 * v[i] + (1.0 - 0.98) * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f32.powi(t));
                let vh = v[i] / (1.0 - 0.98f32.powi(t));
                b[i] -= 1e-3 * mh / (vh.sqrt() + 1e-9);
            }
        }
        assert_eq!(a, b);
    }

    #[test]
    fn decay_shrinks_weights_without_gradient() {
        let mut theta = [2.0f64];
        let mut opt = AdamW::new(1, AdamParams { weight_decay: 0.1, ..PAPER_ADAM });
        opt.step(&mut theta, &[0.0], 0.5);
        assert!((theta[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn one_cycle_shape() {
        for total in [2usize, 3, 10, 97, 1000] {
            let s = OneCycle::new(5e-4, total);
            let lrs: Vec<f64> = (0..total).map(|i| s.lr(i)).collect();
            assert!(lrs[0] < 5e-4);
            assert_eq!(lrs.iter().filter(|&&x| x == 5e-4).count(), 1, "total {total}");
            let peak = s.peak_step();
            assert_eq!(lrs[peak], 5e-4);
            assert!(lrs[..=peak].windows(2).all(|w| w[0] < w[1]));
            assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
            assert!(lrs.iter().all(|&x| x <= 5e-4 && x > 0.0));
        }
    }
}
