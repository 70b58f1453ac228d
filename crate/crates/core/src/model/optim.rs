use super::network::Grads;
use super::real::Real;

/// Adaptive moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(param_lens: &[usize], weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Updates every tensor that has a gradient; others are left untouched.
    pub fn step<T: Real>(&mut self, params: &mut [Vec<T>], grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.tensors.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in params[i].iter_mut().enumerate() {
                let gj: f64 = g[j].into();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mut pj: f64 = (*p).into();
                pj -= lr * self.weight_decay * pj;
                pj -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *p = T::of(pj);
            }
        }
    }
}

/// Rescales `grads` so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        let k = T::of(max_norm / norm);
        for t in grads.tensors.iter_mut().flatten() {
            t.iter_mut().for_each(|g| *g = *g * k);
        }
    }
    norm
}

/// Linear warmup over the first `warmup` steps, then linear decay to zero
/// at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LinearSchedule {
    pub fn new(base_lr: f64, warmup_fraction: f64, total: usize) -> Self {
        LinearSchedule {
            base_lr,
            warmup: (warmup_fraction * total as f64).round() as usize,
            total,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.base_lr * (step + 1) as f64 / self.warmup as f64
        } else {
            let rest = (self.total - self.warmup).max(1) as f64;
            self.base_lr * ((self.total.saturating_sub(step)) as f64 / rest).max(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule::new(1e-3, 0.1, 100);
        assert_eq!(s.warmup, 10);
        assert!((s.lr(0) - 1e-4).abs() < 1e-15);
        assert!((s.lr(9) - 1e-3).abs() < 1e-15);
        assert!((s.lr(10) - 1e-3).abs() < 1e-15);
        assert!((s.lr(55) - 0.5e-3).abs() < 1e-15);
        assert!(s.lr(99) > 0.0 && s.lr(100) == 0.0);
        let flat = LinearSchedule::new(1e-3, 0.0, 4);
        assert_eq!(flat.lr(0), 1e-3);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Grads {
            tensors: vec![Some(vec![3.0f64, 0.0]), None, Some(vec![4.0])],
        };
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert!((g.tensors[0].as_ref().unwrap()[0] - 0.6).abs() < 1e-12);
        let mut small = Grads {
            tensors: vec![Some(vec![0.3f64])],
        };
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.tensors[0].as_ref().unwrap()[0], 0.3);
    }

    #[test]
    fn adamw_first_step_matches_hand_computation() {
        let mut params = vec![vec![1.0f64, -2.0], vec![5.0]];
        let grads = Grads {
            tensors: vec![Some(vec![0.5, -0.25]), None],
        };
        let mut opt = AdamW::new(&[2, 1], 0.01);
        opt.step(&mut params, &grads, 0.1);
        // First step: m_hat = g, v_hat = g^2, so the update is lr * sign(g).
        let want0 = 1.0 - 0.1 * 0.01 * 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        let want1 = -2.0 + 0.1 * 0.01 * 2.0 + 0.1 * 0.25 / (0.25 + 1e-8);
        assert!((params[0][0] - want0).abs() < 1e-12);
        assert!((params[0][1] - want1).abs() < 1e-12);
        assert_eq!(params[1][0], 5.0);
    }
}
