//! Adam with the hold-then-linear-decay schedule.

use super::params::Parameters;
use super::tensor::Tensor;

/// Base rate held for `hold_frac` of the run, then decayed linearly so the
/// final step lands exactly at zero.
pub fn lr_at(step: usize, total_steps: usize, base: f64, hold_frac: f64) -> f64 {
    if total_steps <= 1 {
        return base;
    }
    let last = (total_steps - 1) as f64;
    let hold = hold_frac * last;
    let s = step as f64;
    if s <= hold {
        base
    } else {
        base * (1.0 - (s - hold) / (last - hold))
    }
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &Parameters, beta1: f64, beta2: f64, eps: f64) -> Adam {
        let mut m = Vec::new();
        params.visit(&mut |_, t| m.push(vec![0.0f32; t.len()]));
        let v = m.clone();
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m,
            v,
        }
    }

    /// One update. `frozen` flags tensors (in visit order) that must not
    /// move — their moments are not advanced either, so a frozen stage
    /// stays bit-identical.
    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64, frozen: &[bool]) {
        self.t += 1;
        let corr1 = 1.0 - self.beta1.powi(self.t as i32);
        let corr2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let mut flat_grads: Vec<&Tensor<f32>> = Vec::new();
        grads.visit(&mut |_, g| flat_grads.push(g));
        assert_eq!(flat_grads.len(), self.m.len());
        assert_eq!(frozen.len(), self.m.len());
        let mut idx = 0usize;
        let (m_state, v_state) = (&mut self.m, &mut self.v);
        let (eps, t_now) = (self.eps, self.t);
        let _ = t_now;
        params.visit_mut(&mut |_, tensor| {
            if !frozen[idx] {
                let g = flat_grads[idx].data();
                let m = &mut m_state[idx];
                let v = &mut v_state[idx];
                let data = tensor.data_mut();
                for i in 0..data.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] as f64 / corr1;
                    let v_hat = v[i] as f64 / corr2;
                    data[i] -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
                }
            }
            idx += 1;
        });
    }
}
