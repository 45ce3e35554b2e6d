//! Plain SGD and AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {},
    #[serde(rename = "adamw")]
    AdamW {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::AdamW {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }
}

impl Optimizer {
    pub fn validate(&self) -> crate::Result<()> {
        if let Optimizer::AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = *self
        {
            let ok = (0.0..1.0).contains(&beta1)
                && (0.0..1.0).contains(&beta2)
                && eps > 0.0
                && weight_decay >= 0.0
                && weight_decay.is_finite();
            if !ok {
                return Err(crate::Error::Config(format!("invalid adamw settings {self:?}")));
            }
        }
        Ok(())
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW update: `p ← p·(1 − lr·λ)`, then
/// `p ← p − lr · m̂ / (√v̂ + ε)` with bias-corrected moments.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &Optimizer,
) {
    let Optimizer::AdamW {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = *cfg
    else {
        panic!("adamw_step called with {cfg:?}");
    };
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let decay = 1.0 - lr * weight_decay;
    for (idx, p) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[idx], &mut state.v[idx], &grads[idx]);
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, gi) in p.data_mut().iter_mut().zip(g) {
            *w -= lr * gi;
        }
    }
}

/// Optimizer plus its running state.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    cfg: Optimizer,
    adam: AdamState,
}

impl OptimizerState {
    pub fn new(cfg: Optimizer, sizes: &[usize]) -> Self {
        Self {
            cfg,
            adam: AdamState::zeros(sizes),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) {
        match self.cfg {
            Optimizer::Sgd {} => sgd_step(params, grads, lr),
            Optimizer::AdamW { .. } => adamw_step(params, grads, &mut self.adam, lr, &self.cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::vector(vec![1.5, -2.0, 0.25]).unwrap();
        let before = p.clone();
        let mut st = AdamState::zeros(&[3]);
        for _ in 0..10 {
            adamw_step(&mut [&mut p], &[vec![0.0; 3]], &mut st, 0.1, &Optimizer::default());
        }
        assert!(p.bitwise_eq(&before));
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let lr = 0.01;
        for g in [3.0, -0.2, 1e-3] {
            let mut p = scalar(1.0);
            let mut st = AdamState::zeros(&[1]);
            adamw_step(&mut [&mut p], &[vec![g]], &mut st, lr, &Optimizer::default());
            // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε)
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((p.data()[0] - expected).abs() < 1e-15);
            assert!((p.data()[0] - (1.0 - lr * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let cfg = Optimizer::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let mut p = scalar(2.0);
        let mut st = AdamState::zeros(&[1]);
        adamw_step(&mut [&mut p], &[vec![0.0]], &mut st, 0.5, &cfg);
        assert_eq!(p.data()[0], 2.0 * (1.0 - 0.05));
    }

    #[test]
    fn quadratic_bowl_reaches_origin() {
        // Independent scalar re-derivation of the same recursion.
        let (mut w_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = w_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w_ref -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = scalar(1.0);
        let mut st = AdamState::zeros(&[1]);
        for _ in 0..100 {
            let g = vec![p.data()[0]];
            adamw_step(&mut [&mut p], &[g], &mut st, 0.05, &Optimizer::default());
        }
        assert!((p.data()[0] - w_ref).abs() < 1e-12);
        assert!(p.data()[0].abs() < 0.05, "{}", p.data()[0]);
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut p = scalar(1.0);
        let mut st = OptimizerState::new(Optimizer::Sgd {}, &[1]);
        st.step(&mut [&mut p], &[vec![2.0]], 0.25);
        assert_eq!(p.data()[0], 0.5);
    }

    #[test]
    fn json_forms() {
        let o: Optimizer = serde_json::from_str(r#"{"kind":"adamw","weight_decay":0.01}"#).unwrap();
        assert_eq!(
            o,
            Optimizer::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.01
            }
        );
        let s: Optimizer = serde_json::from_str(r#"{"kind":"sgd"}"#).unwrap();
        assert_eq!(s, Optimizer::Sgd {});
        assert!(serde_json::from_str::<Optimizer>(r#"{"kind":"sgd","momentum":0.9}"#).is_err());
        assert!(serde_json::from_str::<Optimizer>(r#"{"kind":"adamw","beta3":0.9}"#).is_err());
    }
}
