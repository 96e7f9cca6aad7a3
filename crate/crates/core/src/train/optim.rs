use super::TrainConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

/// First and second moments for each parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        OptimState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One AdamW update from the gradients held in `params`. Decay is applied
/// to the weights first, `theta *= 1 - lr * wd`, then the bias-corrected
/// moment step.
pub fn optimizer_step(params: &mut ParamStore<f32>, state: &mut OptimState, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "optimizer state covers {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (name, t) in params.iter() {
        if let Some(g) = &t.grad {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient {} in parameter {name} at index {i}",
                    g[i]
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.lr as f32;
    let decay = (1.0 - cfg.lr * cfg.weight_decay) as f32;
    let (b1f, b2f, eps) = (b1 as f32, b2 as f32, cfg.eps as f32);
    let (c1, c2) = (c1 as f32, c2 as f32);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let Some(g) = p.grad.as_ref() else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.data.len() {
            m[j] = b1f * m[j] + (1.0 - b1f) * g[j];
            v[j] = b2f * v[j] + (1.0 - b2f) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p.data[j] = p.data[j] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(params: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        for (_, t) in params.iter_mut() {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_store(theta: f32, grad: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new(0);
        s.insert("x", Tensor::vector(vec![theta]).trainable()).unwrap();
        s.get_mut("x").unwrap().grad = Some(vec![grad]);
        s
    }

    #[test]
    fn zero_grads_without_decay_is_a_fixed_point() {
        let mut s = ParamStore::<f32>::new(1);
        s.add_uniform("w", &[5], 5).unwrap();
        let before = s.get("w").unwrap().data.clone();
        let mut st = OptimState::new(&s);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        optimizer_step(&mut s, &mut st, &cfg).unwrap();
        assert_eq!(s.get("w").unwrap().data, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grads_shrink_exactly() {
        let mut s = ParamStore::<f32>::new(2);
        s.add_uniform("w", &[5], 5).unwrap();
        let before = s.get("w").unwrap().data.clone();
        let mut st = OptimState::new(&s);
        let cfg = TrainConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        optimizer_step(&mut s, &mut st, &cfg).unwrap();
        let f = (1.0 - 0.1 * 0.01) as f32;
        for (a, b) in s.get("w").unwrap().data.iter().zip(&before) {
            assert_eq!(*a, b * f);
        }
    }

    #[test]
    fn two_steps_match_hand_recursion() {
        let cfg = TrainConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let (g, mut theta) = (0.3f64, 1.5f64);
        let mut s = scalar_store(theta as f32, g as f32);
        let mut st = OptimState::new(&s);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            optimizer_step(&mut s, &mut st, &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta = theta * (1.0 - 0.01 * 0.1) - 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((f64::from(s.get("x").unwrap().data[0]) - theta).abs() < 1e-6);
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = scalar_store(1.0, f32::NAN);
        let mut st = OptimState::new(&s);
        let err = optimizer_step(&mut s, &mut st, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("parameter x"));
        assert_eq!(s.get("x").unwrap().data[0], 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut s = scalar_store(0.0, 10.0);
        assert_eq!(clip_grad_norm(&mut s, 2.0), 10.0);
        assert!((s.grad_norm() - 2.0).abs() < 1e-6);
    }
}
