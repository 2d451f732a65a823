//! Adam with bias correction, plus global-norm gradient clipping.

use super::params::ParamStore;
use super::real::Real;
use super::tape::Gradients;
use super::DiffError;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<S: Real> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    /// Classic L2 weight decay, added to the gradient before the moment
    /// updates.
    pub weight_decay: S,
}

impl<S: Real> Default for AdamConfig<S> {
    fn default() -> Self {
        AdamConfig {
            lr: S::of(5e-4),
            beta1: S::of(0.8),
            beta2: S::of(0.999),
            eps: S::of(1e-7),
            weight_decay: S::of(1e-7),
        }
    }
}

/// One Adam update over every parameter in the store. Gradients must cover
/// all parameters; a NaN gradient aborts naming the parameter.
pub fn adam_step<S: Real>(
    params: &mut ParamStore<S>,
    grads: &Gradients<S>,
    cfg: &AdamConfig<S>,
) -> Result<(), DiffError> {
    for name in grads.keys() {
        if !params.contains(name) {
            return Err(DiffError::Contract(format!(
                "adam_step: gradient for unknown parameter '{name}'"
            )));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let bc1 = S::one() - cfg.beta1.powi(t);
    let bc2 = S::one() - cfg.beta2.powi(t);
    for (name, entry) in params.iter_mut() {
        let grad = grads.get(name).ok_or_else(|| {
            DiffError::Contract(format!("adam_step: missing gradient for '{name}'"))
        })?;
        if grad.shape() != entry.value.shape() {
            return Err(DiffError::Dimension(format!(
                "adam_step: gradient shape {:?} for parameter '{name}' of shape {:?}",
                grad.shape(),
                entry.value.shape()
            )));
        }
        if !grad.all_finite() {
            return Err(DiffError::NonFinite(format!(
                "adam_step: non-finite gradient for '{name}'"
            )));
        }
        for i in 0..grad.len() {
            let g = grad.data()[i] + cfg.weight_decay * entry.value.data()[i];
            let m = &mut entry.m.data_mut()[i];
            *m = cfg.beta1 * *m + (S::one() - cfg.beta1) * g;
            let v = &mut entry.v.data_mut()[i];
            *v = cfg.beta2 * *v + (S::one() - cfg.beta2) * g * g;
            let m_hat = entry.m.data()[i] / bc1;
            let v_hat = entry.v.data()[i] / bc2;
            entry.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Scale all gradients by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_gradients<S: Real>(grads: &mut Gradients<S>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0);
    let norm: f64 = grads.values().map(|g| g.sq_l2()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = S::of(max_norm / norm);
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tensor::Tensor;

    fn one_param_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::scalar(v));
        s
    }

    fn grad_of(v: f64) -> Gradients<f64> {
        let mut g = Gradients::new();
        g.insert("theta".into(), Tensor::scalar(v));
        g
    }

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        let mut s = one_param_store(0.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &grad_of(1.0), &cfg).unwrap();
        // At t=1 the bias-corrected update is lr * g / (|g| + eps).
        let expected = -5e-4 / (1.0 + 1e-7);
        assert!((s.get("theta").item() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_moves_only_by_weight_decay() {
        let mut s = one_param_store(2.0);
        let cfg = AdamConfig::<f64>::default();
        adam_step(&mut s, &grad_of(0.0), &cfg).unwrap();
        // Decay term lambda*theta acts as the whole gradient.
        let moved = (s.get("theta").item() - 2.0).abs();
        assert!(moved > 0.0 && moved < 1e-3);

        let mut s2 = one_param_store(2.0);
        let cfg2 = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut s2, &grad_of(0.0), &cfg2).unwrap();
        assert_eq!(s2.get("theta").item(), 2.0);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = one_param_store(0.0);
        let err = adam_step(&mut s, &grad_of(f64::NAN), &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }

    #[test]
    fn clip_scales_above_max() {
        let mut g = Gradients::new();
        g.insert("a".into(), Tensor::from_vec(1, 2, vec![6.0, 8.0]).unwrap());
        let norm = clip_gradients(&mut g, 5.0);
        assert!((norm - 10.0).abs() < 1e-12);
        assert_eq!(g["a"].data(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_leaves_small_gradients() {
        let mut g = Gradients::new();
        g.insert("a".into(), Tensor::from_vec(1, 2, vec![3.0, 0.0]).unwrap());
        clip_gradients(&mut g, 5.0);
        assert_eq!(g["a"].data(), &[3.0, 0.0]);
    }

    #[test]
    fn post_clip_norm_bounded() {
        let mut rng = crate::rng::RngStream::new(5, "test", 0);
        for _ in 0..20 {
            let mut g = Gradients::new();
            for k in 0..3 {
                let t = Tensor::from_fn(4, 4, |_, _| rng.uniform(-3.0, 3.0));
                g.insert(format!("p{k}"), t);
            }
            clip_gradients(&mut g, 5.0);
            let norm: f64 = g.values().map(|t| t.sq_l2()).sum::<f64>().sqrt();
            assert!(norm <= 5.0 + 1e-9);
        }
    }
}
