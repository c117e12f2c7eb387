use serde::{Deserialize, Serialize};

use super::{Gradients, ModelParams};
use crate::{Error, Result};

/// Adam hyperparameters. Defaults follow the training setup of the method:
/// `lr = 1e-3`, `(beta1, beta2) = (0.9, 0.99)`, `eps = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: ModelParams::zeros(params.arch()),
            v: ModelParams::zeros(params.arch()),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    params.check_same_arch(grads)?;
    params.check_same_arch(&state.m)?;
    for ((name, _), g) in params.arch().tensor_shapes().iter().zip(grads.tensors()) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient((*name).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `beta * teacher + (1 - beta) * student`.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, beta: f64) -> Result<ModelParams> {
    teacher.check_same_arch(student)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("EMA factor {beta} outside [0, 1]")));
    }
    let mut out = teacher.clone();
    for (o, s) in out.tensors_mut().into_iter().zip(student.tensors()) {
        for (a, b) in o.iter_mut().zip(s) {
            *a = beta * *a + (1.0 - beta) * b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Arch};

    fn filled(v: f64) -> ModelParams {
        let mut p = ModelParams::zeros(Arch::binary());
        p.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|x| *x = v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = init_params(1, 1, 1).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        s.m = filled(0.5);
        s.v = filled(0.25);
        adam_step(&mut p, &filled(0.0), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.step, 1);
        assert!(s.m.flatten().iter().all(|&v| (v - 0.45).abs() < 1e-15));
        assert!(s.v.flatten().iter().all(|&v| (v - 0.2475).abs() < 1e-15));
        // moments decayed but nonzero, so params move; with fresh state they don't
        let mut q = before.clone();
        let mut fresh = AdamState::new(&q);
        adam_step(&mut q, &filled(0.0), &mut fresh, &AdamConfig::default()).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = filled(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &filled(0.5), &mut s, &AdamConfig::with_lr(1e-3)).unwrap();
        let want = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!(p.flatten().iter().all(|&v| (v - want).abs() <= 1e-12));
    }

    #[test]
    fn update_is_elementwise() {
        let mut a = filled(1.0);
        let mut b = filled(-3.0);
        let g = filled(0.2);
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        adam_step(&mut a, &g, &mut sa, &AdamConfig::default()).unwrap();
        adam_step(&mut b, &g, &mut sb, &AdamConfig::default()).unwrap();
        for (x, y) in a.flatten().iter().zip(b.flatten()) {
            assert!(((x - 1.0) - (y + 3.0)).abs() <= 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = filled(1.0);
        let mut g = filled(0.0);
        g.conv2_b[3] = f64::NAN;
        let mut s = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()),
            Err(Error::NonFiniteGradient(name)) if name == "conv2.bias"
        ));
    }

    #[test]
    fn ema_identities() {
        let te = init_params(1, 1, 1).unwrap();
        let st = init_params(2, 1, 1).unwrap();
        assert_eq!(ema_update(&te, &st, 1.0).unwrap(), te);
        assert_eq!(ema_update(&te, &te, 0.999).unwrap(), te);
        let r = ema_update(&filled(2.0), &filled(1.0), 0.999).unwrap();
        assert!(r.flatten().iter().all(|&v| (v - 1.999).abs() <= 1e-12));
        assert!(ema_update(&te, &init_params(1, 2, 1).unwrap(), 0.5).is_err());
    }

    #[test]
    fn ema_twice_contracts_difference_by_beta_squared() {
        let te = init_params(1, 1, 1).unwrap();
        let st = init_params(2, 1, 1).unwrap();
        let beta = 0.7;
        let twice = ema_update(&ema_update(&te, &st, beta).unwrap(), &st, beta).unwrap();
        for ((t2, t0), s) in twice.flatten().iter().zip(te.flatten()).zip(st.flatten()) {
            assert!(((t2 - s) - beta * beta * (t0 - s)).abs() <= 1e-12);
        }
    }
}
