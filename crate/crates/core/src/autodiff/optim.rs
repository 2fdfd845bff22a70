use super::params::{Gradients, ParamId, ParameterSet};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Adam moments for every parameter of one set.
#[derive(Clone, Debug)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        AdamState {
            first: params.ids().map(|id| vec![0.0; params.get(id).len()]).collect(),
            second: params.ids().map(|id| vec![0.0; params.get(id).len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> &[f64] {
        &self.first[id.index()]
    }
}

/// One bias-corrected Adam step over the trainable parameters.
pub fn adam_update(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::config(format!(
            "optimizer state tracks {} parameters, set has {}",
            state.first.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        if let Some(g) = grads.get(id) {
            if g.len() != params.get(id).len() || state.first[id.index()].len() != g.len() {
                return Err(Error::config(format!(
                    "gradient for {} has {} entries, parameter has {}",
                    params.name(id),
                    g.len(),
                    params.get(id).len()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if !params.is_trainable(id) {
            continue;
        }
        let Some(g) = grads.get(id) else { continue };
        let m = &mut state.first[id.index()];
        let v = &mut state.second[id.index()];
        let w = params.get_mut(id).data_mut();
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            w[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescale trainable gradients so that their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, params: &ParameterSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm(params);
    if norm <= max_norm || !norm.is_finite() {
        return norm;
    }
    let original = grads.clone();
    let mut scale = max_norm / norm;
    loop {
        grads.scale(scale);
        // Rounding can leave the result a hair above the bound.
        if grads.global_norm(params) <= max_norm {
            return norm;
        }
        *grads = original.clone();
        scale *= 1.0 - f64::EPSILON * 4.0;
    }
}

/// Add `lambda · Σθ²` over trainable parameters; accumulates `2λθ` into
/// `grads` and returns the penalty value.
pub fn add_l2_penalty(params: &ParameterSet, grads: &mut Gradients, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    for id in params.ids() {
        if !params.is_trainable(id) {
            continue;
        }
        let w = params.value(id);
        penalty += w.iter().map(|x| x * x).sum::<f64>();
        let slot = grads.slot_mut(id, w.len());
        slot.iter_mut().zip(w).for_each(|(d, x)| *d += 2.0 * lambda * x);
    }
    lambda * penalty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Tensor;

    fn one_param(vals: Vec<f64>, trainable: bool) -> (ParameterSet, ParamId) {
        let mut p = ParameterSet::new();
        let n = vals.len();
        let id = p.add("w", Tensor::new(vec![n], vals).unwrap(), trainable).unwrap();
        (p, id)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut p, id) = one_param(vec![1.0, -2.0, 0.5], true);
        let mut g = Gradients::for_params(&p);
        g.slot_mut(id, 3).copy_from_slice(&[0.3, -7.0, 1e-3]);
        let mut st = AdamState::new(&p);
        adam_update(&mut p, &g, &mut st, DEFAULT_LEARNING_RATE).unwrap();
        let w = p.value(id);
        assert!((w[0] - (1.0 - 0.001)).abs() < 1e-9);
        assert!((w[1] - (-2.0 + 0.001)).abs() < 1e-9);
        assert!((w[2] - (0.5 - 0.001)).abs() < 1e-7);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, id) = one_param(vec![1.0, -2.0], true);
        let mut g = Gradients::for_params(&p);
        g.slot_mut(id, 2);
        let mut st = AdamState::new(&p);
        adam_update(&mut p, &g, &mut st, 0.001).unwrap();
        assert_eq!(p.value(id), &[1.0, -2.0]);
    }

    #[test]
    fn frozen_params_untouched() {
        let (mut p, id) = one_param(vec![1.0, -2.0], false);
        let before = p.bytes_with_prefix("");
        let mut g = Gradients::for_params(&p);
        g.slot_mut(id, 2).copy_from_slice(&[1.0, 1.0]);
        let mut st = AdamState::new(&p);
        for _ in 0..10 {
            adam_update(&mut p, &g, &mut st, 0.1).unwrap();
        }
        assert_eq!(before, p.bytes_with_prefix(""));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let (mut p, id) = one_param(vec![1.0, -2.0], true);
        let mut g = Gradients::for_params(&p);
        g.slot_mut(id, 3);
        let mut st = AdamState::new(&p);
        assert!(matches!(adam_update(&mut p, &g, &mut st, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn clip_halves_when_norm_is_double() {
        let (p, id) = one_param(vec![0.0; 2], true);
        let mut g = Gradients::for_params(&p);
        g.slot_mut(id, 2).copy_from_slice(&[6.0, 8.0]);
        let before = clip_global_norm(&mut g, &p, DEFAULT_CLIP_NORM);
        assert_eq!(before, 10.0);
        assert_eq!(g.get(id).unwrap(), &[3.0, 4.0]);

        let mut small = Gradients::for_params(&p);
        small.slot_mut(id, 2).copy_from_slice(&[1.8, 2.4]);
        let copy = small.clone();
        clip_global_norm(&mut small, &p, 5.0);
        assert_eq!(small, copy);
    }

    #[test]
    fn l2_penalty_value_and_gradient() {
        let (p, id) = one_param(vec![1.0, -2.0], true);
        let mut g = Gradients::for_params(&p);
        let pen = add_l2_penalty(&p, &mut g, 0.1);
        assert!((pen - 0.5).abs() < 1e-15);
        assert_eq!(g.get(id).unwrap(), &[0.2, -0.4]);
    }
}
