//! Bias-corrected Adam.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{FimError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    t: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self { t: 0, first: vec![None; params.len()], second: vec![None; params.len()] }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&Tensor> {
        self.first.get(id.index()).and_then(Option::as_ref)
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&Tensor> {
        self.second.get(id.index()).and_then(Option::as_ref)
    }
}

/// One Adam update. Parameters without a gradient are treated as having a
/// zero gradient, so their moments still decay.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(FimError::Shape(format!(
            "adam state holds {} parameters, store has {}",
            state.first.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        if let Some(g) = grads.get(id) {
            if g.shape() != params.get(id).shape() {
                return Err(FimError::Shape(format!(
                    "gradient {:?} for `{}` {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                )));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in params.ids() {
        let i = id.index();
        let grad = grads.get(id);
        if grad.is_none() && state.first[i].is_none() {
            continue;
        }
        let shape = params.get(id).shape().to_vec();
        let m = state.first[i].get_or_insert_with(|| Tensor::zeros(&shape));
        let v = state.second[i].get_or_insert_with(|| Tensor::zeros(&shape));
        let p = params.get_mut(id);
        for j in 0..p.len() {
            let g = grad.map_or(0.0, |g| g.data()[j]);
            let mj = cfg.beta1 * m.data()[j] + (1.0 - cfg.beta1) * g;
            let vj = cfg.beta2 * v.data()[j] + (1.0 - cfg.beta2) * g * g;
            m.data_mut()[j] = mj;
            v.data_mut()[j] = vj;
            let step = cfg.lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
            p.data_mut()[j] -= step;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::row(vec![1.0, -2.0, 0.5])).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = store();
        let mut g = Gradients::zeros_like(&s);
        g.accumulate(id, &[1, 3], &Tensor::row(vec![3.0, -0.2, 1e-3]));
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &g, &mut st, &AdamConfig::default()).unwrap();
        let after = s.get(id).data();
        for (a, b) in after.iter().zip([1.0, -2.0, 0.5]) {
            assert!(((a - b).abs() - 0.01).abs() < 1e-5, "{a} {b}");
        }
        assert_eq!(st.step_count(), 1);
        assert_eq!(st.first_moment(id).unwrap().shape(), s.get(id).shape());
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = store();
        let before = s.get(id).clone();
        let mut g = Gradients::zeros_like(&s);
        g.accumulate(id, &[1, 3], &Tensor::zeros(&[1, 3]));
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.get(id), &before);
    }

    #[test]
    fn identical_calls_are_bit_identical() {
        let (mut s1, id) = store();
        let mut s2 = s1.clone();
        let mut g = Gradients::zeros_like(&s1);
        g.accumulate(id, &[1, 3], &Tensor::row(vec![0.3, 0.1, -7.0]));
        let mut st1 = AdamState::new(&s1);
        let mut st2 = st1.clone();
        for _ in 0..3 {
            adam_step(&mut s1, &g, &mut st1, &AdamConfig::default()).unwrap();
            adam_step(&mut s2, &g, &mut st2, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s1, s2);
        assert_eq!(st1, st2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut s, id) = store();
        let mut g = Gradients::zeros_like(&s);
        g.accumulate(id, &[3, 1], &Tensor::zeros(&[3, 1]));
        let mut st = AdamState::new(&s);
        assert!(matches!(adam_step(&mut s, &g, &mut st, &AdamConfig::default()), Err(FimError::Shape(_))));
    }
}
