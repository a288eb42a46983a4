use super::store::{GradientMap, ParameterStore};
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, g)| vec![0.0; g.values().len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn congruent(&self, store: &ParameterStore) -> bool {
        self.m.len() == store.len()
            && store.iter().zip(&self.m).all(|((_, g), m)| g.values().len() == m.len())
    }
}

/// One bias-corrected adaptive-moment update of every trainable group.
///
/// Frozen groups are skipped entirely, moments included. Gradients are
/// validated before anything is written.
pub fn optimizer_step(
    store: &mut ParameterStore,
    grads: &GradientMap,
    state: &mut OptimState,
) -> Result<()> {
    if !grads.is_congruent(store) || !state.congruent(store) {
        return Err(Error::Config("gradient/optimizer state shape does not match store".into()));
    }
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for &id in &ids {
        if let Some(i) = grads.group(id).iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                group: Some(store.group(id).name().to_string()),
                message: format!("non-finite gradient at index {i}"),
            });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powf(t);
    let bc2 = 1.0 - b2.powf(t);
    for id in ids {
        let g = grads.group(id);
        let m = &mut state.m[id.index()];
        let v = &mut state.v[id.index()];
        let p = store.values_mut(id);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                group: Some(store.group(id).name().to_string()),
                message: format!("parameter became non-finite at index {i}"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add_group("p", vec![v]).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = one(0.0);
        let mut st = OptimState::new(&s, 0.1);
        let mut g = GradientMap::zeros_like(&s);
        let id = s.find("p").unwrap();
        g.group_mut(id)[0] = 1.0;
        optimizer_step(&mut s, &g, &mut st).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.values(id)[0] - expected).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut s = one(2.5);
        let mut st = OptimState::new(&s, 0.1);
        let g = GradientMap::zeros_like(&s);
        optimizer_step(&mut s, &g, &mut st).unwrap();
        assert_eq!(s.values(s.find("p").unwrap()), &[2.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn frozen_group_is_bit_identical() {
        let mut s = ParameterStore::new();
        let a = s.add_group("a", vec![1.0, 2.0]).unwrap();
        let b = s.add_group("b", vec![0.123456789, -9.87]).unwrap();
        s.set_trainable(b, false);
        let before = s.values(b).to_vec();
        let mut st = OptimState::new(&s, 0.5);
        let mut g = GradientMap::zeros_like(&s);
        g.group_mut(a).copy_from_slice(&[1.0, 1.0]);
        g.group_mut(b).copy_from_slice(&[3.0, -3.0]);
        for _ in 0..10 {
            optimizer_step(&mut s, &g, &mut st).unwrap();
        }
        assert_eq!(s.values(b), before.as_slice());
        assert_ne!(s.values(a), &[1.0, 2.0]);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut s = one(1.0);
        let mut st = OptimState::new(&s, 0.1);
        let mut g = GradientMap::zeros_like(&s);
        g.group_mut(s.find("p").unwrap())[0] = f64::NAN;
        match optimizer_step(&mut s, &g, &mut st) {
            Err(Error::Numeric { group, .. }) => assert_eq!(group.as_deref(), Some("p")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.values(s.find("p").unwrap()), &[1.0]);
        assert_eq!(st.step_count(), 0);
    }
}
