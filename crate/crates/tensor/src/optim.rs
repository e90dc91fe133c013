//! Adam with bias correction and a step learning-rate schedule.

use crate::param::{GradStore, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, p)| Tensor::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every non-frozen parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

/// `initial · decay^⌊epoch / every⌋`, epochs counted from zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub every: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            decay: 1.0,
            every: usize::MAX,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            return self.initial;
        }
        self.initial * self.decay.powi((epoch / self.every) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(&[0.5, -1.5]));
        let before = store.clone();
        let grads = GradStore::new(&store);
        let mut adam = AdamState::new(&store, 0.1);
        adam.step(&mut store, &grads);
        assert!(store.bitwise_eq(&before));
        assert_eq!(adam.steps(), 1);
        let _ = w;
    }

    #[test]
    fn descends_on_square() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&store, 0.1);
        let mut grads = GradStore::new(&store);
        let mut tape = Tape::new();
        let v = tape.param(&store, w);
        let sq = tape.mul(v, v).unwrap();
        tape.backward_into(sq, &mut grads).unwrap();
        tape.clear();
        adam.step(&mut store, &grads);
        let after = store.get(w).item();
        assert!(after < 1.0);
        // first bias-corrected step moves by lr·sign(g)
        assert!((after - 0.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0));
        store.set_frozen(w, true);
        let mut grads = GradStore::new(&store);
        grads.add(w, &Tensor::scalar(3.0)).unwrap();
        let mut adam = AdamState::new(&store, 0.1);
        adam.step(&mut store, &grads);
        assert_eq!(store.get(w).item(), 1.0);
    }

    #[test]
    fn step_decay_schedule() {
        let s = LrSchedule {
            initial: 1e-4,
            decay: 0.8,
            every: 10,
        };
        assert_eq!(s.lr_at(0), 1e-4);
        assert_eq!(s.lr_at(9), 1e-4);
        assert!((s.lr_at(10) - 0.8e-4).abs() < 1e-18);
        assert!((s.lr_at(25) - 0.64e-4).abs() < 1e-18);
        assert_eq!(LrSchedule::constant(0.3).lr_at(1000), 0.3);
    }
}
