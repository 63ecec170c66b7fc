use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

/// Adam with decoupled weight decay.
///
/// Each step first shrinks a parameter by `lr * weight_decay * param`, then
/// applies the bias-corrected Adam update. Parameters that received no
/// gradient in a step (a skipped residual branch) are left untouched, and
/// bias correction uses each parameter's own update count.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            state: Vec::new(),
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.state.get(id.index())?.as_ref().map(|s| s.m.as_slice())
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.state.get(id.index())?.as_ref().map(|s| s.v.as_slice())
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        for (id, g) in grads {
            let p = params.get(*id);
            if p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient for {} has shape {:?}, parameter is {:?}",
                    params.name(*id),
                    g.shape(),
                    p.shape()
                )));
            }
            if !params.is_trainable(*id) {
                return Err(Error::Contract(format!("{} is not trainable", params.name(*id))));
            }
        }
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (id, g) in grads {
            let n = g.numel();
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                steps: 0,
            });
            st.steps += 1;
            let c1 = 1.0 - b1.powi(st.steps as i32);
            let c2 = 1.0 - b2.powi(st.steps as i32);
            let p = params.get_mut(*id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * gi;
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * gi * gi;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                p[i] = p[i] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_vec(values));
        (s, id)
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let (mut s, id) = store(vec![1.0, -2.0, 3.0]);
        let mut opt = Adam::new(1e-3, 0.0);
        for _ in 0..5 {
            opt.step(&mut s, &[(id, Tensor::zeros(&[3]))]).unwrap();
        }
        assert_eq!(s.get(id).data(), &[1.0, -2.0, 3.0]);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = store(vec![0.5]);
        let mut opt = Adam::new(1e-3, 0.0);
        opt.step(&mut s, &[(id, Tensor::from_vec(vec![1.0]))]).unwrap();
        // m_hat = v_hat = 1 after bias correction
        let expect = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn decay_only_is_multiplicative_shrink() {
        let (mut s, id) = store(vec![2.0, -4.0]);
        let mut opt = Adam::new(1e-3, 1e-4);
        opt.step(&mut s, &[(id, Tensor::zeros(&[2]))]).unwrap();
        let f = 1.0 - 1e-3 * 1e-4;
        assert_eq!(s.get(id).data(), &[2.0 * f, -4.0 * f]);
    }

    #[test]
    fn moments_follow_recurrence() {
        let (mut s, id) = store(vec![0.0]);
        let mut opt = Adam::new(1e-3, 0.0);
        let (mut m, mut v) = (0.0, 0.0);
        for g in [0.3, -1.2, 0.7] {
            opt.step(&mut s, &[(id, Tensor::from_vec(vec![g]))]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
        }
        assert!((opt.first_moment(id).unwrap()[0] - m).abs() < 1e-15);
        assert!((opt.second_moment(id).unwrap()[0] - v).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let (mut s, id) = store(vec![0.0, 1.0]);
        let mut opt = Adam::new(1e-3, 0.0);
        assert!(matches!(
            opt.step(&mut s, &[(id, Tensor::zeros(&[3]))]),
            Err(Error::Contract(_))
        ));
    }
}
