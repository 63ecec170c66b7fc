use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::tensor::{ParamId, ParamStore, Tensor, Var};

/// Per-feature batch normalisation over the rows of `[rows, features]`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    momentum: f64,
    eps: f64,
    features: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[features], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[features])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[features])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[features], 1.0)),
            momentum,
            eps,
            features,
        }
    }

    pub fn param_count(features: usize) -> usize {
        2 * features
    }

    /// Training normalises by batch statistics and queues a momentum update of
    /// the running statistics (biased variance); inference uses the running ones.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = cx.graph.shape(x);
        if s.len() != 2 || s[1] != self.features {
            return Err(Error::dim("batch_norm", s, &[self.features]));
        }
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        if cx.is_training() {
            let (y, stats) = cx.graph.batch_norm(x, gamma, beta, self.eps)?;
            let m = self.momentum;
            let blend = |old: &Tensor, new: &[f64]| {
                let data = old.data().iter().zip(new).map(|(o, n)| (1.0 - m) * o + m * n).collect();
                Tensor::new(vec![new.len()], data).expect("feature length")
            };
            let rm = blend(cx.params().get(self.running_mean), &stats.mean);
            let rv = blend(cx.params().get(self.running_var), &stats.var);
            cx.push_stat(self.running_mean, rm);
            cx.push_stat(self.running_var, rv);
            Ok(y)
        } else {
            let mean = cx.params().get(self.running_mean).data().to_vec();
            let var = cx.params().get(self.running_var).data().to_vec();
            cx.graph.batch_norm_infer(x, gamma, beta, &mean, &var, self.eps)
        }
    }
}

/// Normalisation over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize, eps: f64) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[features], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[features])),
            eps,
        }
    }

    pub fn param_count(features: usize) -> usize {
        2 * features
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        cx.graph.layer_norm(x, gamma, beta, self.eps)
    }
}
