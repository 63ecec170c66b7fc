use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::tensor::Var;

/// Inverted dropout: in training each unit is zeroed with probability `rate`
/// and survivors are scaled by `1 / (1 - rate)`; inference is the identity.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if !cx.is_training() || self.rate == 0.0 {
            return Ok(x);
        }
        let n = cx.graph.value(x).numel();
        let keep = 1.0 / (1.0 - self.rate);
        let rng = cx.rng();
        let mask = (0..n)
            .map(|_| if rng.bernoulli(self.rate) { 0.0 } else { keep })
            .collect();
        cx.graph.mul_const(x, mask)
    }
}
