use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::tensor::Var;

/// Residual node `x + b * branch(x)`.
///
/// Training draws `b ~ Bernoulli(survival)` once per call (one call per node
/// per batch); a dropped branch is not evaluated at all. Inference uses the
/// expectation, `x + survival * branch(x)`.
#[derive(Clone, Copy, Debug)]
pub struct StochasticDepth {
    survival: f64,
}

impl StochasticDepth {
    pub fn new(survival: f64) -> Result<Self> {
        if !(survival > 0.0 && survival <= 1.0) {
            return Err(Error::Config(format!(
                "survival probability must be in (0, 1], got {survival}"
            )));
        }
        Ok(Self { survival })
    }

    pub fn survival(&self) -> f64 {
        self.survival
    }

    pub fn forward<F>(&self, cx: &mut Ctx<'_>, x: Var, branch: F) -> Result<Var>
    where
        F: FnOnce(&mut Ctx<'_>, Var) -> Result<Var>,
    {
        let scale = if cx.is_training() {
            if !cx.rng().bernoulli(self.survival) {
                return Ok(x);
            }
            1.0
        } else {
            self.survival
        };
        let y = branch(cx, x)?;
        if cx.graph.shape(y) != cx.graph.shape(x) {
            return Err(Error::Contract(format!(
                "residual branch changed shape {:?} -> {:?}",
                cx.graph.shape(x),
                cx.graph.shape(y)
            )));
        }
        let y = if scale == 1.0 { y } else { cx.graph.scale(y, scale) };
        cx.graph.add(x, y)
    }
}
