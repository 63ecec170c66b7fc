use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Mean squared error between a `[K]` prediction node and constant targets.
pub fn mse_loss(g: &mut Graph, pred: Var, target: &[f64]) -> Result<Var> {
    let k = g.value(pred).numel();
    if target.is_empty() {
        return Err(Error::Contract("mse_loss on an empty batch".into()));
    }
    if k != target.len() || g.shape(pred).len() != 1 {
        return Err(Error::Contract(format!(
            "mse_loss: prediction shape {:?} vs {} targets",
            g.shape(pred),
            target.len()
        )));
    }
    let t = g.constant(Tensor::from_vec(target.to_vec()));
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}
