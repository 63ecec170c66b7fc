use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Largest `|analytic - numeric| / max(1, |analytic|)` over the given
/// coordinates, where `numeric` is the central difference of `eval` at `x`.
///
/// `eval` must be deterministic: stochastic layers have to see the same masks
/// on every call.
pub fn central_difference_error<F>(
    x: &Tensor,
    analytic: &Tensor,
    eps: f64,
    coords: &[usize],
    mut eval: F,
) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Config(format!("finite-difference eps must be > 0, got {eps}")));
    }
    if analytic.shape() != x.shape() {
        return Err(Error::dim("central_difference_error", analytic.shape(), x.shape()));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite objective while perturbing coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Analytic gradient of the scalar `f` at `x`, or zeros if `f` does not depend on it.
pub fn analytic_gradient<F>(f: &mut F, x: &Tensor) -> Result<(f64, Tensor)>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let y = f(&mut g, xv)?;
    let value = g.value(y).clone();
    if !value.is_scalar() {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar objective, got shape {:?}",
            value.shape()
        )));
    }
    if !value.item().is_finite() {
        return Err(Error::Numeric("non-finite objective".into()));
    }
    g.backward(y)?;
    let grad = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    Ok((value.item(), grad))
}

fn evaluate<F>(f: &mut F, x: &Tensor) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), false);
    let y = f(&mut g, xv)?;
    Ok(g.value(y).item())
}

/// Compare the taped gradient of `f` against central differences on every coordinate of `x`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_difference_check_at(f, x, eps, &coords)
}

/// As [`finite_difference_check`], restricted to a subset of coordinates.
pub fn finite_difference_check_at<F>(mut f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let (_, analytic) = analytic_gradient(&mut f, x)?;
    central_difference_error(x, &analytic, eps, coords, |p| evaluate(&mut f, p))
}
