use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::tensor::{ParamId, ParamStore, RngStream, Tensor, Var};

/// Dense `x @ W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    /// Glorot-uniform weight, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut RngStream,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), &[in_dim, out_dim], limit, rng);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(in_dim: usize, out_dim: usize, bias: bool) -> usize {
        in_dim * out_dim + if bias { out_dim } else { 0 }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if cx.graph.shape(x).last() != Some(&self.in_dim) {
            return Err(Error::dim("linear", cx.graph.shape(x), &[self.in_dim, self.out_dim]));
        }
        let w = cx.param(self.weight);
        let y = cx.graph.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = cx.param(b);
                cx.graph.add_broadcast(y, b)
            }
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::Graph;

    #[test]
    fn param_count_formula() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        Linear::new(&mut store, "fc", 5, 3, true, &mut rng);
        assert_eq!(store.num_trainable(), Linear::param_count(5, 3, true));
        assert_eq!(Linear::param_count(5, 3, true), 5 * 3 + 3);
    }

    #[test]
    fn applies_over_leading_axes() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let lin = Linear::new(&mut store, "fc", 2, 2, true, &mut rng);
        store.set(lin.weight, Tensor::eye(2)).unwrap();
        store.set(lin.bias.unwrap(), Tensor::from_vec(vec![1.0, -1.0])).unwrap();
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store, Mode::Infer, RngStream::new(0));
        let x = cx
            .graph
            .constant(Tensor::new(vec![2, 1, 2], vec![1., 2., 3., 4.]).unwrap());
        let y = lin.forward(&mut cx, x).unwrap();
        assert_eq!(cx.graph.value(y).data(), &[2., 1., 4., 3.]);
    }
}
