use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::tensor::{ParamId, ParamStore, RngStream, Tensor, Var};

/// Convolution-shaped layer over `[batch, len, channels]` whose filters are
/// not shared: each output position owns its own `[patch * channels, filters]`
/// weight and `[filters]` bias.
#[derive(Clone, Debug)]
pub struct LocallyConnected {
    pub weight: ParamId,
    pub bias: ParamId,
    len: usize,
    channels: usize,
    patch: usize,
    stride: usize,
    filters: usize,
}

impl LocallyConnected {
    pub fn output_len(len: usize, patch: usize, stride: usize) -> Result<usize> {
        if patch == 0 || stride == 0 || patch > len || !(len - patch).is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "locally connected geometry: len {len}, patch {patch}, stride {stride}"
            )));
        }
        Ok((len - patch) / stride + 1)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        len: usize,
        channels: usize,
        patch: usize,
        stride: usize,
        filters: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let positions = Self::output_len(len, patch, stride)?;
        let fan_in = patch * channels;
        let limit = (6.0 / (fan_in + filters) as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), &[positions, fan_in, filters], limit, rng);
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[positions, filters]));
        Ok(Self {
            weight,
            bias,
            len,
            channels,
            patch,
            stride,
            filters,
        })
    }

    pub fn param_count(len: usize, channels: usize, patch: usize, stride: usize, filters: usize) -> Result<usize> {
        let positions = Self::output_len(len, patch, stride)?;
        Ok(positions * (patch * channels * filters + filters))
    }

    pub fn positions(&self) -> usize {
        (self.len - self.patch) / self.stride + 1
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = cx.graph.shape(x);
        if s.len() != 3 || s[1] != self.len || s[2] != self.channels {
            return Err(Error::dim("locally_connected", s, &[self.len, self.channels]));
        }
        let w = cx.param(self.weight);
        let b = cx.param(self.bias);
        cx.graph.locally_connected(x, w, b, self.patch, self.stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::Graph;

    fn run(store: &ParamStore, layer: &LocallyConnected, x: Tensor) -> Tensor {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, store, Mode::Infer, RngStream::new(0));
        let xv = cx.graph.constant(x);
        let y = layer.forward(&mut cx, xv).unwrap();
        cx.graph.value(y).clone()
    }

    #[test]
    fn zero_filters_zero_output() {
        let mut store = ParamStore::new();
        let lc = LocallyConnected::new(&mut store, "lc", 6, 2, 2, 2, 3, &mut RngStream::new(1)).unwrap();
        store.set(lc.weight, Tensor::zeros(&[3, 4, 3])).unwrap();
        let x = Tensor::full(&[2, 6, 2], 1.5);
        assert!(run(&store, &lc, x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_position_filters() {
        let mut store = ParamStore::new();
        let lc = LocallyConnected::new(&mut store, "lc", 4, 1, 2, 2, 1, &mut RngStream::new(1)).unwrap();
        // position 0 picks the first element of its patch, position 1 the second
        store
            .set(lc.weight, Tensor::new(vec![2, 2, 1], vec![1., 0., 0., 1.]).unwrap())
            .unwrap();
        let (a, b, c, d) = (0.3, -1.2, 2.5, 7.0);
        let y = run(&store, &lc, Tensor::new(vec![1, 4, 1], vec![a, b, c, d]).unwrap());
        assert_eq!(y.data(), &[a, d]);
    }

    #[test]
    fn shared_filters_equal_convolution() {
        let (len, ch, patch, stride, filters) = (7, 3, 3, 2, 2);
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(9);
        let lc = LocallyConnected::new(&mut store, "lc", len, ch, patch, stride, filters, &mut rng).unwrap();
        let positions = lc.positions();
        let kernel: Vec<f64> = (0..patch * ch * filters).map(|_| rng.normal()).collect();
        let bias: Vec<f64> = (0..filters).map(|_| rng.normal()).collect();
        store
            .set(
                lc.weight,
                Tensor::new(vec![positions, patch * ch, filters], kernel.repeat(positions)).unwrap(),
            )
            .unwrap();
        store
            .set(
                lc.bias,
                Tensor::new(vec![positions, filters], bias.repeat(positions)).unwrap(),
            )
            .unwrap();
        let x: Vec<f64> = (0..2 * len * ch).map(|_| rng.normal()).collect();
        let y = run(&store, &lc, Tensor::new(vec![2, len, ch], x.clone()).unwrap());
        // direct convolution oracle
        for b in 0..2 {
            for p in 0..positions {
                for f in 0..filters {
                    let mut acc = bias[f];
                    for q in 0..patch {
                        for c in 0..ch {
                            acc += x[(b * len + p * stride + q) * ch + c] * kernel[(q * ch + c) * filters + f];
                        }
                    }
                    assert!((y.at(&[b, p, f]) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn incompatible_geometry() {
        let mut store = ParamStore::new();
        assert!(matches!(
            LocallyConnected::new(&mut store, "lc", 5, 1, 2, 2, 1, &mut RngStream::new(0)),
            Err(Error::Config(_))
        ));
    }
}
