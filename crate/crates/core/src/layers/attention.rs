use crate::error::{Error, Result};
use crate::layers::{Ctx, LayerNorm, Linear};
use crate::tensor::{Graph, ParamStore, RngStream, Tensor, Var};

/// Multi-head attention whose keys and values come from a shortened sequence.
///
/// With reduction ratio `R > 1`, groups of `R` consecutive tokens are
/// concatenated to `[S/R, R*D]`, projected back to `D`, and layer-normalised
/// before the key/value projections. `R = 1` skips the reduction entirely.
/// Queries always keep the full length.
#[derive(Clone, Debug)]
pub struct SrAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub reduction: Option<(Linear, LayerNorm)>,
    d_model: usize,
    heads: usize,
    ratio: usize,
}

impl SrAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        ratio: usize,
        ln_eps: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        if ratio == 0 {
            return Err(Error::Config("reduction ratio must be positive".into()));
        }
        let query = Linear::new(store, &format!("{name}.query"), d_model, d_model, true, rng);
        let key = Linear::new(store, &format!("{name}.key"), d_model, d_model, true, rng);
        let value = Linear::new(store, &format!("{name}.value"), d_model, d_model, true, rng);
        let output = Linear::new(store, &format!("{name}.output"), d_model, d_model, true, rng);
        let reduction = (ratio > 1).then(|| {
            (
                Linear::new(store, &format!("{name}.sr"), ratio * d_model, d_model, true, rng),
                LayerNorm::new(store, &format!("{name}.sr_norm"), d_model, ln_eps),
            )
        });
        Ok(Self {
            query,
            key,
            value,
            output,
            reduction,
            d_model,
            heads,
            ratio,
        })
    }

    pub fn param_count(d_model: usize, ratio: usize) -> usize {
        let mut n = 4 * Linear::param_count(d_model, d_model, true);
        if ratio > 1 {
            n += Linear::param_count(ratio * d_model, d_model, true) + LayerNorm::param_count(d_model);
        }
        n
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(cx, x)?.0)
    }

    /// Output `[B, S, D]` and the attention weights `[B, H, S, S/R]`.
    pub fn forward_with_weights(&self, cx: &mut Ctx<'_>, x: Var) -> Result<(Var, Tensor)> {
        let s = cx.graph.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.d_model {
            return Err(Error::dim("sr_attention", &s, &[self.d_model]));
        }
        let (b, seq, d) = (s[0], s[1], s[2]);
        if seq % self.ratio != 0 {
            return Err(Error::Input(format!(
                "sequence length {seq} is not divisible by reduction ratio {}",
                self.ratio
            )));
        }
        let t = seq / self.ratio;
        let h = self.heads;
        let dh = d / h;

        let kv_src = match &self.reduction {
            Some((proj, norm)) => {
                let grouped = cx.graph.reshape(x, &[b, t, self.ratio * d])?;
                let reduced = proj.forward(cx, grouped)?;
                norm.forward(cx, reduced)?
            }
            None => x,
        };
        let q = self.query.forward(cx, x)?;
        let k = self.key.forward(cx, kv_src)?;
        let v = self.value.forward(cx, kv_src)?;

        let q = split_heads(cx.graph, q, b, seq, h, dh)?;
        let k = split_heads(cx.graph, k, b, t, h, dh)?;
        let v = split_heads(cx.graph, v, b, t, h, dh)?;

        let kt = cx.graph.transpose(k)?;
        let logits = cx.graph.matmul(q, kt)?;
        let logits = cx.graph.scale(logits, 1.0 / (dh as f64).sqrt());
        let att = cx.graph.softmax(logits)?;
        let weights = cx.graph.value(att).clone();
        let ctx = cx.graph.matmul(att, v)?;
        let ctx = cx.graph.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = cx.graph.reshape(ctx, &[b, seq, d])?;
        Ok((self.output.forward(cx, ctx)?, weights))
    }
}

fn split_heads(g: &mut Graph, x: Var, b: usize, len: usize, h: usize, dh: usize) -> Result<Var> {
    let x = g.reshape(x, &[b, len, h, dh])?;
    g.permute(x, &[0, 2, 1, 3])
}

/// Unscaled single-head attention `softmax(Q Kᵀ) V` over the last two axes.
pub fn baseline_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let att = g.softmax(logits)?;
    g.matmul(att, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;

    fn identity_projections(store: &mut ParamStore, att: &SrAttention, d: usize, q_gain: f64) {
        let mut q = Tensor::eye(d);
        q.data_mut().iter_mut().for_each(|v| *v *= q_gain);
        store.set(att.query.weight, q).unwrap();
        for l in [&att.key, &att.value, &att.output] {
            store.set(l.weight, Tensor::eye(d)).unwrap();
        }
    }

    fn random(rng: &mut RngStream, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn single_token_returns_value() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let att = SrAttention::new(&mut store, "a", 3, 1, 1, 1e-5, &mut rng).unwrap();
        identity_projections(&mut store, &att, 3, 1.0);
        let x = Tensor::new(vec![1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store, Mode::Infer, RngStream::new(0));
        let xv = cx.graph.constant(x.clone());
        let (y, w) = att.forward_with_weights(&mut cx, xv).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert!(cx.graph.value(y).max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn reduced_shapes_and_row_sums() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(3);
        let att = SrAttention::new(&mut store, "a", 8, 2, 2, 1e-5, &mut rng).unwrap();
        let x = random(&mut rng, &[2, 4, 8]);
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store, Mode::Infer, RngStream::new(0));
        let xv = cx.graph.constant(x);
        let (y, w) = att.forward_with_weights(&mut cx, xv).unwrap();
        assert_eq!(cx.graph.shape(y), &[2, 4, 8]);
        assert_eq!(w.shape(), &[2, 2, 4, 2]);
        for row in w.data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_sequence_is_input_error() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(3);
        let att = SrAttention::new(&mut store, "a", 4, 2, 2, 1e-5, &mut rng).unwrap();
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store, Mode::Infer, RngStream::new(0));
        let xv = cx.graph.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(matches!(att.forward(&mut cx, xv), Err(Error::Input(_))));
    }

    #[test]
    fn bad_head_count_is_config_error() {
        let mut store = ParamStore::new();
        assert!(matches!(
            SrAttention::new(&mut store, "a", 6, 4, 1, 1e-5, &mut RngStream::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unreduced_single_head_matches_baseline() {
        // scaling the query projection by sqrt(d) cancels the 1/sqrt(d_head) factor
        let d = 4;
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(5);
        let att = SrAttention::new(&mut store, "a", d, 1, 1, 1e-5, &mut rng).unwrap();
        identity_projections(&mut store, &att, d, (d as f64).sqrt());
        let x = random(&mut rng, &[1, 3, d]);
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store, Mode::Infer, RngStream::new(0));
        let xv = cx.graph.constant(x.clone());
        let y = att.forward(&mut cx, xv).unwrap();
        let got = cx.graph.value(y).clone();

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let base = baseline_attention(&mut g, xv, xv, xv).unwrap();
        assert!(got.max_abs_diff(g.value(base)) < 1e-12);

        // direct exponential-sum oracle
        let xs = x.data();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (0..d).map(|c| xs[i * d + c] * xs[j * d + c]).sum())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..d {
                let o: f64 = (0..3).map(|j| logits[j].exp() / z * xs[j * d + c]).sum();
                assert!((got.at(&[0, i, c]) - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn baseline_zero_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap());
        let v = g.constant(Tensor::zeros(&[2, 2]));
        let y = baseline_attention(&mut g, q, q, v).unwrap();
        assert!(g.value(y).data().iter().all(|&x| x == 0.0));
    }
}
