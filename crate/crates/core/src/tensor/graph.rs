//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node whose inputs are
//! earlier nodes, so insertion order is already a topological order and
//! [`Graph::backward`] only has to walk the tape once in reverse. The graph is
//! rebuilt for every forward pass, which lets stochastic depth change the
//! topology from batch to batch.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a [.., m, k] @ b`, with `b` either `[k, n]` (shared) or `[.., k, n]`.
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared: bool,
    },
    /// Swap the last two axes.
    Transpose {
        x: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    /// `out[i] = x[src[i]]`.
    Gather {
        x: Var,
        src: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    /// `x + y` with `y` matching the trailing axes of `x`.
    AddBroadcast {
        x: Var,
        y: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    /// Elementwise product with a constant (dropout and winner masks).
    MulConst {
        x: Var,
        mask: Vec<f64>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    MeanAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Softmax {
        x: Var,
    },
    Gelu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LocallyConnected {
        x: Var,
        w: Var,
        b: Var,
        geo: LcGeometry,
    },
}

/// Geometry of a locally connected op over `[batch, len, channels]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LcGeometry {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub patch: usize,
    pub stride: usize,
    pub positions: usize,
    pub filters: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Batch statistics computed by [`Graph::batch_norm`].
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient populated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let shared = sb.len() == 2;
        if !shared && &sb[..sb.len() - 2] != lead {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        if shared {
            gemm(av, bv, &mut out, batch * m, k, n);
        } else {
            for i in 0..batch {
                gemm(
                    &av[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts_unchecked(shape, out),
            rg,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared,
            },
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::dim("transpose", &s, &[]));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let batch: usize = s[..s.len() - 2].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            let o = b * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[o + j * rows + i] = xv[o + i * cols + j];
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([cols, rows]);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts_unchecked(shape, out),
            rg,
            Op::Transpose { x, batch, rows, cols },
        ))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len()
            || perm
                .iter()
                .any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim("permute", &s, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let mut in_strides = vec![1usize; s.len()];
        for i in (0..s.len().saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * s[i + 1];
        }
        let n = self.value(x).numel();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; s.len()];
        for _ in 0..n {
            src.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let xv = self.value(x).data();
        let out = src.iter().map(|&i| xv[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts_unchecked(out_shape, out), rg, Op::Gather { x, src }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Reshape { x }))
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts_unchecked(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Mul { a, b }))
    }

    /// `x + y` where `y`'s shape equals the trailing axes of `x`'s shape.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sy = self.shape(y);
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != *sy {
            return Err(Error::dim("add_broadcast", sx, sy));
        }
        let yv = self.value(y).data();
        let n = yv.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + yv[i % n])
            .collect();
        let t = Tensor::from_parts_unchecked(sx.to_vec(), data);
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(t, rg, Op::AddBroadcast { x, y }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let t = Tensor::from_parts_unchecked(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect());
        let rg = self.rg(x);
        self.push(t, rg, Op::Scale { x, c })
    }

    /// Multiply by a constant mask of the same shape; no gradient flows to the mask.
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::dim("mul_const", xv.shape(), &[mask.len()]));
        }
        let t = Tensor::from_parts_unchecked(
            xv.shape().to_vec(),
            xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        );
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::MulConst { x, mask }))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Mean { x })
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("mean_axis", &s, &[axis]));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = s.clone();
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts_unchecked(shape, out),
            rg,
            Op::MeanAxis { x, outer, len, inner },
        ))
    }

    // ---- nonlinearities -------------------------------------------------

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !xv.all_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let d = *xv.shape().last().unwrap_or(&1);
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let t = Tensor::from_parts_unchecked(xv.shape().to_vec(), out);
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Softmax { x }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::from_parts_unchecked(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| crate::layers::gelu_scalar(v)).collect(),
        );
        let rg = self.rg(x);
        self.push(t, rg, Op::Gelu { x })
    }

    // ---- normalisation --------------------------------------------------

    fn check_affine(&self, op: &'static str, x: Var, gamma: Var, beta: Var, features: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.shape(p) != [features] {
                return Err(Error::dim(op, self.shape(x), self.shape(p)));
            }
        }
        Ok(())
    }

    /// Normalise each last-axis row to zero mean, unit variance, then scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::dim("layer_norm", &s, &[]))?;
        self.check_affine("layer_norm", x, gamma, beta, d)?;
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mu) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::from_parts_unchecked(s, out),
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Training-mode batch normalisation of `x [rows, features]` by column
    /// statistics (biased variance). Returns the batch statistics too.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("batch_norm", &s, &[2]));
        }
        let (rows, f) = (s[0], s[1]);
        if rows < 2 {
            return Err(Error::Contract(format!(
                "training-mode batch norm needs at least 2 rows, got {rows}"
            )));
        }
        self.check_affine("batch_norm", x, gamma, beta, f)?;
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for r in 0..rows {
            for j in 0..f {
                mean[j] += xv[r * f + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for r in 0..rows {
            for j in 0..f {
                let d = xv[r * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            for j in 0..f {
                let i = r * f + j;
                xhat[i] = (xv[i] - mean[j]) * inv_std[j];
                out[i] = xhat[i] * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::from_parts_unchecked(s, out),
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalisation with fixed statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || mean.len() != s[1] || var.len() != s[1] {
            return Err(Error::dim("batch_norm_infer", &s, &[mean.len()]));
        }
        let f = s[1];
        self.check_affine("batch_norm_infer", x, gamma, beta, f)?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, &v) in xv.iter().enumerate() {
            let j = i % f;
            xhat[i] = (v - mean[j]) * inv_std[j];
            out[i] = xhat[i] * g[j] + b[j];
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::from_parts_unchecked(s, out),
            rg,
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    // ---- locally connected ----------------------------------------------

    /// `out[b, p, f] = bias[p, f] + <x[b, p*stride .. p*stride+patch, :], w[p, :, f]>`
    /// with `x [batch, len, ch]`, `w [positions, patch*ch, filters]`, `bias [positions, filters]`.
    pub fn locally_connected(&mut self, x: Var, w: Var, b: Var, patch: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 {
            return Err(Error::dim("locally_connected", &sx, &sw));
        }
        let (batch, len, channels) = (sx[0], sx[1], sx[2]);
        if patch == 0 || stride == 0 || patch > len || !(len - patch).is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "locally connected geometry: len {len}, patch {patch}, stride {stride}"
            )));
        }
        let positions = (len - patch) / stride + 1;
        if sw.len() != 3 || sw[0] != positions || sw[1] != patch * channels {
            return Err(Error::dim("locally_connected", &sx, &sw));
        }
        let filters = sw[2];
        if self.shape(b) != [positions, filters] {
            return Err(Error::dim("locally_connected", &sw, self.shape(b)));
        }
        let geo = LcGeometry {
            batch,
            len,
            channels,
            patch,
            stride,
            positions,
            filters,
        };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let pc = patch * channels;
        let mut out = vec![0.0; batch * positions * filters];
        for bi in 0..batch {
            for p in 0..positions {
                let start = (bi * len + p * stride) * channels;
                let xs = &xv[start..start + pc];
                let o = &mut out[(bi * positions + p) * filters..(bi * positions + p + 1) * filters];
                o.copy_from_slice(&bv[p * filters..(p + 1) * filters]);
                gemm(xs, &wv[p * pc * filters..(p + 1) * pc * filters], o, 1, pc, filters);
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![batch, positions, filters], out),
            rg,
            Op::LocallyConnected { x, w, b, geo },
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Populate gradients of every `requires_grad` node reachable from the
    /// scalar `root`. Gradients from a previous call are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            return Ok(());
        }
        self.grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, g.data());
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut self.grads[v.0];
        match slot {
            Some(t) => t.data_mut().iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            None => {
                *slot = Some(Tensor::from_parts_unchecked(
                    self.nodes[v.0].value.shape().to_vec(),
                    contrib.to_vec(),
                ))
            }
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Ops are taken out temporarily so parent values can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared,
            } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let da = self.rg(a).then(|| {
                    let mut da = vec![0.0; batch * m * k];
                    if shared {
                        gemm_nt(g, bv, &mut da, batch * m, n, k);
                    } else {
                        for t in 0..batch {
                            gemm_nt(
                                &g[t * m * n..(t + 1) * m * n],
                                &bv[t * k * n..(t + 1) * k * n],
                                &mut da[t * m * k..(t + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                    da
                });
                let db = self.rg(b).then(|| {
                    if shared {
                        let mut db = vec![0.0; k * n];
                        gemm_tn(av, g, &mut db, batch * m, k, n);
                        db
                    } else {
                        let mut db = vec![0.0; batch * k * n];
                        for t in 0..batch {
                            gemm_tn(
                                &av[t * m * k..(t + 1) * m * k],
                                &g[t * m * n..(t + 1) * m * n],
                                &mut db[t * k * n..(t + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                        db
                    }
                });
                if let Some(da) = da {
                    self.acc(a, &da);
                }
                if let Some(db) = db {
                    self.acc(b, &db);
                }
            }
            &Op::Transpose { x, batch, rows, cols } => {
                // g has shape [.., cols, rows]
                let mut dx = vec![0.0; g.len()];
                for t in 0..batch {
                    let o = t * rows * cols;
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[o + i * cols + j] = g[o + j * rows + i];
                        }
                    }
                }
                self.acc(x, &dx);
            }
            Op::Gather { x, src } => {
                let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                for (gi, &s) in g.iter().zip(src) {
                    dx[s] += gi;
                }
                self.acc(*x, &dx);
            }
            &Op::Reshape { x } => self.acc(x, g),
            &Op::Add { a, b } => {
                self.acc(a, g);
                self.acc(b, g);
            }
            &Op::Sub { a, b } => {
                self.acc(a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.acc(b, &neg);
            }
            &Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(self.nodes[b.0].value.data()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(self.nodes[a.0].value.data()).map(|(g, x)| g * x).collect();
                self.acc(a, &da);
                self.acc(b, &db);
            }
            &Op::AddBroadcast { x, y } => {
                self.acc(x, g);
                if self.rg(y) {
                    let n = self.nodes[y.0].value.numel();
                    let mut dy = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        dy.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                    }
                    self.acc(y, &dy);
                }
            }
            &Op::Scale { x, c } => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.acc(x, &dx);
            }
            Op::MulConst { x, mask } => {
                let dx: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.acc(*x, &dx);
            }
            &Op::Sum { x } => {
                let dx = vec![g[0]; self.nodes[x.0].value.numel()];
                self.acc(x, &dx);
            }
            &Op::Mean { x } => {
                let n = self.nodes[x.0].value.numel();
                let dx = vec![g[0] / n as f64; n];
                self.acc(x, &dx);
            }
            &Op::MeanAxis { x, outer, len, inner } => {
                let inv = 1.0 / len as f64;
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let go = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let d = &mut dx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        d.iter_mut().zip(go).for_each(|(d, v)| *d = v * inv);
                    }
                }
                self.acc(x, &dx);
            }
            &Op::Softmax { x } => {
                let y = self.nodes[i].value.data();
                let d = *self.nodes[i].value.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(d).zip(y.chunks(d)).zip(g.chunks(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(x, &dx);
            }
            &Op::Gelu { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[x.0].value.data())
                    .map(|(g, &v)| g * crate::layers::gelu_derivative(v))
                    .collect();
                self.acc(x, &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.nodes[gamma.0].value.data();
                let d = gv.len();
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                    }
                    let scale = inv / d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        dx[r * d + j] = scale * (d as f64 * dh - s1 - hr[j] * s2);
                    }
                }
                let (x, gamma, beta) = (*x, *gamma, *beta);
                self.acc(x, &dx);
                self.acc(gamma, &dgamma);
                self.acc(beta, &dbeta);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.nodes[gamma.0].value.data();
                let f = gv.len();
                let rows = g.len() / f;
                let mut s1 = vec![0.0; f];
                let mut s2 = vec![0.0; f];
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for r in 0..rows {
                    for j in 0..f {
                        let idx = r * f + j;
                        let dh = g[idx] * gv[j];
                        s1[j] += dh;
                        s2[j] += dh * xhat[idx];
                        dgamma[j] += g[idx] * xhat[idx];
                        dbeta[j] += g[idx];
                    }
                }
                let mut dx = vec![0.0; g.len()];
                let nr = rows as f64;
                for r in 0..rows {
                    for j in 0..f {
                        let idx = r * f + j;
                        let dh = g[idx] * gv[j];
                        dx[idx] = inv_std[j] / nr * (nr * dh - s1[j] - xhat[idx] * s2[j]);
                    }
                }
                let (x, gamma, beta) = (*x, *gamma, *beta);
                self.acc(x, &dx);
                self.acc(gamma, &dgamma);
                self.acc(beta, &dbeta);
            }
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.nodes[gamma.0].value.data();
                let f = gv.len();
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for (idx, &gi) in g.iter().enumerate() {
                    let j = idx % f;
                    dx[idx] = gi * gv[j] * inv_std[j];
                    dgamma[j] += gi * xhat[idx];
                    dbeta[j] += gi;
                }
                let (x, gamma, beta) = (*x, *gamma, *beta);
                self.acc(x, &dx);
                self.acc(gamma, &dgamma);
                self.acc(beta, &dbeta);
            }
            &Op::LocallyConnected { x, w, b, geo } => {
                let LcGeometry {
                    batch,
                    len,
                    channels,
                    patch,
                    stride,
                    positions,
                    filters,
                } = geo;
                let pc = patch * channels;
                let xv = self.nodes[x.0].value.data();
                let wv = self.nodes[w.0].value.data();
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; positions * filters];
                for bi in 0..batch {
                    for p in 0..positions {
                        let go = &g[(bi * positions + p) * filters..(bi * positions + p + 1) * filters];
                        let start = (bi * len + p * stride) * channels;
                        let wp = &wv[p * pc * filters..(p + 1) * pc * filters];
                        db[p * filters..(p + 1) * filters]
                            .iter_mut()
                            .zip(go)
                            .for_each(|(d, v)| *d += v);
                        gemm_tn(
                            &xv[start..start + pc],
                            go,
                            &mut dw[p * pc * filters..(p + 1) * pc * filters],
                            1,
                            pc,
                            filters,
                        );
                        gemm_nt(go, wp, &mut dx[start..start + pc], 1, filters, pc);
                    }
                }
                self.acc(x, &dx);
                self.acc(w, &dw);
                self.acc(b, &db);
            }
        }
        self.nodes[i].op = op;
    }
}

/// Stable softmax of one row in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// `c[m,n] += a[m,k] @ b[k,n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (c, b) in ci.iter_mut().zip(bp) {
                *c += aip * b;
            }
        }
    }
}

/// `c[m,k] += a[m,n] @ b[k,n]^T`
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ai = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            c[i * k + p] += ai.iter().zip(bp).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k,n] += a[m,k]^T @ b[m,n]`
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for (c, b) in cp.iter_mut().zip(bi) {
                *c += aip * b;
            }
        }
    }
}
