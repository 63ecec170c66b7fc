use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::tensor::{ParamId, ParamStore, RngStream, Var};

/// Local winner-take-all: a bias-free linear map `J -> K` whose outputs
/// compete in contiguous blocks of `block` units. Within each block only the
/// largest pre-activation survives, and only if it is positive.
#[derive(Clone, Debug)]
pub struct LwtaLayer {
    pub weight: ParamId,
    in_dim: usize,
    out_dim: usize,
    block: usize,
}

impl LwtaLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        block: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if block == 0 || !out_dim.is_multiple_of(block) {
            return Err(Error::Config(format!(
                "LWTA width {out_dim} is not divisible by block size {block}"
            )));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), &[in_dim, out_dim], limit, rng);
        Ok(Self {
            weight,
            in_dim,
            out_dim,
            block,
        })
    }

    /// Wrap an existing `[J, K]` weight.
    pub fn from_weight(store: &ParamStore, weight: ParamId, block: usize) -> Result<Self> {
        let s = store.get(weight).shape();
        if s.len() != 2 {
            return Err(Error::dim("LwtaLayer::from_weight", s, &[2]));
        }
        if block == 0 || !s[1].is_multiple_of(block) {
            return Err(Error::Config(format!(
                "LWTA width {} is not divisible by block size {block}",
                s[1]
            )));
        }
        Ok(Self {
            weight,
            in_dim: s[0],
            out_dim: s[1],
            block,
        })
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if cx.graph.shape(x).last() != Some(&self.in_dim) {
            return Err(Error::dim("lwta", cx.graph.shape(x), &[self.in_dim, self.out_dim]));
        }
        let w = cx.param(self.weight);
        let pre = cx.graph.matmul(x, w)?;
        let block = self.block;
        let values = cx.graph.value(pre).data().to_vec();
        let mask = cx.mask(|| winner_mask(&values, block));
        cx.graph.mul_const(pre, mask)
    }
}

/// 1.0 at each block's winner (first maximal entry, and only if positive), 0.0 elsewhere.
pub fn winner_mask(values: &[f64], block: usize) -> Vec<f64> {
    assert!(
        block > 0 && values.len().is_multiple_of(block),
        "block must divide length"
    );
    let mut mask = vec![0.0; values.len()];
    for (b, chunk) in values.chunks(block).enumerate() {
        let mut best = 0;
        for (j, &v) in chunk.iter().enumerate().skip(1) {
            if v > chunk[best] {
                best = j;
            }
        }
        if chunk[best] > 0.0 {
            mask[b * block + best] = 1.0;
        }
    }
    mask
}

/// Apply the competition directly to pre-activations.
pub fn lwta_activation(values: &[f64], block: usize) -> Vec<f64> {
    winner_mask(values, block)
        .iter()
        .zip(values)
        .map(|(m, v)| m * v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_block_passthrough() {
        assert_eq!(lwta_activation(&[3., 1., -2., 5.], 2), vec![3., 0., 0., 5.]);
    }

    #[test]
    fn all_nonpositive_block_is_silent() {
        assert_eq!(lwta_activation(&[-1., -3.], 2), vec![0., 0.]);
        assert_eq!(lwta_activation(&[0., -3.], 2), vec![0., 0.]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // exhaustive over a small grid of 2-entry blocks
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        for &a in &grid {
            for &b in &grid {
                let out = lwta_activation(&[a, b], 2);
                let expect = if a.max(b) <= 0.0 {
                    [0.0, 0.0]
                } else if a >= b {
                    [a, 0.0]
                } else {
                    [0.0, b]
                };
                assert_eq!(out, expect, "block [{a}, {b}]");
            }
        }
        assert_eq!(lwta_activation(&[2., 2.], 2), vec![2., 0.]);
    }

    #[test]
    fn bad_block_size_is_config_error() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        assert!(matches!(
            LwtaLayer::new(&mut store, "l", 4, 5, 2, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
