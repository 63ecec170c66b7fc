use rayon::prelude::*;

use crate::dsp::MfccMatrix;
use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, Ctx, Dropout, Linear, LocallyConnected, LwtaLayer, MaskTape, Mode, SrAttention, StochasticDepth,
};
use crate::model::{fourier_position_encoding, patchify, ModelConfig};
use crate::tensor::{Graph, ParamStore, RngStream, Tensor, Var};

const INIT_STREAM: u64 = 0x1a17;

/// One repeated encoder group: `x + SD(SrAttention(BatchNorm(x)))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm: BatchNorm,
    pub attn: SrAttention,
    pub depth: StochasticDepth,
}

/// Affine map from network output to score units: `score = shift + scale * y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetScaling {
    pub shift: f64,
    pub scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

impl TargetScaling {
    pub fn to_network(&self, score: f64) -> f64 {
        (score - self.shift) / self.scale
    }

    pub fn to_score(&self, y: f64) -> f64 {
        self.shift + self.scale * y
    }
}

/// The full regressor: patch embedding, position encoding, LWTA, encoder
/// blocks, LWTA, batch norm, feed-forward, and the locally connected
/// regression head.
#[derive(Clone, Debug)]
pub struct StochasticTransformer {
    cfg: ModelConfig,
    params: ParamStore,
    scaling: TargetScaling,
    pe: Tensor,
    embed: Linear,
    lwta_in: LwtaLayer,
    blocks: Vec<EncoderBlock>,
    lwta_out: LwtaLayer,
    norm_out: BatchNorm,
    ffn: Vec<Linear>,
    dropout: Dropout,
    lc: LocallyConnected,
    head_lwta: LwtaLayer,
    head_dense: Vec<Linear>,
    head_out: Linear,
}

impl StochasticTransformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngStream::new(cfg.seed).derive(INIT_STREAM);
        let mut p = ParamStore::new();
        let d = cfg.d_model;
        let n = cfg.n_patches();

        let embed = Linear::new(&mut p, "embed", cfg.patch_dim(), d, true, &mut rng);
        let lwta_in = LwtaLayer::new(&mut p, "lwta_in", d, d, cfg.lwta_block, &mut rng)?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 1..=cfg.n_blocks {
            blocks.push(EncoderBlock {
                norm: BatchNorm::new(&mut p, &format!("block{i}.bn"), d, cfg.bn_momentum, cfg.bn_eps),
                attn: SrAttention::new(
                    &mut p,
                    &format!("block{i}.attn"),
                    d,
                    cfg.n_heads,
                    cfg.sr_ratio,
                    cfg.ln_eps,
                    &mut rng,
                )?,
                depth: StochasticDepth::new(cfg.survival_p)?,
            });
        }
        let lwta_out = LwtaLayer::new(&mut p, "lwta_out", d, d, cfg.lwta_block, &mut rng)?;
        let norm_out = BatchNorm::new(&mut p, "bn_out", d, cfg.bn_momentum, cfg.bn_eps);
        let mut ffn = Vec::new();
        let mut width = d;
        for (j, &h) in cfg.ffn_hidden.iter().enumerate() {
            ffn.push(Linear::new(
                &mut p,
                &format!("ffn.dense{}", j + 1),
                width,
                h,
                true,
                &mut rng,
            ));
            width = h;
        }
        ffn.push(Linear::new(&mut p, "ffn.proj", width, d, true, &mut rng));
        let lc = LocallyConnected::new(
            &mut p,
            "head.lc",
            n,
            d,
            cfg.lc_patch,
            cfg.lc_stride,
            cfg.lc_filters,
            &mut rng,
        )?;
        let f = cfg.lc_filters;
        let head_lwta = LwtaLayer::new(&mut p, "head.lwta", f, f, cfg.lwta_block, &mut rng)?;
        let mut head_dense = Vec::new();
        let mut width = f;
        for (j, &h) in cfg.regression_hidden.iter().enumerate() {
            head_dense.push(Linear::new(
                &mut p,
                &format!("head.dense{}", j + 1),
                width,
                h,
                true,
                &mut rng,
            ));
            width = h;
        }
        let head_out = Linear::new(&mut p, "head.out", width, 1, true, &mut rng);

        Ok(Self {
            pe: fourier_position_encoding(n, d)?,
            dropout: Dropout::new(cfg.dropout_rate)?,
            cfg,
            params: p,
            scaling: TargetScaling::default(),
            embed,
            lwta_in,
            blocks,
            lwta_out,
            norm_out,
            ffn,
            lc,
            head_lwta,
            head_dense,
            head_out,
        })
    }

    /// Rebuild from a config and previously saved parameters. Every name and
    /// shape must match what the config produces.
    pub fn with_params(cfg: ModelConfig, params: ParamStore, scaling: TargetScaling) -> Result<Self> {
        let mut model = Self::new(cfg)?;
        if params.len() != model.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} tensors, config expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids() {
            let (want, got) = (model.params.get(id), params.get(id));
            if model.params.name(id) != params.name(id)
                || want.shape() != got.shape()
                || model.params.is_trainable(id) != params.is_trainable(id)
            {
                return Err(Error::Contract(format!(
                    "parameter {} {:?} does not match config ({} {:?})",
                    params.name(id),
                    got.shape(),
                    model.params.name(id),
                    want.shape()
                )));
            }
        }
        model.params = params;
        model.scaling = scaling;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn scaling(&self) -> TargetScaling {
        self.scaling
    }

    pub fn set_scaling(&mut self, scaling: TargetScaling) {
        self.scaling = scaling;
    }

    pub fn blocks(&self) -> &[EncoderBlock] {
        &self.blocks
    }

    /// The final linear unit producing the score.
    pub fn output_layer(&self) -> &Linear {
        &self.head_out
    }

    /// Input tensor `[B, n_patches, patch_dim]` for a batch of matrices.
    pub fn input_tensor(&self, batch: &[&MfccMatrix]) -> Result<Tensor> {
        Ok(patchify(batch, &self.cfg)?.patches)
    }

    /// `x + SD(SrAttention(BatchNorm(x)))`, batch norm taken per feature over `B * S` rows.
    pub fn encoder_block_forward(&self, i: usize, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let block = self
            .blocks
            .get(i)
            .ok_or_else(|| Error::Contract(format!("no encoder block {i}")))?;
        let s = cx.graph.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.cfg.d_model {
            return Err(Error::dim("encoder_block", &s, &[self.cfg.d_model]));
        }
        block.depth.forward(cx, x, |cx, x| {
            let flat = cx.graph.reshape(x, &[s[0] * s[1], s[2]])?;
            let normed = block.norm.forward(cx, flat)?;
            let normed = cx.graph.reshape(normed, &s)?;
            block.attn.forward(cx, normed)
        })
    }

    /// Network output `[B]` (before target scaling) from patches `[B, N, P]`.
    pub fn forward(&self, cx: &mut Ctx<'_>, patches: Var) -> Result<Var> {
        let s = cx.graph.shape(patches).to_vec();
        let (n, d) = (self.cfg.n_patches(), self.cfg.d_model);
        if s.len() != 3 || s[1] != n || s[2] != self.cfg.patch_dim() {
            return Err(Error::Contract(format!(
                "input shape {s:?} does not match model (expected [B, {n}, {}])",
                self.cfg.patch_dim()
            )));
        }
        let b = s[0];
        let x = self.embed.forward(cx, patches)?;
        let pe = cx.graph.constant(self.pe.clone());
        let x = cx.graph.add_broadcast(x, pe)?;
        let mut x = self.lwta_in.forward(cx, x)?;
        for i in 0..self.blocks.len() {
            x = self.encoder_block_forward(i, cx, x)?;
        }
        let x = self.lwta_out.forward(cx, x)?;
        let flat = cx.graph.reshape(x, &[b * n, d])?;
        let normed = self.norm_out.forward(cx, flat)?;
        let mut x = cx.graph.reshape(normed, &[b, n, d])?;

        let (last, hidden) = self.ffn.split_last().expect("ffn has a projection");
        for dense in hidden {
            x = dense.forward(cx, x)?;
            x = cx.graph.gelu(x);
            x = self.dropout.forward(cx, x)?;
        }
        let x = last.forward(cx, x)?;

        let x = self.lc.forward(cx, x)?;
        let x = cx.graph.mean_axis(x, 1)?;
        let x = self.dropout.forward(cx, x)?;
        let mut x = self.head_lwta.forward(cx, x)?;
        for dense in &self.head_dense {
            x = dense.forward(cx, x)?;
            x = cx.graph.gelu(x);
        }
        let y = self.head_out.forward(cx, x)?;
        cx.graph.reshape(y, &[b])
    }

    /// Forward a prepared input in the given mode and return the raw network outputs.
    pub fn run(&self, input: &Tensor, mode: Mode, rng: RngStream, masks: Option<&mut MaskTape>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &self.params, mode, rng);
        if let Some(tape) = masks {
            cx = cx.with_masks(tape);
        }
        let x = cx.graph.constant(input.clone());
        let y = self.forward(&mut cx, x)?;
        Ok(cx.graph.value(y).data().to_vec())
    }

    /// Inference-mode scores, in target units. Runs chunks in parallel;
    /// results do not depend on chunking.
    pub fn predict(&self, mats: &[&MfccMatrix]) -> Result<Vec<f64>> {
        const CHUNK: usize = 16;
        let chunks: Vec<Vec<f64>> = mats
            .par_chunks(CHUNK)
            .map(|c| {
                let input = self.input_tensor(c)?;
                self.run(&input, Mode::Infer, RngStream::new(0), None)
            })
            .collect::<Result<_>>()?;
        let out: Vec<f64> = chunks.into_iter().flatten().map(|y| self.scaling.to_score(y)).collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite prediction for item {i}")));
        }
        Ok(out)
    }
}

/// Exact trainable-parameter count implied by `cfg`.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let d = cfg.d_model;
    let mut n = Linear::param_count(cfg.patch_dim(), d, true);
    n += 2 * LwtaLayer::param_count(d, d);
    n += cfg.n_blocks * (BatchNorm::param_count(d) + SrAttention::param_count(d, cfg.sr_ratio));
    n += BatchNorm::param_count(d);
    let mut width = d;
    for &h in &cfg.ffn_hidden {
        n += Linear::param_count(width, h, true);
        width = h;
    }
    n += Linear::param_count(width, d, true);
    n += LocallyConnected::param_count(cfg.n_patches(), d, cfg.lc_patch, cfg.lc_stride, cfg.lc_filters)?;
    n += LwtaLayer::param_count(cfg.lc_filters, cfg.lc_filters);
    let mut width = cfg.lc_filters;
    for &h in &cfg.regression_hidden {
        n += Linear::param_count(width, h, true);
        width = h;
    }
    n += Linear::param_count(width, 1, true);
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> ModelConfig {
        ModelConfig {
            patch_h: 2,
            patch_w: 3,
            n_coeffs: 3,
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
            ffn_hidden: vec![8],
            lc_filters: 4,
            regression_hidden: vec![6, 4],
            max_frames: 8,
            ..ModelConfig::default()
        }
    }

    fn random_matrix(rng: &mut RngStream, frames: usize, coeffs: usize) -> MfccMatrix {
        MfccMatrix::new(
            frames,
            coeffs,
            (0..frames * coeffs).map(|_| rng.normal()).collect(),
            25.0,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn count_matches_store() {
        for cfg in [ModelConfig::default(), tiny()] {
            let m = StochasticTransformer::new(cfg.clone()).unwrap();
            assert_eq!(m.params().num_trainable(), count_parameters(&cfg).unwrap());
        }
    }

    #[test]
    fn default_count_golden() {
        assert_eq!(count_parameters(&ModelConfig::default()).unwrap(), 175_041);
    }

    #[test]
    fn wider_ffn_has_more_parameters() {
        let base = ModelConfig::default();
        let wide = ModelConfig {
            ffn_hidden: vec![256],
            ..base.clone()
        };
        assert!(count_parameters(&wide).unwrap() > count_parameters(&base).unwrap());
    }

    #[test]
    fn inference_is_deterministic_and_batch_independent() {
        let m = StochasticTransformer::new(tiny()).unwrap();
        let mut rng = RngStream::new(1);
        let mats: Vec<MfccMatrix> = (0..5).map(|i| random_matrix(&mut rng, 3 + i, 3)).collect();
        let refs: Vec<&MfccMatrix> = mats.iter().collect();
        let a = m.predict(&refs).unwrap();
        assert_eq!(a, m.predict(&refs).unwrap());
        let single: Vec<f64> = refs.iter().map(|r| m.predict(&[r]).unwrap()[0]).collect();
        assert_eq!(a, single);
        let mut rev = refs.clone();
        rev.reverse();
        let mut b = m.predict(&rev).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_output_layer_returns_bias() {
        let mut m = StochasticTransformer::new(tiny()).unwrap();
        let out = m.output_layer().clone();
        m.params_mut().set(out.weight, Tensor::zeros(&[4, 1])).unwrap();
        m.params_mut()
            .set(out.bias.unwrap(), Tensor::from_vec(vec![3.25]))
            .unwrap();
        let mut rng = RngStream::new(2);
        let mats: Vec<MfccMatrix> = (0..3).map(|_| random_matrix(&mut rng, 8, 3)).collect();
        let refs: Vec<&MfccMatrix> = mats.iter().collect();
        assert!(m.predict(&refs).unwrap().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn encoder_block_skip_cases() {
        let m = StochasticTransformer::new(tiny()).unwrap();
        let mut rng = RngStream::new(4);
        let x = Tensor::new(vec![2, 4, 8], (0..64).map(|_| rng.normal()).collect()).unwrap();
        // zeroed output projection: branch is identically zero
        let mut zeroed = m.clone();
        let proj = zeroed.blocks()[0].attn.output.clone();
        zeroed.params_mut().set(proj.weight, Tensor::zeros(&[8, 8])).unwrap();
        for mode in [Mode::Train, Mode::Infer] {
            let mut g = Graph::new();
            let mut cx = Ctx::new(&mut g, zeroed.params(), mode, RngStream::new(0));
            let xv = cx.graph.constant(x.clone());
            let y = zeroed.encoder_block_forward(0, &mut cx, xv).unwrap();
            assert_eq!(cx.graph.value(y), &x);
        }
        // a dropped draw returns x exactly and preserves shape otherwise
        let mut dropped = 0;
        for seed in 0..20 {
            let mut g = Graph::new();
            let mut cx = Ctx::new(&mut g, m.params(), Mode::Train, RngStream::new(seed));
            let xv = cx.graph.constant(x.clone());
            let y = m.encoder_block_forward(0, &mut cx, xv).unwrap();
            assert_eq!(cx.graph.shape(y), x.shape());
            if cx.graph.value(y) == &x {
                dropped += 1;
            }
        }
        assert!(dropped > 0 && dropped < 20);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let m = StochasticTransformer::new(tiny()).unwrap();
        let bad = Tensor::zeros(&[1, 3, 6]);
        assert!(matches!(
            m.run(&bad, Mode::Infer, RngStream::new(0), None),
            Err(Error::Contract(_))
        ));
        let mut other = tiny();
        other.d_model = 16;
        let donor = StochasticTransformer::new(other).unwrap();
        assert!(matches!(
            StochasticTransformer::with_params(tiny(), donor.params().clone(), TargetScaling::default()),
            Err(Error::Contract(_))
        ));
    }
}
