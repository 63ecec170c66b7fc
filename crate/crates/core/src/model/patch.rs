use crate::dsp::MfccMatrix;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

/// Flattened patches `[batch, n_patches, patch_h * patch_w]`, before projection.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub patches: Tensor,
    /// Patch grid: (rows along time, columns along coefficients).
    pub grid: (usize, usize),
}

impl PatchSequence {
    pub fn batch(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn n_patches(&self) -> usize {
        self.patches.shape()[1]
    }
}

/// Cut each matrix into non-overlapping `patch_h × patch_w` tiles.
///
/// Frames beyond `max_frames` are dropped; the matrix is then zero-padded to
/// `cfg.padded_frames()` × `cfg.padded_coeffs()`. Tiles are ordered row-major
/// over the grid and flattened row-major inside.
pub fn patchify(batch: &[&MfccMatrix], cfg: &ModelConfig) -> Result<PatchSequence> {
    if batch.is_empty() {
        return Err(Error::Input("cannot patchify an empty batch".into()));
    }
    let (ph, pw) = (cfg.patch_h, cfg.patch_w);
    let (rows, cols) = (cfg.padded_frames(), cfg.padded_coeffs());
    let (gr, gc) = (rows / ph, cols / pw);
    let n = gr * gc;
    let dim = ph * pw;
    let mut data = vec![0.0; batch.len() * n * dim];
    for (b, m) in batch.iter().enumerate() {
        if m.frames() == 0 || m.coeffs() == 0 {
            return Err(Error::Input(format!("batch item {b} is an empty MFCC matrix")));
        }
        if m.coeffs() != cfg.n_coeffs {
            return Err(Error::Contract(format!(
                "batch item {b} has {} coefficients, model expects {}",
                m.coeffs(),
                cfg.n_coeffs
            )));
        }
        let frames = m.frames().min(cfg.max_frames);
        for f in 0..frames {
            for (c, &v) in m.row(f).iter().enumerate() {
                let p = (f / ph) * gc + c / pw;
                let inner = (f % ph) * pw + c % pw;
                data[(b * n + p) * dim + inner] = v;
            }
        }
    }
    Ok(PatchSequence {
        patches: Tensor::new(vec![batch.len(), n, dim], data)?,
        grid: (gr, gc),
    })
}

/// Sinusoidal table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(..)`.
pub fn fourier_position_encoding(seq_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "position encoding needs an even d_model, got {d_model}"
        )));
    }
    let mut data = vec![0.0; seq_len * d_model];
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![seq_len, d_model], data)
}
