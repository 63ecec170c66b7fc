use crate::config::{join_list, parse_list, parse_value};
use crate::error::{Error, Result};
use crate::layers::LocallyConnected;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Frames per patch.
    pub patch_h: usize,
    /// Coefficients per patch.
    pub patch_w: usize,
    pub n_coeffs: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub lwta_block: usize,
    pub dropout_rate: f64,
    pub survival_p: f64,
    pub sr_ratio: usize,
    pub ffn_hidden: Vec<usize>,
    pub lc_patch: usize,
    pub lc_stride: usize,
    pub lc_filters: usize,
    pub regression_hidden: Vec<usize>,
    /// Inputs are truncated to this many frames, then zero-padded up to it
    /// (rounded up to a multiple of `patch_h`).
    pub max_frames: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_h: 4,
            patch_w: 13,
            n_coeffs: 13,
            d_model: 64,
            n_heads: 8,
            n_blocks: 3,
            lwta_block: 2,
            dropout_rate: 0.2,
            survival_p: 0.2,
            sr_ratio: 2,
            ffn_hidden: vec![128],
            lc_patch: 2,
            lc_stride: 2,
            lc_filters: 32,
            regression_hidden: vec![64, 32],
            max_frames: 128,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Padded frame count seen by the patcher.
    pub fn padded_frames(&self) -> usize {
        self.max_frames.div_ceil(self.patch_h) * self.patch_h
    }

    pub fn padded_coeffs(&self) -> usize {
        self.n_coeffs.div_ceil(self.patch_w) * self.patch_w
    }

    pub fn n_patches(&self) -> usize {
        (self.padded_frames() / self.patch_h) * (self.padded_coeffs() / self.patch_w)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_h == 0 || self.patch_w == 0 || self.n_coeffs == 0 || self.max_frames == 0 {
            return bad("patch dims, n_coeffs and max_frames must be positive".into());
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model {} must be positive and even", self.d_model));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1".into());
        }
        if self.lwta_block == 0
            || !self.d_model.is_multiple_of(self.lwta_block)
            || !self.lc_filters.is_multiple_of(self.lwta_block)
        {
            return bad(format!(
                "lwta_block {} must divide d_model {} and lc_filters {}",
                self.lwta_block, self.d_model, self.lc_filters
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} must be in [0, 1)", self.dropout_rate));
        }
        if !(self.survival_p > 0.0 && self.survival_p <= 1.0) {
            return bad(format!("survival_p {} must be in (0, 1]", self.survival_p));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 || self.ln_eps <= 0.0 {
            return bad("bn_momentum must be in [0, 1] and epsilons positive".into());
        }
        if self.sr_ratio == 0 || !self.n_patches().is_multiple_of(self.sr_ratio) {
            return bad(format!(
                "{} patches are not divisible by sr_ratio {}",
                self.n_patches(),
                self.sr_ratio
            ));
        }
        if self.ffn_hidden.contains(&0) || self.regression_hidden.contains(&0) || self.lc_filters == 0 {
            return bad("layer widths must be positive".into());
        }
        LocallyConnected::output_len(self.n_patches(), self.lc_patch, self.lc_stride)?;
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("model.{key}");
        let k = full.as_str();
        match key {
            "patch_h" => self.patch_h = parse_value(k, value)?,
            "patch_w" => self.patch_w = parse_value(k, value)?,
            "n_coeffs" => self.n_coeffs = parse_value(k, value)?,
            "d_model" => self.d_model = parse_value(k, value)?,
            "n_heads" => self.n_heads = parse_value(k, value)?,
            "n_blocks" => self.n_blocks = parse_value(k, value)?,
            "lwta_block" => self.lwta_block = parse_value(k, value)?,
            "dropout_rate" => self.dropout_rate = parse_value(k, value)?,
            "survival_p" => self.survival_p = parse_value(k, value)?,
            "sr_ratio" => self.sr_ratio = parse_value(k, value)?,
            "ffn_hidden" => self.ffn_hidden = parse_list(k, value)?,
            "lc_patch" => self.lc_patch = parse_value(k, value)?,
            "lc_stride" => self.lc_stride = parse_value(k, value)?,
            "lc_filters" => self.lc_filters = parse_value(k, value)?,
            "regression_hidden" => self.regression_hidden = parse_list(k, value)?,
            "max_frames" => self.max_frames = parse_value(k, value)?,
            "bn_momentum" => self.bn_momentum = parse_value(k, value)?,
            "bn_eps" => self.bn_eps = parse_value(k, value)?,
            "ln_eps" => self.ln_eps = parse_value(k, value)?,
            "seed" => self.seed = parse_value(k, value)?,
            _ => return Err(Error::Config(format!("unknown config key {full}"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let e = |k: &str, v: String| (k.to_string(), v);
        vec![
            e("patch_h", self.patch_h.to_string()),
            e("patch_w", self.patch_w.to_string()),
            e("n_coeffs", self.n_coeffs.to_string()),
            e("d_model", self.d_model.to_string()),
            e("n_heads", self.n_heads.to_string()),
            e("n_blocks", self.n_blocks.to_string()),
            e("lwta_block", self.lwta_block.to_string()),
            e("dropout_rate", self.dropout_rate.to_string()),
            e("survival_p", self.survival_p.to_string()),
            e("sr_ratio", self.sr_ratio.to_string()),
            e("ffn_hidden", join_list(&self.ffn_hidden)),
            e("lc_patch", self.lc_patch.to_string()),
            e("lc_stride", self.lc_stride.to_string()),
            e("lc_filters", self.lc_filters.to_string()),
            e("regression_hidden", join_list(&self.regression_hidden)),
            e("max_frames", self.max_frames.to_string()),
            e("bn_momentum", self.bn_momentum.to_string()),
            e("bn_eps", self.bn_eps.to_string()),
            e("ln_eps", self.ln_eps.to_string()),
            e("seed", self.seed.to_string()),
        ]
    }
}
