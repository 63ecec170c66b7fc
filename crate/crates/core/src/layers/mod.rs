//! Differentiable layers with explicit train/inference modes.
//!
//! Every layer reads its parameters from a [`ParamStore`] through a [`Ctx`],
//! which also carries the mode, the random stream for stochastic layers, and
//! an optional [`MaskTape`] used to freeze data-dependent masks during
//! finite-difference checks.

mod attention;
mod dropout;
mod gelu;
mod linear;
mod locally_connected;
mod lwta;
mod norm;
mod stochastic_depth;

pub use attention::{baseline_attention, SrAttention};
pub use dropout::Dropout;
pub use gelu::{gelu, gelu_derivative, gelu_scalar};
pub use linear::Linear;
pub use locally_connected::LocallyConnected;
pub use lwta::{lwta_activation, winner_mask, LwtaLayer};
pub use norm::{BatchNorm, LayerNorm};
pub use stochastic_depth::StochasticDepth;

use crate::tensor::{Graph, ParamId, ParamStore, RngStream, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Recorded winner masks, replayed on later passes.
///
/// The first pass after construction records; after [`MaskTape::rewind`] the
/// tape replays the recorded masks in call order.
#[derive(Debug, Default)]
pub struct MaskTape {
    masks: Vec<Vec<f64>>,
    cursor: usize,
    frozen: bool,
}

impl MaskTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rewind(&mut self) {
        if !self.masks.is_empty() {
            self.frozen = true;
        }
        self.cursor = 0;
    }

    fn next(&mut self, compute: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        if self.frozen {
            let m = self.masks[self.cursor].clone();
            self.cursor += 1;
            m
        } else {
            let m = compute();
            self.masks.push(m.clone());
            m
        }
    }
}

/// Forward-pass context.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    params: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    rng: RngStream,
    masks: Option<&'a mut MaskTape>,
    stat_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a mut Graph, params: &'a ParamStore, mode: Mode, rng: RngStream) -> Self {
        Self {
            graph,
            params,
            bound: vec![None; params.len()],
            mode,
            rng,
            masks: None,
            stat_updates: Vec::new(),
        }
    }

    pub fn with_masks(mut self, tape: &'a mut MaskTape) -> Self {
        tape.rewind();
        self.masks = Some(tape);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn rng(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    /// Use `var` in place of the stored value of `id` for this pass.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound[id.index()] = Some(var);
    }

    /// Graph node for parameter `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let v = self
            .graph
            .leaf(self.params.get(id).clone(), self.params.is_trainable(id));
        self.bound[id.index()] = Some(v);
        v
    }

    /// Parameters touched in this pass, with their graph nodes.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    /// Gradients of every bound trainable parameter after `graph.backward`.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.bound_params()
            .filter(|(id, _)| self.params.is_trainable(*id))
            .map(|(id, v)| {
                let g = self
                    .graph
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape()));
                (id, g)
            })
            .collect()
    }

    pub(crate) fn push_stat(&mut self, id: ParamId, value: Tensor) {
        self.stat_updates.push((id, value));
    }

    /// Running-statistic updates produced by training-mode batch norm.
    pub fn take_stat_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.stat_updates)
    }

    pub(crate) fn mask(&mut self, compute: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        match self.masks.as_deref_mut() {
            Some(tape) => tape.next(compute),
            None => compute(),
        }
    }
}

/// Apply running-statistic updates collected from a training pass.
pub fn apply_stat_updates(store: &mut ParamStore, updates: Vec<(ParamId, Tensor)>) -> crate::Result<()> {
    for (id, v) in updates {
        store.set(id, v)?;
    }
    Ok(())
}
