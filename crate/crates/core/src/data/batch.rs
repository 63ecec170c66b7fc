use crate::data::Example;
use crate::dsp::MfccMatrix;
use crate::error::{Error, Result};
use crate::tensor::RngStream;

const SHUFFLE_STREAM: u64 = 0x5f1e;

/// Feature matrices padded to a common frame count, with their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub features: Vec<MfccMatrix>,
    pub scores: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn feature_refs(&self) -> Vec<&MfccMatrix> {
        self.features.iter().collect()
    }
}

/// Truncate to `frames` rows or zero-pad up to it.
pub fn pad_or_truncate(m: &MfccMatrix, frames: usize) -> MfccMatrix {
    let c = m.coeffs();
    let keep = m.frames().min(frames);
    let mut v = m.values()[..keep * c].to_vec();
    v.resize(frames * c, 0.0);
    MfccMatrix::new(frames, c, v, m.frame_ms(), m.hop_ms()).expect("finite input stays finite")
}

/// Shuffled order for one epoch; the epoch index is part of the shuffle key,
/// so orders differ across epochs but are reproducible.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed)
        .derive(SHUFFLE_STREAM)
        .derive(epoch as u64)
        .shuffle(&mut idx);
    idx
}

/// Batches for one epoch.
///
/// Only full batches are yielded; an incomplete final batch is dropped. When
/// the whole split is smaller than `batch_size` it forms a single batch,
/// provided it has at least 2 items (batch norm needs 2 rows). Matrices are
/// padded to the longest in the batch, capped at `max_frames`.
pub fn batch_iterator<'a>(
    examples: &'a [Example],
    batch_size: usize,
    max_frames: usize,
    seed: u64,
    epoch: usize,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    if examples.is_empty() {
        return Err(Error::Contract("batch_iterator on an empty split".into()));
    }
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch_size must be at least 2, got {batch_size}"
        )));
    }
    let order = epoch_order(examples.len(), seed, epoch);
    let size = if examples.len() < batch_size {
        if examples.len() < 2 {
            return Err(Error::Contract("split has fewer than 2 examples".into()));
        }
        examples.len()
    } else {
        batch_size
    };
    let n_batches = examples.len() / size;
    Ok((0..n_batches).map(move |b| {
        let picked: Vec<&Example> = order[b * size..(b + 1) * size].iter().map(|&i| &examples[i]).collect();
        let longest = picked
            .iter()
            .map(|e| e.features.frames())
            .max()
            .unwrap_or(0)
            .min(max_frames);
        Batch {
            ids: picked.iter().map(|e| e.id.clone()).collect(),
            features: picked.iter().map(|e| pad_or_truncate(&e.features, longest)).collect(),
            scores: picked.iter().map(|e| e.score).collect(),
        }
    }))
}
