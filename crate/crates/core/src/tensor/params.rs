use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::array::read_u32;
use crate::tensor::{RngStream, Tensor};

const CONTAINER_MAGIC: &[u8; 4] = b"STNC";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named parameters and buffers (e.g. batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter name {name}");
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    /// Non-trainable state saved with the model.
    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    /// Uniform in `[-limit, limit]`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], limit: f64, rng: &mut RngStream) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_range(-limit, limit)).collect();
        self.add(name, Tensor::from_parts_unchecked(shape.to_vec(), data))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::dim("ParamStore::set", e.value.shape(), value.shape()));
        }
        e.value = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).numel()).sum()
    }

    /// Container layout: `STNC`, u32 count, then per entry u8 trainable,
    /// u32 name length, UTF-8 name, tensor record.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CONTAINER_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&[u8::from(e.trainable)])?;
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            e.value.write_to(w)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CONTAINER_MAGIC {
            return Err(Error::Format(format!("bad container magic {magic:?}")));
        }
        let count = read_u32(r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let value = Tensor::read_from(r)?;
            if store.find(&name).is_some() {
                return Err(Error::Format(format!("duplicate tensor name {name}")));
            }
            store.insert(&name, value, flag[0] != 0);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let mut s = ParamStore::new();
        let mut rng = RngStream::new(0);
        s.add_uniform("block0.attn.wq", &[4, 4], 0.5, &mut rng);
        s.add_buffer("block0.bn.running_mean", Tensor::zeros(&[4]));
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        let back = ParamStore::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, s);
        assert!(!back.is_trainable(back.find("block0.bn.running_mean").unwrap()));
        assert_eq!(back.num_trainable(), 16);
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[2, 2]));
        assert!(s.set(id, Tensor::zeros(&[4])).is_err());
    }
}
