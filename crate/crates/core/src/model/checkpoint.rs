use std::io::{Read, Write};
use std::path::Path;

use crate::config::{feature_entries, parse_kv, parse_value, render_kv, set_feature};
use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, StochasticTransformer, TargetScaling};
use crate::tensor::ParamStore;

const MAGIC: &[u8; 8] = b"STCKPT01";

/// A trained model plus the feature settings its inputs were made with.
///
/// Layout: `STCKPT01`, u64 LE header length, key-sorted `key=value` header
/// text (model, feature and target-scaling fields), then the named-tensor
/// container.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: StochasticTransformer,
    pub feature: FeatureConfig,
}

impl Checkpoint {
    pub fn header(&self) -> String {
        let mut e: Vec<(String, String)> = Vec::new();
        e.extend(
            self.model
                .config()
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("model.{k}"), v)),
        );
        e.extend(
            feature_entries(&self.feature)
                .into_iter()
                .map(|(k, v)| (format!("feature.{k}"), v)),
        );
        let s = self.model.scaling();
        e.push(("target.shift".into(), s.shift.to_string()));
        e.push(("target.scale".into(), s.scale.to_string()));
        render_kv(e)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = self.header();
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        self.model.params().write_to(w)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(Error::Format(format!(
                "checkpoint header of {len} bytes is implausible"
            )));
        }
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|e| Error::Format(e.to_string()))?;

        let mut cfg = ModelConfig::default();
        let mut feature = FeatureConfig::default();
        let mut scaling = TargetScaling::default();
        for (k, v) in parse_kv(&text)? {
            match k.split_once('.') {
                Some(("model", key)) => cfg.set(key, &v)?,
                Some(("feature", key)) => set_feature(&mut feature, key, &v)?,
                Some(("target", "shift")) => scaling.shift = parse_value(&k, &v)?,
                Some(("target", "scale")) => scaling.scale = parse_value(&k, &v)?,
                _ => return Err(Error::Format(format!("unknown checkpoint header key {k}"))),
            }
        }
        let params = ParamStore::read_from(r)?;
        let model = StochasticTransformer::with_params(cfg, params, scaling)?;
        Ok(Self { model, feature })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut &bytes[..])
    }
}
