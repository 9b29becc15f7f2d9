//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "T3SCCKPT" | u32 version | u32 len + config text (TOML)
//! u64 step | u64 seed | u64 adam_t
//! u32 count | count x ( u32 len + name | u8 dtype | u32 ndim | ndim x u64 | payload )
//! ```
//!
//! `dtype` is 1 for f32 and 2 for f64. Optimizer moments are stored as the
//! tensors `adam.m.<param>` and `adam.v.<param>`. Every random draw of a
//! training step is keyed by `(seed, step)`, so the pair is the complete
//! generator state.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, T3sc};
use crate::tensor::{Real, Tensor};
use crate::train::{Adam, TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"T3SCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: T3sc<T>,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub adam: Option<Adam<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_model(model: T3sc<T>) -> Self {
        Checkpoint {
            model,
            train: None,
            step: 0,
            adam: None,
        }
    }

    pub fn from_trainer(t: &Trainer<T>) -> Self {
        Checkpoint {
            model: t.model.clone(),
            train: Some(t.config.clone()),
            step: t.step,
            adam: Some(t.adam.clone()),
        }
    }

    /// Trainer resuming at the saved step, with `config` replacing the
    /// stored training settings when given.
    pub fn into_trainer(self, config: Option<TrainConfig>) -> Result<Trainer<T>> {
        let config = config
            .or(self.train)
            .ok_or_else(|| Error::State("checkpoint carries no training configuration".into()))?;
        let mut t = Trainer::new(self.model, config)?;
        t.step = self.step;
        if let Some(mut a) = self.adam {
            a.beta1 = t.config.adam_beta1;
            a.beta2 = t.config.adam_beta2;
            a.eps = t.config.adam_eps;
            t.adam = a;
        }
        Ok(t)
    }

    pub fn config_text(&self) -> Result<String> {
        let snap = Snapshot {
            model: self.model.config.clone(),
            train: self.train.clone(),
        };
        toml::to_string(&snap).map_err(|e| Error::Format(format!("config serialization: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = self.config_text()?;
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let seed = self.train.as_ref().map_or(0, |t| t.seed);
        out.extend_from_slice(&seed.to_le_bytes());
        out.extend_from_slice(&self.adam.as_ref().map_or(0, |a| a.t).to_le_bytes());

        let mut tensors: Vec<(String, &Tensor<T>)> = self
            .model
            .parameters()
            .into_iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        if let Some(a) = &self.adam {
            tensors.extend(a.m.iter().map(|(k, v)| (format!("adam.m.{k}"), v)));
            tensors.extend(a.v.iter().map(|(k, v)| (format!("adam.v.{k}"), v)));
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_tensor(&mut out, t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "checkpoint magic")? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: "T3SCCKPT" });
        }
        let version = r.u32("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config text")?)
            .map_err(|_| Error::Format("config text is not UTF-8".into()))?;
        let snap: Snapshot =
            toml::from_str(text).map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        let step = r.u64("step")?;
        let _seed = r.u64("seed")?;
        let adam_t = r.u64("optimizer step")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let t = read_tensor(&mut r)?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }

        let mut model = T3sc::<T>::new(snap.model, 0)?;
        let mut missing = Vec::new();
        for p in model.parameters_mut() {
            match tensors.remove(&p.name) {
                Some(t) if t.shape() == p.value.shape() => p.value = t,
                Some(t) => return Err(Error::dim("checkpoint", t.shape(), p.value.shape())),
                None => missing.push(p.name.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingParameters(missing));
        }
        let mut adam = snap
            .train
            .as_ref()
            .map(|c| Adam::<T>::from_config(c))
            .unwrap_or_else(|| Adam::new(0.9, 0.999, 1e-8));
        adam.t = adam_t;
        let mut has_moments = false;
        for (name, t) in tensors {
            if let Some(k) = name.strip_prefix("adam.m.") {
                adam.m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                adam.v.insert(k.to_string(), t);
            } else {
                return Err(Error::Format(format!("unexpected tensor {name:?}")));
            }
            has_moments = true;
        }
        Ok(Checkpoint {
            model,
            train: snap.train,
            step,
            adam: (has_moments || adam_t > 0).then_some(adam),
        })
    }
}

fn dtype_code<T: Real>() -> u8 {
    match std::mem::size_of::<T>() {
        4 => 1,
        _ => 2,
    }
}

fn write_tensor<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.push(dtype_code::<T>());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        if dtype_code::<T>() == 1 {
            out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
        }
    }
}

fn read_tensor<T: Real>(r: &mut Reader) -> Result<Tensor<T>> {
    let code = r.take(1, "tensor dtype")?[0];
    if code != 1 && code != 2 {
        return Err(Error::UnknownDtype(code));
    }
    if code != dtype_code::<T>() {
        return Err(Error::Format(format!(
            "tensor dtype {code} does not match the requested precision"
        )));
    }
    let ndim = r.u32("tensor rank")? as usize;
    let mut shape = Vec::with_capacity(ndim.min(8));
    for _ in 0..ndim {
        shape.push(r.u64("tensor shape")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor shape overflows".into()))?;
    let width = if code == 1 { 4 } else { 8 };
    let payload = r.take(n.checked_mul(width).unwrap_or(usize::MAX), "tensor payload")?;
    let data: Vec<T> = payload
        .chunks_exact(width)
        .map(|b| {
            if code == 1 {
                T::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap()
            } else {
                T::from_f64(f64::from_le_bytes(b.try_into().unwrap())).unwrap()
            }
        })
        .collect();
    Tensor::new(&shape, data)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Truncated {
                what,
                needed: n,
                found: self.bytes.len() - self.pos,
            }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let path = path.as_ref();
    // write-then-rename keeps the previous checkpoint intact on failure
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eager;
    use crate::model::SensorSpec;

    fn small() -> T3sc<f32> {
        let cfg = ModelConfig {
            sensors: vec![SensorSpec {
                id: "a".into(),
                bands: 5,
            }],
            p1: 4,
            p2: 6,
            rank: 2,
            side: 3,
            t1: 2,
            t2: 2,
            estimator: true,
            estimator_tile: 8,
            ..ModelConfig::default()
        };
        T3sc::new(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_forward_is_bitwise() {
        let m = small();
        let bytes = Checkpoint::from_model(m.clone()).to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        let y = Tensor::from_fn(&[5, 9, 9], |i| ((i * 31) % 17) as f32 / 17.0);
        let a = m.forward(&Eager, &y, "a", None).unwrap();
        let b = back.model.forward(&Eager, &y, "a", None).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.to_bytes_checked(), bytes);
    }

    impl Checkpoint<f32> {
        fn to_bytes_checked(&self) -> Vec<u8> {
            self.to_bytes().unwrap()
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = Checkpoint::from_model(small()).to_bytes().unwrap();
        bytes[8] = 9;
        let err = Checkpoint::<f32>::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 9, expected: 1 }));
    }

    #[test]
    fn missing_parameter_is_named() {
        let m = small();
        let mut ck = Checkpoint::from_model(m);
        ck.model.spatial.theta.name = "renamed".into();
        let bytes = ck.to_bytes().unwrap();
        match Checkpoint::<f32>::from_bytes(&bytes) {
            Err(Error::MissingParameters(names)) => assert_eq!(names, vec!["spatial.lambda".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = Checkpoint::from_model(small()).to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(b"NOTACKPT...."),
            Err(Error::BadMagic { .. })
        ));
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }
}
