//! Versioned JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "uvnet-checkpoint",
//!   "version": 1,
//!   "model": { "in_channels": 3, "out_channels": 2, "base_f": 8, "depth": 2, "seed": 0 },
//!   "params": [ { "name": "stem.weight", "shape": [8, 3, 3, 3], "values": [ ... ] }, ... ],
//!   "metadata": { ... }
//! }
//! ```
//!
//! Values are written as 64-bit reals regardless of the training precision.
//! Parameters appear in construction order; loading matches them by name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};
use crate::uvnet::{UVNet, UVNetConfig};

pub const CHECKPOINT_FORMAT: &str = "uvnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 4],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: UVNetConfig,
    pub params: Vec<ParamRecord>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model<T: Real>(net: &UVNet<T>, metadata: serde_json::Value) -> Self {
        let params = net
            .params()
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: p.shape().dims(),
                values: p.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: *net.config(),
            params,
            metadata,
        }
    }

    /// Rebuilds the network topology from the stored config and loads every weight.
    pub fn to_model<T: Real>(&self) -> Result<UVNet<T>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut net = UVNet::<T>::build(self.model)?;
        if net.params().len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model config implies {}",
                self.params.len(),
                net.params().len()
            )));
        }
        for rec in &self.params {
            let id = net
                .params()
                .id(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {:?}", rec.name)))?;
            let p = net.params_mut().get_mut(id);
            let shape = Shape::from_dims(rec.shape);
            if p.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?}: stored shape {} but model expects {}",
                    rec.name,
                    shape,
                    p.shape()
                )));
            }
            p.value = Tensor::from_vec(shape, rec.values.iter().map(|&v| T::lit(v)).collect())?;
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UVNetConfig {
        UVNetConfig {
            in_channels: 3,
            out_channels: 2,
            base_f: 4,
            depth: 1,
            seed: 42,
        }
    }

    #[test]
    fn roundtrip_preserves_weights() {
        let net = UVNet::<f64>::build(small()).unwrap();
        let ck = Checkpoint::from_model(&net, serde_json::json!({"epoch": 3}));
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let net2 = back.to_model::<f64>().unwrap();
        for (a, b) in net.params().iter().zip(net2.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn rejects_version_and_shape_mismatch() {
        let net = UVNet::<f32>::build(small()).unwrap();
        let mut ck = Checkpoint::from_model(&net, serde_json::Value::Null);
        ck.version = 99;
        assert!(ck.to_model::<f32>().is_err());
        ck.version = CHECKPOINT_VERSION;
        ck.params[0].shape = [1, 1, 1, 1];
        assert!(ck.to_model::<f32>().is_err());
        let mut ck = Checkpoint::from_model(&net, serde_json::Value::Null);
        ck.params[1].name = "nope".into();
        assert!(ck.to_model::<f32>().is_err());
    }
}
