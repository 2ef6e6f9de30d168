//! A network wrapped with its input/output normalization, and its JSON
//! checkpoint form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::loss::{Objective, Sample};
use super::mlp::{Dense, Mlp};
use super::normalize::AffineMap;
use super::spec::NetSpec;
use super::train::{train, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input: AffineMap,
    pub output: AffineMap,
}

/// Network operating in the raw (denormalized) domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Regressor<T> {
    net: Mlp<T>,
    norm: Normalization,
}

impl<T: Scalar> Regressor<T> {
    pub fn new(net: Mlp<T>, norm: Normalization) -> Result<Self> {
        norm.input.validate()?;
        norm.output.validate()?;
        if norm.input.dim() != net.spec().input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input normalization",
                expected: net.spec().input_dim(),
                got: norm.input.dim(),
            });
        }
        if norm.output.dim() != net.spec().output_dim() {
            return Err(Error::DimensionMismatch {
                context: "output normalization",
                expected: net.spec().output_dim(),
                got: norm.output.dim(),
            });
        }
        Ok(Self { net, norm })
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    /// Maps raw samples into the normalized training domain.
    pub fn encode_samples(norm: &Normalization, raw: &[Sample<T>]) -> Result<Vec<Sample<T>>> {
        raw.iter()
            .map(|s| {
                Ok(Sample::new(
                    norm.input.encode(&s.input)?,
                    norm.output.encode(&s.target)?,
                    s.weight,
                ))
            })
            .collect()
    }

    /// Trains on raw-domain samples. Reported losses are in the normalized
    /// domain.
    pub fn fit<O: Objective<T>>(
        spec: &NetSpec,
        norm: Normalization,
        raw: &[Sample<T>],
        cfg: &TrainConfig,
        objective: &O,
    ) -> Result<(Self, TrainOutcome<T>)> {
        let encoded = Self::encode_samples(&norm, raw)?;
        let outcome = train(spec, &encoded, cfg, objective)?;
        let reg = Self::new(outcome.params.clone(), norm)?;
        Ok((reg, outcome))
    }

    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        let x = self.norm.input.encode(input)?;
        let y = self.net.forward(&x)?;
        self.norm.output.decode(&y)
    }

    pub fn to_checkpoint(&self, best_val_loss: f64, meta: BTreeMap<String, serde_json::Value>) -> Checkpoint<T> {
        Checkpoint {
            spec: self.net.spec().clone(),
            normalization: self.norm.clone(),
            layers: self.net.layers().to_vec(),
            seed: self.net.seed(),
            best_val_loss,
            meta,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let net = Mlp::from_layers(&ck.spec, ck.layers.clone(), ck.seed)?;
        Self::new(net, ck.normalization.clone())
    }
}

/// On-disk form of a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Checkpoint<T> {
    pub spec: NetSpec,
    pub normalization: Normalization,
    pub layers: Vec<Dense<T>>,
    pub seed: u64,
    pub best_val_loss: f64,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        Regressor::from_checkpoint(&ck)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{OutputActivation, WeightedL1};

    fn norm() -> Normalization {
        Normalization {
            input: AffineMap::uniform(2, 0.0, 1.0).unwrap(),
            output: AffineMap::uniform(1, -1.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = NetSpec::new(vec![2, 6, 1], OutputActivation::Sigmoid).unwrap();
        let reg = Regressor::new(Mlp::<f64>::init(&spec, 4).unwrap(), norm()).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), serde_json::json!("idm"));
        let ck = reg.to_checkpoint(0.125, meta);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::<f64>::load(&path).unwrap();
        assert_eq!(back, ck);
        let reg2 = Regressor::from_checkpoint(&back).unwrap();
        assert_eq!(reg2.predict(&[0.3, 0.6]).unwrap(), reg.predict(&[0.3, 0.6]).unwrap());
    }

    #[test]
    fn checkpoint_fields() {
        let spec = NetSpec::new(vec![2, 1], OutputActivation::Identity).unwrap();
        let reg = Regressor::new(Mlp::<f64>::zeros(&spec).unwrap(), norm()).unwrap();
        let v = serde_json::to_value(reg.to_checkpoint(0.0, BTreeMap::new())).unwrap();
        for k in ["spec", "normalization", "layers", "seed", "best_val_loss"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn mismatched_normalization_is_rejected() {
        let spec = NetSpec::new(vec![3, 1], OutputActivation::Identity).unwrap();
        assert!(Regressor::new(Mlp::<f64>::zeros(&spec).unwrap(), norm()).is_err());
        let mut ck = Regressor::new(
            Mlp::<f64>::zeros(&NetSpec::new(vec![2, 1], OutputActivation::Identity).unwrap()).unwrap(),
            norm(),
        )
        .unwrap()
        .to_checkpoint(0.0, BTreeMap::new());
        ck.layers[0].weights.pop();
        assert!(Checkpoint::<f64>::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn fit_in_raw_domain() {
        let raw: Vec<_> = (0..400)
            .map(|i| {
                let x = (i % 20) as f64 / 19.0;
                let y = (i / 20) as f64 / 19.0;
                Sample::unweighted(vec![x, y], vec![x - y])
            })
            .collect();
        let spec = NetSpec::new(vec![2, 16, 1], OutputActivation::Sigmoid).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            epochs: 150,
            learning_rate: 5e-3,
            seed: 2,
            ..Default::default()
        };
        let (reg, _) = Regressor::fit(&spec, norm(), &raw, &cfg, &WeightedL1).unwrap();
        let p = reg.predict(&[0.8, 0.3]).unwrap()[0];
        assert!((p - 0.5).abs() < 0.05, "{p}");
    }
}
