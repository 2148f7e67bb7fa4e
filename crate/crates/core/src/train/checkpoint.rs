//! Self-contained model artifact and its bit-exact JSON encoding.
//!
//! Every float is stored as the 16 hex digits of its IEEE-754 bit pattern.
//! Each top-level section carries a sha256 of its canonical JSON, so a
//! damaged file names the section that no longer verifies.

use std::fs;
use std::path::Path;

use serde::de::{self, DeserializeOwned};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::features::{ClusterModel, FeatureMask};
use crate::model::{ModelDims, ModelParameters, ParamName};
use crate::numcore::{Shape, Tensor};

use super::config::TrainConfig;
use super::offline::EpochRecord;

pub const FORMAT_VERSION: u32 = 1;

/// Everything fixed before training starts.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSetup {
    pub dims: ModelDims,
    pub features: FeatureMask,
    pub scaler: Scaler,
    /// Present exactly when the similarity feature is enabled.
    pub clusters: Option<ClusterModel>,
}

impl ModelSetup {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let n_c = self.clusters.as_ref().map_or(0, ClusterModel::n_clusters);
        if self.features.similarity != self.clusters.is_some() {
            return Err(Error::Config("similarity features require a cluster model".into()));
        }
        if let Some(c) = &self.clusters {
            c.validate()?;
        }
        if self.dims.in_dim != self.features.row_width() || self.dims.q_dim != self.features.q_dim(n_c) {
            return Err(Error::Config(format!(
                "model dims {:?} do not match feature mask {:?} with {n_c} clusters",
                self.dims, self.features
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub setup: ModelSetup,
    pub params: ModelParameters,
    pub train_config: TrainConfig,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn dims(&self) -> &ModelDims {
        &self.setup.dims
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let doc = Document::from(self);
        let mut out = Map::new();
        out.insert("format_version".into(), Value::from(FORMAT_VERSION));
        seal(&mut out, "dims", &doc.dims)?;
        seal(&mut out, "features", &doc.features)?;
        seal(&mut out, "scaler", &doc.scaler)?;
        seal(&mut out, "cluster_centers", &doc.cluster_centers)?;
        let params: Vec<Value> = doc.params.iter().map(sealed_value).collect::<Result<_>>()?;
        out.insert("params".into(), Value::Array(params));
        seal(&mut out, "train_config", &doc.train_config)?;
        seal(&mut out, "history", &doc.history)?;
        let mut bytes = serde_json::to_vec(&Value::Object(out)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let root: Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(format!("malformed document: {e}")))?;
        let Value::Object(mut root) = root else {
            return Err(Error::Checkpoint("document is not a JSON object".into()));
        };
        let version = root
            .remove("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let dims: ModelDims = unseal(&mut root, "dims")?;
        let features: FeatureMask = unseal(&mut root, "features")?;
        let scaler: ScalerDoc = unseal(&mut root, "scaler")?;
        let clusters: Option<ClusterDoc> = unseal(&mut root, "cluster_centers")?;
        let Some(Value::Array(raw_params)) = root.remove("params") else {
            return Err(Error::Checkpoint("missing field `params`".into()));
        };
        let mut params = Vec::with_capacity(raw_params.len());
        for (i, v) in raw_params.into_iter().enumerate() {
            let label = v
                .get("name")
                .and_then(Value::as_str)
                .map_or_else(|| format!("params[{i}]"), |n| format!("params.{n}"));
            params.push(unseal_value::<ParamDoc>(v, &label)?);
        }
        let train_config: TrainConfigDoc = unseal(&mut root, "train_config")?;
        let history: Vec<EpochDoc> = unseal(&mut root, "history")?;
        if let Some(k) = root.keys().next() {
            return Err(Error::Checkpoint(format!("unknown field `{k}`")));
        }
        Document {
            dims,
            features,
            scaler,
            cluster_centers: clusters,
            params,
            train_config,
            history,
        }
        .into_checkpoint()
    }

    /// sha256 of the serialized form, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn digest(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn sealed_value<T: Serialize>(section: &T) -> Result<Value> {
    let v = serde_json::to_value(section).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let sum = digest(&v);
    Ok(match v {
        Value::Object(mut m) => {
            m.insert("sha256".into(), Value::String(sum));
            Value::Object(m)
        }
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m.insert("sha256".into(), Value::String(sum));
            Value::Object(m)
        }
    })
}

fn seal<T: Serialize>(out: &mut Map<String, Value>, key: &str, section: &T) -> Result<()> {
    out.insert(key.into(), sealed_value(section)?);
    Ok(())
}

fn unseal_value<T: DeserializeOwned>(v: Value, field: &str) -> Result<T> {
    let bad = |what: String| Error::Checkpoint(format!("field `{field}`: {what}"));
    let Value::Object(mut m) = v else {
        return Err(bad("expected an object".into()));
    };
    let Some(Value::String(sum)) = m.remove("sha256") else {
        return Err(bad("missing sha256".into()));
    };
    let body = if m.len() == 1 && m.contains_key("value") {
        m.remove("value").expect("checked")
    } else {
        Value::Object(m)
    };
    if digest(&body) != sum {
        return Err(bad("checksum mismatch (file is corrupted)".into()));
    }
    serde_json::from_value(body).map_err(|e| bad(e.to_string()))
}

fn unseal<T: DeserializeOwned>(root: &mut Map<String, Value>, key: &str) -> Result<T> {
    let v = root
        .remove(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing field `{key}`")))?;
    unseal_value(v, key)
}

/// An `f64` written as its big-endian bit pattern in hex.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Hex(f64);

impl Serialize for Hex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0.to_bits()))
    }
}

impl<'de> Deserialize<'de> for Hex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(de::Error::custom(format!("float `{s}` is not 16 hex digits")));
        }
        u64::from_str_radix(&s, 16)
            .map(|bits| Hex(f64::from_bits(bits)))
            .map_err(|_| de::Error::custom(format!("float `{s}` is not hex")))
    }
}

fn hexes(v: &[f64]) -> Vec<Hex> {
    v.iter().copied().map(Hex).collect()
}

fn floats(v: &[Hex]) -> Vec<f64> {
    v.iter().map(|h| h.0).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalerDoc {
    min_value: Hex,
    max_value: Hex,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterDoc {
    centers: Vec<Vec<Hex>>,
    final_objective: Hex,
    iterations_run: usize,
    objective_history: Vec<Hex>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDoc {
    name: String,
    shape: Vec<usize>,
    data: Vec<Hex>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfigDoc {
    lambda_perturb: Hex,
    lr_offline: Hex,
    lr_online: Hex,
    batch_size: usize,
    max_epochs_offline: usize,
    patience_offline: usize,
    max_epochs_online: usize,
    tolerance_online: usize,
    validation_fraction: Hex,
    early_stop_epsilon: Hex,
    seed: u64,
    clip_norm: Option<Hex>,
    forget_bias_one: bool,
    online_perturbed: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochDoc {
    epoch: usize,
    train_loss: Hex,
    validation_loss: Hex,
}

struct Document {
    dims: ModelDims,
    features: FeatureMask,
    scaler: ScalerDoc,
    cluster_centers: Option<ClusterDoc>,
    params: Vec<ParamDoc>,
    train_config: TrainConfigDoc,
    history: Vec<EpochDoc>,
}

impl From<&Checkpoint> for Document {
    fn from(c: &Checkpoint) -> Self {
        let t = &c.train_config;
        Document {
            dims: c.setup.dims,
            features: c.setup.features,
            scaler: ScalerDoc {
                min_value: Hex(c.setup.scaler.min_value),
                max_value: Hex(c.setup.scaler.max_value),
            },
            cluster_centers: c.setup.clusters.as_ref().map(|k| ClusterDoc {
                centers: k.centers.iter().map(|r| hexes(r)).collect(),
                final_objective: Hex(k.final_objective),
                iterations_run: k.iterations_run,
                objective_history: hexes(&k.objective_history),
            }),
            params: c
                .params
                .iter()
                .map(|(name, t)| ParamDoc {
                    name: name.as_str().to_string(),
                    shape: t.shape().dims(),
                    data: hexes(t.data()),
                })
                .collect(),
            train_config: TrainConfigDoc {
                lambda_perturb: Hex(t.lambda_perturb),
                lr_offline: Hex(t.lr_offline),
                lr_online: Hex(t.lr_online),
                batch_size: t.batch_size,
                max_epochs_offline: t.max_epochs_offline,
                patience_offline: t.patience_offline,
                max_epochs_online: t.max_epochs_online,
                tolerance_online: t.tolerance_online,
                validation_fraction: Hex(t.validation_fraction),
                early_stop_epsilon: Hex(t.early_stop_epsilon),
                seed: t.seed,
                clip_norm: t.clip_norm.map(Hex),
                forget_bias_one: t.forget_bias_one,
                online_perturbed: t.online_perturbed,
            },
            history: c
                .history
                .iter()
                .map(|h| EpochDoc {
                    epoch: h.epoch,
                    train_loss: Hex(h.train_loss),
                    validation_loss: Hex(h.validation_loss),
                })
                .collect(),
        }
    }
}

impl Document {
    fn into_checkpoint(self) -> Result<Checkpoint> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut named = Vec::with_capacity(self.params.len());
        for p in self.params {
            let name = ParamName::parse(&p.name).ok_or_else(|| bad(format!("unknown parameter `{}`", p.name)))?;
            let shape = Shape::from_dims(&p.shape)
                .ok_or_else(|| bad(format!("params.{}: invalid shape {:?}", p.name, p.shape)))?;
            if shape != name.shape(&self.dims) {
                return Err(bad(format!(
                    "params.{}: shape {shape} does not match model dims ({})",
                    p.name,
                    name.shape(&self.dims)
                )));
            }
            let t = Tensor::from_vec(shape, floats(&p.data)).map_err(|e| bad(format!("params.{}: {e}", p.name)))?;
            named.push((name, t));
        }
        let params = ModelParameters::from_named(self.dims, named).map_err(|e| bad(e.to_string()))?;
        let clusters = self.cluster_centers.map(|k| ClusterModel {
            centers: k.centers.iter().map(|r| floats(r)).collect(),
            final_objective: k.final_objective.0,
            iterations_run: k.iterations_run,
            objective_history: floats(&k.objective_history),
        });
        let t = self.train_config;
        let setup = ModelSetup {
            dims: self.dims,
            features: self.features,
            scaler: Scaler {
                min_value: self.scaler.min_value.0,
                max_value: self.scaler.max_value.0,
            },
            clusters,
        };
        setup.validate().map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint {
            setup,
            params,
            train_config: TrainConfig {
                lambda_perturb: t.lambda_perturb.0,
                lr_offline: t.lr_offline.0,
                lr_online: t.lr_online.0,
                batch_size: t.batch_size,
                max_epochs_offline: t.max_epochs_offline,
                patience_offline: t.patience_offline,
                max_epochs_online: t.max_epochs_online,
                tolerance_online: t.tolerance_online,
                validation_fraction: t.validation_fraction.0,
                early_stop_epsilon: t.early_stop_epsilon.0,
                seed: t.seed,
                clip_norm: t.clip_norm.map(|h| h.0),
                forget_bias_one: t.forget_bias_one,
                online_perturbed: t.online_perturbed,
            },
            history: self
                .history
                .into_iter()
                .map(|h| EpochRecord {
                    epoch: h.epoch,
                    train_loss: h.train_loss.0,
                    validation_loss: h.validation_loss.0,
                })
                .collect(),
        })
    }
}
