//! Self-describing checkpoints and checkpoint averaging.
//!
//! Values are stored as `f64` in JSON; `f32` models widen losslessly, so a
//! save/load round trip is bit-exact for either scalar.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::mean_anchored;
use crate::diff::Tensor;
use crate::error::{input, Error, Result};
use crate::freq::BnState;
use crate::losses::BonaFideCenter;
use crate::model::{Ablation, BreathNet, ModelConfig};
use crate::params::ParamGroup;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    /// Scalar type of the model that wrote it.
    pub scalar: String,
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    pub params: Vec<NamedTensor>,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
    pub center: Vec<f64>,
    pub center_initialized: bool,
    pub center_momentum: f64,
}

fn widen<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
}

fn narrow<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

impl Checkpoint {
    pub fn capture<T: Scalar>(net: &BreathNet<T>, center: &BonaFideCenter<T>, epoch: usize, loss_history: &[f64]) -> Self {
        Self {
            scalar: T::NAME.to_string(),
            model: net.config.clone(),
            ablation: net.ablation,
            epoch,
            loss_history: loss_history.to_vec(),
            params: net
                .store
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.value.shape().to_vec(),
                    values: widen(p.value.data()),
                })
                .collect(),
            bn_mean: widen(&net.bn.mean),
            bn_var: widen(&net.bn.var),
            center: widen(&center.c),
            center_initialized: center.initialized,
            center_momentum: center.momentum,
        }
    }

    /// Rebuild the network and center. Every stored tensor must match the
    /// freshly constructed model by name and shape.
    pub fn restore<T: Scalar>(&self) -> Result<(BreathNet<T>, BonaFideCenter<T>)> {
        let mut net = BreathNet::<T>::new(self.model.clone(), self.ablation, 0)?;
        if net.store.len() != self.params.len() {
            return Err(input(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                net.store.len()
            )));
        }
        for t in &self.params {
            let id = net.store.find(&t.name).ok_or_else(|| input(format!("unexpected tensor '{}'", t.name)))?;
            let slot = net.store.get_mut(id);
            if slot.shape() != t.shape.as_slice() || t.values.len() != slot.len() {
                return Err(input(format!("tensor '{}': shape {:?} does not fit {:?}", t.name, t.shape, slot.shape())));
            }
            *slot = Tensor::new(t.shape.clone(), narrow(&t.values))?;
        }
        if self.bn_mean.len() != net.bn.mean.len() || self.bn_var.len() != net.bn.var.len() {
            return Err(input("tensor 'bn_running': channel count mismatch"));
        }
        net.bn = BnState { mean: narrow(&self.bn_mean), var: narrow(&self.bn_var) };
        if self.center.len() != self.model.dim {
            return Err(input(format!("tensor 'center': {} values for dim {}", self.center.len(), self.model.dim)));
        }
        let center = BonaFideCenter { c: narrow(&self.center), momentum: self.center_momentum, initialized: self.center_initialized };
        Ok((net, center))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(format!("checkpoint serialization: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.partial");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

fn same_len(name: &str, parts: &[&[f64]]) -> Result<()> {
    if parts.iter().any(|p| p.len() != parts[0].len()) {
        return Err(input(format!("tensor '{name}': sizes differ across checkpoints")));
    }
    Ok(())
}

/// Unweighted mean over the given list (duplicates count again). Epoch is
/// the latest input epoch; the loss history is the one of that checkpoint.
pub fn average_checkpoints(list: &[Checkpoint]) -> Result<Checkpoint> {
    let first = list.first().ok_or_else(|| input("no checkpoints to average"))?;
    for c in &list[1..] {
        if c.model != first.model || c.ablation != first.ablation {
            return Err(input("tensor 'config': checkpoints come from different model configurations"));
        }
        if c.params.len() != first.params.len() {
            return Err(input(format!("checkpoints hold {} and {} tensors", first.params.len(), c.params.len())));
        }
    }
    let mut params = Vec::with_capacity(first.params.len());
    for (k, t0) in first.params.iter().enumerate() {
        let mut parts = Vec::with_capacity(list.len());
        for c in list {
            let t = &c.params[k];
            if t.name != t0.name || t.shape != t0.shape {
                return Err(input(format!("tensor '{}': {:?} vs '{}' {:?}", t0.name, t0.shape, t.name, t.shape)));
            }
            parts.push(t.values.as_slice());
        }
        params.push(NamedTensor { values: mean_anchored(&parts), ..t0.clone() });
    }
    let avg = |name: &str, f: fn(&Checkpoint) -> &Vec<f64>| -> Result<Vec<f64>> {
        let parts: Vec<&[f64]> = list.iter().map(|c| f(c).as_slice()).collect();
        same_len(name, &parts)?;
        Ok(mean_anchored(&parts))
    };
    let latest = list.iter().max_by_key(|c| c.epoch).expect("non-empty");
    Ok(Checkpoint {
        scalar: first.scalar.clone(),
        model: first.model.clone(),
        ablation: first.ablation,
        epoch: latest.epoch,
        loss_history: latest.loss_history.clone(),
        params,
        bn_mean: avg("bn_mean", |c| &c.bn_mean)?,
        bn_var: avg("bn_var", |c| &c.bn_var)?,
        center: avg("center", |c| &c.center)?,
        center_initialized: list.iter().any(|c| c.center_initialized),
        center_momentum: first.center_momentum,
    })
}
