//! Run configuration: one flat TOML table, every key overridable with
//! `--key value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::breathmask::MaskMode;
use crate::error::{config, Result};
use crate::losses::LossWeights;
use crate::metrics::DcfParams;
use crate::model::{Ablation, ModelConfig};
use crate::synth::Channel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // model
    pub layers: usize,
    pub dim: usize,
    pub filters: usize,
    pub taps: usize,
    pub stride: usize,
    pub heads: usize,
    pub lstm_hidden: Vec<usize>,
    pub film_hidden: usize,
    pub pre_emphasis: f64,
    pub samples: usize,
    pub no_film: bool,
    pub no_freq: bool,
    // loss
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub delta: f64,
    pub aug_count: usize,
    pub w_bona: f64,
    pub w_spoof: f64,
    pub momentum: f64,
    pub use_pscl: bool,
    pub use_center: bool,
    pub use_contrast: bool,
    // optimizer
    pub lr: f64,
    pub encoder_lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub average_last: usize,
    // run
    pub seed: u64,
    pub precision: Precision,
    pub train_manifest: PathBuf,
    pub train_annotations: PathBuf,
    pub eval_manifest: PathBuf,
    pub eval_annotations: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub mask_mode: MaskMode,
    pub channels: Vec<Channel>,
    pub c_miss: f64,
    pub c_fa: f64,
    pub prior: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::desk();
        let l = LossWeights::default();
        Self {
            layers: m.layers,
            dim: m.dim,
            filters: m.filters,
            taps: m.taps,
            stride: m.stride,
            heads: m.heads,
            lstm_hidden: m.lstm_hidden,
            film_hidden: m.film_hidden,
            pre_emphasis: m.pre_emphasis,
            samples: m.samples,
            no_film: false,
            no_freq: false,
            lambda: l.lambda,
            alpha: l.alpha,
            beta: l.beta,
            tau: l.tau,
            delta: l.delta,
            aug_count: l.aug_count,
            w_bona: l.w_bona,
            w_spoof: l.w_spoof,
            momentum: l.momentum,
            use_pscl: l.use_pscl,
            use_center: l.use_center,
            use_contrast: l.use_contrast,
            lr: 1e-5,
            encoder_lr: 1e-6,
            weight_decay: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.0,
            batch_size: 10,
            max_epochs: 50,
            patience: 2,
            average_last: 3,
            seed: 0,
            precision: Precision::F32,
            train_manifest: PathBuf::from("data/train/manifest.tsv"),
            train_annotations: PathBuf::from("data/train/breath.tsv"),
            eval_manifest: PathBuf::from("data/eval/manifest.tsv"),
            eval_annotations: PathBuf::from("data/eval/breath.tsv"),
            out_dir: PathBuf::from("runs/default"),
            checkpoint: PathBuf::from("runs/default/final.json"),
            mask_mode: MaskMode::Normal,
            channels: vec![Channel::Clean],
            c_miss: 1.0,
            c_fa: 10.0,
            prior: 0.05,
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            dim: self.dim,
            filters: self.filters,
            taps: self.taps,
            stride: self.stride,
            heads: self.heads,
            lstm_hidden: self.lstm_hidden.clone(),
            film_hidden: self.film_hidden,
            pre_emphasis: self.pre_emphasis,
            sample_rate: crate::breathmask::SAMPLE_RATE,
            samples: self.samples,
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation { no_film: self.no_film, no_freq: self.no_freq }
    }

    pub fn loss(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            delta: self.delta,
            aug_count: self.aug_count,
            w_bona: self.w_bona,
            w_spoof: self.w_spoof,
            momentum: self.momentum,
            use_pscl: self.use_pscl,
            use_center: self.use_center,
            use_contrast: self.use_contrast,
        }
    }

    pub fn dcf(&self) -> DcfParams {
        DcfParams { c_miss: self.c_miss, c_fa: self.c_fa, prior: self.prior }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.loss().validate()?;
        let rates = [
            ("lr", self.lr),
            ("encoder_lr", self.encoder_lr),
            ("adam_eps", self.adam_eps),
        ];
        for (k, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return Err(config("weight_decay and grad_clip must be >= 0"));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(config("Adam moment coefficients must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(config("patience must be >= 1"));
        }
        if self.average_last == 0 {
            return Err(config("average_last must be >= 1"));
        }
        if self.channels.is_empty() {
            return Err(config("channels must list at least one evaluation channel"));
        }
        self.dcf_checked()?;
        Ok(())
    }

    fn dcf_checked(&self) -> Result<()> {
        let d = self.dcf();
        if !(d.c_miss > 0.0 && d.c_fa > 0.0 && d.prior > 0.0 && d.prior < 1.0) {
            return Err(config(format!("invalid detection cost parameters {d:?}")));
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `--key value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match Value::try_from(Self::default()).map_err(|e| config(e.to_string()))? {
            Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| config(format!("cannot read {}: {e}", p.display())))?;
            let file: Table = text.parse().map_err(|e| config(format!("{}: {e}", p.display())))?;
            for (k, v) in file {
                if !table.contains_key(&k) {
                    return Err(config(format!("{}: unknown key '{k}'", p.display())));
                }
                table.insert(k, v);
            }
        }
        for (k, raw) in overrides {
            let key = k.replace('-', "_");
            let current = table.get(&key).ok_or_else(|| config(format!("unknown option --{k}")))?;
            let v = parse_like(current, raw).map_err(|why| config(format!("--{k} {raw}: {why}")))?;
            table.insert(key, v);
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(e.to_string()))
    }
}

/// Parse `raw` into the TOML type of `like`; arrays take comma lists.
fn parse_like(like: &Value, raw: &str) -> std::result::Result<Value, String> {
    Ok(match like {
        Value::Boolean(_) => Value::Boolean(raw.parse().map_err(|_| "expected true or false")?),
        Value::Integer(_) => Value::Integer(raw.parse().map_err(|_| "expected an integer")?),
        Value::Float(_) => Value::Float(raw.parse().map_err(|_| "expected a number")?),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(items) => {
            let proto = items.first().cloned().unwrap_or(Value::String(String::new()));
            let parts: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            Value::Array(parts.into_iter().map(|p| parse_like(&proto, p)).collect::<std::result::Result<_, _>>()?)
        }
        other => return Err(format!("unsupported value type {}", other.type_str())),
    })
}
