//! The training loop: joint objective, per-epoch checkpoints, early stopping
//! on the epoch-mean training loss, and final checkpoint averaging.

use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{average_checkpoints, Checkpoint};
use super::config::RunConfig;
use super::data::{Dataset, MaskSource};
use super::optim::{AdamW, AdamWConfig};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{augment_bonafide, center_loss, contrast_loss, pscl, weighted_ce_logits, BonaFideCenter, LossWeights};
use crate::metrics::Label;
use crate::model::BreathNet;
use crate::scalar::Scalar;
use crate::synth::derive_seed;

const STREAM_INIT: u64 = 0x11;
const STREAM_ORDER: u64 = 0x5e;
const STREAM_AUG: u64 = 0xa6;

/// Loss components of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ce: f64,
    pub pscl: f64,
    pub center: f64,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean: StepLosses,
    pub steps: usize,
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
    /// Average of the last `average_last` epoch checkpoints; `None` when no
    /// epoch ran.
    pub final_checkpoint: Option<Checkpoint>,
    pub final_path: Option<PathBuf>,
    pub stopped_early: bool,
}

/// True when each of the last `patience` epochs failed to improve on its
/// predecessor.
pub fn should_stop(history: &[f64], patience: usize) -> bool {
    let n = history.len();
    n > patience && (0..patience).all(|k| history[n - 1 - k] >= history[n - 2 - k])
}

pub fn optimizer_config(cfg: &RunConfig) -> AdamWConfig {
    AdamWConfig {
        lr: cfg.lr,
        encoder_lr: cfg.encoder_lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
        clip: cfg.grad_clip,
    }
}

/// Mutable training state owned by the single training thread.
pub struct Trainer<T: Scalar> {
    pub net: BreathNet<T>,
    pub center: BonaFideCenter<T>,
    pub opt: AdamW,
    pub loss: LossWeights,
    seed: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let net = BreathNet::<T>::new(cfg.model(), cfg.ablation(), derive_seed(cfg.seed, STREAM_INIT, 0))?;
        let opt = AdamW::new(optimizer_config(cfg), &net.store);
        let loss = cfg.loss();
        let center = BonaFideCenter::new(cfg.dim, loss.momentum);
        Ok(Self { net, center, opt, loss, seed: cfg.seed })
    }

    /// One optimizer step on a batch. A non-finite loss leaves every piece of
    /// state untouched and returns a numeric error.
    pub fn step(&mut self, waves: &[Vec<f64>], masks: &[crate::breathmask::BreathMask], labels: &[Label]) -> Result<StepLosses> {
        let mut tape = Tape::<T>::new();
        let p = self.net.store.bind(&mut tape);
        let nodes = waves.iter().map(|w| BreathNet::wave_node(&mut tape, w)).collect::<Result<Vec<_>>>()?;
        let fwd = self.net.forward(&mut tape, &p, &nodes, masks, true)?;
        let ce = weighted_ce_logits(&mut tape, fwd.logits, labels, &self.loss)?;

        let pick = |want: Label| -> Vec<Var> {
            labels.iter().zip(&fwd.embeddings).filter(|(&l, _)| l == want).map(|(_, &z)| z).collect()
        };
        let (bona, fakes) = (pick(Label::Bonafide), pick(Label::Spoof));
        let w = &self.loss;
        let mut feat = None::<Var>;
        let mut out = StepLosses::default();
        let value = |tape: &Tape<T>, v: Var| tape.value(v).item().to_f64().unwrap_or(f64::NAN);

        if w.use_pscl {
            let mut views = bona.clone();
            let step_seed = derive_seed(self.seed, STREAM_AUG, self.opt.steps_taken());
            for (i, &z) in bona.iter().enumerate() {
                let zv = tape.value(z).data().to_vec();
                for a in augment_bonafide(&zv, w.delta, w.aug_count, derive_seed(step_seed, i as u64, 0)) {
                    views.push(tape.constant(Tensor::matrix(1, a.len(), a)?));
                }
            }
            if let Some(l) = pscl(&mut tape, &views, w.tau)? {
                out.pscl = value(&tape, l);
                feat = Some(l);
            }
        }
        if self.center.initialized {
            let weighted = [(w.use_center, w.alpha, &bona, true), (w.use_contrast, w.beta, &fakes, false)];
            for (on, coeff, group, is_center) in weighted {
                if !on {
                    continue;
                }
                let term = if is_center {
                    center_loss(&mut tape, group, &self.center)?
                } else {
                    contrast_loss(&mut tape, group, &self.center)?
                };
                if let Some(l) = term {
                    let v = value(&tape, l);
                    if is_center { out.center = v } else { out.contrast = v }
                    let scaled = tape.scale(l, T::lit(coeff));
                    feat = Some(match feat {
                        Some(f) => tape.add(f, scaled)?,
                        None => scaled,
                    });
                }
            }
        }
        out.ce = value(&tape, ce);
        let total = match feat {
            Some(f) => {
                let lf = tape.scale(f, T::lit(w.lambda));
                tape.add(ce, lf)?
            }
            None => ce,
        };
        out.total = value(&tape, total);
        if !out.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: ce={} pscl={} center={} contrast={}",
                self.opt.steps_taken() + 1,
                out.ce,
                out.pscl,
                out.center,
                out.contrast
            )));
        }

        let grads = tape.backward(total)?;
        self.opt.step(&mut self.net.store, &p, &grads)?;
        if !self.net.ablation.no_freq {
            self.net.freq.enforce_cutoffs(&mut self.net.store);
        }
        if let Some(stats) = &fwd.bn_stats {
            self.net.bn.update(stats);
        }
        let mean = (!bona.is_empty()).then(|| {
            let mut acc = vec![T::zero(); self.net.config.dim];
            for &z in &bona {
                for (a, &v) in acc.iter_mut().zip(tape.value(z).data()) {
                    *a += v;
                }
            }
            let n = T::lit(bona.len() as f64);
            acc.into_iter().map(|a| a / n).collect::<Vec<T>>()
        });
        self.center.update(mean.as_deref())?;
        Ok(out)
    }
}

fn mean_losses(steps: &[StepLosses]) -> StepLosses {
    let n = steps.len().max(1) as f64;
    let sum = |f: fn(&StepLosses) -> f64| steps.iter().map(f).sum::<f64>() / n;
    StepLosses { total: sum(|s| s.total), ce: sum(|s| s.ce), pscl: sum(|s| s.pscl), center: sum(|s| s.center), contrast: sum(|s| s.contrast) }
}

/// Seeded visiting order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ORDER, epoch as u64)));
    idx
}

pub fn train<T: Scalar>(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;
    let data = Dataset::open(&cfg.train_manifest)?;
    if data.is_empty() {
        return Err(Error::Data(format!("{}: no training utterances", cfg.train_manifest.display())));
    }
    let masks = MaskSource::open(cfg.mask_mode, &cfg.train_annotations)?;
    let mut tr = Trainer::<T>::new(cfg)?;
    let mut epochs = Vec::new();
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut kept = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let order = epoch_order(cfg.seed, epoch, data.len());
        let mut steps = Vec::new();
        let mut skipped = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut waves = Vec::with_capacity(chunk.len());
            let mut ms = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let r = &data.records[i];
                match data.samples(i, cfg.samples) {
                    Ok(w) => {
                        ms.push(masks.mask(&r.utt_id, cfg.samples)?);
                        waves.push(w);
                        labels.push(r.label);
                    }
                    Err(e) => {
                        warn!("{}: skipped ({e})", r.utt_id);
                        skipped += 1;
                    }
                }
            }
            if waves.is_empty() {
                continue;
            }
            match tr.step(&waves, &ms, &labels) {
                Ok(s) => steps.push(s),
                Err(e @ Error::Numeric(_)) => {
                    let path = cfg.out_dir.join("last_good.json");
                    Checkpoint::capture(&tr.net, &tr.center, epoch - 1, &history).save(&path)?;
                    return Err(Error::Numeric(format!("epoch {epoch}: {e}; last good state kept in {}", path.display())));
                }
                Err(e) => return Err(e),
            }
        }
        let mean = mean_losses(&steps);
        history.push(mean.total);
        let log = EpochLog { epoch, mean, steps: steps.len(), skipped, seconds: t0.elapsed().as_secs_f64() };
        info!(
            "epoch {epoch}: loss {:.6} (ce {:.6}, pscl {:.6}, center {:.6}, contrast {:.6}) {} steps, {:.1}s",
            mean.total, mean.ce, mean.pscl, mean.center, mean.contrast, log.steps, log.seconds
        );
        epochs.push(log);
        let ck = Checkpoint::capture(&tr.net, &tr.center, epoch, &history);
        let path = cfg.out_dir.join(format!("epoch_{epoch:03}.json"));
        ck.save(&path)?;
        checkpoints.push(path);
        kept.push(ck);
        if kept.len() > cfg.average_last {
            kept.remove(0);
        }
        if should_stop(&history, cfg.patience) {
            info!("training loss did not improve for {} epochs; stopping", cfg.patience);
            stopped_early = true;
            break;
        }
    }

    let (final_checkpoint, final_path) = if kept.is_empty() {
        (None, None)
    } else {
        let avg = average_checkpoints(&kept)?;
        let path = cfg.out_dir.join("final.json");
        avg.save(&path)?;
        (Some(avg), Some(path))
    };
    Ok(TrainOutcome { epochs, checkpoints, final_checkpoint, final_path, stopped_early })
}
