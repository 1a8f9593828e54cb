//! Scoring a manifest with a checkpoint, embedding export and ablation runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::data::{Dataset, MaskSource};
use super::train::train;
use crate::breathmask::{MaskMode, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::metrics::{eer, pooled_breakdown, report, write_scores, Breakdown, Label, MetricsReport, ScoreRecord};
use crate::scalar::Scalar;
use crate::synth::{derive_seed, SpoofStyle};

const STREAM_CHANNEL: u64 = 0xc4;

#[derive(Debug)]
pub struct EvalOutcome {
    pub mode: MaskMode,
    pub scores: Vec<ScoreRecord>,
    pub report: MetricsReport,
    pub breakdown: Breakdown,
    /// Utterances that could not be read.
    pub skipped: usize,
    pub score_path: PathBuf,
}

impl EvalOutcome {
    pub fn render(&self) -> String {
        format!(
            "mask mode: {}\nskipped utterances: {}\n{}\n{}",
            self.mode,
            self.skipped,
            self.report,
            self.breakdown.render_table()
        )
    }
}

/// Per-utterance audio and mask, passed to a scoring callback. Skips
/// unreadable files and returns how many were skipped.
fn for_each_utterance(
    data: &Dataset,
    masks: &MaskSource,
    samples: usize,
    mut f: impl FnMut(usize, Vec<f64>, crate::breathmask::BreathMask) -> Result<()>,
) -> Result<usize> {
    let mut skipped = 0;
    for i in 0..data.len() {
        let r = &data.records[i];
        match data.samples(i, samples) {
            Ok(w) => f(i, w, masks.mask(&r.utt_id, samples)?)?,
            Err(e) => {
                warn!("{}: skipped ({e})", r.utt_id);
                skipped += 1;
            }
        }
    }
    Ok(skipped)
}

fn open_inputs(manifest: &Path, mode: MaskMode, annotations: &Path) -> Result<(Dataset, MaskSource)> {
    let data = Dataset::open(manifest)?;
    if data.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no utterances", manifest.display())));
    }
    let masks = MaskSource::open(mode, annotations)?;
    Ok((data, masks))
}

fn finite<T: Scalar>(x: T, what: &str) -> Result<f64> {
    let v = x.to_f64().unwrap_or(f64::NAN);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what}: non-finite model output")))
    }
}

/// Score every utterance of `cfg.eval_manifest` under each configured
/// channel, write `scores_<mode>.tsv` into `out_dir` and return the metrics.
pub fn evaluate<T: Scalar>(cfg: &RunConfig, ckpt: &Checkpoint, mode: MaskMode, out_dir: &Path) -> Result<EvalOutcome> {
    let (net, _) = ckpt.restore::<T>()?;
    let (data, masks) = open_inputs(&cfg.eval_manifest, mode, &cfg.eval_annotations)?;
    let samples = net.config.samples;
    let mut scores = Vec::new();
    let skipped = for_each_utterance(&data, &masks, samples, |i, w, mask| {
        let r = &data.records[i];
        let clean = Waveform::new(w, SAMPLE_RATE)?;
        for &ch in &cfg.channels {
            let x = ch.apply(&clean, derive_seed(cfg.seed, STREAM_CHANNEL, i as u64))?;
            let xs: Vec<T> = x.samples().iter().map(|&v| T::lit(v)).collect();
            let s = finite(net.infer(&xs, &mask)?.score(), &r.utt_id)?;
            scores.push(ScoreRecord::new(r.utt_id.clone(), r.label, s).with_condition(ch.name()));
        }
        Ok(())
    })?;
    if scores.is_empty() {
        return Err(Error::Data(format!("{}: no readable utterances", cfg.eval_manifest.display())));
    }
    std::fs::create_dir_all(out_dir)?;
    let score_path = out_dir.join(format!("scores_{mode}.tsv"));
    write_scores(&score_path, &scores)?;
    let rep = report(&scores, cfg.dcf())?;
    let breakdown = pooled_breakdown(&scores)?;
    let out = EvalOutcome { mode, scores, report: rep, breakdown, skipped, score_path };
    std::fs::write(out_dir.join(format!("report_{mode}.txt")), out.render())?;
    Ok(out)
}

/// Header plus one `utt_id,label,v_1,...,v_D` line per readable utterance.
pub fn export_embeddings<T: Scalar>(cfg: &RunConfig, ckpt: &Checkpoint, out: &Path) -> Result<usize> {
    let (net, _) = ckpt.restore::<T>()?;
    let (data, masks) = open_inputs(&cfg.eval_manifest, cfg.mask_mode, &cfg.eval_annotations)?;
    let dim = net.config.dim;
    let mut text = String::from("utt_id,label");
    for k in 0..dim {
        write!(text, ",e{k}").expect("string write");
    }
    text.push('\n');
    let mut rows = 0;
    for_each_utterance(&data, &masks, net.config.samples, |i, w, mask| {
        let r = &data.records[i];
        let xs: Vec<T> = w.iter().map(|&v| T::lit(v)).collect();
        let emb = net.infer(&xs, &mask)?.embedding;
        write!(text, "{},{}", r.utt_id, r.label).expect("string write");
        for v in emb {
            write!(text, ",{}", finite(v, &r.utt_id)?).expect("string write");
        }
        text.push('\n');
        rows += 1;
        Ok(())
    })?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, text)?;
    Ok(rows)
}

/// Architectural or loss ablation; `Full` leaves the configuration as is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoFilm,
    NoFreq,
    NoFeatureLoss,
    NoPscl,
    NoCenter,
    NoContrast,
}

impl Variant {
    pub const ALL: [Variant; 7] =
        [Variant::Full, Variant::NoFilm, Variant::NoFreq, Variant::NoFeatureLoss, Variant::NoPscl, Variant::NoCenter, Variant::NoContrast];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFilm => "w/o BreathFiLM",
            Variant::NoFreq => "w/o frequency branch",
            Variant::NoFeatureLoss => "w/o feature loss",
            Variant::NoPscl => "w/o PSCL",
            Variant::NoCenter => "w/o center loss",
            Variant::NoContrast => "w/o contrast loss",
        }
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoFilm => c.no_film = true,
            Variant::NoFreq => c.no_freq = true,
            Variant::NoFeatureLoss => {
                c.use_pscl = false;
                c.use_center = false;
                c.use_contrast = false;
            }
            Variant::NoPscl => c.use_pscl = false,
            Variant::NoCenter => c.use_center = false,
            Variant::NoContrast => c.use_contrast = false,
        }
        c
    }
}

/// Bona fide trials plus the spoofs of the given styles.
pub fn subset_eer(scores: &[ScoreRecord], styles: &[(String, SpoofStyle)], keep: impl Fn(SpoofStyle) -> bool) -> Result<f64> {
    let style_of: std::collections::HashMap<&str, SpoofStyle> = styles.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let sub: Vec<ScoreRecord> = scores
        .iter()
        .filter(|r| r.label == Label::Bonafide || style_of.get(r.utt_id.as_str()).is_some_and(|&s| keep(s)))
        .cloned()
        .collect();
    eer(&sub)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Per seed, in the order given.
    pub pooled: Vec<f64>,
    pub breath: Vec<f64>,
    pub spectral: Vec<f64>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl AblationRow {
    pub fn median_pooled(&self) -> f64 {
        median(&self.pooled)
    }
    pub fn median_breath(&self) -> f64 {
        median(&self.breath)
    }
    pub fn median_spectral(&self) -> f64 {
        median(&self.spectral)
    }
}

/// Train and evaluate each variant for each seed on the same data. Runs land
/// in `<out_dir>/<variant index>_seed<seed>/`.
pub fn ablate<T: Scalar>(cfg: &RunConfig, variants: &[Variant], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let eval_data = Dataset::open(&cfg.eval_manifest)?;
    let styles: Vec<(String, SpoofStyle)> =
        eval_data.records.iter().filter_map(|r| r.spoof_style().map(|s| (r.utt_id.clone(), s))).collect();
    let mut rows = Vec::new();
    for (k, &v) in variants.iter().enumerate() {
        let mut row = AblationRow { variant: v, pooled: vec![], breath: vec![], spectral: vec![] };
        for &seed in seeds {
            let mut c = v.apply(cfg);
            c.seed = seed;
            c.out_dir = cfg.out_dir.join(format!("{k}_seed{seed}"));
            let outcome = train::<T>(&c)?;
            let ck = outcome
                .final_checkpoint
                .ok_or_else(|| Error::Config("ablation needs max_epochs >= 1".into()))?;
            let ev = evaluate::<T>(&c, &ck, MaskMode::Normal, &c.out_dir)?;
            row.pooled.push(ev.report.eer);
            row.breath.push(subset_eer(&ev.scores, &styles, SpoofStyle::is_breath_style)?);
            row.spectral.push(subset_eer(&ev.scores, &styles, |s| !s.is_breath_style())?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Text table of median EERs (percent) per variant.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<24}{:>12}{:>12}{:>12}\n", "variant", "EER(%)", "breath(%)", "spectral(%)");
    for r in rows {
        writeln!(
            s,
            "{:<24}{:>12.2}{:>12.2}{:>12.2}",
            r.variant.name(),
            100.0 * r.median_pooled(),
            100.0 * r.median_breath(),
            100.0 * r.median_spectral()
        )
        .expect("string write");
    }
    s
}
