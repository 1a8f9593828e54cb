//! Breath annotations, duration normalization and frame-level breath masks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{input, Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// Fixed input length (about 4.04 s at 16 kHz).
pub const TARGET_SAMPLES: usize = 64_600;
/// Encoder hop over sample rate: 320 / 16000.
pub const FRAME_DURATION: f64 = 0.02;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(input("empty waveform"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(input(format!("non-finite sample at index {i}")));
        }
        if sample_rate == 0 {
            return Err(input("sample rate must be positive"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Breath segments in seconds, kept sorted and non-overlapping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BreathIntervals(Vec<(f64, f64)>);

impl BreathIntervals {
    /// Validates each pair and merges overlapping or touching segments.
    pub fn new(mut spans: Vec<(f64, f64)>) -> Result<Self> {
        for &(s, e) in &spans {
            if !(s.is_finite() && e.is_finite()) || s < 0.0 {
                return Err(input(format!("invalid breath interval ({s}, {e})")));
            }
            if e <= s {
                return Err(input(format!("breath interval end {e} is not after start {s}")));
            }
        }
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
        for (s, e) in spans {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Ok(Self(merged))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn spans(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.0.iter().map(|(s, e)| e - s).sum()
    }

    /// Annotation-file rendering: `s:e,s:e` or `-`.
    pub fn render(&self) -> String {
        if self.0.is_empty() {
            return "-".to_string();
        }
        self.0.iter().map(|(s, e)| format!("{s:.6}:{e:.6}")).collect::<Vec<_>>().join(",")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "-" || text.is_empty() {
            return Ok(Self::empty());
        }
        let mut spans = Vec::new();
        for part in text.split(',') {
            let (s, e) = part
                .split_once(':')
                .ok_or_else(|| input(format!("malformed interval `{part}` (expected start:end)")))?;
            let s: f64 = s.trim().parse().map_err(|_| input(format!("bad interval start `{s}`")))?;
            let e: f64 = e.trim().parse().map_err(|_| input(format!("bad interval end `{e}`")))?;
            spans.push((s, e));
        }
        Self::new(spans)
    }
}

/// Frame-level breath indicator aligned with encoder frames.
#[derive(Clone, Debug, PartialEq)]
pub struct BreathMask {
    bits: Vec<bool>,
    frame_duration: f64,
}

impl BreathMask {
    pub fn new(bits: Vec<bool>, frame_duration: f64) -> Self {
        Self { bits, frame_duration }
    }

    pub fn from_bits(bits: &str, frame_duration: f64) -> Self {
        Self::new(bits.chars().map(|c| c == '1').collect(), frame_duration)
    }

    pub fn zeros(len: usize, frame_duration: f64) -> Self {
        Self::new(vec![false; len], frame_duration)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_duration
    }

    pub fn ones_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Inference-time mask override.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Normal,
    Zeros,
    Ones,
}

impl MaskMode {
    pub const ALL: [MaskMode; 3] = [MaskMode::Normal, MaskMode::Zeros, MaskMode::Ones];
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Normal => "normal",
            MaskMode::Zeros => "zeros",
            MaskMode::Ones => "ones",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(MaskMode::Normal),
            "zeros" => Ok(MaskMode::Zeros),
            "ones" => Ok(MaskMode::Ones),
            other => Err(Error::Config(format!("unknown mask mode `{other}` (normal|zeros|ones)"))),
        }
    }
}

/// Truncate, or repeat cyclically, to exactly `target_samples`.
pub fn normalize_duration(w: &Waveform, target_samples: usize) -> Result<Waveform> {
    if target_samples == 0 {
        return Err(input("target length must be at least one sample"));
    }
    let src = w.samples();
    let out: Vec<f64> = src.iter().copied().cycle().take(target_samples).collect();
    Waveform::new(out, w.sample_rate())
}

/// Frame `t` is marked when the intervals cover at least half of
/// `[t * frame_duration, (t + 1) * frame_duration)`.
pub fn intervals_to_mask(iv: &BreathIntervals, frames: usize, frame_duration: f64) -> Result<BreathMask> {
    if frames == 0 {
        return Err(input("mask needs at least one frame"));
    }
    if !(frame_duration > 0.0) {
        return Err(input(format!("frame duration must be positive, got {frame_duration}")));
    }
    let slack = 1e-9 * frame_duration;
    let bits = (0..frames)
        .map(|t| {
            let (fs, fe) = (t as f64 * frame_duration, (t + 1) as f64 * frame_duration);
            let covered: f64 = iv
                .spans()
                .iter()
                .map(|&(s, e)| (e.min(fe) - s.max(fs)).max(0.0))
                .sum();
            covered + slack >= 0.5 * frame_duration
        })
        .collect();
    Ok(BreathMask::new(bits, frame_duration))
}

pub fn override_mask(m: &BreathMask, mode: MaskMode) -> BreathMask {
    match mode {
        MaskMode::Normal => m.clone(),
        MaskMode::Zeros => BreathMask::new(vec![false; m.len()], m.frame_duration()),
        MaskMode::Ones => BreathMask::new(vec![true; m.len()], m.frame_duration()),
    }
}

/// Thresholds for [`heuristic_breath_detect`].
#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub band: (f64, f64),
    pub frame: usize,
    pub hop: usize,
    /// Percentile of band energies used as the reference level.
    pub energy_percentile: f64,
    /// Frames must exceed the reference level plus this offset (dB).
    pub relative_threshold_db: f64,
    pub absolute_floor: f64,
    /// Frames with a normalized autocorrelation peak at or above this are voiced.
    pub max_harmonicity: f64,
    pub pitch_range_hz: (f64, f64),
    pub merge_gap: f64,
    pub min_duration: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            band: (500.0, 2000.0),
            frame: 640,
            hop: 160,
            energy_percentile: 90.0,
            relative_threshold_db: -25.0,
            absolute_floor: 1e-7,
            max_harmonicity: 0.5,
            pitch_range_hz: (60.0, 400.0),
            merge_gap: 0.05,
            min_duration: 0.06,
        }
    }
}

/// Energy/harmonicity breath detector for the synthetic corpus.
pub fn heuristic_breath_detect(w: &Waveform) -> BreathIntervals {
    heuristic_breath_detect_with(w, &DetectorConfig::default())
}

pub fn heuristic_breath_detect_with(w: &Waveform, cfg: &DetectorConfig) -> BreathIntervals {
    let sr = w.sample_rate() as f64;
    let x = w.samples();
    if x.len() < cfg.frame {
        return BreathIntervals::empty();
    }
    let band = dsp::fir_same(x, &dsp::bandpass_kernel(cfg.band.0, cfg.band.1, 257, sr));
    let n_frames = (x.len() - cfg.frame) / cfg.hop + 1;
    let energies: Vec<f64> = (0..n_frames)
        .map(|i| dsp::energy(&band[i * cfg.hop..i * cfg.hop + cfg.frame]) / cfg.frame as f64)
        .collect();
    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((cfg.energy_percentile / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    let reference = sorted[rank.min(sorted.len() - 1)];
    let threshold = (reference * 10f64.powf(cfg.relative_threshold_db / 10.0)).max(cfg.absolute_floor);
    let lags = (sr / cfg.pitch_range_hz.1).round() as usize..=(sr / cfg.pitch_range_hz.0).round() as usize;

    let hits: Vec<bool> = (0..n_frames)
        .map(|i| {
            energies[i] > threshold && {
                let frame = &x[i * cfg.hop..i * cfg.hop + cfg.frame];
                dsp::autocorr_peak(frame, lags.clone()) < cfg.max_harmonicity
            }
        })
        .collect();

    // Each frame is credited with the hop-sized span around its centre.
    let centre = (cfg.frame - cfg.hop) / 2;
    let mut spans: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < n_frames {
        if !hits[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n_frames && hits[i] {
            i += 1;
        }
        let s = (start * cfg.hop + centre) as f64 / sr;
        let e = ((i - 1) * cfg.hop + centre + cfg.hop) as f64 / sr;
        match spans.last_mut() {
            Some(last) if s - last.1 < cfg.merge_gap => last.1 = e,
            _ => spans.push((s, e)),
        }
    }
    spans.retain(|(s, e)| e - s >= cfg.min_duration);
    BreathIntervals::new(spans).expect("detector spans are ordered and positive")
}

/// Intersection over union of two interval sets.
pub fn interval_iou(a: &BreathIntervals, b: &BreathIntervals) -> f64 {
    let inter: f64 = a
        .spans()
        .iter()
        .flat_map(|&(s1, e1)| b.spans().iter().map(move |&(s2, e2)| (e1.min(e2) - s1.max(s2)).max(0.0)))
        .sum();
    let union = a.total_duration() + b.total_duration() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

thread_local! {
    static ANNOTATION_OPENS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Annotation files opened by [`read_annotations`] on the calling thread.
pub fn annotation_opens() -> usize {
    ANNOTATION_OPENS.with(|c| c.get())
}

/// Read an annotation file: `<utt_id>\t<start>:<end>[,...]` or `-` per line.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<String, BreathIntervals>> {
    ANNOTATION_OPENS.with(|c| c.set(c.get() + 1));
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open breath annotations {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, spans) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected `<utt_id>\\t<intervals>`", path.display(), n + 1)))?;
        let iv = BreathIntervals::parse(spans)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.insert(id.to_string(), iv);
    }
    Ok(out)
}

pub fn write_annotations<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a BreathIntervals)>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, iv) in entries {
        writeln!(f, "{id}\t{}", iv.render())?;
    }
    f.flush()?;
    Ok(())
}
