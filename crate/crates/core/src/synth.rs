//! Deterministic synthetic corpus: harmonic "speech" with planted breath
//! bursts, four spoof styles, waveform augmentation, and the on-disk
//! corpus layout (WAV files, manifest, breath annotation file).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::breathmask::{write_annotations, BreathIntervals, Waveform, SAMPLE_RATE, TARGET_SAMPLES};
use crate::dsp;
use crate::error::{config, input, Error, Result};
use crate::metrics::Label;

const SR: f64 = SAMPLE_RATE as f64;
const NOISE_FLOOR: f64 = 1e-3;
const COMB_GAIN: f64 = 0.5;
const LOWPASS_HZ: f64 = 4000.0;
const LOWPASS_TAPS: usize = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofStyle {
    NoBreath,
    CombArtifact,
    Lowpass,
    BreathRemoved,
}

impl SpoofStyle {
    pub const ALL: [SpoofStyle; 4] =
        [SpoofStyle::NoBreath, SpoofStyle::CombArtifact, SpoofStyle::Lowpass, SpoofStyle::BreathRemoved];

    /// Styles whose cue is the absence of breath sounds.
    pub fn is_breath_style(self) -> bool {
        matches!(self, SpoofStyle::NoBreath | SpoofStyle::BreathRemoved)
    }

    fn name(self) -> &'static str {
        match self {
            SpoofStyle::NoBreath => "no_breath",
            SpoofStyle::CombArtifact => "comb_artifact",
            SpoofStyle::Lowpass => "lowpass",
            SpoofStyle::BreathRemoved => "breath_removed",
        }
    }
}

impl fmt::Display for SpoofStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpoofStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| input(format!("unknown spoof style '{s}'")))
    }
}

/// Style column of the manifest: `bonafide` or a spoof style.
pub const BONAFIDE_STYLE: &str = "bonafide";

/// Derive an independent per-item seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn raised_cosine(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos())
}

/// Separately rendered parts of one synthetic utterance.
struct Parts {
    voice: Vec<f64>,
    breath: Vec<f64>,
    floor: Vec<f64>,
    intervals: Vec<(f64, f64)>,
    /// Peak normalization gain applied when mixing.
    gain: f64,
}

enum Segment {
    Phrase(usize),
    Pause { len: usize, breath: Option<(usize, usize)> },
}

fn secs(x: f64) -> usize {
    (x * SR).round() as usize
}

fn render_phrase(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let n = out.len();
    let f0 = rng.random_range(100.0..250.0);
    let drift_rate = rng.random_range(0.5..2.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let syllable_rate = rng.random_range(3.0..6.0);
    let formants = [
        (rng.random_range(500.0..900.0), 150.0),
        (rng.random_range(1000.0..2000.0), 250.0),
        (rng.random_range(2300.0..3000.0), 350.0),
    ];
    let nyq = SR / 2.0 - 200.0;
    let max_k = (nyq / (f0 * 1.1)).floor().max(1.0) as usize;
    let amps: Vec<f64> = (1..=max_k)
        .map(|k| {
            let f = k as f64 * f0;
            let emph: f64 = formants.iter().map(|&(fc, bw)| 2.0 * (-((f - fc) / bw).powi(2)).exp()).sum();
            (1.0 + emph) / k as f64
        })
        .collect();
    let edge = secs(0.03).min(n / 2).max(1);
    let mut phase = rng.random_range(0.0..2.0 * PI);
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / SR;
        let f = f0 * (1.0 + 0.06 * (2.0 * PI * drift_rate * t + drift_phase).sin()) * (1.0 + 0.003 * normal(rng));
        phase = (phase + 2.0 * PI * f / SR) % (2.0 * PI);
        // sin(k phase) by the Chebyshev recurrence
        let c2 = 2.0 * phase.cos();
        let (mut prev, mut cur) = (0.0, phase.sin());
        let mut acc = 0.0;
        for &a in &amps {
            acc += a * cur;
            let next = c2 * cur - prev;
            prev = cur;
            cur = next;
        }
        let syll = 0.6 + 0.4 * (PI * syllable_rate * t).sin().abs();
        let ramp = if i < edge {
            0.5 - 0.5 * (PI * i as f64 / edge as f64).cos()
        } else if i >= n - edge {
            0.5 - 0.5 * (PI * (n - 1 - i) as f64 / edge as f64).cos()
        } else {
            1.0
        };
        let aspiration = 0.02 * normal(rng);
        *o = ramp * syll * (acc * 0.25 + aspiration);
    }
}

fn render(seed: u64, samples: usize, with_breath: bool) -> Parts {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Timings are laid out for the 4 s target and compressed for shorter clips.
    let scale = (samples as f64 / TARGET_SAMPLES as f64).min(1.0);
    let secs = |x: f64| secs(x * scale);
    let phrases = rng.random_range(2..=4usize);
    // Pause slots: a leading pause plus one between consecutive phrases.
    let slots = phrases;
    let breaths = if with_breath { rng.random_range(1..=slots.min(3)) } else { 0 };
    let mut breath_slots: Vec<usize> = (0..slots).collect();
    breath_slots.shuffle(&mut rng);
    breath_slots.truncate(breaths);

    let mut pauses = Vec::with_capacity(slots);
    for s in 0..slots {
        if breath_slots.contains(&s) {
            let b = secs(rng.random_range(0.15..0.4));
            let (g1, g2) = (secs(rng.random_range(0.03..0.08)), secs(rng.random_range(0.03..0.08)));
            pauses.push(Segment::Pause { len: g1 + b + g2, breath: Some((g1, b)) });
        } else {
            pauses.push(Segment::Pause { len: secs(rng.random_range(0.1..0.25)), breath: None });
        }
    }
    let tail = secs(rng.random_range(0.05..0.15));
    let used: usize = pauses.iter().map(|p| if let Segment::Pause { len, .. } = p { *len } else { 0 }).sum::<usize>() + tail;
    let speech = samples.saturating_sub(used);
    let weights: Vec<f64> = (0..phrases).map(|_| rng.random_range(0.7..1.3)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut lens: Vec<usize> = weights.iter().map(|w| (w / wsum * speech as f64).floor() as usize).collect();
    let short = speech - lens.iter().sum::<usize>();
    lens[0] += short;

    let mut layout = Vec::with_capacity(2 * phrases);
    for (p, len) in pauses.into_iter().zip(lens) {
        layout.push(p);
        layout.push(Segment::Phrase(len));
    }

    let mut voice = vec![0.0; samples];
    let mut breath = vec![0.0; samples];
    let mut intervals = Vec::new();
    let mut pos = 0;
    let band = dsp::bandpass_kernel(500.0, 2000.0, 257, SR);
    for seg in layout {
        match seg {
            Segment::Phrase(len) => {
                render_phrase(&mut rng, &mut voice[pos..pos + len]);
                pos += len;
            }
            Segment::Pause { len, breath: b } => {
                if let Some((offset, blen)) = b {
                    let noise: Vec<f64> = (0..blen + 256).map(|_| normal(&mut rng)).collect();
                    let shaped = dsp::fir_same(&noise, &band);
                    let shaped = &shaped[128..128 + blen];
                    let level = rng.random_range(0.05..0.12) / dsp::rms(shaped).max(1e-12);
                    let start = pos + offset;
                    for ((o, &v), e) in breath[start..start + blen].iter_mut().zip(shaped).zip(raised_cosine(blen)) {
                        *o = level * v * e;
                    }
                    // Stored at the 6-decimal precision of the text formats.
                    let at = |i: usize| (i as f64 / SR * 1e6).round() / 1e6;
                    intervals.push((at(start), at(start + blen)));
                }
                pos += len;
            }
        }
    }
    let floor: Vec<f64> = (0..samples).map(|_| NOISE_FLOOR * normal(&mut rng)).collect();
    let peak_target = rng.random_range(0.5..0.8);
    let peak = voice.iter().zip(&breath).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max).max(1e-9);
    Parts { voice, breath, floor, intervals, gain: peak_target / peak }
}

impl Parts {
    fn mix(&self, breath_scale: f64) -> Vec<f64> {
        self.voice
            .iter()
            .zip(&self.breath)
            .zip(&self.floor)
            .map(|((v, b), f)| self.gain * (v + breath_scale * b) + f)
            .collect()
    }
}

fn check_duration(duration: f64) -> Result<usize> {
    if !(duration >= 1.0 && duration.is_finite()) {
        return Err(config(format!("synthetic utterances need at least 1 s, got {duration}")));
    }
    Ok(secs(duration))
}

/// Bona fide utterance with 1-3 breath bursts planted in pauses.
pub fn gen_bonafide(seed: u64, duration: f64) -> Result<(Waveform, BreathIntervals)> {
    let n = check_duration(duration)?;
    let parts = render(seed, n, true);
    Ok((Waveform::new(parts.mix(1.0), SAMPLE_RATE)?, BreathIntervals::new(parts.intervals)?))
}

/// Delay of the comb artifact for a given seed, in samples.
pub fn comb_delay(seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xc0, 0)).random_range(8..=24)
}

fn clamp_unit(x: Vec<f64>) -> Vec<f64> {
    x.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// Spoof utterance plus the breath spans it still contains.
pub fn gen_spoof_annotated(seed: u64, duration: f64, style: SpoofStyle) -> Result<(Waveform, BreathIntervals)> {
    let n = check_duration(duration)?;
    let (samples, spans) = match style {
        SpoofStyle::NoBreath => (render(seed, n, false).mix(0.0), Vec::new()),
        SpoofStyle::BreathRemoved => {
            // Same layout as the bona fide render; breath replaced by a dip in the floor.
            let mut parts = render(seed, n, true);
            for &(s, e) in &parts.intervals {
                let (a, b) = (secs(s), secs(e));
                for (f, w) in parts.floor[a..b].iter_mut().zip(raised_cosine(b - a)) {
                    *f *= 1.0 - 0.7 * w;
                }
            }
            (parts.mix(0.0), Vec::new())
        }
        SpoofStyle::CombArtifact => {
            let parts = render(seed, n, true);
            let x = parts.mix(1.0);
            let p = comb_delay(seed);
            let mut y: Vec<f64> = (0..n).map(|i| x[i] + if i >= p { COMB_GAIN * x[i - p] } else { 0.0 }).collect();
            let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            let target = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            y.iter_mut().for_each(|v| *v *= target / peak);
            (y, parts.intervals)
        }
        SpoofStyle::Lowpass => {
            let parts = render(seed, n, true);
            let h = dsp::lowpass_kernel(LOWPASS_HZ, LOWPASS_TAPS, SR);
            (dsp::fir_same(&parts.mix(1.0), &h), parts.intervals)
        }
    };
    Ok((Waveform::new(clamp_unit(samples), SAMPLE_RATE)?, BreathIntervals::new(spans)?))
}

pub fn gen_spoof(seed: u64, duration: f64, style: SpoofStyle) -> Result<Waveform> {
    gen_spoof_annotated(seed, duration, style).map(|(w, _)| w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawBoostMode {
    Convolutive,
    Impulsive,
    Stationary,
    Series,
}

/// Evaluation channel: untouched or one augmentation mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Clean,
    Convolutive,
    Impulsive,
    Stationary,
    Series,
}

impl Channel {
    pub const ALL: [Channel; 5] =
        [Channel::Clean, Channel::Convolutive, Channel::Impulsive, Channel::Stationary, Channel::Series];

    pub fn mode(self) -> Option<RawBoostMode> {
        match self {
            Channel::Clean => None,
            Channel::Convolutive => Some(RawBoostMode::Convolutive),
            Channel::Impulsive => Some(RawBoostMode::Impulsive),
            Channel::Stationary => Some(RawBoostMode::Stationary),
            Channel::Series => Some(RawBoostMode::Series),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Clean => "clean",
            Channel::Convolutive => "convolutive",
            Channel::Impulsive => "impulsive",
            Channel::Stationary => "stationary",
            Channel::Series => "series",
        }
    }

    pub fn apply(self, w: &Waveform, seed: u64) -> Result<Waveform> {
        match self.mode() {
            None => Ok(w.clone()),
            Some(m) => rawboost_lite(w, m, seed),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| config(format!("unknown channel '{s}'")))
    }
}

/// Causal FIR filtering, output truncated to the input length.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| h.iter().enumerate().take(n + 1).map(|(k, &hk)| hk * x[n - k]).sum())
        .collect()
}

/// White noise at `snr_db` relative to the signal power.
pub fn add_noise_snr(x: &[f64], snr_db: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let power = dsp::energy(x) / x.len() as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    x.iter().map(|&v| v + sigma * normal(rng)).collect()
}

fn convolutive(x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let taps = rng.random_range(5..=15usize);
    let mut h: Vec<f64> = (0..taps).map(|_| normal(rng)).collect();
    // Keep the direct path dominant so the channel colours rather than scrambles.
    h[0] = h[0].abs() + 2.0;
    let norm = dsp::energy(&h).sqrt();
    h.iter_mut().for_each(|v| *v /= norm);
    convolve(x, &h)
}

fn impulsive(x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut y = x.to_vec();
    let count = (x.len() / 200).max(1);
    for _ in 0..count {
        let i = rng.random_range(0..x.len());
        let g = rng.random_range(2.0..5.0);
        y[i] += g * x[i];
    }
    y
}

pub fn rawboost_lite(w: &Waveform, mode: RawBoostMode, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = w.samples();
    let y = match mode {
        RawBoostMode::Convolutive => convolutive(x, &mut rng),
        RawBoostMode::Impulsive => impulsive(x, &mut rng),
        RawBoostMode::Stationary => {
            let snr = rng.random_range(10.0..40.0);
            add_noise_snr(x, snr, &mut rng)
        }
        RawBoostMode::Series => {
            let a = convolutive(x, &mut rng);
            let b = impulsive(&a, &mut rng);
            let snr = rng.random_range(10.0..40.0);
            add_noise_snr(&b, snr, &mut rng)
        }
    };
    Waveform::new(clamp_unit(y), w.sample_rate())
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::create(path, spec).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for &v in w.samples() {
        let q = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.write_sample(q).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    out.finalize().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bad = |e: String| Error::Data(format!("{}: {e}", path.display()));
    let mut r = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(bad(format!("expected 16-bit mono PCM, got {spec:?}")));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(bad(format!("expected {SAMPLE_RATE} Hz, got {}", spec.sample_rate)));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32767.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Waveform::new(samples, SAMPLE_RATE).map_err(|e| bad(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    /// `bonafide` or a spoof style name.
    pub style: String,
    pub intervals: BreathIntervals,
}

impl UtteranceRecord {
    pub fn spoof_style(&self) -> Option<SpoofStyle> {
        self.style.parse().ok()
    }
}

pub fn render_manifest(records: &[UtteranceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.utt_id,
            r.path.display(),
            r.label,
            r.style,
            r.intervals.render()
        ));
    }
    out
}

pub fn write_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    std::fs::write(path, render_manifest(records))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let bad = |why: String| Error::Data(format!("{}:{}: {why}", path.display(), n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, got {}", f.len())));
        }
        let label: Label = f[2].parse().map_err(|e: Error| bad(e.to_string()))?;
        let style_ok = match label {
            Label::Bonafide => f[3] == BONAFIDE_STYLE,
            Label::Spoof => f[3].parse::<SpoofStyle>().is_ok(),
        };
        if !style_ok {
            return Err(bad(format!("style '{}' does not fit label {label}", f[3])));
        }
        let intervals = BreathIntervals::parse(f[4]).map_err(|e| bad(e.to_string()))?;
        out.push(UtteranceRecord {
            utt_id: f[0].to_string(),
            path: PathBuf::from(f[1]),
            label,
            style: f[3].to_string(),
            intervals,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub bonafide: usize,
    pub spoof: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub train: SplitCounts,
    pub eval: SplitCounts,
    pub samples: usize,
    /// Relative weights of `no_breath`, `comb_artifact`, `lowpass`, `breath_removed`.
    pub style_mix: BTreeMap<SpoofStyle, f64>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            train: SplitCounts { bonafide: 1000, spoof: 1000 },
            eval: SplitCounts { bonafide: 250, spoof: 250 },
            samples: TARGET_SAMPLES,
            style_mix: SpoofStyle::ALL.into_iter().map(|s| (s, 1.0)).collect(),
            seed: 0,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ANNOTATION_FILE: &str = "breath.tsv";

/// Exact per-style counts for `total` spoofs (largest remainder).
pub fn style_counts(mix: &BTreeMap<SpoofStyle, f64>, total: usize) -> Result<BTreeMap<SpoofStyle, usize>> {
    let sum: f64 = mix.values().sum();
    if mix.is_empty() || mix.values().any(|&w| !(w >= 0.0) || !w.is_finite()) || sum <= 0.0 {
        return Err(config(format!("invalid spoof style mix {mix:?}")));
    }
    let exact: Vec<(SpoofStyle, f64)> = mix.iter().map(|(&s, &w)| (s, w / sum * total as f64)).collect();
    let mut counts: BTreeMap<SpoofStyle, usize> = exact.iter().map(|&(s, x)| (s, x.floor() as usize)).collect();
    let mut rest: Vec<(SpoofStyle, f64)> = exact.iter().map(|&(s, x)| (s, x - x.floor())).collect();
    rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let missing = total - counts.values().sum::<usize>();
    for (s, _) in rest.into_iter().take(missing) {
        *counts.get_mut(&s).expect("style present") += 1;
    }
    Ok(counts)
}

/// Plan one split: `(utt_id, label, style, seed)` in manifest order.
fn plan_split(spec: &CorpusSpec, name: &str, stream: u64, counts: &SplitCounts) -> Result<Vec<(String, Label, Option<SpoofStyle>, u64)>> {
    let mut kinds: Vec<(Label, Option<SpoofStyle>)> = vec![(Label::Bonafide, None); counts.bonafide];
    for (s, c) in style_counts(&spec.style_mix, counts.spoof)? {
        kinds.extend(std::iter::repeat_n((Label::Spoof, Some(s)), c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream, u64::MAX));
    kinds.shuffle(&mut rng);
    Ok(kinds
        .into_iter()
        .enumerate()
        .map(|(i, (l, s))| (format!("{name}_{i:05}"), l, s, derive_seed(spec.seed, stream, i as u64)))
        .collect())
}

/// Write `<out>/<split>/{wav/*.wav, manifest.tsv, breath.tsv}` for `train` and `eval`.
pub fn generate_corpus(spec: &CorpusSpec, out: &Path) -> Result<BTreeMap<String, Vec<UtteranceRecord>>> {
    let duration = spec.samples as f64 / SR;
    check_duration(duration)?;
    let mut all = BTreeMap::new();
    for (stream, name, counts) in [(1u64, "train", &spec.train), (2, "eval", &spec.eval)] {
        let dir = out.join(name);
        std::fs::create_dir_all(dir.join("wav"))?;
        let mut records = Vec::new();
        for (id, label, style, seed) in plan_split(spec, name, stream, counts)? {
            let (w, iv) = match style {
                None => gen_bonafide(seed, duration)?,
                Some(s) => gen_spoof_annotated(seed, duration, s)?,
            };
            let rel = PathBuf::from("wav").join(format!("{id}.wav"));
            write_wav(&dir.join(&rel), &w)?;
            records.push(UtteranceRecord {
                utt_id: id,
                path: rel,
                label,
                style: style.map_or_else(|| BONAFIDE_STYLE.to_string(), |s| s.to_string()),
                intervals: iv,
            });
        }
        write_manifest(&dir.join(MANIFEST_FILE), &records)?;
        write_annotations(&dir.join(ANNOTATION_FILE), records.iter().map(|r| (r.utt_id.as_str(), &r.intervals)))?;
        let mut f = std::fs::File::create(dir.join("corpus.toml"))?;
        writeln!(f, "# generated by the synthetic corpus writer")?;
        f.write_all(toml::to_string(spec).map_err(|e| config(e.to_string()))?.as_bytes())?;
        all.insert(name.to_string(), records);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::breathmask::{heuristic_breath_detect, intervals_to_mask, FRAME_DURATION};

    const DUR: f64 = TARGET_SAMPLES as f64 / SR;

    #[test]
    fn bonafide_is_deterministic_with_planted_breaths() {
        for seed in 0..6 {
            let (a, ia) = gen_bonafide(seed, DUR).unwrap();
            let (b, ib) = gen_bonafide(seed, DUR).unwrap();
            assert_eq!(a, b);
            assert_eq!(ia, ib);
            assert_eq!(a.len(), TARGET_SAMPLES);
            assert!((1..=3).contains(&ia.len()), "seed {seed}: {} intervals", ia.len());
            let mask = intervals_to_mask(&ia, 201, FRAME_DURATION).unwrap();
            assert!(mask.ones_count() >= 1);
        }
        assert!(gen_bonafide(0, 0.5).is_err());
    }

    #[test]
    fn breaths_sit_in_pauses() {
        for seed in 0..6 {
            let (w, iv) = gen_bonafide(seed, DUR).unwrap();
            let x = w.samples();
            let voiced = dsp::fir_same(x, &dsp::bandpass_kernel(80.0, 400.0, 513, SR));
            let inside: Vec<bool> = (0..x.len())
                .map(|i| iv.spans().iter().any(|&(s, e)| (i as f64 / SR) >= s && (i as f64 / SR) < e))
                .collect();
            let mean_pow = |keep: bool| {
                let v: Vec<f64> = voiced.iter().zip(&inside).filter(|(_, &m)| m == keep).map(|(v, _)| *v).collect();
                dsp::energy(&v) / v.len() as f64
            };
            let gap = dsp::db(mean_pow(false) / mean_pow(true));
            assert!(gap >= 6.0, "seed {seed}: only {gap:.1} dB");
        }
    }

    #[test]
    fn detector_finds_breaths_and_nothing_in_no_breath_audio() {
        for seed in 0..6 {
            let w = gen_spoof(seed, DUR, SpoofStyle::NoBreath).unwrap();
            assert!(heuristic_breath_detect(&w).is_empty(), "seed {seed}");
            let (b, iv) = gen_bonafide(seed, DUR).unwrap();
            let found = heuristic_breath_detect(&b);
            assert!(crate::breathmask::interval_iou(&iv, &found) > 0.3, "seed {seed}: {iv:?} vs {found:?}");
        }
    }

    #[test]
    fn lowpass_removes_high_band() {
        for seed in 0..4 {
            let (b, _) = gen_bonafide(seed, DUR).unwrap();
            let s = gen_spoof(seed, DUR, SpoofStyle::Lowpass).unwrap();
            let hi = |w: &Waveform| dsp::band_energy(w.samples(), SR, 5000.0, 8000.0);
            assert!(dsp::db(hi(&b) / hi(&s)) >= 30.0);
        }
    }

    #[test]
    fn comb_raises_autocorrelation_at_its_delay() {
        for seed in 0..4 {
            let (b, _) = gen_bonafide(seed, DUR).unwrap();
            let s = gen_spoof(seed, DUR, SpoofStyle::CombArtifact).unwrap();
            let p = comb_delay(seed);
            assert!(dsp::normalized_autocorr(s.samples(), p) > dsp::normalized_autocorr(b.samples(), p));
        }
    }

    #[test]
    fn style_names_round_trip() {
        for s in SpoofStyle::ALL {
            assert_eq!(s.to_string().parse::<SpoofStyle>().unwrap(), s);
        }
        assert!(matches!("vocoder".parse::<SpoofStyle>(), Err(Error::Input(_))));
    }

    #[test]
    fn augmentation_modes() {
        let (w, _) = gen_bonafide(3, 1.5).unwrap();
        let x = w.samples();
        let mut h = vec![0.0; 7];
        h[0] = 1.0;
        assert_eq!(convolve(x, &h), x);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = add_noise_snr(x, 20.0, &mut rng);
        let noise: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let snr = dsp::db(dsp::energy(x) / dsp::energy(&noise));
        assert!((snr - 20.0).abs() <= 1.0, "snr {snr}");

        for mode in [RawBoostMode::Convolutive, RawBoostMode::Impulsive, RawBoostMode::Stationary, RawBoostMode::Series] {
            let a = rawboost_lite(&w, mode, 5).unwrap();
            assert_eq!(a, rawboost_lite(&w, mode, 5).unwrap());
            assert!(a.samples().iter().all(|v| v.abs() <= 1.0));
            assert_ne!(a.samples(), x);
        }
    }

    #[test]
    fn style_counts_are_exact() {
        let mix: BTreeMap<SpoofStyle, f64> = SpoofStyle::ALL.into_iter().map(|s| (s, 1.0)).collect();
        let c = style_counts(&mix, 10).unwrap();
        assert_eq!(c.values().sum::<usize>(), 10);
        assert!(c.values().all(|&v| v == 2 || v == 3));
    }

    #[test]
    fn corpus_files_are_reproducible() {
        let spec = CorpusSpec {
            train: SplitCounts { bonafide: 3, spoof: 4 },
            eval: SplitCounts { bonafide: 1, spoof: 2 },
            samples: 16_000,
            ..CorpusSpec::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = generate_corpus(&spec, a.path()).unwrap();
        generate_corpus(&spec, b.path()).unwrap();
        for split in ["train", "eval"] {
            for f in [MANIFEST_FILE, ANNOTATION_FILE] {
                assert_eq!(
                    std::fs::read(a.path().join(split).join(f)).unwrap(),
                    std::fs::read(b.path().join(split).join(f)).unwrap()
                );
            }
            for r in &ra[split] {
                let pa = a.path().join(split).join(&r.path);
                assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(b.path().join(split).join(&r.path)).unwrap());
                assert_eq!(read_wav(&pa).unwrap().len(), 16_000);
            }
        }
        let train = read_manifest(&a.path().join("train").join(MANIFEST_FILE)).unwrap();
        assert_eq!(train, ra["train"]);
        assert_eq!(train.iter().filter(|r| r.label == Label::Bonafide).count(), 3);
        assert_eq!(train.iter().filter(|r| r.label == Label::Spoof).count(), 4);
        for r in &train {
            if r.style == "no_breath" || r.style == "breath_removed" {
                assert!(r.intervals.is_empty());
            }
        }
    }
}
