//! Golden cases produced by `fixtures/oracle.py` and their evaluation
//! against the library.
//!
//! A case compares library outputs with oracle outputs element-wise:
//! `close` within `tolerance`, `at_least` / `at_most` as one-sided bounds.
//! `deferred` cases name criteria measured by the acceptance target.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::breathmask::{heuristic_breath_detect, intervals_to_mask, interval_iou, BreathIntervals, BreathMask, Waveform, FRAME_DURATION, SAMPLE_RATE};
use crate::classifier::{BiLstm, Classifier};
use crate::diff::{randn, Tape, Tensor, Var};
use crate::dsp;
use crate::error::{Error, Result};
use crate::freq::{pre_emphasis, SincBank};
use crate::fusion::CrossAttention;
use crate::losses::{augment_bonafide, contrast_loss_value, pscl_value, weighted_ce, BonaFideCenter, LossWeights};
use crate::metrics::{cllr, eer, min_dcf, pooled_breakdown, DcfParams, Label, ScoreRecord};
use crate::params::{Init, ParamStore};
use crate::synth::{add_noise_snr, comb_delay, gen_bonafide, gen_spoof, SpoofStyle};
use crate::temporal::{BreathFilm, Sls};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Close,
    AtLeast,
    AtMost,
    Deferred,
}

#[derive(Clone, Debug, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    pub check: Check,
    pub tolerance: f64,
    pub inputs: Value,
    pub expected: Vec<f64>,
}

#[derive(Deserialize)]
struct GoldenFile {
    format: u32,
    cases: Vec<GoldenCase>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Deferred,
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub status: Status,
    /// Largest violation of the check (0 when satisfied everywhere).
    pub max_deviation: f64,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct GoldenReport {
    /// Sorted by case name.
    pub results: Vec<CaseResult>,
}

impl GoldenReport {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.status == Status::Fail).count()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let tag = match r.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Deferred => "DEFER",
            };
            s.push_str(&format!("{tag:<6}{:<42}{:>12.3e}  {}\n", r.name, r.max_deviation, r.detail));
        }
        s
    }
}

/// Every case the library is expected to have a fixture for.
pub const REQUIRED: &[&str] = &[
    "ablation_breath_gate_direction",
    "affine_scalar",
    "attention_single_query",
    "augmentation_monte_carlo_mean",
    "bilstm_reversal_symmetry",
    "breakdown_two_conditions",
    "breath_gate_mask_one",
    "breath_gate_mask_zero",
    "breaths_sit_in_pauses_db",
    "cllr_log3",
    "comb_autocorr_excess",
    "contrast_orthonormal_fakes",
    "eer_random_sets_sweep",
    "eer_small_sweep",
    "layer_weighting_hand",
    "lowpass_high_band_drop_db",
    "mask_half_coverage_bits",
    "max_pool_two_bins",
    "mean_pool_rows",
    "min_dcf_all_equal",
    "no_breath_style_detects_nothing",
    "planted_breath_detection_iou",
    "pre_emphasis_recurrence",
    "pscl_identical_triplet",
    "pscl_orthogonal_triplet",
    "sinc_passband_over_stopband_db",
    "sinc_tone_rms_ratio",
    "softmax_row_pair",
    "softmax_rows_finite_difference",
    "stationary_noise_snr_db",
    "tone_440_no_breath",
    "training_loss_decreases_three_epochs",
    "weighted_ce_bonafide",
    "weighted_ce_spoof",
];

pub fn default_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("golden.json")
}

pub fn load_goldens(path: &Path) -> Result<Vec<GoldenCase>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let file: GoldenFile = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if file.format != 1 {
        return Err(Error::Data(format!("{}: unsupported fixture format {}", path.display(), file.format)));
    }
    Ok(file.cases)
}

fn bad(name: &str, what: &str) -> Error {
    Error::Data(format!("fixture {name}: {what}"))
}

fn field<'a>(c: &'a GoldenCase, key: &str) -> Result<&'a Value> {
    c.inputs.get(key).ok_or_else(|| bad(&c.name, &format!("missing input '{key}'")))
}

fn num(c: &GoldenCase, key: &str) -> Result<f64> {
    field(c, key)?.as_f64().ok_or_else(|| bad(&c.name, &format!("'{key}' is not a number")))
}

fn nums(v: &Value, name: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| bad(name, "expected an array"))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| bad(name, "expected numbers")))
        .collect()
}

fn vec_of(c: &GoldenCase, key: &str) -> Result<Vec<f64>> {
    nums(field(c, key)?, &c.name)
}

fn matrix(c: &GoldenCase, key: &str) -> Result<Vec<Vec<f64>>> {
    field(c, key)?
        .as_array()
        .ok_or_else(|| bad(&c.name, &format!("'{key}' is not a matrix")))?
        .iter()
        .map(|r| nums(r, &c.name))
        .collect()
}

fn tensor(rows: &[Vec<f64>]) -> Result<Tensor<f64>> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Tensor::from_rows(&refs)
}

fn trials(bona: &[f64], spoof: &[f64]) -> Vec<ScoreRecord> {
    let b = bona.iter().enumerate().map(|(i, &s)| ScoreRecord::new(format!("b{i}"), Label::Bonafide, s));
    let f = spoof.iter().enumerate().map(|(i, &s)| ScoreRecord::new(format!("s{i}"), Label::Spoof, s));
    b.chain(f).collect()
}

fn seeds(c: &GoldenCase) -> Result<Vec<u64>> {
    Ok(vec_of(c, "seeds")?.into_iter().map(|s| s as u64).collect())
}

const CORPUS_SECONDS: f64 = crate::breathmask::TARGET_SAMPLES as f64 / SAMPLE_RATE as f64;

/// Library-side value of one case.
pub fn compute(c: &GoldenCase) -> Result<Vec<f64>> {
    let name = c.name.as_str();
    let sr = f64::from(SAMPLE_RATE);
    Ok(match name {
        "affine_scalar" => {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(Tensor::scalar(num(c, "x")?));
            let w = tape.constant(Tensor::scalar(num(c, "w")?));
            let b = tape.constant(Tensor::scalar(num(c, "b")?));
            let y = crate::diff::affine(&mut tape, x, w, Some(b))?;
            vec![tape.value(y).item()]
        }
        "softmax_row_pair" => {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(tensor(&[vec_of(c, "row")?])?);
            let y = tape.softmax_rows(x, 1.0);
            tape.value(y).data().to_vec()
        }
        "softmax_rows_finite_difference" => {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(tensor(&matrix(c, "x")?)?);
            let g = tape.constant(tensor(&matrix(c, "upstream")?)?);
            let y = tape.softmax_rows(x, 1.0);
            let prod = tape.mul(y, g)?;
            let mean = tape.mean_all(prod);
            let n = tape.value(prod).len() as f64;
            let total = tape.scale(mean, n);
            tape.backward(total)?.get(x).data().to_vec()
        }
        "pre_emphasis_recurrence" => {
            let w = Waveform::new(vec_of(c, "x")?, SAMPLE_RATE)?;
            pre_emphasis(&w, num(c, "coeff")?)?.into_samples()
        }
        "max_pool_two_bins" => {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(tensor(&matrix(c, "rows")?)?);
            let y = tape.max_pool_cols(x, num(c, "bins")? as usize)?;
            tape.value(y).data().to_vec()
        }
        "mask_half_coverage_bits" => {
            let spans = matrix(c, "spans")?.into_iter().map(|s| (s[0], s[1])).collect();
            let iv = BreathIntervals::new(spans)?;
            let m = intervals_to_mask(&iv, num(c, "frames")? as usize, num(c, "frame_duration")?)?;
            m.bits().iter().map(|&b| f64::from(u8::from(b))).collect()
        }
        "planted_breath_detection_iou" => {
            let pcm = vec_of(c, "pcm16")?;
            let w = Waveform::new(pcm.iter().map(|v| v / 32767.0).collect(), num(c, "sample_rate")? as u32)?;
            let p = vec_of(c, "planted")?;
            let planted = BreathIntervals::new(vec![(p[0], p[1])])?;
            let found = heuristic_breath_detect(&w);
            let overlapping: Vec<(f64, f64)> = found.spans().iter().copied().filter(|&(s, e)| s < p[1] && e > p[0]).collect();
            if overlapping.len() != 1 {
                return Err(bad(name, &format!("{} detected intervals overlap the burst: {:?}", overlapping.len(), found.spans())));
            }
            vec![interval_iou(&planted, &BreathIntervals::new(overlapping)?)]
        }
        "tone_440_no_breath" => {
            let (f, a) = (num(c, "freq")?, num(c, "amplitude")?);
            let n = (num(c, "seconds")? * sr) as usize;
            let w = Waveform::new((0..n).map(|i| a * (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin()).collect(), SAMPLE_RATE)?;
            vec![heuristic_breath_detect(&w).len() as f64]
        }
        "sinc_passband_over_stopband_db" | "sinc_tone_rms_ratio" => {
            let bank = SincBank {
                cutoffs: vec![(num(c, "low")?, num(c, "high")?)],
                taps: num(c, "taps")? as usize,
                stride: 1,
                sample_rate: num(c, "sample_rate")?,
            };
            if name == "sinc_passband_over_stopband_db" {
                let k = bank.kernels::<f64>()?;
                let probe = vec_of(c, "probe")?;
                let mag = |f: f64| dsp::response_magnitude(k.data(), f, bank.sample_rate);
                vec![20.0 * (mag(probe[0]) / mag(probe[1])).log10()]
            } else {
                let tones = vec_of(c, "tones")?;
                let n = num(c, "samples")? as usize;
                let rms = |f: f64| -> Result<f64> {
                    let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / bank.sample_rate).sin()).collect();
                    Ok(dsp::rms(bank.apply(&x)?.data()))
                };
                vec![rms(tones[0])? / rms(tones[1])?]
            }
        }
        "layer_weighting_hand" => {
            let mut store = ParamStore::<f64>::new();
            let sls = Sls::new(&mut store, &mut Init::new(0), 1);
            *store.get_mut(sls.u) = Tensor::scalar(num(c, "u")?);
            *store.get_mut(sls.b) = Tensor::scalar(num(c, "b")?);
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let layers: Vec<Var> = vec_of(c, "layers")?.into_iter().map(|h| tape.constant(Tensor::scalar(h))).collect();
            let out = sls.forward(&mut tape, &p, &layers)?;
            let mut v: Vec<f64> = out.weights.iter().map(|&w| tape.value(w).item()).collect();
            v.push(tape.value(out.features).item());
            v
        }
        "breath_gate_mask_one" | "breath_gate_mask_zero" => {
            let mut store = ParamStore::<f64>::new();
            let film = BreathFilm::new(&mut store, &mut Init::new(0), 1, 1)?;
            *store.get_mut(film.w1) = Tensor::scalar(1.0);
            *store.get_mut(film.w2) = Tensor::scalar(1.0);
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let x = tape.constant(Tensor::scalar(num(c, "x")?));
            let mask = BreathMask::new(vec![num(c, "mask")? != 0.0], FRAME_DURATION);
            let out = film.forward(&mut tape, &p, x, &mask)?;
            vec![tape.value(out.gate).item(), tape.value(out.features).item()]
        }
        "attention_single_query" => {
            // Width 2 so keys and values can differ: column 0 carries keys,
            // column 1 values; the query is pre-scaled by sqrt(2) to cancel
            // the 1/sqrt(d) score scaling.
            let mut store = ParamStore::<f64>::new();
            let att = CrossAttention::new(&mut store, &mut Init::new(0), 2, 1)?;
            let sel = |a: f64, b: f64| Tensor::from_rows(&[&[a, 0.0], &[b, 0.0]]);
            *store.get_mut(att.wq) = sel(1.0, 0.0)?;
            *store.get_mut(att.wk) = sel(1.0, 0.0)?;
            *store.get_mut(att.wv) = sel(0.0, 1.0)?;
            *store.get_mut(att.wo) = sel(1.0, 0.0)?;
            let q = Tensor::from_rows(&[&[num(c, "query")? * 2f64.sqrt(), 0.0]])?;
            let (k, v) = (vec_of(c, "keys")?, vec_of(c, "values")?);
            let kv = tensor(&k.iter().zip(&v).map(|(&a, &b)| vec![a, b]).collect::<Vec<_>>())?;
            let (y, w) = att.apply(&store, &q, &kv)?;
            let mut out = w[0].data().to_vec();
            out.push(y.get(0, 0));
            out
        }
        "bilstm_reversal_symmetry" => {
            let (steps, input, hidden) = (num(c, "steps")? as usize, num(c, "input")? as usize, num(c, "hidden")? as usize);
            let mut store = ParamStore::<f64>::new();
            let layer = BiLstm::new(&mut store, &mut Init::new(3), "l", input, hidden);
            let x = randn::<f64>(steps, input, 9);
            let run = |s: &ParamStore<f64>, x: &Tensor<f64>| -> Result<Tensor<f64>> {
                let mut tape = Tape::new();
                let p = s.bind_frozen(&mut tape);
                let xv = tape.constant(x.clone());
                let y = layer.run(&mut tape, &p, xv)?;
                Ok(tape.value(y).clone())
            };
            let y = run(&store, &x)?;
            let mut swapped = store.clone();
            for (a, b) in [(layer.forward.wx, layer.backward.wx), (layer.forward.wh, layer.backward.wh), (layer.forward.b, layer.backward.b)] {
                *swapped.get_mut(a) = store.get(b).clone();
                *swapped.get_mut(b) = store.get(a).clone();
            }
            let rows: Vec<&[f64]> = (0..steps).rev().map(|r| x.row(r)).collect();
            let yr = run(&swapped, &Tensor::from_rows(&rows)?)?;
            let mut dev: f64 = 0.0;
            for t in 0..steps {
                let (a, b) = (y.row(t), yr.row(steps - 1 - t));
                for k in 0..hidden {
                    dev = dev.max((a[k] - b[hidden + k]).abs()).max((a[hidden + k] - b[k]).abs());
                }
            }
            vec![dev]
        }
        "mean_pool_rows" => {
            let rows = matrix(c, "rows")?;
            let d = rows[0].len();
            let mut store = ParamStore::<f64>::new();
            let cls = Classifier::new(&mut store, &mut Init::new(0), d, &[1])?;
            *store.get_mut(cls.head_w) = Tensor::matrix(d, 2, (0..2 * d).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect())?;
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let seq = tape.constant(tensor(&rows)?);
            let l = cls.pool_and_logits(&mut tape, &p, seq)?;
            tape.value(l).data().to_vec()
        }
        "augmentation_monte_carlo_mean" => {
            let z = vec_of(c, "z")?;
            let draws = augment_bonafide(&z, num(c, "delta")?, num(c, "draws")? as usize, 17);
            (0..z.len()).map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / draws.len() as f64).collect()
        }
        "pscl_identical_triplet" | "pscl_orthogonal_triplet" => vec![pscl_value(&matrix(c, "z")?, num(c, "tau")?)?],
        "contrast_orthonormal_fakes" => {
            let center = BonaFideCenter { c: vec_of(c, "center")?, momentum: 0.9, initialized: true };
            vec![contrast_loss_value(&matrix(c, "fakes")?, &center)?]
        }
        "weighted_ce_bonafide" | "weighted_ce_spoof" => {
            let p = vec_of(c, "probs")?;
            let label: Label = field(c, "label")?.as_str().unwrap_or_default().parse()?;
            vec![weighted_ce(&[[p[0], p[1]]], &[label], &LossWeights::default())?]
        }
        "eer_small_sweep" => vec![eer(&trials(&vec_of(c, "bonafide")?, &vec_of(c, "spoof")?))?],
        "eer_random_sets_sweep" => field(c, "sets")?
            .as_array()
            .ok_or_else(|| bad(name, "'sets' is not an array"))?
            .iter()
            .map(|s| {
                let b = nums(s.get("bonafide").unwrap_or(&Value::Null), name)?;
                let f = nums(s.get("spoof").unwrap_or(&Value::Null), name)?;
                eer(&trials(&b, &f))
            })
            .collect::<Result<_>>()?,
        "min_dcf_all_equal" => vec![min_dcf(&trials(&vec_of(c, "bonafide")?, &vec_of(c, "spoof")?), DcfParams::default())?],
        "cllr_log3" => vec![cllr(&trials(&vec_of(c, "bonafide")?, &vec_of(c, "spoof")?))?],
        "breakdown_two_conditions" => {
            let conds = field(c, "conditions")?.as_object().ok_or_else(|| bad(name, "'conditions' is not a table"))?;
            let mut recs = Vec::new();
            for (cond, v) in conds {
                let b = nums(v.get("bonafide").unwrap_or(&Value::Null), name)?;
                let f = nums(v.get("spoof").unwrap_or(&Value::Null), name)?;
                recs.extend(trials(&b, &f).into_iter().map(|r| {
                    let id = format!("{cond}_{}", r.utt_id);
                    ScoreRecord { utt_id: id, ..r }.with_condition(cond.as_str())
                }));
            }
            let bd = pooled_breakdown(&recs)?;
            let mut out: Vec<f64> = bd.cells.values().map(|v| v.unwrap_or(f64::NAN)).collect();
            out.push(bd.pooled);
            out
        }
        "breaths_sit_in_pauses_db" => {
            let mut worst = f64::INFINITY;
            for s in seeds(c)? {
                let (w, iv) = gen_bonafide(s, CORPUS_SECONDS)?;
                let x = w.samples();
                let voiced = dsp::fir_same(x, &dsp::bandpass_kernel(80.0, 400.0, 513, sr));
                let inside = |i: usize| iv.spans().iter().any(|&(a, b)| (i as f64 / sr) >= a && (i as f64 / sr) < b);
                let (mut pin, mut nin, mut pout, mut nout) = (0.0, 0usize, 0.0, 0usize);
                for (i, v) in voiced.iter().enumerate() {
                    if inside(i) {
                        pin += v * v;
                        nin += 1;
                    } else {
                        pout += v * v;
                        nout += 1;
                    }
                }
                worst = worst.min(dsp::db((pout / nout as f64) / (pin / nin as f64)));
            }
            vec![worst]
        }
        "no_breath_style_detects_nothing" => {
            let mut total = 0;
            for s in seeds(c)? {
                total += heuristic_breath_detect(&gen_spoof(s, CORPUS_SECONDS, SpoofStyle::NoBreath)?).len();
            }
            vec![total as f64]
        }
        "lowpass_high_band_drop_db" => {
            let mut worst = f64::INFINITY;
            for s in seeds(c)? {
                let (b, _) = gen_bonafide(s, CORPUS_SECONDS)?;
                let l = gen_spoof(s, CORPUS_SECONDS, SpoofStyle::Lowpass)?;
                let hi = |w: &Waveform| dsp::band_energy(w.samples(), sr, 5000.0, 8000.0);
                worst = worst.min(dsp::db(hi(&b) / hi(&l)));
            }
            vec![worst]
        }
        "comb_autocorr_excess" => {
            let mut worst = f64::INFINITY;
            for s in seeds(c)? {
                let (b, _) = gen_bonafide(s, CORPUS_SECONDS)?;
                let f = gen_spoof(s, CORPUS_SECONDS, SpoofStyle::CombArtifact)?;
                let p = comb_delay(s);
                worst = worst.min(dsp::normalized_autocorr(f.samples(), p) - dsp::normalized_autocorr(b.samples(), p));
            }
            vec![worst]
        }
        "stationary_noise_snr_db" => {
            use rand::SeedableRng;
            let (w, _) = gen_bonafide(3, 1.5)?;
            let x = w.samples();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(num(c, "seed")? as u64);
            let y = add_noise_snr(x, num(c, "snr")?, &mut rng);
            let noise: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            vec![dsp::db(dsp::energy(x) / dsp::energy(&noise))]
        }
        other => return Err(bad(other, "no evaluator for this case")),
    })
}

fn judge(c: &GoldenCase, got: &[f64]) -> (Status, f64, String) {
    if got.len() != c.expected.len() {
        return (Status::Fail, f64::INFINITY, format!("{} values, expected {}", got.len(), c.expected.len()));
    }
    let mut worst: f64 = 0.0;
    let mut at = 0;
    for (k, (&g, &e)) in got.iter().zip(&c.expected).enumerate() {
        let dev = match c.check {
            Check::Close => (g - e).abs(),
            Check::AtLeast => (e - g).max(0.0),
            Check::AtMost => (g - e).max(0.0),
            Check::Deferred => 0.0,
        };
        let dev = if dev.is_nan() || g.is_nan() { f64::INFINITY } else { dev };
        if dev > worst {
            worst = dev;
            at = k;
        }
    }
    let limit = if c.check == Check::Close { c.tolerance } else { 0.0 };
    let status = if worst <= limit { Status::Pass } else { Status::Fail };
    let detail = if status == Status::Pass {
        String::new()
    } else {
        format!("index {at}: got {} expected {}", got[at], c.expected[at])
    };
    (status, worst, detail)
}

/// Evaluate every case; required cases absent from `cases` fail by name.
pub fn run_goldens(cases: &[GoldenCase]) -> GoldenReport {
    let mut by_name: BTreeMap<&str, CaseResult> = BTreeMap::new();
    for c in cases {
        let r = if c.check == Check::Deferred {
            let target = c.inputs.get("target").and_then(Value::as_str).unwrap_or("acceptance");
            CaseResult { name: c.name.clone(), status: Status::Deferred, max_deviation: 0.0, detail: format!("measured by the {target} target") }
        } else {
            match compute(c) {
                Ok(got) => {
                    let (status, max_deviation, detail) = judge(c, &got);
                    CaseResult { name: c.name.clone(), status, max_deviation, detail }
                }
                Err(e) => CaseResult { name: c.name.clone(), status: Status::Fail, max_deviation: f64::INFINITY, detail: e.to_string() },
            }
        };
        by_name.insert(c.name.as_str(), r);
    }
    for &req in REQUIRED {
        by_name.entry(req).or_insert_with(|| CaseResult {
            name: req.to_string(),
            status: Status::Fail,
            max_deviation: f64::INFINITY,
            detail: "fixture missing".into(),
        });
    }
    GoldenReport { results: by_name.into_values().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cases() -> Vec<GoldenCase> {
        load_goldens(&default_path()).unwrap()
    }

    #[test]
    fn all_goldens_pass() {
        let rep = run_goldens(&cases());
        assert_eq!(rep.failures(), 0, "\n{}", rep.render());
        assert_eq!(rep.results.len(), REQUIRED.len());
    }

    #[test]
    fn perturbing_one_expected_value_fails_exactly_one_case() {
        let mut cs = cases();
        let c = cs.iter_mut().find(|c| c.name == "pscl_orthogonal_triplet").unwrap();
        c.expected[0] += 10.0 * c.tolerance;
        let rep = run_goldens(&cs);
        assert_eq!(rep.failures(), 1, "\n{}", rep.render());
        assert!(rep.results.iter().any(|r| r.name == "pscl_orthogonal_triplet" && r.status == Status::Fail));
    }

    #[test]
    fn missing_fixture_fails_by_name() {
        let cs: Vec<GoldenCase> = cases().into_iter().filter(|c| c.name != "cllr_log3").collect();
        let rep = run_goldens(&cs);
        let r = rep.results.iter().find(|r| r.name == "cllr_log3").unwrap();
        assert_eq!(r.status, Status::Fail);
        assert_eq!(r.detail, "fixture missing");
    }

    #[test]
    fn report_order_is_deterministic() {
        let mut cs = cases();
        let a: Vec<String> = run_goldens(&cs).results.into_iter().map(|r| r.name).collect();
        cs.reverse();
        let b: Vec<String> = run_goldens(&cs).results.into_iter().map(|r| r.name).collect();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(a, sorted);
    }
}
