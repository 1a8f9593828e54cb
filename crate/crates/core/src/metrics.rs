//! Detection metrics over score records and the score-file format.
//!
//! Scores are "higher is more bona fide"; a trial is accepted iff
//! `score >= threshold`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(input(format!("unknown label '{other}' (expected bonafide or spoof)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub label: Label,
    pub score: f64,
    pub condition: Option<String>,
}

impl ScoreRecord {
    pub fn new(utt_id: impl Into<String>, label: Label, score: f64) -> Self {
        Self { utt_id: utt_id.into(), label, score, condition: None }
    }

    pub fn with_condition(mut self, condition: impl Into<String>) -> Self {
        self.condition = Some(condition.into());
        self
    }
}

/// Bona fide and spoof scores, sorted ascending, both non-empty and finite.
fn split(records: &[ScoreRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for r in records {
        if !r.score.is_finite() {
            return Err(input(format!("non-finite score for '{}'", r.utt_id)));
        }
        match r.label {
            Label::Bonafide => bona.push(r.score),
            Label::Spoof => spoof.push(r.score),
        }
    }
    if bona.is_empty() || spoof.is_empty() {
        return Err(input(format!(
            "metrics need both classes, got {} bona fide and {} spoof",
            bona.len(),
            spoof.len()
        )));
    }
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    Ok((bona, spoof))
}

/// `(P_miss, P_fa)` at every distinct score, ascending, then at `+inf`.
fn operating_points(bona: &[f64], spoof: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
    let mut out = Vec::with_capacity(thresholds.len() + 1);
    let (mut ib, mut is) = (0, 0);
    for t in thresholds {
        while ib < bona.len() && bona[ib] < t {
            ib += 1;
        }
        while is < spoof.len() && spoof[is] < t {
            is += 1;
        }
        out.push((ib as f64 / nb, (spoof.len() - is) as f64 / ns));
    }
    out.push((1.0, 0.0));
    out
}

/// Equal error rate with linear interpolation between adjacent operating points.
pub fn eer(records: &[ScoreRecord]) -> Result<f64> {
    let (bona, spoof) = split(records)?;
    let pts = operating_points(&bona, &spoof);
    Ok(crossing(&pts))
}

pub(crate) fn crossing(pts: &[(f64, f64)]) -> f64 {
    for k in 0..pts.len() {
        let (frr, far) = pts[k];
        if frr == far {
            return frr;
        }
        if frr > far {
            let (frr0, far0) = pts[k - 1];
            let a = (far0 - frr0) / ((far0 - frr0) - (far - frr));
            return frr0 + a * (frr - frr0);
        }
    }
    unreachable!("the final operating point has FRR 1 and FAR 0")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub prior: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { c_miss: 1.0, c_fa: 10.0, prior: 0.05 }
    }
}

/// Normalized minimum detection cost.
pub fn min_dcf(records: &[ScoreRecord], p: DcfParams) -> Result<f64> {
    if !(p.c_miss > 0.0 && p.c_fa > 0.0 && p.prior > 0.0 && p.prior < 1.0) {
        return Err(input(format!("invalid DCF parameters {p:?}")));
    }
    let (bona, spoof) = split(records)?;
    let norm = (p.c_miss * p.prior).min(p.c_fa * (1.0 - p.prior));
    let best = operating_points(&bona, &spoof)
        .into_iter()
        .map(|(pm, pf)| p.c_miss * p.prior * pm + p.c_fa * (1.0 - p.prior) * pf)
        .fold(f64::INFINITY, f64::min);
    Ok(best / norm)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-likelihood-ratio cost in bits; scores are natural-log ratios.
pub fn cllr(records: &[ScoreRecord]) -> Result<f64> {
    let (bona, spoof) = split(records)?;
    let mean = |v: &[f64], sign: f64| v.iter().map(|&s| softplus(sign * s)).sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&bona, -1.0) + mean(&spoof, 1.0)) / std::f64::consts::LN_2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub trials: usize,
    pub eer: f64,
    pub min_dcf: f64,
    pub cllr: f64,
}

pub fn report(records: &[ScoreRecord], dcf: DcfParams) -> Result<MetricsReport> {
    Ok(MetricsReport { trials: records.len(), eer: eer(records)?, min_dcf: min_dcf(records, dcf)?, cllr: cllr(records)? })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trials={} EER={:.4}% minDCF={:.6} CLLR={:.6}",
            self.trials,
            100.0 * self.eer,
            self.min_dcf,
            self.cllr
        )
    }
}

pub const UNTAGGED: &str = "untagged";

/// Per-condition EERs (`None` when a condition lacks one class) and the pooled EER.
#[derive(Clone, Debug, PartialEq)]
pub struct Breakdown {
    pub cells: BTreeMap<String, Option<f64>>,
    pub pooled: f64,
}

pub fn pooled_breakdown(records: &[ScoreRecord]) -> Result<Breakdown> {
    let mut groups: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
    for r in records {
        let tag = r.condition.clone().unwrap_or_else(|| UNTAGGED.to_string());
        groups.entry(tag).or_default().push(r.clone());
    }
    let cells = groups.into_iter().map(|(k, v)| (k, eer(&v).ok())).collect();
    Ok(Breakdown { cells, pooled: eer(records)? })
}

impl Breakdown {
    /// Aligned text table, EER in percent.
    pub fn render_table(&self) -> String {
        let cell = |v: &Option<f64>| v.map_or_else(|| "n/a".to_string(), |e| format!("{:.2}", 100.0 * e));
        let mut heads: Vec<String> = self.cells.keys().cloned().collect();
        heads.push("pooled".into());
        let mut vals: Vec<String> = self.cells.values().map(cell).collect();
        vals.push(format!("{:.2}", 100.0 * self.pooled));
        let widths: Vec<usize> = heads.iter().zip(&vals).map(|(h, v)| h.len().max(v.len())).collect();
        let mut out = String::new();
        let line = |cols: &[String], out: &mut String| {
            let row: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{:<8} {}", "", row.join("  "));
        };
        line(&heads, &mut out);
        let row: Vec<String> = vals.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{:<8} {}", "EER(%)", row.join("  "));
        out
    }

    /// `condition<TAB>eer` lines; `n/a` marks single-class conditions.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("condition\teer\n");
        for (k, v) in &self.cells {
            let _ = writeln!(out, "{k}\t{}", v.map_or_else(|| "n/a".to_string(), |e| format!("{e:.6}")));
        }
        let _ = writeln!(out, "pooled\t{:.6}", self.pooled);
        out
    }
}

/// One line: `id<TAB>label<TAB>score(6 dp)<TAB>condition`, the last field possibly empty.
pub fn format_score_line(r: &ScoreRecord) -> String {
    format!("{}\t{}\t{:.6}\t{}", r.utt_id, r.label, r.score, r.condition.as_deref().unwrap_or(""))
}

pub fn render_scores(records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format_score_line(r));
        out.push('\n');
    }
    out
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |why: String| Error::Data(format!("score file line {}: {why}", i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(bad(format!("expected 3 or 4 tab-separated fields, got {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(bad("empty utterance id".into()));
        }
        let label = fields[1].parse::<Label>().map_err(|e| bad(e.to_string()))?;
        let score: f64 = fields[2].parse().map_err(|_| bad(format!("invalid score '{}'", fields[2])))?;
        if !score.is_finite() {
            return Err(bad(format!("non-finite score '{}'", fields[2])));
        }
        let condition = fields.get(3).filter(|c| !c.is_empty()).map(|c| c.to_string());
        out.push(ScoreRecord { utt_id: fields[0].to_string(), label, score, condition });
    }
    Ok(out)
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    std::fs::write(path, render_scores(records))?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    parse_scores(&std::fs::read_to_string(path)?)
}
