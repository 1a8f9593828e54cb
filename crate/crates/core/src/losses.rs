//! Embedding-refinement losses (positive-only contrastive, center, contrast),
//! the class-weighted cross-entropy, and their combination.
//!
//! Every loss is built on the tape so the same code serves training and the
//! value-level helpers (`*_value`), which run a throwaway tape.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{config, input, Error, Result};
use crate::metrics::Label;
use crate::scalar::Scalar;

/// Probability floor for the weighted cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
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
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            alpha: 1.0,
            beta: 1.0,
            tau: 0.1,
            delta: 0.1,
            aug_count: 3,
            w_bona: 0.9,
            w_spoof: 0.1,
            momentum: 0.9,
            use_pscl: true,
            use_center: true,
            use_contrast: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda", self.lambda), ("alpha", self.alpha), ("beta", self.beta), ("delta", self.delta)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(config(format!("momentum must lie in [0, 1], got {}", self.momentum)));
        }
        if !(self.w_bona >= 0.0 && self.w_spoof >= 0.0) {
            return Err(config("class weights must be >= 0"));
        }
        Ok(())
    }

    pub fn class_weight(&self, label: Label) -> f64 {
        match label {
            Label::Bonafide => self.w_bona,
            Label::Spoof => self.w_spoof,
        }
    }
}

/// `count` copies of `z + delta * eps`, `eps` standard normal per coordinate.
pub fn augment_bonafide<T: Scalar>(z: &[T], delta: f64, count: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            z.iter()
                .map(|&v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    v + T::lit(delta * e)
                })
                .collect()
        })
        .collect()
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

/// Positive-only supervised contrastive loss over bona fide embeddings
/// (`1 x D` nodes). `None` when fewer than two are given.
pub fn pscl<T: Scalar>(tape: &mut Tape<T>, bona: &[Var], tau: f64) -> Result<Option<Var>> {
    if !(tau > 0.0) {
        return Err(config(format!("temperature must be > 0, got {tau}")));
    }
    let n = bona.len();
    if n < 2 {
        return Ok(None);
    }
    let mut sim = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = tape.cosine(bona[i], bona[j])?;
            sim[i][j] = Some(s);
            sim[j][i] = Some(s);
        }
    }
    let rows: Vec<Var> = (0..n)
        .map(|i| {
            let others: Vec<Var> = sim[i].iter().flatten().copied().collect();
            if others.len() == 1 { Ok(others[0]) } else { tape.concat_cols(&others) }
        })
        .collect::<Result<_>>()?;
    let s = tape.concat_rows(&rows)?;
    let logits = tape.scale(s, T::lit(1.0 / tau));
    let logp = tape.log_softmax_rows(logits);
    let mean = tape.mean_all(logp);
    Ok(Some(tape.scale(mean, -T::one())))
}

/// Running bona fide center; a buffer, never a tape leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonaFideCenter<T> {
    pub c: Vec<T>,
    pub momentum: f64,
    pub initialized: bool,
}

impl<T: Scalar> BonaFideCenter<T> {
    pub fn new(dim: usize, momentum: f64) -> Self {
        Self { c: vec![T::zero(); dim], momentum, initialized: false }
    }

    /// First call adopts `mean`; later calls blend `c <- mu c + (1 - mu) mean`.
    /// `None` (no bona fide samples in the batch) leaves the center as is.
    pub fn update(&mut self, mean: Option<&[T]>) -> Result<()> {
        let Some(m) = mean else {
            warn!("batch without bona fide samples; center unchanged");
            return Ok(());
        };
        if m.len() != self.c.len() {
            return Err(input(format!("center has {} dims, batch mean has {}", self.c.len(), m.len())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite batch mean in center update".into()));
        }
        if self.initialized {
            let mu = T::lit(self.momentum);
            for (c, &z) in self.c.iter_mut().zip(m) {
                *c = mu * *c + (T::one() - mu) * z;
            }
        } else {
            self.c.copy_from_slice(m);
            self.initialized = true;
        }
        Ok(())
    }

    fn checked(&self) -> Result<&[T]> {
        if !self.initialized {
            return Err(Error::State("bona fide center used before initialization".into()));
        }
        if norm(&self.c) == T::zero() {
            return Err(Error::State("bona fide center has zero norm".into()));
        }
        Ok(&self.c)
    }

    fn node(&self, tape: &mut Tape<T>) -> Result<Var> {
        let c = self.checked()?.to_vec();
        Ok(tape.constant(Tensor::matrix(1, c.len(), c)?))
    }
}

fn mean_of<T: Scalar>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var> {
    if terms.len() == 1 {
        return Ok(terms[0]);
    }
    let col = tape.concat_rows(terms)?;
    Ok(tape.mean_all(col))
}

/// Mean of `(1 - cos(z, c)) / 2`; `None` for an empty list.
pub fn center_loss<T: Scalar>(tape: &mut Tape<T>, bona: &[Var], center: &BonaFideCenter<T>) -> Result<Option<Var>> {
    let c = center.node(tape)?;
    if bona.is_empty() {
        return Ok(None);
    }
    let terms = bona
        .iter()
        .map(|&z| {
            let s = tape.cosine(z, c)?;
            let neg = tape.scale(s, T::lit(-0.5));
            Ok(tape.add_scalar(neg, T::lit(0.5)))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of(tape, &terms).map(Some)
}

/// Mean of `(1 + cos(z, c)) / 2` over fakes plus the same over midpoints of
/// all unordered fake pairs. Zero-norm midpoints are skipped.
pub fn contrast_loss<T: Scalar>(tape: &mut Tape<T>, fakes: &[Var], center: &BonaFideCenter<T>) -> Result<Option<Var>> {
    let c = center.node(tape)?;
    if fakes.is_empty() {
        return Ok(None);
    }
    let push_away = |tape: &mut Tape<T>, z: Var| -> Result<Var> {
        let s = tape.cosine(z, c)?;
        let half = tape.scale(s, T::lit(0.5));
        Ok(tape.add_scalar(half, T::lit(0.5)))
    };
    let singles = fakes.iter().map(|&z| push_away(tape, z)).collect::<Result<Vec<_>>>()?;
    let mut loss = mean_of(tape, &singles)?;
    let mut mixed = Vec::new();
    for n in 0..fakes.len() {
        for m in n + 1..fakes.len() {
            let sum = tape.add(fakes[n], fakes[m])?;
            let mid = tape.scale(sum, T::lit(0.5));
            if norm(tape.value(mid).data()) == T::zero() {
                warn!("mixed fake pair ({n}, {m}) has zero norm; skipped");
                continue;
            }
            mixed.push(push_away(tape, mid)?);
        }
    }
    if !mixed.is_empty() {
        let pair_term = mean_of(tape, &mixed)?;
        loss = tape.add(loss, pair_term)?;
    }
    Ok(Some(loss))
}

pub fn feature_loss(pscl: f64, center: f64, contrast: f64, alpha: f64, beta: f64) -> f64 {
    pscl + alpha * center + beta * contrast
}

pub fn total_loss(ce: f64, feat: f64, lambda: f64) -> f64 {
    ce + lambda * feat
}

/// Mean of `-w_label ln p_label` over rows of `probs` (`N x 2`, `[bona, spoof]`).
pub fn weighted_ce(probs: &[[f64; 2]], labels: &[Label], w: &LossWeights) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(input(format!("{} probability rows for {} labels", probs.len(), labels.len())));
    }
    let mut total = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        let mut q = p[l.index()];
        if q < PROB_FLOOR {
            warn!("probability {q:e} at the true label clamped to {PROB_FLOOR:e}");
            q = PROB_FLOOR;
        }
        total -= w.class_weight(l) * q.ln();
    }
    Ok(total / probs.len() as f64)
}

/// Tape form of [`weighted_ce`] on `N x 2` logits.
pub fn weighted_ce_logits<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[Label], w: &LossWeights) -> Result<Var> {
    let rows = tape.value(logits).rows();
    if rows != labels.len() || tape.value(logits).cols() != 2 {
        return Err(input(format!("logits {:?} do not match {} labels", tape.value(logits).shape(), labels.len())));
    }
    let mut pick = vec![T::zero(); 2 * rows];
    for (i, &l) in labels.iter().enumerate() {
        pick[2 * i + l.index()] = T::lit(w.class_weight(l));
    }
    let pick = tape.constant(Tensor::matrix(rows, 2, pick)?);
    let logp = tape.log_softmax_rows(logits);
    let picked = tape.mul(logp, pick)?;
    let mean = tape.mean_all(picked);
    Ok(tape.scale(mean, T::lit(-2.0)))
}

fn embed<T: Scalar>(tape: &mut Tape<T>, zs: &[Vec<T>]) -> Result<Vec<Var>> {
    zs.iter()
        .map(|z| {
            if norm(z) == T::zero() {
                return Err(input("zero-norm embedding"));
            }
            Ok(tape.constant(Tensor::matrix(1, z.len(), z.clone())?))
        })
        .collect()
}

fn scalar_or_zero<T: Scalar>(tape: &Tape<T>, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| tape.value(v).item().to_f64().unwrap_or(f64::NAN))
}

pub fn pscl_value<T: Scalar>(bona: &[Vec<T>], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = embed(&mut tape, bona)?;
    let out = pscl(&mut tape, &vars, tau)?;
    Ok(scalar_or_zero(&tape, out))
}

pub fn center_loss_value<T: Scalar>(bona: &[Vec<T>], center: &BonaFideCenter<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = embed(&mut tape, bona)?;
    let out = center_loss(&mut tape, &vars, center)?;
    Ok(scalar_or_zero(&tape, out))
}

pub fn contrast_loss_value<T: Scalar>(fakes: &[Vec<T>], center: &BonaFideCenter<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = embed(&mut tape, fakes)?;
    let out = contrast_loss(&mut tape, &vars, center)?;
    Ok(scalar_or_zero(&tape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn center(c: &[f64]) -> BonaFideCenter<f64> {
        let mut b = BonaFideCenter::new(c.len(), 0.9);
        b.update(Some(c)).unwrap();
        b
    }

    #[test]
    fn augmentation() {
        let z = vec![0.5, -1.0, 2.0];
        let copies = augment_bonafide(&z, 0.0, 3, 7);
        assert_eq!(copies, vec![z.clone(); 3]);
        assert!(augment_bonafide(&z, 0.1, 0, 7).is_empty());
        assert_eq!(augment_bonafide(&z, 0.1, 4, 7), augment_bonafide(&z, 0.1, 4, 7));
        let many = augment_bonafide(&z, 0.1, 10_000, 11);
        for (k, &zk) in z.iter().enumerate() {
            let m = many.iter().map(|v| v[k]).sum::<f64>() / many.len() as f64;
            assert!((m - zk).abs() < 0.01);
        }
    }

    #[test]
    fn pscl_closed_forms() {
        assert_eq!(pscl_value(&[vec![1.0, 2.0], vec![-3.0, 0.5]], 0.1).unwrap(), 0.0);
        let same = vec![vec![0.3, -0.2, 0.9]; 3];
        for tau in [0.05, 0.1, 1.0, 7.0] {
            assert!((pscl_value(&same, tau).unwrap() - 2f64.ln()).abs() < 1e-9);
        }
        let mixed = [vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((pscl_value(&mixed, 1.0).unwrap() - 0.773_223_518_532_130_3).abs() < 1e-9);
        assert_eq!(pscl_value(&[vec![1.0]], 0.1).unwrap(), 0.0);
        assert!(matches!(pscl_value(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0.1), Err(Error::Input(_))));
    }

    #[test]
    fn center_closed_forms() {
        let c = center(&[1.0, 2.0]);
        assert!(center_loss_value(&[vec![1.0, 2.0], vec![2.0, 4.0]], &c).unwrap().abs() < 1e-12);
        assert!((center_loss_value(&[vec![-1.0, -2.0]], &c).unwrap() - 1.0).abs() < 1e-12);
        assert!((center_loss_value(&[vec![2.0, -1.0]], &c).unwrap() - 0.5).abs() < 1e-12);
        let fresh = BonaFideCenter::<f64>::new(2, 0.9);
        assert!(matches!(center_loss_value(&[vec![1.0, 0.0]], &fresh), Err(Error::State(_))));
        let zero = center(&[0.0, 0.0]);
        assert!(matches!(center_loss_value(&[vec![1.0, 0.0]], &zero), Err(Error::State(_))));
    }

    #[test]
    fn center_updates() {
        let mut c = center(&[1.0, 0.0]);
        c.update(Some(&[0.0, 1.0])).unwrap();
        assert!((c.c[0] - 0.9).abs() < 1e-15 && (c.c[1] - 0.1).abs() < 1e-15);
        let mut frozen = center(&[1.0, 0.0]);
        frozen.momentum = 1.0;
        frozen.update(Some(&[5.0, 5.0])).unwrap();
        assert_eq!(frozen.c, vec![1.0, 0.0]);
        let mut fresh = BonaFideCenter::new(2, 0.9);
        fresh.update(Some(&[2.0, 2.0])).unwrap();
        assert_eq!(fresh.c, vec![2.0, 2.0]);
        let before = fresh.clone();
        fresh.update(None).unwrap();
        assert_eq!(fresh, before);
    }

    #[test]
    fn contrast_closed_forms() {
        let c = center(&[0.0, 0.0, 1.0]);
        let anti = vec![vec![0.0, 0.0, -1.0], vec![0.0, 0.0, -3.0], vec![0.0, 0.0, -0.5]];
        assert!(contrast_loss_value(&anti, &c).unwrap().abs() < 1e-12);
        let along = vec![vec![0.0, 0.0, 2.0], vec![0.0, 0.0, 1.0]];
        assert!((contrast_loss_value(&along, &c).unwrap() - 2.0).abs() < 1e-12);
        let ortho = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!((contrast_loss_value(&ortho, &c).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(contrast_loss_value::<f64>(&[], &c).unwrap(), 0.0);
        // Opposite fakes cancel in the mix; the pair is skipped.
        let cancel = vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]];
        assert!((contrast_loss_value(&cancel, &c).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn combination_and_ce() {
        assert_eq!(feature_loss(0.0, 0.0, 0.0, 1.0, 1.0), 0.0);
        assert!((feature_loss(0.6931, 0.5, 1.0, 1.0, 1.0) - 2.1931).abs() < 1e-12);
        assert_eq!(feature_loss(0.4, 0.5, 1.0, 0.0, 0.0), 0.4);
        assert_eq!(total_loss(1.0, 2.0, 0.5), 2.0);
        assert_eq!(total_loss(1.0, 2.0, 0.0), 1.0);
        assert_eq!(total_loss(0.7, 0.0, 0.5), 0.7);

        let w = LossWeights::default();
        assert_eq!(weighted_ce(&[[1.0, 0.0]], &[Label::Bonafide], &w).unwrap(), 0.0);
        assert!((weighted_ce(&[[0.5, 0.5]], &[Label::Bonafide], &w).unwrap() - 0.9 * 2f64.ln()).abs() < 1e-12);
        assert!((weighted_ce(&[[0.5, 0.5]], &[Label::Spoof], &w).unwrap() - 0.1 * 2f64.ln()).abs() < 1e-12);
        let clamped = weighted_ce(&[[0.0, 1.0]], &[Label::Bonafide], &w).unwrap();
        assert!((clamped - 0.9 * -(PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn ce_on_logits_matches_probability_form() {
        let w = LossWeights::default();
        let logits = Tensor::<f64>::from_rows(&[&[0.3, -1.2], &[2.0, 0.5], &[0.0, 0.0]]).unwrap();
        let labels = [Label::Bonafide, Label::Spoof, Label::Bonafide];
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone());
        let v = weighted_ce_logits(&mut tape, l, &labels, &w).unwrap();
        let probs: Vec<[f64; 2]> = (0..3)
            .map(|r| {
                let (a, b) = (logits.get(r, 0).exp(), logits.get(r, 1).exp());
                [a / (a + b), b / (a + b)]
            })
            .collect();
        assert!((tape.value(v).item() - weighted_ce(&probs, &labels, &w).unwrap()).abs() < 1e-12);
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), n)
            .prop_filter("nonzero", |v| v.iter().all(|z| norm(z) > 1e-3))
    }

    proptest! {
        #[test]
        fn pscl_nonnegative_and_scale_invariant(zs in vecs(5), k in 0.1f64..10.0, tau in 0.05f64..2.0) {
            let a = pscl_value(&zs, tau).unwrap();
            prop_assert!(a >= -1e-12);
            let scaled: Vec<Vec<f64>> = zs.iter().map(|z| z.iter().map(|v| v * k).collect()).collect();
            prop_assert!((pscl_value(&scaled, tau).unwrap() - a).abs() < 1e-9);
            prop_assert_eq!(pscl_value(&zs[..2], tau).unwrap(), 0.0);
        }

        #[test]
        fn center_and_contrast_ranges(zs in vecs(4), c in vecs(1), k in 0.1f64..10.0) {
            let cen = center(&c[0]);
            let scaled = center(&c[0].iter().map(|v| v * k).collect::<Vec<_>>());
            let a = center_loss_value(&zs, &cen).unwrap();
            let b = contrast_loss_value(&zs, &cen).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&b));
            prop_assert!((center_loss_value(&zs, &scaled).unwrap() - a).abs() < 1e-12);
            prop_assert!((contrast_loss_value(&zs, &scaled).unwrap() - b).abs() < 1e-12);
        }

        #[test]
        fn combinations_are_linear(p in 0.0f64..3.0, c in 0.0f64..1.0, x in 0.0f64..2.0, a in 0.0f64..2.0, b in 0.0f64..2.0, l in 0.0f64..2.0) {
            let f = feature_loss(p, c, x, a, b);
            prop_assert!((feature_loss(2.0 * p, 2.0 * c, 2.0 * x, a, b) - 2.0 * f).abs() < 1e-12);
            prop_assert!((total_loss(1.0, f, l) - 1.0 - l * f).abs() < 1e-12);
        }
    }
}
