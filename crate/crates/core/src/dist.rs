//! Score vectors, tempered conditionals and distances.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::seq::SeqState;

/// Raw local scores in natural-log units, before temperature is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some((a, s)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(Error::input(format!("non-finite score {s} at token {a}")));
        }
        Ok(Self(scores))
    }

    /// Wraps scores already known to be finite.
    pub(crate) fn from_finite(scores: Vec<f64>) -> Self {
        debug_assert!(scores.iter().all(|s| s.is_finite()));
        Self(scores)
    }

    /// Index of the largest score (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (a, &s) in self.0.iter().enumerate() {
            if s > self.0[best] {
                best = a;
            }
        }
        best
    }

    /// Token ids of the `k` largest scores, best first, skipping `exclude`.
    pub fn top_k(&self, k: usize, exclude: &[u32]) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.0.len() as u32)
            .filter(|a| !exclude.contains(a))
            .collect();
        order.sort_by(|&a, &b| {
            self.0[b as usize]
                .total_cmp(&self.0[a as usize])
                .then(a.cmp(&b))
        });
        order.truncate(k);
        order
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A strictly positive probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates positivity and normalization (within 1e-12).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::input(
                "probabilities must be finite and strictly positive",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    /// Draws an index by inversion of the cumulative sum at `u ∈ [0, 1)`.
    pub fn sample_with(&self, u: f64) -> usize {
        sample_index(&self.0, u)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Inverse-CDF draw from nonnegative weights normalized to `total`.
pub(crate) fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (a, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = a;
            acc += w;
            if target < acc {
                return a;
            }
        }
    }
    last_positive
}

/// Softmax of `scores / tau`, stabilized by subtracting the maximum.
///
/// Every probability is kept at or above the smallest positive normal
/// `f64` and the vector renormalized, so the result is strictly positive
/// even when `tau` is tiny.
pub fn tempered_conditional(scores: &[f64], tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::input("empty score vector"));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::input(format!("non-finite score {s}")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scores.iter().map(|&s| ((s - max) / tau).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut clamped = false;
    for p in &mut probs {
        *p /= total;
        if *p < f64::MIN_POSITIVE {
            *p = f64::MIN_POSITIVE;
            clamped = true;
        }
    }
    if clamped {
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
    }
    Ok(ProbVector(probs))
}

/// `ln p_τ(a | ·)` for every token, computed in log space so that it stays
/// finite where the probabilities themselves underflow.
pub fn tempered_log_conditional(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::input("empty score vector"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::input("non-finite score"));
    }
    let shifted: Vec<f64> = scores.iter().map(|&s| (s - max) / tau).collect();
    let log_total = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    Ok(shifted.into_iter().map(|z| z - log_total).collect())
}

/// Total variation distance `½ Σ |p_a − q_a|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::input(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(tv_unchecked(p, q))
}

pub(crate) fn tv_unchecked(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Number of positions where the two states differ.
pub fn hamming_distance(x: &SeqState, y: &SeqState) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "state lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.ids().iter().zip(y.ids()).filter(|(a, b)| a != b).count())
}

/// Hamming distance divided by the sequence length.
pub fn normalized_hamming(x: &SeqState, y: &SeqState) -> Result<f64> {
    Ok(hamming_distance(x, y)? as f64 / x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn uniform_scores_give_uniform_probs() {
        let p = tempered_conditional(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for &x in p.iter() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = tempered_conditional(&[-7.5; 5], 0.01).unwrap();
        for &x in p.iter() {
            assert_abs_diff_eq!(x, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_token_half_temperature() {
        // e^2 / (e^2 + 1), evaluated independently as a logistic.
        let expected = 0.880_797_077_977_882_3;
        let p = tempered_conditional(&[1.0, 0.0], 0.5).unwrap();
        assert_abs_diff_eq!(p[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 - expected, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_temperature_and_scores() {
        assert!(matches!(
            tempered_conditional(&[0.0, 1.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            tempered_conditional(&[0.0, 1.0], -1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            tempered_conditional(&[0.0, f64::NAN], 1.0),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            tempered_conditional(&[0.0, f64::INFINITY], 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn tiny_temperature_stays_positive_and_splits_ties() {
        let p = tempered_conditional(&[3.0, 3.0, -100.0, 1.0], 1e-6).unwrap();
        assert!(p.iter().all(|&x| x > 0.0));
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn high_temperature_approaches_uniform_monotonically() {
        let s = [2.0, -1.0, 0.5, 4.0];
        let u = ProbVector::uniform(4);
        let mut last = f64::INFINITY;
        for tau in [1.0, 10.0, 100.0, 1000.0] {
            let d = tv_distance(&tempered_conditional(&s, tau).unwrap(), &u).unwrap();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(tv_distance(&[0.5, 0.5], &[0.75, 0.25]).unwrap(), 0.25);
        let e = 1e-15;
        assert_abs_diff_eq!(
            tv_distance(&[1.0 - e, e], &[e, 1.0 - e]).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn hamming_examples() {
        let x = SeqState::new(vec![0, 1, 2], 4).unwrap();
        let y = SeqState::new(vec![0, 3, 2], 4).unwrap();
        let z = SeqState::new(vec![1, 2, 3], 4).unwrap();
        assert_eq!(hamming_distance(&x, &x).unwrap(), 0);
        assert_eq!(hamming_distance(&x, &y).unwrap(), 1);
        assert_eq!(hamming_distance(&x, &z).unwrap(), 3);
        assert_abs_diff_eq!(normalized_hamming(&x, &z).unwrap(), 1.0);
        let short = SeqState::new(vec![0], 4).unwrap();
        assert!(hamming_distance(&x, &short).is_err());
    }

    #[test]
    fn top_k_excludes() {
        let s = ScoreVector::new(vec![0.1, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(s.top_k(2, &[3]), vec![1, 2]);
        assert_eq!(s.argmax(), 3);
    }

    fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..40)
    }

    fn dist_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, len).prop_map(|w| {
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn normalized_and_positive(s in scores_strategy(), tau in 0.01f64..100.0) {
            let p = tempered_conditional(&s, tau).unwrap();
            prop_assert!(p.iter().all(|&x| x > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn shift_invariant(s in scores_strategy(), c in -100.0f64..100.0, tau in 0.1f64..20.0) {
            let p = tempered_conditional(&s, tau).unwrap();
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            let q = tempered_conditional(&shifted, tau).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn tv_is_a_metric(
            (p, q, r) in (2usize..12).prop_flat_map(|n| (dist_strategy(n), dist_strategy(n), dist_strategy(n)))
        ) {
            let pq = tv_distance(&p, &q).unwrap();
            let qp = tv_distance(&q, &p).unwrap();
            prop_assert_eq!(pq, qp);
            prop_assert!(tv_distance(&p, &p).unwrap() <= 1e-15);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            let pr = tv_distance(&p, &r).unwrap();
            let rq = tv_distance(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }
    }
}
