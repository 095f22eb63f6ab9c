//! Hard-negative mining with a percentage-to-positive threshold.
//!
//! A candidate is eligible only when its similarity to the query is strictly
//! below `threshold · sim(q, d⁺)`; the `k` most similar eligible candidates
//! are kept. Candidates scoring close to the positive are treated as likely
//! false negatives and dropped.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vector::{similarity, Embedding, SimilarityFn};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    pub threshold: f64,
    pub k: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { threshold: 0.95, k: 2 }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mining threshold {} must be in (0, 1]",
                self.threshold
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("mining k must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Query, its positive and mined negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriple {
    pub query_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

impl TrainingTriple {
    pub fn new(
        query_id: impl Into<String>,
        positive_id: impl Into<String>,
        negative_ids: Vec<String>,
    ) -> Result<Self> {
        let t = Self {
            query_id: query_id.into(),
            positive_id: positive_id.into(),
            negative_ids,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.negative_ids.contains(&self.positive_id) {
            return Err(Error::InvalidTriple(format!(
                "{}: positive {} listed as a negative",
                self.query_id, self.positive_id
            )));
        }
        for (i, n) in self.negative_ids.iter().enumerate() {
            if self.negative_ids[..i].contains(n) {
                return Err(Error::InvalidTriple(format!(
                    "{}: duplicate negative {n}",
                    self.query_id
                )));
            }
        }
        Ok(())
    }
}

/// Mined negatives, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedNegatives {
    pub negative_ids: Vec<String>,
    pub positive_score: f64,
    /// Set when the positive scored ≤ 0 and the threshold was not applied.
    pub degenerate: bool,
}

/// Selection on precomputed similarities.
pub fn select_hard_negatives<S: AsRef<str>>(
    positive_score: f64,
    candidates: &[(S, f64)],
    cfg: &MiningConfig,
) -> Result<MinedNegatives> {
    cfg.validate()?;
    let degenerate = positive_score <= 0.0;
    let cutoff = cfg.threshold * positive_score;
    let mut eligible: Vec<(&str, f64)> = candidates
        .iter()
        .map(|(id, s)| (id.as_ref(), *s))
        .filter(|&(_, s)| degenerate || s < cutoff)
        .collect();
    eligible.sort_by(|a, b| crate::math::score_cmp(b.1, a.1).then_with(|| a.0.cmp(b.0)));
    let mut negative_ids: Vec<String> = Vec::with_capacity(cfg.k);
    for (id, _) in eligible {
        if negative_ids.len() == cfg.k {
            break;
        }
        if !negative_ids.iter().any(|n| n == id) {
            negative_ids.push(id.to_string());
        }
    }
    Ok(MinedNegatives {
        negative_ids,
        positive_score,
        degenerate,
    })
}

/// Mines up to `cfg.k` hard negatives for one query.
///
/// When `sim(q, d⁺) ≤ 0` a percentage of it is meaningless, so the `k` most
/// similar candidates overall are returned and the result is flagged.
pub fn mine_hard_negatives<S: AsRef<str>>(
    query: &Embedding,
    positive: &Embedding,
    candidates: &[(S, Embedding)],
    cfg: &MiningConfig,
    func: SimilarityFn,
) -> Result<MinedNegatives> {
    let positive_score = similarity(query, positive, func)?;
    let scored = candidates
        .iter()
        .map(|(id, e)| Ok((id.as_ref(), similarity(query, e, func)?)))
        .collect::<Result<Vec<_>>>()?;
    select_hard_negatives(positive_score, &scored, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::String;
    use proptest::prelude::*;
    use alloc::vec;

    fn ids(m: &MinedNegatives) -> Vec<&str> {
        m.negative_ids.iter().map(String::as_str).collect()
    }

    #[test]
    fn threshold_example() {
        // s+ = 0.8, p = 0.95 -> cutoff 0.76
        let c = [("a", 0.9), ("b", 0.77), ("c", 0.75), ("d", 0.74), ("e", 0.5)];
        let m = select_hard_negatives(0.8, &c, &MiningConfig::default()).unwrap();
        assert_eq!(ids(&m), ["c", "d"]);
        assert!(!m.degenerate);
    }

    #[test]
    fn everything_above_cutoff() {
        let c = [("a", 0.9), ("b", 0.85)];
        let m = select_hard_negatives(0.8, &c, &MiningConfig::default()).unwrap();
        assert!(m.negative_ids.is_empty());
    }

    #[test]
    fn threshold_one_means_below_positive() {
        let c = [("a", 0.1), ("b", 0.7), ("c", 0.6), ("d", 0.79)];
        let cfg = MiningConfig { threshold: 1.0, k: 2 };
        assert_eq!(ids(&select_hard_negatives(0.8, &c, &cfg).unwrap()), ["d", "b"]);
    }

    #[test]
    fn cutoff_is_strict() {
        let c = [("a", 0.5), ("b", 0.25)];
        let cfg = MiningConfig { threshold: 0.5, k: 2 };
        assert_eq!(ids(&select_hard_negatives(1.0, &c, &cfg).unwrap()), ["b"]);
    }

    #[test]
    fn non_positive_score_falls_back_to_top_k() {
        let c = [("a", -0.1), ("b", 0.3), ("c", -0.5)];
        let m = select_hard_negatives(-0.2, &c, &MiningConfig::default()).unwrap();
        assert!(m.degenerate);
        assert_eq!(ids(&m), ["b", "a"]);
    }

    #[test]
    fn ties_by_doc_id() {
        let c = [("z", 0.3), ("m", 0.3), ("a", 0.3)];
        let cfg = MiningConfig { threshold: 0.95, k: 2 };
        assert_eq!(ids(&select_hard_negatives(0.9, &c, &cfg).unwrap()), ["a", "m"]);
    }

    #[test]
    fn config_and_triple_validation() {
        assert!(MiningConfig { threshold: 0.0, k: 2 }.validate().is_err());
        assert!(MiningConfig { threshold: 1.5, k: 2 }.validate().is_err());
        assert!(MiningConfig { threshold: 0.5, k: 0 }.validate().is_err());
        assert!(TrainingTriple::new("q", "d", vec!["d".into()]).is_err());
        assert!(TrainingTriple::new("q", "d", vec!["a".into(), "a".into()]).is_err());
        assert!(TrainingTriple::new("q", "d", vec!["a".into(), "b".into()]).is_ok());
    }

    #[test]
    fn embedding_level_mining() {
        let e = |v: Vec<f32>| crate::vector::l2_normalize(&Embedding::new(v).unwrap()).unwrap();
        let q = e(vec![1.0, 0.0]);
        let pos = e(vec![1.0, 0.1]);
        let cands = vec![
            ("near", e(vec![1.0, 0.12])),
            ("mid", e(vec![1.0, 0.6])),
            ("far", e(vec![0.0, 1.0])),
        ];
        let m = mine_hard_negatives(&q, &pos, &cands, &MiningConfig::default(), SimilarityFn::Cosine)
            .unwrap();
        assert_eq!(ids(&m), ["mid", "far"]);
    }

    proptest! {
        #[test]
        fn mined_negatives_respect_cutoff_order_and_k(
            pos in 0.01f64..1.0,
            scores in proptest::collection::vec(-1.0f64..1.0, 0..40),
            threshold in 0.05f64..1.0,
            k in 1usize..10,
        ) {
            let cands: Vec<(String, f64)> =
                scores.iter().enumerate().map(|(i, s)| (format!("c{i:02}"), *s)).collect();
            let cfg = MiningConfig { threshold, k };
            let m = select_hard_negatives(pos, &cands, &cfg).unwrap();
            prop_assert!(!m.degenerate);
            prop_assert!(m.negative_ids.len() <= k);
            let score = |id: &str| cands.iter().find(|c| c.0 == id).unwrap().1;
            let picked: Vec<f64> = m.negative_ids.iter().map(|id| score(id)).collect();
            prop_assert!(picked.iter().all(|&s| s < threshold * pos));
            prop_assert!(picked.windows(2).all(|w| w[0] >= w[1]));
            let eligible = scores.iter().filter(|&&s| s < threshold * pos).count();
            prop_assert_eq!(m.negative_ids.len(), eligible.min(k));
            // nothing skipped: every unpicked eligible candidate scores no higher than the last pick
            if let Some(&last) = picked.last() {
                for (id, s) in &cands {
                    if *s < threshold * pos && !m.negative_ids.contains(id) {
                        prop_assert!(*s <= last);
                    }
                }
            }
        }
    }
}
