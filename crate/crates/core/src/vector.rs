//! Embeddings and the similarity functions that compare them.
//!
//! Values are stored as `f32`; every reduction runs in `f64`, sequentially
//! and in ascending index order, so scores are bit-reproducible.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;

/// A dense vector, optionally flagged as unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    normalized: bool,
}

impl Embedding {
    /// Builds an unnormalized embedding. Rejects empty or non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEmbedding);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Rounds an `f64` vector to storage precision.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    /// Builds an embedding flagged as normalized after checking its norm.
    pub fn new_normalized(values: Vec<f32>) -> Result<Self> {
        let mut e = Self::new(values)?;
        let n = e.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(alloc::format!(
                "embedding flagged normalized has norm {n}"
            )));
        }
        e.normalized = true;
        Ok(e)
    }

    /// Sets the normalized flag when the norm is within 1e-6 of one.
    pub fn flag_if_unit(mut self) -> Self {
        if !self.normalized && (self.norm() - 1.0).abs() <= 1e-6 {
            self.normalized = true;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for &v in &self.values {
            acc += (v as f64) * (v as f64);
        }
        math::sqrt(acc)
    }
}

/// Returns `e / ‖e‖` flagged as normalized. Already-normalized input is returned as is.
pub fn l2_normalize(e: &Embedding) -> Result<Embedding> {
    if e.normalized {
        return Ok(e.clone());
    }
    let n = e.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    let values = e.values.iter().map(|&v| ((v as f64) / n) as f32).collect();
    Ok(Embedding {
        values,
        normalized: true,
    })
}

/// Normalizes an `f64` vector at full precision, then rounds to storage.
pub fn normalize_f64(values: &[f64]) -> Result<Embedding> {
    let n = math::norm_f64(values);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !n.is_finite() {
        return Err(Error::NonFinite(0));
    }
    let values: Vec<f32> = values.iter().map(|&v| (v / n) as f32).collect();
    Embedding::new(values).map(|mut e| {
        e.normalized = true;
        e
    })
}

/// Scoring function `sim(·)` between two embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SimilarityFn {
    #[default]
    Cosine,
    Dot,
}

impl SimilarityFn {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimilarityFn::Cosine => "cosine",
            SimilarityFn::Dot => "dot",
        }
    }
}

impl fmt::Display for SimilarityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "dot" => Ok(Self::Dot),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown similarity {other:?} (expected cosine|dot)"
            ))),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += (a[i] as f64) * (b[i] as f64);
    }
    acc
}

/// Scores `a` against `b`. Symmetric bit-for-bit.
///
/// When both inputs carry the normalized flag, cosine reduces to the dot
/// product so the two functions agree exactly on unit vectors.
pub fn similarity(a: &Embedding, b: &Embedding, func: SimilarityFn) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let d = dot(&a.values, &b.values);
    match func {
        SimilarityFn::Dot => Ok(d),
        SimilarityFn::Cosine => {
            if a.normalized && b.normalized {
                return Ok(d.clamp(-1.0, 1.0));
            }
            let (na, nb) = (a.norm(), b.norm());
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm);
            }
            Ok((d / (na * nb)).clamp(-1.0, 1.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn three_four_five() {
        let n = l2_normalize(&emb(&[3.0, 4.0])).unwrap();
        assert_eq!(n.values(), &[0.6, 0.8]);
        assert!(n.is_normalized());
    }

    #[test]
    fn unit_vector_unchanged() {
        let n = l2_normalize(&emb(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(n.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_vector_is_an_error() {
        assert_eq!(l2_normalize(&emb(&[0.0, 0.0])), Err(Error::ZeroVector));
        assert_eq!(
            similarity(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0]), SimilarityFn::Cosine),
            Err(Error::ZeroNorm)
        );
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert_eq!(Embedding::new(vec![1.0, f32::NAN]), Err(Error::NonFinite(1)));
        assert_eq!(Embedding::new(vec![]), Err(Error::EmptyEmbedding));
    }

    #[test]
    fn similarity_examples() {
        let c = |a: &[f32], b: &[f32]| similarity(&emb(a), &emb(b), SimilarityFn::Cosine).unwrap();
        assert_eq!(c(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((c(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        let d = similarity(&emb(&[0.5, 0.5]), &emb(&[0.2, 0.8]), SimilarityFn::Dot).unwrap();
        // 0.5*0.2 + 0.5*0.8 with f32 inputs widened to f64
        assert!((d - 0.5).abs() < 1e-7);
    }

    #[test]
    fn dimension_mismatch() {
        assert_eq!(
            similarity(&emb(&[1.0]), &emb(&[1.0, 2.0]), SimilarityFn::Dot),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        );
    }

    #[test]
    fn random_32_dim_normalizes_to_unit() {
        use rand::RngExt;
        let mut rng = crate::rng::derive(3, "test.normalize");
        for _ in 0..50 {
            let v: Vec<f32> = (0..32).map(|_| rng.random_range(-3.0f32..3.0)).collect();
            let n = l2_normalize(&emb(&v)).unwrap();
            // independent norm: f64 sum of squares via std
            let norm: f64 = n.values().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
            // direction preserved
            let cos = similarity(&emb(&v), &n, SimilarityFn::Cosine).unwrap();
            assert!((cos - 1.0).abs() < 1e-6);
        }
    }

    fn finite_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-10.0f32..10.0, dim)
    }

    proptest! {
        #[test]
        fn unit_cosine_equals_dot(a in finite_vec(16), b in finite_vec(16)) {
            prop_assume!(emb(&a).norm() > 1e-3 && emb(&b).norm() > 1e-3);
            let (ua, ub) = (l2_normalize(&emb(&a)).unwrap(), l2_normalize(&emb(&b)).unwrap());
            let c = similarity(&ua, &ub, SimilarityFn::Cosine).unwrap();
            let d = similarity(&ua, &ub, SimilarityFn::Dot).unwrap();
            prop_assert!((c - d).abs() <= 1e-9);
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
        }

        #[test]
        fn similarity_symmetric(a in finite_vec(24), b in finite_vec(24)) {
            prop_assume!(emb(&a).norm() > 1e-3 && emb(&b).norm() > 1e-3);
            for f in [SimilarityFn::Cosine, SimilarityFn::Dot] {
                let ab = similarity(&emb(&a), &emb(&b), f).unwrap();
                let ba = similarity(&emb(&b), &emb(&a), f).unwrap();
                prop_assert_eq!(ab.to_bits(), ba.to_bits());
            }
        }

        #[test]
        fn normalize_idempotent(a in finite_vec(32)) {
            prop_assume!(emb(&a).norm() > 1e-3);
            let once = l2_normalize(&emb(&a)).unwrap();
            let twice = l2_normalize(&once).unwrap();
            // also through an unflagged copy
            let again = l2_normalize(&emb(once.values())).unwrap();
            for ((x, y), z) in once.values().iter().zip(twice.values()).zip(again.values()) {
                prop_assert!((x - y).abs() as f64 <= 1e-9);
                prop_assert!((x - z).abs() as f64 <= 1e-7);
            }
        }
    }
}
