//! Seeded synthetic retrieval benchmarks.
//!
//! Topics are unit prototypes in frame space: exactly orthonormal when there
//! are no more topics than input dimensions, otherwise spread out by a
//! deterministic coherence-reduction pass. Queries are a single clean
//! prototype frame; documents are short noisy frame sequences.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngExt;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::media::{Frame, MediaItem, Modality, Stream};
use crate::metrics::Qrels;
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_queries: usize,
    pub n_docs: usize,
    pub input_dim: usize,
    pub seed: u64,
    /// Noise scale σ relative to the unit prototype norm.
    pub noise: f64,
    /// Fraction of documents whose audio and video disagree.
    pub av_conflict_fraction: f64,
    pub frames_per_item: usize,
    /// Rank of the nuisance subspace shared by all separable-set noise.
    pub nuisance_rank: usize,
    /// Weight of the isotropic part of separable-set noise.
    pub isotropic_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_queries: 16,
            n_docs: 64,
            input_dim: 32,
            seed: 0,
            noise: 1.0,
            av_conflict_fraction: 0.5,
            frames_per_item: 4,
            nuisance_rank: 2,
            isotropic_noise: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_queries == 0 || self.n_docs < self.n_queries {
            return bad("need 1 <= n_queries <= n_docs");
        }
        if self.input_dim == 0 || self.frames_per_item == 0 {
            return bad("input_dim and frames_per_item must be positive");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.av_conflict_fraction) {
            return bad("av_conflict_fraction must be in [0, 1]");
        }
        if self.nuisance_rank > self.input_dim {
            return bad("nuisance_rank must not exceed input_dim");
        }
        if !(self.isotropic_noise.is_finite() && self.isotropic_noise >= 0.0) {
            return bad("isotropic_noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub corpus: Vec<MediaItem>,
    pub queries: Vec<MediaItem>,
    pub qrels: Qrels,
}

fn gaussian(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = math::norm_f64(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

fn random_unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, d);
        if normalize(&mut v) > 1e-6 {
            return v;
        }
    }
}

/// Orthonormal vectors by modified Gram-Schmidt; requires `n <= d`.
fn orthonormal(n: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian(rng, d);
        for _ in 0..2 {
            for b in &basis {
                let p = math::dot_f64(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
        }
        if normalize(&mut v) > 1e-6 {
            basis.push(v);
        }
    }
    basis
}

/// Largest absolute pairwise cosine.
pub fn max_coherence(vectors: &[Vec<f64>]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..vectors.len() {
        for j in 0..i {
            m = m.max(math::dot_f64(&vectors[i], &vectors[j]).abs());
        }
    }
    m
}

/// `n` unit topic prototypes in `d` dimensions with low mutual coherence.
pub fn prototypes(n: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    if n <= d {
        return orthonormal(n, d, rng);
    }
    let mut vs: Vec<Vec<f64>> = (0..n).map(|_| random_unit(rng, d)).collect();
    // descend on sum |<u_i, u_j>|^p with growing p, keeping the best frame seen
    let mut best = vs.clone();
    let mut best_coherence = max_coherence(&vs);
    for &p in &[8i32, 16, 32] {
        for _ in 0..1500 {
            let mut grads = vec![vec![0.0; d]; n];
            let mut scale = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let g = math::dot_f64(&vs[i], &vs[j]);
                    let w = g.signum() * libm::pow(g.abs(), (p - 1) as f64);
                    for (acc, x) in grads[i].iter_mut().zip(&vs[j]) {
                        *acc += w * x;
                    }
                }
                scale = scale.max(grads[i].iter().fold(0.0f64, |m, v| m.max(v.abs())));
            }
            if scale == 0.0 {
                break;
            }
            for (v, g) in vs.iter_mut().zip(&grads) {
                for (x, gx) in v.iter_mut().zip(g) {
                    *x -= 0.005 * gx / scale;
                }
                normalize(v);
            }
            let c = max_coherence(&vs);
            if c < best_coherence {
                best_coherence = c;
                best = vs.clone();
            }
        }
    }
    best
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn frames(rows: Vec<Vec<f64>>) -> Vec<Frame> {
    rows.into_iter()
        .enumerate()
        .map(|(t, r)| Frame::new(t as f64, to_f32(&r)))
        .collect()
}

fn query_item(i: usize, proto: &[f64]) -> Result<MediaItem> {
    let s = Stream::media(Modality::Video, vec![Frame::new(0.0, to_f32(proto))])?;
    MediaItem::new(format!("q{i:04}"), vec![s])
}

/// Assigns doc ids through a seeded permutation so positives are not the
/// lowest ids, and records one binary judgment per query.
fn finish(
    spec: &SynthSpec,
    docs: Vec<Vec<Stream>>,
    queries: Vec<MediaItem>,
) -> Result<SyntheticSet> {
    let mut slots: Vec<usize> = (0..docs.len()).collect();
    slots.shuffle(&mut rng::derive(spec.seed, "synth.doc_order"));
    let mut corpus: Vec<Option<MediaItem>> = vec![None; docs.len()];
    let mut qrels = Qrels::new();
    for (i, streams) in docs.into_iter().enumerate() {
        let id = format!("d{:04}", slots[i]);
        if i < spec.n_queries {
            qrels.insert(format!("q{i:04}"), id.clone(), 1);
        }
        corpus[slots[i]] = Some(MediaItem::new(id, streams)?);
    }
    Ok(SyntheticSet {
        corpus: corpus.into_iter().map(|d| d.expect("every slot filled")).collect(),
        queries,
        qrels,
    })
}

/// Separable set: document `i < n_queries` is topic `i` plus noise, the rest
/// are random directions plus noise.
///
/// The noise is `σ · (Σₖ gₖ nₖ / √R + isotropic_noise · g / √d_in)` per
/// frame with a nuisance basis `n₁..n_R` shared across the whole corpus, so a
/// learned projection can suppress it.
pub fn generate_separable(spec: &SynthSpec) -> Result<SyntheticSet> {
    spec.validate()?;
    let d = spec.input_dim;
    let topics = prototypes(spec.n_queries, d, &mut rng::derive(spec.seed, "synth.prototypes"));
    let nuisance = orthonormal(spec.nuisance_rank, d, &mut rng::derive(spec.seed, "synth.nuisance"));
    let mut fill = rng::derive(spec.seed, "synth.fillers");
    let mut noise_rng = rng::derive(spec.seed, "synth.noise");
    let rank_scale = if nuisance.is_empty() {
        0.0
    } else {
        1.0 / math::sqrt(nuisance.len() as f64)
    };
    let iso_scale = spec.isotropic_noise / math::sqrt(d as f64);
    let mut docs = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let base = match topics.get(i) {
            Some(t) => t.clone(),
            None => random_unit(&mut fill, d),
        };
        let rows = (0..spec.frames_per_item)
            .map(|_| {
                let mut row = base.clone();
                for n in &nuisance {
                    let g: f64 = noise_rng.sample(StandardNormal);
                    for (x, v) in row.iter_mut().zip(n) {
                        *x += spec.noise * rank_scale * g * v;
                    }
                }
                for x in row.iter_mut() {
                    let g: f64 = noise_rng.sample(StandardNormal);
                    *x += spec.noise * iso_scale * g;
                }
                row
            })
            .collect();
        docs.push(vec![Stream::media(Modality::Video, frames(rows))?]);
    }
    let queries = topics
        .iter()
        .enumerate()
        .map(|(i, t)| query_item(i, t))
        .collect::<Result<Vec<_>>>()?;
    finish(spec, docs, queries)
}

/// Audio/video set where a fraction of documents carry their topic in one
/// stream and an equally strong distractor topic in the other.
///
/// Documents outside the conflicted fraction have identical audio and video
/// frames. Distractor topics come from a pool disjoint from the query topics,
/// so a clean stream always identifies its document. Noise is isotropic,
/// `σ / √d_in` per coordinate.
pub fn generate_av_conflict(spec: &SynthSpec) -> Result<SyntheticSet> {
    spec.validate()?;
    let d = spec.input_dim;
    let nq = spec.n_queries;
    let all = prototypes(2 * nq, d, &mut rng::derive(spec.seed, "synth.prototypes"));
    let (topics, pool) = all.split_at(nq);
    let mut pick = rng::derive(spec.seed, "synth.topics");
    let mut noise_rng = rng::derive(spec.seed, "synth.noise");
    let sigma = spec.noise / math::sqrt(d as f64);

    let n_conflicted = libm::round(spec.av_conflict_fraction * spec.n_docs as f64) as usize;
    let mut order: Vec<usize> = (0..spec.n_docs).collect();
    order.shuffle(&mut rng::derive(spec.seed, "synth.conflicts"));
    let mut conflicted = vec![false; spec.n_docs];
    for &i in &order[..n_conflicted.min(spec.n_docs)] {
        conflicted[i] = true;
    }

    let noisy = |topic: &[f64], rng: &mut SeededRng| -> Vec<Vec<f64>> {
        (0..spec.frames_per_item)
            .map(|_| {
                topic
                    .iter()
                    .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    };

    let mut docs = Vec::with_capacity(spec.n_docs);
    for (i, &is_conflicted) in conflicted.iter().enumerate() {
        let (topic, topic_pool_index) = if i < nq {
            (&topics[i], None)
        } else {
            let j = pick.random_range(0..pool.len());
            (&pool[j], Some(j))
        };
        let signal = noisy(topic, &mut noise_rng);
        let (audio, video) = if is_conflicted {
            let j = loop {
                let j = pick.random_range(0..pool.len());
                if Some(j) != topic_pool_index || pool.len() == 1 {
                    break j;
                }
            };
            let distractor = noisy(&pool[j], &mut noise_rng);
            if pick.random::<bool>() {
                (signal, distractor)
            } else {
                (distractor, signal)
            }
        } else {
            (signal.clone(), signal)
        };
        docs.push(vec![
            Stream::media(Modality::Audio, frames(audio))?,
            Stream::media(Modality::Video, frames(video))?,
        ]);
    }
    let queries = topics
        .iter()
        .enumerate()
        .map(|(i, t)| query_item(i, t))
        .collect::<Result<Vec<_>>>()?;
    finish(spec, docs, queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_when_topics_fit() {
        for (n, d) in [(16, 16), (8, 32), (32, 32)] {
            let p = prototypes(n, d, &mut rng::derive(1, "t"));
            assert_eq!(p.len(), n);
            assert!(max_coherence(&p) < 1e-12);
            for v in &p {
                assert!((math::norm_f64(v) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overcomplete_prototypes_are_spread() {
        let p = prototypes(24, 16, &mut rng::derive(2, "t"));
        assert!(max_coherence(&p) <= 0.2, "{}", max_coherence(&p));
    }

    #[test]
    fn generators_are_pure_functions_of_spec() {
        let spec = SynthSpec::default();
        assert_eq!(generate_separable(&spec).unwrap(), generate_separable(&spec).unwrap());
        assert_eq!(generate_av_conflict(&spec).unwrap(), generate_av_conflict(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..SynthSpec::default() };
        assert_ne!(generate_separable(&spec).unwrap(), generate_separable(&other).unwrap());
    }

    #[test]
    fn shapes_and_judgments() {
        let spec = SynthSpec::default();
        for set in [generate_separable(&spec).unwrap(), generate_av_conflict(&spec).unwrap()] {
            assert_eq!(set.corpus.len(), spec.n_docs);
            assert_eq!(set.queries.len(), spec.n_queries);
            assert_eq!(set.qrels.len(), spec.n_queries);
            for q in &set.queries {
                let pos = set.qrels.best_positive(q.id()).unwrap();
                assert!(set.corpus.iter().any(|d| d.id() == pos));
            }
        }
    }

    #[test]
    fn conflict_fraction_controls_stream_agreement() {
        let zero = SynthSpec { av_conflict_fraction: 0.0, ..SynthSpec::default() };
        let set = generate_av_conflict(&zero).unwrap();
        for d in &set.corpus {
            assert_eq!(d.streams()[0].timeline(), d.streams()[1].timeline());
        }
        let half = generate_av_conflict(&SynthSpec::default()).unwrap();
        let disagreeing = half
            .corpus
            .iter()
            .filter(|d| d.streams()[0].timeline() != d.streams()[1].timeline())
            .count();
        assert_eq!(disagreeing, 32);
    }

    #[test]
    fn zero_noise_positive_contains_exact_prototype() {
        let spec = SynthSpec { noise: 0.0, av_conflict_fraction: 1.0, ..SynthSpec::default() };
        let set = generate_av_conflict(&spec).unwrap();
        for q in &set.queries {
            let proto = &q.streams()[0].timeline().unwrap()[0].features;
            let pos = set.qrels.best_positive(q.id()).unwrap();
            let doc = set.corpus.iter().find(|d| d.id() == pos).unwrap();
            let clean = doc
                .streams()
                .iter()
                .filter(|s| s.timeline().unwrap().iter().all(|f| &f.features == proto))
                .count();
            assert_eq!(clean, 1);
        }
    }

    #[test]
    fn invalid_specs() {
        let bad = |s: SynthSpec| s.validate().is_err();
        assert!(bad(SynthSpec { n_docs: 3, n_queries: 4, ..Default::default() }));
        assert!(bad(SynthSpec { noise: -1.0, ..Default::default() }));
        assert!(bad(SynthSpec { av_conflict_fraction: 1.5, ..Default::default() }));
    }
}
