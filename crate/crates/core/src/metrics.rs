//! Ranking metrics: NDCG@k (exponential gain, log2 discount) and Recall@k.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::retrieval::RunResult;

/// Graded relevance judgments: query id → doc id → grade.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment; a repeated (query, doc) pair keeps the last grade.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn contains(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.judgments.iter().map(|(q, j)| (q.as_str(), j))
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Highest-graded relevant document, ties to the smaller id.
    pub fn best_positive(&self, query_id: &str) -> Option<&str> {
        let mut best: Option<(&str, u32)> = None;
        for (doc, &g) in self.judgments.get(query_id)? {
            if g > 0 && best.is_none_or(|(_, bg)| g > bg) {
                best = Some((doc, g));
            }
        }
        best.map(|(d, _)| d)
    }

    /// Ids of documents with grade > 0.
    pub fn relevant(&self, query_id: &str) -> Vec<&str> {
        self.judgments
            .get(query_id)
            .map(|j| {
                j.iter()
                    .filter(|(_, &g)| g > 0)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn gain(grade: u32) -> f64 {
    math::powi2(grade) - 1.0
}

fn discount(position: usize) -> f64 {
    // position is 1-based
    1.0 / math::log2(position as f64 + 1.0)
}

/// Ideal DCG@k of a judgment set.
pub fn ideal_dcg(judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let mut grades: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .fold(0.0, |acc, x| acc + x)
}

/// NDCG@k; 0 when the query has no relevant judgment.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let idcg = ideal_dcg(judgments, k);
    if idcg == 0.0 {
        return 0.0;
    }
    let dcg = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judgments.get(d.as_ref()).copied().unwrap_or(0)) * discount(i + 1))
        .fold(0.0, |acc, x| acc + x);
    dcg / idcg
}

/// Fraction of relevant documents found in the top k; 0 when none are relevant.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let relevant = judgments.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return 0.0;
    }
    let found = ranked
        .iter()
        .take(k)
        .filter(|d| judgments.get(d.as_ref()).is_some_and(|&g| g > 0))
        .count();
    found as f64 / relevant as f64
}

/// One metric over all evaluated queries.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<MetricSeries>,
    /// Queries left out of every average because all their grades are zero.
    pub excluded_queries: Vec<String>,
}

impl MetricReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSeries> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.mean)
    }
}

/// NDCG@k and Recall@k for each `k`, per query and macro-averaged over the
/// run's queries that have at least one relevant judgment.
pub fn evaluate_run(run: &RunResult, qrels: &Qrels, ks: &[usize]) -> Result<MetricReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("cutoffs must be a non-empty list of k >= 1".to_string()));
    }
    let missing: Vec<String> = run
        .iter()
        .filter(|(q, _)| !qrels.contains(q))
        .map(|(q, _)| q.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingQrels(missing));
    }
    let mut excluded = Vec::new();
    let mut evaluated = Vec::new();
    for (q, hits) in run.iter() {
        let judgments = qrels.get(q).expect("checked above");
        if judgments.values().all(|&g| g == 0) {
            excluded.push(q.to_string());
        } else {
            let ranked: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
            evaluated.push((q, ranked, judgments));
        }
    }
    let mut metrics = Vec::new();
    for kind in ["ndcg", "recall"] {
        let f = |ranked: &[&str], j: &BTreeMap<String, u32>, k: usize| match kind {
            "ndcg" => ndcg_at_k(ranked, j, k),
            _ => recall_at_k(ranked, j, k),
        };
        for &k in ks {
            let per_query: BTreeMap<String, f64> = evaluated
                .iter()
                .map(|(q, ranked, j)| (q.to_string(), f(ranked, j, k)))
                .collect();
            let mean = if per_query.is_empty() {
                0.0
            } else {
                per_query.values().fold(0.0, |a, v| a + v) / per_query.len() as f64
            };
            metrics.push(MetricSeries {
                name: format!("{kind}@{k}"),
                per_query,
                mean,
            });
        }
    }
    Ok(MetricReport {
        metrics,
        excluded_queries: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoredHit;
    use alloc::vec;

    fn judg(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_examples() {
        let j = judg(&[("a", 1)]);
        assert_eq!(ndcg_at_k(&["a", "b", "c"], &j, 10), 1.0);
        assert_eq!(ndcg_at_k(&["b", "c"], &j, 10), 0.0);
        let second = ndcg_at_k(&["b", "a"], &j, 10);
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((second - 0.63093).abs() < 1e-5);
        // cut off below k
        assert_eq!(ndcg_at_k(&["b", "a"], &j, 1), 0.0);
        assert_eq!(ndcg_at_k(&["a"], &judg(&[("a", 0)]), 10), 0.0);
    }

    #[test]
    fn graded_ndcg_by_hand() {
        // grades 3 at rank 2, 1 at rank 1; ideal is [3, 1]
        let j = judg(&[("x", 3), ("y", 1)]);
        let dcg = 1.0 + 7.0 / 3f64.log2();
        let idcg = 7.0 + 1.0 / 3f64.log2();
        assert!((ndcg_at_k(&["y", "x"], &j, 5) - dcg / idcg).abs() < 1e-12);
    }

    fn hits(ids: &[&str]) -> Vec<ScoredHit> {
        ids.iter()
            .enumerate()
            .map(|(i, d)| ScoredHit {
                doc_id: d.to_string(),
                score: 1.0 - i as f64 * 0.1,
                rank: i + 1,
            })
            .collect()
    }

    #[test]
    fn perfect_and_empty_runs() {
        let mut q = Qrels::new();
        let mut perfect = RunResult::new();
        let mut empty = RunResult::new();
        for i in 0..3 {
            let (qid, did) = (format!("q{i}"), format!("d{i}"));
            q.insert(&qid, &did, 1);
            perfect.insert(&qid, hits(&[&did, "zz"])).unwrap();
            empty.insert(&qid, vec![]).unwrap();
        }
        let r = evaluate_run(&perfect, &q, &[5, 10]).unwrap();
        assert_eq!(r.mean("ndcg@10"), Some(1.0));
        assert_eq!(r.mean("recall@5"), Some(1.0));
        let r = evaluate_run(&empty, &q, &[10]).unwrap();
        assert_eq!(r.mean("ndcg@10"), Some(0.0));
    }

    #[test]
    fn missing_queries_and_zero_judgments() {
        let mut q = Qrels::new();
        q.insert("q1", "d1", 1);
        q.insert("q2", "d2", 0);
        let mut run = RunResult::new();
        run.insert("q1", hits(&["d1"])).unwrap();
        run.insert("q2", hits(&["d2"])).unwrap();
        let r = evaluate_run(&run, &q, &[10]).unwrap();
        assert_eq!(r.excluded_queries, vec!["q2".to_string()]);
        assert_eq!(r.metric("ndcg@10").unwrap().per_query.len(), 1);
        run.insert("q9", hits(&["d1"])).unwrap();
        run.insert("q8", hits(&["d1"])).unwrap();
        assert_eq!(
            evaluate_run(&run, &q, &[10]),
            Err(Error::MissingQrels(vec!["q8".into(), "q9".into()]))
        );
    }

    #[test]
    fn best_positive_prefers_grade_then_id() {
        let mut q = Qrels::new();
        q.insert("q", "b", 2);
        q.insert("q", "a", 2);
        q.insert("q", "c", 1);
        q.insert("q", "z", 0);
        assert_eq!(q.best_positive("q"), Some("a"));
        assert_eq!(q.relevant("q"), vec!["a", "b", "c"]);
        q.insert("r", "x", 0);
        assert_eq!(q.best_positive("r"), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn case() -> impl Strategy<Value = (Vec<String>, BTreeMap<String, u32>, usize)> {
            (
                Just((0..15).map(|i| format!("d{i}")).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(0u32..4, 15),
                1usize..12,
            )
                .prop_map(|(ranked, grades, k)| {
                    let j = grades
                        .iter()
                        .enumerate()
                        .map(|(i, g)| (format!("d{i}"), *g))
                        .collect();
                    (ranked, j, k)
                })
        }

        proptest! {
            #[test]
            fn promoting_a_better_doc_never_hurts((ranked, j, k) in case(), pos in 1usize..15) {
                let g = |d: &String| j[d];
                let mut swapped = ranked.clone();
                if g(&ranked[pos]) > g(&ranked[pos - 1]) {
                    swapped.swap(pos, pos - 1);
                    prop_assert!(ndcg_at_k(&swapped, &j, k) >= ndcg_at_k(&ranked, &j, k) - 1e-15);
                }
            }

            #[test]
            fn tail_order_is_irrelevant((ranked, j, k) in case()) {
                let mut shuffled = ranked.clone();
                if k < shuffled.len() {
                    shuffled[k..].reverse();
                }
                prop_assert_eq!(ndcg_at_k(&ranked, &j, k), ndcg_at_k(&shuffled, &j, k));
                let v = ndcg_at_k(&ranked, &j, k);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }

            #[test]
            fn recall_grows_with_k((ranked, j, k) in case()) {
                prop_assert!(recall_at_k(&ranked, &j, k) <= recall_at_k(&ranked, &j, k + 1));
            }
        }
    }
}
