//! Ranking metrics and reranker disagreement.
//!
//! Conventions follow trec_eval: a document is relevant when its grade is
//! positive, NDCG uses gain `2^grade - 1` with discount `1 / log2(rank + 1)`
//! against the ideal ordering of all judged documents, and queries without any
//! relevant document are left out of the means.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{Corpus, Judgments, RunList};
use crate::distill::PairSample;
use crate::error::{Error, Result};
use crate::teacher::PairwiseTeacher;

pub type Qrels = BTreeMap<String, u32>;

fn relevant(qrels: &Qrels, doc_id: &str) -> bool {
    qrels.get(doc_id).is_some_and(|&g| g > 0)
}

pub fn mrr_at_k(run: &RunList, qrels: &Qrels, k: usize) -> f64 {
    run.entries
        .iter()
        .take(k)
        .position(|e| relevant(qrels, &e.doc_id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn recall_at_k(run: &RunList, qrels: &Qrels, k: usize) -> f64 {
    let total = qrels.values().filter(|&&g| g > 0).count();
    if total == 0 {
        return 0.0;
    }
    let hit = run
        .entries
        .iter()
        .take(k)
        .filter(|e| relevant(qrels, &e.doc_id))
        .count();
    hit as f64 / total as f64
}

pub fn success_at_k(run: &RunList, qrels: &Qrels, k: usize) -> f64 {
    let any = run.entries.iter().take(k).any(|e| relevant(qrels, &e.doc_id));
    if any {
        1.0
    } else {
        0.0
    }
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

pub fn ndcg_at_k(run: &RunList, qrels: &Qrels, k: usize) -> f64 {
    let dcg: f64 = run
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| gain(qrels.get(&e.doc_id).copied().unwrap_or(0)) / ((i + 2) as f64).log2())
        .sum();
    let mut grades: Vec<u32> = qrels.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let ideal: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Mrr(usize),
    Recall(usize),
    Ndcg(usize),
    Success(usize),
}

impl Metric {
    pub fn k(&self) -> usize {
        match *self {
            Metric::Mrr(k) | Metric::Recall(k) | Metric::Ndcg(k) | Metric::Success(k) => k,
        }
    }

    pub fn compute(&self, run: &RunList, qrels: &Qrels) -> f64 {
        match *self {
            Metric::Mrr(k) => mrr_at_k(run, qrels, k),
            Metric::Recall(k) => recall_at_k(run, qrels, k),
            Metric::Ndcg(k) => ndcg_at_k(run, qrels, k),
            Metric::Success(k) => success_at_k(run, qrels, k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Metric::Mrr(_) => "mrr",
            Metric::Recall(_) => "recall",
            Metric::Ndcg(_) => "ndcg",
            Metric::Success(_) => "success",
        };
        write!(f, "{name}@{}", self.k())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (name, k) = lower
            .split_once('@')
            .ok_or_else(|| Error::Config(format!("metric `{s}` must look like name@k")))?;
        let k: usize = k
            .parse()
            .map_err(|_| Error::Config(format!("metric `{s}` has an invalid cutoff")))?;
        if k == 0 {
            return Err(Error::Config(format!("metric `{s}` needs k >= 1")));
        }
        match name {
            "mrr" => Ok(Metric::Mrr(k)),
            "recall" => Ok(Metric::Recall(k)),
            "ndcg" => Ok(Metric::Ndcg(k)),
            "success" => Ok(Metric::Success(k)),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metrics: Vec<String>,
    /// Per evaluated query, values in `metrics` order.
    pub per_query: BTreeMap<String, Vec<f64>>,
    pub mean: Vec<f64>,
    pub query_count: usize,
    /// Queries in the run without any relevant judgment.
    pub excluded: usize,
}

impl MetricReport {
    pub fn mean_of(&self, metric: Metric) -> Option<f64> {
        let name = metric.to_string();
        self.metrics.iter().position(|m| *m == name).map(|i| self.mean[i])
    }

    pub fn to_table(&self) -> String {
        let width = self.metrics.iter().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>10}\n", "metric", "mean");
        for (m, v) in self.metrics.iter().zip(&self.mean) {
            out.push_str(&format!("{m:<width$}  {v:>10.6}\n"));
        }
        out.push_str(&format!("{:<width$}  {:>10}\n", "queries", self.query_count));
        out.push_str(&format!("{:<width$}  {:>10}\n", "excluded", self.excluded));
        out
    }
}

/// Evaluates every run against the judgments.
pub fn evaluate(runs: &[RunList], judgments: &Judgments, metrics: &[Metric]) -> Result<MetricReport> {
    if metrics.iter().any(|m| m.k() == 0) {
        return Err(Error::Config("metric cutoffs must be >= 1".into()));
    }
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    for run in runs {
        let qrels = judgments.for_query(&run.query_id);
        match qrels {
            Some(q) if q.values().any(|&g| g > 0) => {
                per_query.insert(
                    run.query_id.clone(),
                    metrics.iter().map(|m| m.compute(run, q)).collect::<Vec<_>>(),
                );
            }
            _ => excluded += 1,
        }
    }
    let n = per_query.len();
    let mean = (0..metrics.len())
        .map(|i| {
            if n == 0 {
                0.0
            } else {
                per_query.values().map(|v: &Vec<f64>| v[i]).sum::<f64>() / n as f64
            }
        })
        .collect();
    Ok(MetricReport {
        metrics: metrics.iter().map(Metric::to_string).collect(),
        per_query,
        mean,
        query_count: n,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Disagreement {
    pub rate: f64,
    pub disagreements: usize,
    /// Pairs with a non-tied teacher probability.
    pub counted: usize,
    pub ties: usize,
}

/// Fraction of sampled pairs whose pointwise rank order contradicts the
/// pairwise teacher. Pairs with teacher probability exactly 0.5 are skipped.
pub fn pairwise_disagreement<T: PairwiseTeacher + ?Sized>(
    pointwise_run: &RunList,
    teacher: &T,
    corpus: &Corpus,
    sample: &PairSample,
) -> Result<Disagreement> {
    if sample.is_empty() {
        return Err(Error::UndefinedRate("empty pair sample".into()));
    }
    let ranks = pointwise_run.ranks();
    let query = corpus.query(&sample.query_id)?;
    let (mut disagreements, mut counted, mut ties) = (0, 0, 0);
    for pair in &sample.pairs {
        let rank = |d: &str| {
            ranks
                .get(d)
                .copied()
                .ok_or_else(|| Error::UnknownDoc(d.to_string()))
        };
        let (ri, rj) = (rank(&pair.doc_i)?, rank(&pair.doc_j)?);
        let p = teacher.prefer(query, corpus.doc(&pair.doc_i)?, corpus.doc(&pair.doc_j)?)?;
        if p == 0.5 {
            ties += 1;
            continue;
        }
        counted += 1;
        if (ri < rj) != (p > 0.5) {
            disagreements += 1;
        }
    }
    if counted == 0 {
        return Err(Error::UndefinedRate("every sampled pair is a teacher tie".into()));
    }
    Ok(Disagreement {
        rate: disagreements as f64 / counted as f64,
        disagreements,
        counted,
        ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(ids: &[&str]) -> RunList {
        RunList::from_scores(
            "q",
            ids.iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), -(i as f64)))
                .collect(),
        )
    }

    fn qrels(pairs: &[(&str, u32)]) -> Qrels {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn mrr_uses_first_relevant_rank() {
        let r = run(&["a", "b", "c", "d"]);
        let q = qrels(&[("c", 1), ("d", 1)]);
        assert!((mrr_at_k(&r, &q, 10) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr_at_k(&r, &q, 2), 0.0);
        assert_eq!(success_at_k(&r, &q, 2), 0.0);
        assert_eq!(success_at_k(&r, &q, 3), 1.0);
    }

    #[test]
    fn recall_counts_all_relevant() {
        let r = run(&["a", "b", "c", "d", "e"]);
        let q = qrels(&[("a", 1), ("b", 2), ("d", 1), ("e", 1), ("x", 0)]);
        assert_eq!(recall_at_k(&r, &q, 5), 1.0);
        assert_eq!(recall_at_k(&r, &q, 2), 0.5);
    }

    #[test]
    fn ndcg_values() {
        let q = qrels(&[("b", 1)]);
        let r = run(&["a", "b", "c"]);
        assert!((ndcg_at_k(&r, &q, 10) - 1.0 / 3f64.log2()).abs() < 1e-15);
        let graded = qrels(&[("a", 2), ("b", 1), ("c", 0)]);
        assert!((ndcg_at_k(&run(&["a", "b", "c"]), &graded, 10) - 1.0).abs() < 1e-15);
        assert!(ndcg_at_k(&run(&["c", "b", "a"]), &graded, 10) <= 1.0);
        assert_eq!(ndcg_at_k(&r, &qrels(&[("a", 0)]), 10), 0.0);
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("ndcg@10".parse::<Metric>().unwrap(), Metric::Ndcg(10));
        assert_eq!("MRR@10".parse::<Metric>().unwrap(), Metric::Mrr(10));
        assert!("mrr@0".parse::<Metric>().is_err());
        assert!("map@10".parse::<Metric>().is_err());
        assert_eq!(Metric::Recall(1000).to_string(), "recall@1000");
    }

    #[test]
    fn queries_without_relevant_docs_are_excluded() {
        let mut j = Judgments::new();
        j.insert("q1", "a", 1);
        j.insert("q2", "a", 0);
        let mut r2 = run(&["a"]);
        r2.query_id = "q2".into();
        let mut r1 = run(&["b", "a"]);
        r1.query_id = "q1".into();
        let mut r3 = run(&["a"]);
        r3.query_id = "q3".into();
        let report = evaluate(&[r1, r2, r3], &j, &[Metric::Mrr(10), Metric::Success(1)]).unwrap();
        assert_eq!(report.query_count, 1);
        assert_eq!(report.excluded, 2);
        assert_eq!(report.mean, vec![0.5, 0.0]);
        assert!(report.to_table().contains("mrr@10"));
    }
}
