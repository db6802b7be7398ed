use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Document, Query, TrueRelevance};
use crate::error::{Error, Result};
use crate::seed::{digest_hex, keyed_rng};
use crate::teacher::{PairwiseTeacher, PointwiseTeacher};

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Teacher backed by the synthetic relevance oracle.
///
/// Pointwise: `relevance + noise * z`. Pairwise:
/// `logistic(sharpness * (rel_i - rel_j) + noise * z)`. Each `z` is a standard
/// normal drawn from a stream keyed by the argument tuple, so repeated calls
/// agree regardless of order.
#[derive(Debug, Clone)]
pub struct SyntheticTeacher {
    relevance: Arc<TrueRelevance>,
    noise: f64,
    sharpness: f64,
    seed: u64,
    oracle_digest: String,
}

impl SyntheticTeacher {
    pub fn new(relevance: Arc<TrueRelevance>, noise: f64, sharpness: f64, seed: u64) -> Result<Self> {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::Config(format!("teacher noise must be >= 0, got {noise}")));
        }
        if !(sharpness.is_finite() && sharpness > 0.0) {
            return Err(Error::Config(format!(
                "teacher sharpness must be > 0, got {sharpness}"
            )));
        }
        let oracle_digest = digest_hex(&serde_json::to_vec(relevance.oracle())?);
        Ok(Self {
            relevance,
            noise,
            sharpness,
            seed,
            oracle_digest,
        })
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    fn draw(&self, domain: &str, parts: &[&str]) -> f64 {
        if self.noise == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut keyed_rng(domain, self.seed, parts));
        self.noise * z
    }

    pub fn synthetic_prefer(&self, query_id: &str, doc_i: &str, doc_j: &str) -> Result<f64> {
        let gap = self.relevance.score(query_id, doc_i)? - self.relevance.score(query_id, doc_j)?;
        let eps = self.draw("pairwise-noise", &[query_id, doc_i, doc_j]);
        Ok(logistic(self.sharpness * gap + eps))
    }

    pub fn synthetic_score(&self, query_id: &str, doc_id: &str) -> Result<f64> {
        Ok(self.relevance.score(query_id, doc_id)? + self.draw("pointwise-noise", &[query_id, doc_id]))
    }
}

impl PointwiseTeacher for SyntheticTeacher {
    fn fingerprint(&self) -> String {
        format!(
            "synthetic:{}:{}:{}:{}",
            self.oracle_digest, self.noise, self.sharpness, self.seed
        )
    }

    fn score(&self, query: &Query, doc: &Document) -> Result<f64> {
        self.synthetic_score(&query.query_id, &doc.doc_id)
    }
}

impl PairwiseTeacher for SyntheticTeacher {
    fn fingerprint(&self) -> String {
        PointwiseTeacher::fingerprint(self)
    }

    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
        self.synthetic_prefer(&query.query_id, &doc_i.doc_id, &doc_j.doc_id)
    }
}
