//! Rank-window pair sampling.
//!
//! Candidates are unordered rank pairs `{i, j}` of a reranked list with
//! `0 < |i - j| < delta`. A fixed budget of them is drawn uniformly without
//! replacement and each drawn pair gets a random orientation.

use rand::seq::index::sample;
use rand::Rng;

use crate::corpus::{Corpus, RunList};
use crate::error::{Error, Result};
use crate::seed::keyed_rng;
use crate::teacher::PairwiseTeacher;

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPair {
    /// 1-based rank of `doc_i` in the reranked list.
    pub rank_i: usize,
    pub rank_j: usize,
    pub doc_i: String,
    pub doc_j: String,
    /// Teacher probability that `doc_i` beats `doc_j`, once scored.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub query_id: String,
    pub pairs: Vec<SampledPair>,
}

impl PairSample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Fills in teacher probabilities for every pair.
    pub fn score<T: PairwiseTeacher + ?Sized>(&mut self, teacher: &T, corpus: &Corpus) -> Result<()> {
        let query = corpus.query(&self.query_id)?;
        for pair in &mut self.pairs {
            let p = teacher.prefer(query, corpus.doc(&pair.doc_i)?, corpus.doc(&pair.doc_j)?)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!(
                    "pairwise teacher returned {p} outside [0, 1]"
                )));
            }
            pair.p = Some(p);
        }
        Ok(())
    }
}

/// Number of unordered pairs among `k` ranks with distance below `delta`.
pub fn candidate_count(k: usize, delta: usize) -> usize {
    (1..delta.min(k)).map(|d| k - d).sum()
}

/// Candidate rank pairs `(i, j)` with `i < j`, in lexicographic order.
pub fn candidate_pairs(k: usize, delta: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(candidate_count(k, delta));
    for i in 1..=k {
        for j in (i + 1)..=k.min(i + delta.saturating_sub(1)) {
            out.push((i, j));
        }
    }
    out
}

/// Draws up to `budget` pairs from a reranked list.
///
/// The generator is keyed by `(seed, query id)`, so the draw for one query
/// does not depend on which other queries were sampled before it.
pub fn sample_pairs(reranked: &RunList, delta: usize, budget: usize, seed: u64) -> Result<PairSample> {
    if delta < 1 {
        return Err(Error::Config("delta must be at least 1".into()));
    }
    if budget < 1 {
        return Err(Error::Config("pair budget must be at least 1".into()));
    }
    let k = reranked.len();
    let candidates = candidate_pairs(k, delta);
    let mut rng = keyed_rng("pair-sample", seed, &[&reranked.query_id]);
    let chosen: Vec<(usize, usize)> = if candidates.len() <= budget {
        candidates
    } else {
        let mut idx = sample(&mut rng, candidates.len(), budget).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| candidates[i]).collect()
    };
    let pairs = chosen
        .into_iter()
        .map(|(a, b)| {
            let (ri, rj) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            SampledPair {
                rank_i: ri,
                rank_j: rj,
                doc_i: reranked.entries[ri - 1].doc_id.clone(),
                doc_j: reranked.entries[rj - 1].doc_id.clone(),
                p: None,
            }
        })
        .collect();
    Ok(PairSample {
        query_id: reranked.query_id.clone(),
        pairs,
    })
}
