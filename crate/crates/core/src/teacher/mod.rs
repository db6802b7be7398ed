//! Pointwise and pairwise teacher rerankers.
//!
//! A pointwise teacher scores each (query, document) independently. A
//! pairwise teacher returns the probability that the first document is more
//! relevant than the second.

mod cache;
mod classifier;
mod llm;
mod prompt;
mod scores;
mod synthetic;

use crate::corpus::{Corpus, Document, Query, RunList};
use crate::error::{Error, Result};

pub use cache::{CachedPairwise, CachedPointwise};
pub use classifier::{train_pairwise_classifier, ClassifierTrainConfig, PairwiseClassifier, Triplet};
pub use llm::{
    llm_adapter_prefer, FileMockClient, LlmClient, LlmPairwiseTeacher, LlmRequest, LlmResponse,
    RelevanceMockClient, TransportError,
};
pub use prompt::{parse_pairwise_prompt, parse_pointwise_prompt, prompt_pairwise, prompt_pointwise};
pub use scores::{PairScore, QueryTeacherScores, TeacherScores};
pub use synthetic::{logistic, SyntheticTeacher};

pub trait PointwiseTeacher: Send + Sync {
    /// Identifies the teacher's parameters; used as the cache key prefix.
    fn fingerprint(&self) -> String;

    fn score(&self, query: &Query, doc: &Document) -> Result<f64>;
}

pub trait PairwiseTeacher: Send + Sync {
    fn fingerprint(&self) -> String;

    /// Probability in `[0, 1]` that `doc_i` is more relevant than `doc_j`.
    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64>;
}

impl<T: PointwiseTeacher + ?Sized> PointwiseTeacher for &T {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn score(&self, query: &Query, doc: &Document) -> Result<f64> {
        (**self).score(query, doc)
    }
}

impl<T: PairwiseTeacher + ?Sized> PairwiseTeacher for &T {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
        (**self).prefer(query, doc_i, doc_j)
    }
}

impl<T: PointwiseTeacher + ?Sized> PointwiseTeacher for Box<T> {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn score(&self, query: &Query, doc: &Document) -> Result<f64> {
        (**self).score(query, doc)
    }
}

impl<T: PairwiseTeacher + ?Sized> PairwiseTeacher for Box<T> {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
        (**self).prefer(query, doc_i, doc_j)
    }
}

/// Averages `prefer(i, j)` with `1 - prefer(j, i)`.
#[derive(Debug, Clone)]
pub struct Symmetrized<T>(pub T);

impl<T: PairwiseTeacher> PairwiseTeacher for Symmetrized<T> {
    fn fingerprint(&self) -> String {
        format!("sym({})", self.0.fingerprint())
    }

    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
        let forward = self.0.prefer(query, doc_i, doc_j)?;
        let backward = self.0.prefer(query, doc_j, doc_i)?;
        Ok(0.5 * (forward + 1.0 - backward))
    }
}

/// Scores a pointwise teacher by a plain function; handy for tests and the
/// identity/negation rerank checks.
pub struct FnPointwise<F> {
    name: String,
    f: F,
}

impl<F> FnPointwise<F>
where
    F: Fn(&Query, &Document) -> Result<f64> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> PointwiseTeacher for FnPointwise<F>
where
    F: Fn(&Query, &Document) -> Result<f64> + Send + Sync,
{
    fn fingerprint(&self) -> String {
        format!("fn:{}", self.name)
    }

    fn score(&self, query: &Query, doc: &Document) -> Result<f64> {
        (self.f)(query, doc)
    }
}

/// Reorders a run by pointwise teacher score, descending, ties by doc id.
/// The returned scores are the teacher's.
pub fn rerank<T: PointwiseTeacher + ?Sized>(run: &RunList, teacher: &T, corpus: &Corpus) -> Result<RunList> {
    let query = corpus.query(&run.query_id)?;
    let scored = run
        .entries
        .iter()
        .map(|e| {
            let s = teacher.score(query, corpus.doc(&e.doc_id)?)?;
            if !s.is_finite() {
                return Err(Error::NonFinite(format!(
                    "teacher score for ({}, {})",
                    run.query_id, e.doc_id
                )));
            }
            Ok((e.doc_id.clone(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = RunList::from_scores(run.query_id.clone(), scored);
    out.tag = run.tag.clone();
    Ok(out)
}
