//! Seeded synthetic corpora with a known relevance function.
//!
//! Every term carries a latent topic loading. A text's topic vector is the
//! mean of its tokens' loadings, and true relevance is the scaled inner
//! product of query and document topic vectors. With fixed text lengths this
//! is a bilinear function of the term-count features, so a linear dual
//! encoder with `dim >= num_topics` can represent it exactly.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Judgments, Split};
use crate::error::{Error, Result};
use crate::seed::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_docs: usize,
    pub num_train_queries: usize,
    pub num_dev_queries: usize,
    pub num_topics: usize,
    pub terms_per_topic: usize,
    pub background_terms: usize,
    pub doc_len: usize,
    pub query_len: usize,
    pub topics_per_doc: usize,
    pub topics_per_query: usize,
    /// Probability that a token is drawn from the background terms.
    pub background_rate: f64,
    pub relevance_scale: f64,
    /// Std-dev of the label noise added before thresholding judgments.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_docs: 1000,
            num_train_queries: 100,
            num_dev_queries: 20,
            num_topics: 16,
            terms_per_topic: 32,
            background_terms: 128,
            doc_len: 40,
            query_len: 6,
            topics_per_doc: 2,
            topics_per_query: 1,
            background_rate: 0.2,
            relevance_scale: 10.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn vocab_size(&self) -> usize {
        self.num_topics * self.terms_per_topic + self.background_terms
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        if self.num_docs == 0 {
            return fail("synthetic corpus needs at least one document");
        }
        if self.num_train_queries + self.num_dev_queries == 0 {
            return fail("synthetic corpus needs at least one query");
        }
        if self.num_topics == 0 || self.terms_per_topic == 0 {
            return fail("need at least one topic with at least one term");
        }
        if self.doc_len == 0 || self.query_len == 0 {
            return fail("text lengths must be positive");
        }
        if self.topics_per_doc == 0
            || self.topics_per_query == 0
            || self.topics_per_doc > self.num_topics
            || self.topics_per_query > self.num_topics
        {
            return fail("topics per text must be in 1..=num_topics");
        }
        if !(0.0..1.0).contains(&self.background_rate)
            || (self.background_rate > 0.0 && self.background_terms == 0)
        {
            return fail("background rate must be in [0, 1) with background terms available");
        }
        if !(self.relevance_scale.is_finite() && self.relevance_scale > 0.0) {
            return fail("relevance scale must be positive");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail("noise must be non-negative");
        }
        Ok(())
    }

    fn topic_term(topic: usize, j: usize) -> String {
        format!("t{topic:03}w{j:03}")
    }

    fn background_term(j: usize) -> String {
        format!("bg{j:04}")
    }
}

/// Term loadings and scale; the serialized form of the relevance oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceOracle {
    pub scale: f64,
    pub dim: usize,
    pub loadings: BTreeMap<String, Vec<f64>>,
}

impl RelevanceOracle {
    /// Mean loading over tokens; unknown tokens contribute zero but count
    /// towards the length.
    pub fn topic_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        if tokens.is_empty() {
            return v;
        }
        for t in tokens {
            if let Some(l) = self.loadings.get(t) {
                for (a, b) in v.iter_mut().zip(l) {
                    *a += b;
                }
            }
        }
        let n = tokens.len() as f64;
        v.iter_mut().for_each(|a| *a /= n);
        v
    }

    pub fn score_vectors(&self, q: &[f64], d: &[f64]) -> f64 {
        self.scale * q.iter().zip(d).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_vec(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_slice(&body)?)
    }
}

/// Relevance oracle bound to a corpus, with precomputed topic vectors.
#[derive(Debug, Clone)]
pub struct TrueRelevance {
    oracle: RelevanceOracle,
    docs: HashMap<String, Vec<f64>>,
    queries: HashMap<String, Vec<f64>>,
}

impl TrueRelevance {
    pub fn new(oracle: RelevanceOracle, corpus: &Corpus) -> Self {
        let docs = corpus
            .docs()
            .iter()
            .map(|d| (d.doc_id.clone(), oracle.topic_vector(&d.text)))
            .collect();
        let queries = corpus
            .queries()
            .iter()
            .map(|q| (q.query_id.clone(), oracle.topic_vector(&q.text)))
            .collect();
        Self {
            oracle,
            docs,
            queries,
        }
    }

    pub fn oracle(&self) -> &RelevanceOracle {
        &self.oracle
    }

    pub fn score(&self, query_id: &str, doc_id: &str) -> Result<f64> {
        let q = self
            .queries
            .get(query_id)
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
        let d = self
            .docs
            .get(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        Ok(self.oracle.score_vectors(q, d))
    }
}

fn sample_text<R: Rng>(
    rng: &mut R,
    spec: &SyntheticSpec,
    len: usize,
    n_topics: usize,
) -> (Vec<usize>, Vec<f64>, Vec<String>) {
    let topics = sample(rng, spec.num_topics, n_topics).into_vec();
    let weights: Vec<f64> = (0..n_topics).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        if rng.random::<f64>() < spec.background_rate {
            tokens.push(SyntheticSpec::background_term(
                rng.random_range(0..spec.background_terms),
            ));
            continue;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = topics.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        let term = rng.random_range(0..spec.terms_per_topic);
        tokens.push(SyntheticSpec::topic_term(topics[pick], term));
    }
    (topics, weights, tokens)
}

/// Generates a corpus, its thresholded judgments and the relevance oracle.
///
/// Judgments mark the top decile of (true relevance + label noise) per query
/// with grade 1; ties are broken by doc id.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Corpus, Judgments, TrueRelevance)> {
    spec.validate()?;
    let mut rng = keyed_rng("synthetic", spec.seed, &[]);

    let mut loadings = BTreeMap::new();
    for topic in 0..spec.num_topics {
        for j in 0..spec.terms_per_topic {
            let mut l = vec![0.0; spec.num_topics];
            l[topic] = rng.random_range(0.5..1.5);
            loadings.insert(SyntheticSpec::topic_term(topic, j), l);
        }
    }
    for j in 0..spec.background_terms {
        loadings.insert(SyntheticSpec::background_term(j), vec![0.0; spec.num_topics]);
    }
    let oracle = RelevanceOracle {
        scale: spec.relevance_scale,
        dim: spec.num_topics,
        loadings,
    };

    let doc_width = spec.num_docs.to_string().len().max(5);
    let docs: Vec<(String, String)> = (0..spec.num_docs)
        .map(|i| {
            let (_, _, tokens) = sample_text(&mut rng, spec, spec.doc_len, spec.topics_per_doc);
            (format!("d{:0w$}", i + 1, w = doc_width), tokens.join(" "))
        })
        .collect();
    let n_queries = spec.num_train_queries + spec.num_dev_queries;
    let query_width = n_queries.to_string().len().max(4);
    let queries: Vec<(String, String, Split)> = (0..n_queries)
        .map(|i| {
            let (_, _, tokens) =
                sample_text(&mut rng, spec, spec.query_len, spec.topics_per_query);
            let split = if i < spec.num_train_queries {
                Split::Train
            } else {
                Split::Dev
            };
            (format!("q{:0w$}", i + 1, w = query_width), tokens.join(" "), split)
        })
        .collect();

    let corpus = Corpus::from_texts(docs, queries)?;
    let relevance = TrueRelevance::new(oracle, &corpus);

    let positives = spec.num_docs.div_ceil(10);
    let mut judgments = Judgments::new();
    for q in corpus.queries() {
        let mut noise = keyed_rng("judgment-noise", spec.seed, &[&q.query_id]);
        let mut scored: Vec<(&str, f64)> = corpus
            .docs()
            .iter()
            .map(|d| {
                let mut s = relevance.score(&q.query_id, &d.doc_id)?;
                if spec.noise > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut noise);
                    s += spec.noise * z;
                }
                Ok((d.doc_id.as_str(), s))
            })
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (doc_id, _) in scored.into_iter().take(positives) {
            judgments.insert(&q.query_id, doc_id, 1);
        }
    }

    Ok((corpus, judgments, relevance))
}
