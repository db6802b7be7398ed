//! Trainable pairwise classifier.
//!
//! Logistic regression over the joint (query, doc_i, doc_j) input: the three
//! term-count vectors concatenated with the elementwise query-document
//! products for both documents. Trained with full-batch gradient descent on
//! binary cross-entropy against `y = 1` iff `doc_i` is the more relevant one.

use crate::corpus::{Document, Query, TextFeatures};
use crate::error::{Error, Result};
use crate::seed::digest_hex;
use crate::teacher::synthetic::logistic;
use crate::teacher::PairwiseTeacher;

const BLOCKS: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub query: &'a Query,
    pub doc_i: &'a Document,
    pub doc_j: &'a Document,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTrainConfig {
    pub steps: usize,
    /// `None` uses `4 / mean(|x|^2)`, the inverse of an upper bound on the
    /// loss smoothness constant, so full-batch descent is monotone.
    pub learning_rate: Option<f64>,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseClassifier {
    vocab_size: usize,
    weights: Vec<f64>,
    bias: f64,
}

fn product(a: &TextFeatures, b: &TextFeatures) -> Vec<(u32, f64)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.counts.len() && j < b.counts.len() {
        let (ta, ca) = a.counts[i];
        let (tb, cb) = b.counts[j];
        match ta.cmp(&tb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((ta, ca * cb));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Sparse features and a 0/1 label.
pub type Example = (Vec<(usize, f64)>, f64);

impl PairwiseClassifier {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            weights: vec![0.0; BLOCKS * vocab_size],
            bias: 0.0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Sparse joint features as `(weight index, value)`.
    pub fn features(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Vec<(usize, f64)> {
        let v = self.vocab_size;
        let blocks: [Vec<(u32, f64)>; BLOCKS] = [
            query.features.counts.clone(),
            doc_i.features.counts.clone(),
            doc_j.features.counts.clone(),
            product(&query.features, &doc_i.features),
            product(&query.features, &doc_j.features),
        ];
        blocks
            .iter()
            .enumerate()
            .flat_map(|(b, block)| block.iter().map(move |&(t, c)| (b * v + t as usize, c)))
            .filter(|&(idx, _)| idx < BLOCKS * v)
            .collect()
    }

    fn raw(&self, x: &[(usize, f64)]) -> f64 {
        self.bias + x.iter().map(|&(i, c)| self.weights[i] * c).sum::<f64>()
    }

    pub fn predict(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> f64 {
        logistic(self.raw(&self.features(query, doc_i, doc_j)))
    }

    /// Mean binary cross-entropy.
    pub fn loss(&self, examples: &[Example]) -> f64 {
        let total: f64 = examples
            .iter()
            .map(|(x, y)| {
                let z = self.raw(x);
                // softplus(z) - y z
                z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
            })
            .sum();
        total / examples.len() as f64
    }

    /// Gradient of the mean BCE: `(d weights, d bias)`.
    pub fn gradient(&self, examples: &[Example]) -> (Vec<f64>, f64) {
        let n = examples.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        for (x, y) in examples {
            let r = (logistic(self.raw(x)) - y) / n;
            gb += r;
            for &(i, c) in x {
                gw[i] += r * c;
            }
        }
        (gw, gb)
    }

    pub fn examples(&self, triplets: &[Triplet<'_>]) -> Result<Vec<Example>> {
        triplets
            .iter()
            .map(|t| {
                if t.label != 0.0 && t.label != 1.0 {
                    return Err(Error::Validation(format!(
                        "pairwise label must be 0 or 1, got {}",
                        t.label
                    )));
                }
                Ok((self.features(t.query, t.doc_i, t.doc_j), t.label))
            })
            .collect()
    }
}

/// Full-batch gradient descent; returns the training loss before each step
/// and after the last one.
pub fn train_pairwise_classifier(
    classifier: &mut PairwiseClassifier,
    triplets: &[Triplet<'_>],
    config: ClassifierTrainConfig,
) -> Result<Vec<f64>> {
    if triplets.is_empty() {
        return Err(Error::Validation("no training triplets".into()));
    }
    let examples = classifier.examples(triplets)?;
    let lr = match config.learning_rate {
        Some(lr) if lr.is_finite() && lr >= 0.0 => lr,
        Some(lr) => return Err(Error::Config(format!("invalid learning rate {lr}"))),
        None => {
            let mean_sq = examples
                .iter()
                .map(|(x, _)| 1.0 + x.iter().map(|(_, c)| c * c).sum::<f64>())
                .sum::<f64>()
                / examples.len() as f64;
            4.0 / mean_sq
        }
    };
    let mut history = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        history.push(classifier.loss(&examples));
        let (gw, gb) = classifier.gradient(&examples);
        for (w, g) in classifier.weights.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        classifier.bias -= lr * gb;
    }
    history.push(classifier.loss(&examples));
    Ok(history)
}

impl PairwiseTeacher for PairwiseClassifier {
    fn fingerprint(&self) -> String {
        let mut bytes: Vec<u8> = self.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        bytes.extend_from_slice(&self.bias.to_le_bytes());
        format!("classifier:{}", digest_hex(&bytes))
    }

    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
        Ok(self.predict(query, doc_i, doc_j))
    }
}
