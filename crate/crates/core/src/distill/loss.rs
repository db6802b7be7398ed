//! Contrastive and distillation losses over student similarity scores.
//!
//! Each loss has a scalar form over a score vector, returning the loss and its
//! gradient with respect to the scores, and a model form that encodes the
//! texts, evaluates the scalar form and backpropagates into the encoder.
//!
//! KL divergences are accumulated as `sum_i q_i * g(ln p_i - ln q_i)` with
//! `g(d) = e^d (d - 1) + 1 >= 0`. Because both distributions sum to one this
//! equals `sum_i p_i ln(p_i / q_i)`, but every summand is non-negative and a
//! zero-probability teacher entry contributes its `0 ln 0 = 0` limit.

use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Document, Query};
use crate::distill::pairs::SampledPair;
use crate::encoder::{EncoderModel, Gradient, Repr, Side};
use crate::error::{Error, Result};

/// `(probabilities, log-probabilities)`.
pub fn softmax(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let log: Vec<f64> = x.iter().map(|v| v - lse).collect();
    (log.iter().map(|l| l.exp()).collect(), log)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `e^d (d - 1) + 1`, accurate near zero.
fn kl_kernel(d: f64) -> f64 {
    if d.abs() < 1e-3 {
        d * d * (0.5 + d * (1.0 / 3.0 + d * (1.0 / 8.0 + d / 30.0)))
    } else {
        d * d.exp() - d.exp_m1()
    }
}

/// One summand `p ln(p/q) - p + q` from log-probabilities.
fn kl_component(log_p: f64, log_q: f64) -> f64 {
    let q = log_q.exp();
    if log_p == f64::NEG_INFINITY {
        return q;
    }
    let d = log_p - log_q;
    if d > 1.0 {
        log_p.exp() * (d - 1.0) + q
    } else {
        q * kl_kernel(d)
    }
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x == 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

/// `-log softmax(scores)[positive]` and its score gradient.
pub fn infonce(scores: &[f64], positive: usize) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::Validation("contrastive candidate set is empty".into()));
    }
    if positive >= scores.len() {
        return Err(Error::Validation("positive index out of range".into()));
    }
    let (probs, log) = softmax(scores);
    let mut grad = probs;
    grad[positive] -= 1.0;
    Ok((-log[positive], grad))
}

/// `KL(softmax(teacher / tau) || softmax(student))` and its student-score
/// gradient `P_student - P_teacher`.
pub fn pointwise_kd(student: &[f64], teacher: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    if student.len() != teacher.len() {
        return Err(Error::DimMismatch {
            left: student.len(),
            right: teacher.len(),
        });
    }
    if student.len() < 2 {
        return Err(Error::Validation("distillation needs at least two documents".into()));
    }
    let scaled: Vec<f64> = teacher.iter().map(|t| t / tau).collect();
    let (pt, log_pt) = softmax(&scaled);
    let (ps, log_ps) = softmax(student);
    let loss = log_pt
        .iter()
        .zip(&log_ps)
        .map(|(&lp, &lq)| kl_component(lp, lq))
        .sum();
    let grad = ps.iter().zip(&pt).map(|(s, t)| s - t).collect();
    Ok((loss, grad))
}

/// Binary `KL(p_teacher || logistic(s_i - s_j))` and its gradient with
/// respect to `s_i` (the gradient for `s_j` is the negation).
pub fn pair_kl(s_i: f64, s_j: f64, p_teacher: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p_teacher) {
        return Err(Error::Validation(format!(
            "teacher probability {p_teacher} outside [0, 1]"
        )));
    }
    if !(s_i.is_finite() && s_j.is_finite()) {
        return Err(Error::NonFinite(format!("pair scores ({s_i}, {s_j})")));
    }
    let x = s_i - s_j;
    let log_q = -softplus(-x);
    let log_not_q = -softplus(x);
    let loss = kl_component(ln_or_neg_inf(p_teacher), log_q)
        + kl_component(ln_or_neg_inf(1.0 - p_teacher), log_not_q);
    Ok((loss, log_q.exp() - p_teacher))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PairReduction {
    Sum,
    Mean,
}

impl FromStr for PairReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PairReduction::Sum),
            "mean" => Ok(PairReduction::Mean),
            other => Err(Error::Config(format!("unknown pair reduction `{other}`"))),
        }
    }
}

impl std::fmt::Display for PairReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairReduction::Sum => "sum",
            PairReduction::Mean => "mean",
        })
    }
}

/// Student scores for one query over a candidate set, kept for backprop.
struct Scored<'a> {
    query: &'a Query,
    q_repr: Repr,
    docs: Vec<&'a Document>,
    reprs: Vec<Repr>,
    scores: Vec<f64>,
    position: HashMap<&'a str, usize>,
}

impl<'a> Scored<'a> {
    fn new(model: &EncoderModel, query: &'a Query, docs: Vec<&'a Document>) -> Result<Self> {
        let q_repr = model.encode_query(query)?;
        let mut position = HashMap::with_capacity(docs.len());
        let mut unique = Vec::with_capacity(docs.len());
        for d in docs {
            if !position.contains_key(d.doc_id.as_str()) {
                position.insert(d.doc_id.as_str(), unique.len());
                unique.push(d);
            }
        }
        let reprs = unique
            .iter()
            .map(|d| model.encode_doc(d))
            .collect::<Result<Vec<_>>>()?;
        let scores = reprs
            .iter()
            .map(|r| model.similarity(&q_repr, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            query,
            q_repr,
            docs: unique,
            reprs,
            scores,
            position,
        })
    }

    fn index(&self, doc_id: &str) -> Result<usize> {
        self.position
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    fn gather(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.scores[i]).collect()
    }

    /// Adds `sum_i dscores[i] * ds_i/dtheta` into `grad`.
    fn backprop(&self, model: &EncoderModel, dscores: &[f64], grad: &mut Gradient) -> Result<()> {
        let mut q_acc = vec![0.0; self.q_repr.data.len()];
        for (i, &g) in dscores.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("score gradient {g}")));
            }
            if g == 0.0 {
                continue;
            }
            let (gq, gd) = model.similarity_grad(&self.q_repr, &self.reprs[i], g)?;
            for (a, b) in q_acc.iter_mut().zip(&gq) {
                *a += b;
            }
            model.accumulate(Side::Doc, &self.docs[i].features, &self.reprs[i], &gd, grad);
        }
        model.accumulate(Side::Query, &self.query.features, &self.q_repr, &q_acc, grad);
        Ok(())
    }

    fn scatter(&self, idx: &[usize], local: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.docs.len()];
        for (&i, &g) in idx.iter().zip(local) {
            out[i] += g;
        }
        out
    }
}

/// InfoNCE over `{positive} ∪ negatives`.
pub fn loss_infonce(
    model: &EncoderModel,
    query: &Query,
    positive: &Document,
    negatives: &[&Document],
) -> Result<(f64, Gradient)> {
    if negatives.iter().any(|n| n.doc_id == positive.doc_id) {
        return Err(Error::Validation(format!(
            "positive `{}` is also listed as a negative",
            positive.doc_id
        )));
    }
    let docs: Vec<&Document> = std::iter::once(positive).chain(negatives.iter().copied()).collect();
    let scored = Scored::new(model, query, docs)?;
    let (loss, dscores) = infonce(&scored.scores, 0)?;
    let mut grad = model.zero_gradient();
    scored.backprop(model, &dscores, &mut grad)?;
    Ok((loss, grad))
}

pub fn loss_pointwise_kd(
    model: &EncoderModel,
    query: &Query,
    docs: &[&Document],
    teacher_scores: &[f64],
    tau: f64,
) -> Result<(f64, Gradient)> {
    let scored = Scored::new(model, query, docs.to_vec())?;
    if scored.docs.len() != docs.len() {
        return Err(Error::Validation("duplicate document in distillation set".into()));
    }
    let (loss, dscores) = pointwise_kd(&scored.scores, teacher_scores, tau)?;
    let mut grad = model.zero_gradient();
    scored.backprop(model, &dscores, &mut grad)?;
    Ok((loss, grad))
}

fn pair_terms(
    scored: &Scored<'_>,
    pairs: &[SampledPair],
    reduction: PairReduction,
) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut dscores = vec![0.0; scored.docs.len()];
    for pair in pairs {
        let i = scored.index(&pair.doc_i)?;
        let j = scored.index(&pair.doc_j)?;
        let p = pair.p.ok_or_else(|| {
            Error::Validation(format!(
                "pair ({}, {}) has no teacher probability",
                pair.doc_i, pair.doc_j
            ))
        })?;
        let (l, g) = pair_kl(scored.scores[i], scored.scores[j], p)?;
        loss += l;
        dscores[i] += g;
        dscores[j] -= g;
    }
    if reduction == PairReduction::Mean && !pairs.is_empty() {
        let n = pairs.len() as f64;
        loss /= n;
        dscores.iter_mut().for_each(|g| *g /= n);
    }
    Ok((loss, dscores))
}

/// Pairwise KL over sampled pairs whose documents must all lie in `docs`.
pub fn loss_pairwise_kd(
    model: &EncoderModel,
    query: &Query,
    docs: &[&Document],
    pairs: &[SampledPair],
    reduction: PairReduction,
) -> Result<(f64, Gradient)> {
    let scored = Scored::new(model, query, docs.to_vec())?;
    let (loss, dscores) = pair_terms(&scored, pairs, reduction)?;
    let mut grad = model.zero_gradient();
    scored.backprop(model, &dscores, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub use_cl: bool,
    pub use_kd: bool,
    pub use_pair: bool,
    pub tau: f64,
    pub lambda_kd: f64,
    pub lambda_pair: f64,
    pub pair_reduction: PairReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            use_cl: true,
            use_kd: true,
            use_pair: true,
            tau: 1.0,
            lambda_kd: 1.0,
            lambda_pair: 3.0,
            pair_reduction: PairReduction::Mean,
        }
    }
}

/// Training inputs for one query.
#[derive(Debug, Clone)]
pub struct QueryExample<'a> {
    pub query: &'a Query,
    /// Pointwise-reranked top-k; the support of both KD distributions.
    pub kd_docs: Vec<&'a Document>,
    /// Teacher scores aligned with `kd_docs`.
    pub teacher_scores: Vec<f64>,
    pub pairs: Vec<SampledPair>,
    /// Labeled positive; `None` excludes the query from the contrastive term.
    pub positive: Option<&'a Document>,
    pub negatives: Vec<&'a Document>,
}

/// Batch-averaged loss terms with one gradient per term.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_cl: f64,
    pub l_kd: f64,
    pub l_pair: f64,
    pub total: f64,
    pub grad_cl: Gradient,
    pub grad_kd: Gradient,
    pub grad_pair: Gradient,
    /// Queries that contributed to the contrastive term.
    pub cl_queries: usize,
}

impl LossBreakdown {
    /// `grad_cl + lambda_kd * grad_kd + lambda_pair * grad_pair`.
    pub fn total_gradient(&self, config: &LossConfig) -> Gradient {
        let mut g = self.grad_cl.clone();
        g.add_scaled(&self.grad_kd, config.lambda_kd);
        g.add_scaled(&self.grad_pair, config.lambda_pair);
        g
    }

    pub fn is_finite(&self) -> bool {
        [self.l_cl, self.l_kd, self.l_pair, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

struct QueryLoss {
    cl: Option<(f64, Gradient)>,
    kd: (f64, Gradient),
    pair: (f64, Gradient),
}

fn query_loss(model: &EncoderModel, ex: &QueryExample<'_>, config: &LossConfig) -> Result<QueryLoss> {
    let mut candidates: Vec<&Document> = ex.kd_docs.clone();
    let cl_enabled = config.use_cl && ex.positive.is_some();
    if cl_enabled {
        let positive = ex.positive.expect("checked");
        if ex.negatives.iter().any(|n| n.doc_id == positive.doc_id) {
            return Err(Error::Validation(format!(
                "positive `{}` is also listed as a negative",
                positive.doc_id
            )));
        }
        candidates.push(positive);
        candidates.extend(ex.negatives.iter().copied());
    }
    let scored = Scored::new(model, ex.query, candidates)?;

    let cl = if cl_enabled {
        let mut idx = vec![scored.index(&ex.positive.expect("checked").doc_id)?];
        for n in &ex.negatives {
            idx.push(scored.index(&n.doc_id)?);
        }
        let (l, local) = infonce(&scored.gather(&idx), 0)?;
        let mut g = model.zero_gradient();
        scored.backprop(model, &scored.scatter(&idx, &local), &mut g)?;
        Some((l, g))
    } else {
        None
    };

    let kd_idx: Vec<usize> = ex
        .kd_docs
        .iter()
        .map(|d| scored.index(&d.doc_id))
        .collect::<Result<_>>()?;

    let kd = if config.use_kd {
        let (l, local) = pointwise_kd(&scored.gather(&kd_idx), &ex.teacher_scores, config.tau)?;
        let mut g = model.zero_gradient();
        scored.backprop(model, &scored.scatter(&kd_idx, &local), &mut g)?;
        (l, g)
    } else {
        (0.0, model.zero_gradient())
    };

    let pair = if config.use_pair {
        for p in &ex.pairs {
            for d in [&p.doc_i, &p.doc_j] {
                if !ex.kd_docs.iter().any(|k| &k.doc_id == d) {
                    return Err(Error::UnknownDoc(d.clone()));
                }
            }
        }
        let (l, dscores) = pair_terms(&scored, &ex.pairs, config.pair_reduction)?;
        let mut g = model.zero_gradient();
        scored.backprop(model, &dscores, &mut g)?;
        (l, g)
    } else {
        (0.0, model.zero_gradient())
    };

    Ok(QueryLoss { cl, kd, pair })
}

/// Combined objective averaged over the batch.
///
/// Per-query work runs in parallel; the reduction walks queries in batch
/// order so the result does not depend on the thread count.
pub fn loss_total(
    model: &EncoderModel,
    batch: &[QueryExample<'_>],
    config: &LossConfig,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let per_query = batch
        .par_iter()
        .map(|ex| query_loss(model, ex, config))
        .collect::<Result<Vec<_>>>()?;

    let mut out = LossBreakdown {
        l_cl: 0.0,
        l_kd: 0.0,
        l_pair: 0.0,
        total: 0.0,
        grad_cl: model.zero_gradient(),
        grad_kd: model.zero_gradient(),
        grad_pair: model.zero_gradient(),
        cl_queries: 0,
    };
    for q in &per_query {
        if let Some((l, g)) = &q.cl {
            out.l_cl += l;
            out.grad_cl.add_scaled(g, 1.0);
            out.cl_queries += 1;
        }
        out.l_kd += q.kd.0;
        out.grad_kd.add_scaled(&q.kd.1, 1.0);
        out.l_pair += q.pair.0;
        out.grad_pair.add_scaled(&q.pair.1, 1.0);
    }
    let n = batch.len() as f64;
    if out.cl_queries > 0 {
        let m = out.cl_queries as f64;
        out.l_cl /= m;
        out.grad_cl.scale(1.0 / m);
    }
    out.l_kd /= n;
    out.grad_kd.scale(1.0 / n);
    out.l_pair /= n;
    out.grad_pair.scale(1.0 / n);
    out.total = out.l_cl + config.lambda_kd * out.l_kd + config.lambda_pair * out.l_pair;
    Ok(out)
}
