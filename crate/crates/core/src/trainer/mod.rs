//! Iterative distillation.
//!
//! One iteration retrieves the top-k documents for every training query with
//! the current model, reranks them with the pointwise teacher, samples pairs
//! from the reranked lists for the pairwise teacher, and then trains the
//! encoder on the frozen targets. The index is rebuilt between iterations.

mod config;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{DistillConfig, CONFIG_KEYS};

use crate::corpus::{Corpus, Document, Judgments, Query, RunList, Split};
use crate::distill::{loss_total, sample_pairs, LossBreakdown, PairSample, QueryExample};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metric, MetricReport};
use crate::index::Index;
use crate::seed::{keyed_rng, keyed_seed};
use crate::teacher::{
    rerank, PairScore, PairwiseTeacher, PointwiseTeacher, QueryTeacherScores, Symmetrized,
    TeacherScores,
};

/// Metrics recorded on the dev split after every iteration.
pub const DEV_METRICS: [Metric; 4] = [
    Metric::Mrr(10),
    Metric::Ndcg(10),
    Metric::Recall(100),
    Metric::Success(5),
];

#[derive(Clone, Copy)]
pub struct Teachers<'a> {
    pub pointwise: &'a dyn PointwiseTeacher,
    pub pairwise: &'a dyn PairwiseTeacher,
}

/// Frozen distillation targets for one training query.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub query_id: String,
    /// Student top-k in retrieval order.
    pub retrieved: RunList,
    /// The same documents ordered by the pointwise teacher; scores are the
    /// teacher's.
    pub reranked: RunList,
    /// Pairs drawn from `reranked`, with teacher probabilities.
    pub pairs: PairSample,
}

impl PreparedQuery {
    pub fn teacher_scores(&self) -> QueryTeacherScores {
        QueryTeacherScores {
            query_id: self.query_id.clone(),
            pointwise: self
                .reranked
                .entries
                .iter()
                .map(|e| (e.doc_id.clone(), e.score))
                .collect(),
            pairwise: self
                .pairs
                .pairs
                .iter()
                .map(|p| PairScore {
                    i: p.doc_i.clone(),
                    j: p.doc_j.clone(),
                    p: p.p.expect("prepared pairs are scored"),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationState {
    pub iteration: usize,
    /// Fingerprint of the model the index was built with.
    pub fingerprint: String,
    pub queries: Vec<PreparedQuery>,
}

impl IterationState {
    pub fn teacher_scores(&self) -> TeacherScores {
        TeacherScores {
            queries: self.queries.iter().map(PreparedQuery::teacher_scores).collect(),
        }
    }

    pub fn retrieved_runs(&self) -> Vec<RunList> {
        self.queries.iter().map(|q| q.retrieved.clone()).collect()
    }

    pub fn reranked_runs(&self) -> Vec<RunList> {
        self.queries.iter().map(|q| q.reranked.clone()).collect()
    }
}

pub fn init_model(corpus: &Corpus, config: &DistillConfig) -> Result<EncoderModel> {
    EncoderModel::new(EncoderConfig {
        vocab_size: corpus.vocab().len(),
        dim: config.dim,
        similarity: config.similarity,
        shared: config.shared_tables,
        seed: config.seed,
    })
}

fn pair_seed(config: &DistillConfig, iteration: usize) -> u64 {
    keyed_seed("iteration-pairs", config.seed, &[&iteration.to_string()])
}

/// Retrieves, reranks and samples pairs for every training query.
pub fn prepare_iteration(
    model: &EncoderModel,
    corpus: &Corpus,
    teachers: Teachers<'_>,
    config: &DistillConfig,
    iteration: usize,
) -> Result<IterationState> {
    let index = Index::build(model, corpus)?;
    let train: Vec<&Query> = corpus.queries_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Validation("corpus has no training queries".into()));
    }
    let seed = pair_seed(config, iteration);
    let symmetrized = Symmetrized(teachers.pairwise);
    let pairwise: &dyn PairwiseTeacher = if config.symmetrize_pairs {
        &symmetrized
    } else {
        teachers.pairwise
    };
    let queries = train
        .par_iter()
        .map(|q| {
            let retrieved = index.retrieve(model, q, config.k)?;
            let reranked = rerank(&retrieved, teachers.pointwise, corpus)?;
            let mut pairs = sample_pairs(&reranked, config.delta, config.pairs, seed)?;
            pairs.score(pairwise, corpus)?;
            Ok(PreparedQuery {
                query_id: q.query_id.clone(),
                retrieved,
                reranked,
                pairs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IterationState {
        iteration,
        fingerprint: model.fingerprint(),
        queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub l_cl: f64,
    pub l_kd: f64,
    pub l_pair: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub log: Vec<StepLog>,
}

/// Labeled positives per prepared query, read once up front.
fn labeled_positives<'c>(
    state: &IterationState,
    corpus: &'c Corpus,
    labels: &Judgments,
) -> Result<Vec<Vec<&'c Document>>> {
    state
        .queries
        .iter()
        .map(|q| {
            labels
                .relevant(&q.query_id)
                .into_iter()
                .map(|d| corpus.doc(d))
                .collect()
        })
        .collect()
}

/// `loss` is `Err` when the loss itself could not be formed.
fn write_diagnostic(
    path: &Path,
    step: usize,
    batch: &[&str],
    loss: std::result::Result<&LossBreakdown, &str>,
) -> Result<()> {
    let body = match loss {
        Ok(loss) => serde_json::json!({
            "step": step,
            "queries": batch,
            "l_cl": loss.l_cl.to_string(),
            "l_kd": loss.l_kd.to_string(),
            "l_pair": loss.l_pair.to_string(),
            "total": loss.total.to_string(),
            "grad_cl_finite": loss.grad_cl.is_finite(),
            "grad_kd_finite": loss.grad_kd.is_finite(),
            "grad_pair_finite": loss.grad_pair.is_finite(),
        }),
        Err(error) => serde_json::json!({
            "step": step,
            "queries": batch,
            "error": error,
        }),
    };
    std::fs::write(path, serde_json::to_string_pretty(&body)? + "\n")
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Trains on the frozen targets of one iteration.
///
/// `model` must be the model the targets were prepared with. Labels are read
/// only when the contrastive term is enabled. A non-finite loss aborts the
/// iteration; with `diagnostic_dir` set, the offending step is written there.
pub fn train_iteration(
    mut model: EncoderModel,
    state: &IterationState,
    corpus: &Corpus,
    labels: Option<&Judgments>,
    config: &DistillConfig,
    diagnostic_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let current = model.fingerprint();
    if current != state.fingerprint {
        return Err(Error::StaleIndex {
            index: state.fingerprint.clone(),
            model: current,
        });
    }
    let loss_cfg = config.loss_config();
    let positives = if loss_cfg.use_cl {
        let labels = labels.ok_or_else(|| {
            Error::Config("the contrastive term needs relevance judgments".into())
        })?;
        labeled_positives(state, corpus, labels)?
    } else {
        vec![Vec::new(); state.queries.len()]
    };
    let positive_ids: Vec<HashSet<&str>> = positives
        .iter()
        .map(|ps| ps.iter().map(|d| d.doc_id.as_str()).collect())
        .collect();
    let prepared_docs: Vec<Vec<&Document>> = state
        .queries
        .iter()
        .map(|q| q.reranked.doc_ids().map(|d| corpus.doc(d)).collect())
        .collect::<Result<_>>()?;
    let query_refs: Vec<&Query> = state
        .queries
        .iter()
        .map(|q| corpus.query(&q.query_id))
        .collect::<Result<_>>()?;

    let iteration = state.iteration.to_string();
    let n = state.queries.len();
    let mut velocity = vec![0.0; model.params().len()];
    let mut log = Vec::with_capacity(config.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0usize;

    for step in 1..=config.steps {
        if cursor >= order.len() {
            order = (0..n).collect();
            let mut rng = keyed_rng("epoch-shuffle", config.seed, &[&iteration, &epoch.to_string()]);
            order.shuffle(&mut rng);
            cursor = 0;
            epoch += 1;
        }
        let end = (cursor + config.batch_size).min(n);
        let batch: Vec<usize> = order[cursor..end].to_vec();
        cursor = end;

        let step_key = step.to_string();
        let chosen: Vec<Option<&Document>> = batch
            .iter()
            .map(|&qi| {
                let ps = &positives[qi];
                if ps.is_empty() {
                    return None;
                }
                let mut rng = keyed_rng(
                    "positive",
                    config.seed,
                    &[&iteration, &step_key, &state.queries[qi].query_id],
                );
                Some(ps[rng.random_range(0..ps.len())])
            })
            .collect();

        let examples: Vec<QueryExample<'_>> = batch
            .iter()
            .enumerate()
            .map(|(bi, &qi)| {
                let prepared = &state.queries[qi];
                let positive = chosen[bi];
                let mut negatives = Vec::new();
                if let Some(pos) = positive {
                    let cap = config.candidates.saturating_sub(1);
                    let mut seen: HashSet<&str> = HashSet::new();
                    seen.insert(pos.doc_id.as_str());
                    let in_batch = chosen
                        .iter()
                        .enumerate()
                        .filter(|&(bj, _)| bj != bi)
                        .filter_map(|(_, d)| *d);
                    let hard = prepared_docs[qi].iter().copied();
                    for doc in in_batch.chain(hard) {
                        if negatives.len() >= cap {
                            break;
                        }
                        let id = doc.doc_id.as_str();
                        if positive_ids[qi].contains(id) || !seen.insert(id) {
                            continue;
                        }
                        negatives.push(doc);
                    }
                }
                QueryExample {
                    query: query_refs[qi],
                    kd_docs: prepared_docs[qi].clone(),
                    teacher_scores: prepared.reranked.entries.iter().map(|e| e.score).collect(),
                    pairs: prepared.pairs.pairs.clone(),
                    positive,
                    negatives,
                }
            })
            .collect();

        let ids = || -> Vec<&str> {
            batch
                .iter()
                .map(|&qi| state.queries[qi].query_id.as_str())
                .collect()
        };
        let diverged = |detail: std::result::Result<&LossBreakdown, &str>| -> Error {
            let mut message = format!("loss at iteration {iteration}, step {step}");
            if let Some(dir) = diagnostic_dir {
                let path = dir.join(format!("iter{iteration}.diagnostic.json"));
                if let Err(e) = write_diagnostic(&path, step, &ids(), detail) {
                    return e;
                }
                message.push_str(&format!("; diagnostic written to {}", path.display()));
            }
            Error::NonFinite(message)
        };
        let loss = match loss_total(&model, &examples, &loss_cfg) {
            Ok(loss) => loss,
            Err(Error::NonFinite(what)) => return Err(diverged(Err(&what))),
            Err(e) => return Err(e),
        };
        let grad = loss.total_gradient(&loss_cfg);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(diverged(Ok(&loss)));
        }

        let (lr, mu) = (config.learning_rate, config.momentum);
        for ((p, v), g) in model
            .params_mut()
            .iter_mut()
            .zip(velocity.iter_mut())
            .zip(&grad.data)
        {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        log.push(StepLog {
            step,
            l_cl: loss.l_cl,
            l_kd: loss.l_kd,
            l_pair: loss.l_pair,
            total: loss.total,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Dev queries and their judgments; kept apart from the training labels.
#[derive(Clone, Copy)]
pub struct DevSet<'a> {
    pub queries: &'a [&'a Query],
    pub judgments: &'a Judgments,
}

/// Retrieves for `queries` with a fresh index and scores the runs.
pub fn evaluate_model(
    model: &EncoderModel,
    corpus: &Corpus,
    queries: &[&Query],
    judgments: &Judgments,
    metrics: &[Metric],
) -> Result<MetricReport> {
    let depth = metrics.iter().map(Metric::k).max().unwrap_or(10);
    let index = Index::build(model, corpus)?;
    let runs = index.retrieve_all(model, queries.par_iter().copied(), depth)?;
    evaluate(&runs, judgments, metrics)
}

fn means(report: &MetricReport) -> BTreeMap<String, f64> {
    report
        .metrics
        .iter()
        .cloned()
        .zip(report.mean.iter().copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub start_fingerprint: String,
    pub end_fingerprint: String,
    pub final_loss: Option<f64>,
    pub dev: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: EncoderModel,
    /// Dev metrics of the starting model.
    pub initial_dev: Option<BTreeMap<String, f64>>,
    pub iterations: Vec<IterationRecord>,
}

pub fn iteration_paths(dir: &Path, iteration: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("iter{iteration}.ckpt")),
        dir.join(format!("iter{iteration}.scores.jsonl")),
        dir.join(format!("iter{iteration}.log.jsonl")),
    )
}

fn write_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let ctx = || path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut out = BufWriter::new(file);
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}

/// Runs `config.iterations` rounds of prepare-then-train.
///
/// With `out_dir` set, each round writes `iter<N>.scores.jsonl`,
/// `iter<N>.log.jsonl` and `iter<N>.ckpt`.
pub fn run_iterative(
    mut model: EncoderModel,
    corpus: &Corpus,
    teachers: Teachers<'_>,
    labels: Option<&Judgments>,
    dev: Option<DevSet<'_>>,
    config: &DistillConfig,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let dev_metrics = |m: &EncoderModel| -> Result<Option<BTreeMap<String, f64>>> {
        dev.map(|d| evaluate_model(m, corpus, d.queries, d.judgments, &DEV_METRICS).map(|r| means(&r)))
            .transpose()
    };
    let initial_dev = dev_metrics(&model)?;
    let mut iterations = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let state = prepare_iteration(&model, corpus, teachers, config, iteration)?;
        if let Some(dir) = out_dir {
            state.teacher_scores().save(iteration_paths(dir, iteration).1)?;
        }
        let start_fingerprint = state.fingerprint.clone();
        let outcome = train_iteration(model, &state, corpus, labels, config, out_dir)?;
        model = outcome.model;
        if let Some(dir) = out_dir {
            let (ckpt, _, log) = iteration_paths(dir, iteration);
            write_log(&log, &outcome.log)?;
            model.save(ckpt)?;
        }
        iterations.push(IterationRecord {
            iteration,
            start_fingerprint,
            end_fingerprint: model.fingerprint(),
            final_loss: outcome.log.last().map(|l| l.total),
            dev: dev_metrics(&model)?,
        });
    }
    Ok(RunOutcome {
        model,
        initial_dev,
        iterations,
    })
}
