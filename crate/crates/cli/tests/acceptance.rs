//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the summary lines are always printed.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 3 4`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use distillrank::corpus::{
    generate_synthetic, load_run, save_run, Corpus, Document, Judgments, Query, RunList, Split,
    SyntheticSpec, TrueRelevance,
};
use distillrank::distill::{
    candidate_count, candidate_pairs, loss_infonce, loss_pairwise_kd, loss_pointwise_kd,
    loss_total, pair_kl, pointwise_kd, sample_pairs, LossConfig, PairReduction, QueryExample,
    SampledPair,
};
use distillrank::encoder::{EncoderConfig, EncoderModel, Gradient, Similarity};
use distillrank::eval::{pairwise_disagreement, Metric, Qrels};
use distillrank::index::Index;
use distillrank::teacher::{rerank, PointwiseTeacher, SyntheticTeacher};
use distillrank::trainer::{init_model, run_iterative, DevSet, DistillConfig, RunOutcome, Teachers};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Tree = BTreeMap<PathBuf, Vec<u8>>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const MODES: [Similarity; 3] = [Similarity::Dot, Similarity::Cosine, Similarity::MaxSim];

// 1. gradients

fn words(r: &mut ChaCha8Rng, vocab: usize, len: usize) -> String {
    (0..len)
        .map(|_| format!("w{:03}", r.random_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_corpus(r: &mut ChaCha8Rng, docs: usize, queries: usize, vocab: usize) -> Corpus {
    let d = (0..docs)
        .map(|i| {
            let len = r.random_range(3..12);
            (format!("d{i:04}"), words(r, vocab, len))
        })
        .collect();
    let q = (0..queries)
        .map(|i| {
            let len = r.random_range(2..6);
            (format!("q{i:03}"), words(r, vocab, len), Split::Train)
        })
        .collect();
    Corpus::from_texts(d, q).unwrap()
}

fn random_pairs(r: &mut ChaCha8Rng, docs: &[&Document], n: usize) -> Vec<SampledPair> {
    (0..n)
        .map(|_| {
            let i = r.random_range(0..docs.len());
            let j = (i + r.random_range(1..docs.len())) % docs.len();
            SampledPair {
                rank_i: i + 1,
                rank_j: j + 1,
                doc_i: docs[i].doc_id.clone(),
                doc_j: docs[j].doc_id.clone(),
                p: Some(r.random_range(0.0..=1.0)),
            }
        })
        .collect()
}

/// `n` distinct coordinates, non-zero-gradient ones first.
fn pick_coords(g: &Gradient, n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    let (active, idle): (Vec<usize>, Vec<usize>) = (0..g.data.len()).partition(|&i| g.data[i] != 0.0);
    let mut out: Vec<usize> = sample(r, active.len(), n.min(active.len()))
        .into_iter()
        .map(|i| active[i])
        .collect();
    let rest = n - out.len();
    out.extend(sample(r, idle.len(), rest.min(idle.len())).into_iter().map(|i| idle[i]));
    out
}

type LossFn<'a> = Box<dyn Fn(&EncoderModel) -> (f64, Gradient) + 'a>;

/// Worst relative error between the analytic gradient and central
/// differences (h = 1e-5); the denominator has an absolute floor of 1e-6.
fn worst_fd(m: &EncoderModel, f: &LossFn<'_>, coords: &[usize]) -> f64 {
    const H: f64 = 1e-5;
    let g = f(m).1;
    let mut m = m.clone();
    let mut worst: f64 = 0.0;
    for &c in coords {
        let x = m.params()[c];
        m.params_mut()[c] = x + H;
        let up = f(&m).0;
        m.params_mut()[c] = x - H;
        let down = f(&m).0;
        m.params_mut()[c] = x;
        let numeric = (up - down) / (2.0 * H);
        let a = g.data[c];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let (mut checked, mut worst_all) = (0usize, 0f64);
    for mode in MODES {
        for loss in ["infonce", "kd", "pair", "combined"] {
            for instance in 0..20 {
                let corpus = random_corpus(&mut r, 24, 3, 40);
                let m = EncoderModel::new(EncoderConfig {
                    vocab_size: corpus.vocab().len(),
                    dim: 6,
                    similarity: mode,
                    shared: instance % 2 == 0,
                    seed: r.random(),
                })
                .unwrap();
                let docs: Vec<&Document> = corpus.docs().iter().collect();
                let q = &corpus.queries()[0];
                let tau = r.random_range(0.3..3.0);
                let teacher: Vec<f64> = (0..10).map(|_| r.random_range(-3.0..3.0)).collect();
                let reduction = if instance % 3 == 0 { PairReduction::Sum } else { PairReduction::Mean };
                let kd = &docs[..10];
                let pairs = random_pairs(&mut r, kd, 12);
                let batch: Vec<QueryExample<'_>> = corpus
                    .queries()
                    .iter()
                    .enumerate()
                    .map(|(qi, q)| {
                        let kd_docs = docs[qi * 4..qi * 4 + 10].to_vec();
                        QueryExample {
                            query: q,
                            pairs: random_pairs(&mut r, &kd_docs, 8),
                            kd_docs,
                            teacher_scores: teacher.clone(),
                            // One query without a positive exercises the normalizer.
                            positive: (qi != 1).then(|| docs[23 - qi]),
                            negatives: docs[14..18].to_vec(),
                        }
                    })
                    .collect();
                let cfg = LossConfig {
                    tau,
                    pair_reduction: reduction,
                    ..LossConfig::default()
                };
                let f: LossFn<'_> = match loss {
                    "infonce" => Box::new(|mm| loss_infonce(mm, q, docs[0], &docs[1..9]).unwrap()),
                    "kd" => Box::new(|mm| loss_pointwise_kd(mm, q, kd, &teacher, tau).unwrap()),
                    "pair" => Box::new(|mm| loss_pairwise_kd(mm, q, kd, &pairs, reduction).unwrap()),
                    _ => Box::new(|mm| {
                        let out = loss_total(mm, &batch, &cfg).unwrap();
                        (out.total, out.total_gradient(&cfg))
                    }),
                };
                let coords = pick_coords(&f(&m).1, 100, &mut r);
                ensure(coords.len() >= 100, || format!("only {} coordinates", coords.len()))?;
                let worst = worst_fd(&m, &f, &coords);
                worst_all = worst_all.max(worst);
                checked += coords.len();
                ensure(worst < 1e-4, || {
                    format!("{mode} {loss} instance {instance}: relative error {worst:.2e}")
                })?;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{checked} coordinates over 240 instances, worst relative error {worst_all:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// 2. KL invariants

fn criterion_2() -> Outcome {
    let mut r = rng(202);
    let mut max_equal: f64 = 0.0;
    for trial in 0..10_000 {
        let n = r.random_range(2..50);
        let tau = r.random_range(0.05..5.0);
        let spread = r.random_range(0.1..20.0);
        let teacher: Vec<f64> = (0..n).map(|_| r.random_range(-spread..spread)).collect();
        let student: Vec<f64> = (0..n).map(|_| r.random_range(-spread..spread)).collect();
        let (loss, _) = pointwise_kd(&student, &teacher, tau).map_err(|e| e.to_string())?;
        ensure(loss >= 0.0, || format!("trial {trial}: negative KL {loss}"))?;

        // softmax(teacher / tau) == softmax(student) up to a constant shift.
        let shift = r.random_range(-10.0..10.0);
        let matched: Vec<f64> = teacher.iter().map(|t| t / tau + shift).collect();
        let (zero, _) = pointwise_kd(&matched, &teacher, tau).map_err(|e| e.to_string())?;
        ensure((0.0..1e-12).contains(&zero), || format!("trial {trial}: equal-distribution KL {zero}"))?;
        max_equal = max_equal.max(zero);

        // Scores on a 2^-8 grid keep shifted differences exact.
        let dyadic = |r: &mut ChaCha8Rng| r.random_range(-8192i64..8192) as f64 / 256.0;
        let (si, sj, c) = (dyadic(&mut r), dyadic(&mut r), dyadic(&mut r));
        let p = r.random_range(0.0..=1.0);
        let base = pair_kl(si, sj, p).map_err(|e| e.to_string())?;
        let shifted = pair_kl(si + c, sj + c, p).map_err(|e| e.to_string())?;
        ensure(base == shifted, || format!("trial {trial}: pair loss moved under shift {c}"))?;
        ensure(base.0 >= 0.0, || format!("trial {trial}: negative pair KL"))?;
    }
    Ok(format!("10000 pairs, max equal-distribution KL {max_equal:.1e}"))
}

// 3. pair sampler

fn ranked(k: usize) -> RunList {
    RunList::from_scores("q", (0..k).map(|i| (format!("d{i:03}"), (k - i) as f64)).collect())
}

fn criterion_3() -> Outcome {
    let mut r = rng(303);
    let mut drawn = 0usize;
    for config in 0..1000 {
        let k = r.random_range(1..=200);
        let delta = r.random_range(1..=50);
        let budget = r.random_range(1..=100);
        let run = ranked(k);
        let mut exhaustive = 0usize;
        for i in 1..=k {
            for j in i + 1..=k {
                if j - i < delta {
                    exhaustive += 1;
                }
            }
        }
        ensure(candidate_count(k, delta) == exhaustive, || {
            format!("k={k} delta={delta}: count {} vs {exhaustive}", candidate_count(k, delta))
        })?;
        ensure(candidate_pairs(k, delta).len() == exhaustive, || format!("k={k} delta={delta}: enumeration"))?;
        let s = sample_pairs(&run, delta, budget, config).map_err(|e| e.to_string())?;
        ensure(s.len() == budget.min(exhaustive), || {
            format!("k={k} delta={delta} budget={budget}: {} pairs", s.len())
        })?;
        let mut seen = BTreeSet::new();
        for p in &s.pairs {
            ensure(p.rank_i != p.rank_j && p.rank_i.abs_diff(p.rank_j) < delta, || {
                format!("pair ({}, {}) violates delta={delta}", p.rank_i, p.rank_j)
            })?;
            ensure(run.entries[p.rank_i - 1].doc_id == p.doc_i && run.entries[p.rank_j - 1].doc_id == p.doc_j, || {
                "pair documents do not match their ranks".to_string()
            })?;
            ensure(seen.insert((p.rank_i.min(p.rank_j), p.rank_i.max(p.rank_j))), || {
                "pair drawn twice".to_string()
            })?;
        }
        drawn += s.len();
    }
    let budgeted = sample_pairs(&ranked(100), 10, 50, 0).map_err(|e| e.to_string())?;
    ensure(budgeted.len() == 50, || format!("k=100 delta=10 budget=50 drew {}", budgeted.len()))?;
    Ok(format!("1000 configurations, {drawn} pairs checked; k=100/delta=10/budget=50 draws 50"))
}

// 4. metrics

fn naive_relevant(qrels: &Qrels, d: &str) -> bool {
    matches!(qrels.get(d), Some(g) if *g > 0)
}

fn naive_metric(metric: Metric, run: &RunList, qrels: &Qrels) -> f64 {
    let top: Vec<&str> = run.doc_ids().take(metric.k()).collect();
    let total_relevant = qrels.values().filter(|g| **g > 0).count();
    match metric {
        Metric::Mrr(_) => {
            for (i, d) in top.iter().enumerate() {
                if naive_relevant(qrels, d) {
                    return 1.0 / (i as f64 + 1.0);
                }
            }
            0.0
        }
        Metric::Recall(_) => {
            if total_relevant == 0 {
                return 0.0;
            }
            top.iter().filter(|d| naive_relevant(qrels, d)).count() as f64 / total_relevant as f64
        }
        Metric::Success(_) => top.iter().any(|d| naive_relevant(qrels, d)) as u8 as f64,
        Metric::Ndcg(k) => {
            let gain = |g: u32| (1u64 << g) as f64 - 1.0;
            let mut dcg = 0.0;
            for (i, d) in top.iter().enumerate() {
                dcg += gain(*qrels.get(*d).unwrap_or(&0)) / (i as f64 + 2.0).log2();
            }
            let mut grades: Vec<u32> = qrels.values().copied().collect();
            grades.sort();
            grades.reverse();
            let mut ideal = 0.0;
            for (i, g) in grades.into_iter().take(k).enumerate() {
                ideal += gain(g) / (i as f64 + 2.0).log2();
            }
            if ideal > 0.0 {
                dcg / ideal
            } else {
                0.0
            }
        }
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut r = rng(404);
    let mut worst: f64 = 0.0;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for instance in 0..1000 {
        let n = r.random_range(1..80);
        let scored = (0..n)
            .map(|i| (format!("d{i:03}"), (r.random_range(0..40) as f64) / 4.0))
            .collect();
        let run = RunList::from_scores(format!("q{instance}"), scored);
        let mut qrels = Qrels::new();
        for i in 0..r.random_range(0..30) {
            let doc = format!("d{:03}", r.random_range(0..100));
            qrels.insert(doc, if i % 4 == 0 { 0 } else { r.random_range(1..4) });
        }
        let k = [1, 3, 5, 10, 20, 100][r.random_range(0..6)];
        for metric in [Metric::Mrr(k), Metric::Recall(k), Metric::Ndcg(k), Metric::Success(k)] {
            let (got, want) = (metric.compute(&run, &qrels), naive_metric(metric, &run, &qrels));
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() < 1e-9, || format!("instance {instance} {metric}: {got} vs {want}"))?;
        }
    }

    // TREC round trip: text -> runs -> text must be byte-identical.
    let mut text = String::new();
    let mut runs = Vec::new();
    for q in 0..50 {
        let scored: Vec<(String, f64)> = (0..r.random_range(1..120))
            .map(|i| (format!("D{q}-{i}"), r.random_range(-50_000_000i64..50_000_000) as f64 / 1e6))
            .collect();
        let mut run = RunList::from_scores(format!("Q{q}"), scored);
        run.tag = "acceptance".into();
        for e in &run.entries {
            text.push_str(&format!("{} Q0 {} {} {:.6} acceptance\n", run.query_id, e.doc_id, e.rank, e.score));
        }
        runs.push(run);
    }
    let first = dir.path().join("a.trec");
    let second = dir.path().join("b.trec");
    std::fs::write(&first, &text).map_err(|e| e.to_string())?;
    let loaded = load_run(&first).map_err(|e| e.to_string())?;
    save_run(&second, &loaded).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&second).map_err(|e| e.to_string())? == text.as_bytes(), || {
        "rewritten run file differs".to_string()
    })?;
    let back = load_run(&second).map_err(|e| e.to_string())?;
    ensure(back == loaded, || "reloaded runs differ".to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 instances x 4 metrics, max deviation {worst:.1e}; {} run lines round-trip; {:.1}s",
        text.lines().count(),
        elapsed.as_secs_f64()
    ))
}

// 5-7. training on the synthetic task

struct Task {
    corpus: Corpus,
    train_labels: Judgments,
    dev_judgments: Judgments,
    relevance: Arc<TrueRelevance>,
}

impl Task {
    fn new() -> Self {
        let spec = SyntheticSpec {
            num_docs: 5000,
            num_train_queries: 500,
            num_dev_queries: 100,
            terms_per_topic: 512,
            relevance_scale: 50.0,
            seed: 0,
            ..SyntheticSpec::default()
        };
        let (corpus, judgments, relevance) = generate_synthetic(&spec).unwrap();
        let ids = |split| {
            corpus
                .queries_in(split)
                .map(|q| q.query_id.clone())
                .collect::<Vec<_>>()
        };
        let train_labels = judgments.restricted_to(ids(Split::Train).iter().map(String::as_str));
        let dev_judgments = judgments.restricted_to(ids(Split::Dev).iter().map(String::as_str));
        Task {
            corpus,
            train_labels,
            dev_judgments,
            relevance: Arc::new(relevance),
        }
    }

    fn config(&self, extra: &str) -> DistillConfig {
        let mut c = DistillConfig::default();
        c.apply_text(
            "teacher-sharpness=10\nlearning-rate=0.25\nmomentum=0\nsteps=200\n",
        )
        .unwrap();
        c.apply_text(extra).unwrap();
        c.resolve().unwrap()
    }

    fn train(&self, config: &DistillConfig) -> RunOutcome {
        let teacher =
            SyntheticTeacher::new(self.relevance.clone(), 0.0, config.teacher_sharpness, config.seed).unwrap();
        let dev: Vec<&Query> = self.corpus.queries_in(Split::Dev).collect();
        let model = init_model(&self.corpus, config).unwrap();
        run_iterative(
            model,
            &self.corpus,
            Teachers {
                pointwise: &teacher,
                pairwise: &teacher,
            },
            Some(&self.train_labels),
            Some(DevSet {
                queries: &dev,
                judgments: &self.dev_judgments,
            }),
            config,
            None,
        )
        .unwrap()
    }
}

fn mrr(m: &Option<BTreeMap<String, f64>>) -> f64 {
    m.as_ref().expect("dev metrics")["mrr@10"]
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn criterion_5(task: &Task) -> Outcome {
    let start = Instant::now();
    let (full, kd, cl) = single_threaded(|| {
        let run = |extra: &str| mrr(&task.train(&task.config(extra)).iterations[0].dev);
        (run(""), run("use-pair=false"), run("use-pair=false\nuse-kd=false"))
    });
    let elapsed = start.elapsed();
    let line = format!(
        "CL+KD+pair {full:.3}, CL+KD {kd:.3}, CL {cl:.3}; {:.0}s single-threaded",
        elapsed.as_secs_f64()
    );
    ensure(full >= 0.85, || format!("{line}: full objective below 0.85"))?;
    ensure(full - kd >= 0.01, || format!("{line}: pair term gains less than 0.01"))?;
    ensure(kd > cl, || format!("{line}: KD does not beat CL-only"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("{line}: over 10 minutes"))?;
    Ok(line)
}

fn criterion_6(task: &Task) -> Outcome {
    let out = task.train(&task.config("iterations=2"));
    let (first, second) = (&out.iterations[0], &out.iterations[1]);
    let (m0, m1, m2) = (mrr(&out.initial_dev), mrr(&first.dev), mrr(&second.dev));
    let line = format!("init {m0:.3}, iteration 1 {m1:.3}, iteration 2 {m2:.3}");
    ensure(m2 >= m1 - 0.01, || format!("{line}: iteration 2 regressed"))?;
    ensure(first.start_fingerprint != second.start_fingerprint, || {
        format!("{line}: index fingerprint unchanged between iterations")
    })?;
    // The index the second iteration retrieved from was built on the
    // first iteration's output model.
    ensure(first.end_fingerprint == second.start_fingerprint, || format!("{line}: fingerprint chain broken"))?;
    let init = init_model(&task.corpus, &task.config("")).unwrap();
    let index = Index::build(&init, &task.corpus).map_err(|e| e.to_string())?;
    ensure(index.fingerprint() == first.start_fingerprint, || "first index fingerprint mismatch".into())?;
    ensure(index.check_fresh(&out.model).is_err(), || "stale index not detected".into())?;
    Ok(format!("{line}; index fingerprints differ"))
}

fn criterion_7(task: &Task) -> Outcome {
    let mut config = task.config("steps=400");
    config.set("zero-shot", "true").map_err(|e| e.to_string())?;
    let config = config.resolve().map_err(|e| e.to_string())?;
    task.train_labels.reset_access_count();
    let out = task.train(&config);
    let reads = task.train_labels.access_count();
    let (before, after) = (mrr(&out.initial_dev), mrr(&out.iterations[0].dev));
    let line = format!("init {before:.3} -> {after:.3} (gain {:.3}), judgment reads {reads}", after - before);
    ensure(reads == 0, || format!("{line}: training labels were read"))?;
    ensure(after - before >= 0.3, || format!("{line}: gain below 0.3"))?;
    Ok(line)
}

// 8. disagreement

/// Pointwise teacher noise for which about a third of sampled pairs flip.
const DISAGREEMENT_NOISE: f64 = 1.0;

fn criterion_8() -> Outcome {
    let (corpus, _, relevance) = generate_synthetic(&SyntheticSpec {
        num_docs: 2000,
        num_train_queries: 100,
        num_dev_queries: 0,
        seed: 8,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let relevance = Arc::new(relevance);
    let pointwise = SyntheticTeacher::new(relevance.clone(), DISAGREEMENT_NOISE, 1.0, 8).unwrap();
    let pairwise = SyntheticTeacher::new(relevance.clone(), 0.0, 1.0, 8).unwrap();
    let config = DistillConfig::default();
    let model = init_model(&corpus, &config).unwrap();
    let index = Index::build(&model, &corpus).map_err(|e| e.to_string())?;

    let (mut reported_dis, mut reported_n) = (0usize, 0usize);
    let (mut brute_dis, mut brute_n) = (0usize, 0usize);
    for q in corpus.queries() {
        let retrieved = index.retrieve(&model, q, config.k).map_err(|e| e.to_string())?;
        let reranked = rerank(&retrieved, &pointwise, &corpus).map_err(|e| e.to_string())?;
        let pairs = sample_pairs(&reranked, config.delta, config.pairs, 8).map_err(|e| e.to_string())?;
        let d = pairwise_disagreement(&reranked, &pairwise, &corpus, &pairs).map_err(|e| e.to_string())?;
        reported_dis += d.disagreements;
        reported_n += d.counted;

        // Recount from raw scores: noisy pointwise order vs true relevance order.
        for p in &pairs.pairs {
            let (di, dj) = (corpus.doc(&p.doc_i).unwrap(), corpus.doc(&p.doc_j).unwrap());
            let gap = relevance.score(&q.query_id, &p.doc_i).unwrap() - relevance.score(&q.query_id, &p.doc_j).unwrap();
            if gap == 0.0 {
                continue;
            }
            let (si, sj) = (pointwise.score(q, di).unwrap(), pointwise.score(q, dj).unwrap());
            let point_prefers_i = si > sj || (si == sj && p.doc_i < p.doc_j);
            brute_n += 1;
            if point_prefers_i != (gap > 0.0) {
                brute_dis += 1;
            }
        }
    }
    let reported = reported_dis as f64 / reported_n as f64;
    let brute = brute_dis as f64 / brute_n as f64;
    let line = format!(
        "noise {DISAGREEMENT_NOISE}: reported {reported:.4} over {reported_n} pairs, recount {brute:.4} over {brute_n}"
    );
    ensure((0.25..=0.40).contains(&brute), || format!("{line}: rate outside [0.25, 0.40]"))?;
    ensure((reported - brute).abs() <= 0.02, || format!("{line}: differs by more than 0.02"))?;
    Ok(line)
}

// 9. determinism

fn bin(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_distillrank"))
        .args(args)
        .env_remove("DISTILLRANK_CACHE_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`distillrank {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn tree(dir: &Path) -> Tree {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = root.join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    bin(&[
        "gen-data", "--out", &s(&data), "--docs", "800", "--train-queries", "60",
        "--dev-queries", "20", "--seed", "9",
    ])?;
    let train = |name: &str, workers: &str| -> Result<(Tree, Vec<u8>), String> {
        let out = root.join(name);
        let o = bin(&[
            "train", "--data", &s(&data), "--out", &s(&out), "--iterations", "2", "--steps", "30",
            "--k", "40", "--dim", "16", "--teacher-noise", "0.5", "--pair-teacher-noise", "0.5",
            "--momentum", "0.5", "--learning-rate", "0.1", "--seed", "9", "--workers", workers,
        ])?;
        Ok((tree(&out), o.stdout))
    };
    let (a, a_out) = train("run-a", "1")?;
    let (b, b_out) = train("run-b", "1")?;
    let (c, c_out) = train("run-c", "4")?;
    for needed in ["model.ckpt", "iter2.ckpt", "iter2.log.jsonl", "metrics.jsonl"] {
        ensure(a.contains_key(Path::new(needed)), || format!("missing {needed}"))?;
    }
    let caches = a.keys().filter(|p| p.starts_with("cache")).count();
    ensure(caches >= 2, || format!("expected pointwise and pairwise caches, found {caches}"))?;
    ensure(a == b && a_out == b_out, || "two identical runs differ".into())?;
    ensure(a_out == c_out, || "--workers 4 changed the printed summary".into())?;
    ensure(a.keys().eq(c.keys()), || "--workers 4 produced different files".into())?;
    for (path, bytes) in &a {
        if path == Path::new("config.txt") {
            // The echoed configuration records the worker count itself.
            let strip = |b: &[u8]| {
                String::from_utf8_lossy(b)
                    .lines()
                    .filter(|l| !l.starts_with("workers="))
                    .map(str::to_string)
                    .collect::<Vec<_>>()
            };
            ensure(strip(bytes) == strip(&c[path]), || "config differs beyond workers".into())?;
        } else {
            ensure(c[path] == *bytes, || format!("{} differs with --workers 4", path.display()))?;
        }
    }
    Ok(format!(
        "{} files byte-identical across 3 runs (workers 1, 1, 4), {caches} cache files",
        a.len()
    ))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let needs_task = [5, 6, 7].iter().any(|&n| selected(n));
    let task = needs_task.then(Task::new);
    let task = task.as_ref();

    type Check<'a> = (usize, &'a str, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check<'_>> = vec![
        (1, "gradient suite", Box::new(criterion_1)),
        (2, "KL invariants", Box::new(criterion_2)),
        (3, "pair sampler", Box::new(criterion_3)),
        (4, "metric oracle equivalence", Box::new(criterion_4)),
        (5, "distillation efficacy", Box::new(move || criterion_5(task.unwrap()))),
        (6, "iterative training", Box::new(move || criterion_6(task.unwrap()))),
        (7, "zero-shot mode", Box::new(move || criterion_7(task.unwrap()))),
        (8, "disagreement analysis", Box::new(criterion_8)),
        (9, "determinism", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (n, name, check) in &checks {
        if !selected(*n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let line = match result {
            Ok(detail) => format!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                format!("criterion {n} ({name}): FAIL - {detail}")
            }
        };
        writeln!(stdout, "{line}").unwrap();
        stdout.flush().unwrap();
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
