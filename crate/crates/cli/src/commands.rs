use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use distillrank::corpus::{
    generate_synthetic, load_corpus, load_run, save_corpus, save_run, Corpus, Judgments, Query,
    RelevanceOracle, RunList, Split, SyntheticSpec, TrueRelevance, ORACLE_FILE, QRELS_FILE,
};
use distillrank::distill::{sample_pairs, PairSample};
use distillrank::encoder::EncoderModel;
use distillrank::eval::{evaluate, pairwise_disagreement, Metric};
use distillrank::index::Index;
use distillrank::teacher::{
    rerank, CachedPairwise, CachedPointwise, FileMockClient, LlmPairwiseTeacher, PairwiseTeacher,
    RelevanceMockClient, Symmetrized, SyntheticTeacher,
};
use distillrank::trainer::{init_model, run_iterative, DevSet, DistillConfig, Teachers};

use crate::options::{
    Cli, Command, DisagreementArgs, EvaluateArgs, GenDataArgs, PairwiseKind, RerankArgs,
    RetrieveArgs, SamplePairsArgs, SplitArg, TrainArgs,
};

/// Environment variable naming the teacher cache directory.
pub const CACHE_DIR_ENV: &str = "DISTILLRANK_CACHE_DIR";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Train(a) => {
            let config = resolve_and_echo(&a.config)?;
            with_workers(config.workers, || train(&a, &config))
        }
        Command::Retrieve(a) => {
            let config = resolve_and_echo(&a.config)?;
            with_workers(config.workers, || retrieve(&a, &config))
        }
        Command::Rerank(a) => {
            let config = resolve_and_echo(&a.config)?;
            with_workers(config.workers, || rerank_cmd(&a, &config))
        }
        Command::SamplePairs(a) => {
            let config = resolve_and_echo(&a.config)?;
            with_workers(config.workers, || sample_pairs_cmd(&a, &config))
        }
        Command::Disagreement(a) => {
            let config = resolve_and_echo(&a.config)?;
            with_workers(config.workers, || disagreement(&a, &config))
        }
    }
}

fn resolve_and_echo(args: &crate::options::ConfigArgs) -> Result<DistillConfig> {
    let config = args.resolve()?;
    eprint!("{}", config.to_text());
    Ok(config)
}

/// Command-specific settings, echoed as comments so the whole echo still
/// parses as a config file.
fn echo(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        eprintln!("# {k}={v}");
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    pool.install(f)
}

fn load_oracle(data: &Path, corpus: &Corpus) -> Result<Arc<TrueRelevance>> {
    let path = data.join(ORACLE_FILE);
    let oracle = RelevanceOracle::load(&path)
        .with_context(|| format!("synthetic teachers need {}", path.display()))?;
    Ok(Arc::new(TrueRelevance::new(oracle, corpus)))
}

fn pointwise_teacher(tr: &Arc<TrueRelevance>, config: &DistillConfig) -> Result<SyntheticTeacher> {
    Ok(SyntheticTeacher::new(
        tr.clone(),
        config.teacher_noise,
        config.teacher_sharpness,
        config.seed,
    )?)
}

fn pairwise_teacher(
    tr: &Arc<TrueRelevance>,
    config: &DistillConfig,
) -> Result<Box<dyn PairwiseTeacher>> {
    let t = SyntheticTeacher::new(
        tr.clone(),
        config.pair_teacher_noise,
        config.teacher_sharpness,
        config.seed,
    )?;
    Ok(if config.symmetrize_pairs {
        Box::new(Symmetrized(t))
    } else {
        Box::new(t)
    })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        num_docs: a.docs.unwrap_or(d.num_docs),
        num_train_queries: a.train_queries.unwrap_or(d.num_train_queries),
        num_dev_queries: a.dev_queries.unwrap_or(d.num_dev_queries),
        num_topics: a.topics.unwrap_or(d.num_topics),
        terms_per_topic: a.terms_per_topic.unwrap_or(d.terms_per_topic),
        background_terms: a.background_terms.unwrap_or(d.background_terms),
        doc_len: a.doc_len.unwrap_or(d.doc_len),
        query_len: a.query_len.unwrap_or(d.query_len),
        topics_per_doc: a.topics_per_doc.unwrap_or(d.topics_per_doc),
        topics_per_query: a.topics_per_query.unwrap_or(d.topics_per_query),
        background_rate: a.background_rate.unwrap_or(d.background_rate),
        relevance_scale: a.relevance_scale.unwrap_or(d.relevance_scale),
        noise: a.noise.unwrap_or(d.noise),
        seed: a.seed.unwrap_or(d.seed),
    };
    if let serde_json::Value::Object(fields) = serde_json::to_value(&spec)? {
        for (k, v) in fields {
            eprintln!("{k}={v}");
        }
    }
    spec.validate()?;
    let (corpus, judgments, relevance) = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_corpus(&corpus, &a.out)?;
    judgments.save(a.out.join(QRELS_FILE))?;
    relevance.oracle().save(a.out.join(ORACLE_FILE))?;
    println!(
        "wrote {} docs, {} queries, {} judged queries to {}",
        corpus.docs().len(),
        corpus.queries().len(),
        judgments.len(),
        a.out.display()
    );
    Ok(())
}

fn split_queries(corpus: &Corpus, split: SplitArg) -> Vec<&Query> {
    match split {
        SplitArg::Train => corpus.queries_in(Split::Train).collect(),
        SplitArg::Dev => corpus.queries_in(Split::Dev).collect(),
        SplitArg::All => corpus.queries().iter().collect(),
    }
}

fn train(a: &TrainArgs, config: &DistillConfig) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let tr = load_oracle(&a.data, &corpus)?;
    let pointwise = CachedPointwise::new(pointwise_teacher(&tr, config)?);
    let base: Box<dyn PairwiseTeacher> = match a.pairwise_teacher {
        PairwiseKind::Synthetic => Box::new(SyntheticTeacher::new(
            tr.clone(),
            config.pair_teacher_noise,
            config.teacher_sharpness,
            config.seed,
        )?),
        PairwiseKind::LlmMock => Box::new(LlmPairwiseTeacher::new(RelevanceMockClient::new(
            tr.oracle().clone(),
            config.teacher_sharpness,
        ))),
        PairwiseKind::LlmFile => {
            let path = a
                .llm_responses
                .as_ref()
                .ok_or_else(|| distillrank::Error::Config("--llm-responses is required".into()))?;
            Box::new(LlmPairwiseTeacher::new(FileMockClient::load(path)?))
        }
    };
    let pairwise = CachedPairwise::new(base);

    let cache_dir = std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| a.out.join("cache"));
    fs::create_dir_all(&cache_dir).with_context(|| format!("creating {}", cache_dir.display()))?;
    pointwise.restore(&cache_dir)?;
    pairwise.restore(&cache_dir)?;

    let qrels_path = a.qrels.clone().unwrap_or_else(|| a.data.join(QRELS_FILE));
    let all = Judgments::load(&qrels_path)?;
    let train_ids: Vec<&str> = corpus
        .queries_in(Split::Train)
        .map(|q| q.query_id.as_str())
        .collect();
    let dev_queries: Vec<&Query> = corpus.queries_in(Split::Dev).collect();
    let train_labels = all.restricted_to(train_ids);
    let dev_labels = all.restricted_to(dev_queries.iter().map(|q| q.query_id.as_str()));
    let labels = (!config.zero_shot).then_some(&train_labels);
    let dev = (!dev_queries.is_empty()).then_some(DevSet {
        queries: &dev_queries,
        judgments: &dev_labels,
    });

    let model = match &a.init {
        Some(path) => EncoderModel::load(path)?,
        None => init_model(&corpus, config)?,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.txt"), config.to_text())
        .with_context(|| format!("writing config to {}", a.out.display()))?;

    let teachers = Teachers {
        pointwise: &pointwise,
        pairwise: &pairwise,
    };
    let result = run_iterative(model, &corpus, teachers, labels, dev, config, Some(&a.out));
    // Teacher calls are the expensive part; keep them even when training fails.
    pointwise.persist(&cache_dir)?;
    pairwise.persist(&cache_dir)?;
    let outcome = result?;

    outcome.model.save(a.out.join("model.ckpt"))?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut out = BufWriter::new(
        fs::File::create(&metrics_path)
            .with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    if let Some(m) = &outcome.initial_dev {
        writeln!(out, "{}", json!({"iteration": 0, "dev": m}))?;
    }
    for r in &outcome.iterations {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
        let mrr = r
            .dev
            .as_ref()
            .and_then(|d| d.get("mrr@10"))
            .map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "iteration {}: final loss {:.6}, dev mrr@10 {mrr}, model {}",
            r.iteration,
            r.final_loss.unwrap_or(f64::NAN),
            r.end_fingerprint
        );
    }
    out.flush()?;
    Ok(())
}

fn retrieve(a: &RetrieveArgs, config: &DistillConfig) -> Result<()> {
    echo(&[("split", format!("{:?}", a.split).to_lowercase()), ("tag", a.tag.clone())]);
    let corpus = load_corpus(&a.data)?;
    let model = EncoderModel::load(&a.model)?;
    let index = match &a.index {
        Some(path) => Index::load(path)?,
        None => Index::build(&model, &corpus)?,
    };
    if let Some(path) = &a.save_index {
        index.save(path)?;
    }
    let queries = split_queries(&corpus, a.split);
    let mut runs = index.retrieve_all(&model, queries.par_iter().copied(), config.k)?;
    for r in &mut runs {
        r.tag = a.tag.clone();
    }
    save_run(&a.out, &runs)?;
    println!("retrieved {} queries to {}", runs.len(), a.out.display());
    Ok(())
}

fn rerank_cmd(a: &RerankArgs, config: &DistillConfig) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let tr = load_oracle(&a.data, &corpus)?;
    let teacher = pointwise_teacher(&tr, config)?;
    let runs = load_run(&a.run)?;
    let reranked = runs
        .par_iter()
        .map(|r| rerank(r, &teacher, &corpus))
        .collect::<distillrank::Result<Vec<RunList>>>()?;
    save_run(&a.out, &reranked)?;
    println!("reranked {} queries to {}", reranked.len(), a.out.display());
    Ok(())
}

fn sample_json(sample: &PairSample) -> serde_json::Value {
    let pairs: Vec<serde_json::Value> = sample
        .pairs
        .iter()
        .map(|p| {
            let mut v = json!({
                "rank_i": p.rank_i,
                "rank_j": p.rank_j,
                "doc_i": p.doc_i,
                "doc_j": p.doc_j,
            });
            if let Some(prob) = p.p {
                v["p"] = json!(prob);
            }
            v
        })
        .collect();
    json!({"query_id": sample.query_id, "pairs": pairs})
}

fn sample_pairs_cmd(a: &SamplePairsArgs, config: &DistillConfig) -> Result<()> {
    let runs = load_run(&a.run)?;
    let scorer = match &a.data {
        Some(dir) => {
            let corpus = load_corpus(dir)?;
            let tr = load_oracle(dir, &corpus)?;
            let teacher = pairwise_teacher(&tr, config)?;
            Some((corpus, teacher))
        }
        None => None,
    };
    let samples = runs
        .par_iter()
        .map(|r| {
            let mut s = sample_pairs(r, config.delta, config.pairs, config.seed)?;
            if let Some((corpus, teacher)) = &scorer {
                s.score(teacher.as_ref(), corpus)?;
            }
            Ok(s)
        })
        .collect::<distillrank::Result<Vec<_>>>()?;
    let mut out = BufWriter::new(
        fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?,
    );
    let mut total = 0;
    for s in &samples {
        total += s.len();
        writeln!(out, "{}", sample_json(s))?;
    }
    out.flush()?;
    println!("sampled {total} pairs over {} queries to {}", samples.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    echo(&[
        ("run", a.run.display().to_string()),
        ("qrels", a.qrels.display().to_string()),
        ("metric", a.metrics.join(",")),
        ("json", a.json.to_string()),
    ]);
    let metrics = a
        .metrics
        .iter()
        .map(|m| m.trim().parse())
        .collect::<distillrank::Result<Vec<Metric>>>()?;
    let runs = load_run(&a.run)?;
    let judgments = Judgments::load(&a.qrels)?;
    let report = evaluate(&runs, &judgments, &metrics)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn disagreement(a: &DisagreementArgs, config: &DistillConfig) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let tr = load_oracle(&a.data, &corpus)?;
    let teacher = pairwise_teacher(&tr, config)?;
    let runs = load_run(&a.run)?;
    let per_query = runs
        .par_iter()
        .map(|r| {
            let sample = sample_pairs(r, config.delta, config.pairs, config.seed)?;
            if sample.is_empty() {
                return Ok(None);
            }
            match pairwise_disagreement(r, teacher.as_ref(), &corpus, &sample) {
                Ok(d) => Ok(Some(d)),
                Err(distillrank::Error::UndefinedRate(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<distillrank::Result<Vec<_>>>()?;
    let (mut disagreements, mut counted, mut ties, mut queries) = (0usize, 0usize, 0usize, 0usize);
    for d in per_query.iter().flatten() {
        disagreements += d.disagreements;
        counted += d.counted;
        ties += d.ties;
        queries += 1;
    }
    if counted == 0 {
        bail!(distillrank::Error::UndefinedRate(
            "no sampled pair with a decided teacher preference".into()
        ));
    }
    let rate = disagreements as f64 / counted as f64;
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "rate": rate,
                "disagreements": disagreements,
                "counted": counted,
                "ties": ties,
                "queries": queries,
            }))?
        );
    } else {
        println!("rate          {rate:.6}");
        println!("disagreements {disagreements}");
        println!("counted       {counted}");
        println!("ties          {ties}");
        println!("queries       {queries}");
    }
    Ok(())
}
