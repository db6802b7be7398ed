use std::sync::Arc;

use distillrank::corpus::{
    generate_synthetic, load_corpus, save_corpus, Corpus, Judgments, SyntheticSpec, DOCS_FILE,
    QUERIES_FILE,
};
use distillrank::Error;

fn assert_same_corpus(a: &Corpus, b: &Corpus) {
    assert_eq!(a.vocab(), b.vocab());
    assert_eq!(a.docs(), b.docs());
    assert_eq!(a.queries(), b.queries());
}

#[test]
fn ten_thousand_doc_dump_round_trips_bit_identically() {
    let spec = SyntheticSpec {
        num_docs: 10_000,
        num_train_queries: 200,
        num_dev_queries: 50,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let (corpus, judgments, _) = generate_synthetic(&spec).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_corpus(&corpus, a.path()).unwrap();
    judgments.save(a.path().join("qrels.txt")).unwrap();
    let loaded = load_corpus(a.path()).unwrap();
    assert_same_corpus(&corpus, &loaded);
    save_corpus(&loaded, b.path()).unwrap();
    Judgments::load(a.path().join("qrels.txt"))
        .unwrap()
        .save(b.path().join("qrels.txt"))
        .unwrap();
    for f in [DOCS_FILE, QUERIES_FILE, "qrels.txt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs after a round trip");
    }
}

#[test]
fn same_seed_gives_byte_identical_corpora() {
    let spec = SyntheticSpec {
        seed: 7,
        ..SyntheticSpec::default()
    };
    let dump = |spec: &SyntheticSpec| {
        let (c, j, tr) = generate_synthetic(spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        j.save(dir.path().join("q")).unwrap();
        tr.oracle().save(dir.path().join("o")).unwrap();
        [DOCS_FILE, QUERIES_FILE, "q", "o"].map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    assert_eq!(dump(&spec), dump(&spec));
    assert_ne!(dump(&spec)[0], dump(&SyntheticSpec { seed: 8, ..spec.clone() })[0]);
}

#[test]
fn noiseless_judgments_follow_true_relevance() {
    let (corpus, judgments, tr) = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let tr = Arc::new(tr);
    for q in corpus.queries() {
        let mut by_tr: Vec<(&str, f64)> = corpus
            .docs()
            .iter()
            .map(|d| (d.doc_id.as_str(), tr.score(&q.query_id, &d.doc_id).unwrap()))
            .collect();
        by_tr.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        let grades: Vec<u32> = by_tr.iter().map(|(d, _)| judgments.grade(&q.query_id, d)).collect();
        assert!(grades[0] > 0, "argmax of true relevance must be judged relevant");
        assert!(grades.windows(2).all(|w| w[0] >= w[1]), "grades not sorted by relevance");
        assert_eq!(grades.iter().filter(|&&g| g > 0).count(), corpus.docs().len().div_ceil(10));
    }
}

#[test]
fn every_query_has_a_positive() {
    let spec = SyntheticSpec {
        noise: 0.5,
        ..SyntheticSpec::default()
    };
    let (corpus, judgments, _) = generate_synthetic(&spec).unwrap();
    assert_eq!(corpus.queries().len(), 120);
    for q in corpus.queries() {
        assert!(!judgments.relevant(&q.query_id).is_empty());
    }
    judgments.validate(&corpus).unwrap();
}

#[test]
fn ingestion_errors_are_specific() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join(QUERIES_FILE), "{\"id\":\"q1\",\"text\":\"a b\"}\n").unwrap();

    std::fs::write(
        p.join(DOCS_FILE),
        "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d2\",\"text\":\"b c\"}\n",
    )
    .unwrap();
    let c = load_corpus(p).unwrap();
    assert_eq!((c.docs().len(), c.queries().len()), (2, 1));

    std::fs::write(
        p.join(DOCS_FILE),
        "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}\n",
    )
    .unwrap();
    match load_corpus(p) {
        Err(Error::DuplicateId(id)) => assert_eq!(id, "d1"),
        other => panic!("expected duplicate id, got {other:?}"),
    }

    std::fs::write(p.join(DOCS_FILE), "{\"id\":\"d1\",\"text\":\"a\"}\nnot json\n").unwrap();
    match load_corpus(p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }

    assert!(matches!(
        generate_synthetic(&SyntheticSpec {
            num_docs: 0,
            ..SyntheticSpec::default()
        }),
        Err(Error::Validation(_))
    ));
}
