//! Documents, queries, relevance judgments and run files.

mod judgments;
mod run;
mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use judgments::Judgments;
pub use run::{load_run, save_run, RunEntry, RunList, DEFAULT_RUN_TAG};
pub use synthetic::{generate_synthetic, RelevanceOracle, SyntheticSpec, TrueRelevance};

pub const DOCS_FILE: &str = "docs.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const QRELS_FILE: &str = "qrels.txt";
/// Relevance oracle written next to synthetic corpora.
pub const ORACLE_FILE: &str = "oracle.json";

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Term table built from the sorted set of unique tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = terms.into_iter().map(Into::into).collect();
        let terms: Vec<String> = sorted.into_iter().collect();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Maps tokens onto term ids; out-of-vocabulary tokens are dropped.
    pub fn featurize(&self, tokens: &[String]) -> TextFeatures {
        let ids: Vec<u32> = tokens.iter().filter_map(|t| self.id(t)).collect();
        TextFeatures::from_token_ids(ids)
    }
}

/// Term ids in text order plus the sparse term-count vector derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub tokens: Vec<u32>,
    /// `(term id, count)` sorted by term id.
    pub counts: Vec<(u32, f64)>,
}

impl TextFeatures {
    pub fn from_token_ids(tokens: Vec<u32>) -> Self {
        let mut sorted = tokens.clone();
        sorted.sort_unstable();
        let mut counts: Vec<(u32, f64)> = Vec::new();
        for id in sorted {
            match counts.last_mut() {
                Some((last, c)) if *last == id => *c += 1.0,
                _ => counts.push((id, 1.0)),
            }
        }
        Self { tokens, counts }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub raw: String,
    pub text: Vec<String>,
    pub features: TextFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub raw: String,
    pub text: Vec<String>,
    pub features: TextFeatures,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Immutable collection of documents and queries over one vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    queries: Vec<Query>,
    vocab: Vocabulary,
    doc_index: HashMap<String, usize>,
    query_index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from `(id, text)` documents and `(id, text, split)` queries.
    pub fn from_texts(
        docs: Vec<(String, String)>,
        queries: Vec<(String, String, Split)>,
    ) -> Result<Self> {
        let doc_tokens: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokenize(t)).collect();
        let query_tokens: Vec<Vec<String>> = queries.iter().map(|(_, t, _)| tokenize(t)).collect();
        let vocab = Vocabulary::from_terms(
            doc_tokens
                .iter()
                .chain(query_tokens.iter())
                .flat_map(|ts| ts.iter().cloned()),
        );

        let mut doc_index = HashMap::with_capacity(docs.len());
        let mut out_docs = Vec::with_capacity(docs.len());
        for ((doc_id, raw), text) in docs.into_iter().zip(doc_tokens) {
            if text.is_empty() {
                return Err(Error::Validation(format!("document `{doc_id}` has no tokens")));
            }
            if doc_index.insert(doc_id.clone(), out_docs.len()).is_some() {
                return Err(Error::DuplicateId(doc_id));
            }
            let features = vocab.featurize(&text);
            out_docs.push(Document {
                doc_id,
                raw,
                text,
                features,
            });
        }

        let mut query_index = HashMap::with_capacity(queries.len());
        let mut out_queries = Vec::with_capacity(queries.len());
        for ((query_id, raw, split), text) in queries.into_iter().zip(query_tokens) {
            if query_index.insert(query_id.clone(), out_queries.len()).is_some() {
                return Err(Error::DuplicateId(query_id));
            }
            let features = vocab.featurize(&text);
            out_queries.push(Query {
                query_id,
                raw,
                text,
                features,
                split,
            });
        }

        Ok(Self {
            docs: out_docs,
            queries: out_queries,
            vocab,
            doc_index,
            query_index,
        })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn queries_in(&self, split: Split) -> impl Iterator<Item = &Query> {
        self.queries.iter().filter(move |q| q.split == split)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn doc(&self, doc_id: &str) -> Result<&Document> {
        self.doc_index
            .get(doc_id)
            .map(|&i| &self.docs[i])
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    pub fn doc_position(&self, doc_id: &str) -> Option<usize> {
        self.doc_index.get(doc_id).copied()
    }

    pub fn query(&self, query_id: &str) -> Result<&Query> {
        self.query_index
            .get(query_id)
            .map(|&i| &self.queries[i])
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))
    }
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Loads `docs.jsonl` and `queries.jsonl` from a directory.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    load_corpus_files(dir.join(DOCS_FILE), dir.join(QUERIES_FILE))
}

pub fn load_corpus_files(docs: impl AsRef<Path>, queries: impl AsRef<Path>) -> Result<Corpus> {
    let docs = read_records(docs.as_ref())?
        .into_iter()
        .map(|r| (r.id, r.text))
        .collect();
    let queries = read_records(queries.as_ref())?
        .into_iter()
        .map(|r| (r.id, r.text, r.split.unwrap_or_default()))
        .collect();
    Corpus::from_texts(docs, queries)
}

fn write_records(path: &Path, records: impl Iterator<Item = Record>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the corpus as `docs.jsonl` and `queries.jsonl` under `dir`.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_records(
        &dir.join(DOCS_FILE),
        corpus.docs.iter().map(|d| Record {
            id: d.doc_id.clone(),
            text: d.raw.clone(),
            split: None,
        }),
    )?;
    write_records(
        &dir.join(QUERIES_FILE),
        corpus.queries.iter().map(|q| Record {
            id: q.query_id.clone(),
            text: q.raw.clone(),
            split: (q.split == Split::Dev).then_some(Split::Dev),
        }),
    )
}
