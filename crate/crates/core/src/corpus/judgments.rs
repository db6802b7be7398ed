use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Graded relevance labels keyed by query then document.
///
/// Every read through the query accessors bumps an access counter so callers
/// can assert that a code path never consults labels.
#[derive(Debug, Default)]
pub struct Judgments {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
    reads: AtomicUsize,
}

impl Clone for Judgments {
    fn clone(&self) -> Self {
        Self {
            grades: self.grades.clone(),
            reads: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for Judgments {
    fn eq(&self, other: &Self) -> bool {
        self.grades == other.grades
    }
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.grades
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    /// All graded documents of a query.
    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.grades.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.for_query(query_id)
            .and_then(|g| g.get(doc_id).copied())
            .unwrap_or(0)
    }

    /// Documents with grade > 0, in doc id order.
    pub fn relevant(&self, query_id: &str) -> Vec<&str> {
        self.for_query(query_id)
            .map(|g| {
                g.iter()
                    .filter(|(_, &grade)| grade > 0)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn access_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn reset_access_count(&self) {
        self.reads.store(0, Ordering::Relaxed);
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only the judgments of the given queries.
    pub fn restricted_to<'a>(&self, query_ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut out = Self::new();
        for q in query_ids {
            if let Some(g) = self.grades.get(q) {
                out.grades.insert(q.to_string(), g.clone());
            }
        }
        out
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for (q, docs) in &self.grades {
            corpus.query(q)?;
            for d in docs.keys() {
                corpus.doc(d)?;
            }
        }
        Ok(())
    }

    /// Reads whitespace-separated `query_id 0 doc_id grade` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            if fields.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
            }
            let grade: u32 = fields[3]
                .parse()
                .map_err(|_| parse_err(format!("invalid grade `{}`", fields[3])))?;
            out.insert(fields[0], fields[2], grade);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ctx = || path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut out = BufWriter::new(file);
        for (q, docs) in &self.grades {
            for (d, grade) in docs {
                writeln!(out, "{q} 0 {d} {grade}").map_err(|e| Error::io(ctx(), e))?;
            }
        }
        out.flush().map_err(|e| Error::io(ctx(), e))
    }
}
