//! Memoizing teacher wrappers.
//!
//! Entries are keyed by (query id, doc ids) within one teacher fingerprint and
//! can be persisted as sorted JSONL so a later run reuses them.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::seed::digest_hex;
use crate::teacher::{PairwiseTeacher, PointwiseTeacher};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    q: String,
    d: Vec<String>,
    v: f64,
}

#[derive(Debug, Default)]
struct Memo {
    entries: Mutex<BTreeMap<(String, Vec<String>), f64>>,
}

impl Memo {
    fn get_or_compute(
        &self,
        key: (String, Vec<String>),
        compute: impl FnOnce() -> Result<f64>,
    ) -> Result<f64> {
        if let Some(&v) = self.entries.lock().expect("cache poisoned").get(&key) {
            return Ok(v);
        }
        let v = compute()?;
        self.entries.lock().expect("cache poisoned").insert(key, v);
        Ok(v)
    }

    fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    fn path(dir: &Path, fingerprint: &str, kind: &str) -> PathBuf {
        dir.join(format!("{}.{kind}.jsonl", digest_hex(fingerprint.as_bytes())))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let ctx = || path.display().to_string();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(ctx(), e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut out = BufWriter::new(file);
        for ((q, d), v) in self.entries.lock().expect("cache poisoned").iter() {
            let line = CacheLine {
                q: q.clone(),
                d: d.clone(),
                v: *v,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
        }
        out.flush().map_err(|e| Error::io(ctx(), e))
    }

    fn load(&self, path: &Path) -> Result<usize> {
        if !path.exists() {
            return Ok(0);
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut entries = self.entries.lock().expect("cache poisoned");
        let mut n = 0;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.insert((parsed.q, parsed.d), parsed.v);
            n += 1;
        }
        Ok(n)
    }
}

pub struct CachedPointwise<T> {
    inner: T,
    memo: Memo,
}

impl<T: PointwiseTeacher> CachedPointwise<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            memo: Memo::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cache_path(&self, dir: &Path) -> PathBuf {
        Memo::path(dir, &self.inner.fingerprint(), "pointwise")
    }

    pub fn persist(&self, dir: &Path) -> Result<()> {
        self.memo.save(&self.cache_path(dir))
    }

    /// Loads a previously persisted cache for this fingerprint, if present.
    pub fn restore(&self, dir: &Path) -> Result<usize> {
        self.memo.load(&self.cache_path(dir))
    }
}

impl<T: PointwiseTeacher> PointwiseTeacher for CachedPointwise<T> {
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn score(&self, query: &Query, doc: &Document) -> Result<f64> {
        self.memo.get_or_compute(
            (query.query_id.clone(), vec![doc.doc_id.clone()]),
            || self.inner.score(query, doc),
        )
    }
}

pub struct CachedPairwise<T> {
    inner: T,
    memo: Memo,
}

impl<T: PairwiseTeacher> CachedPairwise<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            memo: Memo::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cache_path(&self, dir: &Path) -> PathBuf {
        Memo::path(dir, &self.inner.fingerprint(), "pairwise")
    }

    pub fn persist(&self, dir: &Path) -> Result<()> {
        self.memo.save(&self.cache_path(dir))
    }

    pub fn restore(&self, dir: &Path) -> Result<usize> {
        self.memo.load(&self.cache_path(dir))
    }
}

impl<T: PairwiseTeacher> PairwiseTeacher for CachedPairwise<T> {
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
        self.memo.get_or_compute(
            (
                query.query_id.clone(),
                vec![doc_i.doc_id.clone(), doc_j.doc_id.clone()],
            ),
            || self.inner.prefer(query, doc_i, doc_j),
        )
    }
}
