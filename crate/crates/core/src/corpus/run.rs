use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_RUN_TAG: &str = "distillrank";

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    /// 1-based.
    pub rank: usize,
    pub score: f64,
}

/// Ranked documents for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RunList {
    pub query_id: String,
    pub tag: String,
    pub entries: Vec<RunEntry>,
}

impl RunList {
    /// Sorts by score descending with ties broken by doc id, then assigns ranks.
    pub fn from_scores(query_id: impl Into<String>, mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RunEntry {
                doc_id,
                rank: i + 1,
                score,
            })
            .collect();
        Self {
            query_id: query_id.into(),
            tag: DEFAULT_RUN_TAG.to_string(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Rank of each document, 1-based.
    pub fn ranks(&self) -> HashMap<&str, usize> {
        self.entries.iter().map(|e| (e.doc_id.as_str(), e.rank)).collect()
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self {
            query_id: self.query_id.clone(),
            tag: self.tag.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::Validation(format!(
                    "query `{}`: ranks are not contiguous (position {} has rank {})",
                    self.query_id,
                    i + 1,
                    e.rank
                )));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::Validation(format!(
                    "query `{}`: document `{}` appears twice",
                    self.query_id, e.doc_id
                )));
            }
            if i > 0 && e.score > self.entries[i - 1].score {
                return Err(Error::Validation(format!(
                    "query `{}`: score increases at rank {}",
                    self.query_id, e.rank
                )));
            }
        }
        Ok(())
    }
}

/// Parses a six-column TREC run file. Query order follows first appearance.
pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RunList>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut runs: Vec<RunList> = Vec::new();
    let mut by_query: HashMap<String, usize> = HashMap::new();
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
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| parse_err(format!("invalid rank `{}`", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(format!("invalid score `{}`", fields[4])))?;
        let slot = *by_query.entry(fields[0].to_string()).or_insert_with(|| {
            runs.push(RunList {
                query_id: fields[0].to_string(),
                tag: fields[5].to_string(),
                entries: Vec::new(),
            });
            runs.len() - 1
        });
        runs[slot].entries.push(RunEntry {
            doc_id: fields[2].to_string(),
            rank,
            score,
        });
    }
    for run in &mut runs {
        run.entries.sort_by_key(|e| e.rank);
        run.validate()?;
    }
    Ok(runs)
}

/// Writes `query_id Q0 doc_id rank score tag` lines with 6-decimal scores.
pub fn save_run(path: impl AsRef<Path>, runs: &[RunList]) -> Result<()> {
    let path = path.as_ref();
    let ctx = || path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut out = BufWriter::new(file);
    for run in runs {
        for e in &run.entries {
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                run.query_id, e.doc_id, e.rank, e.score, run.tag
            )
            .map_err(|e| Error::io(ctx(), e))?;
        }
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}
