use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::RunList;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub i: String,
    pub j: String,
    pub p: f64,
}

/// Distillation targets for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTeacherScores {
    pub query_id: String,
    pub pointwise: BTreeMap<String, f64>,
    pub pairwise: Vec<PairScore>,
}

impl QueryTeacherScores {
    /// Checks probabilities and that every pair lies inside `top_k`.
    pub fn validate(&self, top_k: &RunList) -> Result<()> {
        let docs: HashSet<&str> = top_k.doc_ids().collect();
        for pair in &self.pairwise {
            if !(0.0..=1.0).contains(&pair.p) {
                return Err(Error::Validation(format!(
                    "query `{}`: probability {} outside [0, 1]",
                    self.query_id, pair.p
                )));
            }
            for d in [&pair.i, &pair.j] {
                if !docs.contains(d.as_str()) {
                    return Err(Error::Validation(format!(
                        "query `{}`: pair references `{d}` outside the top-k list",
                        self.query_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherScores {
    pub queries: Vec<QueryTeacherScores>,
}

impl TeacherScores {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ctx = || path.display().to_string();
        let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut out = BufWriter::new(file);
        for q in &self.queries {
            serde_json::to_writer(&mut out, q)?;
            out.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
        }
        out.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut queries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            queries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { queries })
    }
}
