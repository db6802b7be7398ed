//! Pairwise teacher backed by an instruction-following language model.
//!
//! The client contract is text in, probability mass per option token out.
//! The adapter renormalizes the mass of the two option tokens and reads the
//! first option's share as the preference probability.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document, Query, RelevanceOracle};
use crate::error::{Error, Result};
use crate::seed::digest_hex;
use crate::teacher::prompt::{parse_pairwise_prompt, prompt_pairwise};
use crate::teacher::synthetic::logistic;
use crate::teacher::PairwiseTeacher;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub options: [String; 2],
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    /// Probability mass of each option token, in request order.
    pub mass: [f64; 2],
}

/// A failed call that may succeed when retried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

pub trait LlmClient: Send + Sync {
    fn name(&self) -> String;

    fn complete(&self, request: &LlmRequest) -> std::result::Result<LlmResponse, TransportError>;
}

#[derive(Debug, Clone)]
pub struct LlmPairwiseTeacher<C> {
    client: C,
    temperature: f64,
    max_attempts: usize,
}

impl<C: LlmClient> LlmPairwiseTeacher<C> {
    pub fn new(client: C) -> Self {
        Self {
            client,
            temperature: 1.0,
            max_attempts: 3,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_attempts(mut self, attempts: usize) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    pub fn prefer_texts(&self, query: &str, doc_i: &str, doc_j: &str) -> Result<f64> {
        let request = LlmRequest {
            prompt: prompt_pairwise(query, doc_i, doc_j),
            options: ["A".to_string(), "B".to_string()],
            temperature: self.temperature,
        };
        let mut last = String::new();
        for _ in 0..self.max_attempts {
            match self.client.complete(&request) {
                Ok(response) => return renormalize(response),
                Err(TransportError(message)) => last = message,
            }
        }
        Err(Error::Transport {
            attempts: self.max_attempts,
            message: last,
        })
    }
}

fn renormalize(response: LlmResponse) -> Result<f64> {
    let [a, b] = response.mass;
    if !(a.is_finite() && b.is_finite()) || a < 0.0 || b < 0.0 {
        return Err(Error::Validation(format!("invalid option mass [{a}, {b}]")));
    }
    if a + b == 0.0 {
        return Err(Error::DegenerateResponse);
    }
    Ok(a / (a + b))
}

impl<C: LlmClient> PairwiseTeacher for LlmPairwiseTeacher<C> {
    fn fingerprint(&self) -> String {
        format!("llm:{}:{}", self.client.name(), self.temperature)
    }

    fn prefer(&self, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
        self.prefer_texts(&query.raw, &doc_i.raw, &doc_j.raw)
    }
}

/// One-shot adapter call with the default temperature and retry budget.
pub fn llm_adapter_prefer<C: LlmClient>(client: C, query: &Query, doc_i: &Document, doc_j: &Document) -> Result<f64> {
    LlmPairwiseTeacher::new(client).prefer(query, doc_i, doc_j)
}

/// Deterministic mock that answers from the synthetic relevance oracle.
///
/// Option masses are `logistic(sharpness * (rel_a - rel_b) / temperature)` and
/// its complement.
#[derive(Debug, Clone)]
pub struct RelevanceMockClient {
    oracle: RelevanceOracle,
    sharpness: f64,
}

impl RelevanceMockClient {
    pub fn new(oracle: RelevanceOracle, sharpness: f64) -> Self {
        Self { oracle, sharpness }
    }
}

impl LlmClient for RelevanceMockClient {
    fn name(&self) -> String {
        format!("relevance-mock:{}", self.sharpness)
    }

    fn complete(&self, request: &LlmRequest) -> std::result::Result<LlmResponse, TransportError> {
        let (query, a, b) = parse_pairwise_prompt(&request.prompt)
            .ok_or_else(|| TransportError("prompt does not follow the pairwise template".into()))?;
        let q = self.oracle.topic_vector(&tokenize(&query));
        let ra = self.oracle.score_vectors(&q, &self.oracle.topic_vector(&tokenize(&a)));
        let rb = self.oracle.score_vectors(&q, &self.oracle.topic_vector(&tokenize(&b)));
        let p = logistic(self.sharpness * (ra - rb) / request.temperature);
        Ok(LlmResponse { mass: [p, 1.0 - p] })
    }
}

#[derive(Debug, Deserialize)]
struct CannedResponse {
    prompt_digest: String,
    mass: [f64; 2],
}

/// Mock that replays canned responses from a JSONL file.
///
/// Each line is `{"prompt_digest": "<hex>", "mass": [a, b]}` where the digest
/// is the truncated SHA-256 of the prompt text.
#[derive(Debug, Clone)]
pub struct FileMockClient {
    responses: HashMap<String, [f64; 2]>,
    source: String,
}

impl FileMockClient {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut responses = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let canned: CannedResponse = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            responses.insert(canned.prompt_digest, canned.mass);
        }
        Ok(Self {
            responses,
            source: path.display().to_string(),
        })
    }

    pub fn prompt_digest(prompt: &str) -> String {
        digest_hex(prompt.as_bytes())
    }
}

impl LlmClient for FileMockClient {
    fn name(&self) -> String {
        format!("file-mock:{}", self.source)
    }

    fn complete(&self, request: &LlmRequest) -> std::result::Result<LlmResponse, TransportError> {
        self.responses
            .get(&Self::prompt_digest(&request.prompt))
            .map(|&mass| LlmResponse { mass })
            .ok_or_else(|| TransportError("no canned response for prompt".into()))
    }
}
