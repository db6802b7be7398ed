//! Linear dual encoder over term embedding tables.
//!
//! Single-vector modes pool a text as the count-weighted sum of its term rows;
//! cosine mode additionally normalizes the pooled vector. Maxsim mode keeps one
//! row per token and scores with the sum over query tokens of the best
//! document-token dot product.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query, TextFeatures};
use crate::error::{Error, Result};
use crate::seed::{digest_hex, keyed_rng};

const CHECKPOINT_MAGIC: &[u8; 8] = b"DRCKPT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dot,
    Cosine,
    MaxSim,
}

impl Similarity {
    fn code(self) -> u8 {
        match self {
            Similarity::Dot => 0,
            Similarity::Cosine => 1,
            Similarity::MaxSim => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Similarity::Dot),
            1 => Ok(Similarity::Cosine),
            2 => Ok(Similarity::MaxSim),
            other => Err(Error::Format(format!("unknown similarity code {other}"))),
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Dot => "dot",
            Similarity::Cosine => "cosine",
            Similarity::MaxSim => "maxsim",
        })
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Similarity::Dot),
            "cosine" => Ok(Similarity::Cosine),
            "maxsim" => Ok(Similarity::MaxSim),
            other => Err(Error::Config(format!(
                "unknown similarity `{other}` (expected dot, cosine or maxsim)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Doc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub similarity: Similarity,
    /// One table for both sides when true.
    pub shared: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    similarity: Similarity,
    dim: usize,
    vocab_size: usize,
    shared: bool,
    seed: u64,
    params: Vec<f64>,
}

/// Encoded text: `rows` vectors of length `dim`, row-major.
///
/// In cosine mode `data` holds the unit vector and `norm` the length of the
/// pooled vector it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Repr {
    pub data: Vec<f64>,
    pub rows: usize,
    pub norm: f64,
}

impl Repr {
    pub fn row(&self, i: usize, dim: usize) -> &[f64] {
        &self.data[i * dim..(i + 1) * dim]
    }
}

/// Parameter-shaped accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub data: Vec<f64>,
    pub count: usize,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
            count: 0,
        }
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
        self.count = 0;
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        self.count += other.count;
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EncoderModel {
    /// Entries are i.i.d. uniform in `[-0.5, 0.5] / sqrt(dim)`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.dim == 0 || config.vocab_size == 0 {
            return Err(Error::Config("encoder needs positive dim and vocabulary".into()));
        }
        let tables = if config.shared { 1 } else { 2 };
        let len = tables * config.vocab_size * config.dim;
        let bound = 0.5 / (config.dim as f64).sqrt();
        let mut rng = keyed_rng("encoder-init", config.seed, &[]);
        let params = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(Self {
            similarity: config.similarity,
            dim: config.dim,
            vocab_size: config.vocab_size,
            shared: config.shared,
            seed: config.seed,
            params,
        })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        let tables = if config.shared { 1 } else { 2 };
        let expected = tables * config.vocab_size * config.dim;
        if params.len() != expected {
            return Err(Error::DimMismatch {
                left: params.len(),
                right: expected,
            });
        }
        if let Some(bad) = params.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {bad}")));
        }
        Ok(Self {
            similarity: config.similarity,
            dim: config.dim,
            vocab_size: config.vocab_size,
            shared: config.shared,
            seed: config.seed,
            params,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            dim: self.dim,
            similarity: self.similarity,
            shared: self.shared,
            seed: self.seed,
        }
    }

    pub fn similarity_mode(&self) -> Similarity {
        self.similarity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_gradient(&self) -> Gradient {
        Gradient::zeros(self.params.len())
    }

    /// Offset of a term's row for one side.
    pub fn row_offset(&self, side: Side, term: u32) -> usize {
        let table = match (side, self.shared) {
            (Side::Doc, false) => self.vocab_size * self.dim,
            _ => 0,
        };
        table + term as usize * self.dim
    }

    fn row(&self, side: Side, term: u32) -> &[f64] {
        let o = self.row_offset(side, term);
        &self.params[o..o + self.dim]
    }

    pub fn encode(&self, side: Side, input: &TextFeatures, label: &str) -> Result<Repr> {
        if input.is_empty() {
            return Err(Error::EmptyFeatures(label.to_string()));
        }
        if let Some(&bad) = input.tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::Validation(format!(
                "term {bad} of `{label}` is outside a vocabulary of {}",
                self.vocab_size
            )));
        }
        match self.similarity {
            Similarity::MaxSim => {
                let mut data = Vec::with_capacity(input.tokens.len() * self.dim);
                for &t in &input.tokens {
                    data.extend_from_slice(self.row(side, t));
                }
                Ok(Repr {
                    data,
                    rows: input.tokens.len(),
                    norm: 1.0,
                })
            }
            Similarity::Dot | Similarity::Cosine => {
                let mut pooled = vec![0.0; self.dim];
                for &(t, c) in &input.counts {
                    for (p, r) in pooled.iter_mut().zip(self.row(side, t)) {
                        *p += c * r;
                    }
                }
                if self.similarity == Similarity::Dot {
                    return Ok(Repr {
                        data: pooled,
                        rows: 1,
                        norm: 1.0,
                    });
                }
                let norm = dot(&pooled, &pooled).sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroNorm(label.to_string()));
                }
                pooled.iter_mut().for_each(|p| *p /= norm);
                Ok(Repr {
                    data: pooled,
                    rows: 1,
                    norm,
                })
            }
        }
    }

    pub fn encode_query(&self, query: &Query) -> Result<Repr> {
        self.encode(Side::Query, &query.features, &query.query_id)
    }

    pub fn encode_doc(&self, doc: &Document) -> Result<Repr> {
        self.encode(Side::Doc, &doc.features, &doc.doc_id)
    }

    fn check_dims(&self, q: &Repr, d: &Repr) -> Result<()> {
        for r in [q, d] {
            if r.data.len() != r.rows * self.dim {
                return Err(Error::DimMismatch {
                    left: r.data.len(),
                    right: r.rows * self.dim,
                });
            }
        }
        if self.similarity != Similarity::MaxSim && q.data.len() != d.data.len() {
            return Err(Error::DimMismatch {
                left: q.data.len(),
                right: d.data.len(),
            });
        }
        Ok(())
    }

    /// Best document token for each query token; ties go to the lowest index.
    fn maxsim_argmax(&self, q: &Repr, d: &Repr) -> Vec<(usize, f64)> {
        (0..q.rows)
            .map(|i| {
                let qi = q.row(i, self.dim);
                let mut best = (0, f64::NEG_INFINITY);
                for j in 0..d.rows {
                    let s = dot(qi, d.row(j, self.dim));
                    if s > best.1 {
                        best = (j, s);
                    }
                }
                best
            })
            .collect()
    }

    pub fn similarity(&self, q: &Repr, d: &Repr) -> Result<f64> {
        self.check_dims(q, d)?;
        Ok(match self.similarity {
            Similarity::Dot | Similarity::Cosine => dot(&q.data, &d.data),
            Similarity::MaxSim => self.maxsim_argmax(q, d).iter().map(|(_, s)| s).sum(),
        })
    }

    /// Gradients of `upstream * s(q, d)` with respect to the representation
    /// data of each side.
    pub fn similarity_grad(&self, q: &Repr, d: &Repr, upstream: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(q, d)?;
        match self.similarity {
            Similarity::Dot | Similarity::Cosine => Ok((
                d.data.iter().map(|x| upstream * x).collect(),
                q.data.iter().map(|x| upstream * x).collect(),
            )),
            Similarity::MaxSim => {
                let mut gq = vec![0.0; q.data.len()];
                let mut gd = vec![0.0; d.data.len()];
                for (i, (j, _)) in self.maxsim_argmax(q, d).into_iter().enumerate() {
                    let dj = d.row(j, self.dim);
                    let qi = q.row(i, self.dim);
                    for k in 0..self.dim {
                        gq[i * self.dim + k] += upstream * dj[k];
                        gd[j * self.dim + k] += upstream * qi[k];
                    }
                }
                Ok((gq, gd))
            }
        }
    }

    /// Pushes a representation gradient down to the embedding rows.
    pub fn accumulate(
        &self,
        side: Side,
        input: &TextFeatures,
        repr: &Repr,
        repr_grad: &[f64],
        grad: &mut Gradient,
    ) {
        match self.similarity {
            Similarity::MaxSim => {
                for (i, &t) in input.tokens.iter().enumerate() {
                    let o = self.row_offset(side, t);
                    for k in 0..self.dim {
                        grad.data[o + k] += repr_grad[i * self.dim + k];
                    }
                }
            }
            Similarity::Dot | Similarity::Cosine => {
                let pooled_grad: Vec<f64> = if self.similarity == Similarity::Cosine {
                    // d(p/|p|)/dp = (I - u u^T) / |p|
                    let along = dot(repr_grad, &repr.data);
                    repr_grad
                        .iter()
                        .zip(&repr.data)
                        .map(|(g, u)| (g - along * u) / repr.norm)
                        .collect()
                } else {
                    repr_grad.to_vec()
                };
                for &(t, c) in &input.counts {
                    let o = self.row_offset(side, t);
                    for k in 0..self.dim {
                        grad.data[o + k] += c * pooled_grad[k];
                    }
                }
            }
        }
        grad.count += 1;
    }

    /// Gradient of `upstream * s(q, d)` with respect to every parameter.
    pub fn backward(&self, query: &Query, doc: &Document, upstream: f64) -> Result<Gradient> {
        if !upstream.is_finite() {
            return Err(Error::NonFinite(format!("upstream gradient {upstream}")));
        }
        let q = self.encode_query(query)?;
        let d = self.encode_doc(doc)?;
        let (gq, gd) = self.similarity_grad(&q, &d, upstream)?;
        let mut grad = self.zero_gradient();
        self.accumulate(Side::Query, &query.features, &q, &gq, &mut grad);
        self.accumulate(Side::Doc, &doc.features, &d, &gd, &mut grad);
        grad.count = 1;
        Ok(grad)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(self.similarity.code());
        out.push(u8::from(self.shared));
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            bytes
                .read_exact(&mut buf)
                .map_err(|_| Error::Format("truncated checkpoint".into()))?;
            Ok(buf)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let flags = take(2)?;
        let similarity = Similarity::from_code(flags[0])?;
        let shared = match flags[1] {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad shared flag {other}"))),
        };
        let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let u64_at = |b: Vec<u8>| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let dim = u32_at(take(4)?) as usize;
        let vocab_size = u32_at(take(4)?) as usize;
        let seed = u64_at(take(8)?);
        let n = u64_at(take(8)?) as usize;
        let payload = take(n * 8)?;
        let params = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_params(
            EncoderConfig {
                vocab_size,
                dim,
                similarity,
                shared,
                seed,
            },
            params,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }

    /// Hash of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        digest_hex(&self.to_bytes())
    }
}
