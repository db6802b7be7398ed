//! Exact top-k retrieval over an encoded corpus.

use std::cmp::Ordering;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{Corpus, Query, RunList};
use crate::encoder::{EncoderModel, Repr, Similarity};
use crate::error::{Error, Result};

const INDEX_MAGIC: &[u8; 8] = b"DRINDEX1";

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    doc_ids: Vec<String>,
    reprs: Vec<Repr>,
    similarity: Similarity,
    dim: usize,
    fingerprint: String,
}

impl Index {
    /// Encodes every document with `model`.
    pub fn build(model: &EncoderModel, corpus: &Corpus) -> Result<Self> {
        if corpus.docs().is_empty() {
            return Err(Error::Validation("cannot index an empty corpus".into()));
        }
        let reprs = corpus
            .docs()
            .par_iter()
            .map(|d| model.encode_doc(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            doc_ids: corpus.docs().iter().map(|d| d.doc_id.clone()).collect(),
            reprs,
            similarity: model.similarity_mode(),
            dim: model.dim(),
            fingerprint: model.fingerprint(),
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn check_fresh(&self, model: &EncoderModel) -> Result<()> {
        let current = model.fingerprint();
        if current != self.fingerprint {
            return Err(Error::StaleIndex {
                index: self.fingerprint.clone(),
                model: current,
            });
        }
        Ok(())
    }

    /// Top `min(k, |corpus|)` documents by similarity, ties by doc id.
    pub fn retrieve(&self, model: &EncoderModel, query: &Query, k: usize) -> Result<RunList> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        self.check_fresh(model)?;
        let q = model.encode_query(query)?;
        let mut scored: Vec<(usize, f64)> = self
            .reprs
            .iter()
            .enumerate()
            .map(|(i, d)| Ok((i, model.similarity(&q, d)?)))
            .collect::<Result<_>>()?;
        let cmp = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(RunList::from_scores(
            query.query_id.clone(),
            scored
                .into_iter()
                .map(|(i, s)| (self.doc_ids[i].clone(), s))
                .collect(),
        ))
    }

    /// Retrieves for many queries in parallel; output order follows input.
    pub fn retrieve_all<'a>(
        &self,
        model: &EncoderModel,
        queries: impl IntoParallelIterator<Item = &'a Query>,
        k: usize,
    ) -> Result<Vec<RunList>> {
        queries
            .into_par_iter()
            .map(|q| self.retrieve(model, q, k))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.push(match self.similarity {
            Similarity::Dot => 0,
            Similarity::Cosine => 1,
            Similarity::MaxSim => 2,
        });
        out.push(0);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.doc_ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        out.extend_from_slice(self.fingerprint.as_bytes());
        for id in &self.doc_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for r in &self.reprs {
            out.extend_from_slice(&(r.rows as u32).to_le_bytes());
            out.extend_from_slice(&r.norm.to_le_bytes());
            for x in &r.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        fn take(bytes: &mut &[u8], n: usize) -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            bytes
                .read_exact(&mut buf)
                .map_err(|_| Error::Format("truncated index".into()))?;
            Ok(buf)
        }
        fn u32_of(bytes: &mut &[u8]) -> Result<usize> {
            Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().expect("4 bytes")) as usize)
        }
        fn f64_of(bytes: &mut &[u8]) -> Result<f64> {
            Ok(f64::from_le_bytes(take(bytes, 8)?.try_into().expect("8 bytes")))
        }
        fn string_of(bytes: &mut &[u8]) -> Result<String> {
            let n = u32_of(bytes)?;
            String::from_utf8(take(bytes, n)?).map_err(|_| Error::Format("non-utf8 id".into()))
        }

        if take(&mut bytes, 8)? != INDEX_MAGIC {
            return Err(Error::Format("bad index magic".into()));
        }
        let flags = take(&mut bytes, 2)?;
        let similarity = match flags[0] {
            0 => Similarity::Dot,
            1 => Similarity::Cosine,
            2 => Similarity::MaxSim,
            other => return Err(Error::Format(format!("unknown similarity code {other}"))),
        };
        let dim = u32_of(&mut bytes)?;
        let n = u32_of(&mut bytes)?;
        let fingerprint = string_of(&mut bytes)?;
        let doc_ids = (0..n)
            .map(|_| string_of(&mut bytes))
            .collect::<Result<Vec<_>>>()?;
        let mut reprs = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = u32_of(&mut bytes)?;
            let norm = f64_of(&mut bytes)?;
            let data = (0..rows * dim)
                .map(|_| f64_of(&mut bytes))
                .collect::<Result<Vec<_>>>()?;
            reprs.push(Repr { data, rows, norm });
        }
        Ok(Self {
            doc_ids,
            reprs,
            similarity,
            dim,
            fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Split, SyntheticSpec};
    use crate::encoder::EncoderConfig;

    fn setup(num_docs: usize, similarity: Similarity) -> (Corpus, EncoderModel) {
        let spec = SyntheticSpec {
            num_docs,
            num_train_queries: 5,
            num_dev_queries: 0,
            seed: 2,
            ..SyntheticSpec::default()
        };
        let (corpus, _, _) = generate_synthetic(&spec).unwrap();
        let model = EncoderModel::new(EncoderConfig {
            vocab_size: corpus.vocab().len(),
            dim: 8,
            similarity,
            shared: true,
            seed: 1,
        })
        .unwrap();
        (corpus, model)
    }

    #[test]
    fn one_entry_per_document() {
        let (corpus, model) = setup(100, Similarity::Dot);
        let index = Index::build(&model, &corpus).unwrap();
        assert_eq!(index.len(), 100);
        assert_eq!(index.fingerprint(), Index::build(&model, &corpus).unwrap().fingerprint());
    }

    #[test]
    fn k_larger_than_corpus_returns_everything() {
        let (corpus, model) = setup(30, Similarity::Cosine);
        let index = Index::build(&model, &corpus).unwrap();
        let q = corpus.queries_in(Split::Train).next().unwrap();
        let run = index.retrieve(&model, q, 1000).unwrap();
        assert_eq!(run.len(), 30);
        run.validate().unwrap();
    }

    #[test]
    fn k1_is_the_argmax() {
        let (corpus, model) = setup(60, Similarity::MaxSim);
        let index = Index::build(&model, &corpus).unwrap();
        for q in corpus.queries() {
            let qr = model.encode_query(q).unwrap();
            let mut best = ("", f64::NEG_INFINITY);
            for d in corpus.docs() {
                let s = model.similarity(&qr, &model.encode_doc(d).unwrap()).unwrap();
                if s > best.1 {
                    best = (&d.doc_id, s);
                }
            }
            let run = index.retrieve(&model, q, 1).unwrap();
            assert_eq!(run.entries[0].doc_id, best.0);
        }
    }

    #[test]
    fn stale_index_is_detected() {
        let (corpus, mut model) = setup(20, Similarity::Dot);
        let index = Index::build(&model, &corpus).unwrap();
        model.params_mut()[3] -= 0.01;
        let q = &corpus.queries()[0];
        assert!(matches!(index.retrieve(&model, q, 3), Err(Error::StaleIndex { .. })));
        assert!(matches!(index.retrieve(&model, q, 0), Err(Error::Config(_))));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus = Corpus::from_texts(vec![], vec![]).unwrap();
        let model = EncoderModel::new(EncoderConfig {
            vocab_size: 3,
            dim: 2,
            similarity: Similarity::Dot,
            shared: true,
            seed: 0,
        })
        .unwrap();
        assert!(Index::build(&model, &corpus).is_err());
    }

    #[test]
    fn persisted_index_round_trips() {
        let (corpus, model) = setup(25, Similarity::MaxSim);
        let index = Index::build(&model, &corpus).unwrap();
        let bytes = index.to_bytes();
        let back = Index::from_bytes(&bytes).unwrap();
        assert_eq!(back, index);
        assert_eq!(back.to_bytes(), bytes);
    }
}
