#![allow(dead_code)]

use distillrank::corpus::{Corpus, Split};
use distillrank::encoder::{EncoderConfig, EncoderModel, Gradient, Similarity};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODES: [Similarity; 3] = [Similarity::Dot, Similarity::Cosine, Similarity::MaxSim];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn text(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> String {
    (0..len)
        .map(|_| format!("w{:03}", rng.random_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random bag-of-words corpus; every query is in the training split.
pub fn random_corpus(seed: u64, docs: usize, queries: usize, vocab: usize) -> Corpus {
    let mut r = rng(seed);
    let d = (0..docs)
        .map(|i| {
            let len = r.random_range(3..12);
            (format!("d{i:04}"), text(&mut r, vocab, len))
        })
        .collect();
    let q = (0..queries)
        .map(|i| {
            let len = r.random_range(2..6);
            (format!("q{i:03}"), text(&mut r, vocab, len), Split::Train)
        })
        .collect();
    Corpus::from_texts(d, q).unwrap()
}

pub fn model(corpus: &Corpus, similarity: Similarity, shared: bool, seed: u64) -> EncoderModel {
    EncoderModel::new(EncoderConfig {
        vocab_size: corpus.vocab().len(),
        dim: 6,
        similarity,
        shared,
        seed,
    })
    .unwrap()
}

/// Relative error with a small absolute floor in the denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between `analytic` and central differences of `f`
/// over `coords`.
pub fn fd_worst(
    model: &EncoderModel,
    f: impl Fn(&EncoderModel) -> f64,
    analytic: &Gradient,
    coords: &[usize],
    h: f64,
) -> f64 {
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    for &c in coords {
        let x = m.params()[c];
        m.params_mut()[c] = x + h;
        let up = f(&m);
        m.params_mut()[c] = x - h;
        let down = f(&m);
        m.params_mut()[c] = x;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data[c], numeric));
    }
    worst
}

/// Up to `n` distinct coordinates with a non-zero analytic gradient.
pub fn active_coords(grad: &Gradient, n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    let active: Vec<usize> = (0..grad.data.len()).filter(|&i| grad.data[i] != 0.0).collect();
    let take = n.min(active.len());
    sample(r, active.len(), take).into_iter().map(|i| active[i]).collect()
}
