//! Distillation losses and the pair sampler that feeds the pairwise term.

mod loss;
mod pairs;

pub use loss::{
    infonce, loss_infonce, loss_pairwise_kd, loss_pointwise_kd, loss_total, pair_kl, pointwise_kd,
    softmax, LossBreakdown, LossConfig, PairReduction, QueryExample,
};
pub use pairs::{candidate_count, candidate_pairs, sample_pairs, PairSample, SampledPair};
