//! Chain CRF inference and track refinement.

mod chain;
mod refine;

pub use chain::{
    build_chain, dcrf_score, forward_backward, viterbi, Candidate, ChainModel, DcrfError, DcrfParams, Marginals, SCORE_FLOOR,
};
pub use refine::{refine, refine_track, RefineParams};
