//! Sequential Monte Carlo smoothing for general state-space hidden Markov
//! models.
//!
//! The forward pass is an auxiliary particle filter ([`apf`]). On top of
//! its output, [`ffbsm`] computes marginal smoothing weights by the
//! backward recursion (`O(N^2 T)`), and [`ffbsi`] draws backward index
//! trajectories either row by row (`O(N^2 T)` for `N` paths) or by
//! accept-reject against the bound `m <= sigma_plus` (`O(N T)` expected
//! under strong mixing). [`oracles`] holds exact references for testing.
//!
//! Everything is generic over the scalar type ([`Scalar`], `f32` or `f64`)
//! and, for states, over any `Clone + Send + Sync` type. The `*F64` and
//! `*F32` aliases cover the common one-dimensional case.
//!
//! ```
//! use pfsmooth::{make_lgssm, run_filter, marginal_smoothing_weights, marginal_estimate};
//! use pfsmooth::{LgssmParams, ProposalSpec};
//!
//! let params = LgssmParams::new(0.9f64, 1.0, 1.0);
//! let (_, obs) = params.simulate(20, 7).unwrap();
//! let model = make_lgssm(&params, &obs).unwrap();
//! let history = run_filter(&model, &ProposalSpec::bootstrap(), 200, 1).unwrap();
//! let sw = marginal_smoothing_weights(&history, &model).unwrap();
//! let x0 = marginal_estimate(&history, &sw, 0, |x| *x);
//! assert!(x0.is_finite());
//! ```

pub mod apf;
pub mod error;
pub mod ffbsi;
pub mod ffbsm;
pub mod model;
pub mod oracles;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod stats;
mod simd;

pub use apf::{apf_step, filter_estimate, init_particles, run_filter, ForwardHistory, WeightedSample};
pub use error::{Result, SmcError};
pub use ffbsi::{
    conditional_mean_check, default_max_trials, ffbsi_estimate, ffbsi_marginal_estimate,
    sample_backward_direct, sample_backward_linear, BackwardSampler, BackwardTrajectory,
    ConditionalMeanCheck,
};
pub use ffbsm::{
    backward_weight_row, genealogy_trace_smoother, marginal_estimate, marginal_smoothing_weights,
    GenealogyPaths, SmoothingWeights,
};
pub use model::{
    make_compact_rw, make_discrete_hmm, make_lgssm, CompactRwParams, DiscreteHmm, LgssmParams,
    ModelParts, ModelSpec, ObservationRecord, ProposalSpec,
};
pub use rng::{Purpose, RngStream, StreamKey};
pub use sampling::{
    categorical_search, gallop_search, multinomial_sample, uniform_order_statistics, PrefixSums,
    TrialCounters,
};
pub use scalar::Scalar;

pub type ModelSpecF64 = ModelSpec<f64>;
pub type ModelSpecF32 = ModelSpec<f32>;
pub type ProposalSpecF64 = ProposalSpec<f64>;
pub type ProposalSpecF32 = ProposalSpec<f32>;
pub type ForwardHistoryF64 = ForwardHistory<f64>;
pub type ForwardHistoryF32 = ForwardHistory<f32>;
pub type WeightedSampleF64 = WeightedSample<f64>;
pub type WeightedSampleF32 = WeightedSample<f32>;
pub type SmoothingWeightsF64 = SmoothingWeights<f64>;
pub type SmoothingWeightsF32 = SmoothingWeights<f32>;
pub type ObservationRecordF64 = ObservationRecord<f64>;
pub type ObservationRecordF32 = ObservationRecord<f32>;
