//! Hidden Markov models on a general state space.
//!
//! A [`ModelSpec`] bundles the initial law, the transition density `m`
//! with respect to a fixed reference measure (Lebesgue for continuous
//! models, counting measure for finite ones), the per-time likelihood
//! `g_t(x) = g(x, y_t)` with the observations bound in at construction,
//! and optional global bounds `sigma_minus <= m <= sigma_plus`.
//!
//! Models own no randomness; every sampler takes the caller's RNG.

mod compact;
mod discrete;
mod lgssm;

use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::error::{Result, SmcError};
use crate::scalar::Scalar;

pub use compact::{make_compact_rw, CompactRwParams, KernelNormalizer};
pub use discrete::{make_discrete_hmm, DiscreteHmm, Emission};
pub use lgssm::{make_lgssm, InitialLaw, LgssmParams};

pub type InitialSampler<S> = Arc<dyn Fn(&mut dyn RngCore) -> S + Send + Sync>;
pub type StateDensity<F, S> = Arc<dyn Fn(&S) -> F + Send + Sync>;
pub type TransitionDensity<F, S> = Arc<dyn Fn(&S, &S) -> F + Send + Sync>;
pub type TransitionSampler<S> = Arc<dyn Fn(&S, &mut dyn RngCore) -> S + Send + Sync>;
pub type Likelihood<F, S> = Arc<dyn Fn(usize, &S) -> F + Send + Sync>;
/// Batched transition density: writes `m(from[l], to)` into `out[l]`.
pub type ColumnKernel<F, S> = Arc<dyn Fn(&[S], &S, &mut [F]) + Send + Sync>;
pub type TimedTransitionDensity<F, S> = Arc<dyn Fn(usize, &S, &S) -> F + Send + Sync>;
pub type TimedTransitionSampler<S> = Arc<dyn Fn(usize, &S, &mut dyn RngCore) -> S + Send + Sync>;

/// The observation sequence `y_0, ..., y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord<F> {
    values: Vec<F>,
}

impl<F: Scalar> ObservationRecord<F> {
    pub fn new(values: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(SmcError::InvalidParameter(
                "observation record must be nonempty".into(),
            ));
        }
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(SmcError::InvalidParameter(format!(
                "observation y_{t} is not finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Final time index `T`.
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    /// The first `len` observations.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.values.len() {
            return Err(SmcError::InvalidParameter(format!(
                "cannot truncate {} observations to {len}",
                self.values.len()
            )));
        }
        Ok(Self {
            values: self.values[..len].to_vec(),
        })
    }
}

/// Raw ingredients of a [`ModelSpec`]; validated by [`ModelSpec::new`].
pub struct ModelParts<F, S> {
    pub state_dim: usize,
    /// Number of observations, `T + 1`.
    pub n_obs: usize,
    pub initial_sampler: InitialSampler<S>,
    pub initial_density: StateDensity<F, S>,
    pub transition_density: TransitionDensity<F, S>,
    pub transition_sampler: TransitionSampler<S>,
    pub likelihood: Likelihood<F, S>,
    pub sigma_minus: Option<F>,
    pub sigma_plus: Option<F>,
    /// Optional fast path for `transition_density` over many origins.
    /// When `origin_factor` is set it must return `m(x, to) / origin_factor(x)`.
    pub column_kernel: Option<ColumnKernel<F, S>>,
    /// Optional factor `a(x)` with `m(x, x') = a(x) k(x, x')`, so that
    /// backward passes can apply it once per particle instead of once per pair.
    pub origin_factor: Option<StateDensity<F, S>>,
    /// Interval containing every state, for 1-D models on a bounded set.
    pub support: Option<(F, F)>,
}

/// An immutable state-space model. Cheap to clone.
pub struct ModelSpec<F, S = F> {
    parts: ModelParts<F, S>,
}

impl<F: Copy, S> Clone for ModelParts<F, S> {
    fn clone(&self) -> Self {
        Self {
            state_dim: self.state_dim,
            n_obs: self.n_obs,
            initial_sampler: self.initial_sampler.clone(),
            initial_density: self.initial_density.clone(),
            transition_density: self.transition_density.clone(),
            transition_sampler: self.transition_sampler.clone(),
            likelihood: self.likelihood.clone(),
            sigma_minus: self.sigma_minus,
            sigma_plus: self.sigma_plus,
            column_kernel: self.column_kernel.clone(),
            origin_factor: self.origin_factor.clone(),
            support: self.support,
        }
    }
}

impl<F: Copy, S> Clone for ModelSpec<F, S> {
    fn clone(&self) -> Self {
        Self {
            parts: self.parts.clone(),
        }
    }
}

impl<F, S> fmt::Debug for ModelSpec<F, S>
where
    F: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("state_dim", &self.parts.state_dim)
            .field("n_obs", &self.parts.n_obs)
            .field("sigma_minus", &self.parts.sigma_minus)
            .field("sigma_plus", &self.parts.sigma_plus)
            .field("support", &self.parts.support)
            .finish_non_exhaustive()
    }
}

impl<F: Scalar, S> ModelSpec<F, S> {
    pub fn new(parts: ModelParts<F, S>) -> Result<Self> {
        if parts.state_dim == 0 {
            return Err(SmcError::InvalidParameter("state_dim must be positive".into()));
        }
        if parts.n_obs == 0 {
            return Err(SmcError::InvalidParameter(
                "a model needs at least one observation".into(),
            ));
        }
        if let Some(lo) = parts.sigma_minus {
            if !(lo >= F::zero()) || !lo.is_finite() {
                return Err(SmcError::InvalidParameter(format!(
                    "sigma_minus = {lo} must be finite and nonnegative"
                )));
            }
        }
        if let Some(hi) = parts.sigma_plus {
            if !(hi > F::zero()) || !hi.is_finite() {
                return Err(SmcError::InvalidParameter(format!(
                    "sigma_plus = {hi} must be finite and positive"
                )));
            }
        }
        if let (Some(lo), Some(hi)) = (parts.sigma_minus, parts.sigma_plus) {
            if lo > hi {
                return Err(SmcError::InvalidParameter(format!(
                    "sigma_minus = {lo} exceeds sigma_plus = {hi}"
                )));
            }
        }
        if parts.origin_factor.is_some() && parts.column_kernel.is_none() {
            return Err(SmcError::InvalidParameter(
                "origin_factor requires a column_kernel".into(),
            ));
        }
        if let Some((a, b)) = parts.support {
            if !(a < b) {
                return Err(SmcError::InvalidParameter(format!(
                    "empty support interval [{a}, {b}]"
                )));
            }
        }
        Ok(Self { parts })
    }

    /// Copy of the ingredients, for building a modified model.
    pub fn to_parts(&self) -> ModelParts<F, S> {
        self.parts.clone()
    }

    /// Same model with different declared density bounds.
    pub fn with_sigma_bounds(&self, sigma_minus: Option<F>, sigma_plus: Option<F>) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.sigma_minus = sigma_minus;
        parts.sigma_plus = sigma_plus;
        Self::new(parts)
    }

    pub fn state_dim(&self) -> usize {
        self.parts.state_dim
    }

    pub fn n_obs(&self) -> usize {
        self.parts.n_obs
    }

    /// Final time index `T`.
    pub fn horizon(&self) -> usize {
        self.parts.n_obs - 1
    }

    pub fn sigma_minus(&self) -> Option<F> {
        self.parts.sigma_minus
    }

    pub fn sigma_plus(&self) -> Option<F> {
        self.parts.sigma_plus
    }

    pub fn support(&self) -> Option<(F, F)> {
        self.parts.support
    }

    #[inline]
    pub fn sample_initial(&self, rng: &mut dyn RngCore) -> S {
        (self.parts.initial_sampler)(rng)
    }

    #[inline]
    pub fn initial_density(&self, x: &S) -> F {
        (self.parts.initial_density)(x)
    }

    #[inline]
    pub fn transition_density(&self, from: &S, to: &S) -> F {
        (self.parts.transition_density)(from, to)
    }

    #[inline]
    pub fn sample_transition(&self, from: &S, rng: &mut dyn RngCore) -> S {
        (self.parts.transition_sampler)(from, rng)
    }

    #[inline]
    pub fn likelihood(&self, t: usize, x: &S) -> F {
        (self.parts.likelihood)(t, x)
    }

    /// `out[l] = m(from[l], to)` for every `l`.
    pub fn transition_column(&self, from: &[S], to: &S, out: &mut [F]) {
        self.core_column(from, to, out);
        if let Some(a) = &self.parts.origin_factor {
            for (o, x) in out.iter_mut().zip(from) {
                *o = *o * a(x);
            }
        }
    }

    /// `out[l] = m(from[l], to) / a(from[l])`, with `a` the origin factor
    /// (identically one when the model declares none).
    pub fn core_column(&self, from: &[S], to: &S, out: &mut [F]) {
        debug_assert_eq!(from.len(), out.len());
        match &self.parts.column_kernel {
            Some(kernel) => kernel(from, to, out),
            None => {
                for (o, x) in out.iter_mut().zip(from) {
                    *o = (self.parts.transition_density)(x, to);
                }
            }
        }
    }

    /// `out[l] = a(from[l])`; see [`ModelSpec::core_column`].
    pub fn origin_factors(&self, from: &[S], out: &mut [F]) {
        match &self.parts.origin_factor {
            Some(a) => {
                for (o, x) in out.iter_mut().zip(from) {
                    *o = a(x);
                }
            }
            None => out.iter_mut().for_each(|o| *o = F::one()),
        }
    }

    pub fn has_origin_factor(&self) -> bool {
        self.parts.origin_factor.is_some()
    }
}

/// Instrumental law of the initial particles.
#[derive(Clone)]
pub enum InitialProposal<F, S> {
    /// Draw from the model's initial law; the density ratio is exactly 1.
    Prior,
    Custom {
        sampler: InitialSampler<S>,
        density: StateDensity<F, S>,
    },
}

/// Proposal kernel `p_t(x, x')` of the auxiliary particle filter.
#[derive(Clone)]
pub enum ProposalKernel<F, S> {
    /// `p_t = m`; the ratio `m / p` cancels exactly.
    Transition,
    Custom {
        density: TimedTransitionDensity<F, S>,
        sampler: TimedTransitionSampler<S>,
    },
}

/// Ingredients of an auxiliary particle filter: adjustment multipliers
/// `theta_t(x)` and proposal kernels `p_t(x, x')`, plus the initial
/// instrumental law `rho_0`.
#[derive(Clone)]
pub struct ProposalSpec<F, S = F> {
    pub initial: InitialProposal<F, S>,
    /// `None` means `theta_t == 1`.
    pub adjustment: Option<Likelihood<F, S>>,
    pub kernel: ProposalKernel<F, S>,
    pub label: &'static str,
}

impl<F, S> fmt::Debug for ProposalSpec<F, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProposalSpec")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl<F: Scalar, S> ProposalSpec<F, S> {
    /// `theta == 1`, `p = m`, `rho_0 = chi`: the bootstrap filter.
    pub fn bootstrap() -> Self {
        Self {
            initial: InitialProposal::Prior,
            adjustment: None,
            kernel: ProposalKernel::Transition,
            label: "bootstrap",
        }
    }

    pub fn is_bootstrap(&self) -> bool {
        matches!(self.initial, InitialProposal::Prior)
            && self.adjustment.is_none()
            && matches!(self.kernel, ProposalKernel::Transition)
    }

    #[inline]
    pub fn adjustment(&self, t: usize, x: &S) -> F {
        match &self.adjustment {
            Some(a) => a(t, x),
            None => F::one(),
        }
    }
}

/// Normal density.
#[inline]
pub fn normal_pdf<F: Scalar>(x: F, mean: F, sd: F) -> F {
    let z = (x - mean) / sd;
    (F::lit(-0.5) * z * z).exp() / (sd * F::lit((2.0 * std::f64::consts::PI).sqrt()))
}

#[inline]
pub(crate) fn standard_normal(rng: &mut dyn RngCore) -> f64 {
    use rand::Rng;
    rng.sample(rand_distr::StandardNormal)
}
