//! Auxiliary particle filter.
//!
//! Each step draws ancestor indices with probability proportional to
//! `w_{t-1}^j theta_t(x_{t-1}^j)` (multinomial resampling at every step),
//! moves each particle through the proposal kernel and assigns the weight
//! `m(x_anc, x) g_t(x) / (theta_t(x_anc) p_t(x_anc, x))`.
//!
//! Randomness: ancestor draws use stream `(seed, Resample, t)`, particle `i`
//! uses `(seed, Propagate, t, i)` (or `(seed, Initial, 0, i)` at time 0), so
//! the output does not depend on how particles are spread over threads.

use rayon::prelude::*;

use crate::error::{Result, SmcError};
use crate::model::{InitialProposal, ModelSpec, ProposalKernel, ProposalSpec};
use crate::rng::{Purpose, RngStream};
use crate::sampling::{multinomial_sample, TrialCounters};
use crate::scalar::Scalar;

/// A weighted particle sample `{(x^i, w^i)}` approximating one filter law.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample<F, S = F> {
    particles: Vec<S>,
    weights: Vec<F>,
    weight_sum: F,
    log_norm: F,
}

impl<F: Scalar, S> WeightedSample<F, S> {
    /// Validates weights (finite, nonnegative, positive total).
    pub fn new(particles: Vec<S>, weights: Vec<F>, log_norm: F) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(SmcError::InvalidParameter(format!(
                "{} particles with {} weights",
                particles.len(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < F::zero()) {
            return Err(SmcError::InvalidWeights(format!(
                "weight {i} is {}",
                weights[i]
            )));
        }
        let weight_sum = plain_sum(&weights);
        if !(weight_sum > F::zero()) {
            return Err(SmcError::InvalidWeights("weights sum to zero".into()));
        }
        Ok(Self {
            particles,
            weights,
            weight_sum,
            log_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    /// Unnormalized weights, possibly rescaled by a power of two (see
    /// [`apf_step`]).
    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn weight_sum(&self) -> F {
        self.weight_sum
    }

    /// Running log marginal likelihood estimate `log p(y_0, ..., y_t)`.
    pub fn log_norm(&self) -> F {
        self.log_norm
    }

    pub fn normalized_weights(&self) -> Vec<F> {
        self.weights.iter().map(|&w| w / self.weight_sum).collect()
    }

    pub fn ess(&self) -> F {
        let s2: F = self.weights.iter().map(|&w| w * w).sum();
        self.weight_sum * self.weight_sum / s2
    }
}

/// Sequential left-to-right sum; `filter_estimate(ws, 1)` relies on using
/// the same order as `weight_sum`.
fn plain_sum<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |a, &b| a + b)
}

/// All weighted samples of a forward pass plus the ancestor indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardHistory<F, S = F> {
    steps: Vec<WeightedSample<F, S>>,
    /// `ancestors[t]` for `t >= 1`; `ancestors[0]` is empty.
    ancestors: Vec<Vec<usize>>,
    n_particles: usize,
}

impl<F: Scalar, S> ForwardHistory<F, S> {
    /// `ancestors` must hold one vector per step after the first.
    pub fn from_parts(steps: Vec<WeightedSample<F, S>>, ancestors: Vec<Vec<usize>>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(SmcError::InvalidParameter("empty history".into()));
        };
        let n = first.len();
        if steps.iter().any(|s| s.len() != n) {
            return Err(SmcError::InvalidParameter(
                "all steps must have the same particle count".into(),
            ));
        }
        if ancestors.len() + 1 != steps.len() {
            return Err(SmcError::InvalidParameter(format!(
                "{} ancestor vectors for {} steps",
                ancestors.len(),
                steps.len()
            )));
        }
        if ancestors.iter().any(|a| a.len() != n || a.iter().any(|&i| i >= n)) {
            return Err(SmcError::InvalidParameter(
                "ancestor indices out of range".into(),
            ));
        }
        let mut all = Vec::with_capacity(steps.len());
        all.push(Vec::new());
        all.extend(ancestors);
        Ok(Self {
            steps,
            ancestors: all,
            n_particles: n,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    /// Final time index `T`.
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn steps(&self) -> &[WeightedSample<F, S>] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &WeightedSample<F, S> {
        &self.steps[t]
    }

    /// Ancestor of each particle at time `t >= 1`.
    pub fn ancestors(&self, t: usize) -> &[usize] {
        &self.ancestors[t]
    }

    pub fn log_likelihood(&self) -> F {
        self.steps.last().unwrap().log_norm
    }
}

/// Powers of two outside which weights are rescaled before storage.
fn rescale_exponent<F: Scalar>(max_w: F) -> i32 {
    let lo = F::min_positive_value().sqrt();
    let hi = F::max_value().sqrt();
    if max_w >= lo && max_w <= hi {
        0
    } else {
        -max_w.log2().floor().to_i32().unwrap_or(0)
    }
}

/// Rescales by an exact power of two when the largest weight is extreme and
/// returns the natural-log correction to subtract from the normalization.
fn finish_weights<F: Scalar>(weights: &mut [F], t: usize) -> Result<F> {
    let max_w = weights.iter().copied().fold(F::zero(), F::max);
    if !(max_w > F::zero()) {
        return Err(SmcError::ParticleCollapse { t });
    }
    let e = rescale_exponent(max_w);
    if e == 0 {
        return Ok(F::zero());
    }
    let scale = F::lit(2.0).powi(e);
    for w in weights.iter_mut() {
        *w = *w * scale;
    }
    Ok(F::from_i32(e).unwrap() * F::lit(std::f64::consts::LN_2))
}

fn check_weights<F: Scalar>(weights: &[F], t: usize) -> Result<()> {
    match weights.iter().position(|w| !w.is_finite() || *w < F::zero()) {
        Some(particle) => Err(SmcError::NonFiniteWeight { t, particle }),
        None => Ok(()),
    }
}

/// Draws `n` particles from `rho_0` and weights them by
/// `(dchi/drho_0)(x) g_0(x)`; with `rho_0 = chi` the weight is `g_0(x)`.
pub fn init_particles<F: Scalar, S: Clone + Send + Sync>(
    model: &ModelSpec<F, S>,
    proposal: &ProposalSpec<F, S>,
    n: usize,
    rng: &RngStream,
) -> Result<WeightedSample<F, S>> {
    if n == 0 {
        return Err(SmcError::InvalidParameter("need at least one particle".into()));
    }
    let pairs: Vec<(S, F)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(Purpose::Initial, 0, i as u64);
            match &proposal.initial {
                InitialProposal::Prior => {
                    let x = model.sample_initial(&mut r);
                    let w = model.likelihood(0, &x);
                    (x, w)
                }
                InitialProposal::Custom { sampler, density } => {
                    let x = sampler(&mut r);
                    let w = model.initial_density(&x) / density(&x) * model.likelihood(0, &x);
                    (x, w)
                }
            }
        })
        .collect();
    let (particles, mut weights): (Vec<S>, Vec<F>) = pairs.into_iter().unzip();
    check_weights(&weights, 0)?;
    let correction = finish_weights(&mut weights, 0)?;
    let sum = plain_sum(&weights);
    let log_norm = (sum / F::from_usize(n).unwrap()).ln() - correction;
    WeightedSample::new(particles, weights, log_norm)
}

/// One auxiliary particle filter step to time `t >= 1`. Returns the new
/// sample and the ancestor index of each new particle.
pub fn apf_step<F: Scalar, S: Clone + Send + Sync>(
    prev: &WeightedSample<F, S>,
    model: &ModelSpec<F, S>,
    proposal: &ProposalSpec<F, S>,
    t: usize,
    rng: &RngStream,
) -> Result<(WeightedSample<F, S>, Vec<usize>)> {
    if t == 0 {
        return Err(SmcError::InvalidParameter("apf_step needs t >= 1".into()));
    }
    let n = prev.len();
    let first_stage: Vec<F> = match &proposal.adjustment {
        None => prev.weights.clone(),
        Some(adj) => prev
            .weights
            .iter()
            .zip(&prev.particles)
            .map(|(&w, x)| w * adj(t, x))
            .collect(),
    };
    check_weights(&first_stage, t)?;
    let first_stage_sum = plain_sum(&first_stage);
    if !(first_stage_sum > F::zero()) {
        return Err(SmcError::ParticleCollapse { t });
    }
    let mut resample_rng = rng.derive(Purpose::Resample, t as u64, 0);
    let mut scratch = TrialCounters::new();
    let ancestors = multinomial_sample(&first_stage, n, &mut resample_rng, &mut scratch)?;

    let pairs: Vec<(S, F)> = ancestors
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut r = rng.derive(Purpose::Propagate, t as u64, i as u64);
            let parent = &prev.particles[a];
            match &proposal.kernel {
                ProposalKernel::Transition => {
                    let x = model.sample_transition(parent, &mut r);
                    let w = model.likelihood(t, &x);
                    let w = match &proposal.adjustment {
                        None => w,
                        Some(adj) => w / adj(t, parent),
                    };
                    (x, w)
                }
                ProposalKernel::Custom { density, sampler } => {
                    let x = sampler(t, parent, &mut r);
                    let num = model.transition_density(parent, &x) * model.likelihood(t, &x);
                    let den = proposal.adjustment(t, parent) * density(t, parent, &x);
                    (x, num / den)
                }
            }
        })
        .collect();
    let (particles, mut weights): (Vec<S>, Vec<F>) = pairs.into_iter().unzip();
    check_weights(&weights, t)?;
    let correction = finish_weights(&mut weights, t)?;
    let sum = plain_sum(&weights);
    let log_norm = prev.log_norm + (first_stage_sum / prev.weight_sum).ln()
        + (sum / F::from_usize(n).unwrap()).ln()
        - correction;
    Ok((WeightedSample::new(particles, weights, log_norm)?, ancestors))
}

/// Runs the filter over all `T + 1` observations of `model`.
/// Deterministic in `(seed, n)`.
pub fn run_filter<F: Scalar, S: Clone + Send + Sync>(
    model: &ModelSpec<F, S>,
    proposal: &ProposalSpec<F, S>,
    n: usize,
    seed: u64,
) -> Result<ForwardHistory<F, S>> {
    let rng = RngStream::new(seed);
    let mut steps = Vec::with_capacity(model.n_obs());
    let mut ancestors = Vec::with_capacity(model.horizon());
    steps.push(init_particles(model, proposal, n, &rng)?);
    for t in 1..model.n_obs() {
        let (ws, anc) = apf_step(steps.last().unwrap(), model, proposal, t, &rng)?;
        steps.push(ws);
        ancestors.push(anc);
    }
    ForwardHistory::from_parts(steps, ancestors)
}

/// Self-normalized estimate `sum_i w^i h(x^i) / sum_i w^i`.
pub fn filter_estimate<F: Scalar, S>(ws: &WeightedSample<F, S>, h: impl Fn(&S) -> F) -> F {
    let acc = ws
        .weights
        .iter()
        .zip(&ws.particles)
        .fold(F::zero(), |a, (&w, x)| a + w * h(x));
    acc / ws.weight_sum
}
