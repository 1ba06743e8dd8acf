//! Forward-filtering backward-simulation.
//!
//! Both samplers draw index paths `J_0, ..., J_T` from the backward chain:
//! `J_T` proportional to the terminal weights, then `J_s` given `J_{s+1} = k`
//! proportional to `w_s^j m(x_s^j, x_{s+1}^k)`.
//!
//! [`sample_backward_direct`] materializes each row (`O(N)` per draw).
//! [`sample_backward_linear`] proposes `J_s` from the filter weights alone
//! and accepts with probability `m / sigma_plus`; the expected number of
//! proposals per draw is at most `sigma_plus / sigma_minus`, so with `N`
//! paths the whole pass costs `O(N T)`.
//!
//! Streams: `J_T` uses `(BackwardInit, T)`. The linear sampler uses
//! `(Backward, s, 0, round)` for each accept-reject round and
//! `(Fallback, s, path)` for capped paths; the direct sampler uses
//! `(Backward, s, block)` per block of paths.

use rand::Rng;
use rayon::prelude::*;

use crate::apf::ForwardHistory;
use crate::error::{Result, SmcError};
use crate::ffbsm::unnormalized_row;
use crate::model::ModelSpec;
use crate::oracles::enumerate_joint_ffbsm;
use crate::rng::{Purpose, RngStream, StreamKey};
use crate::sampling::{
    multinomial_sample, multinomial_sample_prefix, sample_categorical, PrefixSums,
};
use crate::scalar::Scalar;

pub use crate::sampling::TrialCounters;

/// Paths per work unit of the direct sampler.
const PATH_BLOCK: usize = 4096;

/// Row cache limit for the direct sampler: rows are cached per next index
/// when `N` is at most this.
const ROW_CACHE_MAX_N: usize = 1024;

/// Largest enumeration accepted by [`conditional_mean_check`].
pub const RB_CHECK_LIMIT: u128 = 1_000_000;

/// Indices `J_0, ..., J_T` into the forward particle arrays.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BackwardTrajectory {
    pub indices: Vec<usize>,
}

impl BackwardTrajectory {
    /// States along the path.
    pub fn states<'a, F: Scalar, S>(&'a self, history: &'a ForwardHistory<F, S>) -> impl Iterator<Item = &'a S> + 'a {
        self.indices
            .iter()
            .enumerate()
            .map(move |(t, &j)| &history.step(t).particles()[j])
    }
}

/// `100 * ceil(sigma_plus / sigma_minus)` when both bounds are known and
/// `sigma_minus > 0`, else `10_000`.
pub fn default_max_trials<F: Scalar, S>(model: &ModelSpec<F, S>) -> u64 {
    match (model.sigma_minus(), model.sigma_plus()) {
        (Some(lo), Some(hi)) if lo > F::zero() => {
            let r = (hi / lo).ceil().as_f64();
            if r.is_finite() && r < 1e15 {
                100 * r as u64
            } else {
                10_000
            }
        }
        _ => 10_000,
    }
}

fn terminal_indices<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    n_paths: usize,
    rng: &RngStream,
    counters: &mut TrialCounters,
) -> Result<Vec<usize>> {
    let big_t = history.horizon();
    let mut r = rng.derive(Purpose::BackwardInit, big_t as u64, 0);
    multinomial_sample(history.step(big_t).weights(), n_paths, &mut r, counters)
}

fn assemble(cols: Vec<Vec<usize>>, n_paths: usize) -> Vec<BackwardTrajectory> {
    (0..n_paths)
        .map(|l| BackwardTrajectory {
            indices: cols.iter().map(|c| c[l]).collect(),
        })
        .collect()
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(SmcError::InvalidParameter("n_paths must be positive".into()));
    }
    Ok(())
}

/// Exact backward-row prefix sums against `x_{s+1}^next`.
fn row_prefix<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    s: usize,
    next: usize,
    buf: &mut Vec<F>,
    counters: &mut TrialCounters,
) -> Result<PrefixSums<F>> {
    let n = history.n_particles();
    buf.resize(n, F::zero());
    let x_next = &history.step(s + 1).particles()[next];
    unnormalized_row(history, model, s, x_next, buf);
    counters.density_evals += n as u64;
    counters.accumulations += n as u64;
    PrefixSums::new(buf).map_err(|_| SmcError::DegenerateBackwardKernel { t: s, next })
}

/// Draws `n_paths` trajectories by sampling each backward row exactly.
pub fn sample_backward_direct<F: Scalar, S: Sync>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    n_paths: usize,
    rng: &RngStream,
) -> Result<(Vec<BackwardTrajectory>, TrialCounters)> {
    check_paths(n_paths)?;
    let big_t = history.horizon();
    let n = history.n_particles();
    let mut counters = TrialCounters::with_steps(big_t);
    let mut cols = vec![Vec::new(); big_t + 1];
    cols[big_t] = terminal_indices(history, n_paths, rng, &mut counters)?;

    for s in (0..big_t).rev() {
        let next = &cols[s + 1];
        let blocks: Vec<Result<(Vec<usize>, TrialCounters)>> = next
            .par_chunks(PATH_BLOCK)
            .enumerate()
            .map(|(b, block)| {
                let mut c = TrialCounters::new();
                let mut r = rng.derive(Purpose::Backward, s as u64, b as u64);
                let mut buf = Vec::new();
                let mut out = Vec::with_capacity(block.len());
                if n <= ROW_CACHE_MAX_N {
                    let mut cache: Vec<Option<PrefixSums<F>>> = vec![None; n];
                    for &k in block {
                        if cache[k].is_none() {
                            cache[k] = Some(row_prefix(history, model, s, k, &mut buf, &mut c)?);
                        }
                        out.push(sample_categorical(cache[k].as_ref().unwrap(), &mut r, &mut c));
                    }
                } else {
                    for &k in block {
                        let prefix = row_prefix(history, model, s, k, &mut buf, &mut c)?;
                        out.push(sample_categorical(&prefix, &mut r, &mut c));
                    }
                }
                Ok((out, c))
            })
            .collect();
        let mut col = Vec::with_capacity(n_paths);
        for block in blocks {
            let (out, c) = block?;
            col.extend(out);
            counters.merge(&c);
        }
        cols[s] = col;
    }
    Ok((assemble(cols, n_paths), counters))
}

/// Accept-reject backward simulation.
///
/// At each `s` every unfinished path proposes `I` proportional to `w_s`
/// (one batched multinomial draw for the whole active list) and accepts
/// when `U sigma_plus < m(x_s^I, x_{s+1}^{J_{s+1}})`. Rejected paths form
/// the next active list. A path still unfinished after `max_trials`
/// proposals is drawn from its exact row instead; this does not change the
/// output law.
///
/// Requires `model.sigma_plus()`. A density value above `sigma_plus` is a
/// [`SmcError::BoundViolation`].
pub fn sample_backward_linear<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    n_paths: usize,
    max_trials: u64,
    rng: &RngStream,
) -> Result<(Vec<BackwardTrajectory>, TrialCounters)> {
    check_paths(n_paths)?;
    let sigma_plus = model.sigma_plus().ok_or_else(|| {
        SmcError::Configuration("accept-reject backward sampling needs sigma_plus".into())
    })?;
    if max_trials == 0 {
        return Err(SmcError::InvalidParameter("max_trials must be positive".into()));
    }
    let big_t = history.horizon();
    let mut counters = TrialCounters::with_steps(big_t);
    let mut cols = vec![Vec::new(); big_t + 1];
    cols[big_t] = terminal_indices(history, n_paths, rng, &mut counters)?;

    let mut prefix = PrefixSums::new(history.step(big_t).weights())?;
    let mut trials = vec![0u64; n_paths];
    let mut active: Vec<usize> = Vec::with_capacity(n_paths);
    let mut rejected: Vec<usize> = Vec::with_capacity(n_paths);
    let mut buf = Vec::new();

    for s in (0..big_t).rev() {
        let cur = history.step(s);
        let xs = cur.particles();
        let next_xs = history.step(s + 1).particles();
        prefix.rebuild(cur.weights())?;
        counters.accumulations += xs.len() as u64;

        let next = &cols[s + 1];
        let mut col = vec![usize::MAX; n_paths];
        trials.iter_mut().for_each(|v| *v = 0);
        active.clear();
        active.extend(0..n_paths);
        let mut round = 0u64;

        while !active.is_empty() {
            let mut r = rng.substream(StreamKey::new(Purpose::Backward, s as u64, 0, round));
            let proposals = multinomial_sample_prefix(&prefix, active.len(), &mut r, &mut counters);
            counters.ar_trials[s] += active.len() as u64;
            rejected.clear();
            for (&l, &i) in active.iter().zip(&proposals) {
                let m = model.transition_density(&xs[i], &next_xs[next[l]]);
                counters.density_evals += 1;
                if !(m <= sigma_plus) {
                    return Err(SmcError::BoundViolation {
                        s,
                        index: i,
                        path: l,
                        value: m.as_f64(),
                        bound: sigma_plus.as_f64(),
                    });
                }
                let u: f64 = r.gen();
                counters.uniform_draws += 1;
                counters.comparisons += 1;
                if F::lit(u) * sigma_plus < m {
                    col[l] = i;
                    continue;
                }
                trials[l] += 1;
                if trials[l] >= max_trials {
                    let mut fr = rng.derive(Purpose::Fallback, s as u64, l as u64);
                    let row = row_prefix(history, model, s, next[l], &mut buf, &mut counters)?;
                    col[l] = sample_categorical(&row, &mut fr, &mut counters);
                    counters.fallback_count += 1;
                } else {
                    rejected.push(l);
                }
            }
            std::mem::swap(&mut active, &mut rejected);
            round += 1;
        }
        cols[s] = col;
    }
    Ok((assemble(cols, n_paths), counters))
}

/// Mean of `h` over the state paths of `trajectories`, accumulated as a
/// running mean (so a constant `h` returns that constant exactly).
pub fn ffbsi_estimate<F: Scalar, S: Clone>(
    history: &ForwardHistory<F, S>,
    trajectories: &[BackwardTrajectory],
    mut h: impl FnMut(&[S]) -> F,
) -> F {
    assert!(!trajectories.is_empty(), "ffbsi_estimate needs a trajectory");
    let mut path = Vec::with_capacity(history.horizon() + 1);
    let mut mean = F::zero();
    for (k, tr) in trajectories.iter().enumerate() {
        path.clear();
        path.extend(tr.states(history).cloned());
        mean = mean + (h(&path) - mean) / F::from_usize(k + 1).unwrap();
    }
    mean
}

/// Mean of `h(x_s)` over the trajectories.
pub fn ffbsi_marginal_estimate<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    trajectories: &[BackwardTrajectory],
    s: usize,
    h: impl Fn(&S) -> F,
) -> F {
    assert!(!trajectories.is_empty(), "ffbsi_marginal_estimate needs a trajectory");
    let xs = history.step(s).particles();
    let mut mean = F::zero();
    for (k, tr) in trajectories.iter().enumerate() {
        mean = mean + (h(&xs[tr.indices[s]]) - mean) / F::from_usize(k + 1).unwrap();
    }
    mean
}

/// Which backward sampler [`conditional_mean_check`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardSampler {
    Direct,
    Linear { max_trials: u64 },
}

/// Sample mean of `h` over backward paths next to its exact conditional
/// expectation given the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeanCheck {
    pub ffbsi_value: f64,
    pub ffbsm_value: f64,
    /// Standard error of `ffbsi_value` estimated from the same paths.
    pub std_err: f64,
    pub counters: TrialCounters,
}

impl ConditionalMeanCheck {
    /// `(ffbsi - ffbsm) / std_err`; zero when both agree exactly.
    pub fn studentized(&self) -> f64 {
        let d = self.ffbsi_value - self.ffbsm_value;
        if d == 0.0 {
            0.0
        } else {
            d / self.std_err
        }
    }
}

/// Compares the backward-simulation average of `h` with the exact FFBSm
/// joint estimator obtained by enumerating all `N^(T+1)` index paths.
pub fn conditional_mean_check<F: Scalar, S: Clone + Sync>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    h: impl Fn(&[S]) -> F,
    n_paths: usize,
    sampler: BackwardSampler,
    rng: &RngStream,
) -> Result<ConditionalMeanCheck> {
    let size = (history.n_particles() as u128)
        .checked_pow(history.horizon() as u32 + 1)
        .unwrap_or(u128::MAX);
    if size > RB_CHECK_LIMIT {
        return Err(SmcError::Infeasible {
            size,
            limit: RB_CHECK_LIMIT,
        });
    }
    let exact = enumerate_joint_ffbsm(history, model, &h)?;
    let (paths, counters) = match sampler {
        BackwardSampler::Direct => sample_backward_direct(history, model, n_paths, rng)?,
        BackwardSampler::Linear { max_trials } => {
            sample_backward_linear(history, model, n_paths, max_trials, rng)?
        }
    };
    // Welford in f64
    let mut path = Vec::with_capacity(history.horizon() + 1);
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (k, tr) in paths.iter().enumerate() {
        path.clear();
        path.extend(tr.states(history).cloned());
        let v = h(&path).as_f64();
        let d = v - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (v - mean);
    }
    let n = paths.len() as f64;
    let var = if paths.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    Ok(ConditionalMeanCheck {
        ffbsi_value: mean,
        ffbsm_value: exact.as_f64(),
        std_err: (var / n).sqrt(),
        counters,
    })
}
