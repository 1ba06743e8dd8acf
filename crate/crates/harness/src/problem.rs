//! Builds a model, its proposal and its exact oracle from a config.

use pfsmooth::oracles::{discrete_forward_backward, grid_smoother, rts_smooth, ForwardBackward, GridDensity, KalmanSmoother};
use pfsmooth::{
    make_compact_rw, make_discrete_hmm, make_lgssm, CompactRwParams, DiscreteHmm, LgssmParams, ModelSpec,
    ObservationRecord, ProposalSpec, SmcError,
};
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::config::{ExperimentConfig, FilterKind, ModelConfig, ObservationSource, TargetFunction};
use crate::error::HarnessError;

/// Model parameters with the full observation record bound in.
#[derive(Clone)]
pub enum Instance {
    Lgssm(LgssmParams<f64>, ObservationRecord<f64>),
    Discrete(DiscreteHmm<f64>, ObservationRecord<f64>),
    CompactRw(CompactRwParams<f64>, ObservationRecord<f64>),
}

/// Exact reference for the smoothing (and, where cheap, filtering) laws.
pub enum Oracle {
    Kalman(KalmanSmoother),
    Discrete(ForwardBackward),
    Grid(GridDensity),
}

pub struct Problem {
    pub model: ModelSpec<f64>,
    pub proposal: ProposalSpec<f64>,
    pub horizon: usize,
    instance: Instance,
    grid_size: usize,
}

fn invalid(e: SmcError) -> HarnessError {
    HarnessError::field("model", e.to_string())
}

impl Instance {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self, HarnessError> {
        match cfg {
            ModelConfig::Lgssm { phi, sigma_v, sigma_w, observations } => {
                let p = LgssmParams::new(*phi, *sigma_v, *sigma_w);
                p.validate().map_err(invalid)?;
                let obs = match observations {
                    ObservationSource::Values(v) => ObservationRecord::new(v.clone()).map_err(invalid)?,
                    ObservationSource::Simulate { seed, length } => p.simulate(*length, *seed).map_err(invalid)?.1,
                };
                Ok(Instance::Lgssm(p, obs))
            }
            ModelConfig::Discrete { trans, init, means, emission_sd, observations } => {
                let hmm = DiscreteHmm::gaussian(trans.clone(), init.clone(), means.clone(), *emission_sd)
                    .map_err(invalid)?;
                let obs = match observations {
                    ObservationSource::Values(v) => ObservationRecord::new(v.clone()).map_err(invalid)?,
                    ObservationSource::Simulate { seed, length } => {
                        let noise = Normal::new(0.0, *emission_sd).map_err(|e| HarnessError::field("model.emission_sd", e.to_string()))?;
                        hmm.simulate(*length, *seed, |k, rng| means[k] + noise.sample(rng))
                            .map_err(invalid)?
                            .1
                    }
                };
                Ok(Instance::Discrete(hmm, obs))
            }
            ModelConfig::CompactRw { kappa, sigma_obs, observations } => {
                let p = CompactRwParams::new(*kappa, *sigma_obs);
                p.validate().map_err(invalid)?;
                let obs = match observations {
                    ObservationSource::Values(v) => ObservationRecord::new(v.clone()).map_err(invalid)?,
                    ObservationSource::Simulate { seed, length } => p.simulate(*length, *seed).map_err(invalid)?.1,
                };
                Ok(Instance::CompactRw(p, obs))
            }
        }
    }

    pub fn observations(&self) -> &ObservationRecord<f64> {
        match self {
            Instance::Lgssm(_, o) | Instance::Discrete(_, o) | Instance::CompactRw(_, o) => o,
        }
    }

    /// The same parameters with only `y_0..y_T` kept.
    pub fn truncated(&self, horizon: usize) -> Result<Self, HarnessError> {
        let cut = |o: &ObservationRecord<f64>| o.truncated(horizon + 1).map_err(invalid);
        Ok(match self {
            Instance::Lgssm(p, o) => Instance::Lgssm(p.clone(), cut(o)?),
            Instance::Discrete(h, o) => Instance::Discrete(h.clone(), cut(o)?),
            Instance::CompactRw(p, o) => Instance::CompactRw(*p, cut(o)?),
        })
    }
}

impl Problem {
    pub fn new(instance: Instance, filter: FilterKind, grid_size: usize) -> Result<Self, HarnessError> {
        let (model, proposal) = match &instance {
            Instance::Lgssm(p, o) => {
                let m = make_lgssm(p, o).map_err(invalid)?;
                let q = match filter {
                    FilterKind::Bootstrap => ProposalSpec::bootstrap(),
                    FilterKind::FullyAdapted => p.fully_adapted_proposal(o).map_err(invalid)?,
                };
                (m, q)
            }
            Instance::Discrete(h, o) => {
                let m = make_discrete_hmm(h, o).map_err(invalid)?;
                let q = match filter {
                    FilterKind::Bootstrap => ProposalSpec::bootstrap(),
                    FilterKind::FullyAdapted => h.fully_adapted_proposal(o),
                };
                (m, q)
            }
            Instance::CompactRw(p, o) => {
                let m = make_compact_rw(p, o).map_err(invalid)?;
                if filter == FilterKind::FullyAdapted {
                    return Err(HarnessError::field(
                        "algorithm.filter",
                        "fully_adapted has no closed form for compact_rw",
                    ));
                }
                (m, ProposalSpec::bootstrap())
            }
        };
        Ok(Self {
            horizon: instance.observations().horizon(),
            model,
            proposal,
            instance,
            grid_size,
        })
    }

    /// Builds the problem for `y_0..y_T` of the configured record.
    pub fn from_config(cfg: &ExperimentConfig, horizon: Option<usize>) -> Result<Self, HarnessError> {
        let full = Instance::from_config(&cfg.model)?;
        let inst = match horizon {
            Some(t) => full.truncated(t)?,
            None => full,
        };
        Self::new(inst, cfg.algorithm.filter, cfg.experiment.grid_size)
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn oracle(&self) -> Result<Oracle, HarnessError> {
        let run = |e: SmcError| HarnessError::Run {
            seed: 0,
            sweep: "T",
            value: self.horizon as u64,
            source: e,
        };
        Ok(match &self.instance {
            Instance::Lgssm(p, o) => Oracle::Kalman(rts_smooth(p, o).map_err(run)?),
            Instance::Discrete(h, o) => Oracle::Discrete(discrete_forward_backward(h, o).map_err(run)?),
            Instance::CompactRw(..) => Oracle::Grid(grid_smoother(&self.model, self.grid_size).map_err(run)?),
        })
    }
}

impl Oracle {
    /// `E[h(X_s) | y_{0:T}]`.
    pub fn smoothing(&self, s: usize, h: &TargetFunction) -> f64 {
        match self {
            Oracle::Kalman(k) => gaussian_expect(k.smoothed[s].mean, k.smoothed[s].variance, h),
            Oracle::Discrete(fb) => fb.smooth_expect(s, |k| h.eval(k as f64)),
            Oracle::Grid(g) => g.expect(s, |x| h.eval(x)),
        }
    }

    /// `E[h(X_t) | y_{0:t}]` where the oracle carries it.
    pub fn filtering(&self, t: usize, h: &TargetFunction) -> Option<f64> {
        match self {
            Oracle::Kalman(k) => Some(gaussian_expect(k.filtered[t].mean, k.filtered[t].variance, h)),
            Oracle::Discrete(fb) => Some(fb.filter[t].iter().enumerate().map(|(k, p)| p * h.eval(k as f64)).sum()),
            Oracle::Grid(_) => None,
        }
    }

    /// Smoothing expectations at every time, for the `oracle` subcommand.
    pub fn smoothing_path(&self, horizon: usize, h: &TargetFunction) -> Vec<f64> {
        (0..=horizon).map(|s| self.smoothing(s, h)).collect()
    }
}

/// `E[h(X)]` for `X ~ N(mean, var)`.
pub fn gaussian_expect(mean: f64, var: f64, h: &TargetFunction) -> f64 {
    let sd = var.sqrt();
    match *h {
        TargetFunction::Identity => mean,
        TargetFunction::IndicatorThreshold { c } => {
            if sd == 0.0 {
                return h.eval(mean);
            }
            NormalCdf::new(mean, sd).expect("positive sd").sf(c)
        }
        TargetFunction::Power { p } => {
            // E[(m + sd Z)^p] = sum_k C(p, k) m^(p-k) sd^k E[Z^k], E[Z^k] = (k-1)!! for even k.
            let p = p.max(0) as u32;
            let mut total = 0.0;
            let mut binom = 1.0;
            let mut z_moment = 1.0;
            for k in 0..=p {
                if k > 0 {
                    binom = binom * f64::from(p - k + 1) / f64::from(k);
                    if k % 2 == 0 {
                        z_moment *= f64::from(k - 1);
                    }
                }
                if k % 2 == 0 {
                    total += binom * mean.powi((p - k) as i32) * sd.powi(k as i32) * z_moment;
                }
            }
            total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments() {
        let h2 = TargetFunction::Power { p: 2 };
        assert!((gaussian_expect(1.5, 4.0, &h2) - (4.0 + 2.25)).abs() < 1e-12);
        let h4 = TargetFunction::Power { p: 4 };
        assert!((gaussian_expect(0.0, 1.0, &h4) - 3.0).abs() < 1e-12);
        let h3 = TargetFunction::Power { p: 3 };
        // m^3 + 3 m s^2
        assert!((gaussian_expect(2.0, 0.25, &h3) - (8.0 + 1.5)).abs() < 1e-12);
        let ind = TargetFunction::IndicatorThreshold { c: 0.0 };
        assert!((gaussian_expect(0.0, 9.0, &ind) - 0.5).abs() < 1e-12);
    }
}
