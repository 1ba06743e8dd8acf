use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{
    normal_pdf, InitialProposal, ModelParts, ModelSpec, ObservationRecord, ProposalKernel,
    ProposalSpec,
};
use crate::error::{Result, SmcError};
use crate::rng::{Purpose, RngStream};
use crate::scalar::Scalar;

/// Emission density `g(k, y)` of hidden state `k` at observation `y`.
pub type Emission<F> = Arc<dyn Fn(usize, F) -> F + Send + Sync>;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite-state hidden Markov chain with states `0..K`.
#[derive(Clone)]
pub struct DiscreteHmm<F> {
    k: usize,
    trans: Vec<F>,
    init: Vec<F>,
    emit: Emission<F>,
}

impl<F: fmt::Debug> fmt::Debug for DiscreteHmm<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteHmm")
            .field("k", &self.k)
            .field("trans", &self.trans)
            .field("init", &self.init)
            .finish_non_exhaustive()
    }
}

impl<F: Scalar> DiscreteHmm<F> {
    /// `trans` rows and `init` must each sum to one within `1e-12`.
    pub fn new(trans: Vec<Vec<F>>, init: Vec<F>, emit: Emission<F>) -> Result<Self> {
        let k = trans.len();
        if k == 0 {
            return Err(SmcError::InvalidParameter("need at least one state".into()));
        }
        if init.len() != k {
            return Err(SmcError::InvalidParameter(format!(
                "init has {} entries for {k} states",
                init.len()
            )));
        }
        let tol = F::lit(STOCHASTIC_TOL);
        for (i, row) in trans.iter().enumerate() {
            if row.len() != k {
                return Err(SmcError::InvalidParameter(format!(
                    "transition row {i} has {} entries for {k} states",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= F::zero()) || !p.is_finite()) {
                return Err(SmcError::InvalidParameter(format!(
                    "transition row {i} has a negative or non-finite entry"
                )));
            }
            let s: F = row.iter().copied().sum();
            if (s - F::one()).abs() > tol {
                return Err(SmcError::InvalidParameter(format!(
                    "transition row {i} sums to {s}, not 1"
                )));
            }
        }
        if init.iter().any(|&p| !(p >= F::zero()) || !p.is_finite()) {
            return Err(SmcError::InvalidParameter(
                "initial distribution has a negative or non-finite entry".into(),
            ));
        }
        let s: F = init.iter().copied().sum();
        if (s - F::one()).abs() > tol {
            return Err(SmcError::InvalidParameter(format!(
                "initial distribution sums to {s}, not 1"
            )));
        }
        Ok(Self {
            k,
            trans: trans.into_iter().flatten().collect(),
            init,
            emit,
        })
    }

    /// Gaussian emissions `y | k ~ N(means[k], sd^2)`.
    pub fn gaussian(trans: Vec<Vec<F>>, init: Vec<F>, means: Vec<F>, sd: F) -> Result<Self> {
        if means.len() != trans.len() {
            return Err(SmcError::InvalidParameter(format!(
                "{} emission means for {} states",
                means.len(),
                trans.len()
            )));
        }
        if !(sd > F::zero()) || !sd.is_finite() {
            return Err(SmcError::InvalidParameter(format!(
                "emission sd = {sd} must be positive"
            )));
        }
        Self::new(
            trans,
            init,
            Arc::new(move |k, y| normal_pdf(y, means[k], sd)),
        )
    }

    pub fn n_states(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn trans(&self, i: usize, j: usize) -> F {
        self.trans[i * self.k + j]
    }

    pub fn init(&self) -> &[F] {
        &self.init
    }

    #[inline]
    pub fn emit(&self, k: usize, y: F) -> F {
        (self.emit)(k, y)
    }

    pub fn emission(&self) -> &Emission<F> {
        &self.emit
    }

    pub fn transition_rows(&self) -> Vec<Vec<F>> {
        self.trans.chunks(self.k).map(<[F]>::to_vec).collect()
    }

    /// Draws hidden states and observations from stream `(seed, Simulate)`.
    /// `sample_obs(k, rng)` draws `y` given the hidden state.
    pub fn simulate(
        &self,
        len: usize,
        seed: u64,
        sample_obs: impl Fn(usize, &mut dyn RngCore) -> F,
    ) -> Result<(Vec<usize>, ObservationRecord<F>)> {
        let mut rng = RngStream::new(seed).derive(Purpose::Simulate, 0, 0);
        let mut states = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        let mut x = draw(&self.init, &mut rng);
        for t in 0..len {
            if t > 0 {
                x = draw(&self.trans[x * self.k..(x + 1) * self.k], &mut rng);
            }
            states.push(x);
            ys.push(sample_obs(x, &mut rng));
        }
        Ok((states, ObservationRecord::new(ys)?))
    }

    /// `theta_t(i) = sum_j trans[i][j] g(j, y_t)`, `p_t(i, j) = trans[i][j] g(j, y_t) / theta_t(i)`.
    pub fn fully_adapted_proposal(&self, obs: &ObservationRecord<F>) -> ProposalSpec<F> {
        let hmm = Arc::new(self.clone());
        let ys: Arc<Vec<F>> = Arc::new(obs.values().to_vec());
        let theta = {
            let (hmm, ys) = (hmm.clone(), ys.clone());
            move |t: usize, i: usize| -> F {
                (0..hmm.k)
                    .map(|j| hmm.trans(i, j) * hmm.emit(j, ys[t]))
                    .sum()
            }
        };
        let theta = Arc::new(theta);
        let (h1, y1, th1) = (hmm.clone(), ys.clone(), theta.clone());
        let (h2, y2) = (hmm, ys);
        ProposalSpec {
            initial: InitialProposal::Prior,
            adjustment: Some(Arc::new(move |t, x: &F| theta(t, code(*x)))),
            kernel: ProposalKernel::Custom {
                density: Arc::new(move |t, x: &F, xn: &F| {
                    let (i, j) = (code(*x), code(*xn));
                    h1.trans(i, j) * h1.emit(j, y1[t]) / th1(t, i)
                }),
                sampler: Arc::new(move |t, x: &F, rng: &mut dyn RngCore| {
                    let i = code(*x);
                    let row: Vec<F> = (0..h2.k)
                        .map(|j| h2.trans(i, j) * h2.emit(j, y2[t]))
                        .collect();
                    F::from_usize(draw(&row, rng)).unwrap()
                }),
            },
            label: "fully_adapted",
        }
    }
}

/// State code of a real-valued discrete state.
#[inline]
pub(crate) fn code<F: Scalar>(x: F) -> usize {
    x.to_usize().unwrap_or(usize::MAX)
}

/// Inversion draw from unnormalized nonnegative weights (small `K`).
fn draw<F: Scalar>(w: &[F], rng: &mut dyn RngCore) -> usize {
    let total: F = w.iter().copied().sum();
    let u = F::lit(rng.gen::<f64>()) * total;
    let mut acc = F::zero();
    let mut last_positive = 0;
    for (i, &p) in w.iter().enumerate() {
        if p > F::zero() {
            last_positive = i;
        }
        acc = acc + p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Finite-state model. States are the codes `0.0, 1.0, ..., K-1` and
/// densities are with respect to counting measure, so `m(i, j)` is the
/// transition probability. The density bounds are the extreme entries of
/// the transition matrix.
pub fn make_discrete_hmm<F: Scalar>(
    hmm: &DiscreteHmm<F>,
    obs: &ObservationRecord<F>,
) -> Result<ModelSpec<F>> {
    let k = hmm.k;
    let trans: Arc<Vec<F>> = Arc::new(hmm.trans.clone());
    let init: Arc<Vec<F>> = Arc::new(hmm.init.clone());
    let ys: Arc<Vec<F>> = Arc::new(obs.values().to_vec());
    let emit = hmm.emit.clone();
    let lo = trans.iter().copied().fold(F::infinity(), F::min);
    let hi = trans.iter().copied().fold(F::neg_infinity(), F::max);

    let density = {
        let trans = trans.clone();
        move |x: &F, xn: &F| -> F {
            let (i, j) = (code(*x), code(*xn));
            if i < k && j < k {
                trans[i * k + j]
            } else {
                F::zero()
            }
        }
    };
    let (t_init, t_samp, t_col) = (init.clone(), trans.clone(), trans.clone());
    ModelSpec::new(ModelParts {
        state_dim: 1,
        n_obs: obs.len(),
        initial_sampler: Arc::new(move |rng| F::from_usize(draw(&init, rng)).unwrap()),
        initial_density: Arc::new(move |x| {
            let i = code(*x);
            if i < k {
                t_init[i]
            } else {
                F::zero()
            }
        }),
        transition_density: Arc::new(density),
        transition_sampler: Arc::new(move |x, rng| {
            let i = code(*x);
            F::from_usize(draw(&t_samp[i * k..(i + 1) * k], rng)).unwrap()
        }),
        likelihood: Arc::new(move |t, x| emit(code(*x), ys[t])),
        sigma_minus: Some(lo),
        sigma_plus: Some(hi),
        column_kernel: Some(Arc::new(move |from: &[F], to: &F, out: &mut [F]| {
            let j = code(*to);
            let col: Vec<F> = (0..k).map(|i| t_col[i * k + j]).collect();
            for (o, x) in out.iter_mut().zip(from) {
                // Saturating cast: anything off the lattice lands out of range.
                let i = x.to_f64().unwrap_or(-1.0) as usize;
                *o = col.get(i).copied().unwrap_or_else(F::zero);
            }
        })),
        origin_factor: None,
        support: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs1() -> ObservationRecord<f64> {
        ObservationRecord::new(vec![0.0]).unwrap()
    }

    fn hmm(trans: Vec<Vec<f64>>) -> DiscreteHmm<f64> {
        let k = trans.len();
        DiscreteHmm::gaussian(trans, vec![1.0 / k as f64; k], (0..k).map(|i| i as f64).collect(), 1.0)
            .unwrap()
    }

    #[test]
    fn single_state_bounds() {
        let m = make_discrete_hmm(&hmm(vec![vec![1.0]]), &obs1()).unwrap();
        assert_eq!(m.sigma_minus(), Some(1.0));
        assert_eq!(m.sigma_plus(), Some(1.0));
    }

    #[test]
    fn two_state_bounds_and_round_trip() {
        let t = vec![vec![0.7, 0.3], vec![0.4, 0.6]];
        let m = make_discrete_hmm(&hmm(t.clone()), &obs1()).unwrap();
        assert_eq!(m.sigma_minus(), Some(0.3));
        assert_eq!(m.sigma_plus(), Some(0.7));
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.transition_density(&(i as f64), &(j as f64)), t[i][j]);
            }
        }
    }

    #[test]
    fn uniform_transition_bounds() {
        let k = 5;
        let m = make_discrete_hmm(&hmm(vec![vec![0.2; k]; k]), &obs1()).unwrap();
        assert_eq!(m.sigma_minus(), m.sigma_plus());
        assert!((m.sigma_plus().unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_stochastic_inputs_are_rejected() {
        let e: Emission<f64> = Arc::new(|_, _| 1.0);
        assert!(DiscreteHmm::new(vec![vec![0.7, 0.4], vec![0.4, 0.6]], vec![0.5, 0.5], e.clone()).is_err());
        assert!(DiscreteHmm::new(vec![vec![1.0, 0.0], vec![0.4, 0.6]], vec![0.6, 0.6], e.clone()).is_err());
        assert!(DiscreteHmm::new(vec![vec![1.1, -0.1], vec![0.4, 0.6]], vec![0.5, 0.5], e.clone()).is_err());
        assert!(DiscreteHmm::new(vec![], vec![], e.clone()).is_err());
        assert!(DiscreteHmm::new(vec![vec![1.0, 0.0]], vec![1.0], e).is_err());
    }

    #[test]
    fn samplers_follow_the_matrix() {
        let t = vec![vec![0.7, 0.3], vec![0.4, 0.6]];
        let m = make_discrete_hmm(&hmm(t), &obs1()).unwrap();
        let mut rng = RngStream::new(8);
        let n = 100_000;
        let ones = (0..n).filter(|_| m.sample_transition(&0.0, &mut rng) == 1.0).count();
        assert!((ones as f64 / n as f64 - 0.3).abs() < 0.006);
        let init_ones = (0..n).filter(|_| m.sample_initial(&mut rng) == 1.0).count();
        assert!((init_ones as f64 / n as f64 - 0.5).abs() < 0.006);
    }

    #[test]
    fn fully_adapted_rows_are_normalized() {
        let h = hmm(vec![vec![0.7, 0.3], vec![0.4, 0.6]]);
        let o = ObservationRecord::new(vec![0.0, 1.3]).unwrap();
        let fa = h.fully_adapted_proposal(&o);
        let ProposalKernel::Custom { density, .. } = &fa.kernel else {
            panic!()
        };
        for i in [0.0, 1.0] {
            let s: f64 = [0.0, 1.0].iter().map(|j| density(1, &i, j)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }
}
