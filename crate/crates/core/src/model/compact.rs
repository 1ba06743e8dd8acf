use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{normal_pdf, standard_normal, ModelParts, ModelSpec, ObservationRecord};
use crate::error::{Result, SmcError};
use crate::rng::{Purpose, RngStream};
use crate::scalar::Scalar;

/// Intervals of the normalizer grid on `[0, 1]` (1025 nodes, so 1/2 is a node).
pub const NORMALIZER_INTERVALS: usize = 1024;

/// Random walk on `[0, 1]` with kernel `exp(-kappa (x' - x)^2) / Z(x)`,
/// observed in Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactRwParams<F> {
    pub kappa: F,
    pub sigma_obs: F,
}

impl<F: Scalar> CompactRwParams<F> {
    pub fn new(kappa: F, sigma_obs: F) -> Self {
        Self { kappa, sigma_obs }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > F::zero()) || !self.kappa.is_finite() {
            return Err(SmcError::InvalidParameter(format!(
                "kappa = {} must be positive",
                self.kappa
            )));
        }
        if !(self.sigma_obs > F::zero()) || !self.sigma_obs.is_finite() {
            return Err(SmcError::InvalidParameter(format!(
                "sigma_obs = {} must be positive",
                self.sigma_obs
            )));
        }
        Ok(())
    }

    /// Draws states and observations from stream `(seed, Simulate)`.
    pub fn simulate(&self, len: usize, seed: u64) -> Result<(Vec<F>, ObservationRecord<F>)> {
        self.validate()?;
        let mut rng = RngStream::new(seed).derive(Purpose::Simulate, 0, 0);
        let kappa = self.kappa.as_f64();
        let mut xs = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        let mut x: f64 = rng.gen();
        for t in 0..len {
            if t > 0 {
                x = sample_truncated_kernel(kappa, x, &mut rng);
            }
            xs.push(F::lit(x));
            ys.push(F::lit(x) + self.sigma_obs * F::lit(standard_normal(&mut rng)));
        }
        Ok((xs, ObservationRecord::new(ys)?))
    }
}

/// `Z(x) = int_0^1 exp(-kappa (u - x)^2) du`, tabulated at `x = k / 1024` by
/// composite Simpson on 1024 intervals and linearly interpolated.
#[derive(Debug, Clone)]
pub struct KernelNormalizer<F> {
    table: Vec<F>,
}

impl<F: Scalar> KernelNormalizer<F> {
    pub fn new(kappa: F) -> Self {
        let n = NORMALIZER_INTERVALS;
        let kappa = kappa.as_f64();
        let h = 1.0 / n as f64;
        let table = (0..=n)
            .map(|a| {
                let x = a as f64 * h;
                let mut acc = 0.0;
                for b in 0..=n {
                    let u = b as f64 * h;
                    let w = if b == 0 || b == n {
                        1.0
                    } else if b % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += w * (-kappa * (u - x) * (u - x)).exp();
                }
                F::lit(acc * h / 3.0)
            })
            .collect();
        Self { table }
    }

    #[inline]
    pub fn z(&self, x: F) -> F {
        let n = NORMALIZER_INTERVALS;
        let pos = x.max(F::zero()).min(F::one()) * F::from_usize(n).unwrap();
        let a = pos.floor().to_usize().unwrap_or(0).min(n - 1);
        let frac = pos - F::from_usize(a).unwrap();
        self.table[a] + frac * (self.table[a + 1] - self.table[a])
    }
}

/// Exact draw from the kernel truncated to `[0, 1]`.
fn sample_truncated_kernel(kappa: f64, x: f64, rng: &mut dyn RngCore) -> f64 {
    if kappa <= 2.0 {
        // Uniform proposal; acceptance probability at least exp(-kappa).
        loop {
            let u: f64 = rng.gen();
            let a: f64 = rng.gen();
            if a < (-kappa * (u - x) * (u - x)).exp() {
                return u;
            }
        }
    } else {
        let sd = (0.5 / kappa).sqrt();
        loop {
            let u = x + sd * standard_normal(rng);
            if (0.0..=1.0).contains(&u) {
                return u;
            }
        }
    }
}

/// Strongly mixing model on `[0, 1]`: `exp(-kappa) <= m <= exp(kappa)`.
///
/// The bounds follow from `exp(-kappa) <= exp(-kappa d^2) <= 1` and
/// `exp(-kappa) <= Z(x) <= 1`; they are valid but not tight.
pub fn make_compact_rw<F: Scalar>(
    params: &CompactRwParams<F>,
    obs: &ObservationRecord<F>,
) -> Result<ModelSpec<F>> {
    params.validate()?;
    let CompactRwParams { kappa, sigma_obs } = *params;
    let norm = Arc::new(KernelNormalizer::new(kappa));
    let ys: Arc<Vec<F>> = Arc::new(obs.values().to_vec());
    let kappa64 = kappa.as_f64();
    let in_unit = |x: F| x >= F::zero() && x <= F::one();
    let origin_norm = norm.clone();
    let density = {
        let norm = norm.clone();
        move |x: &F, xn: &F| -> F {
            if !in_unit(*x) || !in_unit(*xn) {
                return F::zero();
            }
            let d = *xn - *x;
            (-kappa * d * d).exp() / norm.z(*x)
        }
    };
    ModelSpec::new(ModelParts {
        state_dim: 1,
        n_obs: obs.len(),
        initial_sampler: Arc::new(|rng| F::lit(rng.gen::<f64>())),
        initial_density: Arc::new(move |x| if in_unit(*x) { F::one() } else { F::zero() }),
        transition_density: Arc::new(density),
        transition_sampler: Arc::new(move |x, rng| {
            F::lit(sample_truncated_kernel(kappa64, x.as_f64(), rng))
        }),
        likelihood: Arc::new(move |t, x| normal_pdf(ys[t], *x, sigma_obs)),
        sigma_minus: Some((-kappa).exp()),
        sigma_plus: Some(kappa.exp()),
        // m(x, x') = [1 / Z(x)] * exp(-kappa (x' - x)^2)
        column_kernel: Some(Arc::new(move |from: &[F], to: &F, out: &mut [F]| {
            let to = *to;
            if !in_unit(to) {
                out.iter_mut().for_each(|o| *o = F::zero());
                return;
            }
            for (o, &x) in out.iter_mut().zip(from) {
                let d = to - x;
                *o = -kappa * d * d;
            }
            F::exp_in_place(out);
        })),
        origin_factor: Some(Arc::new(move |x: &F| {
            if in_unit(*x) {
                F::one() / origin_norm.z(*x)
            } else {
                F::zero()
            }
        })),
        support: Some((F::zero(), F::one())),
    })
}
