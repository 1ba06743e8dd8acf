use std::sync::Arc;

use rand::RngCore;

use super::{
    normal_pdf, standard_normal, InitialProposal, ModelParts, ModelSpec, ObservationRecord,
    ProposalKernel, ProposalSpec,
};
use crate::error::{Result, SmcError};
use crate::rng::{Purpose, RngStream};
use crate::scalar::Scalar;

/// Law of `X_0` for the linear-Gaussian model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitialLaw {
    /// Stationary when `|phi| < 1`, otherwise `N(0, sigma_v^2)`.
    #[default]
    Auto,
    /// `N(0, sigma_v^2 / (1 - phi^2))`; an error when `|phi| >= 1`.
    Stationary,
}

/// `X_{t+1} = phi X_t + sigma_v V_t`, `Y_t = X_t + sigma_w W_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgssmParams<F> {
    pub phi: F,
    pub sigma_v: F,
    pub sigma_w: F,
    pub init: InitialLaw,
}

impl<F: Scalar> LgssmParams<F> {
    pub fn new(phi: F, sigma_v: F, sigma_w: F) -> Self {
        Self {
            phi,
            sigma_v,
            sigma_w,
            init: InitialLaw::Auto,
        }
    }

    pub fn with_init(mut self, init: InitialLaw) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_v > F::zero()) || !self.sigma_v.is_finite() {
            return Err(SmcError::InvalidParameter(format!(
                "sigma_v = {} must be positive",
                self.sigma_v
            )));
        }
        if !(self.sigma_w > F::zero()) || !self.sigma_w.is_finite() {
            return Err(SmcError::InvalidParameter(format!(
                "sigma_w = {} must be positive",
                self.sigma_w
            )));
        }
        if !self.phi.is_finite() {
            return Err(SmcError::InvalidParameter("phi must be finite".into()));
        }
        self.initial_variance().map(|_| ())
    }

    pub fn initial_variance(&self) -> Result<F> {
        let v = self.sigma_v * self.sigma_v;
        let stationary = self.phi.abs() < F::one();
        match (self.init, stationary) {
            (_, true) => Ok(v / (F::one() - self.phi * self.phi)),
            (InitialLaw::Auto, false) => Ok(v),
            (InitialLaw::Stationary, false) => Err(SmcError::InvalidParameter(format!(
                "stationary initial law requested with |phi| = {} >= 1",
                self.phi.abs()
            ))),
        }
    }

    /// Draws a state path and observations of length `len` from stream
    /// `(seed, Simulate)`.
    pub fn simulate(&self, len: usize, seed: u64) -> Result<(Vec<F>, ObservationRecord<F>)> {
        self.validate()?;
        let mut rng = RngStream::new(seed).derive(Purpose::Simulate, 0, 0);
        let sd0 = self.initial_variance()?.sqrt();
        let mut xs = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        let mut x = sd0 * F::lit(standard_normal(&mut rng));
        for t in 0..len {
            if t > 0 {
                x = self.phi * x + self.sigma_v * F::lit(standard_normal(&mut rng));
            }
            xs.push(x);
            ys.push(x + self.sigma_w * F::lit(standard_normal(&mut rng)));
        }
        Ok((xs, ObservationRecord::new(ys)?))
    }

    /// Fully adapted proposal: `theta_t(x) = N(y_t; phi x, sigma_v^2 + sigma_w^2)`
    /// and `p_t(x, .)` the Gaussian posterior of `X_t` given `X_{t-1} = x, y_t`.
    pub fn fully_adapted_proposal(&self, obs: &ObservationRecord<F>) -> Result<ProposalSpec<F>> {
        self.validate()?;
        let (phi, sv, sw) = (self.phi, self.sigma_v, self.sigma_w);
        let ys: Arc<Vec<F>> = Arc::new(obs.values().to_vec());
        let pred_sd = (sv * sv + sw * sw).sqrt();
        let post_var = F::one() / (F::one() / (sv * sv) + F::one() / (sw * sw));
        let post_sd = post_var.sqrt();
        let post_mean = {
            let ys = ys.clone();
            move |t: usize, x: F| post_var * (phi * x / (sv * sv) + ys[t] / (sw * sw))
        };
        let adj_ys = ys.clone();
        let pm = post_mean.clone();
        Ok(ProposalSpec {
            initial: InitialProposal::Prior,
            adjustment: Some(Arc::new(move |t, x: &F| {
                normal_pdf(adj_ys[t], phi * *x, pred_sd)
            })),
            kernel: ProposalKernel::Custom {
                density: Arc::new(move |t, x: &F, xn: &F| normal_pdf(*xn, pm(t, *x), post_sd)),
                sampler: Arc::new(move |t, x: &F, rng: &mut dyn RngCore| {
                    post_mean(t, *x) + post_sd * F::lit(standard_normal(rng))
                }),
            },
            label: "fully_adapted",
        })
    }
}

/// Linear-Gaussian AR(1) model observed in Gaussian noise.
///
/// Only an upper density bound exists: `sigma_plus = 1 / (sqrt(2 pi) sigma_v)`.
pub fn make_lgssm<F: Scalar>(
    params: &LgssmParams<F>,
    obs: &ObservationRecord<F>,
) -> Result<ModelSpec<F>> {
    params.validate()?;
    let LgssmParams {
        phi,
        sigma_v,
        sigma_w,
        ..
    } = *params;
    let sd0 = params.initial_variance()?.sqrt();
    let ys: Arc<Vec<F>> = Arc::new(obs.values().to_vec());
    let norm = F::one() / (sigma_v * F::lit((2.0 * std::f64::consts::PI).sqrt()));
    let inv_var = F::one() / (sigma_v * sigma_v);
    let half = F::lit(-0.5);

    ModelSpec::new(ModelParts {
        state_dim: 1,
        n_obs: obs.len(),
        initial_sampler: Arc::new(move |rng| sd0 * F::lit(standard_normal(rng))),
        initial_density: Arc::new(move |x| normal_pdf(*x, F::zero(), sd0)),
        transition_density: Arc::new(move |x, xn| normal_pdf(*xn, phi * *x, sigma_v)),
        transition_sampler: Arc::new(move |x, rng| {
            phi * *x + sigma_v * F::lit(standard_normal(rng))
        }),
        likelihood: Arc::new(move |t, x| normal_pdf(ys[t], *x, sigma_w)),
        sigma_minus: None,
        sigma_plus: Some(norm),
        column_kernel: Some(Arc::new(move |from: &[F], to: &F, out: &mut [F]| {
            let to = *to;
            let c = half * inv_var;
            for (o, &x) in out.iter_mut().zip(from) {
                let d = to - phi * x;
                *o = c * d * d;
            }
            F::exp_in_place(out);
        })),
        // The normalizing constant rides on the origin factor.
        origin_factor: Some(Arc::new(move |_: &F| norm)),
        support: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: &[f64]) -> ObservationRecord<f64> {
        ObservationRecord::new(v.to_vec()).unwrap()
    }

    #[test]
    fn white_noise_instance() {
        let m = make_lgssm(&LgssmParams::new(0.0, 1.0, 1.0), &obs(&[0.0])).unwrap();
        let std_pdf0 = 0.398_942_280_401_432_7;
        assert!((m.transition_density(&3.0, &0.0) - std_pdf0).abs() < 1e-15);
        assert!((m.likelihood(0, &0.0) - std_pdf0).abs() < 1e-15);
        assert!((m.likelihood(0, &0.0) - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn stationary_variance() {
        let p = LgssmParams::new(0.9f64, 1.0, 1.0);
        assert!((p.initial_variance().unwrap() - 1.0 / 0.19).abs() < 1e-12);
        assert!((p.initial_variance().unwrap() - 5.263).abs() < 1e-3);
    }

    #[test]
    fn sigma_plus_is_the_gaussian_mode() {
        let m = make_lgssm(&LgssmParams::new(0.5, 2.0, 1.0), &obs(&[0.0])).unwrap();
        assert!((m.sigma_plus().unwrap() - 0.199_471_140_200_716_3).abs() < 1e-15);
        assert_eq!(m.sigma_minus(), None);
    }

    #[test]
    fn parameter_errors() {
        let o = obs(&[0.0]);
        assert!(make_lgssm(&LgssmParams::new(0.5, 0.0, 1.0), &o).is_err());
        assert!(make_lgssm(&LgssmParams::new(0.5, 1.0, -1.0), &o).is_err());
        let unit_root = LgssmParams::new(1.0, 1.0, 1.0);
        assert!(make_lgssm(&unit_root, &o).is_ok());
        assert!((unit_root.initial_variance().unwrap() - 1.0).abs() < 1e-15);
        let err = make_lgssm(&unit_root.with_init(InitialLaw::Stationary), &o).unwrap_err();
        assert!(matches!(err, SmcError::InvalidParameter(_)));
    }

    #[test]
    fn column_kernel_matches_pointwise_density() {
        let m = make_lgssm(&LgssmParams::new(0.9, 1.3, 1.0), &obs(&[0.0])).unwrap();
        let from = [-2.0, -0.1, 0.0, 0.7, 3.5];
        let mut out = [0.0; 5];
        m.transition_column(&from, &0.4, &mut out);
        for (x, o) in from.iter().zip(out) {
            let p = m.transition_density(x, &0.4);
            assert!((o - p).abs() <= 1e-13 * p.max(1e-300), "{o} vs {p}");
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let p = LgssmParams::new(0.9, 1.0, 1.0);
        let (xa, ya) = p.simulate(50, 3).unwrap();
        let (xb, yb) = p.simulate(50, 3).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(ya, yb);
        assert_eq!(ya.len(), 50);
    }

    #[test]
    fn fully_adapted_pieces_integrate_consistently() {
        // theta(x) = int m(x, x') g(x') dx', p = m g / theta; check by quadrature.
        let o = obs(&[0.3, 1.1]);
        let p = LgssmParams::new(0.8, 1.0, 0.7);
        let m = make_lgssm(&p, &o).unwrap();
        let fa = p.fully_adapted_proposal(&o).unwrap();
        let ProposalKernel::Custom { density, .. } = &fa.kernel else {
            panic!("custom kernel expected")
        };
        let x = -0.4;
        let (a, b, n) = (-12.0, 12.0, 20_000);
        let h = (b - a) / n as f64;
        let integral: f64 = (0..=n)
            .map(|k| {
                let xn = a + k as f64 * h;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * m.transition_density(&x, &xn) * m.likelihood(1, &xn)
            })
            .sum::<f64>()
            * h;
        assert!((integral - fa.adjustment(1, &x)).abs() < 1e-10);
        for xn in [-1.0, 0.2, 1.5] {
            let ratio = m.transition_density(&x, &xn) * m.likelihood(1, &xn)
                / (fa.adjustment(1, &x) * density(1, &x, &xn));
            assert!((ratio - 1.0).abs() < 1e-12);
        }
    }
}
