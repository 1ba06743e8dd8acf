use crate::error::Result;
use crate::model::{LgssmParams, ObservationRecord};
use crate::scalar::Scalar;

/// Mean and variance of a Gaussian marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
}

/// Kalman filter and Rauch-Tung-Striebel smoother output.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSmoother {
    /// Law of `X_t` given `y_0, ..., y_{t-1}`.
    pub predicted: Vec<GaussianBelief>,
    /// Law of `X_t` given `y_0, ..., y_t`.
    pub filtered: Vec<GaussianBelief>,
    /// Law of `X_t` given `y_0, ..., y_T`.
    pub smoothed: Vec<GaussianBelief>,
    /// `log p(y_0, ..., y_T)`.
    pub log_likelihood: f64,
}

/// Exact filtering and smoothing marginals of the linear-Gaussian model.
pub fn rts_smooth<F: Scalar>(params: &LgssmParams<F>, obs: &ObservationRecord<F>) -> Result<KalmanSmoother> {
    params.validate()?;
    let phi = params.phi.as_f64();
    let q = params.sigma_v.as_f64().powi(2);
    let r = params.sigma_w.as_f64().powi(2);
    let v0 = params.initial_variance()?.as_f64();
    let ys: Vec<f64> = obs.values().iter().map(|y| y.as_f64()).collect();

    let mut predicted = Vec::with_capacity(ys.len());
    let mut filtered: Vec<GaussianBelief> = Vec::with_capacity(ys.len());
    let mut log_likelihood = 0.0;
    for &y in &ys {
        let pred = match filtered.last() {
            None => GaussianBelief { mean: 0.0, variance: v0 },
            Some(f) => GaussianBelief {
                mean: phi * f.mean,
                variance: phi * phi * f.variance + q,
            },
        };
        let s = pred.variance + r;
        let k = pred.variance / s;
        let innov = y - pred.mean;
        log_likelihood += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innov * innov / s);
        filtered.push(GaussianBelief {
            mean: pred.mean + k * innov,
            variance: (1.0 - k) * pred.variance,
        });
        predicted.push(pred);
    }

    let n = ys.len();
    let mut smoothed = filtered.clone();
    for t in (0..n - 1).rev() {
        let g = filtered[t].variance * phi / predicted[t + 1].variance;
        let next = smoothed[t + 1];
        smoothed[t] = GaussianBelief {
            mean: filtered[t].mean + g * (next.mean - predicted[t + 1].mean),
            variance: filtered[t].variance + g * g * (next.variance - predicted[t + 1].variance),
        };
    }
    Ok(KalmanSmoother {
        predicted,
        filtered,
        smoothed,
        log_likelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: &[f64]) -> ObservationRecord<f64> {
        ObservationRecord::new(v.to_vec()).unwrap()
    }

    #[test]
    fn white_noise_is_conjugate_per_time() {
        let p = LgssmParams::new(0.0, 1.5, 0.8);
        let ys = [0.3, -1.2, 2.0, 0.1];
        let k = rts_smooth(&p, &obs(&ys)).unwrap();
        let v0 = 2.25;
        for (t, &y) in ys.iter().enumerate() {
            assert!((k.smoothed[t].mean - y * v0 / (v0 + 0.64)).abs() < 1e-14);
        }
    }

    #[test]
    fn uninformative_observations_give_prior_means() {
        let p = LgssmParams::new(0.9, 1.0, 1e6);
        let k = rts_smooth(&p, &obs(&[3.0, -2.0, 5.0, 1.0])).unwrap();
        assert!(k.smoothed.iter().all(|b| b.mean.abs() < 1e-3));
    }

    #[test]
    fn two_step_joint_gaussian_conditioning() {
        // X0 ~ N(0, v0), X1 = 0.5 X0 + V; observe y = [1, -1] with unit noise.
        let p = LgssmParams::new(0.5, 1.0, 1.0);
        let k = rts_smooth(&p, &obs(&[1.0, -1.0])).unwrap();
        let v0 = 1.0 / 0.75;
        // Cov of (X0, X1) and of (Y0, Y1).
        let (c00, c01, c11) = (v0, 0.5 * v0, 0.25 * v0 + 1.0);
        let (s00, s01, s11) = (c00 + 1.0, c01, c11 + 1.0);
        let det = s00 * s11 - s01 * s01;
        let (i00, i01, i11) = (s11 / det, -s01 / det, s00 / det);
        let (y0, y1) = (1.0, -1.0);
        let a0 = i00 * y0 + i01 * y1;
        let a1 = i01 * y0 + i11 * y1;
        let m0 = c00 * a0 + c01 * a1;
        let m1 = c01 * a0 + c11 * a1;
        assert!((k.smoothed[0].mean - m0).abs() < 1e-10);
        assert!((k.smoothed[1].mean - m1).abs() < 1e-10);
        // log likelihood of the bivariate normal
        let quad = y0 * a0 + y1 * a1;
        let ll = -0.5 * (quad + det.ln() + 2.0 * (2.0 * std::f64::consts::PI).ln());
        assert!((k.log_likelihood - ll).abs() < 1e-10);
    }

    #[test]
    fn smoothing_reduces_variance() {
        let p = LgssmParams::new(0.9, 1.0, 1.0);
        let (_, o) = p.simulate(30, 1).unwrap();
        let k = rts_smooth(&p, &o).unwrap();
        for t in 0..30 {
            assert!(k.smoothed[t].variance <= k.filtered[t].variance);
            if t < 29 {
                assert!(k.smoothed[t].variance < k.filtered[t].variance);
            }
            assert!(k.smoothed[t].variance >= 0.0);
        }
    }
}
