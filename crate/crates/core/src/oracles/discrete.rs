use super::checked_size;
use crate::error::{Result, SmcError};
use crate::model::{DiscreteHmm, ObservationRecord};
use crate::scalar::Scalar;

/// Largest path count accepted by [`brute_force_joint`].
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Exact filter and smoothing marginals of a finite-state chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackward {
    /// `filter[t][k] = P(X_t = k | y_0, ..., y_t)`.
    pub filter: Vec<Vec<f64>>,
    /// `smooth[t][k] = P(X_t = k | y_0, ..., y_T)`.
    pub smooth: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

impl ForwardBackward {
    /// `sum_k f(k) smooth[t][k]`.
    pub fn smooth_expect(&self, t: usize, f: impl Fn(usize) -> f64) -> f64 {
        self.smooth[t].iter().enumerate().map(|(k, p)| p * f(k)).sum()
    }
}

/// Normalized forward and backward recursions.
///
/// `trans` is the row-major `K x K` transition matrix, `lik[t][k]` the
/// likelihood of state `k` at time `t`.
pub fn forward_backward(init: &[f64], trans: &[f64], lik: &[Vec<f64>]) -> Result<ForwardBackward> {
    let k = init.len();
    if k == 0 || trans.len() != k * k || lik.is_empty() || lik.iter().any(|l| l.len() != k) {
        return Err(SmcError::InvalidParameter(
            "inconsistent forward-backward dimensions".into(),
        ));
    }
    let n = lik.len();
    let mut filter = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    let mut log_likelihood = 0.0;
    let mut alpha: Vec<f64> = init.iter().zip(&lik[0]).map(|(a, b)| a * b).collect();
    for t in 0..n {
        if t > 0 {
            let prev: &Vec<f64> = filter.last().unwrap();
            let mut next = vec![0.0; k];
            for (i, &a) in prev.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &p) in next.iter_mut().zip(&trans[i * k..(i + 1) * k]) {
                    *o += a * p;
                }
            }
            for (o, &l) in next.iter_mut().zip(&lik[t]) {
                *o *= l;
            }
            alpha = next;
        }
        let c: f64 = alpha.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(SmcError::ImpossibleObservation { t });
        }
        alpha.iter_mut().for_each(|a| *a /= c);
        log_likelihood += c.ln();
        scale.push(c);
        filter.push(alpha.clone());
    }

    let mut smooth = vec![Vec::new(); n];
    let mut beta = vec![1.0; k];
    smooth[n - 1] = filter[n - 1].clone();
    for t in (0..n - 1).rev() {
        let lb: Vec<f64> = lik[t + 1].iter().zip(&beta).map(|(l, b)| l * b).collect();
        beta = (0..k)
            .map(|i| {
                trans[i * k..(i + 1) * k]
                    .iter()
                    .zip(&lb)
                    .map(|(p, v)| p * v)
                    .sum::<f64>()
                    / scale[t + 1]
            })
            .collect();
        let mut s: Vec<f64> = filter[t].iter().zip(&beta).map(|(a, b)| a * b).collect();
        let z: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= z);
        smooth[t] = s;
    }
    Ok(ForwardBackward {
        filter,
        smooth,
        log_likelihood,
    })
}

fn dense_parts<F: Scalar>(hmm: &DiscreteHmm<F>, obs: &ObservationRecord<F>) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let k = hmm.n_states();
    let init = hmm.init().iter().map(|v| v.as_f64()).collect();
    let trans = (0..k * k).map(|a| hmm.trans(a / k, a % k).as_f64()).collect();
    let lik = obs
        .values()
        .iter()
        .map(|&y| (0..k).map(|j| hmm.emit(j, y).as_f64()).collect())
        .collect();
    (init, trans, lik)
}

/// Exact filter and smoothing marginals of a [`DiscreteHmm`].
pub fn discrete_forward_backward<F: Scalar>(hmm: &DiscreteHmm<F>, obs: &ObservationRecord<F>) -> Result<ForwardBackward> {
    let (init, trans, lik) = dense_parts(hmm, obs);
    forward_backward(&init, &trans, &lik)
}

/// `E[h(X_0, ..., X_T) | y_0, ..., y_T]` by summing over all `K^(T+1)`
/// state paths.
pub fn brute_force_joint<F: Scalar>(
    hmm: &DiscreteHmm<F>,
    obs: &ObservationRecord<F>,
    h: impl Fn(&[usize]) -> f64,
) -> Result<f64> {
    let k = hmm.n_states();
    let len = obs.len();
    let size = checked_size(k, len, BRUTE_FORCE_LIMIT)?;
    let (init, trans, mut lik) = dense_parts(hmm, obs);
    // per-time scaling keeps long products away from underflow
    for l in lik.iter_mut() {
        let m = l.iter().copied().fold(0.0, f64::max);
        if m > 0.0 {
            l.iter_mut().for_each(|v| *v /= m);
        }
    }
    let mut path = vec![0usize; len];
    let (mut num, mut den) = (0.0, 0.0);
    for mut code in 0..size {
        for t in (0..len).rev() {
            path[t] = code % k;
            code /= k;
        }
        let mut w = init[path[0]] * lik[0][path[0]];
        for t in 1..len {
            if w == 0.0 {
                break;
            }
            w *= trans[path[t - 1] * k + path[t]] * lik[t][path[t]];
        }
        if w > 0.0 {
            num += w * h(&path);
            den += w;
        }
    }
    if !(den > 0.0) {
        return Err(SmcError::ImpossibleObservation { t: 0 });
    }
    Ok(num / den)
}
