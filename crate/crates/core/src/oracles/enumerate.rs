use super::checked_size;
use crate::apf::ForwardHistory;
use crate::error::Result;
use crate::ffbsm::backward_weight_row;
use crate::error::SmcError;
use crate::model::ModelSpec;
use crate::scalar::Scalar;

/// Largest number of index paths accepted by the enumeration oracles.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Position of the index path `j_0, ..., j_T` in the enumeration order
/// (`j_0` most significant, base `n`).
pub fn path_code(indices: &[usize], n: usize) -> usize {
    indices.iter().fold(0, |c, &j| c * n + j)
}

/// Inverse of [`path_code`] for paths of length `horizon + 1`.
pub fn path_indices(mut code: usize, n: usize, horizon: usize) -> Vec<usize> {
    let mut out = vec![0; horizon + 1];
    for slot in out.iter_mut().rev() {
        *slot = code % n;
        code /= n;
    }
    out
}

/// Probability of every index path under the backward chain given the
/// forward pass, in [`path_code`] order:
/// `P(j_{0:T}) = w_T^{j_T} / W_T * prod_s Lambda_s(j_{s+1}, j_s)`.
pub fn enumerate_backward_law<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
) -> Result<Vec<f64>> {
    let n = history.n_particles();
    let big_t = history.horizon();
    checked_size(n, big_t + 1, ENUMERATION_LIMIT)?;

    // law of (j_s, ..., j_T), built from s = T down to 0
    let mut law: Vec<f64> = history
        .step(big_t)
        .normalized_weights()
        .iter()
        .map(|w| w.as_f64())
        .collect();
    let mut block = 1usize;
    for s in (0..big_t).rev() {
        let next = history.step(s + 1).particles();
        let rows = next
            .iter()
            .enumerate()
            .map(|(k, x)| {
                backward_weight_row(history, model, s, x)
                    .map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<f64>>())
                    .map_err(|e| match e {
                        SmcError::DegenerateBackwardKernel { t, .. } => {
                            SmcError::DegenerateBackwardKernel { t, next: k }
                        }
                        other => other,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let size = law.len();
        let mut ext = vec![0.0; size * n];
        for j in 0..n {
            for (rest, &p) in law.iter().enumerate() {
                let k = rest / block;
                ext[j * size + rest] = rows[k][j] * p;
            }
        }
        law = ext;
        block = size;
    }
    Ok(law)
}

/// The FFBSm joint estimator `sum_{j_{0:T}} P(j_{0:T}) h(x_0^{j_0}, ..., x_T^{j_T})`
/// evaluated exactly by enumeration.
pub fn enumerate_joint_ffbsm<F: Scalar, S: Clone>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    h: impl Fn(&[S]) -> F,
) -> Result<F> {
    let law = enumerate_backward_law(history, model)?;
    let n = history.n_particles();
    let big_t = history.horizon();
    let mut path = Vec::with_capacity(big_t + 1);
    let mut acc = 0.0f64;
    for (code, &p) in law.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        path.clear();
        path.extend(
            path_indices(code, n, big_t)
                .into_iter()
                .enumerate()
                .map(|(t, j)| history.step(t).particles()[j].clone()),
        );
        acc += p * h(&path).as_f64();
    }
    Ok(F::lit(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apf::{filter_estimate, run_filter};
    use crate::ffbsm::{marginal_estimate, marginal_smoothing_weights};
    use crate::model::{make_lgssm, LgssmParams, ProposalSpec};

    fn case(n: usize, len: usize, seed: u64) -> (ModelSpec<f64>, ForwardHistory<f64>) {
        let p = LgssmParams::new(0.8, 1.0, 0.6);
        let (_, o) = p.simulate(len, seed).unwrap();
        let m = make_lgssm(&p, &o).unwrap();
        let h = run_filter(&m, &ProposalSpec::bootstrap(), n, seed + 1).unwrap();
        (m, h)
    }

    #[test]
    fn codes_round_trip() {
        for code in 0..81 {
            assert_eq!(path_code(&path_indices(code, 3, 3), 3), code);
        }
        assert_eq!(path_indices(5, 2, 2), vec![1, 0, 1]);
    }

    #[test]
    fn normalization_and_terminal_functions() {
        for seed in 0..5 {
            let (m, h) = case(4, 4, seed);
            let one = enumerate_joint_ffbsm(&h, &m, |_| 1.0).unwrap();
            assert!((one - 1.0).abs() < 1e-12);
            let last = enumerate_joint_ffbsm(&h, &m, |p| p[3] * p[3]).unwrap();
            assert!((last - filter_estimate(h.step(3), |x| x * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle() {
        let (m, h) = case(1, 5, 2);
        let v = enumerate_joint_ffbsm(&h, &m, |p| p.iter().sum()).unwrap();
        let want: f64 = (0..5).map(|t| h.step(t).particles()[0]).sum();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn marginalizes_to_the_backward_recursion() {
        let (m, h) = case(3, 3, 4);
        let sw = marginal_smoothing_weights(&h, &m).unwrap();
        let v = enumerate_joint_ffbsm(&h, &m, |p| p[0]).unwrap();
        assert!((v - marginal_estimate(&h, &sw, 0, |x| *x)).abs() < 1e-12);
    }

    #[test]
    fn too_large() {
        let (m, h) = case(50, 6, 1);
        assert!(matches!(
            enumerate_backward_law(&h, &m),
            Err(SmcError::Infeasible { .. })
        ));
    }
}
