//! Forward-filtering backward-smoothing.
//!
//! The marginal smoothing weights satisfy, backward in time,
//!
//! ```text
//! w_{s|T}^i = sum_j  w_s^i m(x_s^i, x_{s+1}^j) / D_j  *  w_{s+1|T}^j,
//! D_j       = sum_l  w_s^l m(x_s^l, x_{s+1}^j),
//! ```
//!
//! starting from the normalized filter weights at `T`. Each column
//! `m(x_s^., x_{s+1}^j)` is computed once and used both for `D_j` and for
//! the accumulation into every `i`, so a step costs `N^2` density
//! evaluations.

use rayon::prelude::*;

use crate::apf::ForwardHistory;
use crate::error::{Result, SmcError};
use crate::model::ModelSpec;
use crate::scalar::{lane_sum, Scalar};

/// Columns handled by one work unit of the backward recursion. Partial sums
/// are combined in block order, so results do not depend on thread count.
const COLUMN_BLOCK: usize = 256;

/// Normalized marginal smoothing weights `w_{s|T}^i` for `s = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingWeights<F> {
    per_time: Vec<Vec<F>>,
}

impl<F: Scalar> SmoothingWeights<F> {
    pub fn from_slices(per_time: Vec<Vec<F>>) -> Self {
        Self { per_time }
    }

    pub fn slice(&self, s: usize) -> &[F] {
        &self.per_time[s]
    }

    pub fn per_time(&self) -> &[Vec<F>] {
        &self.per_time
    }

    pub fn horizon(&self) -> usize {
        self.per_time.len() - 1
    }
}

/// Normalized row `Lambda_t(., j)` of the backward kernel against an
/// arbitrary `next_state`: entry `j` is proportional to
/// `w_t^j m(x_t^j, next_state)`.
pub fn backward_weight_row<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    t: usize,
    next_state: &S,
) -> Result<Vec<F>> {
    if t >= history.horizon() {
        return Err(SmcError::InvalidParameter(format!(
            "backward row needs t < T = {}, got {t}",
            history.horizon()
        )));
    }
    let mut row = vec![F::zero(); history.n_particles()];
    let total = unnormalized_row(history, model, t, next_state, &mut row);
    if !(total > F::zero()) || !total.is_finite() {
        return Err(SmcError::DegenerateBackwardKernel { t, next: usize::MAX });
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
    Ok(row)
}

/// Writes `w_t^j m(x_t^j, next)` into `row` and returns the row total.
pub(crate) fn unnormalized_row<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    t: usize,
    next: &S,
    row: &mut [F],
) -> F {
    let step = history.step(t);
    model.transition_column(step.particles(), next, row);
    for (r, &w) in row.iter_mut().zip(step.weights()) {
        *r = *r * w;
    }
    lane_sum(row)
}

/// One backward step: smoothing weights at `s` from those at `s + 1`.
fn backward_step<F: Scalar, S: Sync>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
    s: usize,
    next_smooth: &[F],
) -> Result<Vec<F>> {
    let n = history.n_particles();
    let cur = history.step(s);
    let next = history.step(s + 1);
    // m(x, y) = a(x) k(x, y): fold the origin factor into the weights once.
    let mut weights = vec![F::zero(); n];
    model.origin_factors(cur.particles(), &mut weights);
    for (a, &w) in weights.iter_mut().zip(cur.weights()) {
        *a = *a * w;
    }
    let weights = &weights[..];

    let partials: Vec<Result<Vec<F>>> = next
        .particles()
        .par_chunks(COLUMN_BLOCK)
        .enumerate()
        .map(|(b, block)| {
            let mut acc = vec![F::zero(); n];
            let mut col = vec![F::zero(); n];
            for (k, x_next) in block.iter().enumerate() {
                let j = b * COLUMN_BLOCK + k;
                let c = next_smooth[j];
                if c == F::zero() {
                    continue;
                }
                model.core_column(cur.particles(), x_next, &mut col);
                let d = F::dot(weights, &col);
                if !(d > F::zero()) || !d.is_finite() {
                    return Err(SmcError::DegenerateBackwardKernel { t: s, next: j });
                }
                F::axpy(&mut acc, &col, c / d);
            }
            Ok(acc)
        })
        .collect();

    let mut acc = vec![F::zero(); n];
    for part in partials {
        for (a, p) in acc.iter_mut().zip(part?) {
            *a = *a + p;
        }
    }
    for (a, &w) in acc.iter_mut().zip(weights) {
        *a = *a * w;
    }
    let total = lane_sum(&acc);
    if !(total > F::zero()) || !total.is_finite() {
        return Err(SmcError::DegenerateBackwardKernel { t: s, next: usize::MAX });
    }
    for a in acc.iter_mut() {
        *a = *a / total;
    }
    Ok(acc)
}

/// Marginal smoothing weights at every time, `Theta(N^2 T)` work.
pub fn marginal_smoothing_weights<F: Scalar, S: Sync>(
    history: &ForwardHistory<F, S>,
    model: &ModelSpec<F, S>,
) -> Result<SmoothingWeights<F>> {
    let big_t = history.horizon();
    let mut per_time = vec![Vec::new(); big_t + 1];
    per_time[big_t] = history.step(big_t).normalized_weights();
    for s in (0..big_t).rev() {
        per_time[s] = backward_step(history, model, s, &per_time[s + 1])?;
    }
    Ok(SmoothingWeights { per_time })
}

/// `sum_i w_{s|T}^i h(x_s^i)`.
pub fn marginal_estimate<F: Scalar, S>(
    history: &ForwardHistory<F, S>,
    sw: &SmoothingWeights<F>,
    s: usize,
    h: impl Fn(&S) -> F,
) -> F {
    sw.slice(s)
        .iter()
        .zip(history.step(s).particles())
        .fold(F::zero(), |a, (&w, x)| a + w * h(x))
}

/// Ancestral lines of the terminal particles, read off the stored
/// ancestor indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GenealogyPaths<F> {
    /// `lineage[t][i]`: index at time `t` of the ancestor of terminal particle `i`.
    lineage: Vec<Vec<usize>>,
    weights: Vec<F>,
}

impl<F: Scalar> GenealogyPaths<F> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Terminal (unnormalized) filter weights.
    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn lineage_at(&self, t: usize) -> &[usize] {
        &self.lineage[t]
    }

    /// Particle indices `a_0, ..., a_T` of path `i`.
    pub fn indices(&self, i: usize) -> Vec<usize> {
        self.lineage.iter().map(|l| l[i]).collect()
    }

    /// States `x_0, ..., x_T` of path `i`.
    pub fn path<S: Clone>(&self, history: &ForwardHistory<F, S>, i: usize) -> Vec<S> {
        self.lineage
            .iter()
            .enumerate()
            .map(|(t, l)| history.step(t).particles()[l[i]].clone())
            .collect()
    }

    /// Number of distinct particles at time `t` among all paths.
    pub fn distinct_at(&self, t: usize) -> usize {
        let mut v = self.lineage[t].clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    }

    /// Weighted average of `h(x_s)` along the paths.
    pub fn estimate<S>(&self, history: &ForwardHistory<F, S>, s: usize, h: impl Fn(&S) -> F) -> F {
        let xs = history.step(s).particles();
        let (num, den) = self
            .lineage[s]
            .iter()
            .zip(&self.weights)
            .fold((F::zero(), F::zero()), |(a, b), (&k, &w)| (a + w * h(&xs[k]), b + w));
        num / den
    }
}

/// The degenerate smoother that keeps each terminal particle's ancestry.
pub fn genealogy_trace_smoother<F: Scalar, S>(history: &ForwardHistory<F, S>) -> GenealogyPaths<F> {
    let big_t = history.horizon();
    let mut lineage = vec![Vec::new(); big_t + 1];
    lineage[big_t] = (0..history.n_particles()).collect();
    for t in (1..=big_t).rev() {
        let anc = history.ancestors(t);
        lineage[t - 1] = lineage[t].iter().map(|&i| anc[i]).collect();
    }
    GenealogyPaths {
        lineage,
        weights: history.step(big_t).weights().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apf::{filter_estimate, run_filter, WeightedSample};
    use crate::model::{
        make_compact_rw, make_discrete_hmm, make_lgssm, CompactRwParams, DiscreteHmm,
        LgssmParams, ProposalSpec,
    };
    use crate::oracles::{discrete_forward_backward, enumerate_backward_law, path_indices};
    use std::sync::Arc;

    fn constant_m(m: &ModelSpec<f64>, c: f64) -> ModelSpec<f64> {
        let mut parts = m.to_parts();
        parts.transition_density = Arc::new(move |_, _| c);
        parts.column_kernel = None;
        parts.origin_factor = None;
        parts.sigma_minus = Some(c);
        parts.sigma_plus = Some(c);
        ModelSpec::new(parts).unwrap()
    }

    fn lgssm_history(len: usize, n: usize, seed: u64) -> (ModelSpec<f64>, ForwardHistory<f64>) {
        let p = LgssmParams::new(0.9, 1.0, 1.0);
        let (_, o) = p.simulate(len, 3).unwrap();
        let m = make_lgssm(&p, &o).unwrap();
        let h = run_filter(&m, &ProposalSpec::bootstrap(), n, seed).unwrap();
        (m, h)
    }

    fn hand_history() -> ForwardHistory<f64> {
        let a = WeightedSample::new(vec![0.0, 1.0], vec![1.0, 3.0], 0.0).unwrap();
        let b = WeightedSample::new(vec![0.0, 1.0], vec![1.0, 1.0], 0.0).unwrap();
        ForwardHistory::from_parts(vec![a, b], vec![vec![0, 1]]).unwrap()
    }

    #[test]
    fn hand_evaluated_row() {
        let (m, _) = lgssm_history(2, 2, 1);
        let mut parts = m.to_parts();
        parts.transition_density = Arc::new(|x: &f64, _| if *x == 0.0 { 2.0 } else { 1.0 });
        parts.column_kernel = None;
        parts.origin_factor = None;
        parts.sigma_plus = Some(2.0);
        let m = ModelSpec::new(parts).unwrap();
        let row = backward_weight_row(&hand_history(), &m, 0, &1.0).unwrap();
        assert!((row[0] - 0.4).abs() < 1e-15 && (row[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn constant_kernel_rows_are_filter_weights() {
        let (m, h) = lgssm_history(4, 20, 1);
        let m = constant_m(&m, 0.3);
        let filt = h.step(1).normalized_weights();
        for next in [-3.0, 0.0, 7.0] {
            let row = backward_weight_row(&h, &m, 1, &next).unwrap();
            for (a, b) in row.iter().zip(&filt) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let u = ForwardHistory::from_parts(
            vec![
                WeightedSample::new(vec![0.0; 4], vec![2.0; 4], 0.0).unwrap(),
                WeightedSample::new(vec![0.0; 4], vec![2.0; 4], 0.0).unwrap(),
            ],
            vec![vec![0, 1, 2, 3]],
        )
        .unwrap();
        assert!(backward_weight_row(&u, &m, 0, &0.0).unwrap().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn row_errors() {
        let (m, h) = lgssm_history(3, 10, 1);
        assert!(backward_weight_row(&h, &m, 2, &0.0).is_err());
        let zero = constant_m(&m, 1.0);
        let mut parts = zero.to_parts();
        parts.transition_density = Arc::new(|_, _| 0.0);
        let zero = ModelSpec::new(parts).unwrap();
        assert!(matches!(
            backward_weight_row(&h, &zero, 0, &0.0),
            Err(SmcError::DegenerateBackwardKernel { t: 0, .. })
        ));
        assert!(matches!(
            marginal_smoothing_weights(&h, &zero),
            Err(SmcError::DegenerateBackwardKernel { .. })
        ));
    }

    #[test]
    fn single_particle_slices_are_one() {
        let (m, h) = lgssm_history(6, 1, 2);
        let sw = marginal_smoothing_weights(&h, &m).unwrap();
        assert!(sw.per_time().iter().all(|s| s == &vec![1.0]));
    }

    #[test]
    fn constant_kernel_collapses_to_filtering() {
        let (m, h) = lgssm_history(8, 300, 4);
        let sw = marginal_smoothing_weights(&h, &constant_m(&m, 0.7)).unwrap();
        for s in 0..8 {
            for (a, b) in sw.slice(s).iter().zip(h.step(s).normalized_weights()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn slices_are_probability_vectors() {
        let (m, h) = lgssm_history(12, 700, 5);
        let sw = marginal_smoothing_weights(&h, &m).unwrap();
        assert_eq!(sw.slice(11), h.step(11).normalized_weights().as_slice());
        for s in sw.per_time() {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!((marginal_estimate(&h, &sw, 3, |_| 1.0) - 1.0).abs() < 1e-10);
        let (a, b) = (marginal_estimate(&h, &sw, 11, |x| *x), filter_estimate(h.step(11), |x| *x));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn block_boundaries_do_not_matter() {
        // more than one column block, compared with a direct double loop
        let (m, h) = lgssm_history(3, 600, 6);
        let sw = marginal_smoothing_weights(&h, &m).unwrap();
        let n = 600;
        let (cur, next) = (h.step(1), h.step(2));
        let c = next.normalized_weights();
        let mut want = vec![0.0; n];
        for j in 0..n {
            let d: f64 = (0..n)
                .map(|l| cur.weights()[l] * m.transition_density(&cur.particles()[l], &next.particles()[j]))
                .sum();
            for i in 0..n {
                want[i] += cur.weights()[i] * m.transition_density(&cur.particles()[i], &next.particles()[j]) / d * c[j];
            }
        }
        for (a, b) in sw.slice(1).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_enumerated_index_law() {
        let hmm = DiscreteHmm::gaussian(
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            0.8,
        )
        .unwrap();
        let (_, o) = hmm
            .simulate(6, 12, |k, r| k as f64 + 0.8 * crate::model::standard_normal(r))
            .unwrap();
        let m = make_discrete_hmm(&hmm, &o).unwrap();
        // on two states many particles share a value; use the continuous model too
        let p = LgssmParams::new(0.7, 1.0, 0.5);
        let (_, o2) = p.simulate(6, 2).unwrap();
        let m2 = make_lgssm(&p, &o2).unwrap();
        for (model, seed) in [(&m, 1u64), (&m2, 2)] {
            let h = run_filter(model, &ProposalSpec::bootstrap(), 8, seed).unwrap();
            let sw = marginal_smoothing_weights(&h, model).unwrap();
            let law = enumerate_backward_law(&h, model).unwrap();
            let mut marg = vec![vec![0.0; 8]; 6];
            for (code, &p) in law.iter().enumerate() {
                for (s, j) in path_indices(code, 8, 5).into_iter().enumerate() {
                    marg[s][j] += p;
                }
            }
            for s in 0..6 {
                for i in 0..8 {
                    assert!((marg[s][i] - sw.slice(s)[i]).abs() < 1e-10, "s={s} i={i}");
                }
            }
        }
    }

    #[test]
    fn discrete_smoothing_tracks_exact_marginals() {
        let hmm = DiscreteHmm::gaussian(
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![0.5, 0.5],
            vec![0.0, 1.5],
            1.0,
        )
        .unwrap();
        let (_, o) = hmm
            .simulate(11, 3, |k, r| k as f64 * 1.5 + crate::model::standard_normal(r))
            .unwrap();
        let m = make_discrete_hmm(&hmm, &o).unwrap();
        let exact = discrete_forward_backward(&hmm, &o).unwrap();
        let h = run_filter(&m, &ProposalSpec::bootstrap(), 5000, 9).unwrap();
        let sw = marginal_smoothing_weights(&h, &m).unwrap();
        for s in 0..=10 {
            let p1 = marginal_estimate(&h, &sw, s, |x| *x);
            assert!((p1 - exact.smooth[s][1]).abs() < 0.03, "s={s}");
        }
    }

    #[test]
    fn genealogy_basics() {
        let (m, h) = lgssm_history(1, 40, 1);
        let g = genealogy_trace_smoother(&h);
        assert_eq!(g.len(), 40);
        assert_eq!(g.path(&h, 3), vec![h.step(0).particles()[3]]);
        assert_eq!(g.weights(), h.step(0).weights());
        let _ = m;

        let (_, h) = lgssm_history(30, 200, 2);
        let g = genealogy_trace_smoother(&h);
        let total: f64 = g.weights().iter().sum();
        assert!((total - h.step(29).weight_sum()).abs() < 1e-12 * total);
        let idx = g.indices(17);
        assert_eq!(idx.len(), 30);
        assert_eq!(idx[29], 17);
        for t in 1..30 {
            assert_eq!(h.ancestors(t)[idx[t]], idx[t - 1]);
        }
        assert!(g.distinct_at(0) < g.distinct_at(29));
        assert_eq!(
            g.estimate(&h, 29, |x| *x),
            filter_estimate(h.step(29), |x| *x)
        );
    }

    #[test]
    fn genealogy_degenerates_on_compact_model() {
        let p = CompactRwParams::new(1.0, 0.05);
        let (_, o) = p.simulate(101, 1).unwrap();
        let m = make_compact_rw(&p, &o).unwrap();
        let h = run_filter(&m, &ProposalSpec::bootstrap(), 1000, 3).unwrap();
        let g = genealogy_trace_smoother(&h);
        assert!(g.distinct_at(0) <= 10, "{}", g.distinct_at(0));
    }

    #[test]
    fn f32_smoothing() {
        let p = LgssmParams::new(0.9f32, 1.0, 1.0);
        let (_, o) = p.simulate(10, 1).unwrap();
        let m = make_lgssm(&p, &o).unwrap();
        let h = run_filter(&m, &ProposalSpec::bootstrap(), 500, 2).unwrap();
        let sw = marginal_smoothing_weights(&h, &m).unwrap();
        for s in sw.per_time() {
            assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }
}
