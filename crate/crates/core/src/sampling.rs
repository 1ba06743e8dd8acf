//! Weighted index sampling with operation counting.
//!
//! [`multinomial_sample`] draws `n` i.i.d. indices from `N` weights with
//! `O(n + n log(1 + N/n))` comparisons once the prefix sums exist: the uniforms
//! are generated already sorted, each one is located by a doubling search
//! that resumes where the previous one stopped, and the results are handed
//! out through a uniform random permutation so that every output slot has
//! the categorical law.
//!
//! All indices are 0-based.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Result, SmcError};
use crate::scalar::Scalar;

/// Operation tallies. `elementary_ops()` is the cost measure used for
/// complexity checks: density evaluations, comparisons, uniform draws and
/// prefix-sum accumulations each count as one operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialCounters {
    /// Accept-reject proposals drawn per backward step `s` (`Z_s`), indexed by `s`.
    pub ar_trials: Vec<u64>,
    pub comparisons: u64,
    pub density_evals: u64,
    pub uniform_draws: u64,
    pub accumulations: u64,
    /// Paths that exceeded the trial cap and were drawn from their exact row.
    pub fallback_count: u64,
}

impl TrialCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_steps(steps: usize) -> Self {
        Self {
            ar_trials: vec![0; steps],
            ..Self::default()
        }
    }

    pub fn elementary_ops(&self) -> u64 {
        self.comparisons + self.density_evals + self.uniform_draws + self.accumulations
    }

    pub fn total_trials(&self) -> u64 {
        self.ar_trials.iter().sum()
    }

    /// Adds `other` into `self`; trial vectors are summed elementwise.
    pub fn merge(&mut self, other: &TrialCounters) {
        if self.ar_trials.len() < other.ar_trials.len() {
            self.ar_trials.resize(other.ar_trials.len(), 0);
        }
        for (a, b) in self.ar_trials.iter_mut().zip(&other.ar_trials) {
            *a += b;
        }
        self.comparisons += other.comparisons;
        self.density_evals += other.density_evals;
        self.uniform_draws += other.uniform_draws;
        self.accumulations += other.accumulations;
        self.fallback_count += other.fallback_count;
    }
}

/// Running totals `q_k = p_0 + ... + p_k` of nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSums<F> {
    q: Vec<F>,
}

impl<F: Scalar> PrefixSums<F> {
    /// Fails on an empty slice, a negative or non-finite weight, or when no
    /// weight is positive.
    pub fn new(weights: &[F]) -> Result<Self> {
        let mut q = Vec::with_capacity(weights.len());
        Self::fill(weights, &mut q)?;
        Ok(Self { q })
    }

    /// Rebuilds in place, reusing the allocation.
    pub fn rebuild(&mut self, weights: &[F]) -> Result<()> {
        Self::fill(weights, &mut self.q)
    }

    fn fill(weights: &[F], q: &mut Vec<F>) -> Result<()> {
        q.clear();
        if weights.is_empty() {
            return Err(SmcError::InvalidWeights("empty weight vector".into()));
        }
        let mut acc = F::zero();
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= F::zero()) || !w.is_finite() {
                return Err(SmcError::InvalidWeights(format!("weight {i} is {w}")));
            }
            acc = acc + w;
            q.push(acc);
        }
        if !(acc > F::zero()) || !acc.is_finite() {
            return Err(SmcError::InvalidWeights(format!("weight total is {acc}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `q_{N-1}`, the weight total.
    pub fn total(&self) -> F {
        *self.q.last().expect("prefix sums are never empty")
    }

    pub fn as_slice(&self) -> &[F] {
        &self.q
    }

    /// Maps a uniform `v` in `[0, 1)` to `[0, total)`, stepping below the
    /// total if rounding lands on it.
    #[inline]
    pub(crate) fn scale_uniform(&self, v: f64) -> F {
        let total = self.total();
        let u = F::lit(v) * total;
        if u < total {
            u
        } else {
            total * (F::one() - F::epsilon())
        }
    }
}

/// Smallest index `r` with `u < q_r`, by bisection.
///
/// Uses at most `ceil(log2 N)` comparisons. Zero-weight entries are never
/// returned because of the strict inequality.
pub fn categorical_search<F: Scalar>(
    prefix: &PrefixSums<F>,
    u: F,
    counters: &mut TrialCounters,
) -> Result<usize> {
    let q = prefix.as_slice();
    if !(u >= F::zero() && u < prefix.total()) {
        return Err(SmcError::ContractViolation(format!(
            "search key {u} outside [0, {})",
            prefix.total()
        )));
    }
    let (mut lo, mut hi) = (0usize, q.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        counters.comparisons += 1;
        if u >= q[mid] {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Position of the doubling search, in 1-based prefix coordinates with the
/// virtual `q_0 = 0`: the search keeps `q_l <= u` and looks for `u < q_r`.
#[derive(Debug, Clone, Copy)]
struct GallopCursor {
    l: usize,
    r: usize,
}

impl GallopCursor {
    fn start() -> Self {
        Self { l: 0, r: 1 }
    }

    /// Locates `u` (which must be `>= q_l` and `< q_N`), leaving the cursor
    /// at `r - l = 1`. Returns the 0-based index.
    #[inline]
    fn locate<F: Scalar>(&mut self, q: &[F], u: F, counters: &mut TrialCounters) -> usize {
        let n = q.len();
        let mut step = 2usize;
        loop {
            counters.comparisons += 1;
            if u >= q[self.r - 1] {
                self.l = self.r;
                self.r = (self.r + step).min(n);
                step = step.saturating_mul(2);
            } else {
                break;
            }
        }
        while self.r - self.l > 1 {
            let m = (self.l + self.r) / 2;
            counters.comparisons += 1;
            if u >= q[m - 1] {
                self.l = m;
            } else {
                self.r = m;
            }
        }
        self.r - 1
    }
}

/// One doubling-then-bisection search from the start of the array. Same
/// contract as [`categorical_search`].
pub fn gallop_search<F: Scalar>(
    prefix: &PrefixSums<F>,
    u: F,
    counters: &mut TrialCounters,
) -> Result<usize> {
    if !(u >= F::zero() && u < prefix.total()) {
        return Err(SmcError::ContractViolation(format!(
            "search key {u} outside [0, {})",
            prefix.total()
        )));
    }
    Ok(GallopCursor::start().locate(prefix.as_slice(), u, counters))
}

/// Sorted sample distributed as the order statistics of `n` i.i.d.
/// uniforms on `(0, 1)`, from normalized cumulative exponential spacings.
///
/// Uses `n + 1` exponential draws and no sort. The output is strictly
/// increasing; the (probability-zero) tie case is redrawn.
pub fn uniform_order_statistics<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1, "order statistics of an empty sample");
    let mut out = Vec::with_capacity(n);
    loop {
        out.clear();
        let mut acc = 0.0f64;
        for _ in 0..n {
            let e: f64 = rng.sample(Exp1);
            acc += e;
            out.push(acc);
        }
        let last: f64 = rng.sample(Exp1);
        let total = acc + last;
        let mut prev = 0.0;
        let mut ok = true;
        for v in out.iter_mut() {
            *v /= total;
            if !(*v > prev) {
                ok = false;
            }
            prev = *v;
        }
        if ok && prev < 1.0 {
            return out;
        }
    }
}

/// `n` i.i.d. draws from the categorical law given by `prefix`.
pub fn multinomial_sample_prefix<F: Scalar, R: Rng + ?Sized>(
    prefix: &PrefixSums<F>,
    n: usize,
    rng: &mut R,
    counters: &mut TrialCounters,
) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let sorted = uniform_order_statistics(n, rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    counters.uniform_draws += (n + 1 + n.saturating_sub(1)) as u64;

    let q = prefix.as_slice();
    let mut out = vec![0usize; n];
    let mut cursor = GallopCursor::start();
    for (k, &v) in sorted.iter().enumerate() {
        let u = prefix.scale_uniform(v);
        out[perm[k]] = cursor.locate(q, u, counters);
    }
    out
}

/// `n` i.i.d. draws from the categorical law proportional to `weights`.
pub fn multinomial_sample<F: Scalar, R: Rng + ?Sized>(
    weights: &[F],
    n: usize,
    rng: &mut R,
    counters: &mut TrialCounters,
) -> Result<Vec<usize>> {
    let prefix = PrefixSums::new(weights)?;
    counters.accumulations += weights.len() as u64;
    Ok(multinomial_sample_prefix(&prefix, n, rng, counters))
}

/// One categorical draw by inversion.
#[inline]
pub fn sample_categorical<F: Scalar, R: Rng + ?Sized>(
    prefix: &PrefixSums<F>,
    rng: &mut R,
    counters: &mut TrialCounters,
) -> usize {
    let v: f64 = rng.gen();
    counters.uniform_draws += 1;
    let u = prefix.scale_uniform(v);
    categorical_search(prefix, u, counters).expect("scaled uniform lies in [0, total)")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats::chi_square_test;
    use proptest::prelude::*;
    use rand::Rng;

    fn linear_scan(q: &[f64], u: f64) -> usize {
        q.iter().position(|&x| u < x).unwrap()
    }

    #[test]
    fn point_mass_returns_its_index() {
        let mut rng = RngStream::new(1);
        let mut c = TrialCounters::new();
        let out = multinomial_sample(&[0.0, 0.0, 1.0, 0.0], 1000, &mut rng, &mut c).unwrap();
        assert!(out.iter().all(|&i| i == 2));
    }

    #[test]
    fn all_zero_weights_are_rejected() {
        let mut rng = RngStream::new(1);
        let mut c = TrialCounters::new();
        let err = multinomial_sample(&[0.0, 0.0], 3, &mut rng, &mut c).unwrap_err();
        assert!(matches!(err, SmcError::InvalidWeights(_)));
        assert!(PrefixSums::new(&[1.0, -0.5]).is_err());
        assert!(PrefixSums::<f64>::new(&[]).is_err());
        assert!(PrefixSums::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn boundary_convention_is_strict() {
        let p = PrefixSums::new(&[0.2, 0.3, 0.5]).unwrap();
        let mut c = TrialCounters::new();
        assert_eq!(categorical_search(&p, 0.5, &mut c).unwrap(), 2);
        assert_eq!(categorical_search(&p, 0.2, &mut c).unwrap(), 1);
        assert_eq!(categorical_search(&p, 0.0, &mut c).unwrap(), 0);
        let z = PrefixSums::new(&[0.0, 0.0, 3.0, 1.0]).unwrap();
        assert_eq!(categorical_search(&z, 0.0, &mut c).unwrap(), 2);
        assert_eq!(gallop_search(&z, 0.0, &mut c).unwrap(), 2);
        let one = PrefixSums::new(&[7.0]).unwrap();
        assert_eq!(categorical_search(&one, 6.9, &mut c).unwrap(), 0);
    }

    #[test]
    fn out_of_range_key_is_a_contract_violation() {
        let p = PrefixSums::new(&[0.2, 0.3, 0.5]).unwrap();
        let mut c = TrialCounters::new();
        assert!(matches!(
            categorical_search(&p, 1.0, &mut c),
            Err(SmcError::ContractViolation(_))
        ));
        assert!(categorical_search(&p, -1e-9, &mut c).is_err());
        assert!(gallop_search(&p, 1.0, &mut c).is_err());
    }

    #[test]
    fn bisection_comparison_bound() {
        for n in [1usize, 2, 3, 7, 8, 1000, 1 << 16] {
            let w = vec![1.0; n];
            let p = PrefixSums::new(&w).unwrap();
            let bound = (n as f64).log2().ceil() as u64 + 1;
            for u in [0.0, 0.5, n as f64 - 0.5, (n as f64) * 0.37] {
                let mut c = TrialCounters::new();
                categorical_search(&p, u, &mut c).unwrap();
                assert!(c.comparisons <= bound, "n={n} u={u} cmp={}", c.comparisons);
            }
        }
    }

    #[test]
    fn single_draw_on_a_million_weights_is_logarithmic() {
        let n = 1_000_000;
        let w = vec![1.0; n];
        for seed in 0..20 {
            let mut rng = RngStream::new(seed);
            let mut c = TrialCounters::new();
            multinomial_sample(&w, 1, &mut rng, &mut c).unwrap();
            let bound = 4.0 * (1.0 + (1.0 + n as f64).log2());
            assert!((c.comparisons as f64) <= bound, "{} > {bound}", c.comparisons);
        }
    }

    #[test]
    fn uniform_weights_pass_chi_square() {
        let mut rng = RngStream::new(77);
        let mut c = TrialCounters::new();
        let out = multinomial_sample(&[1.0; 16], 100_000, &mut rng, &mut c).unwrap();
        let mut counts = vec![0u64; 16];
        for i in out {
            counts[i] += 1;
        }
        let t = chi_square_test(&counts, &[1.0 / 16.0; 16]);
        assert!(t.p_value > 0.01, "{t:?}");
    }

    #[test]
    fn each_output_slot_has_the_categorical_law() {
        // Slot 0 and slot n-1 are the extremes of the sorted uniforms before
        // the permutation; without it they would be heavily biased.
        let w = [0.1, 0.4, 0.2, 0.3];
        let n = 5;
        let reps = 40_000;
        let mut counts = vec![vec![0u64; 4]; n];
        let mut rng = RngStream::new(3);
        let mut c = TrialCounters::new();
        for _ in 0..reps {
            let out = multinomial_sample(&w, n, &mut rng, &mut c).unwrap();
            for (slot, &i) in out.iter().enumerate() {
                counts[slot][i] += 1;
            }
        }
        for (slot, cnt) in counts.iter().enumerate() {
            let t = chi_square_test(cnt, &w);
            assert!(t.p_value > 0.001, "slot {slot}: {t:?}");
        }
    }

    #[test]
    fn order_statistics_are_strictly_increasing_in_unit_interval() {
        let mut rng = RngStream::new(11);
        for n in [1usize, 2, 10, 10_000] {
            let u = uniform_order_statistics(n, &mut rng);
            assert_eq!(u.len(), n);
            assert!(u[0] > 0.0 && *u.last().unwrap() < 1.0);
            assert!(u.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn fifth_of_nine_order_statistics_has_beta_mean() {
        let mut rng = RngStream::new(12);
        let reps = 100_000;
        let mean = (0..reps)
            .map(|_| uniform_order_statistics(9, &mut rng)[4])
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
    }

    #[test]
    fn single_order_statistic_is_uniform() {
        let mut rng = RngStream::new(13);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| uniform_order_statistics(1, &mut rng)[0])
            .collect();
        let ks = crate::stats::ks_uniform(&xs);
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn gallop_agrees_with_linear_scan() {
        let mut rng = RngStream::new(99);
        for _ in 0..10_000 {
            let n = rng.gen_range(1..60);
            let w: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            let Ok(p) = PrefixSums::new(&w) else { continue };
            let u = p.scale_uniform(rng.gen());
            let mut c = TrialCounters::new();
            let expect = linear_scan(p.as_slice(), u);
            assert_eq!(gallop_search(&p, u, &mut c).unwrap(), expect);
            assert_eq!(categorical_search(&p, u, &mut c).unwrap(), expect);
        }
    }

    #[test]
    fn f32_weights_sample_correctly() {
        let mut rng = RngStream::new(4);
        let mut c = TrialCounters::new();
        let out = multinomial_sample(&[0.0f32, 2.0, 0.0, 2.0], 20_000, &mut rng, &mut c).unwrap();
        let ones = out.iter().filter(|&&i| i == 1).count();
        assert!(out.iter().all(|&i| i == 1 || i == 3));
        assert!((ones as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn multinomial_outputs_are_in_range_and_positive_weight(
            w in proptest::collection::vec(0.0f64..5.0, 1..40),
            n in 1usize..200,
            seed in any::<u64>(),
        ) {
            prop_assume!(w.iter().any(|&x| x > 0.0));
            let mut rng = RngStream::new(seed);
            let mut c = TrialCounters::new();
            let out = multinomial_sample(&w, n, &mut rng, &mut c).unwrap();
            prop_assert_eq!(out.len(), n);
            for i in out {
                prop_assert!(i < w.len());
                prop_assert!(w[i] > 0.0);
            }
        }

        #[test]
        fn multinomial_is_deterministic(seed in any::<u64>(), n in 1usize..100) {
            let w = [0.5, 1.5, 0.0, 2.0, 0.25];
            let mut c = TrialCounters::new();
            let a = multinomial_sample(&w, n, &mut RngStream::new(seed), &mut c).unwrap();
            let b = multinomial_sample(&w, n, &mut RngStream::new(seed), &mut c).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
