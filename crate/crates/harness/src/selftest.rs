//! Small-instance invariant suite behind `pfsmooth selftest`.
//!
//! A [`Mutation`] deliberately breaks one component so the suite can show
//! that it notices.

use std::str::FromStr;
use std::time::Instant;

use pfsmooth::oracles::{
    brute_force_joint, discrete_forward_backward, enumerate_backward_law, enumerate_joint_ffbsm, path_code, rts_smooth,
};
use pfsmooth::stats::{chi_square_test, ks_uniform};
use pfsmooth::{
    categorical_search, conditional_mean_check, filter_estimate, gallop_search, make_compact_rw, make_discrete_hmm,
    make_lgssm, marginal_estimate, marginal_smoothing_weights, multinomial_sample, run_filter, sample_backward_direct,
    sample_backward_linear, uniform_order_statistics, BackwardSampler, CompactRwParams, DiscreteHmm, LgssmParams,
    ModelSpec, PrefixSums, ProposalSpec, Purpose, RngStream, SmcError, TrialCounters,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Search returns the smallest `r` with `u <= q_r` instead of `u < q_r`.
    GallopBoundary,
    /// `compact_rw` reports a quarter of its `sigma_plus`, below the true peak of `m`.
    SigmaPlusUnderstated,
}

impl FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Mutation::None),
            "gallop-boundary" => Ok(Mutation::GallopBoundary),
            "sigma-plus-understated" => Ok(Mutation::SigmaPlusUnderstated),
            _ => Err(format!(
                "unknown mutation `{s}`; expected none, gallop-boundary or sigma-plus-understated"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
    pub millis: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "pass" } else { "FAIL" };
            out.push_str(&format!("{tag} {:<28} {:>9.1} ms  {}\n", c.name, c.millis, c.detail));
        }
        let n_fail = self.failures().count();
        out.push_str(&format!(
            "{} of {} checks passed in {:.1} s\n",
            self.checks.len() - n_fail,
            self.checks.len(),
            self.millis / 1e3
        ));
        out
    }
}

type Check = fn(Mutation) -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("galloping-correctness", galloping_correctness),
    ("boundary-convention", boundary_convention),
    ("multinomial-chi-square", multinomial_chi_square),
    ("comparison-cost-bound", comparison_cost_bound),
    ("order-statistics", order_statistics),
    ("oracle-cross-check", oracle_cross_check),
    ("enumeration-equivalences", enumeration_equivalences),
    ("backward-law-direct", backward_law_direct),
    ("backward-law-linear", backward_law_linear),
    ("rao-blackwell", rao_blackwell),
    ("bound-violation", bound_violation),
    ("determinism", determinism),
];

pub fn selftest(mutation: Mutation) -> SelftestReport {
    let start = Instant::now();
    let checks = CHECKS
        .iter()
        .map(|&(name, check)| {
            let t = Instant::now();
            let res = check(mutation);
            let millis = t.elapsed().as_secs_f64() * 1e3;
            let (passed, detail) = match res {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome {
                name,
                passed,
                detail,
                millis,
            }
        })
        .collect();
    SelftestReport {
        checks,
        millis: start.elapsed().as_secs_f64() * 1e3,
    }
}

fn stream(tag: u64) -> RngStream {
    RngStream::new(0x5e1f_7e57).derive(Purpose::Check, tag, 0)
}

fn sm(e: SmcError) -> String {
    e.to_string()
}

/// The search under test; the mutation shifts ties onto the left cell.
fn search(prefix: &PrefixSums<f64>, u: f64, mutation: Mutation, c: &mut TrialCounters) -> Result<usize, String> {
    let r = gallop_search(prefix, u, c).map_err(sm)?;
    if mutation == Mutation::GallopBoundary && r > 0 && prefix.as_slice()[r - 1] == u {
        return Ok(r - 1);
    }
    Ok(r)
}

fn linear_scan(q: &[f64], u: f64) -> usize {
    q.iter().position(|&x| u < x).expect("u below total")
}

fn galloping_correctness(mutation: Mutation) -> Result<String, String> {
    let mut rng = stream(1);
    let mut c = TrialCounters::new();
    for case in 0..10_000 {
        let n = rng.gen_range(1..200);
        // Small integers make ties between u and prefix values common.
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { f64::from(rng.gen_range(1u8..5)) })
            .collect();
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let prefix = PrefixSums::new(&w).map_err(sm)?;
        let q = prefix.as_slice();
        let u = if case % 2 == 0 {
            let k = rng.gen_range(0..n);
            if q[k] < prefix.total() {
                q[k]
            } else {
                0.0
            }
        } else {
            rng.gen::<f64>() * prefix.total()
        };
        let want = linear_scan(q, u);
        let got = search(&prefix, u, mutation, &mut c)?;
        let bis = categorical_search(&prefix, u, &mut c).map_err(sm)?;
        if got != want || bis != want {
            return Err(format!(
                "case {case}: u = {u}, linear scan {want}, galloping {got}, bisection {bis}"
            ));
        }
    }
    Ok("10000 instances agree with a linear scan".into())
}

fn boundary_convention(mutation: Mutation) -> Result<String, String> {
    let mut c = TrialCounters::new();
    let p = PrefixSums::new(&[0.2, 0.3, 0.5]).map_err(sm)?;
    let r = search(&p, 0.5, mutation, &mut c)?;
    if r != 2 {
        return Err(format!("prefix [0.2, 0.5, 1.0], u = 0.5 gave index {r}, expected 2"));
    }
    let p = PrefixSums::new(&[0.0, 0.0, 1.0, 0.0]).map_err(sm)?;
    let r = search(&p, 0.0, mutation, &mut c)?;
    if r != 2 {
        return Err(format!("u = 0 landed on zero-weight index {r}"));
    }
    let p = PrefixSums::new(&[3.0]).map_err(sm)?;
    if search(&p, 2.9, mutation, &mut c)? != 0 {
        return Err("N = 1 did not return index 0".into());
    }
    Ok("strict u < q_r convention holds".into())
}

fn multinomial_chi_square(_: Mutation) -> Result<String, String> {
    let shapes: [Vec<f64>; 2] = [vec![1.0; 16], vec![0.05, 0.0, 0.4, 0.15, 0.25, 0.0, 0.15]];
    let mut ok = 0;
    for run in 0..20u64 {
        let w = &shapes[(run % 2) as usize];
        let mut rng = stream(100 + run);
        let mut c = TrialCounters::new();
        let draws = multinomial_sample(w, 10_000, &mut rng, &mut c).map_err(sm)?;
        // Pooled law and the law of one output slot across repeated calls.
        let mut pooled = vec![0u64; w.len()];
        for &i in &draws {
            pooled[i] += 1;
        }
        let mut slot = vec![0u64; w.len()];
        for _ in 0..2_000 {
            let d = multinomial_sample(w, 5, &mut rng, &mut c).map_err(sm)?;
            slot[d[(run % 5) as usize]] += 1;
        }
        let (a, b) = (chi_square_test(&pooled, w), chi_square_test(&slot, w));
        if a.p_value > 0.01 && b.p_value > 0.01 {
            ok += 1;
        }
    }
    if ok >= 18 {
        Ok(format!("{ok}/20 runs not rejected at 1%"))
    } else {
        Err(format!("only {ok}/20 runs not rejected at 1%"))
    }
}

fn comparison_cost_bound(_: Mutation) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for &big_n in &[1_000usize, 10_000, 100_000] {
        let w: Vec<f64> = (0..big_n).map(|i| 1.0 + (i % 5) as f64).collect();
        let root = (big_n as f64).sqrt().round() as usize;
        for &n in &[1, root, big_n] {
            let mut total = 0u64;
            for seed in 0..3 {
                let mut rng = stream(200 + seed);
                let mut c = TrialCounters::new();
                multinomial_sample(&w, n, &mut rng, &mut c).map_err(sm)?;
                total += c.comparisons;
            }
            let avg = total as f64 / 3.0;
            let nf = n as f64;
            let bound = 8.0 * (nf + nf * (1.0 + big_n as f64 / nf).ln());
            worst = worst.max(avg / bound);
            if avg > bound {
                return Err(format!("N = {big_n}, n = {n}: {avg} comparisons > bound {bound:.0}"));
            }
        }
    }
    Ok(format!("worst ratio to bound {worst:.3}"))
}

fn order_statistics(_: Mutation) -> Result<String, String> {
    let mut rng = stream(300);
    for _ in 0..1_000 {
        let v = uniform_order_statistics(7, &mut rng);
        if v.windows(2).any(|p| p[0] >= p[1]) || v[0] <= 0.0 || v[6] >= 1.0 {
            return Err(format!("not strictly increasing inside (0, 1): {v:?}"));
        }
    }
    let singles: Vec<f64> = (0..20_000).map(|_| uniform_order_statistics(1, &mut rng)[0]).collect();
    let ks = ks_uniform(&singles);
    if ks.p_value < 0.01 {
        return Err(format!("n = 1 fails KS against U(0,1): p = {:.4}", ks.p_value));
    }
    Ok(format!("KS p = {:.3}", ks.p_value))
}

fn two_state(obs_len: usize, seed: u64) -> (DiscreteHmm<f64>, pfsmooth::ObservationRecord<f64>) {
    let hmm = DiscreteHmm::gaussian(
        vec![vec![0.8, 0.2], vec![0.3, 0.7]],
        vec![0.6, 0.4],
        vec![0.0, 1.0],
        0.7,
    )
    .expect("valid two-state chain");
    let noise = Normal::new(0.0, 0.7).expect("positive sd");
    let (_, obs) = hmm
        .simulate(obs_len, seed, |k, rng| k as f64 + noise.sample(rng))
        .expect("simulation");
    (hmm, obs)
}

fn oracle_cross_check(_: Mutation) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (hmm, obs) = two_state(5, seed);
        let fb = discrete_forward_backward(&hmm, &obs).map_err(sm)?;
        for s in 0..obs.len() {
            let exact = brute_force_joint(&hmm, &obs, |p| if p[s] == 1 { 1.0 } else { 0.0 }).map_err(sm)?;
            worst = worst.max((exact - fb.smooth[s][1]).abs());
        }
    }
    if worst > 1e-10 {
        return Err(format!("forward-backward vs enumeration deviates by {worst:e}"));
    }
    let p = LgssmParams::new(0.8, 1.0, 0.7);
    let (_, obs) = p.simulate(12, 4).map_err(sm)?;
    let k = rts_smooth(&p, &obs).map_err(sm)?;
    for t in 0..obs.len() - 1 {
        if k.smoothed[t].variance >= k.filtered[t].variance {
            return Err(format!("RTS variance not below filter variance at t = {t}"));
        }
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn enumeration_equivalences(_: Mutation) -> Result<String, String> {
    let (hmm, obs) = two_state(3, 8);
    let model = make_discrete_hmm(&hmm, &obs).map_err(sm)?;
    let h = run_filter(&model, &ProposalSpec::bootstrap(), 3, 2).map_err(sm)?;
    let sw = marginal_smoothing_weights(&h, &model).map_err(sm)?;
    let one = enumerate_joint_ffbsm(&h, &model, |_| 1.0).map_err(sm)?;
    let x0 = enumerate_joint_ffbsm(&h, &model, |p| p[0]).map_err(sm)?;
    let xt = enumerate_joint_ffbsm(&h, &model, |p| p[2]).map_err(sm)?;
    let checks = [
        ("normalization", one, 1.0),
        ("time-0 marginal", x0, marginal_estimate(&h, &sw, 0, |x| *x)),
        ("terminal slice", xt, filter_estimate(h.step(2), |x| *x)),
    ];
    for (name, got, want) in checks {
        if (got - want).abs() > 1e-12 {
            return Err(format!("{name}: {got} vs {want}"));
        }
    }
    Ok("joint enumeration matches the marginal recursions".into())
}

fn small_history() -> Result<(ModelSpec<f64>, pfsmooth::ForwardHistory<f64>, Vec<f64>), String> {
    let (hmm, obs) = two_state(4, 3);
    let model = make_discrete_hmm(&hmm, &obs).map_err(sm)?;
    let h = run_filter(&model, &ProposalSpec::bootstrap(), 4, 6).map_err(sm)?;
    let law = enumerate_backward_law(&h, &model).map_err(sm)?;
    Ok((model, h, law))
}

fn backward_law(linear: bool) -> Result<String, String> {
    let (model, h, law) = small_history()?;
    let mut ok = 0;
    for rep in 0..5 {
        let rng = stream(400 + rep);
        let (paths, _) = if linear {
            sample_backward_linear(&h, &model, 100_000, 1_000, &rng)
        } else {
            sample_backward_direct(&h, &model, 100_000, &rng)
        }
        .map_err(sm)?;
        let mut counts = vec![0u64; law.len()];
        for p in &paths {
            counts[path_code(&p.indices, 4)] += 1;
        }
        if chi_square_test(&counts, &law).p_value > 0.01 {
            ok += 1;
        }
    }
    if ok >= 4 {
        Ok(format!("{ok}/5 chi-square runs not rejected at 1%"))
    } else {
        Err(format!("only {ok}/5 chi-square runs not rejected at 1%"))
    }
}

fn backward_law_direct(_: Mutation) -> Result<String, String> {
    backward_law(false)
}

fn backward_law_linear(_: Mutation) -> Result<String, String> {
    backward_law(true)
}

fn rao_blackwell(_: Mutation) -> Result<String, String> {
    let p = LgssmParams::new(0.9, 1.0, 1.0);
    let (_, obs) = p.simulate(3, 5).map_err(sm)?;
    let model = make_lgssm(&p, &obs).map_err(sm)?;
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let h = run_filter(&model, &ProposalSpec::bootstrap(), 4, seed).map_err(sm)?;
        let check = conditional_mean_check(&h, &model, |x| x[0] + x[2], 100_000, BackwardSampler::Direct, &stream(500 + seed))
            .map_err(sm)?;
        worst = worst.max(check.studentized().abs());
    }
    if worst > 5.0 {
        return Err(format!("studentized difference {worst:.2} exceeds 5"));
    }
    Ok(format!("max |studentized difference| {worst:.2}"))
}

fn bound_violation(mutation: Mutation) -> Result<String, String> {
    let p = CompactRwParams::new(1.0f64, 0.1);
    let (_, obs) = p.simulate(11, 2).map_err(sm)?;
    let mut model = make_compact_rw(&p, &obs).map_err(sm)?;
    if mutation == Mutation::SigmaPlusUnderstated {
        let hi = model.sigma_plus().expect("compact_rw sets sigma_plus");
        model = model.with_sigma_bounds(None, Some(0.25 * hi)).map_err(sm)?;
    }
    let h = run_filter(&model, &ProposalSpec::bootstrap(), 300, 1).map_err(sm)?;
    match sample_backward_linear(&h, &model, 300, 800, &stream(600)) {
        Ok((_, c)) if c.fallback_count == 0 => Ok("sampler respects sigma_plus".into()),
        Ok((_, c)) => Err(format!("{} unexpected fallbacks", c.fallback_count)),
        Err(e @ SmcError::BoundViolation { .. }) => Err(format!("bound violation surfaced: {e}")),
        Err(e) => Err(e.to_string()),
    }
}

fn determinism(_: Mutation) -> Result<String, String> {
    let p = CompactRwParams::new(1.0f64, 0.1);
    let (_, obs) = p.simulate(9, 7).map_err(sm)?;
    let model = make_compact_rw(&p, &obs).map_err(sm)?;
    let run = || -> Result<_, String> {
        let h = run_filter(&model, &ProposalSpec::bootstrap(), 256, 3).map_err(sm)?;
        let sw = marginal_smoothing_weights(&h, &model).map_err(sm)?;
        let (paths, c) = sample_backward_linear(&h, &model, 256, 800, &RngStream::new(3)).map_err(sm)?;
        Ok((marginal_estimate(&h, &sw, 0, |x| *x).to_bits(), paths, c))
    };
    if run()? != run()? {
        return Err("two identical runs differ".into());
    }
    let (mut ra, mut rb) = (stream(700), stream(700));
    if (0..8).any(|_| ra.gen::<u64>() != rb.gen::<u64>()) {
        return Err("identical stream keys gave different draws".into());
    }
    Ok("bitwise identical reruns".into())
}
