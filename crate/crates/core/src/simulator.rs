//! Monte Carlo evaluation of band policies.
//!
//! The rate is stepped exactly in log space on a fixed grid. Interventions
//! are checked at grid times: if the rate is outside `(a, b)` and no reaction
//! period is running, it is reset to `alpha`, the discounted fixed cost is
//! paid and a fresh reaction `(T, sigma_shift, mu_shift)` is drawn. The
//! reaction period is rounded up to whole steps.
//!
//! Each path owns two random streams derived from the master seed and the
//! path index: one for the Gaussian increments (one draw per step, always)
//! and one for the reaction draws (only at interventions). Policies that
//! share a seed therefore see the same increments path by path.
//!
//! Paths are simulated in lockstep groups of [`LANES`]; a group gives results
//! bit-identical to running its paths one at a time.

use std::io::Write;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostSpec, ModelParams, ReactionLaw};

/// Paths advanced together by the batched kernel.
pub const LANES: usize = 16;
const PATHS_PER_TASK: usize = 16 * LANES;
/// Normals drawn ahead per path.
const NORMAL_BLOCK: usize = 64;
/// Below this `|h/2|` the half-step growth factor uses a Taylor polynomial.
const TAYLOR_RADIUS: f64 = 0.03;
/// Horizons below this multiple of `1/r` trigger a warning.
const MIN_HORIZON_RATES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPolicy {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl BandPolicy {
    pub fn new(a: f64, b: f64, alpha: f64) -> Result<Self> {
        let policy = BandPolicy { a, b, alpha };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.a < self.alpha && self.alpha < self.b && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                a: self.a,
                alpha: self.alpha,
                b: self.b,
            })
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.a && x < self.b
    }

    /// Applies a perturbation such as `"a-0.05"`, `"b+0.05"` or `"alpha+0.05"`.
    pub fn perturbed(&self, spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let split = spec
            .find(['+', '-'])
            .ok_or_else(|| Error::InvalidParameter(format!("perturbation `{spec}` needs a sign, e.g. a-0.05")))?;
        let (field, amount) = spec.split_at(split);
        let delta: f64 = amount
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad perturbation amount in `{spec}`")))?;
        let mut out = *self;
        match field.trim() {
            "a" => out.a += delta,
            "b" => out.b += delta,
            "alpha" => out.alpha += delta,
            other => return Err(Error::InvalidParameter(format!("unknown policy field `{other}` in `{spec}`"))),
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub x0: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Share random streams across compared policies.
    pub crn: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            x0: 1.4,
            dt: 1e-3,
            horizon: 250.0,
            n_paths: 10_000,
            seed: 0,
            crn: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(Error::InvalidParameter(format!("x0 must be > 0, got {}", self.x0)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be at least one step, got {}",
                self.horizon
            )));
        }
        if self.n_paths < 1 {
            return Err(Error::InvalidParameter("n_paths must be >= 1".into()));
        }
        Ok(())
    }

    /// Non-fatal configuration issues.
    pub fn warnings(&self, params: &ModelParams) -> Vec<String> {
        let mut out = Vec::new();
        if self.horizon * params.r < MIN_HORIZON_RATES {
            out.push(format!(
                "horizon {} is shorter than 10/r = {}; the truncated tail may bias the estimate",
                self.horizon,
                MIN_HORIZON_RATES / params.r
            ));
        }
        out
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub mean_interventions_per_unit_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub cost: f64,
    pub interventions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Intervene,
    ReactionEnd,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Intervene => "intervene",
            EventKind::ReactionEnd => "reaction_end",
        }
    }
}

/// One intervention or end of a reaction period. The drawn fields describe
/// the reaction started (for interventions) or finished (for reaction ends).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub path: usize,
    pub t: f64,
    pub event: EventKind,
    pub x_before: f64,
    pub x_after: f64,
    pub t_drawn: f64,
    pub sigma2_drawn: f64,
    pub mu2_drawn: f64,
}

pub fn write_event_log<W: Write>(events: &[Event], mut out: W) -> std::io::Result<()> {
    writeln!(out, "path,t,event,x_before,x_after,T_drawn,sigma2_drawn,mu2_drawn")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.path,
            e.t,
            e.event.as_str(),
            e.x_before,
            e.x_after,
            e.t_drawn,
            e.sigma2_drawn,
            e.mu2_drawn
        )?;
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The two random streams of one path.
#[derive(Debug, Clone)]
pub struct PathStreams {
    pub normals: Xoshiro256PlusPlus,
    pub regime: Xoshiro256PlusPlus,
}

impl PathStreams {
    pub fn for_path(seed: u64, path: usize) -> Self {
        let root = splitmix64(seed);
        let stream = |k: u64| Xoshiro256PlusPlus::seed_from_u64(splitmix64(root ^ k));
        PathStreams {
            normals: stream(2 * path as u64),
            regime: stream(2 * path as u64 + 1),
        }
    }
}

/// Degree-7 Taylor polynomial of `exp`; relative error below 2e-17 on the
/// Taylor radius.
#[inline(always)]
fn taylor_exp(y: f64) -> f64 {
    const C: [f64; 8] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
    ];
    let mut p = C[7];
    for c in C[..7].iter().rev() {
        p = p * y + c;
    }
    p
}

#[derive(Debug, Clone, Copy)]
struct Regime {
    drift_dt: f64,
    vol_sqdt: f64,
}

/// Per-run constants shared by all paths.
#[derive(Debug, Clone)]
struct Kernel<'a> {
    policy: BandPolicy,
    params: ModelParams,
    law: &'a ReactionLaw,
    k_fixed: f64,
    dt: f64,
    x0: f64,
    n_steps: usize,
    base: Regime,
    disc_step: f64,
    cost_weight: f64,
}

impl<'a> Kernel<'a> {
    fn new(policy: &BandPolicy, params: &ModelParams, law: &'a ReactionLaw, cost: &CostSpec, cfg: &SimConfig) -> Self {
        Kernel {
            policy: *policy,
            params: *params,
            law,
            k_fixed: cost.k_fixed,
            dt: cfg.dt,
            x0: cfg.x0,
            n_steps: cfg.n_steps(),
            base: Self::regime(params.mu, params.sigma, cfg.dt),
            disc_step: (-params.r * cfg.dt).exp(),
            // exact integral of e^{-rs} over one step
            cost_weight: -(-params.r * cfg.dt).exp_m1() / params.r,
        }
    }

    fn regime(mu: f64, sigma: f64, dt: f64) -> Regime {
        Regime {
            drift_dt: (mu - 0.5 * sigma * sigma) * dt,
            vol_sqdt: sigma * dt.sqrt(),
        }
    }

    /// Draws a reaction; returns its regime, its length in steps and the
    /// drawn `(T, sigma2, mu2)`.
    fn draw_reaction(&self, rng: &mut Xoshiro256PlusPlus) -> (Regime, usize, [f64; 3]) {
        let t = self.law.t.sample(rng);
        let sigma2 = self.params.sigma + self.law.sigma_shift.sample(rng);
        let mu2 = self.params.mu + self.law.mu_shift.sample(rng);
        let steps = (t / self.dt - 1e-9).ceil().max(0.0) as usize;
        (Self::regime(mu2, sigma2, self.dt), steps, [t, sigma2, mu2])
    }

    /// Advances `L` paths in lockstep. `paths` are the global path indices
    /// (used for the event log only).
    fn run<const L: usize>(
        &self,
        streams: &mut [PathStreams; L],
        paths: [usize; L],
        log: Option<&mut Vec<Event>>,
    ) -> [PathOutcome; L] {
        #[cfg(target_arch = "x86_64")]
        if is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { self.run_avx2(streams, paths, log) };
        }
        self.run_generic(streams, paths, log)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2<const L: usize>(
        &self,
        streams: &mut [PathStreams; L],
        paths: [usize; L],
        log: Option<&mut Vec<Event>>,
    ) -> [PathOutcome; L] {
        self.run_generic(streams, paths, log)
    }

    #[inline(always)]
    fn run_generic<const L: usize>(
        &self,
        streams: &mut [PathStreams; L],
        paths: [usize; L],
        mut log: Option<&mut Vec<Event>>,
    ) -> [PathOutcome; L] {
        let mut x = [self.x0; L];
        let mut cost = [0.0f64; L];
        let mut count = [0u64; L];
        let mut drift = [self.base.drift_dt; L];
        let mut vol = [self.base.vol_sqdt; L];
        let mut drawn = [[0.0f64; 3]; L];
        let mut unlock = [0usize; L];
        let mut reacting = [false; L];
        let mut z = [0.0f64; L];
        let mut block = [[0.0f64; NORMAL_BLOCK]; L];
        let mut y = [0.0f64; L];
        let mut e = [0.0f64; L];
        let mut disc = 1.0f64;
        let (a, b, alpha, rho) = (self.policy.a, self.policy.b, self.policy.alpha, self.params.rho);

        for k in 0..self.n_steps {
            let mut pending = false;
            for l in 0..L {
                pending |= (k >= unlock[l]) & (reacting[l] | (x[l] <= a) | (x[l] >= b));
            }
            for l in 0..L {
                if !pending || k < unlock[l] {
                    continue;
                }
                if reacting[l] {
                    reacting[l] = false;
                    drift[l] = self.base.drift_dt;
                    vol[l] = self.base.vol_sqdt;
                    if let Some(events) = log.as_deref_mut() {
                        events.push(Event {
                            path: paths[l],
                            t: k as f64 * self.dt,
                            event: EventKind::ReactionEnd,
                            x_before: x[l],
                            x_after: x[l],
                            t_drawn: drawn[l][0],
                            sigma2_drawn: drawn[l][1],
                            mu2_drawn: drawn[l][2],
                        });
                    }
                }
                if !(x[l] > a && x[l] < b) {
                    let x_before = x[l];
                    cost[l] += disc * self.k_fixed;
                    count[l] += 1;
                    x[l] = alpha;
                    let (reaction, steps, values) = self.draw_reaction(&mut streams[l].regime);
                    drawn[l] = values;
                    if steps > 0 {
                        drift[l] = reaction.drift_dt;
                        vol[l] = reaction.vol_sqdt;
                        reacting[l] = true;
                        unlock[l] = k + steps;
                    }
                    if let Some(events) = log.as_deref_mut() {
                        events.push(Event {
                            path: paths[l],
                            t: k as f64 * self.dt,
                            event: EventKind::Intervene,
                            x_before,
                            x_after: alpha,
                            t_drawn: values[0],
                            sigma2_drawn: values[1],
                            mu2_drawn: values[2],
                        });
                    }
                }
            }

            let slot = k % NORMAL_BLOCK;
            if slot == 0 {
                for l in 0..L {
                    let rng = &mut streams[l].normals;
                    for v in block[l].iter_mut() {
                        *v = StandardNormal.sample(rng);
                    }
                }
            }
            for l in 0..L {
                z[l] = block[l][slot];
            }
            // half-step growth exp(h / 2), polynomial unless |h / 2| is large
            let mut far = false;
            for l in 0..L {
                y[l] = 0.5 * (drift[l] + vol[l] * z[l]);
                far |= y[l].abs() > TAYLOR_RADIUS;
            }
            for l in 0..L {
                e[l] = taylor_exp(y[l]);
            }
            if far {
                for l in 0..L {
                    if y[l].abs() > TAYLOR_RADIUS {
                        e[l] = y[l].exp();
                    }
                }
            }
            let weight = disc * self.cost_weight;
            for l in 0..L {
                let mid = x[l] * e[l];
                let gap = mid - rho;
                cost[l] += weight * (gap * gap);
                x[l] = mid * e[l];
            }
            disc *= self.disc_step;
        }

        std::array::from_fn(|l| PathOutcome {
            cost: cost[l],
            interventions: count[l],
        })
    }
}

/// Checks the inputs of a simulation. Unlike the solver, a zero volatility
/// is allowed here.
pub fn validate_inputs(
    policy: &BandPolicy,
    params: &ModelParams,
    law: &ReactionLaw,
    cost: &CostSpec,
    cfg: &SimConfig,
) -> Result<()> {
    policy.validate()?;
    cfg.validate()?;
    cost.validate()?;
    let finite = [params.mu, params.sigma, params.r, params.rho].iter().all(|v| v.is_finite());
    if !finite || params.sigma < 0.0 || params.r <= 0.0 || params.rho <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "simulation needs finite parameters with sigma >= 0 and r, rho > 0, got {params:?}"
        )));
    }
    law.t.validate("t")?;
    law.sigma_shift.validate("sigma_shift")?;
    law.mu_shift.validate("mu_shift")?;
    if law.t.support_bounds().0 < 0.0 {
        return Err(Error::InvalidLaw("reaction period must be >= 0".into()));
    }
    if params.sigma + law.sigma_shift.support_bounds().0 < 0.0 {
        return Err(Error::InvalidLaw("reaction volatility must be >= 0".into()));
    }
    Ok(())
}

/// Simulates one path and returns its discounted cost and intervention count.
/// Events are appended to `log` when given.
pub fn simulate_path(
    policy: &BandPolicy,
    params: &ModelParams,
    law: &ReactionLaw,
    cost: &CostSpec,
    cfg: &SimConfig,
    streams: &mut PathStreams,
    path: usize,
    log: Option<&mut Vec<Event>>,
) -> Result<PathOutcome> {
    validate_inputs(policy, params, law, cost, cfg)?;
    let kernel = Kernel::new(policy, params, law, cost, cfg);
    let mut one = [streams.clone()];
    let [out] = kernel.run::<1>(&mut one, [path], log);
    *streams = one.into_iter().next().expect("one stream");
    Ok(out)
}

/// Simulates paths `first..first + count` in lockstep groups.
fn simulate_range(kernel: &Kernel, seed: u64, first: usize, count: usize, out: &mut Vec<PathOutcome>) {
    let mut path = first;
    let end = first + count;
    while path + LANES <= end {
        let mut streams: [PathStreams; LANES] = std::array::from_fn(|l| PathStreams::for_path(seed, path + l));
        let paths = std::array::from_fn(|l| path + l);
        out.extend(kernel.run::<LANES>(&mut streams, paths, None));
        path += LANES;
    }
    while path < end {
        let mut streams = [PathStreams::for_path(seed, path)];
        out.extend(kernel.run::<1>(&mut streams, [path], None));
        path += 1;
    }
}

/// Per-path outcomes for paths `0..cfg.n_paths` with streams from `seed`,
/// in path order.
pub fn simulate_paths(
    policy: &BandPolicy,
    params: &ModelParams,
    law: &ReactionLaw,
    cost: &CostSpec,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Vec<PathOutcome>> {
    validate_inputs(policy, params, law, cost, cfg)?;
    let kernel = Kernel::new(policy, params, law, cost, cfg);
    let n_tasks = cfg.n_paths.div_ceil(PATHS_PER_TASK);
    let chunks: Vec<Vec<PathOutcome>> = (0..n_tasks)
        .into_par_iter()
        .map(|task| {
            let first = task * PATHS_PER_TASK;
            let count = PATHS_PER_TASK.min(cfg.n_paths - first);
            let mut out = Vec::with_capacity(count);
            simulate_range(&kernel, seed, first, count, &mut out);
            out
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Mean and standard error of a sample, accumulated in order.
fn mean_and_stderr(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    let stderr = if n > 1 { (m2 / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
    (mean, stderr, n)
}

fn summarize(outcomes: &[PathOutcome], cfg: &SimConfig) -> CostEstimate {
    let (mean, stderr, n) = mean_and_stderr(outcomes.iter().map(|o| o.cost));
    let interventions: u64 = outcomes.iter().map(|o| o.interventions).sum();
    CostEstimate {
        mean,
        stderr,
        n_paths: n,
        mean_interventions_per_unit_time: interventions as f64 / (n as f64 * cfg.n_steps() as f64 * cfg.dt),
    }
}

/// Monte Carlo estimate of the expected discounted cost of `policy` from `cfg.x0`.
pub fn estimate_cost(
    policy: &BandPolicy,
    params: &ModelParams,
    law: &ReactionLaw,
    cost: &CostSpec,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    let outcomes = simulate_paths(policy, params, law, cost, cfg, cfg.seed)?;
    Ok(summarize(&outcomes, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub policies: Vec<BandPolicy>,
    pub estimates: Vec<CostEstimate>,
    /// Policy indices from cheapest to most expensive.
    pub ranking: Vec<usize>,
    /// `diff_mean[i][j]` is the mean of `cost_i - cost_j` path by path.
    pub diff_mean: Vec<Vec<f64>>,
    pub diff_stderr: Vec<Vec<f64>>,
}

/// Seed used for policy `index` of a comparison.
pub fn policy_seed(cfg: &SimConfig, index: usize) -> u64 {
    if cfg.crn {
        cfg.seed
    } else {
        cfg.seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Estimates every policy and the paired differences between them. With
/// `cfg.crn` all policies consume the same streams path by path.
pub fn compare_policies(
    policies: &[BandPolicy],
    params: &ModelParams,
    law: &ReactionLaw,
    cost: &CostSpec,
    cfg: &SimConfig,
) -> Result<PolicyComparison> {
    if policies.is_empty() {
        return Err(Error::InvalidParameter("no policies to compare".into()));
    }
    let runs = policies
        .iter()
        .enumerate()
        .map(|(i, p)| simulate_paths(p, params, law, cost, cfg, policy_seed(cfg, i)))
        .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<CostEstimate> = runs.iter().map(|r| summarize(r, cfg)).collect();
    let n = policies.len();
    let mut diff_mean = vec![vec![0.0; n]; n];
    let mut diff_stderr = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (m, s, _) = mean_and_stderr(runs[i].iter().zip(&runs[j]).map(|(x, y)| x.cost - y.cost));
                diff_mean[i][j] = m;
                diff_stderr[i][j] = s;
            }
        }
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&i, &j| estimates[i].mean.total_cmp(&estimates[j].mean).then(i.cmp(&j)));
    Ok(PolicyComparison {
        policies: policies.to_vec(),
        estimates,
        ranking,
        diff_mean,
        diff_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarLaw;

    fn frozen() -> ModelParams {
        ModelParams {
            mu: 0.0,
            sigma: 0.0,
            r: 0.06,
            rho: 1.4,
        }
    }

    fn policy() -> BandPolicy {
        BandPolicy::new(0.5814, 2.3648, 1.2125).unwrap()
    }

    fn table_params() -> ModelParams {
        ModelParams::new(0.1, 0.3, 0.06, 1.4).unwrap()
    }

    fn small_cfg(x0: f64) -> SimConfig {
        SimConfig {
            x0,
            dt: 1e-2,
            horizon: 20.0,
            n_paths: 37,
            seed: 11,
            crn: true,
        }
    }

    #[test]
    fn taylor_matches_exp() {
        for i in -100..=100 {
            let y = TAYLOR_RADIUS * i as f64 / 100.0;
            assert!((taylor_exp(y) / y.exp() - 1.0).abs() < 4e-16, "y={y}");
        }
        assert_eq!(taylor_exp(0.0), 1.0);
    }

    #[test]
    fn frozen_at_target_costs_nothing() {
        let cfg = SimConfig {
            x0: 1.4,
            horizon: 50.0,
            ..small_cfg(1.4)
        };
        let est = estimate_cost(&policy(), &frozen(), &ReactionLaw::fixed(1.0, 0.0, 0.0), &CostSpec::new(0.5).unwrap(), &cfg).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.mean_interventions_per_unit_time, 0.0);
    }

    #[test]
    fn frozen_outside_band_matches_closed_form() {
        let cfg = SimConfig {
            x0: 3.0,
            horizon: 50.0,
            n_paths: 1,
            ..small_cfg(3.0)
        };
        let p = policy();
        let params = frozen();
        let k = 0.5;
        let mut streams = PathStreams::for_path(cfg.seed, 0);
        let mut log = Vec::new();
        let out = simulate_path(&p, &params, &ReactionLaw::none(), &CostSpec::new(k).unwrap(), &cfg, &mut streams, 0, Some(&mut log)).unwrap();
        let expected = k + (p.alpha - params.rho).powi(2) * (1.0 - (-params.r * cfg.horizon).exp()) / params.r;
        assert!((out.cost - expected).abs() < 1e-10, "{} vs {expected}", out.cost);
        assert_eq!(out.interventions, 1);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].t, 0.0);
    }

    #[test]
    fn lanes_match_single_paths_bit_for_bit() {
        let law = ReactionLaw {
            t: ScalarLaw::Uniform { lo: 0.0, hi: 1.0 },
            sigma_shift: ScalarLaw::Point(0.1),
            mu_shift: ScalarLaw::Uniform { lo: -0.05, hi: 0.05 },
        };
        let cost = CostSpec::new(0.5).unwrap();
        let cfg = small_cfg(2.0);
        let batched = simulate_paths(&policy(), &table_params(), &law, &cost, &cfg, cfg.seed).unwrap();
        assert_eq!(batched.len(), cfg.n_paths);
        for (i, outcome) in batched.iter().enumerate() {
            let mut streams = PathStreams::for_path(cfg.seed, i);
            let single = simulate_path(&policy(), &table_params(), &law, &cost, &cfg, &mut streams, i, None).unwrap();
            assert_eq!(single.cost.to_bits(), outcome.cost.to_bits(), "path {i}");
            assert_eq!(single.interventions, outcome.interventions);
        }
    }

    #[test]
    fn same_seed_same_estimate() {
        let cost = CostSpec::new(0.5).unwrap();
        let law = ReactionLaw::fixed(1.0, 0.1, 0.0);
        let cfg = small_cfg(1.4);
        let first = estimate_cost(&policy(), &table_params(), &law, &cost, &cfg).unwrap();
        let second = estimate_cost(&policy(), &table_params(), &law, &cost, &cfg).unwrap();
        assert_eq!(first, second);
        let other = estimate_cost(&policy(), &table_params(), &law, &cost, &SimConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(first.mean, other.mean);
    }

    #[test]
    fn event_log_respects_lockout_restart_and_positivity() {
        let law = ReactionLaw {
            t: ScalarLaw::Uniform { lo: 0.2, hi: 1.5 },
            sigma_shift: ScalarLaw::Point(0.3),
            mu_shift: ScalarLaw::Point(0.0),
        };
        let narrow = BandPolicy::new(1.2, 1.6, 1.4).unwrap();
        let cfg = small_cfg(1.4);
        let mut total = 0;
        for path in 0..20 {
            let mut streams = PathStreams::for_path(cfg.seed, path);
            let mut log = Vec::new();
            simulate_path(&narrow, &table_params(), &law, &CostSpec::new(0.5).unwrap(), &cfg, &mut streams, path, Some(&mut log)).unwrap();
            let interventions: Vec<&Event> = log.iter().filter(|e| e.event == EventKind::Intervene).collect();
            total += interventions.len();
            for pair in interventions.windows(2) {
                assert!(pair[1].t - pair[0].t >= pair[0].t_drawn - 1e-9);
            }
            for e in &log {
                assert!(e.x_before > 0.0 && e.x_after > 0.0);
                if e.event == EventKind::Intervene {
                    assert_eq!(e.x_after, narrow.alpha);
                    assert!(!narrow.contains(e.x_before));
                }
            }
        }
        assert!(total > 20);
    }

    #[test]
    fn event_log_csv_header() {
        let mut buf = Vec::new();
        write_event_log(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "path,t,event,x_before,x_after,T_drawn,sigma2_drawn,mu2_drawn\n");
    }

    #[test]
    fn duplicate_policies_are_identical_under_crn() {
        let cfg = small_cfg(1.4);
        let cmp = compare_policies(&[policy(), policy()], &table_params(), &ReactionLaw::fixed(1.0, 0.1, 0.0), &CostSpec::new(0.5).unwrap(), &cfg).unwrap();
        assert_eq!(cmp.estimates[0], cmp.estimates[1]);
        assert_eq!(cmp.diff_mean[0][1], 0.0);
        assert_eq!(cmp.diff_stderr[0][1], 0.0);
    }

    #[test]
    fn perturbation_parsing() {
        let p = policy();
        assert_eq!(p.perturbed("a-0.05").unwrap().a, p.a - 0.05);
        assert_eq!(p.perturbed("alpha+0.05").unwrap().alpha, p.alpha + 0.05);
        assert!(p.perturbed("gamma+1").is_err());
        assert!(p.perturbed("a").is_err());
        assert!(p.perturbed("alpha+2").is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SimConfig {
            n_paths: 0,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SimConfig { dt: 0.0, ..SimConfig::default() }.validate().is_err());
        assert!(BandPolicy::new(1.0, 2.0, 2.5).is_err());
        assert!(!SimConfig { horizon: 50.0, ..SimConfig::default() }.warnings(&table_params()).is_empty());
        assert!(SimConfig::default().warnings(&table_params()).is_empty());
    }
}
