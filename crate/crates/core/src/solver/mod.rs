//! Free-boundary system for the optimal band.
//!
//! The unknowns are the homogeneous coefficients `(A, B)` of `phi`, the band
//! edges `a < b` and the restart point `alpha`. They solve
//!
//! ```text
//! phi(a)  = K + E[Ktilde(alpha)] + E[e^{-rT} V(X_alpha(T))]   (value matching)
//! phi(b)  = phi(a)                                            (continuity)
//! phi'(a) = 0,  phi'(b) = 0                                    (smooth pasting)
//! d/d alpha (E[Ktilde(alpha)] + E[e^{-rT} V(X_alpha(T))]) = 0  (optimal restart)
//! ```
//!
//! Newton runs on `(A, B, ln a, ln(alpha - a), ln(b - alpha))` so that every
//! iterate keeps `0 < a < alpha < b`. Without a reaction the system is
//! initialised from a coarse search over the band edges; with a reaction it
//! is warm-started from the no-reaction solution, falling back to a homotopy
//! in reaction strength.

mod newton;
mod verify;

use serde::{Deserialize, Serialize};

pub use verify::{verify_band, Check, VerificationReport, VerifyTolerances, BAND_GRID_POINTS, OUTSIDE_GRID_POINTS};

use crate::error::{Error, Result};
use crate::expectation::{BandValue, InterventionOperator, ReactionNodes, DEFAULT_N_INNER, DEFAULT_N_QUAD};
use crate::model::{CostSpec, ModelParams, ReactionLaw, ValueCoeffs};
use crate::simulator::BandPolicy;
use newton::{damped_newton, NewtonOptions};

/// Smallest admissible `alpha - a` and `b - alpha` relative to `a`.
const MIN_RELATIVE_GAP: f64 = 1e-10;
const MAX_LINE_SEARCH_HALVINGS: usize = 30;
/// Homotopy steps are halved at most this many times before giving up.
const MAX_HOMOTOPY_REFINEMENTS: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_residual: f64,
    pub max_iter: usize,
    /// Relative central-difference step for the Jacobian.
    pub fd_step: f64,
    /// Gauss-Legendre points for the inner lognormal integral.
    pub n_inner: usize,
    /// Gauss-Legendre points per uniform reaction marginal.
    pub n_quad: usize,
    /// Initial number of homotopy stages; 0 disables the fallback.
    pub homotopy_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_residual: 1e-9,
            max_iter: 100,
            fd_step: 1e-6,
            n_inner: DEFAULT_N_INNER,
            n_quad: DEFAULT_N_QUAD,
            homotopy_steps: 4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) {
            return Err(Error::InvalidParameter(format!("tol_residual must be > 0, got {}", self.tol_residual)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1.0) {
            return Err(Error::InvalidParameter(format!("fd_step must be in (0, 1), got {}", self.fd_step)));
        }
        if self.n_inner < 2 {
            return Err(Error::InvalidParameter(format!("n_inner must be >= 2, got {}", self.n_inner)));
        }
        if self.n_quad < 1 {
            return Err(Error::InvalidParameter("n_quad must be >= 1".into()));
        }
        Ok(())
    }

    fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tol_residual,
            max_iter: self.max_iter,
            fd_step: self.fd_step,
            max_halvings: MAX_LINE_SEARCH_HALVINGS,
        }
    }
}

/// The five unknowns of the free-boundary system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unknowns {
    pub a_coef: f64,
    pub b_coef: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl Unknowns {
    pub fn check_order(&self) -> Result<()> {
        if self.a > 0.0 && self.a < self.alpha && self.alpha < self.b {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                a: self.a,
                alpha: self.alpha,
                b: self.b,
            })
        }
    }

    fn to_internal(self) -> [f64; 5] {
        [
            self.a_coef,
            self.b_coef,
            self.a.ln(),
            (self.alpha - self.a).ln(),
            (self.b - self.alpha).ln(),
        ]
    }

    fn from_internal(z: &[f64; 5]) -> Self {
        let a = z[2].exp();
        let alpha = a + z[3].exp();
        let b = alpha + z[4].exp();
        Unknowns {
            a_coef: z[0],
            b_coef: z[1],
            a,
            b,
            alpha,
        }
    }

    fn gaps_collapsed(&self) -> bool {
        let scale = self.a.abs().max(f64::MIN_POSITIVE);
        self.alpha - self.a <= MIN_RELATIVE_GAP * scale || self.b - self.alpha <= MIN_RELATIVE_GAP * scale
    }
}

/// Residual map of the free-boundary system for one problem instance.
#[derive(Debug, Clone)]
pub struct FreeBoundarySystem {
    params: ModelParams,
    cost: CostSpec,
    operator: InterventionOperator,
    template: ValueCoeffs,
}

impl FreeBoundarySystem {
    pub fn new(params: ModelParams, cost: CostSpec, law: &ReactionLaw, config: &SolverConfig) -> Result<Self> {
        params.validate()?;
        cost.validate()?;
        config.validate()?;
        let operator = InterventionOperator::from_law(params, law, config.n_quad, config.n_inner)?;
        Ok(FreeBoundarySystem {
            params,
            cost,
            operator,
            template: ValueCoeffs::new(&params, 0.0, 0.0)?,
        })
    }

    pub fn no_reaction(params: ModelParams, cost: CostSpec, config: &SolverConfig) -> Result<Self> {
        params.validate()?;
        cost.validate()?;
        config.validate()?;
        let operator = InterventionOperator::new(params, ReactionNodes::no_reaction(&params), config.n_inner)?;
        Ok(FreeBoundarySystem {
            params,
            cost,
            operator,
            template: ValueCoeffs::new(&params, 0.0, 0.0)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn operator(&self) -> &InterventionOperator {
        &self.operator
    }

    pub fn coeffs(&self, a_coef: f64, b_coef: f64) -> ValueCoeffs {
        self.template.with_homogeneous(a_coef, b_coef)
    }

    /// `[phi(a) - M, phi(b) - phi(a), phi'(a), phi'(b), dM/d alpha]` with the
    /// intervention value `M` evaluated at `theta = phi(a)`.
    pub fn residuals(&self, u: &Unknowns) -> Result<[f64; 5]> {
        u.check_order()?;
        Ok(self.residuals_unchecked(u))
    }

    fn residuals_unchecked(&self, u: &Unknowns) -> [f64; 5] {
        let coeffs = self.coeffs(u.a_coef, u.b_coef);
        let phi_a = coeffs.value(u.a);
        let band = BandValue {
            a: u.a,
            b: u.b,
            theta: phi_a,
            coeffs,
        };
        let (value, slope) = self.operator.intervention_value_and_slope(&band, u.alpha, &self.cost);
        [
            phi_a - value,
            coeffs.value(u.b) - phi_a,
            coeffs.derivative(u.a),
            coeffs.derivative(u.b),
            slope,
        ]
    }

    fn newton(&self, guess: &Unknowns, config: &SolverConfig) -> Result<(Unknowns, f64, usize)> {
        guess.check_order()?;
        let f = |z: &[f64; 5]| {
            let u = Unknowns::from_internal(z);
            if !(u.a > 0.0 && u.a < u.alpha && u.alpha < u.b && u.b.is_finite()) {
                return None;
            }
            Some(self.residuals_unchecked(&u))
        };
        match damped_newton(f, guess.to_internal(), &config.newton_options()) {
            Ok(out) => {
                let u = Unknowns::from_internal(&out.z);
                if u.gaps_collapsed() {
                    return Err(Error::OrderingCollapse {
                        lower_gap: u.alpha - u.a,
                        upper_gap: u.b - u.alpha,
                    });
                }
                Ok((u, out.norm, out.iterations))
            }
            Err(err) => Err(err),
        }
    }

    fn finish(&self, u: Unknowns, residual_norm: f64, iterations: usize) -> PolicySolution {
        let coeffs = self.coeffs(u.a_coef, u.b_coef);
        let theta = coeffs.value(u.a);
        let verification = verify_band(
            &coeffs,
            u.a,
            u.b,
            u.alpha,
            theta,
            &self.params,
            &VerifyTolerances::default(),
        );
        PolicySolution {
            coeffs,
            a: u.a,
            b: u.b,
            alpha: u.alpha,
            theta,
            residual_norm,
            iterations,
            verification,
        }
    }
}

/// Residuals of the free-boundary system at `u`.
pub fn residuals(
    u: &Unknowns,
    params: &ModelParams,
    cost: &CostSpec,
    law: &ReactionLaw,
    config: &SolverConfig,
) -> Result<[f64; 5]> {
    FreeBoundarySystem::new(*params, *cost, law, config)?.residuals(u)
}

/// A converged band policy with its value function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySolution {
    pub coeffs: ValueCoeffs,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub theta: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub verification: VerificationReport,
}

impl PolicySolution {
    pub fn unknowns(&self) -> Unknowns {
        Unknowns {
            a_coef: self.coeffs.a_coef,
            b_coef: self.coeffs.b_coef,
            a: self.a,
            b: self.b,
            alpha: self.alpha,
        }
    }

    pub fn policy(&self) -> BandPolicy {
        BandPolicy {
            a: self.a,
            b: self.b,
            alpha: self.alpha,
        }
    }

    /// `phi` on `[a, b]`, `theta` elsewhere.
    pub fn value(&self, x: f64) -> f64 {
        if x >= self.a && x <= self.b {
            self.coeffs.value(x)
        } else {
            self.theta
        }
    }

    /// Re-runs the verification with the current fields.
    pub fn reverify(&self, params: &ModelParams, tol: &VerifyTolerances) -> VerificationReport {
        verify_band(&self.coeffs, self.a, self.b, self.alpha, self.theta, params, tol)
    }

    pub fn to_record(&self) -> SolutionRecord {
        SolutionRecord {
            a_coef: self.coeffs.a_coef,
            b_coef: self.coeffs.b_coef,
            a: self.a,
            b: self.b,
            alpha: self.alpha,
            theta: self.theta,
            residual_norm: self.residual_norm,
            checks: self.verification,
        }
    }

    /// Rebuilds a solution from its serialised form; exponents and the
    /// particular part come from `params`.
    pub fn from_record(record: &SolutionRecord, params: &ModelParams) -> Result<Self> {
        let coeffs = ValueCoeffs::new(params, record.a_coef, record.b_coef)?;
        record.policy().validate()?;
        Ok(PolicySolution {
            coeffs,
            a: record.a,
            b: record.b,
            alpha: record.alpha,
            theta: record.theta,
            residual_norm: record.residual_norm,
            iterations: 0,
            verification: record.checks,
        })
    }
}

/// Flat JSON form of a [`PolicySolution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionRecord {
    #[serde(rename = "A")]
    pub a_coef: f64,
    #[serde(rename = "B")]
    pub b_coef: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub theta: f64,
    pub residual_norm: f64,
    pub checks: VerificationReport,
}

impl SolutionRecord {
    pub fn policy(&self) -> BandPolicy {
        BandPolicy {
            a: self.a,
            b: self.b,
            alpha: self.alpha,
        }
    }
}

/// Verification report for `sol` under `params` with default tolerances.
pub fn verify(sol: &PolicySolution, params: &ModelParams) -> VerificationReport {
    sol.reverify(params, &VerifyTolerances::default())
}

pub fn value_function(sol: &PolicySolution, x: f64) -> f64 {
    sol.value(x)
}

/// `(A, B)` making `phi'(a) = phi'(b) = 0`.
fn pasting_coefficients(template: &ValueCoeffs, a: f64, b: f64) -> Option<(f64, f64)> {
    let (g1, g2) = (template.gamma1, template.gamma2);
    let m11 = g1 * a.powf(g1 - 1.0);
    let m12 = g2 * a.powf(g2 - 1.0);
    let m21 = g1 * b.powf(g1 - 1.0);
    let m22 = g2 * b.powf(g2 - 1.0);
    let r1 = -(2.0 * template.c2 * a + template.c1);
    let r2 = -(2.0 * template.c2 * b + template.c1);
    let det = m11 * m22 - m12 * m21;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(((r1 * m22 - m12 * r2) / det, (m11 * r2 - r1 * m21) / det))
}

/// Minimiser of `phi` on `[a, b]` by grid search and golden-section refinement.
fn interior_minimum(coeffs: &ValueCoeffs, a: f64, b: f64) -> (f64, f64) {
    const GRID: usize = 64;
    let h = (b - a) / GRID as f64;
    let (k, _) = (1..GRID)
        .map(|k| (k, coeffs.value(a + h * k as f64)))
        .fold((1, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let (mut lo, mut hi) = (a + h * (k - 1) as f64, a + h * (k + 1) as f64);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let x1 = hi - ratio * (hi - lo);
        let x2 = lo + ratio * (hi - lo);
        if coeffs.value(x1) < coeffs.value(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, coeffs.value(x))
}

/// Coarse initial guess for the no-reaction problem.
///
/// For fixed edges `(a, b)` smooth pasting fixes `(A, B)` linearly and the
/// optimal restart is the minimiser of `phi`; what remains is continuity and
/// value matching, minimised in least squares over a zooming grid.
fn baseline_guess(params: &ModelParams, cost: &CostSpec) -> Result<Unknowns> {
    let template = ValueCoeffs::new(params, 0.0, 0.0)?;
    let eval = |a: f64, b: f64| -> Option<(f64, Unknowns)> {
        if !(a > 0.0 && a < b) {
            return None;
        }
        let (a_coef, b_coef) = pasting_coefficients(&template, a, b)?;
        let coeffs = template.with_homogeneous(a_coef, b_coef);
        let (alpha, phi_alpha) = interior_minimum(&coeffs, a, b);
        let (phi_a, phi_b) = (coeffs.value(a), coeffs.value(b));
        if !(phi_alpha < phi_a.min(phi_b)) || !(alpha > a && alpha < b) {
            return None;
        }
        let r1 = phi_a - phi_alpha - cost.k_fixed;
        let r2 = phi_b - phi_a;
        let score = r1 * r1 + r2 * r2;
        score.is_finite().then_some((
            score,
            Unknowns {
                a_coef,
                b_coef,
                a,
                b,
                alpha,
            },
        ))
    };

    // search in log-distance from the target
    let rho = params.rho;
    let (mut lo_a, mut hi_a) = ((1e-3f64).ln(), (0.999f64).ln());
    let (mut lo_b, mut hi_b) = ((1.001f64).ln(), (20.0f64).ln());
    let mut best: Option<(f64, Unknowns)> = None;
    for (round, n) in [48usize, 21, 21, 21, 21].into_iter().enumerate() {
        let step_a = (hi_a - lo_a) / (n - 1) as f64;
        let step_b = (hi_b - lo_b) / (n - 1) as f64;
        let mut round_best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in 0..n {
                let a = rho * (lo_a + step_a * i as f64).exp();
                let b = rho * (lo_b + step_b * j as f64).exp();
                if let Some((score, u)) = eval(a, b) {
                    if round_best.map_or(true, |(s, _, _)| score < s) {
                        round_best = Some((score, i, j));
                        best = Some((score, u));
                    }
                }
            }
        }
        let Some((_, i, j)) = round_best else {
            if round == 0 {
                return Err(Error::NoConvergence {
                    iterations: 0,
                    residual_norm: f64::NAN,
                    reason: "no admissible band found for the initial guess".into(),
                    trace: Vec::new(),
                });
            }
            break;
        };
        let (ca, cb) = (lo_a + step_a * i as f64, lo_b + step_b * j as f64);
        lo_a = ca - 2.0 * step_a;
        hi_a = (ca + 2.0 * step_a).min(-1e-6);
        lo_b = (cb - 2.0 * step_b).max(1e-6);
        hi_b = cb + 2.0 * step_b;
    }
    Ok(best.expect("first round found a band").1)
}

/// Optimal band without market reaction.
pub fn solve_t0(params: &ModelParams, cost: &CostSpec, config: &SolverConfig) -> Result<PolicySolution> {
    let system = FreeBoundarySystem::no_reaction(*params, *cost, config)?;
    let guess = baseline_guess(params, cost)?;
    let (u, norm, iterations) = system.newton(&guess, config)?;
    Ok(system.finish(u, norm, iterations))
}

/// Newton from an explicit guess, no fallback.
pub fn solve_from(
    params: &ModelParams,
    cost: &CostSpec,
    law: &ReactionLaw,
    config: &SolverConfig,
    guess: &Unknowns,
) -> Result<PolicySolution> {
    let system = FreeBoundarySystem::new(*params, *cost, law, config)?;
    let (u, norm, iterations) = system.newton(guess, config)?;
    Ok(system.finish(u, norm, iterations))
}

/// Optimal band under the reaction law `law`.
///
/// Starts Newton from the no-reaction solution. If that fails, the reaction
/// is switched on gradually (period and shifts scaled by `k / steps`), each
/// stage warm-started from the previous one; failing stages are split in two.
pub fn solve(params: &ModelParams, cost: &CostSpec, law: &ReactionLaw, config: &SolverConfig) -> Result<PolicySolution> {
    law.validate(params)?;
    let target = FreeBoundarySystem::new(*params, *cost, law, config)?;
    let base = solve_t0(params, cost, config)?;
    let cold = target.newton(&base.unknowns(), config);
    let cold_err = match cold {
        Ok((u, norm, iterations)) => return Ok(target.finish(u, norm, base.iterations + iterations)),
        Err(err) => err,
    };
    if config.homotopy_steps == 0 {
        return Err(cold_err);
    }

    let min_step = 1.0 / (config.homotopy_steps as f64 * f64::from(1u32 << MAX_HOMOTOPY_REFINEMENTS));
    let mut step = 1.0 / config.homotopy_steps as f64;
    let mut reached = 0.0;
    let mut guess = base.unknowns();
    let mut total_iterations = base.iterations;
    while reached < 1.0 {
        let next = (reached + step).min(1.0);
        let system = if next == 1.0 {
            target.clone()
        } else {
            FreeBoundarySystem::new(*params, *cost, &law.scaled(next), config)?
        };
        match system.newton(&guess, config) {
            Ok((u, norm, iterations)) => {
                total_iterations += iterations;
                guess = u;
                reached = next;
                if reached == 1.0 {
                    return Ok(target.finish(u, norm, total_iterations));
                }
            }
            Err(err) => {
                step *= 0.5;
                if step < min_step {
                    return Err(err);
                }
            }
        }
    }
    unreachable!("homotopy loop exits through return")
}

/// Fixed cost for which the no-reaction band best matches `(target_a,
/// target_b)` in least squares, searched by golden section on `[k_lo, k_hi]`.
pub fn calibrate_cost_to_band(
    params: &ModelParams,
    target_a: f64,
    target_b: f64,
    k_lo: f64,
    k_hi: f64,
    config: &SolverConfig,
) -> Result<(CostSpec, PolicySolution)> {
    let mismatch = |k: f64| -> Result<(f64, PolicySolution)> {
        let sol = solve_t0(params, &CostSpec::new(k)?, config)?;
        let da = sol.a - target_a;
        let db = sol.b - target_b;
        Ok((da * da + db * db, sol))
    };
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (k_lo, k_hi);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = mismatch(x1)?.0;
    let mut f2 = mismatch(x2)?.0;
    for _ in 0..60 {
        if (hi - lo) < 1e-10 * (1.0 + lo.abs()) {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = mismatch(x1)?.0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = mismatch(x2)?.0;
        }
    }
    let k = 0.5 * (lo + hi);
    let (_, sol) = mismatch(k)?;
    Ok((CostSpec::new(k)?, sol))
}
