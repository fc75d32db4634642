//! Closed-form building blocks of the intervention problem.
//!
//! The uncontrolled exchange rate is a geometric Brownian motion with drift
//! `mu` and volatility `sigma`. After each intervention the rate follows a
//! second GBM `(mu2, sigma2)` for a random reaction period `T`. The running
//! cost is the squared distance to the target rate `rho`, discounted at `r`.
//!
//! On the continuation band the candidate value function is
//!
//! ```text
//! phi(x) = A x^g1 + B x^g2 + c2 x^2 + c1 x + c0
//! ```
//!
//! where `g1 > 0 > g2` are the roots of `0.5 sigma^2 g (g - 1) + mu g - r = 0`
//! and the quadratic part solves `L phi + (x - rho)^2 = 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Minimum admissible magnitude of `r - mu` and `r - sigma^2 - 2 mu`.
pub const DENOMINATOR_GUARD: f64 = 1e-9;

/// Tolerance on the total probability of a discrete law.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Base-regime dynamics and the target rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Drift rate per unit time.
    pub mu: f64,
    /// Volatility per square-root time.
    pub sigma: f64,
    /// Discount rate per unit time.
    pub r: f64,
    /// Target exchange rate.
    pub rho: f64,
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, r: f64, rho: f64) -> Result<Self> {
        let params = ModelParams { mu, sigma, r, rho };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("r", self.r),
            ("rho", self.rho),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {value}")));
            }
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.r <= 0.0 {
            return Err(Error::InvalidParameter(format!("r must be > 0, got {}", self.r)));
        }
        if self.rho <= 0.0 {
            return Err(Error::InvalidParameter(format!("rho must be > 0, got {}", self.rho)));
        }
        check_denominator("r - mu", self.r - self.mu)?;
        check_denominator("r - sigma^2 - 2 mu", self.r - self.sigma * self.sigma - 2.0 * self.mu)?;
        Ok(())
    }

    /// Running cost `f(x) = (x - rho)^2`.
    #[inline]
    pub fn running_cost(&self, x: f64) -> f64 {
        let d = x - self.rho;
        d * d
    }

    /// Base-regime generator `0.5 sigma^2 x^2 phi'' + mu x phi' - r phi`.
    #[inline]
    pub fn generator(&self, x: f64, value: f64, slope: f64, curvature: f64) -> f64 {
        0.5 * self.sigma * self.sigma * x * x * curvature + self.mu * x * slope - self.r * value
    }
}

fn check_denominator(name: &'static str, value: f64) -> Result<()> {
    if value.abs() <= DENOMINATOR_GUARD {
        Err(Error::DegenerateDenominator {
            name,
            value,
            guard: DENOMINATOR_GUARD,
        })
    } else {
        Ok(())
    }
}

/// Fixed cost paid at every intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(rename = "K")]
    pub k_fixed: f64,
}

impl CostSpec {
    pub fn new(k_fixed: f64) -> Result<Self> {
        let cost = CostSpec { k_fixed };
        cost.validate()?;
        Ok(cost)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_fixed.is_finite() && self.k_fixed > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "intervention cost K must be finite and > 0, got {}",
                self.k_fixed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// Law of a scalar reaction variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarLaw {
    Point(f64),
    Uniform { lo: f64, hi: f64 },
    Discrete(Vec<Atom>),
}

impl Default for ScalarLaw {
    fn default() -> Self {
        ScalarLaw::Point(0.0)
    }
}

impl ScalarLaw {
    pub fn validate(&self, name: &str) -> Result<()> {
        match self {
            ScalarLaw::Point(v) => {
                if !v.is_finite() {
                    return Err(Error::InvalidLaw(format!("{name}: point value {v} is not finite")));
                }
            }
            ScalarLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidLaw(format!(
                        "{name}: uniform bounds must be finite with lo <= hi, got [{lo}, {hi}]"
                    )));
                }
            }
            ScalarLaw::Discrete(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::InvalidLaw(format!("{name}: discrete law has no atoms")));
                }
                let mut total = 0.0;
                for atom in atoms {
                    if !atom.value.is_finite() {
                        return Err(Error::InvalidLaw(format!(
                            "{name}: atom value {} is not finite",
                            atom.value
                        )));
                    }
                    if !(atom.prob.is_finite() && atom.prob > 0.0) {
                        return Err(Error::InvalidLaw(format!(
                            "{name}: atom probabilities must be > 0, got {}",
                            atom.prob
                        )));
                    }
                    total += atom.prob;
                }
                if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                    return Err(Error::InvalidLaw(format!(
                        "{name}: probabilities sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest and largest point of the support.
    pub fn support_bounds(&self) -> (f64, f64) {
        match self {
            ScalarLaw::Point(v) => (*v, *v),
            ScalarLaw::Uniform { lo, hi } => (*lo, *hi),
            ScalarLaw::Discrete(atoms) => atoms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                (lo.min(a.value), hi.max(a.value))
            }),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ScalarLaw::Point(v) => *v,
            ScalarLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            ScalarLaw::Discrete(atoms) => atoms.iter().map(|a| a.value * a.prob).sum(),
        }
    }

    /// The law of `factor * X`.
    pub fn scaled(&self, factor: f64) -> ScalarLaw {
        match self {
            ScalarLaw::Point(v) => ScalarLaw::Point(factor * v),
            ScalarLaw::Uniform { lo, hi } => ScalarLaw::Uniform {
                lo: factor * lo,
                hi: factor * hi,
            },
            ScalarLaw::Discrete(atoms) => ScalarLaw::Discrete(
                atoms
                    .iter()
                    .map(|a| Atom {
                        value: factor * a.value,
                        prob: a.prob,
                    })
                    .collect(),
            ),
        }
    }

    /// Draws one value. Point laws consume no randomness; the other variants
    /// consume exactly one uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarLaw::Point(v) => *v,
            ScalarLaw::Uniform { lo, hi } => {
                let u: f64 = rng.gen();
                lo + (hi - lo) * u
            }
            ScalarLaw::Discrete(atoms) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for atom in atoms {
                    acc += atom.prob;
                    if u < acc {
                        return atom.value;
                    }
                }
                atoms[atoms.len() - 1].value
            }
        }
    }
}

/// Joint law of the reaction period and the regime shifts drawn at each
/// intervention. The three components are independent. During the reaction
/// the rate follows a GBM with drift `mu + mu_shift` and volatility
/// `sigma + sigma_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionLaw {
    /// Reaction period length.
    pub t: ScalarLaw,
    #[serde(default)]
    pub sigma_shift: ScalarLaw,
    #[serde(default)]
    pub mu_shift: ScalarLaw,
}

impl Default for ReactionLaw {
    fn default() -> Self {
        ReactionLaw::none()
    }
}

impl ReactionLaw {
    /// No market reaction: `T = 0` almost surely.
    pub fn none() -> Self {
        ReactionLaw {
            t: ScalarLaw::Point(0.0),
            sigma_shift: ScalarLaw::Point(0.0),
            mu_shift: ScalarLaw::Point(0.0),
        }
    }

    /// Deterministic reaction of length `t`.
    pub fn fixed(t: f64, sigma_shift: f64, mu_shift: f64) -> Self {
        ReactionLaw {
            t: ScalarLaw::Point(t),
            sigma_shift: ScalarLaw::Point(sigma_shift),
            mu_shift: ScalarLaw::Point(mu_shift),
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        self.t.validate("t")?;
        self.sigma_shift.validate("sigma_shift")?;
        self.mu_shift.validate("mu_shift")?;
        let (t_lo, _) = self.t.support_bounds();
        if t_lo < 0.0 {
            return Err(Error::InvalidLaw(format!("reaction period must be >= 0, got support min {t_lo}")));
        }
        let (shift_lo, _) = self.sigma_shift.support_bounds();
        if params.sigma + shift_lo <= 0.0 {
            return Err(Error::InvalidLaw(format!(
                "reaction volatility sigma + sigma_shift must be > 0, got {} at the lowest shift",
                params.sigma + shift_lo
            )));
        }
        Ok(())
    }

    /// True when the law puts all mass on `T = 0`.
    pub fn is_trivial(&self) -> bool {
        self.t.support_bounds() == (0.0, 0.0)
    }

    /// Scales the reaction strength: period and both shifts are multiplied
    /// by `factor`, so `factor = 0` is the no-reaction problem.
    pub fn scaled(&self, factor: f64) -> ReactionLaw {
        ReactionLaw {
            t: self.t.scaled(factor),
            sigma_shift: self.sigma_shift.scaled(factor),
            mu_shift: self.mu_shift.scaled(factor),
        }
    }
}

/// Roots `(g1, g2)` with `g1 > 0 > g2` of `0.5 sigma^2 g (g - 1) + mu g - r`.
pub fn gamma_roots(params: &ModelParams) -> Result<(f64, f64)> {
    params.validate()?;
    let quad = 0.5 * params.sigma * params.sigma;
    let lin = params.mu - quad;
    let cst = -params.r;
    let disc = (lin * lin - 4.0 * quad * cst).sqrt();
    // Cancellation-free pair of quadratic roots.
    let q = -0.5 * (lin + lin.signum() * disc);
    let (x1, x2) = if q == 0.0 {
        let root = (-cst / quad).sqrt();
        (root, -root)
    } else {
        (q / quad, cst / q)
    };
    let polish = |g: f64| {
        let f = quad * g * g + lin * g + cst;
        let df = 2.0 * quad * g + lin;
        if df != 0.0 {
            g - f / df
        } else {
            g
        }
    };
    let (g1, g2) = if x1 > x2 { (x1, x2) } else { (x2, x1) };
    Ok((polish(g1), polish(g2)))
}

/// Coefficients `(c2, c1, c0)` of the particular solution of `L phi + (x - rho)^2 = 0`.
pub fn particular_coeffs(params: &ModelParams) -> Result<(f64, f64, f64)> {
    params.validate()?;
    let c2 = 1.0 / (params.r - params.sigma * params.sigma - 2.0 * params.mu);
    let c1 = -2.0 * params.rho / (params.r - params.mu);
    let c0 = params.rho * params.rho / params.r;
    Ok((c2, c1, c0))
}

/// Coefficients of the candidate value function on the continuation band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueCoeffs {
    /// Coefficient of `x^gamma1`.
    pub a_coef: f64,
    /// Coefficient of `x^gamma2`.
    pub b_coef: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl ValueCoeffs {
    pub fn new(params: &ModelParams, a_coef: f64, b_coef: f64) -> Result<Self> {
        let (gamma1, gamma2) = gamma_roots(params)?;
        let (c2, c1, c0) = particular_coeffs(params)?;
        Ok(ValueCoeffs {
            a_coef,
            b_coef,
            gamma1,
            gamma2,
            c2,
            c1,
            c0,
        })
    }

    /// Same exponents and particular part, new homogeneous coefficients.
    pub fn with_homogeneous(&self, a_coef: f64, b_coef: f64) -> Self {
        ValueCoeffs {
            a_coef,
            b_coef,
            ..*self
        }
    }

    /// Checks that the exponents and particular part belong to `params`.
    pub fn is_consistent_with(&self, params: &ModelParams, tol: f64) -> bool {
        let Ok(expected) = ValueCoeffs::new(params, self.a_coef, self.b_coef) else {
            return false;
        };
        let close = |x: f64, y: f64| (x - y).abs() <= tol * (1.0 + y.abs());
        self.gamma1 > 0.0
            && self.gamma2 < 0.0
            && close(self.gamma1, expected.gamma1)
            && close(self.gamma2, expected.gamma2)
            && close(self.c2, expected.c2)
            && close(self.c1, expected.c1)
            && close(self.c0, expected.c0)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.a_coef * x.powf(self.gamma1) + self.b_coef * x.powf(self.gamma2) + (self.c2 * x + self.c1) * x + self.c0
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        (self.a_coef * self.gamma1 * x.powf(self.gamma1) + self.b_coef * self.gamma2 * x.powf(self.gamma2)) / x
            + 2.0 * self.c2 * x
            + self.c1
    }

    #[inline]
    pub fn second_derivative(&self, x: f64) -> f64 {
        (self.a_coef * self.gamma1 * (self.gamma1 - 1.0) * x.powf(self.gamma1)
            + self.b_coef * self.gamma2 * (self.gamma2 - 1.0) * x.powf(self.gamma2))
            / (x * x)
            + 2.0 * self.c2
    }

    /// `phi`, `phi'` or `phi''` for `order` 0, 1 or 2.
    pub fn eval(&self, x: f64, order: usize) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::InvalidParameter(format!("phi needs x > 0, got {x}")));
        }
        match order {
            0 => Ok(self.value(x)),
            1 => Ok(self.derivative(x)),
            2 => Ok(self.second_derivative(x)),
            _ => Err(Error::InvalidParameter(format!("derivative order must be 0, 1 or 2, got {order}"))),
        }
    }

    /// `L phi(x) + f(x)`; zero everywhere for a correctly built `phi`.
    pub fn generator_residual(&self, params: &ModelParams, x: f64) -> f64 {
        params.generator(x, self.value(x), self.derivative(x), self.second_derivative(x)) + params.running_cost(x)
    }
}

/// `(e^{qt} - 1) / q`, i.e. `int_0^t e^{qs} ds`.
pub fn growth_integral(q: f64, t: f64) -> f64 {
    let qt = q * t;
    if qt.abs() < 1e-6 {
        t * (1.0 + qt * (0.5 + qt * (1.0 / 6.0 + qt / 24.0)))
    } else {
        qt.exp_m1() / q
    }
}

/// Expected discounted running cost over a reaction period of fixed length
/// `t` started at `x`, with reaction dynamics `(mu2, sigma2)`.
pub fn ktilde_fixed(x: f64, t: f64, sigma2: f64, mu2: f64, params: &ModelParams) -> f64 {
    let r = params.r;
    let rho = params.rho;
    x * x * growth_integral(2.0 * mu2 + sigma2 * sigma2 - r, t) - 2.0 * rho * x * growth_integral(mu2 - r, t)
        + rho * rho * growth_integral(-r, t)
}

/// `d/dx` of [`ktilde_fixed`].
pub fn ktilde_dx(x: f64, t: f64, sigma2: f64, mu2: f64, params: &ModelParams) -> f64 {
    2.0 * x * growth_integral(2.0 * mu2 + sigma2 * sigma2 - params.r, t)
        - 2.0 * params.rho * growth_integral(mu2 - params.r, t)
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Law of `X(t)` for a GBM started at `alpha`, parametrised in log space:
/// `ln X(t) ~ N(location, scale^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormal {
    pub location: f64,
    pub scale: f64,
}

impl LogNormal {
    pub fn after(alpha: f64, t: f64, sigma2: f64, mu2: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !(t >= 0.0) || !(sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("need t >= 0 and sigma2 >= 0, got t={t}, sigma2={sigma2}")));
        }
        let variance = sigma2 * sigma2 * t;
        if variance == 0.0 {
            return Err(Error::DegenerateDistribution);
        }
        Ok(LogNormal {
            location: alpha.ln() + (mu2 - 0.5 * sigma2 * sigma2) * t,
            scale: variance.sqrt(),
        })
    }

    /// Normal density of `ln X` at `y`.
    #[inline]
    pub fn log_density(&self, y: f64) -> f64 {
        let z = (y - self.location) / self.scale;
        INV_SQRT_2PI * (-0.5 * z * z).exp() / self.scale
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.log_density(x.ln()) / x
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        0.5 * erfc(-(x.ln() - self.location) / (self.scale * std::f64::consts::SQRT_2))
    }

    /// `P(X > x)`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        0.5 * erfc((x.ln() - self.location) / (self.scale * std::f64::consts::SQRT_2))
    }

    pub fn median(&self) -> f64 {
        self.location.exp()
    }
}

/// Density of `X(t)` at `x` for a reaction GBM started at `alpha`.
pub fn lognormal_density(x: f64, alpha: f64, t: f64, sigma2: f64, mu2: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("density needs x > 0, got {x}")));
    }
    Ok(LogNormal::after(alpha, t, sigma2, mu2)?.pdf(x))
}

pub fn lognormal_cdf(x: f64, alpha: f64, t: f64, sigma2: f64, mu2: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("cdf needs x > 0, got {x}")));
    }
    Ok(LogNormal::after(alpha, t, sigma2, mu2)?.cdf(x))
}
