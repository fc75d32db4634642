//! Numerical check of the sufficient conditions for optimality of a solved
//! band: the threshold inequalities on `a` and `b`, `V(alpha) < theta`, the
//! first quasi-variational inequality inside and outside the band, `phi <=
//! theta` on the band, and smooth pasting at both edges.
//!
//! Every check reports a margin; positive margins mean slack.

use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, ValueCoeffs};

pub const BAND_GRID_POINTS: usize = 10_000;
pub const OUTSIDE_GRID_POINTS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    /// Bound on `|L phi + f|` inside the band.
    pub generator: f64,
    /// Bound on `|phi'(a)|` and `|phi'(b)|`.
    pub pasting: f64,
    /// Allowed excess of `phi` over `theta` inside the band.
    pub theta_excess: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        VerifyTolerances {
            generator: 1e-6,
            pasting: 1e-9,
            theta_excess: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    pub margin: f64,
}

impl Check {
    fn strict(margin: f64) -> Self {
        Check {
            pass: margin > 0.0,
            margin,
        }
    }

    fn within(margin: f64) -> Self {
        Check {
            pass: margin >= 0.0,
            margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationReport {
    /// `rho - sqrt(r theta) - a`.
    pub cond_lower: Check,
    /// `b - rho - sqrt(r theta)`.
    pub cond_upper: Check,
    /// `theta - phi(alpha)`.
    pub restart_below_theta: Check,
    /// `tol - max |L phi + f|` over the band grid.
    pub generator_in_band: Check,
    /// `min (x - rho)^2 - r theta` over grids on `(0, a]` and `[b, 2b - a]`.
    pub generator_outside: Check,
    /// `theta + tol - max phi` over the band grid.
    pub below_theta: Check,
    /// `tol - max(|phi'(a)|, |phi'(b)|)`.
    pub smooth_pasting: Check,
    pub all_pass: bool,
}

impl VerificationReport {
    pub fn checks(&self) -> [(&'static str, Check); 7] {
        [
            ("cond_lower", self.cond_lower),
            ("cond_upper", self.cond_upper),
            ("restart_below_theta", self.restart_below_theta),
            ("generator_in_band", self.generator_in_band),
            ("generator_outside", self.generator_outside),
            ("below_theta", self.below_theta),
            ("smooth_pasting", self.smooth_pasting),
        ]
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks()
            .into_iter()
            .filter(|(_, c)| !c.pass)
            .map(|(name, _)| name)
            .collect()
    }
}

pub fn verify_band(
    coeffs: &ValueCoeffs,
    a: f64,
    b: f64,
    alpha: f64,
    theta: f64,
    params: &ModelParams,
    tol: &VerifyTolerances,
) -> VerificationReport {
    let half_width = (params.r * theta).sqrt();
    let cond_lower = Check::strict(params.rho - half_width - a);
    let cond_upper = Check::strict(b - (params.rho + half_width));
    let restart_below_theta = Check::strict(theta - coeffs.value(alpha));

    let mut max_generator = 0.0f64;
    let mut max_phi = f64::NEG_INFINITY;
    for k in 1..=BAND_GRID_POINTS {
        let x = a + (b - a) * k as f64 / (BAND_GRID_POINTS + 1) as f64;
        max_generator = max_generator.max(coeffs.generator_residual(params, x).abs());
        max_phi = max_phi.max(coeffs.value(x));
    }

    // outside the band V = theta, so L V + f = -r theta + (x - rho)^2
    let outside = |x: f64| params.running_cost(x) - params.r * theta;
    let lower = (1..=OUTSIDE_GRID_POINTS).map(|k| a * k as f64 / OUTSIDE_GRID_POINTS as f64);
    let upper = (0..OUTSIDE_GRID_POINTS).map(|k| b + (b - a) * k as f64 / (OUTSIDE_GRID_POINTS - 1) as f64);
    let min_outside = lower.chain(upper).map(outside).fold(f64::INFINITY, f64::min);

    let pasting = coeffs.derivative(a).abs().max(coeffs.derivative(b).abs());

    let mut report = VerificationReport {
        cond_lower,
        cond_upper,
        restart_below_theta,
        generator_in_band: Check::within(tol.generator - max_generator),
        generator_outside: Check::within(min_outside),
        below_theta: Check::within(theta + tol.theta_excess - max_phi),
        smooth_pasting: Check::within(tol.pasting - pasting),
        all_pass: false,
    };
    report.all_pass = report.checks().iter().all(|(_, c)| c.pass);
    report
}
