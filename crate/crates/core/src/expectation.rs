//! The intervention operator for a band policy.
//!
//! Restarting at `alpha` costs
//!
//! ```text
//! K + E[Ktilde(alpha)] + E[e^{-rT} V(X_alpha(T))]
//! ```
//!
//! where the outer expectation runs over the reaction law and `V` equals
//! `phi` on `(a, b)` and the constant `theta` outside. The outer expectation
//! is a finite sum over [`ReactionNodes`]; the inner one integrates `phi`
//! against the lognormal density over the band in log coordinates and adds
//! `theta` times the exact tail mass.

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ktilde_dx, ktilde_fixed, CostSpec, LogNormal, ModelParams, ReactionLaw, ScalarLaw, ValueCoeffs};

pub const DEFAULT_N_INNER: usize = 200;
pub const DEFAULT_N_QUAD: usize = 32;

/// Half-width, in standard deviations, of the window on which the inner
/// integral is evaluated. Mass beyond it is below 1e-32.
const WINDOW_SCALES: f64 = 12.0;

/// One atom of the discretised reaction law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionNode {
    pub t: f64,
    pub sigma2: f64,
    pub mu2: f64,
    pub weight: f64,
}

impl ReactionNode {
    /// True when the state after the reaction is deterministic.
    pub fn is_point_mass(&self) -> bool {
        self.t * self.sigma2 * self.sigma2 == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionNodes {
    nodes: Vec<ReactionNode>,
}

impl ReactionNodes {
    /// Single node `T = 0`: the restart point is kept as is.
    pub fn no_reaction(params: &ModelParams) -> Self {
        ReactionNodes {
            nodes: vec![ReactionNode {
                t: 0.0,
                sigma2: params.sigma,
                mu2: params.mu,
                weight: 1.0,
            }],
        }
    }

    pub fn as_slice(&self) -> &[ReactionNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

/// Gauss-Legendre nodes and weights on `[lo, hi]`, weights normalised to 1.
fn uniform_atoms(lo: f64, hi: f64, n_quad: usize) -> Vec<(f64, f64)> {
    if lo == hi || n_quad == 1 {
        return vec![(0.5 * (lo + hi), 1.0)];
    }
    let rule = GaussLegendre::new(n_quad).expect("rule with at least two nodes");
    let mut atoms: Vec<(f64, f64)> = rule
        .iter()
        .map(|(node, weight)| (0.5 * ((hi - lo) * node + (hi + lo)), 0.5 * weight))
        .collect();
    atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
    atoms
}

fn marginal_atoms(law: &ScalarLaw, n_quad: usize) -> Vec<(f64, f64)> {
    match law {
        ScalarLaw::Point(v) => vec![(*v, 1.0)],
        ScalarLaw::Uniform { lo, hi } => uniform_atoms(*lo, *hi, n_quad),
        ScalarLaw::Discrete(atoms) => atoms.iter().map(|a| (a.value, a.prob)).collect(),
    }
}

/// Discretises a reaction law into weighted `(t, sigma2, mu2)` nodes.
///
/// Point laws give one atom, discrete laws their support and uniform laws
/// `n_quad` Gauss-Legendre points. The joint nodes are the product of the
/// three independent marginals.
pub fn build_nodes(law: &ReactionLaw, params: &ModelParams, n_quad: usize) -> Result<ReactionNodes> {
    if n_quad == 0 {
        return Err(Error::InvalidParameter("n_quad must be >= 1".into()));
    }
    law.validate(params)?;
    let ts = marginal_atoms(&law.t, n_quad);
    let sigmas = marginal_atoms(&law.sigma_shift, n_quad);
    let mus = marginal_atoms(&law.mu_shift, n_quad);
    let mut nodes = Vec::with_capacity(ts.len() * sigmas.len() * mus.len());
    for &(t, wt) in &ts {
        for &(ds, ws) in &sigmas {
            for &(dm, wm) in &mus {
                nodes.push(ReactionNode {
                    t,
                    sigma2: params.sigma + ds,
                    mu2: params.mu + dm,
                    weight: wt * ws * wm,
                });
            }
        }
    }
    Ok(ReactionNodes { nodes })
}

/// `phi` on the band together with its constant extension `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandValue {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub coeffs: ValueCoeffs,
}

impl BandValue {
    pub fn new(coeffs: ValueCoeffs, a: f64, b: f64, theta: f64) -> Result<Self> {
        if !(a > 0.0 && a < b) {
            return Err(Error::InvalidParameter(format!("band needs 0 < a < b, got a={a}, b={b}")));
        }
        Ok(BandValue { a, b, theta, coeffs })
    }

    /// Band with `theta = phi(a)`.
    pub fn anchored(coeffs: ValueCoeffs, a: f64, b: f64) -> Result<Self> {
        Self::new(coeffs, a, b, coeffs.value(a))
    }

    /// `phi(x)` inside `(a, b)`, `theta` elsewhere.
    #[inline]
    pub fn extended(&self, x: f64) -> f64 {
        if x > self.a && x < self.b {
            self.coeffs.value(x)
        } else {
            self.theta
        }
    }

    #[inline]
    pub fn extended_slope(&self, x: f64) -> f64 {
        if x > self.a && x < self.b {
            self.coeffs.derivative(x)
        } else {
            0.0
        }
    }
}

/// Evaluates the intervention operator for a fixed model and reaction law.
///
/// Sums over nodes run in node order, so results are reproducible.
#[derive(Debug, Clone)]
pub struct InterventionOperator {
    params: ModelParams,
    nodes: ReactionNodes,
    /// Gauss-Legendre rule on [-1, 1].
    rule: Vec<(f64, f64)>,
}

impl InterventionOperator {
    pub fn new(params: ModelParams, nodes: ReactionNodes, n_inner: usize) -> Result<Self> {
        if n_inner < 2 {
            return Err(Error::InvalidParameter(format!("n_inner must be >= 2, got {n_inner}")));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidLaw("no reaction nodes".into()));
        }
        let rule = GaussLegendre::new(n_inner)
            .expect("rule with at least two nodes")
            .into_node_weight_pairs();
        Ok(InterventionOperator { params, nodes, rule })
    }

    pub fn from_law(params: ModelParams, law: &ReactionLaw, n_quad: usize, n_inner: usize) -> Result<Self> {
        let nodes = build_nodes(law, &params, n_quad)?;
        Self::new(params, nodes, n_inner)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn nodes(&self) -> &ReactionNodes {
        &self.nodes
    }

    /// `E[e^{-rT} V(X_alpha(T))]` and its derivative in `alpha` for one node,
    /// before weighting.
    fn node_terms(&self, band: &BandValue, alpha: f64, node: &ReactionNode, with_derivative: bool) -> (f64, f64) {
        let discount = (-self.params.r * node.t).exp();
        if node.is_point_mass() {
            let growth = (node.mu2 * node.t).exp();
            let x = alpha * growth;
            let d = if with_derivative { band.extended_slope(x) * growth } else { 0.0 };
            return (discount * band.extended(x), discount * d);
        }
        let law = LogNormal::after(alpha, node.t, node.sigma2, node.mu2).expect("non-degenerate node");
        let (m, s) = (law.location, law.scale);
        let la = band.a.ln();
        let lb = band.b.ln();

        let lo = la.max(m - WINDOW_SCALES * s);
        let hi = lb.min(m + WINDOW_SCALES * s);
        let mut inner = 0.0;
        let mut inner_d = 0.0;
        if lo < hi {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let inv_var_alpha = 1.0 / (s * s * alpha);
            for &(node_x, weight) in &self.rule {
                let y = mid + half * node_x;
                let w = weight * half * law.log_density(y) * band.coeffs.value(y.exp());
                inner += w;
                if with_derivative {
                    inner_d += w * (y - m) * inv_var_alpha;
                }
            }
        }
        // P(X <= a) + P(X >= b) in standard normal terms
        let z_a = (la - m) / s;
        let z_b = (lb - m) / s;
        let tail = 0.5 * statrs::function::erf::erfc(-z_a / std::f64::consts::SQRT_2)
            + 0.5 * statrs::function::erf::erfc(z_b / std::f64::consts::SQRT_2);
        let tail_d = if with_derivative {
            (law.log_density(lb) - law.log_density(la)) / alpha
        } else {
            0.0
        };
        (
            discount * (inner + band.theta * tail),
            discount * (inner_d + band.theta * tail_d),
        )
    }

    fn accumulate(&self, band: &BandValue, alpha: f64, with_derivative: bool) -> (f64, f64) {
        self.nodes.as_slice().iter().fold((0.0, 0.0), |(v, d), node| {
            let (nv, nd) = self.node_terms(band, alpha, node, with_derivative);
            (v + node.weight * nv, d + node.weight * nd)
        })
    }

    /// `E[e^{-rT} V(X_alpha(T))]`.
    pub fn expected_phi_after(&self, band: &BandValue, alpha: f64) -> f64 {
        self.accumulate(band, alpha, false).0
    }

    /// `d/d alpha` of [`Self::expected_phi_after`], differentiating the density.
    pub fn d_dalpha_expected_phi_after(&self, band: &BandValue, alpha: f64) -> f64 {
        self.accumulate(band, alpha, true).1
    }

    /// `E[Ktilde(alpha)]` over the reaction law.
    pub fn expected_ktilde(&self, alpha: f64) -> f64 {
        self.nodes
            .as_slice()
            .iter()
            .map(|n| n.weight * ktilde_fixed(alpha, n.t, n.sigma2, n.mu2, &self.params))
            .sum()
    }

    pub fn d_dalpha_expected_ktilde(&self, alpha: f64) -> f64 {
        self.nodes
            .as_slice()
            .iter()
            .map(|n| n.weight * ktilde_dx(alpha, n.t, n.sigma2, n.mu2, &self.params))
            .sum()
    }

    /// Cost of intervening and restarting at `alpha`. Independent of the
    /// pre-intervention state because the cost is fixed.
    pub fn intervention_value(&self, band: &BandValue, alpha: f64, cost: &CostSpec) -> f64 {
        cost.k_fixed + self.expected_ktilde(alpha) + self.expected_phi_after(band, alpha)
    }

    /// `d/d alpha` of [`Self::intervention_value`]; zero at the optimal restart.
    pub fn d_dalpha_intervention_value(&self, band: &BandValue, alpha: f64) -> f64 {
        self.d_dalpha_expected_ktilde(alpha) + self.d_dalpha_expected_phi_after(band, alpha)
    }

    /// Value and restart-derivative in a single pass.
    pub fn intervention_value_and_slope(&self, band: &BandValue, alpha: f64, cost: &CostSpec) -> (f64, f64) {
        let (v, d) = self.accumulate(band, alpha, true);
        (
            cost.k_fixed + self.expected_ktilde(alpha) + v,
            self.d_dalpha_expected_ktilde(alpha) + d,
        )
    }
}

pub fn expected_phi_after(
    band: &BandValue,
    alpha: f64,
    nodes: &ReactionNodes,
    params: &ModelParams,
    n_inner: usize,
) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(InterventionOperator::new(*params, nodes.clone(), n_inner)?.expected_phi_after(band, alpha))
}

pub fn d_dalpha_expected_phi_after(
    band: &BandValue,
    alpha: f64,
    nodes: &ReactionNodes,
    params: &ModelParams,
    n_inner: usize,
) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(InterventionOperator::new(*params, nodes.clone(), n_inner)?.d_dalpha_expected_phi_after(band, alpha))
}

pub fn intervention_value(
    band: &BandValue,
    alpha: f64,
    nodes: &ReactionNodes,
    cost: &CostSpec,
    params: &ModelParams,
    n_inner: usize,
) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(InterventionOperator::new(*params, nodes.clone(), n_inner)?.intervention_value(band, alpha, cost))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("restart point must be > 0, got {alpha}")))
    }
}
