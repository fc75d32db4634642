//! Reference scenarios: the base market `mu = 0.1, sigma = 0.3, r = 0.06,
//! rho = 1.4` with fixed cost 0.5 under a range of reactions.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostSpec, ModelParams, ReactionLaw, ScalarLaw};
use crate::solver::{solve, SolverConfig};

pub const REFERENCE_COST: f64 = 0.5;
/// Fixed cost whose no-reaction band matches the band under a unit reaction
/// period with volatility 0.4.
pub const MATCHED_COST: f64 = 0.63;

pub fn reference_params() -> ModelParams {
    ModelParams {
        mu: 0.1,
        sigma: 0.3,
        r: 0.06,
        rho: 1.4,
    }
}

/// Unit reaction period during which the volatility rises to 0.4.
pub fn unit_volatility_reaction() -> ReactionLaw {
    ReactionLaw::fixed(1.0, 0.1, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    /// No reaction, unit reaction, and no reaction with a matched cost.
    ReactionCompare,
    /// Unit reaction period with different volatility and drift shifts.
    Statics,
    /// Volatility rising to 0.4 for reaction periods of different length.
    Horizon,
}

impl FromStr for TableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reaction-compare" => Ok(TableKind::ReactionCompare),
            "statics" => Ok(TableKind::Statics),
            "horizon" => Ok(TableKind::Horizon),
            other => Err(Error::InvalidParameter(format!(
                "unknown table `{other}`; expected reaction-compare, statics or horizon"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: &'static str,
    pub cost: CostSpec,
    pub law: ReactionLaw,
}

fn scenario(label: &'static str, k: f64, law: ReactionLaw) -> Scenario {
    Scenario {
        label,
        cost: CostSpec { k_fixed: k },
        law,
    }
}

pub fn scenarios(kind: TableKind) -> Vec<Scenario> {
    let base = reference_params();
    match kind {
        TableKind::ReactionCompare => vec![
            scenario("T=0", REFERENCE_COST, ReactionLaw::none()),
            scenario("T=1", REFERENCE_COST, unit_volatility_reaction()),
            scenario("T=0 K=0.63", MATCHED_COST, ReactionLaw::none()),
        ],
        TableKind::Statics => {
            let reaction = |sigma2: f64, mu2: f64| ReactionLaw::fixed(1.0, sigma2 - base.sigma, mu2 - base.mu);
            vec![
                scenario("No reaction", REFERENCE_COST, ReactionLaw::none()),
                scenario("Volatility increases", REFERENCE_COST, reaction(0.4, 0.1)),
                scenario("Volatility decreases", REFERENCE_COST, reaction(0.1, 0.1)),
                scenario("Drift increases", REFERENCE_COST, reaction(0.3, 0.15)),
                scenario("Drift decreases", REFERENCE_COST, reaction(0.3, 0.05)),
            ]
        }
        TableKind::Horizon => vec![
            scenario("T=0", REFERENCE_COST, ReactionLaw::none()),
            scenario("T=1", REFERENCE_COST, unit_volatility_reaction()),
            scenario("T=2", REFERENCE_COST, ReactionLaw::fixed(2.0, 0.1, 0.0)),
            scenario(
                "T~U[0,1]",
                REFERENCE_COST,
                ReactionLaw {
                    t: ScalarLaw::Uniform { lo: 0.0, hi: 1.0 },
                    sigma_shift: ScalarLaw::Point(0.1),
                    mu_shift: ScalarLaw::Point(0.0),
                },
            ),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    /// Solver failure for this row, if any.
    pub error: Option<String>,
}

/// Solves every row; a failing row is reported and the rest still run.
pub fn build_table(kind: TableKind, config: &SolverConfig) -> Vec<TableRow> {
    let params = reference_params();
    scenarios(kind)
        .into_iter()
        .map(|s| match solve(&params, &s.cost, &s.law, config) {
            Ok(sol) => TableRow {
                label: s.label.to_string(),
                a: sol.a,
                b: sol.b,
                alpha: sol.alpha,
                error: None,
            },
            Err(e) => TableRow {
                label: s.label.to_string(),
                a: f64::NAN,
                b: f64::NAN,
                alpha: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// `label,a,b,alpha` rows with three decimals; failed rows read `ERROR`.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("label,a,b,alpha\n");
    for row in rows {
        let label = csv_field(&row.label);
        match &row.error {
            None => writeln!(out, "{label},{:.3},{:.3},{:.3}", row.a, row.b, row.alpha),
            Some(_) => writeln!(out, "{label},ERROR,ERROR,ERROR"),
        }
        .expect("writing to a String");
    }
    out
}
