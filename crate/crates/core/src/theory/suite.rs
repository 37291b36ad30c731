use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::convergence::{convergence_study, ConvergenceConfig, ConvergenceReport};
use super::counterexample::{counterexample_sweep, SweepReport};
use super::problem::{ConvexProblem, QuadraticGroup};
use super::saddle::{check_prop1, Prop1Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteItem {
    Convergence,
    Prop1,
    Counterexample,
}

impl SuiteItem {
    pub const ALL: [SuiteItem; 3] = [
        SuiteItem::Convergence,
        SuiteItem::Prop1,
        SuiteItem::Counterexample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuiteItem::Convergence => "convergence",
            SuiteItem::Prop1 => "prop1",
            SuiteItem::Counterexample => "counterexample",
        }
    }
}

impl fmt::Display for SuiteItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuiteItem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteItem::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown suite '{s}' (expected convergence, prop1 or counterexample)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Run a single suite instead of all three.
    pub only: Option<SuiteItem>,
    /// Tolerance for the reference saddle solver.
    pub tol: f64,
    pub horizons: Vec<usize>,
    pub seeds: usize,
    pub theta_points: usize,
    pub weight_points: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let conv = ConvergenceConfig::default();
        Self {
            only: None,
            tol: conv.tol,
            horizons: conv.horizons,
            seeds: conv.seeds,
            theta_points: 1001,
            weight_points: 101,
        }
    }
}

impl SuiteConfig {
    fn runs(&self, item: SuiteItem) -> bool {
        self.only.is_none_or(|o| o == item)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub suite: SuiteItem,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub assertions: Vec<Assertion>,
    pub convergence: Option<ConvergenceReport>,
    pub prop1: Vec<(String, Prop1Report)>,
    pub counterexample: Option<SweepReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// The three convex instances used for the reweighting check.
pub fn prop1_instances() -> Vec<(String, ConvexProblem)> {
    let build = |groups| ConvexProblem::new(2.0, groups).expect("static instance is valid");
    vec![
        (
            "symmetric".to_string(),
            build(vec![
                QuadraticGroup::point(1.0, vec![1.0]),
                QuadraticGroup::point(1.0, vec![-1.0]),
            ]),
        ),
        (
            "asymmetric".to_string(),
            build(vec![
                QuadraticGroup::point(1.0, vec![1.0]),
                QuadraticGroup::point(4.0, vec![-0.5]),
            ]),
        ),
        (
            "single".to_string(),
            build(vec![QuadraticGroup::point(1.0, vec![0.4])]),
        ),
    ]
}

fn check(
    suite: SuiteItem,
    name: impl Into<String>,
    measured: f64,
    threshold: f64,
    passed: bool,
) -> Assertion {
    Assertion {
        suite,
        name: name.into(),
        passed,
        measured,
        threshold,
    }
}

/// Runs the selected theory checks and records every assertion with the
/// measured value and its threshold.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    if !(config.tol > 0.0 && config.tol.is_finite()) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut assertions = Vec::new();

    let convergence = if config.runs(SuiteItem::Convergence) {
        let problem = ConvexProblem::certified_two_group();
        let cc = ConvergenceConfig {
            horizons: config.horizons.clone(),
            seeds: config.seeds,
            tol: config.tol,
        };
        let report = convergence_study(&problem, &cc)?;
        let s = SuiteItem::Convergence;
        for h in &report.horizons {
            assertions.push(check(
                s,
                format!("mean_eps_le_bound_T{}", h.t),
                h.mean_eps,
                h.bound,
                h.mean_eps <= h.bound,
            ));
        }
        let min_eps = report
            .rows
            .iter()
            .map(|r| r.eps_t)
            .fold(f64::INFINITY, f64::min);
        let floor = -100.0 * config.tol.max(1e-12);
        assertions.push(check(
            s,
            "eps_nonnegative",
            min_eps,
            floor,
            min_eps >= floor,
        ));
        if report.horizons.len() >= 2 {
            let ok = (-0.75..=-0.30).contains(&report.slope);
            assertions.push(check(s, "loglog_slope_in_range", report.slope, -0.30, ok));
        }
        Some(report)
    } else {
        None
    };

    let mut prop1 = Vec::new();
    if config.runs(SuiteItem::Prop1) {
        for (name, problem) in prop1_instances() {
            let r = check_prop1(&problem, config.tol)?;
            let threshold = config.tol.max(1e-6);
            assertions.push(check(
                SuiteItem::Prop1,
                format!("{name}_stationarity_gap"),
                r.stationarity_gap,
                threshold,
                r.passed,
            ));
            prop1.push((name, r));
        }
    }

    let counterexample = if config.runs(SuiteItem::Counterexample) {
        let r = counterexample_sweep(config.theta_points, config.weight_points)?;
        let s = SuiteItem::Counterexample;
        let dev = r
            .weighted
            .iter()
            .map(|w| (w.worst_case_loss - 1.0).abs())
            .fold(0.0, f64::max);
        assertions.push(check(
            s,
            "weighted_worst_case_is_1.0",
            dev,
            1e-9,
            dev <= 1e-9,
        ));
        let dt = (r.dro_theta - 0.5).abs();
        assertions.push(check(s, "dro_theta_is_0.5", dt, 1e-9, dt <= 1e-9));
        let dv = (r.dro_value - 0.6).abs();
        assertions.push(check(s, "dro_value_is_0.6", dv, 1e-9, dv <= 1e-9));
        Some(r)
    } else {
        None
    };

    Ok(SuiteReport {
        config: config.clone(),
        assertions,
        convergence,
        prop1,
        counterexample,
    })
}
