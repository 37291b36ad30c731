use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupWeights;
use crate::error::{Error, Result};
use crate::optimizer::eg_update;

use super::problem::{convergence_bound, designed_step_sizes, ConvexProblem};
use super::saddle::{convergence_error, reference_saddle, SaddlePoint};

/// Final state of one online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRun {
    pub theta: Vec<f64>,
    /// Mean of the iterates `theta(1..=T)`.
    pub theta_bar: Vec<f64>,
    pub q: Vec<f64>,
}

/// The per-example online algorithm on a [`ConvexProblem`]: draw a group
/// uniformly and an example within it, raise that group's weight by
/// `exp(eta_q * loss)`, then take a projected step along `-q_g * grad`.
/// No momentum and no minibatching.
pub fn run_online(
    problem: &ConvexProblem,
    steps: usize,
    eta_theta: f64,
    eta_q: f64,
    seed: u64,
    theta0: &[f64],
) -> Result<OnlineRun> {
    if theta0.len() != problem.dim() {
        return Err(Error::invalid("initial point has the wrong dimension"));
    }
    if steps == 0 {
        return Err(Error::invalid("need at least one step"));
    }
    let m = problem.num_groups();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = GroupWeights::uniform(m)?;
    let mut theta = theta0.to_vec();
    problem.project(&mut theta);
    let mut theta_bar = vec![0.0; theta.len()];
    let mut grad = vec![0.0; theta.len()];
    for t in 1..=steps {
        let g = if m > 1 { rng.random_range(0..m) } else { 0 };
        let i = rng.random_range(0..problem.group_size(g));
        let loss = problem.example_loss(&theta, g, i);
        q = eg_update(&q, g, loss, eta_q, 0.0).map_err(|e| match e {
            Error::Numerical { message, .. } => Error::Numerical { step: t, message },
            other => other,
        })?;
        problem.example_grad(&theta, g, i, &mut grad);
        let w = eta_theta * q.get(g);
        for (th, gr) in theta.iter_mut().zip(&grad) {
            *th -= w * gr;
        }
        problem.project(&mut theta);
        let inv = 1.0 / t as f64;
        for (b, th) in theta_bar.iter_mut().zip(&theta) {
            *b += (th - *b) * inv;
        }
    }
    Ok(OnlineRun {
        theta,
        theta_bar,
        q: q.into_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub horizons: Vec<usize>,
    pub seeds: usize,
    /// Tolerance passed to the reference saddle solver.
    pub tol: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            horizons: vec![100, 1_000, 10_000, 100_000],
            seeds: 20,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub t: usize,
    pub seed: u64,
    pub eps_t: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub t: usize,
    pub mean_eps: f64,
    pub bound: f64,
    pub eta_theta: f64,
    pub eta_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub saddle: SaddlePoint,
    pub rows: Vec<ConvergenceRow>,
    pub horizons: Vec<HorizonSummary>,
    /// Least-squares slope of `ln(mean eps_T)` against `ln T`.
    pub slope: f64,
}

impl ConvergenceReport {
    /// `T,seed,eps_T,bound` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "T,seed,eps_T,bound")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.t, r.seed, r.eps_t, r.bound)?;
        }
        Ok(())
    }
}

/// Runs the online algorithm with the designed step sizes for every horizon
/// and seed, starting from the box corner `(-r, ..., -r)`, and measures the
/// excess worst-case risk of the average iterate.
pub fn convergence_study(
    problem: &ConvexProblem,
    config: &ConvergenceConfig,
) -> Result<ConvergenceReport> {
    if config.horizons.is_empty() || config.seeds == 0 {
        return Err(Error::invalid("need at least one horizon and one seed"));
    }
    let saddle = reference_saddle(problem, config.tol)?;
    let theta0 = vec![-problem.radius; problem.dim()];
    let jobs: Vec<(usize, u64)> = config
        .horizons
        .iter()
        .flat_map(|&t| (0..config.seeds as u64).map(move |s| (t, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(t, seed)| {
            let inputs = problem.bound_inputs(t);
            let (eta_theta, eta_q) = designed_step_sizes(&inputs);
            let run = run_online(problem, t, eta_theta, eta_q, seed, &theta0)?;
            Ok(ConvergenceRow {
                t,
                seed,
                eps_t: convergence_error(&run.theta_bar, problem, &saddle),
                bound: convergence_bound(&inputs),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let horizons: Vec<HorizonSummary> = config
        .horizons
        .iter()
        .map(|&t| {
            let eps: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| r.eps_t).collect();
            let inputs = problem.bound_inputs(t);
            let (eta_theta, eta_q) = designed_step_sizes(&inputs);
            HorizonSummary {
                t,
                mean_eps: eps.iter().sum::<f64>() / eps.len() as f64,
                bound: convergence_bound(&inputs),
                eta_theta,
                eta_q,
            }
        })
        .collect();
    let points: Vec<(f64, f64)> = horizons
        .iter()
        .map(|h| ((h.t as f64).ln(), h.mean_eps.ln()))
        .collect();
    Ok(ConvergenceReport {
        saddle,
        rows,
        slope: least_squares_slope(&points),
        horizons,
    })
}

pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
