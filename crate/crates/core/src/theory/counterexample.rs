//! Two non-convex piecewise-linear losses on `[0, 1]` for which no fixed
//! weighting of the two points recovers the minimax solution.
//!
//! The minimax point is `theta = 0.5` with worst-case loss 0.6. For any
//! weights with `w1 >= w2` the weighted minimizer is `theta = 0`, whose
//! worst-case loss is 1.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Breakpoints `(theta, loss)` of the first loss.
pub const LOSS1_BREAKPOINTS: [(f64, f64); 4] = [(0.0, 0.0), (0.2, 1.0), (0.5, 0.6), (1.0, 1.0)];
/// Breakpoints `(theta, loss)` of the second loss.
pub const LOSS2_BREAKPOINTS: [(f64, f64); 4] = [(0.0, 1.0), (0.5, 0.6), (0.8, 1.0), (1.0, 0.0)];

fn interpolate(points: &[(f64, f64)], theta: f64) -> f64 {
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if theta == x0 {
            return y0;
        }
        if theta == x1 {
            return y1;
        }
        if theta > x0 && theta < x1 {
            return y0 + (theta - x0) / (x1 - x0) * (y1 - y0);
        }
    }
    unreachable!("theta checked to lie in [0, 1]")
}

/// Both losses at `theta`.
pub fn counterexample_losses(theta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    Ok((
        interpolate(&LOSS1_BREAKPOINTS, theta),
        interpolate(&LOSS2_BREAKPOINTS, theta),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedMinimizer {
    pub w1: f64,
    pub w2: f64,
    pub theta: f64,
    pub weighted_value: f64,
    pub worst_case_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub weighted: Vec<WeightedMinimizer>,
    pub dro_theta: f64,
    pub dro_value: f64,
    /// Smallest worst-case loss among all weighted minimizers.
    pub best_weighted_worst_case: f64,
}

/// Grid search over `theta_points` evenly spaced values of `theta` and
/// `weight_points` evenly spaced weights `w1` (keeping `w1 >= w2`). Ties in
/// the minimizers go to the smaller `theta`.
pub fn counterexample_sweep(theta_points: usize, weight_points: usize) -> Result<SweepReport> {
    if theta_points < 101 || weight_points < 11 {
        return Err(Error::invalid(
            "sweep needs at least 101 theta points and 11 weight points",
        ));
    }
    let grid: Vec<(f64, f64, f64)> = (0..theta_points)
        .map(|k| {
            let theta = k as f64 / (theta_points - 1) as f64;
            let (l1, l2) = counterexample_losses(theta).expect("grid inside [0, 1]");
            (theta, l1, l2)
        })
        .collect();

    let mut weighted = Vec::new();
    for i in 0..weight_points {
        let w1 = i as f64 / (weight_points - 1) as f64;
        let w2 = 1.0 - w1;
        if w1 < w2 {
            continue;
        }
        let mut best = (f64::INFINITY, 0usize);
        for (k, &(_, l1, l2)) in grid.iter().enumerate() {
            let v = w1 * l1 + w2 * l2;
            if v < best.0 {
                best = (v, k);
            }
        }
        let (theta, l1, l2) = grid[best.1];
        weighted.push(WeightedMinimizer {
            w1,
            w2,
            theta,
            weighted_value: best.0,
            worst_case_loss: l1.max(l2),
        });
    }

    let mut dro = (f64::INFINITY, 0.0);
    for &(theta, l1, l2) in &grid {
        let v = l1.max(l2);
        if v < dro.0 {
            dro = (v, theta);
        }
    }
    let best_weighted_worst_case = weighted
        .iter()
        .map(|w| w.worst_case_loss)
        .fold(f64::INFINITY, f64::min);
    Ok(SweepReport {
        weighted,
        dro_theta: dro.1,
        dro_value: dro.0,
        best_weighted_worst_case,
    })
}
