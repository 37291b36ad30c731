use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::problem::ConvexProblem;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Reference solution of `min_theta max_g group_loss(theta, g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub theta: Vec<f64>,
    pub q: Vec<f64>,
    pub value: f64,
    /// Groups whose loss at `theta` is within tolerance of `value`.
    pub active: Vec<usize>,
    /// Coordinates pinned to a face of the box.
    pub boundary_coords: Vec<usize>,
}

impl SaddlePoint {
    pub fn on_boundary(&self) -> bool {
        !self.boundary_coords.is_empty()
    }
}

/// Minimizes the convex function `max_g group_loss` over the box by nested
/// golden-section search (one level per coordinate, `d <= 3`), then recovers
/// a maximizing group mixture as the minimum-norm convex combination of the
/// active groups' gradients.
pub fn reference_saddle(problem: &ConvexProblem, tol: f64) -> Result<SaddlePoint> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if problem.dim() > 3 {
        return Err(Error::invalid(format!(
            "reference solver supports d <= 3, got {}",
            problem.dim()
        )));
    }
    let lip = problem.worst_loss_lipschitz().max(1.0);
    let x_tol = tol / (10.0 * lip);
    let width = 2.0 * problem.radius;
    let iters = ((width / x_tol).ln() / (1.0 / INV_PHI).ln())
        .ceil()
        .max(1.0) as usize;

    let mut theta = vec![0.0; problem.dim()];
    let value = nested_min(problem, &mut theta, 0, iters);

    let active_tol = (100.0 * tol).max(1e-9);
    let active: Vec<usize> = (0..problem.num_groups())
        .filter(|&g| problem.group_loss(&theta, g) >= value - active_tol)
        .collect();
    let wall = problem.radius - 10.0 * x_tol;
    let boundary_coords: Vec<usize> = (0..problem.dim())
        .filter(|&j| theta[j].abs() >= wall)
        .collect();

    let grads: Vec<Vec<f64>> = active
        .iter()
        .map(|&g| {
            let mut v = problem.group_grad(&theta, g);
            for &j in &boundary_coords {
                v[j] = 0.0;
            }
            v
        })
        .collect();
    let weights = min_norm_combination(&grads);
    let mut q = vec![0.0; problem.num_groups()];
    for (&g, w) in active.iter().zip(weights) {
        q[g] = w;
    }
    Ok(SaddlePoint {
        theta,
        q,
        value,
        active,
        boundary_coords,
    })
}

/// Minimizes over coordinate `k` (and recursively the following ones) with
/// the earlier coordinates fixed; leaves the minimizer in `theta[k..]`.
fn nested_min(problem: &ConvexProblem, theta: &mut [f64], k: usize, iters: usize) -> f64 {
    if k == theta.len() {
        return problem.worst_loss(theta);
    }
    let eval = |x: f64, theta: &mut [f64]| {
        theta[k] = x;
        nested_min(problem, theta, k + 1, iters)
    };
    let (mut a, mut b) = (-problem.radius, problem.radius);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1, theta);
    let mut f2 = eval(x2, theta);
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1, theta);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2, theta);
        }
    }
    // the interval endpoints catch minima on the box faces
    let mut best = (f64::INFINITY, 0.0);
    for x in [a, 0.5 * (a + b), b, x1, x2] {
        let f = eval(x, theta);
        if f < best.0 {
            best = (f, x);
        }
    }
    eval(best.1, theta)
}

/// Weights on the simplex minimizing `|| sum_i w_i v_i ||`, by exhaustive
/// search over supports (each support solved through its KKT system).
pub(crate) fn min_norm_combination(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len();
    if n == 0 {
        return Vec::new();
    }
    let gram: Vec<Vec<f64>> = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| dot(a, b)).collect())
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1u32 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let Some(w_s) = solve_affine_min_norm(&gram, &support) else {
            continue;
        };
        if w_s.iter().any(|&w| w < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; n];
        for (&i, &v) in support.iter().zip(&w_s) {
            w[i] = v.max(0.0);
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let norm_sq: f64 = (0..n)
            .map(|i| (0..n).map(|j| w[i] * w[j] * gram[i][j]).sum::<f64>())
            .sum();
        if best.as_ref().is_none_or(|(b, _)| norm_sq < *b) {
            best = Some((norm_sq, w));
        }
    }
    best.map(|(_, w)| w)
        .unwrap_or_else(|| vec![1.0 / n as f64; n])
}

/// Solves `min w^T G_S w` subject to `sum w = 1` on the support `S`.
fn solve_affine_min_norm(gram: &[Vec<f64>], support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    // [G 1; 1^T 0] [w; mu] = [0; 1]
    let mut a = vec![vec![0.0; k + 2]; k + 1];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            a[r][c] = gram[i][j];
        }
        a[r][k] = 1.0;
    }
    for c in 0..k {
        a[k][c] = 1.0;
    }
    a[k][k + 1] = 1.0;
    let x = gaussian_solve(a)?;
    Some(x[..k].to_vec())
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gaussian_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r[..n].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_g group_loss(theta_bar, g)` minus the reference saddle value.
pub fn convergence_error(
    theta_bar: &[f64],
    problem: &ConvexProblem,
    reference: &SaddlePoint,
) -> f64 {
    problem.worst_loss(theta_bar) - reference.value
}

/// Outcome of the reweighting-equivalence check on a convex problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub theta_star: Vec<f64>,
    pub q_star: Vec<f64>,
    pub value: f64,
    /// Norm of the part of `sum_g q*_g grad group_loss_g(theta*)` that
    /// violates first-order optimality on the box.
    pub stationarity_gap: f64,
    pub boundary_case: bool,
    pub passed: bool,
}

/// Recovers `q*` from the reference saddle and measures how far `theta*` is
/// from minimizing the `q*`-weighted loss.
pub fn check_prop1(problem: &ConvexProblem, tol: f64) -> Result<Prop1Report> {
    let saddle = reference_saddle(problem, tol)?;
    let mut residual = vec![0.0; problem.dim()];
    for (g, &w) in saddle.q.iter().enumerate() {
        if w > 0.0 {
            for (r, v) in residual
                .iter_mut()
                .zip(problem.group_grad(&saddle.theta, g))
            {
                *r += w * v;
            }
        }
    }
    for &j in &saddle.boundary_coords {
        // at the upper face only a positive derivative is a violation
        residual[j] = if saddle.theta[j] > 0.0 {
            residual[j].max(0.0)
        } else {
            residual[j].min(0.0)
        };
    }
    let gap = dot(&residual, &residual).sqrt();
    let gap_tol = tol.max(1e-6);
    Ok(Prop1Report {
        passed: gap <= gap_tol,
        boundary_case: saddle.on_boundary(),
        theta_star: saddle.theta,
        q_star: saddle.q,
        value: saddle.value,
        stationarity_gap: gap,
    })
}
