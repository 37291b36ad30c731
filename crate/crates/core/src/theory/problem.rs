use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One group of a [`ConvexProblem`]: per-example losses
/// `scale * ||theta - c||^2` over a finite set of centers `c`, drawn
/// uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticGroup {
    pub scale: f64,
    pub centers: Vec<Vec<f64>>,
}

impl QuadraticGroup {
    pub fn new(scale: f64, centers: Vec<Vec<f64>>) -> Self {
        Self { scale, centers }
    }

    /// A group with a single center, i.e. a deterministic loss.
    pub fn point(scale: f64, center: Vec<f64>) -> Self {
        Self::new(scale, vec![center])
    }
}

/// Convex, nonnegative per-group losses on the box `[-radius, radius]^d`,
/// with closed-form group risks
/// `scale * (||theta - mean||^2 + spread)` where `spread` is the mean squared
/// distance of the centers to their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProblem {
    pub radius: f64,
    pub groups: Vec<QuadraticGroup>,
    dim: usize,
    means: Vec<Vec<f64>>,
    spreads: Vec<f64>,
}

/// Constants entering the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    /// Bound on `||theta||_2` over the feasible set.
    pub b_theta: f64,
    /// Bound on per-example gradient norms.
    pub b_grad: f64,
    /// Bound on per-example losses.
    pub b_loss: f64,
    pub t: usize,
}

impl BoundInputs {
    pub fn new(m: usize, b_theta: f64, b_grad: f64, b_loss: f64, t: usize) -> Result<Self> {
        let ok = m >= 1
            && t >= 1
            && [b_theta, b_grad, b_loss]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::invalid("bound inputs must all be positive"));
        }
        Ok(Self {
            m,
            b_theta,
            b_grad,
            b_loss,
            t,
        })
    }

    pub fn with_t(self, t: usize) -> Self {
        Self { t, ..self }
    }
}

/// Expected-error bound for the average iterate of the online algorithm:
/// `2 m sqrt(10 (B_theta^2 B_grad^2 + B_loss^2 ln m) / T)`.
pub fn convergence_bound(inputs: &BoundInputs) -> f64 {
    let m = inputs.m as f64;
    let inner = inputs.b_theta.powi(2) * inputs.b_grad.powi(2) + inputs.b_loss.powi(2) * m.ln();
    2.0 * m * (10.0 * inner / inputs.t as f64).sqrt()
}

/// Constant step sizes for a horizon of `T` steps, from the mirror-descent
/// saddle-point analysis behind [`convergence_bound`]: with
/// `K = B_theta^2 B_grad^2 + B_loss^2 ln m`,
/// `eta_theta = 4 B_theta^2 / sqrt(10 K T)` and `eta_q = 4 ln m / sqrt(10 K T)`.
pub fn designed_step_sizes(inputs: &BoundInputs) -> (f64, f64) {
    let m = inputs.m as f64;
    let k = inputs.b_theta.powi(2) * inputs.b_grad.powi(2) + inputs.b_loss.powi(2) * m.ln();
    let denom = (10.0 * k * inputs.t as f64).sqrt();
    (4.0 * inputs.b_theta.powi(2) / denom, 4.0 * m.ln() / denom)
}

impl ConvexProblem {
    pub fn new(radius: f64, groups: Vec<QuadraticGroup>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("box radius must be positive"));
        }
        let first = groups
            .first()
            .and_then(|g| g.centers.first())
            .ok_or_else(|| Error::invalid("problem needs at least one group with a center"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let mut means = Vec::with_capacity(groups.len());
        let mut spreads = Vec::with_capacity(groups.len());
        for (g, grp) in groups.iter().enumerate() {
            if !(grp.scale > 0.0 && grp.scale.is_finite()) {
                return Err(Error::invalid(format!("group {g}: scale must be positive")));
            }
            if grp.centers.is_empty() {
                return Err(Error::invalid(format!("group {g} has no centers")));
            }
            if grp
                .centers
                .iter()
                .any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::invalid(format!("group {g}: bad center")));
            }
            let n = grp.centers.len() as f64;
            let mean: Vec<f64> = (0..dim)
                .map(|j| grp.centers.iter().map(|c| c[j]).sum::<f64>() / n)
                .collect();
            let spread = grp.centers.iter().map(|c| sq_dist(c, &mean)).sum::<f64>() / n;
            means.push(mean);
            spreads.push(spread);
        }
        Ok(Self {
            radius,
            groups,
            dim,
            means,
            spreads,
        })
    }

    /// The two-group instance used for the convergence check, on `[-1, 1]`.
    /// Group 0 pulls toward 0.5, group 1 (three times the scale) toward -0.4;
    /// the saddle sits where the two group risks cross, with `q*` away from
    /// uniform.
    pub fn certified_two_group() -> Self {
        Self::new(
            1.0,
            vec![
                QuadraticGroup::new(1.0, vec![vec![0.3], vec![0.7]]),
                QuadraticGroup::new(3.0, vec![vec![-0.6], vec![-0.2]]),
            ],
        )
        .expect("static instance is valid")
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_size(&self, g: usize) -> usize {
        self.groups[g].centers.len()
    }

    pub fn example_loss(&self, theta: &[f64], g: usize, i: usize) -> f64 {
        self.groups[g].scale * sq_dist(theta, &self.groups[g].centers[i])
    }

    pub fn example_grad(&self, theta: &[f64], g: usize, i: usize, out: &mut [f64]) {
        let s = 2.0 * self.groups[g].scale;
        for ((o, t), c) in out.iter_mut().zip(theta).zip(&self.groups[g].centers[i]) {
            *o = s * (t - c);
        }
    }

    /// Expected loss of group `g` at `theta`.
    pub fn group_loss(&self, theta: &[f64], g: usize) -> f64 {
        self.groups[g].scale * (sq_dist(theta, &self.means[g]) + self.spreads[g])
    }

    pub fn group_grad(&self, theta: &[f64], g: usize) -> Vec<f64> {
        let s = 2.0 * self.groups[g].scale;
        theta
            .iter()
            .zip(&self.means[g])
            .map(|(t, c)| s * (t - c))
            .collect()
    }

    /// `max_g group_loss(theta, g)`.
    pub fn worst_loss(&self, theta: &[f64]) -> f64 {
        (0..self.num_groups())
            .map(|g| self.group_loss(theta, g))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn project(&self, theta: &mut [f64]) {
        for t in theta.iter_mut() {
            *t = t.clamp(-self.radius, self.radius);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim && theta.iter().all(|t| t.abs() <= self.radius)
    }

    /// Largest squared distance from a center of group `g` to the box.
    fn max_sq_dist(&self, g: usize) -> f64 {
        let r = self.radius;
        self.groups[g]
            .centers
            .iter()
            .map(|c| c.iter().map(|v| (r + v.abs()).powi(2)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Analytic constants for the box: `B_theta = r sqrt(d)`, and the
    /// maxima over the box and all centers of the per-example gradient norm
    /// and loss.
    pub fn bound_inputs(&self, t: usize) -> BoundInputs {
        let (mut b_grad, mut b_loss) = (0.0f64, 0.0f64);
        for g in 0..self.num_groups() {
            let d2 = self.max_sq_dist(g);
            let s = self.groups[g].scale;
            b_loss = b_loss.max(s * d2);
            b_grad = b_grad.max(2.0 * s * d2.sqrt());
        }
        BoundInputs {
            m: self.num_groups(),
            b_theta: self.radius * (self.dim as f64).sqrt(),
            b_grad,
            b_loss,
            t,
        }
    }

    /// Lipschitz constant of `worst_loss` on the box.
    pub(crate) fn worst_loss_lipschitz(&self) -> f64 {
        (0..self.num_groups())
            .map(|g| {
                let r = self.radius;
                let d2: f64 = self.means[g].iter().map(|v| (r + v.abs()).powi(2)).sum();
                2.0 * self.groups[g].scale * d2.sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}
