use crate::data::GroupWeights;
use crate::error::{Error, Result};

/// Exponentiated-gradient ascent on the group weights: multiplies `q_g` by
/// `exp(eta_q * (observed_loss + adjustment))` and renormalizes.
///
/// Falls back to log-space arithmetic when the direct product overflows.
pub fn eg_update(
    q: &GroupWeights,
    g: usize,
    observed_loss: f64,
    eta_q: f64,
    adjustment: f64,
) -> Result<GroupWeights> {
    if g >= q.len() {
        return Err(Error::invalid(format!(
            "group {g} out of range for {} weights",
            q.len()
        )));
    }
    if !observed_loss.is_finite() || !adjustment.is_finite() {
        return Err(Error::Numerical {
            step: 0,
            message: format!(
                "non-finite observed loss {observed_loss} (adjustment {adjustment}) for group {g}"
            ),
        });
    }
    if !(eta_q >= 0.0 && eta_q.is_finite()) {
        return Err(Error::invalid(format!("eta_q must be >= 0, got {eta_q}")));
    }
    let exponent = eta_q * (observed_loss + adjustment);
    if exponent == 0.0 {
        return Ok(q.clone());
    }

    let mut next = q.as_slice().to_vec();
    next[g] *= exponent.exp();
    let total: f64 = next.iter().sum();
    if total.is_finite() && total > 0.0 {
        for v in next.iter_mut() {
            *v /= total;
        }
    } else {
        let mut logs: Vec<f64> = q.as_slice().iter().map(|v| v.ln()).collect();
        logs[g] += exponent;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (v, l) in next.iter_mut().zip(&logs) {
            *v = (l - max).exp();
        }
        let total: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= total;
        }
    }
    Ok(GroupWeights::from_normalized(next))
}
