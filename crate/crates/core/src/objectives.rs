//! Risk functionals over a grouped dataset: average (ERM), worst-group,
//! group-adjusted worst-group, fixed-mixture, and importance-weighted.
//!
//! All values are data loss only; the optimizer's l2 penalty never enters.
//! Sums run sequentially in example order so results are reproducible.

use serde::{Deserialize, Serialize};

use crate::data::{GroupWeights, GroupedDataset};
use crate::error::{Error, Result};
use crate::models::{ModelParams, Scratch};

/// Outcome of a max-type (or mean-type) risk evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub value: f64,
    pub argmax_group: Option<usize>,
    pub per_group_loss: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adjusted: Option<Vec<f64>>,
}

impl RiskReport {
    /// Worst group from precomputed per-group losses.
    pub fn worst_of(per_group_loss: Vec<f64>) -> Result<Self> {
        if per_group_loss.is_empty() {
            return Err(Error::invalid("no groups"));
        }
        let g = first_argmax(&per_group_loss);
        Ok(Self {
            value: per_group_loss[g],
            argmax_group: Some(g),
            per_group_loss,
            adjusted: None,
        })
    }

    /// Worst group after adding `C / sqrt(n_g)` to each group's loss.
    pub fn adjusted_worst_of(
        per_group_loss: Vec<f64>,
        group_sizes: &[usize],
        c: f64,
    ) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!(
                "adjustment C must be >= 0, got {c}"
            )));
        }
        if per_group_loss.len() != group_sizes.len() {
            return Err(Error::invalid("loss and size vectors differ in length"));
        }
        if group_sizes.contains(&0) {
            return Err(Error::invalid("empty group"));
        }
        let adjusted: Vec<f64> = per_group_loss
            .iter()
            .zip(group_sizes)
            .map(|(&l, &n)| l + group_adjustment(c, n))
            .collect();
        let g = first_argmax(&adjusted);
        Ok(Self {
            value: adjusted[g],
            argmax_group: Some(g),
            per_group_loss,
            adjusted: Some(adjusted),
        })
    }
}

/// The adjustment `C / sqrt(n_g)` added to a group's loss.
pub fn group_adjustment(c: f64, n_g: usize) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c / (n_g as f64).sqrt()
    }
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss of every example, in dataset order.
pub fn example_losses(params: &ModelParams, dataset: &GroupedDataset) -> Result<Vec<f64>> {
    params.check_dataset(dataset)?;
    let mut s = Scratch::default();
    Ok(dataset
        .examples()
        .iter()
        .map(|ex| params.loss_unchecked(&ex.features, ex.label, &mut s))
        .collect())
}

/// Mean loss within each group.
pub fn group_mean_losses(params: &ModelParams, dataset: &GroupedDataset) -> Result<Vec<f64>> {
    let losses = example_losses(params, dataset)?;
    Ok(means_by_group(&losses, dataset))
}

pub(crate) fn means_by_group(values: &[f64], dataset: &GroupedDataset) -> Vec<f64> {
    dataset
        .group_index()
        .iter()
        .map(|members| members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64)
        .collect()
}

/// Average loss over all examples.
pub fn erm_risk(params: &ModelParams, dataset: &GroupedDataset) -> Result<f64> {
    let losses = example_losses(params, dataset)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Maximum over groups of the group's mean loss.
pub fn worst_group_risk(params: &ModelParams, dataset: &GroupedDataset) -> Result<RiskReport> {
    RiskReport::worst_of(group_mean_losses(params, dataset)?)
}

/// Maximum over groups of `mean loss + C / sqrt(n_g)`.
pub fn adjusted_worst_group_risk(
    params: &ModelParams,
    dataset: &GroupedDataset,
    c: f64,
) -> Result<RiskReport> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!(
            "adjustment C must be >= 0, got {c}"
        )));
    }
    RiskReport::adjusted_worst_of(
        group_mean_losses(params, dataset)?,
        &dataset.group_sizes(),
        c,
    )
}

/// `sum_g q_g * (mean loss of group g)`.
pub fn mixture_risk(
    params: &ModelParams,
    q: &GroupWeights,
    dataset: &GroupedDataset,
) -> Result<f64> {
    if q.len() != dataset.num_groups() {
        return Err(Error::invalid(format!(
            "weights have {} entries, dataset has {} groups",
            q.len(),
            dataset.num_groups()
        )));
    }
    let means = group_mean_losses(params, dataset)?;
    Ok(q.as_slice().iter().zip(&means).map(|(w, l)| w * l).sum())
}

/// `(1/n) sum_i w_{g(i)} * loss_i` for positive per-group weights.
pub fn weighted_risk(params: &ModelParams, w: &[f64], dataset: &GroupedDataset) -> Result<f64> {
    if w.len() != dataset.num_groups() {
        return Err(Error::invalid(format!(
            "{} weights for {} groups",
            w.len(),
            dataset.num_groups()
        )));
    }
    if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("group weights must be positive and finite"));
    }
    let losses = example_losses(params, dataset)?;
    let total: f64 = dataset
        .examples()
        .iter()
        .zip(&losses)
        .map(|(ex, l)| w[ex.group] * l)
        .sum();
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{group_fractions, Example};
    use crate::models::Arch;

    /// Logistic model on d = 1 with theta = (w, 0): loss on (x, y = 1) is
    /// softplus(-w x), so losses are controlled by the feature.
    fn toy() -> (ModelParams, GroupedDataset) {
        let params = ModelParams::new(Arch::LogisticBinary { d: 1 }, vec![1.0, 0.0]).unwrap();
        let examples = vec![
            Example::new(vec![2.0], 1, 0),
            Example::new(vec![-1.0], 1, 1),
            Example::new(vec![0.5], 1, 0),
            Example::new(vec![-0.3], 0, 1),
            Example::new(vec![1.5], 0, 2),
        ];
        (params, GroupedDataset::new(examples, 3, 1, 2).unwrap())
    }

    #[test]
    fn worst_of_examples() {
        let r = RiskReport::worst_of(vec![0.1, 0.5, 0.3]).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.argmax_group, Some(1));
        let tie = RiskReport::worst_of(vec![0.4, 0.4]).unwrap();
        assert_eq!(tie.argmax_group, Some(0));
    }

    #[test]
    fn adjusted_example() {
        let r = RiskReport::adjusted_worst_of(vec![0.5, 0.4], &[10000, 100], 2.0).unwrap();
        let adj = r.adjusted.clone().unwrap();
        assert!((adj[0] - 0.52).abs() < 1e-15);
        assert!((adj[1] - 0.60).abs() < 1e-15);
        assert!((r.value - 0.60).abs() < 1e-15);
        assert_eq!(r.argmax_group, Some(1));
        assert!(RiskReport::adjusted_worst_of(vec![0.5], &[3], -1.0).is_err());
    }

    #[test]
    fn zero_adjustment_is_bitwise_identical() {
        let (p, ds) = toy();
        let plain = worst_group_risk(&p, &ds).unwrap();
        let adj = adjusted_worst_group_risk(&p, &ds, 0.0).unwrap();
        assert_eq!(plain.value.to_bits(), adj.value.to_bits());
        assert_eq!(plain.argmax_group, adj.argmax_group);
    }

    #[test]
    fn erm_mean_and_single_group() {
        let (p, ds) = toy();
        let losses = example_losses(&p, &ds).unwrap();
        let erm = erm_risk(&p, &ds).unwrap();
        assert!((erm - losses.iter().sum::<f64>() / 5.0).abs() < 1e-15);

        let single = GroupedDataset::new(vec![Example::new(vec![0.7], 0, 0)], 1, 1, 2).unwrap();
        let l = p.loss(&single.examples()[0]).unwrap();
        assert_eq!(erm_risk(&p, &single).unwrap(), l);
        assert_eq!(worst_group_risk(&p, &single).unwrap().value, l);
    }

    #[test]
    fn erm_equals_mixture_at_group_fractions() {
        let (p, ds) = toy();
        let q = GroupWeights::from_vec(group_fractions(&ds)).unwrap();
        let mix = mixture_risk(&p, &q, &ds).unwrap();
        assert!((mix - erm_risk(&p, &ds).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mixture_examples() {
        let (p, ds) = toy();
        let means = group_mean_losses(&p, &ds).unwrap();
        for g in 0..3 {
            let mut q = vec![0.0; 3];
            q[g] = 1.0;
            let q = GroupWeights::from_vec(q).unwrap();
            assert_eq!(mixture_risk(&p, &q, &ds).unwrap(), means[g]);
        }
        let bad = GroupWeights::uniform(2).unwrap();
        assert!(mixture_risk(&p, &bad, &ds).is_err());
    }

    #[test]
    fn weighted_risk_identities() {
        let (p, ds) = toy();
        let erm = erm_risk(&p, &ds).unwrap();
        assert!((weighted_risk(&p, &[1.0; 3], &ds).unwrap() - erm).abs() < 1e-15);

        // inverse-frequency weights turn the example mean into the sum of
        // group means; dividing by m gives the uniform group average
        let fr = group_fractions(&ds);
        let means = group_mean_losses(&p, &ds).unwrap();
        let inv: Vec<f64> = fr.iter().map(|f| 1.0 / f).collect();
        let uniform_avg = means.iter().sum::<f64>() / 3.0;
        assert!((weighted_risk(&p, &inv, &ds).unwrap() - 3.0 * uniform_avg).abs() < 1e-12);
        let inv_m: Vec<f64> = fr.iter().map(|f| 1.0 / (3.0 * f)).collect();
        assert!((weighted_risk(&p, &inv_m, &ds).unwrap() - uniform_avg).abs() < 1e-12);

        assert!(weighted_risk(&p, &[1.0, 0.0, 1.0], &ds).is_err());
        assert!(weighted_risk(&p, &[1.0, 1.0], &ds).is_err());
    }

    #[test]
    fn single_group_weight_scales_erm() {
        let p = ModelParams::new(Arch::LogisticBinary { d: 1 }, vec![0.3, -0.1]).unwrap();
        let ds = GroupedDataset::new(
            vec![
                Example::new(vec![1.0], 1, 0),
                Example::new(vec![-2.0], 0, 0),
            ],
            1,
            1,
            2,
        )
        .unwrap();
        let erm = erm_risk(&p, &ds).unwrap();
        assert!((weighted_risk(&p, &[2.0], &ds).unwrap() - 2.0 * erm).abs() < 1e-15);
    }

    #[test]
    fn report_serializes() {
        let r = RiskReport::adjusted_worst_of(vec![0.5, 0.4], &[4, 1], 1.0).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["argmax_group"], 1);
        assert!(v["adjusted"].is_array());
        let plain = serde_json::to_value(RiskReport::worst_of(vec![0.1]).unwrap()).unwrap();
        assert!(plain.get("adjusted").is_none());
    }
}
