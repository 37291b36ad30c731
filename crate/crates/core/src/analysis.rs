//! Per-group accuracy and loss metrics, weighted averages, and train/test gaps.

use serde::{Deserialize, Serialize};

use crate::data::{GroupedDataset, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::models::{ModelParams, Scratch};
use crate::objectives::means_by_group;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group_sizes: Vec<usize>,
    pub per_group_accuracy: Vec<f64>,
    pub per_group_loss: Vec<f64>,
    /// Minimum of `per_group_accuracy`.
    pub worst_group_accuracy: f64,
    /// Smallest group index attaining the minimum.
    pub worst_group: usize,
    /// Fraction of all examples classified correctly.
    pub average_accuracy: f64,
    /// Unweighted mean of `per_group_accuracy`.
    pub mean_group_accuracy: f64,
}

impl GroupMetrics {
    /// Builds metrics from per-group counts of correct predictions.
    pub fn from_counts(
        group_sizes: Vec<usize>,
        correct: Vec<usize>,
        per_group_loss: Vec<f64>,
    ) -> Result<Self> {
        if group_sizes.is_empty()
            || group_sizes.len() != correct.len()
            || group_sizes.len() != per_group_loss.len()
        {
            return Err(Error::invalid("inconsistent per-group vectors"));
        }
        if group_sizes.contains(&0) {
            return Err(Error::invalid("empty group"));
        }
        let per_group_accuracy: Vec<f64> = correct
            .iter()
            .zip(&group_sizes)
            .map(|(&c, &n)| c as f64 / n as f64)
            .collect();
        let mut worst_group = 0;
        for (g, &a) in per_group_accuracy.iter().enumerate() {
            if a < per_group_accuracy[worst_group] {
                worst_group = g;
            }
        }
        let n: usize = group_sizes.iter().sum();
        let total_correct: usize = correct.iter().sum();
        let m = group_sizes.len() as f64;
        Ok(Self {
            worst_group_accuracy: per_group_accuracy[worst_group],
            worst_group,
            average_accuracy: total_correct as f64 / n as f64,
            mean_group_accuracy: per_group_accuracy.iter().sum::<f64>() / m,
            group_sizes,
            per_group_accuracy,
            per_group_loss,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn worst_group_loss(&self) -> f64 {
        self.per_group_loss
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Binomial standard deviation `sqrt(p (1 - p) / n_g)` of each group's
    /// accuracy estimate.
    pub fn binomial_std(&self) -> Vec<f64> {
        self.per_group_accuracy
            .iter()
            .zip(&self.group_sizes)
            .map(|(&p, &n)| binomial_std(p, n))
            .collect()
    }
}

pub fn binomial_std(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Accuracy and mean loss for every group of `dataset`.
pub fn evaluate(params: &ModelParams, dataset: &GroupedDataset) -> Result<GroupMetrics> {
    params.check_dataset(dataset)?;
    let mut s = Scratch::default();
    let mut losses = Vec::with_capacity(dataset.len());
    let mut correct = vec![0usize; dataset.num_groups()];
    for ex in dataset.examples() {
        let (loss, pred) = params.loss_and_predict(&ex.features, ex.label, &mut s);
        losses.push(loss);
        if pred == ex.label {
            correct[ex.group] += 1;
        }
    }
    GroupMetrics::from_counts(
        dataset.group_sizes(),
        correct,
        means_by_group(&losses, dataset),
    )
}

/// `sum_g fraction_g * accuracy_g`, typically with training-set group
/// proportions as the fractions.
pub fn weighted_average_accuracy(metrics: &GroupMetrics, fractions: &[f64]) -> Result<f64> {
    if fractions.len() != metrics.num_groups() {
        return Err(Error::invalid(format!(
            "{} fractions for {} groups",
            fractions.len(),
            metrics.num_groups()
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| f.is_nan() || *f < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid("fractions must lie on the simplex"));
    }
    Ok(fractions
        .iter()
        .zip(&metrics.per_group_accuracy)
        .map(|(f, a)| f * a)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Train minus test accuracy, per group.
    pub accuracy_gap: Vec<f64>,
    /// Test minus train mean loss, per group.
    pub loss_gap: Vec<f64>,
    /// Worst-group test loss minus worst-group train loss. May be negative.
    pub worst_group_loss_gap: f64,
    /// Worst-group train accuracy minus worst-group test accuracy.
    pub worst_group_accuracy_gap: f64,
}

pub fn gap_report(train: &GroupMetrics, test: &GroupMetrics) -> Result<GapReport> {
    if train.num_groups() != test.num_groups() {
        return Err(Error::invalid(format!(
            "train has {} groups, test has {}",
            train.num_groups(),
            test.num_groups()
        )));
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    Ok(GapReport {
        accuracy_gap: diff(&train.per_group_accuracy, &test.per_group_accuracy),
        loss_gap: diff(&test.per_group_loss, &train.per_group_loss),
        worst_group_loss_gap: test.worst_group_loss() - train.worst_group_loss(),
        worst_group_accuracy_gap: train.worst_group_accuracy - test.worst_group_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::models::Arch;

    fn metrics(accs: &[f64]) -> GroupMetrics {
        let sizes = vec![10; accs.len()];
        let correct = accs.iter().map(|a| (a * 10.0).round() as usize).collect();
        GroupMetrics::from_counts(sizes, correct, vec![0.0; accs.len()]).unwrap()
    }

    #[test]
    fn perfect_and_constant_predictors() {
        // logistic on d = 1 with a large weight separates sign(x)
        let perfect = ModelParams::new(Arch::LogisticBinary { d: 1 }, vec![100.0, 0.0]).unwrap();
        let ds = GroupedDataset::new(
            vec![
                Example::new(vec![1.0], 1, 0),
                Example::new(vec![-1.0], 0, 1),
                Example::new(vec![2.0], 1, 0),
            ],
            2,
            1,
            2,
        )
        .unwrap();
        let m = evaluate(&perfect, &ds).unwrap();
        assert_eq!(m.per_group_accuracy, vec![1.0, 1.0]);
        assert_eq!(m.worst_group_accuracy, 1.0);

        let constant = ModelParams::zeros(Arch::LogisticBinary { d: 1 });
        let m = evaluate(&constant, &ds).unwrap();
        assert_eq!(m.per_group_accuracy, vec![0.0, 1.0]);
        assert_eq!(m.worst_group_accuracy, 0.0);
        assert_eq!(m.worst_group, 0);
        assert!((m.average_accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_average_examples() {
        let m = metrics(&[1.0, 0.0]);
        assert!((weighted_average_accuracy(&m, &[0.9, 0.1]).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(weighted_average_accuracy(&m, &[0.0, 1.0]).unwrap(), 0.0);
        let m = metrics(&[0.7, 0.4, 0.1]);
        let u = weighted_average_accuracy(&m, &[1.0 / 3.0; 3]).unwrap();
        assert!((u - m.mean_group_accuracy).abs() < 1e-12);
        assert!(weighted_average_accuracy(&m, &[0.5, 0.5]).is_err());
        assert!(weighted_average_accuracy(&m, &[0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn gap_examples() {
        let train = metrics(&[1.0, 1.0]);
        let same = gap_report(&train, &train).unwrap();
        assert_eq!(same.accuracy_gap, vec![0.0, 0.0]);
        assert_eq!(same.worst_group_loss_gap, 0.0);
        let test = metrics(&[0.9, 0.6]);
        let gap = gap_report(&train, &test).unwrap();
        assert!((gap.accuracy_gap[0] - 0.1).abs() < 1e-12);
        assert!((gap.accuracy_gap[1] - 0.4).abs() < 1e-12);
        assert!(gap_report(&train, &metrics(&[1.0])).is_err());
    }

    #[test]
    fn binomial_std_matches_formula() {
        assert!((binomial_std(0.5, 100) - 0.05).abs() < 1e-15);
        assert_eq!(binomial_std(1.0, 7), 0.0);
    }
}
