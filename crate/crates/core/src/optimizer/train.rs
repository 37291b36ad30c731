use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{evaluate, GroupMetrics};
use crate::data::{Example, GroupWeights, GroupedDataset};
use crate::error::{Error, Result};
use crate::models::{Arch, ModelParams, Scratch};
use crate::objectives::group_adjustment;

use super::config::{Mode, OptimizerConfig};
use super::eg::eg_update;
use super::sampler::BatchSampler;

/// Mutable optimizer state: parameters, group weights and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DroState {
    pub params: ModelParams,
    pub q: GroupWeights,
    pub velocity: Vec<f64>,
}

impl DroState {
    pub fn new(params: ModelParams, q: GroupWeights) -> Self {
        let velocity = vec![0.0; params.theta.len()];
        Self {
            params,
            q,
            velocity,
        }
    }
}

/// Applies one optimizer step for any mode. Holds per-group gradient
/// accumulators so the `q` update can happen between the forward/backward
/// pass and the parameter update.
pub(crate) struct Stepper<'c> {
    config: &'c OptimizerConfig,
    group_sizes: Vec<usize>,
    group_grads: Vec<Vec<f64>>,
    loss_sum: Vec<f64>,
    count: Vec<usize>,
    present: Vec<usize>,
    effective: Vec<f64>,
    scratch: Scratch,
}

impl<'c> Stepper<'c> {
    pub(crate) fn new(
        config: &'c OptimizerConfig,
        group_sizes: Vec<usize>,
        num_params: usize,
    ) -> Self {
        let m = group_sizes.len();
        Self {
            config,
            group_sizes,
            group_grads: vec![vec![0.0; num_params]; m],
            loss_sum: vec![0.0; m],
            count: vec![0; m],
            present: Vec::with_capacity(m),
            effective: vec![0.0; num_params],
            scratch: Scratch::default(),
        }
    }

    /// One update on `batch`. `step` is used only for diagnostics.
    pub(crate) fn step<'e, I>(&mut self, state: &mut DroState, batch: I, step: usize) -> Result<()>
    where
        I: IntoIterator<Item = &'e Example>,
    {
        for &g in &self.present {
            self.group_grads[g].fill(0.0);
            self.loss_sum[g] = 0.0;
            self.count[g] = 0;
        }
        self.present.clear();

        let mut batch_len = 0usize;
        for ex in batch {
            let g = ex.group;
            let loss = state.params.accumulate_grad(
                &ex.features,
                ex.label,
                1.0,
                &mut self.group_grads[g],
                &mut self.scratch,
            );
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    step,
                    message: format!("non-finite loss {loss} on an example of group {g}"),
                });
            }
            if self.count[g] == 0 {
                self.present.push(g);
            }
            self.loss_sum[g] += loss;
            self.count[g] += 1;
            batch_len += 1;
        }
        if batch_len == 0 {
            return Err(Error::invalid("empty batch"));
        }
        self.present.sort_unstable();

        let cfg = self.config;
        if cfg.mode == Mode::GroupDro {
            for &g in &self.present {
                let mean = self.loss_sum[g] / self.count[g] as f64;
                let adj = group_adjustment(cfg.adjustment_c, self.group_sizes[g]);
                state.q = eg_update(&state.q, g, mean, cfg.eta_q, adj).map_err(|e| match e {
                    Error::Numerical { message, .. } => Error::Numerical { step, message },
                    other => other,
                })?;
            }
        }

        self.effective.fill(0.0);
        for &g in &self.present {
            let w = match cfg.mode {
                Mode::Erm | Mode::Upweight => 1.0 / batch_len as f64,
                Mode::GroupDro => state.q.get(g) / self.count[g] as f64,
            };
            for (e, gr) in self.effective.iter_mut().zip(&self.group_grads[g]) {
                *e += w * gr;
            }
        }

        let two_lambda = 2.0 * cfg.lambda;
        let theta = &mut state.params.theta;
        for ((t, v), e) in theta
            .iter_mut()
            .zip(state.velocity.iter_mut())
            .zip(&self.effective)
        {
            *v = cfg.momentum * *v + (e + two_lambda * *t);
            *t -= cfg.eta_theta * *v;
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical {
                step,
                message: "parameters diverged to a non-finite value".into(),
            });
        }
        Ok(())
    }
}

/// One step of the online group DRO update on a single example: the
/// example's group weight is raised by its loss (plus `C / sqrt(n_g)`),
/// then the parameters move along `q_g * grad + 2 lambda theta` with
/// heavy-ball momentum.
///
/// `train_group_sizes` supplies `n_g` for the adjustment term.
pub fn dro_step(
    state: &mut DroState,
    sample: &Example,
    train_group_sizes: &[usize],
    config: &OptimizerConfig,
) -> Result<()> {
    if sample.group >= train_group_sizes.len() || state.q.len() != train_group_sizes.len() {
        return Err(Error::invalid(
            "sample group or weights inconsistent with group sizes",
        ));
    }
    if sample.features.len() != state.params.arch.input_dim()
        || sample.label >= state.params.arch.num_classes()
    {
        return Err(Error::invalid("sample does not match the model"));
    }
    let mut stepper = Stepper::new(config, train_group_sizes.to_vec(), state.params.theta.len());
    stepper.step(state, std::iter::once(sample), 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub index: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub theta: Vec<f64>,
    /// Mean of the iterates after steps `1..=step`.
    pub theta_bar: Vec<f64>,
    pub q: Vec<f64>,
    pub train: GroupMetrics,
    pub val: Option<GroupMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub arch: Arch,
    pub mode: Mode,
    pub checkpoints: Vec<Checkpoint>,
}

/// Compact per-checkpoint summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub checkpoint: usize,
    pub step: usize,
    pub worst_group_train_acc: f64,
    pub worst_group_train_loss: f64,
    pub worst_group_val_acc: Option<f64>,
    pub avg_val_acc: Option<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub mode: Mode,
    pub checkpoints: Vec<CheckpointSummary>,
    pub early_stop_checkpoint: Option<usize>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    pub fn params_at(&self, index: usize) -> ModelParams {
        ModelParams {
            arch: self.arch,
            theta: self.checkpoints[index].theta.clone(),
        }
    }

    pub fn average_params_at(&self, index: usize) -> ModelParams {
        ModelParams {
            arch: self.arch,
            theta: self.checkpoints[index].theta_bar.clone(),
        }
    }

    /// Streams `checkpoint,split,group,loss,acc,q_g` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "checkpoint,split,group,loss,acc,q_g")?;
        for c in &self.checkpoints {
            let splits =
                std::iter::once(("train", &c.train)).chain(c.val.as_ref().map(|v| ("val", v)));
            for (split, metrics) in splits {
                for g in 0..metrics.num_groups() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        c.index,
                        split,
                        g,
                        metrics.per_group_loss[g],
                        metrics.per_group_accuracy[g],
                        c.q[g]
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> HistorySummary {
        HistorySummary {
            mode: self.mode,
            checkpoints: self
                .checkpoints
                .iter()
                .map(|c| CheckpointSummary {
                    checkpoint: c.index,
                    step: c.step,
                    worst_group_train_acc: c.train.worst_group_accuracy,
                    worst_group_train_loss: c.train.worst_group_loss(),
                    worst_group_val_acc: c.val.as_ref().map(|v| v.worst_group_accuracy),
                    avg_val_acc: c.val.as_ref().map(|v| v.average_accuracy),
                    q: c.q.clone(),
                })
                .collect(),
            early_stop_checkpoint: early_stop_select(self).ok(),
        }
    }
}

/// Trains a model of architecture `arch` on `train_set`, recording metrics
/// on both sets at every checkpoint. Deterministic given `config.seed`.
pub fn train(
    config: &OptimizerConfig,
    train_set: &GroupedDataset,
    val_set: Option<&GroupedDataset>,
    arch: Arch,
) -> Result<(ModelParams, TrainHistory)> {
    let m = train_set.num_groups();
    config.validate(train_set.len(), m)?;
    if let Some(val) = val_set {
        if !val.same_shape(train_set) {
            return Err(Error::invalid(
                "validation set differs from training set in m, d or K",
            ));
        }
    }
    let params = ModelParams::init(arch, config.seed)?;
    params.check_dataset(train_set)?;
    let q = match &config.q_init {
        Some(q) => GroupWeights::from_vec(q.clone())?,
        None => GroupWeights::uniform(m)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut sampler = BatchSampler::new(config.sampler(), train_set);
    let mut stepper = Stepper::new(config, train_set.group_sizes(), params.theta.len());
    let mut state = DroState::new(params, q);
    let mut theta_bar = vec![0.0; state.params.theta.len()];

    let total_steps = config.epochs * config.steps_per_epoch(train_set.len());
    let cadence = config
        .checkpoint_every
        .unwrap_or_else(|| config.steps_per_epoch(train_set.len()));
    let batch_size = config.effective_batch_size();
    let examples = train_set.examples();

    let mut history = TrainHistory {
        arch,
        mode: config.mode,
        checkpoints: Vec::new(),
    };
    let mut batch = Vec::with_capacity(batch_size);
    for step in 1..=total_steps {
        sampler.draw_batch(&mut rng, batch_size, &mut batch);
        stepper.step(&mut state, batch.iter().map(|&i| &examples[i]), step)?;

        let inv = 1.0 / step as f64;
        for (b, t) in theta_bar.iter_mut().zip(&state.params.theta) {
            *b += (t - *b) * inv;
        }

        if step % cadence == 0 || step == total_steps {
            let train_metrics = evaluate(&state.params, train_set)?;
            let val_metrics = val_set.map(|v| evaluate(&state.params, v)).transpose()?;
            history.checkpoints.push(Checkpoint {
                index: history.checkpoints.len(),
                step,
                theta: state.params.theta.clone(),
                theta_bar: theta_bar.clone(),
                q: state.q.as_slice().to_vec(),
                train: train_metrics,
                val: val_metrics,
            });
        }
    }
    Ok((state.params, history))
}

/// Index of the maximum, earliest on ties. `None` for an empty slice.
pub fn select_max_earliest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Checkpoint with the highest worst-group validation accuracy, earliest on
/// ties.
pub fn early_stop_select(history: &TrainHistory) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::invalid("history has no checkpoints"));
    }
    let series = history
        .checkpoints
        .iter()
        .map(|c| {
            c.val
                .as_ref()
                .map(|v| v.worst_group_accuracy)
                .ok_or_else(|| {
                    Error::invalid(format!("checkpoint {} has no validation metrics", c.index))
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(select_max_earliest(&series).expect("nonempty series"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::config::{Sampler, Variant};

    fn two_group_convex(n_per_group: [usize; 2]) -> GroupedDataset {
        let mut ex = Vec::new();
        for (g, &n) in n_per_group.iter().enumerate() {
            for i in 0..n {
                let t = i as f64 / n as f64;
                let y = (i + g) % 2;
                let sign = if y == 1 { 1.0 } else { -1.0 };
                ex.push(Example::new(
                    vec![sign * (0.5 + t) + g as f64 * 0.3, t - 0.5],
                    y,
                    g,
                ));
            }
        }
        GroupedDataset::new(ex, 2, 2, 2).unwrap()
    }

    #[test]
    fn single_group_step_is_plain_sgd() {
        let arch = Arch::LogisticBinary { d: 2 };
        let params = ModelParams::new(arch, vec![0.3, -0.2, 0.1]).unwrap();
        let ex = Example::new(vec![1.5, -0.5], 1, 0);
        let cfg = OptimizerConfig {
            mode: Mode::GroupDro,
            eta_theta: 0.7,
            eta_q: 2.0,
            momentum: 0.0,
            lambda: 0.0,
            ..Default::default()
        };
        let mut state = DroState::new(params.clone(), GroupWeights::uniform(1).unwrap());
        dro_step(&mut state, &ex, &[5], &cfg).unwrap();
        let g = params.grad(&ex).unwrap();
        let expected: Vec<f64> = params
            .theta
            .iter()
            .zip(&g)
            .map(|(t, g)| t - 0.7 * g)
            .collect();
        assert_eq!(state.params.theta, expected);
        assert_eq!(state.q.as_slice(), &[1.0]);
    }

    #[test]
    fn zero_step_size_still_moves_q() {
        let arch = Arch::LogisticBinary { d: 1 };
        let params = ModelParams::new(arch, vec![0.5, 0.0]).unwrap();
        let cfg = OptimizerConfig {
            eta_theta: 0.0,
            eta_q: 1.0,
            ..Default::default()
        };
        let mut state = DroState::new(params.clone(), GroupWeights::uniform(2).unwrap());
        dro_step(&mut state, &Example::new(vec![1.0], 0, 1), &[3, 3], &cfg).unwrap();
        assert_eq!(state.params, params);
        assert!(state.q.get(1) > 0.5);
    }

    #[test]
    fn hand_computed_logistic_step() {
        // d = 1, theta = 0, x = 2, y = 1, group 0 of two, eta_q = 1, C = 0
        // loss = ln 2, so q = (2/3, 1/3); grad = -0.5 * (2, 1)
        // theta <- 0 - 0.3 * (2/3) * (-1, -0.5) = (0.2, 0.1)
        let arch = Arch::LogisticBinary { d: 1 };
        let cfg = OptimizerConfig {
            eta_theta: 0.3,
            eta_q: 1.0,
            momentum: 0.0,
            lambda: 0.0,
            ..Default::default()
        };
        let mut state = DroState::new(ModelParams::zeros(arch), GroupWeights::uniform(2).unwrap());
        dro_step(&mut state, &Example::new(vec![2.0], 1, 0), &[4, 4], &cfg).unwrap();
        assert!((state.q.get(0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((state.params.theta[0] - 0.2).abs() < 1e-12);
        assert!((state.params.theta[1] - 0.1).abs() < 1e-12);

        // second step with momentum and l2 on the same state
        let cfg2 = OptimizerConfig {
            momentum: 0.5,
            lambda: 0.25,
            ..cfg
        };
        let before = state.clone();
        let ex = Example::new(vec![-1.0], 0, 1);
        dro_step(&mut state, &ex, &[4, 4], &cfg2).unwrap();
        let z: f64 = before.params.theta[0] * -1.0 + before.params.theta[1];
        let loss = (1.0 + z.exp()).ln();
        let mult = loss.exp();
        let q1 = (1.0 / 3.0) * mult / (2.0 / 3.0 + (1.0 / 3.0) * mult);
        let p = 1.0 / (1.0 + (-z).exp());
        let grad = [p * -1.0, p];
        for j in 0..2 {
            let eff = q1 * grad[j] + 0.5 * before.params.theta[j];
            let v = 0.5 * before.velocity[j] + eff;
            let expected = before.params.theta[j] - 0.3 * v;
            assert!((state.params.theta[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_shrinks_norm_without_data_gradient() {
        // q puts zero mass on the sampled group, so the data gradient vanishes
        let arch = Arch::LogisticBinary { d: 2 };
        let mut state = DroState::new(
            ModelParams::new(arch, vec![3.0, -4.0, 0.5]).unwrap(),
            GroupWeights::from_vec(vec![1.0, 0.0]).unwrap(),
        );
        let cfg = OptimizerConfig {
            mode: Mode::GroupDro,
            eta_theta: 0.01,
            eta_q: 0.0,
            lambda: 10.0,
            momentum: 0.0,
            ..Default::default()
        };
        let ex = Example::new(vec![1.0, 2.0], 1, 1);
        let mut prev = state.params.l2_norm_sq();
        for _ in 0..20 {
            dro_step(&mut state, &ex, &[1, 1], &cfg).unwrap();
            let now = state.params.l2_norm_sq();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn running_average_matches_direct_mean() {
        let ds = two_group_convex([3, 4]);
        let cfg = OptimizerConfig {
            mode: Mode::GroupDro,
            variant: Variant::PerExample,
            eta_theta: 0.2,
            eta_q: 0.5,
            momentum: 0.9,
            epochs: 5,
            checkpoint_every: Some(1),
            ..Default::default()
        };
        let (_, h) = train(&cfg, &ds, None, Arch::LogisticBinary { d: 2 }).unwrap();
        assert_eq!(h.len(), 35);
        let mut sum = vec![0.0; 3];
        for (t, c) in h.checkpoints.iter().enumerate() {
            for (s, v) in sum.iter_mut().zip(&c.theta) {
                *s += v;
            }
            for (s, b) in sum.iter().zip(&c.theta_bar) {
                assert!((s / (t + 1) as f64 - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn erm_matches_frozen_q_dro_on_full_batches() {
        let ds = two_group_convex([30, 10]);
        let base = OptimizerConfig {
            variant: Variant::Minibatch,
            batch_size: ds.len(),
            sampler: Some(Sampler::Shuffle),
            eta_theta: 0.5,
            momentum: 0.9,
            lambda: 0.01,
            epochs: 40,
            seed: 5,
            ..Default::default()
        };
        let erm = OptimizerConfig {
            mode: Mode::Erm,
            ..base.clone()
        };
        let dro = OptimizerConfig {
            mode: Mode::GroupDro,
            eta_q: 0.0,
            q_init: Some(crate::data::group_fractions(&ds)),
            ..base
        };
        let arch = Arch::LogisticBinary { d: 2 };
        let (a, _) = train(&erm, &ds, None, arch).unwrap();
        let (b, _) = train(&dro, &ds, None, arch).unwrap();
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_larger_than_dataset_rejected() {
        let ds = two_group_convex([3, 4]);
        let cfg = OptimizerConfig {
            batch_size: 8,
            ..Default::default()
        };
        assert!(train(&cfg, &ds, None, Arch::LogisticBinary { d: 2 }).is_err());
    }

    #[test]
    fn early_stop_series_examples() {
        assert_eq!(select_max_earliest(&[0.3, 0.7, 0.5]), Some(1));
        assert_eq!(select_max_earliest(&[0.1, 0.2, 0.3]), Some(2));
        assert_eq!(select_max_earliest(&[0.4, 0.4, 0.4]), Some(0));
        assert_eq!(select_max_earliest(&[]), None);
    }

    #[test]
    fn early_stop_requires_val_metrics() {
        let ds = two_group_convex([3, 4]);
        let cfg = OptimizerConfig {
            batch_size: 2,
            epochs: 2,
            ..Default::default()
        };
        let arch = Arch::LogisticBinary { d: 2 };
        let (_, h) = train(&cfg, &ds, None, arch).unwrap();
        assert!(early_stop_select(&h).is_err());
        let (_, h) = train(&cfg, &ds, Some(&ds), arch).unwrap();
        let i = early_stop_select(&h).unwrap();
        let best = h.checkpoints[i].val.as_ref().unwrap().worst_group_accuracy;
        assert!(h
            .checkpoints
            .iter()
            .all(|c| c.val.as_ref().unwrap().worst_group_accuracy <= best));
    }

    #[test]
    fn history_csv_shape() {
        let ds = two_group_convex([3, 4]);
        let cfg = OptimizerConfig {
            batch_size: 2,
            epochs: 3,
            ..Default::default()
        };
        let (_, h) = train(&cfg, &ds, Some(&ds), Arch::LogisticBinary { d: 2 }).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "checkpoint,split,group,loss,acc,q_g");
        assert_eq!(lines.len(), 1 + 3 * 2 * 2);
        assert!(lines[3].starts_with("0,val,0,"));
    }
}
