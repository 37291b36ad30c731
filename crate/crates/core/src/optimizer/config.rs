use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Average loss over uniformly drawn examples.
    Erm,
    /// Average loss over group-balanced draws (importance-weighting baseline).
    Upweight,
    /// Online group DRO: exponentiated-gradient ascent on group weights,
    /// weighted SGD on the parameters.
    GroupDro,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Erm, Mode::Upweight, Mode::GroupDro];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Erm => "erm",
            Mode::Upweight => "upweight",
            Mode::GroupDro => "group_dro",
        }
    }

    pub fn default_sampler(&self) -> Sampler {
        match self {
            Mode::Erm => Sampler::Uniform,
            Mode::Upweight | Mode::GroupDro => Sampler::GroupBalanced,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Mode::Erm),
            "upweight" | "uw" => Ok(Mode::Upweight),
            "group_dro" | "dro" => Ok(Mode::GroupDro),
            _ => Err(Error::invalid(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One example per step; a checkpoint every `n` steps.
    PerExample,
    /// `batch_size` examples per step; a checkpoint every `ceil(n / batch_size)` steps.
    Minibatch,
}

/// How training examples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Independent uniform draws over all examples, with replacement.
    Uniform,
    /// Independent draws: a group uniformly at random, then an example
    /// uniformly within it.
    GroupBalanced,
    /// A fresh permutation every epoch, consumed in consecutive batches.
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub mode: Mode,
    pub variant: Variant,
    /// Parameter step size.
    pub eta_theta: f64,
    /// Group-weight step size (group_dro only). Zero freezes `q`.
    #[serde(default)]
    pub eta_q: f64,
    /// Heavy-ball momentum coefficient in `[0, 1)`.
    #[serde(default)]
    pub momentum: f64,
    /// l2 penalty coefficient; the update adds `2 * lambda * theta`.
    #[serde(default)]
    pub lambda: f64,
    /// Group adjustment constant `C`; enters the `q` update as `C / sqrt(n_g)`.
    #[serde(default)]
    pub adjustment_c: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the mode's default sampler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    /// Initial group weights; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_init: Option<Vec<f64>>,
    /// Checkpoint every this many steps instead of once per epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn default_batch_size() -> usize {
    1
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::GroupDro,
            variant: Variant::Minibatch,
            eta_theta: 0.01,
            eta_q: 0.01,
            momentum: 0.9,
            lambda: 1e-4,
            adjustment_c: 0.0,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            sampler: None,
            q_init: None,
            checkpoint_every: None,
        }
    }
}

impl OptimizerConfig {
    pub fn sampler(&self) -> Sampler {
        self.sampler.unwrap_or_else(|| self.mode.default_sampler())
    }

    /// Examples consumed per step.
    pub fn effective_batch_size(&self) -> usize {
        match self.variant {
            Variant::PerExample => 1,
            Variant::Minibatch => self.batch_size,
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.effective_batch_size())
    }

    /// Checks the configuration against a training set of `n` examples in
    /// `m` groups.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )))
            }
        };
        nonneg("eta_theta", self.eta_theta)?;
        nonneg("eta_q", self.eta_q)?;
        nonneg("lambda", self.lambda)?;
        nonneg("adjustment_c", self.adjustment_c)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.variant == Variant::Minibatch {
            if self.batch_size == 0 {
                return Err(Error::invalid("batch_size must be at least 1"));
            }
            if self.batch_size > n {
                return Err(Error::invalid(format!(
                    "batch_size {} exceeds training set size {n}",
                    self.batch_size
                )));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        if let Some(q) = &self.q_init {
            if q.len() != m {
                return Err(Error::invalid(format!(
                    "q_init has {} entries for {m} groups",
                    q.len()
                )));
            }
            crate::data::GroupWeights::from_vec(q.clone())?;
        }
        Ok(())
    }
}
