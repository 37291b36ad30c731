//! Small differentiable classifiers with hand-derived gradients.
//!
//! Parameter layout is row-major: each output unit stores its incoming
//! weights followed by its bias. For `Mlp1` the hidden rows come first,
//! then the output rows.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, GroupedDataset};
use crate::error::{Error, Result};

/// Concrete architecture with all dimensions resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    /// Binary logistic regression; labels in {0, 1}.
    LogisticBinary { d: usize },
    /// Multinomial logistic regression over `k` classes.
    Softmax { d: usize, k: usize },
    /// One ReLU hidden layer of width `h`, softmax output over `k` classes.
    Mlp1 { d: usize, h: usize, k: usize },
}

impl Arch {
    pub fn num_params(&self) -> usize {
        match *self {
            Arch::LogisticBinary { d } => d + 1,
            Arch::Softmax { d, k } => k * (d + 1),
            Arch::Mlp1 { d, h, k } => h * (d + 1) + k * (h + 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::LogisticBinary { d } | Arch::Softmax { d, .. } | Arch::Mlp1 { d, .. } => d,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            Arch::LogisticBinary { .. } => 2,
            Arch::Softmax { k, .. } | Arch::Mlp1 { k, .. } => k,
        }
    }

    /// Convex in the parameters (everything except `Mlp1`).
    pub fn is_convex(&self) -> bool {
        !matches!(self, Arch::Mlp1 { .. })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Arch::LogisticBinary { d } => d >= 1,
            Arch::Softmax { d, k } => d >= 1 && k >= 2,
            Arch::Mlp1 { d, h, k } => d >= 1 && h >= 1 && k >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate architecture {self:?}")))
        }
    }
}

/// Architecture family without dimensions, as written in configs and on the
/// command line: `logistic`, `softmax`, or `mlp1:<width>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ArchSpec {
    Logistic,
    Softmax,
    Mlp1 { hidden: usize },
}

impl ArchSpec {
    pub fn resolve(&self, d: usize, k: usize) -> Result<Arch> {
        let arch = match *self {
            ArchSpec::Logistic => {
                if k != 2 {
                    return Err(Error::invalid(format!(
                        "logistic model needs 2 classes, dataset has {k}"
                    )));
                }
                Arch::LogisticBinary { d }
            }
            ArchSpec::Softmax => Arch::Softmax { d, k },
            ArchSpec::Mlp1 { hidden } => Arch::Mlp1 { d, h: hidden, k },
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn resolve_for(&self, dataset: &GroupedDataset) -> Result<Arch> {
        self.resolve(dataset.dim(), dataset.num_classes())
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchSpec::Logistic => write!(f, "logistic"),
            ArchSpec::Softmax => write!(f, "softmax"),
            ArchSpec::Mlp1 { hidden } => write!(f, "mlp1:{hidden}"),
        }
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ArchSpec::Logistic),
            "softmax" => Ok(ArchSpec::Softmax),
            _ => {
                let hidden = s
                    .strip_prefix("mlp1:")
                    .and_then(|w| w.parse::<usize>().ok())
                    .filter(|&w| w >= 1)
                    .ok_or_else(|| {
                        Error::invalid(format!(
                            "unknown architecture '{s}' (expected logistic, softmax or mlp1:<width>)"
                        ))
                    })?;
                Ok(ArchSpec::Mlp1 { hidden })
            }
        }
    }
}

impl TryFrom<String> for ArchSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ArchSpec> for String {
    fn from(a: ArchSpec) -> Self {
        a.to_string()
    }
}

/// Flat parameter vector plus the architecture that interprets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub theta: Vec<f64>,
}

/// Reusable buffers for the forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    logits: Vec<f64>,
    hidden_grad: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.num_params() {
            return Err(Error::invalid(format!(
                "theta has {} entries, {arch:?} needs {}",
                theta.len(),
                arch.num_params()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta has non-finite entries"));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            theta: vec![0.0; arch.num_params()],
        }
    }

    /// Zeros for convex models. For `Mlp1`, every entry of a layer is drawn
    /// i.i.d. uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        match arch {
            Arch::LogisticBinary { .. } | Arch::Softmax { .. } => Ok(Self::zeros(arch)),
            Arch::Mlp1 { d, h, k } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut theta = Vec::with_capacity(arch.num_params());
                let b1 = 1.0 / (d as f64).sqrt();
                theta.extend((0..h * (d + 1)).map(|_| rng.random_range(-b1..=b1)));
                let b2 = 1.0 / (h as f64).sqrt();
                theta.extend((0..k * (h + 1)).map(|_| rng.random_range(-b2..=b2)));
                Ok(Self { arch, theta })
            }
        }
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        self.check_features(&ex.features)?;
        if ex.label >= self.arch.num_classes() {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                ex.label,
                self.arch.num_classes()
            )));
        }
        Ok(())
    }

    fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model input {}",
                x.len(),
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    /// Fails unless the dataset's dimension and class count match the model.
    pub fn check_dataset(&self, ds: &GroupedDataset) -> Result<()> {
        if ds.dim() != self.arch.input_dim() || ds.num_classes() != self.arch.num_classes() {
            return Err(Error::invalid(format!(
                "dataset (d = {}, K = {}) does not match model {:?}",
                ds.dim(),
                ds.num_classes(),
                self.arch
            )));
        }
        Ok(())
    }

    /// Cross-entropy `-log p(y | x)`.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        self.check_example(ex)?;
        Ok(self.loss_unchecked(&ex.features, ex.label, &mut Scratch::default()))
    }

    /// Exact gradient of [`ModelParams::loss`] with respect to `theta`.
    pub fn grad(&self, ex: &Example) -> Result<Vec<f64>> {
        self.check_example(ex)?;
        let mut out = vec![0.0; self.theta.len()];
        self.accumulate_grad(
            &ex.features,
            ex.label,
            1.0,
            &mut out,
            &mut Scratch::default(),
        );
        Ok(out)
    }

    /// Most probable class; ties go to the smaller index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_features(x)?;
        Ok(self.predict_unchecked(x, &mut Scratch::default()))
    }

    /// Class probabilities.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        let mut s = Scratch::default();
        match self.arch {
            Arch::LogisticBinary { .. } => {
                let z = self.logistic_logit(x);
                Ok(vec![sigmoid(-z), sigmoid(z)])
            }
            _ => {
                self.forward_logits(x, &mut s);
                let lse = log_sum_exp(&s.logits);
                Ok(s.logits.iter().map(|z| (z - lse).exp()).collect())
            }
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.theta.iter().map(|v| v * v).sum()
    }

    /// Loss and prediction in one forward pass.
    pub(crate) fn loss_and_predict(&self, x: &[f64], y: usize, s: &mut Scratch) -> (f64, usize) {
        match self.arch {
            Arch::LogisticBinary { .. } => {
                let z = self.logistic_logit(x);
                (logistic_loss(z, y), usize::from(z > 0.0))
            }
            _ => {
                self.forward_logits(x, s);
                let lse = log_sum_exp(&s.logits);
                (lse - s.logits[y], argmax(&s.logits))
            }
        }
    }

    pub(crate) fn loss_unchecked(&self, x: &[f64], y: usize, s: &mut Scratch) -> f64 {
        self.loss_and_predict(x, y, s).0
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64], s: &mut Scratch) -> usize {
        match self.arch {
            Arch::LogisticBinary { .. } => usize::from(self.logistic_logit(x) > 0.0),
            _ => {
                self.forward_logits(x, s);
                argmax(&s.logits)
            }
        }
    }

    /// Adds `weight * grad loss(x, y)` into `out` and returns the loss.
    pub(crate) fn accumulate_grad(
        &self,
        x: &[f64],
        y: usize,
        weight: f64,
        out: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        match self.arch {
            Arch::LogisticBinary { d } => {
                let z = self.logistic_logit(x);
                let dz = weight * (sigmoid(z) - y as f64);
                for (o, xi) in out[..d].iter_mut().zip(x) {
                    *o += dz * xi;
                }
                out[d] += dz;
                logistic_loss(z, y)
            }
            Arch::Softmax { d, .. } => {
                self.forward_logits(x, s);
                let lse = log_sum_exp(&s.logits);
                let loss = lse - s.logits[y];
                for (c, row) in out.chunks_exact_mut(d + 1).enumerate() {
                    let p = (s.logits[c] - lse).exp();
                    let dz = weight * (p - if c == y { 1.0 } else { 0.0 });
                    for (o, xi) in row[..d].iter_mut().zip(x) {
                        *o += dz * xi;
                    }
                    row[d] += dz;
                }
                loss
            }
            Arch::Mlp1 { d, h, .. } => {
                self.forward_logits(x, s);
                let lse = log_sum_exp(&s.logits);
                let loss = lse - s.logits[y];
                let (out_hidden, out_output) = out.split_at_mut(h * (d + 1));
                let w_output = &self.theta[h * (d + 1)..];
                s.hidden_grad.clear();
                s.hidden_grad.resize(h, 0.0);
                for (c, (grow, wrow)) in out_output
                    .chunks_exact_mut(h + 1)
                    .zip(w_output.chunks_exact(h + 1))
                    .enumerate()
                {
                    let p = (s.logits[c] - lse).exp();
                    let dz = p - if c == y { 1.0 } else { 0.0 };
                    let wdz = weight * dz;
                    for ((o, a), (hg, w)) in grow[..h]
                        .iter_mut()
                        .zip(&s.hidden_act)
                        .zip(s.hidden_grad.iter_mut().zip(&wrow[..h]))
                    {
                        *o += wdz * a;
                        *hg += dz * w;
                    }
                    grow[h] += wdz;
                }
                for (j, row) in out_hidden.chunks_exact_mut(d + 1).enumerate() {
                    // ReLU subgradient at exactly zero is zero
                    if s.hidden_pre[j] <= 0.0 {
                        continue;
                    }
                    let dz = weight * s.hidden_grad[j];
                    for (o, xi) in row[..d].iter_mut().zip(x) {
                        *o += dz * xi;
                    }
                    row[d] += dz;
                }
                loss
            }
        }
    }

    fn logistic_logit(&self, x: &[f64]) -> f64 {
        let d = x.len();
        dot(&self.theta[..d], x) + self.theta[d]
    }

    /// Fills `s.logits` (and hidden buffers for `Mlp1`). Not used for
    /// `LogisticBinary`.
    fn forward_logits(&self, x: &[f64], s: &mut Scratch) {
        match self.arch {
            Arch::LogisticBinary { .. } => unreachable!("logistic model has a single logit"),
            Arch::Softmax { d, .. } => {
                s.logits.clear();
                s.logits.extend(
                    self.theta
                        .chunks_exact(d + 1)
                        .map(|row| dot(&row[..d], x) + row[d]),
                );
            }
            Arch::Mlp1 { d, h, .. } => {
                let (w_hidden, w_output) = self.theta.split_at(h * (d + 1));
                s.hidden_pre.clear();
                s.hidden_pre.extend(
                    w_hidden
                        .chunks_exact(d + 1)
                        .map(|row| dot(&row[..d], x) + row[d]),
                );
                s.hidden_act.clear();
                s.hidden_act
                    .extend(s.hidden_pre.iter().map(|&z| z.max(0.0)));
                s.logits.clear();
                s.logits.extend(
                    w_output
                        .chunks_exact(h + 1)
                        .map(|row| dot(&row[..h], &s.hidden_act) + row[h]),
                );
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ModelParams = serde_json::from_str(s)?;
        Self::new(raw.arch, raw.theta)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic_loss(z: f64, y: usize) -> f64 {
    if y == 1 {
        softplus(-z)
    } else {
        softplus(z)
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// First index of the maximum.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}
