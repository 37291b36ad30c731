//! Grouped examples, simplex weights over groups, and stratified splitting.
//!
//! Every example carries a group id `g` in `0..m`. Groups are used for
//! training-time weighting and for metrics only; models never see `g`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(q) - 1|` for a valid simplex point.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
    pub group: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize, group: usize) -> Self {
        Self {
            features,
            label,
            group,
        }
    }
}

/// An immutable labeled dataset partitioned into `m` nonempty groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    examples: Vec<Example>,
    num_groups: usize,
    dim: usize,
    num_classes: usize,
    group_index: Vec<Vec<usize>>,
}

impl GroupedDataset {
    /// Validates and indexes `examples`. Rejects empty datasets, empty groups,
    /// out-of-range labels or groups, dimension mismatches and non-finite
    /// features.
    pub fn new(
        examples: Vec<Example>,
        num_groups: usize,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_groups == 0 {
            return Err(Error::invalid("group count must be at least 1"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("class count must be at least 1"));
        }
        if examples.is_empty() {
            return Err(Error::invalid("dataset has no examples"));
        }
        let mut group_index = vec![Vec::new(); num_groups];
        for (i, ex) in examples.iter().enumerate() {
            if ex.group >= num_groups {
                return Err(Error::Schema(format!(
                    "example {i}: group {} out of range for m = {num_groups}",
                    ex.group
                )));
            }
            if ex.label >= num_classes {
                return Err(Error::Schema(format!(
                    "example {i}: label {} out of range for K = {num_classes}",
                    ex.label
                )));
            }
            if ex.features.len() != dim {
                return Err(Error::Schema(format!(
                    "example {i}: {} features, expected {dim}",
                    ex.features.len()
                )));
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("example {i}: non-finite feature")));
            }
            group_index[ex.group].push(i);
        }
        if let Some(g) = group_index.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("group {g} is empty")));
        }
        Ok(Self {
            examples,
            num_groups,
            dim,
            num_classes,
            group_index,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    /// Always false for a constructed dataset; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Positions of the examples in group `g`, ascending.
    pub fn group_members(&self, g: usize) -> &[usize] {
        &self.group_index[g]
    }

    pub fn group_index(&self) -> &[Vec<usize>] {
        &self.group_index
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.group_index.iter().map(Vec::len).collect()
    }

    /// Dataset restricted to `positions` (kept in the given order).
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let examples = positions
            .iter()
            .map(|&i| self.examples[i].clone())
            .collect();
        Self::new(examples, self.num_groups, self.dim, self.num_classes)
    }

    /// True when both datasets agree on `m`, `d` and `K`.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_groups == other.num_groups
            && self.dim == other.dim
            && self.num_classes == other.num_classes
    }
}

/// A point on the probability simplex over groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GroupWeights {
    q: Vec<f64>,
}

impl GroupWeights {
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("group count must be at least 1"));
        }
        Ok(Self {
            q: vec![1.0 / m as f64; m],
        })
    }

    /// Accepts `q` as-is if it is a valid simplex point.
    pub fn from_vec(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("weights must have at least one entry"));
        }
        if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { q })
    }

    /// Used by the optimizer after it has renormalized.
    pub(crate) fn from_normalized(q: Vec<f64>) -> Self {
        debug_assert!((q.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
        Self { q }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn get(&self, g: usize) -> f64 {
        self.q[g]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.q
    }
}

impl TryFrom<Vec<f64>> for GroupWeights {
    type Error = Error;

    fn try_from(q: Vec<f64>) -> Result<Self> {
        Self::from_vec(q)
    }
}

impl From<GroupWeights> for Vec<f64> {
    fn from(w: GroupWeights) -> Self {
        w.q
    }
}

/// The uniform starting point `q(0) = (1/m, ..., 1/m)`.
pub fn uniform_weights(m: usize) -> Result<GroupWeights> {
    GroupWeights::uniform(m)
}

/// `n_g / n` for each group.
pub fn group_fractions(dataset: &GroupedDataset) -> Vec<f64> {
    let n = dataset.len() as f64;
    dataset
        .group_index()
        .iter()
        .map(|members| members.len() as f64 / n)
        .collect()
}

/// Train / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::invalid(format!(
                "split fractions must all be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Per-part sizes for a group of `n` examples: floor for train and val,
    /// remainder to test.
    pub fn part_sizes(&self, n: usize) -> [usize; 3] {
        // absorb representation error such as 0.2 * 10 = 1.9999...
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        [train, val, n - train - val]
    }
}

/// The three parts of a stratified split.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: GroupedDataset,
    pub val: GroupedDataset,
    pub test: GroupedDataset,
}

/// Splits each group independently in the given proportions. The same seed
/// always yields the same split. Within each part examples keep their
/// original relative order.
pub fn stratified_split(
    dataset: &GroupedDataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Split> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (g, members) in dataset.group_index().iter().enumerate() {
        let sizes = fractions.part_sizes(members.len());
        if sizes.contains(&0) {
            return Err(Error::SplitInfeasible {
                group: g,
                size: members.len(),
                needed: 3,
            });
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let (train, rest) = shuffled.split_at(sizes[0]);
        let (val, test) = rest.split_at(sizes[1]);
        parts[0].extend_from_slice(train);
        parts[1].extend_from_slice(val);
        parts[2].extend_from_slice(test);
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(Split {
        train: dataset.subset(&parts[0])?,
        val: dataset.subset(&parts[1])?,
        test: dataset.subset(&parts[2])?,
    })
}
