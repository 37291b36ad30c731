//! Synthetic grouped data with a spurious attribute, and the CSV format.
//!
//! Each example has a label `y` and a binary attribute `a`; its group is
//! `K * a + y`. Features are a core block whose mean depends on `y`, a
//! spurious block whose mean depends on `a`, and pure noise dimensions.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Example, GroupedDataset};
use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 10_000;

fn default_classes() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d_core: usize,
    pub d_spu: usize,
    pub d_noise: usize,
    pub mu_core: f64,
    pub mu_spu: f64,
    pub sigma: f64,
    pub n_total: usize,
    /// Probability that `a` takes the value aligned with `y`.
    pub p_align: f64,
    pub seed: u64,
    /// Number of labels, 2 or 3.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Per-group core signal, overriding `mu_core`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_mu_core: Option<Vec<f64>>,
}

impl SyntheticSpec {
    pub fn num_groups(&self) -> usize {
        2 * self.classes
    }

    pub fn dim(&self) -> usize {
        self.d_core + self.d_spu + self.d_noise
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_align > 0.0 && self.p_align < 1.0) {
            return Err(Error::invalid(format!(
                "p_align must lie in (0, 1), got {}",
                self.p_align
            )));
        }
        if self.d_core == 0 {
            return Err(Error::invalid("d_core must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !self.mu_core.is_finite() || !self.mu_spu.is_finite() {
            return Err(Error::invalid("signal magnitudes must be finite"));
        }
        if self.classes != 2 && self.classes != 3 {
            return Err(Error::invalid(format!(
                "classes must be 2 or 3, got {}",
                self.classes
            )));
        }
        if self.classes == 3 && self.d_core < 3 {
            return Err(Error::invalid("three classes need d_core >= 3"));
        }
        if let Some(mu) = &self.group_mu_core {
            if mu.len() != self.num_groups() || mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "group_mu_core needs {} finite values",
                    self.num_groups()
                )));
            }
        }
        if self.n_total < self.num_groups() {
            return Err(Error::invalid(format!(
                "n_total = {} is smaller than the {} groups",
                self.n_total,
                self.num_groups()
            )));
        }
        Ok(())
    }

    /// The attribute value that agrees with label `y`.
    pub fn aligned_attribute(&self, y: usize) -> usize {
        usize::from(y == self.classes - 1)
    }

    pub fn group_of(&self, a: usize, y: usize) -> usize {
        self.classes * a + y
    }

    /// `(a, y)` from a group id.
    pub fn decode_group(&self, g: usize) -> (usize, usize) {
        (g / self.classes, g % self.classes)
    }

    /// Sign pattern of the core mean for label `y` at coordinate `j`.
    fn core_sign(&self, y: usize, j: usize) -> f64 {
        let on = if self.classes == 2 {
            y == 1
        } else {
            j % self.classes == y
        };
        if on {
            1.0
        } else {
            -1.0
        }
    }
}

/// Draws a dataset from `spec` using the spec's seed.
pub fn generate(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    generate_stream(spec, 0)
}

fn generate_stream(spec: &SyntheticSpec, stream: u64) -> Result<GroupedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let m = spec.num_groups();

    let mut pairs = Vec::with_capacity(spec.n_total);
    let mut populated = false;
    for _ in 0..MAX_RESAMPLES {
        pairs.clear();
        let mut counts = vec![0usize; m];
        for _ in 0..spec.n_total {
            let y = rng.random_range(0..spec.classes);
            let aligned = spec.aligned_attribute(y);
            let a = if rng.random::<f64>() < spec.p_align {
                aligned
            } else {
                1 - aligned
            };
            counts[spec.group_of(a, y)] += 1;
            pairs.push((a, y));
        }
        if counts.iter().all(|&c| c > 0) {
            populated = true;
            break;
        }
    }
    if !populated {
        return Err(Error::invalid(format!(
            "could not populate all {m} groups with n_total = {}",
            spec.n_total
        )));
    }

    let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let examples = pairs
        .into_iter()
        .map(|(a, y)| {
            let g = spec.group_of(a, y);
            let mu_core = spec.group_mu_core.as_ref().map_or(spec.mu_core, |v| v[g]);
            let s_spu = if a == 1 { 1.0 } else { -1.0 };
            let mut x = Vec::with_capacity(spec.dim());
            for j in 0..spec.d_core {
                x.push(spec.core_sign(y, j) * mu_core + noise.sample(&mut rng));
            }
            for _ in 0..spec.d_spu {
                x.push(s_spu * spec.mu_spu + noise.sample(&mut rng));
            }
            for _ in 0..spec.d_noise {
                x.push(noise.sample(&mut rng));
            }
            Example::new(x, y, g)
        })
        .collect();
    GroupedDataset::new(examples, m, spec.dim(), spec.classes)
}

/// Train, validation and test sets drawn from one spec.
#[derive(Debug, Clone)]
pub struct GeneratedSplits {
    pub train: GroupedDataset,
    pub val: GroupedDataset,
    pub test: GroupedDataset,
    /// Whether val and test were drawn with `p_align = 0.5`.
    pub balanced_eval: bool,
}

/// Draws the training set from `spec` and independent validation and test
/// sets of the given sizes. With `balanced_eval` the evaluation sets use
/// `p_align = 0.5`, so every group is equally likely; otherwise they share
/// the training skew.
pub fn generate_splits(
    spec: &SyntheticSpec,
    n_val: usize,
    n_test: usize,
    balanced_eval: bool,
) -> Result<GeneratedSplits> {
    let eval = |n_total: usize, stream: u64| {
        let s = SyntheticSpec {
            n_total,
            p_align: if balanced_eval { 0.5 } else { spec.p_align },
            ..spec.clone()
        };
        generate_stream(&s, stream)
    };
    Ok(GeneratedSplits {
        train: generate(spec)?,
        val: eval(n_val, 1)?,
        test: eval(n_test, 2)?,
        balanced_eval,
    })
}

/// Writes `g,y,x0,...` rows with 17 significant digits, which read back to
/// the identical `f64`.
pub fn write_csv_to<W: Write>(dataset: &GroupedDataset, w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    write!(w, "g,y")?;
    for j in 0..dataset.dim() {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for ex in dataset.examples() {
        write!(w, "{},{}", ex.group, ex.label)?;
        for v in &ex.features {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_csv(dataset: &GroupedDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(dataset, file).map_err(|e| Error::io(path, e))
}

/// Parses the CSV format. `num_groups` and `num_classes` default to one
/// more than the largest id present.
pub fn read_csv_from<R: BufRead>(
    reader: R,
    num_groups: Option<usize>,
    num_classes: Option<usize>,
) -> Result<GroupedDataset> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.split(',').collect();
    let expected_tail = (0..cols.len().saturating_sub(2)).map(|j| format!("x{j}"));
    if cols.len() < 2
        || cols[0] != "g"
        || cols[1] != "y"
        || !cols[2..].iter().copied().eq(expected_tail)
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be g,y,x0,x1,..., got '{header}'"),
        });
    }
    let dim = cols.len() - 2;

    let mut examples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Schema(format!(
                "line {lineno}: {} fields, expected {}",
                fields.len(),
                dim + 2
            )));
        }
        let parse_id = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad {what} '{s}'"),
            })
        };
        let g = parse_id(fields[0], "group")?;
        let y = parse_id(fields[1], "label")?;
        if num_groups.is_some_and(|m| g >= m) {
            return Err(Error::Schema(format!(
                "line {lineno}: group {g} out of range for m = {}",
                num_groups.unwrap_or_default()
            )));
        }
        let features = fields[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad feature '{s}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        examples.push(Example::new(features, y, g));
    }
    let m = num_groups.unwrap_or_else(|| examples.iter().map(|e| e.group + 1).max().unwrap_or(0));
    let k = num_classes.unwrap_or_else(|| examples.iter().map(|e| e.label + 1).max().unwrap_or(0));
    GroupedDataset::new(examples, m.max(1), dim, k.max(1))
}

pub fn read_csv(
    path: &Path,
    num_groups: Option<usize>,
    num_classes: Option<usize>,
) -> Result<GroupedDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(BufReader::new(file), num_groups, num_classes)
}
