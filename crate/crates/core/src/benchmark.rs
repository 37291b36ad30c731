//! Grid benchmark comparing ERM, upweighting and group DRO.
//!
//! Every grid cell is trained once per seed. Each run is early-stopped at the
//! checkpoint with the best worst-group validation accuracy, and within each
//! mode the cell with the best mean (over seeds) of that accuracy is
//! reported on the test set.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{binomial_std, evaluate, weighted_average_accuracy, GroupMetrics};
use crate::data::{group_fractions, stratified_split, GroupedDataset, SplitFractions};
use crate::datagen::{generate_splits, read_csv, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::ArchSpec;
use crate::optimizer::{
    early_stop_select, select_max_earliest, train, Mode, OptimizerConfig, TrainHistory,
};

fn yes() -> bool {
    true
}

fn default_fractions() -> SplitFractions {
    SplitFractions {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    }
}

/// Where the train / validation / test sets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated; validation and test are group-balanced unless
    /// `balanced_eval` is false.
    Synthetic {
        spec: SyntheticSpec,
        n_val: usize,
        n_test: usize,
        #[serde(default = "yes")]
        balanced_eval: bool,
    },
    /// Three CSV files.
    Csv {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
    },
    /// One CSV file split per group.
    CsvSplit {
        path: PathBuf,
        #[serde(default = "default_fractions")]
        fractions: SplitFractions,
        #[serde(default)]
        split_seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: GroupedDataset,
    pub val: GroupedDataset,
    pub test: GroupedDataset,
    /// Known only for generated data.
    pub balanced_eval: Option<bool>,
}

pub fn load_datasets(source: &DatasetSource) -> Result<Datasets> {
    match source {
        DatasetSource::Synthetic {
            spec,
            n_val,
            n_test,
            balanced_eval,
        } => {
            let s = generate_splits(spec, *n_val, *n_test, *balanced_eval)?;
            Ok(Datasets {
                train: s.train,
                val: s.val,
                test: s.test,
                balanced_eval: Some(*balanced_eval),
            })
        }
        DatasetSource::Csv { train, val, test } => {
            let train = read_csv(train, None, None)?;
            let (m, k) = (Some(train.num_groups()), Some(train.num_classes()));
            let val = read_csv(val, m, k)?;
            let test = read_csv(test, m, k)?;
            for (name, ds) in [("validation", &val), ("test", &test)] {
                if !ds.same_shape(&train) {
                    return Err(Error::Schema(format!(
                        "{name} set differs from the training set in m, d or K"
                    )));
                }
            }
            Ok(Datasets {
                train,
                val,
                test,
                balanced_eval: None,
            })
        }
        DatasetSource::CsvSplit {
            path,
            fractions,
            split_seed,
        } => {
            let all = read_csv(path, None, None)?;
            let s = stratified_split(&all, *fractions, *split_seed)?;
            Ok(Datasets {
                train: s.train,
                val: s.val,
                test: s.test,
                balanced_eval: Some(false),
            })
        }
    }
}

fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

fn default_lambdas() -> Vec<f64> {
    vec![1e-4]
}

fn default_adjustments() -> Vec<f64> {
    vec![0.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Hyperparameter axes. The adjustment constants are tried only for
/// group DRO and only at `adjustment_lambda` (the first lambda by default);
/// every other cell uses `C = 0`. An empty `epochs` list means the base
/// optimizer's epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_adjustments")]
    pub adjustments: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjustment_lambda: Option<f64>,
    #[serde(default)]
    pub epochs: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            modes: default_modes(),
            lambdas: default_lambdas(),
            adjustments: default_adjustments(),
            adjustment_lambda: None,
            epochs: Vec::new(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub arch: ArchSpec,
    /// Base settings; the grid overrides mode, lambda, C, epochs and seed.
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: Mode,
    pub lambda: f64,
    pub adjustment_c: f64,
    pub epochs: usize,
}

impl ExperimentConfig {
    /// Grid cells in a fixed order: mode, lambda, C, epochs.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let g = &self.grid;
        if g.modes.is_empty()
            || g.lambdas.is_empty()
            || g.adjustments.is_empty()
            || g.seeds.is_empty()
        {
            return Err(Error::invalid("every grid axis needs at least one value"));
        }
        let c_lambda = g.adjustment_lambda.unwrap_or(g.lambdas[0]);
        if !g.lambdas.contains(&c_lambda) {
            return Err(Error::invalid(format!(
                "adjustment_lambda {c_lambda} is not in the lambda grid"
            )));
        }
        let epochs = if g.epochs.is_empty() {
            vec![self.optimizer.epochs]
        } else {
            g.epochs.clone()
        };
        let mut cells = Vec::new();
        for &mode in &g.modes {
            for &lambda in &g.lambdas {
                let cs: &[f64] = if mode == Mode::GroupDro && lambda == c_lambda {
                    &g.adjustments
                } else {
                    &[0.0]
                };
                for &adjustment_c in cs {
                    for &e in &epochs {
                        cells.push(Cell {
                            mode,
                            lambda,
                            adjustment_c,
                            epochs: e,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn optimizer_for(&self, cell: &Cell, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            mode: cell.mode,
            lambda: cell.lambda,
            adjustment_c: cell.adjustment_c,
            epochs: cell.epochs,
            seed,
            ..self.optimizer.clone()
        }
    }

    /// Checks that every cell yields a valid optimizer configuration for a
    /// training set of `n` examples in `m` groups.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        for cell in self.cells()? {
            self.optimizer_for(&cell, 0).validate(n, m)?;
        }
        Ok(())
    }
}

/// One finished training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub cell: usize,
    pub seed: u64,
    pub config: OptimizerConfig,
    pub history: TrainHistory,
    pub selected_checkpoint: usize,
    pub val_worst_acc: f64,
    pub test: GroupMetrics,
    /// Test accuracy with groups weighted by their training proportions.
    pub test_avg_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: String,
    pub cell: usize,
    pub seed: u64,
    pub error: String,
}

/// The selected cell of one mode, with test metrics averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub cell: Cell,
    pub seeds: usize,
    pub val_worst_acc: f64,
    pub test_avg_acc: f64,
    pub test_avg_acc_std: f64,
    pub test_worst_acc: f64,
    pub test_worst_acc_std: f64,
    pub per_group_acc: Vec<f64>,
    /// Binomial standard deviation of each group's accuracy.
    pub per_group_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub cells: Vec<Cell>,
    pub rows: Vec<ModeSummary>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub train_fractions: Vec<f64>,
    pub balanced_eval: Option<bool>,
}

fn run_id(index: usize, cell: &Cell, seed: u64) -> String {
    format!(
        "r{index:04}-{}-l{}-c{}-e{}-s{seed}",
        cell.mode.as_str(),
        cell.lambda,
        cell.adjustment_c,
        cell.epochs
    )
}

/// Runs the whole grid with at most `jobs` concurrent runs. Output does not
/// depend on `jobs`. Failed runs are recorded and skipped.
pub fn run_benchmark(
    config: &ExperimentConfig,
    data: &Datasets,
    jobs: usize,
) -> Result<BenchmarkReport> {
    if jobs == 0 {
        return Err(Error::invalid("jobs must be at least 1"));
    }
    let cells = config.cells()?;
    config.validate(data.train.len(), data.train.num_groups())?;
    let arch = config.arch.resolve_for(&data.train)?;
    let fractions = group_fractions(&data.train);

    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| config.grid.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("could not start worker pool: {e}")))?;
    let outcomes: Vec<std::result::Result<RunRecord, RunFailure>> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(index, &(c, seed))| {
                let cell = &cells[c];
                let id = run_id(index, cell, seed);
                let opt = config.optimizer_for(cell, seed);
                let run = || -> Result<RunRecord> {
                    let (_, history) = train(&opt, &data.train, Some(&data.val), arch)?;
                    let selected = early_stop_select(&history)?;
                    let val_worst = history.checkpoints[selected]
                        .val
                        .as_ref()
                        .map(|v| v.worst_group_accuracy)
                        .expect("validation metrics recorded");
                    let test = evaluate(&history.params_at(selected), &data.test)?;
                    let test_avg_acc = weighted_average_accuracy(&test, &fractions)?;
                    Ok(RunRecord {
                        run_id: id.clone(),
                        cell: c,
                        seed,
                        config: opt.clone(),
                        history,
                        selected_checkpoint: selected,
                        val_worst_acc: val_worst,
                        test,
                        test_avg_acc,
                    })
                };
                run().map_err(|e| RunFailure {
                    run_id: id.clone(),
                    cell: c,
                    seed,
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(f) => failures.push(f),
        }
    }

    let mut rows = Vec::new();
    for &mode in &config.grid.modes {
        let candidates: Vec<usize> = (0..cells.len())
            .filter(|&c| cells[c].mode == mode)
            .collect();
        let scores: Vec<f64> = candidates
            .iter()
            .map(|&c| {
                let v: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.cell == c)
                    .map(|r| r.val_worst_acc)
                    .collect();
                if v.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            })
            .collect();
        let Some(best) = select_max_earliest(&scores) else {
            continue;
        };
        if scores[best] == f64::NEG_INFINITY {
            continue;
        }
        let c = candidates[best];
        let chosen: Vec<&RunRecord> = runs.iter().filter(|r| r.cell == c).collect();
        rows.push(summarize(mode, cells[c], scores[best], &chosen, &fractions));
    }

    Ok(BenchmarkReport {
        cells,
        rows,
        runs,
        failures,
        train_fractions: fractions,
        balanced_eval: data.balanced_eval,
    })
}

fn summarize(
    mode: Mode,
    cell: Cell,
    val_worst_acc: f64,
    runs: &[&RunRecord],
    fractions: &[f64],
) -> ModeSummary {
    let n = runs.len() as f64;
    let m = fractions.len();
    let sizes = &runs[0].test.group_sizes;
    let per_group_acc: Vec<f64> = (0..m)
        .map(|g| {
            runs.iter()
                .map(|r| r.test.per_group_accuracy[g])
                .sum::<f64>()
                / n
        })
        .collect();
    let per_group_std: Vec<f64> = (0..m)
        .map(|g| binomial_std(per_group_acc[g], sizes[g]))
        .collect();
    let test_worst_acc = runs
        .iter()
        .map(|r| r.test.worst_group_accuracy)
        .sum::<f64>()
        / n;
    let worst_n = runs[0].test.group_sizes[runs[0].test.worst_group];
    let test_avg_acc = runs.iter().map(|r| r.test_avg_acc).sum::<f64>() / n;
    let test_avg_acc_std = (0..m)
        .map(|g| fractions[g].powi(2) * per_group_std[g].powi(2))
        .sum::<f64>()
        .sqrt();
    ModeSummary {
        mode,
        cell,
        seeds: runs.len(),
        val_worst_acc,
        test_avg_acc,
        test_avg_acc_std,
        test_worst_acc,
        test_worst_acc_std: binomial_std(test_worst_acc, worst_n),
        per_group_acc,
        per_group_std,
    }
}

impl BenchmarkReport {
    /// Whether any run failed.
    pub fn partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn row(&self, mode: Mode) -> Option<&ModeSummary> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Tidy per-group rows for every run: train and validation metrics at
    /// every checkpoint, test metrics at the selected checkpoint.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "run_id,mode,lambda,C,checkpoint,split,avg_acc,worst_acc,group,acc,loss"
        )?;
        for r in &self.runs {
            let c = &r.config;
            let mut emit =
                |ckpt: usize, split: &str, metrics: &GroupMetrics| -> std::io::Result<()> {
                    let avg = weighted_average_accuracy(metrics, &self.train_fractions)
                        .unwrap_or(metrics.average_accuracy);
                    for g in 0..metrics.num_groups() {
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{},{},{},{}",
                            r.run_id,
                            c.mode.as_str(),
                            c.lambda,
                            c.adjustment_c,
                            ckpt,
                            split,
                            avg,
                            metrics.worst_group_accuracy,
                            g,
                            metrics.per_group_accuracy[g],
                            metrics.per_group_loss[g]
                        )?;
                    }
                    Ok(())
                };
            for ck in &r.history.checkpoints {
                emit(ck.index, "train", &ck.train)?;
                if let Some(v) = &ck.val {
                    emit(ck.index, "val", v)?;
                }
            }
            emit(r.selected_checkpoint, "test", &r.test)?;
        }
        Ok(())
    }

    /// Fixed-width comparison table, accuracies in percent with binomial
    /// standard deviations in parentheses.
    pub fn write_table<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_table(&self.rows, &self.failures, w)
    }

    pub fn summary(&self) -> BenchmarkSummary {
        BenchmarkSummary {
            cells: self.cells.clone(),
            rows: self.rows.clone(),
            runs: self
                .runs
                .iter()
                .map(|r| RunSummary {
                    run_id: r.run_id.clone(),
                    cell: r.cell,
                    seed: r.seed,
                    selected_checkpoint: r.selected_checkpoint,
                    val_worst_acc: r.val_worst_acc,
                    test_avg_acc: r.test_avg_acc,
                    test_worst_acc: r.test.worst_group_accuracy,
                })
                .collect(),
            failures: self.failures.clone(),
            train_fractions: self.train_fractions.clone(),
            balanced_eval: self.balanced_eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub cell: usize,
    pub seed: u64,
    pub selected_checkpoint: usize,
    pub val_worst_acc: f64,
    pub test_avg_acc: f64,
    pub test_worst_acc: f64,
}

/// Serializable digest of a [`BenchmarkReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub cells: Vec<Cell>,
    pub rows: Vec<ModeSummary>,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
    pub train_fractions: Vec<f64>,
    pub balanced_eval: Option<bool>,
}

pub fn write_table<W: Write>(
    rows: &[ModeSummary],
    failures: &[RunFailure],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<10} {:>8} {:>5} {:>6} {:>5} {:>10} {:>14} {:>14}",
        "mode", "lambda", "C", "epochs", "seeds", "val_worst", "test_avg", "test_worst"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:<10} {:>8} {:>5} {:>6} {:>5} {:>10} {:>14} {:>14}",
            r.mode.as_str(),
            r.cell.lambda,
            r.cell.adjustment_c,
            r.cell.epochs,
            r.seeds,
            format!("{:.1}", 100.0 * r.val_worst_acc),
            format!(
                "{:.1} ({:.1})",
                100.0 * r.test_avg_acc,
                100.0 * r.test_avg_acc_std
            ),
            format!(
                "{:.1} ({:.1})",
                100.0 * r.test_worst_acc,
                100.0 * r.test_worst_acc_std
            ),
        )?;
    }
    for f in failures {
        writeln!(w, "FAILED {}: {}", f.run_id, f.error)?;
    }
    Ok(())
}
