use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use groupdro::analysis::{evaluate, weighted_average_accuracy, GroupMetrics};
use groupdro::benchmark::{
    load_datasets, run_benchmark, write_table, BenchmarkSummary, ExperimentConfig,
};
use groupdro::data::group_fractions;
use groupdro::datagen::{generate_splits, write_csv};
use groupdro::optimizer::{early_stop_select, train, HistorySummary, Mode};
use groupdro::theory::{run_suite, SuiteConfig, SuiteItem, SuiteReport};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{
    fill_optimizer_defaults, load_object, parse, set, set_data_dir, set_opt, Exit, Failure,
    GenerateConfig, Stage, TrainConfig,
};
use crate::{
    BenchmarkArgs, Cli, Command, GenerateArgs, OptimizerFlags, ReportArgs, TheoryArgs, TrainArgs,
    VERSION,
};

type CmdResult = Result<Exit, Failure>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate(a) => generate(a, &cli.out_root),
        Command::Train(a) => train_cmd(a, &cli.out_root),
        Command::Benchmark(a) => benchmark(a, &cli.out_root),
        Command::Theory(a) => theory(a, &cli.out_root),
        Command::Report(a) => report(a),
    }
}

/// Reproduction metadata written next to every output.
#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    command: String,
    version: String,
    seeds: Vec<u64>,
}

fn write_meta(dir: &Path, command: &str, seeds: Vec<u64>) -> anyhow::Result<()> {
    write_json(
        &dir.join("meta.json"),
        &Meta {
            command: command.to_string(),
            version: VERSION.to_string(),
            seeds,
        },
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn output_dir(flag: Option<PathBuf>, config: Option<PathBuf>, root: &Path, name: &str) -> PathBuf {
    flag.or(config).unwrap_or_else(|| root.join(name))
}

fn make_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).runtime()?;
    println!("{text}");
    Ok(())
}

fn apply_optimizer_flags(v: &mut Value, f: &OptimizerFlags) {
    set_opt(v, "optimizer.variant", f.variant.as_ref());
    set_opt(v, "optimizer.eta_theta", f.eta_theta);
    set_opt(v, "optimizer.eta_q", f.eta_q);
    set_opt(v, "optimizer.momentum", f.momentum);
    set_opt(v, "optimizer.batch_size", f.batch_size);
    set_opt(v, "optimizer.sampler", f.sampler.as_ref());
    set_opt(v, "optimizer.checkpoint_every", f.checkpoint_every);
}

fn parse_mode(s: &str) -> Result<Mode, Failure> {
    s.parse::<Mode>().usage()
}

fn generate(a: GenerateArgs, root: &Path) -> CmdResult {
    let mut v = load_object(a.config.as_deref()).usage()?;
    set_opt(&mut v, "spec.seed", a.seed);
    set_opt(&mut v, "spec.n_total", a.n_total);
    set_opt(&mut v, "spec.p_align", a.p_align);
    set_opt(&mut v, "n_val", a.n_val);
    set_opt(&mut v, "n_test", a.n_test);
    if a.skewed_eval {
        set(&mut v, "balanced_eval", false);
    }
    let cfg: GenerateConfig = parse(v).usage()?;
    cfg.spec.validate().usage()?;
    if a.dry_run {
        print_json(&cfg)?;
        return Ok(Exit::Success);
    }
    let out = output_dir(a.out, cfg.output_dir.clone(), root, "data");
    let splits = generate_splits(&cfg.spec, cfg.n_val, cfg.n_test, cfg.balanced_eval).runtime()?;
    make_dir(&out).runtime()?;
    for (name, ds) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        write_csv(ds, &out.join(format!("{name}.csv"))).runtime()?;
        println!(
            "{name}: {} examples, group sizes {:?}",
            ds.len(),
            ds.group_sizes()
        );
    }
    let sidecar = GenerateConfig {
        output_dir: None,
        ..cfg.clone()
    };
    write_json(&out.join("spec.json"), &sidecar).runtime()?;
    write_meta(&out, "generate", vec![cfg.spec.seed]).runtime()?;
    println!("wrote {}", out.display());
    Ok(Exit::Success)
}

/// Contents of `summary.json` for a single training run.
#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    history: HistorySummary,
    selected_checkpoint: usize,
    balanced_eval: Option<bool>,
    test_selected: GroupMetrics,
    test_selected_avg_acc: f64,
    test_final: GroupMetrics,
    test_final_avg_acc: f64,
}

fn train_cmd(a: TrainArgs, root: &Path) -> CmdResult {
    let mut v = load_object(a.config.as_deref()).usage()?;
    if let Some(dir) = &a.data_dir {
        set_data_dir(&mut v, dir);
    }
    set_opt(&mut v, "arch", a.arch.as_ref());
    if let Some(m) = &a.mode {
        set(&mut v, "optimizer.mode", parse_mode(m)?);
    }
    set_opt(&mut v, "optimizer.lambda", a.lambda);
    set_opt(&mut v, "optimizer.adjustment_c", a.adjustment_c);
    set_opt(&mut v, "optimizer.epochs", a.epochs);
    set_opt(&mut v, "optimizer.seed", a.seed);
    set_opt(&mut v, "snapshot_every", a.snapshot_every);
    apply_optimizer_flags(&mut v, &a.optimizer);
    fill_optimizer_defaults(&mut v);
    let cfg: TrainConfig = parse(v).usage()?;
    if cfg.snapshot_every == Some(0) {
        return Err(anyhow!("snapshot_every must be at least 1")).usage();
    }
    if a.dry_run {
        print_json(&cfg)?;
        return Ok(Exit::Success);
    }

    let data = load_datasets(&cfg.dataset).runtime()?;
    let arch = cfg.arch.resolve_for(&data.train).usage()?;
    cfg.optimizer
        .validate(data.train.len(), data.train.num_groups())
        .usage()?;
    let (params, history) = train(&cfg.optimizer, &data.train, Some(&data.val), arch).runtime()?;
    let selected = early_stop_select(&history).runtime()?;
    let fractions = group_fractions(&data.train);
    let selected_params = history.params_at(selected);
    let test_selected = evaluate(&selected_params, &data.test).runtime()?;
    let test_final = evaluate(&params, &data.test).runtime()?;
    let summary = TrainSummary {
        history: history.summary(),
        selected_checkpoint: selected,
        balanced_eval: data.balanced_eval,
        test_selected_avg_acc: weighted_average_accuracy(&test_selected, &fractions).runtime()?,
        test_selected,
        test_final_avg_acc: weighted_average_accuracy(&test_final, &fractions).runtime()?,
        test_final,
    };

    let out = output_dir(a.out, cfg.output_dir.clone(), root, "train");
    let write = || -> anyhow::Result<()> {
        make_dir(&out)?;
        write_json(&out.join("config.json"), &cfg)?;
        write_meta(&out, "train", vec![cfg.optimizer.seed])?;
        let mut w = create(&out.join("history.csv"))?;
        history.write_csv(&mut w)?;
        w.flush()?;
        write_json(&out.join("summary.json"), &summary)?;
        fs::write(out.join("model.json"), params.to_json()?)?;
        fs::write(out.join("model_selected.json"), selected_params.to_json()?)?;
        if let Some(every) = cfg.snapshot_every {
            let snaps = out.join("snapshots");
            make_dir(&snaps)?;
            for ck in history
                .checkpoints
                .iter()
                .filter(|c| (c.index + 1) % every == 0)
            {
                let p = history.params_at(ck.index);
                fs::write(
                    snaps.join(format!("checkpoint_{:04}.json", ck.index)),
                    p.to_json()?,
                )?;
            }
        }
        Ok(())
    };
    write().runtime()?;
    print_train_summary(&summary, &mut io::stdout().lock()).runtime()?;
    println!("wrote {}", out.display());
    Ok(Exit::Success)
}

fn print_train_summary<W: Write>(s: &TrainSummary, w: &mut W) -> io::Result<()> {
    writeln!(w, "mode {}", s.history.mode.as_str())?;
    writeln!(
        w,
        "{:>10} {:>8} {:>14} {:>14} {:>12}",
        "checkpoint", "step", "train_worst", "val_worst", "val_avg"
    )?;
    for c in &s.history.checkpoints {
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        writeln!(
            w,
            "{:>10} {:>8} {:>14.1} {:>14} {:>12}",
            c.checkpoint,
            c.step,
            100.0 * c.worst_group_train_acc,
            pct(c.worst_group_val_acc),
            pct(c.avg_val_acc)
        )?;
    }
    writeln!(
        w,
        "selected checkpoint {}: test avg {:.1}, test worst-group {:.1}",
        s.selected_checkpoint,
        100.0 * s.test_selected_avg_acc,
        100.0 * s.test_selected.worst_group_accuracy
    )?;
    writeln!(
        w,
        "final checkpoint: test avg {:.1}, test worst-group {:.1}",
        100.0 * s.test_final_avg_acc,
        100.0 * s.test_final.worst_group_accuracy
    )
}

fn benchmark(a: BenchmarkArgs, root: &Path) -> CmdResult {
    let mut v = load_object(a.config.as_deref()).usage()?;
    if let Some(dir) = &a.data_dir {
        set_data_dir(&mut v, dir);
    }
    set_opt(&mut v, "arch", a.arch.as_ref());
    if let Some(modes) = &a.modes {
        let modes = modes
            .iter()
            .map(|m| parse_mode(m))
            .collect::<Result<Vec<_>, _>>()?;
        set(&mut v, "grid.modes", modes);
    }
    set_opt(&mut v, "grid.lambdas", a.lambdas.as_ref());
    set_opt(&mut v, "grid.adjustments", a.adjustments.as_ref());
    set_opt(&mut v, "grid.adjustment_lambda", a.adjustment_lambda);
    set_opt(&mut v, "grid.epochs", a.epochs.as_ref());
    set_opt(&mut v, "grid.seeds", a.seeds.as_ref());
    apply_optimizer_flags(&mut v, &a.optimizer);
    fill_optimizer_defaults(&mut v);
    let cfg: ExperimentConfig = parse(v).usage()?;
    let cells = cfg.cells().usage()?;
    if a.dry_run {
        print_json(&cfg)?;
        println!("{} cells x {} seeds", cells.len(), cfg.grid.seeds.len());
        return Ok(Exit::Success);
    }
    let jobs = match a.jobs {
        Some(0) => return Err(anyhow!("--jobs must be at least 1")).usage(),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };

    let data = load_datasets(&cfg.dataset).runtime()?;
    cfg.validate(data.train.len(), data.train.num_groups())
        .usage()?;
    cfg.arch.resolve_for(&data.train).usage()?;
    let report = run_benchmark(&cfg, &data, jobs).runtime()?;

    let out = output_dir(a.out, cfg.output_dir.clone(), root, "benchmark");
    let write = || -> anyhow::Result<()> {
        make_dir(&out)?;
        write_json(&out.join("config.json"), &cfg)?;
        write_meta(&out, "benchmark", cfg.grid.seeds.clone())?;
        let mut w = create(&out.join("results.csv"))?;
        report.write_csv(&mut w)?;
        w.flush()?;
        let mut t = create(&out.join("table.txt"))?;
        report.write_table(&mut t)?;
        t.flush()?;
        write_json(&out.join("summary.json"), &report.summary())?;
        Ok(())
    };
    write().runtime()?;
    report.write_table(io::stdout().lock()).runtime()?;
    println!("wrote {}", out.display());
    if report.partial() {
        eprintln!(
            "{} run(s) failed; results are partial",
            report.failures.len()
        );
        return Ok(Exit::Partial);
    }
    Ok(Exit::Success)
}

fn theory(a: TheoryArgs, root: &Path) -> CmdResult {
    let mut v = load_object(a.config.as_deref()).usage()?;
    if let Some(only) = &a.only {
        set(&mut v, "only", only.parse::<SuiteItem>().usage()?);
    }
    set_opt(&mut v, "tol", a.tol);
    set_opt(&mut v, "seeds", a.seeds);
    set_opt(&mut v, "horizons", a.horizons.as_ref());
    let cfg: SuiteConfig = parse(v).usage()?;
    if !(cfg.tol > 0.0 && cfg.tol.is_finite()) {
        return Err(anyhow!("tol must be positive")).usage();
    }
    if a.dry_run {
        print_json(&cfg)?;
        return Ok(Exit::Success);
    }
    let report = run_suite(&cfg).runtime()?;

    let out = output_dir(a.out, None, root, "theory");
    let write = || -> anyhow::Result<()> {
        make_dir(&out)?;
        write_json(&out.join("config.json"), &cfg)?;
        write_meta(&out, "theory", (0..cfg.seeds as u64).collect())?;
        write_json(&out.join("summary.json"), &report)?;
        if let Some(c) = &report.convergence {
            let mut w = create(&out.join("convergence.csv"))?;
            c.write_csv(&mut w)?;
            w.flush()?;
        }
        if let Some(s) = &report.counterexample {
            let mut w = create(&out.join("counterexample.csv"))?;
            writeln!(w, "w1,w2,theta,weighted_value,worst_case_loss")?;
            for m in &s.weighted {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    m.w1, m.w2, m.theta, m.weighted_value, m.worst_case_loss
                )?;
            }
            w.flush()?;
        }
        Ok(())
    };
    write().runtime()?;
    print_assertions(&report, &mut io::stdout().lock()).runtime()?;
    println!("wrote {}", out.display());
    if report.passed() {
        Ok(Exit::Success)
    } else {
        eprintln!("some theory checks failed");
        Ok(Exit::Runtime)
    }
}

fn print_assertions<W: Write>(r: &SuiteReport, w: &mut W) -> io::Result<()> {
    for a in &r.assertions {
        writeln!(
            w,
            "{} {}/{} measured={:e} threshold={:e}",
            if a.passed { "PASS" } else { "FAIL" },
            a.suite,
            a.name,
            a.measured,
            a.threshold
        )?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> CmdResult {
    let meta: Meta = read_json(&a.dir.join("meta.json")).usage()?;
    let summary = a.dir.join("summary.json");
    let mut out = io::stdout().lock();
    match meta.command.as_str() {
        "train" => {
            let s: TrainSummary = read_json(&summary).runtime()?;
            print_train_summary(&s, &mut out).runtime()?;
        }
        "benchmark" => {
            let s: BenchmarkSummary = read_json(&summary).runtime()?;
            write_table(&s.rows, &s.failures, &mut out).runtime()?;
        }
        "theory" => {
            let s: SuiteReport = read_json(&summary).runtime()?;
            print_assertions(&s, &mut out).runtime()?;
        }
        "generate" => {
            let s: GenerateConfig = read_json(&a.dir.join("spec.json")).runtime()?;
            let text = serde_json::to_string_pretty(&s).runtime()?;
            writeln!(out, "{text}").runtime()?;
        }
        other => return Err(anyhow!("unknown run kind '{other}'")).usage(),
    }
    writeln!(out, "version {}", meta.version).runtime()?;
    Ok(Exit::Success)
}
