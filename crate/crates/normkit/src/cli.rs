//! Command-line frontend: verification lab, training harness, statistics
//! collector and benchmarks behind one binary.
//!
//! Exit codes: 0 on success with all assertions passing, 1 on assertion
//! failure (a mismatched table cell, a failed gradient law, a diverged
//! training run), 2 on usage errors. Human-readable summaries go to
//! stdout; machine artifacts go to `--out`. No command writes anywhere
//! else.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{bench_suite, run_bench, suite_csv, BenchCase, BenchSuite, Precision};
use crate::harness::{
    collect_stats, default_copy_config, generate_task, p_sweep, robustness_probe, train_single,
    RunConfig, StatsReport, TaskSpec, TrainedModel,
};
use crate::nets::{read_checkpoint, write_checkpoint, GruModel};
use crate::normalizers::NormalizerKind;
use crate::util::{max_threads, parallel_map, subseed};
use crate::verify::{check_full_table, check_grad_invariance, GradScalingReport, TableCell};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "normkit",
    version,
    about = "Normalization kernels: invariance lab, gradient checks, training harness, benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the 5x6 normalizer-by-perturbation classification matrix and
    /// compare it against the expected table.
    CheckInvariance {
        /// Random layers per cell.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Verify the gradient-scaling laws at one or more scaling factors.
    CheckGrad {
        /// Comma-separated scaling factors.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 2.0, 10.0])]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train the configured model over every configured seed.
    Train {
        /// JSON run config; overrides every flag below.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Normalizer for the default config: none, rms_norm,
        /// p_rms_norm:<p>, layer_norm, l2_norm.
        #[arg(long, default_value = "rms_norm")]
        normalizer: String,
        #[arg(long)]
        steps: Option<u64>,
        /// Single seed for the default config (the config file's seed
        /// list wins when --config is given).
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the first run's trained model checkpoint here.
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train one run per partial ratio and compare final losses.
    SweepP {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated partial ratios in (0, 1].
        #[arg(
            long,
            value_delimiter = ',',
            default_values_t = vec![0.0625, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        )]
        p_values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train (or load) a GRU and collect per-position activation
    /// statistics.
    Stats {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Normalizer for the default config (see train).
        #[arg(long, default_value = "rms_norm")]
        normalizer: String,
        /// Probe positions 1..=N.
        #[arg(long, default_value_t = 20)]
        positions: usize,
        /// Load a checkpoint instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Microbenchmark normalizer kernels.
    Bench {
        /// Run the full size x precision x normalizer suite.
        #[arg(long)]
        suite: bool,
        /// Vector size for a single case (ignored with --suite).
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train the two re-scaling-invariant normalizers with a shifted
    /// weight-initialization center and compare stability.
    Robustness {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        init_center: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors and 0 for --help/--version.
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => 2,
                _ => 1,
            }
        }
    }
}

fn parse_normalizer(spec: &str) -> Result<Option<NormalizerKind>> {
    let kind = match spec {
        "none" => return Ok(None),
        "rms_norm" => NormalizerKind::rms_norm(),
        "layer_norm" => NormalizerKind::layer_norm(),
        "l2_norm" => NormalizerKind::l2_norm(),
        other => match other.strip_prefix("p_rms_norm:") {
            Some(p) => {
                let p: f64 = p.parse().map_err(|_| {
                    Error::InvalidConfig(format!("bad partial ratio in normalizer spec {other:?}"))
                })?;
                NormalizerKind::p_rms_norm(p)
            }
            None => {
                return Err(Error::InvalidConfig(format!(
                    "unknown normalizer {other:?} (expected none, rms_norm, p_rms_norm:<p>, \
                     layer_norm, l2_norm)"
                )))
            }
        },
    };
    kind.validate()?;
    Ok(Some(kind))
}

/// Defaults, overridden by flags, overridden by the config file.
fn effective_config(
    config_path: &Option<PathBuf>,
    normalizer: &str,
    steps: Option<u64>,
    seed: u64,
) -> Result<RunConfig> {
    if let Some(path) = config_path {
        let json = std::fs::read_to_string(path)?;
        return RunConfig::from_json(&json);
    }
    let mut config = default_copy_config(parse_normalizer(normalizer)?);
    config.seeds = vec![seed];
    if let Some(steps) = steps {
        config.steps = steps;
    }
    config.validate()?;
    Ok(config)
}

fn write_artifact(out: &Option<PathBuf>, contents: &str) -> Result<()> {
    if let Some(path) = out {
        std::fs::write(path, contents)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn table_csv(cells: &[TableCell]) -> String {
    let mut out = String::from("normalizer,property,expected,observed,max_deviation\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.normalizer, c.property, c.expected, c.observed, c.max_deviation
        ));
    }
    out
}

fn grad_csv(reports: &[GradScalingReport]) -> String {
    let mut out = String::from(
        "delta,ratio_observed,expected,pass,gain_dev,bias_dev,weight_input_dev,weight_ratio_dev\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.delta,
            r.ratio_observed,
            r.expected,
            r.pass,
            r.gain_dev,
            r.bias_dev,
            r.weight_input_dev,
            r.weight_ratio_dev
        ));
    }
    out
}

fn stats_csv(report: &StatsReport) -> String {
    let mut out = String::from("table,position,mean,std\n");
    for (name, table) in [("pre_gain", &report.pre_gain), ("post_gain", &report.post_gain)] {
        for p in &table.per_position {
            out.push_str(&format!("{name},{},{},{}\n", p.position, p.mean, p.std));
        }
        out.push_str(&format!("{name},all,{},{}\n", table.all.mean, table.all.std));
    }
    out
}

fn save_gru_checkpoint(model: &GruModel, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    // Cell plus readout: two layers.
    write_checkpoint(&mut file, 2, &model.named_params())?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::CheckInvariance {
            trials,
            seed,
            out,
            format,
        } => {
            let cells = check_full_table(trials, seed)?;
            print_table(&cells);
            let artifact = match format {
                Format::Json => serde_json::to_string_pretty(&cells)?,
                Format::Csv => table_csv(&cells),
            };
            write_artifact(&out, &artifact)?;
            let mismatches: Vec<&TableCell> = cells.iter().filter(|c| !c.matches()).collect();
            if mismatches.is_empty() {
                println!("all {} cells match the expected table", cells.len());
                Ok(0)
            } else {
                for c in &mismatches {
                    println!(
                        "MISMATCH {} / {}: expected {} observed {} (max deviation {:.3e}, \
                         escapes {}/{})",
                        c.normalizer,
                        c.property,
                        verdict_mark(c.expected),
                        verdict_mark(c.observed),
                        c.max_deviation,
                        c.escape_trials,
                        c.trials
                    );
                }
                Ok(1)
            }
        }
        Command::CheckGrad {
            deltas,
            seed,
            out,
            format,
        } => {
            let mut reports = Vec::with_capacity(deltas.len());
            for delta in deltas {
                reports.push(check_grad_invariance(delta, seed)?);
            }
            for r in &reports {
                println!(
                    "delta {:>6}: ratio {:.12} (expected {:.12})  gain dev {:.2e}  bias dev \
                     {:.2e}  weight-under-input dev {:.2e}  {}",
                    r.delta,
                    r.ratio_observed,
                    r.expected,
                    r.gain_dev,
                    r.bias_dev,
                    r.weight_input_dev,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            let artifact = match format {
                Format::Json => serde_json::to_string_pretty(&reports)?,
                Format::Csv => grad_csv(&reports),
            };
            write_artifact(&out, &artifact)?;
            Ok(if reports.iter().all(|r| r.pass) { 0 } else { 1 })
        }
        Command::Train {
            config,
            normalizer,
            steps,
            seed,
            save_model,
            out,
            format,
        } => {
            let config = effective_config(&config, &normalizer, steps, seed)?;
            let seeds = config.seeds.clone();
            let outcomes = parallel_map(seeds, max_threads(), |s| train_single(&config, s));
            let mut reports = Vec::new();
            let mut first_model = None;
            for outcome in outcomes {
                let (report, model) = outcome?;
                if first_model.is_none() {
                    first_model = Some(model);
                }
                println!(
                    "seed {}: final loss {:.6}, eval {:.4}{}",
                    report.seed,
                    report.final_loss,
                    report.final_eval,
                    if report.diverged {
                        format!(" DIVERGED at step {:?}", report.diverged_at_step)
                    } else {
                        String::new()
                    }
                );
                reports.push(report);
            }
            if let (Some(path), Some(TrainedModel::Gru(model))) = (&save_model, &first_model) {
                save_gru_checkpoint(model, path)?;
                println!("saved model checkpoint to {}", path.display());
            }
            let artifact = match format {
                Format::Json => serde_json::to_string_pretty(&reports)?,
                Format::Csv => reports[0].curve_csv(),
            };
            write_artifact(&out, &artifact)?;
            Ok(if reports.iter().any(|r| r.diverged) { 1 } else { 0 })
        }
        Command::SweepP {
            config,
            p_values,
            seed,
            steps,
            out,
            format,
        } => {
            let config = effective_config(&config, "rms_norm", steps, seed)?;
            let sweep = p_sweep(&config, &p_values)?;
            for entry in &sweep {
                println!(
                    "p {:>6}: k {:>3}, median final loss {:.6}{}",
                    entry.p,
                    entry.subset_len,
                    entry.median_final_loss,
                    if entry.all_converged { "" } else { " (diverged runs)" }
                );
            }
            let artifact = match format {
                Format::Json => serde_json::to_string_pretty(&sweep)?,
                Format::Csv => {
                    let mut csv = String::from("p,subset_len,median_final_loss,all_converged\n");
                    for e in &sweep {
                        csv.push_str(&format!(
                            "{},{},{},{}\n",
                            e.p, e.subset_len, e.median_final_loss, e.all_converged
                        ));
                    }
                    csv
                }
            };
            write_artifact(&out, &artifact)?;
            Ok(0)
        }
        Command::Stats {
            config,
            normalizer,
            positions,
            model,
            steps,
            seed,
            out,
            format,
        } => {
            let config = effective_config(&config, &normalizer, steps, seed)?;
            let run_seed = config.seeds[0];
            let gru = match model {
                Some(path) => {
                    let mut file = std::fs::File::open(&path)?;
                    let (_, params) = read_checkpoint(&mut file)?;
                    let mut fresh = match crate::harness::build_model_for(&config, run_seed) {
                        TrainedModel::Gru(m) => m,
                        TrainedModel::Mlp(_) => {
                            return Err(Error::InvalidConfig(
                                "stats need a GRU model config".into(),
                            ))
                        }
                    };
                    fresh.load_named_params(&params)?;
                    fresh
                }
                None => match train_single(&config, run_seed)? {
                    (_, TrainedModel::Gru(m)) => m,
                    _ => {
                        return Err(Error::InvalidConfig("stats need a GRU model config".into()))
                    }
                },
            };
            let dataset = generate_task(
                &TaskSpec {
                    kind: config.task,
                    seed: subseed(run_seed, &[0x57a7]),
                },
                config.eval_instances,
            )?;
            let report = collect_stats(&gru, &dataset, positions)?;
            println!("probe: {}", report.probe);
            for (name, table) in
                [("pre-gain", &report.pre_gain), ("post-gain", &report.post_gain)]
            {
                println!("{name}: std spread {:.4}", table.std_spread());
                for p in &table.per_position {
                    println!("  position {:>2}: M {:+.4}  S {:.4}", p.position, p.mean, p.std);
                }
                println!("  ALL        : M {:+.4}  S {:.4}", table.all.mean, table.all.std);
            }
            let artifact = match format {
                Format::Json => serde_json::to_string_pretty(&report)?,
                Format::Csv => stats_csv(&report),
            };
            write_artifact(&out, &artifact)?;
            Ok(0)
        }
        Command::Bench {
            suite,
            n,
            batch,
            iters,
            warmup,
            seed: _,
            out,
            format,
        } => {
            let results: BenchSuite = if suite {
                bench_suite(batch, iters, warmup)?
            } else {
                let mut results = Vec::new();
                for normalizer in crate::bench::suite_normalizers() {
                    results.push(run_bench(&BenchCase {
                        normalizer,
                        n,
                        batch,
                        precision: Precision::F64,
                        iters,
                        warmup_iters: warmup,
                    })?);
                }
                BenchSuite {
                    environment: crate::bench::BenchEnvironment::capture(),
                    results,
                }
            };
            for r in &results.results {
                println!(
                    "{:<11} n {:>5} {}: median {:>12.1} ns/op (p10 {:>12.1}, p90 {:>12.1}), \
                     {} flops [{}]",
                    r.case.normalizer.name(),
                    r.case.n,
                    r.case.precision.name(),
                    r.median_ns,
                    r.p10_ns,
                    r.p90_ns,
                    r.flop_count,
                    r.timed_op
                );
            }
            let artifact = match format {
                Format::Json => serde_json::to_string_pretty(&results)?,
                Format::Csv => suite_csv(&results.results),
            };
            write_artifact(&out, &artifact)?;
            Ok(0)
        }
        Command::Robustness {
            config,
            init_center,
            seed,
            steps,
            out,
            format,
        } => {
            let config = effective_config(&config, "rms_norm", steps, seed)?;
            let probe = robustness_probe(&config, init_center)?;
            for (name, report) in [("rms_norm", &probe.rms_norm), ("layer_norm", &probe.layer_norm)]
            {
                println!(
                    "{name}: final loss {:.6}, diverged {}",
                    report.final_loss, report.diverged
                );
            }
            let artifact = match format {
                Format::Json => serde_json::to_string_pretty(&probe)?,
                Format::Csv => {
                    let mut csv = String::from("variant,diverged,diverged_at_step,final_loss\n");
                    for (name, r) in
                        [("rms_norm", &probe.rms_norm), ("layer_norm", &probe.layer_norm)]
                    {
                        csv.push_str(&format!(
                            "{name},{},{},{}\n",
                            r.diverged,
                            r.diverged_at_step.map(|s| s.to_string()).unwrap_or_default(),
                            r.final_loss
                        ));
                    }
                    csv
                }
            };
            write_artifact(&out, &artifact)?;
            Ok(0)
        }
    }
}

fn verdict_mark(invariant: bool) -> &'static str {
    if invariant {
        "invariant"
    } else {
        "not-invariant"
    }
}

fn print_table(cells: &[TableCell]) {
    println!(
        "{:<12} {:<26} {:>9} {:>9}  {:>13} {:>8}",
        "normalizer", "property", "expected", "observed", "max deviation", "status"
    );
    for c in cells {
        println!(
            "{:<12} {:<26} {:>9} {:>9}  {:>13.3e} {:>8}",
            c.normalizer,
            c.property,
            if c.expected { "yes" } else { "no" },
            if c.observed { "yes" } else { "no" },
            c.max_deviation,
            if c.matches() { "ok" } else { "MISMATCH" }
        );
    }
}
