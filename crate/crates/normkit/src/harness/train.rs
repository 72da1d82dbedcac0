//! The training loop and its sweeps.

use rand::Rng;

use super::config::{ModelConfig, RunConfig};
use super::report::{CurvePoint, PSweepReport, RobustnessReport, RunReport};
use super::task::{generate_task, Dataset, TaskSpec};
use crate::nets::{AdamState, GruModel, InitScheme, Mlp};
use crate::normalizers::{NormalizerKind, DEFAULT_EPSILON};
use crate::tensor::Vector;
use crate::util::{cpu_time_s, max_threads, parallel_map, rng_for, subseed};
use crate::{Error, Result};

/// A run is flagged diverged once its batch loss is non-finite or
/// exceeds this bound.
pub const DIVERGENCE_LOSS: f64 = 1e6;

const TAG_INIT: u64 = 0x1219;
const TAG_TRAIN_DATA: u64 = 0x7a5c;
const TAG_EVAL_DATA: u64 = 0xe7a1;
const TAG_BATCH: u64 = 0xba7c;

/// The model a finished run leaves behind.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Gru(GruModel),
    Mlp(Mlp),
}

impl TrainedModel {
    pub fn as_gru(&self) -> Option<&GruModel> {
        match self {
            TrainedModel::Gru(m) => Some(m),
            TrainedModel::Mlp(_) => None,
        }
    }

    fn flatten_params(&self) -> Vector {
        match self {
            TrainedModel::Gru(m) => m.flatten_params(),
            TrainedModel::Mlp(m) => m.flatten_params(),
        }
    }

    fn set_from_flat(&mut self, flat: &Vector) -> Result<()> {
        match self {
            TrainedModel::Gru(m) => m.set_from_flat(flat),
            TrainedModel::Mlp(m) => m.set_from_flat(flat),
        }
    }
}

fn build_model(config: &RunConfig, seed: u64) -> TrainedModel {
    let mut rng = rng_for(seed, &[TAG_INIT]);
    match &config.model {
        ModelConfig::Gru {
            hidden_dim,
            norm_scope,
        } => TrainedModel::Gru(GruModel::new(
            config.task.input_dim(),
            *hidden_dim,
            config.task.output_dim(),
            config.normalizer,
            *norm_scope,
            &config.init,
            &mut rng,
        )),
        ModelConfig::Mlp { hidden_dims } => {
            let mut dims = vec![config.task.input_dim()];
            dims.extend_from_slice(hidden_dims);
            dims.push(config.task.output_dim());
            TrainedModel::Mlp(Mlp::new(&dims, config.normalizer, &config.init, &mut rng))
        }
    }
}

/// Builds the configured (untrained) model with the seed's init
/// stream; used by checkpoint loading, which needs the architecture
/// without a training run.
pub fn build_model_for(config: &RunConfig, seed: u64) -> TrainedModel {
    build_model(config, seed)
}

/// Mean loss and summed flat gradient over one batch of dataset indices.
fn batch_loss_and_grads(
    model: &TrainedModel,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<(f64, Vector)> {
    let batch = indices.len() as f64;
    let mut total_loss = 0.0;
    let mut grads: Option<Vector> = None;
    let mut accumulate = |g: Vector| match &mut grads {
        Some(acc) => {
            for (a, v) in acc.0.iter_mut().zip(g.iter()) {
                *a += v;
            }
        }
        None => grads = Some(g),
    };
    match (model, dataset) {
        (TrainedModel::Gru(m), Dataset::Copy { instances, .. }) => {
            for &idx in indices {
                let inst = &instances[idx];
                let (logits, cache) = m.forward(&inst.inputs)?;
                let steps = logits.len() as f64;
                let mut d_logits = Vec::with_capacity(logits.len());
                for (l, &sym) in logits.iter().zip(&inst.symbols) {
                    let (loss, d) = crate::nets::softmax_cross_entropy(l, sym)?;
                    total_loss += loss / steps;
                    d_logits.push(d.scale(1.0 / (steps * batch)));
                }
                accumulate(m.backward(&cache, &d_logits)?);
            }
        }
        (TrainedModel::Gru(m), Dataset::Adding { instances, .. }) => {
            for &idx in indices {
                let inst = &instances[idx];
                let (logits, cache) = m.forward(&inst.inputs)?;
                let pred = logits.last().expect("non-empty sequence");
                let target = Vector::from(vec![inst.target]);
                let (loss, d) = crate::nets::mse(pred, &target)?;
                total_loss += loss;
                let mut d_logits = vec![Vector::zeros(1); logits.len()];
                *d_logits.last_mut().unwrap() = d.scale(1.0 / batch);
                accumulate(m.backward(&cache, &d_logits)?);
            }
        }
        (TrainedModel::Mlp(m), Dataset::Spiral { points, .. }) => {
            for &idx in indices {
                let point = &points[idx];
                let (out, caches) = m.forward(&point.input)?;
                let (loss, d) = crate::nets::softmax_cross_entropy(&out, point.label)?;
                total_loss += loss;
                accumulate(m.backward(&caches, &d.scale(1.0 / batch))?);
            }
        }
        _ => {
            return Err(Error::Unsupported(
                "model and dataset kinds do not match".into(),
            ))
        }
    }
    Ok((
        total_loss / batch,
        grads.expect("batch indices are non-empty"),
    ))
}

/// Task metric on a held-out set: classification accuracy, or mean
/// squared error for the adding problem.
fn eval_metric(model: &TrainedModel, dataset: &Dataset) -> Result<f64> {
    match (model, dataset) {
        (TrainedModel::Gru(m), Dataset::Copy { instances, .. }) => {
            let mut correct = 0usize;
            let mut total = 0usize;
            for inst in instances {
                let (logits, _) = m.forward(&inst.inputs)?;
                for (l, &sym) in logits.iter().zip(&inst.symbols) {
                    let pred = argmax(l);
                    correct += usize::from(pred == sym);
                    total += 1;
                }
            }
            Ok(correct as f64 / total.max(1) as f64)
        }
        (TrainedModel::Gru(m), Dataset::Adding { instances, .. }) => {
            let mut total = 0.0;
            for inst in instances {
                let (logits, _) = m.forward(&inst.inputs)?;
                let pred = logits.last().expect("non-empty sequence");
                let diff = pred[0] - inst.target;
                total += diff * diff;
            }
            Ok(total / instances.len().max(1) as f64)
        }
        (TrainedModel::Mlp(m), Dataset::Spiral { points, .. }) => {
            let mut correct = 0usize;
            for point in points {
                let (out, _) = m.forward(&point.input)?;
                correct += usize::from(argmax(&out) == point.label);
            }
            Ok(correct as f64 / points.len().max(1) as f64)
        }
        _ => Err(Error::Unsupported(
            "model and dataset kinds do not match".into(),
        )),
    }
}

fn argmax(v: &Vector) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Trains one seed. Returns the report together with the trained model
/// so callers can probe it (statistics, checkpoints).
pub fn train_single(config: &RunConfig, seed: u64) -> Result<(RunReport, TrainedModel)> {
    config.validate()?;
    let train_set = generate_task(
        &TaskSpec {
            kind: config.task,
            seed: subseed(seed, &[TAG_TRAIN_DATA]),
        },
        config.train_instances,
    )?;
    let eval_set = generate_task(
        &TaskSpec {
            kind: config.task,
            seed: subseed(seed, &[TAG_EVAL_DATA]),
        },
        config.eval_instances,
    )?;
    let mut model = build_model(config, seed);
    let mut params = model.flatten_params();
    let mut adam = AdamState::new(params.len(), config.optimizer);
    let mut warnings = Vec::new();
    if let Some(k) = config.partial_subset_len() {
        if k == 1 {
            warnings.push(
                "partial statistic collapses to a single element (k = 1), a known-unstable regime"
                    .to_string(),
            );
        }
    }

    let wall_start = std::time::Instant::now();
    let cpu_start = cpu_time_s();
    let mut batch_rng = rng_for(seed, &[TAG_BATCH]);
    let mut curve = Vec::new();
    let mut window_losses = Vec::new();
    let mut all_losses = Vec::with_capacity(config.steps as usize);
    let mut diverged = false;
    let mut diverged_at_step = None;

    for step in 1..=config.steps {
        let indices: Vec<usize> = (0..config.batch_size)
            .map(|_| batch_rng.random_range(0..train_set.len()))
            .collect();
        let (loss, grads) = batch_loss_and_grads(&model, &train_set, &indices)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            diverged = true;
            diverged_at_step = Some(step);
            warnings.push(format!("training diverged at step {step} with loss {loss}"));
            break;
        }
        all_losses.push(loss);
        window_losses.push(loss);
        match adam.step(&mut params, &grads) {
            Ok(()) => {}
            Err(Error::NonFinite(msg)) => {
                diverged = true;
                diverged_at_step = Some(step);
                warnings.push(format!("training diverged at step {step}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        }
        model.set_from_flat(&params)?;
        if step % config.eval_every == 0 || step == config.steps {
            let window_mean =
                window_losses.iter().sum::<f64>() / window_losses.len().max(1) as f64;
            window_losses.clear();
            curve.push(CurvePoint {
                step,
                train_loss: window_mean,
                eval_metric: eval_metric(&model, &eval_set)?,
                wallclock_s: wall_start.elapsed().as_secs_f64(),
                cpu_time_s: cpu_time_s() - cpu_start,
            });
        }
    }

    // Final loss over the last tenth of the recorded steps; smoothing
    // keeps cross-run comparisons out of single-batch noise.
    let tail = (all_losses.len() / 10).max(1).min(all_losses.len().max(1));
    let final_loss = if all_losses.is_empty() {
        f64::NAN
    } else {
        all_losses[all_losses.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    let final_eval = curve.last().map(|p| p.eval_metric).unwrap_or(f64::NAN);
    let report = RunReport {
        schema_version: super::config::SCHEMA_VERSION,
        config: config.clone(),
        seed,
        curve,
        final_loss,
        final_eval,
        diverged,
        diverged_at_step,
        warnings,
        stats: None,
    };
    Ok((report, model))
}

/// Trains every seed in the config (in parallel up to `NORMKIT_THREADS`)
/// and returns the per-seed reports in seed order.
pub fn train(config: &RunConfig) -> Result<Vec<RunReport>> {
    config.validate()?;
    let seeds = config.seeds.clone();
    let outcomes = parallel_map(seeds, max_threads(), |seed| {
        train_single(config, seed).map(|(report, _)| report)
    });
    outcomes.into_iter().collect()
}

/// Median of a non-empty slice (NaN when empty).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in median input"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// Runs the config once per partial ratio, sharing the config's seeds
/// across ratios.
pub fn p_sweep(config: &RunConfig, p_values: &[f64]) -> Result<Vec<PSweepReport>> {
    if p_values.is_empty() {
        return Err(Error::InvalidConfig("p_sweep needs at least one ratio".into()));
    }
    let epsilon = config
        .normalizer
        .map(|k| k.epsilon)
        .unwrap_or(DEFAULT_EPSILON);
    let mut reports = Vec::with_capacity(p_values.len());
    for &p in p_values {
        let mut swept = config.clone();
        swept.normalizer = Some(NormalizerKind::p_rms_norm(p).with_epsilon(epsilon));
        swept.validate()?;
        let runs = train(&swept)?;
        let finals: Vec<f64> = runs
            .iter()
            .filter(|r| !r.diverged)
            .map(|r| r.final_loss)
            .collect();
        reports.push(PSweepReport {
            p,
            subset_len: swept.partial_subset_len().unwrap_or(0),
            median_final_loss: median(&finals),
            all_converged: runs.iter().all(|r| !r.diverged),
            runs,
        });
    }
    Ok(reports)
}

/// Trains the two re-scaling-invariant normalizers with the weight
/// initialization centered at `init_center`, on the config's first seed.
/// Both reports are emitted whether or not either run diverges.
pub fn robustness_probe(config: &RunConfig, init_center: f64) -> Result<RobustnessReport> {
    if !init_center.is_finite() {
        return Err(Error::InvalidConfig("init_center must be finite".into()));
    }
    let seed = *config
        .seeds
        .first()
        .ok_or_else(|| Error::InvalidConfig("at least one seed is required".into()))?;
    let epsilon = config
        .normalizer
        .map(|k| k.epsilon)
        .unwrap_or(DEFAULT_EPSILON);
    let run = |kind: NormalizerKind| -> Result<RunReport> {
        let mut c = config.clone();
        c.normalizer = Some(kind.with_epsilon(epsilon));
        c.init = InitScheme {
            center: init_center,
            ..config.init
        };
        c.seeds = vec![seed];
        let (report, _) = train_single(&c, seed)?;
        Ok(report)
    };
    Ok(RobustnessReport {
        init_center,
        rms_norm: run(NormalizerKind::rms_norm())?,
        layer_norm: run(NormalizerKind::layer_norm())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::default_copy_config;

    fn tiny_config(norm: Option<NormalizerKind>) -> RunConfig {
        let mut config = default_copy_config(norm);
        config.model = ModelConfig::Gru {
            hidden_dim: 8,
            norm_scope: crate::nets::GruNormScope::AllGates,
        };
        config.task = super::super::task::TaskKind::SequenceCopy { len: 5, vocab: 4 };
        config.steps = 40;
        config.eval_every = 20;
        config.batch_size = 4;
        config.train_instances = 32;
        config.eval_instances = 16;
        config.seeds = vec![1];
        config
    }

    #[test]
    fn zero_steps_rejected_by_train() {
        let mut config = tiny_config(None);
        config.steps = 0;
        assert!(matches!(
            train(&config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn identical_config_and_seed_give_bit_identical_curves() {
        let config = tiny_config(Some(NormalizerKind::rms_norm()));
        let (a, _) = train_single(&config, 3).unwrap();
        let (b, _) = train_single(&config, 3).unwrap();
        assert_eq!(a.curve.len(), b.curve.len());
        for (p, q) in a.curve.iter().zip(&b.curve) {
            assert_eq!(p.step, q.step);
            assert_eq!(p.train_loss.to_bits(), q.train_loss.to_bits());
            assert_eq!(p.eval_metric.to_bits(), q.eval_metric.to_bits());
        }
        assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    }

    #[test]
    fn curve_steps_are_monotone_and_loss_decreases() {
        let config = tiny_config(Some(NormalizerKind::rms_norm()));
        let (report, _) = train_single(&config, 7).unwrap();
        assert!(!report.diverged);
        for w in report.curve.windows(2) {
            assert!(w[1].step > w[0].step);
            assert!(w[1].wallclock_s >= w[0].wallclock_s);
        }
        let first = report.curve.first().unwrap().train_loss;
        let last = report.curve.last().unwrap().train_loss;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn adding_problem_trains_without_divergence() {
        let mut config = tiny_config(Some(NormalizerKind::rms_norm()));
        config.task = super::super::task::TaskKind::AddingProblem { len: 6 };
        let (report, _) = train_single(&config, 5).unwrap();
        assert!(!report.diverged);
        assert!(report.final_loss.is_finite());
    }

    #[test]
    fn mlp_spiral_trains() {
        let mut config = tiny_config(Some(NormalizerKind::layer_norm()));
        config.model = ModelConfig::Mlp {
            hidden_dims: vec![16],
        };
        config.task = super::super::task::TaskKind::Spiral2d {
            classes: 2,
            points: 64,
        };
        config.train_instances = 64;
        config.eval_instances = 64;
        config.steps = 60;
        let (report, _) = train_single(&config, 2).unwrap();
        assert!(!report.diverged);
        let first = report.curve.first().unwrap().train_loss;
        let last = report.curve.last().unwrap().train_loss;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn p_one_sweep_bit_matches_rms_run() {
        let config = tiny_config(Some(NormalizerKind::rms_norm()));
        let sweep = p_sweep(&config, &[1.0]).unwrap();
        let rms_runs = train(&config).unwrap();
        assert_eq!(sweep[0].runs.len(), rms_runs.len());
        for (a, b) in sweep[0].runs.iter().zip(&rms_runs) {
            for (p, q) in a.curve.iter().zip(&b.curve) {
                assert_eq!(p.train_loss.to_bits(), q.train_loss.to_bits());
            }
        }
    }

    #[test]
    fn tiny_partial_subset_warns_and_never_crashes() {
        let mut config = tiny_config(Some(NormalizerKind::p_rms_norm(0.01)));
        config.steps = 30;
        let (report, _) = train_single(&config, 1).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("k = 1")), "{:?}", report.warnings);
    }

    #[test]
    fn robustness_probe_emits_both_reports() {
        let config = tiny_config(None);
        let probe = robustness_probe(&config, 0.2).unwrap();
        assert_eq!(probe.init_center, 0.2);
        assert_eq!(probe.rms_norm.seed, probe.layer_norm.seed);
        // Schema check: the divergence flag is always present; values may
        // be either way at this scale.
        let json = serde_json::to_string(&probe).unwrap();
        assert!(json.contains("\"diverged\""), "{json}");
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
