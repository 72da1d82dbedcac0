//! CPU microbenchmarks of normalizer kernel cost.
//!
//! The timed kernels are allocation-free slice implementations, generic
//! over `f32`/`f64` (the 32-bit mode lives only here; everything the
//! verification path touches stays `f64`). Differentiable normalizers
//! are timed forward+backward; batch and weight norm forward-only.
//! Timing claims are relative orderings: absolute numbers depend on the
//! machine and are reported, not asserted.
//!
//! Measurement is strictly single-threaded; suite cells run sequentially.

use std::time::Instant;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::normalizers::{partial_len, NormVariant, NormalizerKind};
use crate::util::rng_for;
use crate::{Error, Result};

pub const MIN_ITERS: usize = 30;
pub const MIN_WARMUP: usize = 5;
/// A timed region must span at least this many timer ticks; below it the
/// measurement widens with inner repeats.
pub const MIN_TICKS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(&self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub normalizer: NormalizerKind,
    pub n: usize,
    pub batch: usize,
    pub precision: Precision,
    pub iters: usize,
    pub warmup_iters: usize,
}

impl BenchCase {
    pub fn validate(&self) -> Result<()> {
        self.normalizer.validate()?;
        if self.iters < MIN_ITERS {
            return Err(Error::InvalidConfig(format!(
                "iters must be >= {MIN_ITERS}, got {}",
                self.iters
            )));
        }
        if self.warmup_iters < MIN_WARMUP {
            return Err(Error::InvalidConfig(format!(
                "warmup_iters must be >= {MIN_WARMUP}, got {}",
                self.warmup_iters
            )));
        }
        if self.n < 1 || self.batch < 1 {
            return Err(Error::InvalidConfig("n and batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Timing percentiles (nanoseconds per single normalize call, batch
/// statistics amortized per case) plus the analytic flop tally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub case: BenchCase,
    /// "forward_backward" for differentiable kernels, "forward" for
    /// batch/weight norm.
    pub timed_op: String,
    pub median_ns: f64,
    pub p10_ns: f64,
    pub p90_ns: f64,
    pub flop_count: u64,
    /// True when the timed region had to be widened because the timer
    /// was too coarse.
    pub widened: bool,
    pub inner_repeats: usize,
}

/// Exact forward flop tally per normalized vector.
///
/// RMS: n squares, n-1 adds, 1 divide, 1 sqrt, n divides, n gain
/// multiplies = 4n+1. The partial variant squares/sums only k elements:
/// 2n+2k+1. LayerNorm adds the mean pass (n-1 adds, 1 divide, n
/// subtracts): 6n+1. L2 drops the 1/n divide: 4n. Batch norm is
/// per-case amortized (8n); weight norm re-derives each row norm
/// (n(4n+2) for an n x n matrix).
pub fn count_flops(kind: &NormalizerKind, n: usize) -> u64 {
    let n = n as u64;
    match kind.variant {
        NormVariant::RmsNorm => 4 * n + 1,
        NormVariant::PRmsNorm { p } => {
            let k = partial_len(n as usize, p) as u64;
            2 * n + 2 * k + 1
        }
        NormVariant::LayerNorm => 6 * n + 1,
        NormVariant::L2Norm => 4 * n,
        NormVariant::BatchNorm => 8 * n,
        NormVariant::WeightNorm => n * (4 * n + 2),
    }
}

// ---------------------------------------------------------------------
// Allocation-free kernels, generic over precision.
// ---------------------------------------------------------------------

fn scaled_fwd<T: Float>(x: &[T], gain: &[T], k: usize, mean_stat: bool, eps: T, out: &mut [T]) -> T {
    let mut acc = T::zero();
    for &v in &x[..k] {
        acc = acc + v * v;
    }
    if mean_stat {
        acc = acc / T::from(k).unwrap();
    }
    let s = (acc + eps).sqrt();
    let inv = T::one() / s;
    for ((o, &xv), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = xv * inv * g;
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn scaled_bwd<T: Float>(
    x: &[T],
    gain: &[T],
    s: T,
    k: usize,
    mean_stat: bool,
    d_out: &[T],
    d_x: &mut [T],
    d_gain: &mut [T],
) {
    let inv = T::one() / s;
    let mut t = T::zero();
    for ((&xv, &g), (&d, dg)) in x
        .iter()
        .zip(gain)
        .zip(d_out.iter().zip(d_gain.iter_mut()))
    {
        t = t + g * d * xv;
        *dg = d * xv * inv;
    }
    let denom = if mean_stat {
        T::from(k).unwrap() * s * s * s
    } else {
        s * s * s
    };
    let coeff = t / denom;
    // Elements inside the statistic carry the projection term; the rest
    // only see the direct 1/s path. Split loops keep both branch-free.
    for (((dx, &xv), &g), &d) in d_x[..k]
        .iter_mut()
        .zip(&x[..k])
        .zip(&gain[..k])
        .zip(&d_out[..k])
    {
        *dx = g * d * inv - xv * coeff;
    }
    for ((dx, &g), &d) in d_x[k..].iter_mut().zip(&gain[k..]).zip(&d_out[k..]) {
        *dx = g * d * inv;
    }
}

fn layer_fwd<T: Float>(x: &[T], gain: &[T], eps: T, out: &mut [T], normed: &mut [T]) -> T {
    let n = T::from(x.len()).unwrap();
    let mut mu = T::zero();
    for &v in x {
        mu = mu + v;
    }
    mu = mu / n;
    let mut var = T::zero();
    for &v in x {
        let c = v - mu;
        var = var + c * c;
    }
    var = var / n;
    let sigma = (var + eps).sqrt();
    let inv = T::one() / sigma;
    for (((nm, o), &xv), &g) in normed.iter_mut().zip(out.iter_mut()).zip(x).zip(gain) {
        *nm = (xv - mu) * inv;
        *o = *nm * g;
    }
    sigma
}

fn layer_bwd<T: Float>(
    normed: &[T],
    gain: &[T],
    sigma: T,
    d_out: &[T],
    d_x: &mut [T],
    d_gain: &mut [T],
) {
    let n = T::from(normed.len()).unwrap();
    let mut mean_dn = T::zero();
    let mut mean_dn_nrm = T::zero();
    for ((&nm, &g), (&d, dg)) in normed
        .iter()
        .zip(gain)
        .zip(d_out.iter().zip(d_gain.iter_mut()))
    {
        let dn = g * d;
        mean_dn = mean_dn + dn;
        mean_dn_nrm = mean_dn_nrm + dn * nm;
        *dg = d * nm;
    }
    mean_dn = mean_dn / n;
    mean_dn_nrm = mean_dn_nrm / n;
    let inv = T::one() / sigma;
    for (((dx, &nm), &g), &d) in d_x.iter_mut().zip(normed).zip(gain).zip(d_out) {
        *dx = (g * d - mean_dn - nm * mean_dn_nrm) * inv;
    }
}

fn batch_fwd<T: Float>(batch: &[T], rows: usize, cols: usize, gain: &[T], eps: T, out: &mut [T]) {
    let r = T::from(rows).unwrap();
    for j in 0..cols {
        let mut mean = T::zero();
        for i in 0..rows {
            mean = mean + batch[i * cols + j];
        }
        mean = mean / r;
        let mut var = T::zero();
        for i in 0..rows {
            let c = batch[i * cols + j] - mean;
            var = var + c * c;
        }
        var = var / r;
        let inv = T::one() / (var + eps).sqrt();
        for i in 0..rows {
            out[i * cols + j] = (batch[i * cols + j] - mean) * inv * gain[j];
        }
    }
}

fn weight_fwd<T: Float>(w: &[T], n: usize, x: &[T], gain: &[T], eps: T, out: &mut [T]) {
    for ((o, row), &g) in out.iter_mut().zip(w.chunks_exact(n)).zip(gain) {
        let mut dot = T::zero();
        let mut norm_sq = T::zero();
        for (&wv, &xv) in row.iter().zip(x) {
            dot = dot + wv * xv;
            norm_sq = norm_sq + wv * wv;
        }
        *o = g * dot / (norm_sq + eps).sqrt();
    }
}

struct Buffers<T> {
    inputs: Vec<Vec<T>>,
    gain: Vec<T>,
    d_out: Vec<T>,
    out: Vec<T>,
    normed: Vec<T>,
    d_x: Vec<T>,
    d_gain: Vec<T>,
    weight: Vec<T>,
    batch_flat: Vec<T>,
    batch_out: Vec<T>,
}

fn make_buffers<T: Float>(case: &BenchCase) -> Buffers<T> {
    let mut rng = rng_for(0xbe9c, &[case.n as u64, case.batch as u64]);
    let mut draw = |lo: f64, hi: f64| T::from(rng.random_range(lo..hi)).unwrap();
    let inputs: Vec<Vec<T>> = (0..case.batch)
        .map(|_| (0..case.n).map(|_| draw(-2.0, 2.0)).collect())
        .collect();
    let gain: Vec<T> = (0..case.n).map(|_| draw(0.5, 1.5)).collect();
    let d_out: Vec<T> = (0..case.n).map(|_| draw(-1.0, 1.0)).collect();
    let weight: Vec<T> = (0..case.n * case.n).map(|_| draw(-1.0, 1.0)).collect();
    let mut batch_flat = Vec::with_capacity(case.batch * case.n);
    for row in &inputs {
        batch_flat.extend_from_slice(row);
    }
    Buffers {
        inputs,
        gain,
        d_out,
        out: vec![T::zero(); case.n],
        normed: vec![T::zero(); case.n],
        d_x: vec![T::zero(); case.n],
        d_gain: vec![T::zero(); case.n],
        weight,
        batch_flat,
        batch_out: vec![T::zero(); case.batch * case.n],
    }
}

/// One full pass over the pre-generated batch. Returns a value derived
/// from the outputs so the optimizer cannot elide the work.
fn timed_pass<T: Float>(case: &BenchCase, bufs: &mut Buffers<T>) -> T {
    let eps = T::from(case.normalizer.epsilon).unwrap();
    let n = case.n;
    let mut sink = T::zero();
    match case.normalizer.variant {
        NormVariant::RmsNorm => {
            for x in &bufs.inputs {
                let s = scaled_fwd(x, &bufs.gain, n, true, eps, &mut bufs.out);
                scaled_bwd(x, &bufs.gain, s, n, true, &bufs.d_out, &mut bufs.d_x, &mut bufs.d_gain);
                sink = sink + bufs.d_x[0] + bufs.out[n - 1];
            }
        }
        NormVariant::PRmsNorm { p } => {
            let k = partial_len(n, p);
            for x in &bufs.inputs {
                let s = scaled_fwd(x, &bufs.gain, k, true, eps, &mut bufs.out);
                scaled_bwd(x, &bufs.gain, s, k, true, &bufs.d_out, &mut bufs.d_x, &mut bufs.d_gain);
                sink = sink + bufs.d_x[0] + bufs.out[n - 1];
            }
        }
        NormVariant::LayerNorm => {
            for x in &bufs.inputs {
                let sigma = layer_fwd(x, &bufs.gain, eps, &mut bufs.out, &mut bufs.normed);
                layer_bwd(
                    &bufs.normed,
                    &bufs.gain,
                    sigma,
                    &bufs.d_out,
                    &mut bufs.d_x,
                    &mut bufs.d_gain,
                );
                sink = sink + bufs.d_x[0] + bufs.out[n - 1];
            }
        }
        NormVariant::L2Norm => {
            for x in &bufs.inputs {
                let s = scaled_fwd(x, &bufs.gain, n, false, eps, &mut bufs.out);
                scaled_bwd(x, &bufs.gain, s, n, false, &bufs.d_out, &mut bufs.d_x, &mut bufs.d_gain);
                sink = sink + bufs.d_x[0] + bufs.out[n - 1];
            }
        }
        NormVariant::BatchNorm => {
            batch_fwd(
                &bufs.batch_flat,
                case.batch,
                n,
                &bufs.gain,
                eps,
                &mut bufs.batch_out,
            );
            sink = sink + bufs.batch_out[0] + bufs.batch_out[case.batch * n - 1];
        }
        NormVariant::WeightNorm => {
            for x in &bufs.inputs {
                weight_fwd(&bufs.weight, n, x, &bufs.gain, eps, &mut bufs.out);
                sink = sink + bufs.out[0] + bufs.out[n - 1];
            }
        }
    }
    sink
}

fn timer_resolution_ns() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..32 {
        let t0 = Instant::now();
        let mut dt = t0.elapsed();
        while dt.is_zero() {
            dt = t0.elapsed();
        }
        best = best.min(dt.as_nanos() as f64);
    }
    best.max(1.0)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn timed_op_name(kind: &NormalizerKind) -> &'static str {
    if kind.is_vector_normalizer() {
        "forward_backward"
    } else {
        "forward"
    }
}

fn run_case<T: Float>(case: &BenchCase) -> Result<BenchResult> {
    let mut bufs = make_buffers::<T>(case);
    let resolution = timer_resolution_ns();
    let mut repeats = 1usize;
    let mut widened = false;
    loop {
        for _ in 0..case.warmup_iters {
            std::hint::black_box(timed_pass(case, &mut bufs));
        }
        let mut per_op = Vec::with_capacity(case.iters);
        let mut raw_median_probe = Vec::with_capacity(case.iters);
        for _ in 0..case.iters {
            let start = Instant::now();
            for _ in 0..repeats {
                std::hint::black_box(timed_pass(case, &mut bufs));
            }
            let elapsed = start.elapsed().as_nanos() as f64;
            raw_median_probe.push(elapsed);
            per_op.push(elapsed / (repeats * case.batch) as f64);
        }
        raw_median_probe.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let raw_median = percentile(&raw_median_probe, 0.5);
        if raw_median < MIN_TICKS * resolution && repeats < 1 << 16 {
            repeats *= 2;
            widened = true;
            continue;
        }
        per_op.sort_by(|a, b| a.partial_cmp(b).unwrap());
        return Ok(BenchResult {
            case: *case,
            timed_op: timed_op_name(&case.normalizer).to_string(),
            median_ns: percentile(&per_op, 0.5),
            p10_ns: percentile(&per_op, 0.1),
            p90_ns: percentile(&per_op, 0.9),
            flop_count: count_flops(&case.normalizer, case.n),
            widened,
            inner_repeats: repeats,
        });
    }
}

/// Times one case. Buffers are pre-allocated; the timed region contains
/// only kernel work.
pub fn run_bench(case: &BenchCase) -> Result<BenchResult> {
    case.validate()?;
    match case.precision {
        Precision::F32 => run_case::<f32>(case),
        Precision::F64 => run_case::<f64>(case),
    }
}

/// Environment metadata carried by the JSON mirror of a suite run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchEnvironment {
    pub os: String,
    pub cpu_model: String,
    pub timestamp_unix_s: u64,
}

impl BenchEnvironment {
    pub fn capture() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|info| {
                info.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|s| s.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".to_string());
        BenchEnvironment {
            os: std::env::consts::OS.to_string(),
            cpu_model,
            timestamp_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSuite {
    pub environment: BenchEnvironment,
    pub results: Vec<BenchResult>,
}

/// Sizes the standard suite sweeps.
pub const SUITE_SIZES: [usize; 4] = [128, 512, 1024, 4096];
/// Partial ratio the suite benches.
pub const SUITE_PRMS_P: f64 = 0.0625;

pub fn suite_normalizers() -> [NormalizerKind; 6] {
    [
        NormalizerKind::rms_norm(),
        NormalizerKind::p_rms_norm(SUITE_PRMS_P),
        NormalizerKind::layer_norm(),
        NormalizerKind::l2_norm(),
        NormalizerKind::batch_norm(),
        NormalizerKind::weight_norm(),
    ]
}

/// The full cross product: sizes x {f32, f64} x all six normalizers,
/// run sequentially on one thread.
pub fn bench_suite(batch: usize, iters: usize, warmup_iters: usize) -> Result<BenchSuite> {
    let mut results = Vec::new();
    for &n in &SUITE_SIZES {
        for precision in [Precision::F32, Precision::F64] {
            for normalizer in suite_normalizers() {
                let case = BenchCase {
                    normalizer,
                    n,
                    batch,
                    precision,
                    iters,
                    warmup_iters,
                };
                results.push(run_bench(&case)?);
            }
        }
    }
    Ok(BenchSuite {
        environment: BenchEnvironment::capture(),
        results,
    })
}

/// CSV with the pinned column set.
pub fn suite_csv(results: &[BenchResult]) -> String {
    let mut out = String::from("normalizer,n,batch,precision,median_ns,p10_ns,p90_ns,flops\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.case.normalizer.name(),
            r.case.n,
            r.case.batch,
            r.case.precision.name(),
            r.median_ns,
            r.p10_ns,
            r.p90_ns,
            r.flop_count
        ));
    }
    out
}
