//! Forward and backward passes for the normalizer family.
//!
//! Six variants are implemented. The RMS family (`rms_norm`, `p_rms_norm`,
//! `l2_norm`) divides the summed inputs by a scale statistic; `layer_norm`
//! additionally re-centers; `batch_norm` standardizes feature columns
//! across a batch and `weight_norm` normalizes weight rows. The last two
//! are forward-only: they exist so the invariance lab can classify them.
//!
//! Every statistic is stabilized as `sqrt(q + epsilon)` with the epsilon
//! carried by [`NormalizerKind`] (default [`DEFAULT_EPSILON`]). The free
//! functions take epsilon explicitly; passing `0.0` evaluates the pure
//! statistic, which is what the linearity properties are stated about.
//!
//! All operations are pure functions of their inputs; caches are per-call
//! values, so concurrent invocation is safe.

use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Vector};
use crate::{Error, Result};

/// Default stabilizer added to the squared statistic before the square
/// root. Keeps degenerate (all-zero) inputs finite and the gradient
/// bounded.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Learned per-neuron gain and bias. The gain starts at one and the bias
/// at zero; the bias is applied by the layer, outside the normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gain: Vector,
    pub bias: Vector,
}

impl NormParams {
    pub fn new(n: usize) -> Self {
        NormParams {
            gain: Vector::ones(n),
            bias: Vector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.gain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gain.is_empty()
    }
}

/// Which normalizer to apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum NormVariant {
    RmsNorm,
    PRmsNorm { p: f64 },
    LayerNorm,
    L2Norm,
    BatchNorm,
    WeightNorm,
}

impl NormVariant {
    pub fn name(&self) -> &'static str {
        match self {
            NormVariant::RmsNorm => "rms_norm",
            NormVariant::PRmsNorm { .. } => "p_rms_norm",
            NormVariant::LayerNorm => "layer_norm",
            NormVariant::L2Norm => "l2_norm",
            NormVariant::BatchNorm => "batch_norm",
            NormVariant::WeightNorm => "weight_norm",
        }
    }
}

/// A normalizer variant plus its stabilizer epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerKind {
    #[serde(flatten)]
    pub variant: NormVariant,
    pub epsilon: f64,
}

impl NormalizerKind {
    pub fn rms_norm() -> Self {
        NormalizerKind {
            variant: NormVariant::RmsNorm,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn p_rms_norm(p: f64) -> Self {
        NormalizerKind {
            variant: NormVariant::PRmsNorm { p },
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn layer_norm() -> Self {
        NormalizerKind {
            variant: NormVariant::LayerNorm,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn l2_norm() -> Self {
        NormalizerKind {
            variant: NormVariant::L2Norm,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn batch_norm() -> Self {
        NormalizerKind {
            variant: NormVariant::BatchNorm,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn weight_norm() -> Self {
        NormalizerKind {
            variant: NormVariant::WeightNorm,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn name(&self) -> &'static str {
        self.variant.name()
    }

    /// Validates externally supplied configuration: epsilon must be a
    /// positive finite number and the partial ratio must lie in (0, 1].
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if let NormVariant::PRmsNorm { p } = self.variant {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "partial ratio p must lie in (0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }

    /// True for the variants that normalize a single summed-input vector
    /// and have a backward pass (everything except batch/weight norm).
    pub fn is_vector_normalizer(&self) -> bool {
        !matches!(
            self.variant,
            NormVariant::BatchNorm | NormVariant::WeightNorm
        )
    }

    /// Forward dispatch for vector normalizers.
    pub fn forward(&self, a: &Vector, params: &NormParams) -> Result<(Vector, NormCache)> {
        match self.variant {
            NormVariant::RmsNorm => rmsnorm_forward(a, params, self.epsilon),
            NormVariant::PRmsNorm { p } => prmsnorm_forward(a, params, p, self.epsilon),
            NormVariant::LayerNorm => layernorm_forward(a, params, self.epsilon),
            NormVariant::L2Norm => l2norm_forward(a, params, self.epsilon),
            NormVariant::BatchNorm | NormVariant::WeightNorm => Err(Error::Unsupported(format!(
                "{} does not normalize a single summed-input vector",
                self.name()
            ))),
        }
    }

    /// Backward dispatch matching [`NormalizerKind::forward`].
    pub fn backward(
        &self,
        cache: &NormCache,
        params: &NormParams,
        d_out: &Vector,
    ) -> Result<(Vector, Vector)> {
        match self.variant {
            NormVariant::RmsNorm => rmsnorm_backward(cache, params, d_out),
            NormVariant::PRmsNorm { .. } => prmsnorm_backward(cache, params, d_out),
            NormVariant::LayerNorm => layernorm_backward(cache, params, d_out),
            NormVariant::L2Norm => l2norm_backward(cache, params, d_out),
            NormVariant::BatchNorm | NormVariant::WeightNorm => Err(Error::Unsupported(format!(
                "{} has no backward pass",
                self.name()
            ))),
        }
    }
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    /// The pre-normalization summed inputs `a`.
    pub input: Vector,
    /// The stabilized scale statistic (RMS, partial RMS, L2 norm, or
    /// sigma). Never zero thanks to the stabilizer.
    pub rms_or_sigma: f64,
    /// The subtracted mean; present for layer norm only.
    pub mu: Option<f64>,
    /// `a / stat` (or `(a - mu) / sigma`) before the gain.
    pub normalized: Vector,
    /// How many leading elements fed the statistic: `k` for the partial
    /// variant, `n` otherwise.
    pub subset_len: usize,
}

/// Mean of squares over the first `k` elements, accumulated left to
/// right. Shared by the full and partial RMS paths so that `p = 1`
/// reproduces the full statistic bit for bit.
fn mean_sq_prefix(a: &Vector, k: usize) -> f64 {
    let mut acc = 0.0;
    for &v in &a.as_slice()[..k] {
        acc += v * v;
    }
    acc / k as f64
}

/// Number of elements the partial statistic uses: `k = ceil(n * p)`.
/// Always at least 1.
pub fn partial_len(n: usize, p: f64) -> usize {
    ((n as f64 * p).ceil() as usize).clamp(1, n)
}

/// Root mean square of `a`, stabilized as `sqrt(meansq + epsilon)`.
pub fn rms(a: &Vector, epsilon: f64) -> f64 {
    assert!(!a.is_empty(), "rms of empty vector");
    (mean_sq_prefix(a, a.len()) + epsilon).sqrt()
}

/// RMS estimated from the first `k = ceil(n * p)` elements only.
pub fn partial_rms(a: &Vector, p: f64, epsilon: f64) -> f64 {
    assert!(!a.is_empty(), "partial_rms of empty vector");
    assert!(p > 0.0 && p <= 1.0, "partial ratio {p} outside (0, 1]");
    let k = partial_len(a.len(), p);
    (mean_sq_prefix(a, k) + epsilon).sqrt()
}

fn check_lengths(context: &'static str, a: &Vector, params: &NormParams) -> Result<()> {
    if a.is_empty() {
        return Err(Error::shape(context, "len >= 1", 0));
    }
    if a.len() != params.gain.len() {
        return Err(Error::shape(context, params.gain.len(), a.len()));
    }
    Ok(())
}

/// `out_i = a_i / RMS(a) * g_i`. The bias is the caller's concern.
pub fn rmsnorm_forward(
    a: &Vector,
    params: &NormParams,
    epsilon: f64,
) -> Result<(Vector, NormCache)> {
    check_lengths("rmsnorm_forward", a, params)?;
    let s = rms(a, epsilon);
    scaled_forward(a, params, s, a.len(), None)
}

/// Partial-statistic variant: the divisor is estimated from the first
/// `k = ceil(n * p)` elements, and every element is divided by it.
pub fn prmsnorm_forward(
    a: &Vector,
    params: &NormParams,
    p: f64,
    epsilon: f64,
) -> Result<(Vector, NormCache)> {
    check_lengths("prmsnorm_forward", a, params)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "partial ratio p must lie in (0, 1], got {p}"
        )));
    }
    let k = partial_len(a.len(), p);
    let s = (mean_sq_prefix(a, k) + epsilon).sqrt();
    scaled_forward(a, params, s, k, None)
}

/// `out_i = a_i / ||a||_2 * g_i`; differs from RMS by a `sqrt(n)` factor.
pub fn l2norm_forward(a: &Vector, params: &NormParams, epsilon: f64) -> Result<(Vector, NormCache)> {
    check_lengths("l2norm_forward", a, params)?;
    let s = (a.sum_sq() + epsilon).sqrt();
    scaled_forward(a, params, s, a.len(), None)
}

fn scaled_forward(
    a: &Vector,
    params: &NormParams,
    s: f64,
    subset_len: usize,
    mu: Option<f64>,
) -> Result<(Vector, NormCache)> {
    let normalized = a.scale(1.0 / s);
    let out = normalized.hadamard(&params.gain)?;
    Ok((
        out,
        NormCache {
            input: a.clone(),
            rms_or_sigma: s,
            mu,
            normalized,
            subset_len,
        },
    ))
}

/// Gradient of the RMS-normalized output with respect to the summed
/// inputs and the gain:
/// `d_g_i = d_out_i * a_i / RMS` and
/// `d_a_j = (g_j d_out_j - a_j / (n RMS^2) * sum_i g_i d_out_i a_i) / RMS`.
pub fn rmsnorm_backward(
    cache: &NormCache,
    params: &NormParams,
    d_out: &Vector,
) -> Result<(Vector, Vector)> {
    scaled_backward(cache, params, d_out, ScaleStat::Mean)
}

/// Backward for the partial variant. The statistic only sees the first
/// `k` elements, so its projection term only reaches those; the direct
/// `1/RMS` term reaches every element.
pub fn prmsnorm_backward(
    cache: &NormCache,
    params: &NormParams,
    d_out: &Vector,
) -> Result<(Vector, Vector)> {
    scaled_backward(cache, params, d_out, ScaleStat::Mean)
}

/// Backward for the L2-normalized output.
pub fn l2norm_backward(
    cache: &NormCache,
    params: &NormParams,
    d_out: &Vector,
) -> Result<(Vector, Vector)> {
    scaled_backward(cache, params, d_out, ScaleStat::Sum)
}

enum ScaleStat {
    /// Statistic is a mean of squares over the first `subset_len`
    /// elements (RMS and partial RMS).
    Mean,
    /// Statistic is a plain sum of squares (L2 norm).
    Sum,
}

fn scaled_backward(
    cache: &NormCache,
    params: &NormParams,
    d_out: &Vector,
    stat: ScaleStat,
) -> Result<(Vector, Vector)> {
    let n = cache.input.len();
    if d_out.len() != n || params.gain.len() != n {
        return Err(Error::shape("norm backward", n, d_out.len()));
    }
    let s = cache.rms_or_sigma;
    let k = cache.subset_len;
    let a = cache.input.as_slice();
    let g = params.gain.as_slice();
    let d = d_out.as_slice();

    // d_g_i = d_out_i * normalized_i
    let d_g = d_out.hadamard(&cache.normalized)?;

    // T = sum_i g_i d_out_i a_i
    let mut t = 0.0;
    for i in 0..n {
        t += g[i] * d[i] * a[i];
    }
    // ds/da_j = w_j a_j / s, with w_j the statistic's weight on a_j^2.
    let coeff = match stat {
        ScaleStat::Mean => t / (k as f64 * s * s * s),
        ScaleStat::Sum => t / (s * s * s),
    };
    let mut d_a = Vec::with_capacity(n);
    for j in 0..n {
        let direct = g[j] * d[j] / s;
        let in_stat = match stat {
            ScaleStat::Mean => j < k,
            ScaleStat::Sum => true,
        };
        let proj = if in_stat { a[j] * coeff } else { 0.0 };
        d_a.push(direct - proj);
    }
    Ok((Vector::from(d_a), d_g))
}

/// `out_i = (a_i - mu) / sigma * g_i` with the biased (1/n) variance.
pub fn layernorm_forward(
    a: &Vector,
    params: &NormParams,
    epsilon: f64,
) -> Result<(Vector, NormCache)> {
    check_lengths("layernorm_forward", a, params)?;
    let mu = a.mean();
    let centered = a.shift(-mu);
    let sigma = (mean_sq_prefix(&centered, centered.len()) + epsilon).sqrt();
    let normalized = centered.scale(1.0 / sigma);
    let out = normalized.hadamard(&params.gain)?;
    Ok((
        out,
        NormCache {
            input: a.clone(),
            rms_or_sigma: sigma,
            mu: Some(mu),
            normalized,
            subset_len: a.len(),
        },
    ))
}

/// Chain rule through mean and variance:
/// `d_a = (d_n - mean(d_n) - nrm * mean(d_n .* nrm)) / sigma` where
/// `d_n = g .* d_out` and `nrm` is the pre-gain normalized vector.
pub fn layernorm_backward(
    cache: &NormCache,
    params: &NormParams,
    d_out: &Vector,
) -> Result<(Vector, Vector)> {
    let n = cache.input.len();
    if d_out.len() != n || params.gain.len() != n {
        return Err(Error::shape("layernorm_backward", n, d_out.len()));
    }
    let sigma = cache.rms_or_sigma;
    let d_g = d_out.hadamard(&cache.normalized)?;
    let d_n = params.gain.hadamard(d_out)?;
    let mean_dn = d_n.mean();
    let mean_dn_nrm = d_n.hadamard(&cache.normalized)?.mean();
    let mut d_a = Vec::with_capacity(n);
    for j in 0..n {
        d_a.push((d_n[j] - mean_dn - cache.normalized[j] * mean_dn_nrm) / sigma);
    }
    Ok((Vector::from(d_a), d_g))
}

/// Standardizes each feature column of a batch (rows are cases) by its
/// batch mean and standard deviation, then applies gain and bias.
/// Forward-only; used by the invariance lab.
pub fn batchnorm_forward(batch: &Matrix, params: &NormParams, epsilon: f64) -> Result<Matrix> {
    if batch.rows() < 2 {
        return Err(Error::InvalidConfig(format!(
            "batch normalization needs at least 2 cases, got {}",
            batch.rows()
        )));
    }
    if batch.cols() != params.gain.len() {
        return Err(Error::shape("batchnorm_forward", params.gain.len(), batch.cols()));
    }
    let rows = batch.rows();
    let cols = batch.cols();
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let mut mean = 0.0;
        for i in 0..rows {
            mean += batch.get(i, j);
        }
        mean /= rows as f64;
        let mut var = 0.0;
        for i in 0..rows {
            let c = batch.get(i, j) - mean;
            var += c * c;
        }
        var /= rows as f64;
        let std = (var + epsilon).sqrt();
        let g = params.gain[j];
        let b = params.bias[j];
        for i in 0..rows {
            out.set(i, j, (batch.get(i, j) - mean) / std * g + b);
        }
    }
    Ok(out)
}

/// Weight-row reparameterization: `a_i = g_i * (w_i . x) / ||w_i||_2`.
/// Forward-only; used by the invariance lab.
pub fn weightnorm_forward(
    w: &Matrix,
    params: &NormParams,
    x: &Vector,
    epsilon: f64,
) -> Result<Vector> {
    if w.cols() != x.len() {
        return Err(Error::shape("weightnorm_forward", w.cols(), x.len()));
    }
    if w.rows() != params.gain.len() {
        return Err(Error::shape("weightnorm_forward", params.gain.len(), w.rows()));
    }
    let mut out = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let row = w.row(i);
        let mut dot = 0.0;
        let mut norm_sq = 0.0;
        for (wv, xv) in row.iter().zip(x.iter()) {
            dot += wv * xv;
            norm_sq += wv * wv;
        }
        let norm = (norm_sq + epsilon).sqrt();
        out.push(params.gain[i] * dot / norm);
    }
    Ok(Vector::from(out))
}
