//! A feed-forward layer `y = f(norm(Wx) . g + b)`, or `y = f(Wx + b)`
//! when normalization is disabled.

use serde::{Deserialize, Serialize};

use crate::normalizers::{NormCache, NormParams, NormalizerKind};
use crate::tensor::{Matrix, Vector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    pub fn apply(&self, v: &Vector) -> Vector {
        match self {
            Activation::Tanh => Vector::from(v.iter().map(|x| x.tanh()).collect::<Vec<_>>()),
            Activation::Sigmoid => {
                Vector::from(v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect::<Vec<_>>())
            }
            Activation::Relu => Vector::from(v.iter().map(|x| x.max(0.0)).collect::<Vec<_>>()),
            Activation::Identity => v.clone(),
            Activation::Softmax => {
                let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                Vector::from(exps.iter().map(|e| e / total).collect::<Vec<_>>())
            }
        }
    }

    /// Pulls a gradient on the activation output back to the
    /// pre-activation, using only the output `y`.
    pub fn vjp(&self, y: &Vector, d_y: &Vector) -> Result<Vector> {
        if y.len() != d_y.len() {
            return Err(Error::shape("activation vjp", y.len(), d_y.len()));
        }
        let out = match self {
            Activation::Tanh => y
                .iter()
                .zip(d_y.iter())
                .map(|(yi, di)| di * (1.0 - yi * yi))
                .collect(),
            Activation::Sigmoid => y
                .iter()
                .zip(d_y.iter())
                .map(|(yi, di)| di * yi * (1.0 - yi))
                .collect(),
            Activation::Relu => y
                .iter()
                .zip(d_y.iter())
                .map(|(yi, di)| if *yi > 0.0 { *di } else { 0.0 })
                .collect(),
            Activation::Identity => d_y.as_slice().to_vec(),
            Activation::Softmax => {
                let dot: f64 = y.iter().zip(d_y.iter()).map(|(yi, di)| yi * di).sum();
                y.iter()
                    .zip(d_y.iter())
                    .map(|(yi, di)| yi * (di - dot))
                    .collect()
            }
        };
        Ok(Vector::from(out))
    }
}

/// Weight matrix, per-neuron bias and (when normalization is enabled)
/// gain, plus the activation. The bias always lives in `params.bias`;
/// `params.gain` is inert unless `norm` is set.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub params: NormParams,
    pub norm: Option<NormalizerKind>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Vector,
    pub norm_cache: Option<NormCache>,
    pub output: Vector,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Matrix,
    pub d_bias: Vector,
    pub d_gain: Option<Vector>,
    pub d_input: Vector,
}

impl LinearLayer {
    pub fn with_params(
        weight: Matrix,
        params: NormParams,
        norm: Option<NormalizerKind>,
        activation: Activation,
    ) -> Self {
        LinearLayer {
            weight,
            params,
            norm,
            activation,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, LayerCache)> {
        let a = self.weight.matvec(x)?;
        let (pre_bias, norm_cache) = match &self.norm {
            Some(kind) => {
                let (normed, cache) = kind.forward(&a, &self.params)?;
                (normed, Some(cache))
            }
            None => (a, None),
        };
        let v = pre_bias.add(&self.params.bias)?;
        let y = self.activation.apply(&v);
        Ok((
            y.clone(),
            LayerCache {
                input: x.clone(),
                norm_cache,
                output: y,
            },
        ))
    }

    pub fn backward(&self, cache: &LayerCache, d_y: &Vector) -> Result<LayerGrads> {
        let d_v = self.activation.vjp(&cache.output, d_y)?;
        let d_bias = d_v.clone();
        let (d_a, d_gain) = match (&self.norm, &cache.norm_cache) {
            (Some(kind), Some(nc)) => {
                let (d_a, d_g) = kind.backward(nc, &self.params, &d_v)?;
                (d_a, Some(d_g))
            }
            (None, None) => (d_v, None),
            _ => {
                return Err(Error::Unsupported(
                    "layer cache does not match layer normalization setting".into(),
                ))
            }
        };
        let mut d_weight = Matrix::zeros(self.weight.rows(), self.weight.cols());
        d_weight.add_outer(&d_a, &cache.input, 1.0)?;
        let d_input = self.weight.matvec_t(&d_a)?;
        Ok(LayerGrads {
            d_weight,
            d_bias,
            d_gain,
            d_input,
        })
    }

    /// Number of trainable scalars: weights, biases, and gains when
    /// normalization is enabled.
    pub fn param_count(&self) -> usize {
        let mut n = self.weight.rows() * self.weight.cols() + self.params.bias.len();
        if self.norm.is_some() {
            n += self.params.gain.len();
        }
        n
    }

    /// Appends parameters in the documented order: weight (row-major),
    /// bias, then gain when normalization is enabled.
    pub fn push_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.data());
        out.extend_from_slice(self.params.bias.as_slice());
        if self.norm.is_some() {
            out.extend_from_slice(self.params.gain.as_slice());
        }
    }

    /// Reads parameters back in the same order; returns the number of
    /// scalars consumed.
    pub fn read_params(&mut self, flat: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if flat.len() < need {
            return Err(Error::shape("layer parameter read", need, flat.len()));
        }
        let wlen = self.weight.rows() * self.weight.cols();
        self.weight.data_mut().copy_from_slice(&flat[..wlen]);
        let blen = self.params.bias.len();
        self.params.bias = Vector::from(flat[wlen..wlen + blen].to_vec());
        if self.norm.is_some() {
            let glen = self.params.gain.len();
            self.params.gain = Vector::from(flat[wlen + blen..wlen + blen + glen].to_vec());
        }
        Ok(need)
    }

    /// Flattens gradients in the same order as [`LinearLayer::push_params`].
    pub fn push_grads(&self, grads: &LayerGrads, out: &mut Vec<f64>) {
        out.extend_from_slice(grads.d_weight.data());
        out.extend_from_slice(grads.d_bias.as_slice());
        if let Some(d_gain) = &grads.d_gain {
            out.extend_from_slice(d_gain.as_slice());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalizers::DEFAULT_EPSILON;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = LinearLayer::with_params(
            Matrix::identity(3),
            NormParams::new(3),
            None,
            Activation::Identity,
        );
        let x = Vector::from(vec![0.3, -0.8, 1.4]);
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.as_slice(), x.as_slice());
    }

    #[test]
    fn rms_normalized_identity_layer_matches_kernel() {
        let layer = LinearLayer::with_params(
            Matrix::identity(2),
            NormParams::new(2),
            Some(NormalizerKind::rms_norm()),
            Activation::Identity,
        );
        let (y, _) = layer.forward(&Vector::from(vec![3.0, 4.0])).unwrap();
        assert!((y[0] - 0.848528).abs() < 1e-6);
        assert!((y[1] - 1.131371).abs() < 1e-6);
    }

    #[test]
    fn plain_linear_backward_is_outer_product() {
        let w = Matrix::from_rows_vec(vec![0.5, -1.0, 2.0, 0.25], 2, 2).unwrap();
        let layer =
            LinearLayer::with_params(w, NormParams::new(2), None, Activation::Identity);
        let x = Vector::from(vec![3.0, -2.0]);
        let (_, cache) = layer.forward(&x).unwrap();
        let d_y = Vector::from(vec![1.0, 2.0]);
        let grads = layer.backward(&cache, &d_y).unwrap();
        // d_W = d_y x^T exactly for the identity activation, no norm.
        assert_eq!(grads.d_weight.data(), &[3.0, -2.0, 6.0, -4.0]);
        assert_eq!(grads.d_bias.as_slice(), &[1.0, 2.0]);
        assert!(grads.d_gain.is_none());
    }

    #[test]
    fn normalized_layer_output_invariant_to_weight_rescaling() {
        use rand::Rng;
        let mut rng = crate::util::rng_for(3, &[10]);
        let w = Matrix::from_rows_vec(
            (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
            6,
            6,
        )
        .unwrap();
        let layer = LinearLayer::with_params(
            w.clone(),
            NormParams::new(6),
            Some(NormalizerKind::rms_norm().with_epsilon(1e-14)),
            Activation::Tanh,
        );
        let scaled = LinearLayer::with_params(
            w.scale(10.0),
            layer.params.clone(),
            layer.norm,
            Activation::Tanh,
        );
        let x = Vector::from((0..6).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let (y0, _) = layer.forward(&x).unwrap();
        let (y1, _) = scaled.forward(&x).unwrap();
        for (a, b) in y0.iter().zip(y1.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_outputs_sum_to_one_and_vjp_is_orthogonal_to_ones() {
        let v = Vector::from(vec![0.2, -1.0, 3.0, 0.0]);
        let y = Activation::Softmax.apply(&v);
        let sum: f64 = y.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let d_y = Vector::from(vec![1.0, -0.5, 0.25, 2.0]);
        let d_v = Activation::Softmax.vjp(&y, &d_y).unwrap();
        // Rows of the softmax Jacobian sum to zero.
        let total: f64 = d_v.iter().sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn param_round_trip() {
        let layer = LinearLayer::with_params(
            Matrix::from_rows_vec(vec![1.0, 2.0, 3.0, 4.0], 2, 2).unwrap(),
            NormParams::new(2),
            Some(NormalizerKind::rms_norm()),
            Activation::Tanh,
        );
        let mut flat = Vec::new();
        layer.push_params(&mut flat);
        assert_eq!(flat.len(), layer.param_count());
        let mut other = LinearLayer::with_params(
            Matrix::zeros(2, 2),
            NormParams::new(2),
            Some(NormalizerKind::rms_norm()),
            Activation::Tanh,
        );
        let consumed = other.read_params(&flat).unwrap();
        assert_eq!(consumed, flat.len());
        assert_eq!(other.weight.data(), layer.weight.data());
    }

    #[test]
    fn gradcheck_layer_with_norm() {
        use crate::verify::finite_diff_grad;
        use rand::Rng;
        let mut rng = crate::util::rng_for(17, &[11]);
        let w = Matrix::from_rows_vec(
            (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
            6,
            5,
        )
        .unwrap();
        let mut params = NormParams::new(6);
        params.gain = Vector::from((0..6).map(|_| rng.random_range(0.5..1.5)).collect::<Vec<_>>());
        params.bias = Vector::from((0..6).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<_>>());
        let layer = LinearLayer::with_params(
            w,
            params,
            Some(NormalizerKind::rms_norm().with_epsilon(DEFAULT_EPSILON)),
            Activation::Tanh,
        );
        let x = Vector::from((0..5).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        let probe = Vector::from((0..6).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());

        let (_, cache) = layer.forward(&x).unwrap();
        let grads = layer.backward(&cache, &probe).unwrap();

        // Finite differences over the input.
        let probe_c = probe.clone();
        let layer_c = layer.clone();
        let fd_x = finite_diff_grad(
            |point| {
                let (y, _) = layer_c.forward(point)?;
                y.dot(&probe_c)
            },
            &x,
            1e-5,
        )
        .unwrap();
        for (an, nm) in grads.d_input.iter().zip(fd_x.iter()) {
            let rel = (an - nm).abs() / an.abs().max(nm.abs()).max(1e-10);
            assert!(rel < 1e-6, "d_input: analytic {an} vs fd {nm}");
        }
    }
}
