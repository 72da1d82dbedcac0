//! Complete trainable models: a GRU with a linear readout applied at
//! every timestep, and a plain stack of feed-forward layers.

use rand::Rng;

use super::checkpoint::NamedParam;
use super::gru::{GruCell, GruNormScope, GruStepCache};
use super::init::InitScheme;
use super::linear::{Activation, LayerCache, LinearLayer};
use crate::normalizers::{NormParams, NormalizerKind};
use crate::tensor::{Matrix, Vector};
use crate::Result;

/// GRU cell plus a per-step linear readout (no normalization, identity
/// activation; losses are fused with the head where needed).
#[derive(Debug, Clone)]
pub struct GruModel {
    pub cell: GruCell,
    pub readout: LinearLayer,
}

/// Forward state for one sequence: per-step cell caches and readout
/// caches.
#[derive(Debug, Clone)]
pub struct GruModelCache {
    pub step_caches: Vec<GruStepCache>,
    pub readout_caches: Vec<LayerCache>,
}

impl GruModel {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        norm: Option<NormalizerKind>,
        norm_scope: GruNormScope,
        init: &InitScheme,
        rng: &mut impl Rng,
    ) -> Self {
        let mut cell = GruCell::zeros(input_dim, hidden_dim, norm).with_norm_scope(norm_scope);
        for gate in cell.gates_mut() {
            gate.w = init.matrix(hidden_dim, input_dim, rng);
            gate.u = init.matrix(hidden_dim, hidden_dim, rng);
        }
        let readout = LinearLayer::with_params(
            init.matrix(output_dim, hidden_dim, rng),
            NormParams::new(output_dim),
            None,
            Activation::Identity,
        );
        GruModel { cell, readout }
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    /// Runs the sequence and produces readout logits at every step.
    pub fn forward(&self, xs: &[Vector]) -> Result<(Vec<Vector>, GruModelCache)> {
        let (hs, step_caches) = self.cell.rollout(xs)?;
        let mut logits = Vec::with_capacity(hs.len());
        let mut readout_caches = Vec::with_capacity(hs.len());
        for h in &hs {
            let (y, cache) = self.readout.forward(h)?;
            logits.push(y);
            readout_caches.push(cache);
        }
        Ok((
            logits,
            GruModelCache {
                step_caches,
                readout_caches,
            },
        ))
    }

    /// Backward from per-step logit gradients to a flat parameter
    /// gradient (cell first, then readout — matching the flatten order).
    pub fn backward(&self, cache: &GruModelCache, d_logits: &[Vector]) -> Result<Vector> {
        let hidden = self.hidden_dim();
        let mut d_h_seq = Vec::with_capacity(d_logits.len());
        let mut d_readout_w = Matrix::zeros(self.readout.weight.rows(), self.readout.weight.cols());
        let mut d_readout_b = Vector::zeros(self.readout.output_dim());
        for (rc, d_logit) in cache.readout_caches.iter().zip(d_logits) {
            if d_logit.max_abs() == 0.0 {
                d_h_seq.push(Vector::zeros(hidden));
                continue;
            }
            let grads = self.readout.backward(rc, d_logit)?;
            for (acc, d) in d_readout_w.data_mut().iter_mut().zip(grads.d_weight.data()) {
                *acc += d;
            }
            for (acc, d) in d_readout_b.0.iter_mut().zip(grads.d_bias.iter()) {
                *acc += d;
            }
            d_h_seq.push(grads.d_input);
        }
        let (cell_grads, _, _) = self.cell.backward(&cache.step_caches, &d_h_seq)?;
        let mut flat = Vec::with_capacity(self.param_count());
        self.cell.push_grads(&cell_grads, &mut flat);
        flat.extend_from_slice(d_readout_w.data());
        flat.extend_from_slice(d_readout_b.as_slice());
        Ok(Vector::from(flat))
    }

    pub fn param_count(&self) -> usize {
        self.cell.param_count() + self.readout.param_count()
    }

    pub fn flatten_params(&self) -> Vector {
        let mut flat = Vec::with_capacity(self.param_count());
        self.cell.push_params(&mut flat);
        self.readout.push_params(&mut flat);
        Vector::from(flat)
    }

    pub fn set_from_flat(&mut self, flat: &Vector) -> Result<()> {
        let consumed = self.cell.read_params(flat.as_slice())?;
        self.readout.read_params(&flat.as_slice()[consumed..])?;
        Ok(())
    }

    /// Named parameters in flatten order, for the checkpoint format.
    pub fn named_params(&self) -> Vec<NamedParam> {
        let mut out = Vec::new();
        let norm_enabled = self.cell.norm.is_some();
        for (gate, name) in self
            .cell
            .gates()
            .into_iter()
            .zip(["update", "reset", "candidate"])
        {
            out.push(NamedParam::new(
                format!("cell.{name}.w"),
                vec![gate.w.rows(), gate.w.cols()],
                gate.w.data().to_vec(),
            ));
            out.push(NamedParam::new(
                format!("cell.{name}.u"),
                vec![gate.u.rows(), gate.u.cols()],
                gate.u.data().to_vec(),
            ));
            out.push(NamedParam::new(
                format!("cell.{name}.bias"),
                vec![gate.norm.bias.len()],
                gate.norm.bias.as_slice().to_vec(),
            ));
            if norm_enabled {
                out.push(NamedParam::new(
                    format!("cell.{name}.gain"),
                    vec![gate.norm.gain.len()],
                    gate.norm.gain.as_slice().to_vec(),
                ));
            }
        }
        out.push(NamedParam::new(
            "readout.w",
            vec![self.readout.weight.rows(), self.readout.weight.cols()],
            self.readout.weight.data().to_vec(),
        ));
        out.push(NamedParam::new(
            "readout.bias",
            vec![self.readout.params.bias.len()],
            self.readout.params.bias.as_slice().to_vec(),
        ));
        out
    }

    /// Restores parameters from checkpoint records written by
    /// [`GruModel::named_params`] (flat values in flatten order).
    pub fn load_named_params(&mut self, params: &[NamedParam]) -> Result<()> {
        let mut flat = Vec::with_capacity(self.param_count());
        for p in params {
            flat.extend_from_slice(&p.data);
        }
        self.set_from_flat(&Vector::from(flat))
    }
}

/// A stack of feed-forward layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    /// Builds `dims.len() - 1` layers. Hidden layers use the given
    /// normalizer and tanh; the final layer is a plain identity head.
    pub fn new(
        dims: &[usize],
        norm: Option<NormalizerKind>,
        init: &InitScheme,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            layers.push(LinearLayer::with_params(
                init.matrix(dims[i + 1], dims[i], rng),
                NormParams::new(dims[i + 1]),
                if last { None } else { norm },
                if last { Activation::Identity } else { Activation::Tanh },
            ));
        }
        Mlp { layers }
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&current)?;
            caches.push(cache);
            current = y;
        }
        Ok((current, caches))
    }

    /// Backward from an output gradient to a flat parameter gradient
    /// (layer order matches the flatten order).
    pub fn backward(&self, caches: &[LayerCache], d_out: &Vector) -> Result<Vector> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let grads = layer.backward(cache, &d)?;
            d = grads.d_input.clone();
            per_layer.push(grads);
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (layer, grads) in self.layers.iter().zip(&per_layer) {
            layer.push_grads(grads, &mut flat);
        }
        Ok(Vector::from(flat))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn flatten_params(&self) -> Vector {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            layer.push_params(&mut flat);
        }
        Vector::from(flat)
    }

    pub fn set_from_flat(&mut self, flat: &Vector) -> Result<()> {
        let mut offset = 0;
        for layer in &mut self.layers {
            offset += layer.read_params(&flat.as_slice()[offset..])?;
        }
        Ok(())
    }

    pub fn named_params(&self) -> Vec<NamedParam> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(NamedParam::new(
                format!("layer{i}.w"),
                vec![layer.weight.rows(), layer.weight.cols()],
                layer.weight.data().to_vec(),
            ));
            out.push(NamedParam::new(
                format!("layer{i}.bias"),
                vec![layer.params.bias.len()],
                layer.params.bias.as_slice().to_vec(),
            ));
            if layer.norm.is_some() {
                out.push(NamedParam::new(
                    format!("layer{i}.gain"),
                    vec![layer.params.gain.len()],
                    layer.params.gain.as_slice().to_vec(),
                ));
            }
        }
        out
    }

    pub fn load_named_params(&mut self, params: &[NamedParam]) -> Result<()> {
        let mut flat = Vec::with_capacity(self.param_count());
        for p in params {
            flat.extend_from_slice(&p.data);
        }
        self.set_from_flat(&Vector::from(flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::checkpoint::{read_checkpoint, write_checkpoint};
    use crate::nets::loss::softmax_cross_entropy;
    use crate::verify::finite_diff_grad;

    #[test]
    fn gru_model_gradcheck_through_readout() {
        let mut rng = crate::util::rng_for(80, &[40]);
        let init = InitScheme {
            std: 0.3,
            center: 0.0,
            orthogonal_square: false,
        };
        let model = GruModel::new(3, 4, 2, Some(NormalizerKind::rms_norm()), GruNormScope::AllGates, &init, &mut rng);
        let mut rng2 = crate::util::rng_for(81, &[41]);
        let xs: Vec<Vector> = (0..3)
            .map(|_| Vector::from((0..3).map(|_| rng2.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let targets = [1usize, 0, 1];

        let (logits, cache) = model.forward(&xs).unwrap();
        let mut d_logits = Vec::new();
        for (l, &t) in logits.iter().zip(&targets) {
            let (_, d) = softmax_cross_entropy(l, t).unwrap();
            d_logits.push(d);
        }
        let analytic = model.backward(&cache, &d_logits).unwrap();

        let flat = model.flatten_params();
        let model_c = model.clone();
        let xs_c = xs.clone();
        let fd = finite_diff_grad(
            |theta| {
                let mut m = model_c.clone();
                m.set_from_flat(theta)?;
                let (logits, _) = m.forward(&xs_c)?;
                let mut loss = 0.0;
                for (l, &t) in logits.iter().zip(&targets) {
                    loss += softmax_cross_entropy(l, t)?.0;
                }
                Ok(loss)
            },
            &flat,
            1e-5,
        )
        .unwrap();
        let scale = analytic
            .iter()
            .chain(fd.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        for (a, n) in analytic.iter().zip(fd.iter()) {
            assert!((a - n).abs() / scale < 1e-5, "analytic {a} vs fd {n}");
        }
    }

    #[test]
    fn mlp_gradcheck() {
        let mut rng = crate::util::rng_for(90, &[42]);
        let init = InitScheme {
            std: 0.4,
            center: 0.0,
            orthogonal_square: false,
        };
        let model = Mlp::new(&[2, 5, 3], Some(NormalizerKind::layer_norm()), &init, &mut rng);
        let x = Vector::from(vec![0.4, -0.8]);
        let (out, caches) = model.forward(&x).unwrap();
        let (_, d_out) = softmax_cross_entropy(&out, 2).unwrap();
        let analytic = model.backward(&caches, &d_out).unwrap();

        let flat = model.flatten_params();
        let model_c = model.clone();
        let fd = finite_diff_grad(
            |theta| {
                let mut m = model_c.clone();
                m.set_from_flat(theta)?;
                let (out, _) = m.forward(&x)?;
                Ok(softmax_cross_entropy(&out, 2)?.0)
            },
            &flat,
            1e-5,
        )
        .unwrap();
        let scale = analytic
            .iter()
            .chain(fd.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        for (a, n) in analytic.iter().zip(fd.iter()) {
            assert!((a - n).abs() / scale < 1e-5, "analytic {a} vs fd {n}");
        }
    }

    #[test]
    fn gru_checkpoint_round_trip() {
        let mut rng = crate::util::rng_for(100, &[43]);
        let init = InitScheme::default();
        let model = GruModel::new(4, 6, 4, Some(NormalizerKind::rms_norm()), GruNormScope::AllGates, &init, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, 2, &model.named_params()).unwrap();
        let (layers, params) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(layers, 2);
        let mut restored = GruModel::new(4, 6, 4, Some(NormalizerKind::rms_norm()), GruNormScope::AllGates, &init, &mut rng);
        restored.load_named_params(&params).unwrap();
        assert_eq!(
            restored.flatten_params().as_slice(),
            model.flatten_params().as_slice()
        );
    }
}
