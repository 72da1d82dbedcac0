//! A GRU cell with optional per-gate normalization and manual BPTT.
//!
//! Each gate sums its input and recurrent contributions first, then the
//! total pre-activation is normalized once (one statistic per gate) and
//! shifted by the gate bias before the nonlinearity:
//!
//! ```text
//! z = sigmoid(norm(Wz x + Uz h) . gz + bz)         update gate
//! r = sigmoid(norm(Wr x + Ur h) . gr + br)         reset gate
//! c = tanh(norm(Wc x + Uc (r . h)) . gc + bc)      candidate
//! h' = (1 - z) . h + z . c
//! ```
//!
//! Without normalization the gate pre-activation feeds the nonlinearity
//! directly (plus bias). With `h_0 = 0` every hidden entry stays inside
//! (-1, 1): the candidate is a tanh output and the update is a convex
//! mix.

use crate::normalizers::{NormCache, NormParams, NormalizerKind};
use crate::tensor::{Matrix, Vector};
use crate::{Error, Result};

/// Weights for one gate: input projection `w`, recurrent projection `u`,
/// and the gate's gain/bias pair. The bias is always applied; the gain
/// only participates when the cell has normalization enabled.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub w: Matrix,
    pub u: Matrix,
    pub norm: NormParams,
}

impl GateParams {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GateParams {
            w: Matrix::zeros(hidden_dim, input_dim),
            u: Matrix::zeros(hidden_dim, hidden_dim),
            norm: NormParams::new(hidden_dim),
        }
    }
}

/// Which gate pre-activations the cell normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruNormScope {
    /// Update, reset and candidate pre-activations each get one norm.
    AllGates,
    /// Only the candidate pre-activation is normalized; the sigmoid
    /// gates stay raw so their weight paths can still shift gate
    /// openness uniformly.
    CandidateOnly,
}

#[derive(Debug, Clone)]
pub struct GruCell {
    pub update: GateParams,
    pub reset: GateParams,
    pub candidate: GateParams,
    pub norm: Option<NormalizerKind>,
    pub norm_scope: GruNormScope,
    input_dim: usize,
    hidden_dim: usize,
}

/// Per-step forward state kept for BPTT.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub input: Vector,
    pub h_prev: Vector,
    nc_update: Option<NormCache>,
    nc_reset: Option<NormCache>,
    nc_candidate: Option<NormCache>,
    /// Raw summed inputs per gate (pre-normalization), kept for the
    /// statistics probe.
    pub pre_update: Vector,
    pub pre_reset: Vector,
    pub pre_candidate: Vector,
    /// Candidate-gate value right after normalization and gain, before
    /// the bias and nonlinearity.
    pub candidate_normed: Vector,
    z: Vector,
    r: Vector,
    /// `r . h_prev`, the recurrent input of the candidate gate.
    q: Vector,
    c: Vector,
    pub h: Vector,
}

impl GruStepCache {
    /// Norm cache of the candidate gate (when normalization is enabled);
    /// its `normalized` field is the pre-gain probe value.
    pub fn candidate_norm_cache(&self) -> Option<&NormCache> {
        self.nc_candidate.as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct GateGrads {
    pub d_w: Matrix,
    pub d_u: Matrix,
    pub d_bias: Vector,
    pub d_gain: Option<Vector>,
}

#[derive(Debug, Clone)]
pub struct GruGrads {
    pub update: GateGrads,
    pub reset: GateGrads,
    pub candidate: GateGrads,
}

impl GruCell {
    /// A cell with all weights, biases and gains at their neutral
    /// initialization (zeros / ones). Callers normally re-initialize the
    /// matrices; see [`crate::nets::InitScheme`].
    pub fn zeros(input_dim: usize, hidden_dim: usize, norm: Option<NormalizerKind>) -> Self {
        GruCell {
            update: GateParams::zeros(input_dim, hidden_dim),
            reset: GateParams::zeros(input_dim, hidden_dim),
            candidate: GateParams::zeros(input_dim, hidden_dim),
            norm,
            norm_scope: GruNormScope::AllGates,
            input_dim,
            hidden_dim,
        }
    }

    pub fn with_norm_scope(mut self, scope: GruNormScope) -> Self {
        self.norm_scope = scope;
        self
    }

    /// The normalizer a given gate actually applies.
    fn effective_norm(&self, is_candidate: bool) -> Option<&NormalizerKind> {
        match (self.norm.as_ref(), self.norm_scope) {
            (Some(kind), GruNormScope::AllGates) => Some(kind),
            (Some(kind), GruNormScope::CandidateOnly) if is_candidate => Some(kind),
            _ => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn gates_mut(&mut self) -> [&mut GateParams; 3] {
        [&mut self.update, &mut self.reset, &mut self.candidate]
    }

    pub fn gates(&self) -> [&GateParams; 3] {
        [&self.update, &self.reset, &self.candidate]
    }

    fn gate_pre(&self, gate: &GateParams, x: &Vector, h_in: &Vector) -> Result<Vector> {
        let wx = gate.w.matvec(x)?;
        let uh = gate.u.matvec(h_in)?;
        wx.add(&uh)
    }

    /// Normalize (if enabled for this gate) and bias one gate's summed
    /// inputs.
    fn gate_activation_input(
        &self,
        gate: &GateParams,
        pre: &Vector,
        is_candidate: bool,
    ) -> Result<(Vector, Vector, Option<NormCache>)> {
        match self.effective_norm(is_candidate) {
            Some(kind) => {
                let (normed, cache) = kind.forward(pre, &gate.norm)?;
                let v = normed.add(&gate.norm.bias)?;
                Ok((v, normed, Some(cache)))
            }
            None => {
                let v = pre.add(&gate.norm.bias)?;
                Ok((v, pre.clone(), None))
            }
        }
    }

    /// One recurrence step.
    pub fn step(&self, x: &Vector, h_prev: &Vector) -> Result<(Vector, GruStepCache)> {
        if x.len() != self.input_dim {
            return Err(Error::shape("gru step input", self.input_dim, x.len()));
        }
        if h_prev.len() != self.hidden_dim {
            return Err(Error::shape("gru step hidden", self.hidden_dim, h_prev.len()));
        }
        let pre_update = self.gate_pre(&self.update, x, h_prev)?;
        let (vz, _, nc_update) = self.gate_activation_input(&self.update, &pre_update, false)?;
        let z = Vector::from(vz.iter().map(|t| 1.0 / (1.0 + (-t).exp())).collect::<Vec<_>>());

        let pre_reset = self.gate_pre(&self.reset, x, h_prev)?;
        let (vr, _, nc_reset) = self.gate_activation_input(&self.reset, &pre_reset, false)?;
        let r = Vector::from(vr.iter().map(|t| 1.0 / (1.0 + (-t).exp())).collect::<Vec<_>>());

        let q = r.hadamard(h_prev)?;
        let pre_candidate = self.gate_pre(&self.candidate, x, &q)?;
        let (vc, candidate_normed, nc_candidate) =
            self.gate_activation_input(&self.candidate, &pre_candidate, true)?;
        let c = Vector::from(vc.iter().map(|t| t.tanh()).collect::<Vec<_>>());

        let mut h = Vec::with_capacity(self.hidden_dim);
        for i in 0..self.hidden_dim {
            h.push((1.0 - z[i]) * h_prev[i] + z[i] * c[i]);
        }
        let h = Vector::from(h);
        let cache = GruStepCache {
            input: x.clone(),
            h_prev: h_prev.clone(),
            nc_update,
            nc_reset,
            nc_candidate,
            pre_update,
            pre_reset,
            pre_candidate,
            candidate_normed,
            z,
            r,
            q,
            c,
            h: h.clone(),
        };
        Ok((h, cache))
    }

    /// Runs a whole sequence from `h_0 = 0`.
    pub fn rollout(&self, xs: &[Vector]) -> Result<(Vec<Vector>, Vec<GruStepCache>)> {
        let mut h = Vector::zeros(self.hidden_dim);
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step(x, &h)?;
            hs.push(next.clone());
            caches.push(cache);
            h = next;
        }
        Ok((hs, caches))
    }

    fn zero_gate_grads(&self) -> GateGrads {
        GateGrads {
            d_w: Matrix::zeros(self.hidden_dim, self.input_dim),
            d_u: Matrix::zeros(self.hidden_dim, self.hidden_dim),
            d_bias: Vector::zeros(self.hidden_dim),
            d_gain: self.norm.map(|_| Vector::zeros(self.hidden_dim)),
        }
    }

    /// BPTT over a cached rollout. `d_h_seq` supplies the gradient
    /// arriving at each step's hidden output (for example from a
    /// per-step readout); the recurrent carry is handled internally.
    /// Returns parameter gradients, per-step input gradients, and the
    /// gradient on the initial hidden state.
    pub fn backward(
        &self,
        caches: &[GruStepCache],
        d_h_seq: &[Vector],
    ) -> Result<(GruGrads, Vec<Vector>, Vector)> {
        if caches.len() != d_h_seq.len() {
            return Err(Error::shape("gru backward", caches.len(), d_h_seq.len()));
        }
        let n = self.hidden_dim;
        let mut grads = GruGrads {
            update: self.zero_gate_grads(),
            reset: self.zero_gate_grads(),
            candidate: self.zero_gate_grads(),
        };
        let mut d_x_seq = vec![Vector::zeros(self.input_dim); caches.len()];
        let mut carry = Vector::zeros(n);
        for (t, cache) in caches.iter().enumerate().rev() {
            let d_h = d_h_seq[t].add(&carry)?;
            let mut d_h_prev = Vector::zeros(n);

            // h = (1 - z) . h_prev + z . c
            let mut d_z = Vec::with_capacity(n);
            let mut d_c = Vec::with_capacity(n);
            for i in 0..n {
                d_z.push(d_h[i] * (cache.c[i] - cache.h_prev[i]));
                d_c.push(d_h[i] * cache.z[i]);
                d_h_prev[i] += d_h[i] * (1.0 - cache.z[i]);
            }

            // Candidate gate: c = tanh(v).
            let d_vc = Vector::from(
                d_c.iter()
                    .zip(cache.c.iter())
                    .map(|(d, c)| d * (1.0 - c * c))
                    .collect::<Vec<_>>(),
            );
            let d_pre_c = self.norm_backward_into(
                &self.candidate,
                &mut grads.candidate,
                &cache.nc_candidate,
                &d_vc,
                true,
            )?;
            grads.candidate.d_w.add_outer(&d_pre_c, &cache.input, 1.0)?;
            grads.candidate.d_u.add_outer(&d_pre_c, &cache.q, 1.0)?;
            let d_q = self.candidate.u.matvec_t(&d_pre_c)?;
            let mut d_r = Vec::with_capacity(n);
            for i in 0..n {
                d_r.push(d_q[i] * cache.h_prev[i]);
                d_h_prev[i] += d_q[i] * cache.r[i];
            }

            // Reset gate: r = sigmoid(v).
            let d_vr = Vector::from(
                d_r.iter()
                    .zip(cache.r.iter())
                    .map(|(d, r)| d * r * (1.0 - r))
                    .collect::<Vec<_>>(),
            );
            let d_pre_r = self.norm_backward_into(
                &self.reset,
                &mut grads.reset,
                &cache.nc_reset,
                &d_vr,
                false,
            )?;
            grads.reset.d_w.add_outer(&d_pre_r, &cache.input, 1.0)?;
            grads.reset.d_u.add_outer(&d_pre_r, &cache.h_prev, 1.0)?;
            let d_h_via_r = self.reset.u.matvec_t(&d_pre_r)?;

            // Update gate: z = sigmoid(v).
            let d_vz = Vector::from(
                d_z.iter()
                    .zip(cache.z.iter())
                    .map(|(d, z)| d * z * (1.0 - z))
                    .collect::<Vec<_>>(),
            );
            let d_pre_z = self.norm_backward_into(
                &self.update,
                &mut grads.update,
                &cache.nc_update,
                &d_vz,
                false,
            )?;
            grads.update.d_w.add_outer(&d_pre_z, &cache.input, 1.0)?;
            grads.update.d_u.add_outer(&d_pre_z, &cache.h_prev, 1.0)?;
            let d_h_via_z = self.update.u.matvec_t(&d_pre_z)?;

            let d_x = self
                .candidate
                .w
                .matvec_t(&d_pre_c)?
                .add(&self.reset.w.matvec_t(&d_pre_r)?)?
                .add(&self.update.w.matvec_t(&d_pre_z)?)?;
            d_x_seq[t] = d_x;

            carry = d_h_prev.add(&d_h_via_r)?.add(&d_h_via_z)?;
        }
        Ok((grads, d_x_seq, carry))
    }

    /// Routes a gradient on the gate's activation input through the
    /// normalizer (accumulating bias/gain gradients) and returns the
    /// gradient on the raw summed inputs.
    fn norm_backward_into(
        &self,
        gate: &GateParams,
        grads: &mut GateGrads,
        norm_cache: &Option<NormCache>,
        d_v: &Vector,
        is_candidate: bool,
    ) -> Result<Vector> {
        for (acc, d) in grads.d_bias.0.iter_mut().zip(d_v.iter()) {
            *acc += d;
        }
        match (self.effective_norm(is_candidate), norm_cache) {
            (Some(kind), Some(nc)) => {
                let (d_pre, d_gain) = kind.backward(nc, &gate.norm, d_v)?;
                let acc = grads
                    .d_gain
                    .as_mut()
                    .expect("gain gradients allocated when norm enabled");
                for (a, d) in acc.0.iter_mut().zip(d_gain.iter()) {
                    *a += d;
                }
                Ok(d_pre)
            }
            (None, None) => Ok(d_v.clone()),
            _ => Err(Error::Unsupported(
                "gru cache does not match cell normalization setting".into(),
            )),
        }
    }

    /// Trainable scalar count for one gate.
    fn gate_param_count(&self) -> usize {
        let mut n = self.hidden_dim * self.input_dim + self.hidden_dim * self.hidden_dim
            + self.hidden_dim;
        if self.norm.is_some() {
            n += self.hidden_dim;
        }
        n
    }

    pub fn param_count(&self) -> usize {
        3 * self.gate_param_count()
    }

    /// Flattening order: update, reset, candidate gates; within a gate:
    /// input weights (row-major), recurrent weights, bias, then gain when
    /// normalization is enabled.
    pub fn push_params(&self, out: &mut Vec<f64>) {
        for gate in self.gates() {
            out.extend_from_slice(gate.w.data());
            out.extend_from_slice(gate.u.data());
            out.extend_from_slice(gate.norm.bias.as_slice());
            if self.norm.is_some() {
                out.extend_from_slice(gate.norm.gain.as_slice());
            }
        }
    }

    pub fn read_params(&mut self, flat: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if flat.len() < need {
            return Err(Error::shape("gru parameter read", need, flat.len()));
        }
        let norm_enabled = self.norm.is_some();
        let mut offset = 0;
        for gate in self.gates_mut() {
            let wlen = gate.w.rows() * gate.w.cols();
            gate.w.data_mut().copy_from_slice(&flat[offset..offset + wlen]);
            offset += wlen;
            let ulen = gate.u.rows() * gate.u.cols();
            gate.u.data_mut().copy_from_slice(&flat[offset..offset + ulen]);
            offset += ulen;
            let blen = gate.norm.bias.len();
            gate.norm.bias = Vector::from(flat[offset..offset + blen].to_vec());
            offset += blen;
            if norm_enabled {
                let glen = gate.norm.gain.len();
                gate.norm.gain = Vector::from(flat[offset..offset + glen].to_vec());
                offset += glen;
            }
        }
        Ok(offset)
    }

    pub fn push_grads(&self, grads: &GruGrads, out: &mut Vec<f64>) {
        for g in [&grads.update, &grads.reset, &grads.candidate] {
            out.extend_from_slice(g.d_w.data());
            out.extend_from_slice(g.d_u.data());
            out.extend_from_slice(g.d_bias.as_slice());
            if let Some(d_gain) = &g.d_gain {
                out.extend_from_slice(d_gain.as_slice());
            }
        }
    }
}
