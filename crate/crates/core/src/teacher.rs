//! MLP teacher predicting a Gaussian (mean, diagonal variance) per input,
//! trained on labeled data by Gaussian NLL, with exact reverse-mode gradients
//! with respect to both parameters and inputs.
//!
//! The network has five rectifier hidden layers and a two-head linear output;
//! the variance head goes through softplus plus a small floor to stay
//! strictly positive. Parameters live in one flat vector so the optimizer and
//! the finite-difference checks can treat them uniformly.

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::par;
use rand::Rng;

/// Number of rectifier hidden layers.
pub const HIDDEN_LAYERS: usize = 5;
/// Floor added to the softplus variance head.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[inline]
fn softplus(x: f64) -> f64 {
    // max(x,0) + ln(1 + e^{-|x|}) avoids overflow on both tails
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row Gaussian prediction.
#[derive(Clone, Debug)]
pub struct TeacherPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Flat-parameter MLP with shape `d -> w -> w -> w -> w -> w -> 2`.
#[derive(Clone, Debug)]
pub struct TeacherNet {
    input_dim: usize,
    hidden_width: usize,
    params: Vec<f64>,
}

impl TeacherNet {
    /// He-style uniform fan-in initialization; biases start at zero.
    pub fn init<R: Rng>(input_dim: usize, hidden_width: usize, rng: &mut R) -> Self {
        assert!(input_dim >= 1 && hidden_width >= 2);
        let mut net = Self {
            input_dim,
            hidden_width,
            params: Vec::new(),
        };
        let mut params = Vec::with_capacity(net.n_params());
        for (fan_in, fan_out) in net.layer_dims() {
            let bound = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        net.params = params;
        net
    }

    /// Layer shapes as `(fan_in, fan_out)` pairs, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut dims = vec![(self.input_dim, w)];
        for _ in 1..HIDDEN_LAYERS {
            dims.push((w, w));
        }
        dims.push((w, 2));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    #[inline]
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[inline]
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: "teacher parameters",
            });
        }
        Ok(())
    }

    /// Forward pass of one row; returns `(mean, variance)`.
    pub fn forward_row(&self, x: &[f64]) -> (f64, f64) {
        let (mean, var_raw) = self.raw_heads(x);
        (mean, softplus(var_raw) + VARIANCE_FLOOR)
    }

    /// Raw output heads `(mean, pre-softplus variance)` of one row.
    fn raw_heads(&self, x: &[f64]) -> (f64, f64) {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut cur = x.to_vec();
        let mut offset = 0;
        let dims = self.layer_dims();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(&cur) {
                    s += wi * xi;
                }
                next[o] = if l + 1 < dims.len() { s.max(0.0) } else { s };
            }
            cur = next;
        }
        (cur[0], cur[1])
    }

    /// Forward pass keeping post-activation values per layer, for backprop.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let dims = self.layer_dims();
        let mut acts = Vec::with_capacity(dims.len());
        let mut cur = x.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(&cur) {
                    s += wi * xi;
                }
                next[o] = if l + 1 < dims.len() { s.max(0.0) } else { s };
            }
            acts.push(next.clone());
            cur = next;
        }
        acts
    }
}

/// Per-row mean and strictly positive variance for a batch of inputs.
pub fn teacher_forward(net: &TeacherNet, z: &DenseMatrix) -> Result<TeacherPrediction> {
    net.check_finite()?;
    if z.cols() != net.input_dim() {
        return Err(Error::dim(format!(
            "teacher_forward: input width {} vs network {}",
            z.cols(),
            net.input_dim()
        )));
    }
    let rows: Vec<usize> = (0..z.rows()).collect();
    let results = par::map_items(rows, |i| net.forward_row(z.row(i)));
    let (mean, variance) = results.into_iter().unzip();
    Ok(TeacherPrediction { mean, variance })
}

/// Mean Gaussian NLL of labels under the teacher's predictions.
pub fn teacher_labeled_loss(net: &TeacherNet, data: &crate::gp::LabeledSet) -> Result<f64> {
    let pred = teacher_forward(net, data.z())?;
    let n = data.len() as f64;
    let mut total = 0.0;
    for i in 0..data.len() {
        let v = pred.variance[i];
        let r = data.y()[i] - pred.mean[i];
        total += 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r * r / v);
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "teacher labeled loss",
        });
    }
    Ok(loss)
}

/// Exact reverse-mode gradients of `Σᵢ upstream_meanᵢ·meanᵢ + upstream_varᵢ·varianceᵢ`
/// with respect to all parameters and to the inputs.
pub fn teacher_backward(
    net: &TeacherNet,
    upstream_mean: &[f64],
    upstream_var: &[f64],
    z: &DenseMatrix,
) -> Result<(Vec<f64>, DenseMatrix)> {
    net.check_finite()?;
    if z.cols() != net.input_dim() {
        return Err(Error::dim("teacher_backward: input width differs"));
    }
    if upstream_mean.len() != z.rows() || upstream_var.len() != z.rows() {
        return Err(Error::dim(format!(
            "teacher_backward: {} rows vs upstream ({}, {})",
            z.rows(),
            upstream_mean.len(),
            upstream_var.len()
        )));
    }

    let dims = net.layer_dims();
    let n_layers = dims.len();
    let mut param_grads = vec![0.0; net.n_params()];
    let mut input_grads = DenseMatrix::zeros(z.rows(), z.cols());

    // layer parameter offsets
    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for &(i, o) in &dims {
        offsets.push(off);
        off += i * o + o;
    }

    // accumulation over rows stays sequential so results are reproducible
    for r in 0..z.rows() {
        let x = z.row(r);
        let acts = net.forward_trace(x);
        let var_raw = acts[n_layers - 1][1];
        let mut delta = vec![upstream_mean[r], upstream_var[r] * sigmoid(var_raw)];

        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = dims[l];
            let w = &net.params[offsets[l]..offsets[l] + fan_in * fan_out];
            let below: &[f64] = if l == 0 { x } else { &acts[l - 1] };

            let gw = &mut param_grads[offsets[l]..offsets[l] + fan_in * fan_out + fan_out];
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    for i in 0..fan_in {
                        gw[o * fan_in + i] += d * below[i];
                    }
                }
                gw[fan_in * fan_out + o] += d;
            }

            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    prev[i] += d * row[i];
                }
            }
            if l == 0 {
                for i in 0..fan_in {
                    input_grads.set(r, i, prev[i]);
                }
            } else {
                // rectifier gate on the layer below
                for i in 0..fan_in {
                    if acts[l - 1][i] <= 0.0 {
                        prev[i] = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    Ok((param_grads, input_grads))
}

/// Mean labeled NLL plus its gradient with respect to the parameters.
pub fn labeled_loss_grads(
    net: &TeacherNet,
    data: &crate::gp::LabeledSet,
) -> Result<(f64, Vec<f64>)> {
    let pred = teacher_forward(net, data.z())?;
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut up_mean = vec![0.0; data.len()];
    let mut up_var = vec![0.0; data.len()];
    for i in 0..data.len() {
        let v = pred.variance[i];
        let r = data.y()[i] - pred.mean[i];
        loss += 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r * r / v);
        up_mean[i] = -r / (v * n);
        up_var[i] = 0.5 * (1.0 / v - r * r / (v * v)) / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "teacher labeled loss",
        });
    }
    let (grads, _) = teacher_backward(net, &up_mean, &up_var, data.z())?;
    Ok((loss, grads))
}

/// One Adam step over all parameters; returns the updated network.
pub fn teacher_adam_step(
    mut net: TeacherNet,
    grads: &[f64],
    lr: f64,
    state: &mut AdamState,
) -> Result<TeacherNet> {
    state.step(&mut net.params, grads, lr)?;
    Ok(net)
}
