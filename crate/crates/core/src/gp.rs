//! Exact Gaussian-process regression with an isotropic RBF kernel, a constant
//! prior mean and an optional heteroscedastic per-point noise channel.
//!
//! The same machinery serves two roles: the data-query surrogate that the
//! acquisition function interrogates, and the prior of the student model that
//! grades pseudo labels. Hyperparameters are fitted by Adam on the exact
//! negative log marginal likelihood; labels are standardized internally for
//! optimizer stability and the fitted hyperparameters are mapped back to raw
//! label units before they are returned.

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, CholeskyFactor, DenseMatrix};
use crate::par;

pub const LENGTHSCALE_MIN: f64 = 1e-3;
pub const LENGTHSCALE_MAX: f64 = 1e3;
const LOG_AMPLITUDE_MIN: f64 = -18.420680743952367; // ln 1e-8
const LOG_AMPLITUDE_MAX: f64 = 18.420680743952367; // ln 1e8

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// RBF kernel hyperparameters, additive noise and constant prior mean,
/// all stored in log space where positivity is required.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpHyper {
    pub log_outputscale: f64,
    pub log_lengthscale: f64,
    pub log_noise: f64,
    pub mean_const: f64,
}

impl GpHyper {
    /// Unit output scale and lengthscale, noise 1e-2, zero mean.
    pub fn default_init() -> Self {
        Self {
            log_outputscale: 0.0,
            log_lengthscale: 0.0,
            log_noise: (1e-2_f64).ln(),
            mean_const: 0.0,
        }
    }

    #[inline]
    pub fn outputscale(&self) -> f64 {
        self.log_outputscale.exp()
    }

    #[inline]
    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    #[inline]
    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    /// Clamps the log fields into their admissible ranges.
    pub fn clamped(mut self) -> Self {
        self.log_lengthscale = self
            .log_lengthscale
            .clamp(LENGTHSCALE_MIN.ln(), LENGTHSCALE_MAX.ln());
        self.log_outputscale = self.log_outputscale.clamp(LOG_AMPLITUDE_MIN, LOG_AMPLITUDE_MAX);
        self.log_noise = self.log_noise.clamp(LOG_AMPLITUDE_MIN, LOG_AMPLITUDE_MAX);
        self
    }

    fn validate(&self) -> Result<()> {
        let vals = [
            self.log_outputscale,
            self.log_lengthscale,
            self.log_noise,
            self.mean_const,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "gp hyperparameters",
            });
        }
        Ok(())
    }
}

/// Latent inputs with ground-truth scalar labels.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    z: DenseMatrix,
    y: Vec<f64>,
}

impl LabeledSet {
    pub fn new(z: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        if z.rows() == 0 {
            return Err(Error::DegenerateInput {
                context: "labeled set is empty",
            });
        }
        if z.rows() != y.len() {
            return Err(Error::dim(format!(
                "labeled set: {} inputs vs {} labels",
                z.rows(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "labels" });
        }
        Ok(Self { z, y })
    }

    #[inline]
    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }

    #[inline]
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    /// Appends one observation.
    pub fn push(&mut self, z_row: &[f64], y: f64) -> Result<()> {
        if z_row.len() != self.z.cols() {
            return Err(Error::dim("push: input width differs"));
        }
        if z_row.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::NonFinite {
                context: "pushed observation",
            });
        }
        self.z = self.z.vstack(&DenseMatrix::from_row(z_row)?)?;
        self.y.push(y);
        Ok(())
    }

    /// Subset keeping the listed rows, in order.
    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            z: self.z.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Pointwise posterior mean and variance.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Squared Euclidean distances between the rows of `a` and `b`.
pub fn pairwise_sq_dists(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "pairwise distances: widths {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    let cols = b.rows();
    par::fill_rows(out.data_mut(), cols, |i, row| {
        let ra = a.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let rb = b.row(j);
            let mut s = 0.0;
            for (x, y) in ra.iter().zip(rb) {
                let d = x - y;
                s += d * d;
            }
            *slot = s;
        }
    });
    Ok(out)
}

/// RBF kernel matrix `s · exp(-‖aᵢ - bⱼ‖² / (2 ℓ²))`.
pub fn kernel_matrix(h: &GpHyper, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "kernel_matrix: widths {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let s = h.outputscale();
    let inv_2l2 = 0.5 / (h.lengthscale() * h.lengthscale());
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    let cols = b.rows();
    par::fill_rows(out.data_mut(), cols, |i, row| {
        let ra = a.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let rb = b.row(j);
            let mut d2 = 0.0;
            for (x, y) in ra.iter().zip(rb) {
                let d = x - y;
                d2 += d * d;
            }
            *slot = s * (-d2 * inv_2l2).exp();
        }
    });
    Ok(out)
}

/// Sequential twin of [`kernel_matrix`], kept for the benchmark suite.
pub fn kernel_matrix_serial(h: &GpHyper, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim("kernel_matrix: widths differ"));
    }
    let s = h.outputscale();
    let inv_2l2 = 0.5 / (h.lengthscale() * h.lengthscale());
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    let cols = b.rows();
    par::fill_rows_serial(out.data_mut(), cols, |i, row| {
        let ra = a.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let rb = b.row(j);
            let mut d2 = 0.0;
            for (x, y) in ra.iter().zip(rb) {
                let d = x - y;
                d2 += d * d;
            }
            *slot = s * (-d2 * inv_2l2).exp();
        }
    });
    Ok(out)
}

fn validate_noise(noise: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(d) = noise {
        if d.len() != n {
            return Err(Error::dim(format!(
                "per-point noise: {} entries for {} points",
                d.len(),
                n
            )));
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite {
                context: "per-point noise",
            });
        }
    }
    Ok(())
}

/// Training covariance `K + σ0²·I + diag(noise)`.
fn train_covariance(
    h: &GpHyper,
    z: &DenseMatrix,
    noise: Option<&[f64]>,
) -> Result<DenseMatrix> {
    let mut c = kernel_matrix(h, z, z)?;
    let sigma0 = h.noise();
    for i in 0..z.rows() {
        let extra = noise.map_or(0.0, |d| d[i]);
        let v = c.get(i, i) + sigma0 + extra;
        c.set(i, i, v);
    }
    Ok(c)
}

/// A factorized GP ready for repeated posterior queries.
pub struct FittedGp {
    h: GpHyper,
    z: DenseMatrix,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
}

impl FittedGp {
    pub fn fit(h: &GpHyper, data: &LabeledSet, noise: Option<&[f64]>) -> Result<Self> {
        h.validate()?;
        validate_noise(noise, data.len())?;
        let c = train_covariance(h, data.z(), noise)?;
        let chol = cholesky(&c, 0.0)?;
        let centered: Vec<f64> = data.y().iter().map(|y| y - h.mean_const).collect();
        let alpha = chol.solve_vec(&centered)?;
        Ok(Self {
            h: *h,
            z: data.z().clone(),
            chol,
            alpha,
        })
    }

    #[inline]
    pub fn hyper(&self) -> &GpHyper {
        &self.h
    }

    #[inline]
    pub fn train_inputs(&self) -> &DenseMatrix {
        &self.z
    }

    fn cross_kernel_row(&self, x: &[f64]) -> Vec<f64> {
        let s = self.h.outputscale();
        let inv_2l2 = 0.5 / (self.h.lengthscale() * self.h.lengthscale());
        (0..self.z.rows())
            .map(|i| {
                let r = self.z.row(i);
                let mut d2 = 0.0;
                for (a, b) in x.iter().zip(r) {
                    let d = a - b;
                    d2 += d * d;
                }
                s * (-d2 * inv_2l2).exp()
            })
            .collect()
    }

    fn point(&self, x: &[f64]) -> (f64, f64) {
        let k = self.cross_kernel_row(x);
        let mean = self.h.mean_const
            + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let beta = self.chol.solve_vec(&k).expect("factor dim matches");
        let var = self.h.outputscale()
            - k.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        (mean, var.max(0.0))
    }

    /// Posterior mean/variance for a single point.
    pub fn predict_point(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.z.cols() {
            return Err(Error::dim("predict_point: width differs"));
        }
        Ok(self.point(x))
    }

    /// Posterior mean/variance plus their gradients with respect to the
    /// query point.
    pub fn predict_point_grad(&self, x: &[f64]) -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
        if x.len() != self.z.cols() {
            return Err(Error::dim("predict_point_grad: width differs"));
        }
        let d = x.len();
        let k = self.cross_kernel_row(x);
        let mean = self.h.mean_const
            + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let beta = self.chol.solve_vec(&k)?;
        let raw_var = self.h.outputscale()
            - k.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();

        let inv_l2 = 1.0 / (self.h.lengthscale() * self.h.lengthscale());
        let mut dmean = vec![0.0; d];
        let mut dvar = vec![0.0; d];
        for i in 0..self.z.rows() {
            let zi = self.z.row(i);
            // ∂k(x, zᵢ)/∂x = k · (zᵢ - x)/ℓ²
            let coef_mean = self.alpha[i] * k[i] * inv_l2;
            let coef_var = -2.0 * beta[i] * k[i] * inv_l2;
            for j in 0..d {
                let diff = zi[j] - x[j];
                dmean[j] += coef_mean * diff;
                dvar[j] += coef_var * diff;
            }
        }
        if raw_var <= 0.0 {
            // clamped region: variance is flat at zero
            dvar.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok((mean, raw_var.max(0.0), dmean, dvar))
    }

    /// Batch posterior over the rows of `query`.
    pub fn predict(&self, query: &DenseMatrix) -> Result<GpPosterior> {
        if query.cols() != self.z.cols() {
            return Err(Error::dim("predict: query width differs"));
        }
        let rows: Vec<usize> = (0..query.rows()).collect();
        let results = par::map_items(rows, |i| self.point(query.row(i)));
        let (mean, variance) = results.into_iter().unzip();
        Ok(GpPosterior { mean, variance })
    }
}

/// Exact GP posterior at the query points.
pub fn gp_predict(
    h: &GpHyper,
    data: &LabeledSet,
    noise: Option<&[f64]>,
    query: &DenseMatrix,
) -> Result<GpPosterior> {
    FittedGp::fit(h, data, noise)?.predict(query)
}

/// Mean pointwise Gaussian NLL of `test` labels under the posterior
/// predictive distribution (posterior variance plus the additive noise).
pub fn gp_nll(
    h: &GpHyper,
    data: &LabeledSet,
    noise: Option<&[f64]>,
    test: &LabeledSet,
) -> Result<f64> {
    let post = gp_predict(h, data, noise, test.z())?;
    let sigma0 = h.noise();
    let mut total = 0.0;
    for i in 0..test.len() {
        let v = post.variance[i] + sigma0;
        let r = test.y()[i] - post.mean[i];
        total += 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r * r / v);
    }
    Ok(total / test.len() as f64)
}

fn label_stats(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// NLL and its gradient with respect to
/// `[log_outputscale, log_lengthscale, log_noise, mean_const]`.
fn nll_and_grads(
    p: &[f64; 4],
    z: &DenseMatrix,
    r2: &DenseMatrix,
    y: &[f64],
    noise: Option<&[f64]>,
) -> Result<(f64, [f64; 4])> {
    let n = z.rows();
    let s = p[0].exp();
    let l2 = (2.0 * p[1]).exp();
    let sigma0 = p[2].exp();
    let m = p[3];

    let mut c = DenseMatrix::zeros(n, n);
    let mut k = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let kij = s * (-r2.get(i, j) / (2.0 * l2)).exp();
            k.set(i, j, kij);
            let extra = if i == j {
                sigma0 + noise.map_or(0.0, |d| d[i])
            } else {
                0.0
            };
            c.set(i, j, kij + extra);
        }
    }
    let chol = cholesky(&c, 0.0)?;
    let centered: Vec<f64> = y.iter().map(|v| v - m).collect();
    let alpha = chol.solve_vec(&centered)?;
    let cinv = chol.inverse()?;

    let quad: f64 = centered.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let nll = 0.5 * (quad + chol.log_det() + n as f64 * LN_2PI);

    // dNLL/dC = 0.5 (C⁻¹ - α αᵀ), contracted against each dC/dθ
    let mut g_s = 0.0;
    let mut g_l = 0.0;
    let mut g_n = 0.0;
    for i in 0..n {
        for j in 0..n {
            let gij = 0.5 * (cinv.get(i, j) - alpha[i] * alpha[j]);
            g_s += gij * k.get(i, j);
            g_l += gij * k.get(i, j) * r2.get(i, j) / l2;
            if i == j {
                g_n += gij * sigma0;
            }
        }
    }
    let g_m = -alpha.iter().sum::<f64>();
    Ok((nll, [g_s, g_l, g_n, g_m]))
}

/// Fits the hyperparameters by Adam on the exact negative log marginal
/// likelihood. Labels are standardized internally; the best parameters seen
/// over the trajectory (including the initial ones) are returned, mapped back
/// to raw label units.
pub fn gp_fit(
    data: &LabeledSet,
    noise: Option<&[f64]>,
    init: GpHyper,
    steps: usize,
    lr: f64,
) -> Result<GpHyper> {
    init.validate()?;
    validate_noise(noise, data.len())?;
    if steps == 0 {
        return Ok(init);
    }

    let (shift, scale) = label_stats(data.y());
    let scale2 = scale * scale;
    let y_std: Vec<f64> = data.y().iter().map(|v| (v - shift) / scale).collect();
    let noise_std: Option<Vec<f64>> =
        noise.map(|d| d.iter().map(|v| v / scale2).collect());

    let mut p = [
        init.log_outputscale - scale2.ln(),
        init.log_lengthscale,
        init.log_noise - scale2.ln(),
        (init.mean_const - shift) / scale,
    ];
    // keep the standardized start inside the admissible region
    let clamped0 = GpHyper {
        log_outputscale: p[0],
        log_lengthscale: p[1],
        log_noise: p[2],
        mean_const: p[3],
    }
    .clamped();
    p = [
        clamped0.log_outputscale,
        clamped0.log_lengthscale,
        clamped0.log_noise,
        clamped0.mean_const,
    ];

    let r2 = pairwise_sq_dists(data.z(), data.z())?;
    let mut adam = AdamState::new(4);
    let mut best_p = p;
    let mut best_nll = f64::INFINITY;
    let mut best_is_init = true;

    for step in 0..=steps {
        let eval = nll_and_grads(&p, data.z(), &r2, &y_std, noise_std.as_deref());
        match eval {
            Ok((nll, grads)) => {
                if nll < best_nll {
                    best_nll = nll;
                    best_p = p;
                    best_is_init = step == 0;
                }
                if step == steps {
                    break;
                }
                adam.step(&mut p, &grads, lr)?;
            }
            Err(Error::NotPositiveDefinite { .. }) if step > 0 => {
                // optimizer wandered into ill-conditioned territory; keep best
                break;
            }
            Err(e) => return Err(e),
        }
        let h = GpHyper {
            log_outputscale: p[0],
            log_lengthscale: p[1],
            log_noise: p[2],
            mean_const: p[3],
        }
        .clamped();
        p = [h.log_outputscale, h.log_lengthscale, h.log_noise, h.mean_const];
    }

    if best_is_init {
        return Ok(init);
    }
    Ok(GpHyper {
        log_outputscale: best_p[0] + scale2.ln(),
        log_lengthscale: best_p[1],
        log_noise: best_p[2] + scale2.ln(),
        mean_const: best_p[3] * scale + shift,
    }
    .clamped())
}
