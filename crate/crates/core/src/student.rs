//! Uncertainty-aware student GP and the feedback math that grades pseudo
//! labels: covariance assembly over the unlabeled set, the unlabeled NLL the
//! student trains on, the closed-form feedback posterior mean, the feedback
//! MSE against validation labels, and analytic gradients of that loss with
//! respect to pseudo-label means, teacher variances and unlabeled locations.
//!
//! The student prior has zero mean; its covariance over the unlabeled set is
//!
//! ```text
//! Σ_u = κ0(Z_u, Z_u) + σ0²·I + diag(var_t)
//! ```
//!
//! so a pseudo label with a large teacher variance contributes little to the
//! posterior mean at validation points — that per-point downweighting is the
//! mechanism the feedback gradients exploit.

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::gp::{kernel_matrix, pairwise_sq_dists, GpHyper, LabeledSet};
use crate::numerics::{cholesky, DenseMatrix};

pub(crate) const LN_2PI: f64 = crate::gp::LN_2PI;

/// Unlabeled latent inputs with teacher-predicted means and variances.
#[derive(Clone, Debug)]
pub struct PseudoSet {
    z_u: DenseMatrix,
    y_hat: Vec<f64>,
    var_t: Vec<f64>,
}

impl PseudoSet {
    /// Teacher variances must be nonnegative; the uncertainty-aware path
    /// always produces strictly positive ones, the ablated path passes zeros.
    pub fn new(z_u: DenseMatrix, y_hat: Vec<f64>, var_t: Vec<f64>) -> Result<Self> {
        if z_u.rows() == 0 {
            return Err(Error::DegenerateInput {
                context: "pseudo set is empty",
            });
        }
        if z_u.rows() != y_hat.len() || z_u.rows() != var_t.len() {
            return Err(Error::dim(format!(
                "pseudo set: {} inputs, {} means, {} variances",
                z_u.rows(),
                y_hat.len(),
                var_t.len()
            )));
        }
        if y_hat.iter().any(|v| !v.is_finite())
            || var_t.iter().any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::NonFinite {
                context: "pseudo labels",
            });
        }
        Ok(Self { z_u, y_hat, var_t })
    }

    #[inline]
    pub fn z_u(&self) -> &DenseMatrix {
        &self.z_u
    }

    #[inline]
    pub fn y_hat(&self) -> &[f64] {
        &self.y_hat
    }

    #[inline]
    pub fn var_t(&self) -> &[f64] {
        &self.var_t
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> PseudoSet {
        PseudoSet {
            z_u: self.z_u.select_rows(idx),
            y_hat: idx.iter().map(|&i| self.y_hat[i]).collect(),
            var_t: idx.iter().map(|&i| self.var_t[i]).collect(),
        }
    }
}

/// Gradients of the feedback loss with respect to the pseudo set.
#[derive(Clone, Debug)]
pub struct FeedbackGrads {
    pub d_yhat: Vec<f64>,
    pub d_vart: Vec<f64>,
    pub d_zu: DenseMatrix,
    /// Gradient slots for `(log_outputscale, log_lengthscale, log_noise)`;
    /// zero while the student is held fixed during the feedback step.
    pub d_student_hyper: [f64; 3],
}

/// Student covariance over the unlabeled set:
/// `κ0(Z_u,Z_u) + σ0²·I + diag(var_t)`.
pub fn assemble_sigma_u(h: &GpHyper, pseudo: &PseudoSet) -> Result<DenseMatrix> {
    let mut sigma = kernel_matrix(h, pseudo.z_u(), pseudo.z_u())?;
    let sigma0 = h.noise();
    for i in 0..pseudo.len() {
        let v = sigma.get(i, i) + sigma0 + pseudo.var_t[i];
        sigma.set(i, i, v);
    }
    Ok(sigma)
}

/// NLL of the pseudo means under `N(0, Σ_u)`:
/// `0.5·(ŷᵀ Σ_u⁻¹ ŷ + log det Σ_u + M·ln 2π)`.
pub fn student_unlabeled_nll(h: &GpHyper, pseudo: &PseudoSet) -> Result<f64> {
    let sigma = assemble_sigma_u(h, pseudo)?;
    let chol = cholesky(&sigma, 0.0)?;
    let alpha = chol.solve_vec(&pseudo.y_hat)?;
    let quad: f64 = pseudo.y_hat.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    Ok(0.5 * (quad + chol.log_det() + pseudo.len() as f64 * LN_2PI))
}

/// Unlabeled NLL and its gradient with respect to the student's
/// `(log_outputscale, log_lengthscale, log_noise)`.
pub fn student_nll_grads(h: &GpHyper, pseudo: &PseudoSet) -> Result<(f64, [f64; 3])> {
    let m = pseudo.len();
    let k = kernel_matrix(h, pseudo.z_u(), pseudo.z_u())?;
    let r2 = pairwise_sq_dists(pseudo.z_u(), pseudo.z_u())?;
    let sigma0 = h.noise();
    let l2 = h.lengthscale() * h.lengthscale();

    let mut sigma = k.clone();
    for i in 0..m {
        let v = sigma.get(i, i) + sigma0 + pseudo.var_t[i];
        sigma.set(i, i, v);
    }
    let chol = cholesky(&sigma, 0.0)?;
    let alpha = chol.solve_vec(&pseudo.y_hat)?;
    let sigma_inv = chol.inverse()?;

    let quad: f64 = pseudo.y_hat.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let nll = 0.5 * (quad + chol.log_det() + m as f64 * LN_2PI);

    let mut g_s = 0.0;
    let mut g_l = 0.0;
    let mut g_n = 0.0;
    for i in 0..m {
        for j in 0..m {
            let gij = 0.5 * (sigma_inv.get(i, j) - alpha[i] * alpha[j]);
            g_s += gij * k.get(i, j);
            g_l += gij * k.get(i, j) * r2.get(i, j) / l2;
            if i == j {
                g_n += gij * sigma0;
            }
        }
    }
    Ok((nll, [g_s, g_l, g_n]))
}

/// One Adam step of the student hyperparameters on the unlabeled NLL;
/// teacher variances are treated as constants and the prior mean stays zero.
pub fn student_fit_step(
    h: &GpHyper,
    pseudo: &PseudoSet,
    lr: f64,
    adam: &mut AdamState,
) -> Result<GpHyper> {
    let (_, grads) = student_nll_grads(h, pseudo)?;
    let mut p = [h.log_outputscale, h.log_lengthscale, h.log_noise];
    adam.step(&mut p, &grads, lr)?;
    Ok(GpHyper {
        log_outputscale: p[0],
        log_lengthscale: p[1],
        log_noise: p[2],
        mean_const: h.mean_const,
    }
    .clamped())
}

/// Student posterior mean at validation inputs, zero prior mean:
/// `μ_S(Z_val) = κ0(Z_val, Z_u) · Σ_u⁻¹ · Ŷ_u`.
pub fn feedback_posterior_mean(
    h: &GpHyper,
    pseudo: &PseudoSet,
    z_val: &DenseMatrix,
) -> Result<Vec<f64>> {
    if z_val.cols() != pseudo.z_u().cols() {
        return Err(Error::dim("feedback_posterior_mean: widths differ"));
    }
    let sigma = assemble_sigma_u(h, pseudo)?;
    let chol = cholesky(&sigma, 0.0)?;
    let alpha = chol.solve_vec(&pseudo.y_hat)?;
    let kv = kernel_matrix(h, z_val, pseudo.z_u())?;
    kv.matvec(&alpha)
}

/// Mean squared error between the student's posterior mean on the validation
/// inputs and the validation labels.
pub fn feedback_loss(h: &GpHyper, pseudo: &PseudoSet, val: &LabeledSet) -> Result<f64> {
    let mu = feedback_posterior_mean(h, pseudo, val.z())?;
    let n = val.len() as f64;
    Ok(mu
        .iter()
        .zip(val.y())
        .map(|(m, y)| (m - y) * (m - y))
        .sum::<f64>()
        / n)
}

/// Exact gradients of [`feedback_loss`] with respect to the pseudo-label
/// means, the teacher variances, and the unlabeled input locations, with the
/// student hyperparameters held fixed.
pub fn feedback_backward(
    h: &GpHyper,
    pseudo: &PseudoSet,
    val: &LabeledSet,
) -> Result<FeedbackGrads> {
    if val.dim() != pseudo.z_u().cols() {
        return Err(Error::dim("feedback_backward: widths differ"));
    }
    let m = pseudo.len();
    let n = val.len();
    let d = pseudo.z_u().cols();
    let l2 = h.lengthscale() * h.lengthscale();

    let sigma = assemble_sigma_u(h, pseudo)?;
    let chol = cholesky(&sigma, 0.0)?;
    let alpha = chol.solve_vec(&pseudo.y_hat)?;
    let kv = kernel_matrix(h, val.z(), pseudo.z_u())?; // N×M
    let mu = kv.matvec(&alpha)?;

    // dL/dμ = 2(μ - y)/N
    let g: Vec<f64> = mu
        .iter()
        .zip(val.y())
        .map(|(m, y)| 2.0 * (m - y) / n as f64)
        .collect();

    // Kᵀ·g, then β = Σ_u⁻¹ Kᵀ g which is also dL/dŷ
    let mut ktg = vec![0.0; m];
    for i in 0..n {
        let row = kv.row(i);
        for j in 0..m {
            ktg[j] += row[j] * g[i];
        }
    }
    let beta = chol.solve_vec(&ktg)?;
    let d_yhat = beta.clone();

    // dL/dΣ_u[ii] = -(Σ_u⁻¹ Kᵀg)_i (Σ_u⁻¹ ŷ)_i
    let d_vart: Vec<f64> = (0..m).map(|i| -beta[i] * alpha[i]).collect();

    // location gradients: the validation cross-kernel plus the symmetric
    // dependence of κ0(Z_u,Z_u) inside Σ_u
    let ku = kernel_matrix(h, pseudo.z_u(), pseudo.z_u())?;
    let mut d_zu = DenseMatrix::zeros(m, d);
    for j in 0..m {
        let zj = pseudo.z_u().row(j).to_vec();
        let mut acc = vec![0.0; d];
        for (i, gi) in g.iter().enumerate() {
            let zv = val.z().row(i);
            let coef = gi * alpha[j] * kv.get(i, j) / l2;
            for k in 0..d {
                acc[k] += coef * (zv[k] - zj[k]);
            }
        }
        for i in 0..m {
            if i == j {
                continue;
            }
            let zi = pseudo.z_u().row(i);
            let coef = -(beta[i] * alpha[j] + beta[j] * alpha[i]) * ku.get(i, j) / l2;
            for k in 0..d {
                acc[k] += coef * (zi[k] - zj[k]);
            }
        }
        for k in 0..d {
            d_zu.set(j, k, acc[k]);
        }
    }

    Ok(FeedbackGrads {
        d_yhat,
        d_vart,
        d_zu,
        d_student_hyper: [0.0; 3],
    })
}
