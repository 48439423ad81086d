//! Unlabeled-data samplers: a GEV-based sampler that fits an extreme-value
//! distribution to the best labels and places points by Metropolis-Hastings
//! in latent space, a learned Gaussian sampler updated through the
//! reparameterization trick, and a uniform random baseline.

use crate::acquisition::BoundBox;
use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::teacher::TeacherNet;
use rand::Rng;
use rand_distr::StandardNormal;

/// Generalized extreme value parameters: location, scale, shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GevParams {
    pub a: f64,
    pub b: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(a: f64, b: f64, xi: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() || !xi.is_finite() || b <= 0.0 {
            return Err(Error::NonFinite {
                context: "gev parameters",
            });
        }
        Ok(Self { a, b, xi })
    }
}

/// Log density of the GEV distribution; `-inf` outside the support.
pub fn gev_logpdf(p: &GevParams, y: f64) -> f64 {
    let ybar = (y - p.a) / p.b;
    let t = if p.xi.abs() < 1e-12 {
        ybar
    } else {
        let u = 1.0 + p.xi * ybar;
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        u.ln() / p.xi
    };
    -(1.0 + p.xi) * t - (-t).exp() - p.b.ln()
}

/// Gradient of [`gev_logpdf`] with respect to `(a, ln b, ξ)`.
fn gev_logpdf_grad(p: &GevParams, y: f64) -> Option<[f64; 3]> {
    let ybar = (y - p.a) / p.b;
    let xi = p.xi;
    let (t, dt_dybar, dt_dxi) = if xi.abs() < 1e-6 {
        // series around ξ = 0: t = ȳ - ξȳ²/2 + ξ²ȳ³/3
        let t = ybar - xi * ybar * ybar / 2.0 + xi * xi * ybar.powi(3) / 3.0;
        let dt_dxi = -ybar * ybar / 2.0 + 2.0 * xi * ybar.powi(3) / 3.0;
        (t, 1.0 / (1.0 + xi * ybar), dt_dxi)
    } else {
        let u = 1.0 + xi * ybar;
        if u <= 0.0 {
            return None;
        }
        let t = u.ln() / xi;
        (t, 1.0 / u, (ybar / u - t) / xi)
    };
    // d logpdf = [-(1+ξ) + e^{-t}]·dt - t·dξ - d ln b
    let front = -(1.0 + xi) + (-t).exp();
    let d_a = front * dt_dybar * (-1.0 / p.b);
    let d_logb = front * dt_dybar * (-ybar) - 1.0;
    let d_xi = front * dt_dxi - t;
    Some([d_a, d_logb, d_xi])
}

fn in_support(p: &GevParams, y: f64) -> bool {
    p.xi.abs() < 1e-12 || 1.0 + p.xi * (y - p.a) / p.b > 0.0
}

/// Shrinks ξ toward zero until every label lies inside the support.
fn project_support(mut p: GevParams, labels: &[f64]) -> GevParams {
    for _ in 0..80 {
        if labels.iter().all(|&y| in_support(&p, y)) {
            return p;
        }
        p.xi *= 0.5;
    }
    p.xi = 0.0;
    p
}

fn gev_nll(p: &GevParams, labels: &[f64]) -> f64 {
    -labels.iter().map(|&y| gev_logpdf(p, y)).sum::<f64>()
}

/// Maximum-likelihood GEV fit over extreme labels by Adam, with the scale
/// parameterized through its logarithm and ξ projected back into the region
/// where every label has positive density.
pub fn gev_fit(labels: &[f64], init: GevParams, steps: usize, lr: f64) -> Result<GevParams> {
    if labels.len() < 3 {
        return Err(Error::DegenerateInput {
            context: "gev fit needs at least 3 labels",
        });
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gev fit labels",
        });
    }
    let spread = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - labels.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread <= 0.0 {
        return Err(Error::DegenerateInput {
            context: "all labels identical",
        });
    }
    if steps == 0 {
        return Ok(init);
    }

    let mut cur = project_support(init, labels);
    let mut params = [cur.a, cur.b.ln(), cur.xi];
    let mut adam = AdamState::new(3);
    let mut best = cur;
    let mut best_nll = gev_nll(&cur, labels);

    for _ in 0..steps {
        let mut grad = [0.0; 3];
        let mut ok = true;
        for &y in labels {
            match gev_logpdf_grad(&cur, y) {
                Some(g) => {
                    grad[0] -= g[0];
                    grad[1] -= g[1];
                    grad[2] -= g[2];
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            cur = project_support(cur, labels);
            params = [cur.a, cur.b.ln(), cur.xi];
            continue;
        }
        adam.step(&mut params, &grad, lr)?;
        cur = project_support(
            GevParams {
                a: params[0],
                b: params[1].exp().clamp(1e-8, 1e8),
                xi: params[2].clamp(-5.0, 5.0),
            },
            labels,
        );
        params = [cur.a, cur.b.ln(), cur.xi];
        let nll = gev_nll(&cur, labels);
        if nll.is_finite() && nll < best_nll {
            best_nll = nll;
            best = cur;
        }
    }
    Ok(best)
}

/// Parameters of the learned Gaussian sampler: per-dimension mean and
/// log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussSamplerParams {
    pub mu: Vec<f64>,
    pub log_scale: Vec<f64>,
}

pub const GAUSS_LOG_SCALE_MIN: f64 = -9.210340371976182; // ln 1e-4
pub const GAUSS_LOG_SCALE_MAX: f64 = 6.907755278982137; // ln 1e3

impl GaussSamplerParams {
    pub fn new(mu: Vec<f64>, log_scale: Vec<f64>) -> Result<Self> {
        if mu.len() != log_scale.len() {
            return Err(Error::dim("gauss sampler: mu/log_scale lengths differ"));
        }
        if mu.iter().chain(&log_scale).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "gauss sampler parameters",
            });
        }
        Ok(Self {
            mu,
            log_scale: log_scale
                .into_iter()
                .map(|v| v.clamp(GAUSS_LOG_SCALE_MIN, GAUSS_LOG_SCALE_MAX))
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Deterministic reparameterization map `z = mu + exp(log_scale) ⊙ r`, rowwise.
pub fn gauss_transform(p: &GaussSamplerParams, r: &DenseMatrix) -> Result<DenseMatrix> {
    if r.cols() != p.dim() {
        return Err(Error::dim("gauss_transform: width differs"));
    }
    let scales: Vec<f64> = p.log_scale.iter().map(|v| v.exp()).collect();
    let mut z = DenseMatrix::zeros(r.rows(), r.cols());
    for i in 0..r.rows() {
        for j in 0..r.cols() {
            z.set(i, j, p.mu[j] + scales[j] * r.get(i, j));
        }
    }
    Ok(z)
}

/// Draws `m` points; returns both the samples and the standard-normal noise
/// so gradients can replay the same draw.
pub fn gauss_sample<R: Rng>(
    p: &GaussSamplerParams,
    m: usize,
    rng: &mut R,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let d = p.dim();
    let mut r = DenseMatrix::zeros(m, d);
    for i in 0..m {
        for j in 0..d {
            r.set(i, j, rng.sample::<f64, _>(StandardNormal));
        }
    }
    let z = gauss_transform(p, &r)?;
    Ok((z, r))
}

/// One Adam step of the sampler parameters from the feedback-loss gradient
/// with respect to the sampled locations, chained through the
/// reparameterization map that produced them.
pub fn gauss_update(
    p: &GaussSamplerParams,
    d_zu: &DenseMatrix,
    r: &DenseMatrix,
    lr: f64,
    adam: &mut AdamState,
) -> Result<GaussSamplerParams> {
    let d = p.dim();
    if d_zu.cols() != d || r.cols() != d || d_zu.rows() != r.rows() {
        return Err(Error::dim("gauss_update: shapes differ"));
    }
    let mut grads = vec![0.0; 2 * d];
    for i in 0..d_zu.rows() {
        for j in 0..d {
            let g = d_zu.get(i, j);
            grads[j] += g;
            grads[d + j] += g * r.get(i, j) * p.log_scale[j].exp();
        }
    }
    let mut params: Vec<f64> = p.mu.iter().chain(&p.log_scale).cloned().collect();
    adam.step(&mut params, &grads, lr)?;
    GaussSamplerParams::new(params[..d].to_vec(), params[d..].to_vec())
}

/// Uniform samples inside the box.
pub fn random_sample<R: Rng>(bounds: &BoundBox, m: usize, rng: &mut R) -> DenseMatrix {
    let d = bounds.dim();
    let mut z = DenseMatrix::zeros(m, d);
    for i in 0..m {
        for j in 0..d {
            let (lo, hi) = (bounds.lo()[j], bounds.hi()[j]);
            z.set(i, j, lo + (hi - lo) * rng.random::<f64>());
        }
    }
    z
}

/// Random-walk Metropolis-Hastings chain state.
#[derive(Clone, Debug)]
pub struct McmcChain {
    pub current: Vec<f64>,
    pub step_scale: f64,
    pub accepted: u64,
    pub proposed: u64,
}

const MCMC_ADAPT_WINDOW: usize = 50;
const MCMC_TARGET_LOW: f64 = 0.30;
const MCMC_TARGET_HIGH: f64 = 0.45;

impl McmcChain {
    pub fn new(start: Vec<f64>, step_scale: f64) -> Self {
        Self {
            current: start,
            step_scale,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Restarts the walker at `start`, keeping the adapted step scale.
    pub fn restart(&mut self, start: Vec<f64>) {
        self.current = start;
        self.accepted = 0;
        self.proposed = 0;
    }
}

/// Draws `n` latent points whose teacher-predicted means follow the fitted
/// GEV distribution, by random-walk Metropolis-Hastings on the unnormalized
/// log target `gev_logpdf(p, teacher_mean(z))`.
///
/// The step scale adapts toward a 30-45% acceptance rate during burn-in; one
/// point is recorded every `thin` post-burn-in proposals. Proposals whose
/// target is `-inf` are never accepted, and a burn-in with zero acceptances
/// signals [`Error::ChainStuck`].
pub fn gev_mcmc_sample<R: Rng>(
    p: &GevParams,
    teacher: &TeacherNet,
    chain: &mut McmcChain,
    burn_in: usize,
    n: usize,
    thin: usize,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let d = teacher.input_dim();
    if chain.current.len() != d {
        return Err(Error::dim("mcmc chain dimension differs from teacher"));
    }
    let thin = thin.max(1);
    let target = |z: &[f64]| gev_logpdf(p, teacher.forward_row(z).0);

    let mut cur_t = target(&chain.current);
    let propose_step = |chain: &mut McmcChain, cur_t: &mut f64, rng: &mut R| -> bool {
        let mut cand = chain.current.clone();
        for c in cand.iter_mut() {
            *c += chain.step_scale * rng.sample::<f64, _>(StandardNormal);
        }
        let cand_t = target(&cand);
        chain.proposed += 1;
        let accept = if cand_t == f64::NEG_INFINITY {
            false
        } else if *cur_t == f64::NEG_INFINITY {
            true
        } else {
            let log_ratio = cand_t - *cur_t;
            log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
        };
        if accept {
            chain.current = cand;
            *cur_t = cand_t;
            chain.accepted += 1;
        }
        accept
    };

    if burn_in > 0 {
        let mut burn_accepts = 0usize;
        let mut window_accepts = 0usize;
        let mut window_count = 0usize;
        for _ in 0..burn_in {
            if propose_step(chain, &mut cur_t, rng) {
                burn_accepts += 1;
                window_accepts += 1;
            }
            window_count += 1;
            if window_count == MCMC_ADAPT_WINDOW {
                let rate = window_accepts as f64 / window_count as f64;
                if rate < MCMC_TARGET_LOW {
                    chain.step_scale *= 0.7;
                } else if rate > MCMC_TARGET_HIGH {
                    chain.step_scale *= 1.4;
                }
                chain.step_scale = chain.step_scale.clamp(1e-6, 1e3);
                window_accepts = 0;
                window_count = 0;
            }
        }
        if burn_accepts == 0 {
            return Err(Error::ChainStuck);
        }
    }

    let mut out = DenseMatrix::zeros(n, d);
    for i in 0..n {
        for _ in 0..thin {
            propose_step(chain, &mut cur_t, rng);
        }
        for j in 0..d {
            out.set(i, j, chain.current[j]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Inverse-CDF sampler used as the reference oracle.
    fn gev_inverse_cdf(p: &GevParams, u: f64) -> f64 {
        if p.xi.abs() < 1e-12 {
            p.a - p.b * (-u.ln()).ln()
        } else {
            p.a + p.b * ((-u.ln()).powf(-p.xi) - 1.0) / p.xi
        }
    }

    fn gev_cdf(p: &GevParams, y: f64) -> f64 {
        let ybar = (y - p.a) / p.b;
        if p.xi.abs() < 1e-12 {
            (-(-ybar).exp()).exp()
        } else {
            let u = 1.0 + p.xi * ybar;
            if u <= 0.0 {
                if p.xi > 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                (-u.powf(-1.0 / p.xi)).exp()
            }
        }
    }

    /// Teacher whose mean head is the 1-d identity and whose variance head
    /// is constant.
    fn identity_teacher() -> TeacherNet {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = TeacherNet::init(1, 2, &mut rng);
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let dims = net.layer_dims();
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let p = net.params_mut();
            if l == 0 {
                p[off] = 1.0;
                p[off + 1] = -1.0;
            } else if l + 1 < dims.len() {
                for o in 0..fan_out {
                    p[off + o * fan_in + o] = 1.0;
                }
            } else {
                p[off] = 1.0;
                p[off + 1] = -1.0;
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    fn constant_teacher(value: f64) -> TeacherNet {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = TeacherNet::init(1, 2, &mut rng);
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        // bias of the mean head in the output layer
        let n = net.n_params();
        net.params_mut()[n - 2] = value;
        net
    }

    #[test]
    fn logpdf_reference_values() {
        let p = GevParams::new(0.0, 1.0, 0.0).unwrap();
        assert!((gev_logpdf(&p, 0.0) - (-1.0)).abs() < 1e-14);

        let p = GevParams::new(0.0, 1.0, 0.5).unwrap();
        assert!((gev_logpdf(&p, 0.0) - (-1.0)).abs() < 1e-14);

        let p = GevParams::new(0.0, 1.0, -0.5).unwrap();
        // upper support bound is a + b/|ξ| = 2
        assert_eq!(gev_logpdf(&p, 2.5), f64::NEG_INFINITY);
    }

    #[test]
    fn logpdf_integrates_to_one() {
        let cases = [
            (GevParams::new(0.0, 1.0, 0.0).unwrap(), -12.0, 60.0),
            (GevParams::new(0.0, 1.0, 0.3).unwrap(), -1.0 / 0.3 + 1e-9, 2000.0),
            (GevParams::new(0.0, 1.0, -0.3).unwrap(), -15.0, 1.0 / 0.3 - 1e-9),
        ];
        for (p, lo, hi) in cases {
            let steps = 400_000;
            let h = (hi - lo) / steps as f64;
            let mut sum = 0.0;
            for i in 0..=steps {
                let y = lo + i as f64 * h;
                let f = gev_logpdf(&p, y).exp();
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                sum += w * f;
            }
            let integral = sum * h / 3.0;
            assert!(
                (integral - 1.0).abs() < 1e-3,
                "xi={}: integral {integral}",
                p.xi
            );
        }
    }

    #[test]
    fn logpdf_grad_matches_finite_differences() {
        for (seed, xi) in [(1u64, 0.3), (2, -0.2), (3, 0.0)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = GevParams::new(0.5, 1.5, xi).unwrap();
            for _ in 0..10 {
                let y = gev_inverse_cdf(&p, rng.random_range(0.02..0.98));
                let g = gev_logpdf_grad(&p, y).unwrap();
                let f = |q: &[f64]| {
                    gev_logpdf(
                        &GevParams {
                            a: q[0],
                            b: q[1].exp(),
                            xi: q[2],
                        },
                        y,
                    )
                };
                let fd = finite_diff_grad(f, &[p.a, p.b.ln(), p.xi], 1e-6).unwrap();
                for i in 0..3 {
                    let denom = g[i].abs().max(1e-4);
                    assert!(
                        (g[i] - fd[i]).abs() / denom < 1e-4,
                        "xi={xi} param {i}: {} vs {}",
                        g[i],
                        fd[i]
                    );
                }
            }
        }
    }

    #[test]
    fn fit_zero_steps_returns_init() {
        let init = GevParams::new(0.3, 2.0, 0.2).unwrap();
        let out = gev_fit(&[1.0, 2.0, 3.0], init, 0, 0.01).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn fit_rejects_identical_labels() {
        let init = GevParams::new(0.0, 1.0, 0.1).unwrap();
        assert!(matches!(
            gev_fit(&[2.0, 2.0, 2.0, 2.0], init, 10, 0.01),
            Err(Error::DegenerateInput { .. })
        ));
    }

    #[test]
    fn fit_recovers_parameters_from_oracle_samples() {
        let truth = GevParams::new(1.0, 2.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let labels: Vec<f64> = (0..2000)
            .map(|_| gev_inverse_cdf(&truth, rng.random::<f64>()))
            .collect();
        let mean = labels.iter().sum::<f64>() / labels.len() as f64;
        let std = (labels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / labels.len() as f64)
            .sqrt();
        let init = GevParams::new(
            mean - 0.45 * std,
            std * 6.0_f64.sqrt() / std::f64::consts::PI,
            0.1,
        )
        .unwrap();
        let fitted = gev_fit(&labels, init, 600, 0.01).unwrap();
        assert!((fitted.a - truth.a).abs() < 0.2, "a = {}", fitted.a);
        assert!((fitted.b - truth.b).abs() < 0.2, "b = {}", fitted.b);
        assert!((fitted.xi - truth.xi).abs() < 0.15, "xi = {}", fitted.xi);
    }

    #[test]
    fn fit_never_increases_nll() {
        let truth = GevParams::new(0.0, 1.0, -0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let labels: Vec<f64> = (0..200)
            .map(|_| gev_inverse_cdf(&truth, rng.random::<f64>()))
            .collect();
        let init = GevParams::new(0.5, 2.0, 0.3).unwrap();
        let projected = project_support(init, &labels);
        let fitted = gev_fit(&labels, init, 150, 0.02).unwrap();
        assert!(gev_nll(&fitted, &labels) <= gev_nll(&projected, &labels) + 1e-9);
    }

    #[test]
    fn mcmc_flat_target_accepts_everything() {
        let teacher = constant_teacher(0.5);
        let p = GevParams::new(0.0, 1.0, 0.0).unwrap();
        let mut chain = McmcChain::new(vec![0.0], 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        gev_mcmc_sample(&p, &teacher, &mut chain, 0, 500, 1, &mut rng).unwrap();
        assert_eq!(chain.accepted, chain.proposed);
        assert!((chain.acceptance_rate() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mcmc_flat_target_increments_are_symmetric() {
        let teacher = constant_teacher(0.0);
        let p = GevParams::new(0.0, 1.0, 0.0).unwrap();
        let step = 0.3;
        let mut chain = McmcChain::new(vec![0.0], step);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 4000;
        let samples = gev_mcmc_sample(&p, &teacher, &mut chain, 0, n, 1, &mut rng).unwrap();
        let mut increments = Vec::with_capacity(n - 1);
        for i in 1..n {
            increments.push(samples.get(i, 0) - samples.get(i - 1, 0));
        }
        let mean = increments.iter().sum::<f64>() / increments.len() as f64;
        let se = step / (increments.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean increment {mean}, se {se}");
    }

    #[test]
    fn mcmc_matches_gev_by_ks_test() {
        let teacher = identity_teacher();
        let p = GevParams::new(0.0, 1.0, 0.0).unwrap();
        let mut chain = McmcChain::new(vec![0.5], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2000;
        let samples = gev_mcmc_sample(&p, &teacher, &mut chain, 500, n, 10, &mut rng).unwrap();
        let mut xs: Vec<f64> = (0..n).map(|i| samples.get(i, 0)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0_f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = gev_cdf(&p, x);
            let hi = (i + 1) as f64 / n as f64 - f;
            let lo = f - i as f64 / n as f64;
            d = d.max(hi.max(lo));
        }
        let crit = 1.6276 / (n as f64).sqrt(); // α = 0.01
        assert!(d < crit, "KS statistic {d} >= {crit}");
        let rate = chain.acceptance_rate();
        assert!(rate > 0.15 && rate < 0.7, "acceptance rate {rate}");
    }

    #[test]
    fn mcmc_signals_stuck_chain() {
        // support of ξ=-0.5 ends at a + b/|ξ| = 2; a constant teacher mean of
        // 10 puts the whole latent space outside it
        let teacher = constant_teacher(10.0);
        let p = GevParams::new(0.0, 1.0, -0.5).unwrap();
        let mut chain = McmcChain::new(vec![0.0], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(matches!(
            gev_mcmc_sample(&p, &teacher, &mut chain, 200, 10, 1, &mut rng),
            Err(Error::ChainStuck)
        ));
    }

    #[test]
    fn gauss_transform_at_zero_noise_returns_mu() {
        let p = GaussSamplerParams::new(vec![1.0, -2.0], vec![0.3, -0.1]).unwrap();
        let r = DenseMatrix::zeros(3, 2);
        let z = gauss_transform(&p, &r).unwrap();
        for i in 0..3 {
            assert_eq!(z.row(i), &[1.0, -2.0]);
        }
    }

    #[test]
    fn gauss_sample_statistics_and_determinism() {
        let p = GaussSamplerParams::new(vec![0.5, -0.5], vec![0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (z, _) = gauss_sample(&p, 100_000, &mut rng).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..z.rows()).map(|i| z.get(i, j)).sum::<f64>() / z.rows() as f64;
            let var: f64 = (0..z.rows())
                .map(|i| (z.get(i, j) - mean) * (z.get(i, j) - mean))
                .sum::<f64>()
                / z.rows() as f64;
            let std = var.sqrt();
            assert!(std > 0.99 && std < 1.01, "std {std}");
        }

        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        let (a, _) = gauss_sample(&p, 16, &mut r1).unwrap();
        let (b, _) = gauss_sample(&p, 16, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gauss_update_zero_grads_is_identity() {
        let p = GaussSamplerParams::new(vec![0.1, 0.2], vec![0.0, -0.3]).unwrap();
        let mut adam = AdamState::new(4);
        let d_zu = DenseMatrix::zeros(5, 2);
        let r = DenseMatrix::zeros(5, 2);
        let out = gauss_update(&p, &d_zu, &r, 0.05, &mut adam).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn gauss_update_descends_toward_target_region() {
        // persistent gradient pointing left should pull mu down
        let p0 = GaussSamplerParams::new(vec![1.0], vec![0.0]).unwrap();
        let mut p = p0.clone();
        let mut adam = AdamState::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (_, r) = gauss_sample(&p, 8, &mut rng).unwrap();
            let d_zu = DenseMatrix::new(8, 1, vec![1.0; 8]).unwrap();
            p = gauss_update(&p, &d_zu, &r, 0.05, &mut adam).unwrap();
        }
        assert!(p.mu[0] < p0.mu[0]);
    }

    #[test]
    fn gauss_update_gradient_matches_finite_differences() {
        use crate::gp::{GpHyper, LabeledSet};
        use crate::student::{feedback_backward, feedback_loss, PseudoSet};

        let h = GpHyper {
            log_outputscale: 0.1,
            log_lengthscale: -0.1,
            log_noise: (0.2_f64).ln(),
            mean_const: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = 2;
        let m = 4;
        let p = GaussSamplerParams::new(vec![0.3, -0.2], vec![0.1, -0.2]).unwrap();
        let (_, r) = gauss_sample(&p, m, &mut rng).unwrap();
        let y_hat: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let var_t: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..0.5)).collect();
        let val = LabeledSet::new(
            DenseMatrix::new(
                3,
                d,
                (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        // composite loss at fixed noise r as a function of (mu, log_scale)
        let loss_of = |q: &[f64]| {
            let ps = GaussSamplerParams::new(q[..d].to_vec(), q[d..].to_vec()).unwrap();
            let z = gauss_transform(&ps, &r).unwrap();
            let pseudo = PseudoSet::new(z, y_hat.clone(), var_t.clone()).unwrap();
            feedback_loss(&h, &pseudo, &val).unwrap()
        };

        let z = gauss_transform(&p, &r).unwrap();
        let pseudo = PseudoSet::new(z, y_hat.clone(), var_t.clone()).unwrap();
        let fg = feedback_backward(&h, &pseudo, &val).unwrap();
        let mut analytic = vec![0.0; 2 * d];
        for i in 0..m {
            for j in 0..d {
                let g = fg.d_zu.get(i, j);
                analytic[j] += g;
                analytic[d + j] += g * r.get(i, j) * p.log_scale[j].exp();
            }
        }

        let flat: Vec<f64> = p.mu.iter().chain(&p.log_scale).cloned().collect();
        let fd = finite_diff_grad(loss_of, &flat, 1e-5).unwrap();
        for i in 0..2 * d {
            let denom = analytic[i].abs().max(1e-4);
            assert!(
                (analytic[i] - fd[i]).abs() / denom < 1e-4,
                "theta_u {i}: {} vs {}",
                analytic[i],
                fd[i]
            );
        }
    }

    #[test]
    fn random_sample_respects_box() {
        let bounds = BoundBox::new(vec![-1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let z = random_sample(&bounds, 200, &mut rng);
        for i in 0..200 {
            assert!(z.get(i, 0) >= -1.0 && z.get(i, 0) <= 1.0);
            assert_eq!(z.get(i, 1), 2.0); // degenerate dimension collapses
        }
    }

    #[test]
    fn random_sample_mean_near_center() {
        let bounds = BoundBox::new(vec![-2.0], vec![4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let z = random_sample(&bounds, 100_000, &mut rng);
        let mean: f64 = (0..z.rows()).map(|i| z.get(i, 0)).sum::<f64>() / z.rows() as f64;
        // within 1% of the box span around the center
        assert!((mean - 1.0).abs() < 0.06, "mean {mean}");
    }
}
