//! Expected improvement over the data-query GP and its maximization inside a
//! bound box by multi-start projected quasi-Newton ascent.

use crate::error::{Error, Result};
use crate::gp::{FittedGp, GpHyper, GpPosterior, LabeledSet};
use crate::par;
use rand::Rng;
use std::collections::VecDeque;

const SQRT_2PI: f64 = 2.5066282746310002;
/// Below this posterior standard deviation EI collapses to its deterministic
/// limit `max(μ - incumbent, 0)`.
const EI_SIGMA_FLOOR: f64 = 1e-12;

const LBFGS_MEMORY: usize = 5;
const GRAD_NORM_STOP: f64 = 1e-6;

#[inline]
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

#[inline]
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Axis-aligned search region.
#[derive(Clone, Debug)]
pub struct BoundBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoundBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::dim("bound box: lo/hi lengths differ or empty"));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "bound box",
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::Config("bound box: lo > hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Hypercube `[lo, hi]^d`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    #[inline]
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

/// Expected improvement of each posterior point over the incumbent
/// (maximization convention): `σ·(γΦ(γ) + φ(γ))` with `γ = (μ - f*)/σ`.
pub fn expected_improvement(post: &GpPosterior, incumbent: f64) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.variance)
        .map(|(&mu, &var)| ei_scalar(mu, var, incumbent))
        .collect()
}

/// EI of a single `(mean, variance)` pair.
pub fn ei_scalar(mean: f64, variance: f64, incumbent: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    if sigma < EI_SIGMA_FLOOR {
        return (mean - incumbent).max(0.0);
    }
    let gamma = (mean - incumbent) / sigma;
    (sigma * (gamma * normal_cdf(gamma) + normal_pdf(gamma))).max(0.0)
}

/// EI at `x` together with its gradient, chained through the GP posterior
/// mean/variance derivatives.
pub fn ei_with_grad(gp: &FittedGp, x: &[f64], incumbent: f64) -> Result<(f64, Vec<f64>)> {
    let (mean, var, dmean, dvar) = gp.predict_point_grad(x)?;
    let sigma = var.sqrt();
    if sigma < EI_SIGMA_FLOOR {
        let ei = (mean - incumbent).max(0.0);
        let grad = if mean > incumbent {
            dmean
        } else {
            vec![0.0; x.len()]
        };
        return Ok((ei, grad));
    }
    let gamma = (mean - incumbent) / sigma;
    let cdf = normal_cdf(gamma);
    let pdf = normal_pdf(gamma);
    let ei = (sigma * (gamma * cdf + pdf)).max(0.0);
    // dEI/dμ = Φ(γ), dEI/dσ = φ(γ); dσ/dx = dσ²/dx / (2σ)
    let grad = dmean
        .iter()
        .zip(&dvar)
        .map(|(&dm, &dv)| cdf * dm + pdf * dv / (2.0 * sigma))
        .collect();
    Ok((ei, grad))
}

/// Gradient entries pointing out of the box at an active bound are zeroed.
fn projected_grad_norm(x: &[f64], g: &[f64], bounds: &BoundBox) -> f64 {
    let mut n2 = 0.0;
    for i in 0..x.len() {
        let gi = g[i];
        let blocked = (x[i] <= bounds.lo()[i] && gi > 0.0)
            || (x[i] >= bounds.hi()[i] && gi < 0.0);
        if !blocked {
            n2 += gi * gi;
        }
    }
    n2.sqrt()
}

/// Limited-memory quasi-Newton ascent of EI from one start, iterates
/// projected into the box. Returns the best point seen and its EI, or `None`
/// when the objective is non-finite at the start.
fn lbfgs_ascent(
    gp: &FittedGp,
    incumbent: f64,
    bounds: &BoundBox,
    start: Vec<f64>,
    max_iters: usize,
) -> Option<(Vec<f64>, f64)> {
    let d = start.len();
    let mut x = start;
    bounds.project(&mut x);
    let (ei0, g0) = ei_with_grad(gp, &x, incumbent).ok()?;
    if !ei0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // minimize f = -EI
    let mut f = -ei0;
    let mut g: Vec<f64> = g0.iter().map(|v| -v).collect();
    let mut best_x = x.clone();
    let mut best_f = f;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for _ in 0..max_iters {
        if projected_grad_norm(&x, &g, bounds) < GRAD_NORM_STOP {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, yv, rho) in mem.iter().rev() {
            let a = rho * s.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..d {
                q[i] -= a * yv[i];
            }
            alphas.push(a);
        }
        if let Some((s, yv, _)) = mem.back() {
            let sy: f64 = s.iter().zip(yv).map(|(a, b)| a * b).sum();
            let yy: f64 = yv.iter().map(|v| v * v).sum();
            if yy > 0.0 {
                let scale = sy / yy;
                q.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for ((s, yv, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * yv.iter().zip(&q).map(|(u, v)| u * v).sum::<f64>();
            for i in 0..d {
                q[i] += (a - b) * s[i];
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let descent: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(descent < 0.0) {
            mem.clear();
            dir = g.iter().map(|v| -v).collect();
        }

        // backtracking line search on the projected path
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut t = if mem.is_empty() {
            (1.0 / gnorm.max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            bounds.project(&mut cand);
            let dx: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let gdx: f64 = g.iter().zip(&dx).map(|(a, b)| a * b).sum();
            if dx.iter().all(|v| *v == 0.0) {
                break;
            }
            if let Ok((ei_c, g_c)) = ei_with_grad(gp, &cand, incumbent) {
                let f_c = -ei_c;
                if f_c.is_finite() && f_c <= f + 1e-4 * gdx.min(0.0) && f_c < f {
                    let s = dx;
                    // y = g_new - g_old in the minimization convention
                    let yv: Vec<f64> = g_c.iter().zip(&g).map(|(gc, go)| -gc - go).collect();
                    let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
                    if sy > 1e-12 {
                        if mem.len() == LBFGS_MEMORY {
                            mem.pop_front();
                        }
                        mem.push_back((s, yv, 1.0 / sy));
                    }
                    x = cand;
                    f = f_c;
                    g = g_c.iter().map(|v| -v).collect();
                    if f < best_f {
                        best_f = f;
                        best_x = x.clone();
                    }
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some((best_x, -best_f))
}

/// Maximizes EI over the box with `restarts` independent quasi-Newton runs
/// started from uniform points; the best candidate wins, ties broken by
/// restart order. Start points are drawn from `rng` up front so the restarts
/// themselves can run in parallel without touching the seed stream.
pub fn maximize_acquisition<R: Rng>(
    h: &GpHyper,
    data: &LabeledSet,
    noise: Option<&[f64]>,
    incumbent: f64,
    bounds: &BoundBox,
    restarts: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if restarts == 0 {
        return Err(Error::Config("maximize_acquisition: restarts must be >= 1".into()));
    }
    if bounds.dim() != data.dim() {
        return Err(Error::dim("maximize_acquisition: box/data widths differ"));
    }
    let gp = FittedGp::fit(h, data, noise)?;
    let starts: Vec<Vec<f64>> = (0..restarts).map(|_| bounds.sample_uniform(rng)).collect();
    let results = par::map_items(starts, |s| lbfgs_ascent(&gp, incumbent, bounds, s, max_iters));

    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in results.into_iter().flatten() {
        if !r.1.is_finite() {
            continue;
        }
        match &best {
            Some((_, ei)) if r.1 <= *ei => {}
            _ => best = Some(r),
        }
    }
    best.map(|(x, _)| x).ok_or(Error::AcquisitionFailed)
}
