//! Alternating one-step training of the teacher, the student and the
//! unlabeled-data sampler, plus warm-up and the assembly of the augmented
//! training set for the data-query GP.
//!
//! Each inner step: draw unlabeled points, pseudo-label them with the
//! teacher, take one student step on the unlabeled NLL, then one teacher
//! step on `labeled NLL + λ·feedback` with the student frozen, and finally
//! (for the learned Gaussian sampler) one sampler step on the feedback loss.

use crate::acquisition::BoundBox;
use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::gp::{GpHyper, LabeledSet};
use crate::numerics::DenseMatrix;
use crate::samplers::{
    gauss_sample, gauss_update, gev_fit, gev_mcmc_sample, random_sample, GaussSamplerParams,
    GevParams, McmcChain,
};
use crate::student::{
    feedback_backward, feedback_loss, student_fit_step, student_unlabeled_nll, PseudoSet,
};
use crate::teacher::{
    labeled_loss_grads, teacher_adam_step, teacher_forward, teacher_labeled_loss, TeacherNet,
};
use rand::Rng;

/// Which unlabeled-data sampler drives the teacher-student loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Gev,
    Gaussian,
    Random,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gev" => Ok(SamplerKind::Gev),
            "gaussian" => Ok(SamplerKind::Gaussian),
            "random" => Ok(SamplerKind::Random),
            other => Err(Error::Config(format!("unknown sampler '{other}'"))),
        }
    }
}

/// Teacher-student loop settings.
#[derive(Clone, Debug)]
pub struct TsConfig {
    /// Inner training steps per BO iteration (L).
    pub steps_per_iter: usize,
    /// Alternating steps before the first query.
    pub warmup_steps: usize,
    /// Feedback weight λ.
    pub lambda: f64,
    /// Unlabeled points drawn per inner step (M).
    pub n_unlabeled: usize,
    /// Validation points: the K highest-labeled examples.
    pub k_validation: usize,
    pub lr_teacher: f64,
    pub lr_student: f64,
    pub lr_sampler: f64,
    pub sampler_kind: SamplerKind,
    /// Propagate teacher variances into the student covariance.
    pub uncertainty_aware: bool,
    /// Include λ·feedback in the teacher update.
    pub feedback_enabled: bool,
    /// Mini-batch size for the teacher's labeled loss.
    pub batch_size: usize,
    /// Hidden width of the teacher MLP.
    pub hidden_width: usize,
    /// Restrict warm-up to supervised teacher training.
    pub warmup_teacher_only: bool,
    pub mcmc_burn_in: usize,
    pub mcmc_thin: usize,
    pub mcmc_step_scale: f64,
    pub gev_fit_steps: usize,
    pub gev_lr: f64,
}

impl Default for TsConfig {
    fn default() -> Self {
        Self {
            steps_per_iter: 20,
            warmup_steps: 2000,
            lambda: 0.1,
            n_unlabeled: 100,
            k_validation: 10,
            lr_teacher: 1e-3,
            lr_student: 1e-2,
            lr_sampler: 1e-2,
            sampler_kind: SamplerKind::Gaussian,
            uncertainty_aware: true,
            feedback_enabled: true,
            batch_size: 32,
            hidden_width: 64,
            warmup_teacher_only: false,
            mcmc_burn_in: 500,
            mcmc_thin: 1,
            mcmc_step_scale: 0.5,
            gev_fit_steps: 200,
            gev_lr: 0.01,
        }
    }
}

/// GEV sampler state: the current fit (absent after a degenerate refresh)
/// and the persistent random-walk chain.
#[derive(Clone, Debug)]
pub struct GevState {
    pub fit: Option<GevParams>,
    pub chain: McmcChain,
}

#[derive(Clone, Debug)]
pub struct GaussianState {
    pub params: GaussSamplerParams,
    pub adam: AdamState,
}

#[derive(Clone, Debug)]
pub enum SamplerState {
    Gev(GevState),
    Gaussian(GaussianState),
    Random,
}

/// Everything the teacher-student loop threads between BO iterations.
#[derive(Clone, Debug)]
pub struct TsState {
    pub teacher: TeacherNet,
    pub teacher_adam: AdamState,
    pub student_hyper: GpHyper,
    pub student_adam: AdamState,
    pub sampler: SamplerState,
}

/// Loss values recorded at the end of a training round.
#[derive(Clone, Copy, Debug)]
pub struct TsRoundMetrics {
    pub teacher_nll: f64,
    pub feedback_loss: f64,
    pub unlabeled_nll: f64,
}

/// The `min(k, N)` examples with the largest labels, ties broken by earliest
/// insertion order.
pub fn select_validation(data: &LabeledSet, k: usize) -> Result<LabeledSet> {
    if k == 0 {
        return Err(Error::Config("validation size must be >= 1".into()));
    }
    Ok(data.select(&top_k_indices(data.y(), k)))
}

fn top_k_indices(y: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(k.min(y.len()));
    idx
}

fn best_index(y: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..y.len() {
        if y[i] > y[best] {
            best = i;
        }
    }
    best
}

fn mean_of_top_k(data: &LabeledSet, k: usize) -> Vec<f64> {
    let idx = top_k_indices(data.y(), k.max(1));
    let d = data.dim();
    let mut mu = vec![0.0; d];
    for &i in &idx {
        for (m, v) in mu.iter_mut().zip(data.z().row(i)) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= idx.len() as f64);
    mu
}

/// Lower bound on the per-dimension spread of the annealed Gaussian cloud.
const SAMPLER_SCALE_FLOOR: f64 = 0.05;

/// Per-dimension mean and standard deviation of the top-K latent points.
/// The cloud tracks the frontier: wide while good points are scattered,
/// tight once they cluster.
fn moments_of_top_k(data: &LabeledSet, k: usize) -> (Vec<f64>, Vec<f64>) {
    let idx = top_k_indices(data.y(), k.max(1));
    let d = data.dim();
    let n = idx.len() as f64;
    let mut mu = vec![0.0; d];
    for &i in &idx {
        for (m, v) in mu.iter_mut().zip(data.z().row(i)) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut sd = vec![0.0; d];
    for &i in &idx {
        for (s, (v, m)) in sd.iter_mut().zip(data.z().row(i).iter().zip(&mu)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in sd.iter_mut() {
        *s = (*s / n).sqrt().max(SAMPLER_SCALE_FLOOR);
    }
    (mu, sd)
}

/// Fresh teacher-student state for a labeled dataset.
pub fn init_ts_state<R: Rng>(data: &LabeledSet, cfg: &TsConfig, rng: &mut R) -> TsState {
    let d = data.dim();
    let teacher = TeacherNet::init(d, cfg.hidden_width, rng);
    let n_params = teacher.n_params();

    // student prior scaled to the label spread so early NLLs are sane
    let n = data.len() as f64;
    let mean = data.y().iter().sum::<f64>() / n;
    let var = data.y().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s0 = var.max(1.0);
    let student_hyper = GpHyper {
        log_outputscale: s0.ln(),
        log_lengthscale: 0.0,
        log_noise: (0.01 * s0).ln(),
        mean_const: 0.0,
    };

    let sampler = match cfg.sampler_kind {
        SamplerKind::Gaussian => SamplerState::Gaussian(GaussianState {
            params: GaussSamplerParams::new(
                mean_of_top_k(data, cfg.k_validation),
                vec![0.0; d],
            )
            .expect("finite init"),
            adam: AdamState::new(2 * d),
        }),
        SamplerKind::Gev => SamplerState::Gev(GevState {
            fit: None,
            chain: McmcChain::new(
                data.z().row(best_index(data.y())).to_vec(),
                cfg.mcmc_step_scale,
            ),
        }),
        SamplerKind::Random => SamplerState::Random,
    };

    TsState {
        teacher,
        teacher_adam: AdamState::new(n_params),
        student_hyper,
        student_adam: AdamState::new(3),
        sampler,
    }
}

/// Refreshes per-iteration sampler state: refit the GEV on the extreme
/// labels and restart the chain at the best labeled point; re-center the
/// Gaussian sampler on the current top-K region, keeping its learned spread.
fn refresh_sampler(state: &mut TsState, data: &LabeledSet, cfg: &TsConfig) -> Result<()> {
    if let SamplerState::Gaussian(gs) = &mut state.sampler {
        let (mu, sd) = moments_of_top_k(data, cfg.k_validation);
        gs.params =
            GaussSamplerParams::new(mu, sd.into_iter().map(|s| s.ln()).collect())?;
    }
    if let SamplerState::Gev(gs) = &mut state.sampler {
        let n_extreme = ((data.len() as f64 * 0.2).ceil() as usize)
            .max(10)
            .min(data.len());
        let idx = top_k_indices(data.y(), n_extreme);
        let labels: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();

        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let std = (labels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let init = GevParams {
            a: mean - 0.45 * std.max(1e-6),
            b: (std * 6.0_f64.sqrt() / std::f64::consts::PI).max(1e-6),
            xi: 0.1,
        };
        gs.fit = match gev_fit(&labels, init, cfg.gev_fit_steps, cfg.gev_lr) {
            Ok(p) => Some(p),
            Err(Error::DegenerateInput { .. }) => None,
            Err(e) => return Err(e),
        };
        gs.chain.restart(data.z().row(best_index(data.y())).to_vec());
    }
    Ok(())
}

/// Gaussian draw centered on the best labeled region, used when the GEV
/// sampler cannot produce points this round.
fn fallback_draw<R: Rng>(
    data: &LabeledSet,
    cfg: &TsConfig,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let params = GaussSamplerParams::new(
        mean_of_top_k(data, cfg.k_validation),
        vec![0.0; data.dim()],
    )?;
    Ok(gauss_sample(&params, cfg.n_unlabeled, rng)?.0)
}

/// Keeps the learned sampler inside the search region: its mean clamped to
/// the box, its per-dimension spread no wider than the box half-width.
/// EI never queries outside the box, so pseudo data out there would only
/// feed the query GP teacher extrapolations it cannot act on.
fn constrain_sampler_to_box(p: GaussSamplerParams, bounds: &BoundBox) -> GaussSamplerParams {
    let mu: Vec<f64> = p
        .mu
        .iter()
        .zip(bounds.lo().iter().zip(bounds.hi()))
        .map(|(m, (l, h))| m.clamp(*l, *h))
        .collect();
    let log_scale: Vec<f64> = p
        .log_scale
        .iter()
        .zip(bounds.lo().iter().zip(bounds.hi()))
        .map(|(s, (l, h))| {
            let half = (0.5 * (h - l)).max(1e-4);
            s.min(half.ln())
        })
        .collect();
    GaussSamplerParams::new(mu, log_scale).expect("clamped params are finite")
}

/// Projects draws that carry no reparameterization gradient into the box.
fn project_rows(mut z: DenseMatrix, bounds: &BoundBox) -> DenseMatrix {
    let cols = z.cols();
    for i in 0..z.rows() {
        for j in 0..cols {
            let v = z.get(i, j).clamp(bounds.lo()[j], bounds.hi()[j]);
            z.set(i, j, v);
        }
    }
    z
}

/// Draws the unlabeled batch; for the Gaussian sampler the replayable noise
/// is returned alongside.
fn draw_unlabeled<R: Rng>(
    state: &mut TsState,
    data: &LabeledSet,
    cfg: &TsConfig,
    bounds: &BoundBox,
    first_draw: bool,
    rng: &mut R,
) -> Result<(DenseMatrix, Option<DenseMatrix>)> {
    match &mut state.sampler {
        SamplerState::Random => Ok((random_sample(bounds, cfg.n_unlabeled, rng), None)),
        SamplerState::Gaussian(gs) => {
            let (z, r) = gauss_sample(&gs.params, cfg.n_unlabeled, rng)?;
            Ok((z, Some(r)))
        }
        SamplerState::Gev(gs) => {
            let Some(p) = gs.fit else {
                return Ok((project_rows(fallback_draw(data, cfg, rng)?, bounds), None));
            };
            let burn = if first_draw { cfg.mcmc_burn_in } else { 0 };
            match gev_mcmc_sample(
                &p,
                &state.teacher,
                &mut gs.chain,
                burn,
                cfg.n_unlabeled,
                cfg.mcmc_thin,
                rng,
            ) {
                Ok(z) => Ok((project_rows(z, bounds), None)),
                Err(Error::ChainStuck) => {
                    Ok((project_rows(fallback_draw(data, cfg, rng)?, bounds), None))
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Mini-batch of the labeled data; the full set (in order, without touching
/// the RNG) when it is no bigger than the batch size.
fn minibatch<R: Rng>(data: &LabeledSet, batch_size: usize, rng: &mut R) -> LabeledSet {
    if batch_size == 0 || batch_size >= data.len() {
        return data.clone();
    }
    let idx = rand::seq::index::sample(rng, data.len(), batch_size).into_vec();
    data.select(&idx)
}

/// Teacher batch for the supervised term: a random mini-batch plus the
/// validation examples, so the labeled loss keeps anchoring the teacher in
/// the region the feedback grades.
fn teacher_batch<R: Rng>(
    data: &LabeledSet,
    val: &LabeledSet,
    batch_size: usize,
    rng: &mut R,
) -> Result<LabeledSet> {
    let batch = minibatch(data, batch_size, rng);
    if batch.len() >= data.len() {
        return Ok(batch);
    }
    let z = batch.z().vstack(val.z())?;
    let mut y = batch.y().to_vec();
    y.extend_from_slice(val.y());
    LabeledSet::new(z, y)
}

fn pseudo_from_teacher(
    teacher: &TeacherNet,
    z_u: DenseMatrix,
    uncertainty_aware: bool,
) -> Result<PseudoSet> {
    let pred = teacher_forward(teacher, &z_u)?;
    let var_t = if uncertainty_aware {
        pred.variance
    } else {
        vec![0.0; pred.mean.len()]
    };
    PseudoSet::new(z_u, pred.mean, var_t)
}

/// The student grades pseudo labels around a constant prior mean, realized
/// by centering both pseudo and validation labels on the validation mean.
/// A zero-mean student on raw labels would have to absorb the common offset
/// through a degenerate long-lengthscale fit.
fn centered_for_student(
    pseudo: &PseudoSet,
    val: &LabeledSet,
) -> Result<(PseudoSet, LabeledSet, f64)> {
    let c = val.y().iter().sum::<f64>() / val.len() as f64;
    let centered_pseudo = PseudoSet::new(
        pseudo.z_u().clone(),
        pseudo.y_hat().iter().map(|y| y - c).collect(),
        pseudo.var_t().to_vec(),
    )?;
    let centered_val = LabeledSet::new(
        val.z().clone(),
        val.y().iter().map(|y| y - c).collect(),
    )?;
    Ok((centered_pseudo, centered_val, c))
}

/// Runs `steps` alternating updates. Returns the locations drawn in the last
/// step so the caller can refresh their pseudo labels with the final teacher.
fn run_alternating_steps<R: Rng>(
    state: &mut TsState,
    data: &LabeledSet,
    val: &LabeledSet,
    cfg: &TsConfig,
    bounds: &BoundBox,
    steps: usize,
    rng: &mut R,
) -> Result<Option<DenseMatrix>> {
    let mut last_zu = None;
    for step in 0..steps {
        let (z_u, noise_r) = draw_unlabeled(state, data, cfg, bounds, step == 0, rng)?;
        let pseudo = pseudo_from_teacher(&state.teacher, z_u.clone(), cfg.uncertainty_aware)?;
        let (pseudo_c, val_c, _) = centered_for_student(&pseudo, val)?;

        state.student_hyper = student_fit_step(
            &state.student_hyper,
            &pseudo_c,
            cfg.lr_student,
            &mut state.student_adam,
        )?;

        let use_feedback = cfg.feedback_enabled && cfg.lambda > 0.0;
        let need_fb = use_feedback || matches!(state.sampler, SamplerState::Gaussian(_));
        let fb = if need_fb {
            Some(feedback_backward(&state.student_hyper, &pseudo_c, &val_c)?)
        } else {
            None
        };

        let batch = teacher_batch(data, val, cfg.batch_size, rng)?;
        let (_, mut grads) = labeled_loss_grads(&state.teacher, &batch)?;
        if use_feedback {
            let fb = fb.as_ref().expect("feedback computed above");
            let zero_var;
            let up_var: &[f64] = if cfg.uncertainty_aware {
                &fb.d_vart
            } else {
                zero_var = vec![0.0; fb.d_vart.len()];
                &zero_var
            };
            let (fgrads, _) = crate::teacher::teacher_backward(
                &state.teacher,
                &fb.d_yhat,
                up_var,
                &z_u,
            )?;
            // the regularizer must not drown the supervised signal: cap the
            // weighted feedback term at half the labeled gradient norm
            let lnorm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            let fnorm = fgrads.iter().map(|g| g * g).sum::<f64>().sqrt();
            let mut w = cfg.lambda;
            let cap = 0.5 * lnorm;
            if w * fnorm > cap && fnorm > 0.0 {
                w = cap / fnorm;
            }
            for (g, f) in grads.iter_mut().zip(&fgrads) {
                *g += w * f;
            }
        }
        state.teacher = teacher_adam_step(
            state.teacher.clone(),
            &grads,
            cfg.lr_teacher,
            &mut state.teacher_adam,
        )?;

        if let (SamplerState::Gaussian(gs), Some(fb), Some(r)) =
            (&mut state.sampler, fb.as_ref(), noise_r.as_ref())
        {
            let updated = gauss_update(&gs.params, &fb.d_zu, r, cfg.lr_sampler, &mut gs.adam)?;
            gs.params = constrain_sampler_to_box(updated, bounds);
        }

        last_zu = Some(z_u);
    }
    Ok(last_zu)
}

/// One BO-iteration training round: refresh the sampler, repeat the
/// alternating step `steps_per_iter` times, and emit the final pseudo set
/// with predictions from the updated teacher.
pub fn ts_train_round<R: Rng>(
    mut state: TsState,
    data: &LabeledSet,
    cfg: &TsConfig,
    bounds: &BoundBox,
    rng: &mut R,
) -> Result<(TsState, PseudoSet, TsRoundMetrics)> {
    refresh_sampler(&mut state, data, cfg)?;
    let val = select_validation(data, cfg.k_validation)?;

    let last_zu = run_alternating_steps(
        &mut state,
        data,
        &val,
        cfg,
        bounds,
        cfg.steps_per_iter,
        rng,
    )?;
    let z_u = match last_zu {
        Some(z) => z,
        // a zero-step round still yields a pseudo set from a single draw
        None => draw_unlabeled(&mut state, data, cfg, bounds, true, rng)?.0,
    };
    let pseudo = pseudo_from_teacher(&state.teacher, z_u, cfg.uncertainty_aware)?;

    let (pseudo_c, val_c, _) = centered_for_student(&pseudo, &val)?;
    let metrics = TsRoundMetrics {
        teacher_nll: teacher_labeled_loss(&state.teacher, data)?,
        feedback_loss: feedback_loss(&state.student_hyper, &pseudo_c, &val_c)?,
        unlabeled_nll: student_unlabeled_nll(&state.student_hyper, &pseudo_c)?,
    };
    Ok((state, pseudo, metrics))
}

/// Training before the first query: either the full alternating scheme or,
/// when configured, supervised teacher steps alone.
pub fn warmup<R: Rng>(
    mut state: TsState,
    data: &LabeledSet,
    cfg: &TsConfig,
    bounds: &BoundBox,
    rng: &mut R,
) -> Result<TsState> {
    if cfg.warmup_steps == 0 {
        return Ok(state);
    }
    if cfg.warmup_teacher_only {
        for _ in 0..cfg.warmup_steps {
            let batch = minibatch(data, cfg.batch_size, rng);
            let (_, grads) = labeled_loss_grads(&state.teacher, &batch)?;
            state.teacher = teacher_adam_step(
                state.teacher.clone(),
                &grads,
                cfg.lr_teacher,
                &mut state.teacher_adam,
            )?;
        }
        return Ok(state);
    }
    refresh_sampler(&mut state, data, cfg)?;
    let val = select_validation(data, cfg.k_validation)?;
    run_alternating_steps(&mut state, data, &val, cfg, bounds, cfg.warmup_steps, rng)?;
    Ok(state)
}

/// Concatenates real and pseudo data for the query GP. Real labels carry
/// zero extra noise; pseudo labels carry their teacher variances.
pub fn augment_query_set(
    data: &LabeledSet,
    pseudo: Option<&PseudoSet>,
) -> Result<(LabeledSet, Vec<f64>)> {
    let Some(p) = pseudo else {
        return Ok((data.clone(), vec![0.0; data.len()]));
    };
    if p.z_u().cols() != data.dim() {
        return Err(Error::dim("augment_query_set: widths differ"));
    }
    let z = data.z().vstack(p.z_u())?;
    let mut y = data.y().to_vec();
    y.extend_from_slice(p.y_hat());
    let mut noise = vec![0.0; data.len()];
    noise.extend_from_slice(p.var_t());
    Ok((LabeledSet::new(z, y)?, noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_data(seed: u64, n: usize, d: usize) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        LabeledSet::new(DenseMatrix::new(n, d, z).unwrap(), y).unwrap()
    }

    fn small_cfg(sampler: SamplerKind) -> TsConfig {
        TsConfig {
            steps_per_iter: 5,
            warmup_steps: 0,
            n_unlabeled: 6,
            k_validation: 4,
            batch_size: 8,
            hidden_width: 8,
            sampler_kind: sampler,
            mcmc_burn_in: 50,
            gev_fit_steps: 40,
            ..TsConfig::default()
        }
    }

    #[test]
    fn default_settings_are_the_documented_ones() {
        let cfg = TsConfig::default();
        assert_eq!(cfg.steps_per_iter, 20);
        assert_eq!(cfg.warmup_steps, 2000);
        assert!((cfg.lambda - 0.1).abs() < 1e-15);
        assert_eq!(cfg.n_unlabeled, 100);
        assert_eq!(cfg.k_validation, 10);
        assert!((cfg.lr_student - 1e-2).abs() < 1e-18);
        assert!((cfg.lr_teacher - 1e-3).abs() < 1e-18);
        assert_eq!(cfg.batch_size, 32);
    }

    #[test]
    fn select_validation_picks_top_labels() {
        let data = LabeledSet::new(
            DenseMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            vec![3.0, 1.0, 2.0],
        )
        .unwrap();
        let v = select_validation(&data, 2).unwrap();
        assert_eq!(v.y(), &[3.0, 2.0]);
        assert_eq!(v.z().get(0, 0), 0.0);
        assert_eq!(v.z().get(1, 0), 2.0);

        let all = select_validation(&data, 10).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn select_validation_breaks_ties_by_insertion_order() {
        let data = LabeledSet::new(
            DenseMatrix::from_rows(&[vec![10.0], vec![20.0], vec![30.0]]).unwrap(),
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let v = select_validation(&data, 2).unwrap();
        assert_eq!(v.z().get(0, 0), 10.0);
        assert_eq!(v.z().get(1, 0), 20.0);
    }

    #[test]
    fn zero_step_round_leaves_state_unchanged() {
        let data = toy_data(1, 12, 2);
        let mut cfg = small_cfg(SamplerKind::Random);
        cfg.steps_per_iter = 0;
        let bounds = BoundBox::cube(2, -3.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = init_ts_state(&data, &cfg, &mut rng);
        let before = state.teacher.params().to_vec();
        let (after, pseudo, _) = ts_train_round(state, &data, &cfg, &bounds, &mut rng).unwrap();
        assert_eq!(after.teacher.params(), &before[..]);
        assert_eq!(pseudo.len(), cfg.n_unlabeled);
    }

    #[test]
    fn ablated_round_reduces_to_supervised_regression_bitwise() {
        let data = toy_data(3, 20, 2);
        let mut cfg = small_cfg(SamplerKind::Random);
        cfg.lambda = 0.0;
        cfg.uncertainty_aware = false;
        cfg.batch_size = 8;
        let bounds = BoundBox::cube(2, -3.0, 3.0).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let state = init_ts_state(&data, &cfg, &mut rng);
        let teacher0 = state.teacher.clone();
        let (state, _, _) = ts_train_round(state, &data, &cfg, &bounds, &mut rng).unwrap();

        // hand-rolled supervised baseline consuming the same seed stream
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let baseline_state = init_ts_state(&data, &cfg, &mut rng);
        let mut teacher = baseline_state.teacher;
        assert_eq!(teacher.params(), teacher0.params());
        let mut adam = AdamState::new(teacher.n_params());
        let mut student = baseline_state.student_hyper;
        let mut student_adam = AdamState::new(3);
        let val = select_validation(&data, cfg.k_validation).unwrap();
        for _ in 0..cfg.steps_per_iter {
            let z_u = random_sample(&bounds, cfg.n_unlabeled, &mut rng);
            let pred = teacher_forward(&teacher, &z_u).unwrap();
            let c = val.y().iter().sum::<f64>() / val.len() as f64;
            let pseudo = PseudoSet::new(
                z_u,
                pred.mean.iter().map(|y| y - c).collect(),
                vec![0.0; cfg.n_unlabeled],
            )
            .unwrap();
            student =
                student_fit_step(&student, &pseudo, cfg.lr_student, &mut student_adam).unwrap();
            let batch = teacher_batch(&data, &val, cfg.batch_size, &mut rng).unwrap();
            let (_, grads) = labeled_loss_grads(&teacher, &batch).unwrap();
            teacher = teacher_adam_step(teacher, &grads, cfg.lr_teacher, &mut adam).unwrap();
        }
        assert_eq!(state.teacher.params(), teacher.params());
    }

    #[test]
    fn rounds_are_deterministic_given_seed() {
        for sampler in [SamplerKind::Gaussian, SamplerKind::Gev, SamplerKind::Random] {
            let data = toy_data(5, 15, 2);
            let cfg = small_cfg(sampler);
            let bounds = BoundBox::cube(2, -3.0, 3.0).unwrap();

            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                let state = init_ts_state(&data, &cfg, &mut rng);
                let (state, pseudo, m) =
                    ts_train_round(state, &data, &cfg, &bounds, &mut rng).unwrap();
                (
                    state.teacher.params().to_vec(),
                    state.student_hyper,
                    pseudo.y_hat().to_vec(),
                    m.teacher_nll,
                )
            };
            let a = run();
            let b = run();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            assert_eq!(a.2, b.2);
            assert_eq!(a.3, b.3);
        }
    }

    #[test]
    fn lambda_is_inert_when_feedback_disabled() {
        let data = toy_data(13, 16, 2);
        let bounds = BoundBox::cube(2, -3.0, 3.0).unwrap();
        let run = |lambda: f64| {
            let mut cfg = small_cfg(SamplerKind::Gaussian);
            cfg.feedback_enabled = false;
            cfg.lambda = lambda;
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let state = init_ts_state(&data, &cfg, &mut rng);
            let (state, _, _) = ts_train_round(state, &data, &cfg, &bounds, &mut rng).unwrap();
            (
                state.teacher.params().to_vec(),
                state.student_hyper,
            )
        };
        let a = run(0.12);
        let b = run(7.5);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn warmup_zero_steps_is_identity_and_improves_teacher_nll() {
        let data = toy_data(19, 18, 2);
        let bounds = BoundBox::cube(2, -3.0, 3.0).unwrap();
        let mut cfg = small_cfg(SamplerKind::Gaussian);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let state = init_ts_state(&data, &cfg, &mut rng);
        let before = state.teacher.params().to_vec();
        let state0 = warmup(state.clone(), &data, &cfg, &bounds, &mut rng).unwrap();
        assert_eq!(state0.teacher.params(), &before[..]);

        cfg.warmup_steps = 300;
        let nll_init = teacher_labeled_loss(&state.teacher, &data).unwrap();
        let state = warmup(state, &data, &cfg, &bounds, &mut rng).unwrap();
        let nll_after = teacher_labeled_loss(&state.teacher, &data).unwrap();
        assert!(
            nll_after <= nll_init,
            "teacher NLL rose during warm-up: {nll_init} -> {nll_after}"
        );
    }

    #[test]
    fn teacher_only_warmup_matches_plain_regression() {
        let data = toy_data(29, 14, 2);
        let bounds = BoundBox::cube(2, -3.0, 3.0).unwrap();
        let mut cfg = small_cfg(SamplerKind::Random);
        cfg.warmup_steps = 40;
        cfg.warmup_teacher_only = true;

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let state = init_ts_state(&data, &cfg, &mut rng);
        let state = warmup(state, &data, &cfg, &bounds, &mut rng).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let base = init_ts_state(&data, &cfg, &mut rng);
        let mut teacher = base.teacher;
        let mut adam = AdamState::new(teacher.n_params());
        for _ in 0..40 {
            let batch = minibatch(&data, cfg.batch_size, &mut rng);
            let (_, grads) = labeled_loss_grads(&teacher, &batch).unwrap();
            teacher = teacher_adam_step(teacher, &grads, cfg.lr_teacher, &mut adam).unwrap();
        }
        assert_eq!(state.teacher.params(), teacher.params());
    }

    #[test]
    fn teacher_batch_appends_validation_points() {
        let data = toy_data(61, 20, 2);
        let val = select_validation(&data, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let batch = teacher_batch(&data, &val, 6, &mut rng).unwrap();
        assert_eq!(batch.len(), 9);
        assert_eq!(&batch.y()[6..], val.y());
    }

    #[test]
    fn augment_concatenates_and_tags_noise() {
        let data = toy_data(37, 2, 3);
        let (aug, noise) = augment_query_set(&data, None).unwrap();
        assert_eq!(aug.len(), 2);
        assert_eq!(noise, vec![0.0, 0.0]);

        let pseudo = PseudoSet::new(
            DenseMatrix::zeros(3, 3),
            vec![1.0, 2.0, 3.0],
            vec![0.5, 0.6, 0.7],
        )
        .unwrap();
        let (aug, noise) = augment_query_set(&data, Some(&pseudo)).unwrap();
        assert_eq!(aug.len(), 5);
        assert_eq!(&noise[..2], &[0.0, 0.0]);
        assert_eq!(&noise[2..], &[0.5, 0.6, 0.7]);
        assert_eq!(&aug.y()[2..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn feedback_through_teacher_matches_finite_differences() {
        use crate::numerics::finite_diff_grad;
        use crate::student::feedback_loss;

        let data = toy_data(51, 10, 2);
        let val = select_validation(&data, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let teacher = crate::teacher::TeacherNet::init(2, 6, &mut rng);
        let hyper = GpHyper {
            log_outputscale: 0.2,
            log_lengthscale: -0.1,
            log_noise: (0.1_f64).ln(),
            mean_const: 0.0,
        };
        let z_u = DenseMatrix::new(
            5,
            2,
            (0..10).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap();

        let loss_of = |net: &crate::teacher::TeacherNet| {
            let pred = teacher_forward(net, &z_u).unwrap();
            let pseudo = PseudoSet::new(z_u.clone(), pred.mean, pred.variance).unwrap();
            feedback_loss(&hyper, &pseudo, &val).unwrap()
        };

        let pred = teacher_forward(&teacher, &z_u).unwrap();
        let pseudo = PseudoSet::new(z_u.clone(), pred.mean, pred.variance).unwrap();
        let fb = feedback_backward(&hyper, &pseudo, &val).unwrap();
        let (analytic, _) =
            crate::teacher::teacher_backward(&teacher, &fb.d_yhat, &fb.d_vart, &z_u).unwrap();

        let fd = finite_diff_grad(
            |p: &[f64]| {
                let mut net = teacher.clone();
                net.params_mut().copy_from_slice(p);
                loss_of(&net)
            },
            teacher.params(),
            1e-5,
        )
        .unwrap();
        for i in 0..analytic.len() {
            let denom = analytic[i].abs().max(1e-3);
            assert!(
                (analytic[i] - fd[i]).abs() / denom < 1e-4,
                "param {i}: {} vs {}",
                analytic[i],
                fd[i]
            );
        }
    }

    #[test]
    fn long_fixture_runs_stay_finite() {
        // 2000 alternating steps (100 rounds of 20) across 5 seeds
        for seed in 0..5u64 {
            let data = toy_data(100 + seed, 12, 2);
            let mut cfg = small_cfg(SamplerKind::Gaussian);
            cfg.steps_per_iter = 20;
            cfg.n_unlabeled = 8;
            let bounds = BoundBox::cube(2, -3.0, 3.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = init_ts_state(&data, &cfg, &mut rng);
            for _ in 0..100 {
                let (next, _, m) =
                    ts_train_round(state, &data, &cfg, &bounds, &mut rng).unwrap();
                state = next;
                assert!(m.teacher_nll.is_finite());
                assert!(m.feedback_loss.is_finite());
                assert!(m.unlabeled_nll.is_finite());
            }
        }
    }
}
