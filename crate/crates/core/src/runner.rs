//! Experiment runner: initial designs, the query loop, trace/summary
//! persistence, the generalization study and the ablation/λ-sweep suites.

use crate::acquisition::{ei_scalar, maximize_acquisition, BoundBox};
use crate::bilevel::{augment_query_set, init_ts_state, ts_train_round, warmup, SamplerKind, TsState};
use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::gp::{gp_fit, gp_nll, FittedGp, GpHyper, LabeledSet};
use crate::lowdisc::LowDiscrepancy;
use crate::numerics::DenseMatrix;
use crate::objectives::Objective;
use crate::par;
use crate::student::PseudoSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// One row of the optimization trace.
#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub iter: usize,
    pub queried_z: Vec<f64>,
    pub observed_y: f64,
    pub best_so_far: f64,
    pub teacher_nll: f64,
    pub feedback_loss: f64,
    pub unlabeled_nll: f64,
    pub wall_ms: u64,
}

/// Everything a finished run exposes to callers and to the report writers.
pub struct RunOutcome {
    pub config: RunConfig,
    pub records: Vec<TraceRecord>,
    pub best_y: f64,
    pub best_z: Vec<f64>,
    /// Exact number of true-objective evaluations consumed.
    pub n_evals: usize,
    /// All observed data, initial design first.
    pub data: LabeledSet,
    pub final_state: Option<TsState>,
    pub final_pseudo: Option<PseudoSet>,
    pub final_gp: GpHyper,
}

fn best_of(y: &[f64]) -> (usize, f64) {
    let mut bi = 0;
    for i in 1..y.len() {
        if y[i] > y[bi] {
            bi = i;
        }
    }
    (bi, y[bi])
}

/// EI over uniform probes, the fallback when every quasi-Newton restart
/// produced a non-finite candidate.
fn best_random_probe<R: Rng>(
    h: &GpHyper,
    data: &LabeledSet,
    noise: &[f64],
    incumbent: f64,
    bounds: &BoundBox,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let gp = FittedGp::fit(h, data, Some(noise))?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..256 {
        let probe = bounds.sample_uniform(rng);
        let (m, v) = gp.predict_point(&probe)?;
        let ei = ei_scalar(m, v, incumbent);
        if ei.is_finite() && best.as_ref().map_or(true, |(_, b)| ei > *b) {
            best = Some((probe, ei));
        }
    }
    Ok(best
        .map(|(z, _)| z)
        .unwrap_or_else(|| bounds.sample_uniform(rng)))
}

/// Runs one experiment arm end to end; writes trace, sidecar points and
/// summary when an output directory is configured.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let objective = Objective::by_name(&cfg.objective, cfg.dim)?;
    let bounds = BoundBox::cube(cfg.dim, cfg.box_lo, cfg.box_hi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lds = LowDiscrepancy::new(cfg.dim, cfg.seed);
    let mut n_evals = 0usize;

    let observe = |z: &[f64], n_evals: &mut usize, rng: &mut ChaCha8Rng| -> f64 {
        let truth = objective.eval(z);
        *n_evals += 1;
        if cfg.label_noise_std > 0.0 {
            truth + cfg.label_noise_std * rng.sample::<f64, _>(StandardNormal)
        } else {
            truth
        }
    };

    // initial design from the scrambled low-discrepancy stream
    let mut init_rows = Vec::with_capacity(cfg.n_init);
    let mut init_y = Vec::with_capacity(cfg.n_init);
    for _ in 0..cfg.n_init {
        let z = lds.next_in_box(&bounds);
        let y = observe(&z, &mut n_evals, &mut rng);
        init_rows.push(z);
        init_y.push(y);
    }
    let mut data = LabeledSet::new(DenseMatrix::from_rows(&init_rows)?, init_y)?;

    let mut state = if cfg.method.uses_teacher_student() {
        let s = init_ts_state(&data, &cfg.ts, &mut rng);
        Some(warmup(s, &data, &cfg.ts, &bounds, &mut rng)?)
    } else {
        None
    };

    let (_, mut best_y) = best_of(data.y());
    let mut best_z = {
        let (bi, _) = best_of(data.y());
        data.z().row(bi).to_vec()
    };
    let mut gp_hyper = GpHyper::default_init();
    let mut records = Vec::with_capacity(cfg.n_query);
    let mut final_pseudo = None;

    for iter in 1..=cfg.n_query {
        let t0 = Instant::now();
        let mut teacher_nll = 0.0;
        let mut fb_loss = 0.0;
        let mut unlabeled_nll = 0.0;

        let pseudo = if let Some(ts) = state.take() {
            let (next_state, pseudo, metrics) =
                ts_train_round(ts, &data, &cfg.ts, &bounds, &mut rng)?;
            state = Some(next_state);
            teacher_nll = metrics.teacher_nll;
            fb_loss = metrics.feedback_loss;
            unlabeled_nll = metrics.unlabeled_nll;
            Some(pseudo)
        } else {
            None
        };

        let next_z = if cfg.method == Method::Sobol {
            lds.next_in_box(&bounds)
        } else {
            let (aug, noise) = augment_query_set(&data, pseudo.as_ref())?;
            gp_hyper = gp_fit(&aug, Some(&noise), gp_hyper, cfg.gp.fit_steps, cfg.gp.lr)?;
            match maximize_acquisition(
                &gp_hyper,
                &aug,
                Some(&noise),
                best_y,
                &bounds,
                cfg.acq.restarts,
                cfg.acq.max_iters,
                &mut rng,
            ) {
                Ok(z) => z,
                Err(Error::AcquisitionFailed) => {
                    best_random_probe(&gp_hyper, &aug, &noise, best_y, &bounds, &mut rng)?
                }
                Err(e) => return Err(e),
            }
        };

        let y = observe(&next_z, &mut n_evals, &mut rng);
        data.push(&next_z, y)?;
        if y > best_y {
            best_y = y;
            best_z = next_z.clone();
        }
        final_pseudo = pseudo;
        records.push(TraceRecord {
            iter,
            queried_z: next_z,
            observed_y: y,
            best_so_far: best_y,
            teacher_nll,
            feedback_loss: fb_loss,
            unlabeled_nll,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }

    let outcome = RunOutcome {
        config: cfg.clone(),
        records,
        best_y,
        best_z,
        n_evals,
        data,
        final_state: state,
        final_pseudo,
        final_gp: gp_hyper,
    };
    if let Some(dir) = &cfg.out {
        write_outputs(&outcome, dir)?;
    }
    Ok(outcome)
}

fn run_dir_name(cfg: &RunConfig) -> String {
    format!(
        "{}-{}d-{}-seed{}",
        cfg.objective,
        cfg.dim,
        cfg.method.as_str(),
        cfg.seed
    )
}

/// Writes `trace.csv`, the `points.csv` sidecar and `summary.txt` under
/// `<dir>/<objective>-<dim>d-<method>-seed<seed>/`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    let run_dir = dir.join(run_dir_name(&outcome.config));
    std::fs::create_dir_all(&run_dir)?;

    let mut trace = String::from("iter,y,best,teacher_nll,feedback_loss,unlabeled_nll,wall_ms\n");
    for r in &outcome.records {
        trace.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter,
            r.observed_y,
            r.best_so_far,
            r.teacher_nll,
            r.feedback_loss,
            r.unlabeled_nll,
            r.wall_ms
        ));
    }
    std::fs::write(run_dir.join("trace.csv"), trace)?;

    let mut points = String::new();
    for r in &outcome.records {
        let row: Vec<String> = r.queried_z.iter().map(|v| v.to_string()).collect();
        points.push_str(&row.join(","));
        points.push('\n');
    }
    std::fs::write(run_dir.join("points.csv"), points)?;

    let mut summary = String::new();
    summary.push_str(&format!("best_y = {}\n", outcome.best_y));
    let best_row: Vec<String> = outcome.best_z.iter().map(|v| v.to_string()).collect();
    summary.push_str(&format!("best_z = {}\n", best_row.join(",")));
    summary.push_str(&format!("n_evals = {}\n", outcome.n_evals));
    summary.push_str(&format!("seed = {}\n", outcome.config.seed));
    summary.push_str("# config\n");
    summary.push_str(&outcome.config.to_text());
    std::fs::write(run_dir.join("summary.txt"), summary)?;
    Ok(())
}

/// Generalization report: query-GP NLL with and without pseudo-label
/// augmentation, on a global and a local test region.
#[derive(Clone, Copy, Debug)]
pub struct GenReport {
    pub global_with: f64,
    pub global_without: f64,
    pub local_with: f64,
    pub local_without: f64,
    pub n_test: usize,
}

/// Number of test points per region.
pub const GEN_TEST_POINTS: usize = 100;
/// Standard deviation of the local test cloud around the best point.
pub const GEN_LOCAL_STD: f64 = 0.01;

/// Evaluates query-GP generalization after a finished run. Ground-truth
/// labels come from the noiseless objective.
pub fn eval_generalization(cfg: &RunConfig, outcome: &RunOutcome) -> Result<GenReport> {
    let objective = Objective::by_name(&cfg.objective, cfg.dim)?;
    let bounds = BoundBox::cube(cfg.dim, cfg.box_lo, cfg.box_hi)?;
    // separate deterministic stream so the report never perturbs a replay
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let sample_region = |rng: &mut ChaCha8Rng, center: Option<&[f64]>| -> DenseMatrix {
        let mut rows = Vec::with_capacity(GEN_TEST_POINTS);
        for _ in 0..GEN_TEST_POINTS {
            let mut z: Vec<f64> = (0..cfg.dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            if let Some(c) = center {
                for (zi, ci) in z.iter_mut().zip(c) {
                    *zi = ci + GEN_LOCAL_STD * *zi;
                }
            }
            bounds.project(&mut z);
            rows.push(z);
        }
        DenseMatrix::from_rows(&rows).expect("test rows")
    };

    let global_z = sample_region(&mut rng, None);
    let local_z = sample_region(&mut rng, Some(&outcome.best_z));
    let truth = |zm: &DenseMatrix| -> Vec<f64> {
        (0..zm.rows()).map(|i| objective.eval(zm.row(i))).collect()
    };
    let global = LabeledSet::new(global_z.clone(), truth(&global_z))?;
    let local = LabeledSet::new(local_z.clone(), truth(&local_z))?;

    let (aug, aug_noise) = augment_query_set(&outcome.data, outcome.final_pseudo.as_ref())?;
    let plain_noise = vec![0.0; outcome.data.len()];

    let fit = |d: &LabeledSet, n: &[f64]| {
        gp_fit(d, Some(n), GpHyper::default_init(), cfg.gp.fit_steps, cfg.gp.lr)
    };
    let h_with = fit(&aug, &aug_noise)?;
    let h_without = fit(&outcome.data, &plain_noise)?;

    Ok(GenReport {
        global_with: gp_nll(&h_with, &aug, Some(&aug_noise), &global)?,
        global_without: gp_nll(&h_without, &outcome.data, Some(&plain_noise), &global)?,
        local_with: gp_nll(&h_with, &aug, Some(&aug_noise), &local)?,
        local_without: gp_nll(&h_without, &outcome.data, Some(&plain_noise), &local)?,
        n_test: GEN_TEST_POINTS,
    })
}

/// One arm of a comparison suite.
#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub variant: String,
    pub bests: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

fn summarize(variant: String, bests: Vec<f64>) -> SuiteRow {
    let n = bests.len() as f64;
    let mean = bests.iter().sum::<f64>() / n;
    let std = (bests.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = bests.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    SuiteRow {
        variant,
        bests,
        mean,
        std,
        median,
    }
}

/// Runs every `(variant, seed)` cell, cells independent and parallel.
fn run_variants(variants: Vec<(String, RunConfig)>, n_seeds: usize, seed0: u64) -> Result<Vec<SuiteRow>> {
    let mut cells = Vec::new();
    for (vi, (_, cfg)) in variants.iter().enumerate() {
        for s in 0..n_seeds {
            let mut c = cfg.clone();
            c.seed = seed0 + s as u64;
            c.out = None;
            cells.push((vi, c));
        }
    }
    let results = par::map_items(cells, |(vi, cfg)| run_experiment(&cfg).map(|o| (vi, o.best_y)));
    let mut bests: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    for r in results {
        let (vi, b) = r?;
        bests[vi].push(b);
    }
    Ok(variants
        .into_iter()
        .zip(bests)
        .map(|((name, _), b)| summarize(name, b))
        .collect())
}

/// The four ablation arms — full method, random sampler, uncertainty
/// awareness off, feedback off — over shared seeds.
pub fn run_ablation_suite(base: &RunConfig) -> Result<Vec<SuiteRow>> {
    let mut full = base.clone();
    full.method = Method::TsboGaussian;
    full.ts.sampler_kind = SamplerKind::Gaussian;
    full.ts.uncertainty_aware = true;
    full.ts.feedback_enabled = true;

    let mut random_sampler = full.clone();
    random_sampler.ts.sampler_kind = SamplerKind::Random;

    let mut no_ua = full.clone();
    no_ua.ts.uncertainty_aware = false;

    let mut no_feedback = full.clone();
    no_feedback.ts.feedback_enabled = false;

    run_variants(
        vec![
            ("tsbo-gaussian".into(), full),
            ("random-sampler".into(), random_sampler),
            ("no-uncertainty".into(), no_ua),
            ("no-feedback".into(), no_feedback),
        ],
        base.n_seeds.max(1),
        base.seed,
    )
}

/// Feedback-weight sweep plus a vanilla-BO reference arm, shared seeds.
pub fn run_lambda_sweep(base: &RunConfig, lambdas: &[f64]) -> Result<Vec<SuiteRow>> {
    let mut variants = Vec::new();
    for &l in lambdas {
        let mut c = base.clone();
        c.method = Method::TsboGaussian;
        c.ts.sampler_kind = SamplerKind::Gaussian;
        c.ts.lambda = l;
        variants.push((format!("lambda={l}"), c));
    }
    let mut vanilla = base.clone();
    vanilla.method = Method::VanillaBo;
    variants.push(("vanilla-bo".into(), vanilla));
    run_variants(variants, base.n_seeds.max(1), base.seed)
}

/// Plain-text comparison table.
pub fn format_suite_table(rows: &[SuiteRow]) -> String {
    let mut s = String::from("variant,mean,std,median,n\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.variant,
            r.mean,
            r.std,
            r.median,
            r.bests.len()
        ));
    }
    s
}

/// Text rendering of a generalization report.
pub fn format_gen_report(r: &GenReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("n_test = {}\n", r.n_test));
    s.push_str(&format!("local_std = {GEN_LOCAL_STD}\n"));
    s.push_str("region,nll_with_pseudo,nll_without_pseudo\n");
    s.push_str(&format!("global,{},{}\n", r.global_with, r.global_without));
    s.push_str(&format!("local,{},{}\n", r.local_with, r.local_without));
    s
}

/// Writes any report string under the config's output directory.
pub fn write_report(cfg: &RunConfig, name: &str, body: &str) -> Result<()> {
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join(name))?;
        f.write_all(body.as_bytes())?;
    }
    Ok(())
}
