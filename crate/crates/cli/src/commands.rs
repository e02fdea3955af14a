use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssrecon::io::{save_grid, save_mask};
use ssrecon::metrics::{frame_metrics, summarize, MagnitudeImage, MetricRecord};
use ssrecon::objective::{apply_mask, infer, train, LossNorm, Scenario, TrainConfig, TrainRun};
use ssrecon::recon::{coil_image, load_checkpoint, save_checkpoint, LinearLookupModel, ModelParams};
use ssrecon::sampling::{draw_initial_mask, re_undersample, Acceleration, RatioDist, Resplit, SamplingPlan, SeedMode};
use ssrecon::seed;
use ssrecon::tensor::C64;
use ssrecon::theory::{
    oracle_model, verify_k_formula, verify_theorem1, verify_unbiasedness, verify_variance_halving, ErrorCoupling,
    GaussianWorld, VerificationReport,
};

use crate::data::{eval_cases, subjects, training_cases, Case};
use crate::spec::{EvalPoint, ExperimentSpec};
use crate::{write_csv, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: String,
    pub shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub seed: u64,
    pub preset: String,
    pub files: Vec<ManifestEntry>,
}

/// Writes phantoms, coil maps, example acquisitions at every evaluation
/// acceleration (and R = 8) and one re-undersampling of the R = 8 mask.
pub fn cmd_simulate(spec: &ExperimentSpec, out: &Path) -> Result<SimulationManifest> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (i, case) in training_cases(spec)?.iter().enumerate() {
        let name = format!("phantom_{i}.grid");
        save_grid(out.join(&name), &case.image)?;
        files.push(ManifestEntry {
            file: name,
            kind: "image".into(),
            shape: case.image.shape().dims().to_vec(),
            acceleration: None,
            density: None,
        });
        let name = format!("coils_{i}.grid");
        let g = case.subject.coils.grid();
        save_grid(out.join(&name), g)?;
        files.push(ManifestEntry {
            file: name,
            kind: "coils".into(),
            shape: g.shape().dims().to_vec(),
            acceleration: None,
            density: None,
        });
    }

    let plan = spec.plan()?;
    let p = &spec.phantom;
    let dims = (p.nx, p.ny, p.nt);
    let mut rs: Vec<f64> = vec![8.0];
    for e in &spec.eval {
        if !rs.contains(&e.r) {
            rs.push(e.r);
        }
    }
    let mut r8 = None;
    for (k, &r) in rs.iter().enumerate() {
        let mut rng = seed::rng(spec.seed, "simulate-mask", k as u64);
        let m = draw_initial_mask(&fixed_acceleration(&plan, r), dims, &mut rng)?;
        let name = format!("mask_R{r}.grid");
        save_mask(out.join(&name), &m)?;
        files.push(ManifestEntry {
            file: name,
            kind: "mask".into(),
            shape: vec![p.nx, p.ny, p.nt],
            acceleration: Some(r),
            density: Some(m.density()),
        });
        if r == 8.0 {
            r8 = Some(m);
        }
    }
    let my = r8.expect("R = 8 is always drawn");
    let subsets = re_undersample(&my, &plan, &mut seed::rng(spec.seed, "simulate-resplit", 0))?;
    for (k, m) in subsets.iter().enumerate() {
        let name = format!("subset_{k}_R8.grid");
        save_mask(out.join(&name), m)?;
        files.push(ManifestEntry {
            file: name,
            kind: "mask".into(),
            shape: vec![p.nx, p.ny, p.nt],
            acceleration: None,
            density: Some(m.density()),
        });
    }
    let manifest = SimulationManifest { seed: spec.seed, preset: spec.preset.clone(), files };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn fixed_acceleration(plan: &SamplingPlan, r: f64) -> SamplingPlan {
    SamplingPlan { acceleration: Acceleration::Fixed { r }, initial_seed_mode: SeedMode::PerStepRandom, ..plan.clone() }
}

#[derive(Serialize)]
struct ValidationRow {
    step: usize,
    loss: f64,
}

/// Trains under `config` on the spec's training subjects and writes the
/// checkpoint, the step log and the resolved configuration.
pub fn cmd_train(spec: &ExperimentSpec, config: &TrainConfig, out: &Path) -> Result<TrainRun> {
    fs::create_dir_all(out)?;
    let data = subjects(&training_cases(spec)?);
    let run = train(config, &data)?;
    fs::write(out.join("train_config.toml"), config.to_toml()?)?;
    write_csv(&out.join("train_log.csv"), &run.logs)?;
    if config.early_stop.enabled {
        let rows: Vec<ValidationRow> =
            run.validation.iter().map(|&(step, loss)| ValidationRow { step, loss }).collect();
        write_csv(&out.join("validation.csv"), &rows)?;
    }
    save_checkpoint(out.join("checkpoint"), &run.params, run.logs.len(), run.seed, "train-step")?;
    Ok(run)
}

/// Per-subject quality of one evaluation condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub condition: String,
    pub subject: usize,
    pub ssim: f64,
    pub psnr_db: f64,
    pub mse: f64,
}

/// Plan used to draw and split evaluation acquisitions at `point`.
pub fn eval_plan(plan: &SamplingPlan, point: &EvalPoint) -> SamplingPlan {
    let mut p = fixed_acceleration(plan, point.r);
    if let Some(q) = point.ratio {
        p.resplit = Resplit::Disjoint { ratio: RatioDist::fixed(q) };
        p.resplit_seed_mode = SeedMode::PerStepRandom;
    }
    p
}

/// Reconstructs every case under `point`. The acquisition and the split of
/// case `j` depend only on `(master, point_index, j)`, so different models
/// see identical inputs.
pub fn evaluate(
    params: &ModelParams,
    plan: &SamplingPlan,
    point: &EvalPoint,
    point_index: usize,
    cases: &[Case],
    master: u64,
) -> Result<(Vec<SubjectScore>, Vec<MetricRecord>)> {
    let plan = eval_plan(plan, point);
    let mut scores = Vec::new();
    let mut frames = Vec::new();
    for (j, case) in cases.iter().enumerate() {
        let mut rng = seed::rng(master, "eval", (point_index as u64) << 32 | j as u64);
        let s = &case.subject;
        let my = draw_initial_mask(&plan, s.dims(), &mut rng)?;
        let y = apply_mask(&s.kspace, &my);
        let k = infer(params, &y, &my, &s.coils, point.scenario, &plan, &mut rng)?;
        let pred = MagnitudeImage::from_grid(&coil_image(&k, &s.coils)?);
        let reference = MagnitudeImage::from_grid(&case.image);
        let run_id = format!("{}-s{j}", point.label());
        let recs = frame_metrics(&run_id, &pred, &reference)?;
        let n = recs.len() as f64;
        scores.push(SubjectScore {
            condition: point.label(),
            subject: j,
            ssim: recs.iter().map(|r| r.ssim).sum::<f64>() / n,
            psnr_db: recs.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            mse: recs.iter().map(|r| r.mse).sum::<f64>() / n,
        });
        frames.extend(recs);
    }
    Ok((scores, frames))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummaryRow {
    pub condition: String,
    pub scenario: Scenario,
    pub r: f64,
    pub n: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

fn summary_row(point: &EvalPoint, scores: &[SubjectScore]) -> EvalSummaryRow {
    let s = summarize(&scores.iter().map(|s| s.ssim).collect::<Vec<_>>());
    let p = summarize(&scores.iter().map(|s| s.psnr_db).collect::<Vec<_>>());
    let m = summarize(&scores.iter().map(|s| s.mse).collect::<Vec<_>>());
    EvalSummaryRow {
        condition: point.label(),
        scenario: point.scenario,
        r: point.r,
        n: s.n,
        ssim_mean: s.mean,
        ssim_std: s.std,
        psnr_mean: p.mean,
        psnr_std: p.std,
        mse_mean: m.mean,
        mse_std: m.std,
    }
}

#[derive(Serialize)]
struct FrameRow<'a> {
    run_id: &'a str,
    frame: usize,
    mse: f64,
    psnr_db: f64,
    ssim: f64,
}

/// Evaluates `params` at every point of the spec's grid on the held-out
/// subjects; writes per-frame and aggregate CSVs.
pub fn cmd_eval(spec: &ExperimentSpec, params: &ModelParams, out: &Path) -> Result<Vec<EvalSummaryRow>> {
    fs::create_dir_all(out)?;
    let plan = spec.plan()?;
    let cases = eval_cases(spec)?;
    let mut summary = Vec::new();
    let mut frames = Vec::new();
    for (i, point) in spec.eval.iter().enumerate() {
        let (scores, recs) = evaluate(params, &plan, point, i, &cases, spec.seed)?;
        summary.push(summary_row(point, &scores));
        frames.extend(recs);
    }
    let rows: Vec<FrameRow> = frames
        .iter()
        .map(|r| FrameRow { run_id: &r.run_id, frame: r.frame, mse: r.mse, psnr_db: r.psnr_db, ssim: r.ssim })
        .collect();
    write_csv(&out.join("eval_frames.csv"), &rows)?;
    write_csv(&out.join("eval_summary.csv"), &summary)?;
    Ok(summary)
}

pub fn load_params(checkpoint: &Path) -> Result<ModelParams> {
    Ok(load_checkpoint(checkpoint)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub condition: String,
    pub n: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

type ConditionScores = (EvalPoint, Vec<SubjectScore>);

#[derive(Serialize)]
struct AblationSubjectRow<'a> {
    variant: &'a str,
    condition: &'a str,
    subject: usize,
    ssim: f64,
    psnr_db: f64,
    mse: f64,
}

/// Trains every ablation variant with the same data, initialization seed
/// and step budget, then scores each under every ablation condition.
pub fn cmd_ablate(spec: &ExperimentSpec, out: &Path) -> Result<Vec<AblationRow>> {
    fs::create_dir_all(out)?;
    let data = subjects(&training_cases(spec)?);
    let cases = eval_cases(spec)?;
    let variants = &spec.ablation.variants;
    let results: Vec<Result<Vec<ConditionScores>>> = variants
        .par_iter()
        .map(|v| {
            let config = spec.train_config_for(Some(v))?;
            let run = train(&config, &data)?;
            spec.ablation
                .conditions
                .iter()
                .enumerate()
                .map(|(i, point)| Ok((*point, evaluate(&run.params, &config.plan, point, i, &cases, spec.seed)?.0)))
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut per_subject = Vec::new();
    for (v, res) in variants.iter().zip(results) {
        for (point, scores) in res? {
            let s = summary_row(&point, &scores);
            rows.push(AblationRow {
                variant: v.clone(),
                condition: s.condition,
                n: s.n,
                ssim_mean: s.ssim_mean,
                ssim_std: s.ssim_std,
                psnr_mean: s.psnr_mean,
                psnr_std: s.psnr_std,
                mse_mean: s.mse_mean,
                mse_std: s.mse_std,
            });
            per_subject.push((v.clone(), scores));
        }
    }
    let subject_rows: Vec<AblationSubjectRow> = per_subject
        .iter()
        .flat_map(|(v, scores)| {
            scores.iter().map(move |s| AblationSubjectRow {
                variant: v,
                condition: &s.condition,
                subject: s.subject,
                ssim: s.ssim,
                psnr_db: s.psnr_db,
                mse: s.mse,
            })
        })
        .collect();
    write_csv(&out.join("ablation.csv"), &rows)?;
    write_csv(&out.join("ablation_subjects.csv"), &subject_rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStudyRow {
    pub method: String,
    pub seed: u64,
    pub ssim_mean: f64,
    pub psnr_mean: f64,
}

/// Trains each preset once per master seed (fresh phantoms, coils and
/// initialization each time) and reports the mean held-out SSIM at `point`.
pub fn seed_study(
    spec: &ExperimentSpec,
    methods: &[&str],
    seeds: &[u64],
    point: EvalPoint,
) -> Result<Vec<SeedStudyRow>> {
    let jobs: Vec<(&str, u64)> = methods.iter().flat_map(|m| seeds.iter().map(move |s| (*m, *s))).collect();
    jobs.par_iter()
        .map(|&(method, s)| {
            let spec = ExperimentSpec { seed: s, ..spec.clone() };
            let config = spec.train_config_for(Some(method))?;
            let run = train(&config, &subjects(&training_cases(&spec)?))?;
            let (scores, _) = evaluate(&run.params, &config.plan, &point, 0, &eval_cases(&spec)?, s)?;
            let n = scores.len() as f64;
            Ok(SeedStudyRow {
                method: method.to_string(),
                seed: s,
                ssim_mean: scores.iter().map(|x| x.ssim).sum::<f64>() / n,
                psnr_mean: scores.iter().map(|x| x.psnr_db).sum::<f64>() / n,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CheckpointRow {
    steps: usize,
    deviation: f64,
}

/// Lookup-model training setup of the equivalence check: squared loss,
/// the experiment's step budget and rate, two subsets.
pub fn theorem_config(spec: &ExperimentSpec, seed: u64) -> Result<TrainConfig> {
    let v = &spec.verify;
    let mut config = TrainConfig::new(spec.plan()?, v.theorem_loss, v.theorem_steps, seed);
    config.norm = LossNorm::L2;
    config.lr = v.theorem_lr;
    config.plan.subsets = 2;
    config.plan.holdout_validation = false;
    Ok(config)
}

/// Copy of `model` whose every offset is shifted by the real constant `c`.
pub fn with_bias(model: &LinearLookupModel, c: f64) -> LinearLookupModel {
    let mut biased = model.clone();
    biased.table.values_mut().for_each(|(_, b)| b.iter_mut().for_each(|x| *x += C64::new(c, 0.0)));
    biased
}

/// Runs the theory suite. With `inject_bias` the unbiasedness check scores
/// a deliberately offset oracle, which must fail.
pub fn cmd_verify(spec: &ExperimentSpec, out: &Path, inject_bias: bool) -> Result<Vec<VerificationReport>> {
    fs::create_dir_all(out)?;
    let v = &spec.verify;
    let s = |k: u64| seed::derive(spec.seed, "verify", k);
    let mut reports = Vec::new();

    let grid: Vec<(f64, f64)> = v.k_grid.iter().flat_map(|&p| v.k_grid.iter().map(move |&q| (p, q))).collect();
    let k_reports: Vec<ssrecon::Result<VerificationReport>> =
        grid.par_iter().map(|&(p, q)| verify_k_formula(p, q, v.k_trials, s(0))).collect();
    for r in k_reports {
        reports.push(r?);
    }

    for &sigma in &v.sigmas {
        reports.push(verify_variance_halving(sigma, v.variance_trials, ErrorCoupling::Independent, s(1))?);
    }
    reports.push(verify_variance_halving(1.0, v.variance_trials, ErrorCoupling::Identical, s(1))?);

    let world = GaussianWorld::standard();
    let run = verify_theorem1(&world, &theorem_config(spec, s(2))?, v.theorem_probes)?;
    let rows: Vec<CheckpointRow> =
        run.checkpoints.iter().map(|&(steps, deviation)| CheckpointRow { steps, deviation }).collect();
    write_csv(&out.join("equivalence_checkpoints.csv"), &rows)?;
    reports.extend(run.reports().into_iter().cloned());

    let oracle = oracle_model(&world)?;
    let biased = with_bias(&oracle, v.injected_bias);
    let scored = if inject_bias { &biased } else { &oracle };
    let (report, _) = verify_unbiasedness(&world, scored, v.unbiasedness_trials, s(3))?;
    reports.push(report.with_note(if inject_bias { "oracle with injected bias" } else { "oracle model" }));
    if !inject_bias {
        let (fault, _) = verify_unbiasedness(&world, &biased, v.unbiasedness_trials, s(3))?;
        let detected = VerificationReport::new(
            "unbiasedness-fault-detection",
            v.unbiasedness_trials,
            if fault.pass { 0.0 } else { 1.0 },
            1.0,
            0.0,
        )
        .with_note(format!("bias {} must be flagged (z = {:.1})", v.injected_bias, fault.estimate));
        reports.push(detected);
    }

    write_csv(&out.join("verify.csv"), &reports)?;
    Ok(reports)
}
