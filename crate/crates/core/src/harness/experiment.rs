//! End-to-end experiments and their reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FiringPlan;
use crate::quality::{mssim, psnr, rf_mse, BModeImage, Psnr, MSSIM_WINDOW};
use crate::separation::{build_model, train, Dataset, SeparationModel};

use super::config::{ExperimentConfig, Variant};
use super::container::{load_model, save_bmode, save_model, write_atomic};
use super::dataset::{build_pairs, split_seeds};
use super::export::{save_bmode_image, write_loss_csv};
use super::setup::{Acquisition, Setup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomMetrics {
    pub seed: u64,
    pub rf_mse: f64,
    pub mssim: f64,
    pub psnr: Psnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub separation: bool,
    /// Variant every metric is measured against.
    pub baseline: String,
    pub total_waves: usize,
    /// `N · T / fs`: one acquisition window per firing iteration.
    pub imaging_time_s: f64,
    /// Imaging time relative to the baseline.
    pub relative_imaging_time: f64,
    pub rf_mse: f64,
    pub mssim: f64,
    /// Mean over phantoms with a finite PSNR; `None` if all were identical.
    pub psnr: Option<f64>,
    pub n_identical: usize,
    pub per_phantom: Vec<PhantomMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub p: usize,
    pub n_parameters: usize,
    pub n_train_pairs: usize,
    pub n_val_pairs: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub reference: String,
    pub eval_seeds: Vec<u64>,
    pub training: Vec<TrainingSummary>,
    pub variants: Vec<VariantReport>,
    pub artifacts: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// A trained (or loaded) model per parallelism.
pub type Models = BTreeMap<usize, SeparationModel<f32>>;

/// Trains one separation model per `P` in `ps` from shared simulations.
/// Checkpoints and loss CSVs go to `out_dir` when given.
pub fn train_models(
    setup: &Setup,
    ps: &[usize],
    out_dir: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<(Models, Vec<TrainingSummary>)> {
    let cfg = &setup.config;
    let sep = &cfg.separation;
    let plans = ps.iter().map(|&p| setup.full_plan(p)).collect::<Result<Vec<_>>>()?;
    let plan_refs: Vec<_> = plans.iter().collect();
    let (train_seeds, val_seeds) = split_seeds(cfg.seeds.train_phantoms, sep.n_train_sims, sep.n_val_sims);
    log(&format!("simulating {} training and {} validation phantoms", train_seeds.len(), val_seeds.len()));
    let train_pairs = build_pairs(setup, &train_seeds, &plan_refs).map_err(|e| e.in_stage("dataset"))?;
    let val_pairs = build_pairs(setup, &val_seeds, &plan_refs).map_err(|e| e.in_stage("dataset"))?;

    let mut models = Models::new();
    let mut summaries = Vec::new();
    for ((&p, tr), va) in ps.iter().zip(train_pairs).zip(val_pairs) {
        let train_set = Dataset::augmented(tr, setup.geometry.clone());
        let val_set = Dataset::augmented(va, setup.geometry.clone());
        let mut model = build_model::<f32>(&sep.arch, p, cfg.seeds.weights)?;
        log(&format!(
            "training P={p}: {} parameters, {} train / {} validation pairs",
            model.n_parameters(),
            train_set.len(),
            val_set.len()
        ));
        let val = (!val_set.is_empty()).then_some(&val_set);
        let history = train(&mut model, &train_set, val, &sep.train, |epoch, t, v| {
            log(&format!(
                "  P={p} epoch {epoch}: train {t:.5}{}",
                v.map(|v| format!(", val {v:.5}")).unwrap_or_default()
            ))
        })
        .map_err(|e| e.in_stage("train"))?;
        let (mut checkpoint, mut loss_csv) = (None, None);
        if let Some(dir) = out_dir {
            let ck = dir.join(format!("model_p{p}.usct"));
            save_model(&ck, &model, cfg.seeds.weights)?;
            let csv = dir.join(format!("loss_p{p}.csv"));
            write_loss_csv(&csv, &history)?;
            checkpoint = Some(ck);
            loss_csv = Some(csv);
        }
        summaries.push(TrainingSummary {
            p,
            n_parameters: model.n_parameters(),
            n_train_pairs: train_set.len(),
            n_val_pairs: val_set.len(),
            final_train_loss: history.train.last().copied(),
            final_val_loss: history.val.last().copied().flatten(),
            checkpoint,
            loss_csv,
        });
        models.insert(p, model);
    }
    Ok((models, summaries))
}

/// Loads `model_p{P}.usct` for each `P` from `dir`.
pub fn load_models(dir: &Path, ps: &[usize]) -> Result<Models> {
    let mut models = Models::new();
    for &p in ps {
        let path = dir.join(format!("model_p{p}.usct"));
        let m = load_model(&path).map_err(|e| e.in_stage("load checkpoint"))?;
        if m.n_outputs != p {
            return Err(Error::Config(format!(
                "{} separates {} transmitters, expected {p}",
                path.display(),
                m.n_outputs
            )));
        }
        models.insert(p, m);
    }
    Ok(models)
}

fn reference_name(plan: &FiringPlan) -> String {
    Variant {
        n: plan.n_iterations,
        p: 1,
        separation: false,
    }
    .name()
}

fn check_models(models: &Models, variants: &[Variant]) -> Result<()> {
    for v in variants {
        if v.separation && v.p > 1 && !models.contains_key(&v.p) {
            return Err(Error::Config(format!("no separation model for P={}", v.p)));
        }
    }
    Ok(())
}

/// Reference image plus one image and metric row per variant.
struct PhantomScores {
    reference: BModeImage,
    images: Vec<BModeImage>,
    metrics: Vec<PhantomMetrics>,
}

fn score_acquisition(
    setup: &Setup,
    models: &Models,
    seed: u64,
    acq: &Acquisition,
    reference_plan: &FiringPlan,
    variants: &[Variant],
    plans: &[FiringPlan],
) -> Result<PhantomScores> {
    let reference = setup
        .bmode(&acq.reference_frames(reference_plan)?)
        .map_err(|e| e.in_stage("reconstruct"))?;
    let mut images = Vec::with_capacity(variants.len());
    let mut metrics = Vec::with_capacity(variants.len());
    for (v, plan) in variants.iter().zip(plans) {
        let model = if v.separation && v.p > 1 { models.get(&v.p) } else { None };
        let frames = acq.variant_frames(plan, model).map_err(|e| e.in_stage("separate"))?;
        let truth = acq.matched_references(plan)?;
        let image = setup.bmode(&frames).map_err(|e| e.in_stage("reconstruct"))?;
        metrics.push(PhantomMetrics {
            seed,
            rf_mse: rf_mse(&frames, &truth)?,
            mssim: mssim(&image, &reference, MSSIM_WINDOW)?,
            psnr: psnr(&image, &reference)?,
        });
        images.push(image);
    }
    Ok(PhantomScores {
        reference,
        images,
        metrics,
    })
}

fn summarize(
    setup: &Setup,
    variants: &[Variant],
    plans: &[FiringPlan],
    reference_plan: &FiringPlan,
    per_variant: Vec<Vec<PhantomMetrics>>,
) -> Vec<VariantReport> {
    let cfg = &setup.config.simulation;
    let window = cfg.n_samples as f64 / cfg.sampling_rate;
    variants
        .iter()
        .zip(plans)
        .zip(per_variant)
        .map(|((v, plan), rows)| {
            let n = rows.len().max(1) as f64;
            let finite: Vec<f64> = rows
                .iter()
                .filter_map(|r| match r.psnr {
                    Psnr::Db(d) => Some(d),
                    Psnr::Identical => None,
                })
                .collect();
            VariantReport {
                name: v.name(),
                n: v.n,
                p: v.p,
                separation: v.separation,
                baseline: reference_name(reference_plan),
                total_waves: plan.total_waves(),
                imaging_time_s: plan.n_iterations as f64 * window,
                relative_imaging_time: plan.n_iterations as f64 / reference_plan.n_iterations as f64,
                rf_mse: rows.iter().map(|r| r.rf_mse).sum::<f64>() / n,
                mssim: rows.iter().map(|r| r.mssim).sum::<f64>() / n,
                psnr: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
                n_identical: rows.len() - finite.len(),
                per_phantom: rows,
            }
        })
        .collect()
}

/// Scores `variants` on already acquired phantoms, keyed by seed.
pub fn evaluate_acquisitions(
    setup: &Setup,
    models: &Models,
    acquisitions: &[(u64, Acquisition)],
    variants: &[Variant],
) -> Result<Vec<VariantReport>> {
    check_models(models, variants)?;
    let reference_plan = setup.reference_plan()?;
    let plans = variants.iter().map(|v| setup.plan(v.n, v.p)).collect::<Result<Vec<_>>>()?;
    let mut per_variant: Vec<Vec<PhantomMetrics>> = vec![Vec::new(); variants.len()];
    for (seed, acq) in acquisitions {
        let scores = score_acquisition(setup, models, *seed, acq, &reference_plan, variants, &plans)?;
        for (rows, m) in per_variant.iter_mut().zip(scores.metrics) {
            rows.push(m);
        }
    }
    Ok(summarize(setup, variants, &plans, &reference_plan, per_variant))
}

/// Simulates each phantom and scores `variants` against the sequential
/// reference. B-mode images of the first phantom go to `image_dir` when given.
pub fn evaluate_variants(
    setup: &Setup,
    models: &Models,
    seeds: &[u64],
    variants: &[Variant],
    image_dir: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<(Vec<VariantReport>, Vec<PathBuf>)> {
    check_models(models, variants)?;
    let reference_plan = setup.reference_plan()?;
    let plans = variants.iter().map(|v| setup.plan(v.n, v.p)).collect::<Result<Vec<_>>>()?;
    let mut all_plans: Vec<_> = plans.iter().collect();
    all_plans.push(&reference_plan);

    let mut per_variant: Vec<Vec<PhantomMetrics>> = vec![Vec::new(); variants.len()];
    let mut artifacts = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        log(&format!("evaluating phantom {}/{} (seed {seed})", i + 1, seeds.len()));
        let medium = setup.phantom(seed).map_err(|e| e.in_stage("phantom"))?;
        let acq = setup
            .acquire(&medium, &all_plans)
            .map_err(|e| e.in_stage("simulate"))?;
        let scores = score_acquisition(setup, models, seed, &acq, &reference_plan, variants, &plans)?;
        if let (0, Some(dir)) = (i, image_dir) {
            let path = dir.join("reference.png");
            save_bmode_image(&path, &scores.reference)?;
            artifacts.push(path);
            for (v, image) in variants.iter().zip(&scores.images) {
                let stem = file_stem(v);
                let png = dir.join(format!("{stem}.png"));
                save_bmode_image(&png, image)?;
                let usct = dir.join(format!("{stem}.usct"));
                save_bmode(&usct, image)?;
                artifacts.extend([png, usct]);
            }
        }
        for (rows, m) in per_variant.iter_mut().zip(scores.metrics) {
            rows.push(m);
        }
    }
    Ok((summarize(setup, variants, &plans, &reference_plan, per_variant), artifacts))
}

fn file_stem(v: &Variant) -> String {
    format!("n{}_p{}{}", v.n, v.p, if v.separation { "_sep" } else { "" })
}

/// Seeds of the evaluation phantoms.
pub fn eval_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.evaluation.n_phantoms as u64)
        .map(|i| config.seeds.phantom + i)
        .collect()
}

/// Runs training (or loads checkpoints) and evaluation, writing
/// `report.json`, `timings.json`, checkpoints, loss CSVs and images into
/// `out_dir`. Wall-clock timings are kept out of the report so that equal
/// configurations give byte-identical reports.
pub fn run_experiment(config: ExperimentConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    let setup = Setup::new(config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut timings = BTreeMap::new();
    let ps = setup.config.separated_parallelisms();

    let started = Instant::now();
    let (models, training) = match (&setup.config.separation.checkpoint_dir, ps.is_empty()) {
        (_, true) => (Models::new(), Vec::new()),
        (Some(dir), false) => (load_models(dir, &ps)?, Vec::new()),
        (None, false) => train_models(&setup, &ps, Some(out_dir), log)?,
    };
    timings.insert("train_s", started.elapsed().as_secs_f64());

    let started = Instant::now();
    let seeds = eval_seeds(&setup.config);
    let (variants, mut artifacts) = evaluate_variants(
        &setup,
        &models,
        &seeds,
        &setup.config.evaluation.variants,
        Some(out_dir),
        log,
    )?;
    timings.insert("evaluate_s", started.elapsed().as_secs_f64());

    for t in &training {
        artifacts.extend(t.checkpoint.iter().cloned());
        artifacts.extend(t.loss_csv.iter().cloned());
    }
    let report_path = out_dir.join("report.json");
    let timings_path = out_dir.join("timings.json");
    artifacts.push(report_path.clone());
    artifacts.push(timings_path.clone());
    let reference = setup.reference_plan()?;
    let report = ExperimentReport {
        config_hash: setup.config.hash(),
        reference: reference_name(&reference),
        config: setup.config.clone(),
        eval_seeds: seeds,
        training,
        variants,
        artifacts,
    };
    write_atomic(&report_path, report.to_json().as_bytes())?;
    let timings_json = serde_json::to_string_pretty(&timings)?;
    write_atomic(&timings_path, timings_json.as_bytes())?;
    Ok(report)
}
