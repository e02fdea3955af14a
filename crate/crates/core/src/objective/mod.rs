//! Losses, the optimizer and the self-supervised training loop.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::{reconstruct, ModelConfig, ModelParams};
use crate::sampling::{draw_initial_mask, input_subset, re_undersample, SamplingMask, SamplingPlan};
use crate::seed::{self, Rng};
use crate::tensor::{CoilMaps, ComplexGrid};

mod adam;
mod loss;

pub use adam::Adam;
pub use loss::{apply_mask, cross_loss, cross_loss_grad, masked_loss, masked_loss_grad, path_loss_grad, LossNorm};

pub const DEFAULT_LR: f64 = 4e-4;
pub const DEFAULT_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `M_2`-masked loss on the reconstruction from subset 1.
    Single,
    /// Both directions between subsets 1 and 2, weighted ½ each.
    Cross,
    /// Reference mode: input is the acquisition, target is the full k-space.
    Supervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStop {
    pub enabled: bool,
    pub patience: usize,
    /// Evaluate the held-out subset every `every` steps.
    pub every: usize,
    pub val_subset_index: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop { enabled: false, patience: 10, every: 25, val_subset_index: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub plan: SamplingPlan,
    pub loss_kind: LossKind,
    #[serde(default = "default_norm")]
    pub norm: LossNorm,
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub early_stop: EarlyStop,
    #[serde(default)]
    pub model: ModelConfig,
    /// Scale of the initial output convolution; small values start the
    /// network close to pure data consistency.
    #[serde(default = "default_gain")]
    pub init_gain: f64,
}

fn default_norm() -> LossNorm {
    LossNorm::L1
}
fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_batch() -> usize {
    1
}
fn default_gain() -> f64 {
    DEFAULT_INIT_GAIN
}

impl TrainConfig {
    pub fn new(plan: SamplingPlan, loss_kind: LossKind, steps: usize, seed: u64) -> Self {
        TrainConfig {
            plan,
            loss_kind,
            norm: LossNorm::L1,
            steps,
            lr: DEFAULT_LR,
            batch: 1,
            seed,
            early_stop: EarlyStop::default(),
            model: ModelConfig::default(),
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch != 1 {
            return Err(Error::invalid("only batch = 1 is supported"));
        }
        if self.loss_kind == LossKind::Cross && self.plan.subsets != 2 {
            return Err(Error::invalid("cross loss needs exactly 2 subsets"));
        }
        if self.early_stop.enabled {
            let es = &self.early_stop;
            if self.plan.subsets != 3 {
                return Err(Error::invalid("early stopping needs a third, held-out subset"));
            }
            if es.val_subset_index < 2 || es.val_subset_index >= self.plan.subsets || es.every == 0 || es.patience == 0
            {
                return Err(Error::invalid("bad early-stop settings"));
            }
        }
        if !(self.init_gain >= 0.0 && self.init_gain.is_finite()) {
            return Err(Error::invalid("init gain must be non-negative"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One training example: fully sampled multi-coil k-space plus its coil maps.
/// A prospective acquisition supplies `acquired`; otherwise `M_Y` is drawn.
#[derive(Debug, Clone)]
pub struct Subject {
    pub kspace: ComplexGrid,
    pub coils: CoilMaps,
    pub acquired: Option<SamplingMask>,
}

impl Subject {
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.kspace.shape();
        (s.nx, s.ny, s.nt)
    }
}

/// Everything random about one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub subject: usize,
    pub acquired: SamplingMask,
    pub subsets: Vec<SamplingMask>,
}

fn draw_for(config: &TrainConfig, subject: &Subject, rng: &mut Rng) -> Result<(SamplingMask, Vec<SamplingMask>)> {
    let my = match &subject.acquired {
        Some(m) => m.clone(),
        None => draw_initial_mask(&config.plan, subject.dims(), rng)?,
    };
    let subsets = match config.loss_kind {
        LossKind::Supervised => Vec::new(),
        _ => re_undersample(&my, &config.plan, rng)?,
    };
    Ok((my, subsets))
}

/// Recomputes the draws of step `step`. Each step owns its own stream, so
/// this does not depend on earlier steps.
pub fn draw_step(config: &TrainConfig, data: &[Subject], step: usize) -> Result<StepDraw> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut rng = seed::rng(config.seed, "train-step", step as u64);
    let subject = rng.random_range(0..data.len());
    let (acquired, subsets) = draw_for(config, &data[subject], &mut rng)?;
    Ok(StepDraw { subject, acquired, subsets })
}

/// Loss and gradient for one drawn step.
pub fn step_loss_grad(
    config: &TrainConfig,
    params: &ModelParams,
    subject: &Subject,
    my: &SamplingMask,
    subsets: &[SamplingMask],
) -> Result<(f64, ModelParams)> {
    let y0 = &subject.kspace;
    let coils = &subject.coils;
    match config.loss_kind {
        LossKind::Supervised => {
            let full = SamplingMask::ones(my.dims());
            path_loss_grad(params, &apply_mask(y0, my), my, y0, &full, coils, config.norm)
        }
        LossKind::Single => {
            let (m1, m2) = (&subsets[0], &subsets[1]);
            path_loss_grad(params, &apply_mask(y0, m1), m1, &apply_mask(y0, m2), m2, coils, config.norm)
        }
        LossKind::Cross => {
            let (m1, m2) = (&subsets[0], &subsets[1]);
            cross_loss_grad(params, &apply_mask(y0, m1), &apply_mask(y0, m2), m1, m2, coils, config.norm)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub logs: Vec<StepLog>,
    pub params: ModelParams,
    /// Master seed; step `s` draws from stream `("train-step", s)`.
    pub seed: u64,
    /// `(step, loss)` of each held-out evaluation.
    pub validation: Vec<(usize, f64)>,
    pub stopped_at: Option<usize>,
    pub wall_ms: f64,
}

/// Held-out loss: reconstruct from subset 1 and score on the validation
/// subset, averaged over subjects.
pub fn validation_loss(config: &TrainConfig, params: &ModelParams, data: &[Subject]) -> Result<f64> {
    let k = config.early_stop.val_subset_index;
    let mut total = 0.0;
    for (i, subject) in data.iter().enumerate() {
        let mut rng = seed::rng(config.seed, "validation", i as u64);
        let (_, subsets) = draw_for(config, subject, &mut rng)?;
        let (m1, mv) = (&subsets[0], &subsets[k]);
        let pred = reconstruct(params, &apply_mask(&subject.kspace, m1), m1, &subject.coils)?;
        total += masked_loss(&pred, &apply_mask(&subject.kspace, mv), mv, config.norm)?;
    }
    Ok(total / data.len() as f64)
}

pub fn initial_params(config: &TrainConfig) -> Result<ModelParams> {
    ModelParams::init(config.model, config.init_gain, &mut seed::rng(config.seed, "init", 0))
}

pub fn train(config: &TrainConfig, data: &[Subject]) -> Result<TrainRun> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let start = Instant::now();
    let mut params = initial_params(config)?;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), config.lr);
    let mut logs = Vec::with_capacity(config.steps);
    let mut validation = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut bad = 0;
    let mut stopped_at = None;

    for step in 0..config.steps {
        let t0 = Instant::now();
        let draw = draw_step(config, data, step)?;
        if config.plan.is_disjoint() && draw.subsets.len() >= 2 && draw.subsets[0].overlap(&draw.subsets[1]) != 0 {
            return Err(Error::invalid(format!("input and loss subsets overlap at step {step}")));
        }
        let (loss, grad) = step_loss_grad(config, &params, &data[draw.subject], &draw.acquired, &draw.subsets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let g = grad.to_flat();
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.step(&mut flat, &g);
        params.set_flat(&flat)?;
        params.project();
        flat = params.to_flat();
        logs.push(StepLog { step, loss, grad_norm, lr: config.lr, wall_ms: t0.elapsed().as_secs_f64() * 1e3 });

        let es = &config.early_stop;
        if es.enabled && (step + 1) % es.every == 0 {
            let v = validation_loss(config, &params, data)?;
            validation.push((step, v));
            match &best {
                Some((b, _)) if v >= *b => bad += 1,
                _ => {
                    best = Some((v, params.clone()));
                    bad = 0;
                }
            }
            if bad >= es.patience {
                stopped_at = Some(step);
                break;
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok(TrainRun {
        logs,
        params,
        seed: config.seed,
        validation,
        stopped_at,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Re-undersample the acquisition as in training, then reconstruct.
    Id,
    /// Reconstruct directly from the acquisition.
    Ood,
}

pub fn infer(
    params: &ModelParams,
    y: &ComplexGrid,
    my: &SamplingMask,
    coils: &CoilMaps,
    scenario: Scenario,
    plan: &SamplingPlan,
    rng: &mut Rng,
) -> Result<ComplexGrid> {
    match scenario {
        Scenario::Ood => reconstruct(params, y, my, coils),
        Scenario::Id => {
            let m1 = input_subset(my, plan, rng)?;
            reconstruct(params, &apply_mask(y, &m1), &m1, coils)
        }
    }
}

#[cfg(test)]
mod tests;
