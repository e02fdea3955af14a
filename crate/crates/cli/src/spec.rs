use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssrecon::objective::{EarlyStop, LossKind, LossNorm, Scenario, TrainConfig};
use ssrecon::recon::ModelConfig;
use ssrecon::sampling::{preset, SamplingPlan, ABLATION_VARIANTS};
use ssrecon::seed;

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// Training subjects.
    pub subjects: usize,
    /// Held-out subjects used by `eval` and `ablate`.
    pub eval_subjects: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec { nx: 24, ny: 24, nt: 4, subjects: 4, eval_subjects: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoilSpec {
    pub count: usize,
}

impl Default for CoilSpec {
    fn default() -> Self {
        CoilSpec { count: 2 }
    }
}

/// Training settings; the sampling plan and seed come from the enclosing
/// spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    /// Defaults to `cross` for the `units-cross` preset, `single` otherwise.
    pub loss_kind: Option<LossKind>,
    pub norm: LossNorm,
    pub steps: usize,
    pub lr: f64,
    pub model: ModelConfig,
    pub init_gain: f64,
    /// Defaults to enabled exactly when the plan holds out a third subset.
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            loss_kind: None,
            norm: LossNorm::L1,
            steps: 300,
            lr: 2e-3,
            model: ModelConfig { unrolls: 3, channels: 4, spatial_kernel: 5, temporal_kernel: 3 },
            init_gain: ssrecon::objective::DEFAULT_INIT_GAIN,
            early_stop: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPoint {
    pub scenario: Scenario,
    pub r: f64,
    /// Fixed disjoint re-undersampling ratio for `id`; the training plan's
    /// split is used when absent.
    #[serde(default)]
    pub ratio: Option<f64>,
}

impl EvalPoint {
    pub fn label(&self) -> String {
        let s = match self.scenario {
            Scenario::Id => "ID",
            Scenario::Ood => "OOD",
        };
        match self.ratio {
            Some(q) => format!("{s}-R{}-{q}", self.r),
            None => format!("{s}-R{}", self.r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub variants: Vec<String>,
    pub conditions: Vec<EvalPoint>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            variants: ABLATION_VARIANTS.iter().map(|s| s.to_string()).collect(),
            conditions: vec![
                EvalPoint { scenario: Scenario::Id, r: 8.0, ratio: Some(0.4) },
                EvalPoint { scenario: Scenario::Ood, r: 8.0, ratio: None },
                EvalPoint { scenario: Scenario::Ood, r: 12.0, ratio: None },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub k_trials: u64,
    pub k_grid: Vec<f64>,
    pub variance_trials: u64,
    pub sigmas: Vec<f64>,
    pub theorem_steps: usize,
    pub theorem_probes: usize,
    pub theorem_lr: f64,
    pub theorem_loss: LossKind,
    pub unbiasedness_trials: u64,
    /// Constant added to the oracle by `--debug-inject-bias`.
    pub injected_bias: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            k_trials: 1_000_000,
            k_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            variance_trials: 100_000,
            sigmas: vec![0.1, 1.0, 10.0],
            theorem_steps: 200_000,
            theorem_probes: 300,
            theorem_lr: 1.0,
            theorem_loss: LossKind::Single,
            unbiasedness_trials: 200_000,
            injected_bias: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub out: PathBuf,
    pub phantom: PhantomSpec,
    pub coils: CoilSpec,
    pub preset: String,
    /// Overrides `preset` when given.
    pub plan: Option<SamplingPlan>,
    pub train: TrainSpec,
    pub eval: Vec<EvalPoint>,
    pub ablation: AblationSpec,
    pub verify: VerifySpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seed: 0,
            out: PathBuf::from("out"),
            phantom: PhantomSpec::default(),
            coils: CoilSpec::default(),
            preset: "units-base".into(),
            plan: None,
            train: TrainSpec::default(),
            eval: [8.0, 12.0, 16.0]
                .into_iter()
                .map(|r| EvalPoint { scenario: Scenario::Ood, r, ratio: None })
                .collect(),
            ablation: AblationSpec::default(),
            verify: VerifySpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| CliError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Spec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.plan()?;
        let p = &self.phantom;
        if p.nx < 8 || p.ny < 8 || p.nt == 0 || p.subjects == 0 || p.eval_subjects == 0 {
            return Err(CliError::Spec("phantom needs nx, ny >= 8 and at least one frame and subject".into()));
        }
        if self.coils.count == 0 {
            return Err(CliError::Spec("at least one coil".into()));
        }
        for e in self.eval.iter().chain(&self.ablation.conditions) {
            if !(e.r >= 1.0) {
                return Err(CliError::Spec(format!("eval acceleration {} must be >= 1", e.r)));
            }
            if let Some(q) = e.ratio {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(CliError::Spec(format!("eval ratio {q} outside (0, 1]")));
                }
            }
        }
        for v in &self.ablation.variants {
            preset(v)?;
        }
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn plan(&self) -> Result<SamplingPlan> {
        match &self.plan {
            Some(p) => {
                p.validate()?;
                Ok(p.clone())
            }
            None => Ok(preset(&self.preset)?),
        }
    }

    /// Training configuration for `preset_name` (or the spec's own plan when
    /// `None`), seeded from the master seed.
    pub fn train_config_for(&self, preset_name: Option<&str>) -> Result<TrainConfig> {
        let (plan, name) = match preset_name {
            Some(n) => (preset(n)?, n),
            None => (self.plan()?, self.preset.as_str()),
        };
        let t = &self.train;
        let loss_kind = t.loss_kind.unwrap_or(if name == "units-cross" { LossKind::Cross } else { LossKind::Single });
        let early_stop = t.early_stop.unwrap_or(EarlyStop { enabled: plan.subsets == 3, ..EarlyStop::default() });
        Ok(TrainConfig {
            plan,
            loss_kind,
            norm: t.norm,
            steps: t.steps,
            lr: t.lr,
            batch: 1,
            seed: seed::derive(self.seed, "train", 0),
            early_stop,
            model: t.model,
            init_gain: t.init_gain,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        self.train_config_for(None)
    }
}
