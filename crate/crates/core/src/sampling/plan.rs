use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clip applied to every randomized ratio so that the draw stays
/// strictly inside `(0, 1)`.
pub const RATIO_EPS: f64 = 0.02;

/// Redraws allowed when a re-undersampled subset comes out empty.
pub const EMPTY_SUBSET_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    Fixed,
    PerStepRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Acceleration {
    Fixed { r: f64 },
    UniformInteger { min: u32, max: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityProfile {
    Uniform,
    /// `p_i ∝ exp(-|k|² / 2w²)` in normalized k-space units, rescaled to the
    /// target mean density.
    Gaussian {
        width: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskFamily {
    BernoulliPointwise {
        profile: DensityProfile,
    },
    /// Variable-density ky×t line sampler with a constant per-frame line
    /// budget and golden-ratio temporal offsets.
    LineCartesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RatioDist {
    Fixed { value: f64 },
    Uniform { min: f64, max: f64 },
}

impl RatioDist {
    pub fn fixed(value: f64) -> Self {
        RatioDist::Fixed { value }
    }

    pub fn uniform(min: f64, max: f64) -> Self {
        RatioDist::Uniform { min, max }
    }

    /// Interval a uniform draw actually covers after clipping.
    pub fn clipped_bounds(&self) -> (f64, f64) {
        match *self {
            RatioDist::Fixed { value } => (value, value),
            RatioDist::Uniform { min, max } => (min.max(RATIO_EPS), max.min(1.0 - RATIO_EPS)),
        }
    }

    fn validate(&self, open: bool) -> Result<()> {
        let ok = |v: f64| if open { v > 0.0 && v < 1.0 } else { (0.0..=1.0).contains(&v) };
        match *self {
            RatioDist::Fixed { value } if !ok(value) => {
                Err(Error::invalid(format!("ratio {value} outside {}", if open { "(0, 1)" } else { "[0, 1]" })))
            }
            RatioDist::Uniform { min, max } if !(min < max) || max <= RATIO_EPS || min >= 1.0 - RATIO_EPS => {
                Err(Error::invalid(format!("empty ratio interval ({min}, {max})")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Resplit {
    /// `M_1` takes a ratio of the acquired points; the other subsets
    /// partition the rest (`M_2 = M_Y \ M_1` for two subsets).
    Disjoint { ratio: RatioDist },
    /// Each acquired location joins each subset by an independent Bernoulli
    /// trial; the input subset uses `input`, every other subset `loss`.
    Independent { input: RatioDist, loss: RatioDist },
}

/// Declarative description of initial- and re-undersampling randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub initial_seed_mode: SeedMode,
    /// Seed of the initial mask in fixed mode and of the split in fixed
    /// re-split mode.
    #[serde(default)]
    pub initial_seed: u64,
    pub acceleration: Acceleration,
    pub mask_family: MaskFamily,
    pub acs_lines: usize,
    pub resplit: Resplit,
    #[serde(default = "per_step")]
    pub resplit_seed_mode: SeedMode,
    pub subsets: usize,
    #[serde(default)]
    pub holdout_validation: bool,
    /// Share of the non-calibration acquired points held out for validation
    /// when `holdout_validation` is set.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn per_step() -> SeedMode {
    SeedMode::PerStepRandom
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        match self.acceleration {
            Acceleration::Fixed { r } if !(r >= 1.0) => {
                return Err(Error::invalid(format!("acceleration R = {r} must be >= 1")))
            }
            Acceleration::UniformInteger { min, max } if min < 1 || max < min => {
                return Err(Error::invalid(format!("acceleration range [{min}, {max}] invalid")))
            }
            _ => {}
        }
        if !(2..=3).contains(&self.subsets) {
            return Err(Error::invalid(format!("subsets must be 2 or 3, got {}", self.subsets)));
        }
        if self.holdout_validation != (self.subsets == 3) {
            return Err(Error::invalid("holdout validation requires exactly three subsets"));
        }
        if self.holdout_validation && !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0, 1)"));
        }
        match self.resplit {
            Resplit::Disjoint { ratio } => ratio.validate(false)?,
            Resplit::Independent { input, loss } => {
                input.validate(true)?;
                loss.validate(true)?;
            }
        }
        if let MaskFamily::BernoulliPointwise { profile: DensityProfile::Gaussian { width } } = self.mask_family {
            if !(width > 0.0) {
                return Err(Error::invalid("density profile width must be positive"));
            }
        }
        Ok(())
    }

    pub fn is_disjoint(&self) -> bool {
        matches!(self.resplit, Resplit::Disjoint { .. })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let plan: SamplingPlan = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }
}

pub const PRESETS: [&str; 8] =
    ["units-fix", "rand-init-seed", "rand-ratio", "independent-mask", "units-base", "units-cross", "ssdu", "zs-ssl"];

/// The five stochasticity-ablation variants in increasing order of
/// randomness.
pub const ABLATION_VARIANTS: [&str; 5] =
    ["units-fix", "rand-init-seed", "rand-ratio", "independent-mask", "units-base"];

/// Default seed for fixed-mode initial masks.
pub const FIXED_MASK_SEED: u64 = 0x5eed;

/// Named sampling configurations.
///
/// `units-cross` shares its plan with `units-base`; it differs only in the
/// loss. `ssdu` and `units-fix` describe the same sampling: one fixed mask,
/// one fixed complementary split at ratio 0.4.
pub fn preset(name: &str) -> Result<SamplingPlan> {
    let fixed_r8 = Acceleration::Fixed { r: 8.0 };
    let random_ratio = RatioDist::uniform(0.0, 1.0);
    let base = SamplingPlan {
        initial_seed_mode: SeedMode::PerStepRandom,
        initial_seed: FIXED_MASK_SEED,
        acceleration: fixed_r8,
        mask_family: MaskFamily::LineCartesian,
        acs_lines: 4,
        resplit: Resplit::Disjoint { ratio: RatioDist::fixed(0.4) },
        resplit_seed_mode: SeedMode::PerStepRandom,
        subsets: 2,
        holdout_validation: false,
        validation_fraction: default_validation_fraction(),
    };
    let plan = match name {
        "units-fix" | "ssdu" => {
            SamplingPlan { initial_seed_mode: SeedMode::Fixed, resplit_seed_mode: SeedMode::Fixed, ..base }
        }
        "rand-init-seed" => base,
        "rand-ratio" => SamplingPlan { resplit: Resplit::Disjoint { ratio: random_ratio }, ..base },
        "independent-mask" => {
            SamplingPlan { resplit: Resplit::Independent { input: random_ratio, loss: random_ratio }, ..base }
        }
        "units-base" | "units-cross" => SamplingPlan {
            acceleration: Acceleration::UniformInteger { min: 2, max: 16 },
            resplit: Resplit::Independent { input: random_ratio, loss: random_ratio },
            ..base
        },
        "zs-ssl" => SamplingPlan {
            initial_seed_mode: SeedMode::Fixed,
            resplit_seed_mode: SeedMode::Fixed,
            subsets: 3,
            holdout_validation: true,
            ..base
        },
        _ => {
            return Err(Error::UnknownPreset { name: name.to_string(), valid: PRESETS.join(", ") });
        }
    };
    debug_assert!(plan.validate().is_ok());
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_fix_row() {
        let p = preset("units-fix").unwrap();
        assert_eq!(p.initial_seed_mode, SeedMode::Fixed);
        assert_eq!(p.acceleration, Acceleration::Fixed { r: 8.0 });
        assert_eq!(p.resplit, Resplit::Disjoint { ratio: RatioDist::fixed(0.4) });
        assert_eq!(p.subsets, 2);
    }

    #[test]
    fn units_base_row() {
        let p = preset("units-base").unwrap();
        assert_eq!(p.initial_seed_mode, SeedMode::PerStepRandom);
        assert_eq!(p.acceleration, Acceleration::UniformInteger { min: 2, max: 16 });
        let Resplit::Independent { input, loss } = p.resplit else { panic!("expected independent") };
        assert_eq!(input.clipped_bounds(), (RATIO_EPS, 1.0 - RATIO_EPS));
        assert_eq!(loss, input);
    }

    #[test]
    fn ablation_rows_add_randomness_step_by_step() {
        let plans: Vec<_> = ABLATION_VARIANTS.iter().map(|n| preset(n).unwrap()).collect();
        assert_eq!(plans[1].initial_seed_mode, SeedMode::PerStepRandom);
        assert_eq!(plans[1].resplit, plans[0].resplit);
        assert!(matches!(plans[2].resplit, Resplit::Disjoint { ratio: RatioDist::Uniform { .. } }));
        assert!(!plans[3].is_disjoint());
        assert_eq!(plans[3].acceleration, Acceleration::Fixed { r: 8.0 });
        assert!(matches!(plans[4].acceleration, Acceleration::UniformInteger { .. }));
    }

    #[test]
    fn zs_ssl_has_holdout() {
        let p = preset("zs-ssl").unwrap();
        assert_eq!(p.subsets, 3);
        assert!(p.holdout_validation);
        assert!(p.is_disjoint());
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let err = preset("noise2noise").unwrap_err().to_string();
        for name in PRESETS {
            assert!(err.contains(name));
        }
    }

    #[test]
    fn independent_mode_rejects_degenerate_ratios() {
        let mut p = preset("independent-mask").unwrap();
        p.resplit = Resplit::Independent { input: RatioDist::fixed(1.0), loss: RatioDist::fixed(1.0) };
        assert!(p.validate().is_err());
        p.resplit = Resplit::Independent { input: RatioDist::fixed(0.5), loss: RatioDist::fixed(0.0) };
        assert!(p.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        for name in PRESETS {
            let p = preset(name).unwrap();
            let text = p.to_toml().unwrap();
            assert_eq!(SamplingPlan::from_toml(&text).unwrap(), p, "{text}");
        }
    }
}
