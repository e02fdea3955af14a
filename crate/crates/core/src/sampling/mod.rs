//! Initial undersampling masks, re-undersampling into subsets, and the
//! named sampling presets.

mod mask;
mod plan;

pub use mask::{effective_mask, SamplingMask};
pub use plan::{
    preset, Acceleration, DensityProfile, MaskFamily, RatioDist, Resplit, SamplingPlan, SeedMode, ABLATION_VARIANTS,
    EMPTY_SUBSET_RETRIES, FIXED_MASK_SEED, PRESETS, RATIO_EPS,
};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Golden-ratio conjugate used to rotate line positions between frames.
const GOLDEN: f64 = 0.618_033_988_749_894_9;
/// Width of the ky density profile of the line sampler, in normalized units.
const LINE_DENSITY_WIDTH: f64 = 0.5;

/// Central ky rows forming a calibration band of `width` lines.
pub fn acs_band(ny: usize, width: usize) -> std::ops::Range<usize> {
    let start = (ny / 2).saturating_sub(width / 2);
    start..(start + width).min(ny)
}

fn norm_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
    }
}

fn draw_ratio(dist: RatioDist, rng: &mut Rng) -> f64 {
    match dist {
        RatioDist::Fixed { value } => value,
        RatioDist::Uniform { .. } => {
            let (lo, hi) = dist.clipped_bounds();
            rng.random_range(lo..hi)
        }
    }
}

fn draw_acceleration(acc: Acceleration, rng: &mut Rng) -> Result<f64> {
    match acc {
        Acceleration::Fixed { r } if r >= 1.0 => Ok(r),
        Acceleration::Fixed { r } => Err(Error::invalid(format!("acceleration R = {r} must be >= 1"))),
        Acceleration::UniformInteger { min, max } if min >= 1 && max >= min => {
            Ok(f64::from(rng.random_range(min..=max)))
        }
        Acceleration::UniformInteger { min, max } => {
            Err(Error::invalid(format!("acceleration range [{min}, {max}] invalid")))
        }
    }
}

/// Draws `M_Y` according to `plan`. Returns the mask and the acceleration
/// rate it was drawn at.
pub fn draw_initial_mask_with_rate(
    plan: &SamplingPlan,
    dims: (usize, usize, usize),
    rng: &mut Rng,
) -> Result<(SamplingMask, f64)> {
    let mut fixed;
    let rng = match plan.initial_seed_mode {
        SeedMode::Fixed => {
            fixed = seed::rng(plan.initial_seed, "initial-mask", 0);
            &mut fixed
        }
        SeedMode::PerStepRandom => rng,
    };
    let r = draw_acceleration(plan.acceleration, rng)?;
    let mask = match plan.mask_family {
        MaskFamily::LineCartesian => line_mask(dims, r, plan.acs_lines, rng)?,
        MaskFamily::BernoulliPointwise { profile } => bernoulli_mask(dims, r, profile, plan.acs_lines, rng)?,
    };
    Ok((mask, r))
}

pub fn draw_initial_mask(plan: &SamplingPlan, dims: (usize, usize, usize), rng: &mut Rng) -> Result<SamplingMask> {
    draw_initial_mask_with_rate(plan, dims, rng).map(|(m, _)| m)
}

/// Pointwise Bernoulli mask with mean density `1/r` plus a fully sampled
/// central band of `acs` ky rows.
pub fn bernoulli_mask(
    (nx, ny, nt): (usize, usize, usize),
    r: f64,
    profile: DensityProfile,
    acs: usize,
    rng: &mut Rng,
) -> Result<SamplingMask> {
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("acceleration R = {r} must be >= 1")));
    }
    if acs > ny {
        return Err(Error::invalid(format!("ACS band of {acs} lines exceeds ky extent {ny}")));
    }
    let target = 1.0 / r;
    let weight = |x: usize, y: usize| match profile {
        DensityProfile::Uniform => 1.0,
        DensityProfile::Gaussian { width } => {
            let (u, v) = (norm_coord(x, nx), norm_coord(y, ny));
            (-(u * u + v * v) / (2.0 * width * width)).exp()
        }
    };
    let weights: Vec<f64> = (0..nx).flat_map(|x| (0..ny).map(move |y| (x, y))).map(|(x, y)| weight(x, y)).collect();
    // scale so that mean(min(1, s·w)) = target
    let mean_at = |s: f64| weights.iter().map(|w| (s * w).min(1.0)).sum::<f64>() / weights.len() as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_at(hi) < target && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = hi;
    let band = acs_band(ny, acs);
    Ok(SamplingMask::from_fn((nx, ny, nt), |x, y, _| {
        let p = (scale * weights[x * ny + y]).min(1.0);
        band.contains(&y) || rng.random_bool(p)
    }))
}

/// Variable-density Cartesian ky×t line mask.
///
/// Each frame acquires `round(ny / r)` full readout lines (all kx). Up to
/// half of that budget goes to the central calibration band (capped at
/// `acs` lines); the rest is placed by inverse-CDF sampling of a Gaussian ky
/// density at jittered quantiles that rotate by the golden ratio from frame
/// to frame.
pub fn line_mask((nx, ny, nt): (usize, usize, usize), r: f64, acs: usize, rng: &mut Rng) -> Result<SamplingMask> {
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("acceleration R = {r} must be >= 1")));
    }
    if acs > ny {
        return Err(Error::invalid(format!("ACS band of {acs} lines exceeds ky extent {ny}")));
    }
    let budget = ((ny as f64 / r).round() as usize).clamp(1, ny.max(1));
    let acs_eff = acs.min(budget / 2);
    let band = acs_band(ny, acs_eff);
    let candidates: Vec<usize> = (0..ny).filter(|y| !band.contains(y)).collect();
    let n_rand = budget - band.len();

    let weights: Vec<f64> = candidates
        .iter()
        .map(|&y| {
            let v = norm_coord(y, ny);
            (-v * v / (2.0 * LINE_DENSITY_WIDTH * LINE_DENSITY_WIDTH)).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();

    let offset: f64 = rng.random();
    let mut lines = vec![vec![false; ny]; nt];
    for (t, frame) in lines.iter_mut().enumerate() {
        band.clone().for_each(|y| frame[y] = true);
        let mut taken = vec![false; candidates.len()];
        for j in 0..n_rand {
            let jitter: f64 = rng.random_range(-0.35..0.35);
            let q = (offset + GOLDEN * t as f64 + (j as f64 + 0.5 + jitter) / n_rand as f64).fract();
            let mut idx = cdf.partition_point(|&c| c < q).min(candidates.len() - 1);
            if taken[idx] {
                idx = nearest_free(&taken, idx);
            }
            taken[idx] = true;
            frame[candidates[idx]] = true;
        }
    }
    Ok(SamplingMask::from_fn((nx, ny, nt), |_, y, t| lines[t][y]))
}

fn nearest_free(taken: &[bool], from: usize) -> usize {
    for d in 1..taken.len() {
        if from + d < taken.len() && !taken[from + d] {
            return from + d;
        }
        if d <= from && !taken[from - d] {
            return from - d;
        }
    }
    from
}

/// Splits the acquired set `my` into `plan.subsets` masks `M_1 … M_L`.
///
/// In disjoint mode, calibration-band locations always go to the input
/// subset `M_1`; with a held-out validation subset, `M_3` takes
/// `validation_fraction` of the remaining points first. In independent mode
/// every acquired location is an independent Bernoulli trial per subset.
pub fn re_undersample(my: &SamplingMask, plan: &SamplingPlan, rng: &mut Rng) -> Result<Vec<SamplingMask>> {
    draw_subsets(my, plan, rng, |masks| masks.iter().all(|m| m.count() > 0))
}

/// Draws only the input subset `M_1`, as used by in-distribution inference.
/// Other subsets may come out empty without triggering a redraw.
pub fn input_subset(my: &SamplingMask, plan: &SamplingPlan, rng: &mut Rng) -> Result<SamplingMask> {
    let mut masks = draw_subsets(my, plan, rng, |masks| masks[0].count() > 0)?;
    Ok(masks.swap_remove(0))
}

fn draw_subsets(
    my: &SamplingMask,
    plan: &SamplingPlan,
    rng: &mut Rng,
    accept: impl Fn(&[SamplingMask]) -> bool,
) -> Result<Vec<SamplingMask>> {
    if my.count() == 0 {
        return Err(Error::invalid("cannot re-undersample an empty acquisition"));
    }
    let mut fixed;
    let rng = match plan.resplit_seed_mode {
        SeedMode::Fixed => {
            fixed = seed::rng(plan.initial_seed, "resplit", 0);
            &mut fixed
        }
        SeedMode::PerStepRandom => rng,
    };
    for _ in 0..=EMPTY_SUBSET_RETRIES {
        let masks = match plan.resplit {
            Resplit::Disjoint { ratio } => split_disjoint(my, plan, draw_ratio(ratio, rng), rng),
            Resplit::Independent { input, loss } => {
                let ratios: Vec<f64> =
                    (0..plan.subsets).map(|l| draw_ratio(if l == 0 { input } else { loss }, rng)).collect();
                split_independent(my, &ratios, rng)
            }
        };
        if accept(&masks) {
            return Ok(masks);
        }
    }
    Err(Error::EmptySubset { retries: EMPTY_SUBSET_RETRIES })
}

fn split_disjoint(my: &SamplingMask, plan: &SamplingPlan, q: f64, rng: &mut Rng) -> Vec<SamplingMask> {
    let bands = calibration_bands(my, plan.acs_lines);
    let (_, ny, nt) = my.dims();
    let on_band = |i: usize| bands[i % nt].contains(&((i / nt) % ny));
    let (calib, mut free): (Vec<usize>, Vec<usize>) = my.sampled().partition(|&i| on_band(i));
    free.shuffle(rng);

    let mut masks = vec![SamplingMask::zeros(my.dims()); plan.subsets];
    let mut rest = &free[..];
    if plan.holdout_validation {
        let n_val = (plan.validation_fraction * rest.len() as f64).round() as usize;
        rest[..n_val].iter().for_each(|&i| masks[2].set_index(i, true));
        rest = &rest[n_val..];
    }
    let n_in = (q * rest.len() as f64).round() as usize;
    calib.iter().chain(&rest[..n_in]).for_each(|&i| masks[0].set_index(i, true));
    rest[n_in..].iter().for_each(|&i| masks[1].set_index(i, true));
    masks
}

/// Per-frame calibration band of an acquisition, capped at half of the
/// acquired ky rows as in [`line_mask`].
fn calibration_bands(my: &SamplingMask, acs: usize) -> Vec<std::ops::Range<usize>> {
    let (nx, ny, nt) = my.dims();
    (0..nt)
        .map(|t| {
            let rows = (0..ny).filter(|&y| (0..nx).any(|x| my.get(x, y, t))).count();
            acs_band(ny, acs.min(rows / 2))
        })
        .collect()
}

fn split_independent(my: &SamplingMask, ratios: &[f64], rng: &mut Rng) -> Vec<SamplingMask> {
    let mut masks = vec![SamplingMask::zeros(my.dims()); ratios.len()];
    for i in my.sampled() {
        for (m, &q) in masks.iter_mut().zip(ratios) {
            if rng.random_bool(q) {
                m.set_index(i, true);
            }
        }
    }
    masks
}
