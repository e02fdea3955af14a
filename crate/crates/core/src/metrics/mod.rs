//! Image-quality metrics on magnitude images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ComplexGrid;

mod aggregate;

pub use aggregate::{summarize, Summary, Welford};

/// Real image over `(x, y, t)`, row-major like [`ComplexGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeImage {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub data: Vec<f64>,
}

impl MagnitudeImage {
    pub fn new(nx: usize, ny: usize, nt: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny * nt {
            return Err(Error::shape(format!("{} values for a {nx}x{ny}x{nt} image", data.len())));
        }
        Ok(MagnitudeImage { nx, ny, nt, data })
    }

    /// Root-sum-of-squares over coils.
    pub fn from_grid(g: &ComplexGrid) -> Self {
        let s = g.shape();
        let data = g.data().chunks(s.nc).map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).collect();
        MagnitudeImage { nx: s.nx, ny: s.ny, nt: s.nt, data }
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> f64 {
        self.data[(x * self.ny + y) * self.nt + t]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Frame `t` as a single-frame image.
    pub fn frame(&self, t: usize) -> MagnitudeImage {
        let data = (0..self.nx * self.ny).map(|p| self.data[p * self.nt + t]).collect();
        MagnitudeImage { nx: self.nx, ny: self.ny, nt: 1, data }
    }

    fn check_same(&self, other: &MagnitudeImage) -> Result<()> {
        if (self.nx, self.ny, self.nt) != (other.nx, other.ny, other.nt) {
            return Err(Error::shape("images differ in shape"));
        }
        if self.data.is_empty() {
            return Err(Error::EmptyAxis);
        }
        Ok(())
    }
}

/// Mean squared difference over all pixels and frames.
pub fn mse(a: &MagnitudeImage, b: &MagnitudeImage) -> Result<f64> {
    a.check_same(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log10(peak² / mse)` in dB, with `peak` defaulting to the largest
/// reference value. Identical images give `+∞`.
pub fn psnr(pred: &MagnitudeImage, reference: &MagnitudeImage, peak: Option<f64>) -> Result<f64> {
    let m = mse(pred, reference)?;
    Ok(psnr_from_mse(m, peak.unwrap_or_else(|| reference.max())))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd window side length.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 7, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

/// Normalized 2D Gaussian window, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    (0..size * size).map(|k| g[k / size] * g[k % size] / total).collect()
}

/// Windowed SSIM per 2D frame over all fully contained windows, averaged
/// over windows and frames. The dynamic range is `max − min` over both
/// images (1 if both are constant and equal).
pub fn ssim(a: &MagnitudeImage, b: &MagnitudeImage, params: SsimParams) -> Result<f64> {
    let per_frame = ssim_frames(a, b, params)?;
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

pub fn ssim_frames(a: &MagnitudeImage, b: &MagnitudeImage, params: SsimParams) -> Result<Vec<f64>> {
    a.check_same(b)?;
    let range = a.max().max(b.max()) - a.min().min(b.min());
    let range = if range > 0.0 { range } else { 1.0 };
    (0..a.nt).map(|t| ssim_frame(a, b, t, range, params)).collect()
}

fn ssim_frame(a: &MagnitudeImage, b: &MagnitudeImage, t: usize, range: f64, params: SsimParams) -> Result<f64> {
    let k = params.window;
    if k == 0 || k.is_multiple_of(2) || !(params.sigma > 0.0) {
        return Err(Error::invalid("SSIM window must be odd with positive width"));
    }
    if a.nx < k || a.ny < k {
        return Err(Error::shape(format!("{}x{} frame is smaller than the {k}x{k} window", a.nx, a.ny)));
    }
    let w = gaussian_window(k, params.sigma);
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for x0 in 0..=a.nx - k {
        for y0 in 0..=a.ny - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = w[i * k + j];
                    let (u, v) = (a.get(x0 + i, y0 + j, t), b.get(x0 + i, y0 + j, t));
                    ma += wt * u;
                    mb += wt * v;
                    saa += wt * u * u;
                    sbb += wt * v * v;
                    sab += wt * u * v;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-frame quality of one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub frame: usize,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub peak: f64,
}

/// One record per frame; peak and dynamic range are taken over the whole
/// reference volume.
pub fn frame_metrics(run_id: &str, pred: &MagnitudeImage, reference: &MagnitudeImage) -> Result<Vec<MetricRecord>> {
    pred.check_same(reference)?;
    let peak = reference.max();
    let ssims = ssim_frames(pred, reference, SsimParams::default())?;
    (0..pred.nt)
        .map(|t| {
            let m = mse(&pred.frame(t), &reference.frame(t))?;
            Ok(MetricRecord {
                run_id: run_id.to_string(),
                frame: t,
                mse: m,
                psnr_db: psnr_from_mse(m, peak),
                ssim: ssims[t],
                peak,
            })
        })
        .collect()
}
