//! The reconstruction operator: a small physics-based unrolled network with
//! a hand-written reverse pass, plus a mask-keyed linear model family.
//!
//! Each unroll applies a complex regularizer and then a gradient-descent
//! data-consistency step,
//!
//! ```text
//! z     = x − R_u(x)
//! x_new = z − η_u · Aᴴ(A z − y)
//! ```
//!
//! starting from the zero-filled image `x₀ = Aᴴ y`. The regularizer `R_u` is
//! spatial conv (1→C) · temporal conv (C→C) · modReLU · spatial conv (C→1) ·
//! temporal conv (1→1). The network returns the full predicted multi-coil
//! k-space `F(C x_U)`; losses select entries with masks.

mod checkpoint;
mod layers;
mod linear;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use layers::{modrelu_backward, modrelu_forward, Feat, SpatialConv, TemporalConv};
pub use linear::{linear_predict, vector_grid, LinearLookupModel, LinearPrediction};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SamplingMask;
use crate::seed::Rng;
use crate::tensor::{adjoint_op, coil_expand, fft_centered, normal_op, Axis, CoilMaps, ComplexGrid, Shape, C64};

/// Smallest data-consistency step kept after an optimizer update.
pub const MIN_DC_STEP: f64 = 1e-3;
/// Any intermediate image whose norm exceeds this multiple of the
/// zero-filled input norm is treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub unrolls: usize,
    pub channels: usize,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { unrolls: 6, channels: 4, spatial_kernel: 5, temporal_kernel: 3 }
    }
}

impl ModelConfig {
    fn layers(&self) -> (SpatialConv, TemporalConv, SpatialConv, TemporalConv) {
        let (c, ks, kt) = (self.channels, self.spatial_kernel, self.temporal_kernel);
        (
            SpatialConv { cin: 1, cout: c, k: ks },
            TemporalConv { cin: c, cout: c, k: kt },
            SpatialConv { cin: c, cout: 1, k: ks },
            TemporalConv { cin: 1, cout: 1, k: kt },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.spatial_kernel.is_multiple_of(2) || self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::invalid("channels must be positive and kernel sizes odd"));
        }
        Ok(())
    }
}

/// Parameters of one unroll.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollParams {
    pub spatial_in: Vec<C64>,
    pub temporal_in: Vec<C64>,
    pub bias: Vec<f64>,
    pub spatial_out: Vec<C64>,
    pub temporal_out: Vec<C64>,
    pub dc_step: f64,
}

impl UnrollParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (s1, t1, s2, t2) = cfg.layers();
        let z = C64::new(0.0, 0.0);
        UnrollParams {
            spatial_in: vec![z; s1.weight_len()],
            temporal_in: vec![z; t1.weight_len()],
            bias: vec![0.0; cfg.channels],
            spatial_out: vec![z; s2.weight_len()],
            temporal_out: vec![z; t2.weight_len()],
            dc_step: 0.0,
        }
    }

    fn complex_blocks(&self) -> [&Vec<C64>; 4] {
        [&self.spatial_in, &self.temporal_in, &self.spatial_out, &self.temporal_out]
    }

    fn complex_blocks_mut(&mut self) -> [&mut Vec<C64>; 4] {
        [&mut self.spatial_in, &mut self.temporal_in, &mut self.spatial_out, &mut self.temporal_out]
    }
}

/// Parameters of the unrolled network. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub unrolls: Vec<UnrollParams>,
}

impl ModelParams {
    /// All-zero parameters; as a gradient buffer or as a "regularizer off,
    /// no DC" model.
    pub fn zeros(config: ModelConfig) -> Self {
        ModelParams { config, unrolls: (0..config.unrolls).map(|_| UnrollParams::zeros(&config)).collect() }
    }

    /// Regularizer weights zero, DC steps set to `eta`.
    pub fn dc_only(config: ModelConfig, eta: f64) -> Self {
        let mut p = Self::zeros(config);
        p.unrolls.iter_mut().for_each(|u| u.dc_step = eta);
        p
    }

    /// Complex Glorot-style init: real and imaginary parts drawn
    /// independently with variance `1 / (2 · fan_in)`, so each complex weight
    /// has variance `1 / fan_in`. The output stage is scaled by `out_gain`
    /// to start close to plain gradient descent. Biases start at zero and DC
    /// steps at 1.
    pub fn init(config: ModelConfig, out_gain: f64, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (s1, t1, s2, t2) = config.layers();
        let mut draw = |n: usize, fan_in: usize, gain: f64| -> Vec<C64> {
            let sd = gain / (2.0 * fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(sd * re, sd * im)
                })
                .collect()
        };
        let unrolls = (0..config.unrolls)
            .map(|_| UnrollParams {
                spatial_in: draw(s1.weight_len(), s1.cin * s1.k * s1.k, 1.0),
                temporal_in: draw(t1.weight_len(), t1.cin * t1.k, 1.0),
                bias: vec![0.0; config.channels],
                spatial_out: draw(s2.weight_len(), s2.cin * s2.k * s2.k, out_gain),
                temporal_out: draw(t2.weight_len(), t2.cin * t2.k, 1.0),
                dc_step: 1.0,
            })
            .collect();
        Ok(ModelParams { config, unrolls })
    }

    /// Number of real scalars (complex weights count twice).
    pub fn num_real_params(&self) -> usize {
        self.unrolls
            .iter()
            .map(|u| 2 * u.complex_blocks().iter().map(|b| b.len()).sum::<usize>() + u.bias.len() + 1)
            .sum()
    }

    /// Flattens to real scalars: per unroll, the four complex blocks as
    /// `(re, im)` pairs, then biases, then the DC step.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_real_params());
        for u in &self.unrolls {
            for block in u.complex_blocks() {
                block.iter().for_each(|z| out.extend([z.re, z.im]));
            }
            out.extend(&u.bias);
            out.push(u.dc_step);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_real_params() {
            return Err(Error::shape(format!("{} scalars for {} parameters", flat.len(), self.num_real_params())));
        }
        let mut it = flat.iter().copied();
        for u in &mut self.unrolls {
            for block in u.complex_blocks_mut() {
                block.iter_mut().for_each(|z| *z = C64::new(it.next().unwrap(), it.next().unwrap()));
            }
            u.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
            u.dc_step = it.next().unwrap();
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Keeps every DC step at or above [`MIN_DC_STEP`].
    pub fn project(&mut self) {
        self.unrolls.iter_mut().for_each(|u| u.dc_step = u.dc_step.max(MIN_DC_STEP));
    }

    /// `self += a · other`, elementwise over all scalars.
    pub fn add_scaled(&mut self, a: f64, other: &ModelParams) {
        for (u, o) in self.unrolls.iter_mut().zip(&other.unrolls) {
            for (dst, src) in u.complex_blocks_mut().into_iter().zip(o.complex_blocks()) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * a);
            }
            u.bias.iter_mut().zip(&o.bias).for_each(|(d, s)| *d += a * s);
            u.dc_step += a * o.dc_step;
        }
    }
}

/// Intermediates of one unroll kept for the reverse pass.
struct UnrollTape {
    x: Feat,
    s1: Feat,
    h1: Feat,
    act: Feat,
    s2: Feat,
    residual: ComplexGrid,
}

/// Forward intermediates of a full reconstruction.
pub struct Tape {
    unrolls: Vec<UnrollTape>,
}

fn to_feat(g: &ComplexGrid) -> Feat {
    let s = g.shape();
    Feat::from_image(s.nx, s.ny, s.nt, g.data().to_vec())
}

/// Full-mask multi-coil k-space of an image, `F(C x)`.
pub fn coil_kspace(image: &ComplexGrid, coils: &CoilMaps) -> Result<ComplexGrid> {
    fft_centered(&coil_expand(image, coils)?, &[Axis::X, Axis::Y])
}

/// Image from full multi-coil k-space, `Cᴴ F⁻¹ k`.
pub fn coil_image(kspace: &ComplexGrid, coils: &CoilMaps) -> Result<ComplexGrid> {
    let s = kspace.shape();
    adjoint_op(kspace, coils, &SamplingMask::ones((s.nx, s.ny, s.nt)))
}

fn check_input(params: &ModelParams, y_in: &ComplexGrid, m_in: &SamplingMask, coils: &CoilMaps) -> Result<()> {
    let s = y_in.shape();
    if params.unrolls.len() != params.config.unrolls {
        return Err(Error::invalid("unroll count does not match the model config"));
    }
    if s.nc != coils.num_coils() || (s.nx, s.ny) != coils.spatial() {
        return Err(Error::shape(format!("k-space {s} vs coil maps {}", coils.grid().shape())));
    }
    if m_in.dims() != (s.nx, s.ny, s.nt) {
        return Err(Error::shape("input mask does not match k-space"));
    }
    Ok(())
}

/// Runs the unrolled network and returns the full predicted k-space.
pub fn reconstruct(
    params: &ModelParams,
    y_in: &ComplexGrid,
    m_in: &SamplingMask,
    coils: &CoilMaps,
) -> Result<ComplexGrid> {
    reconstruct_with_tape(params, y_in, m_in, coils).map(|(k, _)| k)
}

/// Like [`reconstruct`] but also returns the final image and the tape needed
/// by [`backward_from_tape`].
pub fn reconstruct_with_tape(
    params: &ModelParams,
    y_in: &ComplexGrid,
    m_in: &SamplingMask,
    coils: &CoilMaps,
) -> Result<(ComplexGrid, Tape)> {
    check_input(params, y_in, m_in, coils)?;
    let (s1, t1, s2, t2) = params.config.layers();
    let x0 = adjoint_op(y_in, coils, m_in)?;
    let cap = DIVERGENCE_FACTOR * x0.norm();
    let mut x = x0.clone();
    let mut tape = Tape { unrolls: Vec::with_capacity(params.unrolls.len()) };
    for (u, p) in params.unrolls.iter().enumerate() {
        let xf = to_feat(&x);
        let a1 = s1.forward(&p.spatial_in, &xf);
        let h1 = t1.forward(&p.temporal_in, &a1);
        let act = modrelu_forward(&p.bias, &h1);
        let a2 = s2.forward(&p.spatial_out, &act);
        let reg = t2.forward(&p.temporal_out, &a2);
        let mut z = x.clone();
        z.data_mut().iter_mut().zip(&reg.data).for_each(|(zi, r)| *zi -= r);
        let mut residual = normal_op(&z, coils, m_in)?;
        residual.axpy(C64::new(-1.0, 0.0), &x0)?;
        let mut next = z.clone();
        next.axpy(C64::new(-p.dc_step, 0.0), &residual)?;
        let n = next.norm();
        if !n.is_finite() || n > cap.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence { unroll: u });
        }
        tape.unrolls.push(UnrollTape { x: xf, s1: a1, h1, act, s2: a2, residual });
        x = next;
    }
    let k = coil_kspace(&x, coils)?;
    if !k.is_finite() {
        return Err(Error::Divergence { unroll: params.unrolls.len() });
    }
    Ok((k, tape))
}

/// Reverse pass given `∂L/∂pred_k` (real-pair convention).
pub fn backward_from_tape(
    params: &ModelParams,
    tape: &Tape,
    m_in: &SamplingMask,
    coils: &CoilMaps,
    cotangent: &ComplexGrid,
) -> Result<ModelParams> {
    let (s1, t1, s2, t2) = params.config.layers();
    let mut grad = ModelParams::zeros(params.config);
    let mut g = coil_image(cotangent, coils)?;
    for (u, (p, t)) in params.unrolls.iter().zip(&tape.unrolls).enumerate().rev() {
        let gu = &mut grad.unrolls[u];
        // x_new = z − η (N z − x₀)
        gu.dc_step = -g.inner(&t.residual)?.re;
        let mut g_z = g.clone();
        g_z.axpy(C64::new(-p.dc_step, 0.0), &normal_op(&g, coils, m_in)?)?;
        // z = x − R(x)
        let mut g_reg = to_feat(&g_z);
        g_reg.data.iter_mut().for_each(|v| *v = -*v);
        let g_a2 = t2.backward(&p.temporal_out, &t.s2, &g_reg, &mut gu.temporal_out);
        let g_act = s2.backward(&p.spatial_out, &t.act, &g_a2, &mut gu.spatial_out);
        let g_h1 = modrelu_backward(&p.bias, &t.h1, &g_act, &mut gu.bias);
        let g_a1 = t1.backward(&p.temporal_in, &t.s1, &g_h1, &mut gu.temporal_in);
        let g_x = s1.backward(&p.spatial_in, &t.x, &g_a1, &mut gu.spatial_in);
        let mut next = g_z;
        next.data_mut().iter_mut().zip(&g_x.data).for_each(|(a, b)| *a += b);
        g = next;
    }
    Ok(grad)
}

/// Exact gradient of a real loss w.r.t. all parameters, given the loss
/// cotangent on the predicted k-space.
pub fn backward(
    params: &ModelParams,
    y_in: &ComplexGrid,
    m_in: &SamplingMask,
    coils: &CoilMaps,
    loss_cotangent: &ComplexGrid,
) -> Result<ModelParams> {
    let (k, tape) = reconstruct_with_tape(params, y_in, m_in, coils)?;
    k.check_same(loss_cotangent)?;
    backward_from_tape(params, &tape, m_in, coils, loss_cotangent)
}

/// Estimates `‖Aᴴ A‖₂` by power iteration.
pub fn normal_op_norm(coils: &CoilMaps, mask: &SamplingMask, iters: usize, rng: &mut Rng) -> Result<f64> {
    let (nx, ny, nt) = mask.dims();
    let mut v = ComplexGrid::random(Shape::new(nx, ny, nt, 1), rng);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let n = v.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v.scale(C64::new(1.0 / n, 0.0));
        let w = normal_op(&v, coils, mask)?;
        lambda = v.inner(&w)?.re;
        v = w;
    }
    Ok(lambda)
}

/// Central finite differences of `loss` w.r.t. the flat real parameters at
/// `indices` (see [`ModelParams::to_flat`]).
pub fn finite_difference(
    params: &ModelParams,
    indices: &[usize],
    h: f64,
    mut loss: impl FnMut(&ModelParams) -> Result<f64>,
) -> Result<Vec<f64>> {
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let mut flat = base.clone();
        flat[i] = base[i] + h;
        probe.set_flat(&flat)?;
        let up = loss(&probe)?;
        flat[i] = base[i] - h;
        probe.set_flat(&flat)?;
        let down = loss(&probe)?;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Relative disagreement used by gradient checks:
/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[cfg(test)]
mod tests;
