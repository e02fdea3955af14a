use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::{backward_from_tape, reconstruct_with_tape, ModelParams};
use crate::sampling::SamplingMask;
use crate::tensor::{CoilMaps, ComplexGrid, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNorm {
    /// Complex modulus `|d|`.
    L1,
    /// Squared modulus `|d|²`.
    L2,
}

fn check(pred: &ComplexGrid, target: &ComplexGrid, m: &SamplingMask) -> Result<usize> {
    pred.check_same(target)?;
    let s = pred.shape();
    if m.dims() != (s.nx, s.ny, s.nt) {
        return Err(Error::shape("loss mask does not match k-space"));
    }
    match m.count() {
        0 => Err(Error::EmptyLossMask),
        n => Ok(n),
    }
}

/// Masked k-space loss, summed over coils at each sampled location and
/// divided by the number of sampled locations.
pub fn masked_loss(pred: &ComplexGrid, target: &ComplexGrid, m: &SamplingMask, norm: LossNorm) -> Result<f64> {
    masked_loss_grad(pred, target, m, norm).map(|(l, _)| l)
}

/// Loss value and its cotangent `∂L/∂pred` (real-pair convention).
pub fn masked_loss_grad(
    pred: &ComplexGrid,
    target: &ComplexGrid,
    m: &SamplingMask,
    norm: LossNorm,
) -> Result<(f64, ComplexGrid)> {
    let count = check(pred, target, m)? as f64;
    let nc = pred.shape().nc;
    let mut grad = ComplexGrid::zeros(pred.shape());
    let mut total = 0.0;
    let sampled = m.bits();
    for (i, ((p, t), g)) in pred.data().iter().zip(target.data()).zip(grad.data_mut()).enumerate() {
        if !sampled[i / nc] {
            continue;
        }
        let d = p - t;
        match norm {
            LossNorm::L1 => {
                let a = d.norm();
                total += a;
                if a > 0.0 {
                    *g = d / (a * count);
                }
            }
            LossNorm::L2 => {
                total += d.norm_sqr();
                *g = d * (2.0 / count);
            }
        }
    }
    Ok((total / count, grad))
}

/// One path of the self-supervised objective: reconstruct from
/// `(y_in, m_in)` and score the prediction on `m_loss` against `target`.
pub fn path_loss_grad(
    params: &ModelParams,
    y_in: &ComplexGrid,
    m_in: &SamplingMask,
    target: &ComplexGrid,
    m_loss: &SamplingMask,
    coils: &CoilMaps,
    norm: LossNorm,
) -> Result<(f64, ModelParams)> {
    if m_loss.count() == 0 {
        return Err(Error::EmptyLossMask);
    }
    let (pred, tape) = reconstruct_with_tape(params, y_in, m_in, coils)?;
    let (loss, cot) = masked_loss_grad(&pred, target, m_loss, norm)?;
    let grad = backward_from_tape(params, &tape, m_in, coils, &cot)?;
    Ok((loss, grad))
}

/// Cross-consistency loss: each subset reconstructs the other through the
/// same network, weighted ½ per direction.
pub fn cross_loss(
    params: &ModelParams,
    y1: &ComplexGrid,
    y2: &ComplexGrid,
    my1: &SamplingMask,
    my2: &SamplingMask,
    coils: &CoilMaps,
    norm: LossNorm,
) -> Result<f64> {
    cross_loss_grad(params, y1, y2, my1, my2, coils, norm).map(|(l, _)| l)
}

pub fn cross_loss_grad(
    params: &ModelParams,
    y1: &ComplexGrid,
    y2: &ComplexGrid,
    my1: &SamplingMask,
    my2: &SamplingMask,
    coils: &CoilMaps,
    norm: LossNorm,
) -> Result<(f64, ModelParams)> {
    if my1.count() == 0 || my2.count() == 0 {
        return Err(Error::EmptyLossMask);
    }
    let (l12, g12) = path_loss_grad(params, y1, my1, y2, my2, coils, norm)?;
    let (l21, g21) = path_loss_grad(params, y2, my2, y1, my1, coils, norm)?;
    let mut grad = ModelParams::zeros(params.config);
    grad.add_scaled(0.5, &g12);
    grad.add_scaled(0.5, &g21);
    Ok((0.5 * l12 + 0.5 * l21, grad))
}

/// `m ⊙ g`, broadcast over coils.
pub fn apply_mask(g: &ComplexGrid, m: &SamplingMask) -> ComplexGrid {
    let nc = g.shape().nc;
    let mut out = g.clone();
    let zero = C64::new(0.0, 0.0);
    out.data_mut().chunks_mut(nc).zip(m.bits()).filter(|(_, &b)| !b).for_each(|(c, _)| c.fill(zero));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::tensor::Shape;
    use rand::Rng;

    #[test]
    fn identical_prediction_is_zero() {
        let mut rng = rng_from(0);
        let t = ComplexGrid::random(Shape::new(4, 4, 2, 2), &mut rng);
        let m = SamplingMask::from_fn((4, 4, 2), |x, y, _| (x + y) % 2 == 0);
        let masked = apply_mask(&t, &m);
        for norm in [LossNorm::L1, LossNorm::L2] {
            assert_eq!(masked_loss(&t, &masked, &m, norm).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_point_modulus() {
        let s = Shape::new(2, 2, 1, 1);
        let mut pred = ComplexGrid::zeros(s);
        pred.set(1, 0, 0, 0, C64::new(3.0, 4.0));
        let mut m = SamplingMask::zeros((2, 2, 1));
        m.set(1, 0, 0, true);
        let target = ComplexGrid::zeros(s);
        assert_eq!(masked_loss(&pred, &target, &m, LossNorm::L1).unwrap(), 5.0);
        assert_eq!(masked_loss(&pred, &target, &m, LossNorm::L2).unwrap(), 25.0);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = rng_from(1);
        let s = Shape::new(2, 2, 2, 1);
        let p = ComplexGrid::random(s, &mut rng);
        let t = ComplexGrid::random(s, &mut rng);
        let m = SamplingMask::ones((2, 2, 2));
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for i in 0..8 {
            let (a, b) = (p.data()[i], t.data()[i]);
            let (dr, di) = (a.re - b.re, a.im - b.im);
            l1 += (dr * dr + di * di).sqrt();
            l2 += dr * dr + di * di;
        }
        assert!((masked_loss(&p, &t, &m, LossNorm::L1).unwrap() - l1 / 8.0).abs() < 1e-12);
        assert!((masked_loss(&p, &t, &m, LossNorm::L2).unwrap() - l2 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let g = ComplexGrid::zeros(Shape::new(2, 2, 1, 1));
        let r = masked_loss(&g, &g, &SamplingMask::zeros((2, 2, 1)), LossNorm::L1);
        assert!(matches!(r, Err(Error::EmptyLossMask)));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = rng_from(2);
        let s = Shape::new(3, 3, 1, 2);
        let p = ComplexGrid::random(s, &mut rng);
        let t = ComplexGrid::random(s, &mut rng);
        let m = SamplingMask::from_fn((3, 3, 1), |_, _, _| rng.random_bool(0.6));
        for norm in [LossNorm::L1, LossNorm::L2] {
            let (_, g) = masked_loss_grad(&p, &t, &m, norm).unwrap();
            for i in 0..p.len() {
                for dir in [C64::new(1e-6, 0.0), C64::new(0.0, 1e-6)] {
                    let mut up = p.clone();
                    up.data_mut()[i] += dir;
                    let mut dn = p.clone();
                    dn.data_mut()[i] -= dir;
                    let fd = (masked_loss(&up, &t, &m, norm).unwrap() - masked_loss(&dn, &t, &m, norm).unwrap()) / 2e-6;
                    let an = if dir.re != 0.0 { g.data()[i].re } else { g.data()[i].im };
                    assert!((fd - an).abs() < 1e-6, "{norm:?} {i}: {fd} vs {an}");
                }
            }
        }
    }
}
