use super::fft::transform_in_place;
use super::{Axis, CoilMaps, ComplexGrid, C64};
use crate::error::{Error, Result};
use crate::sampling::SamplingMask;

const XY: [Axis; 2] = [Axis::X, Axis::Y];

fn check_image(image: &ComplexGrid, coils: &CoilMaps) -> Result<()> {
    let (s, cs) = (image.shape(), coils.grid().shape());
    if s.nc != 1 {
        return Err(Error::shape(format!("image must have a single coil channel, got {s}")));
    }
    if (s.nx, s.ny) != (cs.nx, cs.ny) {
        return Err(Error::shape(format!("image {s} vs coil maps {cs}")));
    }
    Ok(())
}

fn check_mask(kshape: super::Shape, mask: &SamplingMask) -> Result<()> {
    if mask.dims() != (kshape.nx, kshape.ny, kshape.nt) {
        let (mx, my, mt) = mask.dims();
        return Err(Error::shape(format!("mask {mx}x{my}x{mt} vs k-space {kshape}")));
    }
    Ok(())
}

/// Multiplies a single-channel image by each coil map.
pub fn coil_expand(image: &ComplexGrid, coils: &CoilMaps) -> Result<ComplexGrid> {
    check_image(image, coils)?;
    let nc = coils.num_coils();
    let s = image.shape().with_coils(nc);
    let cg = coils.grid();
    Ok(ComplexGrid::from_fn(s, |x, y, t, c| cg.get(x, y, 0, c) * image.get(x, y, t, 0)))
}

/// `Σ_c conj(coil_c) · g_c`, the adjoint of [`coil_expand`].
pub fn coil_combine(g: &ComplexGrid, coils: &CoilMaps) -> Result<ComplexGrid> {
    let (s, cs) = (g.shape(), coils.grid().shape());
    if (s.nx, s.ny, s.nc) != (cs.nx, cs.ny, cs.nc) {
        return Err(Error::shape(format!("multi-coil grid {s} vs coil maps {cs}")));
    }
    let cg = coils.grid();
    let out = s.with_coils(1);
    Ok(ComplexGrid::from_fn(out, |x, y, t, _| (0..s.nc).map(|c| cg.get(x, y, 0, c).conj() * g.get(x, y, t, c)).sum()))
}

fn apply_mask(g: &mut ComplexGrid, mask: &SamplingMask) {
    let nc = g.shape().nc;
    let zero = C64::new(0.0, 0.0);
    for (chunk, &keep) in g.data_mut().chunks_mut(nc).zip(mask.bits()) {
        if !keep {
            chunk.iter_mut().for_each(|z| *z = zero);
        }
    }
}

/// `A x = M ⊙ F(C x)`.
pub fn forward_op(image: &ComplexGrid, coils: &CoilMaps, mask: &SamplingMask) -> Result<ComplexGrid> {
    check_mask(image.shape(), mask)?;
    let mut k = coil_expand(image, coils)?;
    transform_in_place(&mut k, &XY, false)?;
    apply_mask(&mut k, mask);
    Ok(k)
}

/// `A^H k = Σ_c conj(C_c) F⁻¹(M ⊙ k_c)`.
pub fn adjoint_op(kspace: &ComplexGrid, coils: &CoilMaps, mask: &SamplingMask) -> Result<ComplexGrid> {
    check_mask(kspace.shape(), mask)?;
    let mut k = kspace.clone();
    apply_mask(&mut k, mask);
    transform_in_place(&mut k, &XY, true)?;
    coil_combine(&k, coils)
}

/// `A^H A x`.
pub fn normal_op(image: &ComplexGrid, coils: &CoilMaps, mask: &SamplingMask) -> Result<ComplexGrid> {
    adjoint_op(&forward_op(image, coils, mask)?, coils, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::tensor::{fft_centered, ifft_centered, make_coils, Shape};
    use rand::Rng;

    fn random_mask(nx: usize, ny: usize, nt: usize, rng: &mut crate::seed::Rng) -> SamplingMask {
        SamplingMask::from_fn((nx, ny, nt), |_, _, _| rng.random_bool(0.4))
    }

    #[test]
    fn zero_in_zero_out() {
        let coils = make_coils(8, 8, 2, 1).unwrap();
        let mask = SamplingMask::ones((8, 8, 2));
        let k = forward_op(&ComplexGrid::zeros(Shape::new(8, 8, 2, 1)), &coils, &mask).unwrap();
        assert_eq!(k.norm(), 0.0);
        let x = adjoint_op(&ComplexGrid::zeros(Shape::new(8, 8, 2, 2)), &coils, &mask).unwrap();
        assert_eq!(x.norm(), 0.0);
    }

    #[test]
    fn single_uniform_coil_full_mask_is_plain_fft() {
        let mut rng = rng_from(1);
        let coils = make_coils(8, 6, 1, 0).unwrap();
        let mask = SamplingMask::ones((8, 6, 3));
        let x = ComplexGrid::random(Shape::new(8, 6, 3, 1), &mut rng);
        let a = forward_op(&x, &coils, &mask).unwrap();
        let f = fft_centered(&x, &[Axis::X, Axis::Y]).unwrap();
        assert!(a.sub(&f).unwrap().norm() < 1e-12);
        let ah = adjoint_op(&f, &coils, &mask).unwrap();
        let fi = ifft_centered(&f, &[Axis::X, Axis::Y]).unwrap();
        assert!(ah.sub(&fi).unwrap().norm() < 1e-12);
    }

    #[test]
    fn adjointness_on_random_draws() {
        let mut rng = rng_from(42);
        for draw in 0..20 {
            let coils = make_coils(12, 10, 3, draw).unwrap();
            let mask = random_mask(12, 10, 4, &mut rng);
            let x = ComplexGrid::random(Shape::new(12, 10, 4, 1), &mut rng);
            let y = ComplexGrid::random(Shape::new(12, 10, 4, 3), &mut rng);
            let lhs = forward_op(&x, &coils, &mask).unwrap().inner(&y).unwrap();
            let rhs = x.inner(&adjoint_op(&y, &coils, &mask).unwrap()).unwrap();
            assert!((lhs - rhs).norm() < 1e-8, "draw {draw}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn normal_operator_is_psd() {
        let mut rng = rng_from(9);
        let coils = make_coils(8, 8, 2, 4).unwrap();
        for _ in 0..10 {
            let mask = random_mask(8, 8, 2, &mut rng);
            let x = ComplexGrid::random(Shape::new(8, 8, 2, 1), &mut rng);
            let q = x.inner(&normal_op(&x, &coils, &mask).unwrap()).unwrap();
            assert!(q.re >= -1e-12);
            assert!(q.im.abs() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let coils = make_coils(8, 8, 2, 0).unwrap();
        let x = ComplexGrid::zeros(Shape::new(8, 8, 2, 1));
        assert!(forward_op(&x, &coils, &SamplingMask::ones((8, 8, 3))).is_err());
        let x2 = ComplexGrid::zeros(Shape::new(8, 8, 2, 2));
        assert!(forward_op(&x2, &coils, &SamplingMask::ones((8, 8, 2))).is_err());
    }
}
