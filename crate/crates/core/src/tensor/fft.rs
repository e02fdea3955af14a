use std::cell::RefCell;

use rustfft::FftPlanner;

use super::{ComplexGrid, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centered, unitary FFT along the given spatial axes.
pub fn fft_centered(g: &ComplexGrid, axes: &[Axis]) -> Result<ComplexGrid> {
    transform(g, axes, false)
}

/// Inverse of [`fft_centered`].
pub fn ifft_centered(g: &ComplexGrid, axes: &[Axis]) -> Result<ComplexGrid> {
    transform(g, axes, true)
}

fn transform(g: &ComplexGrid, axes: &[Axis], inverse: bool) -> Result<ComplexGrid> {
    let mut out = g.clone();
    transform_in_place(&mut out, axes, inverse)?;
    Ok(out)
}

pub(crate) fn transform_in_place(g: &mut ComplexGrid, axes: &[Axis], inverse: bool) -> Result<()> {
    let s = g.shape();
    if s.nx == 0 || s.ny == 0 {
        return Err(Error::EmptyAxis);
    }
    if s.nt == 0 || s.nc == 0 {
        return Ok(());
    }
    for &axis in axes {
        let (n, stride, outer): (usize, usize, Vec<usize>) = match axis {
            Axis::X => {
                let stride = s.ny * s.nt * s.nc;
                (s.nx, stride, (0..stride).collect())
            }
            Axis::Y => {
                let stride = s.nt * s.nc;
                let bases = (0..s.nx).flat_map(|x| (0..stride).map(move |r| x * s.ny * stride + r)).collect();
                (s.ny, stride, bases)
            }
        };
        let fft = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        });
        let norm = 1.0 / (n as f64).sqrt();
        let mut line = vec![C64::new(0.0, 0.0); n];
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let data = g.data_mut();
        for base in outer {
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[base + k * stride];
            }
            // ifftshift, transform, fftshift
            line.rotate_left(n / 2);
            fft.process_with_scratch(&mut line, &mut scratch);
            line.rotate_left(n - n / 2);
            for (k, v) in line.iter().enumerate() {
                data[base + k * stride] = v * norm;
            }
        }
    }
    Ok(())
}
