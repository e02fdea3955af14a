//! Complex grids over `(x, y, t, coil)`, centered unitary FFTs and the
//! multi-coil Cartesian forward model.
//!
//! Layout is row-major over `(nx, ny, nt, nc)`: the coil index varies
//! fastest. k-space is stored with DC at the grid center (`n / 2` on each
//! transformed axis), which is also where masks put their calibration band.

mod fft;
mod ops;
mod phantom;

pub use fft::{fft_centered, ifft_centered, Axis};
pub use ops::{adjoint_op, coil_combine, coil_expand, forward_op, normal_op};
pub use phantom::{make_coils, make_phantom, CoilMaps, COIL_SMOOTHNESS};

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

pub type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub nc: usize,
}

impl Shape {
    pub const fn new(nx: usize, ny: usize, nt: usize, nc: usize) -> Self {
        Shape { nx, ny, nt, nc }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nt * self.nc
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `(x, y, t)` locations, i.e. the shape of a mask over it.
    pub const fn locations(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, t: usize, c: usize) -> usize {
        ((x * self.ny + y) * self.nt + t) * self.nc + c
    }

    pub const fn with_coils(self, nc: usize) -> Self {
        Shape { nc, ..self }
    }

    pub const fn with_frames(self, nt: usize) -> Self {
        Shape { nt, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.nx, self.ny, self.nt, self.nc]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.nx, self.ny, self.nt, self.nc)
    }
}

/// Dense complex array over `(x, y, t, coil)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    shape: Shape,
    data: Vec<C64>,
}

impl ComplexGrid {
    pub fn zeros(shape: Shape) -> Self {
        ComplexGrid { shape, data: vec![C64::new(0.0, 0.0); shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<C64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!("data length {} does not match shape {shape}", data.len())));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("grid contains non-finite entries"));
        }
        Ok(ComplexGrid { shape, data })
    }

    pub(crate) fn from_vec_unchecked(shape: Shape, data: Vec<C64>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        ComplexGrid { shape, data }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for x in 0..shape.nx {
            for y in 0..shape.ny {
                for t in 0..shape.nt {
                    for c in 0..shape.nc {
                        data.push(f(x, y, t, c));
                    }
                }
            }
        }
        ComplexGrid { shape, data }
    }

    /// Circularly-symmetric standard complex normal entries (variance 1/2
    /// per real component).
    pub fn random(shape: Shape, rng: &mut Rng) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let data = (0..shape.len())
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(s * re, s * im)
            })
            .collect();
        ComplexGrid { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize, c: usize) -> C64 {
        self.data[self.shape.index(x, y, t, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, t: usize, c: usize, v: C64) {
        let i = self.shape.index(x, y, t, c);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self, other⟩ = Σ conj(self_i) · other_i`.
    pub fn inner(&self, other: &ComplexGrid) -> Result<C64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn check_same(&self, other: &ComplexGrid) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: C64, other: &ComplexGrid) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(z, o)| *z += a * o);
        Ok(())
    }

    pub fn sub(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        self.check_same(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(ComplexGrid { shape: self.shape, data })
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> ComplexGrid {
        ComplexGrid { shape: self.shape, data: self.data.iter().map(|&z| f(z)).collect() }
    }

    /// Magnitudes as a real array in the same layout.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    /// Extracts a single frame `t` as an `(nx, ny, 1, nc)` grid.
    pub fn frame(&self, t: usize) -> ComplexGrid {
        let s = self.shape;
        ComplexGrid::from_fn(s.with_frames(1), |x, y, _, c| self.get(x, y, t, c))
    }
}
