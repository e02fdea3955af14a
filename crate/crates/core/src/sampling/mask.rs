use crate::error::{Error, Result};

/// Binary mask over `(x, y, t)` k-space locations, broadcast over coils.
///
/// Location order matches [`crate::tensor::Shape::index`] with the coil
/// axis dropped.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SamplingMask {
    nx: usize,
    ny: usize,
    nt: usize,
    bits: Vec<bool>,
}

impl SamplingMask {
    pub fn zeros((nx, ny, nt): (usize, usize, usize)) -> Self {
        SamplingMask { nx, ny, nt, bits: vec![false; nx * ny * nt] }
    }

    pub fn ones((nx, ny, nt): (usize, usize, usize)) -> Self {
        SamplingMask { nx, ny, nt, bits: vec![true; nx * ny * nt] }
    }

    pub fn from_bits((nx, ny, nt): (usize, usize, usize), bits: Vec<bool>) -> Result<Self> {
        if bits.len() != nx * ny * nt {
            return Err(Error::shape(format!("{} bits for a {nx}x{ny}x{nt} mask", bits.len())));
        }
        Ok(SamplingMask { nx, ny, nt, bits })
    }

    pub fn from_fn((nx, ny, nt): (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(nx * ny * nt);
        for x in 0..nx {
            for y in 0..ny {
                for t in 0..nt {
                    bits.push(f(x, y, t));
                }
            }
        }
        SamplingMask { nx, ny, nt, bits }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nt)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        (x * self.ny + y) * self.nt + t
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> bool {
        self.bits[self.index(x, y, t)]
    }

    pub fn set(&mut self, x: usize, y: usize, t: usize, v: bool) {
        let i = self.index(x, y, t);
        self.bits[i] = v;
    }

    pub(crate) fn set_index(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    /// Indices of sampled locations.
    pub fn sampled(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    fn zip_with(&self, other: &SamplingMask, f: impl Fn(bool, bool) -> bool) -> Result<SamplingMask> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!("mask {:?} vs {:?}", self.dims(), other.dims())));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(SamplingMask { nx: self.nx, ny: self.ny, nt: self.nt, bits })
    }

    /// Hadamard product `self ⊙ other`.
    pub fn and(&self, other: &SamplingMask) -> Result<SamplingMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &SamplingMask) -> Result<SamplingMask> {
        self.zip_with(other, |a, b| a || b)
    }

    /// Set difference `self \ other`.
    pub fn and_not(&self, other: &SamplingMask) -> Result<SamplingMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &SamplingMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn overlap(&self, other: &SamplingMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    /// One byte per location; used as a hashable pattern key.
    pub fn key(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }
}

/// Effective mask `m ⊙ my` of a re-undersampled subset.
pub fn effective_mask(m: &SamplingMask, my: &SamplingMask) -> Result<SamplingMask> {
    m.and(my)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn effective_mask_edge_cases() {
        let my = SamplingMask::from_fn((4, 4, 2), |x, y, t| (x + y + t) % 3 == 0);
        assert_eq!(effective_mask(&SamplingMask::ones((4, 4, 2)), &my).unwrap(), my);
        let z = SamplingMask::zeros((4, 4, 2));
        assert_eq!(effective_mask(&my, &z).unwrap(), z);
        assert!(effective_mask(&my, &SamplingMask::ones((4, 4, 3))).is_err());
    }

    proptest! {
        #[test]
        fn hadamard_algebra(a in proptest::collection::vec(any::<bool>(), 48),
                            b in proptest::collection::vec(any::<bool>(), 48)) {
            let ma = SamplingMask::from_bits((4, 3, 4), a.clone()).unwrap();
            let mb = SamplingMask::from_bits((4, 3, 4), b.clone()).unwrap();
            prop_assert_eq!(ma.and(&ma).unwrap(), ma.clone());
            let eff = effective_mask(&ma, &mb).unwrap();
            let brute = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
            prop_assert_eq!(eff.count(), brute);
            prop_assert!(eff.is_subset_of(&mb));
            prop_assert!((0.0..=1.0).contains(&ma.density()));
            let diff = ma.and_not(&mb).unwrap();
            prop_assert_eq!(diff.overlap(&mb), 0);
            prop_assert_eq!(diff.or(&eff).unwrap(), ma);
        }
    }
}
