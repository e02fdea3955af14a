use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{ComplexGrid, Shape, C64};

/// Affine predictor `W·y + b` per input-mask pattern.
///
/// Each observed pattern owns a dense `N×N` complex matrix (row-major) and
/// an `N`-vector. Patterns never seen fall back to the identity map and
/// are flagged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearLookupModel {
    pub n: usize,
    pub table: HashMap<Vec<u8>, (Vec<C64>, Vec<C64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPrediction {
    pub output: ComplexGrid,
    pub fallback: bool,
}

impl LinearLookupModel {
    pub fn new(n: usize) -> Self {
        LinearLookupModel { n, table: HashMap::new() }
    }

    pub fn insert(&mut self, key: Vec<u8>, w: Vec<C64>, b: Vec<C64>) -> Result<()> {
        if w.len() != self.n * self.n || b.len() != self.n {
            return Err(Error::shape(format!("expected {n}x{n} matrix and {n}-vector", n = self.n)));
        }
        if w.iter().chain(&b).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("non-finite entry in linear model"));
        }
        self.table.insert(key, (w, b));
        Ok(())
    }

    /// Entry for `key`, created as `W = 0, b = 0` if absent.
    pub fn entry(&mut self, key: &[u8]) -> &mut (Vec<C64>, Vec<C64>) {
        let n = self.n;
        self.table.entry(key.to_vec()).or_insert_with(|| (vec![C64::new(0.0, 0.0); n * n], vec![C64::new(0.0, 0.0); n]))
    }

    pub fn predict_slice(&self, y: &[C64], key: &[u8]) -> (Vec<C64>, bool) {
        match self.table.get(key) {
            Some((w, b)) => {
                let out = (0..self.n)
                    .map(|i| b[i] + w[i * self.n..(i + 1) * self.n].iter().zip(y).map(|(a, v)| a * v).sum::<C64>())
                    .collect();
                (out, false)
            }
            None => (y.to_vec(), true),
        }
    }
}

/// `W·vec(y1) + b` for the pattern `key`.
pub fn linear_predict(model: &LinearLookupModel, y1: &ComplexGrid, key: &[u8]) -> Result<LinearPrediction> {
    if y1.len() != model.n {
        return Err(Error::shape(format!("input of length {} for a model over N = {}", y1.len(), model.n)));
    }
    let (out, fallback) = model.predict_slice(y1.data(), key);
    Ok(LinearPrediction { output: ComplexGrid::from_vec(y1.shape(), out)?, fallback })
}

/// Column-vector grid `(n, 1, 1, 1)`.
pub fn vector_grid(values: Vec<C64>) -> ComplexGrid {
    ComplexGrid::from_vec_unchecked(Shape::new(values.len(), 1, 1, 1), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn identity_and_constant_models() {
        let mut rng = rng_from(0);
        let y = ComplexGrid::random(Shape::new(4, 1, 1, 1), &mut rng);
        let mut m = LinearLookupModel::new(4);
        let mut eye = vec![C64::new(0.0, 0.0); 16];
        (0..4).for_each(|i| eye[i * 5] = C64::new(1.0, 0.0));
        m.insert(vec![1, 1, 0, 0], eye, vec![C64::new(0.0, 0.0); 4]).unwrap();
        let mu = vec![C64::new(0.5, -1.0); 4];
        m.insert(vec![0, 0, 0, 0], vec![C64::new(0.0, 0.0); 16], mu.clone()).unwrap();
        assert_eq!(linear_predict(&m, &y, &[1, 1, 0, 0]).unwrap().output, y);
        assert_eq!(linear_predict(&m, &y, &[0, 0, 0, 0]).unwrap().output.data(), &mu[..]);
        let missing = linear_predict(&m, &y, &[1, 0, 1, 0]).unwrap();
        assert!(missing.fallback);
        assert_eq!(missing.output, y);
    }

    #[test]
    fn matches_naive_matvec() {
        let mut rng = rng_from(1);
        let w = ComplexGrid::random(Shape::new(16, 1, 1, 1), &mut rng).into_vec();
        let b = ComplexGrid::random(Shape::new(4, 1, 1, 1), &mut rng).into_vec();
        let y = ComplexGrid::random(Shape::new(4, 1, 1, 1), &mut rng);
        let mut m = LinearLookupModel::new(4);
        m.insert(vec![7], w.clone(), b.clone()).unwrap();
        let got = linear_predict(&m, &y, &[7]).unwrap().output;
        for i in 0..4 {
            let mut acc = b[i];
            for j in 0..4 {
                acc += w[4 * i + j] * y.data()[j];
            }
            assert!((acc - got.data()[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut m = LinearLookupModel::new(3);
        assert!(m.insert(vec![], vec![C64::new(0.0, 0.0); 8], vec![C64::new(0.0, 0.0); 3]).is_err());
        assert!(linear_predict(&m, &ComplexGrid::zeros(Shape::new(4, 1, 1, 1)), &[]).is_err());
    }
}
