use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::{ComplexGrid, Shape, C64};

/// Jointly Gaussian prior over a short complex vector `Y0`, plus the
/// masking distributions: `M_Y` is Bernoulli(`p`) per entry, `M_1` is drawn
/// from a finite pattern set and `M_2` is Bernoulli(`r`) per entry.
#[derive(Debug, Clone)]
pub struct GaussianWorld {
    pub mean: Vec<C64>,
    pub cov: DMatrix<C64>,
    pub patterns: Vec<(Vec<bool>, f64)>,
    pub p: f64,
    pub r: f64,
    chol: DMatrix<C64>,
}

/// Largest supported dimension.
pub const MAX_DIM: usize = 32;

/// Circulant Hermitian covariance with eigenvalues `spectrum` on the DFT
/// basis: `Σ_jk = (1/N) Σ_m λ_m exp(2πi m (j − k) / N)`.
pub fn circulant_covariance(spectrum: &[f64]) -> DMatrix<C64> {
    let n = spectrum.len();
    DMatrix::from_fn(n, n, |j, k| {
        let d = j as f64 - k as f64;
        spectrum
            .iter()
            .enumerate()
            .map(|(m, &l)| C64::from_polar(l, std::f64::consts::TAU * m as f64 * d / n as f64))
            .sum::<C64>()
            / n as f64
    })
}

impl GaussianWorld {
    pub fn new(mean: Vec<C64>, cov: DMatrix<C64>, patterns: Vec<(Vec<bool>, f64)>, p: f64, r: f64) -> Result<Self> {
        let n = mean.len();
        if n == 0 || n > MAX_DIM {
            return Err(Error::invalid(format!("dimension {n} outside 1..={MAX_DIM}")));
        }
        if cov.shape() != (n, n) {
            return Err(Error::shape("covariance does not match the mean"));
        }
        let scale = cov.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if (&cov - cov.adjoint()).iter().any(|z| z.norm() > 1e-12 * scale.max(1.0)) {
            return Err(Error::invalid("covariance is not Hermitian"));
        }
        let chol = cov.clone().cholesky().ok_or(Error::Singular)?.l();
        if patterns.is_empty() || patterns.iter().any(|(m, w)| m.len() != n || !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::invalid("pattern probabilities must lie in (0, 1) with one mask entry per location"));
        }
        let total: f64 = patterns.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("pattern probabilities sum to {total}")));
        }
        for i in 0..n {
            let q: f64 = patterns.iter().filter(|(m, _)| m[i]).map(|(_, w)| w).sum();
            if q <= 0.0 || q >= 1.0 - 1e-12 {
                return Err(Error::invalid(format!("location {i} has input probability {q}, need 0 < q < 1")));
            }
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("acquisition probability {p} outside (0, 1]")));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("supervision probability {r} outside (0, 1)")));
        }
        Ok(GaussianWorld { mean, cov, patterns, p, r, chol })
    }

    /// The reference world: `N = 8`, circulant covariance with an
    /// asymmetric spectrum (so `Σ` is genuinely complex), non-zero mean and
    /// four equiprobable input patterns.
    pub fn standard() -> Self {
        let spectrum = [2.4, 1.6, 0.9, 0.5, 0.3, 0.4, 0.7, 1.2];
        let mean = (0..8).map(|i| C64::from_polar(1.0 + 0.25 * (i % 3) as f64, 0.4 * i as f64)).collect();
        let pat = |idx: &[usize]| (0..8).map(|i| idx.contains(&i)).collect::<Vec<_>>();
        let patterns = vec![
            (pat(&[0, 2, 4, 6]), 0.25),
            (pat(&[1, 3, 5, 7]), 0.25),
            (pat(&[0, 1, 4, 5]), 0.25),
            (pat(&[2, 3, 6, 7]), 0.25),
        ];
        GaussianWorld::new(mean, circulant_covariance(&spectrum), patterns, 0.9, 0.5).expect("standard world is valid")
    }

    /// Independent entries with the given variances.
    pub fn diagonal(
        mean: Vec<C64>,
        variances: &[f64],
        patterns: Vec<(Vec<bool>, f64)>,
        p: f64,
        r: f64,
    ) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(
            variances.len(),
            variances.iter().map(|&v| C64::new(v, 0.0)),
        ));
        GaussianWorld::new(mean, cov, patterns, p, r)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal probability that location `i` is in `M_1`.
    pub fn input_probability(&self, i: usize) -> f64 {
        self.patterns.iter().filter(|(m, _)| m[i]).map(|(_, w)| w).sum()
    }

    /// One draw of `Y0 = μ + L z` with `z` circular standard normal.
    pub fn sample(&self, rng: &mut Rng) -> Vec<C64> {
        let n = self.dim();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s))
            .collect();
        (0..n).map(|i| self.mean[i] + (0..=i).map(|j| self.chol[(i, j)] * z[j]).sum::<C64>()).collect()
    }

    pub fn draw_pattern(&self, rng: &mut Rng) -> &[bool] {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, w) in &self.patterns {
            acc += w;
            if u < acc {
                return m;
            }
        }
        &self.patterns.last().expect("non-empty pattern set").0
    }

    pub fn draw_bernoulli(&self, prob: f64, rng: &mut Rng) -> Vec<bool> {
        (0..self.dim()).map(|_| rng.random_bool(prob)).collect()
    }

    /// Probability that the effective input pattern equals `observed`.
    pub fn key_probability(&self, observed: &[bool]) -> f64 {
        self.consistent_patterns(observed)
            .map(|(m, w)| {
                let extra = m.iter().zip(observed).filter(|(a, b)| **a && !**b).count();
                let kept = observed.iter().filter(|b| **b).count();
                w * self.p.powi(kept as i32) * (1.0 - self.p).powi(extra as i32)
            })
            .sum()
    }

    fn consistent_patterns<'a>(&'a self, observed: &'a [bool]) -> impl Iterator<Item = &'a (Vec<bool>, f64)> + 'a {
        self.patterns.iter().filter(move |(m, _)| {
            let covers = m.iter().zip(observed).all(|(a, b)| *a || !*b);
            let exact = m.iter().zip(observed).all(|(a, b)| a == b);
            covers && (self.p < 1.0 || exact)
        })
    }

    /// Whether location `i` can appear in the loss subset when the effective
    /// input pattern is `observed`. Entries of `M_1` that were not acquired
    /// are never supervised under that pattern.
    pub fn supervised(&self, observed: &[bool], i: usize) -> bool {
        observed[i] || self.consistent_patterns(observed).any(|(m, _)| !m[i])
    }

    /// Distinct reachable effective input patterns with their probabilities.
    pub fn keys(&self) -> Vec<(Vec<bool>, f64)> {
        let mut out: Vec<(Vec<bool>, f64)> = Vec::new();
        for (m, _) in &self.patterns {
            let idx: Vec<usize> = (0..self.dim()).filter(|&i| m[i]).collect();
            for bits in 0u64..(1 << idx.len()) {
                let mut o = vec![false; self.dim()];
                idx.iter().enumerate().filter(|(b, _)| bits >> b & 1 == 1).for_each(|(_, &i)| o[i] = true);
                if !out.iter().any(|(k, _)| *k == o) {
                    let pr = self.key_probability(&o);
                    if pr > 0.0 {
                        out.push((o, pr));
                    }
                }
            }
        }
        out
    }
}

/// Affine map `y ↦ W y + b` equal to `E[Y0 | Y_O = y_O]`, with `W` zero on
/// unobserved columns. Row-major `W`.
pub fn posterior_affine(world: &GaussianWorld, observed: &[usize]) -> Result<(Vec<C64>, Vec<C64>)> {
    let n = world.dim();
    if observed.iter().any(|&i| i >= n) {
        return Err(Error::invalid("observed index out of range"));
    }
    let mut w = vec![C64::new(0.0, 0.0); n * n];
    if observed.is_empty() {
        return Ok((w, world.mean.clone()));
    }
    let s_oo = world.cov.select_rows(observed).select_columns(observed);
    let s_ao = world.cov.select_columns(observed);
    let chol = s_oo.cholesky().ok_or(Error::Singular)?;
    // gain = Σ_{·O} Σ_OO⁻¹, solved as Σ_OO gainᴴ = Σ_{·O}ᴴ
    let gain = chol.solve(&s_ao.adjoint()).adjoint();
    for i in 0..n {
        for (c, &j) in observed.iter().enumerate() {
            w[i * n + j] = gain[(i, c)];
        }
    }
    let b = (0..n)
        .map(|i| world.mean[i] - observed.iter().enumerate().map(|(c, &j)| gain[(i, c)] * world.mean[j]).sum::<C64>())
        .collect::<Vec<_>>();
    // observed rows reproduce the observation exactly
    for &j in observed {
        w[j * n..(j + 1) * n].fill(C64::new(0.0, 0.0));
        w[j * n + j] = C64::new(1.0, 0.0);
    }
    let mut b = b;
    observed.iter().for_each(|&j| b[j] = C64::new(0.0, 0.0));
    Ok((w, b))
}

/// Posterior mean `μ + Σ_{·O} Σ_OO⁻¹ (y_O − μ_O)`; `y1` is a length-`N`
/// vector grid, entries outside `observed` are ignored.
pub fn bayes_posterior_mean(world: &GaussianWorld, y1: &ComplexGrid, observed: &[usize]) -> Result<ComplexGrid> {
    if y1.len() != world.dim() {
        return Err(Error::shape(format!("input of length {} for N = {}", y1.len(), world.dim())));
    }
    Ok(ComplexGrid::from_vec_unchecked(Shape::new(world.dim(), 1, 1, 1), posterior_mean(world, y1.data(), observed)?))
}

pub(crate) fn posterior_mean(world: &GaussianWorld, y: &[C64], observed: &[usize]) -> Result<Vec<C64>> {
    let n = world.dim();
    let (w, b) = posterior_affine(world, observed)?;
    let mut y_o = vec![C64::new(0.0, 0.0); n];
    observed.iter().for_each(|&j| y_o[j] = y[j]);
    Ok((0..n).map(|i| b[i] + w[i * n..(i + 1) * n].iter().zip(&y_o).map(|(a, v)| a * v).sum::<C64>()).collect())
}
