//! Synthetic dynamic phantoms and smooth coil sensitivities.

use std::f64::consts::PI;

use rand::Rng as _;

use super::{ComplexGrid, Shape, C64};
use crate::error::{Error, Result};
use crate::seed;

/// Bound on the adjacent-pixel magnitude step of generated coil maps at the
/// default lobe width.
pub const COIL_SMOOTHNESS: f64 = 0.1;

/// Coil sensitivities, `(nx, ny, 1, nc)`, normalized so that
/// `Σ_c |c|² = 1` at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    grid: ComplexGrid,
}

impl CoilMaps {
    pub fn new(grid: ComplexGrid) -> Result<Self> {
        let s = grid.shape();
        if s.nt != 1 || s.nc == 0 {
            return Err(Error::shape(format!("coil maps need nt = 1 and nc >= 1, got {s}")));
        }
        for x in 0..s.nx {
            for y in 0..s.ny {
                let sos: f64 = (0..s.nc).map(|c| grid.get(x, y, 0, c).norm_sqr()).sum();
                if (sos - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!(
                        "coil maps not normalized at ({x}, {y}): sum of squares {sos}"
                    )));
                }
            }
        }
        Ok(CoilMaps { grid })
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    pub fn num_coils(&self) -> usize {
        self.grid.shape().nc
    }

    pub fn spatial(&self) -> (usize, usize) {
        let s = self.grid.shape();
        (s.nx, s.ny)
    }

    /// Largest magnitude difference between horizontally or vertically
    /// adjacent pixels over all coils.
    pub fn max_adjacent_step(&self) -> f64 {
        let s = self.grid.shape();
        let mut worst: f64 = 0.0;
        for c in 0..s.nc {
            for x in 0..s.nx {
                for y in 0..s.ny {
                    let m = self.grid.get(x, y, 0, c).norm();
                    if x + 1 < s.nx {
                        worst = worst.max((self.grid.get(x + 1, y, 0, c).norm() - m).abs());
                    }
                    if y + 1 < s.ny {
                        worst = worst.max((self.grid.get(x, y + 1, 0, c).norm() - m).abs());
                    }
                }
            }
        }
        worst
    }
}

fn coord(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    angle: f64,
    intensity: f64,
    motion: f64,
    breathing: f64,
}

impl Ellipse {
    fn value(&self, u: f64, v: f64, beat: f64) -> f64 {
        let cx = self.cx + self.motion * beat;
        let cy = self.cy + 0.5 * self.motion * beat;
        let ax = self.ax * (1.0 + self.breathing * beat);
        let ay = self.ay * (1.0 - 0.5 * self.breathing * beat);
        let (s, c) = self.angle.sin_cos();
        let (du, dv) = (u - cx, v - cy);
        let (ru, rv) = (c * du + s * dv, -s * du + c * dv);
        if (ru / ax).powi(2) + (rv / ay).powi(2) <= 1.0 {
            self.intensity
        } else {
            0.0
        }
    }
}

/// Dynamic complex phantom `(nx, ny, nt, 1)`.
///
/// A large background ellipse plus 2–5 inner ellipses whose centers and axes
/// oscillate sinusoidally over the frames, multiplied by a smooth random
/// phase. Peak magnitude is 1.
pub fn make_phantom(nx: usize, ny: usize, nt: usize, seed: u64) -> Result<ComplexGrid> {
    if nx < 8 || ny < 8 || nt == 0 {
        return Err(Error::invalid(format!("phantom needs nx, ny >= 8 and nt >= 1, got {nx}x{ny}x{nt}")));
    }
    let mut rng = seed::rng(seed, "phantom", 0);
    let count = rng.random_range(3..=6usize);
    let mut ellipses = Vec::with_capacity(count);
    ellipses.push(Ellipse {
        cx: rng.random_range(-0.05..0.05),
        cy: rng.random_range(-0.05..0.05),
        ax: rng.random_range(0.7..0.85),
        ay: rng.random_range(0.6..0.8),
        angle: rng.random_range(-0.3..0.3),
        intensity: rng.random_range(0.3..0.5),
        motion: 0.0,
        breathing: rng.random_range(0.0..0.03),
    });
    for _ in 1..count {
        ellipses.push(Ellipse {
            cx: rng.random_range(-0.35..0.35),
            cy: rng.random_range(-0.35..0.35),
            ax: rng.random_range(0.1..0.3),
            ay: rng.random_range(0.1..0.3),
            angle: rng.random_range(0.0..PI),
            intensity: rng.random_range(0.2..0.6) * if rng.random_bool(0.2) { -0.5 } else { 1.0 },
            motion: rng.random_range(0.0..0.08),
            breathing: rng.random_range(0.0..0.15),
        });
    }
    let phase_coef: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];

    let shape = Shape::new(nx, ny, nt, 1);
    let mut g = ComplexGrid::from_fn(shape, |x, y, t, _| {
        let (u, v) = (coord(x, nx), coord(y, ny));
        let beat = (2.0 * PI * t as f64 / nt as f64).sin();
        let mag: f64 = ellipses.iter().map(|e| e.value(u, v, beat)).sum::<f64>().max(0.0);
        let phase = phase_coef[0] * u + phase_coef[1] * v + phase_coef[2] * u * v;
        C64::from_polar(mag, phase)
    });
    let peak = g.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak > 0.0 {
        g.scale(C64::new(1.0 / peak, 0.0));
    }
    Ok(g)
}

/// Smooth coil sensitivities from Gaussian lobes centered on a ring just
/// outside the field of view, with a gentle linear phase per coil.
pub fn make_coils(nx: usize, ny: usize, nc: usize, seed: u64) -> Result<CoilMaps> {
    if nx == 0 || ny == 0 || nc == 0 {
        return Err(Error::invalid(format!("coil maps need positive sizes, got {nx}x{ny} with {nc} coils")));
    }
    let shape = Shape::new(nx, ny, 1, nc);
    if nc == 1 {
        let grid = ComplexGrid::from_fn(shape, |_, _, _, _| C64::new(1.0, 0.0));
        return CoilMaps::new(grid);
    }
    let mut rng = seed::rng(seed, "coils", 0);
    let offset = rng.random_range(0.0..2.0 * PI);
    let lobes: Vec<(f64, f64, f64, f64, f64)> = (0..nc)
        .map(|c| {
            let theta = offset + 2.0 * PI * c as f64 / nc as f64;
            let radius = rng.random_range(1.1..1.4);
            let width = rng.random_range(1.0..1.3);
            let ramp = rng.random_range(-0.5..0.5);
            (radius * theta.cos(), radius * theta.sin(), width, ramp, theta)
        })
        .collect();
    let mut grid = ComplexGrid::from_fn(shape, |x, y, _, c| {
        let (u, v) = (coord(x, nx), coord(y, ny));
        let (lx, ly, w, ramp, theta) = lobes[c];
        let d2 = (u - lx).powi(2) + (v - ly).powi(2);
        C64::from_polar((-d2 / (2.0 * w * w)).exp(), theta + ramp * (u + v))
    });
    let s = grid.shape();
    let data = grid.data_mut();
    for px in data.chunks_mut(s.nc) {
        let sos: f64 = px.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        px.iter_mut().for_each(|z| *z /= sos);
    }
    CoilMaps::new(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_normalized() {
        let a = make_phantom(32, 32, 8, 5).unwrap();
        let b = make_phantom(32, 32, 8, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_phantom(32, 32, 8, 6).unwrap());
        let peak = a.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
        assert!(a.data().iter().any(|z| z.im.abs() > 1e-3), "phantom should be complex");
    }

    #[test]
    fn static_phantom_has_one_frame() {
        let p = make_phantom(16, 16, 1, 3).unwrap();
        assert_eq!(p.shape(), Shape::new(16, 16, 1, 1));
    }

    #[test]
    fn frames_move() {
        let p = make_phantom(32, 32, 8, 2).unwrap();
        let diff = p.frame(0).sub(&p.frame(2)).unwrap().norm();
        assert!(diff > 0.0);
    }

    #[test]
    fn temporal_mean_support_covers_tenth_of_pixels() {
        for seed in 0..20 {
            let p = make_phantom(32, 32, 8, seed).unwrap();
            let mut support = 0;
            for x in 0..32 {
                for y in 0..32 {
                    let m: f64 = (0..8).map(|t| p.get(x, y, t, 0).norm()).sum::<f64>() / 8.0;
                    if m > 1e-6 {
                        support += 1;
                    }
                }
            }
            assert!(support as f64 >= 0.1 * 1024.0, "seed {seed}: support {support}");
        }
    }

    #[test]
    fn rejects_tiny_phantom() {
        assert!(make_phantom(4, 32, 1, 0).is_err());
        assert!(make_phantom(8, 8, 0, 0).is_err());
    }

    #[test]
    fn single_coil_is_unit_constant() {
        let c = make_coils(16, 12, 1, 9).unwrap();
        assert!(c.grid().data().iter().all(|z| *z == C64::new(1.0, 0.0)));
    }

    #[test]
    fn coils_are_normalized_and_smooth() {
        for seed in 0..10 {
            for nc in [2, 4, 8] {
                let c = make_coils(32, 32, nc, seed).unwrap();
                let s = c.grid().shape();
                for x in 0..32 {
                    for y in 0..32 {
                        let sos: f64 = (0..s.nc).map(|k| c.grid().get(x, y, 0, k).norm_sqr()).sum();
                        assert!((sos - 1.0).abs() < 1e-6);
                    }
                }
                assert!(c.max_adjacent_step() < COIL_SMOOTHNESS, "nc {nc} seed {seed}: {}", c.max_adjacent_step());
            }
        }
    }
}
