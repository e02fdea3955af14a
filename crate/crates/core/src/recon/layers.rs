//! Complex layers over channel-major feature maps, each with a hand-written
//! reverse pass.
//!
//! Gradients follow the real-pair convention: for a real loss `L` and a
//! complex quantity `z = a + ib`, the stored gradient is `∂L/∂a + i ∂L/∂b`.
//! Under this convention a complex-linear map `y = W x` back-propagates as
//! `g_x = Wᴴ g_y` and `g_W = g_y xᴴ`.

use crate::tensor::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Feature map laid out as `[channel][x][y][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feat {
    pub ch: usize,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub data: Vec<C64>,
}

impl Feat {
    pub fn zeros(ch: usize, nx: usize, ny: usize, nt: usize) -> Self {
        Feat { ch, nx, ny, nt, data: vec![ZERO; ch * nx * ny * nt] }
    }

    pub fn from_image(nx: usize, ny: usize, nt: usize, data: Vec<C64>) -> Self {
        debug_assert_eq!(data.len(), nx * ny * nt);
        Feat { ch: 1, nx, ny, nt, data }
    }

    #[inline]
    fn plane(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    fn like(&self, ch: usize) -> Feat {
        Feat::zeros(ch, self.nx, self.ny, self.nt)
    }
}

/// 2D spatial convolution, `cin → cout`, odd square kernel, zero padding.
///
/// Weights are `[cout][cin][kx][ky]`.
#[derive(Debug, Clone, Copy)]
pub struct SpatialConv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl SpatialConv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    /// For a kernel offset `d` along an axis of length `n`, the range of
    /// output positions whose input `pos + d - pad` stays inside.
    fn valid(n: usize, d: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(d);
        let hi = (n + pad).saturating_sub(d).min(n);
        (lo, hi.max(lo))
    }

    pub fn forward(&self, w: &[C64], input: &Feat) -> Feat {
        debug_assert_eq!(input.ch, self.cin);
        let mut out = input.like(self.cout);
        let (nx, ny, nt, p) = (input.nx, input.ny, input.nt, self.k / 2);
        let plane = input.plane();
        for o in 0..self.cout {
            for i in 0..self.cin {
                for dx in 0..self.k {
                    let (xlo, xhi) = Self::valid(nx, dx, p);
                    for dy in 0..self.k {
                        let wv = w[((o * self.cin + i) * self.k + dx) * self.k + dy];
                        let (ylo, yhi) = Self::valid(ny, dy, p);
                        if yhi <= ylo {
                            continue;
                        }
                        let run = (yhi - ylo) * nt;
                        for x in xlo..xhi {
                            let xi = x + dx - p;
                            let ob = o * plane + (x * ny + ylo) * nt;
                            let ib = i * plane + (xi * ny + ylo + dy - p) * nt;
                            let (dst, src) = (&mut out.data[ob..ob + run], &input.data[ib..ib + run]);
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += wv * s);
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns `g_input` and accumulates into `g_w`.
    pub fn backward(&self, w: &[C64], input: &Feat, g_out: &Feat, g_w: &mut [C64]) -> Feat {
        let mut g_in = input.like(self.cin);
        let (nx, ny, nt, p) = (input.nx, input.ny, input.nt, self.k / 2);
        let plane = input.plane();
        for o in 0..self.cout {
            for i in 0..self.cin {
                for dx in 0..self.k {
                    let (xlo, xhi) = Self::valid(nx, dx, p);
                    for dy in 0..self.k {
                        let wi = ((o * self.cin + i) * self.k + dx) * self.k + dy;
                        let wc = w[wi].conj();
                        let (ylo, yhi) = Self::valid(ny, dy, p);
                        if yhi <= ylo {
                            continue;
                        }
                        let run = (yhi - ylo) * nt;
                        let mut acc = ZERO;
                        for x in xlo..xhi {
                            let xi = x + dx - p;
                            let ob = o * plane + (x * ny + ylo) * nt;
                            let ib = i * plane + (xi * ny + ylo + dy - p) * nt;
                            let go = &g_out.data[ob..ob + run];
                            let src = &input.data[ib..ib + run];
                            acc += src.iter().zip(go).map(|(s, g)| s.conj() * g).sum::<C64>();
                            let dst = &mut g_in.data[ib..ib + run];
                            dst.iter_mut().zip(go).for_each(|(d, g)| *d += wc * g);
                        }
                        g_w[wi] += acc;
                    }
                }
            }
        }
        g_in
    }
}

/// 1D temporal convolution, `cin → cout`, odd kernel, zero padding.
///
/// Weights are `[cout][cin][kt]`.
#[derive(Debug, Clone, Copy)]
pub struct TemporalConv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl TemporalConv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k
    }

    pub fn forward(&self, w: &[C64], input: &Feat) -> Feat {
        let mut out = input.like(self.cout);
        let (nt, p, plane) = (input.nt, self.k / 2, input.plane());
        let pixels = input.nx * input.ny;
        for o in 0..self.cout {
            for i in 0..self.cin {
                for dt in 0..self.k {
                    let wv = w[(o * self.cin + i) * self.k + dt];
                    let (tlo, thi) = SpatialConv::valid(nt, dt, p);
                    for px in 0..pixels {
                        let ob = o * plane + px * nt;
                        let ib = i * plane + px * nt;
                        for t in tlo..thi {
                            out.data[ob + t] += wv * input.data[ib + t + dt - p];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, w: &[C64], input: &Feat, g_out: &Feat, g_w: &mut [C64]) -> Feat {
        let mut g_in = input.like(self.cin);
        let (nt, p, plane) = (input.nt, self.k / 2, input.plane());
        let pixels = input.nx * input.ny;
        for o in 0..self.cout {
            for i in 0..self.cin {
                for dt in 0..self.k {
                    let wi = (o * self.cin + i) * self.k + dt;
                    let wc = w[wi].conj();
                    let (tlo, thi) = SpatialConv::valid(nt, dt, p);
                    let mut acc = ZERO;
                    for px in 0..pixels {
                        let ob = o * plane + px * nt;
                        let ib = i * plane + px * nt;
                        for t in tlo..thi {
                            let g = g_out.data[ob + t];
                            acc += input.data[ib + t + dt - p].conj() * g;
                            g_in.data[ib + t + dt - p] += wc * g;
                        }
                    }
                    g_w[wi] += acc;
                }
            }
        }
        g_in
    }
}

/// `modReLU(z) = relu(|z| + b) · z / |z|` with a real bias per channel.
pub fn modrelu_forward(bias: &[f64], input: &Feat) -> Feat {
    let plane = input.plane();
    let mut out = input.clone();
    for (c, chunk) in out.data.chunks_mut(plane).enumerate() {
        let b = bias[c];
        for z in chunk {
            let s = z.norm();
            *z = if s > 0.0 && s + b > 0.0 { *z * ((s + b) / s) } else { ZERO };
        }
    }
    out
}

/// Returns `g_input` and accumulates into `g_bias`.
pub fn modrelu_backward(bias: &[f64], input: &Feat, g_out: &Feat, g_bias: &mut [f64]) -> Feat {
    let plane = input.plane();
    let mut g_in = input.like(input.ch);
    for c in 0..input.ch {
        let b = bias[c];
        let range = c * plane..(c + 1) * plane;
        for ((z, g), gi) in input.data[range.clone()].iter().zip(&g_out.data[range.clone()]).zip(&mut g_in.data[range])
        {
            let s = z.norm();
            if s > 0.0 && s + b > 0.0 {
                let u = z / s;
                let proj = (g.conj() * u).re;
                *gi = g * (1.0 + b / s) - u * (b / s * proj);
                g_bias[c] += proj;
            }
        }
    }
    g_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn rand_c(rng: &mut crate::seed::Rng) -> C64 {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn rand_feat(ch: usize, nx: usize, ny: usize, nt: usize, rng: &mut crate::seed::Rng) -> Feat {
        let mut f = Feat::zeros(ch, nx, ny, nt);
        f.data.iter_mut().for_each(|z| *z = rand_c(rng));
        f
    }

    /// Real loss `Re⟨probe, f⟩`, whose gradient w.r.t. the output is `probe`.
    fn probe_loss(probe: &Feat, f: &Feat) -> f64 {
        probe.data.iter().zip(&f.data).map(|(p, z)| (p.conj() * z).re).sum()
    }

    fn check(analytic: C64, mut eval: impl FnMut(C64) -> f64, at: C64) {
        let h = 1e-6;
        let re = (eval(at + C64::new(h, 0.0)) - eval(at - C64::new(h, 0.0))) / (2.0 * h);
        let im = (eval(at + C64::new(0.0, h)) - eval(at - C64::new(0.0, h))) / (2.0 * h);
        let fd = C64::new(re, im);
        assert!((fd - analytic).norm() <= 1e-6 * (1.0 + fd.norm()), "fd {fd} vs analytic {analytic}");
    }

    /// Reference spatial convolution by direct summation.
    fn naive_spatial(conv: &SpatialConv, w: &[C64], input: &Feat) -> Feat {
        let p = conv.k as isize / 2;
        let mut out = input.like(conv.cout);
        for o in 0..conv.cout {
            for x in 0..input.nx {
                for y in 0..input.ny {
                    for t in 0..input.nt {
                        let mut acc = ZERO;
                        for i in 0..conv.cin {
                            for dx in 0..conv.k {
                                for dy in 0..conv.k {
                                    let xi = x as isize + dx as isize - p;
                                    let yi = y as isize + dy as isize - p;
                                    if xi < 0 || yi < 0 || xi >= input.nx as isize || yi >= input.ny as isize {
                                        continue;
                                    }
                                    let src = input.data
                                        [((i * input.nx + xi as usize) * input.ny + yi as usize) * input.nt + t];
                                    acc += w[((o * conv.cin + i) * conv.k + dx) * conv.k + dy] * src;
                                }
                            }
                        }
                        out.data[((o * input.nx + x) * input.ny + y) * input.nt + t] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn spatial_conv_matches_direct_sum() {
        let mut rng = rng_from(1);
        let conv = SpatialConv { cin: 2, cout: 3, k: 5 };
        let w: Vec<C64> = (0..conv.weight_len()).map(|_| rand_c(&mut rng)).collect();
        let x = rand_feat(2, 7, 6, 2, &mut rng);
        let fast = conv.forward(&w, &x);
        let slow = naive_spatial(&conv, &w, &x);
        let err: f64 = fast.data.iter().zip(&slow.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn spatial_conv_gradients() {
        let mut rng = rng_from(2);
        let conv = SpatialConv { cin: 2, cout: 2, k: 5 };
        let w: Vec<C64> = (0..conv.weight_len()).map(|_| rand_c(&mut rng)).collect();
        let x = rand_feat(2, 6, 5, 2, &mut rng);
        let probe = rand_feat(2, 6, 5, 2, &mut rng);
        let mut gw = vec![ZERO; w.len()];
        let gx = conv.backward(&w, &x, &probe, &mut gw);
        for wi in [0, 7, 24, 33, w.len() - 1] {
            check(
                gw[wi],
                |v| {
                    let mut w2 = w.clone();
                    w2[wi] = v;
                    probe_loss(&probe, &conv.forward(&w2, &x))
                },
                w[wi],
            );
        }
        for xi in [0, 13, 29, x.data.len() - 1] {
            check(
                gx.data[xi],
                |v| {
                    let mut x2 = x.clone();
                    x2.data[xi] = v;
                    probe_loss(&probe, &conv.forward(&w, &x2))
                },
                x.data[xi],
            );
        }
    }

    #[test]
    fn temporal_conv_gradients() {
        let mut rng = rng_from(3);
        let conv = TemporalConv { cin: 3, cout: 2, k: 3 };
        let w: Vec<C64> = (0..conv.weight_len()).map(|_| rand_c(&mut rng)).collect();
        let x = rand_feat(3, 3, 3, 4, &mut rng);
        let probe = rand_feat(2, 3, 3, 4, &mut rng);
        let mut gw = vec![ZERO; w.len()];
        let gx = conv.backward(&w, &x, &probe, &mut gw);
        for wi in 0..w.len() {
            check(
                gw[wi],
                |v| {
                    let mut w2 = w.clone();
                    w2[wi] = v;
                    probe_loss(&probe, &conv.forward(&w2, &x))
                },
                w[wi],
            );
        }
        for xi in [0, 5, 17, x.data.len() - 1] {
            check(
                gx.data[xi],
                |v| {
                    let mut x2 = x.clone();
                    x2.data[xi] = v;
                    probe_loss(&probe, &conv.forward(&w, &x2))
                },
                x.data[xi],
            );
        }
    }

    #[test]
    fn modrelu_gradients() {
        let mut rng = rng_from(4);
        let x = rand_feat(2, 3, 3, 2, &mut rng);
        let bias = vec![0.1, -0.3];
        let probe = rand_feat(2, 3, 3, 2, &mut rng);
        let mut gb = vec![0.0; 2];
        let gx = modrelu_backward(&bias, &x, &probe, &mut gb);
        for xi in 0..x.data.len() {
            let s = x.data[xi].norm();
            let b = bias[xi / 18];
            if (s + b).abs() < 1e-3 {
                continue;
            }
            check(
                gx.data[xi],
                |v| {
                    let mut x2 = x.clone();
                    x2.data[xi] = v;
                    probe_loss(&probe, &modrelu_forward(&bias, &x2))
                },
                x.data[xi],
            );
        }
        for c in 0..2 {
            let h = 1e-6;
            let eval = |d: f64| {
                let mut b2 = bias.clone();
                b2[c] += d;
                probe_loss(&probe, &modrelu_forward(&b2, &x))
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - gb[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn modrelu_preserves_phase() {
        let mut rng = rng_from(5);
        let x = rand_feat(1, 4, 4, 2, &mut rng);
        let y = modrelu_forward(&[0.2], &x);
        for (a, b) in x.data.iter().zip(&y.data) {
            if b.norm() > 0.0 {
                assert!((a.arg() - b.arg()).abs() < 1e-12);
            }
        }
        let y = modrelu_forward(&[-0.5], &x);
        for (a, b) in x.data.iter().zip(&y.data) {
            if a.norm() <= 0.5 {
                assert_eq!(*b, ZERO);
            }
        }
    }
}
