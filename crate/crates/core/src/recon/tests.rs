use super::*;
use crate::sampling::{line_mask, SamplingMask};
use crate::seed::rng_from;
use crate::tensor::{make_coils, make_phantom, ComplexGrid, Shape, C64};

fn small_config() -> ModelConfig {
    ModelConfig { unrolls: 3, channels: 3, spatial_kernel: 5, temporal_kernel: 3 }
}

struct Setup {
    coils: CoilMaps,
    mask: SamplingMask,
    y: ComplexGrid,
    target: ComplexGrid,
    loss_mask: SamplingMask,
}

fn setup(seed: u64, nt: usize) -> Setup {
    let mut rng = rng_from(seed);
    let (nx, ny) = (12, 10);
    let coils = make_coils(nx, ny, 2, seed).unwrap();
    let image = make_phantom(nx, ny, nt, seed).unwrap();
    let full = coil_kspace(&image, &coils).unwrap();
    let mask = line_mask((nx, ny, nt), 3.0, 2, &mut rng).unwrap();
    let loss_mask = SamplingMask::from_fn((nx, ny, nt), |_, _, _| rng.random_bool(0.5));
    let y = crate::tensor::forward_op(&image, &coils, &mask).unwrap();
    let _ = &full;
    let target = ComplexGrid::random(full.shape(), &mut rng);
    Setup { coils, mask, y, target, loss_mask }
}

/// `Σ_{m} |pred − target|²` and its cotangent `2 (pred − target)` on `m`.
fn l2(pred: &ComplexGrid, target: &ComplexGrid, m: &SamplingMask) -> (f64, ComplexGrid) {
    let nc = pred.shape().nc;
    let mut g = ComplexGrid::zeros(pred.shape());
    let mut loss = 0.0;
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        if m.bits()[i / nc] {
            let d = p - t;
            loss += d.norm_sqr();
            g.data_mut()[i] = d * 2.0;
        }
    }
    (loss, g)
}

#[test]
fn zero_input_zero_output() {
    let s = setup(1, 2);
    let params = ModelParams::init(small_config(), 0.1, &mut rng_from(0)).unwrap();
    let zero = ComplexGrid::zeros(s.y.shape());
    let out = reconstruct(&params, &zero, &s.mask, &s.coils).unwrap();
    assert_eq!(out.norm(), 0.0);
    let out = reconstruct(&ModelParams::zeros(small_config()), &zero, &s.mask, &s.coils).unwrap();
    assert_eq!(out.norm(), 0.0);
}

#[test]
fn no_dc_no_regularizer_is_zero_filled_passthrough() {
    let s = setup(2, 2);
    let out = reconstruct(&ModelParams::zeros(small_config()), &s.y, &s.mask, &s.coils).unwrap();
    let zf = coil_kspace(&adjoint_op(&s.y, &s.coils, &s.mask).unwrap(), &s.coils).unwrap();
    assert!(out.sub(&zf).unwrap().norm() < 1e-12);
}

#[test]
fn dc_step_keeps_consistent_full_data() {
    let mut rng = rng_from(3);
    let coils = make_coils(8, 8, 1, 0).unwrap();
    let mask = SamplingMask::ones((8, 8, 2));
    let y = ComplexGrid::random(Shape::new(8, 8, 2, 1), &mut rng);
    let cfg = ModelConfig { unrolls: 1, ..small_config() };
    let out = reconstruct(&ModelParams::dc_only(cfg, 1.0), &y, &mask, &coils).unwrap();
    assert!(out.sub(&y).unwrap().norm() < 1e-8);
}

#[test]
fn zero_cotangent_zero_gradient() {
    let s = setup(4, 2);
    let params = ModelParams::init(small_config(), 0.1, &mut rng_from(1)).unwrap();
    let g = backward(&params, &s.y, &s.mask, &s.coils, &ComplexGrid::zeros(s.y.shape())).unwrap();
    assert!(g.to_flat().iter().all(|&v| v == 0.0));
}

#[test]
fn untouched_temporal_taps_get_no_gradient() {
    // with a single frame, off-center temporal taps only ever see padding
    let s = setup(5, 1);
    let params = ModelParams::init(small_config(), 0.5, &mut rng_from(2)).unwrap();
    let pred = reconstruct(&params, &s.y, &s.mask, &s.coils).unwrap();
    let (_, cot) = l2(&pred, &s.target, &s.loss_mask);
    let g = backward(&params, &s.y, &s.mask, &s.coils, &cot).unwrap();
    for u in &g.unrolls {
        for (j, w) in u.temporal_in.iter().enumerate() {
            if j % 3 != 1 {
                assert_eq!(*w, C64::new(0.0, 0.0));
            }
        }
        assert_eq!(u.temporal_out[0], C64::new(0.0, 0.0));
        assert_eq!(u.temporal_out[2], C64::new(0.0, 0.0));
        assert_ne!(u.temporal_out[1], C64::new(0.0, 0.0));
    }
}

#[test]
fn full_model_matches_finite_differences() {
    let s = setup(6, 3);
    let mut params = ModelParams::init(small_config(), 0.5, &mut rng_from(3)).unwrap();
    params.unrolls.iter_mut().enumerate().for_each(|(i, u)| {
        u.bias.iter_mut().for_each(|b| *b = 0.05 * i as f64);
        u.dc_step = 0.7 + 0.1 * i as f64;
    });
    let loss = |p: &ModelParams| -> Result<f64> {
        let pred = reconstruct(p, &s.y, &s.mask, &s.coils)?;
        Ok(l2(&pred, &s.target, &s.loss_mask).0)
    };
    let pred = reconstruct(&params, &s.y, &s.mask, &s.coils).unwrap();
    let (_, cot) = l2(&pred, &s.target, &s.loss_mask);
    let analytic = backward(&params, &s.y, &s.mask, &s.coils, &cot).unwrap().to_flat();
    let mut rng = rng_from(4);
    let n = params.num_real_params();
    let mut idx: Vec<usize> = (0..60).map(|_| rng.random_range(0..n)).collect();
    // every DC step and every bias block
    let per = n / params.config.unrolls;
    for u in 0..params.config.unrolls {
        idx.push((u + 1) * per - 1);
        idx.push((u + 1) * per - 2);
    }
    let numeric = finite_difference(&params, &idx, 1e-4, loss).unwrap();
    for (k, &i) in idx.iter().enumerate() {
        let e = relative_error(analytic[i], numeric[k], 1e-6);
        assert!(e < 1e-4, "param {i}: analytic {} numeric {} rel {e}", analytic[i], numeric[k]);
    }
}

#[test]
fn initialization_is_bounded() {
    let s = setup(7, 4);
    for seed in 0..5 {
        let params = ModelParams::init(ModelConfig::default(), 0.1, &mut rng_from(seed)).unwrap();
        let (k, tape) = reconstruct_with_tape(&params, &s.y, &s.mask, &s.coils).unwrap();
        let x0 = adjoint_op(&s.y, &s.coils, &s.mask).unwrap().norm();
        for t in &tape.unrolls {
            assert!(t.residual.norm() < 1e3 * x0);
            assert!(t.h1.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() < 1e3 * x0);
        }
        assert!(k.norm() < 1e3 * s.y.norm());
    }
}

#[test]
fn dc_only_unrolls_reduce_residual_monotonically() {
    let s = setup(8, 2);
    let bound = normal_op_norm(&s.coils, &s.mask, 50, &mut rng_from(0)).unwrap();
    assert!(bound <= 1.0 + 1e-9, "normalized coils keep the normal operator contractive");
    let residual = |x: &ComplexGrid| crate::tensor::forward_op(x, &s.coils, &s.mask).unwrap().sub(&s.y).unwrap().norm();
    for eta in [0.5 / bound, 1.0 / bound, 1.9 / bound] {
        let mut last = residual(&adjoint_op(&s.y, &s.coils, &s.mask).unwrap());
        for unrolls in 1..=6 {
            let cfg = ModelConfig { unrolls, ..small_config() };
            let pred = reconstruct(&ModelParams::dc_only(cfg, eta), &s.y, &s.mask, &s.coils).unwrap();
            let r = residual(&coil_image(&pred, &s.coils).unwrap());
            assert!(r < last, "eta {eta}, U = {unrolls}: {r} !< {last}");
            last = r;
        }
    }
}

#[test]
fn divergence_is_an_error() {
    let s = setup(9, 2);
    let mut params = ModelParams::dc_only(small_config(), 1.0);
    params.unrolls[1].dc_step = 1e12;
    let err = reconstruct(&params, &s.y, &s.mask, &s.coils).unwrap_err();
    assert!(matches!(err, Error::Divergence { unroll: 1 }), "{err}");
}

#[test]
fn flat_round_trip_and_count() {
    let cfg = ModelConfig::default();
    let p = ModelParams::init(cfg, 0.1, &mut rng_from(5)).unwrap();
    let per_unroll = 2 * (4 * 25 + 16 * 3 + 4 * 25 + 3) + 4 + 1;
    assert_eq!(p.num_real_params(), 6 * per_unroll);
    let mut q = ModelParams::zeros(cfg);
    q.set_flat(&p.to_flat()).unwrap();
    assert_eq!(p, q);
    assert!(p.unrolls.iter().all(|u| u.dc_step > 0.0 && u.bias.iter().all(|&b| b >= 0.0)));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = ModelParams::init(small_config(), 0.3, &mut rng_from(6)).unwrap();
    save_checkpoint(dir.path(), &p, 17, 99, "train").unwrap();
    let (q, manifest) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(manifest.step, 17);
    assert_eq!(manifest.rng_seed, 99);
    let err = p.to_flat().iter().zip(q.to_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "f32 storage error {err}");
}
