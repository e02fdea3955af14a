use super::*;
use crate::recon::{coil_kspace, ModelConfig};
use crate::sampling::{line_mask, preset, RatioDist, Resplit};
use crate::seed::rng_from;
use crate::tensor::{make_coils, make_phantom};

fn tiny_model() -> ModelConfig {
    ModelConfig { unrolls: 2, channels: 2, spatial_kernel: 3, temporal_kernel: 3 }
}

fn subjects(n: usize, dims: (usize, usize, usize), nc: usize) -> Vec<Subject> {
    (0..n as u64)
        .map(|s| {
            let coils = make_coils(dims.0, dims.1, nc, 100 + s).unwrap();
            let image = make_phantom(dims.0, dims.1, dims.2, s).unwrap();
            Subject { kspace: coil_kspace(&image, &coils).unwrap(), coils, acquired: None }
        })
        .collect()
}

fn config(name: &str, kind: LossKind, steps: usize) -> TrainConfig {
    let mut c = TrainConfig::new(preset(name).unwrap(), kind, steps, 7);
    c.model = tiny_model();
    c.lr = 1e-2;
    c
}

struct Pair {
    params: ModelParams,
    coils: CoilMaps,
    y1: ComplexGrid,
    y2: ComplexGrid,
    m1: SamplingMask,
    m2: SamplingMask,
}

fn pair() -> Pair {
    let data = subjects(1, (10, 12, 3), 2);
    let mut rng = rng_from(3);
    let my = line_mask((10, 12, 3), 2.0, 2, &mut rng).unwrap();
    let subsets = re_undersample(&my, &preset("rand-init-seed").unwrap(), &mut rng).unwrap();
    let params = ModelParams::init(tiny_model(), 0.5, &mut rng).unwrap();
    let y0 = &data[0].kspace;
    Pair {
        params,
        coils: data[0].coils.clone(),
        y1: apply_mask(y0, &subsets[0]),
        y2: apply_mask(y0, &subsets[1]),
        m1: subsets[0].clone(),
        m2: subsets[1].clone(),
    }
}

#[test]
fn cross_loss_is_the_mean_of_both_directions() {
    let p = pair();
    for norm in [LossNorm::L1, LossNorm::L2] {
        let d1 = reconstruct(&p.params, &p.y1, &p.m1, &p.coils).unwrap();
        let d2 = reconstruct(&p.params, &p.y2, &p.m2, &p.coils).unwrap();
        let expected =
            0.5 * masked_loss(&d1, &p.y2, &p.m2, norm).unwrap() + 0.5 * masked_loss(&d2, &p.y1, &p.m1, norm).unwrap();
        let got = cross_loss(&p.params, &p.y1, &p.y2, &p.m1, &p.m2, &p.coils, norm).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        let swapped = cross_loss(&p.params, &p.y2, &p.y1, &p.m2, &p.m1, &p.coils, norm).unwrap();
        assert!((got - swapped).abs() < 1e-12);
    }
}

#[test]
fn cross_gradient_averages_single_directions() {
    let p = pair();
    let (_, g) = cross_loss_grad(&p.params, &p.y1, &p.y2, &p.m1, &p.m2, &p.coils, LossNorm::L1).unwrap();
    let (_, g12) = path_loss_grad(&p.params, &p.y1, &p.m1, &p.y2, &p.m2, &p.coils, LossNorm::L1).unwrap();
    let (_, g21) = path_loss_grad(&p.params, &p.y2, &p.m2, &p.y1, &p.m1, &p.coils, LossNorm::L1).unwrap();
    for ((a, b), c) in g.to_flat().iter().zip(g12.to_flat()).zip(g21.to_flat()) {
        assert!((a - 0.5 * (b + c)).abs() < 1e-10);
    }
}

#[test]
fn cross_gradient_matches_finite_differences() {
    let p = pair();
    let (_, g) = cross_loss_grad(&p.params, &p.y1, &p.y2, &p.m1, &p.m2, &p.coils, LossNorm::L2).unwrap();
    let flat = g.to_flat();
    let idx: Vec<usize> = (0..flat.len()).step_by(7).collect();
    let fd = crate::recon::finite_difference(&p.params, &idx, 1e-5, |q| {
        cross_loss(q, &p.y1, &p.y2, &p.m1, &p.m2, &p.coils, LossNorm::L2)
    })
    .unwrap();
    for (&i, n) in idx.iter().zip(fd) {
        let e = crate::recon::relative_error(flat[i], n, 1e-6);
        assert!(e < 1e-5, "param {i}: {} vs {n}", flat[i]);
    }
}

#[test]
fn exact_model_has_zero_cross_loss() {
    let data = subjects(1, (8, 8, 2), 2);
    let full = SamplingMask::ones((8, 8, 2));
    let params = ModelParams::dc_only(tiny_model(), 1.0);
    let y = &data[0].kspace;
    let l = cross_loss(&params, y, y, &full, &full, &data[0].coils, LossNorm::L1).unwrap();
    assert!(l < 1e-12, "{l}");
}

#[test]
fn empty_direction_is_an_error() {
    let p = pair();
    let empty = SamplingMask::zeros(p.m1.dims());
    let r = cross_loss(&p.params, &p.y1, &p.y2, &p.m1, &empty, &p.coils, LossNorm::L1);
    assert!(matches!(r, Err(Error::EmptyLossMask)));
}

#[test]
fn zero_steps_leave_initial_params() {
    let data = subjects(1, (8, 8, 2), 2);
    let c = config("units-fix", LossKind::Single, 0);
    let run = train(&c, &data).unwrap();
    assert!(run.logs.is_empty());
    assert_eq!(run.params, initial_params(&c).unwrap());
}

#[test]
fn identical_seeds_give_identical_logs() {
    let data = subjects(2, (8, 8, 2), 2);
    for (name, kind) in
        [("units-base", LossKind::Single), ("units-cross", LossKind::Cross), ("rand-ratio", LossKind::Supervised)]
    {
        let c = config(name, kind, 6);
        let a = train(&c, &data).unwrap();
        let b = train(&c, &data).unwrap();
        let bits = |r: &TrainRun| r.logs.iter().map(|l| (l.loss.to_bits(), l.grad_norm.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{name}");
        assert_eq!(a.params, b.params);
        assert_eq!(a.logs.len(), 6);
    }
}

#[test]
fn step_draws_are_recomputable() {
    let data = subjects(3, (8, 8, 2), 1);
    let c = config("units-base", LossKind::Single, 10);
    let a = draw_step(&c, &data, 5).unwrap();
    let _ = draw_step(&c, &data, 4).unwrap();
    assert_eq!(a, draw_step(&c, &data, 5).unwrap());
    assert_ne!(a, draw_step(&c, &data, 6).unwrap());
}

#[test]
fn disjoint_steps_never_supervise_input_locations() {
    let data = subjects(2, (16, 16, 4), 1);
    for name in ["units-fix", "rand-init-seed", "rand-ratio", "zs-ssl"] {
        let c = config(name, LossKind::Single, 0);
        for step in 0..20 {
            let d = draw_step(&c, &data, step).unwrap();
            assert_eq!(d.subsets[0].overlap(&d.subsets[1]), 0, "{name}");
            assert!(d.subsets.iter().all(|m| m.is_subset_of(&d.acquired)));
        }
    }
}

#[test]
fn supervised_training_lowers_the_loss() {
    let data = subjects(1, (12, 12, 2), 2);
    let mut c = config("units-fix", LossKind::Supervised, 60);
    c.lr = 5e-3;
    let run = train(&c, &data).unwrap();
    let first: f64 = run.logs[..10].iter().map(|l| l.loss).sum();
    let last: f64 = run.logs[50..].iter().map(|l| l.loss).sum();
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn early_stopping_evaluates_on_schedule() {
    let data = subjects(1, (12, 12, 2), 1);
    let mut c = config("zs-ssl", LossKind::Single, 40);
    c.early_stop = EarlyStop { enabled: true, patience: 2, every: 4, val_subset_index: 2 };
    c.lr = 0.5;
    let run = train(&c, &data).unwrap();
    assert!(!run.validation.is_empty());
    assert!(run.validation.iter().all(|(s, _)| (s + 1) % 4 == 0));
    if let Some(s) = run.stopped_at {
        assert_eq!(run.logs.len(), s + 1);
    }
    let best = run.validation.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let v = validation_loss(&c, &run.params, &data).unwrap();
    assert!((v - best).abs() <= 1e-12 * best.max(1.0), "kept params score {v}, best was {best}");
}

#[test]
fn config_invariants() {
    let mut c = config("units-fix", LossKind::Cross, 1);
    assert!(c.validate().is_ok());
    c.lr = 0.0;
    assert!(c.validate().is_err());
    let c = config("zs-ssl", LossKind::Cross, 1);
    assert!(c.validate().is_err(), "cross needs two subsets");
    let mut c = config("units-fix", LossKind::Single, 1);
    c.early_stop.enabled = true;
    assert!(c.validate().is_err(), "early stop needs a held-out subset");
    let mut c = config("units-fix", LossKind::Single, 1);
    c.batch = 4;
    assert!(c.validate().is_err());
}

#[test]
fn config_toml_round_trip() {
    let c = config("units-cross", LossKind::Cross, 123);
    let back = TrainConfig::from_toml(&c.to_toml().unwrap()).unwrap();
    assert_eq!(c, back);
}

#[test]
fn ood_with_full_mask_passes_data_through() {
    let data = subjects(1, (8, 8, 2), 2);
    let full = SamplingMask::ones((8, 8, 2));
    let params = ModelParams::dc_only(tiny_model(), 1.0);
    let y = &data[0].kspace;
    let plan = preset("units-fix").unwrap();
    let out = infer(&params, y, &full, &data[0].coils, Scenario::Ood, &plan, &mut rng_from(0)).unwrap();
    assert!(out.sub(y).unwrap().norm() < 1e-10 * y.norm());
}

#[test]
fn id_with_ratio_one_equals_ood() {
    let data = subjects(1, (10, 12, 3), 2);
    let mut rng = rng_from(4);
    let my = line_mask((10, 12, 3), 4.0, 2, &mut rng).unwrap();
    let y = apply_mask(&data[0].kspace, &my);
    let params = ModelParams::init(tiny_model(), 0.5, &mut rng).unwrap();
    let mut plan = preset("rand-init-seed").unwrap();
    plan.resplit = Resplit::Disjoint { ratio: RatioDist::fixed(1.0) };
    let id = infer(&params, &y, &my, &data[0].coils, Scenario::Id, &plan, &mut rng).unwrap();
    let ood = infer(&params, &y, &my, &data[0].coils, Scenario::Ood, &plan, &mut rng).unwrap();
    assert_eq!(id, ood);
}

#[test]
fn id_input_density_is_ratio_over_acceleration() {
    let mut plan = preset("rand-init-seed").unwrap();
    plan.acs_lines = 0;
    let mut rng = rng_from(5);
    let mut total = 0.0;
    for _ in 0..20 {
        let my = draw_initial_mask(&plan, (64, 64, 8), &mut rng).unwrap();
        total += input_subset(&my, &plan, &mut rng).unwrap().density();
    }
    let d = total / 20.0;
    assert!((d - 0.05).abs() < 0.005, "{d}");
}
