mod common;

use common::*;
use proptest::prelude::*;
use talklora::adapters::{
    build_adapter_stack, lora_forward, lora_merge, moelora_forward, talking_mix, talklora_forward,
    AdapterConfig, AdapterMethod, FrozenModel, LoraAdapter, MoeLoraLayer, ParamHandle, ParamRole,
    ProjectionTag, SharedProjectionStore, TalkLoraLayer, UpProjections,
};
use talklora::analysis::count_params;
use talklora::autodiff::randomize_parameters;
use talklora::geometry::{ModelGeometry, ProjectionDims};
use talklora::linalg::{Matrix, RngState};

fn randomize_b(b: &mut [Matrix], rng: &mut RngState) {
    for m in b {
        *m = random_matrix(m.rows(), m.cols(), 0.7, rng);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lora_matches_oracle(seed in any::<u64>(), alpha in 0.5f64..16.0) {
        let mut rng = RngState::new(seed);
        let cfg = AdapterConfig::new(3, 1).with_alpha(alpha);
        let layer = random_layer(7, 5, &mut rng);
        let mut ad = LoraAdapter::new(7, 5, &cfg, &mut rng).unwrap();
        ad.b = random_matrix(5, 3, 1.0, &mut rng);
        let x = rng.normal_vec(7, 1.0);
        let y = lora_forward(&layer, &ad, &x, &cfg).unwrap();
        prop_assert!(max_abs_diff(&y, &lora_oracle(layer.w0(), &ad, &cfg, &x)) < 1e-12);
    }

    #[test]
    fn moelora_matches_oracle(seed in any::<u64>(), n in 1usize..3) {
        let mut rng = RngState::new(seed);
        let cfg = AdapterConfig::new(2 * n, n);
        let layer = random_layer(6, 4, &mut rng);
        let mut ml = MoeLoraLayer::new(6, 4, &cfg, &mut rng).unwrap();
        randomize_b(&mut ml.b, &mut rng);
        let x = rng.normal_vec(6, 1.0);
        let (y, t) = moelora_forward(&layer, &ml, &x, &cfg).unwrap();
        prop_assert!(max_abs_diff(&y, &moelora_oracle(layer.w0(), &ml, &cfg, &x)) < 1e-12);
        prop_assert!((t.gates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn talklora_matches_kronecker_oracle(seed in any::<u64>(), n in 1usize..5, talking in any::<bool>()) {
        let mut rng = RngState::new(seed);
        let cfg = AdapterConfig::new(2 * n, n).with_talking(talking);
        let layer = random_layer(9, 8, &mut rng);
        let mut tl = TalkLoraLayer::new_owned(9, 8, &cfg, &mut rng).unwrap();
        let mut b = match &tl.b { UpProjections::Owned(b) => b.clone(), _ => unreachable!() };
        randomize_b(&mut b, &mut rng);
        tl.b = UpProjections::Owned(b.clone());
        let x = rng.normal_vec(9, 1.0);
        let (y, t) = talklora_forward(&layer, &tl, &SharedProjectionStore::default(), &x, &cfg).unwrap();
        prop_assert!(max_abs_diff(&y, &talklora_oracle(layer.w0(), &tl, &b, &cfg, &x)) < 1e-12);
        prop_assert!(t.gates.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn talking_mix_equals_kronecker_product(seed in any::<u64>(), n in 1usize..5, re in 1usize..4) {
        let mut rng = RngState::new(seed);
        let c = random_matrix(n, n, 1.0, &mut rng);
        let h: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(re, 1.0)).collect();
        let flat: Vec<f64> = h.iter().flatten().copied().collect();
        let want = naive_matvec(&kron(&dense(&c), &eye(re)), &flat);
        let got: Vec<f64> = talking_mix(&c, &h).unwrap().into_iter().flatten().collect();
        prop_assert!(max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn delta_scales_exactly_with_alpha(seed in any::<u64>(), k in 1i32..6) {
        let mut rng = RngState::new(seed);
        let cfg = AdapterConfig::new(4, 2).with_alpha(3.0);
        let layer = random_layer(6, 6, &mut rng);
        let mut tl = TalkLoraLayer::new_owned(6, 6, &cfg, &mut rng).unwrap();
        if let UpProjections::Owned(b) = &mut tl.b { randomize_b(b, &mut rng); }
        let x = rng.normal_vec(6, 1.0);
        let store = SharedProjectionStore::default();
        let (_, t1) = talklora_forward(&layer, &tl, &store, &x, &cfg).unwrap();
        let scaled = cfg.clone().with_alpha(3.0 * 2f64.powi(k));
        let (_, t2) = talklora_forward(&layer, &tl, &store, &x, &scaled).unwrap();
        let want: Vec<f64> = t1.delta.iter().map(|v| v * 2f64.powi(k)).collect();
        prop_assert_eq!(t2.delta, want);
    }
}

#[test]
fn zero_init_every_family_is_frozen_output() {
    let mut rng = RngState::new(11);
    let model = FrozenModel::random(3, 8, 8, ProjectionTag::Q, &mut rng).unwrap();
    for method in AdapterMethod::ALL {
        for share in [true, false] {
            let cfg = AdapterConfig::new(4, 2).with_share_b(share);
            let stack =
                build_adapter_stack(&model.geometry(), method, &cfg, &[ProjectionTag::Q], &rng.fork(3))
                    .unwrap();
            for _ in 0..200 {
                let x = rng.normal_vec(8, 2.0);
                assert_eq!(model.forward(&stack, &x).unwrap(), model.forward_frozen(&x).unwrap());
            }
        }
    }
}

#[test]
fn merge_matches_forward() {
    let mut rng = RngState::new(2);
    let cfg = AdapterConfig::new(4, 1).with_alpha(8.0);
    let layer = random_layer(10, 6, &mut rng);
    let mut ad = LoraAdapter::new(10, 6, &cfg, &mut rng).unwrap();
    ad.b = random_matrix(6, 4, 1.0, &mut rng);
    let merged = lora_merge(&layer, &ad, &cfg).unwrap();
    let want = add(&dense(layer.w0()).concat(), &naive_matmul(&dense(&ad.b), &dense(&ad.a)).concat().iter().map(|v| 2.0 * v).collect::<Vec<_>>());
    assert!(max_abs_diff(merged.data(), &want) < 1e-12);
    for _ in 0..50 {
        let x = rng.normal_vec(10, 1.0);
        let y = lora_forward(&layer, &ad, &x, &cfg).unwrap();
        assert!(max_abs_diff(&y, &merged.matvec(&x).unwrap()) < 1e-10);
    }
}

#[test]
fn single_expert_moelora_equals_lora_bitwise() {
    let mut rng = RngState::new(5);
    let model = FrozenModel::random(2, 6, 6, ProjectionTag::Q, &mut rng).unwrap();
    let cfg = AdapterConfig::new(3, 1);
    let geom = model.geometry();
    let seed = rng.fork(1);
    let mut lora = build_adapter_stack(&geom, AdapterMethod::Lora, &cfg, &[ProjectionTag::Q], &seed).unwrap();
    let mut moe = build_adapter_stack(&geom, AdapterMethod::MoeLora, &cfg, &[ProjectionTag::Q], &seed).unwrap();
    for l in 0..2 {
        let a_l = ParamHandle::site(l, ProjectionTag::Q, ParamRole::LoraA);
        let a_m = ParamHandle::site(l, ProjectionTag::Q, ParamRole::A(0));
        assert_eq!(lora.param(&a_l), moe.param(&a_m));
        let b = random_matrix(6, 3, 1.0, &mut rng);
        *lora.param_mut(&ParamHandle::site(l, ProjectionTag::Q, ParamRole::LoraB)).unwrap() = b.clone();
        *moe.param_mut(&ParamHandle::site(l, ProjectionTag::Q, ParamRole::B(0))).unwrap() = b;
    }
    for _ in 0..100 {
        let x = rng.normal_vec(6, 1.0);
        assert_eq!(model.forward(&lora, &x).unwrap(), model.forward(&moe, &x).unwrap());
    }
}

#[test]
fn talking_disabled_equals_identity_c_on_stacks() {
    let mut rng = RngState::new(9);
    let model = FrozenModel::random(2, 8, 8, ProjectionTag::Q, &mut rng).unwrap();
    let cfg = AdapterConfig::new(4, 2);
    let mut on = build_adapter_stack(&model.geometry(), AdapterMethod::TalkLora, &cfg, &[ProjectionTag::Q], &rng.fork(0)).unwrap();
    randomize_parameters(&mut on, 0.5, &mut rng);
    let mut off = on.clone();
    off.set_talking(false);
    for l in 0..2 {
        *on.param_mut(&ParamHandle::site(l, ProjectionTag::Q, ParamRole::C)).unwrap() = Matrix::identity(2);
    }
    for _ in 0..100 {
        let x = rng.normal_vec(8, 1.0);
        assert_eq!(model.forward(&on, &x).unwrap(), model.forward(&off, &x).unwrap());
    }
}

#[test]
fn gates_oracle_agrees_with_layer_gates() {
    let mut rng = RngState::new(4);
    let cfg = AdapterConfig::new(6, 3);
    let tl = TalkLoraLayer::new_owned(6, 6, &cfg, &mut rng).unwrap();
    for _ in 0..50 {
        let x = rng.normal_vec(6, 1.0);
        let g = tl.gates(&x, &cfg).unwrap();
        assert!(max_abs_diff(&g, &talklora_gates_oracle(&tl, &tl.c, &x)) < 1e-14);
    }
}

fn small_geometries() -> Vec<ModelGeometry> {
    vec![
        ModelGeometry::builtin("toy").unwrap(),
        ModelGeometry {
            name: "mixed".into(),
            total_params: 10_000,
            layers: 3,
            projections: vec![
                ProjectionDims { tag: ProjectionTag::Q, d_in: 8, d_out: 8 },
                ProjectionDims { tag: ProjectionTag::K, d_in: 8, d_out: 4 },
                ProjectionDims { tag: ProjectionTag::Up, d_in: 8, d_out: 12 },
                ProjectionDims { tag: ProjectionTag::Down, d_in: 12, d_out: 8 },
            ],
            source: None,
        },
    ]
}

#[test]
fn budget_reconciles_with_allocated_tensors() {
    for geom in small_geometries() {
        let targets: Vec<ProjectionTag> = geom.projections.iter().map(|p| p.tag).collect();
        for method in AdapterMethod::ALL {
            for share in [true, false] {
                for talking in [true, false] {
                    let cfg = AdapterConfig::new(4, 2).with_share_b(share).with_talking(talking);
                    let stack = build_adapter_stack(&geom, method, &cfg, &targets, &RngState::new(0)).unwrap();
                    let budget = count_params(&geom, method, &cfg, &targets).unwrap();
                    assert_eq!(budget.trainable, stack.trainable_count(), "{method} {share} {talking}");
                    assert_eq!(budget.breakdown, stack.trainable_breakdown());
                }
            }
        }
    }
}

#[test]
fn toy_stack_allocates_136_scalars() {
    let geom = ModelGeometry::builtin("toy").unwrap();
    let stack = build_adapter_stack(&geom, AdapterMethod::TalkLora, &AdapterConfig::new(4, 2), &[ProjectionTag::Q], &RngState::new(1)).unwrap();
    let total: usize = stack.param_handles().iter().map(|h| stack.param(h).unwrap().len()).sum();
    assert_eq!(total, 136);
}
