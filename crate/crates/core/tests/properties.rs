mod common;

use common::*;
use proptest::prelude::*;
use talklora::adapters::{
    build_adapter_stack, AdapterConfig, AdapterMethod, FrozenModel, ParamHandle, ProjectionTag,
};
use talklora::analysis::{communication_heatmap, entropy, normalize_max_abs, routing_load};
use talklora::autodiff::randomize_parameters;
use talklora::cli::{bit_identical, decode, encode, Checkpoint};
use talklora::linalg::{softmax, RngState};
use talklora::tasks::Sample;

fn method() -> impl Strategy<Value = AdapterMethod> {
    prop::sample::select(AdapterMethod::ALL.to_vec())
}

fn random_stack(
    seed: u64,
    method: AdapterMethod,
    n: usize,
    share: bool,
    talking: bool,
    layers: usize,
) -> (FrozenModel, talklora::adapters::AdapterStack) {
    let mut rng = RngState::new(seed);
    let model = FrozenModel::random(layers, 6, 6, ProjectionTag::V, &mut rng).unwrap();
    let n = if method == AdapterMethod::Lora { 1 } else { n };
    let cfg = AdapterConfig::new(2 * n, n).with_share_b(share).with_talking(talking);
    let mut stack =
        build_adapter_stack(&model.geometry(), method, &cfg, &[ProjectionTag::V], &rng.fork(1)).unwrap();
    randomize_parameters(&mut stack, 0.8, &mut rng);
    (model, stack)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gates_stay_on_the_simplex(seed in any::<u64>(), m in method(), n in 1usize..4, talking in any::<bool>()) {
        prop_assume!(m != AdapterMethod::Lora);
        let (model, stack) = random_stack(seed, m, n, true, talking, 2);
        let mut rng = RngState::new(seed ^ 1);
        let x = rng.normal_vec(6, 3.0);
        let (_, traces) = model.forward_traced(&stack, &x).unwrap();
        for t in traces.into_iter().flatten() {
            prop_assert!(t.gates.iter().all(|&g| (0.0..=1.0).contains(&g)));
            prop_assert!((t.gates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_bounds(z in prop::collection::vec(-20.0f64..20.0, 1..9)) {
        let p = softmax(&z).unwrap();
        let h = entropy(&p);
        prop_assert!(h >= 0.0 && h <= (p.len() as f64).ln());
        let uniform = vec![1.0 / p.len() as f64; p.len()];
        prop_assert!(entropy(&uniform) >= h - 1e-12);
    }

    #[test]
    fn routing_report_is_well_formed(seed in any::<u64>(), n in 2usize..4) {
        let (model, stack) = random_stack(seed, AdapterMethod::TalkLora, n, true, true, 2);
        let mut rng = RngState::new(seed);
        let data: Vec<Sample> = (0..10).map(|_| Sample::new(rng.normal_vec(6, 1.0), vec![0.0; 6])).collect();
        let rep = routing_load(&stack, &model, &data).unwrap();
        for l in &rep.layers {
            prop_assert!((l.mean_gates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(l.entropy >= 0.0 && l.entropy <= (n as f64).ln());
            prop_assert!(l.max_share >= 1.0 / n as f64 - 1e-15);
        }
        prop_assert!(rep.load_cv >= 0.0);
    }

    #[test]
    fn heatmap_is_idempotent(seed in any::<u64>(), n in 1usize..5, scale in 1e-3f64..1e3) {
        let mut rng = RngState::new(seed);
        let c = random_matrix(n, n, scale, &mut rng);
        let once = normalize_max_abs(&c);
        prop_assert_eq!(normalize_max_abs(&once), once.clone());
        prop_assert!(once.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn heatmap_covers_every_talklora_site(seed in any::<u64>(), layers in 1usize..4) {
        let (_, stack) = random_stack(seed, AdapterMethod::TalkLora, 2, false, true, layers);
        let maps = communication_heatmap(&stack);
        prop_assert_eq!(maps.len(), layers);
        for m in maps {
            prop_assert_eq!(normalize_max_abs(&m.matrix), m.matrix);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(
        seed in any::<u64>(),
        m in method(),
        n in 1usize..4,
        share in any::<bool>(),
        talking in any::<bool>(),
        layers in 1usize..4,
    ) {
        let (model, stack) = random_stack(seed, m, n, share, talking, layers);
        let ckpt = Checkpoint { stack, frozen: Some(model), run_config: None };
        let bytes = encode(&ckpt).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert!(bit_identical(&ckpt, &back));
        prop_assert_eq!(&back.frozen, &ckpt.frozen);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn any_flipped_payload_bit_is_detected(seed in any::<u64>(), pos in 0.0f64..1.0, bit in 0u8..8) {
        let (model, stack) = random_stack(seed, AdapterMethod::TalkLora, 2, true, true, 2);
        let ckpt = Checkpoint { stack, frozen: Some(model), run_config: None };
        let mut bytes = encode(&ckpt).unwrap();
        let header_end = 16 + u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let i = header_end + ((bytes.len() - header_end - 1) as f64 * pos) as usize;
        bytes[i] ^= 1 << bit;
        prop_assert!(decode(&bytes).is_err());
    }

    #[test]
    fn param_handles_roundtrip_through_names(seed in any::<u64>(), m in method(), share in any::<bool>()) {
        let (_, stack) = random_stack(seed, m, 2, share, true, 2);
        for h in stack.param_handles() {
            let back: ParamHandle = h.to_string().parse().unwrap();
            prop_assert_eq!(back, h);
        }
    }

    #[test]
    fn adapter_output_is_finite_for_bounded_inputs(seed in any::<u64>(), m in method()) {
        let (model, stack) = random_stack(seed, m, 3, true, true, 3);
        let mut rng = RngState::new(seed);
        let y = model.forward(&stack, &rng.normal_vec(6, 10.0)).unwrap();
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}
