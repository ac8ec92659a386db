mod common;

use common::*;
use formlab::enumeration::{count, CountRequest, Strategy as Search};
use formlab::forms::normalize_det;
use formlab::{eval_normal, pull_back_box, NormSpec, SystemInstance, TargetBox};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn pruned(inst: &SystemInstance, target: &TargetBox, t: f64, norm: NormSpec) -> u64 {
    count(&CountRequest::new(inst.clone(), target.clone(), t).norm(norm).strategy(Search::Pruned)).unwrap().count
}

fn naive(inst: &SystemInstance, target: &TargetBox, t: f64, norm: NormSpec) -> u64 {
    count(&CountRequest::new(inst.clone(), target.clone(), t).norm(norm).strategy(Search::Naive)).unwrap().count
}

fn norm_strategy() -> impl Strategy<Value = NormSpec> {
    prop_oneof![Just(NormSpec::Sup), Just(NormSpec::Euclidean), Just(NormSpec::Ld { d: 4 })]
}

fn pow2() -> impl Strategy<Value = f64> {
    (-3i32..=3, any::<bool>()).prop_map(|(e, neg)| if neg { -(2f64.powi(e)) } else { 2f64.powi(e) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruned_matches_naive(
        spec_idx in 0usize..6,
        seed in 0u64..1000,
        t in 1u32..=12,
        v0 in prop::collection::vec(-3i64..=3, 4),
        w0 in 0.5f64..6.0,
        w1 in 0.2f64..3.0,
        w2 in 0.2f64..3.0,
        norm in norm_strategy(),
    ) {
        let inst = random_instance(spec_idx, seed, 0);
        let n = inst.n();
        let widths = [w0, w1, w2];
        let target = box_around(&inst, &v0[..n], &widths[..inst.r() + 1]);
        let t = t as f64;
        prop_assert_eq!(pruned(&inst, &target, t, norm), naive(&inst, &target, t, norm));
    }

    #[test]
    fn action_equivariance(seed in 0u64..10_000, spec_idx in 0usize..6, v in prop::collection::vec(-50.0f64..50.0, 4)) {
        let inst = random_instance(spec_idx, seed, 1);
        let v = &v[..inst.n()];
        let bare = SystemInstance::from_matrices(inst.spec().clone(), 1.0, inst.g1().clone(), DMatrix::identity(inst.r(), inst.r())).unwrap();
        let full = inst.eval(v).unwrap();
        let base = bare.eval(v).unwrap();
        let expect_first = inst.lambda() * base[0];
        prop_assert!((full[0] - expect_first).abs() <= 1e-12 * expect_first.abs().max(1.0) * 10.0);
        for k in 0..inst.r() {
            let lin: f64 = (0..inst.r()).map(|j| base[1 + j] * inst.g2()[(j, k)]).sum();
            prop_assert!((full[1 + k] - lin).abs() <= 1e-12 * lin.abs().max(1.0) * 10.0);
        }
    }

    #[test]
    fn diagonal_block_homogeneity(c in -6i64..=6, x in prop::collection::vec(-20i64..=20, 3)) {
        let spec = model_spec();
        let v = [x[0] as f64, x[1] as f64, x[2] as f64, 0.0];
        let scaled: Vec<f64> = v.iter().map(|a| a * c as f64).collect();
        let f = eval_normal(&spec, &v).unwrap()[0];
        let fc = eval_normal(&spec, &scaled).unwrap()[0];
        prop_assert_eq!(fc, (c * c) as f64 * f);
    }

    #[test]
    fn scaling_lambda_and_value_interval(
        seed in 0u64..1000,
        e in -4i32..=4,
        t in 2u32..=10,
        v0 in prop::collection::vec(-3i64..=3, 4),
    ) {
        let inst = random_instance(2, seed, 2);
        let target = box_around(&inst, &v0, &[3.0, 1.0]);
        let c = 2f64.powi(e);
        let scaled_inst = inst.with_lambda(c * inst.lambda()).unwrap();
        let mut scaled_box = target.clone();
        scaled_box.intervals[0] = (c * target.intervals[0].0, c * target.intervals[0].1);
        let t = t as f64;
        prop_assert_eq!(pruned(&inst, &target, t, NormSpec::Sup), pruned(&scaled_inst, &scaled_box, t, NormSpec::Sup));
    }

    #[test]
    fn monotone_in_radius_and_box(
        seed in 0u64..1000,
        spec_idx in 0usize..6,
        t in 1u32..=8,
        v0 in prop::collection::vec(-2i64..=2, 4),
        shrink in 0.1f64..1.0,
    ) {
        let inst = random_instance(spec_idx, seed, 3);
        let widths = [4.0, 2.0, 2.0];
        let big = box_around(&inst, &v0[..inst.n()], &widths[..inst.r() + 1]);
        let small_widths: Vec<f64> = widths.iter().map(|w| w * shrink).collect();
        let small = box_around(&inst, &v0[..inst.n()], &small_widths[..inst.r() + 1]);
        let t = t as f64;
        let at_t = pruned(&inst, &big, t, NormSpec::Sup);
        prop_assert!(at_t <= pruned(&inst, &big, t + 1.0, NormSpec::Sup));
        prop_assert!(pruned(&inst, &small, t, NormSpec::Sup) <= at_t);
    }

    #[test]
    fn symmetric_pairs(t in 1u32..=12, h0 in 0.1f64..20.0, h1 in 0.1f64..4.0, spec_idx in 0usize..6) {
        let spec = small_specs()[spec_idx].clone();
        prop_assume!(spec.is_even());
        let inst = SystemInstance::identity(spec.clone()).unwrap();
        let target = TargetBox::symmetric(&vec![h0, h1, h1][..spec.r + 1]);
        let total = pruned(&inst, &target, t as f64, NormSpec::Sup);
        let origin = target.contains(&vec![0.0; spec.r + 1]) as u64;
        prop_assert_eq!((total - origin) % 2, 0);
    }

    #[test]
    fn instance_json_round_trip_is_exact(spec_idx in 0usize..6, seed in 0u64..10_000) {
        let inst = random_instance(spec_idx, seed, 7);
        let back: SystemInstance = serde_json::from_str(&serde_json::to_string(&inst).unwrap()).unwrap();
        prop_assert_eq!(back, inst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pull_back_agrees_with_evaluation(
        seed in 0u64..10_000,
        lambda in pow2(),
        g2 in pow2(),
        v in prop::collection::vec(-4.0f64..4.0, 4),
        lo in prop::collection::vec(-8.0f64..8.0, 2),
        width in prop::collection::vec(0.0f64..8.0, 2),
    ) {
        let spec = model_spec();
        let g1 = formlab::sampling::sample_g1(&formlab::sampling::SamplerConfig::with_seed(seed), 4).unwrap();
        let inst = SystemInstance::from_matrices(spec, lambda, g1, DMatrix::from_element(1, 1, g2)).unwrap();
        let target = TargetBox::closed(lo.iter().zip(&width).map(|(a, w)| (*a, a + w)).collect());
        let region = pull_back_box(&inst, &target);
        let direct = target.contains(&inst.eval(&v).unwrap());
        let pulled = region.contains(&inst.eval_normal_coords(&v).unwrap());
        prop_assert_eq!(direct, pulled);
    }
}

#[test]
fn normalized_matrices_have_unit_determinant() {
    let g = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 1.0]);
    let n = normalize_det(&g).unwrap();
    assert!((n.determinant() - 1.0).abs() < 1e-12);
}
