mod common;

use anb::noise::{inject, perturb_group, NoiseStream};
use anb::{fixtures, layer_sigma, restore, snapshot, InjectionPlan, NoiseError, NoiseSpec};
use common::*;
use proptest::prelude::*;

#[test]
fn sigma_matches_two_pass_on_fixture_groups() {
    for model in fixtures::all_models() {
        for g in model.layer_groups() {
            let got = layer_sigma(&model, &g).unwrap().sigma_w;
            let want = two_pass_std(&group_values(&model, g.index));
            assert!((got - want).abs() <= 1e-6 * want.max(f64::MIN_POSITIVE), "{} group {}", model.name(), g.index);
        }
    }
}

#[test]
fn sigma_matches_two_pass_on_random_tensors() {
    for seed in 0..100u64 {
        let f = 1 + (seed as usize * 7) % 23;
        let g = 1 + (seed as usize * 13) % 17;
        let raw = random_tensor(&[f, g], seed);
        // Offsets stress the single-pass update against cancellation.
        let shift = (seed % 5) as f32 * 10.0;
        let weight = anb::Tensor::new(vec![f, g], raw.data().iter().map(|v| v + shift).collect()).unwrap();
        let model = dense_only_model(weight);
        let got = layer_sigma(&model, &model.group(1).unwrap()).unwrap().sigma_w;
        let want = two_pass_std(&group_values(&model, 1));
        if want == 0.0 {
            assert_eq!(got, 0.0);
        } else {
            assert!((got - want).abs() / want <= 1e-6, "seed {seed}: {got} vs {want}");
        }
    }
}

#[test]
fn applied_noise_statistics_at_full_power() {
    let weight = random_tensor(&[1000, 1000], 4242);
    let clean = dense_only_model(weight);
    let mut noisy = clean.clone();
    let g = clean.group(1).unwrap();
    let sigma = perturb_group(&mut noisy, &g, &NoiseSpec::new(100.0, 7, 1).unwrap(), 0).unwrap().sigma_w;
    let (mean, std) = mean_std(&applied_noise(&clean, &noisy, 1));
    assert!((std - sigma).abs() <= 0.01 * sigma, "std {std} vs sigma {sigma}");
    assert!(mean.abs() <= 3.0 * sigma / 1000.0, "mean {mean}");
}

#[test]
fn standard_normal_stream_moments() {
    let mut s = NoiseStream::new(3, 0, 1);
    let z: Vec<f64> = (0..200_000).map(|_| s.next_standard_normal()).collect();
    let (mean, std) = mean_std(&z);
    assert!(mean.abs() < 0.01);
    assert!((std - 1.0).abs() < 0.01);
    let within_one = z.iter().filter(|v| v.abs() <= 1.0).count() as f64 / z.len() as f64;
    assert!((within_one - 0.6827).abs() < 0.005, "{within_one}");
}

#[test]
fn zero_power_is_bit_identical() {
    for clean in fixtures::all_models() {
        let mut m = clean.clone();
        inject(&mut m, InjectionPlan::All, &NoiseSpec::new(0.0, 1, 1).unwrap(), 0).unwrap();
        assert_eq!(snapshot(&m), snapshot(&clean));
        assert_eq!(anb::encode_model(&m), anb::encode_model(&clean));
    }
}

#[test]
fn same_key_same_realization() {
    let clean = fixtures::tiny_cnn();
    let spec = NoiseSpec::new(20.0, 11, 3).unwrap();
    let run = |trial| {
        let mut m = clean.clone();
        inject(&mut m, InjectionPlan::All, &spec, trial).unwrap();
        m.param_digest()
    };
    assert_eq!(run(2), run(2));
    assert_ne!(run(0), run(1));
}

#[test]
fn seeds_give_different_weights() {
    let clean = fixtures::tiny_cnn();
    let mut a = clean.clone();
    let mut b = clean.clone();
    inject(&mut a, InjectionPlan::Single(1), &NoiseSpec::new(10.0, 1, 1).unwrap(), 0).unwrap();
    inject(&mut b, InjectionPlan::Single(1), &NoiseSpec::new(10.0, 2, 1).unwrap(), 0).unwrap();
    assert_ne!(group_values(&a, 1), group_values(&b, 1));
}

#[test]
fn single_touches_only_its_group() {
    for clean in fixtures::all_models() {
        let groups = clean.layer_groups();
        let before: Vec<_> = groups.iter().map(|g| clean.group_digest(g).unwrap()).collect();
        for g in &groups {
            let mut m = clean.clone();
            inject(&mut m, InjectionPlan::Single(g.index), &NoiseSpec::new(40.0, 5, 1).unwrap(), 0).unwrap();
            for (j, h) in groups.iter().enumerate() {
                let changed = m.group_digest(h).unwrap() != before[j];
                assert_eq!(changed, h.index == g.index, "{} Single({}) group {}", clean.name(), g.index, h.index);
            }
        }
    }
}

#[test]
fn snapshot_restore_round_trip() {
    let clean = fixtures::tiny_resnet();
    let snap = snapshot(&clean);
    let mut m = clean.clone();
    inject(&mut m, InjectionPlan::All, &NoiseSpec::new(100.0, 3, 1).unwrap(), 0).unwrap();
    assert_ne!(snapshot(&m), snap);
    restore(&mut m, &snap).unwrap();
    assert_eq!(m.param_digest(), clean.param_digest());

    let mut other = fixtures::tiny_cnn();
    assert!(matches!(restore(&mut other, &snap), Err(NoiseError::SnapshotMismatch(_))));
}

#[test]
fn invalid_requests_are_rejected() {
    assert!(matches!(NoiseSpec::new(-1.0, 0, 1), Err(NoiseError::InvalidPower(_))));
    assert!(matches!(NoiseSpec::new(f64::NAN, 0, 1), Err(NoiseError::InvalidPower(_))));
    assert!(matches!(NoiseSpec::new(5.0, 0, 0), Err(NoiseError::NoTrials)));
    let mut m = fixtures::tiny_cnn();
    let spec = NoiseSpec::new(5.0, 0, 2).unwrap();
    assert!(matches!(inject(&mut m, InjectionPlan::Single(6), &spec, 0), Err(NoiseError::PlanOutOfRange { .. })));
    assert!(matches!(inject(&mut m, InjectionPlan::Prefix(0), &spec, 0), Err(NoiseError::PlanOutOfRange { .. })));
    assert!(matches!(inject(&mut m, InjectionPlan::All, &spec, 2), Err(NoiseError::TrialOutOfRange { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prefix_n_equals_all(model_idx in 0usize..4, seed in any::<u64>(), power in 0.0f64..100.0, trial in 0usize..3) {
        let clean = fixtures::all_models().swap_remove(model_idx);
        let spec = NoiseSpec::new(power, seed, 3).unwrap();
        let mut a = clean.clone();
        let mut b = clean.clone();
        inject(&mut a, InjectionPlan::All, &spec, trial).unwrap();
        inject(&mut b, InjectionPlan::Prefix(clean.group_count()), &spec, trial).unwrap();
        prop_assert_eq!(a.param_digest(), b.param_digest());
    }

    #[test]
    fn sigma_is_scale_equivariant(seed in any::<u64>(), scale in 0.01f32..100.0) {
        let raw = random_tensor(&[9, 5], seed);
        let scaled = anb::Tensor::new(vec![9, 5], raw.data().iter().map(|v| v * scale).collect()).unwrap();
        let m1 = dense_only_model(raw);
        let m2 = dense_only_model(scaled);
        let s1 = layer_sigma(&m1, &m1.group(1).unwrap()).unwrap().sigma_w;
        let s2 = layer_sigma(&m2, &m2.group(1).unwrap()).unwrap().sigma_w;
        prop_assert!((s2 - f64::from(scale) * s1).abs() <= 1e-5 * s2.max(1e-12));
    }
}
