use proptest::prelude::*;
use rand::Rng;

use scorewave::distort::{
    apply, distort_file, sample_chain, ChainConfig, DistortionKind, DistortionSpec, Pools,
};
use scorewave::seed;
use scorewave::signal::Signal;

const SR: u32 = 16_000;

const FILTERS: [DistortionKind; 9] = [
    DistortionKind::BandPass,
    DistortionKind::HighPass,
    DistortionKind::LowPass,
    DistortionKind::Plosive,
    DistortionKind::Sibilance,
    DistortionKind::BandReject,
    DistortionKind::RandomEq,
    DistortionKind::TwoPole,
    DistortionKind::Telephone,
];

fn noise(n: usize, s: u64, amp: f64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

fn pools() -> Pools {
    Pools {
        noise: vec![Signal::new(noise(8000, 3, 0.3), SR).unwrap()],
        rir: vec![],
    }
}

fn one_spec(kind: DistortionKind, s: u64) -> DistortionSpec {
    sample_chain(&ChainConfig::single(kind), &mut seed::rng(s))
        .unwrap()
        .remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_impulse_tails_die_within_a_second(k in 0..FILTERS.len(), s in any::<u64>()) {
        let spec = one_spec(FILTERS[k], s);
        let mut impulse = vec![0.0; 2 * SR as usize];
        impulse[0] = 1.0;
        let y = apply(&spec, &impulse, SR, &Pools::default()).unwrap();
        prop_assert!(y.iter().all(|v| v.is_finite()));
        let tail = y[SR as usize..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(tail < 1e-9, "{:?}: tail {tail:e}", spec);
    }

    #[test]
    fn silent_gaps_are_exact_zeros_over_whole_slots(s in any::<u64>()) {
        let spec = one_spec(DistortionKind::SilentGap, s);
        let x: Vec<f64> = noise(8000, s, 0.5).iter().map(|v| v + 0.6).collect();
        let y = apply(&spec, &x, SR, &Pools::default()).unwrap();
        let slot = (spec.params["length_ms"] * 1e-3 * SR as f64).round() as usize;
        for (a, b) in x.chunks(slot).zip(y.chunks(slot)) {
            let gap = b.iter().all(|v| *v == 0.0);
            prop_assert!(gap || a == b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn distortion_is_a_pure_function_of_seed_and_index(master in any::<u64>(), index in 0u64..1000) {
        let clean = Signal::new(noise(4000, index, 0.4), SR).unwrap();
        let cfg = ChainConfig::default();
        let p = pools();
        let a = distort_file(&clean, &cfg, &p, master, index).unwrap();
        let b = distort_file(&clean, &cfg, &p, master, index).unwrap();
        prop_assert!(a.distorted.samples.iter().all(|v| v.is_finite()));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn forced_gap_zeroes_everything() {
    let spec = DistortionSpec::new(
        DistortionKind::SilentGap,
        &[("length_ms", 40.0), ("probability", 1.0)],
        5,
    );
    let y = apply(&spec, &noise(3000, 1, 1.0), SR, &Pools::default()).unwrap();
    assert!(y.iter().all(|v| *v == 0.0));
}

/// The first type of each chain is a single weighted draw from the full table.
#[test]
fn first_type_frequencies_follow_the_weights() {
    let cfg = ChainConfig::default();
    let probs = cfg.probabilities();
    let n = 100_000;
    let mut rng = seed::rng(21);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..n {
        let chain = sample_chain(&cfg, &mut rng).unwrap();
        *counts.entry(chain[0].kind).or_insert(0usize) += 1;
    }
    for (kind, p) in probs {
        let c = counts.get(&kind).copied().unwrap_or(0) as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (c - n as f64 * p).abs() < 3.0 * sd.max(1.0),
            "{}: {c} vs {}",
            kind.name(),
            n as f64 * p
        );
    }
}
