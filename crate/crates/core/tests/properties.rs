use proptest::prelude::*;
use xumx_core::dsp::{istft, stft, StftConfig, Waveform};
use xumx_core::losses::{enumerate_combinations, wsdr};
use xumx_core::metrics::{aggregate, median};

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, 8000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stft_round_trip(samples in prop::collection::vec(-1.0f64..1.0, 1..3000), cfg in 0usize..3) {
        let (n, h) = [(64, 16), (128, 32), (256, 128)][cfg];
        let cfg = StftConfig::new(n, h).unwrap();
        let w = wave(samples);
        let back = istft(&stft(&w, &cfg).unwrap(), &cfg, w.len(), w.sample_rate).unwrap();
        for (a, b) in back.samples.iter().zip(&w.samples) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn wsdr_is_bounded_and_minimal_at_the_reference(
        data in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..200),
    ) {
        let est = wave(data.iter().map(|t| t.0).collect());
        let reference = wave(data.iter().map(|t| t.1).collect());
        let mix = wave(data.iter().map(|t| t.1 + t.2).collect());
        let v = wsdr(&est, &reference, &mix).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert_eq!(wsdr(&reference, &reference, &mix).unwrap(), -1.0);
    }

    #[test]
    fn aggregate_is_median_of_track_medians(
        tracks in prop::collection::vec(prop::collection::vec(prop::option::of(-50.0f64..50.0), 1..20), 1..8),
    ) {
        let medians: Vec<f64> = tracks
            .iter()
            .filter_map(|t| median(&t.iter().flatten().copied().collect::<Vec<_>>()))
            .collect();
        match aggregate(&tracks) {
            Ok(v) => prop_assert_eq!(Some(v), median(&medians)),
            Err(_) => prop_assert!(medians.is_empty()),
        }
    }
}

#[test]
fn scaling_the_estimate_moves_the_residual_term() {
    // Only the target cosine is scale invariant; the residual cosine sees y - g*x̂.
    let reference = wave(vec![1.0, 0.0]);
    let mix = wave(vec![1.0, 1.0]);
    assert_eq!(wsdr(&reference, &reference, &mix).unwrap(), -1.0);
    let doubled = wsdr(&wave(vec![2.0, 0.0]), &reference, &mix).unwrap();
    assert!((doubled - (-0.5 - 0.5 * 0.5f64.sqrt())).abs() < 1e-12);
}

#[test]
fn combination_counts() {
    for j in 2..=8 {
        let all = enumerate_combinations(j).unwrap();
        assert_eq!(all.len(), (1 << j) - 2);
        assert!(all.iter().all(|c| !c.is_empty() && c.len() < j));
    }
    assert!(enumerate_combinations(1).is_err());
}
