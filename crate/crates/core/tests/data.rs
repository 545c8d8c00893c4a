use std::fs;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use xumx_core::data::{
    default_source_names, load_musdb_layout, oracle_sdr, synth_dataset, write_musdb_layout, DatasetSplit,
    ExcerptSampler, SynthSpec, Track,
};
use xumx_core::dsp::{StftConfig, Waveform};
use xumx_core::Error;

fn small_spec(num_tracks: usize, duration_s: f64) -> SynthSpec {
    SynthSpec {
        num_tracks,
        duration_s,
        ..SynthSpec::default()
    }
}

#[test]
fn musdb_layout_round_trips_through_disk() {
    let tracks = synth_dataset(&small_spec(2, 0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_musdb_layout(dir.path(), &tracks).unwrap();
    let loaded = load_musdb_layout(dir.path(), &default_source_names(4)).unwrap();
    assert_eq!(loaded.len(), 2);
    for (a, b) in loaded.iter().zip(&tracks) {
        assert_eq!(a.name, b.name);
        for (x, y) in a.stems.iter().zip(&b.stems) {
            // Stored as float32.
            let err = x
                .samples
                .iter()
                .zip(&y.samples)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-7);
        }
    }
}

#[test]
fn missing_stem_is_reported_by_name() {
    let tracks = synth_dataset(&small_spec(1, 0.25)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_musdb_layout(dir.path(), &tracks).unwrap();
    let vocals = dir.path().join(&tracks[0].name).join("vocals.wav");
    fs::remove_file(&vocals).unwrap();
    match load_musdb_layout(dir.path(), &default_source_names(4)) {
        Err(Error::MissingFile(p)) => assert_eq!(p, vocals),
        other => panic!("expected a missing-file error, got {other:?}"),
    }
}

#[test]
fn stem_sum_mismatch_is_recorded_not_fatal() {
    let mut tracks = synth_dataset(&small_spec(1, 0.25)).unwrap();
    let t = &mut tracks[0];
    t.mixture.samples.iter_mut().for_each(|v| *v += 0.01);
    let dir = tempfile::tempdir().unwrap();
    write_musdb_layout(dir.path(), &tracks).unwrap();
    let loaded = load_musdb_layout(dir.path(), &default_source_names(4)).unwrap();
    assert!(loaded[0].sum_residual > 1e-3);
    assert!(loaded[0].sum_residual < 0.011);
}

#[test]
fn oracle_masks_separate_the_default_dataset_well() {
    let spec = small_spec(4, 10.0);
    let tracks = synth_dataset(&spec).unwrap();
    let sdr = oracle_sdr(&tracks, &spec.layout(), &StftConfig::desk()).unwrap();
    assert_eq!(sdr.len(), 4);
    for v in sdr {
        assert!(v >= 15.0, "oracle SDR {v}");
    }
}

#[test]
fn excerpt_positions_are_uniform() {
    // Four equally long tracks and five offset bins each: 20 equiprobable cells.
    let tracks: Vec<Track> = (0..4)
        .map(|k| {
            let stems = vec![Waveform::zeros(1099, 1000), Waveform::zeros(1099, 1000)];
            Track::from_stems(format!("t{k}"), default_source_names(2), stems).unwrap()
        })
        .collect();
    let mut sampler = ExcerptSampler::new(&tracks, 100, 3).unwrap();
    let draws = 10_000;
    let mut counts = [0usize; 20];
    for _ in 0..draws {
        let (track, offset) = sampler.position();
        assert!(offset + 100 <= 1099);
        counts[track * 5 + offset / 200] += 1;
    }
    let expected = draws as f64 / 20.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn splits_are_disjoint_and_seeded() {
    let tracks = synth_dataset(&small_spec(8, 0.1)).unwrap();
    let a = DatasetSplit::new(tracks.clone(), 2, 1, 5).unwrap();
    assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (5, 2, 1));
    let mut names: Vec<_> = a
        .train
        .iter()
        .chain(&a.valid)
        .chain(&a.test)
        .map(|t| t.name.clone())
        .collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 8);
    assert_eq!(a, DatasetSplit::new(tracks.clone(), 2, 1, 5).unwrap());
    assert!(DatasetSplit::new(tracks, 4, 4, 0).is_err());
}
