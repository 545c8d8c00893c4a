//! BSSEval-style SDR and SAR with zero-lag projections.
//!
//! Scores are computed on non-overlapping frames, then reduced as the median
//! over frames of each track followed by the median over tracks. Frames whose
//! reference is silent are excluded rather than scored.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dsp::Waveform;
use crate::error::{shape_err, Error, Result};

/// Limit applied to every dB value.
pub const DB_CLAMP: f64 = 100.0;

/// Ridge added to the Gram matrix when it is not positive definite.
pub const RIDGE: f64 = 1e-10;

/// Frame length used by the evaluation scheme: one second of audio.
pub fn default_frame_len(sample_rate: u32) -> usize {
    sample_rate as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Metric {
    #[serde(rename = "SDR")]
    Sdr,
    #[serde(rename = "SAR")]
    Sar,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Sdr => "SDR",
            Metric::Sar => "SAR",
        })
    }
}

/// `10·log10(num/den)` clamped to `±DB_CLAMP`.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -DB_CLAMP;
    }
    if den <= 0.0 {
        return DB_CLAMP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CLAMP, DB_CLAMP)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_silent(x: &[f64]) -> bool {
    // Below -100 dB RMS relative to full scale.
    dot(x, x) <= 1e-10 * x.len() as f64
}

fn frame_bounds(len: usize, frame_len: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len.div_ceil(frame_len)).map(move |i| (i * frame_len, ((i + 1) * frame_len).min(len)))
}

fn check_pair(reference: &Waveform, est: &Waveform, frame_len: usize) -> Result<()> {
    if frame_len == 0 {
        return Err(Error::InvalidArgument("frame_len must be positive".into()));
    }
    if reference.len() != est.len() {
        return Err(shape_err(
            "metrics",
            format!("reference has {} samples, estimate {}", reference.len(), est.len()),
        ));
    }
    Ok(())
}

/// SDR of a single frame, or `None` when the reference is silent.
pub fn sdr(reference: &[f64], est: &[f64]) -> Option<f64> {
    if is_silent(reference) {
        return None;
    }
    let gain = dot(est, reference) / dot(reference, reference);
    let (mut target, mut distortion) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let s = gain * r;
        target += s * s;
        distortion += (e - s) * (e - s);
    }
    Some(ratio_db(target, distortion))
}

/// Per-frame SDR; `None` marks an excluded frame.
pub fn sdr_frames(reference: &Waveform, est: &Waveform, frame_len: usize) -> Result<Vec<Option<f64>>> {
    check_pair(reference, est, frame_len)?;
    Ok(frame_bounds(reference.len(), frame_len)
        .map(|(a, b)| sdr(&reference.samples[a..b], &est.samples[a..b]))
        .collect())
}

/// SAR of a single frame, or `None` when every reference is silent.
pub fn sar(references: &[&[f64]], est: &[f64]) -> Option<f64> {
    if references.iter().all(|r| is_silent(r)) {
        return None;
    }
    let j = references.len();
    let gram = DMatrix::from_fn(j, j, |a, b| dot(references[a], references[b]));
    let rhs = DVector::from_iterator(j, references.iter().map(|r| dot(r, est)));
    let coeffs = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            let ridged = gram + DMatrix::identity(j, j) * RIDGE;
            ridged.cholesky()?.solve(&rhs)
        }
    };
    let (mut proj_energy, mut artifact) = (0.0, 0.0);
    for (n, e) in est.iter().enumerate() {
        let p: f64 = references.iter().zip(coeffs.iter()).map(|(r, c)| c * r[n]).sum();
        proj_energy += p * p;
        artifact += (e - p) * (e - p);
    }
    Some(ratio_db(proj_energy, artifact))
}

/// Per-frame SAR against the span of all references.
pub fn sar_frames(references: &[Waveform], est: &Waveform, frame_len: usize) -> Result<Vec<Option<f64>>> {
    let first = references
        .first()
        .ok_or_else(|| Error::InvalidArgument("sar needs at least one reference".into()))?;
    for r in references {
        check_pair(r, est, frame_len)?;
    }
    Ok(frame_bounds(first.len(), frame_len)
        .map(|(a, b)| {
            let frames: Vec<&[f64]> = references.iter().map(|r| &r.samples[a..b]).collect();
            sar(&frames, &est.samples[a..b])
        })
        .collect())
}

/// Median of a non-empty slice; an even count averages the middle pair.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median over scored frames of one track.
pub fn track_median(frames: &[Option<f64>]) -> Option<f64> {
    let scored: Vec<f64> = frames.iter().flatten().copied().collect();
    median(&scored)
}

/// Median over frames within each track, then median over tracks.
///
/// Tracks without any scored frame do not contribute.
pub fn aggregate(track_frames: &[Vec<Option<f64>>]) -> Result<f64> {
    let medians: Vec<f64> = track_frames.iter().filter_map(|f| track_median(f)).collect();
    median(&medians).ok_or_else(|| Error::InvalidArgument("all frames excluded".into()))
}

/// Frame scores of one estimated source within one track.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceFrames {
    pub source: String,
    pub sdr: Vec<Option<f64>>,
    pub sar: Vec<Option<f64>>,
}

impl SourceFrames {
    pub fn frames(&self, metric: Metric) -> &[Option<f64>] {
        match metric {
            Metric::Sdr => &self.sdr,
            Metric::Sar => &self.sar,
        }
    }
}

/// Scores of all sources of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackEval {
    pub track: String,
    pub sources: Vec<SourceFrames>,
}

impl TrackEval {
    /// Median-over-frames of `metric` for each source.
    pub fn medians(&self, metric: Metric) -> Vec<Option<f64>> {
        self.sources.iter().map(|s| track_median(s.frames(metric))).collect()
    }
}

pub fn evaluate_track(
    track: &str,
    names: &[String],
    references: &[Waveform],
    estimates: &[Waveform],
    frame_len: usize,
) -> Result<TrackEval> {
    if names.len() != references.len() || estimates.len() != references.len() {
        return Err(shape_err(
            "evaluate_track",
            format!(
                "{} names, {} references, {} estimates",
                names.len(),
                references.len(),
                estimates.len()
            ),
        ));
    }
    let sources = names
        .iter()
        .zip(references.iter().zip(estimates))
        .map(|(name, (r, e))| {
            Ok(SourceFrames {
                source: name.clone(),
                sdr: sdr_frames(r, e, frame_len)?,
                sar: sar_frames(references, e, frame_len)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrackEval {
        track: track.to_string(),
        sources,
    })
}

/// Aggregated value of one metric for one source across tracks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub source: String,
    pub metric: Metric,
    pub value: f64,
}

/// Summary over tracks for every source and metric, in source order.
pub fn summarize(tracks: &[TrackEval]) -> Result<Vec<SummaryRow>> {
    let first = tracks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no tracks to summarise".into()))?;
    let mut rows = Vec::new();
    for (j, s) in first.sources.iter().enumerate() {
        for metric in [Metric::Sdr, Metric::Sar] {
            let per_track: Vec<Vec<Option<f64>>> = tracks
                .iter()
                .map(|t| {
                    t.sources
                        .get(j)
                        .map(|s| s.frames(metric).to_vec())
                        .ok_or_else(|| shape_err("summarize", format!("track {} lacks source {j}", t.track)))
                })
                .collect::<Result<_>>()?;
            rows.push(SummaryRow {
                source: s.source.clone(),
                metric,
                value: aggregate(&per_track)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct FrameRow<'a> {
    track_id: &'a str,
    source: &'a str,
    metric: Metric,
    frame_index: usize,
    value: f64,
}

/// Per-frame CSV: `track_id,source,metric,frame_index,value`. Excluded
/// frames are omitted.
pub fn write_frames_csv<W: Write>(out: W, tracks: &[TrackEval]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in tracks {
        for s in &t.sources {
            for metric in [Metric::Sdr, Metric::Sar] {
                for (i, v) in s.frames(metric).iter().enumerate() {
                    if let Some(value) = *v {
                        w.serialize(FrameRow {
                            track_id: &t.track,
                            source: &s.source,
                            metric,
                            frame_index: i,
                            value,
                        })
                        .map_err(csv_err)?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary CSV: `source,metric,value`.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 100).unwrap()
    }

    #[test]
    fn exact_and_scaled_estimates_clamp_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = wave(noise(300, &mut rng));
        let half = wave(r.samples.iter().map(|v| 0.5 * v).collect());
        for est in [&r, &half] {
            let f = sdr_frames(&r, est, 100).unwrap();
            assert_eq!(f, vec![Some(DB_CLAMP); 3]);
        }
    }

    #[test]
    fn orthogonal_noise_at_one_percent_is_twenty_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = noise(1000, &mut rng);
        let mut n = noise(1000, &mut rng);
        // Gram-Schmidt against r, then rescale to 1% of the reference energy.
        let k = dot(&n, &r) / dot(&r, &r);
        n.iter_mut().zip(&r).for_each(|(a, b)| *a -= k * b);
        let scale = (0.01 * dot(&r, &r) / dot(&n, &n)).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + scale * b).collect();
        let v = sdr(&r, &est).unwrap();
        assert!((v - 20.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn silent_reference_frames_are_excluded() {
        let mut s = vec![0.0; 200];
        s[150] = 1.0;
        let f = sdr_frames(&wave(s.clone()), &wave(s), 100).unwrap();
        assert_eq!(f[0], None);
        assert!(f[1].is_some());
    }

    #[test]
    fn sar_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let refs = [noise(400, &mut rng), noise(400, &mut rng), noise(400, &mut rng)];
        let views: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
        let combo: Vec<f64> = (0..400).map(|i| 0.3 * refs[0][i] - 2.0 * refs[2][i]).collect();
        assert_eq!(sar(&views, &combo), Some(DB_CLAMP));

        // Orthogonalise a noise vector against the span of the references.
        let mut art = noise(400, &mut rng);
        let basis = orthonormal(&refs);
        for q in &basis {
            let k = dot(&art, q);
            art.iter_mut().zip(q).for_each(|(a, b)| *a -= k * b);
        }
        assert_eq!(sar(&views, &art), Some(-DB_CLAMP));

        let scale = (0.01 * dot(&refs[0], &refs[0]) / dot(&art, &art)).sqrt();
        let est: Vec<f64> = refs[0].iter().zip(&art).map(|(r, a)| r + scale * a).collect();
        let v = sar(&views, &est).unwrap();
        assert!((v - 20.0).abs() < 0.01, "{v}");
    }

    fn orthonormal(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for v in vs {
            let mut u = v.clone();
            for q in &out {
                let k = dot(&u, q);
                u.iter_mut().zip(q).for_each(|(a, b)| *a -= k * b);
            }
            let n = dot(&u, &u).sqrt();
            out.push(u.iter().map(|x| x / n).collect());
        }
        out
    }

    #[test]
    fn rank_deficient_references_use_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = noise(100, &mut rng);
        let views: Vec<&[f64]> = vec![&r, &r];
        let v = sar(&views, &r).unwrap();
        assert!(v > 90.0, "{v}");
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[vec![Some(1.0), Some(2.0), Some(3.0)]]).unwrap(), 2.0);
        let two = [vec![Some(4.0), None], vec![Some(5.0), Some(7.0)]];
        assert_eq!(aggregate(&two).unwrap(), 5.0);
        assert!(aggregate(&[vec![None, None]]).is_err());
    }

    #[test]
    fn csv_shapes() {
        let t = TrackEval {
            track: "t0".into(),
            sources: vec![SourceFrames {
                source: "bass".into(),
                sdr: vec![Some(1.5), None],
                sar: vec![Some(2.0), Some(3.0)],
            }],
        };
        let mut buf = Vec::new();
        write_frames_csv(&mut buf, std::slice::from_ref(&t)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "track_id,source,metric,frame_index,value\nt0,bass,SDR,0,1.5\nt0,bass,SAR,0,2.0\nt0,bass,SAR,1,3.0\n"
        );
        let rows = summarize(&[t]).unwrap();
        assert_eq!(rows[1].value, 2.5);
    }
}
