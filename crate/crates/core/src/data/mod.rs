//! Tracks, WAV I/O, a band-separated synthetic generator and excerpt sampling.

mod wav;

pub use wav::{decode_wav, encode_wav, load_wav, save_wav, save_wav_as, WavFormat};

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{apply_mask, istft, stft, Mask, StftConfig, Waveform};
use crate::error::{shape_err, Error, Result};
use crate::metrics::{aggregate, default_frame_len, sdr_frames};

pub const DEFAULT_SOURCES: [&str; 4] = ["bass", "drums", "other", "vocals"];

/// Tolerance of the mixture-equals-sum check for decoded audio.
pub const SUM_TOLERANCE: f64 = 1e-3;

pub fn default_source_names(count: usize) -> Vec<String> {
    (0..count)
        .map(|j| match DEFAULT_SOURCES.get(j) {
            Some(n) if count == DEFAULT_SOURCES.len() => n.to_string(),
            _ => format!("source{j}"),
        })
        .collect()
}

/// A mixture and its stems; `mixture ≈ Σ stems`.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub name: String,
    pub sources: Vec<String>,
    pub mixture: Waveform,
    pub stems: Vec<Waveform>,
    /// Largest `|mixture - Σ stems|` over all samples.
    pub sum_residual: f64,
}

impl Track {
    pub fn new(name: String, sources: Vec<String>, mixture: Waveform, stems: Vec<Waveform>) -> Result<Self> {
        if sources.len() != stems.len() || stems.len() < 2 {
            return Err(shape_err(
                "Track",
                format!("{} names for {} stems", sources.len(), stems.len()),
            ));
        }
        for (n, s) in sources.iter().zip(&stems) {
            if s.len() != mixture.len() {
                return Err(shape_err(
                    "Track",
                    format!("{name}/{n}: {} samples, mixture has {}", s.len(), mixture.len()),
                ));
            }
            if s.sample_rate != mixture.sample_rate {
                return Err(Error::SampleRateMismatch {
                    expected: mixture.sample_rate,
                    actual: s.sample_rate,
                });
            }
        }
        let sum = sum_stems(&stems);
        let sum_residual = mixture
            .samples
            .iter()
            .zip(&sum)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            name,
            sources,
            mixture,
            stems,
            sum_residual,
        })
    }

    /// Builds a track whose mixture is the exact sample sum of `stems`.
    pub fn from_stems(name: String, sources: Vec<String>, stems: Vec<Waveform>) -> Result<Self> {
        let rate = stems.first().map_or(0, |s| s.sample_rate);
        let mixture = Waveform::new(sum_stems(&stems), rate)?;
        Self::new(name, sources, mixture, stems)
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.mixture.sample_rate
    }
}

fn sum_stems(stems: &[Waveform]) -> Vec<f64> {
    let n = stems.iter().map(Waveform::len).max().unwrap_or(0);
    let mut out = vec![0.0; n];
    for s in stems {
        for (o, v) in out.iter_mut().zip(&s.samples) {
            *o += v;
        }
    }
    out
}

/// Reads `<root>/<track>/{mixture,<source>}.wav` for every track folder,
/// in lexicographic order.
pub fn load_musdb_layout(root: &Path, sources: &[String]) -> Result<Vec<Track>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    let mut tracks = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mixture = load_wav(&dir.join("mixture.wav"))?;
        let stems = sources
            .iter()
            .map(|s| load_wav(&dir.join(format!("{s}.wav"))))
            .collect::<Result<Vec<_>>>()?;
        let track = Track::new(name, sources.to_vec(), mixture, stems)?;
        if track.sum_residual > SUM_TOLERANCE {
            log::warn!(
                "track {}: mixture differs from the stem sum by up to {:.3e}",
                track.name,
                track.sum_residual
            );
        }
        tracks.push(track);
    }
    Ok(tracks)
}

/// Writes tracks in the layout read by [`load_musdb_layout`], as float32.
pub fn write_musdb_layout(root: &Path, tracks: &[Track]) -> Result<()> {
    for t in tracks {
        let dir = root.join(&t.name);
        fs::create_dir_all(&dir)?;
        save_wav(&dir.join("mixture.wav"), &t.mixture)?;
        for (name, stem) in t.sources.iter().zip(&t.stems) {
            save_wav(&dir.join(format!("{name}.wav")), stem)?;
        }
    }
    Ok(())
}

/// Parameters of the synthetic band-separated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_tracks: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub sources: usize,
    pub seed: u64,
    /// Width of the raised-cosine crossover shared by adjacent bands.
    pub crossover_hz: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_tracks: 20,
            duration_s: 10.0,
            sample_rate: 8000,
            sources: 4,
            seed: 0,
            crossover_hz: 600.0,
        }
    }
}

impl SynthSpec {
    pub fn layout(&self) -> BandLayout {
        let nyquist = self.sample_rate as f64 / 2.0;
        let (lo, hi) = (0.0075 * nyquist, 0.95 * nyquist);
        let step = (hi - lo) / self.sources as f64;
        BandLayout {
            edges: (0..=self.sources).map(|j| lo + step * j as f64).collect(),
            crossover_hz: self.crossover_hz,
        }
    }
}

/// Contiguous frequency bands, one per source.
#[derive(Clone, Debug, PartialEq)]
pub struct BandLayout {
    /// `J + 1` ascending band edges in Hz.
    pub edges: Vec<f64>,
    pub crossover_hz: f64,
}

impl BandLayout {
    pub fn sources(&self) -> usize {
        self.edges.len() - 1
    }

    /// Amplitude response of band `j`; adjacent responses sum to one across
    /// each inner crossover.
    pub fn response(&self, j: usize, freq: f64) -> f64 {
        let half = self.crossover_hz / 2.0;
        let rise = |edge: f64| {
            let u = ((freq - (edge - half)) / self.crossover_hz).clamp(0.0, 1.0);
            (0.5 * PI * u).sin().powi(2)
        };
        rise(self.edges[j]) * (1.0 - rise(self.edges[j + 1]))
    }

    /// Band an inner frequency belongs to under a hard partition at the edges.
    pub fn partition(&self, freq: f64) -> usize {
        self.edges[1..self.sources()].iter().take_while(|&&e| freq >= e).count()
    }

    /// Frequency range where band `j` has unit response.
    fn core(&self, j: usize) -> (f64, f64) {
        let half = self.crossover_hz / 2.0;
        (self.edges[j] + half, self.edges[j + 1] - half)
    }
}

/// Generates `spec.num_tracks` tracks named `synth000`, `synth001`, ...
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<Track>> {
    if !(2..=8).contains(&spec.sources) {
        return Err(Error::InvalidArgument(format!(
            "synthetic sources must be in [2, 8], got {}",
            spec.sources
        )));
    }
    let len = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    if len == 0 || spec.crossover_hz < 0.0 {
        return Err(Error::InvalidArgument(format!("degenerate synthetic spec {spec:?}")));
    }
    let layout = spec.layout();
    let (c0, c1) = layout.core(0);
    if c1 <= c0 {
        return Err(Error::InvalidArgument(format!(
            "crossover {} Hz is wider than the bands",
            spec.crossover_hz
        )));
    }
    let names = default_source_names(spec.sources);
    let mut planner = FftPlanner::new();
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_tracks)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.random());
            let stems = (0..spec.sources)
                .map(|j| {
                    let raw = synth_stem(&layout, j, len, spec.sample_rate, &mut rng);
                    let mut s = band_pass(&raw, &layout, j, spec.sample_rate, &mut planner);
                    let rms = (s.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
                    let level = rng.random_range(0.05..0.15) / rms.max(1e-12);
                    s.iter_mut().for_each(|v| *v *= level);
                    Waveform::new(s, spec.sample_rate)
                })
                .collect::<Result<Vec<_>>>()?;
            Track::from_stems(format!("synth{i:03}"), names.clone(), stems)
        })
        .collect()
}

/// Noise plus a sequence of decaying harmonic notes inside band `j`.
fn synth_stem(layout: &BandLayout, j: usize, len: usize, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = rate as f64;
    let noise_gain = rng.random_range(0.1..0.4);
    let mut out: Vec<f64> = (0..len)
        .map(|_| noise_gain * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let (lo, hi) = layout.core(j);
    let mut start = 0usize;
    while start < len {
        let dur = (rng.random_range(0.2..0.8) * fs) as usize;
        let f0 = rng.random_range(lo..hi);
        let decay = rng.random_range(0.1..0.5) * fs;
        let attack = 0.01 * fs;
        let partials: Vec<(f64, f64, f64)> = (1..=4)
            .map(|k| k as f64 * f0)
            .take_while(|&f| f < hi)
            .enumerate()
            .map(|(k, f)| {
                (
                    f,
                    rng.random_range(0.5..1.0) / (k + 1) as f64,
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        for (n, o) in out.iter_mut().enumerate().take(start + dur).skip(start) {
            let t = (n - start) as f64;
            let env = (t / attack).min(1.0) * (-t / decay).exp();
            let tone: f64 = partials
                .iter()
                .map(|(f, a, ph)| a * (2.0 * PI * f * n as f64 / fs + ph).sin())
                .sum();
            *o += env * tone;
        }
        start += dur;
    }
    out
}

fn band_pass(x: &[f64], layout: &BandLayout, j: usize, rate: u32, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *c *= layout.response(j, bin as f64 * rate as f64 / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Binary masks assigning every STFT bin to the band containing it.
pub fn oracle_masks(layout: &BandLayout, cfg: &StftConfig, frames: usize, sample_rate: u32) -> Result<Vec<Mask>> {
    let bins = cfg.bins();
    let owner: Vec<usize> = (0..bins)
        .map(|k| layout.partition(k as f64 * sample_rate as f64 / cfg.fft_size as f64))
        .collect();
    (0..layout.sources())
        .map(|j| {
            let row: Vec<f64> = owner.iter().map(|&o| if o == j { 1.0 } else { 0.0 }).collect();
            Mask::new(frames, bins, row.repeat(frames))
        })
        .collect()
}

/// Stems recovered from the mixture with the band-partition masks.
pub fn oracle_separate(track: &Track, layout: &BandLayout, cfg: &StftConfig) -> Result<Vec<Waveform>> {
    let spec = stft(&track.mixture, cfg)?;
    oracle_masks(layout, cfg, spec.frames, track.sample_rate())?
        .iter()
        .map(|m| istft(&apply_mask(m, &spec)?, cfg, track.len(), track.sample_rate()))
        .collect()
}

/// Per-source SDR of the oracle separation (median of frames, median of tracks).
pub fn oracle_sdr(tracks: &[Track], layout: &BandLayout, cfg: &StftConfig) -> Result<Vec<f64>> {
    let first = tracks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no tracks".into()))?;
    let frame_len = default_frame_len(first.sample_rate());
    let mut per_source: Vec<Vec<Vec<Option<f64>>>> = vec![Vec::new(); layout.sources()];
    for t in tracks {
        let est = oracle_separate(t, layout, cfg)?;
        for (j, e) in est.iter().enumerate() {
            per_source[j].push(sdr_frames(&t.stems[j], e, frame_len)?);
        }
    }
    per_source.iter().map(|f| aggregate(f)).collect()
}

/// Aligned excerpt of a track.
#[derive(Clone, Debug, PartialEq)]
pub struct Excerpt {
    pub track: usize,
    pub offset: usize,
    pub mixture: Waveform,
    pub stems: Vec<Waveform>,
}

impl Excerpt {
    pub fn from_track(tracks: &[Track], track: usize, offset: usize, len: usize) -> Self {
        let t = &tracks[track];
        Self {
            track,
            offset,
            mixture: t.mixture.slice(offset, len),
            stems: t.stems.iter().map(|s| s.slice(offset, len)).collect(),
        }
    }
}

/// Seeded stream of uniformly drawn (track, offset) excerpts.
pub struct ExcerptSampler<'a> {
    tracks: &'a [Track],
    len: usize,
    rng: ChaCha8Rng,
}

impl<'a> ExcerptSampler<'a> {
    pub fn new(tracks: &'a [Track], excerpt_len: usize, seed: u64) -> Result<Self> {
        let shortest = tracks.iter().map(Track::len).min().unwrap_or(0);
        if tracks.is_empty() || excerpt_len == 0 || excerpt_len > shortest {
            return Err(Error::InvalidArgument(format!(
                "excerpt of {excerpt_len} samples from {} tracks, shortest has {shortest}",
                tracks.len()
            )));
        }
        Ok(Self {
            tracks,
            len: excerpt_len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draws a track uniformly, then an offset uniformly within it.
    pub fn position(&mut self) -> (usize, usize) {
        let track = self.rng.random_range(0..self.tracks.len());
        let offset = self.rng.random_range(0..=self.tracks[track].len() - self.len);
        (track, offset)
    }

    pub fn draw(&mut self) -> Excerpt {
        let (track, offset) = self.position();
        Excerpt::from_track(self.tracks, track, offset, self.len)
    }

    pub fn batch(&mut self, size: usize) -> Vec<Excerpt> {
        (0..size).map(|_| self.draw()).collect()
    }
}

/// `num_batches` batches of `batch` excerpts each.
pub fn sample_excerpts(
    tracks: &[Track],
    excerpt_len: usize,
    batch: usize,
    num_batches: usize,
    seed: u64,
) -> Result<Vec<Vec<Excerpt>>> {
    let mut s = ExcerptSampler::new(tracks, excerpt_len, seed)?;
    Ok((0..num_batches).map(|_| s.batch(batch)).collect())
}

/// Disjoint train / validation / test partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Track>,
    pub valid: Vec<Track>,
    pub test: Vec<Track>,
}

impl DatasetSplit {
    /// Seeded shuffle, then `test` tracks, `valid` tracks, and the rest for
    /// training.
    pub fn new(mut tracks: Vec<Track>, valid: usize, test: usize, seed: u64) -> Result<Self> {
        if valid + test >= tracks.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tracks cannot provide {valid} validation and {test} test tracks plus training data",
                tracks.len()
            )));
        }
        tracks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let train = tracks.split_off(valid + test);
        let valid_tracks = tracks.split_off(test);
        Ok(Self {
            train,
            valid: valid_tracks,
            test: tracks,
        })
    }
}
