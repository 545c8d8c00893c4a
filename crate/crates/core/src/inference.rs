//! Whole-track separation: STFT, mask prediction, masking and ISTFT.
//!
//! Long inputs are cut into overlapping chunks that are separated
//! independently and joined with a linear crossfade whose weights sum to one.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::save_wav;
use crate::dsp::{apply_mask, istft, magnitude, stft, MagnitudeSpectrogram, Mask, StftConfig, Waveform};
use crate::error::{shape_err, Error, Result};
use crate::training::Checkpoint;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkConfig {
    pub chunk_s: f64,
    pub crossfade_s: f64,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_s: 30.0,
            crossfade_s: 1.0,
        }
    }
}

/// Estimated stems, in checkpoint source order.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationResult {
    pub sources: Vec<String>,
    pub stems: Vec<Waveform>,
}

impl SeparationResult {
    /// `‖mixture − Σ stems‖² / ‖mixture‖²`. Masks need not sum to one, so
    /// this is a diagnostic, not an invariant.
    pub fn residual_ratio(&self, mixture: &Waveform) -> f64 {
        let mut residual = mixture.samples.clone();
        for s in &self.stems {
            residual.iter_mut().zip(&s.samples).for_each(|(r, v)| *r -= v);
        }
        let e: f64 = residual.iter().map(|v| v * v).sum();
        e / mixture.energy().max(f64::MIN_POSITIVE)
    }
}

/// Separates `mixture` in one pass with masks from `masks_for`.
pub fn separate_with<F>(
    masks_for: F,
    cfg: &StftConfig,
    mixture: &Waveform,
    sources: &[String],
) -> Result<SeparationResult>
where
    F: Fn(&MagnitudeSpectrogram) -> Result<Vec<Mask>>,
{
    if mixture.is_empty() {
        return Err(Error::InvalidArgument("empty mixture".into()));
    }
    let spec = stft(mixture, cfg)?;
    let masks = masks_for(&magnitude(&spec))?;
    if masks.len() != sources.len() {
        return Err(shape_err(
            "separate",
            format!("{} masks for {} sources", masks.len(), sources.len()),
        ));
    }
    let stems = masks
        .iter()
        .map(|m| istft(&apply_mask(m, &spec)?, cfg, mixture.len(), mixture.sample_rate))
        .collect::<Result<_>>()?;
    Ok(SeparationResult {
        sources: sources.to_vec(),
        stems,
    })
}

/// `[start, end)` of every chunk; consecutive chunks overlap by `fade`.
fn chunk_bounds(len: usize, chunk: usize, fade: usize) -> Vec<(usize, usize)> {
    if len <= chunk {
        return vec![(0, len)];
    }
    let step = chunk - fade;
    let count = (len - chunk).div_ceil(step) + 1;
    (0..count).map(|k| (k * step, (k * step + chunk).min(len))).collect()
}

/// Chunked separation with the crossfade of `chunks`.
pub fn separate_chunked<F>(
    masks_for: F,
    cfg: &StftConfig,
    mixture: &Waveform,
    sources: &[String],
    chunks: &ChunkConfig,
) -> Result<SeparationResult>
where
    F: Fn(&MagnitudeSpectrogram) -> Result<Vec<Mask>>,
{
    let rate = mixture.sample_rate as f64;
    let chunk = (chunks.chunk_s * rate).round() as usize;
    let fade = (chunks.crossfade_s * rate).round() as usize;
    if fade < cfg.fft_size || chunk < 2 * fade {
        return Err(Error::InvalidArgument(format!(
            "chunk of {chunk} samples needs a crossfade of at least one frame ({} samples) and at most half the chunk, got {fade}",
            cfg.fft_size
        )));
    }
    let bounds = chunk_bounds(mixture.len(), chunk, fade);
    if bounds.len() == 1 {
        return separate_with(masks_for, cfg, mixture, sources);
    }
    let mut stems = vec![vec![0.0; mixture.len()]; sources.len()];
    let last = bounds.len() - 1;
    for (k, &(start, end)) in bounds.iter().enumerate() {
        let part = separate_with(&masks_for, cfg, &mixture.slice(start, end - start), sources)?;
        for (out, s) in stems.iter_mut().zip(&part.stems) {
            for (i, &v) in s.samples.iter().enumerate() {
                let mut w = 1.0;
                if k > 0 && i < fade {
                    w = (i as f64 + 0.5) / fade as f64;
                }
                let tail = s.len() - i;
                if k < last && tail <= fade {
                    w = 1.0 - (fade - tail) as f64 / fade as f64 - 0.5 / fade as f64;
                }
                out[start + i] += w * v;
            }
        }
    }
    Ok(SeparationResult {
        sources: sources.to_vec(),
        stems: stems
            .into_iter()
            .map(|s| Waveform::new(s, mixture.sample_rate))
            .collect::<Result<_>>()?,
    })
}

/// Separates a mixture with a trained model using the default chunking.
pub fn separate(checkpoint: &Checkpoint, mixture: &Waveform) -> Result<SeparationResult> {
    separate_with_chunks(checkpoint, mixture, &ChunkConfig::default())
}

pub fn separate_with_chunks(
    checkpoint: &Checkpoint,
    mixture: &Waveform,
    chunks: &ChunkConfig,
) -> Result<SeparationResult> {
    if mixture.sample_rate != checkpoint.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: checkpoint.sample_rate,
            actual: mixture.sample_rate,
        });
    }
    separate_chunked(
        |mag| checkpoint.model.masks(mag),
        &checkpoint.stft,
        mixture,
        &checkpoint.sources,
        chunks,
    )
}

/// Writes `<outdir>/<track>/<source>.wav` (float32) for every stem.
pub fn write_stems(outdir: &Path, track: &str, result: &SeparationResult) -> Result<Vec<PathBuf>> {
    let dir = outdir.join(track);
    fs::create_dir_all(&dir)?;
    result
        .sources
        .iter()
        .zip(&result.stems)
        .map(|(name, stem)| {
            let path = dir.join(format!("{name}.wav"));
            save_wav(&path, stem)?;
            Ok(path)
        })
        .collect()
}
