//! Short-time Fourier analysis and synthesis, magnitudes, and masking.
//!
//! Frames use a periodic Hann window. With `center = true` the signal is
//! zero-padded by `fft_size / 2` on both sides, so frame `t` is centred on
//! sample `t * hop_size` and there are `1 + len / hop_size` frames. Synthesis
//! divides the overlap-added frames by the summed squared window, which makes
//! `istft(stft(x)) == x` for every centred configuration.
//!
//! Both transforms are linear, and their tape versions ([`stft_var`],
//! [`istft_var`]) back-propagate through the exact adjoint.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 4096,
            hop_size: 1024,
            center: true,
        }
    }
}

impl StftConfig {
    /// Small configuration used for synthetic 8 kHz experiments.
    pub fn desk() -> Self {
        Self {
            fft_size: 512,
            hop_size: 128,
            center: true,
        }
    }

    pub fn new(fft_size: usize, hop_size: usize) -> Result<Self> {
        let cfg = Self {
            fft_size,
            hop_size,
            center: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.fft_size;
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "fft_size must be a power of two >= 2, got {n}"
            )));
        }
        if self.hop_size == 0 || !n.is_multiple_of(self.hop_size) || self.hop_size > n / 2 {
            return Err(Error::InvalidArgument(format!(
                "hop_size {} must divide fft_size {n} and be at most fft_size/2",
                self.hop_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    fn pad(&self) -> usize {
        if self.center {
            self.fft_size / 2
        } else {
            0
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.pad();
        if len == 0 || padded < self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "signal of {len} samples is shorter than one {}-sample frame",
                self.fft_size
            )));
        }
        Ok(1 + (padded - self.fft_size) / self.hop_size)
    }

    /// Periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        (0..self.fft_size)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }
}

/// Mono time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// `frames × bins` complex values, stored as interleaved `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        Self {
            frames,
            bins: config.bins(),
            data: vec![0.0; frames * config.bins() * 2],
            config,
        }
    }

    pub fn get(&self, t: usize, f: usize) -> (f64, f64) {
        let i = 2 * (t * self.bins + f);
        (self.data[i], self.data[i + 1])
    }

    /// As a `[frames, bins, 2]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.bins, 2], self.data.clone()).expect("spectrogram buffer matches its shape")
    }

    pub fn from_tensor(t: &Tensor, config: StftConfig) -> Result<Self> {
        match t.shape() {
            &[frames, bins, 2] if bins == config.bins() => Ok(Self {
                frames,
                bins,
                data: t.data().to_vec(),
                config,
            }),
            s => Err(shape_err(
                "ComplexSpectrogram::from_tensor",
                format!("{s:?} for {} bins", config.bins()),
            )),
        }
    }
}

/// Real `frames × bins` grid (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl MagnitudeSpectrogram {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.frames, self.bins, self.data.clone()).expect("magnitude buffer matches its shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[frames, bins] => Ok(Self {
                frames,
                bins,
                data: t.data().to_vec(),
            }),
            s => Err(shape_err("MagnitudeSpectrogram::from_tensor", format!("{s:?}"))),
        }
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.bins + f]
    }
}

/// Nonnegative time-frequency gain.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(shape_err(
                "Mask::new",
                format!("{frames}x{bins} needs {} values, got {}", frames * bins, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "mask entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::new(frames, bins, vec![value; frames * bins])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.frames, self.bins, self.data.clone()).expect("mask buffer matches its shape")
    }
}

/// FFT plans shared by the analysis and synthesis kernels.
#[derive(Clone)]
struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Plans {
    fn new(cfg: &StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            window: cfg.window(),
        }
    }
}

/// Sum of squared windows at each padded sample position.
fn window_envelope(cfg: &StftConfig, window: &[f64], frames: usize) -> Vec<f64> {
    let mut env = vec![0.0; (frames - 1) * cfg.hop_size + cfg.fft_size];
    for t in 0..frames {
        let start = t * cfg.hop_size;
        for (e, w) in env[start..start + cfg.fft_size].iter_mut().zip(window) {
            *e += w * w;
        }
    }
    env
}

/// Envelope values below this are treated as uncovered samples.
const ENVELOPE_FLOOR: f64 = 1e-11;

fn stft_kernel(cfg: &StftConfig, plans: &Plans, signal: &[f64]) -> Result<(usize, Vec<f64>)> {
    let frames = cfg.frames_for(signal.len())?;
    let (n, bins, pad) = (cfg.fft_size, cfg.bins(), cfg.pad());
    let mut out = vec![0.0; frames * bins * 2];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * cfg.hop_size;
        for (i, c) in buf.iter_mut().enumerate() {
            let idx = (start + i) as isize - pad as isize;
            let x = if idx >= 0 && (idx as usize) < signal.len() {
                signal[idx as usize]
            } else {
                0.0
            };
            *c = Complex::new(x * plans.window[i], 0.0);
        }
        plans.forward.process(&mut buf);
        let row = &mut out[t * bins * 2..(t + 1) * bins * 2];
        for (k, pair) in row.chunks_exact_mut(2).enumerate() {
            pair[0] = buf[k].re;
            pair[1] = buf[k].im;
        }
    }
    Ok((frames, out))
}

/// Adjoint of [`stft_kernel`]: maps a spectrogram gradient to a signal gradient.
fn stft_adjoint(cfg: &StftConfig, plans: &Plans, grad: &[f64], frames: usize, len: usize) -> Vec<f64> {
    let (n, bins, pad) = (cfg.fft_size, cfg.bins(), cfg.pad());
    let mut out = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        let row = &grad[t * bins * 2..(t + 1) * bins * 2];
        for (k, pair) in row.chunks_exact(2).enumerate() {
            buf[k] = Complex::new(pair[0], pair[1]);
        }
        // Re(sum_k G_k e^{+2πikn/N}) is the transpose of the one-sided DFT.
        plans.inverse.process(&mut buf);
        let start = t * cfg.hop_size;
        for (i, c) in buf.iter().enumerate() {
            let idx = (start + i) as isize - pad as isize;
            if idx >= 0 && (idx as usize) < len {
                out[idx as usize] += plans.window[i] * c.re;
            }
        }
    }
    out
}

fn check_out_len(cfg: &StftConfig, frames: usize, out_len: usize) -> Result<()> {
    let nominal = (frames - 1) * cfg.hop_size + 2 * (cfg.fft_size / 2 - cfg.pad());
    if out_len > nominal + cfg.hop_size || out_len + cfg.hop_size < nominal || out_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "output length {out_len} is inconsistent with {frames} frames (expected about {nominal})"
        )));
    }
    Ok(())
}

fn istft_kernel(cfg: &StftConfig, plans: &Plans, spec: &[f64], frames: usize, out_len: usize) -> Vec<f64> {
    let (n, bins, pad) = (cfg.fft_size, cfg.bins(), cfg.pad());
    let env = window_envelope(cfg, &plans.window, frames);
    let mut acc = vec![0.0; env.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for t in 0..frames {
        let row = &spec[t * bins * 2..(t + 1) * bins * 2];
        fill_hermitian(&mut buf, row, n);
        plans.inverse.process(&mut buf);
        let start = t * cfg.hop_size;
        for (i, c) in buf.iter().enumerate() {
            acc[start + i] += plans.window[i] * c.re * scale;
        }
    }
    (0..out_len)
        .map(|i| {
            let p = i + pad;
            if p < acc.len() && env[p] > ENVELOPE_FLOOR {
                acc[p] / env[p]
            } else {
                0.0
            }
        })
        .collect()
}

/// Full Hermitian spectrum from the one-sided half. The imaginary parts of the
/// DC and Nyquist bins are dropped, as in a real inverse FFT.
fn fill_hermitian(buf: &mut [Complex<f64>], row: &[f64], n: usize) {
    let half = n / 2;
    for k in 0..=half {
        let (re, im) = (row[2 * k], row[2 * k + 1]);
        if k == 0 || k == half {
            buf[k] = Complex::new(re, 0.0);
        } else {
            buf[k] = Complex::new(re, im);
            buf[n - k] = Complex::new(re, -im);
        }
    }
}

/// Adjoint of [`istft_kernel`].
fn istft_adjoint(cfg: &StftConfig, plans: &Plans, grad: &[f64], frames: usize) -> Vec<f64> {
    let (n, bins, pad) = (cfg.fft_size, cfg.bins(), cfg.pad());
    let env = window_envelope(cfg, &plans.window, frames);
    let mut padded = vec![0.0; env.len()];
    for (i, g) in grad.iter().enumerate() {
        let p = i + pad;
        if p < env.len() && env[p] > ENVELOPE_FLOOR {
            padded[p] = g / env[p];
        }
    }
    let mut out = vec![0.0; frames * bins * 2];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    for t in 0..frames {
        let start = t * cfg.hop_size;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(plans.window[i] * padded[start + i], 0.0);
        }
        plans.forward.process(&mut buf);
        let row = &mut out[t * bins * 2..(t + 1) * bins * 2];
        for (k, pair) in row.chunks_exact_mut(2).enumerate() {
            let weight = if k == 0 || k == half { 1.0 } else { 2.0 } / n as f64;
            pair[0] = weight * buf[k].re;
            // DC and Nyquist imaginary parts do not reach the output.
            pair[1] = if k == 0 || k == half { 0.0 } else { weight * buf[k].im };
        }
    }
    out
}

/// Forward STFT of a waveform.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let plans = Plans::new(cfg);
    let (frames, data) = stft_kernel(cfg, &plans, &w.samples)?;
    Ok(ComplexSpectrogram {
        frames,
        bins: cfg.bins(),
        data,
        config: *cfg,
    })
}

/// Inverse STFT by windowed overlap-add, trimmed or zero-extended to `out_len`.
pub fn istft(s: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize, sample_rate: u32) -> Result<Waveform> {
    cfg.validate()?;
    if s.bins != cfg.bins() || s.frames == 0 {
        return Err(shape_err(
            "istft",
            format!("{}x{} spectrogram for fft_size {}", s.frames, s.bins, cfg.fft_size),
        ));
    }
    check_out_len(cfg, s.frames, out_len)?;
    let plans = Plans::new(cfg);
    Waveform::new(istft_kernel(cfg, &plans, &s.data, s.frames, out_len), sample_rate)
}

pub fn magnitude(s: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        frames: s.frames,
        bins: s.bins,
        data: s.data.chunks_exact(2).map(|p| p[0].hypot(p[1])).collect(),
    }
}

/// `(re, im) <- m * (re, im)` per bin.
pub fn apply_mask(m: &Mask, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if m.frames != y.frames || m.bins != y.bins {
        return Err(shape_err(
            "apply_mask",
            format!("mask {}x{} vs spectrogram {}x{}", m.frames, m.bins, y.frames, y.bins),
        ));
    }
    let mut out = y.clone();
    for (pair, &g) in out.data.chunks_exact_mut(2).zip(&m.data) {
        pair[0] *= g;
        pair[1] *= g;
    }
    Ok(out)
}

struct StftOp {
    cfg: StftConfig,
    plans: Plans,
    frames: usize,
}

impl CustomOp for StftOp {
    fn name(&self) -> &'static str {
        "stft"
    }

    fn backward(
        &self,
        grad_out: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        if !needs[0] {
            return Ok(vec![None]);
        }
        let len = inputs[0].numel();
        let g = stft_adjoint(&self.cfg, &self.plans, grad_out.data(), self.frames, len);
        Ok(vec![Some(Tensor::vector(g))])
    }
}

struct IstftOp {
    cfg: StftConfig,
    plans: Plans,
    frames: usize,
}

impl CustomOp for IstftOp {
    fn name(&self) -> &'static str {
        "istft"
    }

    fn backward(
        &self,
        grad_out: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        if !needs[0] {
            return Ok(vec![None]);
        }
        let g = istft_adjoint(&self.cfg, &self.plans, grad_out.data(), self.frames);
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), g)?)])
    }
}

/// Differentiable STFT of a rank-1 signal node, giving `[frames, bins, 2]`.
pub fn stft_var<'t>(signal: Var<'t>, cfg: &StftConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let x = signal.value();
    if x.rank() != 1 {
        return Err(shape_err(
            "stft_var",
            format!("expected rank-1 signal, got {:?}", x.shape()),
        ));
    }
    let plans = Plans::new(cfg);
    let (frames, data) = stft_kernel(cfg, &plans, x.data())?;
    let out = Tensor::new(vec![frames, cfg.bins(), 2], data)?;
    signal.tape().custom(
        &[signal],
        out,
        Box::new(StftOp {
            cfg: *cfg,
            plans,
            frames,
        }),
    )
}

/// Differentiable inverse STFT of a `[frames, bins, 2]` node.
pub fn istft_var<'t>(spec: Var<'t>, cfg: &StftConfig, out_len: usize) -> Result<Var<'t>> {
    cfg.validate()?;
    let s = spec.value();
    let frames = match s.shape() {
        &[frames, bins, 2] if bins == cfg.bins() && frames > 0 => frames,
        other => {
            return Err(shape_err(
                "istft_var",
                format!("{other:?} for fft_size {}", cfg.fft_size),
            ))
        }
    };
    check_out_len(cfg, frames, out_len)?;
    let plans = Plans::new(cfg);
    let out = Tensor::vector(istft_kernel(cfg, &plans, s.data(), frames, out_len));
    spec.tape().custom(
        &[spec],
        out,
        Box::new(IstftOp {
            cfg: *cfg,
            plans,
            frames,
        }),
    )
}

/// Convenience: record a waveform as a constant rank-1 node.
pub fn waveform_const<'t>(tape: &'t Tape, w: &Waveform) -> Var<'t> {
    tape.constant(Tensor::vector(w.samples.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 8000).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(512, 128).is_ok());
        assert!(StftConfig::new(512, 256).is_ok());
        assert!(StftConfig::new(500, 125).is_err());
        assert!(StftConfig::new(512, 512).is_err());
        assert!(StftConfig::new(512, 96).is_err());
        assert_eq!(StftConfig::default().bins(), 2049);
    }

    #[test]
    fn frame_count_and_bins() {
        let cfg = StftConfig::desk();
        let s = stft(&noise(1000, 0), &cfg).unwrap();
        assert_eq!(s.frames, 1 + 1000 / 128);
        assert_eq!(s.bins, 257);
    }

    #[test]
    fn uncentred_short_signal_is_an_error() {
        let cfg = StftConfig {
            center: false,
            ..StftConfig::desk()
        };
        assert!(stft(&noise(100, 0), &cfg).is_err());
        assert!(stft(&Waveform::zeros(0, 8000), &StftConfig::desk()).is_err());
    }

    #[test]
    fn zeros_map_to_zeros() {
        let cfg = StftConfig::desk();
        let s = stft(&Waveform::zeros(700, 8000), &cfg).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        let w = istft(&ComplexSpectrogram::zeros(s.frames, cfg), &cfg, 700, 8000).unwrap();
        assert!(w.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_4096_samples() {
        let cfg = StftConfig::desk();
        let w = noise(4096, 3);
        let back = istft(&stft(&w, &cfg).unwrap(), &cfg, w.len(), 8000).unwrap();
        let err = w
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_its_bin() {
        let cfg = StftConfig::desk();
        let k = 37;
        let sr = 8000.0;
        let freq = k as f64 * sr / cfg.fft_size as f64;
        let w = Waveform::new(
            (0..4000).map(|i| (2.0 * PI * freq * i as f64 / sr).sin()).collect(),
            8000,
        )
        .unwrap();
        let mag = magnitude(&stft(&w, &cfg).unwrap());
        // interior frames only: edge frames see the zero padding
        for t in 4..mag.frames - 4 {
            let row = &mag.data[t * mag.bins..(t + 1) * mag.bins];
            let peak = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(peak, k, "frame {t}");
            // closed form: |X_k| = A * sum(w) / 2 = N/4 for a unit sinusoid
            assert!((row[k] - cfg.fft_size as f64 / 4.0).abs() < 1e-8, "{}", row[k]);
        }
    }

    #[test]
    fn single_frame_synthesis_energy() {
        // One nonzero frame holding the DFT of an all-ones frame (N at DC).
        // Its inverse is the window itself, normalised by the squared-window
        // envelope of the neighbouring frames.
        let cfg = StftConfig {
            fft_size: 16,
            hop_size: 4,
            center: true,
        };
        let frames = 9;
        let mut s = ComplexSpectrogram::zeros(frames, cfg);
        let centre = 4;
        s.data[2 * (centre * cfg.bins())] = cfg.fft_size as f64;
        let out_len = (frames - 1) * cfg.hop_size;
        let w = istft(&s, &cfg, out_len, 8000).unwrap();

        // hand-computed overlap-add cell: y[n] = w[i] / env with env = 3N/(8 hop) = 1.5
        let win = cfg.window();
        let start = centre * cfg.hop_size - cfg.fft_size / 2;
        let expected: f64 = win.iter().map(|v| (v / 1.5).powi(2)).sum();
        let energy = w.energy();
        assert!((energy - expected).abs() < 1e-12, "{energy} vs {expected}");
        for (i, wi) in win.iter().enumerate() {
            assert!((w.samples[start + i] - wi / 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_identity_zero_and_half() {
        let cfg = StftConfig {
            fft_size: 16,
            hop_size: 4,
            center: true,
        };
        let s = stft(&noise(64, 1), &cfg).unwrap();
        let ones = Mask::filled(s.frames, s.bins, 1.0).unwrap();
        assert_eq!(apply_mask(&ones, &s).unwrap(), s);
        let zero = Mask::filled(s.frames, s.bins, 0.0).unwrap();
        assert!(apply_mask(&zero, &s).unwrap().data.iter().all(|&v| v == 0.0));

        let mut unit = ComplexSpectrogram::zeros(1, cfg);
        let phase = 0.7_f64;
        unit.data[0] = phase.cos();
        unit.data[1] = phase.sin();
        let half = Mask::filled(1, cfg.bins(), 0.5).unwrap();
        let out = apply_mask(&half, &unit).unwrap();
        let (re, im) = out.get(0, 0);
        assert!((re.hypot(im) - 0.5).abs() < 1e-15);
        assert!((im.atan2(re) - phase).abs() < 1e-15);

        let wrong = Mask::filled(2, cfg.bins(), 1.0).unwrap();
        assert!(apply_mask(&wrong, &unit).is_err());
        assert!(Mask::new(1, 2, vec![1.0, -0.1]).is_err());
    }

    #[test]
    fn magnitude_is_phase_invariant() {
        let cfg = StftConfig {
            fft_size: 32,
            hop_size: 8,
            center: true,
        };
        let s = stft(&noise(200, 9), &cfg).unwrap();
        let mut rotated = s.clone();
        let (c, sn) = (1.3_f64.cos(), 1.3_f64.sin());
        for p in rotated.data.chunks_exact_mut(2) {
            let (re, im) = (p[0], p[1]);
            p[0] = c * re - sn * im;
            p[1] = sn * re + c * im;
        }
        let (a, b) = (magnitude(&s), magnitude(&rotated));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn out_len_slack_is_enforced() {
        let cfg = StftConfig::desk();
        let s = stft(&noise(1000, 0), &cfg).unwrap();
        // frames = 8, nominal length 7 * 128 = 896
        assert!(istft(&s, &cfg, 1000, 8000).is_ok());
        assert!(istft(&s, &cfg, 896 + 128, 8000).is_ok());
        assert!(istft(&s, &cfg, 896 + 129, 8000).is_err());
        assert!(istft(&s, &cfg, 700, 8000).is_err());
    }

    #[test]
    fn tape_transforms_pass_grad_check() {
        let cfg = StftConfig {
            fft_size: 16,
            hop_size: 4,
            center: true,
        };
        let x = noise(40, 5);
        let target = noise(40, 6);
        let err = grad_check(
            |tape, v| {
                let spec = stft_var(v[0], &cfg)?;
                let mag = spec.magnitude()?;
                let back = istft_var(spec, &cfg, 40)?;
                let t = tape.constant(Tensor::vector(target.samples.clone()));
                let d = back.sub(t)?;
                d.sum_squares().add(mag.sum())
            },
            &[Tensor::vector(x.samples.clone())],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");

        let spec = stft(&x, &cfg).unwrap();
        let err = grad_check(
            |tape, v| {
                let y = istft_var(v[0], &cfg, 40)?;
                let t = tape.constant(Tensor::vector(target.samples.clone()));
                y.cosine(t)
            },
            &[spec.to_tensor()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
