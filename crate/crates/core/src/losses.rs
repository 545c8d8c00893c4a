//! Training objectives.
//!
//! * [`mse_loss`]: summed squared magnitude error for one target.
//! * [`wsdr_loss`]: weighted SDR, a pair of negative cosine similarities in
//!   the time domain, bounded to `[-1, 1]`.
//! * [`mdl`]: `mse + alpha * wsdr`, where the time-domain estimate comes from
//!   an inverse STFT appended after the masking step.
//! * [`combination_loss`]: the mean of the per-target loss over every
//!   nonempty proper subset of sources. A subset's estimate uses the sum of
//!   its masks; its reference is the sum of its stems.
//! * [`plain_loss`]: the same mean restricted to singleton subsets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, ComplexSpectrogram, MagnitudeSpectrogram, StftConfig, Waveform};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Default weight of the time-domain term.
pub const DEFAULT_ALPHA: f64 = 10.0;

/// A nonempty proper subset of source indices (0-based, ascending).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Combination(Vec<usize>);

impl Combination {
    pub fn new(mut sources: Vec<usize>, num_sources: usize) -> Result<Self> {
        sources.sort_unstable();
        sources.dedup();
        if sources.is_empty() || sources.len() >= num_sources {
            return Err(Error::InvalidArgument(format!(
                "combination {sources:?} must be a nonempty proper subset of {num_sources} sources"
            )));
        }
        if let Some(&bad) = sources.iter().find(|&&s| s >= num_sources) {
            return Err(Error::InvalidArgument(format!(
                "source index {bad} out of range for {num_sources} sources"
            )));
        }
        Ok(Self(sources))
    }

    pub fn sources(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Every nonempty proper subset of `0..num_sources`, ordered by size and then
/// lexicographically. There are `2^J - 2` of them.
pub fn enumerate_combinations(num_sources: usize) -> Result<Vec<Combination>> {
    if num_sources < 2 {
        return Err(Error::InvalidArgument(format!(
            "combinations need at least 2 sources, got {num_sources}"
        )));
    }
    if num_sources > 20 {
        return Err(Error::InvalidArgument(format!(
            "{num_sources} sources give too many combinations"
        )));
    }
    let full = (1u32 << num_sources) - 1;
    let mut out: Vec<Combination> = (1..full)
        .map(|bits| Combination((0..num_sources).filter(|i| bits & (1 << i) != 0).collect()))
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// `Σ_{t,f} (|X| - |X̂|)²` between two `[frames, bins]` nodes.
pub fn mse_loss<'t>(est_mag: Var<'t>, ref_mag: Var<'t>) -> Result<Var<'t>> {
    Ok(est_mag.sub(ref_mag)?.sum_squares())
}

/// `ρ = ‖x‖² / (‖x‖² + ‖y - x‖²)`, 0 when both energies vanish.
pub fn energy_ratio(reference: &[f64], mix: &[f64]) -> f64 {
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    let rest: f64 = mix.iter().zip(reference).map(|(m, r)| (m - r) * (m - r)).sum();
    if ref_energy + rest > 0.0 {
        ref_energy / (ref_energy + rest)
    } else {
        0.0
    }
}

/// Weighted SDR loss of a time-domain estimate node against constant
/// reference and mixture signals:
///
/// `-ρ cos(x, x̂) - (1 - ρ) cos(y - x, y - x̂)`.
///
/// A cosine against a zero-norm vector contributes 0.
pub fn wsdr_loss<'t>(est: Var<'t>, reference: &[f64], mix: &[f64]) -> Result<Var<'t>> {
    let n = est.value().numel();
    if reference.len() != n || mix.len() != n {
        return Err(shape_err(
            "wsdr_loss",
            format!("est {n}, reference {}, mix {}", reference.len(), mix.len()),
        ));
    }
    if reference.iter().chain(mix).any(|v| !v.is_finite()) || !est.value().is_finite() {
        return Err(Error::NonFinite("wsdr_loss input".into()));
    }
    let tape = est.tape();
    let rho = energy_ratio(reference, mix);
    let x = tape.constant(Tensor::vector(reference.to_vec()));
    let y = tape.constant(Tensor::vector(mix.to_vec()));
    let residual_ref = tape.constant(Tensor::vector(mix.iter().zip(reference).map(|(m, r)| m - r).collect()));
    let residual_est = y.sub(est)?;
    let target_term = x.cosine(est)?.scale(-rho);
    let residual_term = residual_ref.cosine(residual_est)?.scale(-(1.0 - rho));
    target_term.add(residual_term)
}

/// Components of one multi-domain loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct MdlTerms<'t> {
    pub total: Var<'t>,
    pub mse: Var<'t>,
    pub wsdr: Var<'t>,
}

/// `mse_loss + alpha * wsdr_loss`.
pub fn mdl<'t>(
    est_mag: Var<'t>,
    ref_mag: Var<'t>,
    est_wave: Var<'t>,
    ref_wave: &[f64],
    mix_wave: &[f64],
    alpha: f64,
) -> Result<MdlTerms<'t>> {
    let mse = mse_loss(est_mag, ref_mag)?;
    let wsdr = wsdr_loss(est_wave, ref_wave, mix_wave)?;
    let total = mse.add(wsdr.scale(alpha))?;
    Ok(MdlTerms { total, mse, wsdr })
}

/// Which objective to build for a batch item.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub use_mdl: bool,
    pub use_cl: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            use_mdl: true,
            use_cl: true,
        }
    }
}

/// Loss values for one subset of sources.
#[derive(Clone, Debug, PartialEq)]
pub struct TermReport {
    pub combination: Combination,
    pub mse: f64,
    /// `None` when the time-domain term is disabled.
    pub wsdr: Option<f64>,
    pub mdl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub alpha: f64,
    pub terms: Vec<TermReport>,
}

/// A recorded loss together with its per-subset breakdown.
pub struct LossOutput<'t> {
    pub total: Var<'t>,
    pub report: LossReport,
}

/// Constant inputs shared by every subset term of one training example.
pub struct LossTargets<'a> {
    pub mixture_spec: &'a ComplexSpectrogram,
    pub references: &'a [Waveform],
    pub mixture: &'a Waveform,
}

impl LossTargets<'_> {
    fn validate(&self, masks: usize) -> Result<()> {
        let j = self.references.len();
        if j < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 sources, got {j}")));
        }
        if masks != j {
            return Err(shape_err("loss", format!("{masks} masks for {j} references")));
        }
        let len = self.mixture.len();
        if let Some(r) = self.references.iter().find(|r| r.len() != len) {
            return Err(shape_err(
                "loss",
                format!("reference of {} samples vs mixture of {len}", r.len()),
            ));
        }
        Ok(())
    }
}

fn build_loss<'t>(
    masks: &[Var<'t>],
    targets: &LossTargets<'_>,
    subsets: Vec<Combination>,
    alpha: f64,
    use_mdl: bool,
) -> Result<LossOutput<'t>> {
    targets.validate(masks.len())?;
    let tape = masks[0].tape();
    let y = targets.mixture_spec;
    let cfg: StftConfig = y.config;
    let expected = [y.frames, y.bins];
    if let Some(m) = masks.iter().find(|m| m.shape() != expected) {
        return Err(shape_err(
            "loss",
            format!("mask {:?} vs spectrogram {expected:?}", m.shape()),
        ));
    }
    let y_spec = tape.constant(y.to_tensor());
    let y_mag = tape.constant(dsp::magnitude(y).to_tensor());
    let len = targets.mixture.len();

    // The inverse STFT is linear, so a subset's time-domain estimate is the
    // sum of its members' reconstructions.
    let waves: Vec<Var<'t>> = if use_mdl {
        masks
            .iter()
            .map(|m| dsp::istft_var(m.complex_mask(y_spec)?, &cfg, len))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut total: Option<Var<'t>> = None;
    let mut terms = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let members = subset.sources();
        let mask = sum_vars(members.iter().map(|&j| masks[j]))?;
        let est_mag = mask.mul(y_mag)?;

        let ref_wave = sum_waveforms(members.iter().map(|&j| &targets.references[j]));
        let ref_mag = dsp::magnitude(&dsp::stft(&ref_wave, &cfg)?);
        if ref_mag.frames != y.frames {
            return Err(shape_err(
                "loss",
                format!("reference has {} frames, mixture {}", ref_mag.frames, y.frames),
            ));
        }
        let ref_mag = tape.constant(ref_mag.to_tensor());

        let (term, report) = if use_mdl {
            let est_wave = sum_vars(members.iter().map(|&j| waves[j]))?;
            let t = mdl(
                est_mag,
                ref_mag,
                est_wave,
                &ref_wave.samples,
                &targets.mixture.samples,
                alpha,
            )?;
            let report = TermReport {
                combination: subset,
                mse: scalar(t.mse),
                wsdr: Some(scalar(t.wsdr)),
                mdl: scalar(t.total),
            };
            (t.total, report)
        } else {
            let mse = mse_loss(est_mag, ref_mag)?;
            let report = TermReport {
                combination: subset,
                mse: scalar(mse),
                wsdr: None,
                mdl: scalar(mse),
            };
            (mse, report)
        };
        terms.push(report);
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }

    let n = terms.len() as f64;
    let total = total.expect("at least two subsets").scale(1.0 / n);
    let value = scalar(total);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossOutput {
        total,
        report: LossReport {
            total: value,
            alpha,
            terms,
        },
    })
}

fn scalar(v: Var<'_>) -> f64 {
    v.item().expect("loss terms are scalars")
}

fn sum_vars<'t>(mut vars: impl Iterator<Item = Var<'t>>) -> Result<Var<'t>> {
    let first = vars.next().ok_or_else(|| Error::InvalidArgument("empty sum".into()))?;
    vars.try_fold(first, |acc, v| acc.add(v))
}

/// Sample-wise sum of equally long waveforms.
pub fn sum_waveforms<'a>(mut waves: impl Iterator<Item = &'a Waveform>) -> Waveform {
    let first = waves.next().expect("at least one waveform").clone();
    waves.fold(first, |mut acc, w| {
        for (a, b) in acc.samples.iter_mut().zip(&w.samples) {
            *a += b;
        }
        acc
    })
}

/// Mean loss over every nonempty proper subset of sources. With `use_mdl`
/// off each subset contributes its MSE only.
pub fn combination_loss<'t>(
    masks: &[Var<'t>],
    targets: &LossTargets<'_>,
    alpha: f64,
    use_mdl: bool,
) -> Result<LossOutput<'t>> {
    let subsets = enumerate_combinations(targets.references.len())?;
    build_loss(masks, targets, subsets, alpha, use_mdl)
}

/// Mean of the per-source losses, without cross-source subsets.
pub fn plain_loss<'t>(
    masks: &[Var<'t>],
    targets: &LossTargets<'_>,
    alpha: f64,
    use_mdl: bool,
) -> Result<LossOutput<'t>> {
    let j = targets.references.len();
    if j < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 sources, got {j}")));
    }
    let singles = (0..j).map(|s| Combination(vec![s])).collect();
    build_loss(masks, targets, singles, alpha, use_mdl)
}

/// Dispatches on the loss configuration.
pub fn separation_loss<'t>(masks: &[Var<'t>], targets: &LossTargets<'_>, cfg: &LossConfig) -> Result<LossOutput<'t>> {
    if cfg.use_cl {
        combination_loss(masks, targets, cfg.alpha, cfg.use_mdl)
    } else {
        plain_loss(masks, targets, cfg.alpha, cfg.use_mdl)
    }
}

/// Value-level MSE between two magnitude spectrograms.
pub fn mse(est: &MagnitudeSpectrogram, reference: &MagnitudeSpectrogram) -> Result<f64> {
    let tape = Tape::new();
    let a = tape.constant(est.to_tensor());
    let b = tape.constant(reference.to_tensor());
    Ok(scalar(mse_loss(a, b)?))
}

/// Value-level weighted SDR loss.
pub fn wsdr(est: &Waveform, reference: &Waveform, mix: &Waveform) -> Result<f64> {
    let tape = Tape::new();
    let e = tape.constant(Tensor::vector(est.samples.clone()));
    Ok(scalar(wsdr_loss(e, &reference.samples, &mix.samples)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 8000).unwrap()
    }

    fn random_wave(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
        wave((0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn combination_counts() {
        assert_eq!(enumerate_combinations(4).unwrap().len(), 14);
        assert_eq!(enumerate_combinations(3).unwrap().len(), 6);
        let two = enumerate_combinations(2).unwrap();
        assert_eq!(two, vec![Combination(vec![0]), Combination(vec![1])]);
        assert!(enumerate_combinations(1).is_err());
        assert!(enumerate_combinations(0).is_err());
    }

    #[test]
    fn combinations_ordered_by_size_then_lexicographic() {
        let c = enumerate_combinations(4).unwrap();
        let shown: Vec<String> = c.iter().map(|c| c.to_string()).collect();
        assert_eq!(
            shown,
            [
                "{0}", "{1}", "{2}", "{3}", "{0,1}", "{0,2}", "{0,3}", "{1,2}", "{1,3}", "{2,3}", "{0,1,2}", "{0,1,3}",
                "{0,2,3}", "{1,2,3}"
            ]
        );
    }

    #[test]
    fn combination_rejects_full_and_empty_sets() {
        assert!(Combination::new(vec![0, 1, 2], 3).is_err());
        assert!(Combination::new(vec![], 3).is_err());
        assert!(Combination::new(vec![3], 3).is_err());
        assert_eq!(Combination::new(vec![2, 0, 2], 3).unwrap().sources(), &[0, 2]);
    }

    #[test]
    fn mse_examples() {
        let zero = MagnitudeSpectrogram {
            frames: 2,
            bins: 3,
            data: vec![0.0; 6],
        };
        let ones = MagnitudeSpectrogram {
            frames: 2,
            bins: 3,
            data: vec![1.0; 6],
        };
        assert_eq!(mse(&ones, &zero).unwrap(), 6.0);
        assert_eq!(mse(&ones, &ones).unwrap(), 0.0);
        let wrong = MagnitudeSpectrogram {
            frames: 3,
            bins: 2,
            data: vec![0.0; 6],
        };
        assert!(mse(&ones, &wrong).is_err());
    }

    #[test]
    fn mse_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (t, f) = (5, 7);
        let a: Vec<f64> = (0..t * f).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..t * f).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut expected = 0.0;
        for ti in 0..t {
            for fi in 0..f {
                let d = a[ti * f + fi] - b[ti * f + fi];
                expected += d * d;
            }
        }
        let got = mse(
            &MagnitudeSpectrogram {
                frames: t,
                bins: f,
                data: a,
            },
            &MagnitudeSpectrogram {
                frames: t,
                bins: f,
                data: b,
            },
        )
        .unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn wsdr_perfect_estimate_is_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_wave(64, &mut rng);
        let other = random_wave(64, &mut rng);
        let y = sum_waveforms([&x, &other].into_iter());
        assert_eq!(wsdr(&x, &x, &y).unwrap(), -1.0);
    }

    #[test]
    fn energy_ratio_substitution() {
        // ‖x‖² = 1, ‖y - x‖² = 3
        let x = [1.0, 0.0, 0.0, 0.0];
        let y = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(energy_ratio(&x, &y), 0.25);
    }

    #[test]
    fn wsdr_of_mixture_with_orthogonal_residual() {
        // x ⟂ (y - x), est = y. Closed form: cos(x, y) = ‖x‖/‖y‖, and the
        // residual estimate y - est is zero, so the second cosine is 0.
        let x = wave(vec![2.0, 0.0, 0.0]);
        let n = wave(vec![0.0, 1.0, 1.0]);
        let y = sum_waveforms([&x, &n].into_iter());
        let rho = 4.0 / 6.0;
        let expected = -rho * (2.0 / 6.0_f64.sqrt());
        let got = wsdr(&y, &x, &y).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn wsdr_degenerate_references() {
        let mix = wave(vec![1.0, -1.0, 0.5]);
        let est = wave(vec![0.3, 0.1, 0.2]);
        // silent reference: rho = 0, only the residual term remains
        let silent = Waveform::zeros(3, 8000);
        let got = wsdr(&est, &silent, &mix).unwrap();
        let resid: Vec<f64> = mix.samples.iter().zip(&est.samples).map(|(m, e)| m - e).collect();
        let dot: f64 = mix.samples.iter().zip(&resid).map(|(a, b)| a * b).sum();
        let n1: f64 = mix.samples.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n2: f64 = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((got + dot / (n1 * n2)).abs() < 1e-15);
        // reference equals mixture: rho = 1, only the target term remains
        let got = wsdr(&mix, &mix, &mix).unwrap();
        assert_eq!(got, -1.0);
        assert!(wsdr(&wave(vec![1.0]), &mix, &mix).is_err());
    }

    #[test]
    fn mdl_reduces_to_mse_and_bottoms_at_minus_alpha() {
        let tape = Tape::new();
        let est_mag = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let ref_mag = tape.constant(Tensor::matrix(1, 2, vec![0.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::vector(vec![0.5, -0.25]));
        let mix = [1.0, 1.0];
        let t = mdl(est_mag, ref_mag, w, &[0.5, -0.25], &mix, 0.0).unwrap();
        assert_eq!(t.total.item(), Some(1.0));
        let t = mdl(ref_mag, ref_mag, w, &[0.5, -0.25], &mix, 10.0).unwrap();
        assert_eq!(t.total.item(), Some(-10.0));
    }

    fn toy_problem(j: usize, len: usize, seed: u64) -> (Vec<Waveform>, Waveform, StftConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs: Vec<Waveform> = (0..j).map(|_| random_wave(len, &mut rng)).collect();
        let mix = sum_waveforms(refs.iter());
        (
            refs,
            mix,
            StftConfig {
                fft_size: 16,
                hop_size: 4,
                center: true,
            },
        )
    }

    #[test]
    fn complementary_exact_masks_give_minus_alpha() {
        // One stem carries the whole mixture, the other is silent: the
        // all-ones / all-zeros masks are complementary and exact.
        let cfg = StftConfig {
            fft_size: 16,
            hop_size: 4,
            center: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mix = random_wave(64, &mut rng);
        let refs = vec![mix.clone(), Waveform::zeros(64, 8000)];
        let yspec = dsp::stft(&mix, &cfg).unwrap();
        let (t, f) = (yspec.frames, yspec.bins);
        let masks = [Mask::filled(t, f, 1.0).unwrap(), Mask::filled(t, f, 0.0).unwrap()];

        let tape = Tape::new();
        let vars: Vec<Var<'_>> = masks.iter().map(|m| tape.constant(m.to_tensor())).collect();
        let targets = LossTargets {
            mixture_spec: &yspec,
            references: &refs,
            mixture: &mix,
        };
        let out = combination_loss(&vars, &targets, 10.0, true).unwrap();
        assert_eq!(out.report.terms.len(), 2);
        assert!((out.report.total + 10.0).abs() < 1e-12, "{}", out.report.total);
    }

    #[test]
    fn plain_loss_is_singleton_restriction() {
        let (refs, mix, cfg) = toy_problem(3, 48, 2);
        let yspec = dsp::stft(&mix, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let masks: Vec<Var<'_>> = (0..3)
            .map(|_| {
                let data = (0..yspec.frames * yspec.bins)
                    .map(|_| rng.random_range(0.0..1.0))
                    .collect();
                tape.constant(Tensor::matrix(yspec.frames, yspec.bins, data).unwrap())
            })
            .collect();
        let targets = LossTargets {
            mixture_spec: &yspec,
            references: &refs,
            mixture: &mix,
        };
        let full = combination_loss(&masks, &targets, 10.0, true).unwrap();
        let plain = plain_loss(&masks, &targets, 10.0, true).unwrap();
        let singles: Vec<f64> = full
            .report
            .terms
            .iter()
            .filter(|t| t.combination.len() == 1)
            .map(|t| t.mdl)
            .collect();
        let expected = singles.iter().sum::<f64>() / 3.0;
        assert!((plain.report.total - expected).abs() < 1e-12 * expected.abs().max(1.0));

        let mean: f64 = full.report.terms.iter().map(|t| t.mdl).sum::<f64>() / 6.0;
        assert!((full.report.total - mean).abs() < 1e-12);
    }

    #[test]
    fn mse_only_plain_loss_is_zero_for_perfect_masks() {
        // A single nonzero source makes the all-ones/all-zeros masks exact.
        let cfg = StftConfig {
            fft_size: 16,
            hop_size: 4,
            center: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_wave(40, &mut rng);
        let refs = vec![a.clone(), Waveform::zeros(40, 8000)];
        let yspec = dsp::stft(&a, &cfg).unwrap();
        let tape = Tape::new();
        let (t, f) = (yspec.frames, yspec.bins);
        let masks = [
            tape.constant(Tensor::full(&[t, f], 1.0)),
            tape.constant(Tensor::full(&[t, f], 0.0)),
        ];
        let targets = LossTargets {
            mixture_spec: &yspec,
            references: &refs,
            mixture: &a,
        };
        let out = plain_loss(&masks, &targets, 10.0, false).unwrap();
        assert_eq!(out.report.total, 0.0);
        assert!(out.report.terms.iter().all(|t| t.wsdr.is_none()));
    }

    #[test]
    fn loss_rejects_mismatched_inputs() {
        let (refs, mix, cfg) = toy_problem(2, 32, 1);
        let yspec = dsp::stft(&mix, &cfg).unwrap();
        let tape = Tape::new();
        let one = tape.constant(Tensor::full(&[yspec.frames, yspec.bins], 1.0));
        let targets = LossTargets {
            mixture_spec: &yspec,
            references: &refs,
            mixture: &mix,
        };
        assert!(combination_loss(&[one], &targets, 10.0, true).is_err());
        let bad = tape.constant(Tensor::full(&[yspec.frames, 3], 1.0));
        assert!(combination_loss(&[one, bad], &targets, 10.0, true).is_err());
        let short = [refs[0].clone()];
        let t1 = LossTargets {
            mixture_spec: &yspec,
            references: &short,
            mixture: &mix,
        };
        assert!(plain_loss(&[one], &t1, 10.0, true).is_err());
    }
}
