//! The J-source mask estimator.
//!
//! Each source owns an encoder (affine + tanh, `F -> H`), a stack of LSTM
//! layers (`H -> H`) and a decoder (affine + ReLU, `H -> F`). With
//! `bridging` enabled the paths are crossed at two points: the encoder
//! outputs of all sources are replaced by their mean before the recurrent
//! block, and the recurrent outputs are replaced by their mean before the
//! decoders. Averaging has no weights, so both wirings share one parameter
//! layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{MagnitudeSpectrogram, Mask};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{lstm, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub sources: usize,
    pub hidden_size: usize,
    pub recurrent_layers: usize,
    pub input_bins: usize,
    pub bridging: bool,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 sources, got {}",
                self.sources
            )));
        }
        if self.hidden_size == 0 || self.recurrent_layers == 0 || self.input_bins == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden_size, recurrent_layers and input_bins must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Three recurrent layers of 512 units, the size of the reference
    /// open-source separator, at 4096-point FFT resolution.
    pub fn large(bridging: bool) -> Self {
        Self {
            sources: 4,
            hidden_size: 512,
            recurrent_layers: 3,
            input_bins: 2049,
            bridging,
        }
    }

    fn layers_per_source(&self) -> usize {
        4 + 3 * self.recurrent_layers
    }
}

/// Size of each source path, independent of the data it is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub recurrent_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            recurrent_layers: 1,
        }
    }
}

impl ModelConfig {
    pub fn net(&self, sources: usize, input_bins: usize, bridging: bool) -> NetConfig {
        NetConfig {
            sources,
            hidden_size: self.hidden_size,
            recurrent_layers: self.recurrent_layers,
            input_bins,
            bridging,
        }
    }
}

/// Per-bin affine normalisation of the input magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: vec![0.0; bins],
            std: vec![1.0; bins],
        }
    }

    /// Mean and standard deviation of every bin over all frames given.
    pub fn fit<'a>(specs: impl IntoIterator<Item = &'a MagnitudeSpectrogram>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for s in specs {
            if sum.is_empty() {
                sum = vec![0.0; s.bins];
                sum_sq = vec![0.0; s.bins];
            } else if s.bins != sum.len() {
                return Err(shape_err("InputNorm::fit", format!("{} vs {} bins", s.bins, sum.len())));
            }
            for row in s.data.chunks_exact(s.bins) {
                for (k, v) in row.iter().enumerate() {
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
            }
            count += s.frames;
        }
        if count == 0 {
            return Err(Error::InvalidArgument("no frames to fit normalisation".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let raw: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
            .collect();
        // Near-silent bins would otherwise blow rounding noise up to unit scale.
        let floor = raw.iter().cloned().fold(0.0, f64::max) * 1e-3 + 1e-12;
        let std = raw.iter().map(|s| s.max(floor)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, mag: &MagnitudeSpectrogram) -> Result<Tensor> {
        if mag.bins != self.mean.len() {
            return Err(shape_err(
                "InputNorm::apply",
                format!("{} bins vs {}", mag.bins, self.mean.len()),
            ));
        }
        let mut data = mag.data.clone();
        for row in data.chunks_exact_mut(mag.bins) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Tensor::matrix(mag.frames, mag.bins, data)
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    layers: Vec<(String, Tensor)>,
}

impl ModelParams {
    pub fn from_layers(layers: Vec<(String, Tensor)>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[(String, Tensor)] {
        &self.layers
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    /// Names and shapes the layout for `cfg` must have, in order.
    pub fn layout(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
        let (f, h) = (cfg.input_bins, cfg.hidden_size);
        let mut out = Vec::with_capacity(cfg.sources * cfg.layers_per_source());
        for j in 0..cfg.sources {
            out.push((format!("s{j}.encoder.weight"), vec![f, h]));
            out.push((format!("s{j}.encoder.bias"), vec![h]));
            for l in 0..cfg.recurrent_layers {
                out.push((format!("s{j}.lstm{l}.w_ih"), vec![h, 4 * h]));
                out.push((format!("s{j}.lstm{l}.w_hh"), vec![h, 4 * h]));
                out.push((format!("s{j}.lstm{l}.bias"), vec![4 * h]));
            }
            out.push((format!("s{j}.decoder.weight"), vec![h, f]));
            out.push((format!("s{j}.decoder.bias"), vec![f]));
        }
        out
    }

    pub fn check_layout(&self, cfg: &NetConfig) -> Result<()> {
        let layout = Self::layout(cfg);
        if layout.len() != self.layers.len() {
            return Err(shape_err(
                "ModelParams",
                format!("{} layers, config needs {}", self.layers.len(), layout.len()),
            ));
        }
        for ((name, shape), (have_name, t)) in layout.iter().zip(&self.layers) {
            if name != have_name || shape.as_slice() != t.shape() {
                return Err(shape_err(
                    "ModelParams",
                    format!("expected {name} {shape:?}, found {have_name} {:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Indices of source `j`'s tensors within [`ModelParams::layers`].
    pub fn source_range(cfg: &NetConfig, j: usize) -> std::ops::Range<usize> {
        let per = cfg.layers_per_source();
        j * per..(j + 1) * per
    }
}

/// Total number of scalar parameters.
pub fn param_count(params: &ModelParams) -> usize {
    params.tensors().map(Tensor::numel).sum()
}

/// Uniform `±1/sqrt(fan_in)` initialisation, deterministic per seed.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = ModelParams::layout(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let bound = 1.0 / (fan_in(cfg, &name) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            let t = Tensor::new(shape, data).expect("layout shapes are consistent");
            (name, t)
        })
        .collect();
    Ok(ModelParams { layers })
}

/// Fan-in used for the initialisation bound of a named layer.
pub fn fan_in(cfg: &NetConfig, name: &str) -> usize {
    if name.contains(".encoder.") {
        cfg.input_bins
    } else {
        cfg.hidden_size
    }
}

/// Per-source handles to parameters already recorded on a tape.
pub struct SourceVars<'t> {
    encoder_w: Var<'t>,
    encoder_b: Var<'t>,
    recurrent: Vec<[Var<'t>; 3]>,
    decoder_w: Var<'t>,
    decoder_b: Var<'t>,
}

/// All parameters of a model recorded on one tape.
pub struct ParamVars<'t> {
    pub all: Vec<Var<'t>>,
    sources: Vec<SourceVars<'t>>,
}

impl<'t> ParamVars<'t> {
    /// Records `params` as trainable leaves.
    pub fn trainable(tape: &'t Tape, cfg: &NetConfig, params: &ModelParams) -> Result<Self> {
        Self::record(tape, cfg, params, true)
    }

    /// Records `params` as constants (inference).
    pub fn frozen(tape: &'t Tape, cfg: &NetConfig, params: &ModelParams) -> Result<Self> {
        Self::record(tape, cfg, params, false)
    }

    /// Wraps vars already on a tape, in layout order.
    pub fn from_vars(cfg: &NetConfig, all: Vec<Var<'t>>) -> Result<Self> {
        if all.len() != cfg.sources * cfg.layers_per_source() {
            return Err(shape_err(
                "ParamVars",
                format!("{} tensors for config {cfg:?}", all.len()),
            ));
        }
        let sources = (0..cfg.sources)
            .map(|j| {
                let v = &all[ModelParams::source_range(cfg, j)];
                let recurrent = (0..cfg.recurrent_layers)
                    .map(|l| [v[2 + 3 * l], v[3 + 3 * l], v[4 + 3 * l]])
                    .collect();
                let k = v.len();
                SourceVars {
                    encoder_w: v[0],
                    encoder_b: v[1],
                    recurrent,
                    decoder_w: v[k - 2],
                    decoder_b: v[k - 1],
                }
            })
            .collect();
        Ok(Self { all, sources })
    }

    fn record(tape: &'t Tape, cfg: &NetConfig, params: &ModelParams, train: bool) -> Result<Self> {
        params.check_layout(cfg)?;
        let all = params
            .tensors()
            .map(|t| {
                if train {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self::from_vars(cfg, all)
    }

    pub fn source_vars(&self, cfg: &NetConfig, j: usize) -> &[Var<'t>] {
        &self.all[ModelParams::source_range(cfg, j)]
    }
}

/// Records the network on `vars`' tape for a normalised `[T, F]` input and
/// returns one `[T, F]` mask node per source.
pub fn forward<'t>(vars: &ParamVars<'t>, cfg: &NetConfig, input: &Tensor) -> Result<Vec<Var<'t>>> {
    cfg.validate()?;
    if input.rank() != 2 || input.shape()[1] != cfg.input_bins {
        return Err(shape_err(
            "forward",
            format!("input {:?} for {} bins", input.shape(), cfg.input_bins),
        ));
    }
    let tape = vars.all[0].tape();
    let x = tape.constant(input.clone());

    let mut encoded = vars
        .sources
        .iter()
        .map(|s| Ok(x.matmul(s.encoder_w)?.add_row(s.encoder_b)?.tanh()))
        .collect::<Result<Vec<_>>>()?;
    if cfg.bridging {
        let mean = Var::mean_of(&encoded)?;
        encoded = vec![mean; cfg.sources];
    }

    let mut recurrent = vars
        .sources
        .iter()
        .zip(&encoded)
        .map(|(s, &e)| {
            s.recurrent
                .iter()
                .try_fold(e, |h, [w_ih, w_hh, b]| lstm(h, *w_ih, *w_hh, *b))
        })
        .collect::<Result<Vec<_>>>()?;
    if cfg.bridging {
        let mean = Var::mean_of(&recurrent)?;
        recurrent = vec![mean; cfg.sources];
    }

    let masks = vars
        .sources
        .iter()
        .zip(&recurrent)
        .map(|(s, &h)| Ok(h.matmul(s.decoder_w)?.add_row(s.decoder_b)?.relu()))
        .collect::<Result<Vec<_>>>()?;
    for m in &masks {
        m.value().check_finite("mask activation")?;
    }
    Ok(masks)
}

/// Network weights, wiring and input normalisation needed for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub params: ModelParams,
    pub norm: InputNorm,
}

impl Model {
    pub fn new(config: NetConfig, params: ModelParams, norm: InputNorm) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        if norm.mean.len() != config.input_bins || norm.std.len() != config.input_bins {
            return Err(shape_err(
                "Model::new",
                format!(
                    "normalisation for {} bins, model has {}",
                    norm.mean.len(),
                    config.input_bins
                ),
            ));
        }
        Ok(Self { config, params, norm })
    }

    /// Masks for a mixture magnitude spectrogram (no gradients recorded).
    pub fn masks(&self, mixture: &MagnitudeSpectrogram) -> Result<Vec<Mask>> {
        let tape = Tape::new();
        let vars = ParamVars::frozen(&tape, &self.config, &self.params)?;
        let input = self.norm.apply(mixture)?;
        forward(&vars, &self.config, &input)?
            .into_iter()
            .map(|m| Mask::new(mixture.frames, mixture.bins, m.value().data().to_vec()))
            .collect()
    }
}
