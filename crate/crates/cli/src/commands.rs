use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use xumx_core::data::load_wav;
use xumx_core::dsp::Waveform;
use xumx_core::inference::{separate as separate_track, write_stems};
use xumx_core::metrics::{
    default_frame_len, evaluate_track, summarize, write_frames_csv, write_summary_csv, Metric, TrackEval,
};
use xumx_core::training::{
    load_checkpoint, save_checkpoint, train as train_model, Checkpoint, TrainHistory, VariantConfig, VARIANT_NAMES,
};

use crate::config::RunConfig;
use crate::report::{box_rows, result_rows, write_csv, VariantEval};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<(), CliError> {
    history.write_csv(BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn train_one(cfg: &RunConfig, out: &Path) -> Result<Checkpoint, CliError> {
    let split = cfg.dataset.load()?;
    train_into(cfg, &split, out)
}

fn train_into(cfg: &RunConfig, split: &xumx_core::data::DatasetSplit, out: &Path) -> Result<Checkpoint, CliError> {
    create_dir(out)?;
    let (checkpoint, history) = train_model(&cfg.train, &cfg.model, &cfg.stft, split).map_err(|e| match e {
        xumx_core::Error::TrainingAborted { .. } => CliError::Runtime(e.to_string()),
        other => other.into(),
    })?;
    save_checkpoint(&out.join("model.ckpt"), &checkpoint)?;
    write_history(&out.join("history.csv"), &history)?;
    log::info!(
        "{}: {} epochs, best epoch {}",
        cfg.train.variant,
        history.epochs.len(),
        history.best_epoch
    );
    Ok(checkpoint)
}

pub fn train(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, seed)?;
    train_one(&cfg, out)?;
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

/// `(track name, mixture path)` for a WAV file, or for every WAV file and
/// every folder holding `mixture.wav` inside a directory.
fn separation_inputs(input: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let stem_name = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    if input.is_file() {
        return Ok(vec![(stem_name(input), input.to_path_buf())]);
    }
    if !input.is_dir() {
        return Err(CliError::Usage(format!("input {} does not exist", input.display())));
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    let mut out = Vec::new();
    for p in entries {
        if p.is_dir() && p.join("mixture.wav").is_file() {
            let name = p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((name, p.join("mixture.wav")));
        } else if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push((stem_name(&p), p));
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("no WAV inputs in {}", input.display())));
    }
    Ok(out)
}

pub fn separate(model: &Path, input: &Path, outdir: &Path) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(model)?;
    let inputs = separation_inputs(input)?;
    create_dir(outdir)?;
    for (name, path) in inputs {
        let mixture = load_wav(&path)?;
        let result = separate_track(&checkpoint, &mixture)?;
        let written = write_stems(outdir, &name, &result)?;
        log::info!(
            "{name}: {} stems, residual ratio {:.3e}",
            written.len(),
            result.residual_ratio(&mixture)
        );
    }
    Ok(())
}

/// Source names of a reference track folder: its WAV files except the mixture.
fn reference_sources(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .filter(|n| n != "mixture")
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Usage(format!("no reference stems in {}", dir.display())));
    }
    Ok(names)
}

fn load_required(path: &Path) -> Result<Waveform, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("missing file {}", path.display())));
    }
    Ok(load_wav(path)?)
}

pub fn eval(refs: &Path, ests: &Path, out: &Path) -> Result<(), CliError> {
    if !refs.is_dir() {
        return Err(CliError::Usage(format!("refs {} is not a directory", refs.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(refs)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Usage(format!("no track folders in {}", refs.display())));
    }
    let mut tracks = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let track = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let names = reference_sources(&dir)?;
        let mut references = Vec::new();
        let mut estimates = Vec::new();
        for n in &names {
            references.push(load_required(&dir.join(format!("{n}.wav")))?);
            estimates.push(load_required(&ests.join(&track).join(format!("{n}.wav")))?);
        }
        for (n, (r, e)) in names.iter().zip(references.iter().zip(&estimates)) {
            if r.len() != e.len() {
                return Err(CliError::Usage(format!(
                    "{track}/{n}: estimate has {} samples, reference {}",
                    e.len(),
                    r.len()
                )));
            }
        }
        let frame_len = default_frame_len(references[0].sample_rate);
        tracks.push(evaluate_track(&track, &names, &references, &estimates, frame_len)?);
    }
    write_eval(&tracks, out)
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "eval".into());
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn write_eval(tracks: &[TrackEval], out: &Path) -> Result<(), CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_frames_csv(BufWriter::new(File::create(out)?), tracks)?;
    let summary = summarize(tracks)?;
    write_summary_csv(BufWriter::new(File::create(summary_path(out))?), &summary)?;
    for r in &summary {
        println!("{:>10} {} {:8.3} dB", r.source, r.metric, r.value);
    }
    Ok(())
}

/// Variant list in canonical order; duplicates and unknown names are errors.
pub fn parse_variants(list: &str) -> Result<Vec<VariantConfig>, CliError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: VariantConfig = name
            .parse()
            .map_err(|e: xumx_core::Error| CliError::Usage(e.to_string()))?;
        if !seen.insert(v.name()) {
            return Err(CliError::Usage(format!("variant {name} listed twice")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Usage("no variants given".into()));
    }
    out.sort_by_key(|v| VARIANT_NAMES.iter().position(|n| *n == v.name()));
    Ok(out)
}

pub fn ablate(config: &Path, variants: &str, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let variants = parse_variants(variants)?;
    let base = RunConfig::load(config, seed)?;
    let split = base.dataset.load()?;
    if split.test.is_empty() {
        return Err(CliError::Usage("ablation needs dataset.test_tracks >= 1".into()));
    }
    create_dir(out)?;
    let mut evals = Vec::with_capacity(variants.len());
    for v in variants {
        let mut cfg = base.clone();
        cfg.train.variant = v;
        let checkpoint = train_into(&cfg, &split, &out.join(v.name()))?;
        let tracks = split
            .test
            .iter()
            .map(|t| {
                let est = separate_track(&checkpoint, &t.mixture)?;
                evaluate_track(
                    &t.name,
                    &t.sources,
                    &t.stems,
                    &est.stems,
                    default_frame_len(t.sample_rate()),
                )
            })
            .collect::<xumx_core::Result<Vec<_>>>()?;
        evals.push(VariantEval { variant: v, tracks });
    }
    write_csv(&out.join("results.csv"), &result_rows(&evals)?)?;
    write_csv(&out.join("boxplot_sdr.csv"), &box_rows(&evals, Metric::Sdr))?;
    write_csv(&out.join("boxplot_sar.csv"), &box_rows(&evals, Metric::Sar))?;
    println!("wrote {}", out.join("results.csv").display());
    Ok(())
}
