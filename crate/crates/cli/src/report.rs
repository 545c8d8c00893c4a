//! Ablation tables: one aggregated value per variant, source and metric, and
//! quartiles of the per-track values for box plots.

use std::fs::File;
use std::path::Path;

use serde::Serialize;
use xumx_core::metrics::{summarize, track_median, Metric, TrackEval};
use xumx_core::training::VariantConfig;

use crate::CliError;

/// Evaluation of one trained variant on the test tracks.
pub struct VariantEval {
    pub variant: VariantConfig,
    pub tracks: Vec<TrackEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub variant: String,
    pub source: String,
    pub metric: Metric,
    pub value: f64,
}

/// Linear interpolation between order statistics of a sorted slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxRow {
    pub variant: String,
    pub source: String,
    pub tracks: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn box_row(variant: &str, source: &str, values: &[f64]) -> Option<BoxRow> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxRow {
        variant: variant.to_string(),
        source: source.to_string(),
        tracks: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

pub fn result_rows(evals: &[VariantEval]) -> Result<Vec<ResultRow>, CliError> {
    let mut rows = Vec::new();
    for e in evals {
        for r in summarize(&e.tracks)? {
            rows.push(ResultRow {
                variant: e.variant.name().to_string(),
                source: r.source,
                metric: r.metric,
                value: r.value,
            });
        }
    }
    Ok(rows)
}

pub fn box_rows(evals: &[VariantEval], metric: Metric) -> Vec<BoxRow> {
    let mut rows = Vec::new();
    for e in evals {
        let Some(first) = e.tracks.first() else {
            continue;
        };
        for (j, s) in first.sources.iter().enumerate() {
            let values: Vec<f64> = e
                .tracks
                .iter()
                .filter_map(|t| t.sources.get(j).and_then(|s| track_median(s.frames(metric))))
                .collect();
            rows.extend(box_row(e.variant.name(), &s.source, &values));
        }
    }
    rows
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}
