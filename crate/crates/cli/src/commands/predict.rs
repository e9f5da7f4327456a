//! `telesto predict`: classify one raw KPI window with a trained checkpoint.
//!
//! The input CSV has one named column per series and exactly `window_size`
//! rows. Columns whose names match the checkpoint's stored normalization
//! bounds are rescaled with those bounds; unknown columns fall back to
//! per-window min/max so inputs of any dimensionality stay usable.

use clap::Args;
use ndarray::Array2;
use std::path::PathBuf;

use telesto_core::checkpoint::load_checkpoint;
use telesto_core::classifier::argmax_class;
use telesto_core::graph::{full_adjacency, LabeledGraph};
use telesto_core::series::NormalizationBounds;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoint directory written by `telesto train`.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Window CSV: header of series names, one row per timestep.
    #[arg(long)]
    pub input: PathBuf,
}

fn read_window(path: &PathBuf) -> CliResult<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(CliError::Data("window CSV has no columns".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(e.to_string()))?;
        if record.len() != names.len() {
            return Err(CliError::Data(format!(
                "row has {} fields, header has {}",
                record.len(),
                names.len()
            )));
        }
        let row: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| CliError::Data(format!("bad value: {e}")))?);
    }
    if rows.is_empty() {
        return Err(CliError::Data("window CSV has no rows".into()));
    }
    // transpose to (series, time)
    let (w, d) = (rows.len(), names.len());
    let values = Array2::from_shape_fn((d, w), |(i, t)| rows[t][i]);
    Ok((names, values))
}

/// Rescale each dimension with name-matched trained bounds, or per-window
/// observed min/max for unseen series names.
fn normalize_window(
    names: &[String],
    values: &Array2<f64>,
    trained: Option<&NormalizationBounds>,
) -> Array2<f64> {
    let mut out = values.clone();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let bounds = trained.and_then(|b| {
            b.names
                .iter()
                .position(|n| n == &names[i])
                .map(|k| (b.min[k], b.max[k]))
        });
        let (lo, hi) = bounds.unwrap_or_else(|| {
            row.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &v| (lo.min(v), hi.max(v)),
            )
        });
        row.mapv_inplace(|v| {
            if hi > lo {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
    }
    out
}

pub fn run(args: PredictArgs) -> CliResult<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let (names, values) = read_window(&args.input)?;
    if values.ncols() != loaded.meta.window_size {
        return Err(CliError::Data(format!(
            "window has {} timesteps but the checkpoint expects {}",
            values.ncols(),
            loaded.meta.window_size
        )));
    }
    let normalized = normalize_window(&names, &values, loaded.meta.bounds.as_ref());
    let d = normalized.nrows();
    let graph = LabeledGraph {
        node_raw_windows: normalized,
        adjacency: full_adjacency(d)?,
        label: String::new(),
        window_end_t: loaded.meta.window_size,
    };
    let probs = loaded.model.predict_probs(&graph)?;
    let label = &loaded.meta.classes[argmax_class(&probs)];
    let probs_map: serde_json::Map<String, serde_json::Value> = loaded
        .meta
        .classes
        .iter()
        .zip(&probs)
        .map(|(c, &p)| (c.clone(), serde_json::json!(p)))
        .collect();
    let output = serde_json::json!({ "probs": probs_map, "label": label });
    println!("{}", serde_json::to_string(&output)?);
    Ok(())
}
