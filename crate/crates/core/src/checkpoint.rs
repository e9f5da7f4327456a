//! Model checkpoints: a directory holding `config.json` (kind, architecture
//! config, class names, window size, normalization bounds) and `params.bin`
//! (manifest-ordered little-endian f32 tensors).
//!
//! Stored values are exactly the in-memory values (parameters are kept
//! f32-representable), so save -> load -> predict is bit-identical to
//! predicting before the save.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::baselines::{BaselineConfig, BaselineModel};
use crate::classifier::{GraphClassifier, ModelKind};
use crate::container::{read_container, write_container, EntrySpec, Manifest};
use crate::error::{Error, Result};
use crate::model::{TelestoConfig, TelestoModel};
use crate::series::NormalizationBounds;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub classes: Vec<String>,
    pub window_size: usize,
    /// Per-series normalization bounds fitted on the training fold, keyed by
    /// series name so prediction inputs can be normalized by name.
    pub bounds: Option<NormalizationBounds>,
}

pub struct LoadedCheckpoint {
    pub model: Box<dyn GraphClassifier>,
    pub meta: CheckpointMeta,
}

/// Writes `config.json` and `params.bin` into `dir` (created if missing).
pub fn save_checkpoint(
    dir: &Path,
    model: &dyn GraphClassifier,
    classes: &[String],
    bounds: Option<&NormalizationBounds>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = CheckpointMeta {
        kind: model.kind(),
        config: model.config_value(),
        classes: classes.to_vec(),
        window_size: model.window_size(),
        bounds: bounds.cloned(),
    };
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;

    let store = model.store();
    let mut entries = Vec::new();
    let mut arrays = Vec::new();
    for (name, value) in store.params() {
        entries.push(EntrySpec {
            name: format!("param/{name}"),
            shape: vec![value.nrows(), value.ncols()],
        });
        arrays.push(value.iter().map(|&v| v as f32).collect());
    }
    for (name, value) in store.buffers() {
        entries.push(EntrySpec {
            name: format!("buffer/{name}"),
            shape: vec![value.nrows(), value.ncols()],
        });
        arrays.push(value.iter().map(|&v| v as f32).collect());
    }
    let manifest = Manifest {
        version: 1,
        kind: "params".into(),
        entries,
        meta: serde_json::Value::Null,
    };
    write_container(&dir.join("params.bin"), &manifest, &arrays)
}

fn to_array(spec: &EntrySpec, data: Vec<f32>) -> Result<Array2<f64>> {
    let [rows, cols] = spec.shape[..] else {
        return Err(Error::Checkpoint(format!(
            "tensor `{}` must be rank 2",
            spec.name
        )));
    };
    Array2::from_shape_vec((rows, cols), data.into_iter().map(|v| v as f64).collect())
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Loads a checkpoint directory back into a model.
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model: Box<dyn GraphClassifier> = match meta.kind {
        ModelKind::Telesto => {
            let config: TelestoConfig = serde_json::from_value(meta.config.clone())?;
            Box::new(TelestoModel::new(config, meta.window_size, &mut rng)?)
        }
        ModelKind::Gcn | ModelKind::Gin => {
            let config: BaselineConfig = serde_json::from_value(meta.config.clone())?;
            Box::new(BaselineModel::new(config, meta.window_size, &mut rng)?)
        }
    };

    let (manifest, arrays) = read_container(&dir.join("params.bin"))?;
    if manifest.kind != "params" {
        return Err(Error::Checkpoint(format!(
            "expected a params container, got `{}`",
            manifest.kind
        )));
    }
    let expected = model.store().params().count() + model.store().buffers().count();
    if manifest.entries.len() != expected {
        return Err(Error::Checkpoint(format!(
            "tensor count mismatch: checkpoint has {}, model needs {}",
            manifest.entries.len(),
            expected
        )));
    }
    let store = model.store_mut();
    for (spec, data) in manifest.entries.iter().zip(arrays) {
        let value = to_array(spec, data)?;
        if let Some(name) = spec.name.strip_prefix("param/") {
            store.set_param(name, value)?;
        } else if let Some(name) = spec.name.strip_prefix("buffer/") {
            store.set_buffer(name, value)?;
        } else {
            return Err(Error::Checkpoint(format!(
                "unrecognized tensor `{}`",
                spec.name
            )));
        }
    }
    Ok(LoadedCheckpoint { model, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::full_adjacency;
    use crate::graph::LabeledGraph;
    use rand::Rng;

    fn graph(d: usize, w: usize, seed: u64) -> LabeledGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LabeledGraph {
            node_raw_windows: Array2::from_shape_fn((d, w), |_| rng.gen_range(0.0..1.0)),
            adjacency: full_adjacency(d).unwrap(),
            label: "x".into(),
            window_end_t: w,
        }
    }

    #[test]
    fn round_trip_predictions_are_bit_identical() {
        let config = TelestoConfig {
            conv_filters: 2,
            hidden_dim: 8,
            levels: 2,
            tagcn_hops: 1,
            gat_heads: 2,
            jk_lstm_layers: 1,
            adjacency_dropout_p: 0.3,
            dropout_p: 0.3,
            num_classes: 4,
        };
        let model = TelestoModel::seeded(config, 5, 77).unwrap();
        let classes: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");

        let inputs: Vec<LabeledGraph> = (0..20).map(|i| graph(3 + i % 4, 5, i as u64)).collect();
        let before: Vec<Vec<f64>> = inputs
            .iter()
            .map(|g| model.predict_probs(g).unwrap())
            .collect();

        save_checkpoint(&path, &model, &classes, None).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta.kind, ModelKind::Telesto);
        assert_eq!(loaded.meta.classes, classes);

        for (g, want) in inputs.iter().zip(&before) {
            let got = loaded.model.predict_probs(g).unwrap();
            for (a, b) in got.iter().zip(want) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn baseline_checkpoints_round_trip() {
        for cfg in [BaselineConfig::gcn(3), BaselineConfig::gin(3)] {
            let kind = cfg.kind;
            let model = BaselineModel::seeded(cfg, 6, 5).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let g = graph(4, 6, 1);
            let before = model.predict_probs(&g).unwrap();
            save_checkpoint(dir.path(), &model, &["a".into(), "b".into(), "c".into()], None)
                .unwrap();
            let loaded = load_checkpoint(dir.path()).unwrap();
            let after = loaded.model.predict_probs(&g).unwrap();
            for (a, b) in after.iter().zip(&before) {
                assert_eq!(a.to_bits(), b.to_bits(), "{kind:?}");
            }
        }
    }

    #[test]
    fn bounds_survive_the_round_trip() {
        let model = BaselineModel::seeded(BaselineConfig::gcn(2), 4, 9).unwrap();
        let bounds = NormalizationBounds {
            names: vec!["cpu".into(), "mem".into()],
            min: vec![0.0, 100.0],
            max: vec![100.0, 4096.0],
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &["a".into(), "b".into()], Some(&bounds)).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.meta.bounds.unwrap(), bounds);
    }
}
