//! Dataset directory format: one directory per node holding `series.csv`,
//! `labels.csv` and `meta.json`.
//!
//! `series.csv` has a `timestamp,<name1>,...,<named>` header with timestamps in
//! seconds, strictly increasing at `1 / sample_rate_hz` spacing. `labels.csv`
//! lists inclusive `start,end,class` intervals in the same time base; samples
//! outside every interval are `normal`. `meta.json` carries `sample_rate_hz`,
//! `series_names` and `bounds_overrides`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::series::{MultivariateSeries, NORMAL_LABEL};

/// `meta.json` contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub sample_rate_hz: f64,
    pub series_names: Vec<String>,
    /// Known-limit normalization overrides keyed by series name.
    #[serde(default)]
    pub bounds_overrides: BTreeMap<String, (f64, f64)>,
}

/// One labeled interval from `labels.csv` (inclusive bounds, in seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInterval {
    pub start: f64,
    pub end: f64,
    pub class: String,
}

/// A node dataset: the series plus the raw injection intervals, which double
/// as injection-instance ground truth for split construction.
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub series: MultivariateSeries,
    pub intervals: Vec<LabeledInterval>,
    pub meta: DatasetMeta,
}

impl NodeDataset {
    /// Per-dimension overrides aligned with the series rows.
    pub fn override_vec(&self) -> Vec<Option<(f64, f64)>> {
        self.meta
            .series_names
            .iter()
            .map(|n| self.meta.bounds_overrides.get(n).copied())
            .collect()
    }
}

fn check_spacing(timestamps: &[f64], rate: f64) -> Result<()> {
    let step = 1.0 / rate;
    for (i, pair) in timestamps.windows(2).enumerate() {
        let dt = pair[1] - pair[0];
        if dt <= 0.0 || (dt - step).abs() > 1e-6 {
            return Err(Error::MalformedDataset(format!(
                "timestamp spacing {dt} at row {i} does not match 1/{rate} Hz"
            )));
        }
    }
    Ok(())
}

/// Expands labeled intervals into one label per timestamp.
pub fn labels_for_timestamps(
    timestamps: &[f64],
    intervals: &[LabeledInterval],
) -> Result<Vec<String>> {
    let mut sorted: Vec<&LabeledInterval> = intervals.iter().collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    for pair in sorted.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(Error::MalformedDataset(format!(
                "overlapping label intervals at {} and {}",
                pair[0].start, pair[1].start
            )));
        }
    }
    let mut labels = vec![NORMAL_LABEL.to_string(); timestamps.len()];
    for iv in &sorted {
        if iv.end < iv.start {
            return Err(Error::MalformedDataset(format!(
                "label interval with end {} before start {}",
                iv.end, iv.start
            )));
        }
        for (i, &t) in timestamps.iter().enumerate() {
            if t >= iv.start && t <= iv.end {
                labels[i] = iv.class.clone();
            }
        }
    }
    Ok(labels)
}

/// Reads one node dataset directory.
pub fn read_node_dir(dir: &Path) -> Result<NodeDataset> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;

    let mut reader = csv::Reader::from_path(dir.join("series.csv"))?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[0] != "timestamp" {
        return Err(Error::MalformedDataset(
            "series.csv must start with a `timestamp` column".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names != meta.series_names {
        return Err(Error::MalformedDataset(
            "series.csv columns do not match meta.json series_names".into(),
        ));
    }
    let d = names.len();
    let mut timestamps = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); d];
    for record in reader.records() {
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::MalformedDataset(format!(
                "series.csv row has {} fields, expected {}",
                record.len(),
                d + 1
            )));
        }
        let ts: f64 = record[0]
            .parse()
            .map_err(|_| Error::MalformedDataset(format!("bad timestamp `{}`", &record[0])))?;
        timestamps.push(ts);
        for (i, col) in columns.iter_mut().enumerate() {
            let v: f64 = record[i + 1].parse().map_err(|_| {
                Error::MalformedDataset(format!("bad value `{}` in `{}`", &record[i + 1], names[i]))
            })?;
            col.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::EmptySeries(format!("{}", dir.display())));
    }
    check_spacing(&timestamps, meta.sample_rate_hz)?;

    let mut intervals = Vec::new();
    let labels_path = dir.join("labels.csv");
    let mut label_reader = csv::Reader::from_path(&labels_path)?;
    for record in label_reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::MalformedDataset(
                "labels.csv rows must be start,end,class".into(),
            ));
        }
        let start: f64 = record[0]
            .parse()
            .map_err(|_| Error::MalformedDataset(format!("bad start `{}`", &record[0])))?;
        let end: f64 = record[1]
            .parse()
            .map_err(|_| Error::MalformedDataset(format!("bad end `{}`", &record[1])))?;
        intervals.push(LabeledInterval {
            start,
            end,
            class: record[2].to_string(),
        });
    }

    let labels = labels_for_timestamps(&timestamps, &intervals)?;
    let t = timestamps.len();
    let mut values = Array2::zeros((d, t));
    for (i, col) in columns.iter().enumerate() {
        for (j, &v) in col.iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let series = MultivariateSeries::new(values, names, meta.sample_rate_hz, labels)?;
    Ok(NodeDataset {
        series,
        intervals,
        meta,
    })
}

/// Writes one node dataset directory (`series.csv`, `labels.csv`, `meta.json`).
///
/// Output is byte-deterministic for identical inputs.
pub fn write_node_dir(
    dir: &Path,
    series: &MultivariateSeries,
    intervals: &[LabeledInterval],
    meta: &DatasetMeta,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let step = 1.0 / meta.sample_rate_hz;

    let mut out = String::new();
    out.push_str("timestamp");
    for name in series.series_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for j in 0..series.len() {
        out.push_str(&format!("{}", j as f64 * step));
        for i in 0..series.dims() {
            out.push_str(&format!(",{}", series.values()[[i, j]]));
        }
        out.push('\n');
    }
    fs::write(dir.join("series.csv"), out)?;

    let mut labels_out = String::from("start,end,class\n");
    for iv in intervals {
        labels_out.push_str(&format!("{},{},{}\n", iv.start, iv.end, iv.class));
    }
    fs::write(dir.join("labels.csv"), labels_out)?;

    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(meta)? + "\n",
    )?;
    Ok(())
}

/// Persists a built graph set as a single archive: a manifest (windowing
/// config, adjacency spec, labels, window end indices) plus the raw window
/// tensor as little-endian f32.
pub fn write_graph_archive(
    path: &Path,
    graphs: &[LabeledGraph],
    cfg: &crate::graph::WindowingConfig,
) -> Result<()> {
    use crate::container::{EntrySpec, Manifest, write_container};
    if graphs.is_empty() {
        return Err(Error::EmptySeries("no graphs to archive".into()));
    }
    let d = graphs[0].node_count();
    let w = graphs[0].window_size();
    if graphs
        .iter()
        .any(|g| g.node_count() != d || g.window_size() != w)
    {
        return Err(Error::ShapeMismatch(
            "graphs in one archive must share d and w".into(),
        ));
    }
    let labels: Vec<&str> = graphs.iter().map(|g| g.label.as_str()).collect();
    let ends: Vec<usize> = graphs.iter().map(|g| g.window_end_t).collect();
    let manifest = Manifest {
        version: 1,
        kind: "graphs".into(),
        entries: vec![EntrySpec {
            name: "windows".into(),
            shape: vec![graphs.len(), d, w],
        }],
        meta: serde_json::json!({
            "windowing": cfg,
            "adjacency": "full",
            "labels": labels,
            "window_end_t": ends,
        }),
    };
    let mut data = Vec::with_capacity(graphs.len() * d * w);
    for g in graphs {
        data.extend(g.node_raw_windows.iter().map(|&v| v as f32));
    }
    write_container(path, &manifest, &[data])
}

/// Loads a graph archive written by [`write_graph_archive`].
pub fn read_graph_archive(
    path: &Path,
) -> Result<(Vec<LabeledGraph>, crate::graph::WindowingConfig)> {
    use crate::container::read_container;
    use crate::graph::full_adjacency;
    let (manifest, mut arrays) = read_container(path)?;
    if manifest.kind != "graphs" {
        return Err(Error::MalformedContainer(format!(
            "expected kind `graphs`, got `{}`",
            manifest.kind
        )));
    }
    let spec = manifest
        .entries
        .first()
        .ok_or_else(|| Error::MalformedContainer("missing windows entry".into()))?;
    let [n, d, w] = spec.shape[..] else {
        return Err(Error::MalformedContainer("windows must be rank 3".into()));
    };
    let cfg: crate::graph::WindowingConfig = serde_json::from_value(
        manifest.meta["windowing"].clone(),
    )?;
    let labels: Vec<String> = serde_json::from_value(manifest.meta["labels"].clone())?;
    let ends: Vec<usize> = serde_json::from_value(manifest.meta["window_end_t"].clone())?;
    if labels.len() != n || ends.len() != n {
        return Err(Error::MalformedContainer(
            "label/end counts do not match graph count".into(),
        ));
    }
    let data = arrays.remove(0);
    let adjacency = full_adjacency(d)?;
    let mut graphs = Vec::with_capacity(n);
    for g in 0..n {
        let slice = &data[g * d * w..(g + 1) * d * w];
        let windows =
            Array2::from_shape_vec((d, w), slice.iter().map(|&v| v as f64).collect())
                .map_err(|e| Error::MalformedContainer(e.to_string()))?;
        graphs.push(LabeledGraph {
            node_raw_windows: windows,
            adjacency: adjacency.clone(),
            label: labels[g].clone(),
            window_end_t: ends[g],
        });
    }
    Ok((graphs, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graphs, WindowingConfig};
    use ndarray::array;

    fn sample_meta() -> DatasetMeta {
        DatasetMeta {
            sample_rate_hz: 2.0,
            series_names: vec!["cpu".into(), "mem".into()],
            bounds_overrides: BTreeMap::from([("cpu".into(), (0.0, 100.0))]),
        }
    }

    #[test]
    fn node_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = sample_meta();
        let intervals = vec![LabeledInterval {
            start: 1.0,
            end: 2.0,
            class: "CPU".into(),
        }];
        let labels = labels_for_timestamps(&[0.0, 0.5, 1.0, 1.5, 2.0, 2.5], &intervals).unwrap();
        let series = MultivariateSeries::new(
            array![
                [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
            ],
            meta.series_names.clone(),
            2.0,
            labels,
        )
        .unwrap();
        write_node_dir(dir.path(), &series, &intervals, &meta).unwrap();
        let loaded = read_node_dir(dir.path()).unwrap();
        assert_eq!(loaded.series, series);
        assert_eq!(loaded.intervals, intervals);
        assert_eq!(loaded.override_vec(), vec![Some((0.0, 100.0)), None]);
    }

    #[test]
    fn interval_labels_inclusive_and_normal_elsewhere() {
        let intervals = vec![LabeledInterval {
            start: 1.0,
            end: 2.0,
            class: "MEL".into(),
        }];
        let labels = labels_for_timestamps(&[0.0, 0.5, 1.0, 1.5, 2.0, 2.5], &intervals).unwrap();
        assert_eq!(
            labels,
            vec!["normal", "normal", "MEL", "MEL", "MEL", "normal"]
        );
    }

    #[test]
    fn overlapping_intervals_rejected() {
        let intervals = vec![
            LabeledInterval { start: 0.0, end: 2.0, class: "CPU".into() },
            LabeledInterval { start: 1.0, end: 3.0, class: "MEL".into() },
        ];
        assert!(labels_for_timestamps(&[0.0, 1.0], &intervals).is_err());
    }

    #[test]
    fn bad_spacing_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let meta = sample_meta();
        fs::write(
            dir.path().join("meta.json"),
            serde_json::to_string(&meta).unwrap(),
        )
        .unwrap();
        fs::write(
            dir.path().join("series.csv"),
            "timestamp,cpu,mem\n0,1,2\n0.7,3,4\n",
        )
        .unwrap();
        fs::write(dir.path().join("labels.csv"), "start,end,class\n").unwrap();
        assert!(read_node_dir(dir.path()).is_err());
    }

    #[test]
    fn graph_archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graphs.bin");
        let labels = vec!["normal".to_string(); 30];
        let series = MultivariateSeries::new(
            ndarray::Array2::from_shape_fn((3, 30), |(i, j)| (i * 30 + j) as f64),
            vec!["a".into(), "b".into(), "c".into()],
            2.0,
            labels,
        )
        .unwrap();
        let cfg = WindowingConfig::new(10, 2).unwrap();
        let graphs = build_graphs(&series, &cfg).unwrap();
        write_graph_archive(&path, &graphs, &cfg).unwrap();
        let (loaded, cfg2) = read_graph_archive(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(loaded.len(), graphs.len());
        for (a, b) in loaded.iter().zip(&graphs) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.window_end_t, b.window_end_t);
            assert_eq!(a.adjacency, b.adjacency);
            // values pass through f32 storage
            for (x, y) in a.node_raw_windows.iter().zip(b.node_raw_windows.iter()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }
}
