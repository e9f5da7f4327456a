//! Report rendering: the per-split comparison table in markdown, loss-curve
//! CSVs and simple static SVG plots (loss curves, confusion heat map).

use std::fmt::Write as _;

use crate::split::FOLDS;
use crate::train::{EvalReport, RunRecord};

const METRIC_ROWS: [(&str, fn(&crate::metrics::MetricSummary) -> f64); 4] = [
    ("Accuracy", |m| m.accuracy),
    ("Recall", |m| m.macro_recall),
    ("Precision", |m| m.macro_precision),
    ("F1-Score", |m| m.macro_f1),
];

/// Side-by-side comparison of one or more experiment reports: one block of
/// four metric rows per model, columns `Split 1..5` plus the cross-split
/// average.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str("| Model | Metric |");
    for f in 1..=FOLDS {
        let _ = write!(out, " Split {f} |");
    }
    out.push_str(" ∅ |\n|---|---|");
    for _ in 0..=FOLDS {
        out.push_str("---|");
    }
    out.push('\n');
    for report in reports {
        for (metric_name, getter) in METRIC_ROWS {
            let _ = write!(out, "| {} | {} |", report.model.to_uppercase(), metric_name);
            for fold in &report.folds {
                let _ = write!(out, " {:.3} |", getter(&fold.mean));
            }
            let _ = writeln!(out, " {:.3} |", getter(&report.mean));
        }
    }
    out
}

/// Loss curves of one (fold, run) as CSV.
pub fn loss_curve_csv(record: &RunRecord) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in &record.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    out
}

fn svg_header(width: usize, height: usize) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"11\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Mean train/validation loss per epoch across all folds and runs, as an SVG
/// line chart.
pub fn loss_curve_svg(report: &EvalReport) -> String {
    let (width, height, margin) = (480usize, 300usize, 40.0f64);
    let mut epochs = 0usize;
    for fold in &report.folds {
        for run in &fold.runs {
            epochs = epochs.max(run.epochs.len());
        }
    }
    if epochs == 0 {
        return svg_header(width, height) + "</svg>\n";
    }
    let mut train_mean = vec![0.0f64; epochs];
    let mut val_mean = vec![0.0f64; epochs];
    let mut counts = vec![0usize; epochs];
    for fold in &report.folds {
        for run in &fold.runs {
            for (i, e) in run.epochs.iter().enumerate() {
                train_mean[i] += e.train_loss;
                val_mean[i] += e.val_loss;
                counts[i] += 1;
            }
        }
    }
    for i in 0..epochs {
        if counts[i] > 0 {
            train_mean[i] /= counts[i] as f64;
            val_mean[i] /= counts[i] as f64;
        }
    }
    let max_loss = train_mean
        .iter()
        .chain(&val_mean)
        .cloned()
        .fold(f64::MIN_POSITIVE, f64::max);
    let (w, h) = (width as f64, height as f64);
    let x_of = |i: usize| margin + (w - 2.0 * margin) * i as f64 / (epochs.max(2) - 1) as f64;
    let y_of = |loss: f64| h - margin - (h - 2.0 * margin) * (loss / max_loss);
    let train_pts: Vec<(f64, f64)> = train_mean.iter().enumerate().map(|(i, &l)| (x_of(i), y_of(l))).collect();
    let val_pts: Vec<(f64, f64)> = val_mean.iter().enumerate().map(|(i, &l)| (x_of(i), y_of(l))).collect();
    let mut out = svg_header(width, height);
    let _ = write!(
        out,
        "<line x1=\"{m}\" y1=\"{yb}\" x2=\"{xe}\" y2=\"{yb}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{yb}\" stroke=\"black\"/>\n",
        m = margin,
        yb = h - margin,
        xe = w - margin,
    );
    out.push_str(&polyline(&train_pts, "#1f77b4"));
    out.push_str(&polyline(&val_pts, "#d62728"));
    let _ = write!(
        out,
        "<text x=\"{x}\" y=\"20\" fill=\"#1f77b4\">train loss</text>\n\
         <text x=\"{x}\" y=\"34\" fill=\"#d62728\">val loss</text>\n\
         <text x=\"{xm}\" y=\"{yt}\" fill=\"black\">epoch</text>\n",
        x = w - margin - 90.0,
        xm = w / 2.0 - 20.0,
        yt = h - 10.0,
    );
    out.push_str("</svg>\n");
    out
}

/// Confusion counts summed over all folds and runs, rendered as an SVG heat
/// map with row/column class labels.
pub fn confusion_heatmap_svg(report: &EvalReport) -> String {
    let classes = &report.classes;
    let c = classes.len();
    let mut total = vec![vec![0usize; c]; c];
    for fold in &report.folds {
        for run in &fold.runs {
            for (i, row) in run.confusion.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    total[i][j] += v;
                }
            }
        }
    }
    let cell = 48usize;
    let margin = 80usize;
    let size = margin + c * cell + 20;
    let max = total.iter().flatten().cloned().max().unwrap_or(1).max(1);
    let mut out = svg_header(size, size);
    for (i, row) in total.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let intensity = v as f64 / max as f64;
            let shade = (255.0 * (1.0 - intensity * 0.85)) as u8;
            let x = margin + j * cell;
            let y = margin + i * cell;
            let _ = write!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({shade},{shade},255)\" stroke=\"#999\"/>\n\
                 <text x=\"{tx}\" y=\"{ty}\" text-anchor=\"middle\">{v}</text>\n",
                tx = x + cell / 2,
                ty = y + cell / 2 + 4,
            );
        }
    }
    for (i, name) in classes.iter().enumerate() {
        let _ = write!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\">{name}</text>\n",
            x = margin - 6,
            y = margin + i * cell + cell / 2 + 4,
        );
        let _ = write!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\">{name}</text>\n",
            x = margin + i * cell + cell / 2,
            y = margin - 8,
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricSummary;
    use crate::train::{
        EpochStats, ExperimentConfig, FoldRecord, ModelSpec, TrainConfig,
    };
    use crate::classifier::ModelKind;
    use crate::graph::WindowingConfig;

    fn summary(v: f64) -> MetricSummary {
        MetricSummary {
            accuracy: v,
            macro_recall: v,
            macro_precision: v,
            macro_f1: v,
        }
    }

    fn fake_report(model: &str, base: f64) -> EvalReport {
        let folds: Vec<FoldRecord> = (0..FOLDS)
            .map(|fold| FoldRecord {
                fold,
                runs: vec![RunRecord {
                    run: 0,
                    rng_stream: fold as u64,
                    summary: summary(base + fold as f64 * 0.01),
                    confusion: vec![vec![8, 2], vec![3, 7]],
                    epochs: vec![EpochStats {
                        epoch: 0,
                        train_loss: 1.0,
                        val_loss: 1.1,
                        val_accuracy: 0.5,
                    }],
                }],
                mean: summary(base + fold as f64 * 0.01),
            })
            .collect();
        EvalReport {
            model: model.into(),
            classes: vec!["a".into(), "b".into()],
            config: ExperimentConfig {
                model: ModelSpec::defaults(ModelKind::Gcn, 2),
                windowing: WindowingConfig::new(20, 1).unwrap(),
                train: TrainConfig::default(),
                include_normal: false,
                folds: FOLDS,
                workers: 1,
            },
            folds,
            mean: summary(base + 0.02),
        }
    }

    #[test]
    fn markdown_table_has_split_columns_and_average() {
        let table = render_markdown(&[fake_report("gcn", 0.4), fake_report("telesto", 0.8)]);
        let header = table.lines().next().unwrap();
        assert!(header.contains("Split 1"));
        assert!(header.contains("Split 5"));
        assert!(header.contains("∅"));
        // 2 models x 4 metrics + header + separator
        assert_eq!(table.lines().count(), 2 + 8);
        assert!(table.contains("| TELESTO | Accuracy |"));
        assert!(table.contains("| GCN | F1-Score |"));
    }

    #[test]
    fn loss_csv_lists_epochs() {
        let report = fake_report("gcn", 0.4);
        let csv = loss_curve_csv(&report.folds[0].runs[0]);
        assert!(csv.starts_with("epoch,train_loss"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn svg_outputs_are_well_formed() {
        let report = fake_report("telesto", 0.8);
        let svg = loss_curve_svg(&report);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        let heat = confusion_heatmap_svg(&report);
        assert!(heat.contains("<rect"));
        assert!(heat.ends_with("</svg>\n"));
    }
}
