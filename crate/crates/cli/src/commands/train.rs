//! `telesto train`: leave-one-group-out training of one model kind on one
//! node dataset, with checkpoints, reports and loss curves.

use clap::Args;
use std::fs;
use std::path::PathBuf;

use telesto_core::checkpoint::save_checkpoint;
use telesto_core::classifier::ModelKind;
use telesto_core::dataset::read_node_dir;
use telesto_core::graph::WindowingConfig;
use telesto_core::report::loss_curve_csv;
use telesto_core::split::FOLDS;
use telesto_core::train::{
    class_list, run_experiment, ExperimentConfig, ModelSpec, TrainConfig,
};

use crate::manifest::RunManifest;
use crate::{data_dir_env, CliError, CliResult};

#[derive(Args)]
pub struct TrainArgs {
    /// Node dataset directory (defaults to $TELESTO_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Model kind: telesto, gcn or gin.
    #[arg(long, default_value = "telesto")]
    pub model: String,

    /// Output directory for checkpoints and reports.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Parallel workers over (fold, run) units.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,

    /// Rotation folds to execute (1..=5).
    #[arg(long, default_value_t = FOLDS)]
    pub folds: usize,

    /// Independent training runs per fold (averaged).
    #[arg(long, default_value_t = 10)]
    pub runs: usize,

    #[arg(long, default_value_t = 15)]
    pub epochs: usize,

    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,

    /// Adds `normal` as an extra class and uses normal-period windows.
    #[arg(long, default_value_t = false)]
    pub include_normal: bool,

    /// Sliding window length in samples.
    #[arg(long, default_value_t = 20)]
    pub window: usize,

    #[arg(long, default_value_t = 1)]
    pub stride: usize,

    /// Hidden width override (reduced-width CPU runs).
    #[arg(long)]
    pub hidden: Option<usize>,

    /// Encoder conv filter count override (TELESTO only).
    #[arg(long)]
    pub conv_filters: Option<usize>,
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let data_dir = args
        .data
        .clone()
        .or_else(data_dir_env)
        .ok_or_else(|| {
            CliError::Usage("no dataset given: pass --data or set TELESTO_DATA_DIR".into())
        })?;
    let kind: ModelKind = args
        .model
        .parse()
        .map_err(|e: telesto_core::Error| CliError::Usage(e.to_string()))?;

    if !data_dir.join("series.csv").exists() {
        let hint = fs::read_dir(&data_dir)
            .ok()
            .map(|entries| {
                entries
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().join("series.csv").exists())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();
        let mut msg = format!("{} is not a node dataset (no series.csv)", data_dir.display());
        if !hint.is_empty() {
            msg += &format!("; node directories found: {}", hint.join(", "));
        }
        return Err(CliError::Data(msg));
    }
    let dataset = read_node_dir(&data_dir)?;

    let classes = class_list(&dataset, args.include_normal);
    let mut model_spec = ModelSpec::defaults(kind, classes.len());
    if let Some(hidden) = args.hidden {
        match &mut model_spec {
            ModelSpec::Telesto { config } => config.hidden_dim = hidden,
            ModelSpec::Gcn { config } | ModelSpec::Gin { config } => config.hidden_dim = hidden,
        }
    }
    if let Some(filters) = args.conv_filters {
        if let ModelSpec::Telesto { config } = &mut model_spec {
            config.conv_filters = filters;
        }
    }

    let windowing = WindowingConfig::new(args.window, args.stride)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = ExperimentConfig {
        model: model_spec,
        windowing,
        train: TrainConfig {
            epochs: args.epochs,
            batch_size: args.batch_size,
            runs: args.runs,
            seed: args.seed,
            ..TrainConfig::default()
        },
        include_normal: args.include_normal,
        folds: args.folds,
        workers: args.workers.max(1),
    };

    fs::create_dir_all(&args.out)?;
    let outcome = run_experiment(&dataset, &cfg)?;

    for fm in &outcome.fold_models {
        let dir = args.out.join("checkpoints").join(format!("fold{}", fm.fold));
        save_checkpoint(&dir, fm.model.as_ref(), &outcome.report.classes, Some(&fm.bounds))?;
    }
    let loss_dir = args.out.join("loss");
    fs::create_dir_all(&loss_dir)?;
    for fold in &outcome.report.folds {
        for run in &fold.runs {
            fs::write(
                loss_dir.join(format!("fold{}_run{}.csv", fold.fold, run.run)),
                loss_curve_csv(run),
            )?;
        }
    }
    fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&outcome.report)? + "\n",
    )?;
    fs::write(
        args.out.join("report.md"),
        telesto_core::report::render_markdown(&[outcome.report.clone()]),
    )?;
    RunManifest::new("train", &cfg, vec![args.seed])
        .input(&data_dir)
        .output(&args.out.join("report.json"))
        .output(&args.out.join("checkpoints"))
        .write(&args.out)?;

    println!(
        "{}: mean accuracy {:.3}, macro F1 {:.3} over {} fold(s) x {} run(s)",
        outcome.report.model,
        outcome.report.mean.accuracy,
        outcome.report.mean.macro_f1,
        cfg.folds,
        cfg.train.runs,
    );
    Ok(())
}
