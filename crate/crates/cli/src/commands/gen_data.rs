//! `telesto gen-data`: synthesize a labeled multi-group KPI dataset.

use clap::Args;
use std::fs;
use std::path::PathBuf;

use telesto_sim::{emit_dataset, ScenarioConfig};

use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct GenDataArgs {
    /// Scenario config JSON; defaults to the built-in multi-group scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output dataset root (created; its parent must exist).
    #[arg(long)]
    pub out: PathBuf,

    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Overrides the scenario time compression factor.
    #[arg(long)]
    pub time_scale: Option<f64>,
}

pub fn run(args: GenDataArgs) -> CliResult<()> {
    let mut scenario = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<ScenarioConfig>(&text)
                .map_err(|e| CliError::Usage(format!("invalid scenario config: {e}")))?
        }
        None => ScenarioConfig::default(),
    };
    // flags override file values, file overrides defaults
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(scale) = args.time_scale {
        scenario.time_scale = scale;
    }
    scenario
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    match args.out.parent() {
        Some(parent) if parent.as_os_str().is_empty() || parent.exists() => {}
        None => {}
        Some(parent) => {
            return Err(CliError::Usage(format!(
                "output parent directory {} does not exist",
                parent.display()
            )));
        }
    }

    let groups = emit_dataset(&scenario, &args.out)?;
    let mut manifest = RunManifest::new("gen-data", &scenario, vec![scenario.seed]);
    if let Some(config) = &args.config {
        manifest = manifest.input(config);
    }
    for group in &groups {
        manifest = manifest.output(&args.out.join(group));
    }
    manifest = manifest.output(&args.out.join("schedule.json"));
    manifest.write(&args.out)?;
    println!(
        "wrote {} group dataset(s) to {}",
        groups.len(),
        args.out.display()
    );
    Ok(())
}
