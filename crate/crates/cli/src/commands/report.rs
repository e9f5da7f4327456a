//! `telesto report`: merge experiment reports into one comparison table,
//! optionally with loss-curve and confusion-matrix plots.

use clap::Args;
use std::fs;
use std::path::PathBuf;

use telesto_core::report::{confusion_heatmap_svg, loss_curve_svg, render_markdown};
use telesto_core::train::EvalReport;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct ReportArgs {
    /// One or more report.json files produced by `telesto train`.
    #[arg(long, required = true, num_args = 1..)]
    pub reports: Vec<PathBuf>,

    /// Directory for the rendered table (and plots with --plots).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also write loss-curve and confusion-matrix SVGs.
    #[arg(long, default_value_t = false)]
    pub plots: bool,
}

pub fn run(args: ReportArgs) -> CliResult<()> {
    let mut reports = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{} is not a report: {e}", path.display())))?;
        reports.push(report);
    }
    let table = render_markdown(&reports);
    print!("{table}");

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("comparison.md"), &table)?;
        if args.plots {
            for report in &reports {
                fs::write(
                    out.join(format!("loss_{}.svg", report.model)),
                    loss_curve_svg(report),
                )?;
                fs::write(
                    out.join(format!("confusion_{}.svg", report.model)),
                    confusion_heatmap_svg(report),
                )?;
            }
        }
    }
    Ok(())
}
