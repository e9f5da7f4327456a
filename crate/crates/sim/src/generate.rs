//! KPI signal synthesis: load-modulated mean-reverting baselines with anomaly
//! signatures overriding the affected KPIs during injections.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use telesto_core::dataset::{write_node_dir, DatasetMeta, LabeledInterval};
use telesto_core::series::MultivariateSeries;

use crate::error::Result;
use crate::scenario::{kpi_set, AnomalyType, GroupSpec, KpiKind, KpiSpec, ScenarioConfig};
use crate::schedule::{build_schedule, InjectionRecord, InjectionSchedule, ScheduleLog};

/// Network-overload signature: ramp to this receive rate over `NOL_RAMP_SECS`.
const NOL_SATURATION_BYTES: f64 = 1.2e6;
const NOL_RAMP_SECS: f64 = 5.0;
/// Constant disk pressure during abnormal disk utilization.
const ADU_READ_OPS: f64 = 420.0;
const ADU_WRITE_OPS: f64 = 380.0;
/// CPU overutilization setpoint in percent.
const CPU_OVERUTIL_PCT: f64 = 90.0;

/// Simulated user-load intensity in [0, 1].
pub fn load_profile(t_secs: f64, period_secs: f64, phase: f64) -> f64 {
    let raw = 0.5 + 0.35 * (std::f64::consts::TAU * t_secs / period_secs + phase).sin();
    raw.clamp(0.0, 1.0)
}

/// Value of the affected KPI at `t_rel` seconds into an injection, or `None`
/// when the anomaly leaves this KPI at its baseline.
///
/// CPU pins utilization at 90%, ADU holds constant disk read/write pressure,
/// MEL adds a `floor(t_rel / y) * x` MB staircase, AMA adds a constant x MB,
/// and NOL ramps the receive rate into saturation.
pub fn anomaly_signature(
    anomaly: AnomalyType,
    mel_params: (f64, f64),
    ama_mb: f64,
    t_rel: f64,
    kind: KpiKind,
    baseline: f64,
) -> Option<f64> {
    match (anomaly, kind) {
        (AnomalyType::Cpu, KpiKind::CpuUtil) => Some(CPU_OVERUTIL_PCT),
        (AnomalyType::Adu, KpiKind::DiskReadOps) => Some(ADU_READ_OPS),
        (AnomalyType::Adu, KpiKind::DiskWriteOps) => Some(ADU_WRITE_OPS),
        (AnomalyType::Mel, KpiKind::MemAllocMb) => {
            let (x, y) = mel_params;
            Some(baseline + (t_rel / y).floor() * x)
        }
        (AnomalyType::Ama, KpiKind::MemAllocMb) => Some(baseline + ama_mb),
        (AnomalyType::Nol, KpiKind::NetRxBytes) => {
            let ramp = (t_rel / NOL_RAMP_SECS).min(1.0);
            Some((baseline + ramp * NOL_SATURATION_BYTES).min(NOL_SATURATION_BYTES * 1.1))
        }
        _ => None,
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller transform
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One group's generated series plus its ground-truth label intervals.
pub struct GroupData {
    pub group: GroupSpec,
    pub series: MultivariateSeries,
    pub intervals: Vec<LabeledInterval>,
    pub meta: DatasetMeta,
}

/// Generates the labeled series of every group under the given schedule.
///
/// Baselines are mean-reverting walks around load-coupled setpoints; during
/// an injection the affected KPIs take the anomaly signature (with the
/// baseline noise kept on top), and every sample inside an injection interval
/// is labeled with the anomaly class.
pub fn generate(cfg: &ScenarioConfig, schedule: &InjectionSchedule) -> Result<Vec<GroupData>> {
    cfg.validate()?;
    let dt = 1.0 / cfg.sample_rate_hz;
    let scale = cfg.time_scale;
    let mut out = Vec::with_capacity(cfg.groups.len());
    for (group_idx, group) in cfg.groups.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(((group_idx as u64) << 8) | 1);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let kpis = kpi_set(group);
        let records: Vec<&InjectionRecord> = schedule.for_group(&group.name).collect();
        // one grace period of normal tail after the last injection
        let total_secs = schedule.group_end_secs(&group.name) + cfg.grace_secs / scale;
        // samples at k * dt for k = 0 .. floor(total / dt), inclusive start
        let samples = (total_secs / dt).floor() as usize + 1;

        let mel = group.group_type.mel_params();
        let ama = group.group_type.ama_mb();
        let mut values = Array2::zeros((kpis.len(), samples));
        let mut state: Vec<f64> = kpis.iter().map(|k| k.base).collect();
        for s in 0..samples {
            let t = s as f64 * dt;
            // load varies on the compressed timeline as well
            let load = load_profile(t * scale, cfg.load_period_secs, phase);
            let active = records
                .iter()
                .find(|r| t >= r.start_secs && t <= r.stop_secs);
            for (i, kpi) in kpis.iter().enumerate() {
                let setpoint = kpi.base + kpi.load_coupling * load;
                let noise = kpi.noise_sigma * dt.sqrt() * gaussian(&mut rng);
                state[i] += kpi.reversion * (setpoint - state[i]) * dt + noise;
                state[i] = state[i].clamp(kpi.clip.0, kpi.clip.1);
                let mut value = state[i];
                if let Some(record) = active {
                    let t_rel = t - record.start_secs;
                    if let Some(over) =
                        anomaly_signature(record.anomaly, mel, ama, t_rel, kpi.kind, state[i])
                    {
                        // signature plus the KPI's own measurement noise
                        value = (over + kpi.noise_sigma * 0.5 * gaussian(&mut rng))
                            .clamp(kpi.clip.0, kpi.clip.1);
                    }
                }
                values[[i, s]] = value;
            }
        }

        let intervals: Vec<LabeledInterval> = records
            .iter()
            .map(|r| LabeledInterval {
                start: r.start_secs,
                end: r.stop_secs,
                class: r.anomaly.label().to_string(),
            })
            .collect();
        let timestamps: Vec<f64> = (0..samples).map(|s| s as f64 * dt).collect();
        let labels = telesto_core::dataset::labels_for_timestamps(&timestamps, &intervals)
            .map_err(crate::error::SimError::Core)?;
        let names: Vec<String> = kpis.iter().map(|k| k.name.clone()).collect();
        let overrides: BTreeMap<String, (f64, f64)> = kpis
            .iter()
            .filter_map(|k| k.bounds_override.map(|b| (k.name.clone(), b)))
            .collect();
        let series = MultivariateSeries::new(values, names.clone(), cfg.sample_rate_hz, labels)
            .map_err(crate::error::SimError::Core)?;
        out.push(GroupData {
            group: group.clone(),
            series,
            intervals,
            meta: DatasetMeta {
                sample_rate_hz: cfg.sample_rate_hz,
                series_names: names,
                bounds_overrides: overrides,
            },
        });
    }
    Ok(out)
}

/// Builds the schedule, generates every group and writes the dataset tree:
/// one directory per group plus `schedule.json`. Returns the group names.
pub fn emit_dataset(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Vec<String>> {
    let schedule = build_schedule(cfg)?;
    let groups = generate(cfg, &schedule)?;
    fs::create_dir_all(out_dir)?;
    for data in &groups {
        write_node_dir(
            &out_dir.join(&data.group.name),
            &data.series,
            &data.intervals,
            &data.meta,
        )
        .map_err(crate::error::SimError::Core)?;
    }
    let log = ScheduleLog::from_schedule(&schedule);
    fs::write(
        out_dir.join("schedule.json"),
        serde_json::to_string_pretty(&log)? + "\n",
    )?;
    Ok(groups.iter().map(|g| g.group.name.clone()).collect())
}

/// Per-KPI spec lookup by kind, for tests.
pub fn kpi_by_kind<'a>(kpis: &'a [KpiSpec], kind: KpiKind) -> Option<&'a KpiSpec> {
    kpis.iter().find(|k| k.kind == kind)
}
