//! Scenario configuration: node groups, their KPI sets and the injection
//! timing policy.
//!
//! Times are given at real scale (seconds) and divided by `time_scale` when
//! the timeline is generated, so a 60x scale compresses the six-hour lead to
//! six minutes and each four-to-five-minute injection to 4-5 seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// The five injected anomaly types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnomalyType {
    /// CPU overutilization: pin CPU usage to 90% of capacity.
    #[serde(rename = "CPU")]
    Cpu,
    /// Abnormal disk utilization: constant read and write operations.
    #[serde(rename = "ADU")]
    Adu,
    /// Memory leak: allocate x MB every y seconds.
    #[serde(rename = "MEL")]
    Mel,
    /// Abnormal memory allocation: a one-off x MB allocation.
    #[serde(rename = "AMA")]
    Ama,
    /// Network overload: download large files until saturation.
    #[serde(rename = "NOL")]
    Nol,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 5] = [
        AnomalyType::Cpu,
        AnomalyType::Adu,
        AnomalyType::Mel,
        AnomalyType::Ama,
        AnomalyType::Nol,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AnomalyType::Cpu => "CPU",
            AnomalyType::Adu => "ADU",
            AnomalyType::Mel => "MEL",
            AnomalyType::Ama => "AMA",
            AnomalyType::Nol => "NOL",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|a| a.label() == label)
            .copied()
            .ok_or_else(|| SimError::UnknownAnomaly(label.to_string()))
    }
}

/// Node-group flavor; controls the memory anomaly parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupType {
    VimsVm,
    CsVm,
    Hypervisor,
}

impl GroupType {
    /// Memory-leak ramp: x MB every y seconds.
    pub fn mel_params(&self) -> (f64, f64) {
        match self {
            GroupType::VimsVm | GroupType::CsVm => (1.0, 3.0),
            GroupType::Hypervisor => (2.0, 3.0),
        }
    }

    /// One-off allocation size in MB.
    pub fn ama_mb(&self) -> f64 {
        match self {
            GroupType::VimsVm => 450.0,
            GroupType::CsVm => 900.0,
            GroupType::Hypervisor => 2000.0,
        }
    }
}

/// One monitored node group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub group_type: GroupType,
    /// Number of KPI dimensions (at least 6: the canonical resource metrics).
    pub kpi_count: usize,
}

/// Full scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub groups: Vec<GroupSpec>,
    pub sample_rate_hz: f64,
    /// Anomaly-free warmup before the first injection, in real seconds.
    pub normal_lead_secs: f64,
    pub injections_per_anomaly: usize,
    pub injection_min_secs: f64,
    pub injection_max_secs: f64,
    pub grace_secs: f64,
    /// Compression factor applied to all schedule durations.
    pub time_scale: f64,
    /// Period of the sinusoidal user-load profile, in real seconds.
    pub load_period_secs: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            groups: vec![
                GroupSpec {
                    name: "cassandra".into(),
                    group_type: GroupType::VimsVm,
                    kpi_count: 12,
                },
                GroupSpec {
                    name: "bono".into(),
                    group_type: GroupType::VimsVm,
                    kpi_count: 8,
                },
                GroupSpec {
                    name: "backend".into(),
                    group_type: GroupType::CsVm,
                    kpi_count: 16,
                },
                GroupSpec {
                    name: "hypervisor".into(),
                    group_type: GroupType::Hypervisor,
                    kpi_count: 20,
                },
            ],
            sample_rate_hz: 2.0,
            normal_lead_secs: 21_600.0,
            injections_per_anomaly: 5,
            injection_min_secs: 240.0,
            injection_max_secs: 300.0,
            grace_secs: 60.0,
            time_scale: 60.0,
            load_period_secs: 3_600.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Single-group scenario at 10x compression, used by the separability
    /// benchmark.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            groups: vec![GroupSpec {
                name: "cassandra".into(),
                group_type: GroupType::VimsVm,
                kpi_count: 12,
            }],
            time_scale: 10.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(SimError::InvalidScenario("no groups configured".into()));
        }
        for g in &self.groups {
            if g.kpi_count < 6 {
                return Err(SimError::InvalidScenario(format!(
                    "group `{}` needs at least the 6 canonical KPIs, got {}",
                    g.name, g.kpi_count
                )));
            }
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(SimError::InvalidScenario("sample_rate_hz must be positive".into()));
        }
        if !(self.time_scale > 0.0) {
            return Err(SimError::InvalidScenario("time_scale must be positive".into()));
        }
        if self.injections_per_anomaly == 0 {
            return Err(SimError::InvalidScenario(
                "injections_per_anomaly must be positive".into(),
            ));
        }
        if self.injection_min_secs > self.injection_max_secs
            || self.injection_min_secs <= 0.0
            || self.grace_secs <= 0.0
            || self.normal_lead_secs < 0.0
        {
            return Err(SimError::InfeasibleTimeline(format!(
                "durations must be positive with min <= max (min {}, max {}, grace {}, lead {})",
                self.injection_min_secs,
                self.injection_max_secs,
                self.grace_secs,
                self.normal_lead_secs
            )));
        }
        // at the chosen compression every injection must still cover samples
        if self.injection_min_secs / self.time_scale < 1.0 / self.sample_rate_hz {
            return Err(SimError::InfeasibleTimeline(format!(
                "time_scale {} compresses injections below one sample period",
                self.time_scale
            )));
        }
        Ok(())
    }
}

/// The canonical KPI roles; generic application metrics fill the remaining
/// dimensions of a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpiKind {
    CpuUtil,
    MemAllocMb,
    DiskReadOps,
    DiskWriteOps,
    NetRxBytes,
    NetTxBytes,
    AppMetric,
}

/// Baseline process parameters of one KPI: an Ornstein-Uhlenbeck reversion
/// towards a load-coupled setpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiSpec {
    pub name: String,
    pub kind: KpiKind,
    pub base: f64,
    pub load_coupling: f64,
    pub noise_sigma: f64,
    pub reversion: f64,
    pub clip: (f64, f64),
    /// Known-limit normalization override emitted into `meta.json`.
    pub bounds_override: Option<(f64, f64)>,
}

/// The KPI set of a group: six canonical resource metrics plus generic
/// application metrics up to `kpi_count`.
pub fn kpi_set(group: &GroupSpec) -> Vec<KpiSpec> {
    let mut kpis = vec![
        KpiSpec {
            name: "cpu_util".into(),
            kind: KpiKind::CpuUtil,
            base: 15.0,
            load_coupling: 45.0,
            noise_sigma: 2.0,
            reversion: 0.5,
            clip: (0.0, 100.0),
            bounds_override: Some((0.0, 100.0)),
        },
        // allocated memory barely tracks request load; a memory-leak ramp at
        // high time compression must still clear the baseline noise
        KpiSpec {
            name: "mem_alloc_mb".into(),
            kind: KpiKind::MemAllocMb,
            base: 2048.0,
            load_coupling: 2.0,
            noise_sigma: 0.4,
            reversion: 0.4,
            clip: (0.0, 16_384.0),
            bounds_override: None,
        },
        KpiSpec {
            name: "disk_read_ops".into(),
            kind: KpiKind::DiskReadOps,
            base: 40.0,
            load_coupling: 120.0,
            noise_sigma: 8.0,
            reversion: 0.6,
            clip: (0.0, 10_000.0),
            bounds_override: None,
        },
        KpiSpec {
            name: "disk_write_ops".into(),
            kind: KpiKind::DiskWriteOps,
            base: 30.0,
            load_coupling: 100.0,
            noise_sigma: 8.0,
            reversion: 0.6,
            clip: (0.0, 10_000.0),
            bounds_override: None,
        },
        KpiSpec {
            name: "net_rx_bytes".into(),
            kind: KpiKind::NetRxBytes,
            base: 1.0e5,
            load_coupling: 4.0e5,
            noise_sigma: 2.0e4,
            reversion: 0.7,
            clip: (0.0, 2.0e6),
            bounds_override: None,
        },
        KpiSpec {
            name: "net_tx_bytes".into(),
            kind: KpiKind::NetTxBytes,
            base: 8.0e4,
            load_coupling: 3.0e5,
            noise_sigma: 1.5e4,
            reversion: 0.7,
            clip: (0.0, 2.0e6),
            bounds_override: None,
        },
    ];
    for k in kpis.len()..group.kpi_count {
        kpis.push(KpiSpec {
            name: format!("app_metric_{}", k - 5),
            kind: KpiKind::AppMetric,
            base: 40.0 + 12.0 * (k - 5) as f64,
            load_coupling: 30.0,
            noise_sigma: 5.0,
            reversion: 0.5,
            clip: (0.0, 1.0e4),
            bounds_override: None,
        });
    }
    kpis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid() {
        ScenarioConfig::default().validate().unwrap();
        ScenarioConfig::benchmark(0).validate().unwrap();
    }

    #[test]
    fn kpi_counts_match_group_spec() {
        for count in [6, 12, 20] {
            let group = GroupSpec {
                name: "g".into(),
                group_type: GroupType::VimsVm,
                kpi_count: count,
            };
            assert_eq!(kpi_set(&group).len(), count);
        }
    }

    #[test]
    fn memory_anomaly_parameters_follow_group_type() {
        assert_eq!(GroupType::VimsVm.mel_params(), (1.0, 3.0));
        assert_eq!(GroupType::Hypervisor.mel_params(), (2.0, 3.0));
        assert_eq!(GroupType::VimsVm.ama_mb(), 450.0);
        assert_eq!(GroupType::CsVm.ama_mb(), 900.0);
        assert_eq!(GroupType::Hypervisor.ama_mb(), 2000.0);
    }

    #[test]
    fn excessive_compression_is_infeasible() {
        let cfg = ScenarioConfig {
            time_scale: 1000.0,
            ..ScenarioConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(SimError::InfeasibleTimeline(_))
        ));
    }

    #[test]
    fn anomaly_labels_round_trip_and_reject_unknown() {
        for a in AnomalyType::ALL {
            assert_eq!(AnomalyType::from_label(a.label()).unwrap(), a);
        }
        assert!(AnomalyType::from_label("DISK_FIRE").is_err());
    }
}
