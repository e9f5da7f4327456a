//! Synthetic re-creation of a multi-node cloud monitoring scenario: per-group
//! KPI baselines under variable simulated load, five anomaly types injected on
//! a grace-separated schedule, and labeled dataset emission in the pipeline's
//! directory format.

pub mod error;
pub mod generate;
pub mod scenario;
pub mod schedule;

pub use error::{Result, SimError};
pub use generate::{anomaly_signature, emit_dataset, generate, load_profile, GroupData};
pub use scenario::{AnomalyType, GroupSpec, GroupType, KpiKind, ScenarioConfig};
pub use schedule::{build_schedule, InjectionRecord, InjectionSchedule, ScheduleLog};
