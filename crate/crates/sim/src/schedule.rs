//! Group-based injection scheduling: after the normal lead time each
//! (anomaly, group) pair receives its injections in a seeded shuffle order,
//! separated by the grace time, so injections never overlap within a group.

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scenario::{AnomalyType, ScenarioConfig};

/// Timeline origin used for the ISO-8601 ground-truth log.
pub const SCHEDULE_ORIGIN: &str = "2026-01-01T00:00:00Z";

/// One injection: type, target group and the (already compressed) start/stop
/// offsets in seconds from the scenario origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub anomaly: AnomalyType,
    pub group: String,
    pub start_secs: f64,
    pub stop_secs: f64,
}

impl InjectionRecord {
    pub fn duration_secs(&self) -> f64 {
        self.stop_secs - self.start_secs
    }
}

/// Ordered, per-group non-overlapping injection records; the experiment's
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSchedule {
    pub records: Vec<InjectionRecord>,
}

impl InjectionSchedule {
    pub fn for_group<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a InjectionRecord> {
        self.records.iter().filter(move |r| r.group == group)
    }

    /// End of the last injection in a group (0 when the group has none).
    pub fn group_end_secs(&self, group: &str) -> f64 {
        self.for_group(group)
            .map(|r| r.stop_secs)
            .fold(0.0, f64::max)
    }
}

/// Builds the schedule: deterministic for a given scenario seed.
pub fn build_schedule(cfg: &ScenarioConfig) -> Result<InjectionSchedule> {
    cfg.validate()?;
    let scale = cfg.time_scale;
    let mut records = Vec::new();
    for (group_idx, group) in cfg.groups.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream((group_idx as u64) << 8);
        // shuffled (anomaly, instance) order so instances are not clustered
        let mut slots: Vec<AnomalyType> = AnomalyType::ALL
            .iter()
            .flat_map(|&a| std::iter::repeat(a).take(cfg.injections_per_anomaly))
            .collect();
        slots.shuffle(&mut rng);
        let mut t = cfg.normal_lead_secs / scale;
        for anomaly in slots {
            let duration = rng.gen_range(cfg.injection_min_secs..=cfg.injection_max_secs) / scale;
            records.push(InjectionRecord {
                anomaly,
                group: group.name.clone(),
                start_secs: t,
                stop_secs: t + duration,
            });
            t += duration + cfg.grace_secs / scale;
        }
    }
    let schedule = InjectionSchedule { records };
    verify_schedule(&schedule, cfg)?;
    Ok(schedule)
}

fn verify_schedule(schedule: &InjectionSchedule, cfg: &ScenarioConfig) -> Result<()> {
    for group in &cfg.groups {
        let mut records: Vec<&InjectionRecord> = schedule.for_group(&group.name).collect();
        records.sort_by(|a, b| a.start_secs.total_cmp(&b.start_secs));
        for pair in records.windows(2) {
            let gap = pair[1].start_secs - pair[0].stop_secs;
            if gap < cfg.grace_secs / cfg.time_scale - 1e-9 {
                return Err(SimError::InfeasibleTimeline(format!(
                    "gap {gap}s below grace in group `{}`",
                    group.name
                )));
            }
        }
        for a in AnomalyType::ALL {
            let count = records.iter().filter(|r| r.anomaly == a).count();
            if count != cfg.injections_per_anomaly {
                return Err(SimError::InfeasibleTimeline(format!(
                    "{count} injections of {} in group `{}`",
                    a.label(),
                    group.name
                )));
            }
        }
    }
    Ok(())
}

/// `schedule.json` payload: ISO-8601 timestamps for ground truth plus the
/// exact second offsets the dataset labels use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleLog {
    pub origin: DateTime<Utc>,
    pub records: Vec<ScheduleLogRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleLogRecord {
    pub anomaly: AnomalyType,
    pub group: String,
    pub start: DateTime<Utc>,
    pub stop: DateTime<Utc>,
    pub start_secs: f64,
    pub stop_secs: f64,
}

impl ScheduleLog {
    pub fn from_schedule(schedule: &InjectionSchedule) -> Self {
        let origin: DateTime<Utc> = SCHEDULE_ORIGIN.parse().expect("valid origin");
        let records = schedule
            .records
            .iter()
            .map(|r| ScheduleLogRecord {
                anomaly: r.anomaly,
                group: r.group.clone(),
                start: origin + Duration::milliseconds((r.start_secs * 1e3).round() as i64),
                stop: origin + Duration::milliseconds((r.stop_secs * 1e3).round() as i64),
                start_secs: r.start_secs,
                stop_secs: r.stop_secs,
            })
            .collect();
        Self { origin, records }
    }

    pub fn to_schedule(&self) -> InjectionSchedule {
        InjectionSchedule {
            records: self
                .records
                .iter()
                .map(|r| InjectionRecord {
                    anomaly: r.anomaly,
                    group: r.group.clone(),
                    start_secs: r.start_secs,
                    stop_secs: r.stop_secs,
                })
                .collect(),
        }
    }
}
