//! Leave-one-group-out cross-validation: the five injection instances of each
//! anomaly class rotate through a 3/1/1 train/validation/test assignment
//! across five folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::dataset::LabeledInterval;
use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::series::NORMAL_LABEL;

pub const FOLDS: usize = 5;
pub const INSTANCES_PER_CLASS: usize = 5;

/// Which injection instance (if any) a window graph belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    pub graph_idx: usize,
    pub class: String,
    /// Rank of the owning injection among its class's injections ordered by
    /// start time; `None` for normal windows.
    pub instance: Option<usize>,
}

/// Maps each graph to the injection instance that owns it: among the records
/// of the graph's class, the one overlapping the window the most (earliest on
/// ties). Normal-labeled graphs carry no instance.
pub fn assign_instances(
    graphs: &[LabeledGraph],
    intervals: &[LabeledInterval],
    sample_rate_hz: f64,
) -> Vec<GraphInstance> {
    // per class: records ordered by start time
    let mut by_class: BTreeMap<&str, Vec<&LabeledInterval>> = BTreeMap::new();
    for iv in intervals {
        by_class.entry(iv.class.as_str()).or_default().push(iv);
    }
    for records in by_class.values_mut() {
        records.sort_by(|a, b| a.start.total_cmp(&b.start));
    }

    graphs
        .iter()
        .enumerate()
        .map(|(graph_idx, g)| {
            if g.label == NORMAL_LABEL {
                return GraphInstance {
                    graph_idx,
                    class: g.label.clone(),
                    instance: None,
                };
            }
            let (a, b) = g.window_interval();
            let (w_start, w_end) = ((a - 1) as f64 / sample_rate_hz, (b - 1) as f64 / sample_rate_hz);
            let records = by_class.get(g.label.as_str());
            let instance = records.and_then(|records| {
                let mut best: Option<(usize, f64)> = None;
                for (rank, iv) in records.iter().enumerate() {
                    let overlap = (iv.end.min(w_end) - iv.start.max(w_start)).max(0.0);
                    if overlap > 0.0 && best.map_or(true, |(_, o)| overlap > o) {
                        best = Some((rank, overlap));
                    }
                }
                best.map(|(rank, _)| rank)
            });
            GraphInstance {
                graph_idx,
                class: g.label.clone(),
                instance,
            }
        })
        .collect()
}

/// Graph indices assigned to each role in one fold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// The five-fold rotation.
#[derive(Debug, Clone)]
pub struct LogoSplit {
    pub folds: Vec<FoldAssignment>,
}

/// Role of instance index `i` (0..5) in fold `f` (0..5): test takes `f`,
/// validation `f + 4 mod 5`, training the remaining three.
fn role_of(fold: usize, instance: usize) -> Role {
    if instance == fold {
        Role::Test
    } else if instance == (fold + 4) % FOLDS {
        Role::Val
    } else {
        Role::Train
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Train,
    Val,
    Test,
}

/// Builds the five-fold leave-one-group-out split.
///
/// Every class in `anomaly_classes` must have at least five injection
/// instances; the five earliest are rotated 3/1/1 and any extra instances are
/// left out. When `include_normal` is set, normal windows are shuffled with
/// `seed` and distributed proportionally through the same 3/1/1 rotation.
pub fn logo_split(
    instances: &[GraphInstance],
    anomaly_classes: &[String],
    include_normal: bool,
    seed: u64,
) -> Result<LogoSplit> {
    for class in anomaly_classes {
        let found = instances
            .iter()
            .filter(|gi| &gi.class == class)
            .filter_map(|gi| gi.instance)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        if found < INSTANCES_PER_CLASS {
            return Err(Error::TooFewInstances {
                class: class.clone(),
                needed: INSTANCES_PER_CLASS,
                found,
            });
        }
    }

    let mut folds = vec![FoldAssignment::default(); FOLDS];
    for gi in instances {
        if gi.class == NORMAL_LABEL {
            continue;
        }
        if !anomaly_classes.contains(&gi.class) {
            continue;
        }
        let Some(instance) = gi.instance else { continue };
        if instance >= INSTANCES_PER_CLASS {
            continue; // beyond the rotated five
        }
        for (f, fold) in folds.iter_mut().enumerate() {
            match role_of(f, instance) {
                Role::Train => fold.train.push(gi.graph_idx),
                Role::Val => fold.val.push(gi.graph_idx),
                Role::Test => fold.test.push(gi.graph_idx),
            }
        }
    }

    if include_normal {
        let mut normal: Vec<usize> = instances
            .iter()
            .filter(|gi| gi.class == NORMAL_LABEL)
            .map(|gi| gi.graph_idx)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normal.shuffle(&mut rng);
        // five near-equal chunks rotated with the same 3/1/1 pattern
        let chunk_len = normal.len().div_ceil(FOLDS);
        for (chunk_idx, chunk) in normal.chunks(chunk_len.max(1)).enumerate() {
            for (f, fold) in folds.iter_mut().enumerate() {
                let bucket = match role_of(f, chunk_idx) {
                    Role::Train => &mut fold.train,
                    Role::Val => &mut fold.val,
                    Role::Test => &mut fold.test,
                };
                bucket.extend_from_slice(chunk);
            }
        }
    }

    Ok(LogoSplit { folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::full_adjacency;
    use ndarray::Array2;

    fn instance(graph_idx: usize, class: &str, inst: Option<usize>) -> GraphInstance {
        GraphInstance {
            graph_idx,
            class: class.to_string(),
            instance: inst,
        }
    }

    fn five_by_five() -> (Vec<GraphInstance>, Vec<String>) {
        let classes: Vec<String> = ["ADU", "AMA", "CPU", "MEL", "NOL"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut instances = Vec::new();
        let mut idx = 0;
        for class in &classes {
            for inst in 0..5 {
                instances.push(instance(idx, class, Some(inst)));
                idx += 1;
            }
        }
        (instances, classes)
    }

    #[test]
    fn each_instance_tests_in_exactly_one_fold() {
        let (instances, classes) = five_by_five();
        let split = logo_split(&instances, &classes, false, 0).unwrap();
        assert_eq!(split.folds.len(), 5);
        for gi in &instances {
            let test_folds = split
                .folds
                .iter()
                .filter(|f| f.test.contains(&gi.graph_idx))
                .count();
            assert_eq!(test_folds, 1, "graph {}", gi.graph_idx);
        }
    }

    #[test]
    fn roles_are_disjoint_within_every_fold() {
        let (instances, classes) = five_by_five();
        let split = logo_split(&instances, &classes, false, 0).unwrap();
        for fold in &split.folds {
            for idx in &fold.train {
                assert!(!fold.val.contains(idx));
                assert!(!fold.test.contains(idx));
            }
            for idx in &fold.val {
                assert!(!fold.test.contains(idx));
            }
        }
    }

    #[test]
    fn first_fold_trains_on_fifteen_instances() {
        // enumeration of the rotation: 5 classes x 3 training instances
        let (instances, classes) = five_by_five();
        let split = logo_split(&instances, &classes, false, 0).unwrap();
        assert_eq!(split.folds[0].train.len(), 15);
        assert_eq!(split.folds[0].val.len(), 5);
        assert_eq!(split.folds[0].test.len(), 5);
    }

    #[test]
    fn too_few_instances_is_an_error() {
        let mut instances = Vec::new();
        for inst in 0..4 {
            instances.push(instance(inst, "CPU", Some(inst)));
        }
        let r = logo_split(&instances, &["CPU".to_string()], false, 0);
        assert!(matches!(r, Err(Error::TooFewInstances { .. })));
    }

    #[test]
    fn normal_windows_distribute_proportionally() {
        let (mut instances, classes) = five_by_five();
        let base = instances.len();
        for k in 0..50 {
            instances.push(instance(base + k, NORMAL_LABEL, None));
        }
        let split = logo_split(&instances, &classes, true, 7).unwrap();
        for fold in &split.folds {
            let count = |v: &[usize]| v.iter().filter(|&&i| i >= base).count();
            let (tr, va, te) = (count(&fold.train), count(&fold.val), count(&fold.test));
            assert_eq!(tr + va + te, 50);
            assert_eq!(tr, 30);
            assert_eq!(va, 10);
            assert_eq!(te, 10);
        }
        // excluded entirely when the flag is off
        let split = logo_split(&instances, &classes, false, 7).unwrap();
        for fold in &split.folds {
            assert!(fold.train.iter().all(|&i| i < base));
            assert!(fold.test.iter().all(|&i| i < base));
        }
    }

    #[test]
    fn instances_assigned_by_majority_overlap() {
        // two CPU injections: [1, 2] s and [5, 6] s at 2 Hz; a window over
        // samples 3..=12 spans 1.0..5.5 s and overlaps the first more
        let intervals = vec![
            LabeledInterval { start: 1.0, end: 2.0, class: "CPU".into() },
            LabeledInterval { start: 5.0, end: 6.0, class: "CPU".into() },
        ];
        let graph = LabeledGraph {
            node_raw_windows: Array2::zeros((2, 10)),
            adjacency: full_adjacency(2).unwrap(),
            label: "CPU".into(),
            window_end_t: 12,
        };
        let out = assign_instances(&[graph], &intervals, 2.0);
        assert_eq!(out[0].instance, Some(0));

        let later = LabeledGraph {
            node_raw_windows: Array2::zeros((2, 10)),
            adjacency: full_adjacency(2).unwrap(),
            label: "CPU".into(),
            window_end_t: 14, // samples 5..=14: 2.0..6.5 s, second wins
        };
        let out = assign_instances(&[later], &intervals, 2.0);
        assert_eq!(out[0].instance, Some(1));
    }
}
