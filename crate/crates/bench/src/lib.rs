//! Workloads shared by the benchmarks.

use pantrack_core::scenario::{self, ScenarioSpec, TrackSpec};
use pantrack_core::{ClassMap, ScanLabels, SequenceLabels};

/// Points per scan of a 32-beam spinning LiDAR sweep.
pub const SCAN_POINTS: usize = 35_000;

pub fn dense_scans(count: usize, points: usize, map: &ClassMap) -> Vec<(ScanLabels, ScanLabels)> {
    (0..count as u64)
        .map(|seed| scenario::dense_scan_pair(seed, points, map))
        .collect()
}

/// `sequences` tracking scenarios of `frames` frames with `tracks` staggered
/// tracks each, every third frame carrying a wrong id.
pub fn tracking_split(
    sequences: usize,
    frames: usize,
    tracks: u32,
) -> (Vec<(SequenceLabels, SequenceLabels)>, ClassMap) {
    let specs: Vec<ScenarioSpec> = (0..sequences)
        .map(|s| {
            let tracks = (1..=tracks)
                .map(|t| {
                    let first = 1 + (t as usize % 3).min(frames - 1);
                    let mut spec = TrackSpec::constant(t, t % 4, first, frames, t);
                    spec.points_per_frame = 50;
                    for (k, a) in spec.plan.iter_mut().enumerate() {
                        if k % 3 == 2 {
                            *a = scenario::PredAction::Id(t + 100);
                        }
                    }
                    spec
                })
                .collect();
            let mut spec = ScenarioSpec::new(frames, tracks).with_seed(s as u64);
            spec.sequence_id = format!("seq-{s:04}");
            spec
        })
        .collect();
    let (pairs, map) = scenario::generate_all(&specs).expect("valid scenarios");
    (pairs.into_iter().map(|p| (p.gt, p.pred)).collect(), map)
}
