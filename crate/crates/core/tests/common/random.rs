//! Seeded random sequences shared by the oracle comparisons.

use pantrack_core::{ClassMap, ScanLabels, SequenceLabels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{Frame, Layout};

pub const IGNORE: u32 = 255;

pub fn layout() -> Layout {
    Layout {
        things: vec![true, true, false, false],
    }
}

pub fn class_map() -> ClassMap {
    ClassMap::identity(&[
        ("car", true),
        ("person", true),
        ("road", false),
        ("building", false),
    ])
}

/// One random sequence: at most `max_frames` frames of at most `max_points`
/// points and at most `max_tracks` ground-truth tracks, each with a fixed
/// class. Predictions follow the ground truth with per-frame id remapping
/// and per-point noise.
pub fn sequence(
    rng: &mut ChaCha8Rng,
    max_frames: usize,
    max_points: usize,
    max_tracks: u32,
) -> Vec<Frame> {
    let frames = rng.gen_range(1..=max_frames);
    let tracks = rng.gen_range(0..=max_tracks);
    let track_class: Vec<u32> = (0..tracks).map(|_| rng.gen_range(0..2)).collect();
    let noise = rng.gen_range(0.0..0.5);
    (0..frames)
        .map(|_| {
            let n = rng.gen_range(1..=max_points);
            let present: Vec<u32> = (1..=tracks).filter(|_| rng.gen_bool(0.75)).collect();
            let remap: Vec<u32> = (0..=tracks + 2)
                .map(|id| {
                    if id == 0 {
                        0
                    } else if rng.gen_bool(0.7) {
                        id
                    } else {
                        rng.gen_range(0..=tracks + 2)
                    }
                })
                .collect();
            let mut f = Frame {
                gs: Vec::with_capacity(n),
                gi: Vec::with_capacity(n),
                ps: Vec::with_capacity(n),
                pi: Vec::with_capacity(n),
            };
            for _ in 0..n {
                let r: f64 = rng.gen();
                let (g_class, g_inst) = if r < 0.06 {
                    (IGNORE, 0)
                } else if !present.is_empty() && r < 0.7 {
                    let t = present[rng.gen_range(0..present.len())];
                    // occasionally a thing point without an instance
                    let inst = if rng.gen_bool(0.05) { 0 } else { t };
                    (track_class[t as usize - 1], inst)
                } else {
                    (rng.gen_range(2..4), 0)
                };
                let (p_class, p_inst) = if rng.gen_bool(noise) {
                    let c = match rng.gen_range(0..10) {
                        0 => IGNORE,
                        k => k % 4,
                    };
                    let i = if c < 2 {
                        rng.gen_range(0..=tracks + 2)
                    } else {
                        0
                    };
                    (c, i)
                } else if g_class == IGNORE {
                    (rng.gen_range(0..4), 0)
                } else {
                    (g_class, remap[g_inst as usize])
                };
                f.gs.push(g_class);
                f.gi.push(g_inst);
                f.ps.push(p_class);
                f.pi.push(if p_class < 2 { p_inst } else { 0 });
            }
            f
        })
        .collect()
}

pub fn to_labels(id: &str, frames: &[Frame]) -> (SequenceLabels, SequenceLabels) {
    let mut gt = SequenceLabels::new(id);
    let mut pred = SequenceLabels::new(id);
    for (k, f) in frames.iter().enumerate() {
        gt.push(
            format!("{id}_{k}"),
            ScanLabels::new(f.gs.clone(), f.gi.clone()).unwrap(),
        );
        pred.push(
            format!("{id}_{k}"),
            ScanLabels::new(f.ps.clone(), f.pi.clone()).unwrap(),
        );
    }
    (gt, pred)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
