//! Seeded synthetic ground-truth/prediction sequence pairs.
//!
//! Every instance is a block of points with exact ground-truth masks; the
//! prediction reuses those masks and only changes ids according to a per-frame
//! plan. This isolates the tracking metrics from segmentation errors.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::labels::{ClassMap, ClassMapEntry, ScanLabels, SequenceLabels, MAX_INSTANCE_ID};
use crate::manifest::{Manifest, ManifestScan, ManifestSequence};

pub const DEFAULT_BLOCK_POINTS: usize = 20;

/// What the prediction does with one ground-truth instance in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawAction", into = "RawAction")]
pub enum PredAction {
    /// Exact mask with this predicted instance id.
    Id(u32),
    /// Correct class, no instance id: the instance is missed.
    Drop,
    /// Points predicted as ignore.
    Void,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawAction {
    Id(u32),
    Marker(Marker),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Marker {
    Drop,
    Void,
}

impl From<RawAction> for PredAction {
    fn from(raw: RawAction) -> Self {
        match raw {
            RawAction::Id(id) => PredAction::Id(id),
            RawAction::Marker(Marker::Drop) => PredAction::Drop,
            RawAction::Marker(Marker::Void) => PredAction::Void,
        }
    }
}

impl From<PredAction> for RawAction {
    fn from(a: PredAction) -> Self {
        match a {
            PredAction::Id(id) => RawAction::Id(id),
            PredAction::Drop => RawAction::Marker(Marker::Drop),
            PredAction::Void => RawAction::Marker(Marker::Void),
        }
    }
}

fn default_points() -> usize {
    DEFAULT_BLOCK_POINTS
}

fn default_sequence_id() -> String {
    "scenario".to_string()
}

/// One ground-truth track and its prediction plan. Frames are 1-based and
/// `plan[k]` applies to frame `first_frame + k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub track_id: u32,
    pub class_id: u32,
    pub first_frame: usize,
    pub last_frame: usize,
    #[serde(default = "default_points")]
    pub points_per_frame: usize,
    pub plan: Vec<PredAction>,
}

impl TrackSpec {
    /// Track present in `first..=last` predicted with one constant id.
    pub fn constant(track_id: u32, class_id: u32, first: usize, last: usize, pred_id: u32) -> Self {
        Self {
            track_id,
            class_id,
            first_frame: first,
            last_frame: last,
            points_per_frame: DEFAULT_BLOCK_POINTS,
            plan: vec![PredAction::Id(pred_id); (last + 1).saturating_sub(first)],
        }
    }

    pub fn presence(&self) -> RangeInclusive<usize> {
        self.first_frame..=self.last_frame
    }

    pub fn action(&self, frame: usize) -> Option<PredAction> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|k| self.plan.get(k))
            .copied()
            .filter(|_| frame <= self.last_frame)
    }

    fn check_frame(&self, frame: usize) -> Result<()> {
        if self.presence().contains(&frame) {
            Ok(())
        } else {
            Err(Error::OutOfRangeFrame {
                track: self.track_id,
                frame,
                first: self.first_frame,
                last: self.last_frame,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_sequence_id")]
    pub sequence_id: String,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    /// Size of the per-frame stuff background block; 0 omits it.
    #[serde(default = "default_points")]
    pub background_points: usize,
    pub tracks: Vec<TrackSpec>,
}

/// A spec document holds one scenario or a list of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioFile {
    Many { scenarios: Vec<ScenarioSpec> },
    One(ScenarioSpec),
}

impl ScenarioFile {
    pub fn into_specs(self) -> Vec<ScenarioSpec> {
        match self {
            ScenarioFile::Many { scenarios } => scenarios,
            ScenarioFile::One(s) => vec![s],
        }
    }
}

/// Generated ground truth and prediction of one scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencePair {
    pub gt: SequenceLabels,
    pub pred: SequenceLabels,
}

impl ScenarioSpec {
    pub fn new(frames: usize, tracks: Vec<TrackSpec>) -> Self {
        Self {
            sequence_id: default_sequence_id(),
            frames,
            seed: 0,
            background_points: DEFAULT_BLOCK_POINTS,
            tracks,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn without_background(mut self) -> Self {
        self.background_points = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPlan(msg));
        if self.frames == 0 {
            return bad("a scenario needs at least one frame".into());
        }
        let mut ids = BTreeSet::new();
        for t in &self.tracks {
            if t.track_id == 0 || t.track_id > MAX_INSTANCE_ID {
                return bad(format!("track id {} outside 1..=999", t.track_id));
            }
            if !ids.insert(t.track_id) {
                return bad(format!("track id {} used twice", t.track_id));
            }
            if t.class_id >= THING_CLASS_LIMIT {
                return bad(format!(
                    "class id {} of track {} is too large",
                    t.class_id, t.track_id
                ));
            }
            if !(1 <= t.first_frame && t.first_frame <= t.last_frame && t.last_frame <= self.frames)
            {
                return bad(format!(
                    "track {} presence {}..={} is outside 1..={}",
                    t.track_id, t.first_frame, t.last_frame, self.frames
                ));
            }
            if t.points_per_frame == 0 {
                return bad(format!("track {} has no points", t.track_id));
            }
            let span = t.last_frame - t.first_frame + 1;
            if t.plan.len() != span {
                return bad(format!(
                    "track {} plan has {} entries for {} frames",
                    t.track_id,
                    t.plan.len(),
                    span
                ));
            }
            for a in &t.plan {
                if let PredAction::Id(p) = a {
                    if *p == 0 || *p > MAX_INSTANCE_ID {
                        return bad(format!("predicted id {p} outside 1..=999"));
                    }
                }
            }
        }
        Ok(())
    }

    fn max_thing_class(&self) -> u32 {
        self.tracks.iter().map(|t| t.class_id).max().unwrap_or(0)
    }

    /// Class map of the generated labels (see [`scenario_class_map`]).
    pub fn class_map(&self) -> ClassMap {
        scenario_class_map(std::slice::from_ref(self))
    }

    pub fn track(&self, track_id: u32) -> Result<&TrackSpec> {
        self.tracks
            .iter()
            .find(|t| t.track_id == track_id)
            .ok_or(Error::UnknownTrack(track_id))
    }

    fn track_mut(&mut self, track_id: u32) -> Result<&mut TrackSpec> {
        self.tracks
            .iter_mut()
            .find(|t| t.track_id == track_id)
            .ok_or(Error::UnknownTrack(track_id))
    }

    pub fn token(&self, frame: usize) -> String {
        format!("{}_{frame:03}", self.sequence_id)
    }
}

const THING_CLASS_LIMIT: u32 = 250;

/// Thing classes `0..=max track class`, one stuff background class after
/// them, ignore id 255.
pub fn scenario_class_map(specs: &[ScenarioSpec]) -> ClassMap {
    let max_thing = specs
        .iter()
        .map(ScenarioSpec::max_thing_class)
        .max()
        .unwrap_or(0);
    let background = max_thing + 1;
    let mut entries: Vec<ClassMapEntry> = (0..=max_thing)
        .map(|c| ClassMapEntry {
            raw_id: c,
            eval_id: c,
            name: format!("thing_{c}"),
            raw_name: None,
            is_thing: true,
            is_ignore: false,
        })
        .collect();
    entries.push(ClassMapEntry {
        raw_id: background,
        eval_id: background,
        name: "background".into(),
        raw_name: None,
        is_thing: false,
        is_ignore: false,
    });
    entries.push(ClassMapEntry {
        raw_id: 255,
        eval_id: 255,
        name: "void".into(),
        raw_name: None,
        is_thing: false,
        is_ignore: true,
    });
    ClassMap::from_entries(background + 1, entries).expect("scenario class map is valid")
}

/// Build the sequence pair described by `spec`. Point order within each
/// frame is shuffled by a generator seeded from `spec.seed` and the frame,
/// identically for ground truth and prediction.
pub fn generate(spec: &ScenarioSpec) -> Result<SequencePair> {
    generate_with_background(spec, spec.max_thing_class() + 1)
}

/// Generate several scenarios against one shared class map.
pub fn generate_all(specs: &[ScenarioSpec]) -> Result<(Vec<SequencePair>, ClassMap)> {
    let map = scenario_class_map(specs);
    let background = specs
        .iter()
        .map(ScenarioSpec::max_thing_class)
        .max()
        .unwrap_or(0)
        + 1;
    let pairs = specs
        .iter()
        .map(|s| generate_with_background(s, background))
        .collect::<Result<Vec<_>>>()?;
    Ok((pairs, map))
}

fn generate_with_background(spec: &ScenarioSpec, background: u32) -> Result<SequencePair> {
    spec.validate()?;
    let ignore = 255;
    let mut gt = SequenceLabels::new(spec.sequence_id.clone());
    let mut pred = SequenceLabels::new(spec.sequence_id.clone());

    for frame in 1..=spec.frames {
        let (mut gs, mut gi, mut ps, mut pi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut block = |n: usize, g: (u32, u32), p: (u32, u32)| {
            gs.extend(std::iter::repeat_n(g.0, n));
            gi.extend(std::iter::repeat_n(g.1, n));
            ps.extend(std::iter::repeat_n(p.0, n));
            pi.extend(std::iter::repeat_n(p.1, n));
        };
        block(spec.background_points, (background, 0), (background, 0));
        for t in &spec.tracks {
            let Some(action) = t.action(frame) else {
                continue;
            };
            let predicted = match action {
                PredAction::Id(id) => (t.class_id, id),
                PredAction::Drop => (t.class_id, 0),
                PredAction::Void => (ignore, 0),
            };
            block(t.points_per_frame, (t.class_id, t.track_id), predicted);
        }

        let mut order: Vec<usize> = (0..gs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            spec.seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut rng);
        let g = ScanLabels::new(gs, gi)?.permuted(&order);
        let p = ScanLabels::new(ps, pi)?.permuted(&order);
        gt.push(spec.token(frame), g);
        pred.push(spec.token(frame), p);
    }
    Ok(SequencePair { gt, pred })
}

/// Reorder frames of both sequences: new frame `k` is old frame `permutation[k]`
/// (0-based).
pub fn permute_frames(pair: &SequencePair, permutation: &[usize]) -> Result<SequencePair> {
    let n = pair.gt.len();
    if pair.pred.len() != n {
        return Err(Error::FrameCountMismatch {
            sequence: pair.gt.sequence_id.clone(),
            gt: n,
            pred: pair.pred.len(),
        });
    }
    if permutation.len() != n {
        return Err(Error::BadPermutation(format!(
            "{} entries for {n} frames",
            permutation.len()
        )));
    }
    let mut seen = vec![false; n];
    for &k in permutation {
        if k >= n || std::mem::replace(&mut seen[k], true) {
            return Err(Error::BadPermutation(format!(
                "index {k} is out of range or repeated"
            )));
        }
    }
    let reorder = |s: &SequenceLabels| SequenceLabels {
        sequence_id: s.sequence_id.clone(),
        scans: permutation.iter().map(|&k| s.scans[k].clone()).collect(),
    };
    Ok(SequencePair {
        gt: reorder(&pair.gt),
        pred: reorder(&pair.pred),
    })
}

/// From `at_frame` on, predict `track_id` with `new_id` wherever it carried an id.
pub fn split_track(
    spec: &ScenarioSpec,
    track_id: u32,
    at_frame: usize,
    new_id: u32,
) -> Result<ScenarioSpec> {
    let mut out = spec.clone();
    let t = out.track_mut(track_id)?;
    t.check_frame(at_frame)?;
    let start = at_frame - t.first_frame;
    for a in &mut t.plan[start..] {
        if let PredAction::Id(_) = a {
            *a = PredAction::Id(new_id);
        }
    }
    Ok(out)
}

/// Predict `to_track` with the last predicted id of `from_track`, so one
/// predicted id spans both ground-truth tracks.
pub fn transfer_id(spec: &ScenarioSpec, from_track: u32, to_track: u32) -> Result<ScenarioSpec> {
    let id = spec
        .track(from_track)?
        .plan
        .iter()
        .rev()
        .find_map(|a| match a {
            PredAction::Id(id) => Some(*id),
            _ => None,
        })
        .ok_or_else(|| Error::InvalidPlan(format!("track {from_track} is never predicted")))?;
    let mut out = spec.clone();
    for a in &mut out.track_mut(to_track)?.plan {
        if let PredAction::Id(_) = a {
            *a = PredAction::Id(id);
        }
    }
    Ok(out)
}

/// Predict `track_id` as ignore on `frames`.
pub fn void_instances(
    spec: &ScenarioSpec,
    track_id: u32,
    frames: RangeInclusive<usize>,
) -> Result<ScenarioSpec> {
    let mut out = spec.clone();
    let t = out.track_mut(track_id)?;
    t.check_frame(*frames.start())?;
    t.check_frame(*frames.end())?;
    let first = t.first_frame;
    for f in frames {
        t.plan[f - first] = PredAction::Void;
    }
    Ok(out)
}

/// Write label files, `classmap.json` and `manifest.json` under `out_dir`.
pub fn write_dataset(pairs: &[SequencePair], map: &ClassMap, out_dir: &Path) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    let mut seen = BTreeSet::new();
    for pair in pairs {
        let seq_id = &pair.gt.sequence_id;
        if !seen.insert(seq_id.clone()) {
            return Err(Error::Manifest(format!("duplicate sequence_id {seq_id}")));
        }
        let mut scans = Vec::with_capacity(pair.gt.len());
        for ((token, g), (_, p)) in pair.gt.scans.iter().zip(&pair.pred.scans) {
            let gt_rel = Path::new("gt").join(io::label_file_name(token));
            let pred_rel = Path::new("pred").join(io::label_file_name(token));
            io::write_labels(&out_dir.join(&gt_rel), g)?;
            io::write_labels(&out_dir.join(&pred_rel), p)?;
            scans.push(ManifestScan {
                token: token.clone(),
                gt: Some(gt_rel),
                pred: Some(pred_rel),
                ..Default::default()
            });
        }
        manifest.sequences.push(ManifestSequence {
            sequence_id: seq_id.clone(),
            scans,
        });
    }
    io::write_json(&out_dir.join("classmap.json"), &map.to_document())?;
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Large random scan pair over `map` for throughput runs: contiguous thing
/// instances of 5 to 2000 points covering about 40% of the scan, stuff runs
/// for the rest, 1% ignore, and a prediction with about 5% of points
/// relabeled and instances occasionally merged or renumbered.
pub fn dense_scan_pair(seed: u64, points: usize, map: &ClassMap) -> (ScanLabels, ScanLabels) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let things: Vec<u32> = map.thing_classes().collect();
    let stuff: Vec<u32> = map.stuff_classes().collect();
    let n_classes = map.num_eval_classes();
    let ignore = map.ignore_id();

    let mut gs = Vec::with_capacity(points);
    let mut gi = Vec::with_capacity(points);
    let mut next_id = 1u32;
    while gs.len() < points {
        let left = points - gs.len();
        if !things.is_empty() && next_id <= MAX_INSTANCE_ID && rng.gen_bool(0.4) {
            let n = rng.gen_range(5..=2000).min(left);
            let class = *things.choose(&mut rng).expect("non-empty");
            gs.extend(std::iter::repeat_n(class, n));
            gi.extend(std::iter::repeat_n(next_id, n));
            next_id += 1;
        } else {
            let n = rng.gen_range(100..=3000).min(left);
            let class = stuff.choose(&mut rng).copied().unwrap_or(ignore);
            gs.extend(std::iter::repeat_n(class, n));
            gi.extend(std::iter::repeat_n(0, n));
        }
    }
    for i in 0..points {
        if rng.gen_bool(0.01) {
            gs[i] = ignore;
            gi[i] = 0;
        }
    }

    let remap_id: Vec<u32> = (0..next_id)
        .map(|id| match rng.gen_range(0..10) {
            _ if id == 0 => 0,
            0 if id > 1 => id - 1,
            1 => (id + 500).min(MAX_INSTANCE_ID),
            _ => id,
        })
        .collect();
    let mut ps = gs.clone();
    let mut pi: Vec<u32> = gi.iter().map(|&id| remap_id[id as usize]).collect();
    for i in 0..points {
        if rng.gen_bool(0.05) {
            let class = rng.gen_range(0..n_classes);
            ps[i] = class;
            pi[i] = if map.is_thing(class) {
                rng.gen_range(1..next_id.max(2))
            } else {
                0
            };
        } else if ps[i] == ignore {
            ps[i] = stuff.first().copied().unwrap_or(0);
        }
    }
    (
        ScanLabels::new(gs, gi).expect("lengths match"),
        ScanLabels::new(ps, pi).expect("lengths match"),
    )
}
