//! Box-to-point fusion: ground-truth panoptic labels from semantic points and
//! annotated boxes, and panoptic predictions from semantic predictions and
//! detection boxes.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Point;
use crate::labels::{ClassMap, ScanLabels, MAX_INSTANCE_ID};

/// Oriented 3D box. `size` is `(w, l, h)`: `w` spans the box x-axis, `l`
/// the box y-axis and `h` the vertical axis. `yaw` rotates the box x-axis
/// counter-clockwise from the world x-axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class_id: u32,
    #[serde(default = "default_score")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u32>,
}

fn default_score() -> f64 {
    1.0
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = yaw.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: u32) -> Result<Self> {
        Box3D {
            center,
            size,
            yaw,
            class_id,
            score: 1.0,
            track_id: None,
        }
        .validated()
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_track(mut self, track_id: u32) -> Self {
        self.track_id = Some(track_id);
        self
    }

    /// Check sizes and score and normalize the yaw.
    pub fn validated(mut self) -> Result<Self> {
        if !self.size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidBox(format!(
                "non-positive size {:?}",
                self.size
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite pose".into()));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidBox(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        self.yaw = normalize_yaw(self.yaw);
        Ok(self)
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Membership test, inclusive at the faces.
    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        let (sin, cos) = self.yaw.sin_cos();
        self.contains_with(p, sin, cos)
    }

    #[inline]
    fn contains_with(&self, p: &Point, sin: f64, cos: f64) -> bool {
        let dx = p.x as f64 - self.center[0];
        let dy = p.y as f64 - self.center[1];
        let dz = p.z as f64 - self.center[2];
        if dz.abs() > self.size[2] / 2.0 {
            return false;
        }
        // rotate by -yaw into the box frame
        let lx = cos * dx + sin * dy;
        let ly = -sin * dx + cos * dy;
        lx.abs() <= self.size[0] / 2.0 && ly.abs() <= self.size[1] / 2.0
    }
}

/// Indices of the points inside `b`.
pub fn points_in_box(points: &[Point], b: &Box3D) -> Vec<u32> {
    let (sin, cos) = b.yaw.sin_cos();
    let reach = (b.size[0] * b.size[0] + b.size[1] * b.size[1]).sqrt() / 2.0;
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            (p.x as f64 - b.center[0]).abs() <= reach
                && (p.y as f64 - b.center[1]).abs() <= reach
                && b.contains_with(p, sin, cos)
        })
        .map(|(i, _)| i as u32)
        .collect()
}

fn check_lengths(labels: &ScanLabels, points: &[Point]) -> Result<()> {
    if labels.point_count() != points.len() {
        return Err(Error::LengthMismatch {
            gt: labels.point_count(),
            pred: points.len(),
        });
    }
    Ok(())
}

fn instance_of(b: &Box3D, index: usize) -> Result<u32> {
    let id = b.track_id.unwrap_or(index as u32 + 1);
    if id == 0 || id > MAX_INSTANCE_ID {
        return Err(Error::InstanceOutOfRange(id));
    }
    Ok(id)
}

/// Ground-truth fusion. A box claims the points inside it whose semantic
/// class equals the box class; a point claimed by one box takes that box's
/// instance id (its track id, or its 1-based position when untracked), a
/// point claimed by two or more boxes becomes ignore. Other points keep
/// their class with instance 0.
pub fn fuse_gt(
    semantic: &ScanLabels,
    points: &[Point],
    boxes: &[Box3D],
    map: &ClassMap,
) -> Result<ScanLabels> {
    check_lengths(semantic, points)?;
    let n = semantic.point_count();
    let mut claims = vec![0u32; n];
    let mut owner = vec![0u32; n];
    for (bi, b) in boxes.iter().enumerate() {
        if !map.is_thing(b.class_id) {
            continue;
        }
        let id = instance_of(b, bi)?;
        for pt in points_in_box(points, b) {
            let pt = pt as usize;
            if semantic.semantic()[pt] == b.class_id {
                claims[pt] += 1;
                owner[pt] = id;
            }
        }
    }
    let mut sem = semantic.semantic().to_vec();
    let mut inst = vec![0u32; n];
    for i in 0..n {
        match claims[i] {
            0 => {}
            1 => inst[i] = owner[i],
            _ => sem[i] = map.ignore_id(),
        }
    }
    ScanLabels::new(sem, inst)
}

/// Confidence filtering applied before prediction fusion.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFilter {
    #[default]
    KeepAll,
    /// Keep boxes with `score >= threshold`.
    Global(f64),
    /// Per-class thresholds; classes without an entry keep every box.
    PerClass(BTreeMap<u32, f64>),
}

impl ScoreFilter {
    pub fn keeps(&self, b: &Box3D) -> bool {
        match self {
            ScoreFilter::KeepAll => true,
            ScoreFilter::Global(t) => b.score >= *t,
            ScoreFilter::PerClass(m) => m.get(&b.class_id).is_none_or(|t| b.score >= *t),
        }
    }
}

/// Order in which overlapping boxes claim points: score, then volume
/// (both descending), then input position.
pub fn claim_order(boxes: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .total_cmp(&boxes[a].score)
            .then(boxes[b].volume().total_cmp(&boxes[a].volume()))
            .then(a.cmp(&b))
    });
    order
}

/// Prediction fusion. Points inside a kept box take the box class and an
/// instance id unique to that box; where boxes overlap the first box in
/// [`claim_order`] wins. Points outside every box keep their semantic
/// prediction with instance 0.
///
/// A box keeps its track id as instance id unless another box already
/// holds it; other boxes receive the smallest unused ids.
pub fn fuse_pred(
    semantic_pred: &ScanLabels,
    points: &[Point],
    boxes: &[Box3D],
    filter: &ScoreFilter,
    map: &ClassMap,
) -> Result<ScanLabels> {
    check_lengths(semantic_pred, points)?;
    let kept: Vec<Box3D> = boxes
        .iter()
        .filter(|b| map.is_thing(b.class_id) && filter.keeps(b))
        .cloned()
        .collect();
    let order = claim_order(&kept);

    let reserved: BTreeSet<u32> = kept.iter().filter_map(|b| b.track_id).collect();
    let mut used = BTreeSet::new();
    let mut next_fresh = 1u32;
    let mut ids = vec![0u32; kept.len()];
    for &bi in &order {
        let id = match kept[bi].track_id {
            Some(t) if t != 0 && !used.contains(&t) => t,
            _ => {
                while reserved.contains(&next_fresh) || used.contains(&next_fresh) {
                    next_fresh += 1;
                }
                next_fresh
            }
        };
        if id > MAX_INSTANCE_ID {
            return Err(Error::InstanceOutOfRange(id));
        }
        used.insert(id);
        ids[bi] = id;
    }

    let n = semantic_pred.point_count();
    let mut sem = semantic_pred.semantic().to_vec();
    let mut inst = vec![0u32; n];
    let mut taken = vec![false; n];
    for &bi in &order {
        for pt in points_in_box(points, &kept[bi]) {
            let pt = pt as usize;
            if !taken[pt] {
                taken[pt] = true;
                sem[pt] = kept[bi].class_id;
                inst[pt] = ids[bi];
            }
        }
    }
    ScanLabels::new(sem, inst)
}

/// Per-class score threshold maximizing detection F1. Predictions are
/// matched greedily by descending score to the nearest unmatched
/// ground-truth box of the same class within `max_distance` (bird's-eye
/// center distance). Each element of `scans` is `(predicted, ground truth)`.
pub fn max_f1_thresholds(
    scans: &[(Vec<Box3D>, Vec<Box3D>)],
    max_distance: f64,
) -> BTreeMap<u32, f64> {
    // (score, is_tp) per class, plus ground-truth counts
    let mut outcomes: BTreeMap<u32, Vec<(f64, bool)>> = BTreeMap::new();
    let mut gt_count: BTreeMap<u32, usize> = BTreeMap::new();
    for (pred, gt) in scans {
        for g in gt {
            *gt_count.entry(g.class_id).or_insert(0) += 1;
        }
        let mut used = vec![false; gt.len()];
        for pi in claim_order(pred) {
            let p = &pred[pi];
            let best = gt
                .iter()
                .enumerate()
                .filter(|(gi, g)| !used[*gi] && g.class_id == p.class_id)
                .map(|(gi, g)| {
                    let d = (g.center[0] - p.center[0]).hypot(g.center[1] - p.center[1]);
                    (gi, d)
                })
                .filter(|(_, d)| *d <= max_distance)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((gi, _)) = best {
                used[gi] = true;
            }
            outcomes
                .entry(p.class_id)
                .or_default()
                .push((p.score, best.is_some()));
        }
    }

    let mut thresholds = BTreeMap::new();
    for (class, mut list) in outcomes {
        list.sort_by(|a, b| b.0.total_cmp(&a.0));
        let n_gt = gt_count.get(&class).copied().unwrap_or(0) as f64;
        let (mut tp, mut fp) = (0.0, 0.0);
        let mut best = (f64::NEG_INFINITY, 1.0);
        for (k, &(score, is_tp)) in list.iter().enumerate() {
            if is_tp {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            // evaluate only at the last box of a run of equal scores
            if list.get(k + 1).is_some_and(|next| next.0 == score) {
                continue;
            }
            let f1 = if tp > 0.0 {
                2.0 * tp / (2.0 * tp + fp + (n_gt - tp))
            } else {
                0.0
            };
            if f1 > best.0 {
                best = (f1, score);
            }
        }
        thresholds.insert(class, best.1);
    }
    thresholds
}
