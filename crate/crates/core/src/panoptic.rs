//! Panoptic quality: per-scan segment matching at IoU > 0.5 and the PQ
//! family of scores (PQ, SQ, RQ, their thing/stuff splits, and PQ†).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassMap, MinPointsFilter, ScanLabels, Segment};
use crate::matching::{self, fixed_to_f64, iou_to_fixed, ScanContext};
use crate::semantic::ConfusionMatrix;

/// Identifies a segment within one scan. Stuff segments carry instance 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub class_id: u32,
    pub instance_id: u32,
}

/// A matched ground-truth/prediction pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMatch {
    pub class_id: u32,
    pub gt_instance: u32,
    pub pred_instance: u32,
    pub intersection: u64,
    pub union: u64,
}

impl SegmentMatch {
    pub fn iou(&self) -> f64 {
        self.intersection as f64 / self.union as f64
    }
}

/// Outcome of matching one scan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanMatches {
    pub tp: Vec<SegmentMatch>,
    pub fp: Vec<SegmentRef>,
    pub fn_: Vec<SegmentRef>,
}

struct Mask {
    seg: SegmentRef,
    points: Vec<u32>,
}

impl AsRef<[u32]> for Mask {
    fn as_ref(&self) -> &[u32] {
        &self.points
    }
}

fn stuff_masks(labels: &ScanLabels, map: &ClassMap) -> Vec<Mask> {
    let mut by_class: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (idx, &c) in labels.semantic().iter().enumerate() {
        if map.is_stuff(c) {
            by_class.entry(c).or_default().push(idx as u32);
        }
    }
    by_class
        .into_iter()
        .map(|(class_id, points)| Mask {
            seg: SegmentRef {
                class_id,
                instance_id: 0,
            },
            points,
        })
        .collect()
}

fn thing_masks(segments: &[Segment]) -> Vec<Mask> {
    segments
        .iter()
        .map(|s| Mask {
            seg: SegmentRef {
                class_id: s.class_id,
                instance_id: s.instance_id,
            },
            points: s.point_indices.clone(),
        })
        .collect()
}

/// Match thing segments (already size-filtered) and per-class stuff segments
/// of one scan.
///
/// Ground-truth ignore points, and ground-truth thing points outside
/// `gt_segments`, are void: they are excluded from IoU, and a predicted
/// segment lying more than half on void is not counted as a false positive.
pub fn match_scan(
    gt_segments: &[Segment],
    pred_segments: &[Segment],
    gt: &ScanLabels,
    pred: &ScanLabels,
    map: &ClassMap,
) -> Result<ScanMatches> {
    if gt.point_count() != pred.point_count() {
        return Err(Error::LengthMismatch {
            gt: gt.point_count(),
            pred: pred.point_count(),
        });
    }
    let void = matching::void_mask(gt, gt_segments, map);
    Ok(match_with_void(
        gt_segments,
        pred_segments,
        gt,
        pred,
        map,
        &void,
    ))
}

/// Extract, filter and match one scan.
pub fn match_scan_filtered(
    gt: &ScanLabels,
    pred: &ScanLabels,
    map: &ClassMap,
    filter: &MinPointsFilter,
) -> Result<ScanMatches> {
    if gt.point_count() != pred.point_count() {
        return Err(Error::LengthMismatch {
            gt: gt.point_count(),
            pred: pred.point_count(),
        });
    }
    let ctx = ScanContext::new(gt, pred, map, filter);
    Ok(match_context(&ctx, gt, pred, map))
}

pub(crate) fn match_context(
    ctx: &ScanContext,
    gt: &ScanLabels,
    pred: &ScanLabels,
    map: &ClassMap,
) -> ScanMatches {
    match_with_void(&ctx.gt_things, &ctx.pred_things, gt, pred, map, &ctx.void)
}

fn match_with_void(
    gt_segments: &[Segment],
    pred_segments: &[Segment],
    gt: &ScanLabels,
    pred: &ScanLabels,
    map: &ClassMap,
    void: &[bool],
) -> ScanMatches {
    let mut gt_masks = thing_masks(gt_segments);
    gt_masks.extend(stuff_masks(gt, map));
    let mut pred_masks = thing_masks(pred_segments);
    pred_masks.extend(stuff_masks(pred, map));

    let table = matching::overlap_table(&gt_masks, &pred_masks, void, |g, p| {
        gt_masks[g].seg.class_id == pred_masks[p].seg.class_id
    });
    let matched = matching::unique_matches(&table, gt_masks.len(), pred_masks.len());

    let mut gt_matched = vec![false; gt_masks.len()];
    let mut pred_matched = vec![false; pred_masks.len()];
    let mut out = ScanMatches::default();
    for m in &matched {
        gt_matched[m.gt] = true;
        pred_matched[m.pred] = true;
        let g = gt_masks[m.gt].seg;
        out.tp.push(SegmentMatch {
            class_id: g.class_id,
            gt_instance: g.instance_id,
            pred_instance: pred_masks[m.pred].seg.instance_id,
            intersection: m.inter,
            union: m.union,
        });
    }
    for (gi, mask) in gt_masks.iter().enumerate() {
        if !gt_matched[gi] {
            out.fn_.push(mask.seg);
        }
    }
    for (pi, mask) in pred_masks.iter().enumerate() {
        if pred_matched[pi] {
            continue;
        }
        // mostly-void predictions are not false positives
        if 2 * table.pred_void[pi] > mask.points.len() as u64 {
            continue;
        }
        out.fp.push(mask.seg);
    }
    out.tp.sort_by_key(|m| (m.class_id, m.gt_instance));
    out.fp.sort();
    out.fn_.sort();
    out
}

/// Per-class tallies behind PQ (and PTQ, via `ids`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTally {
    /// Sum of matched IoUs in fixed point.
    pub iou_mass: u128,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Identity switches; zero for plain panoptic evaluation.
    pub ids: u64,
}

impl ClassTally {
    pub fn iou_sum(&self) -> f64 {
        fixed_to_f64(self.iou_mass)
    }

    pub fn is_present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    fn denominator(&self) -> f64 {
        self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64
    }

    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum() / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        if self.is_present() {
            self.tp as f64 / self.denominator()
        } else {
            0.0
        }
    }

    pub fn pq(&self) -> f64 {
        if self.is_present() {
            self.iou_sum() / self.denominator()
        } else {
            0.0
        }
    }

    /// `(Σ IoU − IDS) / (TP + FP/2 + FN/2)`, floored at zero.
    pub fn ptq(&self) -> f64 {
        if self.is_present() {
            ((self.iou_sum() - self.ids as f64) / self.denominator()).max(0.0)
        } else {
            0.0
        }
    }

    fn add(&mut self, other: &ClassTally) {
        self.iou_mass += other.iou_mass;
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.ids += other.ids;
    }
}

/// Mergeable per-class PQ statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PqStats {
    classes: Vec<ClassTally>,
}

impl PqStats {
    pub fn new(num_classes: usize) -> Self {
        Self {
            classes: vec![ClassTally::default(); num_classes],
        }
    }

    pub fn for_map(map: &ClassMap) -> Self {
        Self::new(map.num_eval_classes() as usize)
    }

    pub fn class(&self, class_id: u32) -> &ClassTally {
        &self.classes[class_id as usize]
    }

    pub fn classes(&self) -> &[ClassTally] {
        &self.classes
    }

    pub fn accumulate(&mut self, matches: &ScanMatches) {
        for m in &matches.tp {
            let t = &mut self.classes[m.class_id as usize];
            t.iou_mass += iou_to_fixed(m.intersection, m.union);
            t.tp += 1;
        }
        for s in &matches.fp {
            self.classes[s.class_id as usize].fp += 1;
        }
        for s in &matches.fn_ {
            self.classes[s.class_id as usize].fn_ += 1;
        }
    }

    pub(crate) fn add_ids(&mut self, class_id: u32, n: u64) {
        self.classes[class_id as usize].ids += n;
    }

    pub fn merge(&mut self, other: &PqStats) {
        assert_eq!(
            self.classes.len(),
            other.classes.len(),
            "class count mismatch"
        );
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.add(b);
        }
    }

    /// Mean PTQ over present classes.
    pub fn ptq(&self) -> Result<f64> {
        let present: Vec<f64> = self
            .classes
            .iter()
            .filter(|t| t.is_present())
            .map(ClassTally::ptq)
            .collect();
        if present.is_empty() {
            return Err(Error::NoPresentClasses);
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPanoptic {
    pub class_id: u32,
    pub name: String,
    pub is_thing: bool,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Finalized PQ scores. Aggregates are means over present classes; an
/// aggregate over an empty group (e.g. no stuff class present) is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticResult {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_dagger: f64,
    pub pq_th: Option<f64>,
    pub sq_th: Option<f64>,
    pub rq_th: Option<f64>,
    pub pq_st: Option<f64>,
    pub sq_st: Option<f64>,
    pub rq_st: Option<f64>,
    pub per_class: Vec<ClassPanoptic>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// PQ† scores stuff classes by their semantic IoU taken from `cm`.
pub fn finalize(stats: &PqStats, map: &ClassMap, cm: &ConfusionMatrix) -> Result<PanopticResult> {
    let ious = cm.iou_per_class();
    let per_class: Vec<ClassPanoptic> = stats
        .classes
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_present())
        .map(|(c, t)| ClassPanoptic {
            class_id: c as u32,
            name: map.name(c as u32).to_string(),
            is_thing: map.is_thing(c as u32),
            pq: t.pq(),
            sq: t.sq(),
            rq: t.rq(),
            tp: t.tp,
            fp: t.fp,
            fn_: t.fn_,
        })
        .collect();
    if per_class.is_empty() {
        return Err(Error::NoPresentClasses);
    }

    let group = |thing: bool, f: fn(&ClassPanoptic) -> f64| {
        mean(per_class.iter().filter(|c| c.is_thing == thing).map(f))
    };
    let all = |f: fn(&ClassPanoptic) -> f64| mean(per_class.iter().map(f)).unwrap_or(0.0);
    let pq_dagger = mean(per_class.iter().map(|c| {
        if c.is_thing {
            c.pq
        } else {
            ious.get(c.class_id as usize)
                .copied()
                .flatten()
                .unwrap_or(0.0)
        }
    }))
    .unwrap_or(0.0);

    Ok(PanopticResult {
        pq: all(|c| c.pq),
        sq: all(|c| c.sq),
        rq: all(|c| c.rq),
        pq_dagger,
        pq_th: group(true, |c| c.pq),
        sq_th: group(true, |c| c.sq),
        rq_th: group(true, |c| c.rq),
        pq_st: group(false, |c| c.pq),
        sq_st: group(false, |c| c.sq),
        rq_st: group(false, |c| c.rq),
        per_class,
    })
}
