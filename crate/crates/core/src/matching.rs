//! Mask overlap bookkeeping shared by the panoptic and tracking matchers.

use std::collections::HashMap;

use crate::labels::{
    extract_segments, filter_min_points, ClassMap, MinPointsFilter, ScanLabels, Segment,
};

const NO_OWNER: u32 = u32::MAX;

/// Fixed-point scale for summed IoU values. Integer addition keeps IoU sums
/// independent of accumulation order.
pub(crate) const IOU_FRAC_BITS: u32 = 60;

#[inline]
pub(crate) fn iou_to_fixed(inter: u64, union: u64) -> u128 {
    ((inter as u128) << IOU_FRAC_BITS) / union as u128
}

#[inline]
pub(crate) fn fixed_to_f64(mass: u128) -> f64 {
    mass as f64 / (1u128 << IOU_FRAC_BITS) as f64
}

/// Overlap of one ground-truth mask with one predicted mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Overlap {
    pub gt: usize,
    pub pred: usize,
    pub inter: u64,
    pub union: u64,
}

impl Overlap {
    /// IoU > 0.5, evaluated exactly.
    #[inline]
    pub fn is_match(&self) -> bool {
        2 * self.inter > self.union
    }
}

#[derive(Debug, Clone)]
pub(crate) struct OverlapTable {
    pub overlaps: Vec<Overlap>,
    /// Predicted points lying on void ground truth, per predicted mask.
    pub pred_void: Vec<u64>,
}

/// Intersections between disjoint ground-truth masks and disjoint predicted
/// masks. Points flagged `void` are excluded from every intersection and union.
pub(crate) fn overlap_table<G, P>(
    gt_masks: &[G],
    pred_masks: &[P],
    void: &[bool],
    compatible: impl Fn(usize, usize) -> bool,
) -> OverlapTable
where
    G: AsRef<[u32]>,
    P: AsRef<[u32]>,
{
    let mut owner = vec![NO_OWNER; void.len()];
    for (gi, mask) in gt_masks.iter().enumerate() {
        for &pt in mask.as_ref() {
            owner[pt as usize] = gi as u32;
        }
    }

    let mut overlaps = Vec::new();
    let mut pred_void = vec![0u64; pred_masks.len()];
    let mut local: HashMap<u32, u64> = HashMap::new();
    for (pi, mask) in pred_masks.iter().enumerate() {
        local.clear();
        let points = mask.as_ref();
        let mut on_void = 0u64;
        for &pt in points {
            let pt = pt as usize;
            if void[pt] {
                on_void += 1;
                continue;
            }
            let o = owner[pt];
            if o != NO_OWNER {
                *local.entry(o).or_insert(0) += 1;
            }
        }
        pred_void[pi] = on_void;
        let pred_area = points.len() as u64 - on_void;
        let mut found: Vec<(u32, u64)> = local
            .iter()
            .filter(|(gi, _)| compatible(**gi as usize, pi))
            .map(|(&gi, &n)| (gi, n))
            .collect();
        found.sort_unstable();
        for (gi, inter) in found {
            let gt_area = gt_masks[gi as usize].as_ref().len() as u64;
            overlaps.push(Overlap {
                gt: gi as usize,
                pred: pi,
                inter,
                union: gt_area + pred_area - inter,
            });
        }
    }
    OverlapTable {
        overlaps,
        pred_void,
    }
}

/// All pairs with IoU > 0.5. At this threshold a mask can take part in at
/// most one pair; a violation means the masks were not disjoint.
pub(crate) fn unique_matches(table: &OverlapTable, n_gt: usize, n_pred: usize) -> Vec<Overlap> {
    let mut gt_used = vec![false; n_gt];
    let mut pred_used = vec![false; n_pred];
    let matches: Vec<Overlap> = table
        .overlaps
        .iter()
        .filter(|o| o.is_match())
        .copied()
        .collect();
    for m in &matches {
        assert!(
            !gt_used[m.gt] && !pred_used[m.pred],
            "IoU > 0.5 matching is not unique"
        );
        gt_used[m.gt] = true;
        pred_used[m.pred] = true;
    }
    matches
}

/// Filtered thing segments of both sides plus the ground-truth void mask.
///
/// A ground-truth point is void when its class is ignore, or it is a thing
/// point outside every retained ground-truth segment (instance id 0 or a
/// segment removed by the size filter).
#[derive(Debug, Clone)]
pub(crate) struct ScanContext {
    pub gt_things: Vec<Segment>,
    pub pred_things: Vec<Segment>,
    pub void: Vec<bool>,
}

impl ScanContext {
    pub fn new(
        gt: &ScanLabels,
        pred: &ScanLabels,
        map: &ClassMap,
        filter: &MinPointsFilter,
    ) -> Self {
        let gt_things = filter_min_points(extract_segments(gt, map), filter.gt_threshold());
        let pred_things = filter_min_points(extract_segments(pred, map), filter.pred_threshold());
        let void = void_mask(gt, &gt_things, map);
        Self {
            gt_things,
            pred_things,
            void,
        }
    }
}

pub(crate) fn void_mask(gt: &ScanLabels, gt_things: &[Segment], map: &ClassMap) -> Vec<bool> {
    let mut void: Vec<bool> = gt.semantic().iter().map(|&c| !map.is_stuff(c)).collect();
    for seg in gt_things {
        for &pt in &seg.point_indices {
            void[pt as usize] = false;
        }
    }
    void
}
