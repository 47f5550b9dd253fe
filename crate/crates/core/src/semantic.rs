//! Point-level semantic scoring through a confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassMap, ScanLabels};

/// Rows are ground truth, columns prediction. Ground-truth ignore points are
/// dropped; valid ground-truth points predicted as ignore are tallied per row
/// in `void_pred` and count as false negatives only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    void_pred: Vec<u64>,
    total_points: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            void_pred: vec![0; num_classes],
            total_points: 0,
        }
    }

    pub fn for_map(map: &ClassMap) -> Self {
        Self::new(map.num_eval_classes() as usize)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn void_pred(&self, gt: usize) -> u64 {
        self.void_pred[gt]
    }

    pub fn total_points(&self) -> u64 {
        self.total_points
    }

    /// `counts[g][p]` as nested rows.
    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.num_classes.max(1))
            .take(self.num_classes)
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn accumulate(&mut self, gt: &ScanLabels, pred: &ScanLabels) -> Result<()> {
        if gt.point_count() != pred.point_count() {
            return Err(Error::LengthMismatch {
                gt: gt.point_count(),
                pred: pred.point_count(),
            });
        }
        let n = self.num_classes as u32;
        for (&g, &p) in gt.semantic().iter().zip(pred.semantic()) {
            if g >= n {
                continue;
            }
            if p < n {
                self.counts[(g * n + p) as usize] += 1;
            } else {
                self.void_pred[g as usize] += 1;
            }
            self.total_points += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes, "class count mismatch");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.void_pred.iter_mut().zip(&other.void_pred) {
            *a += b;
        }
        self.total_points += other.total_points;
    }

    pub fn gt_points(&self, class: usize) -> u64 {
        let n = self.num_classes;
        self.counts[class * n..(class + 1) * n].iter().sum::<u64>() + self.void_pred[class]
    }

    pub fn pred_points(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|g| self.count(g, class)).sum()
    }

    /// `TP / (TP + FP + FN)`; `None` for a class that never occurs on either side.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fp = self.pred_points(c) - tp;
                let fn_ = self.gt_points(c) - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        mean_present(&self.iou_per_class())
    }

    /// Ground-truth frequency weighted IoU over present classes.
    pub fn fwiou(&self) -> Result<f64> {
        let ious = self.iou_per_class();
        if ious.iter().all(Option::is_none) || self.total_points == 0 {
            return Err(Error::NoPresentClasses);
        }
        let weighted: f64 = ious
            .iter()
            .enumerate()
            .filter_map(|(c, iou)| iou.map(|v| self.gt_points(c) as f64 * v))
            .sum();
        Ok(weighted / self.total_points as f64)
    }
}

pub(crate) fn mean_present(values: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoPresentClasses);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
