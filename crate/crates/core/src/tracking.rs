//! Sequence-level panoptic tracking scores.
//!
//! * PAT: harmonic mean of PQ and a tracking quality TQ. Each ground-truth
//!   track `g` scores `TQ(g) = sqrt((1 - IDS(g) / N_IDS(g)) * AS(g))`, where
//!   `AS(g)` is an instance-level association score built from frame-wise
//!   mask matches and `IDS(g)` counts consecutive occurrences of `g` that are
//!   unmatched or matched to different predicted ids.
//! * PTQ: PQ with identity switches subtracted from the matched IoU mass.
//! * LSTQ: geometric mean of semantic mIoU and a point-level association
//!   score over 4D tubes.
//!
//! Track identity is the instance id within a sequence, independent of class.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassMap, MinPointsFilter, ScanLabels, Segment, SequenceLabels};
use crate::matching::{self, ScanContext};
use crate::panoptic::{self, PqStats, ScanMatches};
use crate::semantic::ConfusionMatrix;

/// How a gap in a ground-truth track's presence is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMode {
    /// Consecutive occurrences are compared regardless of the frames between them.
    #[default]
    Skip,
    /// A presence gap between two occurrences counts as a switch.
    Count,
}

/// How per-track TQ values are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackMean {
    /// One mean over every track of every sequence.
    #[default]
    Global,
    /// Mean of per-sequence means.
    PerSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub filter: MinPointsFilter,
    pub gap_mode: GapMode,
    pub track_mean: TrackMean,
}

/// One occurrence of a ground-truth track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: usize,
    pub points: u64,
    /// Predicted id whose mask overlaps this frame's mask with IoU > 0.5.
    pub matched_pred: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub gt_track_id: u32,
    pub class_id: u32,
    /// Sorted by frame index.
    pub frames: Vec<TrackFrame>,
}

impl TrackRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Frame-level association counts for one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssocTally {
    /// `(pred, gt) -> frames where pred matched gt`.
    tpa: BTreeMap<(u32, u32), u64>,
    /// `pred -> frames where pred has a mask`.
    pred_frames: BTreeMap<u32, u64>,
}

impl AssocTally {
    pub fn tpa(&self, pred: u32, gt: u32) -> u64 {
        self.tpa.get(&(pred, gt)).copied().unwrap_or(0)
    }

    pub fn pred_frames(&self, pred: u32) -> u64 {
        self.pred_frames.get(&pred).copied().unwrap_or(0)
    }

    /// Frames of `g` not matched to `pred`.
    pub fn fna(&self, pred: u32, g: &TrackRecord) -> u64 {
        g.len() as u64 - self.tpa(pred, g.gt_track_id)
    }

    /// Frames of `pred` not matched to `g`.
    pub fn fpa(&self, pred: u32, g: &TrackRecord) -> u64 {
        self.pred_frames(pred) - self.tpa(pred, g.gt_track_id)
    }

    /// Predicted ids matched to `gt` at least once.
    pub fn partners(&self, gt: u32) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.tpa
            .iter()
            .filter(move |((_, g), _)| *g == gt)
            .map(|((p, _), &n)| (*p, n))
    }
}

/// Matched tracks and association counts of one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceAssociation {
    pub tracks: Vec<TrackRecord>,
    pub tally: AssocTally,
}

/// Point-level 4D tubes of one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeIndex {
    gt_size: BTreeMap<u32, u64>,
    pred_size: BTreeMap<u32, u64>,
    /// `(gt, pred) -> shared (frame, point) memberships`.
    intersection: BTreeMap<(u32, u32), u64>,
}

impl TubeIndex {
    pub fn gt_size(&self, gt: u32) -> u64 {
        self.gt_size.get(&gt).copied().unwrap_or(0)
    }

    pub fn pred_size(&self, pred: u32) -> u64 {
        self.pred_size.get(&pred).copied().unwrap_or(0)
    }

    pub fn intersection(&self, gt: u32, pred: u32) -> u64 {
        self.intersection.get(&(gt, pred)).copied().unwrap_or(0)
    }

    pub fn gt_tubes(&self) -> impl Iterator<Item = u32> + '_ {
        self.gt_size.keys().copied()
    }

    /// `(1/|g|) Σ_p |p∩g| · |p∩g| / |p∪g|` per ground-truth tube, in id order.
    pub fn assoc_scores(&self) -> Vec<(u32, f64)> {
        self.gt_size
            .iter()
            .map(|(&g, &g_size)| {
                let mut sum = 0.0;
                for (&(_, p), &inter) in self.intersection.range((g, 0)..=(g, u32::MAX)) {
                    let union = g_size + self.pred_size(p) - inter;
                    sum += inter as f64 * (inter as f64 / union as f64);
                }
                (g, sum / g_size as f64)
            })
            .collect()
    }
}

/// Per-frame instance masks keyed by instance id alone.
fn instance_masks(segments: &[Segment]) -> Vec<(u32, Vec<u32>)> {
    let mut by_id: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for s in segments {
        by_id
            .entry(s.instance_id)
            .or_default()
            .extend(&s.point_indices);
    }
    by_id.into_iter().collect()
}

struct IdMask<'a>(&'a [u32]);

impl AsRef<[u32]> for IdMask<'_> {
    fn as_ref(&self) -> &[u32] {
        self.0
    }
}

/// Frame-by-frame accumulation of every tracking statistic for one sequence.
#[derive(Debug, Clone)]
pub(crate) struct SequenceAccumulator {
    pub cm: ConfusionMatrix,
    /// PQ tallies with PTQ identity switches in `ids`.
    pub pq: PqStats,
    pub tubes: TubeIndex,
    tracks: BTreeMap<u32, TrackRecord>,
    tally: AssocTally,
    last_ptq_match: HashMap<(u32, u32), u32>,
    frame: usize,
}

impl SequenceAccumulator {
    pub fn new(map: &ClassMap) -> Self {
        Self {
            cm: ConfusionMatrix::for_map(map),
            pq: PqStats::for_map(map),
            tubes: TubeIndex::default(),
            tracks: BTreeMap::new(),
            tally: AssocTally::default(),
            last_ptq_match: HashMap::new(),
            frame: 0,
        }
    }

    pub fn push_frame(
        &mut self,
        gt: &ScanLabels,
        pred: &ScanLabels,
        map: &ClassMap,
        filter: &MinPointsFilter,
    ) -> Result<()> {
        self.cm.accumulate(gt, pred)?;
        let ctx = ScanContext::new(gt, pred, map, filter);

        let matches = panoptic::match_context(&ctx, gt, pred, map);
        self.push_ptq(&matches, map);
        self.pq.accumulate(&matches);

        self.push_instances(&ctx);
        self.frame += 1;
        Ok(())
    }

    fn push_ptq(&mut self, matches: &ScanMatches, map: &ClassMap) {
        for m in matches.tp.iter().filter(|m| map.is_thing(m.class_id)) {
            let key = (m.class_id, m.gt_instance);
            if let Some(prev) = self.last_ptq_match.insert(key, m.pred_instance) {
                if prev != m.pred_instance {
                    self.pq.add_ids(m.class_id, 1);
                }
            }
        }
    }

    fn push_instances(&mut self, ctx: &ScanContext) {
        let gt_masks = instance_masks(&ctx.gt_things);
        let pred_masks = instance_masks(&ctx.pred_things);
        let gt_refs: Vec<IdMask> = gt_masks.iter().map(|(_, m)| IdMask(m)).collect();
        let pred_refs: Vec<IdMask> = pred_masks.iter().map(|(_, m)| IdMask(m)).collect();
        let table = matching::overlap_table(&gt_refs, &pred_refs, &ctx.void, |_, _| true);
        let matched = matching::unique_matches(&table, gt_masks.len(), pred_masks.len());

        let mut match_of = vec![None; gt_masks.len()];
        for m in &matched {
            match_of[m.gt] = Some(pred_masks[m.pred].0);
        }

        let class_of = |id: u32| {
            ctx.gt_things
                .iter()
                .find(|s| s.instance_id == id)
                .map(|s| s.class_id)
                .unwrap_or(0)
        };
        for (gi, (gt_id, points)) in gt_masks.iter().enumerate() {
            let record = self.tracks.entry(*gt_id).or_insert_with(|| TrackRecord {
                gt_track_id: *gt_id,
                class_id: class_of(*gt_id),
                frames: Vec::new(),
            });
            record.frames.push(TrackFrame {
                frame: self.frame,
                points: points.len() as u64,
                matched_pred: match_of[gi],
            });
            if let Some(p) = match_of[gi] {
                *self.tally.tpa.entry((p, *gt_id)).or_insert(0) += 1;
            }
            *self.tubes.gt_size.entry(*gt_id).or_insert(0) += points.len() as u64;
        }
        for (pi, (pred_id, points)) in pred_masks.iter().enumerate() {
            *self.tally.pred_frames.entry(*pred_id).or_insert(0) += 1;
            let on_void = table.pred_void[pi];
            *self.tubes.pred_size.entry(*pred_id).or_insert(0) += points.len() as u64 - on_void;
        }
        for o in &table.overlaps {
            let key = (gt_masks[o.gt].0, pred_masks[o.pred].0);
            *self.tubes.intersection.entry(key).or_insert(0) += o.inter;
        }
    }

    pub fn association(&self) -> SequenceAssociation {
        SequenceAssociation {
            tracks: self.tracks.values().cloned().collect(),
            tally: self.tally.clone(),
        }
    }
}

fn check_frames(gt: &SequenceLabels, pred: &SequenceLabels) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::FrameCountMismatch {
            sequence: gt.sequence_id.clone(),
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    Ok(())
}

pub(crate) fn accumulate_sequence(
    gt: &SequenceLabels,
    pred: &SequenceLabels,
    map: &ClassMap,
    filter: &MinPointsFilter,
) -> Result<SequenceAccumulator> {
    check_frames(gt, pred)?;
    let mut acc = SequenceAccumulator::new(map);
    for (g, p) in gt.frames().zip(pred.frames()) {
        acc.push_frame(g, p, map, filter)?;
    }
    Ok(acc)
}

/// Match every ground-truth thing instance of every frame to a predicted
/// instance at mask IoU > 0.5 (class agnostic) and tally associations.
pub fn match_frames(
    gt: &SequenceLabels,
    pred: &SequenceLabels,
    map: &ClassMap,
    filter: &MinPointsFilter,
) -> Result<SequenceAssociation> {
    Ok(accumulate_sequence(gt, pred, map, filter)?.association())
}

/// Instance-level association score of one track:
/// `AS(g) = (1/|g|) Σ_p TPA(p,g) · TPA / (TPA + FNA + FPA)`.
pub fn compute_as(g: &TrackRecord, tally: &AssocTally) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    let len = g.len() as f64;
    let sum: f64 = tally
        .partners(g.gt_track_id)
        .map(|(p, tpa)| {
            let denom = tpa + tally.fna(p, g) + tally.fpa(p, g);
            tpa as f64 * (tpa as f64 / denom as f64)
        })
        .sum();
    sum / len
}

/// `(IDS, N_IDS)` for one track, with `N_IDS = max(|g| - 1, 1)`.
pub fn compute_ids(g: &TrackRecord, gap_mode: GapMode) -> (u64, u64) {
    let n_ids = (g.len().saturating_sub(1)).max(1) as u64;
    let ids = g
        .frames
        .windows(2)
        .filter(|w| {
            let (a, b) = (w[0], w[1]);
            let gap = gap_mode == GapMode::Count && b.frame != a.frame + 1;
            match (a.matched_pred, b.matched_pred) {
                (Some(x), Some(y)) => x != y || gap,
                _ => true,
            }
        })
        .count() as u64;
    (ids, n_ids)
}

/// Per-track tracking quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackQuality {
    pub sequence_id: String,
    pub track_id: u32,
    pub class_id: u32,
    pub length: usize,
    pub association: f64,
    pub ids: u64,
    pub n_ids: u64,
    pub tq: f64,
}

impl TrackQuality {
    pub fn new(sequence_id: &str, g: &TrackRecord, tally: &AssocTally, gap_mode: GapMode) -> Self {
        let association = compute_as(g, tally);
        let (ids, n_ids) = compute_ids(g, gap_mode);
        Self {
            sequence_id: sequence_id.to_string(),
            track_id: g.gt_track_id,
            class_id: g.class_id,
            length: g.len(),
            association,
            ids,
            n_ids,
            tq: track_tq(association, ids, n_ids),
        }
    }
}

/// `sqrt((1 - ids / n_ids) * association)`.
pub fn track_tq(association: f64, ids: u64, n_ids: u64) -> f64 {
    let keep = 1.0 - ids as f64 / n_ids as f64;
    (keep.max(0.0) * association).sqrt()
}

/// Mean TQ(g) over tracks; `None` without any track.
pub fn compute_tq(tracks: &[TrackQuality]) -> Option<f64> {
    if tracks.is_empty() {
        return None;
    }
    Some(tracks.iter().map(|t| t.tq).sum::<f64>() / tracks.len() as f64)
}

/// Harmonic mean of PQ and TQ; zero when both are zero.
pub fn compute_pat(pq: f64, tq: f64) -> f64 {
    if pq + tq > 0.0 {
        2.0 * pq * tq / (pq + tq)
    } else {
        0.0
    }
}

/// Mean PTQ over present classes of tallies carrying identity switches.
pub fn compute_ptq(stats: &PqStats) -> Result<f64> {
    stats.ptq()
}

/// PTQ tallies for one sequence: PQ matching per frame, plus one switch
/// whenever a ground-truth instance is matched to a different predicted id
/// than at its previous match.
pub fn ptq_stats(
    gt: &SequenceLabels,
    pred: &SequenceLabels,
    map: &ClassMap,
    filter: &MinPointsFilter,
) -> Result<PqStats> {
    Ok(accumulate_sequence(gt, pred, map, filter)?.pq)
}

/// Build the point-level tubes of one sequence.
pub fn build_tubes(
    gt: &SequenceLabels,
    pred: &SequenceLabels,
    map: &ClassMap,
    filter: &MinPointsFilter,
) -> Result<TubeIndex> {
    Ok(accumulate_sequence(gt, pred, map, filter)?.tubes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstqScore {
    pub lstq: f64,
    pub s_cls: f64,
    /// `None` when no ground-truth thing tube exists.
    pub s_assoc: Option<f64>,
}

/// LSTQ over tubes of several sequences and their pooled confusion matrix.
/// Without ground-truth tubes LSTQ reduces to `S_cls`.
pub fn compute_lstq(tubes: &[TubeIndex], cm: &ConfusionMatrix) -> Result<LstqScore> {
    let s_cls = cm.miou()?;
    let scores: Vec<f64> = tubes
        .iter()
        .flat_map(|t| t.assoc_scores().into_iter().map(|(_, s)| s))
        .collect();
    let s_assoc = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    let lstq = match s_assoc {
        Some(a) => (a * s_cls).sqrt(),
        None => s_cls,
    };
    Ok(LstqScore {
        lstq,
        s_cls,
        s_assoc,
    })
}

/// Scores of one sequence, or of a whole split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingScores {
    pub pat: f64,
    pub lstq: f64,
    pub ptq: f64,
    pub pq: f64,
    pub tq: Option<f64>,
    pub s_cls: f64,
    pub s_assoc: Option<f64>,
    pub total_ids: u64,
}

/// Split-level tracking result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    #[serde(flatten)]
    pub scores: TrackingScores,
    pub panoptic: panoptic::PanopticResult,
    pub tracks: Vec<TrackQuality>,
    pub sequences: Vec<SequenceTrackingScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrackingScores {
    pub sequence_id: String,
    #[serde(flatten)]
    pub scores: Option<TrackingScores>,
}

pub(crate) struct SequenceOutcome {
    pub sequence_id: String,
    pub acc: SequenceAccumulator,
    pub tracks: Vec<TrackQuality>,
}

pub(crate) fn sequence_outcome(
    gt: &SequenceLabels,
    pred: &SequenceLabels,
    map: &ClassMap,
    config: &TrackingConfig,
) -> Result<SequenceOutcome> {
    let acc = accumulate_sequence(gt, pred, map, &config.filter)?;
    let assoc = acc.association();
    let tracks = assoc
        .tracks
        .iter()
        .map(|g| TrackQuality::new(&gt.sequence_id, g, &assoc.tally, config.gap_mode))
        .collect();
    Ok(SequenceOutcome {
        sequence_id: gt.sequence_id.clone(),
        acc,
        tracks,
    })
}

fn scores_from(
    pq_stats: &PqStats,
    cm: &ConfusionMatrix,
    tubes: &[TubeIndex],
    tq: Option<f64>,
    total_ids: u64,
    map: &ClassMap,
) -> Result<(TrackingScores, panoptic::PanopticResult)> {
    let pan = panoptic::finalize(pq_stats, map, cm)?;
    let lstq = compute_lstq(tubes, cm)?;
    let ptq = compute_ptq(pq_stats)?;
    let pat = match tq {
        Some(tq) => compute_pat(pan.pq, tq),
        None => pan.pq,
    };
    Ok((
        TrackingScores {
            pat,
            lstq: lstq.lstq,
            ptq,
            pq: pan.pq,
            tq,
            s_cls: lstq.s_cls,
            s_assoc: lstq.s_assoc,
            total_ids,
        },
        pan,
    ))
}

/// Reduce per-sequence outcomes (in sequence order) into the split result.
pub(crate) fn reduce_outcomes(
    outcomes: Vec<SequenceOutcome>,
    map: &ClassMap,
    config: &TrackingConfig,
) -> Result<TrackingResult> {
    let mut cm = ConfusionMatrix::for_map(map);
    let mut pq = PqStats::for_map(map);
    let mut tubes = Vec::with_capacity(outcomes.len());
    let mut tracks = Vec::new();
    let mut sequences = Vec::with_capacity(outcomes.len());
    let mut seq_tq = Vec::new();

    for o in outcomes {
        let ids: u64 = o.tracks.iter().map(|t| t.ids).sum();
        let tq = compute_tq(&o.tracks);
        if let Some(tq) = tq {
            seq_tq.push(tq);
        }
        let scores = scores_from(
            &o.acc.pq,
            &o.acc.cm,
            std::slice::from_ref(&o.acc.tubes),
            tq,
            ids,
            map,
        )
        .ok()
        .map(|(s, _)| s);
        sequences.push(SequenceTrackingScores {
            sequence_id: o.sequence_id,
            scores,
        });
        cm.merge(&o.acc.cm);
        pq.merge(&o.acc.pq);
        tubes.push(o.acc.tubes);
        tracks.extend(o.tracks);
    }

    let tq = match config.track_mean {
        TrackMean::Global => compute_tq(&tracks),
        TrackMean::PerSequence => {
            (!seq_tq.is_empty()).then(|| seq_tq.iter().sum::<f64>() / seq_tq.len() as f64)
        }
    };
    let total_ids = tracks.iter().map(|t| t.ids).sum();
    let (scores, panoptic) = scores_from(&pq, &cm, &tubes, tq, total_ids, map)?;
    Ok(TrackingResult {
        scores,
        panoptic,
        tracks,
        sequences,
    })
}

/// Evaluate a split of `(gt, pred)` sequences serially.
pub fn evaluate_sequences(
    pairs: &[(SequenceLabels, SequenceLabels)],
    map: &ClassMap,
    config: &TrackingConfig,
) -> Result<TrackingResult> {
    let outcomes = pairs
        .iter()
        .map(|(g, p)| sequence_outcome(g, p, map, config))
        .collect::<Result<Vec<_>>>()?;
    reduce_outcomes(outcomes, map, config)
}
