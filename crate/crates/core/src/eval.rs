//! Split-level evaluation pipelines over loaded sequences, and manifest-driven
//! box fusion.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{self, Box3D, ScoreFilter};
use crate::io;
use crate::labels::{remap, ClassMap, MinPointsFilter, ScanLabels, SequenceLabels};
use crate::manifest::{LabelSide, LoadedManifest, Manifest, ManifestScan, ManifestSequence};
use crate::panoptic::{self, PanopticResult, PqStats};
use crate::semantic::ConfusionMatrix;
use crate::tracking::{self, TrackingConfig, TrackingResult};

pub type SequencePairs = [(SequenceLabels, SequenceLabels)];

/// Load both sides of a manifest and check that they line up scan by scan.
pub fn load_pairs(
    manifest: &LoadedManifest,
    gt_map: &ClassMap,
    pred_map: &ClassMap,
) -> Result<Vec<(SequenceLabels, SequenceLabels)>> {
    manifest.manifest.require_pairs()?;
    let gt = manifest.load_sequences(LabelSide::Gt, gt_map)?;
    let pred = manifest.load_sequences(LabelSide::Pred, pred_map)?;
    let pairs: Vec<_> = gt.into_iter().zip(pred).collect();
    for (g, p) in &pairs {
        check_pair(g, p)?;
    }
    Ok(pairs)
}

fn check_pair(gt: &SequenceLabels, pred: &SequenceLabels) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::FrameCountMismatch {
            sequence: gt.sequence_id.clone(),
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    for ((gt_token, g), (pred_token, p)) in gt.scans.iter().zip(&pred.scans) {
        if gt_token != pred_token {
            return Err(Error::TokenMismatch {
                sequence: gt.sequence_id.clone(),
                detail: format!(
                    "ground truth token {gt_token} is paired with prediction token {pred_token}"
                ),
            });
        }
        if g.point_count() != p.point_count() {
            return Err(Error::TokenMismatch {
                sequence: gt.sequence_id.clone(),
                detail: format!(
                    "token {gt_token}: ground truth has {} points, prediction has {}",
                    g.point_count(),
                    p.point_count()
                ),
            });
        }
    }
    Ok(())
}

/// Run `f` over every scan of every sequence, in parallel or serially, and
/// return the results grouped per sequence in input order.
fn per_scan<T, F>(pairs: &SequencePairs, parallel: bool, f: F) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(&ScanLabels, &ScanLabels) -> Result<T> + Sync,
{
    let flat: Vec<(usize, &ScanLabels, &ScanLabels)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(s, (g, p))| g.frames().zip(p.frames()).map(move |(g, p)| (s, g, p)))
        .collect();
    let results: Vec<(usize, T)> = if parallel {
        flat.par_iter()
            .map(|&(s, g, p)| f(g, p).map(|t| (s, t)))
            .collect::<Result<_>>()?
    } else {
        flat.iter()
            .map(|&(s, g, p)| f(g, p).map(|t| (s, t)))
            .collect::<Result<_>>()?
    };
    let mut grouped: Vec<Vec<T>> = pairs.iter().map(|_| Vec::new()).collect();
    for (s, t) in results {
        grouped[s].push(t);
    }
    Ok(grouped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class_id: u32,
    pub name: String,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSemantic {
    pub sequence_id: String,
    pub miou: Option<f64>,
    pub fwiou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticResult {
    pub miou: f64,
    pub fwiou: f64,
    pub per_class: Vec<ClassIou>,
    pub sequences: Vec<SequenceSemantic>,
    #[serde(skip)]
    pub confusion: Option<ConfusionMatrix>,
}

pub fn evaluate_semantic(
    pairs: &SequencePairs,
    map: &ClassMap,
    parallel: bool,
) -> Result<SemanticResult> {
    let per_seq = per_scan(pairs, parallel, |g, p| {
        let mut cm = ConfusionMatrix::for_map(map);
        cm.accumulate(g, p)?;
        Ok(cm)
    })?;
    let mut total = ConfusionMatrix::for_map(map);
    let mut sequences = Vec::with_capacity(pairs.len());
    for ((g, _), scans) in pairs.iter().zip(per_seq) {
        let mut cm = ConfusionMatrix::for_map(map);
        for s in &scans {
            cm.merge(s);
        }
        total.merge(&cm);
        sequences.push(SequenceSemantic {
            sequence_id: g.sequence_id.clone(),
            miou: cm.miou().ok(),
            fwiou: cm.fwiou().ok(),
        });
    }
    semantic_result(total, map, sequences)
}

fn semantic_result(
    cm: ConfusionMatrix,
    map: &ClassMap,
    sequences: Vec<SequenceSemantic>,
) -> Result<SemanticResult> {
    let per_class = cm
        .iou_per_class()
        .into_iter()
        .enumerate()
        .map(|(c, iou)| ClassIou {
            class_id: c as u32,
            name: map.name(c as u32).to_string(),
            iou,
        })
        .collect();
    Ok(SemanticResult {
        miou: cm.miou()?,
        fwiou: cm.fwiou()?,
        per_class,
        sequences,
        confusion: Some(cm),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePanoptic {
    pub sequence_id: String,
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub pq_dagger: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticEvaluation {
    #[serde(flatten)]
    pub result: PanopticResult,
    pub miou: f64,
    pub sequences: Vec<SequencePanoptic>,
}

pub fn evaluate_panoptic(
    pairs: &SequencePairs,
    map: &ClassMap,
    filter: &MinPointsFilter,
    parallel: bool,
) -> Result<PanopticEvaluation> {
    let per_seq = per_scan(pairs, parallel, |g, p| {
        let mut cm = ConfusionMatrix::for_map(map);
        cm.accumulate(g, p)?;
        let mut pq = PqStats::for_map(map);
        pq.accumulate(&panoptic::match_scan_filtered(g, p, map, filter)?);
        Ok((cm, pq))
    })?;

    let mut cm = ConfusionMatrix::for_map(map);
    let mut pq = PqStats::for_map(map);
    let mut sequences = Vec::with_capacity(pairs.len());
    for ((g, _), scans) in pairs.iter().zip(per_seq) {
        let mut seq_cm = ConfusionMatrix::for_map(map);
        let mut seq_pq = PqStats::for_map(map);
        for (c, p) in &scans {
            seq_cm.merge(c);
            seq_pq.merge(p);
        }
        let r = panoptic::finalize(&seq_pq, map, &seq_cm).ok();
        sequences.push(SequencePanoptic {
            sequence_id: g.sequence_id.clone(),
            pq: r.as_ref().map(|r| r.pq),
            sq: r.as_ref().map(|r| r.sq),
            rq: r.as_ref().map(|r| r.rq),
            pq_dagger: r.as_ref().map(|r| r.pq_dagger),
        });
        cm.merge(&seq_cm);
        pq.merge(&seq_pq);
    }
    Ok(PanopticEvaluation {
        result: panoptic::finalize(&pq, map, &cm)?,
        miou: cm.miou()?,
        sequences,
    })
}

/// Streaming panoptic evaluation for splits too large to hold in memory.
/// Results do not depend on how scans are batched or on `parallel`.
#[derive(Debug, Clone)]
pub struct PanopticAccumulator<'a> {
    map: &'a ClassMap,
    filter: MinPointsFilter,
    cm: ConfusionMatrix,
    pq: PqStats,
    scans: usize,
}

impl<'a> PanopticAccumulator<'a> {
    pub fn new(map: &'a ClassMap, filter: MinPointsFilter) -> Self {
        Self {
            map,
            filter,
            cm: ConfusionMatrix::for_map(map),
            pq: PqStats::for_map(map),
            scans: 0,
        }
    }

    pub fn push_scans(&mut self, scans: &[(ScanLabels, ScanLabels)], parallel: bool) -> Result<()> {
        let (map, filter) = (self.map, &self.filter);
        let one = |(g, p): &(ScanLabels, ScanLabels)| -> Result<(ConfusionMatrix, PqStats)> {
            let mut cm = ConfusionMatrix::for_map(map);
            cm.accumulate(g, p)?;
            let mut pq = PqStats::for_map(map);
            pq.accumulate(&panoptic::match_scan_filtered(g, p, map, filter)?);
            Ok((cm, pq))
        };
        let parts: Vec<_> = if parallel {
            scans.par_iter().map(one).collect::<Result<_>>()?
        } else {
            scans.iter().map(one).collect::<Result<_>>()?
        };
        for (cm, pq) in &parts {
            self.cm.merge(cm);
            self.pq.merge(pq);
        }
        self.scans += scans.len();
        Ok(())
    }

    pub fn scans(&self) -> usize {
        self.scans
    }

    pub fn finish(&self) -> Result<PanopticResult> {
        panoptic::finalize(&self.pq, self.map, &self.cm)
    }
}

/// Sequences are independent units of work; frames within one are serial.
pub fn evaluate_tracking(
    pairs: &SequencePairs,
    map: &ClassMap,
    config: &TrackingConfig,
    parallel: bool,
) -> Result<TrackingResult> {
    let run =
        |(g, p): &(SequenceLabels, SequenceLabels)| tracking::sequence_outcome(g, p, map, config);
    let outcomes = if parallel {
        pairs.par_iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        pairs.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    tracking::reduce_outcomes(outcomes, map, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuseMode {
    Gt,
    Pred,
}

impl FuseMode {
    fn side(self) -> LabelSide {
        match self {
            FuseMode::Gt => LabelSide::Gt,
            FuseMode::Pred => LabelSide::Pred,
        }
    }

    fn dir(self) -> &'static str {
        match self {
            FuseMode::Gt => "gt",
            FuseMode::Pred => "pred",
        }
    }

    fn boxes(self, scan: &ManifestScan) -> Option<&Path> {
        match self {
            FuseMode::Gt => scan.gt_boxes.as_deref(),
            FuseMode::Pred => scan.pred_boxes.as_deref(),
        }
    }
}

fn need<'a>(
    seq: &ManifestSequence,
    scan: &ManifestScan,
    what: &str,
    p: Option<&'a Path>,
) -> Result<&'a Path> {
    p.ok_or_else(|| Error::TokenMismatch {
        sequence: seq.sequence_id.clone(),
        detail: format!("token {} has no {what} file", scan.token),
    })
}

pub fn read_boxes(path: &Path) -> Result<Vec<Box3D>> {
    let boxes: Vec<Box3D> = io::read_json(path)?;
    boxes.into_iter().map(Box3D::validated).collect()
}

/// Per-class max-F1 thresholds computed from every scan's prediction and
/// ground-truth box files.
pub fn max_f1_filter(manifest: &LoadedManifest, max_distance: f64) -> Result<ScoreFilter> {
    let mut scans = Vec::new();
    for seq in &manifest.manifest.sequences {
        for scan in &seq.scans {
            let pred = need(seq, scan, "pred_boxes", scan.pred_boxes.as_deref())?;
            let gt = need(seq, scan, "gt_boxes", scan.gt_boxes.as_deref())?;
            scans.push((
                read_boxes(&manifest.resolve(pred))?,
                read_boxes(&manifest.resolve(gt))?,
            ));
        }
    }
    Ok(ScoreFilter::PerClass(fusion::max_f1_thresholds(
        &scans,
        max_distance,
    )))
}

/// What [`fuse_manifest`] wrote.
#[derive(Debug, Clone)]
pub struct FuseOutput {
    pub manifest_path: PathBuf,
    pub classmap_path: PathBuf,
    pub scans: usize,
}

/// Fuse every scan of `manifest` and write the results under `out_dir`:
/// fused labels (evaluation ids) in `<mode>/`, an identity `classmap.json`
/// over the evaluation space and a `manifest.json` whose fused side points
/// at the new files. Other paths are rewritten as absolute.
pub fn fuse_manifest(
    manifest: &LoadedManifest,
    map: &ClassMap,
    mode: FuseMode,
    filter: &ScoreFilter,
    out_dir: &Path,
    parallel: bool,
) -> Result<FuseOutput> {
    let absolute = |p: &Option<PathBuf>| -> Result<Option<PathBuf>> {
        p.as_ref()
            .map(|p| {
                let p = manifest.resolve(p);
                std::path::absolute(&p).map_err(|e| Error::io(p, e))
            })
            .transpose()
    };

    let mut jobs = Vec::new();
    let mut tokens = BTreeSet::new();
    for seq in &manifest.manifest.sequences {
        for scan in &seq.scans {
            if !tokens.insert(scan.token.as_str()) {
                return Err(Error::Manifest(format!(
                    "token {} appears in more than one sequence",
                    scan.token
                )));
            }
            jobs.push((seq, scan));
        }
    }

    let fuse_one =
        |(seq, scan): &(&ManifestSequence, &ManifestScan)| -> Result<(Vec<u8>, PathBuf)> {
            let labels = need(seq, scan, mode.dir(), scan.label_path(mode.side()))?;
            let points = need(seq, scan, "points", scan.points.as_deref())?;
            let boxes = match mode.boxes(scan) {
                Some(p) => read_boxes(&manifest.resolve(p))?,
                None => Vec::new(),
            };
            let semantic = remap(&io::read_labels(&manifest.resolve(labels))?, map)?;
            let points = io::read_points(&manifest.resolve(points))?;
            let fused = match mode {
                FuseMode::Gt => fusion::fuse_gt(&semantic, &points, &boxes, map),
                FuseMode::Pred => fusion::fuse_pred(&semantic, &points, &boxes, filter, map),
            }
            .map_err(|e| match e {
                Error::LengthMismatch { gt, pred } => Error::TokenMismatch {
                    sequence: seq.sequence_id.clone(),
                    detail: format!(
                        "token {}: label file has {gt} points, point file has {pred}",
                        scan.token
                    ),
                },
                other => other,
            })?;
            let rel = Path::new(mode.dir()).join(io::label_file_name(&scan.token));
            Ok((io::encode_u32_le(&fused.to_packed()?), rel))
        };
    let written: Vec<(Vec<u8>, PathBuf)> = if parallel {
        jobs.par_iter().map(fuse_one).collect::<Result<_>>()?
    } else {
        jobs.iter().map(fuse_one).collect::<Result<_>>()?
    };

    let mut out = Manifest::default();
    let mut k = 0;
    for seq in &manifest.manifest.sequences {
        let mut scans = Vec::with_capacity(seq.scans.len());
        for scan in &seq.scans {
            let mut s = ManifestScan {
                token: scan.token.clone(),
                gt: absolute(&scan.gt)?,
                pred: absolute(&scan.pred)?,
                points: absolute(&scan.points)?,
                gt_boxes: absolute(&scan.gt_boxes)?,
                pred_boxes: absolute(&scan.pred_boxes)?,
            };
            let fused = Some(written[k].1.clone());
            match mode {
                FuseMode::Gt => s.gt = fused,
                FuseMode::Pred => s.pred = fused,
            }
            scans.push(s);
            k += 1;
        }
        out.sequences.push(ManifestSequence {
            sequence_id: seq.sequence_id.clone(),
            scans,
        });
    }

    for (bytes, rel) in &written {
        io::write_atomic(&out_dir.join(rel), bytes)?;
    }
    let classmap_path = out_dir.join("classmap.json");
    io::write_json(&classmap_path, &map.eval_space().to_document())?;
    let manifest_path = out_dir.join("manifest.json");
    io::write_json(&manifest_path, &out)?;
    Ok(FuseOutput {
        manifest_path,
        classmap_path,
        scans: written.len(),
    })
}
