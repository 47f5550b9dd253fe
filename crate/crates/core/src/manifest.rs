//! Dataset manifest: sequences, their ordered scan tokens and per-scan file paths.
//!
//! ```json
//! {
//!   "sequences": [
//!     {
//!       "sequence_id": "scene-0001",
//!       "scans": [
//!         { "token": "a1", "gt": "gt/a1.panoptic.bin", "pred": "pred/a1.panoptic.bin" }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the directory containing the manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::labels::{remap, ClassMap, ScanLabels, SequenceLabels};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestScan {
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_boxes: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_boxes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub sequence_id: String,
    pub scans: Vec<ManifestScan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub sequences: Vec<ManifestSequence>,
}

/// Which label file of a scan entry to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSide {
    Gt,
    Pred,
}

impl LabelSide {
    fn name(self) -> &'static str {
        match self {
            LabelSide::Gt => "gt",
            LabelSide::Pred => "pred",
        }
    }
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
    /// Raw bytes of the manifest document, kept for digesting.
    pub bytes: Vec<u8>,
}

impl ManifestScan {
    pub fn label_path(&self, side: LabelSide) -> Option<&Path> {
        match side {
            LabelSide::Gt => self.gt.as_deref(),
            LabelSide::Pred => self.pred.as_deref(),
        }
    }
}

impl Manifest {
    /// Structural checks: non-empty ids, unique sequence ids and tokens.
    pub fn validate(&self) -> Result<()> {
        let mut seq_ids = BTreeSet::new();
        for seq in &self.sequences {
            if seq.sequence_id.is_empty() {
                return Err(Error::Manifest("sequence with empty sequence_id".into()));
            }
            if !seq_ids.insert(seq.sequence_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate sequence_id {}",
                    seq.sequence_id
                )));
            }
            let mut tokens = BTreeSet::new();
            for scan in &seq.scans {
                if scan.token.is_empty() {
                    return Err(Error::Manifest(format!(
                        "sequence {} has a scan with an empty token",
                        seq.sequence_id
                    )));
                }
                if !tokens.insert(scan.token.as_str()) {
                    return Err(Error::Manifest(format!(
                        "sequence {} lists token {} twice",
                        seq.sequence_id, scan.token
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every scan must name both a ground-truth and a prediction file.
    pub fn require_pairs(&self) -> Result<()> {
        for seq in &self.sequences {
            for scan in &seq.scans {
                for side in [LabelSide::Gt, LabelSide::Pred] {
                    if scan.label_path(side).is_none() {
                        return Err(Error::TokenMismatch {
                            sequence: seq.sequence_id.clone(),
                            detail: format!(
                                "token {} has no {} label file",
                                scan.token,
                                side.name()
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        manifest.validate()?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            manifest,
            base_dir,
            bytes,
        })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.base_dir.join(rel)
        }
    }

    /// Load and remap one side of every sequence. Scans load in parallel.
    pub fn load_sequences(&self, side: LabelSide, map: &ClassMap) -> Result<Vec<SequenceLabels>> {
        self.manifest
            .sequences
            .iter()
            .map(|seq| {
                let scans = seq
                    .scans
                    .par_iter()
                    .map(|scan| {
                        let rel = scan.label_path(side).ok_or_else(|| Error::TokenMismatch {
                            sequence: seq.sequence_id.clone(),
                            detail: format!(
                                "token {} has no {} label file",
                                scan.token,
                                side.name()
                            ),
                        })?;
                        let raw = io::read_labels(&self.resolve(rel))?;
                        let labels: ScanLabels = remap(&raw, map)?;
                        Ok((scan.token.clone(), labels))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SequenceLabels {
                    sequence_id: seq.sequence_id.clone(),
                    scans,
                })
            })
            .collect()
    }
}
