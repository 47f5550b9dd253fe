//! Versioned metric report and its human-readable table rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{PanopticEvaluation, SemanticResult};
use crate::tracking::TrackingResult;

pub const REPORT_SCHEMA: &str = "report_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub schema: String,
    pub toolkit_version: String,
    pub command: String,
    /// Effective configuration; `config_digest` is the SHA-256 of its
    /// compact JSON serialization.
    pub config: serde_json::Value,
    pub config_digest: String,
    pub manifest_digest: Option<String>,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ReportMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<SemanticResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panoptic: Option<PanopticEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingResult>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ReportMeta {
    pub fn new(command: &str, config: serde_json::Value, manifest_bytes: Option<&[u8]>) -> Self {
        let compact = serde_json::to_vec(&config).expect("JSON values always serialize");
        Self {
            schema: REPORT_SCHEMA.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: sha256_hex(&compact),
            config,
            manifest_digest: manifest_bytes.map(sha256_hex),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

impl MetricReport {
    pub fn new(meta: ReportMeta) -> Self {
        Self {
            meta,
            semantic: None,
            panoptic: None,
            tracking: None,
        }
    }

    /// The numeric sections only, for comparing two runs.
    pub fn numeric_eq(&self, other: &MetricReport) -> bool {
        self.semantic == other.semantic
            && self.panoptic == other.panoptic
            && self.tracking == other.tracking
    }
}

/// `0.8472` renders as `84.7`.
pub fn percent(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn opt_percent(v: Option<f64>) -> String {
    v.map(percent).unwrap_or_else(|| "n/a".to_string())
}

/// Render every section present as a plain-text table of percentages.
pub fn render_table(report: &MetricReport) -> String {
    let mut out = String::new();
    if let Some(s) = &report.semantic {
        let _ = writeln!(out, "semantic");
        let _ = writeln!(out, "  {:<24} {:>6}", "class", "IoU");
        for c in &s.per_class {
            let _ = writeln!(out, "  {:<24} {:>6}", c.name, opt_percent(c.iou));
        }
        let _ = writeln!(out, "  {:<24} {:>6}", "mIoU", percent(s.miou));
        let _ = writeln!(out, "  {:<24} {:>6}", "fwIoU", percent(s.fwiou));
    }
    if let Some(p) = &report.panoptic {
        let r = &p.result;
        let _ = writeln!(out, "panoptic");
        let _ = writeln!(
            out,
            "  {:<24} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}",
            "class", "PQ", "SQ", "RQ", "TP", "FP", "FN"
        );
        for c in &r.per_class {
            let _ = writeln!(
                out,
                "  {:<24} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}",
                c.name,
                percent(c.pq),
                percent(c.sq),
                percent(c.rq),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        let _ = writeln!(
            out,
            "  {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "PQ", "PQ†", "RQ", "SQ", "PQTh", "RQTh", "SQTh", "PQSt", "RQSt", "SQSt", "mIoU"
        );
        let _ = writeln!(
            out,
            "  {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            percent(r.pq),
            percent(r.pq_dagger),
            percent(r.rq),
            percent(r.sq),
            opt_percent(r.pq_th),
            opt_percent(r.rq_th),
            opt_percent(r.sq_th),
            opt_percent(r.pq_st),
            opt_percent(r.rq_st),
            opt_percent(r.sq_st),
            percent(p.miou)
        );
    }
    if let Some(t) = &report.tracking {
        let s = &t.scores;
        let _ = writeln!(out, "tracking");
        let _ = writeln!(
            out,
            "  {:>6} {:>6} {:>6} {:>6} {:>6} {:>7} {:>7} {:>6}",
            "PAT", "PQ", "TQ", "LSTQ", "PTQ", "S_assoc", "S_cls", "IDS"
        );
        let _ = writeln!(
            out,
            "  {:>6} {:>6} {:>6} {:>6} {:>6} {:>7} {:>7} {:>6}",
            percent(s.pat),
            percent(s.pq),
            opt_percent(s.tq),
            percent(s.lstq),
            percent(s.ptq),
            opt_percent(s.s_assoc),
            percent(s.s_cls),
            s.total_ids
        );
        if t.sequences.len() > 1 {
            let _ = writeln!(
                out,
                "  {:<24} {:>6} {:>6} {:>6}",
                "sequence", "PAT", "LSTQ", "PTQ"
            );
            for q in &t.sequences {
                let (pat, lstq, ptq) = match &q.scores {
                    Some(s) => (percent(s.pat), percent(s.lstq), percent(s.ptq)),
                    None => ("n/a".into(), "n/a".into(), "n/a".into()),
                };
                let _ = writeln!(
                    out,
                    "  {:<24} {:>6} {:>6} {:>6}",
                    q.sequence_id, pat, lstq, ptq
                );
            }
        }
    }
    out
}
