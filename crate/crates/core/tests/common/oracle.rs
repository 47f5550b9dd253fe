//! Brute-force reference implementations of every metric, written from the
//! definitions with point sets and all-pairs loops. Shares no code with the
//! library beyond plain data.

use std::collections::{BTreeMap, BTreeSet};

type Points = BTreeSet<usize>;

/// Class layout: `things[c]` tells whether class `c` is a thing class; any
/// id `>= things.len()` is ignore.
#[derive(Debug, Clone)]
pub struct Layout {
    pub things: Vec<bool>,
}

impl Layout {
    fn n(&self) -> u32 {
        self.things.len() as u32
    }
    fn is_thing(&self, c: u32) -> bool {
        (c as usize) < self.things.len() && self.things[c as usize]
    }
    fn is_stuff(&self, c: u32) -> bool {
        (c as usize) < self.things.len() && !self.things[c as usize]
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub gs: Vec<u32>,
    pub gi: Vec<u32>,
    pub ps: Vec<u32>,
    pub pi: Vec<u32>,
}

/// Thresholds are "keep thing segments with more than t points".
#[derive(Debug, Clone, Copy)]
pub struct Filter {
    pub gt: usize,
    pub pred: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScores {
    pub miou: Option<f64>,
    pub fwiou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub pq_dagger: Option<f64>,
    /// `(pq, sq, rq, tp)` for every present class.
    pub per_class_pq: BTreeMap<u32, (f64, f64, f64, u64)>,
    pub ptq: Option<f64>,
    pub tq: Option<f64>,
    pub pat: Option<f64>,
    pub s_assoc: Option<f64>,
    pub lstq: Option<f64>,
    pub total_ids: u64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

// ---------------------------------------------------------------- semantic

pub fn class_ious(layout: &Layout, frames: &[&Frame]) -> Vec<Option<f64>> {
    (0..layout.n())
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for f in frames {
                for i in 0..f.gs.len() {
                    let (g, p) = (f.gs[i], f.ps[i]);
                    if g >= layout.n() {
                        continue;
                    }
                    if g == c && p == c {
                        tp += 1;
                    } else if g == c {
                        fn_ += 1;
                    } else if p == c {
                        fp += 1;
                    }
                }
            }
            let d = tp + fp + fn_;
            (d > 0).then(|| tp as f64 / d as f64)
        })
        .collect()
}

fn fwiou(layout: &Layout, frames: &[&Frame], ious: &[Option<f64>]) -> Option<f64> {
    let mut total = 0u64;
    let mut count = vec![0u64; layout.things.len()];
    for f in frames {
        for &g in &f.gs {
            if g < layout.n() {
                total += 1;
                count[g as usize] += 1;
            }
        }
    }
    if total == 0 || ious.iter().all(Option::is_none) {
        return None;
    }
    Some(
        ious.iter()
            .enumerate()
            .filter_map(|(c, iou)| iou.map(|v| count[c] as f64 / total as f64 * v))
            .sum(),
    )
}

// ---------------------------------------------------------------- segments

#[derive(Debug, Clone)]
struct Seg {
    class: u32,
    inst: u32,
    points: Points,
}

fn segments(layout: &Layout, sem: &[u32], inst: &[u32], min_points: usize) -> Vec<Seg> {
    let mut out = Vec::new();
    for c in 0..layout.n() {
        if layout.is_thing(c) {
            let ids: BTreeSet<u32> = (0..sem.len())
                .filter(|&i| sem[i] == c && inst[i] != 0)
                .map(|i| inst[i])
                .collect();
            for id in ids {
                let points: Points = (0..sem.len())
                    .filter(|&i| sem[i] == c && inst[i] == id)
                    .collect();
                if points.len() > min_points {
                    out.push(Seg {
                        class: c,
                        inst: id,
                        points,
                    });
                }
            }
        } else {
            let points: Points = (0..sem.len()).filter(|&i| sem[i] == c).collect();
            if !points.is_empty() {
                out.push(Seg {
                    class: c,
                    inst: 0,
                    points,
                });
            }
        }
    }
    out
}

fn void_points(layout: &Layout, f: &Frame, gt_segs: &[Seg]) -> Points {
    (0..f.gs.len())
        .filter(|&i| {
            let g = f.gs[i];
            if g >= layout.n() {
                return true;
            }
            layout.is_thing(g)
                && !gt_segs
                    .iter()
                    .any(|s| s.class == g && s.points.contains(&i))
        })
        .collect()
}

fn overlap(g: &Points, p: &Points, void: &Points) -> (u64, u64) {
    let p_eff: Points = p.difference(void).copied().collect();
    let inter = g.intersection(&p_eff).count() as u64;
    let union = g.union(&p_eff).count() as u64;
    (inter, union)
}

fn is_match(inter: u64, union: u64) -> bool {
    union > 0 && inter as f64 / union as f64 > 0.5
}

#[derive(Debug, Default, Clone)]
struct Tally {
    iou: f64,
    tp: u64,
    fp: u64,
    fn_: u64,
    ids: u64,
}

struct FrameMatch {
    /// `(class, gt inst, pred inst, iou)`
    tp: Vec<(u32, u32, u32, f64)>,
    fp: Vec<u32>,
    fn_: Vec<u32>,
}

struct FrameData {
    gt_segs: Vec<Seg>,
    pred_segs: Vec<Seg>,
    void: Points,
}

fn frame_data(layout: &Layout, f: &Frame, filter: Filter) -> FrameData {
    let gt_segs = segments(layout, &f.gs, &f.gi, filter.gt);
    let pred_segs = segments(layout, &f.ps, &f.pi, filter.pred);
    let void = void_points(layout, f, &gt_segs);
    FrameData {
        gt_segs,
        pred_segs,
        void,
    }
}

fn match_frame(d: &FrameData) -> FrameMatch {
    let mut tp = Vec::new();
    let mut gt_hit = vec![false; d.gt_segs.len()];
    let mut pred_hit = vec![false; d.pred_segs.len()];
    for (a, g) in d.gt_segs.iter().enumerate() {
        for (b, p) in d.pred_segs.iter().enumerate() {
            if g.class != p.class {
                continue;
            }
            let (inter, union) = overlap(&g.points, &p.points, &d.void);
            if is_match(inter, union) {
                assert!(
                    !gt_hit[a] && !pred_hit[b],
                    "oracle found a non-unique match"
                );
                gt_hit[a] = true;
                pred_hit[b] = true;
                tp.push((g.class, g.inst, p.inst, inter as f64 / union as f64));
            }
        }
    }
    let fn_ = d
        .gt_segs
        .iter()
        .zip(&gt_hit)
        .filter(|(_, h)| !**h)
        .map(|(g, _)| g.class)
        .collect();
    let fp = d
        .pred_segs
        .iter()
        .zip(&pred_hit)
        .filter(|(p, h)| {
            let on_void = p.points.intersection(&d.void).count();
            !**h && 2 * on_void <= p.points.len()
        })
        .map(|(p, _)| p.class)
        .collect();
    FrameMatch { tp, fp, fn_ }
}

/// Class-agnostic instance masks built from the retained thing segments.
fn id_masks(segs: &[Seg]) -> BTreeMap<u32, Points> {
    let mut m: BTreeMap<u32, Points> = BTreeMap::new();
    for s in segs.iter().filter(|s| s.inst != 0) {
        m.entry(s.inst).or_default().extend(&s.points);
    }
    m
}

// ---------------------------------------------------------------- all metrics

/// Evaluate every metric over `sequences`. `gap_counts` selects whether a
/// presence gap between two occurrences of a track counts as a switch.
pub fn evaluate(
    layout: &Layout,
    sequences: &[Vec<Frame>],
    filter: Filter,
    gap_counts: bool,
) -> OracleScores {
    let all_frames: Vec<&Frame> = sequences.iter().flatten().collect();
    let ious = class_ious(layout, &all_frames);
    let miou = mean(&ious.iter().flatten().copied().collect::<Vec<_>>());
    let fw = fwiou(layout, &all_frames, &ious);

    let mut tally: BTreeMap<u32, Tally> = BTreeMap::new();
    let mut track_tq = Vec::new();
    let mut assoc = Vec::new();
    let mut total_ids = 0u64;

    for seq in sequences {
        let data: Vec<FrameData> = seq.iter().map(|f| frame_data(layout, f, filter)).collect();

        // PQ and PTQ
        let mut last: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for d in &data {
            let m = match_frame(d);
            for &(c, gi, pi, iou) in &m.tp {
                let t = tally.entry(c).or_default();
                t.tp += 1;
                t.iou += iou;
                if layout.is_thing(c) {
                    if let Some(prev) = last.insert((c, gi), pi) {
                        if prev != pi {
                            t.ids += 1;
                        }
                    }
                }
            }
            for &c in &m.fp {
                tally.entry(c).or_default().fp += 1;
            }
            for &c in &m.fn_ {
                tally.entry(c).or_default().fn_ += 1;
            }
        }

        // frame-wise instance matching for TQ
        let gt_masks: Vec<BTreeMap<u32, Points>> =
            data.iter().map(|d| id_masks(&d.gt_segs)).collect();
        let pred_masks: Vec<BTreeMap<u32, Points>> =
            data.iter().map(|d| id_masks(&d.pred_segs)).collect();
        let gt_ids: BTreeSet<u32> = gt_masks.iter().flat_map(|m| m.keys().copied()).collect();
        let pred_ids: BTreeSet<u32> = pred_masks.iter().flat_map(|m| m.keys().copied()).collect();

        let matched_in = |f: usize, g: u32| -> Option<u32> {
            let gm = &gt_masks[f][&g];
            let hits: Vec<u32> = pred_masks[f]
                .iter()
                .filter(|(_, pm)| {
                    let (inter, union) = overlap(gm, pm, &data[f].void);
                    is_match(inter, union)
                })
                .map(|(&p, _)| p)
                .collect();
            assert!(hits.len() <= 1);
            hits.first().copied()
        };

        for &g in &gt_ids {
            let present: Vec<usize> = (0..seq.len())
                .filter(|&f| gt_masks[f].contains_key(&g))
                .collect();
            let matches: Vec<Option<u32>> = present.iter().map(|&f| matched_in(f, g)).collect();
            let len = present.len() as f64;
            let mut as_sum = 0.0;
            for &p in &pred_ids {
                let tpa = matches.iter().filter(|m| **m == Some(p)).count() as f64;
                if tpa == 0.0 {
                    continue;
                }
                let pred_frames = (0..seq.len())
                    .filter(|&f| pred_masks[f].contains_key(&p))
                    .count() as f64;
                let fna = len - tpa;
                let fpa = pred_frames - tpa;
                as_sum += tpa * tpa / (tpa + fna + fpa);
            }
            let as_g = as_sum / len;
            let mut ids = 0u64;
            for k in 1..present.len() {
                let gap = gap_counts && present[k] != present[k - 1] + 1;
                let switch = match (matches[k - 1], matches[k]) {
                    (Some(a), Some(b)) => a != b || gap,
                    _ => true,
                };
                if switch {
                    ids += 1;
                }
            }
            total_ids += ids;
            let n_ids = (present.len().saturating_sub(1)).max(1) as f64;
            track_tq.push(((1.0 - ids as f64 / n_ids).max(0.0) * as_g).sqrt());
        }

        // point-level tubes
        for &g in &gt_ids {
            let gt_size: usize = gt_masks
                .iter()
                .map(|m| m.get(&g).map_or(0, BTreeSet::len))
                .sum();
            let mut sum = 0.0;
            for &p in &pred_ids {
                let mut inter = 0usize;
                let mut pred_size = 0usize;
                for f in 0..seq.len() {
                    if let Some(pm) = pred_masks[f].get(&p) {
                        let eff: Points = pm.difference(&data[f].void).copied().collect();
                        pred_size += eff.len();
                        if let Some(gm) = gt_masks[f].get(&g) {
                            inter += gm.intersection(&eff).count();
                        }
                    }
                }
                if inter > 0 {
                    let union = (gt_size + pred_size - inter) as f64;
                    sum += inter as f64 * inter as f64 / union;
                }
            }
            assoc.push(sum / gt_size as f64);
        }
    }

    let present: Vec<(u32, &Tally)> = tally
        .iter()
        .filter(|(_, t)| t.tp + t.fp + t.fn_ > 0)
        .map(|(&c, t)| (c, t))
        .collect();
    let mut per_class_pq = BTreeMap::new();
    let mut pqs = Vec::new();
    let mut sqs = Vec::new();
    let mut rqs = Vec::new();
    let mut daggers = Vec::new();
    let mut ptqs = Vec::new();
    for &(c, t) in &present {
        let denom = t.tp as f64 + 0.5 * t.fp as f64 + 0.5 * t.fn_ as f64;
        let pq = t.iou / denom;
        let sq = if t.tp > 0 { t.iou / t.tp as f64 } else { 0.0 };
        let rq = t.tp as f64 / denom;
        per_class_pq.insert(c, (pq, sq, rq, t.tp));
        pqs.push(pq);
        sqs.push(sq);
        rqs.push(rq);
        daggers.push(if layout.is_stuff(c) {
            ious[c as usize].unwrap_or(0.0)
        } else {
            pq
        });
        ptqs.push(((t.iou - t.ids as f64) / denom).max(0.0));
    }
    let pq = mean(&pqs);
    let tq = mean(&track_tq);
    let pat = pq.map(|pq| match tq {
        Some(tq) if pq + tq > 0.0 => 2.0 * pq * tq / (pq + tq),
        Some(_) => 0.0,
        None => pq,
    });
    let s_assoc = mean(&assoc);
    let lstq = miou.map(|s_cls| match s_assoc {
        Some(a) => (a * s_cls).sqrt(),
        None => s_cls,
    });
    OracleScores {
        miou,
        fwiou: fw,
        per_class_iou: ious,
        pq,
        sq: mean(&sqs),
        rq: mean(&rqs),
        pq_dagger: mean(&daggers),
        per_class_pq,
        ptq: mean(&ptqs),
        tq,
        pat,
        s_assoc,
        lstq,
        total_ids,
    }
}

// ---------------------------------------------------------------- geometry

/// Point-in-oriented-box test by explicit inverse rotation.
pub fn inside_box(p: [f64; 3], center: [f64; 3], size: [f64; 3], yaw: f64) -> bool {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    let dz = p[2] - center[2];
    let (s, c) = (-yaw).sin_cos();
    let lx = c * dx - s * dy;
    let ly = s * dx + c * dy;
    lx.abs() <= size[0] / 2.0 && ly.abs() <= size[1] / 2.0 && dz.abs() <= size[2] / 2.0
}
