//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one `[PASS]` or `[FAIL]` line.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pantrack_core::eval::{self, PanopticAccumulator};
use pantrack_core::panoptic::match_scan_filtered;
use pantrack_core::report::percent;
use pantrack_core::scenario::{
    self, generate, permute_frames, PredAction, ScenarioSpec, TrackSpec,
};
use pantrack_core::tracking::{compute_pat, TrackingScores};
use pantrack_core::{
    fuse_gt, fuse_pred, Box3D, ClassMap, FilterTarget, GapMode, MinPointsFilter, Point, ScanLabels,
    ScoreFilter, SequenceLabels, TrackingConfig,
};
use rand::Rng;

use common::oracle::{self, Filter};
use common::random;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

// ------------------------------------------------------------------ helpers

fn single_track(plan: &[PredAction]) -> ScenarioSpec {
    let mut t = TrackSpec::constant(1, 0, 1, plan.len(), 1);
    t.plan = plan.to_vec();
    ScenarioSpec::new(plan.len(), vec![t])
}

fn ids(pattern: &str) -> Vec<PredAction> {
    pattern
        .chars()
        .map(|c| match c {
            'V' => PredAction::Void,
            '-' => PredAction::Drop,
            c => PredAction::Id(c as u32 - 'a' as u32 + 1),
        })
        .collect()
}

fn track_scores(spec: &ScenarioSpec) -> TrackingScores {
    let pair = generate(spec).expect("valid scenario");
    score_pair(&pair.gt, &pair.pred, &spec.class_map())
}

fn score_pair(gt: &SequenceLabels, pred: &SequenceLabels, map: &ClassMap) -> TrackingScores {
    let pairs = vec![(gt.clone(), pred.clone())];
    eval::evaluate_tracking(&pairs, map, &TrackingConfig::default(), false)
        .expect("tracking evaluation succeeds")
        .scores
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn opt_close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}

// ----------------------------------------------------------------- criteria

fn perfect_identity() -> Outcome {
    let start = Instant::now();
    let mut specs = vec![
        ScenarioSpec::new(7, vec![TrackSpec::constant(1, 0, 1, 7, 1)]),
        ScenarioSpec::new(
            7,
            vec![
                TrackSpec::constant(1, 0, 1, 3, 4),
                TrackSpec::constant(2, 0, 4, 7, 9),
            ],
        ),
        ScenarioSpec::new(
            5,
            vec![
                TrackSpec::constant(3, 1, 2, 5, 3),
                TrackSpec::constant(5, 2, 1, 4, 8),
                TrackSpec::constant(6, 0, 3, 3, 6),
            ],
        )
        .with_seed(17),
    ];
    let mut rng = random::rng(1);
    for s in 0..20u64 {
        let frames = rng.gen_range(1..=8);
        let tracks = (1..=rng.gen_range(1..=5u32))
            .map(|t| {
                let first = rng.gen_range(1..=frames);
                let last = rng.gen_range(first..=frames);
                let mut spec =
                    TrackSpec::constant(t, rng.gen_range(0..3), first, last, rng.gen_range(1..999));
                spec.points_per_frame = rng.gen_range(16..60);
                spec
            })
            .collect();
        // distinct predicted ids keep the prediction an exact relabeling
        let mut spec = ScenarioSpec::new(frames, tracks).with_seed(s);
        for (k, t) in spec.tracks.iter_mut().enumerate() {
            let id = 100 + k as u32;
            t.plan.iter_mut().for_each(|a| *a = PredAction::Id(id));
        }
        specs.push(spec);
    }

    for spec in &specs {
        let map = spec.class_map();
        let pair = generate(spec).map_err(|e| e.to_string())?;
        let pairs = vec![(pair.gt.clone(), pair.pred.clone())];
        let sem = eval::evaluate_semantic(&pairs, &map, false).map_err(|e| e.to_string())?;
        let pan = eval::evaluate_panoptic(&pairs, &map, &MinPointsFilter::default(), false)
            .map_err(|e| e.to_string())?;
        let trk = eval::evaluate_tracking(&pairs, &map, &TrackingConfig::default(), false)
            .map_err(|e| e.to_string())?;
        let r = &pan.result;
        let values = [
            ("mIoU", sem.miou),
            ("fwIoU", sem.fwiou),
            ("PQ", r.pq),
            ("SQ", r.sq),
            ("RQ", r.rq),
            ("PQ†", r.pq_dagger),
            ("PTQ", trk.scores.ptq),
            ("LSTQ", trk.scores.lstq),
            ("PAT", trk.scores.pat),
        ];
        for (name, v) in values {
            ensure!(v == 1.0, "{name} = {v:e} on scenario seed {}", spec.seed);
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "{} scenarios, every metric exactly 1.0 in {elapsed:.2?}",
        specs.len()
    ))
}

fn harmonic_table() -> Outcome {
    let rows = [
        ((0.5, 0.5), "50.0"),
        ((0.9, 0.1), "18.0"),
        ((0.9, 0.8), "84.7"),
    ];
    for ((pq, tq), want) in rows {
        let got = percent(compute_pat(pq, tq));
        ensure!(
            got == want,
            "PAT({pq}, {tq}) renders {got}, expected {want}"
        );
    }
    let mut rng = random::rng(2);
    for _ in 0..1000 {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let h = compute_pat(a, b);
        let g = (a * b).sqrt();
        let m = (a + b) / 2.0;
        ensure!(
            h <= g + 1e-15 && g <= m + 1e-15,
            "ordering broken at ({a}, {b}): {h} {g} {m}"
        );
    }
    Ok("table rows 50.0 / 18.0 / 84.7; H <= G <= A on 1000 pairs".into())
}

fn frame_permutation() -> Outcome {
    let spec = single_track(&ids("aaaabbb"));
    let pair = generate(&spec).map_err(|e| e.to_string())?;
    let alt = permute_frames(&pair, &[0, 4, 1, 5, 2, 6, 3]).map_err(|e| e.to_string())?;
    let map = spec.class_map();
    let c = score_pair(&pair.gt, &pair.pred, &map);
    let a = score_pair(&alt.gt, &alt.pred, &map);
    ensure!(
        c.lstq.to_bits() == a.lstq.to_bits(),
        "LSTQ {} vs {}",
        c.lstq,
        a.lstq
    );
    ensure!(
        a.pat < c.pat,
        "PAT alternating {} !< consecutive {}",
        a.pat,
        c.pat
    );
    ensure!(
        a.ptq < c.ptq,
        "PTQ alternating {} !< consecutive {}",
        a.ptq,
        c.ptq
    );
    Ok(format!(
        "consecutive PAT {} PTQ {} LSTQ {}; alternating PAT {} PTQ {} LSTQ {}",
        percent(c.pat),
        percent(c.ptq),
        percent(c.lstq),
        percent(a.pat),
        percent(a.ptq),
        percent(a.lstq)
    ))
}

fn id_transfer() -> Outcome {
    let spec = ScenarioSpec::new(
        7,
        vec![
            TrackSpec::constant(1, 0, 1, 3, 1),
            TrackSpec::constant(2, 0, 4, 7, 2),
        ],
    );
    let spec = scenario::transfer_id(&spec, 1, 2).map_err(|e| e.to_string())?;
    let s = track_scores(&spec);
    ensure!(s.ptq == 1.0, "PTQ = {}", s.ptq);
    ensure!(s.pat < 1.0 && s.lstq < 1.0, "PAT {} LSTQ {}", s.pat, s.lstq);
    ensure!(
        close(s.pat, 0.827, 0.0005),
        "PAT = {} (expected 0.827 +- 0.0005)",
        s.pat
    );
    Ok(format!(
        "PTQ {} PAT {} ({:.4}) LSTQ {}",
        percent(s.ptq),
        percent(s.pat),
        s.pat,
        percent(s.lstq)
    ))
}

fn split_point() -> Outcome {
    let base = ScenarioSpec::new(7, vec![TrackSpec::constant(1, 0, 1, 7, 1)]);
    let short = scenario::split_track(&base, 1, 5, 2).map_err(|e| e.to_string())?;
    let long = scenario::split_track(&base, 1, 6, 2).map_err(|e| e.to_string())?;
    let (s, l) = (track_scores(&short), track_scores(&long));
    ensure!(l.pat > s.pat, "PAT a5b2 {} !> a4b3 {}", l.pat, s.pat);
    ensure!(l.lstq > s.lstq, "LSTQ a5b2 {} !> a4b3 {}", l.lstq, s.lstq);
    ensure!(close(l.ptq, s.ptq, 1e-15), "PTQ {} vs {}", l.ptq, s.ptq);
    Ok(format!(
        "a4b3 PAT {} LSTQ {} PTQ {}; a5b2 PAT {} LSTQ {} PTQ {}",
        percent(s.pat),
        percent(s.lstq),
        percent(s.ptq),
        percent(l.pat),
        percent(l.lstq),
        percent(l.ptq)
    ))
}

fn voided_frames() -> Outcome {
    let wrong = single_track(&ids("aaaabbb")).without_background();
    let voided = scenario::void_instances(&single_track(&ids("aaaaaaa")), 1, 5..=7)
        .map_err(|e| e.to_string())?
        .without_background();
    let (w, v) = (track_scores(&wrong), track_scores(&voided));
    ensure!(close(w.pat, 0.789, 1e-3), "wrong-id PAT {}", w.pat);
    ensure!(close(v.pat, 0.520, 1e-3), "voided PAT {}", v.pat);
    ensure!(v.pat < w.pat, "PAT did not decrease");
    ensure!(v.lstq < w.lstq, "LSTQ {} !< {}", v.lstq, w.lstq);
    ensure!(v.ptq < w.ptq, "PTQ {} !< {}", v.ptq, w.ptq);
    // same contrast with the default background class
    let wrong_bg = track_scores(&single_track(&ids("aaaabbb")));
    let voided_bg = track_scores(
        &scenario::void_instances(&single_track(&ids("aaaaaaa")), 1, 5..=7)
            .map_err(|e| e.to_string())?,
    );
    ensure!(
        voided_bg.pat < wrong_bg.pat && voided_bg.lstq < wrong_bg.lstq,
        "background variant PAT {} -> {}",
        wrong_bg.pat,
        voided_bg.pat
    );
    Ok(format!(
        "PAT {:.4} -> {:.4} (with background {:.4} -> {:.4}), LSTQ {} -> {}, PTQ {} -> {}",
        w.pat,
        v.pat,
        wrong_bg.pat,
        voided_bg.pat,
        percent(w.lstq),
        percent(v.lstq),
        percent(w.ptq),
        percent(v.ptq)
    ))
}

fn random_filter(rng: &mut rand_chacha::ChaCha8Rng) -> (MinPointsFilter, Filter) {
    let t = rng.gen_range(0..=3);
    let target = [FilterTarget::Gt, FilterTarget::Pred, FilterTarget::Both][rng.gen_range(0..3)];
    let f = MinPointsFilter {
        min_points: t,
        apply_to: target,
    };
    (
        f,
        Filter {
            gt: f.gt_threshold(),
            pred: f.pred_threshold(),
        },
    )
}

fn oracle_equivalence() -> Outcome {
    const TOL: f64 = 1e-9;
    let start = Instant::now();
    let layout = random::layout();
    let map = random::class_map();
    let mut rng = random::rng(7);
    let mut sequences = 0;
    let mut skipped = 0;
    let (mut switches, mut partial) = (0u64, 0usize);
    for trial in 0..600 {
        let n_seq = rng.gen_range(1..=2);
        let seqs: Vec<_> = (0..n_seq)
            .map(|_| random::sequence(&mut rng, 5, 30, 4))
            .collect();
        sequences += n_seq;
        let (filter, ofilter) = random_filter(&mut rng);
        let gap = rng.gen_bool(0.5);
        let config = TrackingConfig {
            filter,
            gap_mode: if gap { GapMode::Count } else { GapMode::Skip },
            ..Default::default()
        };
        let pairs: Vec<_> = seqs
            .iter()
            .enumerate()
            .map(|(k, s)| random::to_labels(&format!("t{trial}s{k}"), s))
            .collect();
        let want = oracle::evaluate(&layout, &seqs, ofilter, gap);

        let sem = eval::evaluate_semantic(&pairs, &map, false);
        let pan = eval::evaluate_panoptic(&pairs, &map, &filter, false);
        let trk = eval::evaluate_tracking(&pairs, &map, &config, false);
        let (Some(miou), Some(pq)) = (want.miou, want.pq) else {
            ensure!(
                sem.is_err() || pan.is_err(),
                "trial {trial}: oracle has no present class"
            );
            skipped += 1;
            continue;
        };
        let (sem, pan, trk) = match (sem, pan, trk) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (a, b, c) => {
                return Err(format!(
                    "trial {trial}: {:?} {:?} {:?}",
                    a.err(),
                    b.err(),
                    c.err()
                ))
            }
        };
        let r = &pan.result;
        let s = &trk.scores;
        let checks = [
            ("mIoU", Some(sem.miou), Some(miou)),
            ("fwIoU", Some(sem.fwiou), want.fwiou),
            ("PQ", Some(r.pq), Some(pq)),
            ("SQ", Some(r.sq), want.sq),
            ("RQ", Some(r.rq), want.rq),
            ("PQ†", Some(r.pq_dagger), want.pq_dagger),
            ("tracking PQ", Some(s.pq), Some(pq)),
            ("PTQ", Some(s.ptq), want.ptq),
            ("TQ", s.tq, want.tq),
            ("PAT", Some(s.pat), want.pat),
            ("S_assoc", s.s_assoc, want.s_assoc),
            ("S_cls", Some(s.s_cls), Some(miou)),
            ("LSTQ", Some(s.lstq), want.lstq),
        ];
        for (name, got, exp) in checks {
            ensure!(
                opt_close(got, exp, TOL),
                "trial {trial}: {name} {got:?} vs oracle {exp:?}"
            );
        }
        ensure!(
            s.total_ids == want.total_ids,
            "trial {trial}: IDS {} vs {}",
            s.total_ids,
            want.total_ids
        );
        switches += s.total_ids;
        if s.tq.is_some_and(|tq| tq > 0.0 && tq < 1.0) {
            partial += 1;
        }
        for c in &sem.per_class {
            let exp = want.per_class_iou[c.class_id as usize];
            ensure!(
                opt_close(c.iou, exp, TOL),
                "trial {trial}: IoU[{}] {:?} vs {exp:?}",
                c.class_id,
                c.iou
            );
        }
        ensure!(
            r.per_class.len() == want.per_class_pq.len(),
            "trial {trial}: present classes {} vs {}",
            r.per_class.len(),
            want.per_class_pq.len()
        );
        for c in &r.per_class {
            let Some(&(opq, osq, orq, otp)) = want.per_class_pq.get(&c.class_id) else {
                return Err(format!(
                    "trial {trial}: class {} absent in oracle",
                    c.class_id
                ));
            };
            ensure!(
                close(c.pq, opq, TOL)
                    && close(c.sq, osq, TOL)
                    && close(c.rq, orq, TOL)
                    && c.tp == otp,
                "trial {trial}: class {} ({}, {}, {}, {}) vs ({opq}, {osq}, {orq}, {otp})",
                c.class_id,
                c.pq,
                c.sq,
                c.rq,
                c.tp
            );
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{sequences} random sequences agree within 1e-9 in {elapsed:.2?} \
         ({partial} splits with 0 < TQ < 1, {switches} id switches, {skipped} splits without a present class)"
    ))
}

fn pq_algebra() -> Outcome {
    let map = random::class_map();
    let mut rng = random::rng(8);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..2000 {
        let frames = random::sequence(&mut rng, 3, 40, 4);
        let (filter, _) = random_filter(&mut rng);
        let (gt, pred) = random::to_labels(&format!("q{trial}"), &frames);
        for (g, p) in gt.frames().zip(pred.frames()) {
            let m = match_scan_filtered(g, p, &map, &filter).map_err(|e| e.to_string())?;
            let gts: BTreeSet<_> = m.tp.iter().map(|t| (t.class_id, t.gt_instance)).collect();
            let preds: BTreeSet<_> = m.tp.iter().map(|t| (t.class_id, t.pred_instance)).collect();
            ensure!(
                gts.len() == m.tp.len() && preds.len() == m.tp.len(),
                "trial {trial}: non-unique match"
            );
            ensure!(
                m.tp.iter().all(|t| 2 * t.intersection > t.union),
                "trial {trial}: match at IoU <= 0.5"
            );
        }
        let pairs = vec![(gt, pred)];
        let Ok(pan) = eval::evaluate_panoptic(&pairs, &map, &filter, false) else {
            continue;
        };
        for c in pan.result.per_class.iter().filter(|c| c.tp > 0) {
            let d = (c.pq - c.sq * c.rq).abs();
            worst = worst.max(d);
            ensure!(
                d < 1e-12,
                "trial {trial}: class {} |PQ - SQ*RQ| = {d:e}",
                c.class_id
            );
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} class tallies, max |PQ - SQ*RQ| = {worst:e}; all matches unique"
    ))
}

fn random_box(rng: &mut rand_chacha::ChaCha8Rng, classes: u32) -> Box3D {
    Box3D::new(
        [
            rng.gen_range(-8.0..8.0),
            rng.gen_range(-8.0..8.0),
            rng.gen_range(-1.0..1.0),
        ],
        [
            rng.gen_range(1.0..7.0),
            rng.gen_range(1.0..7.0),
            rng.gen_range(1.0..4.0),
        ],
        rng.gen_range(-4.0..4.0),
        rng.gen_range(0..classes),
    )
    .expect("valid box")
}

fn fusion_noise_oracle(map: &ClassMap) -> Result<usize, String> {
    let mut rng = random::rng(9);
    let mut noisy = 0;
    for scene in 0..200 {
        let n = 2000;
        let points: Vec<Point> = (0..n)
            .map(|_| Point {
                x: rng.gen_range(-10.0..10.0),
                y: rng.gen_range(-10.0..10.0),
                z: rng.gen_range(-2.0..2.0),
                intensity: 0.0,
            })
            .collect();
        let semantic: Vec<u32> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let boxes: Vec<Box3D> = (0..rng.gen_range(1..10))
            .map(|k| {
                let b = random_box(&mut rng, 4);
                if rng.gen_bool(0.5) {
                    b.with_track(k + 1)
                } else {
                    b
                }
            })
            .collect();
        let fused = fuse_gt(
            &ScanLabels::semantic_only(semantic.clone()),
            &points,
            &boxes,
            map,
        )
        .map_err(|e| e.to_string())?;
        let mut expected = BTreeSet::new();
        for (i, p) in points.iter().enumerate() {
            let claims = boxes
                .iter()
                .filter(|b| {
                    b.class_id < 2
                        && semantic[i] == b.class_id
                        && oracle::inside_box(
                            [p.x as f64, p.y as f64, p.z as f64],
                            b.center,
                            b.size,
                            b.yaw,
                        )
                })
                .count();
            if claims >= 2 {
                expected.insert(i);
            }
        }
        let got: BTreeSet<usize> = (0..n)
            .filter(|&i| fused.semantic()[i] == map.ignore_id())
            .collect();
        ensure!(
            got == expected,
            "scene {scene}: noise sets differ ({} vs {})",
            got.len(),
            expected.len()
        );
        noisy += got.len();
    }
    Ok(noisy)
}

/// Seeded detection scenes: true objects on a grid with varied detector
/// confidence, plus spurious low-score boxes (duplicates inside true
/// objects, and boxes in empty space) that have no ground-truth object.
fn detection_suite(map: &ClassMap) -> Result<Vec<(f64, f64)>, String> {
    let mut rng = random::rng(10);
    let mut scans = Vec::new();
    for _ in 0..25 {
        let mut points = Vec::new();
        let mut semantic = Vec::new();
        for _ in 0..1500 {
            points.push(Point {
                x: rng.gen_range(-20.0..20.0),
                y: rng.gen_range(-20.0..20.0),
                z: rng.gen_range(-0.2..0.0),
                intensity: 0.0,
            });
            semantic.push(2);
        }
        let mut gt_boxes = Vec::new();
        let mut pred_boxes = Vec::new();
        for cell in 0..16 {
            if rng.gen_bool(0.4) {
                continue;
            }
            let cx = -15.0 + 10.0 * (cell % 4) as f64;
            let cy = -15.0 + 10.0 * (cell / 4) as f64;
            let class = rng.gen_range(0..2);
            let size = [
                rng.gen_range(1.5..4.0),
                rng.gen_range(1.5..5.0),
                rng.gen_range(1.2..2.5),
            ];
            let yaw = rng.gen_range(-3.0..3.0);
            let b = Box3D::new([cx, cy, size[2] / 2.0 + 0.05], size, yaw, class).unwrap();
            let (s, c) = f64::sin_cos(yaw);
            for _ in 0..rng.gen_range(30..150) {
                let lx = rng.gen_range(-0.48..0.48) * size[0];
                let ly = rng.gen_range(-0.48..0.48) * size[1];
                let lz = rng.gen_range(-0.48..0.48) * size[2];
                points.push(Point {
                    x: (cx + c * lx - s * ly) as f32,
                    y: (cy + s * lx + c * ly) as f32,
                    z: (b.center[2] + lz) as f32,
                    intensity: 0.0,
                });
                semantic.push(class);
            }
            let jitter = Box3D::new(
                [
                    cx + rng.gen_range(-0.1..0.1),
                    cy + rng.gen_range(-0.1..0.1),
                    b.center[2],
                ],
                [
                    size[0] * rng.gen_range(0.97..1.06),
                    size[1] * rng.gen_range(0.97..1.06),
                    size[2] * 1.05,
                ],
                yaw + rng.gen_range(-0.03..0.03),
                class,
            )
            .unwrap()
            .with_score(rng.gen_range(0.05..1.0));
            if rng.gen_bool(0.4) {
                let dup = Box3D::new(
                    b.center,
                    [size[0] * 0.4, size[1] * 0.4, size[2] * 0.5],
                    yaw,
                    class,
                )
                .unwrap()
                .with_score(rng.gen_range(0.01..0.2));
                pred_boxes.push(dup);
            }
            pred_boxes.push(jitter);
            gt_boxes.push(b.with_track(cell + 1));
        }
        for _ in 0..rng.gen_range(1..4) {
            // empty space between grid cells, above the ground
            let spurious = Box3D::new(
                [
                    -10.0 + 10.0 * rng.gen_range(0..3) as f64,
                    rng.gen_range(-18.0..18.0),
                    1.5,
                ],
                [0.6, 0.6, 0.6],
                0.0,
                rng.gen_range(0..2),
            )
            .unwrap()
            .with_score(rng.gen_range(0.01..0.3));
            pred_boxes.push(spurious);
        }
        let sem = ScanLabels::semantic_only(semantic.clone());
        let gt = fuse_gt(&sem, &points, &gt_boxes, map).map_err(|e| e.to_string())?;
        let mut noisy = semantic;
        for v in noisy.iter_mut() {
            if rng.gen_bool(0.03) {
                *v = rng.gen_range(0..4);
            }
        }
        scans.push((gt, ScanLabels::semantic_only(noisy), points, pred_boxes));
    }

    let mut results = Vec::new();
    for t in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7] {
        let filter = if t == 0.0 {
            ScoreFilter::KeepAll
        } else {
            ScoreFilter::Global(t)
        };
        let mut acc = PanopticAccumulator::new(map, MinPointsFilter::default());
        let fused: Vec<(ScanLabels, ScanLabels)> = scans
            .iter()
            .map(|(gt, sem, points, boxes)| {
                fuse_pred(sem, points, boxes, &filter, map).map(|p| (gt.clone(), p))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        acc.push_scans(&fused, false).map_err(|e| e.to_string())?;
        results.push((t, acc.finish().map_err(|e| e.to_string())?.pq));
    }
    Ok(results)
}

fn fusion_correctness() -> Outcome {
    let map = random::class_map();
    let noisy = fusion_noise_oracle(&map)?;
    let results = detection_suite(&map)?;
    let pq0 = results[0].1;
    for &(t, pq) in &results[1..] {
        ensure!(
            pq0 >= pq,
            "PQ at threshold 0 ({pq0}) < PQ at threshold {t} ({pq})"
        );
    }
    let table: Vec<String> = results
        .iter()
        .map(|(t, pq)| format!("{t}:{}", percent(*pq)))
        .collect();
    Ok(format!(
        "noise sets match on 200 scenes ({noisy} noise points); PQ by threshold {}",
        table.join(" ")
    ))
}

fn throughput() -> Outcome {
    const SCANS: usize = 1000;
    const CHUNK: usize = 50;
    let map = ClassMap::panoptic_nuscenes().eval_space();
    let filter = MinPointsFilter::default();
    let mut serial = PanopticAccumulator::new(&map, filter);
    let mut parallel = PanopticAccumulator::new(&map, filter);
    let (mut t_serial, mut t_parallel) = (Duration::ZERO, Duration::ZERO);
    for chunk in 0..SCANS / CHUNK {
        let scans: Vec<_> = (0..CHUNK)
            .map(|k| scenario::dense_scan_pair((chunk * CHUNK + k) as u64, 35_000, &map))
            .collect();
        let t = Instant::now();
        serial
            .push_scans(&scans, false)
            .map_err(|e| e.to_string())?;
        t_serial += t.elapsed();
        let t = Instant::now();
        parallel
            .push_scans(&scans, true)
            .map_err(|e| e.to_string())?;
        t_parallel += t.elapsed();
    }
    let a = serial.finish().map_err(|e| e.to_string())?;
    let b = parallel.finish().map_err(|e| e.to_string())?;
    let same = serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
    ensure!(same && a == b, "serial and parallel reports differ");
    ensure!(
        t_serial < Duration::from_secs(30),
        "serial run took {t_serial:?}"
    );
    ensure!(
        t_parallel < Duration::from_secs(30),
        "parallel run took {t_parallel:?}"
    );
    Ok(format!(
        "{SCANS} scans x 35k points: serial {t_serial:.2?}, parallel {t_parallel:.2?} on {} thread(s); PQ {}; reports identical",
        rayon::current_num_threads(),
        percent(a.pq)
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("AC-1", "perfect prediction identity", perfect_identity),
        ("AC-2", "harmonic mean table", harmonic_table),
        ("AC-3", "frame permutation contrast", frame_permutation),
        ("AC-4", "id transfer", id_transfer),
        ("AC-5", "split point consistency", split_point),
        ("AC-6", "void robustness", voided_frames),
        ("AC-7", "oracle equivalence", oracle_equivalence),
        ("AC-8", "PQ algebra and match uniqueness", pq_algebra),
        ("AC-9", "fusion correctness", fusion_correctness),
        ("AC-10", "throughput and determinism", throughput),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
