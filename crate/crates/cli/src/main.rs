use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pantrack_core::eval::{self, FuseMode};
use pantrack_core::io;
use pantrack_core::report::{self, MetricReport, ReportMeta};
use pantrack_core::scenario::{self, ScenarioFile};
use pantrack_core::{
    ClassMap, FilterTarget, GapMode, LoadedManifest, MinPointsFilter, ScoreFilter, TrackMean,
    TrackingConfig,
};

#[derive(Parser)]
#[command(
    name = "pantrack",
    version,
    about = "LiDAR segmentation and panoptic tracking evaluation"
)]
struct Cli {
    /// Worker threads; 1 runs everything serially. Defaults to one per core.
    #[arg(long, global = true, env = "PANTRACK_THREADS")]
    parallelism: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// IoU per class, mIoU and fwIoU.
    Semantic(EvalArgs),
    /// PQ, SQ, RQ and PQ† overall and for things and stuff.
    Panoptic {
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// PAT, LSTQ and PTQ over sequences.
    Tracking {
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long, value_enum, default_value_t = GapArg::Skip)]
        ids_gap_mode: GapArg,
        #[arg(long, value_enum, default_value_t = MeanArg::Global)]
        track_mean: MeanArg,
    },
    /// Build panoptic labels from semantic labels, points and boxes.
    Fuse(FuseArgs),
    /// Write a synthetic dataset from a scenario spec.
    Gen {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Class map for ground-truth labels; the built-in 16-class map when omitted.
    #[arg(long)]
    classmap: Option<PathBuf>,
    /// Class map for predictions when they use different raw ids.
    #[arg(long)]
    pred_classmap: Option<PathBuf>,
    /// Report file (JSON).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    /// Thing segments need strictly more than this many points.
    #[arg(long, default_value_t = pantrack_core::labels::DEFAULT_MIN_POINTS)]
    min_points: usize,
    #[arg(long, value_enum, default_value_t = TargetArg::Both)]
    apply_filter_to: TargetArg,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classmap: Option<PathBuf>,
    /// Drop predicted boxes scoring below this value (0 keeps every box).
    #[arg(long, conflicts_with_all = ["class_thresholds", "max_f1"])]
    score_threshold: Option<f64>,
    /// JSON object mapping evaluation class id to score threshold.
    #[arg(long, conflicts_with = "max_f1")]
    class_thresholds: Option<PathBuf>,
    /// Per-class thresholds maximizing detection F1 against ground-truth
    /// boxes, matched within this bird's-eye center distance (meters).
    #[arg(long)]
    max_f1: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TargetArg {
    Gt,
    Pred,
    Both,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GapArg {
    Skip,
    Count,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MeanArg {
    Global,
    PerSequence,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gt,
    Pred,
}

impl FilterArgs {
    fn filter(&self) -> MinPointsFilter {
        MinPointsFilter {
            min_points: self.min_points,
            apply_to: match self.apply_filter_to {
                TargetArg::Gt => FilterTarget::Gt,
                TargetArg::Pred => FilterTarget::Pred,
                TargetArg::Both => FilterTarget::Both,
            },
        }
    }
}

/// A loaded class map and how it was specified.
struct MapSource {
    map: ClassMap,
    source: String,
}

fn load_classmap(path: Option<&Path>) -> Result<MapSource> {
    match path {
        None => Ok(MapSource {
            map: ClassMap::panoptic_nuscenes(),
            source: "builtin".to_string(),
        }),
        Some(p) => {
            let text =
                std::fs::read(p).with_context(|| format!("reading class map {}", p.display()))?;
            let map = ClassMap::from_json_str(std::str::from_utf8(&text)?)
                .with_context(|| format!("class map {}", p.display()))?;
            Ok(MapSource {
                map,
                source: format!("sha256:{}", report::sha256_hex(&text)),
            })
        }
    }
}

#[derive(Serialize)]
struct EvalConfig<'a> {
    classmap: &'a str,
    pred_classmap: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    apply_filter_to: Option<TargetArg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ids_gap_mode: Option<GapArg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    track_mean: Option<MeanArg>,
}

struct Loaded {
    manifest: LoadedManifest,
    gt: MapSource,
    pred: MapSource,
    pairs: Vec<(pantrack_core::SequenceLabels, pantrack_core::SequenceLabels)>,
}

fn load(args: &EvalArgs) -> Result<Loaded> {
    let manifest = LoadedManifest::load(&args.manifest)?;
    let gt = load_classmap(args.classmap.as_deref())?;
    let pred = match &args.pred_classmap {
        Some(p) => load_classmap(Some(p))?,
        None => MapSource {
            map: gt.map.clone(),
            source: gt.source.clone(),
        },
    };
    if pred.map.num_eval_classes() != gt.map.num_eval_classes() {
        bail!(
            "prediction class map has {} evaluation classes, ground truth has {}",
            pred.map.num_eval_classes(),
            gt.map.num_eval_classes()
        );
    }
    let pairs = eval::load_pairs(&manifest, &gt.map, &pred.map)?;
    Ok(Loaded {
        manifest,
        gt,
        pred,
        pairs,
    })
}

fn finish(report: MetricReport, output: Option<&Path>) -> Result<()> {
    if let Some(path) = output {
        io::write_json(path, &report)?;
    }
    print!("{}", report::render_table(&report));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let parallel = cli.parallelism != Some(1);
    if let Some(n) = cli.parallelism.filter(|&n| n > 1) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }

    match cli.command {
        Command::Semantic(args) => {
            let l = load(&args)?;
            let config = EvalConfig {
                classmap: &l.gt.source,
                pred_classmap: &l.pred.source,
                min_points: None,
                apply_filter_to: None,
                ids_gap_mode: None,
                track_mean: None,
            };
            let meta = ReportMeta::new(
                "semantic",
                serde_json::to_value(&config)?,
                Some(&l.manifest.bytes),
            );
            let mut report = MetricReport::new(meta);
            report.semantic = Some(eval::evaluate_semantic(&l.pairs, &l.gt.map, parallel)?);
            finish(report, args.output.as_deref())
        }
        Command::Panoptic { eval: args, filter } => {
            let l = load(&args)?;
            let config = EvalConfig {
                classmap: &l.gt.source,
                pred_classmap: &l.pred.source,
                min_points: Some(filter.min_points),
                apply_filter_to: Some(filter.apply_filter_to),
                ids_gap_mode: None,
                track_mean: None,
            };
            let meta = ReportMeta::new(
                "panoptic",
                serde_json::to_value(&config)?,
                Some(&l.manifest.bytes),
            );
            let mut report = MetricReport::new(meta);
            report.panoptic = Some(eval::evaluate_panoptic(
                &l.pairs,
                &l.gt.map,
                &filter.filter(),
                parallel,
            )?);
            finish(report, args.output.as_deref())
        }
        Command::Tracking {
            eval: args,
            filter,
            ids_gap_mode,
            track_mean,
        } => {
            let l = load(&args)?;
            let config = EvalConfig {
                classmap: &l.gt.source,
                pred_classmap: &l.pred.source,
                min_points: Some(filter.min_points),
                apply_filter_to: Some(filter.apply_filter_to),
                ids_gap_mode: Some(ids_gap_mode),
                track_mean: Some(track_mean),
            };
            let tracking = TrackingConfig {
                filter: filter.filter(),
                gap_mode: match ids_gap_mode {
                    GapArg::Skip => GapMode::Skip,
                    GapArg::Count => GapMode::Count,
                },
                track_mean: match track_mean {
                    MeanArg::Global => TrackMean::Global,
                    MeanArg::PerSequence => TrackMean::PerSequence,
                },
            };
            let meta = ReportMeta::new(
                "tracking",
                serde_json::to_value(&config)?,
                Some(&l.manifest.bytes),
            );
            let mut report = MetricReport::new(meta);
            report.tracking = Some(eval::evaluate_tracking(
                &l.pairs, &l.gt.map, &tracking, parallel,
            )?);
            finish(report, args.output.as_deref())
        }
        Command::Fuse(args) => fuse(args, parallel),
        Command::Gen { spec, out } => {
            let file: ScenarioFile = io::read_json(&spec)?;
            let specs = file.into_specs();
            if specs.is_empty() {
                bail!("{} contains no scenario", spec.display());
            }
            let (pairs, map) = scenario::generate_all(&specs)?;
            scenario::write_dataset(&pairs, &map, &out)?;
            let frames: usize = pairs.iter().map(|p| p.gt.len()).sum();
            println!(
                "wrote {} sequence(s), {frames} scan(s) to {}",
                pairs.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn fuse(args: FuseArgs, parallel: bool) -> Result<()> {
    let manifest = LoadedManifest::load(&args.manifest)?;
    let map = load_classmap(args.classmap.as_deref())?.map;
    let mode = match args.mode {
        ModeArg::Gt => FuseMode::Gt,
        ModeArg::Pred => FuseMode::Pred,
    };
    let filter = if let Some(t) = args.score_threshold {
        ScoreFilter::Global(t)
    } else if let Some(path) = &args.class_thresholds {
        let m: BTreeMap<u32, f64> = io::read_json(path)?;
        ScoreFilter::PerClass(m)
    } else if let Some(d) = args.max_f1 {
        eval::max_f1_filter(&manifest, d)?
    } else {
        ScoreFilter::KeepAll
    };
    if matches!(mode, FuseMode::Gt) && filter != ScoreFilter::KeepAll {
        bail!("score filtering applies to prediction fusion only");
    }
    let out = eval::fuse_manifest(&manifest, &map, mode, &filter, &args.out, parallel)?;
    println!(
        "fused {} scan(s); manifest {}, class map {}",
        out.scans,
        out.manifest_path.display(),
        out.classmap_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
