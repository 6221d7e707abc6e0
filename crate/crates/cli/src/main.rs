use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use logodet::augment::corrupt_dataset;
use logodet::eqlv2::{run_longtail_demo, Group};
use logodet::evaluation::evaluate;
use logodet::geometry::{Detection, ImageSize};
use logodet::io::detections::check_image_ids;
use logodet::io::{
    load_detections, resolve_seed, save_detections, write_atomic, AnnotationFile, DetectionRecord,
    RunConfig, SEED_ENV,
};
use logodet::multiscale::{fuse_multiscale, ScaledDetections};
use logodet::network_sim::run_simulation;
use logodet::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_TOTAL_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "logodet", version, about = "Robust logo detection toolkit")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides LOGODET_SEED and the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute COCO-style mAP of a detection file against annotations.
    Evaluate {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        detections: PathBuf,
    },
    /// Write a corrupted copy of a dataset directory to --out.
    Corrupt {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run NMS / Soft-NMS over a detection file and write the result to --out.
    Postprocess(PostprocessArgs),
    /// Print the resize schedule for an image size.
    PlanScales {
        #[arg(long, requires = "height", conflicts_with = "annotations")]
        width: Option<u32>,
        #[arg(long, requires = "width")]
        height: Option<u32>,
        /// Plan every image of an annotation file instead.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Seeded forward pass of the pyramid and cascade simulator.
    Simulate,
    /// Long-tail toy comparison of cross-entropy and EQL-v2.
    EqlDemo,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Treat records as multi-scale output: map each back through its
    /// `scale` factor, clip to the image and fuse.
    #[arg(long, requires = "annotations")]
    fuse: bool,
    /// Supplies image sizes for --fuse.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Exit(u8),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = Result<(), Failure>;

struct Ctx {
    config: RunConfig,
    seed: u64,
    out: Option<PathBuf>,
}

impl Ctx {
    fn require_out(&self, what: &str) -> Result<&Path, Failure> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::Usage(format!("--out is required ({what})")))
    }

    /// Prints a report and mirrors it into --out when given.
    fn emit(&self, report: &str) -> CmdResult {
        print!("{report}");
        if let Some(path) = &self.out {
            write_atomic(path, report.as_bytes())?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Exit(code)) => ExitCode::from(code),
    }
}

fn run(cli: Cli) -> CmdResult {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, env_seed.as_deref(), config.seed)?;
    let ctx = Ctx { config, seed, out: cli.out };
    match cli.command {
        Command::Evaluate { annotations, detections } => cmd_evaluate(&ctx, &annotations, &detections),
        Command::Corrupt { dataset } => cmd_corrupt(&ctx, &dataset),
        Command::Postprocess(args) => cmd_postprocess(&ctx, &args),
        Command::PlanScales { width, height, annotations } => cmd_plan_scales(&ctx, width, height, annotations),
        Command::Simulate => cmd_simulate(&ctx),
        Command::EqlDemo => cmd_eql_demo(&ctx),
    }
}

fn to_detections(records: &[DetectionRecord]) -> Result<Vec<Detection>, Error> {
    records.iter().map(DetectionRecord::to_detection).collect()
}

fn cmd_evaluate(ctx: &Ctx, ann_path: &Path, det_path: &Path) -> CmdResult {
    let ann = AnnotationFile::load(ann_path)?;
    let records = load_detections(det_path)?;
    let known: HashSet<u64> = ann.images.iter().map(|i| i.id).collect();
    check_image_ids(&records, &known, det_path)?;
    let categories: HashSet<u64> = ann.categories.iter().map(|c| c.id).collect();
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| !categories.contains(&r.category_id)) {
        return Err(Error::Validation {
            path: det_path.to_path_buf(),
            field: format!("[{i}].category_id"),
            message: format!("unknown category {}", r.category_id),
        }
        .into());
    }
    let thresholds = &ctx.config.evaluation.thresholds;
    let result = evaluate(&to_detections(&records)?, &ann.ground_truth(), thresholds)?;

    let mut s = String::new();
    writeln!(s, "images {}  ground_truth {}  detections {}", ann.images.len(), ann.annotations.len(), records.len()).unwrap();
    writeln!(s, "{:<10} {:>10}", "iou", "mAP").unwrap();
    for (t, m) in thresholds.iter().zip(&result.map_per_threshold) {
        writeln!(s, "{:<10.2} {:>10.6}", t, m).unwrap();
    }
    writeln!(s, "{:<10} {:<20} {:>8} {:>10} {:>10} {:>10}", "category", "name", "gt", "AP50", "AP75", "AP").unwrap();
    let mut gt_counts: BTreeMap<u64, usize> = BTreeMap::new();
    for a in &ann.annotations {
        *gt_counts.entry(a.category_id).or_default() += 1;
    }
    let at = |target: f64| thresholds.iter().position(|t| (t - target).abs() < 1e-9);
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    for cat in result.ap.keys() {
        let name = ann.category_name(*cat).unwrap_or("?");
        writeln!(
            s,
            "{:<10} {:<20} {:>8} {:>10} {:>10} {:>10}",
            cat,
            name,
            gt_counts.get(cat).copied().unwrap_or(0),
            fmt_opt(at(0.5).and_then(|i| result.ap_at(*cat, i))),
            fmt_opt(at(0.75).and_then(|i| result.ap_at(*cat, i))),
            fmt_opt(result.category_map(*cat)),
        )
        .unwrap();
    }
    writeln!(s, "mAP {:.6}", result.map_overall).unwrap();
    ctx.emit(&s)
}

fn cmd_corrupt(ctx: &Ctx, dataset: &Path) -> CmdResult {
    let out = ctx.require_out("output dataset directory")?;
    let report = corrupt_dataset(dataset, &ctx.config.corruption.suite, ctx.seed, out)?;
    println!(
        "corrupted {} of {} images (seed {}) into {}",
        report.manifest.len(),
        report.total(),
        ctx.seed,
        out.display()
    );
    for f in &report.failures {
        eprintln!("failed: image {} ({}): {}", f.image_id, f.file_name, f.message);
    }
    match (report.failures.len(), report.manifest.len()) {
        (0, _) => Ok(()),
        (_, 0) => Err(Failure::Exit(EXIT_TOTAL_FAILURE)),
        _ => Err(Failure::Exit(EXIT_PARTIAL)),
    }
}

fn cmd_postprocess(ctx: &Ctx, args: &PostprocessArgs) -> CmdResult {
    let out = ctx.require_out("output detection file")?;
    let pp = &ctx.config.postprocess;
    pp.validate()?;
    let records = load_detections(&args.detections)?;
    let kept = if args.fuse {
        let ann_path = args.annotations.as_deref().expect("clap enforces --annotations");
        let ann = AnnotationFile::load(ann_path)?;
        let sizes = ann.image_sizes();
        check_image_ids(&records, &sizes.keys().copied().collect(), &args.detections)?;
        let mut per_image: BTreeMap<u64, BTreeMap<u64, ScaledDetections>> = BTreeMap::new();
        for r in &records {
            let factor = r.scale.unwrap_or(1.0);
            per_image
                .entry(r.image_id)
                .or_default()
                .entry(factor.to_bits())
                .or_insert_with(|| ScaledDetections { factor, detections: Vec::new() })
                .detections
                .push(r.to_detection()?);
        }
        let mut fused = Vec::new();
        for (image_id, scales) in per_image {
            let size: ImageSize = sizes[&image_id];
            let scales: Vec<ScaledDetections> = scales.into_values().collect();
            fused.extend(fuse_multiscale(&scales, size, &pp.soft_nms())?);
        }
        fused.sort_by(Detection::rank_cmp);
        fused
    } else {
        pp.run(&to_detections(&records)?)?
    };
    let out_records: Vec<DetectionRecord> = kept.iter().map(DetectionRecord::from_detection).collect();
    save_detections(out, &out_records)?;
    println!("kept {} of {} detections -> {}", kept.len(), records.len(), out.display());
    Ok(())
}

fn cmd_plan_scales(ctx: &Ctx, width: Option<u32>, height: Option<u32>, annotations: Option<PathBuf>) -> CmdResult {
    let plan = &ctx.config.multiscale;
    plan.validate()?;
    let targets: Vec<(String, ImageSize)> = match (width, height, annotations) {
        (Some(w), Some(h), _) => vec![("image".to_string(), ImageSize::new(w, h)?)],
        (_, _, Some(path)) => {
            let ann = AnnotationFile::load(&path)?;
            ann.images
                .iter()
                .map(|i| (format!("image {}", i.id), ImageSize { width: i.width, height: i.height }))
                .collect()
        }
        _ => return Err(Failure::Usage("give --width and --height, or --annotations".into())),
    };
    let mut s = String::new();
    for (label, size) in targets {
        writeln!(s, "{label} ({}x{})", size.width, size.height).unwrap();
        for r in plan.resolve(size)? {
            writeln!(s, "  short {:>5}  factor {:.6}  -> {}x{}", r.target, r.factor, r.size.width, r.size.height).unwrap();
        }
    }
    ctx.emit(&s)
}

fn cmd_simulate(ctx: &Ctx) -> CmdResult {
    let report = run_simulation(ctx.seed, &ctx.config.simulate)?;
    let mut s = String::new();
    writeln!(s, "seed {}", ctx.seed).unwrap();
    let row = |s: &mut String, name: &str, shape: (usize, usize, usize), sum: f64| {
        writeln!(s, "{name:<8} {:>4} x {:>4} x {:>4}  checksum {sum:.9e}", shape.0, shape.1, shape.2).unwrap();
    };
    row(&mut s, "input", report.input.shape, report.input.checksum);
    for (i, l) in report.levels.iter().enumerate() {
        row(&mut s, &format!("level{}", i + 1), l.shape, l.checksum);
    }
    for (i, (p, stages)) in report.proposals.iter().zip(&report.refined).enumerate() {
        let fmt = |b: &logodet::geometry::BBox| format!("[{:.3}, {:.3}, {:.3}, {:.3}]", b.x_min, b.y_min, b.x_max, b.y_max);
        writeln!(s, "proposal {i} {}", fmt(p)).unwrap();
        for (k, b) in stages.iter().enumerate() {
            writeln!(s, "  stage {} {}", k + 1, fmt(b)).unwrap();
        }
    }
    ctx.emit(&s)
}

fn cmd_eql_demo(ctx: &Ctx) -> CmdResult {
    let cfg = &ctx.config.eql_demo;
    let r = run_longtail_demo(ctx.seed, cfg)?;
    let mut s = String::new();
    writeln!(s, "seed {}  categories {}", r.seed, r.category_groups.len()).unwrap();
    writeln!(s, "{:<6} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12}", "group", "ce_recall", "eql_recall", "ce_top1", "eql_top1", "ce_false", "eql_false").unwrap();
    for g in [Group::Head, Group::Mid, Group::Tail] {
        writeln!(
            s,
            "{:<6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>12.4} {:>12.4}",
            g.name(),
            r.cross_entropy.recall.get(g),
            r.eqlv2.recall.get(g),
            r.cross_entropy.top1.get(g),
            r.eqlv2.top1.get(g),
            r.cross_entropy.false_fire.get(g),
            r.eqlv2.false_fire.get(g),
        )
        .unwrap();
    }
    for (j, (g, ratio)) in r.category_groups.iter().zip(&r.final_ratios).enumerate() {
        writeln!(s, "g[{j}] {:<4} train {:>5} ratio {ratio:.6}", g.name(), r.train_counts[j]).unwrap();
    }
    let (ce, eql) = (r.cross_entropy.recall.tail, r.eqlv2.recall.tail);
    let verdict = if eql >= ce { ">=" } else { "<" };
    writeln!(s, "tail recall: eqlv2 {eql:.4} {verdict} cross_entropy {ce:.4}").unwrap();
    ctx.emit(&s)
}
