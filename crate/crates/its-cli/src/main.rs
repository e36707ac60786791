//! `its` — canonicalize classifier inputs by searching layered affine
//! subgroups, plus the tooling around it: dataset generation, a toy
//! trainer, batch evaluation, orbit sweeps, and runtime profiling.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use its_core::confidence::{group_confidence, orbit_stats, smooth_profile};
use its_core::group::{SubgroupKind, SubgroupSpec};
use its_core::harness::perturb::{make_g_test_set, PerturbMode, PerturbationSpec};
use its_core::harness::profile::{runtime_profile, ProfileConfig};
use its_core::harness::report::{
    eval_rows_csv, profile_rows_csv, strip_timings, write_csv, write_json, EVAL_CSV_HEADER,
    PROFILE_CSV_HEADER,
};
use its_core::harness::shapes::Split;
use its_core::harness::{
    self, change_of_mind_grids, emit_panel, evaluate, pose_grid_outcomes, render_shapes,
    ShapesConfig,
};
use its_core::image::{read_png, write_png};
use its_core::model::{
    top1, train_softmax_regression, CnnModel, LinearModel, LogitModel, TemplateModel, WeightFile,
};
use its_core::search::{its_search, SearchConfig, SearchResult};
use its_core::{GrayImage, ItsError, Result, Scalar, Stack};

#[derive(Parser)]
#[command(
    name = "its",
    version,
    about = "Straighten a classifier's inputs by searching affine subgroup orbits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic shapes dataset to PNGs plus a manifest.
    GenDataset(GenDatasetArgs),
    /// Fit the toy softmax-regression backend on a dataset's train split.
    TrainToy(TrainToyArgs),
    /// Canonicalize one image and write everything the search produced.
    Canonicalize(CanonicalizeArgs),
    /// Score a model on a pose-shifted split, with and without search.
    Evaluate(EvaluateArgs),
    /// Emit orbit statistics per stack layer, optionally with the
    /// hypothesis-comparison grid.
    Sweep(SweepArgs),
    /// Time the search across depth / beam / sample-count combinations.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long, default_value = "0")]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "32")]
    side: usize,
    #[arg(long, default_value = "20")]
    train_per_class: usize,
    #[arg(long, default_value = "5")]
    val_per_class: usize,
    #[arg(long, default_value = "25")]
    test_per_class: usize,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Dataset directory (as written by gen-dataset).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "0")]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "200")]
    epochs: usize,
    #[arg(long, default_value = "0.5")]
    learning_rate: f64,
}

/// Flags shared by every search-running subcommand.
#[derive(Args)]
struct SearchArgs {
    /// Weight file, or a dataset directory to build a template matcher from.
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated layers, `kind:bound:n` each.
    #[arg(long, default_value = "rot:pi:17,scale:0.25:17,shearx:0.25:17")]
    stack: String,
    /// Beam width.
    #[arg(long, default_value = "3")]
    k: usize,
    /// Stochastic forward passes per orbit point.
    #[arg(long, default_value = "50")]
    mc: usize,
    /// Step statistic: group | energy | entropy.
    #[arg(long, default_value = "group")]
    measure: String,
    /// Final ranking: confidence | class_support.
    #[arg(long, default_value = "confidence")]
    policy: String,
    /// Allow several beam slots to share a predicted label.
    #[arg(long)]
    no_unique_labels: bool,
    #[arg(long, default_value = "0")]
    seed: u64,
}

impl SearchArgs {
    fn to_config(&self) -> Result<SearchConfig<Scalar>> {
        let stack: Stack = self.stack.parse()?;
        let mut cfg = SearchConfig::new(stack);
        cfg.k = self.k;
        cfg.m_samples = self.mc;
        cfg.measure = self.measure.parse()?;
        cfg.final_policy = self.policy.parse()?;
        cfg.unique_labels = !self.no_unique_labels;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CanonicalizeArgs {
    /// Image to canonicalize (PNG).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset directory (as written by gen-dataset).
    #[arg(long)]
    data: PathBuf,
    /// Split to shift and score: val | test.
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    search: SearchArgs,
    /// Pose-offset sampling: on_grid | continuous.
    #[arg(long, default_value = "on_grid")]
    perturb_mode: String,
    /// Seed for the pose offsets (independent of the search seed).
    #[arg(long, default_value = "1")]
    perturb_seed: u64,
    /// Per-layer parameter half-ranges; defaults to each layer's bound.
    #[arg(long, value_delimiter = ',')]
    ranges: Option<Vec<f64>>,
    /// Evaluate only the first N samples of the split.
    #[arg(long)]
    limit: Option<usize>,
    /// Skip the search; score the raw shifted images only.
    #[arg(long)]
    no_its: bool,
    /// Zero wall-clock fields so identically seeded runs emit identical bytes.
    #[arg(long)]
    strip_timings: bool,
    /// json | csv | both.
    #[arg(long, default_value = "json")]
    format: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Images to sweep (repeatable).
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
    /// Also run the two-hypothesis comparison over a 9x9 rotation/shear
    /// pose grid around each input.
    #[arg(long)]
    change_of_mind: bool,
    /// True class for the comparison grids; defaults to the model's own
    /// prediction on the input.
    #[arg(long)]
    label: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Image to profile on; defaults to a freshly rendered canonical shape.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    ms: Vec<usize>,
    #[arg(long, default_value = "10")]
    repeats: usize,
    /// json | csv | both.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// A loaded backend, whichever kind the --model path turned out to hold.
enum Backend {
    Template(TemplateModel<Scalar>),
    Linear(LinearModel<Scalar>),
    Cnn(CnnModel<Scalar>),
}

impl Backend {
    fn as_model(&self) -> &dyn LogitModel<Scalar> {
        match self {
            Backend::Template(m) => m,
            Backend::Linear(m) => m,
            Backend::Cnn(m) => m,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Backend::Template(_) => "template",
            Backend::Linear(_) => "linear",
            Backend::Cnn(_) => "cnn",
        }
    }
}

/// A directory is treated as a dataset to build a template matcher from;
/// a file is a weight file holding either the CNN or the linear model.
fn load_backend(path: &Path) -> Result<Backend> {
    if path.is_dir() {
        let dataset: harness::ShapesDataset<Scalar> = harness::load_dataset(path)?;
        let model = TemplateModel::new(dataset.class_templates()?, 2.0)?;
        return Ok(Backend::Template(model));
    }
    let wf: WeightFile<Scalar> = WeightFile::read(path)?;
    if wf.get("conv1.weight").is_ok() {
        Ok(Backend::Cnn(CnnModel::from_weight_file(
            &wf,
            Default::default(),
        )?))
    } else {
        Ok(Backend::Linear(LinearModel::from_weight_file(&wf)?))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ItsError::io(dir, e))
}

fn parse_split(s: &str) -> Result<Split> {
    let split: Split = s.parse()?;
    if split == Split::Train {
        return Err(ItsError::InvalidConfig {
            what: "the train split stays canonical; evaluate on val or test".into(),
        });
    }
    Ok(split)
}

fn parse_perturb_mode(s: &str) -> Result<PerturbMode> {
    match s {
        "on_grid" | "on-grid" | "grid" => Ok(PerturbMode::OnGrid),
        "continuous" => Ok(PerturbMode::Continuous),
        other => Err(ItsError::InvalidConfig {
            what: format!("unknown perturbation mode {other:?} (on_grid|continuous)"),
        }),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Json,
    Csv,
    Both,
}

fn parse_format(s: &str) -> Result<Format> {
    match s {
        "json" => Ok(Format::Json),
        "csv" => Ok(Format::Csv),
        "both" => Ok(Format::Both),
        other => Err(ItsError::InvalidConfig {
            what: format!("unknown format {other:?} (json|csv|both)"),
        }),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn run_gen_dataset(args: GenDatasetArgs) -> Result<()> {
    let cfg = ShapesConfig {
        side: args.side,
        train_per_class: args.train_per_class,
        val_per_class: args.val_per_class,
        test_per_class: args.test_per_class,
    };
    ensure_dir(&args.out_dir)?;
    let dataset = render_shapes::<Scalar>(cfg, args.seed);
    let entries = harness::export_dataset(&dataset, &args.out_dir)?;
    println!(
        "wrote {} samples ({} train / {} val / {} test) to {}",
        entries.len(),
        dataset.split_samples(Split::Train).count(),
        dataset.split_samples(Split::Val).count(),
        dataset.split_samples(Split::Test).count(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_train_toy(args: TrainToyArgs) -> Result<()> {
    let dataset: harness::ShapesDataset<Scalar> = harness::load_dataset(&args.data)?;
    let train: Vec<_> = dataset.split_samples(Split::Train).collect();
    let images: Vec<GrayImage> = train.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let (model, report) = train_softmax_regression(
        &images,
        &labels,
        dataset.num_classes(),
        args.epochs,
        args.learning_rate,
        args.seed,
    )?;
    ensure_dir(&args.out_dir)?;
    let weights_path = args.out_dir.join("linear.itsw");
    model.save(&weights_path)?;
    write_json(
        &json!({
            "losses": report.losses,
            "final_learning_rate": report.final_learning_rate,
            "train_accuracy": report.train_accuracy,
            "epochs": args.epochs,
            "samples": images.len(),
        }),
        &args.out_dir.join("train_report.json"),
    )?;
    println!(
        "trained on {} canonical samples: loss {:.6} -> {:.6}, train accuracy {:.1}%",
        images.len(),
        report.losses.first().unwrap(),
        report.losses.last().unwrap(),
        report.train_accuracy * 100.0
    );
    println!("weights: {}", weights_path.display());
    Ok(())
}

fn write_level_csvs(
    result: &SearchResult<Scalar>,
    stack: &Stack,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for record in &result.per_level {
        let spec = stack.layers()[record.level];
        let rows: Vec<Vec<String>> = spec
            .exponents()
            .enumerate()
            .map(|(i, j)| {
                vec![
                    j.to_string(),
                    spec.param_at(j).to_string(),
                    record.energy[i].to_string(),
                    record.smoothed[i].to_string(),
                    record.confidence[i].to_string(),
                ]
            })
            .collect();
        let path = out_dir.join(format!(
            "level{}_hyp{}.csv",
            record.level, record.hypothesis_id
        ));
        write_csv(
            &path,
            &["j", "u", "mean_energy", "smoothed_energy", "confidence"],
            &rows,
        )?;
        written.push(path);
    }
    let summary: Vec<Vec<String>> = result
        .per_level
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                r.hypothesis_id.to_string(),
                r.chosen_exponent.to_string(),
                r.chosen_confidence.to_string(),
            ]
        })
        .collect();
    let path = out_dir.join("levels.csv");
    write_csv(
        &path,
        &["level", "hypothesis_id", "chosen_exponent", "chosen_confidence"],
        &summary,
    )?;
    written.push(path);
    Ok(written)
}

fn run_canonicalize(args: CanonicalizeArgs) -> Result<()> {
    let backend = load_backend(&args.search.model)?;
    let cfg = args.search.to_config()?;
    let img: GrayImage = read_png(&args.input)?;
    let result = its_search(backend.as_model(), &img, &cfg)?;
    ensure_dir(&args.out_dir)?;

    write_png(&result.canonical_image, &args.out_dir.join("canonical.png"))?;

    let incumbent = result.incumbent();
    std::fs::write(
        args.out_dir.join("incumbent.bin"),
        incumbent.cumulative.to_le_bytes(),
    )
    .map_err(|e| ItsError::io(args.out_dir.join("incumbent.bin"), e))?;
    write_json(
        &json!({
            "backend": backend.kind(),
            "stack": cfg.stack.to_string(),
            "label": incumbent.label,
            "confidence": incumbent.confidence,
            "best_confidence_seen": incumbent.best_confidence_seen,
            "cumulative": incumbent.cumulative.m,
            "trajectory": incumbent.trajectory,
            "support_for_label": incumbent.support_for(incumbent.label),
            "evaluations": result.evaluations,
            "ranked": result.ranked,
        }),
        &args.out_dir.join("incumbent.json"),
    )?;
    write_level_csvs(&result, &cfg.stack, &args.out_dir)?;
    emit_panel(
        &img,
        &cfg.stack,
        incumbent,
        cfg.warp,
        &args.out_dir.join("panel.png"),
    )?;

    println!(
        "label {} (confidence {:.6}), {} forward passes; outputs in {}",
        incumbent.label,
        incumbent.best_confidence_seen,
        result.evaluations,
        args.out_dir.display()
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let backend = load_backend(&args.search.model)?;
    let cfg = args.search.to_config()?;
    let format = parse_format(&args.format)?;
    let split = parse_split(&args.split)?;
    let dataset: harness::ShapesDataset<Scalar> = harness::load_dataset(&args.data)?;
    let pspec = PerturbationSpec {
        mode: parse_perturb_mode(&args.perturb_mode)?,
        seed: args.perturb_seed,
        ranges: args.ranges.clone(),
    };
    let mut shifted = make_g_test_set(&dataset, split, &cfg.stack, &pspec, cfg.warp)?;
    if let Some(limit) = args.limit {
        shifted.truncate(limit);
    }
    let mut report = evaluate(backend.as_model(), &shifted, &cfg, !args.no_its)?;
    if args.strip_timings {
        strip_timings(&mut report);
    }
    ensure_dir(&args.out_dir)?;
    if format != Format::Csv {
        write_json(&report, &args.out_dir.join("report.json"))?;
    }
    if format != Format::Json {
        write_csv(
            &args.out_dir.join("report.csv"),
            &EVAL_CSV_HEADER,
            &eval_rows_csv(&report),
        )?;
    }

    let agg = &report.aggregates;
    println!(
        "{} samples, vanilla acc@1 {:.1}%",
        agg.samples,
        agg.vanilla_acc1 * 100.0
    );
    if let (Some(acc1), Some(acc5i), Some(acc5ii), Some(frob)) = (
        agg.its_acc1,
        agg.acc5_incumbent,
        agg.acc5_beam,
        agg.mean_frobenius,
    ) {
        println!(
            "canonicalized acc@1 {:.1}%, acc@5 {:.1}% / {:.1}%, mean Frobenius {:.4} (identity baseline {:.4})",
            acc1 * 100.0,
            acc5i * 100.0,
            acc5ii * 100.0,
            frob,
            agg.mean_identity_frobenius
        );
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let backend = load_backend(&args.search.model)?;
    let model = backend.as_model();
    let cfg = args.search.to_config()?;
    ensure_dir(&args.out_dir)?;
    let identity = its_core::Transform::identity();
    for input in &args.input {
        let stem = file_stem(input);
        let img: GrayImage = read_png(input)?;
        for (level, spec) in cfg.stack.layers().iter().enumerate() {
            let seed = its_core::seeding::mix(cfg.seed, &[level as u64]);
            let stats = orbit_stats(model, &img, spec, &identity, cfg.m_samples, seed, cfg.warp)?;
            let smoothed = smooth_profile(&stats.profile, &cfg.kernel)?;
            let confidence = group_confidence(&smoothed)?;
            let rows: Vec<Vec<String>> = spec
                .exponents()
                .enumerate()
                .map(|(i, j)| {
                    vec![
                        j.to_string(),
                        spec.param_at(j).to_string(),
                        stats.profile.values[i].to_string(),
                        smoothed.values[i].to_string(),
                        confidence[i].to_string(),
                        stats.entropies[i].to_string(),
                    ]
                })
                .collect();
            let path = args.out_dir.join(format!(
                "sweep_{stem}_layer{level}_{}.csv",
                spec.kind.label()
            ));
            write_csv(
                &path,
                &[
                    "j",
                    "u",
                    "mean_energy",
                    "smoothed_energy",
                    "confidence",
                    "entropy",
                ],
                &rows,
            )?;
            println!("wrote {}", path.display());
        }
        if args.change_of_mind {
            sweep_change_of_mind(model, &img, &stem, &args, &cfg)?;
        }
    }
    Ok(())
}

fn sweep_change_of_mind(
    model: &dyn LogitModel<Scalar>,
    img: &GrayImage,
    stem: &str,
    args: &SweepArgs,
    cfg: &SearchConfig<Scalar>,
) -> Result<()> {
    let label = match args.label {
        Some(l) => l,
        None => top1(&model.evaluate(img, None)?),
    };
    let rot = SubgroupSpec::new(SubgroupKind::Rotation, std::f64::consts::PI, 9)?;
    let shear = SubgroupSpec::new(SubgroupKind::ShearX, 0.25, 9)?;
    let mut grid_cfg = cfg.clone();
    grid_cfg.k = grid_cfg.k.max(2);
    let cells = pose_grid_outcomes(model, img, label, rot, shear, &grid_cfg)?;
    let grids = change_of_mind_grids(&cells)?;
    write_json(
        &json!({ "label": label, "cells": cells, "grids": grids }),
        &args.out_dir.join(format!("change_of_mind_{stem}.json")),
    )?;
    let header: Vec<String> = std::iter::once("rot_j".to_string())
        .chain(shear.exponents().map(|j| format!("sh_{j}")))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    for (name, grid) in [
        ("distance", &grids.distance),
        ("accuracy", &grids.accuracy),
        ("confidence", &grids.confidence),
        ("support", &grids.support),
    ] {
        let rows: Vec<Vec<String>> = rot
            .exponents()
            .zip(grid)
            .map(|(j, row)| {
                std::iter::once(j.to_string())
                    .chain(row.iter().map(|v| v.to_string()))
                    .collect()
            })
            .collect();
        let path = args
            .out_dir
            .join(format!("change_of_mind_{stem}_{name}.csv"));
        write_csv(&path, &header_refs, &rows)?;
        println!("wrote {}", path.display());
    }
    if grids.degenerate {
        eprintln!("warning: all hypothesis distances equal; the distance grid is all zeros");
    }
    Ok(())
}

fn run_profile(args: ProfileArgs) -> Result<()> {
    let backend = load_backend(&args.search.model)?;
    let cfg = args.search.to_config()?;
    let img: GrayImage = match &args.input {
        Some(path) => read_png(path)?,
        None => harness::render_canonical(harness::ShapeClass::Arrow, 32),
    };
    let format = parse_format(&args.format)?;
    let profile_cfg = ProfileConfig {
        depths: args.depths.clone(),
        ks: args.ks.clone(),
        ms: args.ms.clone(),
        repeats: args.repeats,
        seed: args.search.seed,
    };
    let rows = runtime_profile(backend.as_model(), &img, &cfg.stack, &profile_cfg)?;
    ensure_dir(&args.out_dir)?;
    if format != Format::Csv {
        write_json(&rows, &args.out_dir.join("profile.json"))?;
    }
    if format != Format::Json {
        write_csv(
            &args.out_dir.join("profile.csv"),
            &PROFILE_CSV_HEADER,
            &profile_rows_csv(&rows),
        )?;
    }
    println!("depth  k  M  evaluations  wall_ms (mean ± sd)");
    for r in &rows {
        println!(
            "{:>5} {:>2} {:>2} {:>12}  {:.3} ± {:.3}",
            r.depth, r.k, r.m_samples, r.evaluations, r.wall_ms_mean, r.wall_ms_sd
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset(args) => run_gen_dataset(args),
        Command::TrainToy(args) => run_train_toy(args),
        Command::Canonicalize(args) => run_canonicalize(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Profile(args) => run_profile(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
