//! Command-line surface for the hyperspectral fruit-ripeness pipeline.
//!
//! Every verb reads an optional pipeline config file (JSON), applies flag
//! overrides, and writes machine-readable reports under a run-stamped
//! directory. Reports embed the resolved config hash and seed, so identical
//! config + seed reproduces identical payloads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use hsripe_core::attribution;
use hsripe_core::cube::{calibrate, CameraProfile, HyperCube, RawFrame};
use hsripe_core::dataset::{
    self, class_for, AugmentationConfig, Category, LabelRecord, Split,
};
use hsripe_core::envi::{self, CubeFile};
use hsripe_core::falsecolor;
use hsripe_core::models::{
    ClassifierModel, ConvType, Head, ModelArch, ModelConfig, Pooling,
};
use hsripe_core::nn::Loss;
use hsripe_core::preprocess::{crop_to_fruit, resize, to_rgb, BinaryMask, PixelClassifier};
use hsripe_core::synth::{self, SynthSpec};
use hsripe_core::train::{
    self, evaluate_tta, grid_to_csv, reduce_cubes, run_benchmark_grid, GridModelKind,
    OptimizerChoice, Reduction, TrainConfig,
};

const DATA_ROOT_ENV: &str = "HSRIPE_DATA_ROOT";
const SPLIT_RATIOS: [f64; 3] = [0.75, 0.125, 0.125];

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PipelineConfig {
    data_root: PathBuf,
    output_dir: PathBuf,
    camera: String,
    category: Category,
    reduction: Reduction,
    model: String,
    train: TrainConfig,
    seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let data_root = std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        Self {
            data_root,
            output_dir: PathBuf::from("runs"),
            camera: "specim_fx10".into(),
            category: Category::Firmness,
            reduction: Reduction::Full,
            model: "hscnn".into(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    fn validate(&self) -> Result<()> {
        if CameraProfile::by_name(&self.camera).is_none() {
            bail!("invalid field `camera`: unknown profile `{}`", self.camera);
        }
        if !matches!(self.model.as_str(), "hscnn" | "resnet18" | "alexnet") {
            bail!("invalid field `model`: unknown architecture `{}`", self.model);
        }
        self.train
            .validate()
            .map_err(|e| anyhow!("invalid field `train`: {e}"))?;
        Ok(())
    }

    fn hash(&self) -> String {
        // FNV-1a over the canonical JSON form
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

fn parse_reduction(s: &str) -> Result<Reduction> {
    match s {
        "full" => Ok(Reduction::Full),
        "rgb" => Ok(Reduction::Rgb),
        "pca5" => Ok(Reduction::Pca5),
        other => bail!("invalid field `reduction`: `{other}` (full|rgb|pca5)"),
    }
}

fn parse_category(s: &str) -> Result<Category> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| anyhow!("invalid field `category`: `{s}`"))
}

// ------------------------------------------------------------------- cli

#[derive(Parser)]
#[command(name = "hsripe", about = "Hyperspectral fruit-ripeness pipeline")]
struct Cli {
    /// Pipeline config file (JSON); defaults are used when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Override the data root (also via HSRIPE_DATA_ROOT)
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Override the ripeness category (firmness|sweetness|ripeness)
    #[arg(long, global = true)]
    category: Option<String>,
    /// Override the band reduction (full|rgb|pca5)
    #[arg(long, global = true)]
    reduction: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate raw frames against white/dark references
    Calibrate(CalibrateArgs),
    /// Segment, crop, and resize calibrated cubes
    Preprocess(PreprocessArgs),
    /// Stratified fruit-level train/val/test split of a manifest
    Split(SplitArgs),
    /// Train a classifier on a prepared dataset
    Train(TrainArgs),
    /// Evaluate a trained classifier on the test split
    Evaluate(EvaluateArgs),
    /// Model x reduction x category benchmark grid
    Grid(GridArgs),
    /// Paired-seed ablation along one design axis
    Ablate(AblateArgs),
    /// Integrated-gradients attribution maps for one recording
    Attribute(AttributeArgs),
    /// Autoencoder false-color rendering of the ripening process
    Falsecolor(FalsecolorArgs),
    /// Generate a synthetic labeled dataset
    Synth(SynthArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Raw ENVI frames to calibrate
    #[arg(long, required = true, num_args = 1..)]
    raw: Vec<PathBuf>,
    #[arg(long)]
    white: PathBuf,
    #[arg(long)]
    dark: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset directory (manifest.csv + cubes/)
    #[arg(long)]
    data: PathBuf,
    /// Trained background-classifier file
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// P(fruit) threshold used with --classifier
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    /// Fallback: mark pixels with mean reflectance above this as fruit
    #[arg(long)]
    simple_threshold: Option<f32>,
    /// Output spatial size
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Architecture override (hscnn|resnet18|alexnet)
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint produced by `train`
    #[arg(long)]
    model: PathBuf,
    /// Test-time-augmentation views (1..=8)
    #[arg(long, default_value_t = 8)]
    views: usize,
    /// Plain evaluation without test-time augmentation
    #[arg(long)]
    plain: bool,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated: hscnn,resnet18,alexnet,svm_rbf,knn
    #[arg(long, default_value = "hscnn,svm_rbf,knn")]
    models: String,
    /// Comma-separated: full,rgb,pca5
    #[arg(long, default_value = "full")]
    reductions: String,
    /// Comma-separated: firmness,sweetness,ripeness
    #[arg(long, default_value = "firmness")]
    categories: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// pooling|conv|head|loss|optimizer|augmentation|tta
    #[arg(long)]
    axis: String,
    /// Paired seeds per variant
    #[arg(long, default_value_t = 1)]
    repeats: u64,
}

#[derive(Args)]
struct AttributeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Recording id from the manifest
    #[arg(long)]
    recording: String,
    /// Defaults to the predicted class
    #[arg(long)]
    target_class: Option<usize>,
    #[arg(long, default_value_t = 128)]
    steps: usize,
}

#[derive(Args)]
struct FalsecolorArgs {
    #[arg(long)]
    data: PathBuf,
    /// Reuse an existing encoder bundle instead of training one
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Skip the classification fine-tuning stage
    #[arg(long)]
    reconstruction_only: bool,
    /// Keep the encoder frozen during fine-tuning (ablation)
    #[arg(long)]
    freeze_encoder: bool,
    /// Recording ids to render; defaults to the whole manifest
    #[arg(long, num_args = 0..)]
    render: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// unripe,perfect,overripe recording counts
    #[arg(long, default_value = "10,10,10")]
    counts: String,
    #[arg(long, default_value = "avocado")]
    fruit: String,
    /// Spatial size of the generated cubes
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Put the class signal in the NIR bump only
    #[arg(long)]
    nir_only: bool,
    /// Per-band relative noise level
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

// ------------------------------------------------------------ data layout
//
// A dataset directory holds `manifest.csv`, `cubes/<recording_id>` (ENVI
// pairs), and optionally `masks/<recording_id>.png` (white = fruit).

fn load_manifest(dir: &Path) -> Result<Vec<LabelRecord>> {
    let path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(dataset::manifest_from_csv(&text)?)
}

fn load_cube_by_id(dir: &Path, id: &str) -> Result<HyperCube> {
    let path = dir.join("cubes").join(id);
    Ok(envi::load_cube(&path)
        .with_context(|| format!("loading {}", path.display()))?
        .into_cube()?)
}

fn load_mask(dir: &Path, id: &str) -> Option<BinaryMask> {
    let path = dir.join("masks").join(format!("{id}.png"));
    let img = image::open(&path).ok()?.to_luma8();
    let (w, h) = img.dimensions();
    Some(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] > 127
    }))
}

fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Luma([if mask[[y, x]] { 255 } else { 0 }]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Mask fallback when none is stored: any nonzero band marks fruit.
fn nonzero_mask(cube: &HyperCube) -> BinaryMask {
    Array2::from_shape_fn((cube.height(), cube.width()), |(y, x)| {
        (0..cube.bands()).any(|k| cube.data[[y, x, k]] != 0.0)
    })
}

fn load_triples(dir: &Path) -> Result<Vec<(HyperCube, LabelRecord, BinaryMask)>> {
    let records = load_manifest(dir)?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let cube = load_cube_by_id(dir, &r.recording_id)?;
        let mask = load_mask(dir, &r.recording_id).unwrap_or_else(|| nonzero_mask(&cube));
        out.push((cube, r, mask));
    }
    Ok(out)
}

/// Labeled (cube, class) sets per split after applying the configured
/// reduction; PCA is fit on the training split only.
fn prepared_sets(
    data: &[(HyperCube, LabelRecord, BinaryMask)],
    cfg: &PipelineConfig,
) -> Result<[Vec<(HyperCube, usize)>; 3]> {
    let subset: Vec<&(HyperCube, LabelRecord, BinaryMask)> = data
        .iter()
        .filter(|(_, r, _)| class_for(r, cfg.category).is_ok())
        .collect();
    if subset.is_empty() {
        bail!("no recordings carry a `{:?}` label", cfg.category);
    }
    let records: Vec<LabelRecord> = subset.iter().map(|(_, r, _)| r.clone()).collect();
    let assignment = dataset::split(&records, cfg.category, SPLIT_RATIOS, cfg.seed)?;
    let reduced = reduce_cubes(&subset, &assignment, cfg.reduction)?;
    let mut sets: [Vec<(HyperCube, usize)>; 3] = Default::default();
    for (cube, (_, r, _)) in reduced.into_iter().zip(&subset) {
        let label = class_for(r, cfg.category)?.class_index;
        let si = match assignment.of(&r.recording_id).expect("record was split") {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        sets[si].push((cube, label));
    }
    Ok(sets)
}

fn build_model(arch_name: &str, bands: usize, seed: u64) -> Result<ClassifierModel> {
    let arch = match arch_name {
        "hscnn" => ModelArch::HsCnn(ModelConfig::default_for(bands)),
        "resnet18" => ModelArch::ResNet18 { in_bands: bands },
        "alexnet" => ModelArch::AlexNet { in_bands: bands },
        other => bail!("invalid field `model`: unknown architecture `{other}`"),
    };
    Ok(ClassifierModel::build(arch, seed)?)
}

// ------------------------------------------------------------------ runs

struct Run {
    dir: PathBuf,
    config_hash: String,
    seed: u64,
}

impl Run {
    fn create(cfg: &PipelineConfig, verb: &str) -> Result<Run> {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_secs();
        let mut dir = cfg.output_dir.join(format!("{verb}-{stamp}"));
        let mut n = 1;
        while dir.exists() {
            n += 1;
            dir = cfg.output_dir.join(format!("{verb}-{stamp}-{n}"));
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Run {
            dir,
            config_hash: cfg.hash(),
            seed: cfg.seed,
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, payload: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Report<'a, T> {
            config_hash: &'a str,
            seed: u64,
            #[serde(flatten)]
            payload: &'a T,
        }
        let path = self.dir.join(name);
        let body = serde_json::to_string_pretty(&Report {
            config_hash: &self.config_hash,
            seed: self.seed,
            payload,
        })?;
        std::fs::write(&path, body)?;
        Ok(path)
    }

    fn write_text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        Ok(path)
    }
}

// ------------------------------------------------------------------ main

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();

    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| anyhow!("invalid field in config file: {e}"))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    } else {
        cfg.train.seed = cfg.seed;
    }
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(root) = cli.data_root {
        cfg.data_root = root;
    }
    if let Some(cat) = &cli.category {
        cfg.category = parse_category(cat)?;
    }
    if let Some(red) = &cli.reduction {
        cfg.reduction = parse_reduction(red)?;
    }
    cfg.validate()?;

    match &cli.command {
        Command::Calibrate(args) => cmd_calibrate(&cfg, args),
        Command::Preprocess(args) => cmd_preprocess(&cfg, args),
        Command::Split(args) => cmd_split(&cfg, args),
        Command::Train(args) => cmd_train(&cfg, args),
        Command::Evaluate(args) => cmd_evaluate(&cfg, args),
        Command::Grid(args) => cmd_grid(&cfg, args),
        Command::Ablate(args) => cmd_ablate(&cfg, args),
        Command::Attribute(args) => cmd_attribute(&cfg, args),
        Command::Falsecolor(args) => cmd_falsecolor(&cfg, args),
        Command::Synth(args) => cmd_synth(&cfg, args),
    }
}

// --------------------------------------------------------------- verbs

fn load_raw(path: &Path) -> Result<RawFrame> {
    match envi::load_cube(path)? {
        CubeFile::Raw(f) => Ok(f),
        CubeFile::Reflectance(_) => {
            bail!("{} holds calibrated reflectance, not raw counts", path.display())
        }
    }
}

fn cmd_calibrate(cfg: &PipelineConfig, args: &CalibrateArgs) -> Result<()> {
    let run = Run::create(cfg, "calibrate")?;
    let white = load_raw(&args.white)?;
    let dark = load_raw(&args.dark)?;
    std::fs::create_dir_all(run.dir.join("cubes"))?;
    let mut written = Vec::new();
    for raw_path in &args.raw {
        let raw = load_raw(raw_path)?;
        let cube = calibrate(&raw, &white, &dark)?;
        let stem = raw_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad raw path {}", raw_path.display()))?;
        envi::save_cube(&cube, &run.dir.join("cubes").join(stem))?;
        written.push(stem.to_string());
    }
    #[derive(Serialize)]
    struct Payload {
        calibrated: Vec<String>,
    }
    run.write_json("calibrate_report.json", &Payload { calibrated: written.clone() })?;
    println!("calibrated {} cube(s) into {}", written.len(), run.dir.display());
    Ok(())
}

fn cmd_preprocess(cfg: &PipelineConfig, args: &PreprocessArgs) -> Result<()> {
    let run = Run::create(cfg, "preprocess")?;
    let records = load_manifest(&args.data)?;
    let mut classifier = match (&args.classifier, args.simple_threshold) {
        (Some(path), _) => Some(PixelClassifier::load(path)?),
        (None, Some(_)) => None,
        (None, None) => bail!("pass --classifier or --simple-threshold"),
    };
    std::fs::create_dir_all(run.dir.join("cubes"))?;
    std::fs::create_dir_all(run.dir.join("masks"))?;
    std::fs::create_dir_all(run.dir.join("previews"))?;
    for r in &records {
        let cube = load_cube_by_id(&args.data, &r.recording_id)?;
        let mask = match &mut classifier {
            Some(clf) => hsripe_core::preprocess::segment(&cube, clf, args.threshold)?,
            None => {
                let t = args.simple_threshold.unwrap();
                Array2::from_shape_fn((cube.height(), cube.width()), |(y, x)| {
                    let mean: f32 = (0..cube.bands())
                        .map(|k| cube.data[[y, x, k]])
                        .sum::<f32>()
                        / cube.bands() as f32;
                    mean > t
                })
            }
        };
        let cropped = crop_to_fruit(&cube, &mask)?;
        let small = resize(&cropped, args.size, args.size)?;
        envi::save_cube(&small, &run.dir.join("cubes").join(&r.recording_id))?;
        save_mask(
            &nonzero_mask(&small),
            &run.dir.join("masks").join(format!("{}.png", r.recording_id)),
        )?;
        // preview only when the camera covers the visible range
        if let Ok(rgb) = to_rgb(&small) {
            let (h, w, _) = rgb.pixels.dim();
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    img.put_pixel(
                        x as u32,
                        y as u32,
                        image::Rgb([
                            (rgb.pixels[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                            (rgb.pixels[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                            (rgb.pixels[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
                        ]),
                    );
                }
            }
            img.save(run.dir.join("previews").join(format!("{}.png", r.recording_id)))?;
        }
    }
    run.write_text("manifest.csv", &dataset::manifest_to_csv(&records))?;
    println!(
        "preprocessed {} recording(s) to {}x{} in {}",
        records.len(),
        args.size,
        args.size,
        run.dir.display()
    );
    Ok(())
}

fn cmd_split(cfg: &PipelineConfig, args: &SplitArgs) -> Result<()> {
    let run = Run::create(cfg, "split")?;
    let records = load_manifest(&args.data)?;
    let labeled: Vec<LabelRecord> = records
        .iter()
        .filter(|r| class_for(r, cfg.category).is_ok())
        .cloned()
        .collect();
    let assignment = dataset::split(&labeled, cfg.category, SPLIT_RATIOS, cfg.seed)?;
    let weights = dataset::balance(&labeled, cfg.category)?;

    #[derive(Serialize)]
    struct Payload {
        category: Category,
        counts: [usize; 3],
        assignment: BTreeMap<String, Split>,
    }
    run.write_json(
        "split.json",
        &Payload {
            category: cfg.category,
            counts: assignment.counts(),
            assignment: assignment.assignment.clone(),
        },
    )?;
    let mut csv = String::from("recording_id,weight\n");
    for (r, w) in labeled.iter().zip(&weights) {
        csv.push_str(&format!("{},{w}\n", r.recording_id));
    }
    run.write_text("balance.csv", &csv)?;
    let [tr, va, te] = assignment.counts();
    println!("split {} labeled recording(s): train {tr} / val {va} / test {te}", labeled.len());
    println!("reports in {}", run.dir.display());
    Ok(())
}

fn cmd_train(cfg: &PipelineConfig, args: &TrainArgs) -> Result<()> {
    let run = Run::create(cfg, "train")?;
    let data = load_triples(&args.data)?;
    let sets = prepared_sets(&data, cfg)?;
    let bands = sets[0]
        .first()
        .map(|(c, _)| c.bands())
        .ok_or_else(|| anyhow!("training split is empty"))?;
    let arch = args.arch.as_deref().unwrap_or(&cfg.model);
    let mut model = build_model(arch, bands, cfg.seed)?;
    let report = train::train(&mut model, &sets[0], &sets[1], &cfg.train)?;
    model.save(&run.dir.join("model.bin"))?;
    run.write_json("train_report.json", &report)?;
    println!(
        "trained {arch} ({} params) for {} epoch(s); best val accuracy {:.3}",
        model.param_count(),
        report.stopped_epoch,
        report.best_val_accuracy
    );
    println!("checkpoint and report in {}", run.dir.display());
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, args: &EvaluateArgs) -> Result<()> {
    let run = Run::create(cfg, "evaluate")?;
    let data = load_triples(&args.data)?;
    let sets = prepared_sets(&data, cfg)?;
    let mut model = ClassifierModel::load(&args.model)?;
    let report = if args.plain {
        train::evaluate(&mut model, &sets[2])?
    } else {
        evaluate_tta(&mut model, &sets[2], args.views)?
    };
    run.write_json("eval_report.json", &report)?;
    println!(
        "test accuracy {:.3} over {} recording(s) ({} view(s))",
        report.accuracy,
        sets[2].len(),
        report.tta_views
    );
    println!("report in {}", run.dir.display());
    Ok(())
}

fn cmd_grid(cfg: &PipelineConfig, args: &GridArgs) -> Result<()> {
    let run = Run::create(cfg, "grid")?;
    let data = load_triples(&args.data)?;
    let models: Vec<GridModelKind> = args
        .models
        .split(',')
        .map(|s| match s.trim() {
            "hscnn" => Ok(GridModelKind::HsCnn),
            "resnet18" => Ok(GridModelKind::ResNet18),
            "alexnet" => Ok(GridModelKind::AlexNet),
            "svm_rbf" => Ok(GridModelKind::SvmRbf),
            "knn" => Ok(GridModelKind::Knn),
            other => bail!("invalid field `models`: `{other}`"),
        })
        .collect::<Result<_>>()?;
    let reductions: Vec<Reduction> = args
        .reductions
        .split(',')
        .map(|s| parse_reduction(s.trim()))
        .collect::<Result<_>>()?;
    let categories: Vec<Category> = args
        .categories
        .split(',')
        .map(|s| parse_category(s.trim()))
        .collect::<Result<_>>()?;

    let cells = run_benchmark_grid(&data, &models, &reductions, &categories, &cfg.train)?;
    let csv = grid_to_csv(&cells);
    run.write_text("grid.csv", &csv)?;
    #[derive(Serialize)]
    struct Payload<'a> {
        cells: &'a [train::GridCell],
    }
    run.write_json("grid.json", &Payload { cells: &cells })?;
    print!("{csv}");
    println!("grid table in {}", run.dir.display());
    Ok(())
}

fn cmd_ablate(cfg: &PipelineConfig, args: &AblateArgs) -> Result<()> {
    let run = Run::create(cfg, "ablate")?;
    let data = load_triples(&args.data)?;

    // each variant: name, HS-CNN config tweak, train-config tweak, TTA views
    type ModelTweak = fn(&mut ModelConfig);
    type TrainTweak = fn(&mut TrainConfig);
    let variants: Vec<(&str, ModelTweak, TrainTweak, usize)> = match args.axis.as_str() {
        "pooling" => vec![
            ("average", |m: &mut ModelConfig| m.pooling = Pooling::Average, |_| {}, 8),
            ("max", |m: &mut ModelConfig| m.pooling = Pooling::Max, |_| {}, 8),
        ],
        "conv" => vec![
            ("separable", |m: &mut ModelConfig| m.conv_type = ConvType::Separable, |_| {}, 8),
            ("normal", |m: &mut ModelConfig| m.conv_type = ConvType::Normal, |_| {}, 8),
        ],
        "head" => vec![
            ("gap_plus_linear", |m: &mut ModelConfig| m.head = Head::GapPlusLinear, |_| {}, 8),
            ("gap_only", |m: &mut ModelConfig| m.head = Head::GapOnly, |_| {}, 8),
            ("fully_connected", |m: &mut ModelConfig| m.head = Head::FullyConnected, |_| {}, 8),
        ],
        "loss" => vec![
            ("focal", |_| {}, |t: &mut TrainConfig| t.loss = Loss::Focal { gamma: 2.0 }, 8),
            ("cross_entropy", |_| {}, |t: &mut TrainConfig| t.loss = Loss::CrossEntropy, 8),
        ],
        "optimizer" => vec![
            ("adabound_lr01", |_| {}, |t: &mut TrainConfig| t.optimizer = OptimizerChoice::AdaboundLr01, 8),
            ("adabound_default", |_| {}, |t: &mut TrainConfig| t.optimizer = OptimizerChoice::AdaboundDefault, 8),
            ("adam", |_| {}, |t: &mut TrainConfig| t.optimizer = OptimizerChoice::Adam, 8),
            ("sgd", |_| {}, |t: &mut TrainConfig| t.optimizer = OptimizerChoice::Sgd, 8),
        ],
        "augmentation" => vec![
            (
                "geometric",
                |_| {},
                |t: &mut TrainConfig| t.augment = Some(AugmentationConfig::geometric_only()),
                8,
            ),
            ("none", |_| {}, |t: &mut TrainConfig| t.augment = None, 8),
        ],
        "tta" => vec![("tta8", |_| {}, |_| {}, 8), ("plain", |_| {}, |_| {}, 1)],
        other => bail!(
            "invalid field `axis`: `{other}` (pooling|conv|head|loss|optimizer|augmentation|tta)"
        ),
    };

    #[derive(Serialize)]
    struct Row {
        variant: String,
        seed: u64,
        accuracy: f64,
    }
    let mut rows = Vec::new();
    for (name, model_tweak, train_tweak, views) in &variants {
        for i in 0..args.repeats {
            let seed = cfg.seed + i;
            let mut local = cfg.clone();
            local.seed = seed;
            local.train.seed = seed;
            train_tweak(&mut local.train);
            let sets = prepared_sets(&data, &local)?;
            let bands = sets[0]
                .first()
                .map(|(c, _)| c.bands())
                .ok_or_else(|| anyhow!("training split is empty"))?;
            let mut mcfg = ModelConfig::default_for(bands);
            model_tweak(&mut mcfg);
            let mut model = ClassifierModel::build(ModelArch::HsCnn(mcfg), seed)?;
            train::train(&mut model, &sets[0], &sets[1], &local.train)?;
            let eval = evaluate_tta(&mut model, &sets[2], *views)?;
            println!("{name} (seed {seed}): test accuracy {:.3}", eval.accuracy);
            rows.push(Row {
                variant: name.to_string(),
                seed,
                accuracy: eval.accuracy,
            });
        }
    }

    let mut csv = String::from("variant,seed,accuracy\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.variant, r.seed, r.accuracy));
    }
    run.write_text("ablation.csv", &csv)?;
    #[derive(Serialize)]
    struct Payload {
        axis: String,
        rows: Vec<Row>,
    }
    run.write_json("ablation.json", &Payload { axis: args.axis.clone(), rows })?;
    println!("ablation table in {}", run.dir.display());
    Ok(())
}

fn cmd_attribute(cfg: &PipelineConfig, args: &AttributeArgs) -> Result<()> {
    let run = Run::create(cfg, "attribute")?;
    let cube = load_cube_by_id(&args.data, &args.recording)?;
    let mut model = ClassifierModel::load(&args.model)?;

    let target = match args.target_class {
        Some(t) => t,
        None => {
            let x = train::cube_to_input(&cube).insert_axis(ndarray::Axis(0));
            let probs = model.predict_probs(&x);
            (0..3).max_by(|&a, &b| probs[[0, a]].partial_cmp(&probs[[0, b]]).unwrap()).unwrap()
        }
    };
    let attr = attribution::integrated_gradients(&mut model, &cube, target, None, args.steps)?;
    let (signed, _) = attribution::spatial_impact(&attr);
    let profile = attribution::spectral_impact(&attr);
    attribution::save_spatial_png(&signed, &run.dir.join("spatial.png"))?;
    attribution::save_spectral_csv(&profile, &run.dir.join("spectral.csv"))?;
    attribution::save_spectral_plot_png(&profile, &run.dir.join("spectral.png"))?;

    #[derive(Serialize)]
    struct Payload {
        recording: String,
        target_class: usize,
        steps: usize,
        completeness_gap: f64,
    }
    run.write_json(
        "attribution.json",
        &Payload {
            recording: args.recording.clone(),
            target_class: target,
            steps: attr.steps,
            completeness_gap: attr.completeness_gap,
        },
    )?;
    println!(
        "attributed class {target} over {} step(s); completeness gap {:.2e}",
        attr.steps, attr.completeness_gap
    );
    println!("maps in {}", run.dir.display());
    Ok(())
}

fn cmd_falsecolor(cfg: &PipelineConfig, args: &FalsecolorArgs) -> Result<()> {
    let run = Run::create(cfg, "falsecolor")?;
    let data = load_triples(&args.data)?;

    let mut val_accuracy = None;
    let mut bundle = match &args.bundle {
        Some(path) => falsecolor::load_bundle(path)?,
        None => {
            let mut spectra = Vec::new();
            for (cube, _, mask) in &data {
                for y in 0..cube.height() {
                    for x in 0..cube.width() {
                        if mask[[y, x]] {
                            spectra.push(cube.spectrum_at(x, y)?);
                        }
                    }
                }
            }
            let bundle = falsecolor::train_autoencoder(&spectra, cfg.seed)?;
            println!(
                "autoencoder trained on {} spectra; held-out MSE {:.3e}",
                spectra.len(),
                bundle.held_out_mse
            );
            if args.reconstruction_only {
                bundle
            } else {
                let sets = prepared_sets(&data, cfg)?;
                let outcome = falsecolor::train_latent_classifier(
                    bundle,
                    &sets[0],
                    &sets[1],
                    cfg.category,
                    args.freeze_encoder,
                    &cfg.train,
                )?;
                println!("latent classifier val accuracy {:.3}", outcome.val_accuracy);
                val_accuracy = Some(outcome.val_accuracy);
                outcome.bundle
            }
        }
    };
    falsecolor::save_bundle(&bundle, &run.dir.join("bundle.json"))?;

    let ids: Vec<String> = if args.render.is_empty() {
        data.iter().map(|(_, r, _)| r.recording_id.clone()).collect()
    } else {
        args.render.clone()
    };
    std::fs::create_dir_all(run.dir.join("rendered"))?;
    for id in &ids {
        let cube = data
            .iter()
            .find(|(_, r, _)| &r.recording_id == id)
            .map(|(c, _, _)| c.clone())
            .map_or_else(|| load_cube_by_id(&args.data, id), Ok)?;
        let (img, warning) = falsecolor::render_false_color(&mut bundle, &cube)?;
        if let Some(w) = warning {
            eprintln!("warning: {w}");
        }
        falsecolor::save_false_color_png(&img, &run.dir.join("rendered").join(format!("{id}.png")))?;
    }

    #[derive(Serialize)]
    struct Payload {
        held_out_mse: f64,
        stage: falsecolor::Stage,
        val_accuracy: Option<f64>,
        rendered: Vec<String>,
    }
    run.write_json(
        "falsecolor_report.json",
        &Payload {
            held_out_mse: bundle.held_out_mse,
            stage: bundle.stage,
            val_accuracy,
            rendered: ids.clone(),
        },
    )?;
    println!("rendered {} image(s) into {}", ids.len(), run.dir.display());
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, args: &SynthArgs) -> Result<()> {
    let run = Run::create(cfg, "synth")?;
    let counts: Vec<usize> = args
        .counts
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| anyhow!("invalid field `counts`: `{}`", args.counts)))
        .collect::<Result<_>>()?;
    let [a, b, c] = counts[..] else {
        bail!("invalid field `counts`: expected three comma-separated integers");
    };
    let fruit = match args.fruit.as_str() {
        "avocado" => dataset::Fruit::Avocado,
        "kiwi" => dataset::Fruit::Kiwi,
        other => bail!("invalid field `fruit`: `{other}`"),
    };
    let camera = match cfg.camera.as_str() {
        "specim_fx10" => dataset::Camera::SpecimFx10,
        "redeye_17" => dataset::Camera::Redeye17,
        other => bail!("invalid field `camera`: `{other}`"),
    };
    let profile = CameraProfile::by_name(&cfg.camera).expect("validated");
    let axis = profile.axis();

    let mut template = if args.nir_only {
        SynthSpec::nir_only_with(axis, 0.5, cfg.seed)
    } else {
        SynthSpec::default_with(axis, 0.5, cfg.seed)
    };
    template.height = args.size;
    template.width = args.size;
    template.semi_axes = (args.size as f64 * 0.38, args.size as f64 * 0.28);
    template.noise_sigma = args.noise;
    template.fruit = fruit;
    template.camera = camera;

    let dataset_out = synth::generate_dataset(&template, [a, b, c], cfg.seed)?;
    std::fs::create_dir_all(run.dir.join("cubes"))?;
    std::fs::create_dir_all(run.dir.join("masks"))?;
    let mut records = Vec::new();
    for (cube, record, mask) in &dataset_out {
        envi::save_cube(cube, &run.dir.join("cubes").join(&record.recording_id))?;
        save_mask(mask, &run.dir.join("masks").join(format!("{}.png", record.recording_id)))?;
        records.push(record.clone());
    }
    run.write_text("manifest.csv", &dataset::manifest_to_csv(&records))?;
    #[derive(Serialize)]
    struct Payload {
        total: usize,
        class_counts: [usize; 3],
        bands: usize,
        nir_only: bool,
    }
    run.write_json(
        "synth_report.json",
        &Payload {
            total: records.len(),
            class_counts: [a, b, c],
            bands: profile.band_count,
            nir_only: args.nir_only,
        },
    )?;
    println!(
        "generated {} recording(s) ({} bands) into {}",
        records.len(),
        profile.band_count,
        run.dir.display()
    );
    Ok(())
}
