//! `lungsynth` command-line front end.
//!
//! Exit codes: 0 on success, 1 when input data is missing, unreadable or
//! invalid (or any per-file error occurred under `--strict`), 2 for usage and
//! configuration errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use serde_json::json;

use lungsynth::batch::{self, BatchOptions, SegmentOptions, SynthesizeOptions};
use lungsynth::config::{load_config, Config};
use lungsynth::dataio::{scan_images, validate_manifest};
use lungsynth::io::{load_gray, load_mask, save_gray16, save_gray8, save_mask};
use lungsynth::losses::{self, FeatureVector, LossInputs};
use lungsynth::metrics::{self, ScoreSample};
use lungsynth::{phantom, RandomStream};

#[derive(Parser, Debug)]
#[command(name = "lungsynth", version, about = "Lung-field segmentation and synthetic opacity generation for chest radiographs")]
struct Cli {
    /// Configuration file (TOML, dotted keys)
    #[arg(long, global = true, env = "LUNGSYNTH_CONFIG")]
    config: Option<PathBuf>,

    /// Master seed; overrides `seed` from the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-file parallelism
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Exit with status 1 if any individual file fails
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment lung fields, writing `<stem>_lung.png` per input
    Segment(SegmentArgs),
    /// Generate (normal, synthetic, mask) triplets and `manifest.jsonl`
    Synthesize(SynthesizeArgs),
    /// Residual anomaly map and mask from an image and its reconstruction
    Residual(ResidualArgs),
    /// Evaluate the training objective on one set of images, as JSON
    Loss(LossArgs),
    /// Image-level AUC and AP from a `score,label` CSV
    EvalImage(EvalImageArgs),
    /// Per-image Dice between predicted and ground-truth mask directories
    EvalPixel(EvalPixelArgs),
    /// Check every `ok` record of a manifest against the files it names
    ValidateManifest(ValidateArgs),
    /// Write procedural two-lung test images and their ground-truth masks
    Phantom(PhantomArgs),
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also write an RGB preview with the mask boundary drawn
    #[arg(long)]
    overlay: bool,
    /// Also write the per-threshold decision record as JSON
    #[arg(long)]
    trace: bool,
    /// Glob on file names (default: all PNG and PGM files)
    #[arg(long)]
    pattern: Option<String>,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Write every intermediate opacity layer as a 16-bit PNG
    #[arg(long)]
    dump_stages: bool,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    per_image_triplets: u64,
    /// Write each triplet's random choices as `<stem>_provenance.json`
    #[arg(long)]
    provenance: bool,
    #[arg(long)]
    pattern: Option<String>,
}

#[derive(Args, Debug)]
struct ResidualArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    recon: PathBuf,
    /// Squared-error threshold (default from configuration)
    #[arg(long)]
    tau: Option<f64>,
    /// Directory for `<stem>_anomaly.png` and `<stem>_residual_mask.png`
    #[arg(long, default_value = ".")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long)]
    norm: PathBuf,
    #[arg(long)]
    syn: PathBuf,
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Embedding of the synthetic image, comma separated
    #[arg(long, requires = "feat_b")]
    feat_a: Option<PathBuf>,
    /// Embedding of the normal image, comma separated
    #[arg(long, requires = "feat_a")]
    feat_b: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalImageArgs {
    /// CSV with `score,label` rows; a header row is allowed
    #[arg(long)]
    scores: PathBuf,
}

#[derive(Args, Debug)]
struct EvalPixelArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Path to `manifest.jsonl`, or the directory holding it
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PhantomKind {
    TwoLung,
    Merge,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, value_enum, default_value_t = PhantomKind::TwoLung)]
    kind: PhantomKind,
}

/// An error plus the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_settings(cli: &Cli) -> CliResult<Config> {
    let mut config = match &cli.config {
        Some(p) => load_config(p)
            .with_context(|| format!("loading configuration {}", p.display()))
            .map_err(usage)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

/// Per-file failures are warnings unless `--strict` is set.
fn finish(cli: &Cli, failures: usize, total: usize) -> CliResult {
    if failures == 0 {
        return Ok(());
    }
    let msg = format!("{failures} of {total} inputs failed");
    if cli.strict {
        Err(data(anyhow!(msg)))
    } else {
        warn!("{msg}");
        Ok(())
    }
}

fn run(cli: &Cli) -> CliResult {
    let config = load_settings(cli)?;
    if cli.jobs == 0 {
        return Err(usage(anyhow!("--jobs must be at least 1")));
    }
    let batch = |pattern: &Option<String>| BatchOptions {
        pattern: pattern.clone(),
        jobs: cli.jobs,
    };
    match &cli.command {
        Command::Segment(a) => {
            let options = SegmentOptions {
                batch: batch(&a.pattern),
                overlay: a.overlay,
                trace: a.trace,
            };
            let outcomes = batch::segment_dataset(&a.input, &a.output, &config, &options).map_err(data)?;
            let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
            info!("segmented {} of {} inputs", outcomes.len() - failures, outcomes.len());
            finish(cli, failures, outcomes.len())
        }
        Command::Synthesize(a) => {
            let options = SynthesizeOptions {
                batch: batch(&a.pattern),
                per_image_triplets: a.per_image_triplets as usize,
                dump_stages: a.dump_stages,
                write_provenance: a.provenance,
            };
            let records = batch::generate_dataset(&a.input, &a.output, &config, &options).map_err(data)?;
            let failures = records.iter().filter(|r| !r.is_ok()).count();
            info!("wrote {} triplets to {}", records.len() - failures, a.output.display());
            finish(cli, failures, records.len())
        }
        Command::Residual(a) => residual(a, &config),
        Command::Loss(a) => loss(a, &config),
        Command::EvalImage(a) => eval_image(a),
        Command::EvalPixel(a) => eval_pixel(cli, a),
        Command::ValidateManifest(a) => {
            let path = if a.manifest.is_dir() {
                a.manifest.join(lungsynth::dataio::MANIFEST_NAME)
            } else {
                a.manifest.clone()
            };
            let report = validate_manifest(&path).map_err(data)?;
            for p in &report.problems {
                error!("{p}");
            }
            emit(&serde_json::to_value(&report).expect("report serializes"));
            if report.is_valid() {
                Ok(())
            } else {
                Err(data(anyhow!("{} problems in {}", report.problems.len(), path.display())))
            }
        }
        Command::Phantom(a) => write_phantoms(a, config.seed),
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn residual(a: &ResidualArgs, config: &Config) -> CliResult {
    let tau = a.tau.unwrap_or(config.loss.tau);
    if !(tau > 0.0) {
        return Err(usage(anyhow!("--tau must be positive")));
    }
    let image = load_gray(&a.input).map_err(data)?;
    let recon = load_gray(&a.recon).map_err(data)?;
    let map = losses::anomaly_map(&image, &recon).map_err(data)?;
    let mask = losses::binarize_map(&map, tau);
    std::fs::create_dir_all(&a.output)
        .with_context(|| format!("creating {}", a.output.display()))
        .map_err(data)?;
    let stem = stem_of(&a.input);
    let map_path = a.output.join(format!("{stem}_anomaly.png"));
    let mask_path = a.output.join(format!("{stem}_residual_mask.png"));
    save_gray8(&map, &map_path).map_err(data)?;
    save_mask(&mask, &mask_path).map_err(data)?;
    emit(&json!({
        "anomaly_map": map_path,
        "mask": mask_path,
        "tau": tau,
        "anomalous_pixels": mask.count(),
    }));
    Ok(())
}

fn read_numbers(path: &Path) -> anyhow::Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        for field in record.iter().filter(|f| !f.is_empty()) {
            out.push(
                field
                    .parse::<f64>()
                    .with_context(|| format!("{}: {field:?} is not a number", path.display()))?,
            );
        }
    }
    Ok(out)
}

fn loss(a: &LossArgs, config: &Config) -> CliResult {
    let mut loss_config = config.loss.clone();
    if let Some(t) = a.tau {
        loss_config.tau = t;
    }
    if let Some(e) = a.eps {
        loss_config.eps = e;
    }
    loss_config.validate().map_err(usage)?;
    let norm = load_gray(&a.norm).map_err(data)?;
    let syn = load_gray(&a.syn).map_err(data)?;
    let recon = load_gray(&a.recon).map_err(data)?;
    let mask = load_mask(&a.mask).map_err(data)?;
    let features = match (&a.feat_a, &a.feat_b) {
        (Some(fa), Some(fb)) => {
            let fa = FeatureVector::new(read_numbers(fa).map_err(data)?).map_err(data)?;
            let fb = FeatureVector::new(read_numbers(fb).map_err(data)?).map_err(data)?;
            Some((fa, fb))
        }
        _ => None,
    };
    let inputs = LossInputs {
        i_norm: &norm,
        i_syn: &syn,
        i_hat: &recon,
        m_anomaly: &mask,
        features: features.as_ref().map(|(x, y)| (x, y)),
    };
    let report = losses::total_loss(&inputs, &loss_config).map_err(data)?;
    emit(&serde_json::to_value(report).expect("report serializes"));
    Ok(())
}

fn parse_label(field: &str) -> Option<bool> {
    match field.to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

fn read_scores(path: &Path) -> anyhow::Result<Vec<ScoreSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let (Some(s), Some(l)) = (record.get(0), record.get(1)) else {
            bail!("{} line {}: expected `score,label`", path.display(), i + 1);
        };
        match (s.parse::<f64>(), parse_label(l)) {
            (Ok(score), Some(label)) if score.is_finite() => out.push(ScoreSample::new(score, label)),
            // a header line
            _ if i == 0 => continue,
            _ => bail!("{} line {}: cannot parse {s:?},{l:?}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn eval_image(a: &EvalImageArgs) -> CliResult {
    let samples = read_scores(&a.scores).map_err(data)?;
    let auc = metrics::auc(&samples).map_err(data)?;
    let ap = metrics::average_precision(&samples).map_err(data)?;
    let positives = samples.iter().filter(|s| s.label).count();
    emit(&json!({
        "auc": auc,
        "ap": ap,
        "n": samples.len(),
        "positives": positives,
    }));
    Ok(())
}

fn eval_pixel(cli: &Cli, a: &EvalPixelArgs) -> CliResult {
    let index = |dir: &Path| -> CliResult<BTreeMap<String, PathBuf>> {
        Ok(scan_images(dir)
            .map_err(data)?
            .into_iter()
            .map(|p| (stem_of(&p), p))
            .collect())
    };
    let pred = index(&a.pred)?;
    let gt = index(&a.gt)?;
    let mut images = Vec::new();
    let mut errors = Vec::new();
    for (name, p) in &pred {
        let Some(g) = gt.get(name) else {
            errors.push(format!("{}: no ground truth named {name}", p.display()));
            continue;
        };
        let dice = load_mask(p)
            .and_then(|pm| load_mask(g).and_then(|gm| metrics::dice_score(&pm, &gm)));
        match dice {
            Ok(d) => images.push(json!({ "name": name, "dice": d })),
            Err(e) => errors.push(e.to_string()),
        }
    }
    for (name, g) in &gt {
        if !pred.contains_key(name) {
            errors.push(format!("{}: no prediction named {name}", g.display()));
        }
    }
    for e in &errors {
        error!("{e}");
    }
    let dices: Vec<f64> = images.iter().map(|v| v["dice"].as_f64().unwrap_or(0.0)).collect();
    let mean = if dices.is_empty() {
        None
    } else {
        Some(dices.iter().sum::<f64>() / dices.len() as f64)
    };
    emit(&json!({
        "images": images,
        "mean_dice": mean,
        "errors": errors,
    }));
    if dices.is_empty() && !errors.is_empty() {
        return Err(data(anyhow!("no image pairs could be scored")));
    }
    finish(cli, errors.len(), pred.len().max(gt.len()))
}

fn write_phantoms(a: &PhantomArgs, seed: u64) -> CliResult {
    let gt_dir = a.output.join("gt");
    std::fs::create_dir_all(&gt_dir)
        .with_context(|| format!("creating {}", gt_dir.display()))
        .map_err(data)?;
    if a.size < 32 {
        return Err(usage(anyhow!("--size must be at least 32")));
    }
    for i in 0..a.count {
        let mut rng = RandomStream::new(seed, i as u64);
        let p = match a.kind {
            PhantomKind::TwoLung => phantom::two_lung(a.size, &mut rng),
            PhantomKind::Merge => phantom::merge_inducing(a.size, &mut rng),
        };
        let name = format!("phantom_{i:04}.png");
        save_gray16(&p.image, a.output.join(&name)).map_err(data)?;
        save_mask(&p.lungs(), gt_dir.join(&name)).map_err(data)?;
    }
    info!("wrote {} phantoms to {}", a.count, a.output.display());
    Ok(())
}
