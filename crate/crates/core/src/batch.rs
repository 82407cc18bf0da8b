//! Directory-level pipelines: segmentation and triplet generation.
//!
//! Files are processed in parallel on a private thread pool, but each file's
//! randomness comes from its own stream (derived from its sorted index) and
//! results are collected back into input order, so the outputs do not depend
//! on the number of workers.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::brush::AnomalyLayer;
use crate::config::{Config, NormalizeConfig};
use crate::dataio::{scan_images, scan_inputs, write_manifest, ManifestRecord, Status, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::image::{normalize, GrayImage};
use crate::io::{load_gray, save_gray16, save_mask, save_overlay};
use crate::pbtseg::{segment_lungs, segment_lungs_traced, LungMasks};
use crate::synth::{synthesize, Provenance, Triplet};
use crate::transforms::{self, ComposeTrace};

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Glob applied to file names; `None` selects every PNG and PGM.
    pub pattern: Option<String>,
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            pattern: None,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SegmentOptions {
    pub batch: BatchOptions,
    pub overlay: bool,
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct SynthesizeOptions {
    pub batch: BatchOptions,
    pub per_image_triplets: usize,
    /// Write every intermediate opacity layer as a 16-bit PNG.
    pub dump_stages: bool,
    /// Write each triplet's provenance as JSON next to its images.
    pub write_provenance: bool,
}

impl Default for SynthesizeOptions {
    fn default() -> Self {
        Self {
            batch: BatchOptions::default(),
            per_image_triplets: 1,
            dump_stages: false,
            write_provenance: false,
        }
    }
}

fn list_inputs(dir: &Path, options: &BatchOptions) -> Result<Vec<PathBuf>> {
    match &options.pattern {
        Some(p) => scan_inputs(dir, p),
        None => scan_images(dir),
    }
}

fn run_parallel<T: Send, R: Send>(
    jobs: usize,
    items: Vec<T>,
    f: impl Fn(T) -> R + Sync + Send,
) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads an image and applies the configured intensity normalization.
pub fn load_normalized(path: &Path, config: &NormalizeConfig) -> Result<GrayImage> {
    let image = load_gray(path)?;
    if config.enabled {
        normalize(&image, config.lo_percentile, config.hi_percentile)
    } else {
        Ok(image)
    }
}

/// Outcome of segmenting one file.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    pub source: PathBuf,
    pub lung_path: Option<PathBuf>,
    pub error: Option<String>,
}

/// Writes `<stem>_lung.png` for every input, plus `<stem>_overlay.png` and
/// `<stem>_trace.json` when requested.
pub fn segment_dataset(
    input_dir: impl AsRef<Path>,
    output_dir: impl AsRef<Path>,
    config: &Config,
    options: &SegmentOptions,
) -> Result<Vec<SegmentOutcome>> {
    config.validate()?;
    let inputs = list_inputs(input_dir.as_ref(), &options.batch)?;
    let out = output_dir.as_ref();
    create_dir(out)?;
    run_parallel(options.batch.jobs, inputs, |path| {
        let result = segment_one(&path, out, config, options);
        match result {
            Ok(lung_path) => SegmentOutcome {
                source: path,
                lung_path: Some(lung_path),
                error: None,
            },
            Err(e) => {
                warn!("{}: {e}", path.display());
                SegmentOutcome {
                    source: path,
                    lung_path: None,
                    error: Some(e.to_string()),
                }
            }
        }
    })
}

fn segment_one(path: &Path, out: &Path, config: &Config, options: &SegmentOptions) -> Result<PathBuf> {
    let image = load_normalized(path, &config.normalize)?;
    let s = stem(path);
    let (lungs, trace) = if options.trace {
        let (lungs, trace) = segment_lungs_traced(&image, &config.pbtseg)?;
        (lungs, Some(trace))
    } else {
        (segment_lungs(&image, &config.pbtseg)?, None)
    };
    if let Some(trace) = trace {
        let p = out.join(format!("{s}_trace.json"));
        let text = serde_json::to_string_pretty(&trace).expect("trace serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let lung_path = out.join(format!("{s}_lung.png"));
    save_mask(&lungs.combined, &lung_path)?;
    if options.overlay {
        save_overlay(&image, &lungs.combined, [255, 0, 0], out.join(format!("{s}_overlay.png")))?;
    }
    info!("{}: lung area {}", path.display(), lungs.combined.count());
    Ok(lung_path)
}

/// Runs segmentation then synthesis over every input and writes the
/// triplets plus `manifest.jsonl`. Failures are recorded as error rows and do
/// not stop the batch.
///
/// The `k`-th input (sorted by name) uses stream ids `k*N .. k*N + N` for `N`
/// triplets per image.
pub fn generate_dataset(
    input_dir: impl AsRef<Path>,
    output_dir: impl AsRef<Path>,
    config: &Config,
    options: &SynthesizeOptions,
) -> Result<Vec<ManifestRecord>> {
    config.validate()?;
    if options.per_image_triplets == 0 {
        return Err(Error::InvalidConfig("per_image_triplets must be at least 1".into()));
    }
    let inputs = list_inputs(input_dir.as_ref(), &options.batch)?;
    let out = output_dir.as_ref();
    create_dir(out)?;
    let indexed: Vec<(usize, PathBuf)> = inputs.into_iter().enumerate().collect();
    let per_file = run_parallel(options.batch.jobs, indexed, |(k, path)| {
        generate_for_file(k as u64, &path, out, config, options)
    })?;
    let records: Vec<ManifestRecord> = per_file.into_iter().flatten().collect();
    write_manifest(out.join(MANIFEST_NAME), &records)?;
    Ok(records)
}

fn generate_for_file(
    k: u64,
    path: &Path,
    out: &Path,
    config: &Config,
    options: &SynthesizeOptions,
) -> Vec<ManifestRecord> {
    let n = options.per_image_triplets as u64;
    let source = path.display().to_string();
    let fail_all = |msg: String| {
        warn!("{source}: {msg}");
        (0..n)
            .map(|j| ManifestRecord::error(source.clone(), config.seed, k * n + j, msg.clone()))
            .collect::<Vec<_>>()
    };
    let image = match load_normalized(path, &config.normalize) {
        Ok(i) => i,
        Err(e) => return fail_all(e.to_string()),
    };
    let lungs = match segment_lungs(&image, &config.pbtseg) {
        Ok(l) => l,
        Err(e) => return fail_all(e.to_string()),
    };
    let synth = config.synthesis();
    let s = stem(path);
    (0..n)
        .map(|j| {
            let stream_id = k * n + j;
            let prefix = if n == 1 { s.clone() } else { format!("{s}_v{j}") };
            let result = synthesize(&image, &lungs, &synth, stream_id)
                .and_then(|t| write_triplet(&t, &lungs, &prefix, out, config, options).map(|r| (t, r)));
            match result {
                Ok((_, record)) => ManifestRecord { source: source.clone(), ..record },
                Err(e) => {
                    warn!("{source} (stream {stream_id}): {e}");
                    ManifestRecord::error(source.clone(), config.seed, stream_id, e.to_string())
                }
            }
        })
        .collect()
}

fn write_triplet(
    t: &Triplet,
    lungs: &LungMasks,
    prefix: &str,
    out: &Path,
    config: &Config,
    options: &SynthesizeOptions,
) -> Result<ManifestRecord> {
    let names = [
        format!("{prefix}_syn.png"),
        format!("{prefix}_mask.png"),
        format!("{prefix}_lung.png"),
        format!("{prefix}_norm.png"),
    ];
    save_gray16(&t.i_syn, out.join(&names[0]))?;
    save_mask(&t.m_anomaly, out.join(&names[1]))?;
    save_mask(&lungs.combined, out.join(&names[2]))?;
    save_gray16(&t.i_norm, out.join(&names[3]))?;
    if options.dump_stages {
        for (name, layer) in stage_layers(t, config)? {
            save_gray16(&layer.into_image(), out.join(format!("{prefix}_stage_{name}.png")))?;
        }
    }
    if options.write_provenance {
        let p = out.join(format!("{prefix}_provenance.json"));
        let text = serde_json::to_string(&t.provenance).expect("provenance serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let lung_area = lungs.combined.count();
    let [syn, mask, lung, norm] = names;
    Ok(ManifestRecord {
        source: String::new(),
        syn_path: Some(syn),
        mask_path: Some(mask),
        lung_path: Some(lung),
        norm_path: Some(norm),
        seed: t.seed,
        stream_id: t.provenance.stream_id,
        anomaly_area_fraction: Some(t.m_anomaly.count() as f64 / lung_area as f64),
        stages_applied: t.provenance.compose.stages_applied.clone(),
        status: Status::Ok,
        error_msg: None,
    })
}

/// The base layer, the layer after each applied stage, and the final layer
/// after lung restriction, labelled `0_base`, `1_cryst`, ..., `final`.
pub fn stage_layers(t: &Triplet, config: &Config) -> Result<Vec<(String, AnomalyLayer)>> {
    let stages = &t.provenance.compose.stages_applied;
    let mut out = vec![("0_base".to_string(), t.a_base.clone())];
    for i in 0..stages.len() {
        let prefix = ComposeTrace {
            stages_applied: stages[..=i].to_vec(),
            cryst_seeds: t.provenance.compose.cryst_seeds.clone(),
        };
        let layer = transforms::replay(&t.a_base, &t.i_norm, &config.transform, &prefix)?;
        out.push((format!("{}_{}", i + 1, stages[i].name()), layer));
    }
    out.push(("final".to_string(), t.a_final.clone()));
    Ok(out)
}

/// Rebuilds the triplet for one `ok` manifest record from its source image
/// and the configuration alone.
pub fn regenerate(record: &ManifestRecord, config: &Config) -> Result<(Triplet, LungMasks)> {
    let image = load_normalized(Path::new(&record.source), &config.normalize)?;
    let lungs = segment_lungs(&image, &config.pbtseg)?;
    let synth = crate::synth::SynthesisConfig {
        master_seed: record.seed,
        ..config.synthesis()
    };
    let t = synthesize(&image, &lungs, &synth, record.stream_id)?;
    Ok((t, lungs))
}

/// Reads a provenance file written by [`generate_dataset`].
pub fn read_provenance(path: impl AsRef<Path>) -> Result<Provenance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        line: e.line(),
        message: e.to_string(),
    })
}
