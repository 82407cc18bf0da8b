//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lungsynth::batch::{self, BatchOptions, SynthesizeOptions};
use lungsynth::config::Config;
use lungsynth::io::{load_mask, save_gray16, save_mask};
use lungsynth::losses::{self, FeatureVector, LossConfig, LossInputs, LossReport, LossWeights};
use lungsynth::metrics::{self, dice_score, ScoreSample};
use lungsynth::pbtseg::{segment_lungs, PbtSegConfig};
use lungsynth::synth::{replay_final_layer, synthesize, threshold_layer, SynthesisConfig};
use lungsynth::{normalize, phantom, BinaryMask, GrayImage, RandomStream};

const PHANTOM_SIZE: usize = 256;
const DICE_SIDE_MIN: f64 = 0.85;
const DICE_GOOD_CASES_MIN: usize = 45;
const DICE_MEAN_MIN: f64 = 0.90;
const RECOVERY_BUDGET: Duration = Duration::from_secs(30);
const FAITHFULNESS_BUDGET: Duration = Duration::from_secs(60);
const LOCAL_GLOBAL_REL_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-5;
const PBTSEG_BUDGET: Duration = Duration::from_millis(250);
const SYNTH_BUDGET: Duration = Duration::from_millis(500);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn two_lung(seed: u64) -> phantom::Phantom {
    phantom::two_lung(PHANTOM_SIZE, &mut RandomStream::new(seed, 0))
}

fn prepared(image: &GrayImage) -> GrayImage {
    let c = Config::default().normalize;
    normalize(image, c.lo_percentile, c.hi_percentile).unwrap()
}

fn phantom_recovery() -> Outcome {
    let config = PbtSegConfig::default();
    let phantoms: Vec<_> = (0..50).map(two_lung).collect();
    let start = Instant::now();
    let mut good = 0;
    let mut combined = Vec::new();
    for p in &phantoms {
        let masks = match segment_lungs(&prepared(&p.image), &config) {
            Ok(m) => m,
            Err(_) => {
                combined.push(0.0);
                continue;
            }
        };
        let left = dice_score(&masks.left, &p.left).unwrap();
        let right = dice_score(&masks.right, &p.right).unwrap();
        if left >= DICE_SIDE_MIN && right >= DICE_SIDE_MIN {
            good += 1;
        }
        combined.push(dice_score(&masks.combined, &p.lungs()).unwrap());
    }
    let elapsed = start.elapsed();
    let mean = combined.iter().sum::<f64>() / combined.len() as f64;
    outcome(
        good >= DICE_GOOD_CASES_MIN && mean >= DICE_MEAN_MIN && elapsed < RECOVERY_BUDGET,
        format!(
            "{good}/50 with both sides >= {DICE_SIDE_MIN}, mean combined Dice {mean:.4}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Best Dice of `{pixel < t}` against `truth` over every distinct cut.
fn best_single_threshold(image: &GrayImage, truth: &BinaryMask) -> f64 {
    let mut px: Vec<(f64, bool)> = image
        .pixels()
        .iter()
        .copied()
        .zip(truth.bits().iter().copied())
        .collect();
    px.sort_by(|a, b| a.0.total_cmp(&b.0));
    let truth_area = truth.count() as f64;
    let mut best = 0.0f64;
    let mut inside = 0usize;
    let mut hits = 0usize;
    let mut i = 0;
    while i < px.len() {
        // take every pixel equal to this value at once
        let v = px[i].0;
        while i < px.len() && px[i].0 == v {
            inside += 1;
            hits += px[i].1 as usize;
            i += 1;
        }
        best = best.max(2.0 * hits as f64 / (inside as f64 + truth_area));
    }
    best
}

fn single_threshold_dominance() -> Outcome {
    let config = PbtSegConfig::default();
    let mut worst_margin = f64::INFINITY;
    let mut wins = 0;
    let n = 20;
    for seed in 0..n {
        let p = phantom::merge_inducing(PHANTOM_SIZE, &mut RandomStream::new(seed, 0));
        let truth = p.lungs();
        let ours = segment_lungs(&p.image, &config)
            .map(|m| dice_score(&m.combined, &truth).unwrap())
            .unwrap_or(0.0);
        let baseline = best_single_threshold(&p.image, &truth);
        if ours > baseline {
            wins += 1;
        }
        worst_margin = worst_margin.min(ours - baseline);
    }
    outcome(
        wins == n,
        format!("PBTSeg beat the best single threshold on {wins}/{n} merge phantoms, smallest margin {worst_margin:.4}"),
    )
}

fn png_bytes_of_mask(mask: &BinaryMask, dir: &Path) -> Vec<u8> {
    let p = dir.join("regen_mask.png");
    save_mask(mask, &p).unwrap();
    std::fs::read(p).unwrap()
}

fn png_bytes_of_gray(image: &GrayImage, dir: &Path) -> Vec<u8> {
    let p = dir.join("regen_syn.png");
    save_gray16(image, &p).unwrap();
    std::fs::read(p).unwrap()
}

fn synthesis_faithfulness(corpus: &Path) -> Outcome {
    let out = tempfile::tempdir().unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let config = Config { seed: 2024, ..Config::default() };
    let options = SynthesizeOptions {
        batch: BatchOptions { jobs: 1, ..BatchOptions::default() },
        per_image_triplets: 4,
        ..SynthesizeOptions::default()
    };
    let start = Instant::now();
    let records = batch::generate_dataset(corpus, out.path(), &config, &options).unwrap();
    let elapsed = start.elapsed();
    let ok: Vec<_> = records.iter().filter(|r| r.is_ok()).collect();
    let (mut faithful, mut contained, mut regenerated) = (0, 0, 0);
    let mut violating_pixels = 0;
    for r in &ok {
        let (t, lungs) = batch::regenerate(r, &config).unwrap();
        let synth = SynthesisConfig { master_seed: r.seed, ..config.synthesis() };
        let replayed = replay_final_layer(&t.i_norm, &lungs, &synth, &t.provenance).unwrap();
        if threshold_layer(&replayed, synth.mask_threshold) == t.m_anomaly && replayed == t.a_final {
            faithful += 1;
        }
        let written_mask = load_mask(out.path().join(r.mask_path.as_ref().unwrap())).unwrap();
        let lung = load_mask(out.path().join(r.lung_path.as_ref().unwrap())).unwrap();
        let outside = written_mask.difference(&lung).unwrap().count();
        violating_pixels += outside;
        if outside == 0 {
            contained += 1;
        }
        let mask_file = std::fs::read(out.path().join(r.mask_path.as_ref().unwrap())).unwrap();
        let syn_file = std::fs::read(out.path().join(r.syn_path.as_ref().unwrap())).unwrap();
        if png_bytes_of_mask(&t.m_anomaly, scratch.path()) == mask_file
            && png_bytes_of_gray(&t.i_syn, scratch.path()) == syn_file
        {
            regenerated += 1;
        }
    }
    let n = ok.len();
    outcome(
        n >= 200 && faithful == n && contained == n && regenerated == n && elapsed < FAITHFULNESS_BUDGET,
        format!(
            "{n} triplets: mask faithful {faithful}, contained {contained} ({violating_pixels} stray pixels), \
             byte-identical regeneration {regenerated}, generated in {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn random_image(rng: &mut RandomStream, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.uniform(0.05, 0.95))
}

fn random_vector(rng: &mut RandomStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect()
}

fn loss_identities() -> Outcome {
    let mut rng = RandomStream::new(7, 4);
    let mut failures = Vec::new();
    let fv = |v: Vec<f64>| FeatureVector::new(v).unwrap();
    for _ in 0..20 {
        let a = random_vector(&mut rng, 16);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        // rotate pairs of coordinates by 90 degrees
        let orth: Vec<f64> = a
            .chunks(2)
            .flat_map(|c| [-c[1], c[0]])
            .collect();
        let same = losses::feature_alignment_loss(&fv(a.clone()), &fv(a.clone())).unwrap();
        let opp = losses::feature_alignment_loss(&fv(a.clone()), &fv(neg)).unwrap();
        let ort = losses::feature_alignment_loss(&fv(a.clone()), &fv(orth)).unwrap();
        if (same, ort, opp) != (0.0, 1.0, 2.0) {
            failures.push(format!("feature cases gave {same}/{ort}/{opp}"));
        }
    }
    let eps = 1e-8;
    let mut worst_rel = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..20 {
        let norm = random_image(&mut rng, 8, 8);
        let hat = random_image(&mut rng, 8, 8);
        let syn = random_image(&mut rng, 8, 8);
        let full = BinaryMask::from_fn(8, 8, |_, _| true);
        let g = losses::global_recon_loss(&norm, &hat).unwrap();
        let l = losses::local_recon_loss(&norm, &hat, &full, eps).unwrap();
        worst_rel = worst_rel.max(((l - g) / g).abs());

        let mask = BinaryMask::from_fn(8, 8, |_, _| rng.bernoulli(0.4));
        let feats = (fv(random_vector(&mut rng, 8)), fv(random_vector(&mut rng, 8)));
        let config = LossConfig { eps, ..LossConfig::default() };
        let report = losses::total_loss(
            &LossInputs {
                i_norm: &norm,
                i_syn: &syn,
                i_hat: &hat,
                m_anomaly: &mask,
                features: Some((&feats.0, &feats.1)),
            },
            &config,
        )
        .unwrap();
        if report.total != report.feat + report.global + report.local + report.dice {
            failures.push(format!("total {} is not the sum of its terms", report.total));
        }
        let weighted = LossReport::from_terms(0.3, 0.1, 0.7, 0.2, &LossWeights { feat: 2.0, global: 0.5, local: 1.5, dice: 4.0 });
        if weighted.total != 2.0 * 0.3 + 0.5 * 0.1 + 1.5 * 0.7 + 4.0 * 0.2 {
            failures.push("weighted total differs from weighted sum".into());
        }

        let gg = losses::global_recon_grad(&norm, &hat).unwrap();
        let lg = losses::local_recon_grad(&norm, &hat, &mask, eps).unwrap();
        let h = 1e-6;
        for k in 0..64 {
            let shifted = |d: f64| {
                let mut px = hat.pixels().to_vec();
                px[k] += d;
                GrayImage::new(8, 8, px).unwrap()
            };
            let (up, down) = (shifted(h), shifted(-h));
            let fd_g = (losses::global_recon_loss(&norm, &up).unwrap()
                - losses::global_recon_loss(&norm, &down).unwrap())
                / (2.0 * h);
            let fd_l = (losses::local_recon_loss(&norm, &up, &mask, eps).unwrap()
                - losses::local_recon_loss(&norm, &down, &mask, eps).unwrap())
                / (2.0 * h);
            worst_grad = worst_grad.max((fd_g - gg[k]).abs()).max((fd_l - lg[k]).abs());
        }
    }
    if worst_rel > LOCAL_GLOBAL_REL_TOL {
        failures.push(format!("full-mask local vs global relative gap {worst_rel:e}"));
    }
    if worst_grad > GRAD_TOL {
        failures.push(format!("gradient gap {worst_grad:e}"));
    }
    failures.dedup();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("feature 0/1/2 exact on 20 vectors, local/global rel gap {worst_rel:.1e}, max gradient gap {worst_grad:.1e}")
        } else {
            failures.join("; ")
        },
    )
}

fn auc_oracle(samples: &[ScoreSample]) -> f64 {
    let mut wins = 0.0;
    let (mut pos, mut neg) = (0usize, 0usize);
    for p in samples.iter().filter(|s| s.label) {
        pos += 1;
        for n in samples.iter().filter(|s| !s.label) {
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    neg += samples.iter().filter(|s| !s.label).count();
    wins / (pos * neg) as f64
}

fn ap_oracle(samples: &[ScoreSample]) -> f64 {
    let mut cuts: Vec<f64> = samples.iter().map(|s| s.score).collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let positives = samples.iter().filter(|s| s.label).count() as f64;
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in cuts {
        let tp = samples.iter().filter(|s| s.label && s.score >= t).count();
        let all = samples.iter().filter(|s| s.score >= t).count();
        let recall = tp as f64 / positives;
        ap += (recall - prev) * (tp as f64 / all as f64);
        prev = recall;
    }
    ap
}

fn metric_oracles() -> Outcome {
    let mut rng = RandomStream::new(11, 5);
    let (mut auc_ok, mut ap_ok) = (0, 0);
    let mut sets = 0;
    while sets < 100 {
        let n = rng.int_inclusive(2, 200) as usize;
        // coarse scores so ties are common
        let levels = rng.int_inclusive(2, 40);
        let samples: Vec<ScoreSample> = (0..n)
            .map(|_| ScoreSample::new(rng.int_inclusive(0, levels) as f64 / levels as f64, rng.bernoulli(0.4)))
            .collect();
        if samples.iter().all(|s| s.label) || samples.iter().all(|s| !s.label) {
            continue;
        }
        sets += 1;
        auc_ok += (metrics::auc(&samples).unwrap() == auc_oracle(&samples)) as usize;
        ap_ok += (metrics::average_precision(&samples).unwrap() == ap_oracle(&samples)) as usize;
    }
    let auc_example = metrics::auc(&[
        ScoreSample::new(0.9, true),
        ScoreSample::new(0.4, true),
        ScoreSample::new(0.6, false),
        ScoreSample::new(0.2, false),
    ])
    .unwrap();
    let ap_example = metrics::average_precision(&[
        ScoreSample::new(0.9, true),
        ScoreSample::new(0.7, false),
        ScoreSample::new(0.5, true),
        ScoreSample::new(0.3, false),
    ])
    .unwrap();
    // 5/6 is not a double; the step-wise sum is evaluated as written
    let ap_expected = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    let examples_ok = auc_example == 0.75 && ap_example == ap_expected && (ap_example - 5.0 / 6.0).abs() <= f64::EPSILON;
    outcome(
        auc_ok == 100 && ap_ok == 100 && examples_ok,
        format!("AUC exact {auc_ok}/100, AP exact {ap_ok}/100, examples AUC {auc_example} AP {ap_example}"),
    )
}

fn residual_consistency() -> Outcome {
    let mut rng = RandomStream::new(13, 6);
    let mut agree = 0;
    let mut pixels = 0;
    for _ in 0..50 {
        let (w, h) = (rng.int_inclusive(4, 64) as usize, rng.int_inclusive(4, 64) as usize);
        let syn = GrayImage::from_fn(w, h, |_, _| rng.unit());
        let hat = GrayImage::from_fn(w, h, |_, _| rng.unit());
        let tau = rng.uniform(1e-4, 0.5);
        let direct = losses::binarize_error(&syn, &hat, tau).unwrap();
        let map = losses::anomaly_map(&syn, &hat).unwrap();
        let root = tau.sqrt();
        let by_root = BinaryMask::from_fn(w, h, |x, y| map.get(x, y) >= root);
        pixels += w * h;
        if direct == by_root && direct == losses::binarize_map(&map, tau) {
            agree += 1;
        }
    }
    outcome(agree == 50, format!("{agree}/50 pairs bit-identical ({pixels} pixels)"))
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn run_cli(args: &[&str]) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_lungsynth"))
        .args(args)
        .env_remove("LUNGSYNTH_CONFIG")
        .status()
        .expect("binary runs");
    status.success()
}

fn determinism(corpus: &Path) -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let input = corpus.to_str().unwrap();
    let mut snapshots = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let syn = root.path().join(format!("syn_{name}"));
        let seg = root.path().join(format!("seg_{name}"));
        let ok = run_cli(&[
            "synthesize", "--input", input, "--output", syn.to_str().unwrap(), "--seed", "77",
            "--jobs", jobs, "--per-image-triplets", "2", "--dump-stages", "--provenance",
        ]) && run_cli(&[
            "segment", "--input", input, "--output", seg.to_str().unwrap(), "--jobs", jobs, "--overlay", "--trace",
        ]);
        if !ok {
            return outcome(false, format!("CLI run {name} failed"));
        }
        snapshots.push((dir_snapshot(&syn), dir_snapshot(&seg)));
    }
    let files = snapshots[0].0.len() + snapshots[0].1.len();
    let repeat = snapshots[0] == snapshots[1];
    let jobs = snapshots[0] == snapshots[2];
    outcome(
        repeat && jobs && files > 0,
        format!("{files} output files; repeat run identical: {repeat}; --jobs 1 vs 8 identical: {jobs}"),
    )
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn performance() -> Outcome {
    let config = Config::default();
    let synth = config.synthesis();
    let mut seg_times = Vec::new();
    let mut synth_times = Vec::new();
    for seed in 0..7 {
        let raw = two_lung(500 + seed).image;
        let start = Instant::now();
        let image = prepared(&raw);
        let lungs = segment_lungs(&image, &config.pbtseg).unwrap();
        seg_times.push(start.elapsed());

        let start = Instant::now();
        let image = prepared(&raw);
        let lungs_again = segment_lungs(&image, &config.pbtseg).unwrap();
        let t = synthesize(&image, &lungs_again, &synth, seed).unwrap();
        synth_times.push(start.elapsed());
        assert_eq!(lungs, lungs_again);
        assert!(!t.m_anomaly.is_empty() || t.a_final.values().iter().all(|&v| v < synth.mask_threshold));
    }
    let seg = median(seg_times);
    let syn = median(synth_times);
    outcome(
        seg < PBTSEG_BUDGET && syn < SYNTH_BUDGET,
        format!(
            "median PBTSeg {:.1} ms (budget {} ms), segment+synthesize {:.1} ms (budget {} ms) at {PHANTOM_SIZE}x{PHANTOM_SIZE}",
            seg.as_secs_f64() * 1e3,
            PBTSEG_BUDGET.as_millis(),
            syn.as_secs_f64() * 1e3,
            SYNTH_BUDGET.as_millis()
        ),
    )
}

fn write_corpus(dir: &Path, count: u64) {
    for k in 0..count {
        save_gray16(&two_lung(9000 + k).image, dir.join(format!("case_{k:03}.png"))).unwrap();
    }
}

fn main() {
    let corpus = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 50);
    let small = tempfile::tempdir().unwrap();
    write_corpus(small.path(), 12);

    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 phantom recovery", Box::new(phantom_recovery)),
        ("2 progressive vs single threshold", Box::new(single_threshold_dominance)),
        ("3 synthesis faithfulness", Box::new(|| synthesis_faithfulness(corpus.path()))),
        ("4 loss identities", Box::new(loss_identities)),
        ("5 metric oracles", Box::new(metric_oracles)),
        ("6 residual binarization consistency", Box::new(residual_consistency)),
        ("7 determinism and parallel safety", Box::new(|| determinism(small.path()))),
        ("8 performance", Box::new(performance)),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
