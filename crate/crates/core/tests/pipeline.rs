use lungsynth::metrics::dice_score;
use lungsynth::pbtseg::{segment_lungs, PbtSegConfig};
use lungsynth::synth::{synthesize, SynthesisConfig};
use lungsynth::{normalize, phantom, threshold_below, BinaryMask, GrayImage, RandomStream};

fn best_single_threshold(image: &GrayImage, truth: &BinaryMask) -> f64 {
    (1..200)
        .map(|i| dice_score(&threshold_below(image, i as f64 / 200.0), truth).unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn phantoms_are_recovered() {
    let config = PbtSegConfig::default();
    let mut good_sides = 0;
    for seed in 0..20 {
        let p = phantom::two_lung(192, &mut RandomStream::new(seed, 0));
        let masks = segment_lungs(&p.image, &config).unwrap();
        let left = dice_score(&masks.left, &p.left).unwrap();
        let right = dice_score(&masks.right, &p.right).unwrap();
        if left >= 0.85 && right >= 0.85 {
            good_sides += 1;
        }
    }
    assert!(good_sides >= 18, "{good_sides}/20");
}

#[test]
fn beats_any_single_threshold_on_merging_phantoms() {
    let config = PbtSegConfig::default();
    for seed in 0..8 {
        let p = phantom::merge_inducing(160, &mut RandomStream::new(seed, 0));
        let truth = p.lungs();
        let masks = segment_lungs(&p.image, &config).unwrap();
        let ours = dice_score(&masks.combined, &truth).unwrap();
        let baseline = best_single_threshold(&p.image, &truth);
        assert!(ours > baseline, "seed {seed}: {ours} vs {baseline}");
    }
}

#[test]
fn default_anomalies_are_nontrivial() {
    let config = SynthesisConfig::default();
    let mut in_band = 0;
    let n = 60;
    for k in 0..n {
        let p = phantom::two_lung(128, &mut RandomStream::new(1000 + k, 0));
        let image = normalize(&p.image, 0.005, 0.995).unwrap();
        let lungs = segment_lungs(&image, &config.pbtseg).unwrap();
        let t = synthesize(&image, &lungs, &config, k).unwrap();
        let frac = t.m_anomaly.count() as f64 / lungs.combined.count() as f64;
        if (0.005..=0.25).contains(&frac) {
            in_band += 1;
        }
        assert!(t.m_anomaly.is_subset_of(&lungs.combined).unwrap());
    }
    assert!(in_band as f64 >= 0.95 * n as f64, "{in_band}/{n}");
}
