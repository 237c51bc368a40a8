//! Nearest-centroid oracle used to calibrate the synthetic benchmark, plus
//! end-to-end checks of the toy raw-signal generator.

use msan::autodiff::Tensor;
use msan::cluster::source_centroids;
use msan::signal::{extract_features, BandSpec, ElectrodeLayout};
use msan::synth::{generate_benchmark, generate_raw_eeg_named, SubjectData, SynthConfig};

fn nearest_centroid_accuracy(centers: &Tensor, x: &Tensor, labels: &[usize]) -> f64 {
    let correct = (0..x.rows())
        .filter(|&i| {
            let d = |k: usize| centers.row(k).iter().zip(x.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..centers.rows()).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap();
            best == labels[i]
        })
        .count();
    correct as f64 / x.rows() as f64
}

/// Centroids from even-indexed samples of subject 0, scored on its
/// odd-indexed samples (within) and on all of subject 1 (cross).
fn within_and_cross(subjects: &[SubjectData], k: usize) -> (f64, f64) {
    let x = subjects[0].flat_features();
    let even: Vec<usize> = (0..x.rows()).step_by(2).collect();
    let odd: Vec<usize> = (1..x.rows()).step_by(2).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| subjects[0].labels[i]).collect::<Vec<_>>();
    let centers = source_centroids(&x.select_rows(&even), &pick(&even), k).unwrap();
    let within = nearest_centroid_accuracy(&centers, &x.select_rows(&odd), &pick(&odd));
    let cross = nearest_centroid_accuracy(&centers, &subjects[1].flat_features(), &subjects[1].labels);
    (within, cross)
}

fn averaged(cfg: &SynthConfig, seeds: u64) -> (f64, f64) {
    let (mut w, mut c) = (0.0, 0.0);
    for seed in 0..seeds {
        let s = generate_benchmark(&SynthConfig { seed, ..cfg.clone() }).unwrap();
        let (a, b) = within_and_cross(&s, cfg.num_classes);
        w += a;
        c += b;
    }
    (w / seeds as f64, c / seeds as f64)
}

#[test]
fn zero_shift_transfers_perfectly() {
    let cfg = SynthConfig { subject_shift: 0.0, noise_sigma: 1e-6, ..SynthConfig::default() };
    let s = generate_benchmark(&cfg).unwrap();
    let centers = source_centroids(&s[0].flat_features(), &s[0].labels, 3).unwrap();
    assert_eq!(nearest_centroid_accuracy(&centers, &s[1].flat_features(), &s[1].labels), 1.0);
}

#[test]
fn default_shift_costs_at_least_twenty_points() {
    let (within, cross) = averaged(&SynthConfig::default(), 10);
    assert!(within - cross >= 0.20, "within {within:.3}, cross {cross:.3}");
}

#[test]
fn more_shift_never_helps() {
    let accs: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0]
        .iter()
        .map(|&subject_shift| averaged(&SynthConfig { subject_shift, ..SynthConfig::default() }, 10).1)
        .collect();
    assert!(accs.windows(2).all(|w| w[1] <= w[0]), "{accs:?}");
}

#[test]
fn boosted_band_raises_entropy_by_ln_two() {
    let layout = ElectrodeLayout::single("C");
    let alpha = &BandSpec::standard()[2..3];
    let mean_de = |class_id: usize, seed: u64| {
        let rec = generate_raw_eeg_named(vec!["C".into()], 200.0, 4.0, class_id, seed).unwrap();
        let maps = extract_features(&rec, alpha, &layout, 1.0, 1.0).unwrap();
        maps.iter().map(|m| m.values.data()[0]).sum::<f64>() / maps.len() as f64
    };
    let diff = (0..20).map(|seed| mean_de(0, seed) - mean_de(1, seed)).sum::<f64>() / 20.0;
    assert!((diff - 2f64.ln()).abs() <= 0.1, "{diff}");
}
