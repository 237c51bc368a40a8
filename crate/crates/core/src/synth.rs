//! Deterministic multi-subject synthetic benchmarks.
//!
//! Class prototypes sit on a regular simplex with pairwise distance
//! `class_separation`. Every subject applies its own orthogonal transform
//! (a product of Givens rotations over a random pairing of coordinates)
//! and translation to all of its samples, then isotropic Gaussian noise is
//! added. Rotation angles and translation length both scale linearly with
//! `subject_shift`, so `subject_shift = 0` makes every subject identically
//! distributed.
//!
//! Randomness comes from ChaCha8 seeded with `seed`: stream 0 draws the
//! prototypes and stream `subject_id + 1` draws everything for that
//! subject, so subjects can be generated independently.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::signal::{BandSpec, Recording};

/// Largest Givens angle, reached at `subject_shift = 1`. Angles grow with
/// the shift and are clamped at a quarter turn.
const MAX_ANGLE_PER_SHIFT: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dims: (usize, usize, usize),
    pub class_separation: f64,
    pub subject_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_subjects: 8,
            num_classes: 3,
            samples_per_class: 100,
            feature_dims: (4, 4, 5),
            class_separation: 1.0,
            subject_shift: 2.0,
            noise_sigma: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Well separated classes under a mild shift: every target cluster stays
    /// nearest to its own class's source centroid.
    pub fn separable() -> Self {
        SynthConfig { class_separation: 4.0, subject_shift: 0.5, noise_sigma: 0.2, ..SynthConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, b) = self.feature_dims;
        if self.num_subjects < 2 {
            return Err(Error::config("num_subjects", "must be at least 2"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        if self.samples_per_class < 1 {
            return Err(Error::config("samples_per_class", "must be at least 1"));
        }
        if h == 0 || w == 0 || b == 0 {
            return Err(Error::config("feature_dims", "all dims must be positive"));
        }
        if self.num_classes > h * w * b {
            return Err(Error::config("num_classes", "cannot exceed the flattened feature width"));
        }
        if !(self.class_separation >= 0.0) {
            return Err(Error::config("class_separation", "must be non-negative"));
        }
        if !(self.subject_shift >= 0.0) {
            return Err(Error::config("subject_shift", "must be non-negative"));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::config("noise_sigma", "must be positive"));
        }
        Ok(())
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w, b) = self.feature_dims;
        h * w * b
    }
}

/// One subject's samples, ordered class by class.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectData {
    pub subject_id: usize,
    /// `[n, h, w, b]`
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl SubjectData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Features as an `[n, h·w·b]` matrix.
    pub fn flat_features(&self) -> Tensor {
        self.features.flatten_rows()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Orthonormal random directions scaled so every pair of prototypes is
/// exactly `separation` apart.
fn prototypes(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let d = cfg.flat_dim();
    let mut rng = stream(cfg.seed, 0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    while basis.len() < cfg.num_classes {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        for u in &basis {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let scale = cfg.class_separation / std::f64::consts::SQRT_2;
    basis.into_iter().map(|u| u.into_iter().map(|a| a * scale).collect()).collect()
}

struct SubjectTransform {
    pairs: Vec<(usize, usize, f64, f64)>,
    translation: Vec<f64>,
}

impl SubjectTransform {
    fn draw(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> Self {
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let max_angle = (shift * MAX_ANGLE_PER_SHIFT).min(std::f64::consts::FRAC_PI_2);
        let pairs = order
            .chunks_exact(2)
            .map(|p| {
                let angle = max_angle * rng.random_range(-1.0..=1.0);
                (p[0], p[1], angle.cos(), angle.sin())
            })
            .collect();
        let mut dir: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = dir.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|a| *a *= shift / norm);
        SubjectTransform { pairs, translation: dir }
    }

    fn apply(&self, x: &mut [f64]) {
        for &(i, j, c, s) in &self.pairs {
            let (a, b) = (x[i], x[j]);
            x[i] = c * a - s * b;
            x[j] = s * a + c * b;
        }
        x.iter_mut().zip(&self.translation).for_each(|(v, t)| *v += t);
    }
}

/// Generates every subject of the benchmark described by `cfg`.
pub fn generate_benchmark(cfg: &SynthConfig) -> Result<Vec<SubjectData>> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    (0..cfg.num_subjects).map(|s| generate_subject(cfg, &protos, s)).collect()
}

fn generate_subject(cfg: &SynthConfig, protos: &[Vec<f64>], subject_id: usize) -> Result<SubjectData> {
    let d = cfg.flat_dim();
    let mut rng = stream(cfg.seed, subject_id as u64 + 1);
    let transform = SubjectTransform::draw(&mut rng, d, cfg.subject_shift);
    let n = cfg.num_classes * cfg.samples_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (k, proto) in protos.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            let mut x = proto.clone();
            transform.apply(&mut x);
            x.iter_mut().for_each(|v| *v += cfg.noise_sigma * gaussian(&mut rng));
            data.extend_from_slice(&x);
            labels.push(k);
        }
    }
    let (h, w, b) = cfg.feature_dims;
    Ok(SubjectData { subject_id, features: Tensor::new(vec![n, h, w, b], data)?, labels })
}

/// Relative band amplitudes for a class: the band at index
/// `(2 + class_id) % 5` (alpha for class 0) is doubled.
pub fn class_band_gains(class_id: usize) -> [f64; 5] {
    let mut g = [1.0; 5];
    g[(2 + class_id) % 5] = 2.0;
    g
}

/// Toy raw recording: per channel, one sinusoid per standard band at a
/// random in-band frequency and phase, scaled by [`class_band_gains`],
/// plus white noise of standard deviation 0.1.
pub fn generate_raw_eeg(
    channels: usize,
    rate_hz: f64,
    duration_s: f64,
    class_id: usize,
    seed: u64,
) -> Result<Recording> {
    let names = (0..channels).map(|c| format!("CH{c}")).collect();
    generate_raw_eeg_named(names, rate_hz, duration_s, class_id, seed)
}

/// Same as [`generate_raw_eeg`] with caller-supplied channel names.
pub fn generate_raw_eeg_named(
    names: Vec<String>,
    rate_hz: f64,
    duration_s: f64,
    class_id: usize,
    seed: u64,
) -> Result<Recording> {
    if names.is_empty() || !(rate_hz > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Argument("channels, rate and duration must be positive".into()));
    }
    let n = (rate_hz * duration_s).round() as usize;
    let gains = class_band_gains(class_id);
    let bands = BandSpec::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(names.len());
    for _ in 0..names.len() {
        let tones: Vec<(f64, f64, f64)> = bands
            .iter()
            .zip(gains)
            .map(|(band, g)| {
                let hi = band.hi_hz.min(rate_hz / 2.0 - 1.0);
                let f = rng.random_range(band.lo_hz + 0.25..hi - 0.25);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (f, phase, g)
            })
            .collect();
        let row = (0..n)
            .map(|i| {
                let t = i as f64 / rate_hz;
                let tone: f64 = tones.iter().map(|(f, ph, g)| g * (std::f64::consts::TAU * f * t + ph).sin()).sum();
                tone + 0.1 * gaussian(&mut rng)
            })
            .collect();
        samples.push(row);
    }
    Recording::new(names, rate_hz, samples)
}
