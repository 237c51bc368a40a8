//! Raw multichannel signal to differential-entropy feature maps.
//!
//! Each channel is split into five frequency bands with an ideal FFT mask,
//! cut into windows, and reduced to one differential-entropy value per
//! band and window. Values are placed on a 2-D electrode grid, giving one
//! `grid_h × grid_w × bands` block per window.

mod layout;

pub use layout::ElectrodeLayout;

use std::collections::HashSet;
use std::f64::consts::{E, PI};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Variance floor used by [`differential_entropy`] unless overridden.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

/// Multichannel time series, `channels × samples`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    channel_names: Vec<String>,
    rate_hz: f64,
    samples: Vec<Vec<f64>>,
}

impl Recording {
    pub fn new(channel_names: Vec<String>, rate_hz: f64, samples: Vec<Vec<f64>>) -> Result<Self> {
        if !(rate_hz > 0.0) {
            return Err(Error::Argument(format!("sampling rate must be positive, got {rate_hz}")));
        }
        if channel_names.len() != samples.len() {
            return Err(Error::Shape(format!(
                "{} channel names for {} sample rows",
                channel_names.len(),
                samples.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &channel_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Argument(format!("duplicate channel name {name}")));
            }
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|row| row.len() != first.len()) {
                return Err(Error::Shape("channels have different sample counts".into()));
            }
        }
        Ok(Recording { channel_names, rate_hz, samples })
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn num_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.rate_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BandName {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

/// Half-open frequency interval `[lo_hz, hi_hz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandSpec {
    pub name: BandName,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandSpec {
    pub fn new(name: BandName, lo_hz: f64, hi_hz: f64) -> Result<Self> {
        if !(lo_hz > 0.0 && lo_hz < hi_hz) {
            return Err(Error::Argument(format!("band needs 0 < lo < hi, got [{lo_hz}, {hi_hz})")));
        }
        Ok(BandSpec { name, lo_hz, hi_hz })
    }

    /// delta 1-4, theta 4-8, alpha 8-14, beta 14-31, gamma 31-50 Hz.
    pub fn standard() -> [BandSpec; 5] {
        [
            BandSpec { name: BandName::Delta, lo_hz: 1.0, hi_hz: 4.0 },
            BandSpec { name: BandName::Theta, lo_hz: 4.0, hi_hz: 8.0 },
            BandSpec { name: BandName::Alpha, lo_hz: 8.0, hi_hz: 14.0 },
            BandSpec { name: BandName::Beta, lo_hz: 14.0, hi_hz: 31.0 },
            BandSpec { name: BandName::Gamma, lo_hz: 31.0, hi_hz: 50.0 },
        ]
    }

    pub fn center_hz(&self) -> f64 {
        0.5 * (self.lo_hz + self.hi_hz)
    }
}

/// One window's `grid_h × grid_w × bands` block of DE values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor,
    pub window_index: usize,
}

/// Keeps only FFT bins with `lo_hz <= |f| < hi_hz` in every channel.
pub fn bandpass(rec: &Recording, band: &BandSpec) -> Result<Recording> {
    let nyquist = rec.rate_hz / 2.0;
    if band.hi_hz >= nyquist {
        return Err(Error::Argument(format!(
            "band edge {} Hz is at or above the Nyquist frequency {nyquist} Hz",
            band.hi_hz
        )));
    }
    let n = rec.num_samples();
    if n == 0 {
        return Ok(rec.clone());
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let keep: Vec<bool> = (0..n)
        .map(|k| {
            let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            let f = (signed * rec.rate_hz / n as f64).abs();
            f >= band.lo_hz && f < band.hi_hz
        })
        .collect();

    let samples = rec
        .samples
        .iter()
        .map(|row| {
            let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
            fwd.process(&mut buf);
            for (b, &k) in buf.iter_mut().zip(&keep) {
                if !k {
                    *b = Complex::new(0.0, 0.0);
                }
            }
            inv.process(&mut buf);
            buf.iter().map(|c| c.re / n as f64).collect()
        })
        .collect();
    Ok(Recording { channel_names: rec.channel_names.clone(), rate_hz: rec.rate_hz, samples })
}

/// Gaussian differential entropy `0.5 ln(2πe max(σ², eps))` of a window,
/// with σ² the unbiased sample variance.
pub fn differential_entropy(window: &[f64], eps: f64) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::Argument(format!("differential entropy needs at least 2 samples, got {}", window.len())));
    }
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("variance floor must be positive, got {eps}")));
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(0.5 * (2.0 * PI * E * var.max(eps)).ln())
}

/// Band-split, window and place DE values on the electrode grid.
///
/// Produces `floor((T - window_s) / stride_s) + 1` maps in time order, each
/// of dims `[grid_h, grid_w, bands.len()]`. Grid cells without an electrode
/// stay exactly zero.
pub fn extract_features(
    rec: &Recording,
    bands: &[BandSpec],
    layout: &ElectrodeLayout,
    window_s: f64,
    stride_s: f64,
) -> Result<Vec<FeatureMap>> {
    if !(window_s > 0.0 && stride_s > 0.0) {
        return Err(Error::Argument(format!("window and stride must be positive, got {window_s} and {stride_s}")));
    }
    if bands.is_empty() {
        return Err(Error::Argument("at least one band is required".into()));
    }
    let cells: Vec<(usize, usize)> = rec
        .channel_names
        .iter()
        .map(|name| {
            layout.position(name).ok_or_else(|| Error::Layout(format!("channel {name} is not in the electrode layout")))
        })
        .collect::<Result<_>>()?;

    let win = (window_s * rec.rate_hz).round() as usize;
    let stride = (stride_s * rec.rate_hz).round() as usize;
    let n = rec.num_samples();
    if win < 2 || stride == 0 {
        return Err(Error::Argument(format!("window of {window_s} s at {} Hz is too short", rec.rate_hz)));
    }
    if n < win {
        return Err(Error::Argument(format!(
            "recording of {:.3} s is shorter than the {window_s} s window",
            rec.duration_s()
        )));
    }
    let count = (n - win) / stride + 1;
    let (h, w, b) = (layout.grid_h(), layout.grid_w(), bands.len());
    let mut maps: Vec<Vec<f64>> = vec![vec![0.0; h * w * b]; count];

    for (bi, band) in bands.iter().enumerate() {
        let filtered = bandpass(rec, band)?;
        for (ch, &(r, c)) in cells.iter().enumerate() {
            let signal = &filtered.samples[ch];
            for (t, map) in maps.iter_mut().enumerate() {
                let start = t * stride;
                let de = differential_entropy(&signal[start..start + win], DEFAULT_VARIANCE_FLOOR)?;
                map[(r * w + c) * b + bi] = de;
            }
        }
    }
    maps.into_iter()
        .enumerate()
        .map(|(i, values)| Ok(FeatureMap { values: Tensor::new(vec![h, w, b], values)?, window_index: i }))
        .collect()
}
