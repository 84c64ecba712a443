//! Input drift monitoring: spectral features and two-sample KS tests.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::{Patch, PATCH_LEN, PATCH_SIDE};

pub const RADIAL_BANDS: usize = 8;
pub const FEATURE_COUNT: usize = RADIAL_BANDS + 2;
pub const FEATURE_EXTRACTOR_ID: &str = "radial-fft-8+mean+var";
pub const MIN_WINDOW: usize = 50;
pub const MIN_REFERENCE: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = 0.25;

pub type FeatureVector = [f64; FEATURE_COUNT];

thread_local! {
    static FFT: RefCell<Option<Arc<dyn Fft<f64>>>> = const { RefCell::new(None) };
}

fn fft32() -> Arc<dyn Fft<f64>> {
    FFT.with(|cell| {
        cell.borrow_mut()
            .get_or_insert_with(|| FftPlanner::new().plan_fft_forward(PATCH_SIDE))
            .clone()
    })
}

fn band_of(u: usize, v: usize) -> usize {
    let fold = |k: usize| k.min(PATCH_SIDE - k) as f64;
    let r = fold(u).hypot(fold(v));
    let r_max = (PATCH_SIDE / 2) as f64 * std::f64::consts::SQRT_2;
    ((r / r_max * RADIAL_BANDS as f64) as usize).min(RADIAL_BANDS - 1)
}

/// Mean 2-D DFT magnitude (scaled by 1/N) in each of 8 equal-width radial
/// bands, DC excluded, followed by the pixel mean and variance.
pub fn extract_features(patch: &Patch) -> FeatureVector {
    let fft = fft32();
    let mut buf: Vec<Complex<f64>> = patch.pixels().iter().map(|&p| Complex::new(p, 0.0)).collect();
    for row in buf.chunks_exact_mut(PATCH_SIDE) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); PATCH_SIDE];
    for c in 0..PATCH_SIDE {
        for r in 0..PATCH_SIDE {
            col[r] = buf[r * PATCH_SIDE + c];
        }
        fft.process(&mut col);
        for r in 0..PATCH_SIDE {
            buf[r * PATCH_SIDE + c] = col[r];
        }
    }

    let mut sums = [0.0; RADIAL_BANDS];
    let mut counts = [0usize; RADIAL_BANDS];
    for u in 0..PATCH_SIDE {
        for v in 0..PATCH_SIDE {
            if u == 0 && v == 0 {
                continue;
            }
            let b = band_of(u, v);
            sums[b] += buf[u * PATCH_SIDE + v].norm() / PATCH_LEN as f64;
            counts[b] += 1;
        }
    }
    let px = patch.pixels();
    let mean = px.iter().sum::<f64>() / PATCH_LEN as f64;
    let var = px.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / PATCH_LEN as f64;

    let mut out = [0.0; FEATURE_COUNT];
    for b in 0..RADIAL_BANDS {
        out[b] = sums[b] / counts[b] as f64;
    }
    out[RADIAL_BANDS] = mean;
    out[RADIAL_BANDS + 1] = var;
    out
}

/// Sorted per-feature samples of the distribution the active model expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub extractor: String,
    pub samples: Vec<Vec<f64>>,
    pub source_version: Option<u64>,
}

impl ReferenceProfile {
    pub fn new(features: &[FeatureVector], source_version: Option<u64>) -> Result<Self> {
        if features.len() < MIN_REFERENCE {
            return Err(Error::InsufficientData {
                needed: MIN_REFERENCE,
                got: features.len(),
            });
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("reference features must be finite".into()));
        }
        let samples = (0..FEATURE_COUNT)
            .map(|k| {
                let mut col: Vec<f64> = features.iter().map(|f| f[k]).collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Ok(ReferenceProfile {
            extractor: FEATURE_EXTRACTOR_ID.to_string(),
            samples,
            source_version,
        })
    }

    pub fn from_patches<'a>(patches: impl IntoIterator<Item = &'a Patch>, source_version: Option<u64>) -> Result<Self> {
        let feats: Vec<FeatureVector> = patches.into_iter().map(extract_features).collect();
        Self::new(&feats, source_version)
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub window_id: u64,
    pub statistics: Vec<f64>,
    pub max_statistic: f64,
    pub threshold: f64,
    pub alert: bool,
    pub sample_count: usize,
}

/// Two-sample Kolmogorov-Smirnov statistic of two sorted samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

pub fn drift_detect(
    profile: &ReferenceProfile,
    window: &[FeatureVector],
    threshold: f64,
    window_id: u64,
) -> Result<DriftReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::config(format!("drift threshold {threshold} outside (0, 1]")));
    }
    if window.len() < MIN_WINDOW {
        return Err(Error::InsufficientData {
            needed: MIN_WINDOW,
            got: window.len(),
        });
    }
    if profile.samples.len() != FEATURE_COUNT {
        return Err(Error::Validation("reference profile has the wrong feature count".into()));
    }
    let statistics: Vec<f64> = (0..FEATURE_COUNT)
        .map(|k| {
            let mut col: Vec<f64> = window.iter().map(|f| f[k]).collect();
            col.sort_by(f64::total_cmp);
            ks_statistic(&profile.samples[k], &col)
        })
        .collect();
    let max_statistic = statistics.iter().copied().fold(0.0, f64::max);
    Ok(DriftReport {
        window_id,
        statistics,
        max_statistic,
        threshold,
        alert: max_statistic > threshold,
        sample_count: window.len(),
    })
}

/// Empirical `1 - budget` quantile of the max-KS statistic over `trials`
/// windows drawn by `draw` from the reference distribution.
pub fn calibrate_threshold(
    profile: &ReferenceProfile,
    trials: usize,
    budget: f64,
    mut draw: impl FnMut(usize) -> Result<Vec<FeatureVector>>,
) -> Result<f64> {
    if trials == 0 || !(budget > 0.0 && budget < 1.0) {
        return Err(Error::config("calibration needs trials >= 1 and a budget in (0, 1)"));
    }
    let mut stats = (0..trials)
        .map(|t| Ok(drift_detect(profile, &draw(t)?, 1.0, t as u64)?.max_statistic))
        .collect::<Result<Vec<f64>>>()?;
    stats.sort_by(f64::total_cmp);
    let idx = (((1.0 - budget) * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    Ok(stats[idx])
}
