//! Time-domain symmetry technique.
//!
//! Forward and reverse impulse responses of a reciprocal network show their
//! peaks at the same delays even though the peak heights differ. Each party
//! detects the peaks of its own impulse response, marks the time blocks that
//! contain one, and keeps the first `M` marked blocks as its binary key.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sounding::{impulse_response, ImpulseResponse, Window};
use crate::spectral::{SpectralError, Spectrum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TdstError {
    #[error("impulse response is empty")]
    EmptyTrace,
    #[error("peak threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Sample indices of detected peaks, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    pub indices: Vec<usize>,
    pub t_step: f64,
    /// Sample index of `t = 0`.
    pub origin: usize,
}

/// Binary key of fixed length; every element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryKey {
    bits: Vec<u8>,
}

impl BinaryKey {
    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![0; len] }
    }

    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        Self { bits: bits.into_iter().map(u8::from).collect() }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b == 1).count()
    }

    pub fn as_symbols(&self) -> Vec<u32> {
        self.bits.iter().map(|b| u32::from(*b)).collect()
    }
}

impl std::fmt::Display for BinaryKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Interior sample `i` is a peak iff `|h[i]|² > |h[i−1]|²`,
/// `|h[i]|² ≥ |h[i+1]|²` and `|h[i]|² ≥ gamma·max|h|²`.
pub fn detect_peaks(h: &ImpulseResponse, gamma: f64) -> Result<PeakSet, TdstError> {
    if h.samples.is_empty() {
        return Err(TdstError::EmptyTrace);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(TdstError::InvalidThreshold(gamma));
    }
    let power: Vec<f64> = h.samples.iter().map(|s| s * s).collect();
    let floor = gamma * power.iter().copied().fold(0.0, f64::max);
    let indices = power
        .windows(3)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0] && w[1] >= w[2] && w[1] >= floor)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(PeakSet { indices, t_step: h.t_step, origin: h.origin })
}

/// Bit `b` is set iff a peak delay falls in `[b·ε, (b+1)·ε)` samples. Peaks
/// before the origin or beyond `n_blocks·ε` are ignored.
pub fn blockize(peaks: &PeakSet, epsilon: usize, n_blocks: usize) -> BinaryKey {
    assert!(epsilon >= 1, "block length must be at least one sample");
    let mut key = BinaryKey::zeros(n_blocks);
    for &i in &peaks.indices {
        if i < peaks.origin {
            continue;
        }
        let block = (i - peaks.origin) / epsilon;
        if block < n_blocks {
            key.bits[block] = 1;
        }
    }
    key
}

/// Clears every one after the `m`-th.
pub fn limit_first_m(key: &BinaryKey, m: usize) -> BinaryKey {
    let mut seen = 0;
    BinaryKey {
        bits: key
            .bits
            .iter()
            .map(|&b| {
                if b == 1 {
                    seen += 1;
                    u8::from(seen <= m)
                } else {
                    0
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdstConfig {
    /// Zero-padding factor of the inverse transform (interpolation).
    pub pad_factor: usize,
    /// Peak energy threshold relative to the strongest sample.
    pub gamma: f64,
    /// Block length in interpolated samples.
    pub epsilon: usize,
    pub n_blocks: usize,
    /// Number of leading ones kept.
    pub m: usize,
    pub window: Window,
    /// Samples of negative delay kept ahead of `t = 0`, in un-interpolated
    /// sampling periods.
    pub precursor: usize,
}

impl Default for TdstConfig {
    fn default() -> Self {
        Self { pad_factor: 4, gamma: 0.01, epsilon: 3, n_blocks: 200, m: 5, window: Window::default(), precursor: 4 }
    }
}

impl TdstConfig {
    pub fn validate(&self) -> Result<(), TdstError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TdstError::InvalidThreshold(self.gamma));
        }
        if self.epsilon == 0 || self.n_blocks == 0 || self.m == 0 {
            return Err(TdstError::InvalidConfig("epsilon, n_blocks and m must be positive".into()));
        }
        Ok(())
    }

    /// Interpolated impulse-response trace with the precursor in front.
    pub fn trace(&self, h: &Spectrum) -> ImpulseResponse {
        impulse_response(h, self.pad_factor, self.window).with_precursor(self.precursor * (1 + self.pad_factor))
    }
}

/// Key before first-`M` limiting.
pub fn tdst_raw_key(h_observed: &Spectrum, cfg: &TdstConfig) -> Result<BinaryKey, TdstError> {
    cfg.validate()?;
    let peaks = detect_peaks(&cfg.trace(h_observed), cfg.gamma)?;
    Ok(blockize(&peaks, cfg.epsilon, cfg.n_blocks))
}

/// Full pipeline: impulse response, peak detection, blocks, first `M` ones.
pub fn tdst_key(h_observed: &Spectrum, cfg: &TdstConfig) -> Result<BinaryKey, TdstError> {
    Ok(limit_first_m(&tdst_raw_key(h_observed, cfg)?, cfg.m))
}

/// Fraction of the strongest `min(M, #peaks)` peaks of `h1` (within the key
/// window) that have a peak of `h2` within `±tol_samples`.
pub fn peak_support_coincidence(
    h1: &Spectrum,
    h2: &Spectrum,
    cfg: &TdstConfig,
    tol_samples: usize,
) -> Result<f64, TdstError> {
    h1.ensure_same_grid(h2)?;
    cfg.validate()?;
    let t1 = cfg.trace(h1);
    let t2 = cfg.trace(h2);
    let p1 = detect_peaks(&t1, cfg.gamma)?;
    let p2 = detect_peaks(&t2, cfg.gamma)?;
    let window_end = t1.origin + cfg.epsilon * cfg.n_blocks;
    let mut strongest: Vec<usize> =
        p1.indices.iter().copied().filter(|&i| i >= t1.origin && i < window_end).collect();
    strongest.sort_by(|&a, &b| t1.samples[b].total_cmp(&t1.samples[a]).then(a.cmp(&b)));
    strongest.truncate(cfg.m);
    if strongest.is_empty() {
        return Ok(1.0);
    }
    let matched = strongest.iter().filter(|&&i| p2.indices.iter().any(|&j| i.abs_diff(j) <= tol_samples)).count();
    Ok(matched as f64 / strongest.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FrequencyGrid;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn trace(samples: &[f64]) -> ImpulseResponse {
        ImpulseResponse { t_step: 1.0, samples: samples.to_vec(), origin: 0 }
    }

    #[test]
    fn peak_rule() {
        let p = detect_peaks(&trace(&[0.0, 1.0, 0.2, 0.0, 0.5, 0.0]), 0.1).unwrap();
        assert_eq!(p.indices, vec![1, 4]);
        // 0.5² = 0.25 < 0.3·1
        let p = detect_peaks(&trace(&[0.0, 1.0, 0.2, 0.0, 0.5, 0.0]), 0.3).unwrap();
        assert_eq!(p.indices, vec![1]);
    }

    #[test]
    fn boundaries_are_never_peaks() {
        let p = detect_peaks(&trace(&[1.0, 0.8, 0.5, 0.3, 0.1]), 0.01).unwrap();
        assert!(p.indices.is_empty());
        let p = detect_peaks(&trace(&[0.1, 0.3, 0.9]), 0.01).unwrap();
        assert!(p.indices.is_empty());
    }

    #[test]
    fn plateaus_resolve_to_their_first_sample() {
        let p = detect_peaks(&trace(&[0.0, 1.0, 1.0, 1.0, 0.0]), 0.5).unwrap();
        assert_eq!(p.indices, vec![1]);
    }

    #[test]
    fn detection_errors() {
        assert_eq!(detect_peaks(&trace(&[]), 0.1), Err(TdstError::EmptyTrace));
        assert_eq!(detect_peaks(&trace(&[0.0, 1.0, 0.0]), 1.0), Err(TdstError::InvalidThreshold(1.0)));
        assert!(detect_peaks(&trace(&[0.0, 1.0, 0.0]), 0.0).is_err());
    }

    #[test]
    fn blocks() {
        let peaks = PeakSet { indices: vec![1, 4], t_step: 1.0, origin: 0 };
        assert_eq!(blockize(&peaks, 2, 3).bits(), &[1, 0, 1]);
        let none = PeakSet { indices: vec![], t_step: 1.0, origin: 0 };
        assert_eq!(blockize(&none, 3, 5), BinaryKey::zeros(5));
        let twice = PeakSet { indices: vec![4, 5], t_step: 1.0, origin: 0 };
        let once = PeakSet { indices: vec![5], t_step: 1.0, origin: 0 };
        assert_eq!(blockize(&twice, 2, 3), blockize(&once, 2, 3));
        // before the origin and past the last block
        let edge = PeakSet { indices: vec![1, 3, 40], t_step: 1.0, origin: 2 };
        assert_eq!(blockize(&edge, 2, 3).bits(), &[1, 0, 0]);
    }

    #[test]
    fn first_m() {
        let key = BinaryKey::from_bits([true, false, true, true, false, true]);
        assert_eq!(limit_first_m(&key, 2).bits(), &[1, 0, 1, 0, 0, 0]);
        assert_eq!(limit_first_m(&key, 4), key);
        assert_eq!(limit_first_m(&key, 10), key);
        assert_eq!(limit_first_m(&BinaryKey::zeros(4), 2), BinaryKey::zeros(4));
        assert_eq!(limit_first_m(&key, 3).count_ones(), 3);
    }

    fn grid() -> FrequencyGrid {
        FrequencyGrid::new(0.1e6, 0.1e6, 400).unwrap()
    }

    #[test]
    fn all_pass_channel_marks_the_first_block() {
        let h = Spectrum::constant(grid(), Complex64::new(1.0, 0.0));
        let cfg = TdstConfig { pad_factor: 0, window: Window::Rectangular, ..Default::default() };
        let key = tdst_raw_key(&h, &cfg).unwrap();
        assert_eq!(key.bits()[0], 1);
        assert_eq!(key.count_ones(), 1);
    }

    #[test]
    fn two_path_channel_peaks() {
        let g = grid();
        let cfg = TdstConfig::default();
        let t_step = 1.0 / (5.0 * g.n_bins() as f64 * g.f_step());
        let k = 37;
        let tau = k as f64 * t_step;
        let h = Spectrum::from_fn(g, |f| Complex64::new(1.0, 0.0) + Complex64::from_polar(0.5, -2.0 * PI * f * tau))
            .unwrap();
        let tr = cfg.trace(&h);
        let peaks = detect_peaks(&tr, cfg.gamma).unwrap();
        let delays: Vec<isize> = peaks.indices.iter().map(|&i| tr.delay_samples(i)).collect();
        assert!(delays.contains(&0), "{delays:?}");
        assert!(delays.contains(&(k as isize)), "{delays:?}");
        let key = blockize(&peaks, cfg.epsilon, cfg.n_blocks);
        assert_eq!(key.bits()[0], 1);
        assert_eq!(key.bits()[k / cfg.epsilon], 1);
    }

    #[test]
    fn coincidence_with_itself_is_one() {
        let g = grid();
        let h = Spectrum::from_fn(g, |f| {
            Complex64::new(1.0, 0.0)
                + Complex64::from_polar(0.4, -2.0 * PI * f * 2.1e-7)
                + Complex64::from_polar(0.3, -2.0 * PI * f * 5.3e-7)
        })
        .unwrap();
        assert_eq!(peak_support_coincidence(&h, &h, &TdstConfig::default(), 1).unwrap(), 1.0);
    }
}
