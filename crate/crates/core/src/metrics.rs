//! Correlation coefficients, key distance and empirical key entropy.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantize::SymbolKey;
use crate::spectral::Spectrum;
use crate::tdst::BinaryKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("input has zero energy")]
    ZeroEnergy,
    #[error("bin index {0} out of range")]
    BinOutOfRange(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `Σ x·conj(y) / √(Σ|x|²·Σ|y|²)`.
pub fn det_correlation(x: &[Complex64], y: &[Complex64]) -> Result<Complex64> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(MetricsError::Empty);
    }
    let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    let ey: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    if ex == 0.0 || ey == 0.0 {
        return Err(MetricsError::ZeroEnergy);
    }
    let cross: Complex64 = x.iter().zip(y).map(|(a, b)| a * b.conj()).sum();
    Ok(cross / (ex * ey).sqrt())
}

/// Correlation of magnitudes; phases play no part.
pub fn abs_correlation(x: &[Complex64], y: &[Complex64]) -> Result<f64> {
    let mx: Vec<Complex64> = x.iter().map(|v| Complex64::new(v.norm(), 0.0)).collect();
    let my: Vec<Complex64> = y.iter().map(|v| Complex64::new(v.norm(), 0.0)).collect();
    Ok(det_correlation(&mx, &my)?.re)
}

/// Correlation of two keys read as real sequences.
pub fn key_correlation(a: &[u32], b: &[u32]) -> Result<f64> {
    let to_c = |k: &[u32]| k.iter().map(|s| Complex64::new(f64::from(*s), 0.0)).collect::<Vec<_>>();
    Ok(det_correlation(&to_c(a), &to_c(b))?.re)
}

/// Which pairs of a transmitter group enter the ensemble expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Only pairs of different channels.
    #[default]
    Distinct,
    /// Every ordered pair, the channel with itself included.
    All,
}

fn pair_correlation<'a>(
    groups: impl Iterator<Item = (Vec<Complex64>, Vec<Complex64>)> + 'a,
    pairing: Pairing,
) -> Result<Complex64> {
    let mut cross = Complex64::new(0.0, 0.0);
    let mut n_pairs = 0usize;
    let (mut px, mut py) = (0.0, 0.0);
    let mut n_items = 0usize;
    for (xs, ys) in groups {
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                if pairing == Pairing::All || i != j {
                    cross += x * y.conj();
                    n_pairs += 1;
                }
            }
        }
        px += xs.iter().map(|v| v.norm_sqr()).sum::<f64>();
        py += ys.iter().map(|v| v.norm_sqr()).sum::<f64>();
        n_items += xs.len();
    }
    if n_pairs == 0 {
        return Err(MetricsError::Empty);
    }
    let (px, py) = (px / n_items as f64, py / n_items as f64);
    if px == 0.0 || py == 0.0 {
        return Err(MetricsError::ZeroEnergy);
    }
    Ok(cross / n_pairs as f64 / (px * py).sqrt())
}

fn value_at(s: &Spectrum, bin: usize) -> Result<Complex64> {
    s.values().get(bin).copied().ok_or(MetricsError::BinOutOfRange(bin))
}

/// Space-frequency correlation between bins `l` and `m`. `groups` holds the
/// channels of each transmitter; expectations run over pairs within a group
/// and over all groups.
pub fn space_freq_correlation(groups: &[Vec<Spectrum>], l: usize, m: usize, pairing: Pairing) -> Result<Complex64> {
    let cols = groups
        .iter()
        .map(|g| {
            let xs = g.iter().map(|s| value_at(s, l)).collect::<Result<Vec<_>>>()?;
            let ys = g.iter().map(|s| value_at(s, m)).collect::<Result<Vec<_>>>()?;
            Ok((xs, ys))
        })
        .collect::<Result<Vec<_>>>()?;
    pair_correlation(cols.into_iter(), pairing)
}

/// Correlation between input impedances and transfer functions of channels
/// sharing a transmitter; each group entry is a `(Zin, H)` pair.
pub fn zin_ctf_correlation(
    groups: &[Vec<(Spectrum, Spectrum)>],
    l: usize,
    m: usize,
    pairing: Pairing,
) -> Result<Complex64> {
    let cols = groups
        .iter()
        .map(|g| {
            let xs = g.iter().map(|(z, _)| value_at(z, l)).collect::<Result<Vec<_>>>()?;
            let ys = g.iter().map(|(_, h)| value_at(h, m)).collect::<Result<Vec<_>>>()?;
            Ok((xs, ys))
        })
        .collect::<Result<Vec<_>>>()?;
    pair_correlation(cols.into_iter(), pairing)
}

/// `Σ|a_i − b_i| / max(max a, max b)`; zero for two all-zero keys.
pub fn key_distance(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let top = a.iter().chain(b).copied().max().unwrap_or(0);
    if top == 0 {
        return Ok(0.0);
    }
    let sum: u64 = a.iter().zip(b).map(|(x, y)| u64::from(x.abs_diff(*y))).sum();
    Ok(sum as f64 / f64::from(top))
}

pub fn binary_key_distance(a: &BinaryKey, b: &BinaryKey) -> Result<f64> {
    key_distance(&a.as_symbols(), &b.as_symbols())
}

/// Distance over positions valid in both keys.
pub fn symbol_key_distance(a: &SymbolKey, b: &SymbolKey) -> Result<f64> {
    let (ka, kb) = jointly_masked(a, b)?;
    key_distance(&ka, &kb)
}

/// Both symbol sequences with positions invalid in either key set to zero.
pub fn jointly_masked(a: &SymbolKey, b: &SymbolKey) -> Result<(Vec<u32>, Vec<u32>)> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let keep = |i: usize| a.mask[i] && b.mask[i];
    let ka = (0..a.len()).map(|i| if keep(i) { a.symbols[i] } else { 0 }).collect();
    let kb = (0..b.len()).map(|i| if keep(i) { b.symbols[i] } else { 0 }).collect();
    Ok((ka, kb))
}

/// Plug-in entropy of the symbol distribution at each position, in bits,
/// averaged over positions.
pub fn key_entropy(keys: &[Vec<u32>]) -> Result<f64> {
    let first = keys.first().ok_or(MetricsError::Empty)?;
    let n = first.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if let Some(k) = keys.iter().find(|k| k.len() != n) {
        return Err(MetricsError::LengthMismatch(n, k.len()));
    }
    let total = keys.len() as f64;
    let mut sum = 0.0;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for pos in 0..n {
        counts.clear();
        for k in keys {
            *counts.entry(k[pos]).or_default() += 1;
        }
        sum -= counts
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                p * p.log2()
            })
            .sum::<f64>();
    }
    Ok(sum / n as f64)
}
