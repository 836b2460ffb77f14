//! Magnitude quantization of channel-state spectra and key arrangements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::Spectrum;
use crate::tdst::BinaryKey;

pub const MAX_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("nbits must be in 1..={MAX_BITS}, got {0}")]
    InvalidBits(u32),
    #[error("every bin is masked")]
    AllMasked,
    #[error("mask has {got} entries for {expected} bins")]
    MaskLength { expected: usize, got: usize },
    #[error("step value must be positive and finite, got {0}")]
    InvalidStep(f64),
}

pub type Result<T> = std::result::Result<T, QuantizeError>;

/// Key over a `2^nbits`-ary alphabet. Positions with `mask = false` carry no
/// information and are skipped by the binary arrangement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolKey {
    pub symbols: Vec<u32>,
    pub nbits: u32,
    pub mask: Vec<bool>,
}

impl SymbolKey {
    pub fn new(symbols: Vec<u32>, nbits: u32) -> Result<Self> {
        check_bits(nbits)?;
        let mask = vec![true; symbols.len()];
        Ok(Self { symbols, nbits, mask })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn max_symbol(&self) -> u32 {
        (1u32 << self.nbits) - 1
    }

    /// Symbols at valid positions only.
    pub fn valid_symbols(&self) -> Vec<u32> {
        self.symbols.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(s, _)| *s).collect()
    }
}

fn check_bits(nbits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&nbits) {
        Ok(())
    } else {
        Err(QuantizeError::InvalidBits(nbits))
    }
}

fn resolve_mask(n: usize, mask: Option<&[bool]>) -> Result<Vec<bool>> {
    match mask {
        None => Ok(vec![true; n]),
        Some(m) if m.len() == n => Ok(m.to_vec()),
        Some(m) => Err(QuantizeError::MaskLength { expected: n, got: m.len() }),
    }
}

/// Largest magnitude over valid bins.
pub fn max_valid_magnitude(csi: &Spectrum, mask: Option<&[bool]>) -> Result<f64> {
    max_valid(&csi.magnitudes(), mask)
}

fn max_valid(mags: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let mask = resolve_mask(mags.len(), mask)?;
    mags.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).reduce(f64::max).ok_or(QuantizeError::AllMasked)
}

/// Physical size of one quantization step, `max_valid|csi| / (2^nbits − 1)`.
pub fn lsb_value(csi: &Spectrum, nbits: u32, mask: Option<&[bool]>) -> Result<f64> {
    lsb_of_magnitudes(&csi.magnitudes(), nbits, mask)
}

pub fn lsb_of_magnitudes(mags: &[f64], nbits: u32, mask: Option<&[bool]>) -> Result<f64> {
    check_bits(nbits)?;
    Ok(max_valid(mags, mask)? / ((1u32 << nbits) - 1) as f64)
}

/// `round(|csi| / max_valid|csi| · (2^nbits − 1))` per valid bin, halves away
/// from zero. Masked bins become symbol 0.
pub fn quantize_levels(csi: &Spectrum, nbits: u32, mask: Option<&[bool]>) -> Result<SymbolKey> {
    quantize_magnitudes(&csi.magnitudes(), nbits, mask)
}

/// [`quantize_levels`] on precomputed magnitudes.
pub fn quantize_magnitudes(mags: &[f64], nbits: u32, mask: Option<&[bool]>) -> Result<SymbolKey> {
    check_bits(nbits)?;
    let mask = resolve_mask(mags.len(), mask)?;
    let peak = max_valid(mags, Some(&mask))?;
    let top = ((1u32 << nbits) - 1) as f64;
    let symbols = mags
        .iter()
        .zip(&mask)
        .map(|(v, m)| if *m && peak > 0.0 { (v / peak * top).round().min(top) as u32 } else { 0 })
        .collect();
    Ok(SymbolKey { symbols, nbits, mask })
}

pub fn gray(s: u32) -> u32 {
    s ^ (s >> 1)
}

pub fn gray_inverse(mut g: u32) -> u32 {
    let mut s = g;
    while g > 0 {
        g >>= 1;
        s ^= g;
    }
    s
}

/// Gray code of every valid symbol, `nbits` bits each, most significant first.
pub fn gray_encode(key: &SymbolKey) -> BinaryKey {
    BinaryKey::from_bits(
        key.valid_symbols().into_iter().flat_map(|s| (0..key.nbits).rev().map(move |b| (gray(s) >> b) & 1 == 1)),
    )
}

/// Inverse of [`gray_encode`]; a trailing partial group is dropped.
pub fn gray_decode(bits: &BinaryKey, nbits: u32) -> Vec<u32> {
    bits.bits()
        .chunks_exact(nbits as usize)
        .map(|chunk| gray_inverse(chunk.iter().fold(0u32, |acc, b| (acc << 1) | u32::from(*b))))
        .collect()
}

/// How the symbols are combined with the amplitude symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodedProduct {
    /// `k·s_last mod 2^nbits`, same alphabet as the input.
    #[default]
    Modular,
    /// Plain product `k·s_last` over a `2^(2·nbits)`-ary alphabet.
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodedConfig {
    /// Magnitude mapped to the top level of the amplitude symbol.
    pub full_scale: f64,
    pub product: CodedProduct,
}

impl Default for CodedConfig {
    fn default() -> Self {
        Self { full_scale: 1.0, product: CodedProduct::default() }
    }
}

/// Amplitude symbol: the full range `lsb_value·(2^nbits − 1)` quantized on
/// `2^nbits − 1` levels of `full_scale`, kept within `1..=2^nbits − 1` so the
/// product never erases the key.
pub fn amplitude_symbol(lsb_value: f64, nbits: u32, full_scale: f64) -> Result<u32> {
    check_bits(nbits)?;
    if !(lsb_value > 0.0) || !lsb_value.is_finite() {
        return Err(QuantizeError::InvalidStep(lsb_value));
    }
    if !(full_scale > 0.0) || !full_scale.is_finite() {
        return Err(QuantizeError::InvalidStep(full_scale));
    }
    let top = ((1u32 << nbits) - 1) as f64;
    Ok((lsb_value * top * top / full_scale).round().clamp(1.0, top) as u32)
}

/// Multiplies every symbol by the amplitude symbol and appends it.
pub fn coded_arrange_with(key: &SymbolKey, s_last: u32, product: CodedProduct) -> SymbolKey {
    let (mut symbols, nbits): (Vec<u32>, u32) = match product {
        CodedProduct::Modular => {
            let modulus = 1u64 << key.nbits;
            (key.symbols.iter().map(|&k| (u64::from(k) * u64::from(s_last) % modulus) as u32).collect(), key.nbits)
        }
        CodedProduct::Integer => (key.symbols.iter().map(|&k| k * s_last).collect(), (2 * key.nbits).min(32)),
    };
    let masked = key.mask.iter().map(|m| !m);
    for (s, off) in symbols.iter_mut().zip(masked) {
        if off {
            *s = 0;
        }
    }
    symbols.push(s_last);
    let mut mask = key.mask.clone();
    mask.push(true);
    SymbolKey { symbols, nbits, mask }
}

pub fn coded_arrange(key: &SymbolKey, lsb_value: f64, cfg: &CodedConfig) -> Result<SymbolKey> {
    let s_last = amplitude_symbol(lsb_value, key.nbits, cfg.full_scale)?;
    Ok(coded_arrange_with(key, s_last, cfg.product))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FrequencyGrid;
    use num_complex::Complex64;

    fn spectrum(mags: &[f64]) -> Spectrum {
        let g = FrequencyGrid::new(1e6, 1e6, mags.len()).unwrap();
        Spectrum::new(g, mags.iter().enumerate().map(|(k, m)| Complex64::from_polar(*m, k as f64)).collect()).unwrap()
    }

    #[test]
    fn level_examples() {
        assert_eq!(quantize_levels(&spectrum(&[0.0, 0.5, 1.0]), 2, None).unwrap().symbols, vec![0, 2, 3]);
        assert_eq!(quantize_levels(&spectrum(&[0.3; 4]), 5, None).unwrap().symbols, vec![31; 4]);
        let a = quantize_levels(&spectrum(&[0.1, 0.26, 0.7, 0.4]), 6, None).unwrap();
        let b = quantize_levels(&spectrum(&[0.1, 0.26, 0.7, 0.4]).scale(Complex64::new(0.0, 3.7)), 6, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_bins() {
        let key = quantize_levels(&spectrum(&[0.5, 9.0, 1.0]), 2, Some(&[true, false, true])).unwrap();
        assert_eq!(key.symbols, vec![2, 0, 3]);
        assert_eq!(key.valid_symbols(), vec![2, 3]);
        assert_eq!(quantize_levels(&spectrum(&[1.0, 2.0]), 2, Some(&[false, false])), Err(QuantizeError::AllMasked));
        assert!(quantize_levels(&spectrum(&[1.0, 2.0]), 2, Some(&[true])).is_err());
        assert_eq!(quantize_levels(&spectrum(&[1.0, 1.0]), 0, None), Err(QuantizeError::InvalidBits(0)));
        assert_eq!(quantize_levels(&spectrum(&[1.0, 1.0]), 17, None), Err(QuantizeError::InvalidBits(17)));
    }

    #[test]
    fn gray_examples() {
        assert_eq!(gray_encode(&SymbolKey::new(vec![5], 3).unwrap()).to_string(), "111");
        assert_eq!(gray_encode(&SymbolKey::new(vec![0], 3).unwrap()).to_string(), "000");
        let mut key = SymbolKey::new(vec![1, 2, 3], 2).unwrap();
        key.mask[1] = false;
        assert_eq!(gray_encode(&key).to_string(), "0110");
    }

    #[test]
    fn gray_round_trip() {
        let key = SymbolKey::new((0..256).collect(), 8).unwrap();
        assert_eq!(gray_decode(&gray_encode(&key), 8), key.symbols);
    }

    #[test]
    fn coded_examples() {
        let key = SymbolKey::new(vec![2, 3], 2).unwrap();
        assert_eq!(coded_arrange_with(&key, 2, CodedProduct::Modular).symbols, vec![0, 2, 2]);
        assert_eq!(coded_arrange_with(&key, 1, CodedProduct::Modular).symbols, vec![2, 3, 1]);
        let int = coded_arrange_with(&key, 3, CodedProduct::Integer);
        assert_eq!(int.symbols, vec![6, 9, 3]);
        assert_eq!(int.nbits, 4);
        assert_eq!(int.mask, vec![true; 3]);
    }

    #[test]
    fn amplitude_symbol_scale() {
        // max = 0.5 on 8 bits: 0.5·255 = 127.5 rounds up
        assert_eq!(amplitude_symbol(0.5 / 255.0, 8, 1.0).unwrap(), 128);
        assert_eq!(amplitude_symbol(1e-9, 8, 1.0).unwrap(), 1);
        assert_eq!(amplitude_symbol(10.0, 8, 1.0).unwrap(), 255);
        assert_eq!(amplitude_symbol(0.5 / 255.0, 8, 2.0).unwrap(), 64);
        assert!(amplitude_symbol(0.0, 8, 1.0).is_err());
    }

    #[test]
    fn coded_keys_keep_amplitude() {
        let x = spectrum(&[0.05, 0.2, 0.1, 0.15]);
        let y = x.scale(Complex64::new(2.0, 0.0));
        let cfg = CodedConfig::default();
        for product in [CodedProduct::Modular, CodedProduct::Integer] {
            let cfg = CodedConfig { product, ..cfg };
            let kx = quantize_levels(&x, 8, None).unwrap();
            let ky = quantize_levels(&y, 8, None).unwrap();
            assert_eq!(kx, ky);
            let cx = coded_arrange(&kx, lsb_value(&x, 8, None).unwrap(), &cfg).unwrap();
            let cy = coded_arrange(&ky, lsb_value(&y, 8, None).unwrap(), &cfg).unwrap();
            assert_ne!(cx, cy);
            assert_ne!(cx.symbols.last(), cy.symbols.last());
        }
    }
}
