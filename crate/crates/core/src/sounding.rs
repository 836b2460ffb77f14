//! Simulated channel estimation and impulse-response computation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::spectral::{Result, Spectrum};

/// Noisy estimator of transfer functions and input impedances. Each
/// observation is the average of `n_avg` independent noisy snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisySounder {
    /// Per-bin SNR of transfer-function snapshots, dB. `inf` means noiseless.
    pub snr_h_db: f64,
    /// Per-bin SNR of impedance snapshots, dB.
    pub snr_z_db: f64,
    pub n_avg: usize,
    pub seed: u64,
}

impl Default for NoisySounder {
    fn default() -> Self {
        Self { snr_h_db: 30.0, snr_z_db: 30.0, n_avg: 10, seed: 0 }
    }
}

impl NoisySounder {
    pub fn noiseless() -> Self {
        Self { snr_h_db: f64::INFINITY, snr_z_db: f64::INFINITY, n_avg: 1, seed: 0 }
    }

    /// Transfer-function estimate. `stream` selects an independent noise
    /// sequence, so the same `(seed, stream)` always yields the same draw.
    pub fn observe_ctf(&self, truth: &Spectrum, stream: u64) -> Result<Spectrum> {
        observe(truth, self.snr_h_db, self.n_avg, self.seed, stream)
    }

    pub fn observe_impedance(&self, truth: &Spectrum, stream: u64) -> Result<Spectrum> {
        observe(truth, self.snr_z_db, self.n_avg, self.seed, stream)
    }
}

/// `truth` plus circularly-symmetric white noise with per-bin power
/// `|truth|²·10^(−snr/10)`, averaged over `n_avg` draws.
pub fn observe(truth: &Spectrum, snr_db: f64, n_avg: usize, seed: u64, stream: u64) -> Result<Spectrum> {
    assert!(n_avg >= 1, "n_avg must be at least 1");
    if snr_db == f64::INFINITY {
        return Ok(truth.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let inv_snr = 10f64.powf(-snr_db / 10.0);
    let vals = truth
        .values()
        .iter()
        .map(|&h| {
            let sigma = (h.norm_sqr() * inv_snr / 2.0).sqrt();
            let mut acc = Complex64::new(0.0, 0.0);
            for _ in 0..n_avg {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                acc += h + Complex64::new(re, im) * sigma;
            }
            acc / n_avg as f64
        })
        .collect();
    Spectrum::new(*truth.grid(), vals)
}

/// Spectral taper applied before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    /// Tukey taper: flat except for raised-cosine edges covering `rolloff`
    /// of the band in total.
    RaisedCosine { rolloff: f64 },
}

impl Default for Window {
    fn default() -> Self {
        Window::RaisedCosine { rolloff: 0.1 }
    }
}

impl Window {
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        match *self {
            Window::Rectangular => vec![1.0; n],
            Window::RaisedCosine { rolloff } => {
                let r = rolloff.clamp(0.0, 1.0);
                if r == 0.0 || n < 2 {
                    return vec![1.0; n];
                }
                let span = (n - 1) as f64;
                let edge = r * span / 2.0;
                (0..n)
                    .map(|i| {
                        let x = i as f64;
                        let from_edge = x.min(span - x);
                        if from_edge >= edge {
                            1.0
                        } else {
                            0.5 * (1.0 - (PI * from_edge / edge).cos())
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Magnitude trace `|h|` of an impulse response.
///
/// `origin` is the sample index of `t = 0`; samples before it hold the
/// wrapped tail of the circular inverse transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub t_step: f64,
    pub samples: Vec<f64>,
    pub origin: usize,
}

impl ImpulseResponse {
    /// Rotates the circular trace right by `samples`, so that `t = 0` lands on
    /// an interior sample.
    pub fn with_precursor(mut self, samples: usize) -> Self {
        let n = self.samples.len();
        let shift = samples % n;
        self.samples.rotate_right(shift);
        self.origin = (self.origin + shift) % n;
        self
    }

    /// Delay of sample `index` in sampling periods; negative before the origin.
    pub fn delay_samples(&self, index: usize) -> isize {
        index as isize - self.origin as isize
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Inverse DFT of the windowed spectrum extended with `pad_factor·n_bins`
/// zeros, normalized by `1/n_bins` so that padding only interpolates.
pub fn impulse_response(h: &Spectrum, pad_factor: usize, window: Window) -> ImpulseResponse {
    let n = h.len();
    let len = n * (1 + pad_factor);
    let w = window.coefficients(n);
    let mut buf: Vec<Complex64> = h.values().iter().zip(&w).map(|(v, w)| v * *w).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / n as f64;
    ImpulseResponse {
        t_step: 1.0 / (len as f64 * h.grid().f_step()),
        samples: buf.iter().map(|v| v.norm() * scale).collect(),
        origin: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FrequencyGrid;

    fn grid(n: usize) -> FrequencyGrid {
        FrequencyGrid::new(0.1e6, 0.1e6, n).unwrap()
    }

    #[test]
    fn infinite_snr_is_exact() {
        let h = Spectrum::from_fn(grid(64), |f| Complex64::new(1.0, f * 1e-7)).unwrap();
        assert_eq!(observe(&h, f64::INFINITY, 5, 1, 2).unwrap(), h);
        assert_eq!(NoisySounder::noiseless().observe_ctf(&h, 0).unwrap(), h);
    }

    #[test]
    fn observation_is_reproducible_per_stream() {
        let h = Spectrum::constant(grid(32), Complex64::new(0.5, -0.2));
        let s = NoisySounder { seed: 11, ..Default::default() };
        assert_eq!(s.observe_ctf(&h, 3).unwrap(), s.observe_ctf(&h, 3).unwrap());
        assert_ne!(s.observe_ctf(&h, 3).unwrap(), s.observe_ctf(&h, 4).unwrap());
    }

    fn relative_rms(snr_db: f64, n_avg: usize, seed: u64) -> f64 {
        let g = grid(10_000);
        let h = Spectrum::from_fn(g, |f| Complex64::from_polar(1.0 + f * 1e-6, f * 3e-7)).unwrap();
        let obs = observe(&h, snr_db, n_avg, seed, 0).unwrap();
        let mse = h
            .values()
            .iter()
            .zip(obs.values())
            .map(|(t, o)| (t - o).norm_sqr() / t.norm_sqr())
            .sum::<f64>()
            / g.n_bins() as f64;
        mse.sqrt()
    }

    #[test]
    fn averaging_divides_error_variance() {
        let expected = 10f64.powf(-30.0 / 20.0) / 10.0;
        let rms = relative_rms(30.0, 100, 5);
        assert!((rms - expected).abs() / expected < 0.2, "{rms} vs {expected}");

        let single = relative_rms(20.0, 1, 9);
        let four = relative_rms(20.0, 4, 9);
        let ratio = (single / four).powi(2);
        assert!((ratio - 4.0).abs() < 0.4, "variance ratio {ratio}");
    }

    #[test]
    fn flat_spectrum_is_a_delta() {
        let h = Spectrum::constant(grid(64), Complex64::new(1.0, 0.0));
        let ir = impulse_response(&h, 0, Window::Rectangular);
        assert!((ir.samples[0] - 1.0).abs() < 1e-12);
        assert!(ir.samples[1..].iter().all(|s| *s < 1e-12));
        assert!((ir.t_step - 1.0 / (64.0 * 0.1e6)).abs() < 1e-20);
    }

    #[test]
    fn delay_lands_on_its_sample() {
        let g = grid(128);
        for (pad, k) in [(0usize, 7usize), (4, 23)] {
            let t_step = 1.0 / ((1 + pad) as f64 * g.n_bins() as f64 * g.f_step());
            let tau = k as f64 * t_step;
            let h = Spectrum::from_fn(g, |f| Complex64::from_polar(1.0, -2.0 * PI * f * tau)).unwrap();
            let ir = impulse_response(&h, pad, Window::Rectangular);
            let argmax = ir.samples.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, k);
        }
    }

    #[test]
    fn parseval_without_padding() {
        let g = grid(256);
        let h = Spectrum::from_fn(g, |f| Complex64::new((f * 1e-6).sin(), (f * 3e-7).cos() * 0.3)).unwrap();
        let ir = impulse_response(&h, 0, Window::Rectangular);
        let time = ir.samples.iter().map(|s| s * s).sum::<f64>() * ir.t_step;
        let freq = h.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / g.n_bins() as f64 * ir.t_step;
        assert!((time - freq).abs() / freq < 1e-9);
    }

    #[test]
    fn padding_preserves_original_samples() {
        let g = grid(100);
        let h = Spectrum::from_fn(g, |f| Complex64::new(1.0 / (1.0 + f * 1e-7), (f * 2e-7).sin())).unwrap();
        for window in [Window::Rectangular, Window::default()] {
            let plain = impulse_response(&h, 0, window);
            let padded = impulse_response(&h, 4, window);
            assert_eq!(padded.len(), 500);
            for (k, s) in plain.samples.iter().enumerate() {
                assert!((padded.samples[5 * k] - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn precursor_rotation_moves_the_origin() {
        let h = Spectrum::constant(grid(16), Complex64::new(1.0, 0.0));
        let ir = impulse_response(&h, 0, Window::Rectangular).with_precursor(3);
        assert_eq!(ir.origin, 3);
        assert!((ir.samples[3] - 1.0).abs() < 1e-12);
        assert_eq!(ir.delay_samples(5), 2);
        assert_eq!(ir.delay_samples(0), -3);
    }

    #[test]
    fn raised_cosine_window_shape() {
        let w = Window::RaisedCosine { rolloff: 0.1 }.coefficients(101);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[100], 0.0);
        assert!(w[50] == 1.0 && w[10] == 1.0);
        assert!(w[2] > 0.0 && w[2] < 1.0);
        assert!((w[2] - w[98]).abs() < 1e-15);
        assert_eq!(Window::Rectangular.coefficients(3), vec![1.0; 3]);
    }
}
