//! Frequency-grid arithmetic and two-port ABCD algebra.
//!
//! Every quantity lives on a uniform [`FrequencyGrid`]. A reciprocal two-port
//! is an [`AbcdChannel`] with `A·D − C·B = 1` at every bin; the transfer
//! functions and input impedances seen by a transmitter/receiver pair follow
//! from its four entries and a [`Termination`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominators with a smaller magnitude are treated as singular.
pub const SINGULAR_EPS: f64 = 1e-30;

/// Reciprocity tolerance for channels built by this crate.
pub const RECIPROCITY_TOL: f64 = 1e-9;

/// Reciprocity tolerance for channels handed in from outside (estimates, files).
pub const RECIPROCITY_TOL_EXTERNAL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("frequency grids differ")]
    GridMismatch,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at bin {bin}")]
    NonFinite { bin: usize },
    #[error("singular denominator at bin {bin}")]
    SingularDenominator { bin: usize },
    #[error("reciprocity violated at bin {bin}: |AD-CB-1| = {error:e}")]
    ReciprocityViolated { bin: usize, error: f64 },
    #[error("termination is not passive at bin {bin}")]
    ActiveTermination { bin: usize },
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// Uniform frequency grid `f_start + k·f_step`, `k = 0..n_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    f_start: f64,
    f_step: f64,
    n_bins: usize,
}

impl FrequencyGrid {
    pub fn new(f_start: f64, f_step: f64, n_bins: usize) -> Result<Self> {
        if !(f_step > 0.0) || !f_step.is_finite() {
            return Err(SpectralError::InvalidGrid(format!("f_step must be positive, got {f_step}")));
        }
        if !f_start.is_finite() || f_start < 0.0 {
            return Err(SpectralError::InvalidGrid(format!("f_start must be >= 0, got {f_start}")));
        }
        if n_bins < 2 {
            return Err(SpectralError::InvalidGrid(format!("need at least 2 bins, got {n_bins}")));
        }
        Ok(Self { f_start, f_step, n_bins })
    }

    /// Grid spanning `[f_start, f_stop]` inclusive with `n_bins` points.
    pub fn spanning(f_start: f64, f_stop: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(SpectralError::InvalidGrid(format!("need at least 2 bins, got {n_bins}")));
        }
        Self::new(f_start, (f_stop - f_start) / (n_bins - 1) as f64, n_bins)
    }

    pub fn f_start(&self) -> f64 {
        self.f_start
    }

    pub fn f_step(&self) -> f64 {
        self.f_step
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        self.f_start + bin as f64 * self.f_step
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_bins).map(move |k| self.frequency(k))
    }
}

/// Complex samples over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n_bins() {
            return Err(SpectralError::LengthMismatch { expected: grid.n_bins(), got: values.len() });
        }
        if let Some(bin) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite { bin });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: FrequencyGrid, value: Complex64) -> Self {
        Self { grid, values: vec![value; grid.n_bins()] }
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self::constant(grid, Complex64::new(0.0, 0.0))
    }

    /// Samples `f(frequency)` on every bin.
    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, grid.frequencies().map(f).collect())
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| v * factor).collect() }
    }

    pub fn add(&self, other: &Spectrum) -> Result<Self> {
        self.ensure_same_grid(other)?;
        Self::new(self.grid, self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }

    pub fn ensure_same_grid(&self, other: &Spectrum) -> Result<()> {
        if self.grid != other.grid {
            return Err(SpectralError::GridMismatch);
        }
        Ok(())
    }

    /// Largest per-bin relative difference `|a − b| / max(|a|, |b|)`.
    pub fn max_relative_difference(&self, other: &Spectrum) -> Result<f64> {
        self.ensure_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let scale = a.norm().max(b.norm());
                if scale == 0.0 {
                    0.0
                } else {
                    (a - b).norm() / scale
                }
            })
            .fold(0.0, f64::max))
    }
}

fn checked_div(num: Complex64, den: Complex64, bin: usize) -> Result<Complex64> {
    if den.norm() < SINGULAR_EPS || !den.is_finite() {
        return Err(SpectralError::SingularDenominator { bin });
    }
    Ok(num / den)
}

/// Transmit and receive impedances seen by the two-port.
#[derive(Debug, Clone, PartialEq)]
pub struct Termination {
    z_t: Spectrum,
    z_l: Spectrum,
}

impl Termination {
    pub fn new(z_t: Spectrum, z_l: Spectrum) -> Result<Self> {
        z_t.ensure_same_grid(&z_l)?;
        for (bin, (t, l)) in z_t.values().iter().zip(z_l.values()).enumerate() {
            if t.re < 0.0 || l.re < 0.0 {
                return Err(SpectralError::ActiveTermination { bin });
            }
        }
        Ok(Self { z_t, z_l })
    }

    /// Constant impedances broadcast over the grid.
    pub fn constant(grid: FrequencyGrid, z_t: Complex64, z_l: Complex64) -> Result<Self> {
        Self::new(Spectrum::constant(grid, z_t), Spectrum::constant(grid, z_l))
    }

    pub fn resistive(grid: FrequencyGrid, r_t: f64, r_l: f64) -> Result<Self> {
        Self::constant(grid, Complex64::new(r_t, 0.0), Complex64::new(r_l, 0.0))
    }

    pub fn z_t(&self) -> &Spectrum {
        &self.z_t
    }

    pub fn z_l(&self) -> &Spectrum {
        &self.z_l
    }

    pub fn grid(&self) -> &FrequencyGrid {
        self.z_t.grid()
    }
}

/// Per-bin transmission matrix `[V1; I1] = [A B; C D]·[V2; I2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcdChannel {
    a: Spectrum,
    b: Spectrum,
    c: Spectrum,
    d: Spectrum,
}

impl AbcdChannel {
    /// Assembles a channel from its entries without checking reciprocity.
    pub fn from_entries(a: Spectrum, b: Spectrum, c: Spectrum, d: Spectrum) -> Result<Self> {
        a.ensure_same_grid(&b)?;
        a.ensure_same_grid(&c)?;
        a.ensure_same_grid(&d)?;
        Ok(Self { a, b, c, d })
    }

    /// Like [`from_entries`](Self::from_entries), but rejects channels whose
    /// determinant deviates from one by more than the external tolerance.
    pub fn from_external(a: Spectrum, b: Spectrum, c: Spectrum, d: Spectrum) -> Result<Self> {
        let ch = Self::from_entries(a, b, c, d)?;
        ch.check_reciprocity(RECIPROCITY_TOL_EXTERNAL)?;
        Ok(ch)
    }

    fn from_fn(grid: FrequencyGrid, f: impl Fn(usize) -> [Complex64; 4]) -> Result<Self> {
        let n = grid.n_bins();
        let (mut a, mut b, mut c, mut d) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for k in 0..n {
            let [ak, bk, ck, dk] = f(k);
            a.push(ak);
            b.push(bk);
            c.push(ck);
            d.push(dk);
        }
        Ok(Self {
            a: Spectrum::new(grid, a)?,
            b: Spectrum::new(grid, b)?,
            c: Spectrum::new(grid, c)?,
            d: Spectrum::new(grid, d)?,
        })
    }

    pub fn identity(grid: FrequencyGrid) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self {
            a: Spectrum::constant(grid, one),
            b: Spectrum::constant(grid, zero),
            c: Spectrum::constant(grid, zero),
            d: Spectrum::constant(grid, one),
        }
    }

    /// Uniform transmission line of characteristic impedance `z0`,
    /// propagation constant `gamma` (1/m) and `length` (m).
    pub fn line(grid: FrequencyGrid, z0: Complex64, gamma: &Spectrum, length: f64) -> Result<Self> {
        if gamma.grid() != &grid {
            return Err(SpectralError::GridMismatch);
        }
        if z0.norm() < SINGULAR_EPS {
            return Err(SpectralError::SingularDenominator { bin: 0 });
        }
        Self::from_fn(grid, |k| {
            let gl = gamma.values()[k] * length;
            let (ch, sh) = (gl.cosh(), gl.sinh());
            [ch, z0 * sh, sh / z0, ch]
        })
    }

    /// Shunt admittance `y` (S) across the line.
    pub fn shunt(y: &Spectrum) -> Self {
        let grid = *y.grid();
        Self {
            a: Spectrum::constant(grid, Complex64::new(1.0, 0.0)),
            b: Spectrum::zeros(grid),
            c: y.clone(),
            d: Spectrum::constant(grid, Complex64::new(1.0, 0.0)),
        }
    }

    /// Series impedance `z` (Ω) in the signal path.
    pub fn series(z: &Spectrum) -> Self {
        let grid = *z.grid();
        Self {
            a: Spectrum::constant(grid, Complex64::new(1.0, 0.0)),
            b: z.clone(),
            c: Spectrum::zeros(grid),
            d: Spectrum::constant(grid, Complex64::new(1.0, 0.0)),
        }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        self.a.grid()
    }

    pub fn a(&self) -> &Spectrum {
        &self.a
    }

    pub fn b(&self) -> &Spectrum {
        &self.b
    }

    pub fn c(&self) -> &Spectrum {
        &self.c
    }

    pub fn d(&self) -> &Spectrum {
        &self.d
    }

    /// Entries `[A, B, C, D]` at one bin.
    pub fn at(&self, bin: usize) -> [Complex64; 4] {
        [self.a.values()[bin], self.b.values()[bin], self.c.values()[bin], self.d.values()[bin]]
    }

    /// Per-bin matrix product `self · right`.
    pub fn cascade(&self, right: &AbcdChannel) -> Result<Self> {
        if self.grid() != right.grid() {
            return Err(SpectralError::GridMismatch);
        }
        Self::from_fn(*self.grid(), |k| {
            let [a1, b1, c1, d1] = self.at(k);
            let [a2, b2, c2, d2] = right.at(k);
            [a1 * a2 + b1 * c2, a1 * b2 + b1 * d2, c1 * a2 + d1 * c2, c1 * b2 + d1 * d2]
        })
    }

    /// Per-bin `|AD − CB − 1|`.
    pub fn determinant_errors(&self) -> Vec<f64> {
        (0..self.grid().n_bins())
            .map(|k| {
                let [a, b, c, d] = self.at(k);
                (a * d - c * b - 1.0).norm()
            })
            .collect()
    }

    /// Per-bin `|AD − CB − 1| / max(1, |AD|, |CB|)`: the determinant error
    /// relative to the size of the products that cancel.
    pub fn reciprocity_errors(&self) -> Vec<f64> {
        (0..self.grid().n_bins())
            .map(|k| {
                let [a, b, c, d] = self.at(k);
                let (ad, cb) = (a * d, c * b);
                (ad - cb - 1.0).norm() / 1f64.max(ad.norm()).max(cb.norm())
            })
            .collect()
    }

    pub fn reciprocity_error(&self) -> f64 {
        self.reciprocity_errors().into_iter().fold(0.0, f64::max)
    }

    pub fn check_reciprocity(&self, tol: f64) -> Result<()> {
        match self.reciprocity_errors().into_iter().enumerate().find(|(_, e)| !(*e <= tol)) {
            Some((bin, error)) => Err(SpectralError::ReciprocityViolated { bin, error }),
            None => Ok(()),
        }
    }

    /// Transmission matrix for signals travelling from port 2 to port 1:
    /// `A` and `D` trade places.
    pub fn reverse_direction(&self) -> Result<Self> {
        self.check_reciprocity(RECIPROCITY_TOL_EXTERNAL)?;
        Ok(Self { a: self.d.clone(), b: self.b.clone(), c: self.c.clone(), d: self.a.clone() })
    }

    fn ensure_termination(&self, term: &Termination) -> Result<()> {
        if term.grid() != self.grid() {
            return Err(SpectralError::GridMismatch);
        }
        Ok(())
    }

    /// `H1 = V2 / V1g`: source at port 1, load at port 2.
    pub fn ctf_forward(&self, term: &Termination) -> Result<Spectrum> {
        self.ensure_termination(term)?;
        let vals = (0..self.grid().n_bins())
            .map(|k| {
                let [a, b, c, d] = self.at(k);
                let (zt, zl) = (term.z_t().values()[k], term.z_l().values()[k]);
                checked_div(zl, zl * a + b + zl * zt * c + zt * d, k)
            })
            .collect::<Result<Vec<_>>>()?;
        Spectrum::new(*self.grid(), vals)
    }

    /// `H2 = V1 / V2g`: source at port 2, load at port 1.
    pub fn ctf_reverse(&self, term: &Termination) -> Result<Spectrum> {
        self.ensure_termination(term)?;
        let vals = (0..self.grid().n_bins())
            .map(|k| {
                let [a, b, c, d] = self.at(k);
                let (zt, zl) = (term.z_t().values()[k], term.z_l().values()[k]);
                checked_div(zl, zl * d + b + zl * zt * c + zt * a, k)
            })
            .collect::<Result<Vec<_>>>()?;
        Spectrum::new(*self.grid(), vals)
    }

    /// Impedance looking into port 1 with port 2 terminated by `z_l`.
    pub fn zin_port1(&self, z_l: &Spectrum) -> Result<Spectrum> {
        self.zin(z_l, false)
    }

    /// Impedance looking into port 2 with port 1 terminated by `z_l`.
    pub fn zin_port2(&self, z_l: &Spectrum) -> Result<Spectrum> {
        self.zin(z_l, true)
    }

    fn zin(&self, z_l: &Spectrum, from_port2: bool) -> Result<Spectrum> {
        if z_l.grid() != self.grid() {
            return Err(SpectralError::GridMismatch);
        }
        let vals = (0..self.grid().n_bins())
            .map(|k| {
                let [mut a, b, c, mut d] = self.at(k);
                if from_port2 {
                    std::mem::swap(&mut a, &mut d);
                }
                let zl = z_l.values()[k];
                // (A + B/ZL)/(C + D/ZL), multiplied through by ZL
                checked_div(a * zl + b, c * zl + d, k)
            })
            .collect::<Result<Vec<_>>>()?;
        Spectrum::new(*self.grid(), vals)
    }
}

/// Drive/response spectra of one trans-impedance sounding in each direction.
#[derive(Debug, Clone)]
pub struct TransimpedanceSounding {
    pub i1g: Spectrum,
    pub v2: Spectrum,
    pub i2g: Spectrum,
    pub v1: Spectrum,
}

/// Drive/response spectra of one trans-admittance sounding in each direction.
#[derive(Debug, Clone)]
pub struct TransadmittanceSounding {
    pub v1g: Spectrum,
    pub i2: Spectrum,
    pub v2g: Spectrum,
    pub i1: Spectrum,
}

/// Simulates a Norton current source `i_g` (shunted by `Z_T`) at each port in
/// turn, recording the voltage across the far-end `Z_L`.
pub fn transimpedance_sounding(
    ch: &AbcdChannel,
    term: &Termination,
    i_g: Complex64,
) -> Result<TransimpedanceSounding> {
    let grid = *ch.grid();
    let i1g = Spectrum::constant(grid, i_g);
    let h1 = ch.ctf_forward(term)?;
    let h2 = ch.ctf_reverse(term)?;
    // Norton -> Thevenin: V_g = I_g·Z_T
    let v2 = Spectrum::new(
        grid,
        h1.values().iter().zip(term.z_t().values()).map(|(h, zt)| h * zt * i_g).collect(),
    )?;
    let v1 = Spectrum::new(
        grid,
        h2.values().iter().zip(term.z_t().values()).map(|(h, zt)| h * zt * i_g).collect(),
    )?;
    Ok(TransimpedanceSounding { i1g: i1g.clone(), v2, i2g: i1g, v1 })
}

/// Simulates a Thevenin voltage source `v_g` at each port in turn, recording
/// the current through the far-end `Z_L`.
pub fn transadmittance_sounding(
    ch: &AbcdChannel,
    term: &Termination,
    v_g: Complex64,
) -> Result<TransadmittanceSounding> {
    let grid = *ch.grid();
    let v1g = Spectrum::constant(grid, v_g);
    let h1 = ch.ctf_forward(term)?;
    let h2 = ch.ctf_reverse(term)?;
    let current = |h: &Spectrum| -> Result<Spectrum> {
        let vals = h
            .values()
            .iter()
            .zip(term.z_l().values())
            .enumerate()
            .map(|(k, (h, zl))| checked_div(h * v_g, *zl, k))
            .collect::<Result<Vec<_>>>()?;
        Spectrum::new(grid, vals)
    };
    Ok(TransadmittanceSounding { v1g: v1g.clone(), i2: current(&h1)?, v2g: v1g, i1: current(&h2)? })
}

/// Injected-current / open-circuit-voltage normalization of a trans-impedance
/// sounding. Returns `(Z21', Z12')`, which coincide for reciprocal networks
/// whatever the terminations.
///
/// `zin1` and `zin2` are the port input impedances with the far port
/// terminated by `Z_L` (see [`AbcdChannel::zin_port1`]).
#[allow(clippy::too_many_arguments)]
pub fn normalize_transimpedance(
    i1g: &Spectrum,
    v2: &Spectrum,
    i2g: &Spectrum,
    v1: &Spectrum,
    zin1: &Spectrum,
    zin2: &Spectrum,
    term: &Termination,
) -> Result<(Spectrum, Spectrum)> {
    let grid = *i1g.grid();
    for s in [v2, i2g, v1, zin1, zin2, term.z_t()] {
        if s.grid() != &grid {
            return Err(SpectralError::GridMismatch);
        }
    }
    let mut z21 = Vec::with_capacity(grid.n_bins());
    let mut z12 = Vec::with_capacity(grid.n_bins());
    for k in 0..grid.n_bins() {
        let (zt, zl) = (term.z_t().values()[k], term.z_l().values()[k]);
        let (zi1, zi2) = (zin1.values()[k], zin2.values()[k]);
        let i1i = checked_div(zt, zi1 + zt, k)? * i1g.values()[k];
        let v2oc = checked_div(zi2 + zl, zl, k)? * v2.values()[k];
        let i2i = checked_div(zt, zi2 + zt, k)? * i2g.values()[k];
        let v1oc = checked_div(zi1 + zl, zl, k)? * v1.values()[k];
        z21.push(checked_div(v2oc, i1i, k)?);
        z12.push(checked_div(v1oc, i2i, k)?);
    }
    Ok((Spectrum::new(grid, z21)?, Spectrum::new(grid, z12)?))
}

/// Applied-voltage / short-circuit-current normalization of a
/// trans-admittance sounding. Returns `(Y21', Y12')`.
#[allow(clippy::too_many_arguments)]
pub fn normalize_transadmittance(
    v1g: &Spectrum,
    i2: &Spectrum,
    v2g: &Spectrum,
    i1: &Spectrum,
    zin1: &Spectrum,
    zin2: &Spectrum,
    term: &Termination,
) -> Result<(Spectrum, Spectrum)> {
    let grid = *v1g.grid();
    for s in [i2, v2g, i1, zin1, zin2, term.z_t()] {
        if s.grid() != &grid {
            return Err(SpectralError::GridMismatch);
        }
    }
    let mut y21 = Vec::with_capacity(grid.n_bins());
    let mut y12 = Vec::with_capacity(grid.n_bins());
    for k in 0..grid.n_bins() {
        let (zt, zl) = (term.z_t().values()[k], term.z_l().values()[k]);
        let (zi1, zi2) = (zin1.values()[k], zin2.values()[k]);
        let v1i = checked_div(zi1, zi1 + zt, k)? * v1g.values()[k];
        let i2cc = checked_div(zi2 + zl, zi2, k)? * i2.values()[k];
        let v2i = checked_div(zi2, zi2 + zt, k)? * v2g.values()[k];
        let i1cc = checked_div(zi1 + zl, zi1, k)? * i1.values()[k];
        y21.push(checked_div(i2cc, v1i, k)?);
        y12.push(checked_div(i1cc, v2i, k)?);
    }
    Ok((Spectrum::new(grid, y21)?, Spectrum::new(grid, y12)?))
}

/// Mean over bins of `|h1 − h2|`, divided by the mean of `|h1|`.
pub fn asymmetry_metric(h1: &Spectrum, h2: &Spectrum) -> Result<f64> {
    h1.ensure_same_grid(h2)?;
    let n = h1.len() as f64;
    let diff = h1.values().iter().zip(h2.values()).map(|(a, b)| (a - b).norm()).sum::<f64>() / n;
    if diff == 0.0 {
        return Ok(0.0);
    }
    let reference = h1.values().iter().map(|v| v.norm()).sum::<f64>() / n;
    if reference < SINGULAR_EPS {
        return Err(SpectralError::SingularDenominator { bin: 0 });
    }
    Ok(diff / reference)
}
