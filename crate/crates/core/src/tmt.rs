//! Transmission-matrix technique.
//!
//! Three port observations give three linear equations in `(A, B, C, D)`.
//! Their solutions form a line `X(t) = X0 + t·V`; the reciprocity constraint
//! `AD − CB = 1` then picks the point on that line. With the channel matrix
//! in hand, the party at port 2 computes the reverse transfer function it
//! never measured.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{AbcdChannel, SpectralError, Spectrum, Termination, SINGULAR_EPS};

type C64 = Complex64;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TmtError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("bin {bin}: {status:?}")]
    InvalidBin { bin: usize, status: BinStatus },
    #[error("no bin produced a valid solution")]
    NoValidBins,
}

pub type Result<T> = std::result::Result<T, TmtError>;

/// A quantity measured (or received) by the solving party.
#[derive(Debug, Clone, Copy)]
pub enum Observable<'a> {
    /// Input impedance at port 1, port 2 loaded by `Z_L`.
    Zin1(&'a Spectrum),
    /// Input impedance at port 2, port 1 loaded by `Z_L`.
    Zin2(&'a Spectrum),
    /// Forward transfer function.
    H1(&'a Spectrum),
    /// Reverse transfer function.
    H2(&'a Spectrum),
}

impl Observable<'_> {
    fn spectrum(&self) -> &Spectrum {
        match self {
            Observable::Zin1(s) | Observable::Zin2(s) | Observable::H1(s) | Observable::H2(s) => s,
        }
    }

    /// Linear equation `row · (A, B, C, D) = rhs` at one bin.
    fn equation(&self, bin: usize, zt: C64, zl: C64) -> ([C64; 4], C64) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let x = self.spectrum().values()[bin];
        match self {
            // A·ZL + B = Zin1·(C·ZL + D)
            Observable::Zin1(_) => ([zl, one, -x * zl, -x], zero),
            // D·ZL + B = Zin2·(C·ZL + A)
            Observable::Zin2(_) => ([-x, one, -x * zl, zl], zero),
            Observable::H1(_) => ([x * zl, x, x * zl * zt, x * zt], zl),
            Observable::H2(_) => ([x * zt, x, x * zl * zt, x * zl], zl),
        }
    }
}

/// What one party knows when solving for the channel matrix: its own
/// forward-CTF and port-2 impedance estimates plus the public port-1
/// impedance.
#[derive(Debug, Clone)]
pub struct TmtObservation {
    pub h1_hat: Spectrum,
    pub zin1_hat: Spectrum,
    pub zin2_hat: Spectrum,
    pub term: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootRule {
    /// Passive candidates first, then the one closest to the previous bin's
    /// solution, then the smaller `|t|`.
    #[default]
    Continuity,
    /// Passive candidates first, then the smaller `|t|`.
    SmallestStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmtOptions {
    pub root_rule: RootRule,
    /// A quadratic coefficient below `tol` relative to its terms is zero.
    pub tol: f64,
    /// Candidates with `Re Zin < −passivity_margin·|Zin|` at either port are
    /// rejected.
    pub passivity_margin: f64,
}

impl Default for TmtOptions {
    fn default() -> Self {
        Self { root_rule: RootRule::Continuity, tol: 1e-9, passivity_margin: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinStatus {
    Valid,
    /// The three equations have rank below three.
    Degenerate,
    /// The determinant constraint has no finite solution on the line.
    NoFiniteRoot,
    BothRootsRejected,
}

#[derive(Debug, Clone)]
pub struct TmtSolution {
    /// Recovered channel. Invalid bins hold the identity matrix.
    pub abcd: AbcdChannel,
    /// Reverse CTF of the recovered channel.
    pub h2_hat: Spectrum,
    /// Largest relative residual of the four equations, per bin.
    pub residual: Vec<f64>,
    /// Index of the selected root, per bin.
    pub branch: Vec<u8>,
    pub status: Vec<BinStatus>,
}

impl TmtSolution {
    pub fn mask(&self) -> Vec<bool> {
        self.status.iter().map(|s| *s == BinStatus::Valid).collect()
    }

    pub fn n_valid(&self) -> usize {
        self.status.iter().filter(|s| **s == BinStatus::Valid).count()
    }

    /// Fails on the first invalid bin.
    pub fn require_all_valid(&self) -> Result<()> {
        match self.status.iter().position(|s| *s != BinStatus::Valid) {
            Some(bin) => Err(TmtError::InvalidBin { bin, status: self.status[bin] }),
            None => Ok(()),
        }
    }
}

/// Roots of the determinant constraint along `X0 + t·V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetRoots {
    None,
    One(C64),
    Two(C64, C64),
}

/// Solves `det(X0 + t·V) = 1` for `t`. The leading coefficient is dropped when
/// it is negligible next to the products it is formed from.
pub fn det_roots(x0: &[C64; 4], v: &[C64; 4], tol: f64) -> DetRoots {
    let [a0, b0, c0, d0] = *x0;
    let [va, vb, vc, vd] = *v;
    let qa = va * vd - vb * vc;
    let qb = a0 * vd + d0 * va - b0 * vc - c0 * vb;
    let qc = a0 * d0 - b0 * c0 - 1.0;
    let a_scale = (va * vd).norm() + (vb * vc).norm();
    if qa.norm() <= tol * a_scale {
        if qb.norm() < SINGULAR_EPS {
            return DetRoots::None;
        }
        return DetRoots::One(-qc / qb);
    }
    let disc = (qb * qb - qa * qc * 4.0).sqrt();
    // pick the sign that avoids cancellation
    let s = if (qb.conj() * disc).re >= 0.0 { disc } else { -disc };
    let q = -(qb + s) * 0.5;
    let t1 = q / qa;
    if q.norm() < SINGULAR_EPS {
        return DetRoots::One(t1);
    }
    let t2 = qc / q;
    match (t1.is_finite(), t2.is_finite()) {
        (true, true) => DetRoots::Two(t1, t2),
        (true, false) => DetRoots::One(t1),
        (false, true) => DetRoots::One(t2),
        (false, false) => DetRoots::None,
    }
}

/// A point on the solution line together with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub t: C64,
    pub abcd: [C64; 4],
}

/// Port impedances of `abcd` with the opposite port loaded by `zl`.
pub fn candidate_impedances(abcd: &[C64; 4], zl: C64) -> (C64, C64) {
    let [a, b, c, d] = *abcd;
    ((a * zl + b) / (c * zl + d), (d * zl + b) / (c * zl + a))
}

fn is_passive(abcd: &[C64; 4], zl: C64, margin: f64) -> bool {
    let (z1, z2) = candidate_impedances(abcd, zl);
    [z1, z2].iter().all(|z| z.is_finite() && z.re >= -margin * z.norm())
}

fn distance(x: &[C64; 4], y: &[C64; 4]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).norm()).sum()
}

/// Index of the chosen candidate, or `None` if every candidate is active.
pub fn select_root(
    candidates: &[Candidate],
    zl: C64,
    previous: Option<&[C64; 4]>,
    opts: &TmtOptions,
) -> Option<usize> {
    let passive: Vec<usize> =
        (0..candidates.len()).filter(|&i| is_passive(&candidates[i].abcd, zl, opts.passivity_margin)).collect();
    let by_step = |&i: &usize, &j: &usize| candidates[i].t.norm().total_cmp(&candidates[j].t.norm());
    match (opts.root_rule, previous) {
        (RootRule::Continuity, Some(prev)) => passive.into_iter().min_by(|i, j| {
            distance(&candidates[*i].abcd, prev).total_cmp(&distance(&candidates[*j].abcd, prev)).then(by_step(i, j))
        }),
        _ => passive.into_iter().min_by(by_step),
    }
}

/// Particular solution and unit null vector of three equations in four
/// unknowns, or `None` if their rank is below three.
fn solve_line(rows: &[[C64; 4]; 3], rhs: &[C64; 3]) -> Option<([C64; 4], [C64; 4])> {
    let zero = C64::new(0.0, 0.0);
    let mut m = Matrix4::<C64>::zeros();
    let mut b = Vector4::<C64>::zeros();
    for i in 0..3 {
        let norm = rows[i].iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        for j in 0..4 {
            m[(i, j)] = rows[i][j] / norm;
        }
        b[i] = rhs[i] / norm;
    }
    let mut col_scale = [1.0; 4];
    for (j, scale) in col_scale.iter_mut().enumerate() {
        let norm = (0..3).map(|i| m[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            *scale = 1.0 / norm;
            for i in 0..3 {
                m[(i, j)] *= *scale;
            }
        }
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    if !(s[order[2]] >= RANK_TOL * s[order[0]]) {
        return None;
    }
    let mut x0 = [zero; 4];
    for &k in &order[..3] {
        let coef = (0..4).map(|i| u[(i, k)].conj() * b[i]).sum::<C64>() / s[k];
        for j in 0..4 {
            x0[j] += v_t[(k, j)].conj() * coef;
        }
    }
    let mut v = [zero; 4];
    for j in 0..4 {
        x0[j] *= col_scale[j];
        v[j] = v_t[(order[3], j)].conj() * col_scale[j];
    }
    let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    Some((x0, v))
}

fn residual(eqs: &[([C64; 4], C64); 3], x: &[C64; 4]) -> f64 {
    let linear = eqs.iter().map(|(row, rhs)| {
        let lhs: C64 = row.iter().zip(x).map(|(r, v)| r * v).sum();
        let scale = row.iter().zip(x).map(|(r, v)| (r * v).norm()).sum::<f64>() + rhs.norm();
        (lhs - rhs).norm() / scale.max(SINGULAR_EPS)
    });
    let [a, b, c, d] = *x;
    let det = (a * d - c * b - 1.0).norm() / 1f64.max((a * d).norm()).max((c * b).norm());
    linear.fold(det, f64::max)
}

/// Solves for the channel matrix from any three observables that pin down a
/// line in `(A, B, C, D)`.
pub fn solve_abcd_from(observables: [Observable<'_>; 3], term: &Termination, opts: &TmtOptions) -> Result<TmtSolution> {
    let grid = *term.grid();
    for o in &observables {
        if o.spectrum().grid() != &grid {
            return Err(SpectralError::GridMismatch.into());
        }
    }
    let n = grid.n_bins();
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let identity = [one, zero, zero, one];
    let mut entries = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut branch = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut previous: Option<[C64; 4]> = None;
    for k in 0..n {
        let (zt, zl) = (term.z_t().values()[k], term.z_l().values()[k]);
        let eqs = observables.map(|o| o.equation(k, zt, zl));
        let rows = eqs.map(|e| e.0);
        let rhs = eqs.map(|e| e.1);
        let outcome = match solve_line(&rows, &rhs) {
            None => Err(BinStatus::Degenerate),
            Some((x0, v)) => {
                let ts: Vec<C64> = match det_roots(&x0, &v, opts.tol) {
                    DetRoots::None => Vec::new(),
                    DetRoots::One(t) => vec![t],
                    DetRoots::Two(t1, t2) => vec![t1, t2],
                };
                let candidates: Vec<Candidate> = ts
                    .iter()
                    .map(|&t| Candidate { t, abcd: [0, 1, 2, 3].map(|j| x0[j] + v[j] * t) })
                    .filter(|c| c.abcd.iter().all(|x| x.is_finite()))
                    .collect();
                if candidates.is_empty() {
                    Err(BinStatus::NoFiniteRoot)
                } else {
                    match select_root(&candidates, zl, previous.as_ref(), opts) {
                        None => Err(BinStatus::BothRootsRejected),
                        Some(i) => Ok((candidates[i].abcd, ts.iter().position(|t| *t == candidates[i].t).unwrap())),
                    }
                }
            }
        };
        match outcome {
            Ok((x, idx)) => {
                residuals.push(residual(&eqs, &x));
                entries.push(x);
                branch.push(idx as u8);
                status.push(BinStatus::Valid);
                previous = Some(x);
            }
            Err(s) => {
                residuals.push(f64::INFINITY);
                entries.push(identity);
                branch.push(0);
                status.push(s);
            }
        }
    }
    if !status.contains(&BinStatus::Valid) {
        return Err(TmtError::NoValidBins);
    }
    let column = |j: usize| Spectrum::new(grid, entries.iter().map(|e| e[j]).collect());
    let abcd = AbcdChannel::from_entries(column(0)?, column(1)?, column(2)?, column(3)?)?;
    let h2_hat = abcd.ctf_reverse(term)?;
    Ok(TmtSolution { abcd, h2_hat, residual: residuals, branch, status })
}

/// Solves from the forward CTF, the port-2 impedance and the public port-1
/// impedance.
pub fn solve_abcd(obs: &TmtObservation, opts: &TmtOptions) -> Result<TmtSolution> {
    solve_abcd_from(
        [Observable::Zin1(&obs.zin1_hat), Observable::H1(&obs.h1_hat), Observable::Zin2(&obs.zin2_hat)],
        &obs.term,
        opts,
    )
}

/// Reverse CTF `Z_L/(Z_L·D + B + Z_L·Z_T·C + Z_T·A)` of the recovered channel.
pub fn recover_h2(sol: &TmtSolution, term: &Termination) -> Result<Spectrum> {
    Ok(sol.abcd.ctf_reverse(term)?)
}

/// Per-bin relative mismatch `|(H2a − H2b)/H2a|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub values: Vec<f64>,
    /// False where the reference is zero.
    pub mask: Vec<bool>,
}

impl Mismatch {
    /// Median over valid bins, in dB (`20·log10`).
    pub fn median_db(&self, extra_mask: Option<&[bool]>) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .filter(|(k, _)| self.mask[*k] && extra_mask.is_none_or(|m| m[*k]))
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(f64::total_cmp);
        let n = vals.len();
        let median = if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) };
        Some(20.0 * median.log10())
    }
}

pub fn delta_mismatch(h2_alice: &Spectrum, h2_bob: &Spectrum) -> Result<Mismatch> {
    h2_alice.ensure_same_grid(h2_bob)?;
    let (values, mask) = h2_alice
        .values()
        .iter()
        .zip(h2_bob.values())
        .map(|(a, b)| if a.norm() < SINGULAR_EPS { (f64::NAN, false) } else { (((a - b) / a).norm(), true) })
        .unzip();
    Ok(Mismatch { values, mask })
}
