//! Monte-Carlo experiments over random networks.
//!
//! Each realization draws a network, places Alice, Bob and Eve on three
//! distinct outlets, sounds the Alice–Bob and Alice–Eve links and derives a
//! key for every party. Alice keys on the reverse CTF she measures from Bob's
//! pilots; Bob keys on the forward CTF (time-domain technique) or on the
//! reverse CTF he reconstructs (transmission-matrix technique). Eve runs
//! Bob's procedure on her own link with Alice.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, key_correlation, key_entropy, MetricsError};
use crate::quantize::{self, CodedConfig, QuantizeError, SymbolKey};
use crate::sounding::NoisySounder;
use crate::spectral::{
    asymmetry_metric, normalize_transadmittance, normalize_transimpedance, transadmittance_sounding,
    transimpedance_sounding, AbcdChannel, FrequencyGrid, SpectralError, Spectrum, Termination,
};
use crate::tdst::{peak_support_coincidence, tdst_key, BinaryKey, TdstConfig, TdstError};
use crate::tmt::{delta_mismatch, solve_abcd, TmtError, TmtObservation, TmtOptions};
use crate::topology::{Load, PortPair, Topology, TopologyError, TopologyParams};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("realization {realization}: {source}")]
    Realization { realization: usize, source: Box<ExperimentError> },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Tdst(#[from] TdstError),
    #[error(transparent)]
    Tmt(#[from] TmtError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Tdst,
    Tmt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantizer {
    BinaryGray,
    #[default]
    Coded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    #[default]
    M,
    NBlocks,
    PadFactor,
    Gamma,
    Epsilon,
    Nbits,
    KeyLength,
    ZT,
    ZL,
    SnrDb,
    NAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { variable: SweepVariable::M, values: vec![5.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub f_start: f64,
    pub f_step: f64,
    pub n_bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { f_start: 0.1e6, f_step: 0.1e6, n_bins: 800 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SounderConfig {
    pub snr_h_db: f64,
    pub snr_z_db: f64,
    pub n_avg: usize,
}

impl Default for SounderConfig {
    fn default() -> Self {
        Self { snr_h_db: 30.0, snr_z_db: 30.0, n_avg: 10 }
    }
}

/// Resistive device impedances: every modem transmits through `z_t` and
/// presents `z_l` while receiving or idle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationConfig {
    pub z_t: f64,
    pub z_l: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self { z_t: 1.0, z_l: 1e4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmtConfig {
    /// Number of frequency bins, evenly spread over the band, entering the key.
    pub key_length: usize,
    pub coded: CodedConfig,
    pub solver: TmtOptions,
}

impl Default for TmtConfig {
    fn default() -> Self {
        Self { key_length: 200, coded: CodedConfig::default(), solver: TmtOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub quantizer: Quantizer,
    pub nbits: u32,
    pub n_realizations: usize,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub grid: GridConfig,
    pub termination: TerminationConfig,
    pub sounder: SounderConfig,
    pub topology: TopologyParams,
    pub tdst: TdstConfig,
    pub tmt: TmtConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Tdst,
            quantizer: Quantizer::Coded,
            nbits: 8,
            n_realizations: 200,
            master_seed: 0,
            output: None,
            grid: GridConfig::default(),
            termination: TerminationConfig::default(),
            sounder: SounderConfig::default(),
            topology: TopologyParams::default(),
            tdst: TdstConfig::default(),
            tmt: TmtConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn frequency_grid(&self) -> Result<FrequencyGrid> {
        Ok(FrequencyGrid::new(self.grid.f_start, self.grid.f_step, self.grid.n_bins)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.n_realizations == 0 {
            return bad("n_realizations must be at least 1");
        }
        if self.sweep.values.is_empty() {
            return bad("sweep.values must not be empty");
        }
        self.frequency_grid()?;
        self.topology.validate()?;
        if self.topology.n_outlets < 3 {
            return bad("three parties need at least three outlets");
        }
        if !(self.termination.z_t > 0.0 && self.termination.z_l > 0.0) {
            return bad("terminations must be positive resistances");
        }
        if self.sounder.n_avg == 0 {
            return bad("sounder.n_avg must be at least 1");
        }
        if !(1..=quantize::MAX_BITS).contains(&self.nbits) {
            return bad("nbits must be between 1 and 16");
        }
        if self.tmt.key_length == 0 || self.tmt.key_length > self.grid.n_bins {
            return bad("tmt.key_length must be between 1 and grid.n_bins");
        }
        self.tdst.validate()?;
        for v in &self.sweep.values {
            self.with_sweep_value(*v)?;
        }
        Ok(())
    }

    /// Copy of the configuration with the sweep variable set to `value`.
    pub fn with_sweep_value(&self, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(ExperimentError::Config(format!("{:?} needs a whole number, got {v}", self.sweep.variable)))
            }
        };
        match self.sweep.variable {
            SweepVariable::M => cfg.tdst.m = count(value)?,
            SweepVariable::NBlocks => cfg.tdst.n_blocks = count(value)?,
            SweepVariable::PadFactor => cfg.tdst.pad_factor = count(value)?,
            SweepVariable::Gamma => cfg.tdst.gamma = value,
            SweepVariable::Epsilon => cfg.tdst.epsilon = count(value)?,
            SweepVariable::Nbits => cfg.nbits = count(value)? as u32,
            SweepVariable::KeyLength => cfg.tmt.key_length = count(value)?,
            SweepVariable::ZT => cfg.termination.z_t = value,
            SweepVariable::ZL => cfg.termination.z_l = value,
            SweepVariable::SnrDb => {
                cfg.sounder.snr_h_db = value;
                cfg.sounder.snr_z_db = value;
            }
            SweepVariable::NAvg => cfg.sounder.n_avg = count(value)?,
        }
        cfg.sweep.values = vec![value];
        Ok(cfg)
    }
}

/// SplitMix64 finalizer applied to `parent` advanced by `index + 1` steps.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    let mut z = parent.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of realization `r`. It does not depend on the sweep value, so every
/// point of a sweep sees the same networks and noise.
pub fn realization_seed(master_seed: u64, realization: usize) -> u64 {
    derive_seed(master_seed, realization as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roles {
    pub alice: usize,
    pub bob: usize,
    pub eve: usize,
}

/// One network with the three parties placed on it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub roles: Roles,
    /// Alice at port 1, Bob at port 2.
    pub ab: AbcdChannel,
    /// Alice at port 1, Eve at port 2.
    pub ae: AbcdChannel,
    pub term: Termination,
    pub noise_seed: u64,
}

pub fn scenario(cfg: &ExperimentConfig, realization: usize) -> Result<Scenario> {
    let grid = cfg.frequency_grid()?;
    let seed = realization_seed(cfg.master_seed, realization);
    let drawn = Topology::synthesize(derive_seed(seed, 0), &cfg.topology)?;
    let outlets = drawn.outlets();
    if outlets.len() < 3 {
        return Err(ExperimentError::Config("network has fewer than three outlets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let picked = sample(&mut rng, outlets.len(), 3);
    let roles = Roles { alice: outlets[picked.index(0)], bob: outlets[picked.index(1)], eve: outlets[picked.index(2)] };
    let idle = Load::Resistive { r: cfg.termination.z_l };
    let mut topology = drawn;
    for party in [roles.alice, roles.bob, roles.eve] {
        topology = topology.with_load(party, idle)?;
    }
    let ab = topology.extract_two_port(&grid, PortPair::new(&topology, roles.alice, roles.bob)?)?;
    let ae = topology.extract_two_port(&grid, PortPair::new(&topology, roles.alice, roles.eve)?)?;
    let term = Termination::resistive(grid, cfg.termination.z_t, cfg.termination.z_l)?;
    Ok(Scenario { topology, roles, ab, ae, term, noise_seed: derive_seed(seed, 2) })
}

/// Noise stream of each estimated quantity.
mod stream {
    pub const H2_ALICE: u64 = 0;
    pub const H1_BOB: u64 = 1;
    pub const H1_EVE: u64 = 2;
    pub const ZIN1_ALICE: u64 = 3;
    pub const ZIN2_BOB: u64 = 4;
    pub const ZIN2_EVE: u64 = 5;
}

/// Channel estimates of the three parties.
#[derive(Debug, Clone)]
pub struct Observations {
    pub h2_alice: Spectrum,
    pub h1_bob: Spectrum,
    pub h1_eve: Spectrum,
    pub zin1_alice: Spectrum,
    pub zin2_bob: Spectrum,
    pub zin2_eve: Spectrum,
}

pub fn observe(sc: &Scenario, sounder: &SounderConfig) -> Result<Observations> {
    let s = NoisySounder {
        snr_h_db: sounder.snr_h_db,
        snr_z_db: sounder.snr_z_db,
        n_avg: sounder.n_avg,
        seed: sc.noise_seed,
    };
    let zl = sc.term.z_l();
    Ok(Observations {
        h2_alice: s.observe_ctf(&sc.ab.ctf_reverse(&sc.term)?, stream::H2_ALICE)?,
        h1_bob: s.observe_ctf(&sc.ab.ctf_forward(&sc.term)?, stream::H1_BOB)?,
        h1_eve: s.observe_ctf(&sc.ae.ctf_forward(&sc.term)?, stream::H1_EVE)?,
        zin1_alice: s.observe_impedance(&sc.ab.zin_port1(zl)?, stream::ZIN1_ALICE)?,
        zin2_bob: s.observe_impedance(&sc.ab.zin_port2(zl)?, stream::ZIN2_BOB)?,
        zin2_eve: s.observe_impedance(&sc.ae.zin_port2(zl)?, stream::ZIN2_EVE)?,
    })
}

/// Keys of the three parties as symbol sequences of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyKeys {
    pub alice: Vec<u32>,
    pub bob: Vec<u32>,
    pub eve: Vec<u32>,
}

/// Result of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub d_ab: f64,
    pub d_ae: f64,
    pub rho_ab: f64,
    pub rho_ae: f64,
    /// Median reconstruction mismatch between Alice and Bob, dB; NaN for
    /// the time-domain technique.
    pub delta_median_db: f64,
    /// Asymmetry of the true Alice–Bob link.
    pub asym_ab: f64,
    pub keys: PartyKeys,
    /// Alice's key before arrangement, used for entropy estimates.
    pub alice_symbols: Vec<u32>,
}

fn correlation_or_nan(a: &[u32], b: &[u32]) -> f64 {
    key_correlation(a, b).unwrap_or(f64::NAN)
}

fn tdst_keys(cfg: &ExperimentConfig, obs: &Observations) -> Result<PartyKeys> {
    let key = |h: &Spectrum| -> Result<Vec<u32>> { Ok(tdst_key(h, &cfg.tdst)?.as_symbols()) };
    Ok(PartyKeys { alice: key(&obs.h2_alice)?, bob: key(&obs.h1_bob)?, eve: key(&obs.h1_eve)? })
}

/// Bin indices of an `n`-symbol key spread evenly over `n_bins`.
pub fn key_bins(n_bins: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| (2 * i + 1) * n_bins / (2 * n)).collect()
}

struct TmtKeys {
    keys: PartyKeys,
    alice_symbols: Vec<u32>,
    delta_median_db: f64,
}

fn tmt_keys(cfg: &ExperimentConfig, sc: &Scenario, obs: &Observations) -> Result<TmtKeys> {
    let bob = solve_abcd(
        &TmtObservation {
            h1_hat: obs.h1_bob.clone(),
            zin1_hat: obs.zin1_alice.clone(),
            zin2_hat: obs.zin2_bob.clone(),
            term: sc.term.clone(),
        },
        &cfg.tmt.solver,
    )?;
    let eve = solve_abcd(
        &TmtObservation {
            h1_hat: obs.h1_eve.clone(),
            zin1_hat: obs.zin1_alice.clone(),
            zin2_hat: obs.zin2_eve.clone(),
            term: sc.term.clone(),
        },
        &cfg.tmt.solver,
    )?;
    let bob_mask = bob.mask();
    let eve_mask = eve.mask();
    let delta_median_db = delta_mismatch(&obs.h2_alice, &bob.h2_hat)?.median_db(Some(&bob_mask)).unwrap_or(f64::NAN);

    let bins = key_bins(cfg.grid.n_bins, cfg.tmt.key_length);
    let pick = |h: &Spectrum| bins.iter().map(|&k| h.values()[k].norm()).collect::<Vec<f64>>();
    // Bob's mask is published; Eve keys on the public positions and zero-fills
    // the bins her own solve lost.
    let public: Vec<bool> = bins.iter().map(|&k| bob_mask[k]).collect();
    let eve_valid: Vec<bool> = bins.iter().zip(&public).map(|(&k, p)| *p && eve_mask[k]).collect();
    let levels = |mags: &[f64], mask: &[bool]| -> Result<(SymbolKey, f64)> {
        let mut key = quantize::quantize_magnitudes(mags, cfg.nbits, Some(mask))?;
        let lsb = quantize::lsb_of_magnitudes(mags, cfg.nbits, Some(mask))?;
        key.mask = public.clone();
        Ok((key, lsb))
    };
    let (ka, lsb_a) = levels(&pick(&obs.h2_alice), &public)?;
    let (kb, lsb_b) = levels(&pick(&bob.h2_hat), &public)?;
    let (ke, lsb_e) = match levels(&pick(&eve.h2_hat), &eve_valid) {
        Ok(v) => v,
        Err(ExperimentError::Quantize(QuantizeError::AllMasked)) => {
            (SymbolKey { symbols: vec![0; bins.len()], nbits: cfg.nbits, mask: public.clone() }, f64::MIN_POSITIVE)
        }
        Err(e) => return Err(e),
    };
    let arrange = |k: &SymbolKey, lsb: f64| -> Result<Vec<u32>> {
        Ok(match cfg.quantizer {
            Quantizer::BinaryGray => quantize::gray_encode(k).as_symbols(),
            Quantizer::Coded => quantize::coded_arrange(k, lsb, &cfg.tmt.coded)?.valid_symbols(),
        })
    };
    Ok(TmtKeys {
        keys: PartyKeys { alice: arrange(&ka, lsb_a)?, bob: arrange(&kb, lsb_b)?, eve: arrange(&ke, lsb_e)? },
        alice_symbols: ka.symbols,
        delta_median_db,
    })
}

/// Runs one realization of a configuration whose sweep variable has already
/// been applied.
pub fn run_realization(cfg: &ExperimentConfig, realization: usize) -> Result<Outcome> {
    let inner = || -> Result<Outcome> {
        let sc = scenario(cfg, realization)?;
        let obs = observe(&sc, &cfg.sounder)?;
        let asym_ab = asymmetry_metric(&sc.ab.ctf_forward(&sc.term)?, &sc.ab.ctf_reverse(&sc.term)?)?;
        let (keys, alice_symbols, delta_median_db) = match cfg.method {
            Method::Tdst => {
                let keys = tdst_keys(cfg, &obs)?;
                let alice = keys.alice.clone();
                (keys, alice, f64::NAN)
            }
            Method::Tmt => {
                let t = tmt_keys(cfg, &sc, &obs)?;
                (t.keys, t.alice_symbols, t.delta_median_db)
            }
        };
        Ok(Outcome {
            d_ab: metrics::key_distance(&keys.alice, &keys.bob)?,
            d_ae: metrics::key_distance(&keys.alice, &keys.eve)?,
            rho_ab: correlation_or_nan(&keys.alice, &keys.bob),
            rho_ae: correlation_or_nan(&keys.alice, &keys.eve),
            delta_median_db,
            asym_ab,
            keys,
            alice_symbols,
        })
    };
    inner().map_err(|e| ExperimentError::Realization { realization, source: Box::new(e) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub sweep: f64,
    pub realization: usize,
    pub d_ab: f64,
    pub d_ae: f64,
    pub rho_ab: f64,
    pub rho_ae: f64,
    pub delta_median_db: f64,
    pub asym_ab: f64,
}

/// Column statistics over the realizations of one sweep value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub d_ab: f64,
    pub d_ae: f64,
    pub rho_ab: f64,
    pub rho_ae: f64,
    pub delta_median_db: f64,
    pub asym_ab: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub sweep: f64,
    pub mean: Stats,
    pub median: Stats,
    /// Entropy of Alice's keys across the ensemble, bits per symbol.
    pub key_entropy: f64,
}

impl Aggregate {
    /// `mean d(A,E) / mean d(A,B)`.
    pub fn distance_ratio(&self) -> f64 {
        self.mean.d_ae / self.mean.d_ab
    }

    /// `mean ρ(A,B) / mean ρ(A,E)`.
    pub fn correlation_ratio(&self) -> f64 {
        self.mean.rho_ab / self.mean.rho_ae
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
}

fn finite(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values.filter(|v| !v.is_nan()).collect()
}

pub fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v = finite(values);
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v = finite(values);
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn stats(rows: &[Row], reduce: fn(Box<dyn Iterator<Item = f64> + '_>) -> f64) -> Stats {
    Stats {
        d_ab: reduce(Box::new(rows.iter().map(|r| r.d_ab))),
        d_ae: reduce(Box::new(rows.iter().map(|r| r.d_ae))),
        rho_ab: reduce(Box::new(rows.iter().map(|r| r.rho_ab))),
        rho_ae: reduce(Box::new(rows.iter().map(|r| r.rho_ae))),
        delta_median_db: reduce(Box::new(rows.iter().map(|r| r.delta_median_db))),
        asym_ab: reduce(Box::new(rows.iter().map(|r| r.asym_ab))),
    }
}

/// Runs every sweep value over every realization. `jobs` bounds the worker
/// threads; rows come out in `(sweep, realization)` order either way.
pub fn run(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ResultTable> {
    cfg.validate()?;
    let configs = cfg.sweep.values.iter().map(|v| cfg.with_sweep_value(*v)).collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> =
        (0..configs.len()).flat_map(|s| (0..cfg.n_realizations).map(move |r| (s, r))).collect();
    let work = || -> Result<Vec<Outcome>> {
        tasks.par_iter().map(|&(s, r)| run_realization(&configs[s], r)).collect()
    };
    let outcomes = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ExperimentError::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut table = ResultTable::default();
    for (s, chunk) in outcomes.chunks(cfg.n_realizations).enumerate() {
        let sweep = cfg.sweep.values[s];
        let rows: Vec<Row> = chunk
            .iter()
            .enumerate()
            .map(|(r, o)| Row {
                sweep,
                realization: r,
                d_ab: o.d_ab,
                d_ae: o.d_ae,
                rho_ab: o.rho_ab,
                rho_ae: o.rho_ae,
                delta_median_db: o.delta_median_db,
                asym_ab: o.asym_ab,
            })
            .collect();
        let alice_keys: Vec<Vec<u32>> = chunk.iter().map(|o| o.alice_symbols.clone()).collect();
        table.aggregates.push(Aggregate {
            sweep,
            mean: stats(&rows, |it| mean(it)),
            median: stats(&rows, |it| median(it)),
            key_entropy: key_entropy(&alice_keys).unwrap_or(f64::NAN),
        });
        table.rows.extend(rows);
    }
    Ok(table)
}

pub const CSV_COLUMNS: [&str; 9] =
    ["sweep", "realization", "d_ab", "d_ae", "rho_ab", "rho_ae", "delta_median_db", "key_entropy", "asym_ab"];

/// Shortest text that parses back to the same double; empty for NaN.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes the table: `preamble` lines as `#` comments, the header, then the
/// realization rows of each sweep value followed by its `mean`, `median` and
/// `ratio` rows.
pub fn write_csv<W: Write>(table: &ResultTable, preamble: &str, out: W) -> Result<()> {
    let mut out = out;
    for line in preamble.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    let f = format_float;
    let stat_record = |sweep: f64, label: &str, s: &Stats, entropy: f64| {
        vec![
            f(sweep),
            label.to_string(),
            f(s.d_ab),
            f(s.d_ae),
            f(s.rho_ab),
            f(s.rho_ae),
            f(s.delta_median_db),
            f(entropy),
            f(s.asym_ab),
        ]
    };
    let mut rows = table.rows.iter().peekable();
    for agg in &table.aggregates {
        while let Some(r) = rows.next_if(|r| r.sweep.to_bits() == agg.sweep.to_bits()) {
            w.write_record([
                f(r.sweep),
                r.realization.to_string(),
                f(r.d_ab),
                f(r.d_ae),
                f(r.rho_ab),
                f(r.rho_ae),
                f(r.delta_median_db),
                String::new(),
                f(r.asym_ab),
            ])?;
        }
        w.write_record(stat_record(agg.sweep, "mean", &agg.mean, agg.key_entropy))?;
        w.write_record(stat_record(agg.sweep, "median", &agg.median, f64::NAN))?;
        let mut ratio = vec![String::new(); CSV_COLUMNS.len()];
        ratio[0] = f(agg.sweep);
        ratio[1] = "ratio".into();
        ratio[3] = f(agg.distance_ratio());
        ratio[4] = f(agg.correlation_ratio());
        w.write_record(&ratio)?;
    }
    for r in rows {
        w.write_record([
            f(r.sweep),
            r.realization.to_string(),
            f(r.d_ab),
            f(r.d_ae),
            f(r.rho_ab),
            f(r.rho_ae),
            f(r.delta_median_db),
            String::new(),
            f(r.asym_ab),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the table to `path`, with the full configuration echoed as comments.
pub fn emit_csv(table: &ResultTable, cfg: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(table, &cfg.to_toml_string()?, file)
}

/// One invariant evaluated on one network.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub detail: String,
}

fn max_rel(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    Ok(a.max_relative_difference(b)?)
}

/// Noiseless invariant suite on the Alice–Bob link of the network drawn with
/// master seed `seed`.
pub fn check_invariants(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut c = cfg.clone();
    c.master_seed = seed;
    let sc = scenario(&c, 0)?;
    let grid = *sc.ab.grid();
    let mut out = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        out.push(CheckOutcome { name, seed, passed, detail });
    };

    let rec = sc.ab.reciprocity_error();
    push("reciprocity", rec <= 1e-9, format!("max |AD-CB-1| = {rec:e}"));

    let matched = Termination::resistive(grid, cfg.termination.z_l, cfg.termination.z_l)?;
    let sym = max_rel(&sc.ab.ctf_forward(&matched)?, &sc.ab.ctf_reverse(&matched)?)?;
    push("symmetry", sym <= 1e-12, format!("max rel |H1-H2| = {sym:e}"));

    let norm_term = Termination::resistive(grid, 1.0, 1e4)?;
    let zin1 = sc.ab.zin_port1(norm_term.z_l())?;
    let zin2 = sc.ab.zin_port2(norm_term.z_l())?;
    let s = transimpedance_sounding(&sc.ab, &norm_term, Complex64::new(1.0, 0.0))?;
    let (z21, z12) = normalize_transimpedance(&s.i1g, &s.v2, &s.i2g, &s.v1, &zin1, &zin2, &norm_term)?;
    let s = transadmittance_sounding(&sc.ab, &norm_term, Complex64::new(1.0, 0.0))?;
    let (y21, y12) = normalize_transadmittance(&s.v1g, &s.i2, &s.v2g, &s.i1, &zin1, &zin2, &norm_term)?;
    let (ez, ey) = (max_rel(&z21, &z12)?, max_rel(&y21, &y12)?);
    push("normalization", ez <= 1e-9 && ey <= 1e-9, format!("Z: {ez:e}, Y: {ey:e}"));

    let obs = TmtObservation {
        h1_hat: sc.ab.ctf_forward(&sc.term)?,
        zin1_hat: sc.ab.zin_port1(sc.term.z_l())?,
        zin2_hat: sc.ab.zin_port2(sc.term.z_l())?,
        term: sc.term.clone(),
    };
    match solve_abcd(&obs, &cfg.tmt.solver) {
        Ok(sol) => {
            let err = max_rel(&sol.h2_hat, &sc.ab.ctf_reverse(&sc.term)?)?;
            let valid = sol.n_valid() == grid.n_bins();
            push("tmt_round_trip", valid && err <= 1e-6, format!("max rel H2 error = {err:e}, valid bins {}", sol.n_valid()));
        }
        Err(e) => push("tmt_round_trip", false, e.to_string()),
    }

    let h1 = sc.ab.ctf_forward(&sc.term)?;
    let h2 = sc.ab.ctf_reverse(&sc.term)?;
    let tdst_cfg = TdstConfig { m: 5, pad_factor: 4, ..cfg.tdst };
    let coincidence = peak_support_coincidence(&h1, &h2, &tdst_cfg, 1)?;
    push("peak_coincidence", coincidence == 1.0, format!("top-5 coincidence = {coincidence}"));

    let keys_equal = tdst_key(&sc.ab.ctf_forward(&matched)?, &cfg.tdst)? == tdst_key(&sc.ab.ctf_reverse(&matched)?, &cfg.tdst)?;
    push("tdst_matched_keys", keys_equal, format!("keys equal: {keys_equal}"));
    Ok(out)
}

/// Keys and distances of a single realization, for display.
pub fn keygen(cfg: &ExperimentConfig) -> Result<(Scenario, Outcome)> {
    cfg.validate()?;
    let c = cfg.with_sweep_value(cfg.sweep.values[0])?;
    Ok((scenario(&c, 0)?, run_realization(&c, 0)?))
}

pub fn binary_key_string(key: &[u32]) -> String {
    BinaryKey::from_bits(key.iter().map(|b| *b != 0)).to_string()
}
