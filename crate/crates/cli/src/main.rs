use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use plc_keygen::experiment::{
    binary_key_string, check_invariants, emit_csv, keygen, run, write_csv, ExperimentConfig, Method, Quantizer,
};
use plc_keygen::topology::Topology;

#[derive(Parser)]
#[command(name = "plc-keygen", version, about = "Secret key generation over simulated power-line channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random network and write it as TOML.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run a single realization and print the three keys.
    Keygen {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run the full ensemble and write a CSV table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on this.
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
    },
    /// Run the invariant suite on consecutive seeds.
    Check {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, starting at --seed (or the configured seed).
        #[arg(long, default_value_t = 10)]
        count: u64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn synth(common: &Common, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let top = Topology::synthesize(cfg.master_seed, &cfg.topology)?;
    write_text(out, &top.to_toml_string()?)
}

fn show_key(key: &[u32], cfg: &ExperimentConfig) -> String {
    let binary = cfg.method == Method::Tdst || cfg.quantizer == Quantizer::BinaryGray;
    if binary {
        binary_key_string(key)
    } else {
        key.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
    }
}

fn keygen_cmd(common: &Common, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let (sc, o) = keygen(&cfg)?;
    let mut text = String::new();
    text.push_str(&format!(
        "outlets: alice {} bob {} eve {}\n",
        sc.roles.alice, sc.roles.bob, sc.roles.eve
    ));
    text.push_str(&format!("alice: {}\n", show_key(&o.keys.alice, &cfg)));
    text.push_str(&format!("bob:   {}\n", show_key(&o.keys.bob, &cfg)));
    text.push_str(&format!("eve:   {}\n", show_key(&o.keys.eve, &cfg)));
    text.push_str(&format!("d(alice,bob) = {}\nd(alice,eve) = {}\n", o.d_ab, o.d_ae));
    text.push_str(&format!("rho(alice,bob) = {:.4}\nrho(alice,eve) = {:.4}\n", o.rho_ab, o.rho_ae));
    if o.delta_median_db.is_finite() {
        text.push_str(&format!("median mismatch = {:.2} dB\n", o.delta_median_db));
    }
    write_text(out, &text)
}

fn sweep(common: &Common, out: Option<&Path>, jobs: Option<usize>) -> Result<()> {
    if jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let cfg = load_config(common)?;
    let target = out.map(Path::to_path_buf).or_else(|| cfg.output.clone());
    let table = run(&cfg, jobs)?;
    match target {
        Some(path) => emit_csv(&table, &cfg, &path).with_context(|| format!("writing {}", path.display()))?,
        None => write_csv(&table, &cfg.to_toml_string()?, std::io::stdout().lock())?,
    }
    Ok(())
}

fn check(common: &Common, count: u64, out: Option<&Path>) -> Result<bool> {
    let cfg = load_config(common)?;
    let mut text = String::new();
    let mut failures = 0usize;
    for seed in cfg.master_seed..cfg.master_seed.saturating_add(count) {
        for c in check_invariants(&cfg, seed)? {
            if !c.passed {
                failures += 1;
            }
            let status = if c.passed { "ok" } else { "FAIL" };
            text.push_str(&format!("seed {} {:<18} {:<4} {}\n", c.seed, c.name, status, c.detail));
        }
    }
    text.push_str(&format!("{failures} failed\n"));
    write_text(out, &text)?;
    Ok(failures == 0)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { common, out } => synth(common, out.as_deref())?,
        Command::Keygen { common, out } => keygen_cmd(common, out.as_deref())?,
        Command::Sweep { common, out, jobs } => sweep(common, out.as_deref(), *jobs)?,
        Command::Check { common, count, out } => {
            if !check(common, *count, out.as_deref())? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
