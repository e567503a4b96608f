//! Command-line flags. Every flag mirrors a config key and wins over it.

use std::path::PathBuf;

use clap::Parser;

use crate::config::{Command, ConfigError, ExperimentConfig};

#[derive(Parser, Debug, Default)]
#[command(name = "twrn", version, about = "Throughput, delay, power and stability of a network-coded two-way relay")]
pub struct Cli {
    /// What to run; may instead be given as `command = ...` in the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// Config file with `[section]` headers and `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Figure preset, fig8 .. fig19.
    #[arg(long)]
    pub preset: Option<String>,
    /// Verification grid (verify only): `default`.
    #[arg(long)]
    pub grid: Option<String>,
    /// CSV destination; without it the CSV goes to stdout and the summary to stderr.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// nc or nonnc.
    #[arg(long, help_heading = "Parameters")]
    pub mode: Option<String>,
    #[arg(long, help_heading = "Parameters")]
    pub g1: Option<f64>,
    #[arg(long, help_heading = "Parameters")]
    pub g2: Option<f64>,
    /// Imbalance factor, g1 = k * g2.
    #[arg(long, help_heading = "Parameters")]
    pub k: Option<f64>,
    #[arg(long, help_heading = "Parameters")]
    pub q: Option<f64>,
    #[arg(long, help_heading = "Parameters")]
    pub q1: Option<f64>,
    #[arg(long, help_heading = "Parameters")]
    pub q2: Option<f64>,
    /// Arrival rate of end node 1; with lam2 selects unsaturated end nodes.
    #[arg(long, help_heading = "Parameters")]
    pub lam1: Option<f64>,
    #[arg(long, help_heading = "Parameters")]
    pub lam2: Option<f64>,

    /// Swept variable: g1, g2, k, q, q1, q2, lam1, lam2 or lam (both rates).
    #[arg(long, help_heading = "Sweep")]
    pub sweep: Option<String>,
    #[arg(long, help_heading = "Sweep", allow_negative_numbers = true)]
    pub from: Option<f64>,
    #[arg(long, help_heading = "Sweep", allow_negative_numbers = true)]
    pub to: Option<f64>,
    #[arg(long, help_heading = "Sweep")]
    pub step: Option<f64>,

    /// Phase cap of the distributed chains.
    #[arg(long, help_heading = "Solver")]
    pub m: Option<usize>,
    #[arg(long, help_heading = "Solver")]
    pub tol: Option<f64>,
    #[arg(long, help_heading = "Solver")]
    pub max_iter: Option<usize>,
    /// Conditional probability below which a queue counts as saturated.
    #[arg(long, help_heading = "Solver")]
    pub epsilon: Option<f64>,
    #[arg(long, help_heading = "Solver")]
    pub lam1_start: Option<f64>,
    #[arg(long, help_heading = "Solver")]
    pub lam1_stop: Option<f64>,
    #[arg(long, help_heading = "Solver")]
    pub lam1_step: Option<f64>,
    /// Resolution of the lam2 frontier search.
    #[arg(long, help_heading = "Solver")]
    pub lam2_step: Option<f64>,
    /// Per-coordinate cap of the exact truncated chain (verify).
    #[arg(long, help_heading = "Solver")]
    pub cap: Option<usize>,

    #[arg(long, help_heading = "Simulation")]
    pub horizon: Option<u64>,
    #[arg(long, help_heading = "Simulation")]
    pub warmup: Option<u64>,
    /// Base seed; defaults to TWRN_SEED, then 1.
    #[arg(long, help_heading = "Simulation")]
    pub seed: Option<u64>,
    #[arg(long, help_heading = "Simulation")]
    pub replications: Option<usize>,
}

impl Cli {
    /// Flags as `(section, key, value)` assignments.
    pub fn assignments(&self) -> Vec<(&'static str, &'static str, String)> {
        let mut out = Vec::new();
        let mut put = |section, key, v: Option<String>| {
            if let Some(v) = v {
                out.push((section, key, v));
            }
        };
        let s = |v: &Option<f64>| v.map(|v| v.to_string());
        put("", "preset", self.preset.clone());
        put("", "grid", self.grid.clone());
        put("params", "mode", self.mode.clone());
        put("params", "g1", s(&self.g1));
        put("params", "g2", s(&self.g2));
        put("params", "k", s(&self.k));
        put("params", "q", s(&self.q));
        put("params", "q1", s(&self.q1));
        put("params", "q2", s(&self.q2));
        put("params", "lam1", s(&self.lam1));
        put("params", "lam2", s(&self.lam2));
        put("sweep", "var", self.sweep.clone());
        put("sweep", "from", s(&self.from));
        put("sweep", "to", s(&self.to));
        put("sweep", "step", s(&self.step));
        put("solver", "m", self.m.map(|v| v.to_string()));
        put("solver", "tol", s(&self.tol));
        put("solver", "max_iter", self.max_iter.map(|v| v.to_string()));
        put("solver", "epsilon", s(&self.epsilon));
        put("solver", "lam1_start", s(&self.lam1_start));
        put("solver", "lam1_stop", s(&self.lam1_stop));
        put("solver", "lam1_step", s(&self.lam1_step));
        put("solver", "lam2_step", s(&self.lam2_step));
        put("solver", "cap", self.cap.map(|v| v.to_string()));
        put("sim", "horizon", self.horizon.map(|v| v.to_string()));
        put("sim", "warmup", self.warmup.map(|v| v.to_string()));
        put("sim", "seed", self.seed.map(|v| v.to_string()));
        put("sim", "replications", self.replications.map(|v| v.to_string()));
        out
    }

    /// Overlays the flags on `base` (the parsed config file, or empty).
    pub fn apply(&self, mut base: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
        if let Some(c) = self.command {
            base.command = Some(c);
        }
        for (section, key, value) in self.assignments() {
            let flag = format!("--{}", key.replace('_', "-"));
            let flag = if section == "sweep" && key == "var" { "--sweep".to_string() } else { flag };
            base.set(section, key, &value, None).map_err(|e| ConfigError::new(None, flag, e.msg))?;
        }
        if let Some(out) = &self.out {
            base.out = Some(out.clone());
        }
        base.finish()?;
        Ok(base)
    }
}
