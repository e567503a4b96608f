//! Experiment configuration: a line-oriented `key = value` file with
//! `[section]` headers, overlaid by command-line flags.
//!
//! ```text
//! command = analyze
//! preset = fig9
//!
//! [params]
//! mode = nc
//! k = 2
//! q = 0.75
//!
//! [sweep]
//! var = g2
//! from = 0.01
//! to = 0.49
//! step = 0.01
//! ```

use std::fmt;
use std::path::PathBuf;

use twrn_core::{ArrivalRates, Mode, ProtocolParams};

use crate::presets::Preset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Analyze,
    Simulate,
    Stability,
    Verify,
}

impl Command {
    fn parse(s: &str) -> Option<Command> {
        Some(match s {
            "analyze" => Command::Analyze,
            "simulate" => Command::Simulate,
            "stability" => Command::Stability,
            "verify" => Command::Verify,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(line: Option<usize>, field: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError { line, field: field.into(), msg: msg.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if self.field.is_empty() {
            write!(f, "{}", self.msg)
        } else {
            write!(f, "{}: {}", self.field, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Variable a sweep steps through. `Lam` sets both arrival rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVar {
    G1,
    G2,
    K,
    Q,
    Q1,
    Q2,
    Lam1,
    Lam2,
    Lam,
}

impl SweepVar {
    pub fn parse(s: &str) -> Option<SweepVar> {
        Some(match s {
            "g1" => SweepVar::G1,
            "g2" => SweepVar::G2,
            "k" => SweepVar::K,
            "q" => SweepVar::Q,
            "q1" => SweepVar::Q1,
            "q2" => SweepVar::Q2,
            "lam1" => SweepVar::Lam1,
            "lam2" => SweepVar::Lam2,
            "lam" => SweepVar::Lam,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepVar::G1 => "g1",
            SweepVar::G2 => "g2",
            SweepVar::K => "k",
            SweepVar::Q => "q",
            SweepVar::Q1 => "q1",
            SweepVar::Q2 => "q2",
            SweepVar::Lam1 => "lam1",
            SweepVar::Lam2 => "lam2",
            SweepVar::Lam => "lam",
        }
    }

    fn check(self, v: f64) -> Result<(), String> {
        match self {
            SweepVar::K => positive(v),
            SweepVar::Lam1 | SweepVar::Lam2 | SweepVar::Lam => arrival(v),
            _ => prob(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sweep {
    pub var: SweepVar,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Sweep {
    /// `from, from + step, ...` up to `to`, rounded to 1e-9 so that grid
    /// values print cleanly.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.to - self.from) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| ((self.from + i as f64 * self.step) * 1e9).round() / 1e9).collect()
    }
}

/// Protocol and traffic parameters; `None` means "not given here".
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParamBlock {
    pub mode: Option<Mode>,
    pub g1: Option<f64>,
    pub g2: Option<f64>,
    /// Imbalance factor, `g1 = k * g2`; excludes `g1`.
    pub k: Option<f64>,
    pub q: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub lam1: Option<f64>,
    pub lam2: Option<f64>,
}

impl ParamBlock {
    /// Fields of `top` win. Giving `g1` drops an inherited `k` and vice versa.
    pub fn overlay(&self, top: &ParamBlock) -> ParamBlock {
        let mut out = *self;
        if top.g1.is_some() {
            out.k = None;
        }
        if top.k.is_some() {
            out.g1 = None;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if top.$f.is_some() { out.$f = top.$f; } )* };
        }
        take!(mode, g1, g2, k, q, q1, q2, lam1, lam2);
        out
    }

    pub fn set(&mut self, var: SweepVar, v: f64) {
        match var {
            SweepVar::G1 => {
                self.g1 = Some(v);
                self.k = None;
            }
            SweepVar::G2 => self.g2 = Some(v),
            SweepVar::K => {
                self.k = Some(v);
                self.g1 = None;
            }
            SweepVar::Q => self.q = Some(v),
            SweepVar::Q1 => self.q1 = Some(v),
            SweepVar::Q2 => self.q2 = Some(v),
            SweepVar::Lam1 => self.lam1 = Some(v),
            SweepVar::Lam2 => self.lam2 = Some(v),
            SweepVar::Lam => {
                self.lam1 = Some(v);
                self.lam2 = Some(v);
            }
        }
    }

    /// Concrete parameters. `q1`, `q2` default to `q`; arrivals are present
    /// only when both rates are given.
    pub fn resolve(&self) -> Result<(ProtocolParams, Option<ArrivalRates>), ConfigError> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| ConfigError::new(None, format!("params.{name}"), "missing required key"));
        let g2 = need(self.g2, "g2")?;
        let g1 = match (self.g1, self.k) {
            (Some(g1), None) => g1,
            (None, Some(k)) => k * g2,
            (Some(_), Some(_)) => return Err(ConfigError::new(None, "params.g1", "give either g1 or k, not both")),
            (None, None) => return Err(ConfigError::new(None, "params.g1", "missing required key (or give k)")),
        };
        let q = need(self.q, "q")?;
        let bad = |e: twrn_core::ParamError| ConfigError::new(None, "params", e.to_string());
        let params = match self.mode.unwrap_or(Mode::Nc) {
            Mode::Nc => ProtocolParams::nc(g1, g2, q, self.q1.unwrap_or(q), self.q2.unwrap_or(q)),
            Mode::NonNc => {
                for (name, v) in [("q1", self.q1), ("q2", self.q2)] {
                    if v.is_some_and(|v| v != q) {
                        return Err(ConfigError::new(None, format!("params.{name}"), "must equal q in nonnc mode"));
                    }
                }
                ProtocolParams::non_nc(g1, g2, q)
            }
        }
        .map_err(bad)?;
        let arrivals = match (self.lam1, self.lam2) {
            (Some(a), Some(b)) => Some(ArrivalRates::new(a, b).map_err(bad)?),
            (None, None) => None,
            _ => return Err(ConfigError::new(None, "params.lam1", "lam1 and lam2 must be given together")),
        };
        Ok((params, arrivals))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverBlock {
    pub m: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub epsilon: Option<f64>,
    pub lam1_start: Option<f64>,
    pub lam1_stop: Option<f64>,
    pub lam1_step: Option<f64>,
    pub lam2_step: Option<f64>,
    /// Per-coordinate cap of the truncated exact chain.
    pub cap: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimBlock {
    pub horizon: Option<u64>,
    pub warmup: Option<u64>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub preset: Option<Preset>,
    /// Named verification grid; only `default` exists.
    pub grid: Option<String>,
    pub params: ParamBlock,
    pub sweep: Option<Sweep>,
    pub solver: SolverBlock,
    pub sim: SimBlock,
    pub out: Option<PathBuf>,
    sweep_parts: SweepParts,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct SweepParts {
    var: Option<SweepVar>,
    from: Option<f64>,
    to: Option<f64>,
    step: Option<f64>,
    line: Option<usize>,
}

const SECTIONS: [&str; 5] = ["params", "sweep", "solver", "sim", "output"];

fn prob(v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{v} out of [0,1]"))
    }
}

fn arrival(v: f64) -> Result<(), String> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{v} out of [0,1)"))
    }
}

fn positive(v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn open_unit(v: f64) -> Result<(), String> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(format!("{v} out of (0,1)"))
    }
}

fn num<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T, String> {
    raw.parse().map_err(|_| format!("expected {what}, got {raw:?}"))
}

fn float(raw: &str, check: fn(f64) -> Result<(), String>) -> Result<f64, String> {
    let v: f64 = num(raw, "a number")?;
    check(v)?;
    Ok(v)
}

fn at_least<T: std::str::FromStr + PartialOrd + fmt::Display + Copy>(raw: &str, min: T) -> Result<T, String> {
    let v: T = num(raw, "an integer")?;
    if v < min {
        return Err(format!("must be at least {min}"));
    }
    Ok(v)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = Some(i + 1);
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::new(line, "", "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::new(line, name, "unknown section"));
                }
                section = name.to_string();
                if name == "sweep" {
                    cfg.sweep_parts.line = line;
                }
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, "", format!("expected `key = value`, got {body:?}")))?;
            cfg.set(&section, key.trim(), value.trim(), line)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Sets one key. `section` is empty for top-level keys.
    pub fn set(&mut self, section: &str, key: &str, raw: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let field = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        let err = |msg: String| ConfigError::new(line, field.clone(), msg);
        let p = &mut self.params;
        let r: Result<(), String> = match (section, key) {
            ("", "command") => Command::parse(raw).map(|c| self.command = Some(c)).ok_or_else(|| {
                format!("unknown command {raw:?} (analyze, simulate, stability, verify)")
            }),
            ("", "preset") => raw.parse::<Preset>().map(|v| self.preset = Some(v)),
            ("", "grid") => {
                if raw == "default" {
                    self.grid = Some(raw.to_string());
                    Ok(())
                } else {
                    Err(format!("unknown grid {raw:?} (default)"))
                }
            }
            ("params", "mode") => match raw {
                "nc" | "nonnc" => {
                    p.mode = Some(if raw == "nc" { Mode::Nc } else { Mode::NonNc });
                    Ok(())
                }
                _ => Err(format!("expected nc or nonnc, got {raw:?}")),
            },
            ("params", "g1") => float(raw, prob).map(|v| p.set(SweepVar::G1, v)),
            ("params", "g2") => float(raw, prob).map(|v| p.g2 = Some(v)),
            ("params", "k") => float(raw, positive).map(|v| p.set(SweepVar::K, v)),
            ("params", "q") => float(raw, prob).map(|v| p.q = Some(v)),
            ("params", "q1") => float(raw, prob).map(|v| p.q1 = Some(v)),
            ("params", "q2") => float(raw, prob).map(|v| p.q2 = Some(v)),
            ("params", "lam1") => float(raw, arrival).map(|v| p.lam1 = Some(v)),
            ("params", "lam2") => float(raw, arrival).map(|v| p.lam2 = Some(v)),
            ("sweep", "var") => SweepVar::parse(raw)
                .map(|v| self.sweep_parts.var = Some(v))
                .ok_or_else(|| format!("unknown sweep variable {raw:?} (g1, g2, k, q, q1, q2, lam1, lam2, lam)")),
            ("sweep", "from") => num(raw, "a number").map(|v| self.sweep_parts.from = Some(v)),
            ("sweep", "to") => num(raw, "a number").map(|v| self.sweep_parts.to = Some(v)),
            ("sweep", "step") => float(raw, positive).map(|v| self.sweep_parts.step = Some(v)),
            ("solver", "m") => at_least(raw, 2usize).map(|v| self.solver.m = Some(v)),
            ("solver", "tol") => float(raw, positive).map(|v| self.solver.tol = Some(v)),
            ("solver", "max_iter") => at_least(raw, 1usize).map(|v| self.solver.max_iter = Some(v)),
            ("solver", "epsilon") => float(raw, open_unit).map(|v| self.solver.epsilon = Some(v)),
            ("solver", "lam1_start") => float(raw, arrival).map(|v| self.solver.lam1_start = Some(v)),
            ("solver", "lam1_stop") => float(raw, arrival).map(|v| self.solver.lam1_stop = Some(v)),
            ("solver", "lam1_step") => float(raw, open_unit).map(|v| self.solver.lam1_step = Some(v)),
            ("solver", "lam2_step") => float(raw, open_unit).map(|v| self.solver.lam2_step = Some(v)),
            ("solver", "cap") => at_least(raw, 1usize).map(|v| self.solver.cap = Some(v)),
            ("sim", "horizon") => at_least(raw, 1u64).map(|v| self.sim.horizon = Some(v)),
            ("sim", "warmup") => at_least(raw, 0u64).map(|v| self.sim.warmup = Some(v)),
            ("sim", "seed") => num(raw, "an unsigned 64-bit integer").map(|v| self.sim.seed = Some(v)),
            ("sim", "replications") => at_least(raw, 1usize).map(|v| self.sim.replications = Some(v)),
            ("output", "path") => {
                self.out = Some(PathBuf::from(raw));
                Ok(())
            }
            _ => Err("unknown key".to_string()),
        };
        r.map_err(err)
    }

    /// Assembles the sweep once all its keys are known and checks ranges.
    pub fn finish(&mut self) -> Result<(), ConfigError> {
        let s = self.sweep_parts;
        if s.var.is_none() && s.from.is_none() && s.to.is_none() && s.step.is_none() {
            return Ok(());
        }
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| ConfigError::new(s.line, format!("sweep.{key}"), "missing required key"));
        let var = s.var.ok_or_else(|| ConfigError::new(s.line, "sweep.var", "missing required key"))?;
        let sweep = Sweep { var, from: need(s.from, "from")?, to: need(s.to, "to")?, step: need(s.step, "step")? };
        if sweep.from > sweep.to {
            return Err(ConfigError::new(s.line, "sweep", format!("empty range {}..{}", sweep.from, sweep.to)));
        }
        for (key, v) in [("from", sweep.from), ("to", sweep.to)] {
            var.check(v).map_err(|m| ConfigError::new(s.line, format!("sweep.{key}"), m))?;
        }
        self.sweep = Some(sweep);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let c = ExperimentConfig::parse("command = analyze\n[params]\nq = 0.75 # relay\n\n[sweep]\nvar=g2\nfrom=0.1\nto=0.4\nstep=0.15\n").unwrap();
        assert_eq!(c.command, Some(Command::Analyze));
        assert_eq!(c.params.q, Some(0.75));
        assert_eq!(c.sweep.unwrap().values(), vec![0.1, 0.25, 0.4]);
    }

    #[test]
    fn range_error_names_line() {
        let e = ExperimentConfig::parse("[params]\n\nq = 1.5\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert_eq!(e.field, "params.q");
    }

    #[test]
    fn unknown_key_and_section() {
        assert_eq!(ExperimentConfig::parse("[params]\nqq = 1\n").unwrap_err().field, "params.qq");
        assert_eq!(ExperimentConfig::parse("[bogus]\n").unwrap_err().line, Some(1));
        assert!(ExperimentConfig::parse("[sim]\nseed = -3\n").is_err());
    }

    #[test]
    fn incomplete_sweep() {
        let e = ExperimentConfig::parse("[sweep]\nvar = q1\nfrom = 0.2\n").unwrap_err();
        assert_eq!(e.field, "sweep.to");
    }

    #[test]
    fn k_and_g1_exclude_each_other() {
        let base = ParamBlock { k: Some(2.0), g2: Some(0.25), q: Some(0.75), ..Default::default() };
        let (p, a) = base.resolve().unwrap();
        assert_eq!((p.g1, p.q1, a), (0.5, 0.75, None));
        let top = ParamBlock { g1: Some(0.3), ..Default::default() };
        assert_eq!(base.overlay(&top).resolve().unwrap().0.g1, 0.3);
    }
}
