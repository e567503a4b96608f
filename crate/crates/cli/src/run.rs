//! Turns a configuration into rows, CSV text and a summary table.

use std::fmt::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;
use twrn_core::oracle::{self, DEFAULT_CAP_SATURATED, DEFAULT_CAP_UNSATURATED};
use twrn_core::saturated::{self, SolverOptions};
use twrn_core::sim::{self, SimConfig, DRIFT_THRESHOLD};
use twrn_core::unsaturated::{self, BoundaryOptions, StabilityBoundary, UnsatOptions};
use twrn_core::{Metrics, Provenance, Queue};

use crate::config::{Command, ConfigError, ExperimentConfig, ParamBlock, Sweep};
use crate::csv::{self, Point, Row};
use crate::presets;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("TWRN_SEED must be an unsigned 64-bit integer, got {0:?}")]
    EnvSeed(String),
}

/// Relative tolerances of the verification suite: (S and P, D).
pub const ORACLE_TOL: (f64, f64) = (0.01, 0.03);
pub const SIM_TOL: (f64, f64) = (0.02, 0.05);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimSettings {
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub replications: usize,
}

/// A configuration with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub command: Command,
    pub series: Vec<ParamBlock>,
    pub sweep: Option<Sweep>,
    pub m: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub cap: Option<usize>,
    pub boundary: BoundaryOptions,
    pub sim: SimSettings,
}

/// Parses a `TWRN_SEED` value.
pub fn env_seed(raw: Option<String>) -> Result<Option<u64>, CliError> {
    match raw {
        None => Ok(None),
        Some(s) => s.trim().parse().map(Some).map_err(|_| CliError::EnvSeed(s)),
    }
}

pub fn plan(cfg: &ExperimentConfig, env_seed: Option<u64>) -> Result<Plan, ConfigError> {
    let command = cfg.command.ok_or_else(|| {
        ConfigError::new(None, "command", "missing; give analyze, simulate, stability or verify")
    })?;
    let spec = match (&cfg.grid, cfg.preset) {
        (Some(_), Some(_)) => return Err(ConfigError::new(None, "grid", "give either grid or preset")),
        (Some(_), None) if command != Command::Verify => {
            return Err(ConfigError::new(None, "grid", "only used by verify"))
        }
        (Some(_), None) => Some(presets::default_grid()),
        (None, p) => p.map(|p| p.spec()),
    };
    let series: Vec<ParamBlock> = match &spec {
        Some(s) => s.series.iter().map(|b| b.overlay(&cfg.params)).collect(),
        None => vec![cfg.params],
    };
    let sweep = cfg.sweep.or(spec.as_ref().and_then(|s| s.sweep));
    let default_m = if command == Command::Stability { 6 } else { 4 };
    let m = cfg.solver.m.or(spec.as_ref().and_then(|s| s.m)).unwrap_or(default_m);
    let tol = cfg.solver.tol.unwrap_or(1e-8);
    let max_iter = cfg.solver.max_iter.unwrap_or(500);
    let epsilon = cfg.solver.epsilon.unwrap_or(1e-3);
    let d = BoundaryOptions::default();
    let boundary = BoundaryOptions {
        lam1_start: cfg.solver.lam1_start.unwrap_or(d.lam1_start),
        lam1_stop: cfg.solver.lam1_stop.unwrap_or(d.lam1_stop),
        lam1_step: cfg.solver.lam1_step.unwrap_or(d.lam1_step),
        step: cfg.solver.lam2_step.unwrap_or(d.step),
        epsilon,
        solver: UnsatOptions { m, tol, max_iter, ..UnsatOptions::default() },
        ..d
    };
    let verify = command == Command::Verify;
    let horizon = cfg.sim.horizon.unwrap_or(if verify { 10_000_000 } else { 1_000_000 });
    let sim = SimSettings {
        horizon,
        warmup: cfg.sim.warmup.unwrap_or(horizon / 10),
        seed: cfg.sim.seed.or(env_seed).unwrap_or(1),
        replications: cfg.sim.replications.unwrap_or(if verify { 8 } else { 4 }),
    };
    let plan = Plan { command, series, sweep, m, tol, max_iter, epsilon, cap: cfg.solver.cap, boundary, sim };
    // Resolve everything now so that bad input fails before any work.
    if command == Command::Stability {
        if sweep.is_some() {
            return Err(ConfigError::new(None, "sweep", "not used by stability"));
        }
        for b in &plan.series {
            if b.resolve()?.1.is_some() {
                return Err(ConfigError::new(None, "params.lam1", "stability traces the arrival rates itself"));
            }
        }
    } else {
        for p in plan.points()? {
            if matches!(command, Command::Simulate | Command::Verify) {
                plan.sim_config(&p).validate().map_err(|e| ConfigError::new(None, "sim", e.to_string()))?;
            }
        }
    }
    Ok(plan)
}

impl Plan {
    /// Series in order, each expanded over the sweep.
    pub fn points(&self) -> Result<Vec<Point>, ConfigError> {
        let mut out = Vec::new();
        for b in &self.series {
            let blocks: Vec<ParamBlock> = match self.sweep {
                Some(s) => s
                    .values()
                    .into_iter()
                    .map(|v| {
                        let mut b = *b;
                        b.set(s.var, v);
                        b
                    })
                    .collect(),
                None => vec![*b],
            };
            for b in blocks {
                let (params, arrivals) = b.resolve()?;
                out.push(Point { params, arrivals });
            }
        }
        Ok(out)
    }

    pub fn sim_config(&self, p: &Point) -> SimConfig {
        SimConfig {
            warmup: self.sim.warmup,
            replications: self.sim.replications,
            ..SimConfig::new(p.params, p.arrivals, self.sim.horizon, self.sim.seed)
        }
    }
}

pub fn analyze_point(plan: &Plan, point: &Point) -> Row {
    let mut row = Row::new(*point, Provenance::Analytic);
    row.m = Some(plan.m);
    let result: Result<(Metrics, bool, usize), String> = match point.arrivals {
        None => {
            let opts = SolverOptions { m: plan.m, tol: plan.tol, max_iter: plan.max_iter, ..SolverOptions::default() };
            saturated::fixed_point(&point.params, &opts)
                .and_then(|fp| {
                    let c = twrn_core::model::coefficients(&point.params)?;
                    Ok((saturated::metrics(&fp, &c, &point.params)?, fp.converged, fp.iterations))
                })
                .map_err(|e| e.to_string())
        }
        Some(a) => {
            let opts = UnsatOptions { m: plan.m, tol: plan.tol, max_iter: plan.max_iter, ..UnsatOptions::default() };
            match unsaturated::fixed_point_unsat(&point.params, &a, &opts) {
                Ok(fp) => {
                    row.converged = Some(fp.converged);
                    row.iterations = Some(fp.iterations);
                    unsaturated::metrics_unsat(&fp).map(|m| (m, fp.converged, fp.iterations)).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.to_string()),
            }
        }
    };
    match result {
        Ok((m, converged, iterations)) => {
            row.metrics = Some(m);
            row.converged = Some(converged);
            row.iterations = Some(iterations);
            if !converged {
                row.note = Some("fixed point did not converge".to_string());
            }
        }
        Err(e) => {
            row.converged = Some(false);
            row.note = Some(e);
        }
    }
    row
}

pub fn simulate_point(plan: &Plan, point: &Point) -> Row {
    let cfg = plan.sim_config(point);
    let mut row = Row::new(*point, Provenance::Simulated);
    row.seed = Some(cfg.seed);
    let reps: Result<Vec<_>, _> =
        (0..cfg.replications).into_par_iter().map(|i| sim::simulate_replication(&cfg, i)).collect();
    match reps {
        Ok(reps) => {
            let m = sim::merge(&cfg, &reps);
            row.metrics = Some(m.to_metrics());
            row.slots = Some(m.slots());
            row.ci = Some([m.s.ci, m.p.ci, m.d.ci]);
            if point.arrivals.is_some() {
                let up = sim::drift_verdicts(&m.replications, DRIFT_THRESHOLD);
                let names: Vec<String> =
                    Queue::ALL.iter().filter(|q| up[q.index()]).map(|q| q.to_string()).collect();
                if !names.is_empty() {
                    row.note = Some(format!("upward drift: {}", names.join(", ")));
                }
            }
        }
        Err(e) => row.note = Some(e.to_string()),
    }
    row
}

pub fn oracle_point(plan: &Plan, point: &Point) -> Row {
    let cap = plan.cap.unwrap_or(if point.arrivals.is_some() { DEFAULT_CAP_UNSATURATED } else { DEFAULT_CAP_SATURATED });
    let mut row = Row::new(*point, Provenance::Oracle);
    match oracle::oracle(&point.params, point.arrivals.as_ref(), cap) {
        Ok(m) => {
            row.metrics = Some(m);
            row.converged = Some(true);
        }
        Err(e) => {
            row.converged = Some(false);
            row.note = Some(e.to_string());
        }
    }
    row
}

/// Relative gap of `other` from `reference`.
pub fn rel_gap(reference: f64, other: f64) -> f64 {
    if reference == other {
        0.0
    } else {
        (other - reference).abs() / reference.abs()
    }
}

/// Agreement of one point's three rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Agreement {
    /// Relative gaps of S, P, D against the analytic row.
    pub oracle: Option<[f64; 3]>,
    pub sim: Option<[f64; 3]>,
}

impl Agreement {
    pub fn of(rows: &[Row; 3]) -> Agreement {
        let gaps = |r: &Row| -> Option<[f64; 3]> {
            let a = rows[0].metrics?;
            let o = r.metrics?;
            Some([rel_gap(a.s, o.s), rel_gap(a.p, o.p), rel_gap(a.d, o.d)])
        };
        Agreement { oracle: gaps(&rows[1]), sim: gaps(&rows[2]) }
    }

    pub fn passes(&self) -> bool {
        let ok = |g: Option<[f64; 3]>, (sp, d): (f64, f64)| g.is_some_and(|g| g[0] <= sp && g[1] <= sp && g[2] <= d);
        ok(self.oracle, ORACLE_TOL) && ok(self.sim, SIM_TOL)
    }
}

pub struct Outcome {
    pub csv: String,
    pub summary: String,
    /// 0 on full success, 2 when any point failed.
    pub exit: u8,
}

pub fn execute(plan: &Plan) -> Result<Outcome, ConfigError> {
    match plan.command {
        Command::Analyze | Command::Simulate => {
            let points = plan.points()?;
            let rows: Vec<Row> = points
                .par_iter()
                .map(|p| if plan.command == Command::Analyze { analyze_point(plan, p) } else { simulate_point(plan, p) })
                .collect();
            let failed = rows.iter().any(Row::failed);
            Ok(Outcome { csv: csv::rows_csv(&rows), summary: rows_summary(&rows), exit: if failed { 2 } else { 0 } })
        }
        Command::Verify => {
            let points = plan.points()?;
            let triples: Vec<[Row; 3]> = points
                .par_iter()
                .map(|p| [analyze_point(plan, p), oracle_point(plan, p), simulate_point(plan, p)])
                .collect();
            let agreements: Vec<Agreement> = triples.iter().map(Agreement::of).collect();
            let rows: Vec<Row> = triples.iter().flatten().cloned().collect();
            let failed = rows.iter().any(Row::failed) || agreements.iter().any(|a| !a.passes());
            Ok(Outcome {
                csv: csv::rows_csv(&rows),
                summary: verify_summary(&triples, &agreements),
                exit: if failed { 2 } else { 0 },
            })
        }
        Command::Stability => {
            let results: Vec<Result<StabilityBoundary, String>> = plan
                .series
                .par_iter()
                .map(|b| {
                    let (params, _) = b.resolve().map_err(|e| e.to_string())?;
                    unsaturated::stability_boundary(&params, &plan.boundary).map_err(|e| e.to_string())
                })
                .collect();
            let ok: Vec<StabilityBoundary> = results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
            let failed = results.iter().any(|r| r.is_err());
            Ok(Outcome {
                csv: csv::stability_csv(&ok),
                summary: stability_summary(&plan.series, &results),
                exit: if failed { 2 } else { 0 },
            })
        }
    }
}

/// Parses, plans and executes.
pub fn run(cfg: &ExperimentConfig, env_seed: Option<u64>) -> Result<Outcome, ConfigError> {
    execute(&plan(cfg, env_seed)?)
}

fn f4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "inf".to_string()
    }
}

fn lam(p: &Point) -> (String, String) {
    match p.arrivals {
        Some(a) => (f4(a.lam1), f4(a.lam2)),
        None => ("-".to_string(), "-".to_string()),
    }
}

fn rows_summary(rows: &[Row]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:<9} {:>8} {:>8} {:>9} {:>10}  status",
        "mode", "g1", "g2", "q", "q1", "q2", "lam1", "lam2", "source", "S", "P", "N_R", "D"
    );
    for r in rows {
        let p = &r.point.params;
        let (l1, l2) = lam(&r.point);
        let (s, pw, n, d) = match &r.metrics {
            Some(m) => (f4(m.s), f4(m.p), f4(m.n_r), f4(m.d)),
            None => ("-".into(), "-".into(), "-".into(), "-".into()),
        };
        let status = match (&r.note, r.failed()) {
            (Some(n), _) => n.clone(),
            (None, true) => "failed".to_string(),
            (None, false) => "ok".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:<9} {:>8} {:>8} {:>9} {:>10}  {}",
            p.mode.to_string(),
            f4(p.g1),
            f4(p.g2),
            f4(p.q),
            f4(p.q1),
            f4(p.q2),
            l1,
            l2,
            r.provenance.to_string(),
            s,
            pw,
            n,
            d,
            status
        );
    }
    out
}

fn pct(g: Option<[f64; 3]>) -> String {
    match g {
        Some(g) => format!("{:>6.2}% {:>6.2}% {:>6.2}%", g[0] * 100.0, g[1] * 100.0, g[2] * 100.0),
        None => format!("{:>7} {:>7} {:>7}", "-", "-", "-"),
    }
}

fn verify_summary(triples: &[[Row; 3]], agreements: &[Agreement]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7} {:>7}  {:^23}  {:^23}  verdict",
        "mode", "g1", "g2", "q", "q1", "q2", "lam1", "lam2", "oracle dS dP dD", "sim dS dP dD"
    );
    let mut passed = 0;
    for (t, a) in triples.iter().zip(agreements) {
        let p = &t[0].point.params;
        let (l1, l2) = lam(&t[0].point);
        let verdict = if a.passes() {
            passed += 1;
            "PASS"
        } else {
            "FAIL"
        };
        let _ = writeln!(
            out,
            "{:<6} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>7} {:>7}  {}  {}  {}",
            p.mode.to_string(),
            p.g1,
            p.g2,
            p.q,
            p.q1,
            p.q2,
            l1,
            l2,
            pct(a.oracle),
            pct(a.sim),
            verdict
        );
        for r in t {
            if let Some(n) = &r.note {
                let _ = writeln!(out, "    {}: {}", r.provenance, n);
            }
        }
    }
    let _ = writeln!(
        out,
        "{passed}/{} points within tolerance (oracle {}%/{}%, sim {}%/{}% on S,P/D)",
        triples.len(),
        ORACLE_TOL.0 * 100.0,
        ORACLE_TOL.1 * 100.0,
        SIM_TOL.0 * 100.0,
        SIM_TOL.1 * 100.0
    );
    out
}

fn stability_summary(series: &[ParamBlock], results: &[Result<StabilityBoundary, String>]) -> String {
    let mut out = String::new();
    for (b, r) in series.iter().zip(results) {
        let label = match b.resolve() {
            Ok((p, _)) => format!("{} q={} q1={} q2={} g1={} g2={}", p.mode, p.q, p.q1, p.q2, p.g1, p.g2),
            Err(e) => e.to_string(),
        };
        match r {
            Ok(sb) => {
                let _ = write!(out, "{label}: {} frontier points", sb.points.len());
                if let (Some(first), Some(last)) = (sb.points.first(), sb.points.last()) {
                    let _ = write!(out, ", lam1 {}..{}, lam2 {}..{}", first.0, last.0, first.1, last.1);
                }
                if !sb.nonmonotone.is_empty() {
                    let _ = write!(out, ", frontier rises at {} points", sb.nonmonotone.len());
                }
                out.push('\n');
            }
            Err(e) => {
                let _ = writeln!(out, "{label}: failed: {e}");
            }
        }
    }
    out
}
