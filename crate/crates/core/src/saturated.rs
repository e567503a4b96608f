//! Saturated end nodes: two coupled distributed chains, one per virtual
//! buffer, iterated on their conditional probabilities until they agree.

use alloc::vec::Vec;

use crate::chain::{conditional_probability, phase_masses, ClippedChain};
use crate::error::{AnalysisError, QbdError};
use crate::metrics::{little_delay, Metrics, OccupancySplit, Provenance};
use crate::model::{coefficients, CoefficientSet, Mode, ProtocolParams, Queue};
use crate::qbd::{self, QbdBlocks, QbdSolution, RateOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Phase cap of every clipped coordinate.
    pub m: usize,
    /// Stopping threshold on the max change of the conditional probabilities.
    pub tol: f64,
    pub max_iter: usize,
    pub r_init: f64,
    pub rate: RateOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { m: 4, tol: 1e-8, max_iter: 500, r_init: 0.5, rate: RateOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistributedChainSpec {
    /// `Queue::Vbuf1` or `Queue::Vbuf2`.
    pub own: Queue,
    pub m: usize,
    pub r_other: f64,
    pub params: ProtocolParams,
}

pub fn build_distributed_chain(spec: &DistributedChainSpec) -> Result<QbdBlocks, AnalysisError> {
    let other = match spec.own {
        Queue::Vbuf1 => Queue::Vbuf2,
        Queue::Vbuf2 => Queue::Vbuf1,
        _ => return Err(AnalysisError::InvalidSpec("saturated chains are indexed by a virtual buffer")),
    };
    let clipped = [(other, spec.r_other)];
    ClippedChain { own: spec.own, clipped: &clipped, m: spec.m, params: &spec.params, arrivals: None }
        .build()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResult {
    pub r1: f64,
    pub r2: f64,
    pub sol1: QbdSolution,
    pub sol2: QbdSolution,
    pub m: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta: f64,
    /// Max change of `(r1, r2)` per sweep.
    pub deltas: Vec<f64>,
}

fn solve_chain(spec: &DistributedChainSpec, rate: &RateOptions) -> Result<QbdSolution, AnalysisError> {
    let blocks = build_distributed_chain(spec)?;
    qbd::solve(&blocks, rate).map_err(|e| match e {
        QbdError::Unstable { .. } => AnalysisError::SaturatedRelay(spec.own),
        other => other.into(),
    })
}

/// Alternates the two chains: solve MC1 with `r2`, update `r1`, solve MC2
/// with the new `r1`, update `r2`.
pub fn fixed_point(params: &ProtocolParams, opts: &SolverOptions) -> Result<FixedPointResult, AnalysisError> {
    if params.mode != Mode::Nc {
        return Err(crate::error::ParamError::UnsupportedMode.into());
    }
    let m = opts.m;
    let mut r1 = opts.r_init;
    let mut r2 = opts.r_init;
    let mut deltas = Vec::new();
    let mut last = None;
    for it in 1..=opts.max_iter {
        let spec1 = DistributedChainSpec { own: Queue::Vbuf1, m, r_other: r2, params: *params };
        let sol1 = solve_chain(&spec1, &opts.rate)?;
        let new_r1 = conditional_probability(&sol1, m);
        let spec2 = DistributedChainSpec { own: Queue::Vbuf2, m, r_other: new_r1, params: *params };
        let sol2 = solve_chain(&spec2, &opts.rate)?;
        let new_r2 = conditional_probability(&sol2, m);
        let delta = f64::max((new_r1 - r1).abs(), (new_r2 - r2).abs());
        deltas.push(delta);
        r1 = new_r1;
        r2 = new_r2;
        let converged = delta < opts.tol;
        last = Some((sol1, sol2, it, converged, delta));
        if converged {
            break;
        }
    }
    let (sol1, sol2, iterations, converged, final_delta) = last.ok_or(AnalysisError::InvalidSpec("max_iter is zero"))?;
    Ok(FixedPointResult { r1, r2, sol1, sol2, m, iterations, converged, final_delta, deltas })
}

/// Joint emptiness of the virtual buffers read from one chain.
pub fn occupancy_split(sol: &QbdSolution, own: Queue) -> OccupancySplit {
    let (level0, upper) = phase_masses(sol);
    let own_empty_other_empty = level0[0];
    let own_empty_other_busy: f64 = level0[1..].iter().sum();
    let own_busy_other_empty = upper[0];
    let own_busy_other_busy: f64 = upper[1..].iter().sum();
    match own {
        Queue::Vbuf2 => OccupancySplit {
            empty: own_empty_other_empty,
            only1: own_empty_other_busy,
            only2: own_busy_other_empty,
            both: own_busy_other_busy,
        },
        _ => OccupancySplit {
            empty: own_empty_other_empty,
            only1: own_busy_other_empty,
            only2: own_empty_other_busy,
            both: own_busy_other_busy,
        },
    }
}

/// Throughput, power, occupancy and delay of a converged fixed point.
///
/// `S` weights the "only one buffer busy" states with `mu11`, `mu22` and
/// the "both busy" states with `mu1 + mu2 + 2 mu`, since a fully delivered
/// coded packet carries two packets.
pub fn metrics(result: &FixedPointResult, c: &CoefficientSet, params: &ProtocolParams) -> Result<Metrics, AnalysisError> {
    let occ = occupancy_split(&result.sol1, Queue::Vbuf1);
    let p = occ.only1 * params.q1 + occ.only2 * params.q2 + occ.both * params.q;
    let s = occ.only1 * c.mu11 + occ.only2 * c.mu22 + occ.both * (c.mu1 + c.mu2 + 2.0 * c.mu);
    let n_r = result.sol1.expected_level() + result.sol2.expected_level();
    let d = little_delay(n_r, s)?;
    Ok(Metrics { s, p, n_r, d, occupancy: occ, end_occupancy: None, provenance: Provenance::Analytic })
}

/// Fixed point followed by metrics; errors if the iteration did not converge.
pub fn analyze(params: &ProtocolParams, opts: &SolverOptions) -> Result<(FixedPointResult, Metrics), AnalysisError> {
    let fp = fixed_point(params, opts)?;
    let c = coefficients(params)?;
    let m = metrics(&fp, &c, params)?;
    Ok((fp, m))
}
