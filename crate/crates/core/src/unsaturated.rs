//! Unsaturated end nodes: four coupled distributed chains (end node 1,
//! virtual buffers 1 and 2, end node 2), each clipping the other three
//! coordinates to `m` phases, and the stability-region frontier tracer.

use alloc::vec::Vec;

use crate::chain::{conditional_probability, phase_masses, ClippedChain};
use crate::error::{AnalysisError, QbdError};
use crate::metrics::{little_delay, Metrics, OccupancySplit, Provenance};
use crate::model::{slot_outcomes, validate_params, ArrivalRates, Mode, ProtocolParams, Queue};
use crate::qbd::{self, QbdBlocks, QbdSolution, RateAlgorithm, RateOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnsatOptions {
    pub m: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub r_init: f64,
    pub rate: RateOptions,
}

impl Default for UnsatOptions {
    fn default() -> Self {
        UnsatOptions {
            m: 4,
            tol: 1e-8,
            max_iter: 500,
            r_init: 0.5,
            rate: RateOptions { algorithm: RateAlgorithm::LogarithmicReduction, max_iter: 200, tol: 1e-10 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnsatChainSpec {
    pub own: Queue,
    pub m: usize,
    /// Conditional probabilities of all four queues, in `Queue::ALL` order;
    /// the entry of `own` is ignored.
    pub r: [f64; 4],
    pub params: ProtocolParams,
    pub arrivals: ArrivalRates,
}

pub fn build_unsat_chain(spec: &UnsatChainSpec) -> Result<QbdBlocks, AnalysisError> {
    let mut clipped = [(Queue::End1, 0.0); 3];
    let mut n = 0;
    for q in Queue::ALL {
        if q != spec.own {
            clipped[n] = (q, spec.r[q.index()]);
            n += 1;
        }
    }
    ClippedChain {
        own: spec.own,
        clipped: &clipped,
        m: spec.m,
        params: &spec.params,
        arrivals: Some(&spec.arrivals),
    }
    .build()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnsatFixedPoint {
    /// Conditional probabilities in `Queue::ALL` order.
    pub r: [f64; 4],
    /// Stationary solution per chain; `None` where the chain is unstable.
    pub sols: [Option<QbdSolution>; 4],
    pub unstable: Vec<Queue>,
    pub m: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta: f64,
    pub deltas: Vec<f64>,
    pub params: ProtocolParams,
    pub arrivals: ArrivalRates,
}

impl UnsatFixedPoint {
    /// Queues declared saturated: unstable chains, or stable ones whose
    /// conditional probability fell below `epsilon`.
    pub fn saturated(&self, epsilon: f64) -> Vec<Queue> {
        Queue::ALL
            .into_iter()
            .filter(|q| self.sols[q.index()].is_none() || self.r[q.index()] < epsilon)
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        self.unstable.is_empty()
    }
}

/// Round-robin update of the four conditional probabilities. An unstable
/// chain is not fatal: its queue grows without bound, so its `r` is 0.
pub fn fixed_point_unsat(
    params: &ProtocolParams,
    arrivals: &ArrivalRates,
    opts: &UnsatOptions,
) -> Result<UnsatFixedPoint, AnalysisError> {
    fixed_point_unsat_from(params, arrivals, opts, [opts.r_init; 4])
}

/// As [`fixed_point_unsat`], starting from the given conditional probabilities.
pub fn fixed_point_unsat_from(
    params: &ProtocolParams,
    arrivals: &ArrivalRates,
    opts: &UnsatOptions,
    r_start: [f64; 4],
) -> Result<UnsatFixedPoint, AnalysisError> {
    let (params, arrivals) = validate_params(*params, Some(*arrivals))?;
    let arrivals = arrivals.expect("arrivals were provided");
    if opts.max_iter == 0 {
        return Err(AnalysisError::InvalidSpec("max_iter is zero"));
    }
    let mut r = r_start.map(|v| v.clamp(0.0, 1.0));
    let mut sols: [Option<QbdSolution>; 4] = Default::default();
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut final_delta = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let mut delta = 0.0f64;
        for q in Queue::ALL {
            let spec = UnsatChainSpec { own: q, m: opts.m, r, params, arrivals };
            let blocks = build_unsat_chain(&spec)?;
            let (new_r, sol) = match qbd::solve(&blocks, &opts.rate) {
                Ok(sol) => (conditional_probability(&sol, opts.m), Some(sol)),
                Err(QbdError::Unstable { .. }) => (0.0, None),
                Err(e) => return Err(e.into()),
            };
            delta = delta.max((new_r - r[q.index()]).abs());
            r[q.index()] = new_r;
            sols[q.index()] = sol;
        }
        deltas.push(delta);
        final_delta = delta;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let unstable = Queue::ALL.into_iter().filter(|q| sols[q.index()].is_none()).collect();
    Ok(UnsatFixedPoint {
        r,
        sols,
        unstable,
        m: opts.m,
        iterations,
        converged,
        final_delta,
        deltas,
        params,
        arrivals,
    })
}

/// The fixed point with the relay forwarding native packets only.
pub fn analytic_nonnc_chain(
    params: &ProtocolParams,
    arrivals: &ArrivalRates,
    opts: &UnsatOptions,
) -> Result<UnsatFixedPoint, AnalysisError> {
    let p = ProtocolParams::non_nc(params.g1, params.g2, params.q)?;
    fixed_point_unsat(&p, arrivals, opts)
}

/// Relay metrics from the virtual-buffer-1 chain's joint masses.
///
/// Every `(level, phase)` state of that chain fixes which of the four
/// queues are empty, which is all the slot law depends on, so `S` and `P`
/// are exact expectations over the chain's approximation of the joint law.
pub fn metrics_unsat(result: &UnsatFixedPoint) -> Result<Metrics, AnalysisError> {
    if !result.unstable.is_empty() {
        return Err(AnalysisError::UnstableQueues(result.unstable.clone()));
    }
    let sol_of = |q: Queue| result.sols[q.index()].as_ref().expect("stable chain has a solution");
    let sol1 = sol_of(Queue::Vbuf1);
    let clipped = [(Queue::End1, 0.0), (Queue::Vbuf2, 0.0), (Queue::End2, 0.0)];
    let view = ClippedChain {
        own: Queue::Vbuf1,
        clipped: &clipped,
        m: result.m,
        params: &result.params,
        arrivals: Some(&result.arrivals),
    };
    let (level0, upper) = phase_masses(sol1);
    let mut s = 0.0;
    let mut p = 0.0;
    let mut occ = OccupancySplit::default();
    for (level, masses) in [(0, &level0), (1, &upper)] {
        for (phase, &w) in masses.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let state = view.representative(level, phase);
            for o in slot_outcomes(&state, &result.params, Some(&result.arrivals)) {
                p += w * o.prob * o.tx_count as f64;
                s += w * o.prob * o.success_count as f64;
            }
            match (state.vbuf_busy(0), state.vbuf_busy(1)) {
                (false, false) => occ.empty += w,
                (true, false) => occ.only1 += w,
                (false, true) => occ.only2 += w,
                (true, true) => occ.both += w,
            }
        }
    }
    let n_r = sol1.expected_level() + sol_of(Queue::Vbuf2).expected_level();
    let d = little_delay(n_r, s)?;
    let ends = [sol_of(Queue::End1).expected_level(), sol_of(Queue::End2).expected_level()];
    Ok(Metrics { s, p, n_r, d, occupancy: occ, end_occupancy: Some(ends), provenance: Provenance::Analytic })
}

pub fn analyze_unsat(
    params: &ProtocolParams,
    arrivals: &ArrivalRates,
    opts: &UnsatOptions,
) -> Result<(UnsatFixedPoint, Metrics), AnalysisError> {
    let fp = fixed_point_unsat(params, arrivals, opts)?;
    let m = metrics_unsat(&fp)?;
    Ok((fp, m))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryOptions {
    pub lam1_start: f64,
    /// Last `lam1` tried; the trace also stops once end node 1 saturates.
    pub lam1_stop: f64,
    pub lam1_step: f64,
    /// Resolution of the `lam2` search.
    pub step: f64,
    /// Initial stride of the `lam2` bracket search without a hint.
    pub coarse_step: f64,
    /// Initial stride of the bracket search around a hint.
    pub bracket_step: f64,
    /// A queue with `r < epsilon` counts as saturated.
    pub epsilon: f64,
    pub solver: UnsatOptions,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        BoundaryOptions {
            lam1_start: 0.01,
            lam1_stop: 0.999,
            lam1_step: 0.001,
            step: 0.001,
            coarse_step: 0.05,
            bracket_step: 0.004,
            epsilon: 1e-3,
            solver: UnsatOptions { m: 6, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityBoundary {
    /// Frontier points `(lam1, lam2)` in increasing `lam1`.
    pub points: Vec<(f64, f64)>,
    pub m: usize,
    pub epsilon: f64,
    pub step: f64,
    pub mode: Mode,
    pub params: ProtocolParams,
    /// Indices `i` where `points[i].1 > points[i - 1].1`.
    pub nonmonotone: Vec<usize>,
}

/// Saturated queues at one arrival pair under the dual criterion.
pub fn saturated_queues(
    params: &ProtocolParams,
    lam1: f64,
    lam2: f64,
    opts: &BoundaryOptions,
) -> Result<Vec<Queue>, AnalysisError> {
    let a = ArrivalRates::new(lam1, lam2)?;
    Ok(fixed_point_unsat(params, &a, &opts.solver)?.saturated(opts.epsilon))
}

/// Stability probes along one `lam1` line, each warm-started from the last
/// stable point's conditional probabilities.
struct Probe<'a> {
    params: &'a ProtocolParams,
    lam1: f64,
    opts: &'a BoundaryOptions,
    warm: [f64; 4],
}

impl Probe<'_> {
    fn at(&mut self, k: usize) -> Result<Vec<Queue>, AnalysisError> {
        let a = ArrivalRates::new(self.lam1, k as f64 * self.opts.step)?;
        let fp = fixed_point_unsat_from(self.params, &a, &self.opts.solver, self.warm)?;
        let sat = fp.saturated(self.opts.epsilon);
        if sat.is_empty() {
            self.warm = fp.r;
        }
        Ok(sat)
    }
}

/// Largest `lam2` on the `step` grid keeping every queue stable at `lam1`,
/// or `None` when end node 1 is already saturated with `lam2 = 0`.
pub fn frontier_point(params: &ProtocolParams, lam1: f64, opts: &BoundaryOptions) -> Result<Option<f64>, AnalysisError> {
    frontier_point_near(params, lam1, None, opts)
}

/// As [`frontier_point`], bracketing the search around `hint` first.
pub fn frontier_point_near(
    params: &ProtocolParams,
    lam1: f64,
    hint: Option<f64>,
    opts: &BoundaryOptions,
) -> Result<Option<f64>, AnalysisError> {
    let mut probe = Probe { params, lam1, opts, warm: [opts.solver.r_init; 4] };
    let top = libm::floor((1.0 - opts.step) / opts.step) as usize;
    let grid = |v: f64| (libm::round(v / opts.step).max(0.0) as usize).clamp(1, top);
    let (start, mut stride) = match hint {
        Some(h) => (grid(h), grid(opts.bracket_step)),
        None => (0, grid(opts.coarse_step)),
    };
    // Grid indices with `lo` stable and `hi` saturated; `sat_hi` is the
    // saturated set at `hi`.
    let mut lo;
    let mut hi;
    let mut sat_hi;
    let first = probe.at(start)?;
    if first.is_empty() {
        lo = start;
        loop {
            let k = (lo + stride).min(top);
            if k == lo {
                return Ok(Some(lo as f64 * opts.step));
            }
            let sat = probe.at(k)?;
            if sat.is_empty() {
                lo = k;
                stride *= 2;
            } else {
                hi = k;
                sat_hi = sat;
                break;
            }
        }
    } else {
        hi = start;
        sat_hi = first;
        loop {
            if hi == 0 {
                if sat_hi.contains(&Queue::End1) {
                    return Ok(None);
                }
                return Err(AnalysisError::RelaySaturatesFirst { lam1 });
            }
            let k = hi.saturating_sub(stride);
            let sat = probe.at(k)?;
            if sat.is_empty() {
                lo = k;
                break;
            }
            hi = k;
            sat_hi = sat;
            stride *= 2;
        }
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let sat = probe.at(mid)?;
        if sat.is_empty() {
            lo = mid;
        } else {
            hi = mid;
            sat_hi = sat;
        }
    }
    if sat_hi.iter().all(|q| q.is_relay()) {
        return Err(AnalysisError::RelaySaturatesFirst { lam1 });
    }
    Ok(Some(lo as f64 * opts.step))
}

/// Traces the frontier over the `lam1` grid.
pub fn stability_boundary(params: &ProtocolParams, opts: &BoundaryOptions) -> Result<StabilityBoundary, AnalysisError> {
    let mut points = Vec::new();
    for lam1 in lam1_grid(opts) {
        match frontier_point_near(params, lam1, extrapolate(&points, lam1), opts)? {
            Some(lam2) => points.push((lam1, lam2)),
            None => break,
        }
    }
    Ok(assemble_boundary(params, opts, points))
}

/// Linear extrapolation of the last two frontier points to `lam1`.
pub fn extrapolate(points: &[(f64, f64)], lam1: f64) -> Option<f64> {
    match points {
        [] => None,
        [(_, b)] => Some(*b),
        [.., (a0, b0), (a1, b1)] => Some((b1 + (b1 - b0) / (a1 - a0) * (lam1 - a1)).max(0.0)),
    }
}

/// `lam1` values visited by the tracer, rounded to the step's decimals.
pub fn lam1_grid(opts: &BoundaryOptions) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let v = round_grid(opts.lam1_start + i as f64 * opts.lam1_step);
        if v > opts.lam1_stop + 1e-12 || v >= 1.0 {
            break;
        }
        out.push(v);
        i += 1;
    }
    out
}

fn round_grid(v: f64) -> f64 {
    libm::round(v * 1e9) / 1e9
}

pub fn assemble_boundary(params: &ProtocolParams, opts: &BoundaryOptions, points: Vec<(f64, f64)>) -> StabilityBoundary {
    let points: Vec<(f64, f64)> = points.into_iter().map(|(a, b)| (round_grid(a), round_grid(b))).collect();
    let nonmonotone = (1..points.len()).filter(|&i| points[i].1 > points[i - 1].1).collect();
    StabilityBoundary {
        points,
        m: opts.solver.m,
        epsilon: opts.epsilon,
        step: opts.step,
        mode: params.mode,
        params: *params,
        nonmonotone,
    }
}
