//! Slot-by-slot Monte Carlo simulation of the protocol.
//!
//! Replication `i` of a run with base seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `i`. Every slot takes
//! the same six uniform draws in a fixed order (end 1, end 2, relay, pick,
//! arrival 1, arrival 2), so a run is a pure function of its config.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ParamError;
use crate::metrics::{Metrics, OccupancySplit, Provenance};
use crate::model::{resolve_slot, validate_params, ArrivalRates, NetworkState, ProtocolParams, RelayAction, SlotDraws};

/// Default slope above which a queue is called unstable, in packets per slot.
pub const DRIFT_THRESHOLD: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub params: ProtocolParams,
    /// `None` simulates saturated end nodes.
    pub arrivals: Option<ArrivalRates>,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub replications: usize,
    /// Batches per replication for single-replication confidence intervals.
    pub batches: usize,
    /// Windows per replication for the drift slope.
    pub windows: usize,
}

impl SimConfig {
    /// Warmup of 10% of the horizon, one replication.
    pub fn new(params: ProtocolParams, arrivals: Option<ArrivalRates>, horizon: u64, seed: u64) -> Self {
        SimConfig { params, arrivals, horizon, warmup: horizon / 10, seed, replications: 1, batches: 20, windows: 20 }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        validate_params(self.params, self.arrivals)?;
        if self.horizon <= self.warmup {
            return Err(ParamError::InvalidConfig("horizon must exceed warmup"));
        }
        if self.replications == 0 {
            return Err(ParamError::InvalidConfig("replications must be at least 1"));
        }
        if self.batches < 2 || self.windows < 2 {
            return Err(ParamError::InvalidConfig("batches and windows must be at least 2"));
        }
        if self.horizon - self.warmup < self.batches.max(self.windows) as u64 {
            return Err(ParamError::InvalidConfig("measured slots fewer than batches"));
        }
        Ok(())
    }

    pub fn measured(&self) -> u64 {
        self.horizon - self.warmup
    }
}

/// Event counts over the measured slots of one or more replications.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimCounters {
    pub slots: u64,
    pub relay_attempts: u64,
    pub coded_attempts: u64,
    /// Slots in which both end nodes transmitted.
    pub uplink_collisions: u64,
    pub deliveries: u64,
    pub delivered: [u64; 2],
    pub received: [u64; 2],
    pub arrivals: [u64; 2],
    /// Slots that started with only buffer 1, only buffer 2, both busy.
    pub state_slots: [u64; 3],
    /// Relay attempts in those slots.
    pub state_attempts: [u64; 3],
    /// Sum over slots of each coordinate sampled at slot start.
    pub occupancy_sum: [u64; 4],
    /// Joint emptiness of the virtual buffers: empty, only 1, only 2, both.
    pub split_slots: [u64; 4],
    pub delay_sum: u64,
    pub delay_count: u64,
    pub end_delay_sum: [u64; 2],
    pub end_delay_count: [u64; 2],
    /// Coordinates when measurement started and when the run ended.
    pub start_occupancy: [u64; 4],
    pub final_occupancy: [u64; 4],
}

impl SimCounters {
    fn absorb(&mut self, o: &SimCounters) {
        self.slots += o.slots;
        self.relay_attempts += o.relay_attempts;
        self.coded_attempts += o.coded_attempts;
        self.uplink_collisions += o.uplink_collisions;
        self.deliveries += o.deliveries;
        self.delay_sum += o.delay_sum;
        self.delay_count += o.delay_count;
        for i in 0..2 {
            self.delivered[i] += o.delivered[i];
            self.received[i] += o.received[i];
            self.arrivals[i] += o.arrivals[i];
            self.end_delay_sum[i] += o.end_delay_sum[i];
            self.end_delay_count[i] += o.end_delay_count[i];
        }
        for i in 0..3 {
            self.state_slots[i] += o.state_slots[i];
            self.state_attempts[i] += o.state_attempts[i];
        }
        for i in 0..4 {
            self.occupancy_sum[i] += o.occupancy_sum[i];
            self.split_slots[i] += o.split_slots[i];
            self.start_occupancy[i] += o.start_occupancy[i];
            self.final_occupancy[i] += o.final_occupancy[i];
        }
    }

    pub fn throughput(&self) -> f64 {
        ratio(self.deliveries, self.slots)
    }

    pub fn power(&self) -> f64 {
        ratio(self.relay_attempts, self.slots)
    }

    pub fn relay_occupancy(&self) -> f64 {
        ratio(self.occupancy_sum[1] + self.occupancy_sum[2], self.slots)
    }

    pub fn delay(&self) -> f64 {
        ratio(self.delay_sum, self.delay_count)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One replication.
#[derive(Clone, Debug, PartialEq)]
pub struct RepResult {
    pub index: usize,
    pub counters: SimCounters,
    /// Per-batch counters over consecutive equal slices of the measured slots.
    pub batches: Vec<SimCounters>,
    /// Least-squares slope of each coordinate's window means, packets/slot.
    pub slopes: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Half-width of the 95% confidence interval.
    pub ci: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimMetrics {
    pub s: Estimate,
    pub p: Estimate,
    pub n_r: Estimate,
    /// Mean relay sojourn of delivered packets, in slots.
    pub d: Estimate,
    pub counters: SimCounters,
    pub mean_occupancy: [f64; 4],
    pub occupancy: OccupancySplit,
    /// Mean end-node sojourn, unsaturated runs only.
    pub end_delay: Option<[f64; 2]>,
    /// Drift slope per coordinate averaged over replications.
    pub slopes: [f64; 4],
    pub replications: Vec<RepResult>,
    pub seed: u64,
}

impl SimMetrics {
    pub fn to_metrics(&self) -> Metrics {
        let saturated = self.end_delay.is_none();
        Metrics {
            s: self.s.mean,
            p: self.p.mean,
            n_r: self.n_r.mean,
            d: self.d.mean,
            occupancy: self.occupancy,
            end_occupancy: (!saturated).then_some([self.mean_occupancy[0], self.mean_occupancy[3]]),
            provenance: Provenance::Simulated,
        }
    }

    /// Slots simulated after warmup, summed over replications.
    pub fn slots(&self) -> u64 {
        self.counters.slots
    }
}

pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Runs replication `rep` of `cfg`.
pub fn simulate_replication(cfg: &SimConfig, rep: usize) -> Result<RepResult, ParamError> {
    cfg.validate()?;
    let (params, arrivals) = validate_params(cfg.params, cfg.arrivals)?;
    let lam = arrivals.map_or([0.0; 2], |a| [a.lam1, a.lam2]);
    let mut rng = rep_rng(cfg.seed, rep);
    let mut state = match arrivals {
        None => NetworkState::saturated(0, 0),
        Some(_) => NetworkState::unsaturated(0, 0, 0, 0),
    };
    // Arrival slots of queued packets, per coordinate.
    let mut tags: [VecDeque<u64>; 4] = Default::default();
    let measured = cfg.measured();
    let mut total = SimCounters::default();
    let mut batches = vec![SimCounters::default(); cfg.batches];
    let mut window_sums = vec![[0u64; 4]; cfg.windows];
    let mut window_len = vec![0u64; cfg.windows];

    for t in 0..cfg.horizon {
        let u: [f64; 6] = core::array::from_fn(|_| rng.random::<f64>());
        let busy = [state.vbuf_busy(0), state.vbuf_busy(1)];
        let draws = SlotDraws {
            end_tx: [u[0] < params.g1, u[1] < params.g2],
            relay_tx: u[2] < params.relay_attempt_prob(busy[0], busy[1]),
            pick: usize::from(u[3] >= 0.5),
            arrivals: [u[4] < lam[0], u[5] < lam[1]],
        };
        let res = resolve_slot(&state, params.mode, &draws);
        let counts = state.counts();

        if t >= cfg.warmup {
            let k = t - cfg.warmup;
            let b = (k * cfg.batches as u64 / measured) as usize;
            let w = (k * cfg.windows as u64 / measured) as usize;
            if k == 0 {
                total.start_occupancy = counts.map(u64::from);
            }
            let c = &mut batches[b];
            c.slots += 1;
            for i in 0..4 {
                c.occupancy_sum[i] += counts[i] as u64;
                window_sums[w][i] += counts[i] as u64;
            }
            window_len[w] += 1;
            let split = usize::from(busy[0]) + 2 * usize::from(busy[1]);
            c.split_slots[split] += 1;
            if split > 0 {
                c.state_slots[split - 1] += 1;
            }
            if res.action != RelayAction::Silent {
                c.relay_attempts += 1;
                c.state_attempts[split - 1] += 1;
            }
            if res.action == RelayAction::Coded {
                c.coded_attempts += 1;
            }
            let attempted = [draws.end_tx[0] && state.end_has_packet(0), draws.end_tx[1] && state.end_has_packet(1)];
            if attempted[0] && attempted[1] {
                c.uplink_collisions += 1;
            }
            c.deliveries += res.success_count as u64;
            for v in 0..2 {
                if res.delivered[v] {
                    c.delivered[v] += 1;
                }
                if draws.arrivals[v] && arrivals.is_some() {
                    c.arrivals[v] += 1;
                }
            }
            if let Some(v) = res.received {
                c.received[v] += 1;
            }
        }

        // Departures first, then receptions and arrivals stamped with `t`.
        let record = t >= cfg.warmup;
        let b = if record { ((t - cfg.warmup) * cfg.batches as u64 / measured) as usize } else { 0 };
        for v in 0..2 {
            if res.delivered[v] {
                let arrived = tags[1 + v].pop_front().expect("delivered from an empty buffer");
                if record {
                    batches[b].delay_sum += t - arrived;
                    batches[b].delay_count += 1;
                }
            }
        }
        if let Some(end) = res.received {
            if arrivals.is_some() {
                let arrived = tags[3 * end].pop_front().expect("sent from an empty end node");
                if record {
                    batches[b].end_delay_sum[end] += t - arrived;
                    batches[b].end_delay_count[end] += 1;
                }
            }
            tags[1 + end].push_back(t);
        }
        if arrivals.is_some() {
            for end in 0..2 {
                if draws.arrivals[end] {
                    tags[3 * end].push_back(t);
                }
            }
        }
        state = state.apply(&res.delta);
    }

    let start = total.start_occupancy;
    for c in &batches {
        total.absorb(c);
    }
    total.start_occupancy = start;
    total.final_occupancy = state.counts().map(u64::from);
    let mut slopes = [0.0; 4];
    for (i, slope) in slopes.iter_mut().enumerate() {
        let pts: Vec<(f64, f64)> = (0..cfg.windows)
            .filter(|&w| window_len[w] > 0)
            .map(|w| {
                let mid = w as f64 * measured as f64 / cfg.windows as f64 + window_len[w] as f64 / 2.0;
                (mid, window_sums[w][i] as f64 / window_len[w] as f64)
            })
            .collect();
        *slope = ls_slope(&pts);
    }
    Ok(RepResult { index: rep, counters: total, batches, slopes })
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Two-sided 95% Student t quantile.
pub fn t_quantile(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
        2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        1..=30 => TABLE[df - 1],
        31..=40 => 2.021,
        41..=60 => 2.000,
        61..=120 => 1.980,
        _ => 1.960,
    }
}

fn estimate(samples: &[f64], mean: f64) -> Estimate {
    let n = samples.len();
    if n < 2 {
        return Estimate { mean, ci: f64::INFINITY };
    }
    let avg = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() / (n - 1) as f64;
    Estimate { mean, ci: t_quantile(n - 1) * libm::sqrt(var / n as f64) }
}

/// Merges replications. Point estimates come from summed integer counters,
/// so the result does not depend on the order of `reps`. Intervals use the
/// spread across replications, or across batches for a single replication.
pub fn merge(cfg: &SimConfig, reps: &[RepResult]) -> SimMetrics {
    let mut reps: Vec<RepResult> = reps.to_vec();
    reps.sort_by_key(|r| r.index);
    let mut counters = SimCounters::default();
    for r in &reps {
        counters.absorb(&r.counters);
    }
    let groups: Vec<&SimCounters> = if reps.len() >= 2 {
        reps.iter().map(|r| &r.counters).collect()
    } else {
        reps.iter().flat_map(|r| r.batches.iter()).collect()
    };
    let series = |f: fn(&SimCounters) -> f64| -> Vec<f64> { groups.iter().map(|c| f(c)).collect() };
    let s = estimate(&series(SimCounters::throughput), counters.throughput());
    let p = estimate(&series(SimCounters::power), counters.power());
    let n_r = estimate(&series(SimCounters::relay_occupancy), counters.relay_occupancy());
    let d = estimate(&series(SimCounters::delay), counters.delay());
    let slots = counters.slots;
    let mean_occupancy = counters.occupancy_sum.map(|v| ratio(v, slots));
    let [e, o1, o2, b] = counters.split_slots.map(|v| ratio(v, slots));
    let end_delay = cfg.arrivals.map(|_| {
        [
            ratio(counters.end_delay_sum[0], counters.end_delay_count[0]),
            ratio(counters.end_delay_sum[1], counters.end_delay_count[1]),
        ]
    });
    let mut slopes = [0.0; 4];
    for (i, s) in slopes.iter_mut().enumerate() {
        *s = reps.iter().map(|r| r.slopes[i]).sum::<f64>() / reps.len().max(1) as f64;
    }
    SimMetrics {
        s,
        p,
        n_r,
        d,
        counters,
        mean_occupancy,
        occupancy: OccupancySplit { empty: e, only1: o1, only2: o2, both: b },
        end_delay,
        slopes,
        replications: reps,
        seed: cfg.seed,
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimMetrics, ParamError> {
    replicate(cfg)
}

/// Runs all replications in order and merges them.
pub fn replicate(cfg: &SimConfig) -> Result<SimMetrics, ParamError> {
    let reps = (0..cfg.replications)
        .map(|i| simulate_replication(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(merge(cfg, &reps))
}

/// Per-coordinate verdicts in `(l1, k1, k2, l2)` order: `true` when the
/// coordinate's slope exceeds `threshold` in a strict majority of the
/// replications.
pub fn drift_verdicts(reps: &[RepResult], threshold: f64) -> [bool; 4] {
    core::array::from_fn(|i| {
        let up = reps.iter().filter(|r| r.slopes[i] > threshold).count();
        2 * up > reps.len()
    })
}

/// Simulates `cfg` and reports which queues drift upward.
pub fn drift_test(cfg: &SimConfig, threshold: f64) -> Result<[bool; 4], ParamError> {
    let m = replicate(cfg)?;
    Ok(drift_verdicts(&m.replications, threshold))
}
