//! Exact reference model: the full relay chain (or the full four-buffer
//! chain) on a finite box, solved directly.
//!
//! Each coordinate is capped at `N`; an increment at the cap leaves the
//! coordinate at the cap. Only states reachable from the empty network are
//! kept, and the balance equations are solved with GTH state reduction on
//! a banded layout, which needs no subtractions and keeps the band intact.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::OracleError;
use crate::metrics::{little_delay, Metrics, OccupancySplit, Provenance};
use crate::model::{slot_outcomes, validate_params, ArrivalRates, NetworkState, ProtocolParams};

/// Default memory budget of a banded solve, in bytes.
pub const DEFAULT_BUDGET: usize = 512 << 20;

pub const DEFAULT_CAP_SATURATED: usize = 40;
pub const DEFAULT_CAP_UNSATURATED: usize = 8;

#[derive(Clone, Debug)]
pub struct TruncatedChain {
    pub cap: usize,
    pub params: ProtocolParams,
    pub arrivals: Option<ArrivalRates>,
    /// Sparse rows: `(target, probability)` sorted by target.
    pub rows: Vec<Vec<(usize, f64)>>,
    budget: usize,
}

impl TruncatedChain {
    pub fn dims(&self) -> usize {
        if self.arrivals.is_some() {
            4
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index of a state; saturated chains ignore `l1`, `l2`.
    pub fn index(&self, s: &NetworkState) -> usize {
        let w = self.cap + 1;
        let [l1, k1, k2, l2] = s.counts().map(|c| c as usize);
        match self.arrivals {
            None => k1 * w + k2,
            Some(_) => ((l1 * w + k1) * w + k2) * w + l2,
        }
    }

    pub fn state(&self, mut idx: usize) -> NetworkState {
        let w = self.cap + 1;
        match self.arrivals {
            None => NetworkState::saturated((idx / w) as u32, (idx % w) as u32),
            Some(_) => {
                let l2 = idx % w;
                idx /= w;
                let k2 = idx % w;
                idx /= w;
                let k1 = idx % w;
                let l1 = idx / w;
                NetworkState::unsaturated(l1 as u32, k1 as u32, k2 as u32, l2 as u32)
            }
        }
    }

    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[from].iter().find(|(j, _)| *j == to).map_or(0.0, |(_, p)| *p)
    }
}

fn band_estimate(states: usize, cap: usize, dims: usize) -> usize {
    let w = cap + 1;
    let half = (0..dims - 1).fold(1, |acc, _| acc * w) + 1;
    states.saturating_mul(2 * half + 1).saturating_mul(8)
}

pub fn build_truncated(
    params: &ProtocolParams,
    arrivals: Option<&ArrivalRates>,
    cap: usize,
) -> Result<TruncatedChain, OracleError> {
    build_truncated_with_budget(params, arrivals, cap, DEFAULT_BUDGET)
}

pub fn build_truncated_with_budget(
    params: &ProtocolParams,
    arrivals: Option<&ArrivalRates>,
    cap: usize,
    budget: usize,
) -> Result<TruncatedChain, OracleError> {
    let (params, arrivals) = validate_params(*params, arrivals.copied())?;
    if cap < 1 {
        return Err(OracleError::CapTooSmall(cap));
    }
    let dims = if arrivals.is_some() { 4 } else { 2 };
    let states = (cap + 1).pow(dims as u32);
    let needed = band_estimate(states, cap, dims);
    if needed > budget {
        return Err(OracleError::TooLarge { needed, budget });
    }
    let mut chain = TruncatedChain { cap, params, arrivals, rows: Vec::with_capacity(states), budget };
    let capped = cap as i64;
    for idx in 0..states {
        let s = chain.state(idx);
        let counts = s.counts();
        let mut row: Vec<(usize, f64)> = Vec::new();
        for o in slot_outcomes(&s, &params, arrivals.as_ref()) {
            let mut next = [0u32; 4];
            for c in 0..4 {
                next[c] = (counts[c] as i64 + o.delta[c] as i64).min(capped) as u32;
            }
            let t = match arrivals {
                None => NetworkState::saturated(next[1], next[2]),
                Some(_) => NetworkState::unsaturated(next[0], next[1], next[2], next[3]),
            };
            let j = chain.index(&t);
            match row.iter_mut().find(|(k, _)| *k == j) {
                Some(e) => e.1 += o.prob,
                None => row.push((j, o.prob)),
            }
        }
        row.sort_by_key(|(j, _)| *j);
        chain.rows.push(row);
    }
    Ok(chain)
}

/// Stationary vector of the chain started empty. Entries of states that
/// cannot be reached from the empty network are zero.
pub fn solve_truncated(chain: &TruncatedChain) -> Result<Vec<f64>, OracleError> {
    let n_all = chain.len();
    let mut seen = vec![false; n_all];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &(j, p) in &chain.rows[i] {
            if p > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    let reach: Vec<usize> = (0..n_all).filter(|&i| seen[i]).collect();
    let mut local = vec![usize::MAX; n_all];
    for (k, &i) in reach.iter().enumerate() {
        local[i] = k;
    }
    let n = reach.len();
    let (mut lo, mut hi) = (0usize, 0usize);
    for (k, &i) in reach.iter().enumerate() {
        for &(j, p) in &chain.rows[i] {
            if p == 0.0 {
                continue;
            }
            let c = local[j];
            if c < k {
                lo = lo.max(k - c);
            } else {
                hi = hi.max(c - k);
            }
        }
    }
    let width = lo + hi + 1;
    let needed = n.saturating_mul(width).saturating_mul(8);
    if needed > chain.budget {
        return Err(OracleError::TooLarge { needed, budget: chain.budget });
    }
    let mut band = Band { lo, width, data: vec![0.0; n * width] };
    for (k, &i) in reach.iter().enumerate() {
        for &(j, p) in &chain.rows[i] {
            let c = local[j];
            if c != k {
                *band.at(k, c) += p;
            }
        }
    }

    // GTH reduction: censor out the highest state, one at a time.
    for k in (1..n).rev() {
        let first = k.saturating_sub(lo);
        let s: f64 = (first..k).map(|j| band.get(k, j)).sum();
        if !(s > 0.0) {
            return Err(OracleError::Reducible { state: reach[k] });
        }
        let top = k.saturating_sub(hi);
        for i in top..k {
            let v = band.get(i, k);
            if v != 0.0 {
                *band.at(i, k) = v / s;
            }
        }
        for i in top..k {
            let a = band.get(i, k);
            if a == 0.0 {
                continue;
            }
            for j in first..k {
                if j == i {
                    continue;
                }
                let b = band.get(k, j);
                if b != 0.0 {
                    *band.at(i, j) += a * b;
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for k in 1..n {
        let top = k.saturating_sub(hi);
        x[k] = (top..k).map(|i| x[i] * band.get(i, k)).sum();
    }
    let total: f64 = x.iter().sum();
    let mut pi = vec![0.0; n_all];
    for (k, &i) in reach.iter().enumerate() {
        pi[i] = x[k] / total;
    }
    Ok(pi)
}

struct Band {
    lo: usize,
    width: usize,
    data: Vec<f64>,
}

impl Band {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let off = j + self.lo - i;
        if off >= self.width {
            0.0
        } else {
            self.data[i * self.width + off]
        }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.width + (j + self.lo - i)]
    }
}

/// Throughput, power, occupancy and delay from exact state masses.
pub fn oracle_metrics(chain: &TruncatedChain, pi: &[f64]) -> Metrics {
    let mut p = 0.0;
    let mut s = 0.0;
    let mut n_r = 0.0;
    let mut ends = [0.0; 2];
    let mut occ = OccupancySplit::default();
    for (i, &w) in pi.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let st = chain.state(i);
        for o in slot_outcomes(&st, &chain.params, chain.arrivals.as_ref()) {
            p += w * o.prob * o.tx_count as f64;
            s += w * o.prob * o.success_count as f64;
        }
        let [l1, k1, k2, l2] = st.counts();
        n_r += w * (k1 + k2) as f64;
        ends[0] += w * l1 as f64;
        ends[1] += w * l2 as f64;
        match (k1 > 0, k2 > 0) {
            (false, false) => occ.empty += w,
            (true, false) => occ.only1 += w,
            (false, true) => occ.only2 += w,
            (true, true) => occ.both += w,
        }
    }
    let d = little_delay(n_r, s).unwrap_or(f64::INFINITY);
    Metrics {
        s,
        p,
        n_r,
        d,
        occupancy: occ,
        end_occupancy: chain.arrivals.map(|_| ends),
        provenance: Provenance::Oracle,
    }
}

/// Build, solve and evaluate in one call.
pub fn oracle(
    params: &ProtocolParams,
    arrivals: Option<&ArrivalRates>,
    cap: usize,
) -> Result<Metrics, OracleError> {
    let chain = build_truncated(params, arrivals, cap)?;
    let pi = solve_truncated(&chain)?;
    Ok(oracle_metrics(&chain, &pi))
}
