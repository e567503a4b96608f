//! Distributed chains: one buffer is the QBD level, the other buffers are
//! clipped to `m` phases each.
//!
//! A clipped coordinate sitting at phase `m - 1` stands for "at least
//! `m - 1`". Increments there are absorbed. A decrement moves to `m - 2`
//! with weight `r` (the coordinate was exactly `m - 1`) and stays put with
//! weight `1 - r`, where `r = Pr{x = m-1 | x >= m-1}` comes from the chain
//! that has `x` as its level.

use alloc::vec::Vec;

use crate::error::AnalysisError;
use crate::linalg::Matrix;
use crate::model::{slot_outcomes, ArrivalRates, NetworkState, ProtocolParams, Queue};
use crate::qbd::{QbdBlocks, QbdSolution};

#[derive(Clone, Debug, PartialEq)]
pub struct ClippedChain<'a> {
    pub own: Queue,
    /// Clipped coordinates with their conditional probabilities, most
    /// significant phase digit first.
    pub clipped: &'a [(Queue, f64)],
    pub m: usize,
    pub params: &'a ProtocolParams,
    /// `None` for saturated end nodes.
    pub arrivals: Option<&'a ArrivalRates>,
}

impl ClippedChain<'_> {
    pub fn phases(&self) -> usize {
        self.m.pow(self.clipped.len() as u32)
    }

    pub fn decode(&self, mut phase: usize) -> Vec<usize> {
        let mut digits = alloc::vec![0; self.clipped.len()];
        for d in digits.iter_mut().rev() {
            *d = phase % self.m;
            phase /= self.m;
        }
        digits
    }

    fn encode(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, d| acc * self.m + d)
    }

    fn state(&self, level: usize, digits: &[usize]) -> NetworkState {
        let mut counts = [0u32; 4];
        counts[self.own.index()] = level as u32;
        for ((q, _), d) in self.clipped.iter().zip(digits) {
            counts[q.index()] = *d as u32;
        }
        match self.arrivals {
            None => NetworkState::saturated(counts[1], counts[2]),
            Some(_) => NetworkState::unsaturated(counts[0], counts[1], counts[2], counts[3]),
        }
    }

    /// Representative network state of a `(level, phase)` pair.
    pub fn representative(&self, level: usize, phase: usize) -> NetworkState {
        self.state(level, &self.decode(phase))
    }

    pub fn build(&self) -> Result<QbdBlocks, AnalysisError> {
        if self.m < 2 {
            return Err(AnalysisError::InvalidSpec("phase cap m must be at least 2"));
        }
        if self.clipped.iter().any(|(_, r)| !(0.0..=1.0).contains(r)) {
            return Err(AnalysisError::InvalidSpec("conditional probability outside [0,1]"));
        }
        let n = self.phases();
        let mut b00 = Matrix::zeros(n, n);
        let mut b01 = Matrix::zeros(n, n);
        let mut a0 = Matrix::zeros(n, n);
        let mut a1 = Matrix::zeros(n, n);
        let mut a2 = Matrix::zeros(n, n);
        let own = self.own.index();
        let mut targets: Vec<(usize, f64)> = Vec::with_capacity(8);
        for phase in 0..n {
            let digits = self.decode(phase);
            for level in 0..2 {
                let state = self.state(level, &digits);
                for o in slot_outcomes(&state, self.params, self.arrivals) {
                    self.branch(&digits, &o.delta, &mut targets);
                    let up = o.delta[own];
                    for &(to, w) in &targets {
                        let p = o.prob * w;
                        match (level, up) {
                            (0, 0) => b00[(phase, to)] += p,
                            (0, 1) => b01[(phase, to)] += p,
                            (1, -1) => a2[(phase, to)] += p,
                            (1, 0) => a1[(phase, to)] += p,
                            (1, 1) => a0[(phase, to)] += p,
                            _ => unreachable!("own level moved by {up} from {level}"),
                        }
                    }
                }
            }
        }
        // Level 1 and every higher level share their outgoing structure.
        let b10 = a2.clone();
        Ok(QbdBlocks::new(b00, b01, b10, a0, a1, a2)?)
    }

    /// Target phases and weights of one outcome from `digits`.
    fn branch(&self, digits: &[usize], delta: &[i8; 4], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let top = self.m - 1;
        let mut partial: Vec<(Vec<usize>, f64)> = alloc::vec![(Vec::with_capacity(digits.len()), 1.0)];
        for ((q, r), &d) in self.clipped.iter().zip(digits) {
            let step = delta[q.index()];
            let options: [(usize, f64); 2] = match step {
                1 => [((d + 1).min(top), 1.0), (0, 0.0)],
                -1 if d == top => [(top - 1, *r), (top, 1.0 - *r)],
                -1 => [(d - 1, 1.0), (0, 0.0)],
                _ => [(d, 1.0), (0, 0.0)],
            };
            let mut next = Vec::with_capacity(partial.len() * 2);
            for (prefix, w) in &partial {
                for &(digit, wd) in &options {
                    if wd == 0.0 {
                        continue;
                    }
                    let mut p = prefix.clone();
                    p.push(digit);
                    next.push((p, w * wd));
                }
            }
            partial = next;
        }
        for (ds, w) in partial {
            out.push((self.encode(&ds), w));
        }
    }
}

/// `Pr{level = m-1 | level >= m-1}`; 1 when the tail carries no mass.
pub fn conditional_probability(sol: &QbdSolution, m: usize) -> f64 {
    let cap = m.saturating_sub(1).max(1);
    let at: f64 = sol.level(cap).iter().sum();
    let tail: f64 = sol.tail_mass(cap).iter().sum();
    if !(tail > 0.0) {
        return 1.0;
    }
    (at / tail).clamp(0.0, 1.0)
}

/// Phase masses at level 0 and summed over levels `>= 1`.
pub fn phase_masses(sol: &QbdSolution) -> (Vec<f64>, Vec<f64>) {
    (sol.pi0.clone(), sol.tail_mass(1))
}
