use core::fmt;

use crate::error::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Simulated,
    Oracle,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Analytic => "analytic",
            Provenance::Simulated => "sim",
            Provenance::Oracle => "oracle",
        })
    }
}

/// Joint emptiness of the two virtual buffers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OccupancySplit {
    pub empty: f64,
    pub only1: f64,
    pub only2: f64,
    pub both: f64,
}

impl OccupancySplit {
    pub fn total(&self) -> f64 {
        self.empty + self.only1 + self.only2 + self.both
    }

    pub fn max_abs_diff(&self, other: &OccupancySplit) -> f64 {
        [
            self.empty - other.empty,
            self.only1 - other.only1,
            self.only2 - other.only2,
            self.both - other.both,
        ]
        .iter()
        .fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Packets delivered by the relay per slot.
    pub s: f64,
    /// Relay attempts per slot; a coded attempt counts once.
    pub p: f64,
    /// Mean number of packets held by the relay.
    pub n_r: f64,
    /// Relay queueing delay in slots, `n_r / s`.
    pub d: f64,
    pub occupancy: OccupancySplit,
    /// Mean end-node backlogs, unsaturated models only.
    pub end_occupancy: Option<[f64; 2]>,
    pub provenance: Provenance,
}

/// Little's law. Zero occupancy with zero throughput gives zero delay.
pub fn little_delay(n_r: f64, s: f64) -> Result<f64, AnalysisError> {
    if s > 0.0 {
        Ok(n_r / s)
    } else if n_r <= 0.0 {
        Ok(0.0)
    } else {
        Err(AnalysisError::UndefinedDelay)
    }
}
