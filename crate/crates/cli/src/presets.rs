//! Parameter sets of the published figures.
//!
//! Where a caption leaves a value open the preset fills it in:
//! - fig8 compares q1 = q2 = 0.4 against q1 = q2 = q for k = 1, 2, 3, with
//!   g2 capped at 0.33 so that g1 = 3 g2 stays a probability.
//! - fig9 uses q1 = q2 = 0.4 as the reduced pair.
//! - fig16 uses q = 0.7 and reduced q1 = q2 = 0.4; fig17 reduces q1 = q2 to 0.5.
//! - fig18 and fig19 sweep lam1 = lam2 up to 0.12, inside all three regions.

use std::fmt;
use std::str::FromStr;

use twrn_core::Mode;

use crate::config::{ParamBlock, Sweep, SweepVar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Fig8,
    Fig9,
    Fig10,
    Fig11,
    Fig12,
    Fig13,
    Fig14,
    Fig15,
    Fig16,
    Fig17,
    Fig18,
    Fig19,
}

impl Preset {
    pub const ALL: [Preset; 12] = [
        Preset::Fig8,
        Preset::Fig9,
        Preset::Fig10,
        Preset::Fig11,
        Preset::Fig12,
        Preset::Fig13,
        Preset::Fig14,
        Preset::Fig15,
        Preset::Fig16,
        Preset::Fig17,
        Preset::Fig18,
        Preset::Fig19,
    ];

    fn number(self) -> usize {
        Preset::ALL.iter().position(|p| *p == self).unwrap() + 8
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fig{}", self.number())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| format!("unknown preset {s:?} (fig8 .. fig19)"))
    }
}

/// Series to run and the sweep shared by all of them.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetSpec {
    pub series: Vec<ParamBlock>,
    pub sweep: Option<Sweep>,
    pub m: Option<usize>,
}

fn nc(k: f64, q: f64, q1: f64, q2: f64) -> ParamBlock {
    ParamBlock { mode: Some(Mode::Nc), k: Some(k), q: Some(q), q1: Some(q1), q2: Some(q2), ..Default::default() }
}

fn non_nc(k: f64, q: f64) -> ParamBlock {
    ParamBlock { mode: Some(Mode::NonNc), k: Some(k), q: Some(q), ..Default::default() }
}

fn with_g2(mut b: ParamBlock, g2: f64) -> ParamBlock {
    b.g2 = Some(g2);
    b
}

fn sweep(var: SweepVar, from: f64, to: f64, step: f64) -> Option<Sweep> {
    Some(Sweep { var, from, to, step })
}

/// NonNC, NC with q1 = q2 = q, NC with reduced q1 = q2.
fn region_family(k: f64, g2: f64, q: f64, reduced: f64) -> Vec<ParamBlock> {
    vec![
        with_g2(non_nc(k, q), g2),
        with_g2(nc(k, q, q, q), g2),
        with_g2(nc(k, q, reduced, reduced), g2),
    ]
}

impl Preset {
    pub fn spec(self) -> PresetSpec {
        let g2_sweep = sweep(SweepVar::G2, 0.01, 0.49, 0.01);
        let (series, sweep, m) = match self {
            Preset::Fig8 => (
                [1.0, 2.0, 3.0]
                    .into_iter()
                    .flat_map(|k| [nc(k, 0.75, 0.75, 0.75), nc(k, 0.75, 0.4, 0.4)])
                    .collect(),
                sweep(SweepVar::G2, 0.01, 0.33, 0.01),
                None,
            ),
            Preset::Fig9 => (vec![nc(2.0, 0.75, 0.75, 0.75), nc(2.0, 0.75, 0.4, 0.4)], g2_sweep, None),
            Preset::Fig10 => ([0.45, 0.55, 0.75].into_iter().map(|q1| nc(2.0, 0.75, q1, 0.75)).collect(), g2_sweep, None),
            Preset::Fig11 => (
                vec![with_g2(nc(2.0, 0.75, 0.75, 0.75), 0.25)],
                sweep(SweepVar::Q1, 0.2, 0.75, 0.05),
                None,
            ),
            Preset::Fig12 => ([0.05, 0.35, 1.0].into_iter().map(|q2| nc(2.0, 0.75, 0.75, q2)).collect(), g2_sweep, None),
            Preset::Fig13 => (vec![with_g2(nc(2.0, 0.75, 0.75, 0.75), 0.25)], sweep(SweepVar::Q2, 0.05, 1.0, 0.05), None),
            Preset::Fig14 => (vec![with_g2(nc(2.0, 0.75, 0.75, 0.75), 0.25)], sweep(SweepVar::Q, 0.4, 1.0, 0.05), None),
            Preset::Fig15 => (region_family(1.0, 0.5, 0.7, 0.4), None, Some(6)),
            Preset::Fig16 => (region_family(2.0, 0.25, 0.7, 0.4), None, Some(6)),
            Preset::Fig17 => (region_family(2.0, 0.1, 0.9, 0.5), None, Some(6)),
            Preset::Fig18 | Preset::Fig19 => {
                (region_family(1.0, 0.5, 0.7, 0.4), sweep(SweepVar::Lam, 0.01, 0.12, 0.01), Some(6))
            }
        };
        PresetSpec { series, sweep, m }
    }
}

/// Saturated verification grid: q = 0.75, k = 2, g2 in {0.1, 0.25, 0.4},
/// q1 = q2 in {0.75, 0.4}, m = 4.
pub fn default_grid() -> PresetSpec {
    PresetSpec {
        series: vec![nc(2.0, 0.75, 0.75, 0.75), nc(2.0, 0.75, 0.4, 0.4)],
        sweep: sweep(SweepVar::G2, 0.1, 0.4, 0.15),
        m: Some(4),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
        }
        assert!("fig7".parse::<Preset>().is_err());
    }

    #[test]
    fn every_point_resolves() {
        for p in Preset::ALL {
            let spec = p.spec();
            for s in &spec.series {
                let values = spec.sweep.map(|w| w.values()).unwrap_or_default();
                for v in values {
                    let mut b = *s;
                    b.set(spec.sweep.unwrap().var, v);
                    b.resolve().unwrap_or_else(|e| panic!("{p} {v}: {e}"));
                }
            }
        }
    }
}
