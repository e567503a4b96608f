//! CSV rows. Floats use the shortest representation that parses back to
//! the same value, so identical results give identical bytes.

use std::fmt::Write;

use twrn_core::unsaturated::StabilityBoundary;
use twrn_core::{ArrivalRates, Metrics, ProtocolParams, Provenance};

pub const HEADER: &str = "mode,g1,g2,q,q1,q2,lam1,lam2,m,provenance,S,P,N_R,D,converged,iterations,seed,slots,ci_S,ci_P,ci_D";

/// The first five columns are the stability schema; the rest echo the
/// series parameters so several series can share a file.
pub const STABILITY_HEADER: &str = "lam1,lam2,m,epsilon,mode,q,q1,q2,g1,g2";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub params: ProtocolParams,
    pub arrivals: Option<ArrivalRates>,
}

/// One result line; `None` fields print empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub point: Point,
    pub m: Option<usize>,
    pub provenance: Provenance,
    pub metrics: Option<Metrics>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub slots: Option<u64>,
    /// Half-widths for S, P, D.
    pub ci: Option<[f64; 3]>,
    /// Diagnostic for the summary, not written to the CSV.
    pub note: Option<String>,
}

impl Row {
    pub fn new(point: Point, provenance: Provenance) -> Row {
        Row {
            point,
            m: None,
            provenance,
            metrics: None,
            converged: None,
            iterations: None,
            seed: None,
            slots: None,
            ci: None,
            note: None,
        }
    }

    /// A point counts as failed when it has no metrics or did not converge.
    pub fn failed(&self) -> bool {
        self.metrics.is_none() || self.converged == Some(false)
    }
}

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".to_string()
    } else {
        "inf".to_string()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn row_line(r: &Row) -> String {
    let p = &r.point.params;
    let a = r.point.arrivals;
    let mut cols = vec![
        p.mode.to_string(),
        num(p.g1),
        num(p.g2),
        num(p.q),
        num(p.q1),
        num(p.q2),
        opt(a.map(|a| num(a.lam1))),
        opt(a.map(|a| num(a.lam2))),
        opt(r.m),
        r.provenance.to_string(),
    ];
    match &r.metrics {
        Some(m) => cols.extend([num(m.s), num(m.p), num(m.n_r), num(m.d)]),
        None => cols.extend(std::iter::repeat_n(String::new(), 4)),
    }
    cols.extend([opt(r.converged), opt(r.iterations), opt(r.seed), opt(r.slots)]);
    match r.ci {
        Some(ci) => cols.extend(ci.iter().map(|v| num(*v))),
        None => cols.extend(std::iter::repeat_n(String::new(), 3)),
    }
    cols.join(",")
}

pub fn rows_csv(rows: &[Row]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&row_line(r));
        out.push('\n');
    }
    out
}

pub fn stability_csv(boundaries: &[StabilityBoundary]) -> String {
    let mut out = String::from(STABILITY_HEADER);
    out.push('\n');
    for b in boundaries {
        let p = &b.params;
        for (lam1, lam2) in &b.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                num(*lam1),
                num(*lam2),
                b.m,
                num(b.epsilon),
                b.mode,
                num(p.q),
                num(p.q1),
                num(p.q2),
                num(p.g1),
                num(p.g2)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fields_keep_column_count() {
        let params = ProtocolParams::nc(0.5, 0.25, 0.75, 0.4, 0.4).unwrap();
        let r = Row::new(Point { params, arrivals: None }, Provenance::Analytic);
        let line = row_line(&r);
        assert_eq!(line.split(',').count(), HEADER.split(',').count());
        assert!(line.starts_with("nc,0.5,0.25,0.75,0.4,0.4,,,,analytic,"));
        assert!(r.failed());
    }
}
