//! Discrete-time quasi-birth-death processes.
//!
//! Level 0 has its own blocks (`B00`, `B01`, `B10`); levels `>= 1` repeat
//! `A0` (up), `A1` (same level) and `A2` (down). The stationary vector is
//! matrix geometric, `pi_i = pi_1 R^(i-1)` for `i >= 1`, where `R` is the
//! minimal nonnegative solution of `R = A0 + R A1 + R^2 A2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::QbdError;
use crate::linalg::{inverse, Lu, Matrix};

/// Row-sum tolerance for block validation.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Chains whose rate matrix has spectral radius at or above `1 - STABILITY_MARGIN`
/// are treated as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct QbdBlocks {
    pub b00: Matrix,
    pub b01: Matrix,
    pub b10: Matrix,
    pub a0: Matrix,
    pub a1: Matrix,
    pub a2: Matrix,
}

impl QbdBlocks {
    pub fn new(
        b00: Matrix,
        b01: Matrix,
        b10: Matrix,
        a0: Matrix,
        a1: Matrix,
        a2: Matrix,
    ) -> Result<Self, QbdError> {
        let blocks = QbdBlocks { b00, b01, b10, a0, a1, a2 };
        blocks.validate()?;
        Ok(blocks)
    }

    /// The textbook layout where the boundary only differs in its local block.
    pub fn homogeneous(b00: Matrix, a0: Matrix, a1: Matrix, a2: Matrix) -> Result<Self, QbdError> {
        Self::new(b00, a0.clone(), a2.clone(), a0, a1, a2)
    }

    pub fn phases(&self) -> usize {
        self.a1.rows()
    }

    pub fn boundary_phases(&self) -> usize {
        self.b00.rows()
    }

    pub fn validate(&self) -> Result<(), QbdError> {
        let n0 = self.b00.rows();
        let n = self.a1.rows();
        let shapes = [
            (&self.b00, n0, n0),
            (&self.b01, n0, n),
            (&self.b10, n, n0),
            (&self.a0, n, n),
            (&self.a1, n, n),
            (&self.a2, n, n),
        ];
        if shapes.iter().any(|(m, r, c)| m.rows() != *r || m.cols() != *c) {
            return Err(QbdError::MalformedBlocks("inconsistent block shapes"));
        }
        for (m, _, _) in &shapes {
            if m.as_slice().iter().any(|v| !(0.0..=1.0 + STOCHASTIC_TOL).contains(v)) {
                return Err(QbdError::MalformedBlocks("entry outside [0,1]"));
            }
        }
        let rows_ok = |parts: &[&Matrix]| {
            let rows = parts[0].rows();
            (0..rows).all(|i| {
                let s: f64 = parts.iter().map(|m| m.row(i).iter().sum::<f64>()).sum();
                (s - 1.0).abs() <= STOCHASTIC_TOL * 10.0
            })
        };
        if !rows_ok(&[&self.b00, &self.b01]) {
            return Err(QbdError::MalformedBlocks("rows of [B00 B01] do not sum to 1"));
        }
        if !rows_ok(&[&self.b10, &self.a1, &self.a0]) {
            return Err(QbdError::MalformedBlocks("rows of [B10 A1 A0] do not sum to 1"));
        }
        if !rows_ok(&[&self.a2, &self.a1, &self.a0]) {
            return Err(QbdError::MalformedBlocks("rows of [A2 A1 A0] do not sum to 1"));
        }
        Ok(())
    }

    /// Max-abs defect of `R = A0 + R A1 + R^2 A2`.
    pub fn residual(&self, r: &Matrix) -> f64 {
        let rhs = self.a0.add(&r.mul(&self.a1)).add(&r.mul(r).mul(&self.a2));
        rhs.max_abs_diff(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RateAlgorithm {
    /// `R <- (A0 + R^2 A2)(I - A1)^-1` from `R = 0`.
    #[default]
    LinearProgression,
    /// Quadratically convergent logarithmic reduction on `G`, then
    /// `R = A0 (I - A1 - A0 G)^-1`.
    LogarithmicReduction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub algorithm: RateAlgorithm,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { tol: 1e-14, max_iter: 100_000, algorithm: RateAlgorithm::LinearProgression }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    pub r: Matrix,
    pub iterations: usize,
    pub residual: f64,
}

/// Minimal nonnegative solution of `R = A0 + R A1 + R^2 A2` by linear
/// progression. The iterates are checked to be entrywise nondecreasing.
/// Stops once both the last step and the estimated remaining error are
/// below `tol`.
pub fn solve_rate_matrix(blocks: &QbdBlocks, tol: f64, max_iter: usize) -> Result<RateMatrix, QbdError> {
    linear_progression(blocks, tol, max_iter, None)
}

/// Linear progression started from `warm` instead of zero. The start must be
/// entrywise below the minimal solution for the monotonicity check to hold;
/// callers reusing a rate matrix of nearby blocks get it only approximately,
/// so the check is skipped when a warm start is given.
pub fn linear_progression(
    blocks: &QbdBlocks,
    tol: f64,
    max_iter: usize,
    warm: Option<&Matrix>,
) -> Result<RateMatrix, QbdError> {
    let n = blocks.phases();
    if blocks.a0.max_abs() == 0.0 {
        return Ok(RateMatrix { r: Matrix::zeros(n, n), iterations: 0, residual: 0.0 });
    }
    let u = inverse(&Matrix::identity(n).sub(&blocks.a1)).map_err(|_| QbdError::Degenerate)?;
    let a0u = blocks.a0.mul(&u);
    let a2u = blocks.a2.mul(&u);
    let check_monotone = warm.is_none();
    let mut r = warm.cloned().unwrap_or_else(|| Matrix::zeros(n, n));
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let next = a0u.add(&r.mul(&r).mul(&a2u));
        if check_monotone {
            let drop = r.sub(&next).as_slice().iter().fold(0.0f64, |m, v| m.max(*v));
            if drop > 1e-12 {
                return Err(QbdError::NonMonotone(drop));
            }
        }
        let change = next.max_abs_diff(&r);
        // Remaining error of a linearly convergent sequence with observed
        // contraction c is about change * c / (1 - c).
        let c = change / last_change;
        let error = if c < 1.0 { change * c / (1.0 - c) } else { f64::INFINITY };
        last_change = change;
        r = next;
        if change == 0.0 || (change < tol && error < tol) {
            let residual = blocks.residual(&r);
            return Ok(RateMatrix { r, iterations: it, residual });
        }
        if !last_change.is_finite() {
            break;
        }
    }
    let sp = spectral_radius(&r);
    if !sp.is_finite() || sp >= 1.0 - 1e-6 {
        Err(QbdError::Unstable { spectral_radius: sp, last: r })
    } else {
        Err(QbdError::NotConverged { iterations: max_iter, last_change })
    }
}

/// Logarithmic reduction for `G`, then `R = A0 (I - A1 - A0 G)^-1`.
pub fn log_reduction(blocks: &QbdBlocks, tol: f64, max_iter: usize) -> Result<RateMatrix, QbdError> {
    let n = blocks.phases();
    if blocks.a0.max_abs() == 0.0 {
        return Ok(RateMatrix { r: Matrix::zeros(n, n), iterations: 0, residual: 0.0 });
    }
    let eye = Matrix::identity(n);
    let u = inverse(&eye.sub(&blocks.a1)).map_err(|_| QbdError::Degenerate)?;
    let mut up = u.mul(&blocks.a0);
    let mut down = u.mul(&blocks.a2);
    let mut g = down.clone();
    let mut t = up.clone();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=max_iter {
        iterations = it;
        let mix = up.mul(&down).add(&down.mul(&up));
        let m = inverse(&eye.sub(&mix)).map_err(|_| QbdError::Degenerate)?;
        up = m.mul(&up.mul(&up));
        down = m.mul(&down.mul(&down));
        let step = t.mul(&down);
        g = g.add(&step);
        t = t.mul(&up);
        // Recurrent chains drive the up-probabilities to zero, transient
        // ones the down-probabilities.
        if step.max_abs() < tol && (t.max_abs() < libm::sqrt(tol) || down.max_abs() < tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(QbdError::NotConverged { iterations, last_change: t.max_abs() });
    }
    let core_m = eye.sub(&blocks.a1).sub(&blocks.a0.mul(&g));
    let r = blocks.a0.mul(&inverse(&core_m).map_err(|_| QbdError::Degenerate)?);
    let residual = blocks.residual(&r);
    Ok(RateMatrix { r, iterations, residual })
}

pub fn rate_matrix(blocks: &QbdBlocks, opts: &RateOptions) -> Result<RateMatrix, QbdError> {
    match opts.algorithm {
        RateAlgorithm::LinearProgression => solve_rate_matrix(blocks, opts.tol, opts.max_iter),
        RateAlgorithm::LogarithmicReduction => log_reduction(blocks, opts.tol, opts.max_iter),
    }
}

/// Dominant eigenvalue modulus of a nonnegative square matrix.
///
/// Power iteration on `R + I`: its Perron root `rho + 1` strictly dominates
/// every other eigenvalue even when `R` is periodic.
pub fn spectral_radius(r: &Matrix) -> f64 {
    let n = r.rows();
    if n == 0 || r.max_abs() == 0.0 {
        return 0.0;
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0;
    for _ in 0..200_000 {
        let mut y = r.mul_vec(&x);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += xi;
        }
        let norm: f64 = y.iter().map(|v| v.abs()).sum();
        if !norm.is_finite() || norm == 0.0 {
            return norm;
        }
        // x has unit 1-norm, so the norm ratio is the growth factor.
        let next = norm - 1.0;
        y.iter_mut().for_each(|v| *v /= norm);
        x = y;
        let done = (next - est).abs() < 1e-13 * next.max(1.0);
        est = next;
        if done {
            break;
        }
    }
    est
}

#[derive(Clone, Debug, PartialEq)]
pub struct QbdSolution {
    pub pi0: Vec<f64>,
    pub pi1: Vec<f64>,
    pub r: Matrix,
    /// Max-abs defect of the rate-matrix equation.
    pub residual: f64,
    pub iterations: usize,
    pub spectral_radius: f64,
    /// `(I - R)^-1`
    pub fundamental: Matrix,
}

/// Stationary distribution given the rate matrix. Solves the boundary
/// balance equations with one equation replaced by normalization.
pub fn stationary(blocks: &QbdBlocks, rate: RateMatrix) -> Result<QbdSolution, QbdError> {
    let RateMatrix { r, iterations, residual } = rate;
    let n0 = blocks.boundary_phases();
    let n = blocks.phases();
    let sp = spectral_radius(&r);
    if !(sp < 1.0 - STABILITY_MARGIN) {
        return Err(QbdError::Unstable { spectral_radius: sp, last: r });
    }
    let eye = Matrix::identity(n);
    let fundamental = match inverse(&eye.sub(&r)) {
        Ok(f) if f.min_entry() >= -1e-8 * f.max_abs() => f,
        _ => return Err(QbdError::Unstable { spectral_radius: sp, last: r }),
    };
    if blocks.b00[(0, 0)] == 1.0 {
        // An absorbing empty state: the chain started empty never leaves it.
        let mut pi0 = vec![0.0; n0];
        pi0[0] = 1.0;
        let pi1 = vec![0.0; n];
        return Ok(QbdSolution { pi0, pi1, r, residual, iterations, spectral_radius: sp, fundamental });
    }
    let ones = vec![1.0; n];
    let mass_weights = fundamental.mul_vec(&ones);

    // Unknown row vector x = [pi0 | pi1]; x M = 0 with
    //   M = [ B00 - I   B01            ]
    //       [ B10       A1 - I + R A2  ]
    let dim = n0 + n;
    let mut mt = Matrix::zeros(dim, dim); // M transposed
    let local = blocks.a1.sub(&eye).add(&r.mul(&blocks.a2));
    for i in 0..n0 {
        for j in 0..n0 {
            mt[(j, i)] = blocks.b00[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
        for j in 0..n {
            mt[(n0 + j, i)] = blocks.b01[(i, j)];
        }
    }
    for i in 0..n {
        for j in 0..n0 {
            mt[(j, n0 + i)] = blocks.b10[(i, j)];
        }
        for j in 0..n {
            mt[(n0 + j, n0 + i)] = local[(i, j)];
        }
    }
    // Normalization replaces the first balance equation.
    for j in 0..n0 {
        mt[(0, j)] = 1.0;
    }
    for j in 0..n {
        mt[(0, n0 + j)] = mass_weights[j];
    }
    let mut rhs = vec![0.0; dim];
    rhs[0] = 1.0;
    let x = Lu::factor(&mt)
        .map_err(|_| QbdError::MalformedBlocks("boundary system is rank deficient"))?
        .solve(&rhs);
    let clean = |v: f64| if v < 0.0 && v > -1e-12 { 0.0 } else { v };
    let pi0: Vec<f64> = x[..n0].iter().map(|&v| clean(v)).collect();
    let pi1: Vec<f64> = x[n0..].iter().map(|&v| clean(v)).collect();
    if pi0.iter().chain(&pi1).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(QbdError::MalformedBlocks("negative stationary mass"));
    }
    Ok(QbdSolution { pi0, pi1, r, residual, iterations, spectral_radius: sp, fundamental })
}

/// Rate matrix plus stationary distribution.
pub fn solve(blocks: &QbdBlocks, opts: &RateOptions) -> Result<QbdSolution, QbdError> {
    stationary(blocks, rate_matrix(blocks, opts)?)
}

impl QbdSolution {
    pub fn phases(&self) -> usize {
        self.pi1.len()
    }

    /// Stationary vector of level `i`.
    pub fn level(&self, i: usize) -> Vec<f64> {
        match i {
            0 => self.pi0.clone(),
            _ => {
                let mut v = self.pi1.clone();
                for _ in 1..i {
                    v = self.r.vec_mul(&v);
                }
                v
            }
        }
    }

    pub fn level_mass(&self, i: usize) -> f64 {
        self.level(i).iter().sum()
    }

    /// Phase vector of `sum_{i >= from} pi_i`.
    pub fn tail_mass(&self, from_level: usize) -> Vec<f64> {
        if from_level == 0 {
            let mut v = self.tail_mass(1);
            for (a, b) in v.iter_mut().zip(&self.pi0) {
                *a += b;
            }
            return v;
        }
        let start = self.level(from_level);
        self.fundamental.vec_mul(&start)
    }

    /// Mean level index, `pi_1 (I - R)^-2 1`.
    pub fn expected_level(&self) -> f64 {
        let v = self.fundamental.vec_mul(&self.fundamental.vec_mul(&self.pi1));
        v.iter().sum()
    }

    /// Total probability mass; should be 1.
    pub fn total_mass(&self) -> f64 {
        self.pi0.iter().sum::<f64>() + self.tail_mass(1).iter().sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scalar_blocks() -> QbdBlocks {
        QbdBlocks::new(
            Matrix::scalar(0.8),
            Matrix::scalar(0.2),
            Matrix::scalar(0.3),
            Matrix::scalar(0.2),
            Matrix::scalar(0.5),
            Matrix::scalar(0.3),
        )
        .unwrap()
    }

    #[test]
    fn scalar_rate_matrix() {
        let rm = solve_rate_matrix(&scalar_blocks(), 1e-14, 100_000).unwrap();
        assert!((rm.r[(0, 0)] - 2.0 / 3.0).abs() <= 1e-12);
        let lr = log_reduction(&scalar_blocks(), 1e-15, 100).unwrap();
        assert!((lr.r[(0, 0)] - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn scalar_stationary() {
        let b = scalar_blocks();
        let sol = solve(&b, &RateOptions { tol: 1e-15, ..Default::default() }).unwrap();
        assert!((sol.pi0[0] - 1.0 / 3.0).abs() < 1e-12);
        for i in 1..6 {
            let want = (1.0 / 3.0) * (2.0f64 / 3.0).powi(i as i32);
            assert!((sol.level_mass(i) - want).abs() < 1e-12);
        }
        assert!((sol.tail_mass(2)[0] - 4.0 / 9.0).abs() < 1e-12);
        assert!((sol.tail_mass(1)[0] - (1.0 - sol.pi0[0])).abs() < 1e-12);
        assert!((sol.tail_mass(0)[0] - 1.0).abs() < 1e-12);
        assert!((sol.expected_level() - 2.0).abs() < 1e-11);
        assert!((sol.spectral_radius - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_upward_transitions() {
        let b = QbdBlocks::new(
            Matrix::scalar(0.6),
            Matrix::scalar(0.4),
            Matrix::scalar(0.5),
            Matrix::scalar(0.0),
            Matrix::scalar(0.5),
            Matrix::scalar(0.5),
        )
        .unwrap();
        let sol = solve(&b, &RateOptions::default()).unwrap();
        assert_eq!(sol.r[(0, 0)], 0.0);
        // pi0 * 0.4 = pi1 * 0.5
        assert!((sol.pi0[0] - 5.0 / 9.0).abs() < 1e-14);
        assert!((sol.pi1[0] - 4.0 / 9.0).abs() < 1e-14);
        assert!((sol.expected_level() - sol.pi1[0]).abs() < 1e-15);
    }

    #[test]
    fn unstable_chain_is_reported() {
        let b = QbdBlocks::homogeneous(
            Matrix::scalar(0.6),
            Matrix::scalar(0.4),
            Matrix::scalar(0.3),
            Matrix::scalar(0.3),
        )
        .unwrap();
        let err = solve(&b, &RateOptions { max_iter: 2_000, ..Default::default() }).unwrap_err();
        assert!(matches!(err, QbdError::Unstable { spectral_radius, .. } if spectral_radius > 0.99));
        let lr = log_reduction(&b, 1e-12, 200).unwrap();
        assert!(matches!(stationary(&b, lr), Err(QbdError::Unstable { .. })));
    }

    #[test]
    fn malformed_blocks() {
        let bad = QbdBlocks::new(
            Matrix::scalar(0.8),
            Matrix::scalar(0.1),
            Matrix::scalar(0.3),
            Matrix::scalar(0.2),
            Matrix::scalar(0.5),
            Matrix::scalar(0.3),
        );
        assert!(matches!(bad, Err(QbdError::MalformedBlocks(_))));
    }

    #[test]
    fn spectral_radius_basics() {
        assert_eq!(spectral_radius(&Matrix::zeros(3, 3)), 0.0);
        assert!((spectral_radius(&Matrix::scalar(2.0 / 3.0)) - 2.0 / 3.0).abs() < 1e-14);
        // Periodic matrix, eigenvalues +-0.5.
        let p = Matrix::from_rows(&[&[0.0, 0.5], &[0.5, 0.0]]);
        assert!((spectral_radius(&p) - 0.5).abs() < 1e-10);
    }
}
