//! Small dense strictly-convex quadratic programs solved by active-set
//! enumeration with KKT verification.
//!
//! Minimizes ½ zᵀQz + qᵀz subject to A z ≤ b. Candidate active sets are
//! enumerated in order of cardinality, then lexicographically; each induces
//! an equality-constrained KKT system. The first candidate that is primal
//! feasible with nonnegative multipliers is the unique global minimizer of
//! the strictly convex program, so the scan order doubles as the tie-break
//! (smallest cardinality, then smallest index set) and the accepted
//! candidate carries its own certificate.
//!
//! Only subsets of size ≤ d are tried: the negative cost gradient at the
//! optimum lies in the cone of the active rows, and by Carathéodory some
//! linearly independent subset of at most d of them reproduces it with
//! nonnegative multipliers. Singular subsets are skipped; their independent
//! sub-subsets appear earlier or later in the same scan.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::check_spd;
use crate::num::Real;

/// Largest supported number of decision variables.
pub const MAX_VARS: usize = 8;
/// Largest supported number of constraint rows (16-gon input sets included).
pub const MAX_ROWS: usize = 24;

/// ½ zᵀ·quad·z + linᵀz subject to rows·z ≤ rhs.
#[derive(Clone, Debug)]
pub struct QpProblem<S: Real> {
    pub quad: DMatrix<S>,
    pub lin: DVector<S>,
    pub rows: DMatrix<S>,
    pub rhs: DVector<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    Infeasible,
}

/// Minimizer with its certificate. `multipliers` is aligned with
/// `active_set`; rows not listed carry a zero multiplier. An infeasible
/// problem yields a zero `z`, empty sets, and `QpStatus::Infeasible`.
#[derive(Clone, Debug)]
pub struct QpSolution<S: Real> {
    pub z: DVector<S>,
    pub active_set: Vec<usize>,
    pub multipliers: Vec<S>,
    pub status: QpStatus,
}

impl<S: Real> QpSolution<S> {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

impl<S: Real> QpProblem<S> {
    pub fn new(quad: DMatrix<S>, lin: DVector<S>, rows: DMatrix<S>, rhs: DVector<S>) -> Result<Self> {
        let p = Self {
            quad,
            lin,
            rows,
            rhs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.quad.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.quad.nrows();
        if d == 0 || d > MAX_VARS {
            return Err(Error::Envelope(format!(
                "dimension {d} outside 1..={MAX_VARS}"
            )));
        }
        let k = self.rows.nrows();
        if k > MAX_ROWS {
            return Err(Error::Envelope(format!("{k} rows exceed {MAX_ROWS}")));
        }
        if self.lin.len() != d {
            return Err(Error::Dimension {
                context: "QpProblem linear term",
                expected: d,
                actual: self.lin.len(),
            });
        }
        if k > 0 && self.rows.ncols() != d {
            return Err(Error::Dimension {
                context: "QpProblem constraint columns",
                expected: d,
                actual: self.rows.ncols(),
            });
        }
        if self.rhs.len() != k {
            return Err(Error::Dimension {
                context: "QpProblem constraint bounds",
                expected: k,
                actual: self.rhs.len(),
            });
        }
        let finite = |v: S| v.as_f64().is_finite();
        if !(self.quad.iter().all(|&v| finite(v))
            && self.lin.iter().all(|&v| finite(v))
            && self.rows.iter().all(|&v| finite(v))
            && self.rhs.iter().all(|&v| finite(v)))
        {
            return Err(Error::Config("QP data must be finite".into()));
        }
        check_spd("QP cost matrix", &self.quad)?;
        Ok(())
    }

    pub fn objective(&self, z: &DVector<S>) -> S {
        (z.dot(&(&self.quad * z))) / S::of(2.0) + self.lin.dot(z)
    }
}

/// Absolute-tolerance scale used by all feasibility and certificate checks.
fn rhs_scale<S: Real>(p: &QpProblem<S>) -> S {
    let mut scale = S::zero();
    for &v in p.rhs.iter() {
        scale = scale.max(v.abs());
    }
    S::one() + scale
}

pub fn solve_qp<S: Real>(p: &QpProblem<S>) -> Result<QpSolution<S>> {
    p.validate()?;
    let d = p.dim();
    let k = p.n_rows();
    let scale = rhs_scale(p);
    let feas_tol = S::tol_feas() * scale;
    let cert_tol = S::tol_kkt() * scale;

    let max_size = d.min(k);
    let n_max = d + max_size;
    let mut kkt = vec![S::zero(); n_max * n_max];
    let mut rhs = vec![S::zero(); n_max];
    let mut subset = vec![0usize; max_size];

    for size in 0..=max_size {
        init_subset(&mut subset[..size]);
        loop {
            let combo = &subset[..size];
            if let Some((z, mu)) = solve_kkt(p, combo, &mut kkt, &mut rhs) {
                if certify(p, &z, combo, &mu, feas_tol, cert_tol) {
                    let multipliers = mu.iter().map(|&m| m.max(S::zero())).collect();
                    return Ok(QpSolution {
                        z,
                        active_set: combo.to_vec(),
                        multipliers,
                        status: QpStatus::Solved,
                    });
                }
            }
            if !advance_subset(&mut subset[..size], k) {
                break;
            }
        }
    }

    Ok(QpSolution {
        z: DVector::zeros(d),
        active_set: Vec::new(),
        multipliers: Vec::new(),
        status: QpStatus::Infeasible,
    })
}

fn init_subset(subset: &mut [usize]) {
    for (i, s) in subset.iter_mut().enumerate() {
        *s = i;
    }
}

/// Advances `subset` to the lexicographically next size-|subset| combination
/// of {0, …, k−1}; returns false when exhausted.
fn advance_subset(subset: &mut [usize], k: usize) -> bool {
    let s = subset.len();
    let mut i = s;
    while i > 0 {
        i -= 1;
        if subset[i] < k - (s - i) {
            subset[i] += 1;
            for j in (i + 1)..s {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Solves the equality-constrained KKT system for one candidate active set.
/// Returns None when the system is (near-)singular, e.g. dependent rows.
fn solve_kkt<S: Real>(
    p: &QpProblem<S>,
    combo: &[usize],
    kkt: &mut [S],
    rhs: &mut [S],
) -> Option<(DVector<S>, Vec<S>)> {
    let d = p.dim();
    let s = combo.len();
    let n = d + s;
    for v in kkt[..n * n].iter_mut() {
        *v = S::zero();
    }
    for i in 0..d {
        for j in 0..d {
            kkt[i * n + j] = p.quad[(i, j)];
        }
        rhs[i] = -p.lin[i];
    }
    for (a, &row) in combo.iter().enumerate() {
        for j in 0..d {
            let v = p.rows[(row, j)];
            kkt[j * n + (d + a)] = v;
            kkt[(d + a) * n + j] = v;
        }
        rhs[d + a] = p.rhs[row];
    }
    if !solve_dense(&mut kkt[..n * n], &mut rhs[..n], n) {
        return None;
    }
    let z = DVector::from_iterator(d, rhs[..d].iter().copied());
    let mu = rhs[d..n].to_vec();
    Some((z, mu))
}

/// Full KKT certificate: nonnegative multipliers, primal feasibility on all
/// rows, stationarity, and complementary slackness on the candidate rows.
fn certify<S: Real>(
    p: &QpProblem<S>,
    z: &DVector<S>,
    combo: &[usize],
    mu: &[S],
    feas_tol: S,
    cert_tol: S,
) -> bool {
    if mu.iter().any(|&m| m < -cert_tol) {
        return false;
    }
    let d = p.dim();
    for row in 0..p.n_rows() {
        let mut dot = S::zero();
        for j in 0..d {
            dot += p.rows[(row, j)] * z[j];
        }
        if dot - p.rhs[row] > feas_tol {
            return false;
        }
    }
    let mut residual = &p.quad * z + &p.lin;
    for (a, &row) in combo.iter().enumerate() {
        for j in 0..d {
            residual[j] += p.rows[(row, j)] * mu[a];
        }
    }
    if residual.amax() > cert_tol {
        return false;
    }
    for (a, &row) in combo.iter().enumerate() {
        let mut dot = S::zero();
        for j in 0..d {
            dot += p.rows[(row, j)] * z[j];
        }
        // Multipliers grow with the relaxation penalty, so the product test
        // is scaled by |μ|: equivalently, active rows must be tight.
        if (mu[a] * (p.rhs[row] - dot)).abs() > cert_tol * (S::one() + mu[a].abs()) {
            return false;
        }
    }
    true
}

/// In-place Gaussian elimination with partial pivoting on a row-major n×n
/// system; returns false on a negligible pivot.
fn solve_dense<S: Real>(a: &mut [S], b: &mut [S], n: usize) -> bool {
    let mut scale = S::zero();
    for &v in a[..n * n].iter() {
        scale = scale.max(v.abs());
    }
    let pivot_tol = S::eps() * S::of((4 * n) as f64) * (S::one() + scale);

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = r;
            }
        }
        if pivot_abs <= pivot_tol {
            return false;
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for r in (col + 1)..n {
            let factor = a[r * n + col] / pivot;
            if factor == S::zero() {
                continue;
            }
            a[r * n + col] = S::zero();
            for j in (col + 1)..n {
                let v = a[col * n + j];
                a[r * n + j] -= factor * v;
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in (col + 1)..n {
            acc -= a[col * n + j] * b[j];
        }
        b[col] = acc / a[col * n + col];
    }
    true
}

/// Strict-feasibility probe: solves min ½‖z‖² over the constraint set
/// tightened by a margin, then verifies the point strictly satisfies the
/// original rows. Mirrors the analytic argument for the relaxed CLF-CBF
/// program (pick a point strictly inside the safety half-spaces, enlarge
/// the slack), but works for any row set inside the envelope.
pub fn check_strict_feasibility<S: Real>(p: &QpProblem<S>) -> Result<(bool, Option<DVector<S>>)> {
    p.validate()?;
    let d = p.dim();
    if p.n_rows() == 0 {
        return Ok((true, Some(DVector::zeros(d))));
    }
    let scale = rhs_scale(p);
    for margin in [S::of(1e-6), S::of(1e-9)] {
        let tightened = QpProblem {
            quad: DMatrix::identity(d, d),
            lin: DVector::zeros(d),
            rows: p.rows.clone(),
            rhs: p.rhs.map(|v| v - margin * scale),
        };
        let sol = solve_qp(&tightened)?;
        if sol.is_solved() && strictly_inside(p, &sol.z) {
            return Ok((true, Some(sol.z)));
        }
    }
    Ok((false, None))
}

fn strictly_inside<S: Real>(p: &QpProblem<S>, z: &DVector<S>) -> bool {
    let az = &p.rows * z;
    az.iter().zip(p.rhs.iter()).all(|(&lhs, &rhs)| lhs < rhs)
}
