//! CLF-CBF quadratic-program synthesis: adaptive constraint rows built from
//! the current estimate, the robust worst-case baseline rows, input bounds,
//! and the assembled program over the decision vector (u, δ).

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::model::{
    safety_regressor, stability_regressor, AffineSystem, BarrierSpec, LyapunovSpec, MatrixFn,
    StateFn,
};
use crate::num::Real;
use crate::qp::{solve_qp, QpProblem, QpSolution};

/// Linear input-constraint rows a·u ≤ b. The Euclidean ball is approximated
/// from the inside by a regular 16-gon whose vertices lie on the sphere, so
/// the radius loss is 1 − cos(π/16) < 2% on the facets and zero at vertices.
#[derive(Clone, Debug, Default)]
pub struct InputBounds<S: Real> {
    rows: Vec<(RowDVector<S>, S)>,
}

const NORM_BALL_SIDES: usize = 16;

impl<S: Real> InputBounds<S> {
    pub fn none() -> Self {
        Self { rows: Vec::new() }
    }

    /// Per-component bounds |uᵢ| ≤ limits[i].
    pub fn box_symmetric(limits: &[S]) -> Result<Self> {
        let m = limits.len();
        let mut rows = Vec::with_capacity(2 * m);
        for (i, &l) in limits.iter().enumerate() {
            if l <= S::zero() {
                return Err(Error::Config("input box limits must be positive".into()));
            }
            let mut upper = RowDVector::zeros(m);
            upper[i] = S::one();
            rows.push((upper, l));
            let mut lower = RowDVector::zeros(m);
            lower[i] = -S::one();
            rows.push((lower, l));
        }
        Ok(Self { rows })
    }

    /// Planar ‖u‖ ≤ radius as the inscribed regular 16-gon.
    pub fn norm_ball(radius: S) -> Result<Self> {
        if radius <= S::zero() {
            return Err(Error::Config("input norm radius must be positive".into()));
        }
        let n = NORM_BALL_SIDES;
        let step = S::two_pi() / S::of(n as f64);
        let half = step / S::of(2.0);
        let apothem = radius * half.cos();
        let mut rows = Vec::with_capacity(n);
        for j in 0..n {
            let angle = half + step * S::of(j as f64);
            let mut row = RowDVector::zeros(2);
            row[0] = angle.cos();
            row[1] = angle.sin();
            rows.push((row, apothem));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(RowDVector<S>, S)] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Cost and constraint wiring of the filter: input-cost map R(x), relaxation
/// penalty ρ on the stability slack, optional nominal input u_n(x) realized
/// through the linear term −R u_n, and the input bounds.
pub struct ControllerConfig<S: Real> {
    input_dim: usize,
    weight: MatrixFn<S>,
    relax_weight: S,
    nominal: Option<StateFn<S>>,
    bounds: InputBounds<S>,
}

impl<S: Real> ControllerConfig<S> {
    pub fn new(
        input_dim: usize,
        weight: MatrixFn<S>,
        relax_weight: S,
        nominal: Option<StateFn<S>>,
        bounds: InputBounds<S>,
    ) -> Result<Self> {
        if relax_weight <= S::zero() {
            return Err(Error::Config("relaxation penalty must be positive".into()));
        }
        Ok(Self {
            input_dim,
            weight,
            relax_weight,
            nominal,
            bounds,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weight_at(&self, x: &DVector<S>) -> DMatrix<S> {
        (self.weight)(x)
    }

    pub fn relax_weight(&self) -> S {
        self.relax_weight
    }

    pub fn nominal_at(&self, x: &DVector<S>) -> DVector<S> {
        match &self.nominal {
            Some(n) => n(x),
            None => DVector::zeros(self.input_dim),
        }
    }

    pub fn bounds(&self) -> &InputBounds<S> {
        &self.bounds
    }
}

/// Fixed estimate θ_e and ball radius of the worst-case filter.
#[derive(Clone, Debug)]
pub struct RobustConfig<S: Real> {
    theta_e: DVector<S>,
    theta_max: S,
}

impl<S: Real> RobustConfig<S> {
    /// θ_max = 0 is allowed and collapses the margin to |ψθ_e|, the
    /// known-parameter degenerate case.
    pub fn new(theta_e: DVector<S>, theta_max: S) -> Result<Self> {
        if theta_max < S::zero() {
            return Err(Error::Config("parameter ball radius must be nonnegative".into()));
        }
        Ok(Self { theta_e, theta_max })
    }

    pub fn theta_e(&self) -> &DVector<S> {
        &self.theta_e
    }

    pub fn theta_max(&self) -> S {
        self.theta_max
    }
}

/// Provenance of a constraint row in the assembled program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Safety(usize),
    Stability,
    InputBound(usize),
    SlackNonneg,
}

/// One row coeffs·(u, δ) ≤ bound.
#[derive(Clone, Debug)]
pub struct ConstraintRow<S: Real> {
    pub coeffs: RowDVector<S>,
    pub bound: S,
    pub kind: RowKind,
}

/// Worst-case margin σ = max_{ϑ∈Θ} |ψ(x)(ϑ − θ_e)| = ‖ψ‖θ_max + |ψθ_e| for
/// the Euclidean ball Θ centered at the origin.
pub fn robust_margin<S: Real>(
    sys: &AffineSystem<S>,
    barrier: &BarrierSpec<S>,
    x: &DVector<S>,
    rcfg: &RobustConfig<S>,
) -> S {
    let psi = safety_regressor(sys, barrier, x);
    psi.norm() * rcfg.theta_max + (psi * rcfg.theta_e()).x.abs()
}

#[allow(clippy::too_many_arguments)]
fn filter_rows<S: Real>(
    sys: &AffineSystem<S>,
    barriers: &[BarrierSpec<S>],
    lyap: &LyapunovSpec<S>,
    cfg: &ControllerConfig<S>,
    t: S,
    x: &DVector<S>,
    estimate: &DVector<S>,
    margin: impl Fn(&BarrierSpec<S>) -> S,
) -> Vec<ConstraintRow<S>> {
    let m = cfg.input_dim();
    let f = sys.drift_at(t, x);
    let g = sys.input_map_at(x);
    let mut rows = Vec::with_capacity(barriers.len() + 1 + cfg.bounds().rows().len());

    for (i, barrier) in barriers.iter().enumerate() {
        let grad = barrier.grad(x);
        let lf = grad.dot(&f);
        let lg = grad.transpose() * &g;
        let psi = safety_regressor(sys, barrier, x);
        let mut coeffs = RowDVector::zeros(m + 1);
        for j in 0..m {
            coeffs[j] = -lg[j];
        }
        let bound = lf + (psi * estimate).x + barrier.alpha_of(barrier.h(x)) - margin(barrier);
        rows.push(ConstraintRow {
            coeffs,
            bound,
            kind: RowKind::Safety(i),
        });
    }

    let vgrad = lyap.grad(x);
    let lfv = vgrad.dot(&f);
    let lgv = vgrad.transpose() * &g;
    let phi = stability_regressor(sys, lyap, x);
    let mut coeffs = RowDVector::zeros(m + 1);
    for j in 0..m {
        coeffs[j] = lgv[j];
    }
    coeffs[m] = -S::one();
    let bound = -lfv - (phi * estimate).x - lyap.lambda() * lyap.v(x);
    rows.push(ConstraintRow {
        coeffs,
        bound,
        kind: RowKind::Stability,
    });

    for (j, (row, b)) in cfg.bounds().rows().iter().enumerate() {
        let mut coeffs = RowDVector::zeros(m + 1);
        for c in 0..m {
            coeffs[c] = row[c];
        }
        rows.push(ConstraintRow {
            coeffs,
            bound: *b,
            kind: RowKind::InputBound(j),
        });
    }

    rows
}

/// Adaptive filter rows: per barrier −L_Gh·u ≤ L_fh + ψθ̂ + α(h), one
/// stability row L_GV·u − δ ≤ −L_fV − φθ̂ − λV, then the input rows.
pub fn cacbf_constraints<S: Real>(
    sys: &AffineSystem<S>,
    barriers: &[BarrierSpec<S>],
    lyap: &LyapunovSpec<S>,
    cfg: &ControllerConfig<S>,
    t: S,
    x: &DVector<S>,
    theta_hat: &DVector<S>,
) -> Vec<ConstraintRow<S>> {
    filter_rows(sys, barriers, lyap, cfg, t, x, theta_hat, |_| S::zero())
}

/// Robust baseline rows: safety bounds tightened by the worst-case margin,
/// stability evaluated at the fixed estimate θ_e.
pub fn rcbf_constraints<S: Real>(
    sys: &AffineSystem<S>,
    barriers: &[BarrierSpec<S>],
    lyap: &LyapunovSpec<S>,
    cfg: &ControllerConfig<S>,
    rcfg: &RobustConfig<S>,
    t: S,
    x: &DVector<S>,
) -> Vec<ConstraintRow<S>> {
    filter_rows(sys, barriers, lyap, cfg, t, x, rcfg.theta_e(), |b| {
        robust_margin(sys, b, x, rcfg)
    })
}

/// Builds min ½uᵀRu − u_nᵀRu + ρδ² over z = (u, δ) from assembled rows,
/// appending the δ ≥ 0 row last.
pub fn assemble_qp<S: Real>(
    cfg: &ControllerConfig<S>,
    x: &DVector<S>,
    rows: &[ConstraintRow<S>],
) -> Result<QpProblem<S>> {
    let m = cfg.input_dim();
    let d = m + 1;
    let r = cfg.weight_at(x);
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::Dimension {
            context: "input cost matrix",
            expected: m,
            actual: r.nrows(),
        });
    }
    let mut quad = DMatrix::zeros(d, d);
    quad.view_mut((0, 0), (m, m)).copy_from(&r);
    quad[(m, m)] = S::of(2.0) * cfg.relax_weight();
    let mut lin = DVector::zeros(d);
    lin.rows_mut(0, m).copy_from(&(-(&r * cfg.nominal_at(x))));

    let k = rows.len() + 1;
    let mut a = DMatrix::zeros(k, d);
    let mut b = DVector::zeros(k);
    for (i, row) in rows.iter().enumerate() {
        if row.coeffs.len() != d {
            return Err(Error::Dimension {
                context: "constraint row width",
                expected: d,
                actual: row.coeffs.len(),
            });
        }
        a.row_mut(i).copy_from(&row.coeffs);
        b[i] = row.bound;
    }
    a[(k - 1, m)] = -S::one();
    b[k - 1] = S::zero();

    QpProblem::new(quad, lin, a, b)
}

/// Which filter produces the constraint rows.
pub enum ControlLaw<'a, S: Real> {
    Adaptive { theta_hat: &'a DVector<S> },
    Robust(&'a RobustConfig<S>),
}

/// Filter output: the applied input, the stability slack, and the program
/// solution carrying the KKT certificate (or the infeasibility verdict).
#[derive(Clone, Debug)]
pub struct ControlDecision<S: Real> {
    pub u: DVector<S>,
    pub delta: S,
    pub qp: QpSolution<S>,
}

/// Solves the filter program at one state. An unsafe state (some h ≤ 0) is
/// an error; an infeasible program is not, it is reported through the
/// solution status so the caller can apply its saturation fallback instead
/// of silently clipping.
#[allow(clippy::too_many_arguments)]
pub fn compute_control<S: Real>(
    sys: &AffineSystem<S>,
    barriers: &[BarrierSpec<S>],
    lyap: &LyapunovSpec<S>,
    cfg: &ControllerConfig<S>,
    law: &ControlLaw<'_, S>,
    t: S,
    x: &DVector<S>,
) -> Result<ControlDecision<S>> {
    for barrier in barriers {
        let h = barrier.h(x);
        if h <= S::zero() {
            return Err(Error::OutsideSafeSet {
                label: barrier.label().to_string(),
                value: h.as_f64(),
            });
        }
    }
    let rows = match law {
        ControlLaw::Adaptive { theta_hat } => {
            cacbf_constraints(sys, barriers, lyap, cfg, t, x, theta_hat)
        }
        ControlLaw::Robust(rcfg) => rcbf_constraints(sys, barriers, lyap, cfg, rcfg, t, x),
    };
    let problem = assemble_qp(cfg, x, &rows)?;
    let qp = solve_qp(&problem)?;
    let m = cfg.input_dim();
    let (u, delta) = if qp.is_solved() {
        (
            DVector::from_iterator(m, qp.z.iter().take(m).copied()),
            qp.z[m].max(S::zero()),
        )
    } else {
        (DVector::zeros(m), S::zero())
    };
    Ok(ControlDecision { u, delta, qp })
}

/// Saturation fallback for an infeasible program: solve the same program
/// without the input rows (feasible whenever the safety rows are jointly
/// satisfiable, which the feasibility result guarantees for a single
/// barrier), then return the admissible input nearest to that solution.
/// This is what a physical actuator does when the filter demands more
/// authority than it has: it saturates in the demanded direction. Returns
/// None when even the unbounded program has no solution.
#[allow(clippy::too_many_arguments)]
pub fn best_effort_control<S: Real>(
    sys: &AffineSystem<S>,
    barriers: &[BarrierSpec<S>],
    lyap: &LyapunovSpec<S>,
    cfg: &ControllerConfig<S>,
    law: &ControlLaw<'_, S>,
    t: S,
    x: &DVector<S>,
) -> Result<Option<(DVector<S>, S)>> {
    let rows: Vec<ConstraintRow<S>> = match law {
        ControlLaw::Adaptive { theta_hat } => {
            cacbf_constraints(sys, barriers, lyap, cfg, t, x, theta_hat)
        }
        ControlLaw::Robust(rcfg) => rcbf_constraints(sys, barriers, lyap, cfg, rcfg, t, x),
    }
    .into_iter()
    .filter(|row| !matches!(row.kind, RowKind::InputBound(_)))
    .collect();
    let free = solve_qp(&assemble_qp(cfg, x, &rows)?)?;
    if !free.is_solved() {
        return Ok(None);
    }
    let m = cfg.input_dim();
    let u_free = DVector::from_iterator(m, free.z.iter().take(m).copied());
    let delta = free.z[m].max(S::zero());
    if cfg.bounds().is_empty() {
        return Ok(Some((u_free, delta)));
    }

    // Nearest admissible input: min ½‖u − u_free‖² over the input polytope,
    // which always contains u = 0.
    let bound_rows = cfg.bounds().rows();
    let mut a = DMatrix::zeros(bound_rows.len(), m);
    let mut b = DVector::zeros(bound_rows.len());
    for (i, (row, bound)) in bound_rows.iter().enumerate() {
        a.row_mut(i).copy_from(row);
        b[i] = *bound;
    }
    let lin = -&u_free;
    let proj = solve_qp(&QpProblem::new(DMatrix::identity(m, m), lin, a, b)?)?;
    if !proj.is_solved() {
        return Ok(None);
    }
    Ok(Some((proj.z, delta)))
}
