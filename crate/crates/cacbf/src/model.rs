//! Control-affine plants with parametric uncertainty, plus the barrier and
//! Lyapunov descriptions layered on top of them.
//!
//! A plant has the form x' = f(t, x) + F(x) θ + G(x) u where θ is an unknown
//! constant parameter vector confined to a known Euclidean ball. The known
//! drift may carry an explicit time dependence (e.g. a lead-vehicle speed
//! profile); the regressor F and input map G are state-dependent only.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::num::Real;

pub type StateFn<S> = Box<dyn Fn(&DVector<S>) -> DVector<S> + Send + Sync>;
pub type TimeStateFn<S> = Box<dyn Fn(S, &DVector<S>) -> DVector<S> + Send + Sync>;
pub type MatrixFn<S> = Box<dyn Fn(&DVector<S>) -> DMatrix<S> + Send + Sync>;
pub type ScalarFieldFn<S> = Box<dyn Fn(&DVector<S>) -> S + Send + Sync>;
pub type ClassKFn<S> = Box<dyn Fn(S) -> S + Send + Sync>;

/// Plant x' = f(t, x) + F(x) θ + G(x) u with unknown constant θ.
pub struct AffineSystem<S: Real> {
    state_dim: usize,
    input_dim: usize,
    param_dim: usize,
    drift: StateFn<S>,
    exogenous: Option<TimeStateFn<S>>,
    regressor: MatrixFn<S>,
    input_map: MatrixFn<S>,
    theta_true: DVector<S>,
}

impl<S: Real> AffineSystem<S> {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        param_dim: usize,
        drift: StateFn<S>,
        regressor: MatrixFn<S>,
        input_map: MatrixFn<S>,
        theta_true: DVector<S>,
    ) -> Result<Self> {
        if theta_true.len() != param_dim {
            return Err(Error::Dimension {
                context: "AffineSystem theta_true",
                expected: param_dim,
                actual: theta_true.len(),
            });
        }
        Ok(Self {
            state_dim,
            input_dim,
            param_dim,
            drift,
            exogenous: None,
            regressor,
            input_map,
            theta_true,
        })
    }

    /// Adds a known time-varying drift term, evaluated as f(x) + exo(t, x).
    pub fn with_exogenous(mut self, exo: TimeStateFn<S>) -> Self {
        self.exogenous = Some(exo);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn theta_true(&self) -> &DVector<S> {
        &self.theta_true
    }

    /// Known drift f(t, x), including any exogenous time-varying term.
    pub fn drift_at(&self, t: S, x: &DVector<S>) -> DVector<S> {
        let mut f = (self.drift)(x);
        if let Some(exo) = &self.exogenous {
            f += exo(t, x);
        }
        f
    }

    /// Parametric regressor matrix F(x).
    pub fn regressor_at(&self, x: &DVector<S>) -> DMatrix<S> {
        (self.regressor)(x)
    }

    /// Input map G(x).
    pub fn input_map_at(&self, x: &DVector<S>) -> DMatrix<S> {
        (self.input_map)(x)
    }

    /// Full right-hand side f(t, x) + F(x) θ + G(x) u.
    pub fn eval_dynamics(
        &self,
        t: S,
        x: &DVector<S>,
        u: &DVector<S>,
        theta: &DVector<S>,
    ) -> Result<DVector<S>> {
        check_dim("eval_dynamics state", self.state_dim, x.len())?;
        check_dim("eval_dynamics input", self.input_dim, u.len())?;
        check_dim("eval_dynamics parameter", self.param_dim, theta.len())?;
        Ok(self.drift_at(t, x) + self.regressor_at(x) * theta + self.input_map_at(x) * u)
    }

    /// Discrepancy e = x'_measured − (f + F θ̂ + G u) between the measured
    /// state derivative and the model prediction under the current estimate.
    /// With exact measurement this equals −F(x) θ̃.
    pub fn estimation_error(
        &self,
        t: S,
        x: &DVector<S>,
        xdot_measured: &DVector<S>,
        theta_hat: &DVector<S>,
        u: &DVector<S>,
    ) -> Result<DVector<S>> {
        check_dim("estimation_error xdot", self.state_dim, xdot_measured.len())?;
        Ok(xdot_measured - self.eval_dynamics(t, x, u, theta_hat)?)
    }
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Safe-set description: h > 0 inside, with the class-K margin α used by the
/// barrier constraint h' ≥ −α(h).
pub struct BarrierSpec<S: Real> {
    label: String,
    value: ScalarFieldFn<S>,
    gradient: StateFn<S>,
    alpha: ClassKFn<S>,
}

impl<S: Real> BarrierSpec<S> {
    /// `alpha` must be extended class-K (strictly increasing, α(0) = 0);
    /// this is a caller obligation, not checked here.
    pub fn new(
        label: impl Into<String>,
        value: ScalarFieldFn<S>,
        gradient: StateFn<S>,
        alpha: ClassKFn<S>,
    ) -> Self {
        Self {
            label: label.into(),
            value,
            gradient,
            alpha,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn h(&self, x: &DVector<S>) -> S {
        (self.value)(x)
    }

    pub fn grad(&self, x: &DVector<S>) -> DVector<S> {
        (self.gradient)(x)
    }

    pub fn alpha_of(&self, h: S) -> S {
        (self.alpha)(h)
    }
}

/// Lyapunov function with its decay rate λ from the CLF condition
/// V' ≤ −λV + δ.
pub struct LyapunovSpec<S: Real> {
    value: ScalarFieldFn<S>,
    gradient: StateFn<S>,
    lambda: S,
}

impl<S: Real> LyapunovSpec<S> {
    pub fn new(value: ScalarFieldFn<S>, gradient: StateFn<S>, lambda: S) -> Result<Self> {
        if lambda <= S::zero() {
            return Err(Error::Config("lambda must be positive".into()));
        }
        Ok(Self {
            value,
            gradient,
            lambda,
        })
    }

    pub fn v(&self, x: &DVector<S>) -> S {
        (self.value)(x)
    }

    pub fn grad(&self, x: &DVector<S>) -> DVector<S> {
        (self.gradient)(x)
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }
}

/// Weights of the composite energy: the CLF coupling κ and the adaptation
/// gain matrix Γ (kept with a cached Cholesky factor for the Γ⁻¹ term).
pub struct CompositeEnergyInputs<S: Real> {
    kappa: S,
    gamma: DMatrix<S>,
    gamma_chol: nalgebra::Cholesky<S, nalgebra::Dyn>,
}

impl<S: Real> CompositeEnergyInputs<S> {
    pub fn new(kappa: S, gamma: DMatrix<S>) -> Result<Self> {
        if kappa <= S::zero() {
            return Err(Error::Config("kappa must be positive".into()));
        }
        check_spd("gamma", &gamma)?;
        let gamma_chol = gamma
            .clone()
            .cholesky()
            .ok_or(Error::NotSpd { what: "gamma" })?;
        Ok(Self {
            kappa,
            gamma,
            gamma_chol,
        })
    }

    pub fn kappa(&self) -> S {
        self.kappa
    }

    pub fn gamma(&self) -> &DMatrix<S> {
        &self.gamma
    }

    /// Γ⁻¹ v via the cached factorization.
    pub fn gamma_inv_mul(&self, v: &DVector<S>) -> DVector<S> {
        self.gamma_chol.solve(v)
    }
}

/// Checks symmetry (within the scalar's tolerance, scaled by the largest
/// entry) and positive definiteness via Cholesky.
pub fn check_spd<S: Real>(what: &'static str, m: &DMatrix<S>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSpd { what });
    }
    let scale = S::one() + m.amax();
    let tol = S::tol_sym() * scale;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::NotSpd { what });
            }
        }
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::NotSpd { what });
    }
    Ok(())
}

/// Regressor of the barrier derivative: ψ(x) = ∇h(x)ᵀ F(x).
pub fn safety_regressor<S: Real>(
    sys: &AffineSystem<S>,
    barrier: &BarrierSpec<S>,
    x: &DVector<S>,
) -> RowDVector<S> {
    barrier.grad(x).transpose() * sys.regressor_at(x)
}

/// Regressor of the CLF derivative: φ(x) = ∇V(x)ᵀ F(x).
pub fn stability_regressor<S: Real>(
    sys: &AffineSystem<S>,
    lyap: &LyapunovSpec<S>,
    x: &DVector<S>,
) -> RowDVector<S> {
    lyap.grad(x).transpose() * sys.regressor_at(x)
}

/// Composite energy V_c = −Σᵢ ln(hᵢ/(1+hᵢ)) + κV + ½ θ̃ᵀΓ⁻¹θ̃ with
/// θ̃ = θ̂ − θ_*. Multi-barrier scenarios sum the logarithmic terms.
pub fn composite_energy<S: Real>(
    barriers: &[BarrierSpec<S>],
    lyap: &LyapunovSpec<S>,
    energy: &CompositeEnergyInputs<S>,
    x: &DVector<S>,
    theta_hat: &DVector<S>,
    theta_true: &DVector<S>,
) -> Result<S> {
    let mut vc = S::zero();
    for barrier in barriers {
        let h = barrier.h(x);
        if h <= S::zero() {
            return Err(Error::OutsideSafeSet {
                label: barrier.label().to_string(),
                value: h.as_f64(),
            });
        }
        vc -= (h / (S::one() + h)).ln();
    }
    vc += energy.kappa() * lyap.v(x);
    let tilde = theta_hat - theta_true;
    vc += tilde.dot(&energy.gamma_inv_mul(&tilde)) / S::of(2.0);
    Ok(vc)
}

/// Central-difference gradient of a scalar field, used to cross-check the
/// analytic gradients supplied with each barrier and CLF.
pub fn numeric_gradient<S: Real>(
    field: impl Fn(&DVector<S>) -> S,
    x: &DVector<S>,
    step: S,
) -> DVector<S> {
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let fwd = field(&probe);
        probe[i] = x[i] - step;
        let bwd = field(&probe);
        probe[i] = x[i];
        grad[i] = (fwd - bwd) / (S::of(2.0) * step);
    }
    grad
}
