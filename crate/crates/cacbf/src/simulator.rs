//! Fixed-step closed-loop integration of plant, estimator, and filter, with
//! full trajectory logging and the stability-dominance sampling diagnostic.
//!
//! One control period at t = k·dt: assert the state is still safe, read the
//! plant derivative produced by the input held over the previous period,
//! form the estimation error, advance the estimate (adaptive law only),
//! solve the filter program, then integrate the state with the new input
//! held for dt. The state moves under a classical 4-stage Runge-Kutta step;
//! the estimate moves by explicit Euler inside `integrate_estimate`.
//!
//! An infeasible filter program is a logged, flagged event answered with
//! the admissible best effort (the unbounded solution projected onto the
//! input set), matching actuator saturation; the previous input is held
//! only when no best effort exists.

use nalgebra::DVector;
use rand::Rng;

use crate::adaptation::{adaptation_rate, AdaptState};
use crate::controller::{assemble_qp, cacbf_constraints, ControlLaw, RowKind};
use crate::error::{Error, Result};
use crate::model::AffineSystem;
use crate::num::Real;
use crate::qp::solve_qp;
use crate::scenarios::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    /// Composite adaptive filter: online estimate, no worst-case margin.
    Cacbf,
    /// Robust filter: fixed nominal estimate, worst-case margin on safety.
    Rcbf,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Cacbf => "cacbf",
            ControllerKind::Rcbf => "rcbf",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the derivative fed to the estimator is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XdotMode {
    /// Evaluate the true plant at the held input (simulation ground truth).
    Exact,
    /// First-order backward difference of the logged states; the first step
    /// has no history and falls back to the exact value.
    FiniteDifference,
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions<S: Real> {
    pub dt: S,
    /// Overrides the scenario horizon when set.
    pub t_final: Option<S>,
    /// Log every `stride`-th step (the final step is always logged).
    pub stride: usize,
    pub xdot_mode: XdotMode,
    /// Recorded in the trajectory metadata; the loop itself is deterministic.
    pub seed: u64,
}

impl<S: Real> Default for SimOptions<S> {
    fn default() -> Self {
        Self {
            dt: S::of(1e-3),
            t_final: None,
            stride: 1,
            xdot_mode: XdotMode::Exact,
            seed: 0,
        }
    }
}

/// Loop state between control periods.
pub struct SimState<S: Real> {
    pub t: S,
    pub x: DVector<S>,
    pub adapt: AdaptState<S>,
    prev_x: Option<DVector<S>>,
}

impl<S: Real> SimState<S> {
    pub fn new(scenario: &Scenario<S>, kind: ControllerKind) -> Self {
        let theta0 = match kind {
            ControllerKind::Cacbf => scenario.theta_hat0.clone(),
            ControllerKind::Rcbf => scenario.robust.theta_e().clone(),
        };
        Self {
            t: S::zero(),
            x: scenario.x0.clone(),
            adapt: AdaptState::new(theta0, scenario.system.input_dim()),
            prev_x: None,
        }
    }
}

/// One logged sample.
#[derive(Clone, Debug)]
pub struct Record<S: Real> {
    pub t: S,
    pub x: DVector<S>,
    pub u: DVector<S>,
    pub delta: S,
    pub theta_hat: DVector<S>,
    pub h: Vec<S>,
    pub lyap: S,
    pub e_norm: S,
    pub infeasible: bool,
}

pub struct Trajectory<S: Real> {
    pub scenario: &'static str,
    pub controller: ControllerKind,
    pub dt: S,
    pub t_final: S,
    pub seed: u64,
    pub records: Vec<Record<S>>,
    pub infeasible_steps: usize,
}

fn check_safe<S: Real>(scenario: &Scenario<S>, t: S, x: &DVector<S>) -> Result<()> {
    for b in &scenario.barriers {
        let h = b.h(x);
        if h <= S::zero() {
            return Err(Error::SafetyViolation {
                t: t.as_f64(),
                label: b.label().to_string(),
                value: h.as_f64(),
            });
        }
    }
    Ok(())
}

/// Classical 4-stage Runge-Kutta step of the true plant under a held input.
pub fn rk4_step<S: Real>(
    sys: &AffineSystem<S>,
    t: S,
    x: &DVector<S>,
    u: &DVector<S>,
    dt: S,
) -> Result<DVector<S>> {
    let theta = sys.theta_true();
    let half = dt / S::of(2.0);
    let k1 = sys.eval_dynamics(t, x, u, theta)?;
    let k2 = sys.eval_dynamics(t + half, &(x + &k1 * half), u, theta)?;
    let k3 = sys.eval_dynamics(t + half, &(x + &k2 * half), u, theta)?;
    let k4 = sys.eval_dynamics(t + dt, &(x + &k3 * dt), u, theta)?;
    Ok(x + (k1 + k2 * S::of(2.0) + k3 * S::of(2.0) + k4) * (dt / S::of(6.0)))
}

/// Runs one control period and returns the advanced state together with the
/// record taken at the period's start.
pub fn step<S: Real>(
    state: &SimState<S>,
    scenario: &Scenario<S>,
    kind: ControllerKind,
    dt: S,
    mode: XdotMode,
) -> Result<(SimState<S>, Record<S>)> {
    if dt <= S::zero() {
        return Err(Error::Config("time step must be positive".into()));
    }
    let t = state.t;
    let x = &state.x;
    check_safe(scenario, t, x)?;

    let u_prev = &state.adapt.last_input;
    let xdot = match (mode, &state.prev_x) {
        (XdotMode::FiniteDifference, Some(prev)) => (x - prev) / dt,
        _ => scenario
            .system
            .eval_dynamics(t, x, u_prev, scenario.system.theta_true())?,
    };
    let e = scenario
        .system
        .estimation_error(t, x, &xdot, &state.adapt.theta_hat, u_prev)?;

    let rate = match kind {
        ControllerKind::Cacbf => Some(adaptation_rate(
            &scenario.system,
            &scenario.barriers,
            &scenario.lyapunov,
            &scenario.adapt,
            t,
            x,
            &state.adapt.theta_hat,
            u_prev,
            &xdot,
        )?),
        ControllerKind::Rcbf => None,
    };

    let law = match kind {
        ControllerKind::Cacbf => ControlLaw::Adaptive {
            theta_hat: &state.adapt.theta_hat,
        },
        ControllerKind::Rcbf => ControlLaw::Robust(&scenario.robust),
    };
    let decision = crate::controller::compute_control(
        &scenario.system,
        &scenario.barriers,
        &scenario.lyapunov,
        &scenario.controller,
        &law,
        t,
        x,
    )?;

    let infeasible = !decision.qp.is_solved();
    let (u_apply, delta) = if infeasible {
        match crate::controller::best_effort_control(
            &scenario.system,
            &scenario.barriers,
            &scenario.lyapunov,
            &scenario.controller,
            &law,
            t,
            x,
        )? {
            Some((u, delta)) => {
                log::warn!(
                    "{}/{}: filter program infeasible at t = {:.4} s; applying the admissible best effort",
                    scenario.id,
                    kind,
                    t.as_f64()
                );
                (u, delta)
            }
            None => {
                log::warn!(
                    "{}/{}: filter program infeasible at t = {:.4} s with no best effort available; holding the last input",
                    scenario.id,
                    kind,
                    t.as_f64()
                );
                (state.adapt.last_input.clone(), S::zero())
            }
        }
    } else {
        (decision.u, decision.delta)
    };

    let record = Record {
        t,
        x: x.clone(),
        u: u_apply.clone(),
        delta,
        theta_hat: state.adapt.theta_hat.clone(),
        h: scenario.barriers.iter().map(|b| b.h(x)).collect(),
        lyap: scenario.lyapunov.v(x),
        e_norm: e.norm(),
        infeasible,
    };

    let x_next = rk4_step(&scenario.system, t, x, &u_apply, dt)?;
    let adapt_next = match rate {
        Some(rate) => {
            let advanced = crate::adaptation::integrate_estimate(
                AdaptState {
                    theta_hat: state.adapt.theta_hat.clone(),
                    last_input: u_apply.clone(),
                },
                &rate,
                dt,
                &scenario.adapt,
            )?;
            AdaptState {
                theta_hat: advanced.theta_hat,
                last_input: u_apply,
            }
        }
        None => AdaptState {
            theta_hat: state.adapt.theta_hat.clone(),
            last_input: u_apply,
        },
    };

    Ok((
        SimState {
            t: t + dt,
            x: x_next,
            adapt: adapt_next,
            prev_x: Some(x.clone()),
        },
        record,
    ))
}

/// Runs the closed loop over the horizon. Sample times are k·dt computed
/// from the index, so there is no accumulation drift; the record count at
/// stride 1 is T/dt + 1 with the final record taken without integrating
/// past the horizon.
pub fn run<S: Real>(
    scenario: &Scenario<S>,
    kind: ControllerKind,
    opts: &SimOptions<S>,
) -> Result<Trajectory<S>> {
    if opts.stride == 0 {
        return Err(Error::Config("sample stride must be at least 1".into()));
    }
    let t_final = opts.t_final.unwrap_or(scenario.t_final);
    if t_final <= S::zero() {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let steps = (t_final / opts.dt).as_f64().round() as usize;
    if steps == 0 {
        return Err(Error::Config(
            "horizon shorter than one control period".into(),
        ));
    }

    let mut state = SimState::new(scenario, kind);
    let mut records = Vec::with_capacity(steps / opts.stride + 2);
    let mut infeasible_steps = 0;
    for k in 0..=steps {
        state.t = S::of(k as f64) * opts.dt;
        let (next, record) = step(&state, scenario, kind, opts.dt, opts.xdot_mode)?;
        if record.infeasible {
            infeasible_steps += 1;
        }
        if k % opts.stride == 0 || k == steps {
            records.push(record);
        }
        if k < steps {
            state = next;
        }
    }

    Ok(Trajectory {
        scenario: scenario.id,
        controller: kind,
        dt: opts.dt,
        t_final,
        seed: opts.seed,
        records,
        infeasible_steps,
    })
}

/// Per-shell result of the dominance diagnostic.
#[derive(Clone, Debug)]
pub struct ShellStat<S: Real> {
    pub radius: S,
    /// min over the shell of λV(x) − δ*(x, θ̂); None when no sample on the
    /// shell landed inside the safe set.
    pub min_margin: Option<S>,
    pub samples: usize,
}

#[derive(Debug)]
pub struct DominanceReport<S: Real> {
    pub scenario: &'static str,
    pub shells: Vec<ShellStat<S>>,
}

pub(crate) fn sample_unit_direction<S: Real, R: Rng>(rng: &mut R, dim: usize) -> DVector<S> {
    loop {
        let v = DVector::from_fn(dim, |_, _| S::of(rng.gen_range(-1.0..1.0)));
        let n = v.norm();
        if n > S::of(1e-3) && n <= S::one() {
            return v / n;
        }
    }
}

pub(crate) fn sample_in_ball<S: Real, R: Rng>(rng: &mut R, dim: usize, radius: S) -> DVector<S> {
    if radius <= S::zero() {
        return DVector::zeros(dim);
    }
    loop {
        let v = DVector::from_fn(dim, |_, _| {
            S::of(rng.gen_range(-1.0..1.0)) * radius
        });
        if v.norm() <= radius {
            return v;
        }
    }
}

/// Samples states on shells of increasing distance from the scenario's
/// equilibrium and random estimates inside the parameter ball, solves the
/// filter program without input bounds, and reports the per-shell minimum
/// of λV(x) − δ*(x, θ̂). A trend growing without bound is the evidence that
/// the stability drive eventually dominates the relaxation.
pub fn dominance_diagnostic<S: Real, R: Rng>(
    scenario: &Scenario<S>,
    radii: &[S],
    samples_per_shell: usize,
    rng: &mut R,
) -> Result<DominanceReport<S>> {
    let n = scenario.system.state_dim();
    let p = scenario.system.param_dim();
    let lambda = scenario.lyapunov.lambda();
    let mut shells = Vec::with_capacity(radii.len());
    for &radius in radii {
        let mut min_margin: Option<S> = None;
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < samples_per_shell && attempts < samples_per_shell * 50 {
            attempts += 1;
            let x = &scenario.state_center + sample_unit_direction(rng, n) * radius;
            if scenario.barriers.iter().any(|b| b.h(&x) <= S::zero()) {
                continue;
            }
            let theta_hat = sample_in_ball(rng, p, scenario.adapt.theta_max());
            let rows: Vec<_> = cacbf_constraints(
                &scenario.system,
                &scenario.barriers,
                &scenario.lyapunov,
                &scenario.controller,
                S::zero(),
                &x,
                &theta_hat,
            )
            .into_iter()
            .filter(|row| !matches!(row.kind, RowKind::InputBound(_)))
            .collect();
            let qp = assemble_qp(&scenario.controller, &x, &rows)?;
            let sol = solve_qp(&qp)?;
            if !sol.is_solved() {
                continue;
            }
            accepted += 1;
            let delta = sol.z[scenario.system.input_dim()].max(S::zero());
            let margin = lambda * scenario.lyapunov.v(&x) - delta;
            min_margin = Some(match min_margin {
                Some(m) => m.min(margin),
                None => margin,
            });
        }
        shells.push(ShellStat {
            radius,
            min_margin,
            samples: accepted,
        });
    }
    Ok(DominanceReport {
        scenario: scenario.id,
        shells,
    })
}
