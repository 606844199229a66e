//! Randomized property suites behind the `verify` subcommand: projection
//! dissipation, estimate-norm invariance over the closed-loop runs, filter
//! feasibility with certificates, brute-force optimality of the program
//! solver, robust-to-adaptive containment, gradient consistency, the
//! composite-energy dissipation inequality along trajectories, and the
//! stability-dominance trend.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptation::{project, AdaptConfig};
use crate::controller::{assemble_qp, cacbf_constraints, RowKind};
use crate::error::{Error, Result};
use crate::metrics::{containment_check, containment_self_test};
use crate::model::{composite_energy, numeric_gradient};
use crate::num::Real;
use crate::qp::{check_strict_feasibility, solve_qp, QpProblem};
use crate::scenarios::{build_scenario, Scenario, SCENARIO_IDS};
use crate::simulator::{
    dominance_diagnostic, run, sample_in_ball, sample_unit_direction, ControllerKind, SimOptions,
};

/// Outcome of one suite. `max_error` is the suite's own figure of merit:
/// projection drift, objective gap, relative gradient error, or violated
/// sample fraction, depending on the suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub cases: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_error: Option<f64>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn scenario_set(filter: Option<&str>) -> Result<Vec<Scenario<f64>>> {
    match filter {
        Some(id) => Ok(vec![build_scenario(id)?]),
        None => SCENARIO_IDS.iter().map(|id| build_scenario(id)).collect(),
    }
}

/// The projection must never push the estimate update against the energy
/// gradient: (θ̂ − θ_*)ᵀ Γ⁻¹ (P(τ) − τ) ≤ 0 for every estimate and true
/// parameter inside the ball. Half the sampled estimates sit exactly on the
/// boundary, where the projection actually fires.
pub fn projection_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_drift = f64::NEG_INFINITY;
    for _ in 0..cases {
        let p = rng.gen_range(1..=4usize);
        let theta_max = rng.gen_range(0.5..20.0f64);
        let l = DMatrix::<f64>::from_fn(p, p, |i, j| {
            if j <= i {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let gamma = &l * l.transpose() + DMatrix::identity(p, p) * rng.gen_range(0.1..5.0);
        let cfg = AdaptConfig::new(gamma.clone(), 0.0, 1.0, theta_max)
            .expect("random SPD gain is a valid config");
        let scale = if rng.gen_bool(0.5) {
            theta_max
        } else {
            rng.gen_range(0.0..theta_max)
        };
        let theta_hat = sample_unit_direction::<f64, _>(&mut rng, p) * scale;
        let theta_star = sample_in_ball::<f64, _>(&mut rng, p, theta_max);
        let tau = DVector::from_fn(p, |_, _| rng.gen_range(-50.0..50.0));
        let projected = project(&tau, &theta_hat, &cfg).expect("estimate sampled inside the ball");
        let gamma_inv = gamma.try_inverse().expect("SPD gain is invertible");
        let drift = (&theta_hat - &theta_star).dot(&(gamma_inv * (projected - &tau)));
        max_drift = max_drift.max(drift);
        if drift > 1e-10 {
            failures += 1;
        }
    }
    SuiteReport {
        suite: "projection".into(),
        scenario: None,
        cases,
        failures,
        max_error: Some(max_drift),
        passed: failures == 0,
        notes: Vec::new(),
    }
}

/// Closed-loop estimate boundedness: every scenario × controller run keeps
/// ‖θ̂(t)‖ within the ball radius (plus integration rounding) at every
/// sample. The robust runs hold their estimate fixed, so they pass
/// trivially; the adaptive runs exercise the projection and radial guard.
pub fn norm_invariance_suite(dt: f64, filter: Option<&str>) -> Result<SuiteReport> {
    let mut cases = 0;
    let mut failures = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut notes = Vec::new();
    for scenario in scenario_set(filter)? {
        for kind in [ControllerKind::Cacbf, ControllerKind::Rcbf] {
            let opts = SimOptions {
                dt,
                ..SimOptions::default()
            };
            let traj = run(&scenario, kind, &opts)?;
            let max_norm = traj
                .records
                .iter()
                .map(|r| r.theta_hat.norm())
                .fold(f64::NEG_INFINITY, f64::max);
            let limit = scenario.adapt.theta_max() + 1e-6;
            worst_excess = worst_excess.max(max_norm - limit);
            cases += 1;
            if max_norm > limit {
                failures += 1;
            }
            notes.push(format!(
                "{}/{}: max estimate norm {:.6}, ball radius {}",
                scenario.id,
                kind,
                max_norm,
                scenario.adapt.theta_max().as_f64()
            ));
        }
    }
    Ok(SuiteReport {
        suite: "norm-invariance".into(),
        scenario: filter.map(str::to_string),
        cases,
        failures,
        max_error: Some(worst_excess),
        passed: failures == 0,
        notes,
    })
}

fn feasible_at(p: &QpProblem<f64>, z: &DVector<f64>, slack: f64) -> bool {
    if p.n_rows() == 0 {
        return true;
    }
    let az = &p.rows * z;
    az.iter().zip(p.rhs.iter()).all(|(&lhs, &rhs)| lhs <= rhs + slack)
}

/// Exhaustively evaluates the objective on the grid z* ± 0.02 with pitch
/// 1e-3 and returns obj(z*) − min over feasible grid points. A correct
/// minimizer gives a gap of exactly zero (z* itself is a grid point).
fn grid_gap(p: &QpProblem<f64>, z_star: &DVector<f64>) -> f64 {
    const HALF_STEPS: i64 = 20;
    const PITCH: f64 = 1e-3;
    let d = p.dim();
    let obj_star = p.objective(z_star);
    let mut best = obj_star;
    let mut odometer = vec![-HALF_STEPS; d];
    let mut probe = z_star.clone();
    loop {
        for (axis, &i) in odometer.iter().enumerate() {
            probe[axis] = z_star[axis] + (i as f64) * PITCH;
        }
        if feasible_at(p, &probe, 1e-9) {
            best = best.min(p.objective(&probe));
        }
        let mut axis = 0;
        loop {
            if axis == d {
                return obj_star - best;
            }
            odometer[axis] += 1;
            if odometer[axis] <= HALF_STEPS {
                break;
            }
            odometer[axis] = -HALF_STEPS;
            axis += 1;
        }
    }
}

/// Brute-force cross-check of the program solver on random small programs:
/// solved cases must beat every feasible point of a fine local grid, and
/// infeasible verdicts must be confirmed by the strict-feasibility probe.
pub fn qp_oracle_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_gap = f64::NEG_INFINITY;
    let mut solved = 0;
    let mut infeasible = 0;
    for _ in 0..cases {
        let d = rng.gen_range(1..=3usize);
        let l = DMatrix::<f64>::from_fn(d, d, |i, j| {
            if j <= i {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let quad = &l * l.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.3..2.0);
        let lin = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let k = rng.gen_range(0..=2 * d);
        let rows = DMatrix::from_fn(k, d, |_, _| rng.gen_range(-1.0..1.0));
        let rhs = DVector::from_fn(k, |_, _| rng.gen_range(-0.8..1.2));
        let p = QpProblem::new(quad, lin, rows, rhs).expect("random program is inside the envelope");
        let sol = solve_qp(&p).expect("solver never errors inside the envelope");
        if sol.is_solved() {
            solved += 1;
            let gap = grid_gap(&p, &sol.z);
            max_gap = max_gap.max(gap);
            if !(0.0..1e-4).contains(&gap) {
                failures += 1;
            }
        } else {
            infeasible += 1;
            let (strictly_feasible, _) =
                check_strict_feasibility(&p).expect("probe never errors inside the envelope");
            if strictly_feasible {
                failures += 1;
            }
        }
    }
    SuiteReport {
        suite: "qp-oracle".into(),
        scenario: None,
        cases,
        failures,
        max_error: Some(max_gap),
        passed: failures == 0,
        notes: vec![format!("{solved} solved, {infeasible} infeasible verdicts")],
    }
}

fn sample_interior_state<R: Rng>(scenario: &Scenario<f64>, rng: &mut R) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(scenario.system.state_dim(), |i, _| {
            rng.gen_range(scenario.sample_lo[i]..scenario.sample_hi[i])
        });
        if scenario.barriers.iter().all(|b| b.h(&x) > 1e-6) {
            return x;
        }
    }
}

/// With the input rows removed, the adaptive program must be solvable with
/// a certified optimum at every interior state and every estimate in the
/// ball; the strict-feasibility probe independently confirms an interior
/// point exists.
pub fn feasibility_suite(scenario: &Scenario<f64>, cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..cases {
        let x = sample_interior_state(scenario, &mut rng);
        let theta_hat = sample_in_ball::<f64, _>(
            &mut rng,
            scenario.system.param_dim(),
            scenario.adapt.theta_max(),
        );
        let rows: Vec<_> = cacbf_constraints(
            &scenario.system,
            &scenario.barriers,
            &scenario.lyapunov,
            &scenario.controller,
            0.0,
            &x,
            &theta_hat,
        )
        .into_iter()
        .filter(|row| !matches!(row.kind, RowKind::InputBound(_)))
        .collect();
        let problem = assemble_qp(&scenario.controller, &x, &rows)?;
        let sol = solve_qp(&problem)?;
        let (strictly_feasible, _) = check_strict_feasibility(&problem)?;
        if !sol.is_solved() || !strictly_feasible {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        suite: "feasibility".into(),
        scenario: Some(scenario.id.to_string()),
        cases,
        failures,
        max_error: None,
        passed: failures == 0,
        notes: Vec::new(),
    })
}

/// Central-difference cross-check of every barrier gradient and the
/// Lyapunov gradient over random states in the scenario's sampling box.
pub fn gradient_suite(scenario: &Scenario<f64>, cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_rel = f64::NEG_INFINITY;
    for _ in 0..cases {
        let x = DVector::from_fn(scenario.system.state_dim(), |i, _| {
            rng.gen_range(scenario.sample_lo[i]..scenario.sample_hi[i])
        });
        let mut check = |numeric: DVector<f64>, analytic: DVector<f64>| {
            let rel = (numeric - &analytic).norm() / (1.0 + analytic.norm());
            max_rel = max_rel.max(rel);
            if rel > 1e-4 {
                failures += 1;
            }
        };
        for barrier in &scenario.barriers {
            check(
                numeric_gradient(|y| barrier.h(y), &x, 1e-5),
                barrier.grad(&x),
            );
        }
        check(
            numeric_gradient(|y| scenario.lyapunov.v(y), &x, 1e-5),
            scenario.lyapunov.grad(&x),
        );
    }
    SuiteReport {
        suite: "gradients".into(),
        scenario: Some(scenario.id.to_string()),
        cases,
        failures,
        max_error: Some(max_rel),
        passed: failures == 0,
        notes: Vec::new(),
    }
}

/// Checks the composite-energy dissipation inequality along an adaptive
/// closed-loop run: the forward difference of V_c must not exceed
/// Σᵢ αᵢ(hᵢ)/(hᵢ(1+hᵢ)) − κλV − γ‖e‖² + κδ* beyond a tolerance scaled to
/// the magnitude of those terms. The forward difference carries a
/// second-order remainder the continuous inequality does not see, so the
/// tolerance adds its trapezoid estimate |Δ∇V_c·Δx|/(2dt) from the logged
/// endpoint gradients, plus the exact estimator term ‖Δθ̂‖²_{Γ⁻¹}/(2dt).
/// Saturated (infeasible) samples are counted like any other; the pass bar
/// is 99% of samples.
pub fn dissipation_suite(scenario: &Scenario<f64>, dt: f64) -> Result<SuiteReport> {
    let opts = SimOptions {
        dt,
        ..SimOptions::default()
    };
    let traj = run(scenario, ControllerKind::Cacbf, &opts)?;
    let energy = scenario.adapt.energy_inputs()?;
    let theta_true = scenario.system.theta_true();
    let kappa = scenario.adapt.kappa();
    let lambda = scenario.lyapunov.lambda();
    let error_gain = scenario.adapt.error_gain();

    let vc: Vec<f64> = traj
        .records
        .iter()
        .map(|r| {
            composite_energy(
                &scenario.barriers,
                &scenario.lyapunov,
                &energy,
                &r.x,
                &r.theta_hat,
                theta_true,
            )
        })
        .collect::<Result<_>>()?;
    // State gradient of V_c's x-part, Σᵢ −∇hᵢ/(hᵢ(1+hᵢ)) + κ∇V, per record;
    // its change across a step gives the curvature part of the remainder.
    let grads: Vec<DVector<f64>> = traj
        .records
        .iter()
        .map(|r| {
            let mut g = scenario.lyapunov.grad(&r.x) * kappa;
            for (i, barrier) in scenario.barriers.iter().enumerate() {
                let h = r.h[i];
                g -= barrier.grad(&r.x) / (h * (1.0 + h));
            }
            g
        })
        .collect();

    // Per-record right-hand side terms (α sum, κλV, γ‖e‖², κδ*); the check
    // compares the forward difference against the trapezoid mean of the
    // endpoint bounds, matching its own midpoint accuracy.
    let terms: Vec<[f64; 4]> = traj
        .records
        .iter()
        .map(|r| {
            let mut alpha_term = 0.0;
            for (i, barrier) in scenario.barriers.iter().enumerate() {
                let h = r.h[i];
                alpha_term += barrier.alpha_of(h) / (h * (1.0 + h));
            }
            [
                alpha_term,
                kappa * lambda * r.lyap,
                error_gain * r.e_norm * r.e_norm,
                kappa * r.delta,
            ]
        })
        .collect();
    let bound = |t: &[f64; 4]| t[0] - t[1] - t[2] + t[3];

    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut worst_excess = f64::NEG_INFINITY;
    for (k, w) in traj.records.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        let span = b.t - a.t;
        let vdot = (vc[k + 1] - vc[k]) / span;
        let rhs = 0.5 * (bound(&terms[k]) + bound(&terms[k + 1]));
        let magnitude: f64 = terms[k]
            .iter()
            .zip(terms[k + 1].iter())
            .map(|(ta, tb)| 0.5 * (ta.abs() + tb.abs()))
            .sum();
        let dx = &b.x - &a.x;
        let dtheta = &b.theta_hat - &a.theta_hat;
        let remainder = ((&grads[k + 1] - &grads[k]).dot(&dx).abs()
            + dtheta.dot(&energy.gamma_inv_mul(&dtheta)))
            / (2.0 * span);
        let tol = 1e-3 * (1.0 + magnitude) + remainder;
        checked += 1;
        let excess = vdot - rhs - tol;
        worst_excess = worst_excess.max(excess);
        if excess > 0.0 {
            violations += 1;
        }
    }
    let fraction = violations as f64 / checked as f64;
    Ok(SuiteReport {
        suite: "dissipation".into(),
        scenario: Some(scenario.id.to_string()),
        cases: checked,
        failures: violations,
        max_error: Some(fraction),
        passed: fraction <= 0.01,
        notes: vec![format!(
            "violated fraction {:.5}, worst excess {:.3e}",
            fraction, worst_excess
        )],
    })
}

/// Robust-to-adaptive containment plus a detector self-test: the sampler
/// must report zero violations on the true rows and must catch them once
/// the worst-case margin is deliberately negated.
pub fn containment_suite(
    scenario: &Scenario<f64>,
    n_states: usize,
    n_controls: usize,
    seed: u64,
) -> SuiteReport {
    let main = containment_check(scenario, n_states, n_controls, seed);
    let fault = containment_self_test(
        scenario,
        n_states.clamp(1, 200),
        n_controls.clamp(1, 50),
        seed + 1,
    );
    let detector_ok = !fault.passed();
    let mut notes = vec![format!(
        "{} robust-admissible pairs over {} states x {} controls",
        main.robust_admissible_pairs, main.states, main.controls_per_state
    )];
    if !detector_ok {
        notes.push("fault-injected margin was not detected".into());
    } else {
        notes.push(format!(
            "fault injection detected {} violations",
            fault.violations.len()
        ));
    }
    SuiteReport {
        suite: "containment".into(),
        scenario: Some(scenario.id.to_string()),
        cases: main.states * main.controls_per_state,
        failures: main.violations.len() + usize::from(!detector_ok),
        max_error: None,
        passed: main.passed() && detector_ok,
        notes,
    }
}

/// Shell-sampled evidence that the stability drive outgrows the relaxation.
/// Strictly increasing per-shell minima of λV − δ* are asserted only for
/// the planar robot, whose CLF grows with distance in every state
/// direction; the cruise and drone CLFs are flat along part of the state
/// (following distance, matched velocity), so their shell minima stay
/// pinned near −δ* in those directions and are reported without assertion.
pub fn dominance_suite(seed: u64, filter: Option<&str>) -> Result<Vec<SuiteReport>> {
    let radii = [10.0, 50.0, 100.0];
    let mut reports = Vec::new();
    for scenario in scenario_set(filter)? {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = dominance_diagnostic(&scenario, &radii, 40, &mut rng)?;
        let minima: Vec<Option<f64>> = report.shells.iter().map(|s| s.min_margin).collect();
        let mut notes = vec![report
            .shells
            .iter()
            .map(|s| {
                format!(
                    "radius {}: min margin {}",
                    s.radius,
                    s.min_margin
                        .map_or("unsampled".to_string(), |m| format!("{m:.3}"))
                )
            })
            .collect::<Vec<_>>()
            .join("; ")];
        let asserted = scenario.id == "omni";
        if !asserted {
            notes.push("reported only: CLF is flat along part of the state".into());
        }
        let increasing = minima.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b > a,
            _ => false,
        });
        reports.push(SuiteReport {
            suite: "dominance".into(),
            scenario: Some(scenario.id.to_string()),
            cases: report.shells.iter().map(|s| s.samples).sum(),
            failures: usize::from(asserted && !increasing),
            max_error: None,
            passed: !asserted || increasing,
            notes,
        });
    }
    Ok(reports)
}

/// Runs the suite named by `id`; `all` runs every suite. The scenario
/// filter restricts per-scenario suites, and `cases` overrides each
/// suite's primary sample count.
pub fn run_suite(
    id: &str,
    seed: u64,
    scenario_filter: Option<&str>,
    cases: Option<usize>,
) -> Result<Vec<SuiteReport>> {
    let mut reports = Vec::new();
    let wants = |name: &str| id == name || id == "all";
    if wants("projection") {
        reports.push(projection_suite(cases.unwrap_or(10_000), seed));
    }
    if wants("qp-oracle") {
        reports.push(qp_oracle_suite(cases.unwrap_or(1_000), seed));
    }
    if wants("feasibility") {
        for scenario in scenario_set(scenario_filter)? {
            reports.push(feasibility_suite(&scenario, cases.unwrap_or(1_000), seed)?);
        }
    }
    if wants("gradients") {
        for scenario in scenario_set(scenario_filter)? {
            reports.push(gradient_suite(&scenario, cases.unwrap_or(100), seed));
        }
    }
    if wants("containment") {
        for scenario in scenario_set(scenario_filter)? {
            reports.push(containment_suite(
                &scenario,
                cases.unwrap_or(1_000),
                100,
                seed,
            ));
        }
    }
    if wants("norm-invariance") {
        reports.push(norm_invariance_suite(1e-3, scenario_filter)?);
    }
    if wants("dissipation") {
        for scenario in scenario_set(scenario_filter)? {
            reports.push(dissipation_suite(&scenario, 1e-3)?);
        }
    }
    if wants("dominance") {
        reports.extend(dominance_suite(seed, scenario_filter)?);
    }
    if reports.is_empty() {
        return Err(Error::Config(format!(
            "unknown suite '{id}'; expected projection, qp-oracle, feasibility, gradients, \
             containment, norm-invariance, dissipation, dominance, or all"
        )));
    }
    Ok(reports)
}
