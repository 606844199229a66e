//! Comparison metrics over logged trajectories, plus the sampling check
//! that every input admitted by the robust filter is admitted by the
//! adaptive one. Reports are plain f64 records so they serialize the same
//! regardless of the scalar the simulation ran at.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::Serializer;
use serde::Serialize;

use crate::controller::{cacbf_constraints, rcbf_constraints, robust_margin, RowKind};
use crate::num::Real;
use crate::scenarios::Scenario;
use crate::simulator::Trajectory;

/// Time to reach the goal region, when the scenario defines one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReachOutcome {
    Reached(f64),
    Timeout,
}

impl Serialize for ReachOutcome {
    fn serialize<Z: Serializer>(&self, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        match self {
            ReachOutcome::Reached(t) => s.serialize_f64(*t),
            ReachOutcome::Timeout => s.serialize_str("timeout"),
        }
    }
}

impl ReachOutcome {
    pub fn time(&self) -> Option<f64> {
        match self {
            ReachOutcome::Reached(t) => Some(*t),
            ReachOutcome::Timeout => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub controller: String,
    /// Smallest clearance over the run, in the scenario's clearance units.
    pub h_min: f64,
    /// Time-averaged clearance (1/T)∫ h dt.
    pub eta: f64,
    /// ∫‖u‖ dt.
    pub e_control: f64,
    /// ∫|min(0, u)| dt; only for the scalar-input braking scenario.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_brake: Option<f64>,
    /// ∫‖u‖ dt read as distance; only when the input is a velocity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_reach: Option<ReachOutcome>,
    pub infeasibility_count: usize,
}

fn trapezoid<S: Real>(ts: &[S], ys: &[S]) -> f64 {
    let mut acc = 0.0;
    for i in 1..ts.len() {
        let dt = (ts[i] - ts[i - 1]).as_f64();
        acc += 0.5 * (ys[i] + ys[i - 1]).as_f64() * dt;
    }
    acc
}

/// All applicable metrics on the trajectory's logged grid; integrals use
/// the trapezoid rule.
pub fn compute_metrics<S: Real>(traj: &Trajectory<S>, scenario: &Scenario<S>) -> MetricsReport {
    let ts: Vec<S> = traj.records.iter().map(|r| r.t).collect();
    let clearance: Vec<S> = traj
        .records
        .iter()
        .map(|r| scenario.clearance_at(&r.x))
        .collect();
    let u_norm: Vec<S> = traj.records.iter().map(|r| r.u.norm()).collect();

    let h_min = clearance
        .iter()
        .map(|c| c.as_f64())
        .fold(f64::INFINITY, f64::min);
    let span = (*ts.last().unwrap() - ts[0]).as_f64();
    let eta = trapezoid(&ts, &clearance) / span;
    let e_control = trapezoid(&ts, &u_norm);

    let e_brake = scenario.brake_effort.then(|| {
        let braking: Vec<S> = traj
            .records
            .iter()
            .map(|r| (-r.u[0]).max(S::zero()))
            .collect();
        trapezoid(&ts, &braking)
    });

    let t_reach = scenario.reach.as_ref().map(|_| {
        traj.records
            .iter()
            .find(|r| scenario.reached(&r.x))
            .map(|r| ReachOutcome::Reached(r.t.as_f64()))
            .unwrap_or(ReachOutcome::Timeout)
    });

    MetricsReport {
        scenario: traj.scenario.to_string(),
        controller: traj.controller.to_string(),
        h_min,
        eta,
        e_control,
        e_brake,
        path_length: scenario.velocity_input.then_some(e_control),
        t_reach,
        infeasibility_count: traj.infeasible_steps,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContainmentViolation {
    pub x: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub barrier: usize,
    pub robust_bound: f64,
    pub adaptive_bound: f64,
    pub lhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContainmentReport {
    pub scenario: String,
    pub states: usize,
    pub controls_per_state: usize,
    /// (state, control) pairs where the control satisfied the robust rows.
    pub robust_admissible_pairs: usize,
    pub violations: Vec<ContainmentViolation>,
}

impl ContainmentReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const MAX_STORED_VIOLATIONS: usize = 32;

fn to_f64_vec<S: Real>(v: &DVector<S>) -> Vec<f64> {
    v.iter().map(|s| s.as_f64()).collect()
}

fn containment_scan<S: Real>(
    scenario: &Scenario<S>,
    n_states: usize,
    n_controls: usize,
    seed: u64,
    flip_margin: bool,
) -> ContainmentReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scenario.system.state_dim();
    let m = scenario.system.input_dim();
    let theta_max = scenario.adapt.theta_max();

    // Explore a box comfortably larger than the admissible input set; the
    // containment claim is about the safety rows alone.
    let u_scale = scenario
        .controller
        .bounds()
        .rows()
        .iter()
        .map(|(_, b)| b.as_f64())
        .fold(1.0, f64::max)
        * 2.0;

    let mut report = ContainmentReport {
        scenario: scenario.id.to_string(),
        states: 0,
        controls_per_state: n_controls,
        robust_admissible_pairs: 0,
        violations: Vec::new(),
    };

    while report.states < n_states {
        let x = DVector::from_fn(n, |i, _| {
            let lo = scenario.sample_lo[i].as_f64();
            let hi = scenario.sample_hi[i].as_f64();
            S::of(rng.gen_range(lo..hi))
        });
        if scenario.barriers.iter().any(|b| b.h(&x) <= S::zero()) {
            continue;
        }
        report.states += 1;

        let theta_hat = crate::simulator::sample_in_ball(&mut rng, scenario.system.param_dim(), theta_max);
        let adaptive: Vec<_> = cacbf_constraints(
            &scenario.system,
            &scenario.barriers,
            &scenario.lyapunov,
            &scenario.controller,
            S::zero(),
            &x,
            &theta_hat,
        )
        .into_iter()
        .filter(|r| matches!(r.kind, RowKind::Safety(_)))
        .collect();

        let mut robust: Vec<_> = rcbf_constraints(
            &scenario.system,
            &scenario.barriers,
            &scenario.lyapunov,
            &scenario.controller,
            &scenario.robust,
            S::zero(),
            &x,
        )
        .into_iter()
        .filter(|r| matches!(r.kind, RowKind::Safety(_)))
        .collect();
        if flip_margin {
            for row in robust.iter_mut() {
                if let RowKind::Safety(i) = row.kind {
                    let sigma = robust_margin(
                        &scenario.system,
                        &scenario.barriers[i],
                        &x,
                        &scenario.robust,
                    );
                    row.bound += S::of(2.0) * sigma;
                }
            }
        }

        for _ in 0..n_controls {
            let u = DVector::from_fn(m, |_, _| S::of(rng.gen_range(-u_scale..u_scale)));
            let admits = |rows: &[crate::controller::ConstraintRow<S>], idx: usize| {
                let row = &rows[idx];
                let mut lhs = S::zero();
                for j in 0..m {
                    lhs += row.coeffs[j] * u[j];
                }
                (lhs, lhs <= row.bound)
            };
            let robust_ok = (0..robust.len()).all(|i| admits(&robust, i).1);
            if !robust_ok {
                continue;
            }
            report.robust_admissible_pairs += 1;
            for i in 0..adaptive.len() {
                let (lhs, ok) = admits(&adaptive, i);
                if !ok && report.violations.len() < MAX_STORED_VIOLATIONS {
                    report.violations.push(ContainmentViolation {
                        x: to_f64_vec(&x),
                        theta_hat: to_f64_vec(&theta_hat),
                        u: to_f64_vec(&u),
                        barrier: i,
                        robust_bound: robust[i].bound.as_f64(),
                        adaptive_bound: adaptive[i].bound.as_f64(),
                        lhs: lhs.as_f64(),
                    });
                }
            }
        }
    }
    report
}

/// Samples interior states, estimates inside the parameter ball, and
/// random controls; every control satisfying the robust safety rows must
/// satisfy the adaptive ones.
pub fn containment_check<S: Real>(
    scenario: &Scenario<S>,
    n_states: usize,
    n_controls: usize,
    seed: u64,
) -> ContainmentReport {
    containment_scan(scenario, n_states, n_controls, seed, false)
}

/// Sensitivity self-test: rebuilds the robust rows with the worst-case
/// margin negated, which widens them past the adaptive rows and must make
/// the sampler report violations. A clean pass here would mean the sampler
/// could not detect a broken margin at all.
pub fn containment_self_test<S: Real>(
    scenario: &Scenario<S>,
    n_states: usize,
    n_controls: usize,
    seed: u64,
) -> ContainmentReport {
    containment_scan(scenario, n_states, n_controls, seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::build_omni;
    use crate::simulator::{run, ControllerKind, Record, SimOptions};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn synthetic_record(t: f64, x: DVector<f64>, u: DVector<f64>) -> Record<f64> {
        Record {
            t,
            x,
            u,
            delta: 0.0,
            theta_hat: dvector![0.0, 0.0],
            h: vec![],
            lyap: 0.0,
            e_norm: 0.0,
            infeasible: false,
        }
    }

    #[test]
    fn constant_signal_collapses_min_and_average() {
        let scenario = build_omni::<f64>();
        let x = dvector![0.0, 5.0];
        let records = (0..=4)
            .map(|k| synthetic_record(0.25 * k as f64, x.clone(), dvector![1.0, 0.0]))
            .collect();
        let traj = Trajectory {
            scenario: "omni",
            controller: ControllerKind::Cacbf,
            dt: 0.25,
            t_final: 1.0,
            seed: 0,
            records,
            infeasible_steps: 0,
        };
        let m = compute_metrics(&traj, &scenario);
        assert_relative_eq!(m.h_min, 0.5);
        assert_relative_eq!(m.eta, 0.5);
        assert_relative_eq!(m.e_control, 1.0);
        assert_eq!(m.path_length, Some(1.0));
        assert_eq!(m.e_brake, None);
        assert_eq!(m.t_reach, Some(ReachOutcome::Timeout));
    }

    #[test]
    fn trapezoid_is_exact_on_a_ramp() {
        // ‖u‖ = t over [0, 1] integrates to exactly 1/2 on any grid.
        let scenario = build_omni::<f64>();
        let records = (0..=10)
            .map(|k| {
                let t = 0.1 * k as f64;
                synthetic_record(t, dvector![0.0, 5.0], dvector![t, 0.0])
            })
            .collect();
        let traj = Trajectory {
            scenario: "omni",
            controller: ControllerKind::Cacbf,
            dt: 0.1,
            t_final: 1.0,
            seed: 0,
            records,
            infeasible_steps: 0,
        };
        let m = compute_metrics(&traj, &scenario);
        assert_relative_eq!(m.e_control, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn first_goal_crossing_sets_the_reach_time() {
        let scenario = build_omni::<f64>();
        let records = vec![
            synthetic_record(0.0, dvector![0.0, 5.0], dvector![0.0, 0.0]),
            synthetic_record(1.0, dvector![8.0, 5.0], dvector![0.0, 0.0]),
            synthetic_record(2.0, dvector![9.6, 5.0], dvector![0.0, 0.0]),
            synthetic_record(3.0, dvector![10.0, 5.0], dvector![0.0, 0.0]),
        ];
        let traj = Trajectory {
            scenario: "omni",
            controller: ControllerKind::Cacbf,
            dt: 1.0,
            t_final: 3.0,
            seed: 0,
            records,
            infeasible_steps: 0,
        };
        let m = compute_metrics(&traj, &scenario);
        assert_eq!(m.t_reach, Some(ReachOutcome::Reached(2.0)));
    }

    #[test]
    fn braking_effort_ignores_throttle() {
        let mut scenario = build_omni::<f64>();
        scenario.brake_effort = true;
        let records = vec![
            synthetic_record(0.0, dvector![0.0, 5.0], dvector![-2.0, 0.0]),
            synthetic_record(1.0, dvector![0.0, 5.0], dvector![3.0, 0.0]),
            synthetic_record(2.0, dvector![0.0, 5.0], dvector![-2.0, 0.0]),
        ];
        let traj = Trajectory {
            scenario: "omni",
            controller: ControllerKind::Cacbf,
            dt: 1.0,
            t_final: 2.0,
            seed: 0,
            records,
            infeasible_steps: 0,
        };
        let m = compute_metrics(&traj, &scenario);
        // |min(0,u)| is 2, 0, 2 at the three samples.
        assert_relative_eq!(m.e_brake.unwrap(), 2.0);
    }

    #[test]
    fn short_run_metrics_respect_min_vs_average() {
        let scenario = build_omni::<f64>();
        let opts = SimOptions {
            dt: 1e-2,
            t_final: Some(2.0),
            ..SimOptions::default()
        };
        let traj = run(&scenario, ControllerKind::Cacbf, &opts).unwrap();
        let m = compute_metrics(&traj, &scenario);
        assert!(m.h_min <= m.eta);
        assert!(m.h_min > 0.0);
    }

    #[test]
    fn robust_admissible_controls_stay_adaptive_admissible() {
        let scenario = build_omni::<f64>();
        let report = containment_check(&scenario, 60, 25, 11);
        assert!(report.passed(), "violations: {:?}", report.violations);
        assert!(report.robust_admissible_pairs > 0);
    }

    #[test]
    fn negated_margin_is_caught_by_the_sampler() {
        let scenario = build_omni::<f64>();
        let report = containment_self_test(&scenario, 60, 25, 11);
        assert!(!report.passed());
    }

    #[test]
    fn reach_outcome_serializes_as_number_or_sentinel() {
        assert_eq!(
            serde_json::to_string(&ReachOutcome::Reached(7.42)).unwrap(),
            "7.42"
        );
        assert_eq!(
            serde_json::to_string(&ReachOutcome::Timeout).unwrap(),
            "\"timeout\""
        );
    }
}
