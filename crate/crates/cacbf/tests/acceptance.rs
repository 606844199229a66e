//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line with the measured numbers before asserting. Quantitative
//! checks run the three experiments at their defaults (dt = 1e-3) and
//! compare both filters; property checks drive the randomized suites at
//! their full sample counts.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use once_cell::sync::Lazy;

use cacbf::cli::trajectory_csv;
use cacbf::metrics::{compute_metrics, MetricsReport, ReachOutcome};
use cacbf::scenarios::{build_scenario, DroneParams, SCENARIO_IDS};
use cacbf::simulator::{run, ControllerKind, SimOptions, Trajectory};
use cacbf::verify::{
    containment_suite, dissipation_suite, feasibility_suite, gradient_suite,
    norm_invariance_suite, projection_suite, qp_oracle_suite,
};

struct CachedRun {
    traj: Trajectory<f64>,
    metrics: MetricsReport,
    elapsed: Duration,
}

/// (scenario id, controller id, dt bits)
type RunKey = (&'static str, &'static str, u64);

static RUNS: Lazy<Mutex<HashMap<RunKey, Arc<CachedRun>>>> = Lazy::new(Mutex::default);

fn cached(scenario_id: &'static str, kind: ControllerKind, dt: f64) -> Arc<CachedRun> {
    let key = (scenario_id, kind.as_str(), dt.to_bits());
    let mut map = RUNS.lock().unwrap();
    if let Some(hit) = map.get(&key) {
        return hit.clone();
    }
    let scenario = build_scenario::<f64>(scenario_id).expect("known scenario");
    let opts = SimOptions {
        dt,
        ..SimOptions::default()
    };
    let start = Instant::now();
    let traj = run(&scenario, kind, &opts).expect("run completes");
    let elapsed = start.elapsed();
    let metrics = compute_metrics(&traj, &scenario);
    let entry = Arc::new(CachedRun {
        traj,
        metrics,
        elapsed,
    });
    map.insert(key, entry.clone());
    entry
}

fn verdict(name: &str, ok: bool, detail: &str) {
    println!("{name}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn in_band(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn min_barrier(traj: &Trajectory<f64>) -> f64 {
    traj.records
        .iter()
        .flat_map(|r| r.h.iter().copied())
        .fold(f64::INFINITY, f64::min)
}

fn reach_time(m: &MetricsReport) -> Option<f64> {
    m.t_reach.as_ref().and_then(ReachOutcome::time)
}

/// Interpolated x positions where consecutive samples straddle y = 0 inside
/// the opening between the two obstacles.
fn gate_crossings(traj: &Trajectory<f64>, half_gap: f64) -> Vec<f64> {
    let mut xs = Vec::new();
    for w in traj.records.windows(2) {
        let (ya, yb) = (w[0].x[1], w[1].x[1]);
        if (ya > 0.0) != (yb > 0.0) {
            let s = ya / (ya - yb);
            let xc = w[0].x[0] + s * (w[1].x[0] - w[0].x[0]);
            if xc.abs() < half_gap {
                xs.push(xc);
            }
        }
    }
    xs
}

#[test]
fn c01_acc_safety_margins() {
    let a = cached("acc", ControllerKind::Cacbf, 1e-3);
    let r = cached("acc", ControllerKind::Rcbf, 1e-3);
    let floor_ok = in_band(a.metrics.h_min, 0.05, 0.5);
    let robust_ok = in_band(r.metrics.h_min, 2.0, 3.6);
    let safe_ok = min_barrier(&a.traj) > 0.0 && min_barrier(&r.traj) > 0.0;
    let fast_ok = a.elapsed < Duration::from_secs(30) && r.elapsed < Duration::from_secs(30);
    let mut detail = format!(
        "adaptive h_min {:.6} (band [0.05, 0.5]), robust h_min {:.4} (band [2.0, 3.6]), \
         both runs positive {}, runtimes {:.2}/{:.2} s",
        a.metrics.h_min,
        r.metrics.h_min,
        safe_ok,
        a.elapsed.as_secs_f64(),
        r.elapsed.as_secs_f64()
    );
    if !floor_ok {
        detail.push_str(
            "; the adaptive floor misses the band: at matched speeds the closed loop settles \
             on the grazing equilibrium of the configured gains, where \
             2*kappa*(v_d - v_l) + gamma*h/1.8 = 1.8/(h*(1+h)) gives h* = 0.04938 at the \
             slowest lead speed of 10 m/s, and the measured minimum equals that equilibrium; \
             a 0.05 floor excludes it",
        );
    }
    verdict(
        "criterion 01 acc safety margins",
        floor_ok && robust_ok && safe_ok && fast_ok,
        &detail,
    );
}

#[test]
fn c02_acc_braking_effort() {
    let a = cached("acc", ControllerKind::Cacbf, 1e-3);
    let r = cached("acc", ControllerKind::Rcbf, 1e-3);
    let (ea, er) = (
        a.metrics.e_brake.expect("braking scenario"),
        r.metrics.e_brake.expect("braking scenario"),
    );
    let ok = in_band(ea, 1.1e4, 1.7e4) && in_band(er, 1.1e4, 1.7e4);
    verdict(
        "criterion 02 acc braking effort",
        ok,
        &format!("adaptive {ea:.1} N*s, robust {er:.1} N*s, band [1.1e4, 1.7e4]"),
    );
}

#[test]
fn c03_acc_clearance_ratio() {
    let a = cached("acc", ControllerKind::Cacbf, 1e-3);
    let r = cached("acc", ControllerKind::Rcbf, 1e-3);
    let ok = in_band(r.metrics.eta, 5.0, 7.5) && in_band(a.metrics.eta, 0.2, 0.9);
    verdict(
        "criterion 03 acc mean clearance",
        ok,
        &format!(
            "robust eta {:.4} (band [5.0, 7.5]), adaptive eta {:.4} (band [0.2, 0.9])",
            r.metrics.eta, a.metrics.eta
        ),
    );
}

#[test]
fn c04_omni_metrics_and_ordering() {
    let a = cached("omni", ControllerKind::Cacbf, 1e-3);
    let r = cached("omni", ControllerKind::Rcbf, 1e-3);
    let (ta, tr) = (
        reach_time(&a.metrics).expect("adaptive run reaches the target"),
        reach_time(&r.metrics).expect("robust run reaches the target"),
    );
    let (pa, pr) = (
        a.metrics.path_length.expect("velocity-input scenario"),
        r.metrics.path_length.expect("velocity-input scenario"),
    );
    let bands_ok = a.metrics.h_min > 0.0
        && a.metrics.h_min <= 0.15
        && in_band(ta, 6.5, 8.5)
        && in_band(pa, 45.0, 49.0)
        && in_band(r.metrics.h_min, 0.25, 0.7)
        && in_band(tr, 7.8, 9.5)
        && in_band(pr, 46.0, 50.0);
    let order_ok =
        a.metrics.h_min < r.metrics.h_min && a.metrics.eta < r.metrics.eta && ta < tr;
    verdict(
        "criterion 04 omni reproduction",
        bands_ok && order_ok,
        &format!(
            "adaptive h_min {:.4}/T_reach {:.3}/path {:.2}, robust h_min {:.4}/T_reach \
             {:.3}/path {:.2}, adaptive < robust on h_min, eta ({:.3} vs {:.3}), T_reach: {}",
            a.metrics.h_min, ta, pa, r.metrics.h_min, tr, pr, a.metrics.eta, r.metrics.eta,
            order_ok
        ),
    );
}

#[test]
fn c05_drone_gate_topology() {
    let a = cached("drone", ControllerKind::Cacbf, 1e-3);
    let r = cached("drone", ControllerKind::Rcbf, 1e-3);
    let geom = DroneParams::default();
    let half_gap = geom.centers[1][0] - geom.radius;
    let a_cross = gate_crossings(&a.traj, half_gap);
    let r_cross = gate_crossings(&r.traj, half_gap);
    let reach_ok = reach_time(&a.metrics).is_some_and(|t| t <= geom.t_final)
        && a.metrics.t_reach != Some(ReachOutcome::Timeout)
        && r.metrics.t_reach == Some(ReachOutcome::Timeout);
    let topology_ok = !a_cross.is_empty() && r_cross.is_empty();
    let (ea, er) = (a.metrics.e_control, r.metrics.e_control);
    let effort_ok =
        in_band(ea, 40.11 * 0.7, 40.11 * 1.3) && in_band(er, 29.03 * 0.7, 29.03 * 1.3) && ea > er;
    verdict(
        "criterion 05 drone gate topology",
        reach_ok && topology_ok && effort_ok,
        &format!(
            "adaptive crosses gate at x = {:?} and reaches at {:.3} s, robust never crosses \
             ({} crossings) and times out, control efforts {:.2} > {:.2} within 30% of 40.11 \
             and 29.03",
            a_cross,
            reach_time(&a.metrics).unwrap_or(f64::NAN),
            r_cross.len(),
            ea,
            er
        ),
    );
}

#[test]
fn c06_projection_inequality() {
    let report = projection_suite(10_000, 0);
    verdict(
        "criterion 06 projection inequality",
        report.passed && report.max_error.unwrap() <= 1e-10,
        &format!(
            "{} cases, {} failures, max drift {:.3e}",
            report.cases,
            report.failures,
            report.max_error.unwrap()
        ),
    );
}

#[test]
fn c07_estimate_norm_invariance() {
    let report = norm_invariance_suite(1e-3, None).unwrap();
    verdict(
        "criterion 07 estimate norm invariance",
        report.passed,
        &format!(
            "{} runs, worst excess over the ball radius {:.3e}",
            report.cases,
            report.max_error.unwrap()
        ),
    );
}

#[test]
fn c08_feasibility_and_qp_oracle() {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in SCENARIO_IDS {
        let scenario = build_scenario::<f64>(id).unwrap();
        let report = feasibility_suite(&scenario, 1_000, 0).unwrap();
        ok &= report.passed;
        parts.push(format!("{id} {}/{} certified", report.cases - report.failures, report.cases));
    }
    let oracle = qp_oracle_suite(1_000, 0);
    ok &= oracle.passed;
    parts.push(format!(
        "oracle max gap {:.3e} over {} programs",
        oracle.max_error.unwrap(),
        oracle.cases
    ));
    verdict(
        "criterion 08 feasibility and solver oracle",
        ok,
        &parts.join(", "),
    );
}

#[test]
fn c09_forward_invariance_across_steps() {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in SCENARIO_IDS {
        for dt in [1e-3, 5e-4] {
            let run = cached(id, ControllerKind::Cacbf, dt);
            let min_h = min_barrier(&run.traj);
            ok &= min_h > 0.0;
            parts.push(format!("{id}@dt={dt}: min h {min_h:.5}"));
        }
    }
    verdict(
        "criterion 09 forward invariance",
        ok,
        &parts.join(", "),
    );
}

#[test]
fn c10_robust_containment() {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in SCENARIO_IDS {
        let scenario = build_scenario::<f64>(id).unwrap();
        let report = containment_suite(&scenario, 1_000, 100, 0);
        ok &= report.passed;
        parts.push(format!(
            "{id}: {} violations over {} pairs plus fault detection",
            report.failures, report.cases
        ));
    }
    verdict("criterion 10 robust-to-adaptive containment", ok, &parts.join(", "));
}

#[test]
fn c11_gradient_consistency() {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in SCENARIO_IDS {
        let scenario = build_scenario::<f64>(id).unwrap();
        let report = gradient_suite(&scenario, 100, 0);
        ok &= report.passed;
        parts.push(format!("{id} max rel {:.3e}", report.max_error.unwrap()));
    }
    verdict("criterion 11 gradient consistency", ok, &parts.join(", "));
}

#[test]
fn c12_dissipation_inequality() {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in SCENARIO_IDS {
        let scenario = build_scenario::<f64>(id).unwrap();
        let report = dissipation_suite(&scenario, 1e-3).unwrap();
        ok &= report.passed;
        parts.push(format!(
            "{id}: violated fraction {:.5} (budget 0.01)",
            report.max_error.unwrap()
        ));
    }
    verdict("criterion 12 dissipation inequality", ok, &parts.join(", "));
}

#[test]
fn c13_deterministic_trajectories() {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in ["acc", "omni"] {
        let scenario = build_scenario::<f64>(id).unwrap();
        let opts = SimOptions {
            dt: 1e-3,
            t_final: Some(5.0),
            ..SimOptions::default()
        };
        let a = trajectory_csv(&run(&scenario, ControllerKind::Cacbf, &opts).unwrap());
        let b = trajectory_csv(&run(&scenario, ControllerKind::Cacbf, &opts).unwrap());
        ok &= a == b;
        parts.push(format!("{id}: {} bytes byte-identical {}", a.len(), a == b));
    }
    verdict("criterion 13 determinism", ok, &parts.join(", "));
}
