//! Command-line front end. `simulate` runs a scenario under one or both
//! filters and writes plot-ready trajectory CSV plus JSON metrics; `verify`
//! runs the randomized property suites and prints a JSON report. Exit codes:
//! 0 success, 1 failed properties or internal error, 2 usage or configuration
//! error, 3 safety violation during simulation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::num::Real;
use crate::scenarios::{
    build_acc_with, build_drone_with, build_omni_with, AccParams, DroneParams, OmniParams,
    Scenario,
};
use crate::simulator::{run, ControllerKind, SimOptions, Trajectory, XdotMode};
use crate::verify::run_suite;

#[derive(Parser)]
#[command(
    name = "cacbf",
    version,
    about = "Adaptive safety-filter simulations and property checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory CSV and metrics JSON files.
    Simulate(SimulateArgs),
    /// Run a property suite and print its JSON report.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario id: acc, omni, or drone.
    #[arg(long)]
    scenario: String,
    /// Which filter to run.
    #[arg(long, value_enum, default_value_t = ControllerChoice::Both)]
    controller: ControllerChoice,
    /// Integration step in seconds.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Horizon override in seconds (defaults to the scenario's horizon).
    #[arg(long)]
    t_final: Option<f64>,
    /// Keep every k-th sample in the outputs (the final sample always stays).
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Recorded in the outputs; the closed loop itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = "CACBF_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Override a scenario parameter by dotted path, e.g. --set adapt.kappa=2
    /// or --set x0.0=30. Values parse as JSON, falling back to plain strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Source of the plant derivative fed to the estimator.
    #[arg(long, value_enum, default_value_t = XdotChoice::Exact)]
    xdot: XdotChoice,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite id: projection, qp-oracle, feasibility, gradients, containment,
    /// norm-invariance, dissipation, dominance, or all.
    #[arg(default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict per-scenario suites to one scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Override the suite's primary sample count.
    #[arg(long)]
    cases: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerChoice {
    Cacbf,
    Rcbf,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum XdotChoice {
    Exact,
    FiniteDifference,
}

impl From<XdotChoice> for XdotMode {
    fn from(c: XdotChoice) -> Self {
        match c {
            XdotChoice::Exact => XdotMode::Exact,
            XdotChoice::FiniteDifference => XdotMode::FiniteDifference,
        }
    }
}

/// Parses arguments from the process environment and runs the requested
/// command, returning the process exit code.
pub fn run_cli() -> i32 {
    let _ = env_logger::try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Dimension { .. } | Error::NotSpd { .. } => 2,
        Error::SafetyViolation { .. } => 3,
        _ => 1,
    }
}

fn parse_json_scalar(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

/// Replaces the leaf named by a dotted `key` inside the parameter tree.
/// Path segments address object fields or, when numeric, array elements.
fn apply_override(tree: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let mut node = tree;
    let mut path = key.split('.').peekable();
    while let Some(part) = path.next() {
        let child = match node {
            serde_json::Value::Object(map) => map.get_mut(part),
            serde_json::Value::Array(items) => part
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i)),
            _ => None,
        };
        let child = child.ok_or_else(|| {
            Error::Config(format!("unknown parameter '{key}' (no entry '{part}')"))
        })?;
        if path.peek().is_none() {
            *child = parse_json_scalar(raw);
            return Ok(());
        }
        node = child;
    }
    Err(Error::Config("override key must not be empty".into()))
}

fn override_and_build<P, F>(sets: &[String], build: F) -> Result<Scenario<f64>>
where
    P: Serialize + DeserializeOwned + Default,
    F: FnOnce(&P) -> Result<Scenario<f64>>,
{
    let mut tree = serde_json::to_value(P::default())
        .map_err(|e| Error::Config(format!("cannot encode scenario defaults: {e}")))?;
    for entry in sets {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{entry}' must have the form key=value"))
        })?;
        apply_override(&mut tree, key.trim(), raw.trim())?;
    }
    let params: P = serde_json::from_value(tree)
        .map_err(|e| Error::Config(format!("invalid parameter override: {e}")))?;
    build(&params)
}

fn scenario_with_overrides(id: &str, sets: &[String]) -> Result<Scenario<f64>> {
    match id {
        "acc" => override_and_build::<AccParams, _>(sets, build_acc_with),
        "omni" => override_and_build::<OmniParams, _>(sets, build_omni_with),
        "drone" => override_and_build::<DroneParams, _>(sets, build_drone_with),
        other => Err(Error::Config(format!(
            "unknown scenario '{other}'; expected acc, omni, or drone"
        ))),
    }
}

/// Renders a trajectory with the fixed column set t, x_1..x_n, u_1..u_m,
/// delta, theta_hat_1..p, h_1..k, V, e_norm, infeasible. Floats print with
/// plain `{}` formatting, so identical runs produce byte-identical files.
pub fn trajectory_csv<S: Real>(traj: &Trajectory<S>) -> String {
    let (n, m, p, k) = traj
        .records
        .first()
        .map_or((0, 0, 0, 0), |r| (r.x.len(), r.u.len(), r.theta_hat.len(), r.h.len()));
    let mut out = String::from("t");
    for i in 1..=n {
        write!(out, ",x_{i}").unwrap();
    }
    for i in 1..=m {
        write!(out, ",u_{i}").unwrap();
    }
    out.push_str(",delta");
    for i in 1..=p {
        write!(out, ",theta_hat_{i}").unwrap();
    }
    for i in 1..=k {
        write!(out, ",h_{i}").unwrap();
    }
    out.push_str(",V,e_norm,infeasible\n");
    for r in &traj.records {
        write!(out, "{}", r.t.as_f64()).unwrap();
        for v in r.x.iter().chain(r.u.iter()) {
            write!(out, ",{}", v.as_f64()).unwrap();
        }
        write!(out, ",{}", r.delta.as_f64()).unwrap();
        for v in r.theta_hat.iter() {
            write!(out, ",{}", v.as_f64()).unwrap();
        }
        for v in &r.h {
            write!(out, ",{}", v.as_f64()).unwrap();
        }
        writeln!(
            out,
            ",{},{},{}",
            r.lyap.as_f64(),
            r.e_norm.as_f64(),
            u8::from(r.infeasible)
        )
        .unwrap();
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn run_one(
    scenario: &Scenario<f64>,
    kind: ControllerKind,
    opts: &SimOptions<f64>,
) -> Result<(Trajectory<f64>, MetricsReport, String)> {
    let traj = run(scenario, kind, opts)?;
    let report = compute_metrics(&traj, scenario);
    let csv = trajectory_csv(&traj);
    Ok((traj, report, csv))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    if !args.dt.is_finite() || args.dt <= 0.0 {
        return Err(Error::Config("dt must be positive".into()));
    }
    if args.stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    if let Some(t) = args.t_final {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::Config("t-final must be positive".into()));
        }
    }
    let scenario = scenario_with_overrides(&args.scenario, &args.set)?;
    let opts = SimOptions {
        dt: args.dt,
        t_final: args.t_final,
        stride: args.stride,
        xdot_mode: args.xdot.into(),
        seed: args.seed,
    };
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", args.out_dir.display())))?;

    let kinds: &[ControllerKind] = match args.controller {
        ControllerChoice::Cacbf => &[ControllerKind::Cacbf],
        ControllerChoice::Rcbf => &[ControllerKind::Rcbf],
        ControllerChoice::Both => &[ControllerKind::Cacbf, ControllerKind::Rcbf],
    };
    // The runs are independent; with both filters requested they execute on
    // separate threads and the outputs are written afterwards in a fixed
    // order.
    let scenario_ref = &scenario;
    let results: Vec<Result<_>> = std::thread::scope(|scope| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&kind| scope.spawn(move || run_one(scenario_ref, kind, &opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });

    let mut reports = Vec::new();
    for (kind, result) in kinds.iter().zip(results) {
        let (traj, report, csv) = result?;
        let csv_name = format!("trajectory_{}_{}.csv", scenario.id, kind);
        let json_name = format!("metrics_{}_{}.json", scenario.id, kind);
        write_file(&args.out_dir.join(&csv_name), &csv)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("cannot encode metrics: {e}")))?;
        write_file(&args.out_dir.join(&json_name), &(json + "\n"))?;
        println!(
            "{}/{}: h_min {:.4}, eta {:.4}, infeasible steps {}; wrote {csv_name}, {json_name}",
            scenario.id, kind, report.h_min, report.eta, traj.infeasible_steps
        );
        reports.push(report);
    }
    if args.controller == ControllerChoice::Both {
        let comparison = serde_json::json!({
            "scenario": scenario.id,
            "cacbf": reports[0],
            "rcbf": reports[1],
        });
        let name = format!("comparison_{}.json", scenario.id);
        let json = serde_json::to_string_pretty(&comparison)
            .map_err(|e| Error::Config(format!("cannot encode comparison: {e}")))?;
        write_file(&args.out_dir.join(&name), &(json + "\n"))?;
        println!("{}: wrote {name}", scenario.id);
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let reports = run_suite(&args.suite, args.seed, args.scenario.as_deref(), args.cases)?;
    let json = serde_json::to_string_pretty(&reports)
        .map_err(|e| Error::Config(format!("cannot encode report: {e}")))?;
    println!("{json}");
    Ok(i32::from(!reports.iter().all(|r| r.passed)))
}
