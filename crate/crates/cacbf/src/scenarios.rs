//! The three case studies: adaptive cruise control behind a varying-speed
//! lead vehicle, an omnidirectional robot rounding a disk obstacle, and a
//! planar drone threading a narrow gate under unknown wind. Builders take
//! parameter structs whose defaults are the experiment constants, so a
//! plain build reproduces the reference setups.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptConfig;
use crate::controller::{ControllerConfig, InputBounds, RobustConfig};
use crate::error::{Error, Result};
use crate::model::{AffineSystem, BarrierSpec, LyapunovSpec};
use crate::num::Real;

pub type ReachFn<S> = Box<dyn Fn(&DVector<S>) -> bool + Send + Sync>;

/// What the clearance metrics are computed from.
pub enum ClearanceSignal<S: Real> {
    /// The controlled barrier's own value.
    Barrier(usize),
    /// Distance to a disk obstacle's boundary, ‖x − c‖ − r, in meters.
    /// Used where the controlled barrier is the quadratic form of the same
    /// disk; negative inside the obstacle so a violation stays visible.
    DiskDistance { center: DVector<S>, radius: S },
    /// √(minᵢ h̄ᵢ) over raw obstacle margins, reported in meters when the
    /// controlled barriers are backstepped extensions. Negative minima map
    /// to −√|·| so a violation stays visible in the signal.
    SqrtMin(Vec<BarrierSpec<S>>),
}

/// A fully wired case study.
pub struct Scenario<S: Real> {
    pub id: &'static str,
    pub description: &'static str,
    pub system: AffineSystem<S>,
    pub barriers: Vec<BarrierSpec<S>>,
    pub lyapunov: LyapunovSpec<S>,
    pub controller: ControllerConfig<S>,
    pub adapt: AdaptConfig<S>,
    pub robust: RobustConfig<S>,
    pub x0: DVector<S>,
    pub theta_hat0: DVector<S>,
    pub t_final: S,
    pub reach: Option<ReachFn<S>>,
    pub clearance: ClearanceSignal<S>,
    /// Braking effort ∫|min(0, u)| dt applies (longitudinal single input).
    pub brake_effort: bool,
    /// The input is a velocity, so ∫‖u‖ dt is the path length.
    pub velocity_input: bool,
    /// Center of the shells used by the stability-dominance diagnostic.
    pub state_center: DVector<S>,
    /// Axis-aligned box the property suites sample states from.
    pub sample_lo: DVector<S>,
    pub sample_hi: DVector<S>,
}

impl<S: Real> Scenario<S> {
    pub fn clearance_at(&self, x: &DVector<S>) -> S {
        match &self.clearance {
            ClearanceSignal::Barrier(i) => self.barriers[*i].h(x),
            ClearanceSignal::DiskDistance { center, radius } => {
                let mut d2 = S::zero();
                for i in 0..center.len() {
                    let d = x[i] - center[i];
                    d2 += d * d;
                }
                d2.sqrt() - *radius
            }
            ClearanceSignal::SqrtMin(raw) => {
                let mut min = S::of(f64::MAX);
                for b in raw {
                    min = min.min(b.h(x));
                }
                if min < S::zero() {
                    -(-min).sqrt()
                } else {
                    min.sqrt()
                }
            }
        }
    }

    pub fn reached(&self, x: &DVector<S>) -> bool {
        match &self.reach {
            Some(r) => r(x),
            None => false,
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let theta_max = self.adapt.theta_max();
        let true_norm = self.system.theta_true().norm();
        if true_norm > theta_max {
            return Err(Error::Config(format!(
                "true parameter norm {:.4} exceeds the admissible ball radius {:.4}; \
                 the estimator can never represent the plant",
                true_norm.as_f64(),
                theta_max.as_f64()
            )));
        }
        if self.theta_hat0.norm() > theta_max {
            return Err(Error::Config(
                "initial estimate lies outside the admissible parameter ball".into(),
            ));
        }
        for b in &self.barriers {
            let h = b.h(&self.x0);
            if h <= S::zero() {
                return Err(Error::Config(format!(
                    "initial state starts outside the safe set: {} = {:.4}",
                    b.label(),
                    h.as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Lead-vehicle speed profile: 10, 14, 18, 15 m/s over consecutive 25 s
/// segments. Out-of-range times clamp to the nearest segment value.
pub fn lead_velocity<S: Real>(t: S) -> S {
    if t < S::zero() {
        log::warn!("lead velocity queried at t = {} < 0; clamping", t.as_f64());
        return S::of(10.0);
    }
    if t < S::of(25.0) {
        S::of(10.0)
    } else if t < S::of(50.0) {
        S::of(14.0)
    } else if t < S::of(75.0) {
        S::of(18.0)
    } else if t < S::of(100.0) {
        S::of(15.0)
    } else {
        log::warn!("lead velocity queried at t = {} >= 100; clamping", t.as_f64());
        S::of(15.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptParams {
    pub gamma_diag: Vec<f64>,
    pub error_gain: f64,
    pub kappa: f64,
    pub theta_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccParams {
    pub mass: f64,
    pub gravity: f64,
    /// Input box as a fraction of the weight force: |u| ≤ frac·m̄·g.
    pub input_accel_frac: f64,
    pub v_desired: f64,
    /// Time-headway coefficient in h = d − headway·v.
    pub headway: f64,
    pub lambda: f64,
    pub rho: f64,
    pub alpha_scale: f64,
    pub theta_true: Vec<f64>,
    pub theta_e: Vec<f64>,
    pub x0: Vec<f64>,
    pub t_final: f64,
    pub adapt: AdaptParams,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            gravity: 9.81,
            input_accel_frac: 0.25,
            v_desired: 26.0,
            headway: 1.8,
            lambda: 2.0,
            rho: 1e3,
            alpha_scale: 1.0,
            theta_true: vec![7.0, 6.0, 5.0],
            theta_e: vec![0.0, 0.0, 0.0],
            x0: vec![25.0, 60.0],
            t_final: 100.0,
            adapt: AdaptParams {
                gamma_diag: vec![1e4, 1e3, 1e2],
                error_gain: 1e2,
                kappa: 1.0,
                theta_max: 20.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmniParams {
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    pub obstacle_center: Vec<f64>,
    pub obstacle_radius: f64,
    pub lambda: f64,
    pub rho: f64,
    pub alpha_scale: f64,
    pub input_radius: f64,
    pub nominal_gain: f64,
    pub reach_radius: f64,
    pub theta_true: Vec<f64>,
    pub theta_e: Vec<f64>,
    pub t_final: f64,
    pub adapt: AdaptParams,
}

impl Default for OmniParams {
    fn default() -> Self {
        Self {
            x0: vec![0.0, 5.0],
            target: vec![10.0, 5.0],
            obstacle_center: vec![5.0, 5.0],
            obstacle_radius: 4.5,
            lambda: 1.0,
            rho: 1e3,
            alpha_scale: 2.0,
            input_radius: 2.0,
            nominal_gain: 1.0,
            reach_radius: 0.5,
            theta_true: vec![0.3, -0.2],
            theta_e: vec![0.0, 0.0],
            t_final: 100.0,
            adapt: AdaptParams {
                gamma_diag: vec![20.0, 20.0],
                error_gain: 10.0,
                kappa: 1.0,
                theta_max: 1.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneParams {
    pub mass: f64,
    pub p0: Vec<f64>,
    pub v0: Vec<f64>,
    pub target: Vec<f64>,
    pub centers: Vec<[f64; 2]>,
    pub radius: f64,
    pub lambda: f64,
    pub rho: f64,
    /// α(h) = alpha_scale·h on the extended barriers.
    pub alpha_scale: f64,
    /// Extension coefficient in h = ḣ̄ + backstep_gain·h̄.
    pub backstep_gain: f64,
    pub input_limit: f64,
    pub nominal_gain: f64,
    pub reach_radius: f64,
    pub theta_true: Vec<f64>,
    pub theta_e: Vec<f64>,
    pub t_final: f64,
    pub adapt: AdaptParams,
}

impl Default for DroneParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            p0: vec![-8.0, 6.0],
            v0: vec![0.0, 0.0],
            target: vec![8.0, -6.0],
            centers: vec![[-5.0, 0.0], [5.0, 0.0]],
            radius: 4.8,
            lambda: 1.0,
            rho: 1e3,
            alpha_scale: 5.0,
            backstep_gain: 2.0,
            input_limit: 10.0,
            nominal_gain: 4.0,
            reach_radius: 0.5,
            theta_true: vec![1.0, 1.5],
            theta_e: vec![0.0, 0.0],
            t_final: 12.0,
            adapt: AdaptParams {
                gamma_diag: vec![10.0, 10.0],
                error_gain: 10.0,
                kappa: 1.0,
                theta_max: 3.0,
            },
        }
    }
}

fn expect_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

fn to_vector<S: Real>(v: &[f64]) -> DVector<S> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| S::of(x)))
}

fn adapt_config<S: Real>(p: &AdaptParams) -> Result<AdaptConfig<S>> {
    let gamma = DMatrix::from_diagonal(&to_vector::<S>(&p.gamma_diag));
    AdaptConfig::new(gamma, S::of(p.error_gain), S::of(p.kappa), S::of(p.theta_max))
}

/// Scenario identifiers accepted on the command line, in presentation order.
pub const SCENARIO_IDS: [&str; 3] = ["acc", "omni", "drone"];

/// Builds the named scenario with its experiment defaults.
pub fn build_scenario<S: Real>(id: &str) -> Result<Scenario<S>> {
    match id {
        "acc" => Ok(build_acc()),
        "omni" => Ok(build_omni()),
        "drone" => Ok(build_drone()),
        other => Err(Error::Config(format!(
            "unknown scenario '{other}'; expected acc, omni, or drone"
        ))),
    }
}

pub fn build_acc<S: Real>() -> Scenario<S> {
    build_acc_with(&AccParams::default()).expect("experiment defaults are valid")
}

pub fn build_acc_with<S: Real>(p: &AccParams) -> Result<Scenario<S>> {
    expect_len("acc theta_true", 3, p.theta_true.len())?;
    expect_len("acc theta_e", 3, p.theta_e.len())?;
    expect_len("acc x0", 2, p.x0.len())?;
    expect_len("acc gamma_diag", 3, p.adapt.gamma_diag.len())?;

    let mass = S::of(p.mass);
    let system = AffineSystem::new(
        2,
        1,
        3,
        Box::new(|x: &DVector<S>| DVector::from_column_slice(&[S::zero(), -x[0]])),
        Box::new(move |x: &DVector<S>| {
            let v = x[0];
            DMatrix::from_row_slice(
                2,
                3,
                &[
                    -S::one() / mass,
                    -v / mass,
                    -v * v / mass,
                    S::zero(),
                    S::zero(),
                    S::zero(),
                ],
            )
        }),
        Box::new(move |_: &DVector<S>| {
            DMatrix::from_column_slice(2, 1, &[S::one() / mass, S::zero()])
        }),
        to_vector(&p.theta_true),
    )?
    .with_exogenous(Box::new(|t: S, _: &DVector<S>| {
        DVector::from_column_slice(&[S::zero(), lead_velocity(t)])
    }));

    let headway = S::of(p.headway);
    let alpha = S::of(p.alpha_scale);
    let barrier = BarrierSpec::new(
        "headway",
        Box::new(move |x: &DVector<S>| x[1] - headway * x[0]),
        Box::new(move |_: &DVector<S>| DVector::from_column_slice(&[-headway, S::one()])),
        Box::new(move |h: S| alpha * h),
    );

    let vd = S::of(p.v_desired);
    let lyapunov = LyapunovSpec::new(
        Box::new(move |x: &DVector<S>| (x[0] - vd) * (x[0] - vd)),
        Box::new(move |x: &DVector<S>| {
            DVector::from_column_slice(&[S::of(2.0) * (x[0] - vd), S::zero()])
        }),
        S::of(p.lambda),
    )?;

    let input_limit = S::of(p.input_accel_frac * p.mass * p.gravity);
    let controller = ControllerConfig::new(
        1,
        Box::new(|_: &DVector<S>| DMatrix::from_element(1, 1, S::one())),
        S::of(p.rho),
        None,
        InputBounds::box_symmetric(&[input_limit])?,
    )?;

    let adapt = adapt_config(&p.adapt)?;
    let robust = RobustConfig::new(to_vector(&p.theta_e), S::of(p.adapt.theta_max))?;

    let scenario = Scenario {
        id: "acc",
        description: "adaptive cruise control behind a varying-speed lead vehicle",
        system,
        barriers: vec![barrier],
        lyapunov,
        controller,
        adapt,
        robust,
        x0: to_vector(&p.x0),
        theta_hat0: DVector::zeros(3),
        t_final: S::of(p.t_final),
        reach: None,
        clearance: ClearanceSignal::Barrier(0),
        brake_effort: true,
        velocity_input: false,
        state_center: DVector::from_column_slice(&[vd, S::of(60.0)]),
        sample_lo: DVector::from_column_slice(&[S::zero(), S::one()]),
        sample_hi: DVector::from_column_slice(&[S::of(35.0), S::of(120.0)]),
    };
    scenario.check_invariants()?;
    Ok(scenario)
}

pub fn build_omni<S: Real>() -> Scenario<S> {
    build_omni_with(&OmniParams::default()).expect("experiment defaults are valid")
}

pub fn build_omni_with<S: Real>(p: &OmniParams) -> Result<Scenario<S>> {
    expect_len("omni theta_true", 2, p.theta_true.len())?;
    expect_len("omni theta_e", 2, p.theta_e.len())?;
    expect_len("omni x0", 2, p.x0.len())?;
    expect_len("omni target", 2, p.target.len())?;
    expect_len("omni obstacle_center", 2, p.obstacle_center.len())?;
    expect_len("omni gamma_diag", 2, p.adapt.gamma_diag.len())?;

    let system = AffineSystem::new(
        2,
        2,
        2,
        Box::new(|_: &DVector<S>| DVector::zeros(2)),
        Box::new(|_: &DVector<S>| DMatrix::identity(2, 2)),
        Box::new(|_: &DVector<S>| DMatrix::identity(2, 2)),
        to_vector(&p.theta_true),
    )?;

    let (cx, cy) = (S::of(p.obstacle_center[0]), S::of(p.obstacle_center[1]));
    let r2 = S::of(p.obstacle_radius * p.obstacle_radius);
    let alpha = S::of(p.alpha_scale);
    let barrier = BarrierSpec::new(
        "obstacle",
        Box::new(move |x: &DVector<S>| {
            let dx = x[0] - cx;
            let dy = x[1] - cy;
            dx * dx + dy * dy - r2
        }),
        Box::new(move |x: &DVector<S>| {
            DVector::from_column_slice(&[S::of(2.0) * (x[0] - cx), S::of(2.0) * (x[1] - cy)])
        }),
        Box::new(move |h: S| alpha * h),
    );

    let (tx, ty) = (S::of(p.target[0]), S::of(p.target[1]));
    let lyapunov = LyapunovSpec::new(
        Box::new(move |x: &DVector<S>| {
            let dx = x[0] - tx;
            let dy = x[1] - ty;
            dx * dx + dy * dy
        }),
        Box::new(move |x: &DVector<S>| {
            DVector::from_column_slice(&[S::of(2.0) * (x[0] - tx), S::of(2.0) * (x[1] - ty)])
        }),
        S::of(p.lambda),
    )?;

    let radius = S::of(p.input_radius);
    let gain = S::of(p.nominal_gain);
    let controller = ControllerConfig::new(
        2,
        Box::new(|_: &DVector<S>| DMatrix::identity(2, 2)),
        S::of(p.rho),
        Some(Box::new(move |x: &DVector<S>| {
            let raw = DVector::from_column_slice(&[gain * (tx - x[0]), gain * (ty - x[1])]);
            let n = raw.norm();
            if n > radius {
                raw * (radius / n)
            } else {
                raw
            }
        })),
        InputBounds::norm_ball(radius)?,
    )?;

    let adapt = adapt_config(&p.adapt)?;
    let robust = RobustConfig::new(to_vector(&p.theta_e), S::of(p.adapt.theta_max))?;

    let reach_radius = S::of(p.reach_radius);
    let scenario = Scenario {
        id: "omni",
        description: "omnidirectional robot rounding a disk obstacle toward a goal",
        system,
        barriers: vec![barrier],
        lyapunov,
        controller,
        adapt,
        robust,
        x0: to_vector(&p.x0),
        theta_hat0: DVector::zeros(2),
        t_final: S::of(p.t_final),
        reach: Some(Box::new(move |x: &DVector<S>| {
            let dx = x[0] - tx;
            let dy = x[1] - ty;
            (dx * dx + dy * dy).sqrt() <= reach_radius
        })),
        clearance: ClearanceSignal::DiskDistance {
            center: to_vector(&p.obstacle_center),
            radius: S::of(p.obstacle_radius),
        },
        brake_effort: false,
        velocity_input: true,
        state_center: to_vector(&p.target),
        sample_lo: DVector::from_column_slice(&[S::of(-2.0), S::of(-2.0)]),
        sample_hi: DVector::from_column_slice(&[S::of(12.0), S::of(12.0)]),
    };
    scenario.check_invariants()?;
    Ok(scenario)
}

pub fn build_drone<S: Real>() -> Scenario<S> {
    build_drone_with(&DroneParams::default()).expect("experiment defaults are valid")
}

fn raw_disk_barrier<S: Real>(label: String, center: [f64; 2], radius: f64) -> BarrierSpec<S> {
    let (cx, cy) = (S::of(center[0]), S::of(center[1]));
    let r2 = S::of(radius * radius);
    BarrierSpec::new(
        label,
        Box::new(move |x: &DVector<S>| {
            let dx = x[0] - cx;
            let dy = x[1] - cy;
            dx * dx + dy * dy - r2
        }),
        Box::new(move |x: &DVector<S>| {
            DVector::from_column_slice(&[
                S::of(2.0) * (x[0] - cx),
                S::of(2.0) * (x[1] - cy),
                S::zero(),
                S::zero(),
            ])
        }),
        Box::new(|h: S| h),
    )
}

pub fn build_drone_with<S: Real>(p: &DroneParams) -> Result<Scenario<S>> {
    expect_len("drone theta_true", 2, p.theta_true.len())?;
    expect_len("drone theta_e", 2, p.theta_e.len())?;
    expect_len("drone p0", 2, p.p0.len())?;
    expect_len("drone v0", 2, p.v0.len())?;
    expect_len("drone target", 2, p.target.len())?;
    expect_len("drone centers", 2, p.centers.len())?;
    expect_len("drone gamma_diag", 2, p.adapt.gamma_diag.len())?;

    let mass = S::of(p.mass);
    let thrust_map = move |_: &DVector<S>| {
        let mut m = DMatrix::zeros(4, 2);
        m[(2, 0)] = S::one() / mass;
        m[(3, 1)] = S::one() / mass;
        m
    };
    let system = AffineSystem::new(
        4,
        2,
        2,
        Box::new(|x: &DVector<S>| DVector::from_column_slice(&[x[2], x[3], S::zero(), S::zero()])),
        Box::new(thrust_map),
        Box::new(thrust_map),
        to_vector(&p.theta_true),
    )?;

    let beta = S::of(p.backstep_gain);
    let alpha = S::of(p.alpha_scale);
    let barriers: Vec<BarrierSpec<S>> = p
        .centers
        .iter()
        .enumerate()
        .map(|(i, &[cx, cy])| {
            let (cx, cy) = (S::of(cx), S::of(cy));
            let r2 = S::of(p.radius * p.radius);
            BarrierSpec::new(
                format!("gate-obstacle-{}", i + 1),
                Box::new(move |x: &DVector<S>| {
                    let dx = x[0] - cx;
                    let dy = x[1] - cy;
                    S::of(2.0) * (dx * x[2] + dy * x[3]) + beta * (dx * dx + dy * dy - r2)
                }),
                Box::new(move |x: &DVector<S>| {
                    let dx = x[0] - cx;
                    let dy = x[1] - cy;
                    DVector::from_column_slice(&[
                        S::of(2.0) * x[2] + S::of(2.0) * beta * dx,
                        S::of(2.0) * x[3] + S::of(2.0) * beta * dy,
                        S::of(2.0) * dx,
                        S::of(2.0) * dy,
                    ])
                }),
                Box::new(move |h: S| alpha * h),
            )
        })
        .collect();

    let (tx, ty) = (S::of(p.target[0]), S::of(p.target[1]));
    let lyapunov = LyapunovSpec::new(
        Box::new(move |x: &DVector<S>| {
            let a = x[2] + x[0] - tx;
            let b = x[3] + x[1] - ty;
            (a * a + b * b) / S::of(2.0)
        }),
        Box::new(move |x: &DVector<S>| {
            let a = x[2] + x[0] - tx;
            let b = x[3] + x[1] - ty;
            DVector::from_column_slice(&[a, b, a, b])
        }),
        S::of(p.lambda),
    )?;

    let gain = S::of(p.nominal_gain);
    let input_limit = S::of(p.input_limit);
    let controller = ControllerConfig::new(
        2,
        Box::new(|_: &DVector<S>| DMatrix::identity(2, 2)),
        S::of(p.rho),
        Some(Box::new(move |x: &DVector<S>| {
            DVector::from_column_slice(&[
                gain * (tx - x[0]) - gain * x[2],
                gain * (ty - x[1]) - gain * x[3],
            ])
        })),
        InputBounds::box_symmetric(&[input_limit, input_limit])?,
    )?;

    let adapt = adapt_config(&p.adapt)?;
    let robust = RobustConfig::new(to_vector(&p.theta_e), S::of(p.adapt.theta_max))?;

    let raw: Vec<BarrierSpec<S>> = p
        .centers
        .iter()
        .enumerate()
        .map(|(i, &c)| raw_disk_barrier(format!("gate-obstacle-{}-raw", i + 1), c, p.radius))
        .collect();

    let mut x0 = DVector::zeros(4);
    x0[0] = S::of(p.p0[0]);
    x0[1] = S::of(p.p0[1]);
    x0[2] = S::of(p.v0[0]);
    x0[3] = S::of(p.v0[1]);

    let reach_radius = S::of(p.reach_radius);
    let scenario = Scenario {
        id: "drone",
        description: "planar drone threading a narrow gate under unknown wind",
        system,
        barriers,
        lyapunov,
        controller,
        adapt,
        robust,
        x0,
        theta_hat0: DVector::zeros(2),
        t_final: S::of(p.t_final),
        reach: Some(Box::new(move |x: &DVector<S>| {
            let dx = x[0] - tx;
            let dy = x[1] - ty;
            (dx * dx + dy * dy).sqrt() <= reach_radius
        })),
        clearance: ClearanceSignal::SqrtMin(raw),
        brake_effort: false,
        velocity_input: false,
        state_center: DVector::from_column_slice(&[tx, ty, S::zero(), S::zero()]),
        sample_lo: DVector::from_column_slice(&[
            S::of(-10.0),
            S::of(-10.0),
            S::of(-5.0),
            S::of(-5.0),
        ]),
        sample_hi: DVector::from_column_slice(&[
            S::of(10.0),
            S::of(10.0),
            S::of(5.0),
            S::of(5.0),
        ]),
    };
    scenario.check_invariants()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::numeric_gradient;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lead_profile_segments_and_clamps() {
        assert_relative_eq!(lead_velocity(0.0), 10.0);
        assert_relative_eq!(lead_velocity(24.999), 10.0);
        assert_relative_eq!(lead_velocity(25.0), 14.0);
        assert_relative_eq!(lead_velocity(30.0), 14.0);
        assert_relative_eq!(lead_velocity(50.0), 18.0);
        assert_relative_eq!(lead_velocity(75.0), 15.0);
        assert_relative_eq!(lead_velocity(99.999), 15.0);
        assert_relative_eq!(lead_velocity(-1.0), 10.0);
        assert_relative_eq!(lead_velocity(150.0), 15.0);
    }

    #[test]
    fn cruise_scenario_arithmetic() {
        let s = build_acc::<f64>();
        assert_relative_eq!(s.barriers[0].h(&s.x0), 15.0);
        assert_relative_eq!(s.system.theta_true().norm(), 110.0f64.sqrt(), epsilon = 1e-12);
        assert!(s.system.theta_true().norm() <= s.adapt.theta_max());
        // Input box: 0.25·1650·9.81 on each side.
        let rows = s.controller.bounds().rows();
        assert_eq!(rows.len(), 2);
        assert_relative_eq!(rows[0].1, 4046.625, epsilon = 1e-9);
        // Known drift of the headway: v_ℓ(0) − v = −15.
        let f = s.system.drift_at(0.0, &s.x0);
        assert_relative_eq!(f[1], -15.0);
    }

    #[test]
    fn shrunk_parameter_ball_is_rejected() {
        let mut p = AccParams::default();
        p.adapt.theta_max = 0.1;
        let msg = match build_acc_with::<f64>(&p) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("oversized true parameter must be rejected"),
        };
        assert!(msg.contains("ball radius"), "unexpected message: {msg}");
    }

    #[test]
    fn unsafe_initial_state_is_rejected() {
        let p = OmniParams {
            x0: vec![5.0, 5.0],
            ..OmniParams::default()
        };
        assert!(build_omni_with::<f64>(&p).is_err());
    }

    #[test]
    fn omni_scenario_arithmetic() {
        let s = build_omni::<f64>();
        assert_relative_eq!(s.barriers[0].h(&s.x0), 4.75);
        // Clearance reports meters from the obstacle boundary: 5 − 4.5.
        assert_relative_eq!(s.clearance_at(&s.x0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.system.theta_true().norm(), 0.13f64.sqrt(), epsilon = 1e-12);
        assert!(s.system.theta_true().norm() <= 1.0);
        assert_eq!(s.controller.bounds().rows().len(), 16);

        // The straight segment from start to goal cuts through the obstacle,
        // so any safe trajectory must detour.
        let (a, b, c) = (dvector![0.0, 5.0], dvector![10.0, 5.0], dvector![5.0, 5.0]);
        let ab = &b - &a;
        let s_param: f64 = (&c - &a).dot(&ab) / ab.norm_squared();
        let closest = &a + ab * s_param.clamp(0.0, 1.0);
        assert!((closest - c).norm() < 4.5);

        // Nominal input saturates toward the goal from the start.
        let un = s.controller.nominal_at(&s.x0);
        assert_relative_eq!(un.norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn drone_gate_and_barrier_arithmetic() {
        let p = DroneParams::default();
        let s = build_drone_with::<f64>(&p).unwrap();
        let gate_width =
            ((p.centers[1][0] - p.centers[0][0]).powi(2)).sqrt() - 2.0 * p.radius;
        assert_relative_eq!(gate_width, 0.4, epsilon = 1e-12);

        // Raw margin 45 − 23.04 at the start; the extension doubles it at
        // zero velocity.
        match &s.clearance {
            ClearanceSignal::SqrtMin(raw) => {
                assert_relative_eq!(raw[0].h(&s.x0), 21.96, epsilon = 1e-12);
            }
            _ => panic!("drone clearance must come from raw margins"),
        }
        assert_relative_eq!(s.barriers[0].h(&s.x0), 43.92, epsilon = 1e-12);
        assert_relative_eq!(s.clearance_at(&s.x0), 21.96f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn drone_extension_identity_on_random_states() {
        // h = ḣ̄ + 2h̄ must hold symbol-for-symbol: ḣ̄ depends only on
        // position, so its chain-rule value is 2(p−c)ᵀv for any acceleration.
        let s = build_drone::<f64>();
        let raw = match &s.clearance {
            ClearanceSignal::SqrtMin(raw) => raw,
            _ => unreachable!(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let x = dvector![
                rng.gen_range(-10.0..10.0f64),
                rng.gen_range(-10.0..10.0f64),
                rng.gen_range(-5.0..5.0f64),
                rng.gen_range(-5.0..5.0f64)
            ];
            for (ext, rb) in s.barriers.iter().zip(raw.iter()) {
                let grad_raw = rb.grad(&x);
                let xdot_free = dvector![x[2], x[3], rng.gen_range(-9.0..9.0f64), rng.gen_range(-9.0..9.0f64)];
                let hdot = grad_raw.dot(&xdot_free);
                let c = if rb.label().ends_with("1-raw") {
                    dvector![-5.0, 0.0]
                } else {
                    dvector![5.0, 0.0]
                };
                let analytic = 2.0 * ((x[0] - c[0]) * x[2] + (x[1] - c[1]) * x[3]);
                assert_abs_diff_eq!(hdot, analytic, epsilon = 1e-10);
                assert_abs_diff_eq!(ext.h(&x), analytic + 2.0 * rb.h(&x), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn all_gradients_match_numeric_probes() {
        let scenarios = [build_acc::<f64>(), build_omni::<f64>(), build_drone::<f64>()];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in &scenarios {
            for _ in 0..20 {
                let n = s.system.state_dim();
                let x = DVector::from_fn(n, |i, _| {
                    rng.gen_range(s.sample_lo[i]..s.sample_hi[i])
                });
                for b in &s.barriers {
                    let numeric = numeric_gradient(|y| b.h(y), &x, 1e-5);
                    let analytic = b.grad(&x);
                    let scale = 1.0 + analytic.norm();
                    assert!(
                        (numeric - analytic).norm() <= 1e-6 * scale,
                        "{} gradient mismatch",
                        b.label()
                    );
                }
                let numeric = numeric_gradient(|y| s.lyapunov.v(y), &x, 1e-5);
                let analytic = s.lyapunov.grad(&x);
                let scale = 1.0 + analytic.norm();
                assert!((numeric - analytic).norm() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn params_round_trip_through_json() {
        let p = AccParams::default();
        let s = serde_json::to_string(&p).unwrap();
        let q: AccParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let p = DroneParams::default();
        let s = serde_json::to_string(&p).unwrap();
        let q: DroneParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }
}
