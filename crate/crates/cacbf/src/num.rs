//! Scalar abstraction so the core math runs in either f32 or f64.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the library.
///
/// Combines nalgebra's field operations with num-traits conversions and
/// carries the per-precision tolerances used by the numerical checks. The
/// f64 values are the contract the test suite is written against; f32 gets
/// proportionally looser ones and is provided for completeness.
pub trait Real: RealField + FromPrimitive + ToPrimitive + Copy + Default {
    /// Machine epsilon.
    fn eps() -> Self;

    /// Tolerance scale for symmetry and positive-definiteness checks.
    fn tol_sym() -> Self;

    /// Primal feasibility tolerance for the QP, scaled by (1 + ‖b‖∞).
    fn tol_feas() -> Self;

    /// KKT certificate tolerance, scaled by (1 + ‖b‖∞).
    fn tol_kkt() -> Self;

    /// Boundary-detection tolerance for the parameter ball.
    fn tol_boundary() -> Self;

    /// Converts an `f64` constant, panicking on non-representable input.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in this scalar type")
    }

    /// View as `f64`, used for reports and diagnostics.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

macro_rules! impl_real {
    ($t:ty, $sym:expr, $feas:expr, $kkt:expr, $boundary:expr) => {
        impl Real for $t {
            fn eps() -> Self {
                <$t>::EPSILON
            }
            fn tol_sym() -> Self {
                $sym
            }
            fn tol_feas() -> Self {
                $feas
            }
            fn tol_kkt() -> Self {
                $kkt
            }
            fn tol_boundary() -> Self {
                $boundary
            }
        }
    };
}

impl_real!(f64, 1e-12, 1e-9, 1e-8, 1e-12);
impl_real!(f32, 1e-5, 1e-4, 1e-3, 1e-6);
