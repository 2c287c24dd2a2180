//! Numerical tolerances shared by every decision procedure.

/// Relative Hermiticity tolerance: `‖X − X†‖_F ≤ HERM_TOL · ‖X‖_F`.
pub const HERM_TOL: f64 = 1e-10;

/// Feasibility tolerance for conic constraints.
pub const FEAS_TOL: f64 = 1e-8;

/// Relative duality-gap tolerance for `Optimal` solves.
pub const GAP_TOL: f64 = 1e-7;

/// Trace-norm tolerance below which a channel counts as reproducing a target.
pub const DECISION_TOL: f64 = 1e-6;

/// Minimum separation, in bits, a witness must exhibit to be reported.
pub const WITNESS_MIN_GAP: f64 = 1e-5;

/// Default tolerance for trace-preservation style channel flags.
pub const CHANNEL_TOL: f64 = 1e-8;

/// Tolerance for density-operator checks on user input (trace and positivity).
pub const DENSITY_TOL: f64 = 1e-8;

/// Environment variable overriding [`GAP_TOL`] for a process.
pub const SOLVER_TOL_ENV: &str = "QMAJ_SOLVER_TOL";

/// The duality-gap tolerance in effect: [`GAP_TOL`] unless overridden by
/// `QMAJ_SOLVER_TOL` with a finite positive value.
pub fn gap_tol() -> f64 {
    std::env::var(SOLVER_TOL_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v > 0.0)
        .unwrap_or(GAP_TOL)
}
