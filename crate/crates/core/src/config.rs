//! Numeric constants standing in for unspecified implied constants.
//!
//! Every value here is echoed into reports so that a result can always be
//! traced back to the constants it was produced with.

use crate::error::{RaceError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Multiplier of log q / √y in the smoothed L'/L(1, χ*) error.
    pub smoothing_constant: f64,
    /// Cross-route B tolerance: |char − residue| ≤ c0 · log log q + smoothing budgets.
    pub cross_route_c0: f64,
    /// |B_q(a, b)| ≤ b_bound · φ(q).
    pub b_bound: f64,
    /// |E| ≤ structure_c · log² q for the structured B values.
    pub structure_c: f64,
    /// Multiplier of the series error budget 1/N + |C||B|/N^{3/2} + B²/N².
    pub series_budget_c: f64,
    /// Multiplier of C_q(1)² log² q / V in the two-way error budget.
    pub two_way_budget_c: f64,
    /// Extreme-bias threshold: |δ − 1/r!| ≥ tau / log q.
    pub tau: f64,
}

/// Frozen values. The cross-route constant was fitted once on q ∈ {12, 101, 420}
/// and the smoothing constant on q ≤ 100 comparing y = 10⁶ with y = 4·10⁶.
pub const CALIBRATION: Calibration = Calibration {
    smoothing_constant: 1.0,
    cross_route_c0: 12.0,
    b_bound: 1.0,
    structure_c: 30.0,
    series_budget_c: 1.0,
    two_way_budget_c: 1.0,
    tau: 0.01,
};

impl Default for Calibration {
    fn default() -> Self {
        CALIBRATION
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("smoothing_constant", self.smoothing_constant),
            ("cross_route_c0", self.cross_route_c0),
            ("b_bound", self.b_bound),
            ("structure_c", self.structure_c),
            ("series_budget_c", self.series_budget_c),
            ("two_way_budget_c", self.two_way_budget_c),
            ("tau", self.tau),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RaceError::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Default smoothing parameter y = max(q², 10⁶).
pub fn default_smoothing(q: u64) -> f64 {
    ((q as f64) * (q as f64)).max(1e6)
}
