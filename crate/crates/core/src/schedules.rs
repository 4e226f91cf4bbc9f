//! Per-episode schedules for the confidence threshold λ, the consistency
//! weight α, and the shaping proportion `p_u`.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Start and final values of the two annealed coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub lambda_start: f64,
    /// Asymptote of λ as `t/T → ∞`.
    pub lambda_final: f64,
    pub alpha_start: f64,
    pub alpha_final: f64,
    /// Fraction of `T` at which α reaches its final value.
    pub alpha_knee: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { lambda_start: 0.6, lambda_final: 0.9, alpha_start: 0.2, alpha_final: 0.7, alpha_knee: 0.8 }
    }
}

fn check_horizon(t: f64, total: f64) -> Result<()> {
    if !(total > 0.0) {
        return arg_err("total episode count T must be positive");
    }
    if !(0.0..=total).contains(&t) {
        return arg_err(format!("episode {t} outside [0, {total}]"));
    }
    Ok(())
}

/// `λ(t) = λ₀ + (λ_final − λ₀)(1 − e^{−t/T})`.
pub fn lambda_with(p: &ScheduleParams, t: f64, total: f64) -> Result<f64> {
    check_horizon(t, total)?;
    Ok(p.lambda_start + (p.lambda_final - p.lambda_start) * (1.0 - (-t / total).exp()))
}

/// Piecewise-linear α, flat after `knee · T`.
pub fn alpha_with(p: &ScheduleParams, t: f64, total: f64) -> Result<f64> {
    check_horizon(t, total)?;
    let knee = p.alpha_knee * total;
    Ok(if t < knee { p.alpha_start + (p.alpha_final - p.alpha_start) * (t / knee) } else { p.alpha_final })
}

/// λ at episode `t` of `T` with the reference constants (0.6 rising towards 0.9).
pub fn lambda_at(t: f64, total: f64) -> Result<f64> {
    lambda_with(&ScheduleParams::default(), t, total)
}

/// α at episode `t` of `T` with the reference constants (0.2 to 0.7 by 0.8·T).
pub fn alpha_at(t: f64, total: f64) -> Result<f64> {
    alpha_with(&ScheduleParams::default(), t, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Early,
    Middle,
    Late,
}

/// Inputs to the shaping-proportion schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub episode: f64,
    pub total: f64,
    /// Nonzero-reward transitions currently in the buffer.
    pub nonzero_count: usize,
    /// Buffer occupancy, used to normalise the middle phase.
    pub buffer_count: usize,
    /// Phase boundaries as fractions of `T`.
    pub early_end: f64,
    pub late_start: f64,
}

impl ScheduleState {
    pub fn new(episode: f64, total: f64, nonzero_count: usize, buffer_count: usize) -> Self {
        Self { episode, total, nonzero_count, buffer_count, early_end: 0.2, late_start: 0.8 }
    }

    pub fn phase(&self) -> Phase {
        let frac = if self.total > 0.0 { self.episode / self.total } else { 0.0 };
        if frac < self.early_end {
            Phase::Early
        } else if frac < self.late_start {
            Phase::Middle
        } else {
            Phase::Late
        }
    }
}

/// `p_u = clamp(base · m, 0, 1)` with `m = ln(1 + N_r)` in the outer phases
/// and `m = N_r / buffer_count` in the middle one.
pub fn p_u_at(state: &ScheduleState, base: f64) -> f64 {
    let n_r = state.nonzero_count as f64;
    let multiplier = match state.phase() {
        Phase::Early | Phase::Late => n_r.ln_1p(),
        Phase::Middle if state.buffer_count > 0 => n_r / state.buffer_count as f64,
        Phase::Middle => 0.0,
    };
    (base * multiplier).clamp(0.0, 1.0)
}
