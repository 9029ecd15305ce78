//! Output-voltage recurrence of the constant on-time buck and its
//! worst-case peak gain from the valley-current deviation.
//!
//! Integrating the capacitor charge balance over one switching cycle and
//! keeping terms to first order in the cycle-to-load time-scale ratio gives
//! a linear recurrence with cycle-dependent coefficients
//!
//! ```text
//! v[n+1] = alpha(t_off) v[n] + beta(t_off) i[n] + gamma(t_off) i[n+1]
//! ```
//!
//! in the deviations from the steady-state cycle. The off-time stays inside
//! the modulator clamp window, so worst-case coefficients over the window
//! bound the response of every admissible schedule.

use crate::converter::{compute_equilibrium, ConverterParams, ParamError, Topology};
use std::fmt;

/// Cycle coefficients of the voltage recurrence at one realized off-time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtvCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Worst-case coefficient values over the off-time clamp window.
///
/// `alpha` falls with the off-time, so its extremes sit at the window
/// endpoints; `beta` and `gamma` grow with the off-time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_max: f64,
    pub gamma_max: f64,
}

/// Peak-gain bound of the voltage block.
///
/// `gamma_state` bounds the shifted state `q[n] = v[n] - gamma[n-1] i[n]`,
/// which obeys `q[n+1] = alpha q[n] + (beta + alpha gamma) i[n]`;
/// `gamma_total` adds the direct feedthrough and bounds `sup |v| / sup |i|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageGainBound {
    pub gamma_state: f64,
    pub gamma_total: f64,
}

/// Voltage-block failures. Carries the values that triggered each case.
#[derive(Debug, Clone, PartialEq)]
pub enum VoltageError {
    Param(ParamError),
    UnsupportedTopology { topology: Topology },
    BadOffTime { value: f64 },
    AlphaOutOfRange { alpha_min: f64, alpha_max: f64 },
    BoundMismatch { direct: f64, closed_form: f64 },
}

impl fmt::Display for VoltageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoltageError::Param(e) => write!(f, "{e}"),
            VoltageError::UnsupportedTopology { topology } => {
                write!(f, "voltage recurrence is defined for buck_const_on, got {topology}")
            }
            VoltageError::BadOffTime { value } => {
                write!(f, "off-time must be positive and finite, got {value}")
            }
            VoltageError::AlphaOutOfRange { alpha_min, alpha_max } => write!(
                f,
                "voltage decay factor must stay in (0, 1) over the clamp window, \
                 got [{alpha_min}, {alpha_max}]"
            ),
            VoltageError::BoundMismatch { direct, closed_form } => write!(
                f,
                "gain bound cross-check failed: direct {direct:e} vs closed form {closed_form:e}"
            ),
        }
    }
}

impl std::error::Error for VoltageError {}

impl From<ParamError> for VoltageError {
    fn from(e: ParamError) -> Self {
        VoltageError::Param(e)
    }
}

fn require_buck(params: &ConverterParams) -> Result<(), VoltageError> {
    params.validate()?;
    if params.topology != Topology::BuckConstOn {
        return Err(VoltageError::UnsupportedTopology { topology: params.topology });
    }
    Ok(())
}

/// Coefficients at one realized off-time:
/// `alpha = 1 - Ts/(RC) - Ton Ts/(2LC)`,
/// `beta = ((1-lambda) Ton + t_off/2)/C`,
/// `gamma = (lambda Ton + t_off/2)/C` with `Ts = Ton + t_off`.
pub fn ltv_coefficients(
    params: &ConverterParams,
    t_off: f64,
) -> Result<LtvCoefficients, VoltageError> {
    require_buck(params)?;
    if !(t_off > 0.0) || !t_off.is_finite() {
        return Err(VoltageError::BadOffTime { value: t_off });
    }
    let t_on = params.t_fixed;
    let t_s = t_on + t_off;
    let alpha = 1.0 - t_s / (params.load * params.capacitance)
        - t_on * t_s / (2.0 * params.inductance * params.capacitance);
    let beta = ((1.0 - params.lambda) * t_on + 0.5 * t_off) / params.capacitance;
    let gamma = (params.lambda * t_on + 0.5 * t_off) / params.capacitance;
    Ok(LtvCoefficients { alpha, beta, gamma })
}

/// Worst-case coefficients over the clamp window, requiring the decay
/// factor to stay inside `(0, 1)`.
pub fn coefficient_bounds(params: &ConverterParams) -> Result<CoefficientBounds, VoltageError> {
    require_buck(params)?;
    let at_min = ltv_coefficients(params, params.t_var_min)?;
    let at_max = ltv_coefficients(params, params.t_var_max)?;
    let bounds = CoefficientBounds {
        alpha_min: at_max.alpha,
        alpha_max: at_min.alpha,
        beta_max: at_max.beta,
        gamma_max: at_max.gamma,
    };
    if !(bounds.alpha_min > 0.0) || !(bounds.alpha_max < 1.0) {
        return Err(VoltageError::AlphaOutOfRange {
            alpha_min: bounds.alpha_min,
            alpha_max: bounds.alpha_max,
        });
    }
    Ok(bounds)
}

/// Worst-case peak gain of the voltage block over all clamp-admissible
/// off-time schedules.
///
/// `gamma_state = (beta_max + alpha_max gamma_max) / (1 - alpha_max)` and
/// `gamma_total = gamma_state + gamma_max`. The total is cross-checked
/// against the algebraically equivalent closed form
/// `R / (1 + Ton/(2 tau2)) * Ts_max / Ts_min` to one part in 1e9.
pub fn voltage_block_gain_bound(
    params: &ConverterParams,
) -> Result<VoltageGainBound, VoltageError> {
    let b = coefficient_bounds(params)?;
    let gamma_state = (b.beta_max + b.alpha_max * b.gamma_max) / (1.0 - b.alpha_max);
    let gamma_total = gamma_state + b.gamma_max;

    let tau2 = params.inductance / params.load;
    let t_s_min = params.t_fixed + params.t_var_min;
    let t_s_max = params.t_fixed + params.t_var_max;
    let closed_form =
        params.load / (1.0 + params.t_fixed / (2.0 * tau2)) * t_s_max / t_s_min;
    if (gamma_total - closed_form).abs() > 1e-9 * closed_form.abs() {
        return Err(VoltageError::BoundMismatch { direct: gamma_total, closed_form });
    }
    Ok(VoltageGainBound { gamma_state, gamma_total })
}

/// Steady-state off-time convenience used when the clamp window degenerates
/// to the equilibrium cycle.
pub fn steady_state_off_time(params: &ConverterParams) -> Result<f64, VoltageError> {
    require_buck(params)?;
    Ok(compute_equilibrium(params)?.t_var_ss)
}
