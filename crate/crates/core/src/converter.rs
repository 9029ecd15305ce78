//! Converter parameters, steady-state operating point, and model assumptions.
//!
//! The sampled-state model takes one snapshot per switching cycle at the
//! valley-current instant. Everything downstream (gain bounds, criteria,
//! simulation) is expressed around the steady-state cycle computed here.
//! All quantities are SI base units: volts, amperes, henries, farads, ohms,
//! seconds.

use std::fmt;

/// Converter topology and which switching interval is regulated.
///
/// `BuckConstOn`: buck with fixed on-time, the comparator terminates the
/// off-time. `BoostConstOff`: boost with fixed off-time, the comparator
/// terminates the on-time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    BuckConstOn,
    BoostConstOff,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::BuckConstOn => write!(f, "buck_const_on"),
            Topology::BoostConstOff => write!(f, "boost_const_off"),
        }
    }
}

/// Physical converter parameters plus the clamp interval for the variable
/// switching phase.
///
/// `t_fixed` is the fixed interval of the topology (on-time for
/// `BuckConstOn`, off-time for `BoostConstOff`); the comparator-controlled
/// interval is clamped to `[t_var_min, t_var_max]` by the modulator.
/// `lambda` splits the cycle-average current sample between the previous and
/// next valley sample when forming the voltage recurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterParams {
    pub topology: Topology,
    pub v_in: f64,
    pub v_out: f64,
    pub inductance: f64,
    pub capacitance: f64,
    pub load: f64,
    pub t_fixed: f64,
    pub lambda: f64,
    pub t_var_min: f64,
    pub t_var_max: f64,
}

/// Parameter-validation failures. Each variant carries the offending value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamError {
    NonPositive { name: &'static str, value: f64 },
    LambdaRange { value: f64 },
    VarWindowInverted { min: f64, max: f64 },
    VoltageOrdering { topology: Topology, v_in: f64, v_out: f64 },
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamError::NonPositive { name, value } => {
                write!(f, "{name} must be positive, got {value}")
            }
            ParamError::LambdaRange { value } => {
                write!(f, "lambda must lie in [0, 1], got {value}")
            }
            ParamError::VarWindowInverted { min, max } => {
                write!(f, "t_var_min = {min} exceeds t_var_max = {max}")
            }
            ParamError::VoltageOrdering { topology, v_in, v_out } => write!(
                f,
                "{topology} requires {} but got v_in = {v_in}, v_out = {v_out}",
                match topology {
                    Topology::BuckConstOn => "v_out < v_in",
                    Topology::BoostConstOff => "v_out > v_in",
                }
            ),
        }
    }
}

impl std::error::Error for ParamError {}

impl ConverterParams {
    /// Checks positivity, `0 <= lambda <= 1`, clamp-window ordering, and the
    /// topology voltage ordering (buck steps down, boost steps up).
    pub fn validate(&self) -> Result<(), ParamError> {
        let positives = [
            ("v_in", self.v_in),
            ("v_out", self.v_out),
            ("inductance", self.inductance),
            ("capacitance", self.capacitance),
            ("load", self.load),
            ("t_fixed", self.t_fixed),
            ("t_var_min", self.t_var_min),
            ("t_var_max", self.t_var_max),
        ];
        for (name, value) in positives {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ParamError::NonPositive { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) || !self.lambda.is_finite() {
            return Err(ParamError::LambdaRange { value: self.lambda });
        }
        if self.t_var_min > self.t_var_max {
            return Err(ParamError::VarWindowInverted {
                min: self.t_var_min,
                max: self.t_var_max,
            });
        }
        let ordered = match self.topology {
            Topology::BuckConstOn => self.v_out < self.v_in,
            Topology::BoostConstOff => self.v_out > self.v_in,
        };
        if !ordered {
            return Err(ParamError::VoltageOrdering {
                topology: self.topology,
                v_in: self.v_in,
                v_out: self.v_out,
            });
        }
        Ok(())
    }

    /// Steady-state slope of the falling inductor ramp, `m2 = v_out / L`.
    pub fn m2_nominal(&self) -> f64 {
        self.v_out / self.inductance
    }
}

/// Steady-state switching cycle.
///
/// `i_valley` is reported only for topologies where the sampled model pins
/// it (the buck valley current); otherwise it is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub i_valley: Option<f64>,
    pub t_var_ss: f64,
    pub t_s_ss: f64,
}

/// Computes the steady-state cycle from volt-second and charge balance.
///
/// Buck: `T_off = (V_in - V_out)/V_out * T_on`,
/// `I_v = V_out/R - (V_in - V_out) * T_on / (2 L)`.
/// Boost: `T_on = (V_out/V_in - 1) * T_off`; the valley current is not pinned
/// by this model and is omitted.
pub fn compute_equilibrium(params: &ConverterParams) -> Result<Equilibrium, ParamError> {
    params.validate()?;
    match params.topology {
        Topology::BuckConstOn => {
            let t_on = params.t_fixed;
            let t_off = (params.v_in - params.v_out) / params.v_out * t_on;
            let ripple_half =
                0.5 * (params.v_in - params.v_out) / params.inductance * t_on;
            let i_valley = params.v_out / params.load - ripple_half;
            Ok(Equilibrium {
                i_valley: Some(i_valley),
                t_var_ss: t_off,
                t_s_ss: t_on + t_off,
            })
        }
        Topology::BoostConstOff => {
            let t_off = params.t_fixed;
            let t_on = (params.v_out / params.v_in - 1.0) * t_off;
            Ok(Equilibrium {
                i_valley: None,
                t_var_ss: t_on,
                t_s_ss: t_on + t_off,
            })
        }
    }
}

/// Time constants and the switching-period window implied by the clamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Load time constant `tau1 = R C`.
    pub tau1: f64,
    /// Inductor time constant `tau2 = L / R`.
    pub tau2: f64,
    /// Shortest admissible period `t_fixed + t_var_min`.
    pub t_s_min: f64,
    /// Longest admissible period `t_fixed + t_var_max`.
    pub t_s_max: f64,
}

/// Computes `tau1 = R C`, `tau2 = L / R` and the period window.
pub fn derived_constants(params: &ConverterParams) -> Result<DerivedConstants, ParamError> {
    params.validate()?;
    Ok(DerivedConstants {
        tau1: params.load * params.capacitance,
        tau2: params.inductance / params.load,
        t_s_min: params.t_fixed + params.t_var_min,
        t_s_max: params.t_fixed + params.t_var_max,
    })
}

/// Separation ratios behind the sampled model, with the checked threshold.
///
/// `ratio_rc = T_s_max / (R C)` (cycle much shorter than the load time
/// constant) and `ratio_ripple = T_s_max * T_fixed_on / (2 L C)` (ripple
/// charge small against the output capacitor). `pass` means both ratios are
/// below `threshold`; a failing report is a warning, not an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    pub ratio_rc: f64,
    pub ratio_ripple: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Evaluates the time-scale separation ratios against `threshold`
/// (0.1 is the conventional choice).
pub fn validate_class_sigma(
    params: &ConverterParams,
    threshold: f64,
) -> Result<AssumptionReport, ParamError> {
    params.validate()?;
    let d = derived_constants(params)?;
    let t_on = match params.topology {
        Topology::BuckConstOn => params.t_fixed,
        Topology::BoostConstOff => compute_equilibrium(params)?.t_var_ss,
    };
    let ratio_rc = d.t_s_max / (params.load * params.capacitance);
    let ratio_ripple =
        d.t_s_max * t_on / (2.0 * params.inductance * params.capacitance);
    Ok(AssumptionReport {
        ratio_rc,
        ratio_ripple,
        threshold,
        pass: ratio_rc < threshold && ratio_ripple < threshold,
    })
}

/// Reference buck design used across the test suite: 12 V to 2.2 V, 100 ns
/// on-time, 240 nH, 100 uF, with the load resistance left to the caller.
pub fn reference_buck(load: f64, t_var_min: f64, t_var_max: f64) -> ConverterParams {
    ConverterParams {
        topology: Topology::BuckConstOn,
        v_in: 12.0,
        v_out: 2.2,
        inductance: 240e-9,
        capacitance: 100e-6,
        load,
        t_fixed: 100e-9,
        lambda: 0.5,
        t_var_min,
        t_var_max,
    }
}
