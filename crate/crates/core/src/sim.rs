//! Cycle-by-cycle discrete-time simulation of valley-current-controlled
//! converters, plus empirical gain estimation and certificate validation.
//!
//! The simulator advances the sampled state (valley-current deviation,
//! voltage deviation) one switching cycle at a time. The current update uses
//! the exact ramp identity: with k = Ts_ss/L, the valley deviation obeys
//! i~[n+1] = i~[n] - k v~[n] - m2[n] t~off[n] whenever the comparator
//! triggers naturally, and the same ramp expression when the off-time
//! clamps. The voltage update applies the per-cycle affine map with
//! coefficients evaluated at the realized off-time.

use crate::converter::{compute_equilibrium, ConverterParams, ParamError, Topology};
use crate::lure::{GainCertificate, SectorBound};
use crate::voltage::{ltv_coefficients, VoltageError};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Errors raised by the simulator and the empirical gain estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// Underlying parameter set is invalid.
    Param(ParamError),
    /// Voltage-map evaluation failed (off-time outside the admissible range).
    Voltage(VoltageError),
    /// The operation only supports one topology.
    UnsupportedTopology { topology: Topology },
    /// The instantaneous output voltage dropped to or below zero, so the
    /// falling ramp slope is no longer defined.
    NonPhysicalState { cycle: usize, v_abs: f64 },
    /// A state guard tripped while stepping the given cycle.
    Diverged {
        cycle: usize,
        i_tilde: f64,
        v_tilde: f64,
    },
    /// A slope sample lies outside the declared sector.
    SlopeOutOfSector {
        index: usize,
        slope: f64,
        alpha: f64,
        beta: f64,
    },
    /// Slope and input sequences must have equal length.
    LengthMismatch { slopes: usize, inputs: usize },
    /// The trace is too short for the requested settle window.
    TraceTooShort { len: usize, needed: usize },
    /// An input sequence carried no energy, so a gain ratio is undefined.
    ZeroEnergyInput { trial: usize },
    /// A scalar configuration value is out of range.
    BadSpec { what: &'static str, value: f64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Param(e) => write!(f, "parameter error: {e}"),
            SimError::Voltage(e) => write!(f, "voltage map error: {e}"),
            SimError::UnsupportedTopology { topology } => {
                write!(f, "operation does not support topology {topology}")
            }
            SimError::NonPhysicalState { cycle, v_abs } => write!(
                f,
                "output voltage {v_abs:e} V is non-positive at cycle {cycle}; falling slope undefined"
            ),
            SimError::Diverged {
                cycle,
                i_tilde,
                v_tilde,
            } => write!(
                f,
                "state guard tripped at cycle {cycle}: i~ = {i_tilde:e} A, v~ = {v_tilde:e} V"
            ),
            SimError::SlopeOutOfSector {
                index,
                slope,
                alpha,
                beta,
            } => write!(
                f,
                "slope {slope} at index {index} outside sector [{alpha}, {beta}]"
            ),
            SimError::LengthMismatch { slopes, inputs } => write!(
                f,
                "slope sequence has length {slopes} but input sequence has length {inputs}"
            ),
            SimError::TraceTooShort { len, needed } => write!(
                f,
                "trace has {len} samples but classification needs at least {needed}"
            ),
            SimError::ZeroEnergyInput { trial } => {
                write!(f, "input sequence for trial {trial} carries no energy")
            }
            SimError::BadSpec { what, value } => {
                write!(f, "invalid {what}: {value}")
            }
        }
    }
}

impl std::error::Error for SimError {}

impl From<ParamError> for SimError {
    fn from(e: ParamError) -> Self {
        SimError::Param(e)
    }
}

impl From<VoltageError> for SimError {
    fn from(e: VoltageError) -> Self {
        SimError::Voltage(e)
    }
}

/// Per-cycle slope sequence used by a sector-bounded interference schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// The same slope every cycle.
    Constant { slope: f64 },
    /// Endpoints of the sector, upper bound on even cycles.
    Alternating,
    /// Independent uniform draws from the sector, derived from the seed and
    /// the cycle index so the sequence is reproducible and random access.
    Random { seed: u64 },
}

impl Schedule {
    /// Slope sample for cycle `n` within `sector`.
    pub fn slope_at(&self, sector: &SectorBound, n: usize) -> f64 {
        match self {
            Schedule::Constant { slope } => *slope,
            Schedule::Alternating => {
                if n % 2 == 0 {
                    sector.beta
                } else {
                    sector.alpha
                }
            }
            Schedule::Random { seed } => {
                let mut rng = SmallRng::seed_from_u64(seed.wrapping_add(n as u64));
                rng.gen_range(sector.alpha..=sector.beta)
            }
        }
    }
}

/// How a sector slope converts into a physical comparator-ramp perturbation.
///
/// The interference enters the valley detection as an extra sense-ramp
/// contribution psi(t~off) = -s * m2_norm * t~off. The normalization slope
/// m2_norm decides what the sector slope s is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectorNormalization {
    /// Fixed normalization by the equilibrium falling slope V_out/L. The
    /// effective loop slope then scales as s * V_out / v[n], so output
    /// voltage dips strengthen the interference.
    Equilibrium,
    /// Normalization by the instantaneous falling slope v[n]/L, which
    /// keeps the effective loop slope exactly equal to the scheduled s.
    Instantaneous,
}

/// Comparator interference applied to the valley detection.
#[derive(Debug, Clone, PartialEq)]
pub enum InterferenceModel {
    /// Ideal valley detection.
    None,
    /// Sector-bounded ramp-slope interference psi = -s[n] * m2_norm * t~off.
    SectorGainSchedule {
        sector: SectorBound,
        schedule: Schedule,
        normalization: SectorNormalization,
    },
    /// Additive sense-voltage sinusoid psi(t) = amplitude * sin(2 pi t /
    /// period + phase), in amperes, evaluated at the absolute valley
    /// detection time.
    Sinusoid {
        amplitude: f64,
        period: f64,
        phase: f64,
    },
}

/// Current-command deviation applied around the converter equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub enum CommandProfile {
    /// Fixed command deviation.
    Constant { level: f64 },
    /// Command jumps from `before` to `after` at cycle 0.
    Step { before: f64, after: f64 },
    /// Command sits at `base`, raised by `amplitude` for cycles in
    /// [start, start + width).
    Pulse {
        base: f64,
        amplitude: f64,
        start: usize,
        width: usize,
    },
}

impl CommandProfile {
    /// Command deviation before cycle 0, which sets the initial equilibrium.
    pub fn initial(&self) -> f64 {
        match self {
            CommandProfile::Constant { level } => *level,
            CommandProfile::Step { before, .. } => *before,
            CommandProfile::Pulse { base, .. } => *base,
        }
    }

    /// Command deviation applied during cycle `n`.
    pub fn at(&self, n: usize) -> f64 {
        match self {
            CommandProfile::Constant { level } => *level,
            CommandProfile::Step { after, .. } => *after,
            CommandProfile::Pulse {
                base,
                amplitude,
                start,
                width,
            } => {
                if n >= *start && n < start + width {
                    base + amplitude
                } else {
                    *base
                }
            }
        }
    }
}

/// Divergence guards: a step fails once a deviation magnitude crosses these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGuards {
    pub max_current: f64,
    pub max_voltage: f64,
}

impl Default for SimGuards {
    fn default() -> Self {
        SimGuards {
            max_current: 1e3,
            max_voltage: 1e3,
        }
    }
}

/// Sampled converter state at the start of cycle `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleState {
    /// Cycle index.
    pub n: usize,
    /// Valley-current deviation in amperes.
    pub i_tilde: f64,
    /// Output-voltage deviation in volts at the valley sample.
    pub v_tilde: f64,
    /// Off-time realized during the previous cycle, in seconds.
    pub t_off: f64,
    /// Shifted voltage coordinate q = v~ - gamma(t_off) * i~.
    pub q: f64,
    /// Whether the previous cycle's off-time hit a clamp bound.
    pub clamped: bool,
    /// Whether the previous cycle's comparator residual changed sign more
    /// than once (or lost its natural slope) over the clamp window.
    pub non_monotone: bool,
    /// Absolute time at the start of cycle `n`, in seconds.
    pub t_start: f64,
}

/// Result of the per-cycle off-time search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffTimeSolution {
    /// Realized off-time in seconds, clamped into the admissible window.
    pub t_off: f64,
    /// True when the natural trigger fell outside the window (or no natural
    /// trigger existed) and a clamp bound was applied.
    pub clamped: bool,
    /// True when the comparator residual was not strictly decreasing, so the
    /// reported root is the earliest crossing rather than a unique one.
    pub non_monotone: bool,
}

/// Recorded trajectory, one state per cycle boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientTrace {
    /// States at cycle boundaries 0..=N (shorter if truncated).
    pub states: Vec<CycleState>,
    /// First cycle index whose step tripped a guard, if any; the trace is
    /// truncated there rather than treated as a failure.
    pub diverged_at: Option<usize>,
    pub params: ConverterParams,
    pub interference: InterferenceModel,
    pub command: CommandProfile,
}

impl TransientTrace {
    /// Largest current-deviation magnitude over the trace.
    pub fn peak_current(&self) -> f64 {
        self.states.iter().map(|s| s.i_tilde.abs()).fold(0.0, f64::max)
    }

    /// Largest voltage-deviation magnitude over the trace.
    pub fn peak_voltage(&self) -> f64 {
        self.states.iter().map(|s| s.v_tilde.abs()).fold(0.0, f64::max)
    }

    /// Number of cycles whose off-time search reported a non-monotone
    /// comparator residual.
    pub fn non_monotone_count(&self) -> usize {
        self.states.iter().filter(|s| s.non_monotone).count()
    }

    /// Render the trace as CSV with a fixed header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,i_tilde_A,v_tilde_V,t_off_s,clamped\n");
        for s in &self.states {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{}\n",
                s.n, s.i_tilde, s.v_tilde, s.t_off, s.clamped
            ));
        }
        out
    }
}

/// Verdict classes for a transient trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityClass {
    Stable,
    Unstable,
    Indeterminate,
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Unstable => "unstable",
            StabilityClass::Indeterminate => "indeterminate",
        };
        write!(f, "{s}")
    }
}

/// Classification summary for a transient trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimVerdict {
    pub classification: StabilityClass,
    /// Largest current-deviation magnitude over the trace, amperes.
    pub peak_current: f64,
    /// Largest voltage-deviation magnitude over the trace, volts.
    pub peak_voltage: f64,
    /// Current RMS over a window centered in the trace interior.
    pub mid_rms: f64,
    /// Current RMS over the final window.
    pub final_rms: f64,
    pub diverged_at: Option<usize>,
}

/// One step of the normalized sector loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitlessStep {
    /// State entering the step.
    pub x: f64,
    /// Exogenous input.
    pub r: f64,
    /// Sector input p = x - h + r resolved for the loop.
    pub p: f64,
    /// Sector output h = s * p.
    pub h: f64,
    /// Performance output e = x.
    pub e: f64,
    /// State leaving the step.
    pub x_next: f64,
}

/// Signal block selector for empirical gain estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum GainBlock {
    /// Normalized current loop with a sector-bounded slope schedule; the
    /// estimate targets the l2 gain from r to e.
    CurrentUnitless { sector: SectorBound },
    /// Per-cycle affine voltage map driven by a current sequence, with the
    /// off-time schedule sampled from the clamp window.
    VoltageLtv,
}

/// Ensemble layout for empirical gain estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    /// Number of independent trials; the estimate is the max ratio over them.
    pub trials: usize,
    /// Samples per trial.
    pub length: usize,
    /// Input amplitude scale.
    pub amplitude: f64,
}

fn require_buck(params: &ConverterParams) -> Result<(), SimError> {
    if params.topology != Topology::BuckConstOn {
        return Err(SimError::UnsupportedTopology {
            topology: params.topology,
        });
    }
    Ok(())
}

/// Solve the comparator trigger time for the cycle starting at `prev`.
///
/// The comparator residual along the falling ramp, as a function of the
/// off-time offset tau = t_off - T_off_ss, is
/// f(tau) = i~ - k v~ - i~cmd - m2 tau + psi, and the realized off-time is
/// the earliest root clamped into [t_var_min, t_var_max].
pub fn solve_off_time(
    prev: &CycleState,
    params: &ConverterParams,
    interference: &InterferenceModel,
    i_cmd_tilde: f64,
) -> Result<OffTimeSolution, SimError> {
    params.validate()?;
    require_buck(params)?;
    let eq = compute_equilibrium(params)?;
    let v_abs = params.v_out + prev.v_tilde;
    if v_abs <= 0.0 {
        return Err(SimError::NonPhysicalState {
            cycle: prev.n,
            v_abs,
        });
    }
    let m2 = v_abs / params.inductance;
    let k = eq.t_s_ss / params.inductance;
    let rhs0 = prev.i_tilde - k * prev.v_tilde - i_cmd_tilde;
    let t_off_ss = eq.t_var_ss;

    let (raw, non_monotone) = match interference {
        InterferenceModel::None => (t_off_ss + rhs0 / m2, false),
        InterferenceModel::SectorGainSchedule {
            sector,
            schedule,
            normalization,
        } => {
            let m2_norm = match normalization {
                SectorNormalization::Equilibrium => params.v_out / params.inductance,
                SectorNormalization::Instantaneous => m2,
            };
            let s = schedule.slope_at(sector, prev.n);
            let denom = m2 + s * m2_norm;
            if denom <= 0.0 {
                // The interfered ramp no longer falls toward the command, so
                // there is no natural trigger in the descending sense; park at
                // the bound the residual sign points to.
                let t = if rhs0 >= 0.0 {
                    params.t_var_max
                } else {
                    params.t_var_min
                };
                (t, true)
            } else {
                (t_off_ss + rhs0 / denom, false)
            }
        }
        InterferenceModel::Sinusoid {
            amplitude,
            period,
            phase,
        } => {
            if *period <= 0.0 {
                return Err(SimError::BadSpec {
                    what: "sinusoid period",
                    value: *period,
                });
            }
            let t_on = params.t_fixed;
            let f = |t_off: f64| -> f64 {
                let t_abs = prev.t_start + t_on + t_off;
                rhs0 - m2 * (t_off - t_off_ss)
                    + amplitude * (2.0 * std::f64::consts::PI * t_abs / period + phase).sin()
            };
            solve_scan_bisect(&f, params.t_var_min, params.t_var_max, rhs0, m2, t_off_ss)
        }
    };

    if raw < params.t_var_min {
        Ok(OffTimeSolution {
            t_off: params.t_var_min,
            clamped: true,
            non_monotone,
        })
    } else if raw > params.t_var_max {
        Ok(OffTimeSolution {
            t_off: params.t_var_max,
            clamped: true,
            non_monotone,
        })
    } else {
        Ok(OffTimeSolution {
            t_off: raw,
            clamped: false,
            non_monotone,
        })
    }
}

/// Scan the clamp window for residual sign changes and bisect the earliest
/// bracket to 1e-15 s. Returns the root (or an out-of-window surrogate when
/// no crossing exists) and a non-monotonicity flag.
fn solve_scan_bisect(
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    rhs0: f64,
    m2: f64,
    t_off_ss: f64,
) -> (f64, bool) {
    const SEGMENTS: usize = 128;
    let step = (hi - lo) / SEGMENTS as f64;
    let mut crossings = 0usize;
    let mut bracket: Option<(f64, f64)> = None;
    if step > 0.0 {
        let mut t_prev = lo;
        let mut f_prev = f(lo);
        for j in 1..=SEGMENTS {
            let t = lo + step * j as f64;
            let ft = f(t);
            if f_prev == 0.0 || f_prev.signum() != ft.signum() {
                crossings += 1;
                if bracket.is_none() {
                    bracket = Some((t_prev, t));
                }
            }
            t_prev = t;
            f_prev = ft;
        }
    }
    let non_monotone = crossings > 1;
    match bracket {
        Some((mut a, mut b)) => {
            let mut fa = f(a);
            while b - a > 1e-15 {
                let mid = 0.5 * (a + b);
                let fm = f(mid);
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if fa.signum() != fm.signum() {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            (0.5 * (a + b), non_monotone)
        }
        None => {
            // No crossing inside the window; fall back to the uninterfered
            // affine root so the clamp logic picks the correct bound.
            (t_off_ss + rhs0 / m2, non_monotone)
        }
    }
}

/// Advance the sampled state by one switching cycle.
pub fn step_cycle(
    prev: &CycleState,
    params: &ConverterParams,
    interference: &InterferenceModel,
    i_cmd_tilde: f64,
    guards: &SimGuards,
) -> Result<CycleState, SimError> {
    let eq = compute_equilibrium(params)?;
    let v_abs = params.v_out + prev.v_tilde;
    if v_abs <= 0.0 {
        return Err(SimError::NonPhysicalState {
            cycle: prev.n,
            v_abs,
        });
    }
    let sol = solve_off_time(prev, params, interference, i_cmd_tilde)?;
    let m2 = v_abs / params.inductance;
    let k = eq.t_s_ss / params.inductance;
    let t_tilde_off = sol.t_off - eq.t_var_ss;
    // Ramp identity: exact for natural triggers and clamped cycles alike,
    // because the valley sample always lies on the falling ramp.
    let i_next = prev.i_tilde - k * prev.v_tilde - m2 * t_tilde_off;
    if !i_next.is_finite() || i_next.abs() > guards.max_current {
        return Err(SimError::Diverged {
            cycle: prev.n + 1,
            i_tilde: i_next,
            v_tilde: prev.v_tilde,
        });
    }
    let coeffs = ltv_coefficients(params, sol.t_off)?;
    let v_next = coeffs.alpha * prev.v_tilde + coeffs.beta * prev.i_tilde + coeffs.gamma * i_next;
    if !v_next.is_finite() || v_next.abs() > guards.max_voltage {
        return Err(SimError::Diverged {
            cycle: prev.n + 1,
            i_tilde: i_next,
            v_tilde: v_next,
        });
    }
    Ok(CycleState {
        n: prev.n + 1,
        i_tilde: i_next,
        v_tilde: v_next,
        t_off: sol.t_off,
        q: v_next - coeffs.gamma * i_next,
        clamped: sol.clamped,
        non_monotone: sol.non_monotone,
        t_start: prev.t_start + params.t_fixed + sol.t_off,
    })
}

/// Fixed point of the uninterfered cycle map at a constant command
/// deviation, used as the initial condition of a transient.
///
/// The valley deviation at the fixed point equals the command deviation;
/// the voltage deviation and off-time follow from the voltage map and the
/// ramp identity, solved by fixed-point iteration. The off-time is clamped
/// into the admissible window afterwards, so a command large enough to pin
/// the clamp starts slightly off the true (clamp-limited) orbit.
pub fn equilibrium_state(
    params: &ConverterParams,
    command_level: f64,
) -> Result<CycleState, SimError> {
    params.validate()?;
    require_buck(params)?;
    let eq = compute_equilibrium(params)?;
    let x = command_level;
    let mut v = 0.0f64;
    let mut t = eq.t_var_ss;
    for _ in 0..200 {
        let coeffs = ltv_coefficients(params, t.clamp(params.t_var_min, params.t_var_max))?;
        let v_new = (coeffs.beta + coeffs.gamma) * x / (1.0 - coeffs.alpha);
        let v_abs = params.v_out + v_new;
        if v_abs <= 0.0 {
            return Err(SimError::NonPhysicalState {
                cycle: 0,
                v_abs,
            });
        }
        // Ramp identity at the fixed point: m2 * (t - t_ss) = -k * v.
        let t_new = eq.t_var_ss - eq.t_s_ss * v_new / v_abs;
        let dt = (t_new - t).abs();
        v = v_new;
        t = t_new;
        if dt < 1e-21 {
            break;
        }
    }
    let t_clamped = t.clamp(params.t_var_min, params.t_var_max);
    let coeffs = ltv_coefficients(params, t_clamped)?;
    Ok(CycleState {
        n: 0,
        i_tilde: x,
        v_tilde: v,
        t_off: t_clamped,
        q: v - coeffs.gamma * x,
        clamped: t != t_clamped,
        non_monotone: false,
        t_start: 0.0,
    })
}

/// Run a transient of `n_cycles` switching cycles with default guards.
///
/// The initial state is the pre-step equilibrium of the command profile's
/// initial level; the profile's cycle-0 value (and the interference) applies
/// from the first step onward. A tripped guard truncates the trace and
/// records the divergence cycle instead of failing the run.
pub fn run_transient(
    params: &ConverterParams,
    interference: &InterferenceModel,
    command: &CommandProfile,
    n_cycles: usize,
) -> Result<TransientTrace, SimError> {
    run_transient_with(params, interference, command, n_cycles, &SimGuards::default())
}

/// Run a transient with explicit divergence guards.
pub fn run_transient_with(
    params: &ConverterParams,
    interference: &InterferenceModel,
    command: &CommandProfile,
    n_cycles: usize,
    guards: &SimGuards,
) -> Result<TransientTrace, SimError> {
    let mut states = Vec::with_capacity(n_cycles + 1);
    let mut diverged_at = None;
    let initial = equilibrium_state(params, command.initial())?;
    states.push(initial);
    let mut current = initial;
    for n in 0..n_cycles {
        match step_cycle(&current, params, interference, command.at(n), guards) {
            Ok(next) => {
                states.push(next);
                current = next;
            }
            Err(SimError::Diverged { cycle, .. }) => {
                diverged_at = Some(cycle);
                break;
            }
            Err(SimError::NonPhysicalState { cycle, .. }) => {
                diverged_at = Some(cycle);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TransientTrace {
        states,
        diverged_at,
        params: params.clone(),
        interference: interference.clone(),
        command: command.clone(),
    })
}

fn rms(window: &[CycleState]) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let sum: f64 = window.iter().map(|s| s.i_tilde * s.i_tilde).sum();
    (sum / window.len() as f64).sqrt()
}

/// Classify a transient trace from its current-deviation envelope.
///
/// Unstable when the trace was truncated for divergence or the final-window
/// RMS exceeds the mid-trace window RMS by more than a factor 1.05; Stable
/// when the final-window RMS is below `settle_tol`; Indeterminate otherwise.
pub fn classify_stability(
    trace: &TransientTrace,
    settle_window: usize,
    settle_tol: f64,
) -> Result<SimVerdict, SimError> {
    if settle_window == 0 {
        return Err(SimError::BadSpec {
            what: "settle window",
            value: 0.0,
        });
    }
    if settle_tol <= 0.0 {
        return Err(SimError::BadSpec {
            what: "settle tolerance",
            value: settle_tol,
        });
    }
    let len = trace.states.len();
    let needed = 2 * settle_window;
    if len < needed {
        return Err(SimError::TraceTooShort { len, needed });
    }
    let final_window = &trace.states[len - settle_window..];
    let mid_start = (len - settle_window) / 2;
    let mid_window = &trace.states[mid_start..mid_start + settle_window];
    let final_rms = rms(final_window);
    let mid_rms = rms(mid_window);
    let classification = if trace.diverged_at.is_some() || final_rms > 1.05 * mid_rms {
        StabilityClass::Unstable
    } else if final_rms < settle_tol {
        StabilityClass::Stable
    } else {
        StabilityClass::Indeterminate
    };
    Ok(SimVerdict {
        classification,
        peak_current: trace.peak_current(),
        peak_voltage: trace.peak_voltage(),
        mid_rms,
        final_rms,
        diverged_at: trace.diverged_at,
    })
}

/// Simulate the normalized sector loop x+ = h, h = s p, p = x - h + r,
/// starting from x = 0, for given slope and input sequences.
pub fn simulate_unitless(
    sector: &SectorBound,
    slopes: &[f64],
    inputs: &[f64],
) -> Result<Vec<UnitlessStep>, SimError> {
    sector.validate().map_err(|_| SimError::BadSpec {
        what: "sector",
        value: sector.alpha,
    })?;
    if sector.alpha <= -1.0 {
        return Err(SimError::BadSpec {
            what: "sector lower bound (loop needs alpha > -1)",
            value: sector.alpha,
        });
    }
    if slopes.len() != inputs.len() {
        return Err(SimError::LengthMismatch {
            slopes: slopes.len(),
            inputs: inputs.len(),
        });
    }
    let mut steps = Vec::with_capacity(slopes.len());
    let mut x = 0.0f64;
    for (idx, (&s, &r)) in slopes.iter().zip(inputs.iter()).enumerate() {
        if s < sector.alpha || s > sector.beta {
            return Err(SimError::SlopeOutOfSector {
                index: idx,
                slope: s,
                alpha: sector.alpha,
                beta: sector.beta,
            });
        }
        let p = (x + r) / (1.0 + s);
        let h = s * p;
        let step = UnitlessStep {
            x,
            r,
            p,
            h,
            e: x,
            x_next: h,
        };
        steps.push(step);
        x = h;
    }
    Ok(steps)
}

/// Check the per-step dissipation inequality of a gain certificate along a
/// simulated loop trace:
/// V(x+) - V(x) + e^2 - gamma^2 r^2 + lambda (h - alpha p)(beta p - h) <= tol
/// with V(x) = P x^2.
pub fn dissipation_check(
    steps: &[UnitlessStep],
    cert: &GainCertificate,
    sector: &SectorBound,
    tol: f64,
) -> bool {
    let p_mat = &cert.p;
    if p_mat.nrows() != 1 || p_mat.ncols() != 1 {
        return false;
    }
    let p_stor = p_mat[(0, 0)];
    let g2 = cert.gamma_hat * cert.gamma_hat;
    let lambda = cert.lambda_mult;
    steps.iter().all(|st| {
        let v_now = p_stor * st.x * st.x;
        let v_next = p_stor * st.x_next * st.x_next;
        let sector_term = (st.h - sector.alpha * st.p) * (sector.beta * st.p - st.h);
        let supply = v_next - v_now + st.e * st.e - g2 * st.r * st.r + lambda * sector_term;
        supply <= tol
    })
}

/// Advance the voltage deviation one cycle by assembling the per-phase
/// charge packets directly, as an independent route to the affine map.
///
/// The packets cover the second off-segment of the previous cycle, the
/// on-time, and the first off-segment of the current cycle, each as a ramp
/// trapezoid, minus the load draw over the window; the equilibrium command
/// offset enters through the realized off-time deviation.
pub fn charge_balance_step(
    params: &ConverterParams,
    i_tilde: f64,
    v_tilde: f64,
    i_tilde_next: f64,
    t_off: f64,
) -> Result<f64, SimError> {
    params.validate()?;
    require_buck(params)?;
    let eq = compute_equilibrium(params)?;
    let i_valley = eq
        .i_valley
        .expect("buck equilibrium always carries a valley current");
    let t_on = params.t_fixed;
    let lam = params.lambda;
    let c = params.capacitance;
    let l = params.inductance;
    let r = params.load;
    let m1_bar = (params.v_in - params.v_out) / l;
    let t_tilde_off = t_off - eq.t_var_ss;

    let q1 = (1.0 - lam) * t_on * i_tilde - 0.5 * (1.0 - lam * lam) * (v_tilde / l) * t_on * t_on;
    let q2 = 0.5 * (i_tilde - (v_tilde / l) * t_on + i_tilde_next) * t_off
        + (i_valley + 0.5 * m1_bar * t_on) * t_tilde_off;
    let q3 = lam * t_on * i_tilde_next - 0.5 * lam * lam * (v_tilde / l) * t_on * t_on;
    let q_out = (v_tilde / r) * (t_on + t_off) + (params.v_out / r) * t_tilde_off;

    Ok(v_tilde + (q1 + q2 + q3 - q_out) / c)
}

fn trial_energy_ratio(outputs: &[f64], inputs: &[f64], trial: usize) -> Result<f64, SimError> {
    let e_in: f64 = inputs.iter().map(|r| r * r).sum();
    if e_in <= 0.0 {
        return Err(SimError::ZeroEnergyInput { trial });
    }
    let e_out: f64 = outputs.iter().map(|e| e * e).sum();
    Ok((e_out / e_in).sqrt())
}

/// Empirically estimate the l2 gain of a signal block as the largest
/// output/input energy ratio over an ensemble of seeded excitations.
///
/// The ensemble mixes deterministic worst-case probes (constant sector
/// endpoints driven at their resonant frequency, the alternating schedule)
/// with seeded random schedules and inputs, all from zero initial state.
pub fn estimate_l2_gain(
    block: &GainBlock,
    params: &ConverterParams,
    spec: &EnsembleSpec,
    seed: u64,
) -> Result<f64, SimError> {
    if spec.trials == 0 {
        return Err(SimError::BadSpec {
            what: "trial count",
            value: 0.0,
        });
    }
    if spec.length < 2 {
        return Err(SimError::BadSpec {
            what: "trial length",
            value: spec.length as f64,
        });
    }
    if !(spec.amplitude > 0.0) {
        return Err(SimError::BadSpec {
            what: "input amplitude",
            value: spec.amplitude,
        });
    }
    match block {
        GainBlock::CurrentUnitless { sector } => {
            estimate_current_gain(sector, spec, seed)
        }
        GainBlock::VoltageLtv => estimate_voltage_gain(params, spec, seed),
    }
}

/// Input resonant with a constant loop pole c: DC for c >= 0, alternating
/// signs for c < 0.
fn resonant_input(c: f64, amplitude: f64, length: usize) -> Vec<f64> {
    (0..length)
        .map(|n| {
            if c >= 0.0 {
                amplitude
            } else if n % 2 == 0 {
                amplitude
            } else {
                -amplitude
            }
        })
        .collect()
}

fn estimate_current_gain(
    sector: &SectorBound,
    spec: &EnsembleSpec,
    seed: u64,
) -> Result<f64, SimError> {
    sector.validate().map_err(|_| SimError::BadSpec {
        what: "sector",
        value: sector.alpha,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for trial in 0..spec.trials {
        let (slopes, inputs): (Vec<f64>, Vec<f64>) = match trial {
            0 => {
                let s = sector.alpha;
                let c = s / (1.0 + s);
                (
                    vec![s; spec.length],
                    resonant_input(c, spec.amplitude, spec.length),
                )
            }
            1 => {
                let s = sector.beta;
                let c = s / (1.0 + s);
                (
                    vec![s; spec.length],
                    resonant_input(c, spec.amplitude, spec.length),
                )
            }
            2 => {
                let slopes: Vec<f64> = (0..spec.length)
                    .map(|n| if n % 2 == 0 { sector.beta } else { sector.alpha })
                    .collect();
                let inputs = resonant_input(-1.0, spec.amplitude, spec.length);
                (slopes, inputs)
            }
            _ => {
                let slopes: Vec<f64> = (0..spec.length)
                    .map(|_| rng.gen_range(sector.alpha..=sector.beta))
                    .collect();
                let inputs: Vec<f64> = if trial % 2 == 1 {
                    (0..spec.length)
                        .map(|_| spec.amplitude * rng.gen_range(-1.0..=1.0))
                        .collect()
                } else {
                    let omega = rng.gen_range(0.0..std::f64::consts::PI);
                    let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    (0..spec.length)
                        .map(|n| spec.amplitude * (omega * n as f64 + phase).cos())
                        .collect()
                };
                (slopes, inputs)
            }
        };
        let steps = simulate_unitless(sector, &slopes, &inputs)?;
        let outputs: Vec<f64> = steps.iter().map(|st| st.e).collect();
        let ratio = trial_energy_ratio(&outputs, &inputs, trial)?;
        if ratio > best {
            best = ratio;
        }
    }
    Ok(best)
}

fn estimate_voltage_gain(
    params: &ConverterParams,
    spec: &EnsembleSpec,
    seed: u64,
) -> Result<f64, SimError> {
    params.validate()?;
    require_buck(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for trial in 0..spec.trials {
        let t_offs: Vec<f64> = match trial {
            0 => vec![params.t_var_min; spec.length],
            1 => vec![params.t_var_max; spec.length],
            _ => (0..spec.length)
                .map(|_| rng.gen_range(params.t_var_min..=params.t_var_max))
                .collect(),
        };
        let inputs: Vec<f64> = match trial {
            0 | 1 => vec![spec.amplitude; spec.length],
            _ => {
                if trial % 2 == 1 {
                    (0..spec.length)
                        .map(|_| spec.amplitude * rng.gen_range(-1.0..=1.0))
                        .collect()
                } else {
                    let omega = rng.gen_range(0.0..std::f64::consts::PI);
                    let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    (0..spec.length)
                        .map(|n| spec.amplitude * (omega * n as f64 + phase).cos())
                        .collect()
                }
            }
        };
        let mut v = 0.0f64;
        let mut outputs = Vec::with_capacity(spec.length);
        for n in 0..spec.length {
            let coeffs = ltv_coefficients(params, t_offs[n])?;
            let i_now = inputs[n];
            let i_next = if n + 1 < spec.length { inputs[n + 1] } else { 0.0 };
            v = coeffs.alpha * v + coeffs.beta * i_now + coeffs.gamma * i_next;
            outputs.push(v);
        }
        let ratio = trial_energy_ratio(&outputs, &inputs, trial)?;
        if ratio > best {
            best = ratio;
        }
    }
    Ok(best)
}
