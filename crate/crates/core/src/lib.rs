//! Certification toolkit for cycle-by-cycle current-mode dc-dc converters.
//!
//! The crate models a switching converter as two interconnected discrete-time
//! blocks sampled once per switching cycle: a current block (valley-current
//! comparator with sector-bounded measurement interference) and a voltage
//! block (output capacitor driven by the rectified inductor current). It
//! computes certified L2-gain bounds for each block, combines them through
//! small-gain stability criteria, and validates every bound against a
//! cycle-by-cycle simulator of the same sampled dynamics.
//!
//! Modules:
//! - [`converter`]: converter parameters, equilibrium, timing constants,
//!   model-assumption checks.
//! - [`lure`]: the sector-bounded current block in linear-fractional form,
//!   the dissipation LMI, and the bisection gain solver.
//! - [`voltage`]: the time-varying linear voltage recurrence and its
//!   worst-case gain bound.
//! - [`criteria`]: stability criteria combining both block gains, including
//!   the largest certifiable symmetric sector.
//! - [`sim`]: cycle-by-cycle transient simulator, empirical gain estimation,
//!   and dissipation spot checks.
//! - [`config`]: the flat `key = value` run-configuration format shared by
//!   the command-line tool.

pub mod config;
pub mod converter;
pub mod criteria;
pub mod lure;
pub mod sim;
pub mod voltage;

pub use converter::{
    compute_equilibrium, derived_constants, reference_buck, validate_class_sigma,
    AssumptionReport, ConverterParams, DerivedConstants, Equilibrium, ParamError, Topology,
};
pub use criteria::{
    boost_off_time_criterion, buck_on_time_criterion, max_stable_sector, small_gain_check,
    BoostBranch, CaseIiRule, CriteriaError, CriterionCheck, StabilityReport, Verdict,
};
pub use lure::{
    build_dissipation_lmi, certify_gain, certify_gain_with, current_block_gain_bound,
    gain_surface, is_negative_definite, lti_lower_bound_oracle, unitless_current_block,
    GainCertificate, GainSurface, LftSystem, LureError, SectorBound, SolverOptions,
};
pub use sim::{
    charge_balance_step, classify_stability, dissipation_check, equilibrium_state,
    estimate_l2_gain, run_transient, run_transient_with, simulate_unitless, solve_off_time,
    step_cycle, CommandProfile, CycleState, EnsembleSpec, GainBlock, InterferenceModel,
    OffTimeSolution, Schedule, SectorNormalization, SimError, SimGuards, SimVerdict,
    StabilityClass, TransientTrace, UnitlessStep,
};
pub use voltage::{
    coefficient_bounds, ltv_coefficients, voltage_block_gain_bound, CoefficientBounds,
    LtvCoefficients, VoltageError, VoltageGainBound,
};
pub use config::{parse_config, render_config, ConfigError, ResolvedConfig};
