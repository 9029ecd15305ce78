//! Stability criteria combining the certified block gains.
//!
//! The loop is stable when the product of the current-block and
//! voltage-block gains stays below one. For the constant on-time buck this
//! reduces to a pair of unitless inequalities on the certified current gain
//! and on the timing constants; for the constant off-time boost a
//! discriminant selects one of two threshold branches. All inequalities are
//! evaluated strictly; equality does not certify.

use crate::converter::{
    compute_equilibrium, derived_constants, validate_class_sigma, AssumptionReport,
    ConverterParams, ParamError, Topology,
};
use crate::lure::{certify_gain_with, unitless_current_block, LureError, SectorBound, SolverOptions};
use crate::voltage::{voltage_block_gain_bound, VoltageError};
use std::fmt;

/// Outcome of a criterion evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    NotCertified,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Certified => write!(f, "Certified"),
            Verdict::NotCertified => write!(f, "NotCertified"),
        }
    }
}

/// Discriminant branch taken by the boost criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostBranch {
    CaseI,
    CaseII,
}

impl fmt::Display for BoostBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoostBranch::CaseI => write!(f, "case_i"),
            BoostBranch::CaseII => write!(f, "case_ii"),
        }
    }
}

/// Which variant of the boost case (ii) threshold decides the verdict.
///
/// The printed form carries units of seconds squared; the normalized form
/// divides it by `T_off^2` to restore a unitless comparison. Reports always
/// record both; this switch picks the one that counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaseIiRule {
    #[default]
    Printed,
    Normalized,
}

/// One recorded inequality `lhs < rhs`.
///
/// `enforced` marks the records that decide the verdict; informational
/// variants (such as the inactive case (ii) form) are carried with
/// `enforced = false`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub enforced: bool,
}

impl CriterionCheck {
    fn new(name: &'static str, lhs: f64, rhs: f64, enforced: bool) -> Self {
        CriterionCheck { name, lhs, rhs, holds: lhs < rhs, enforced }
    }

    /// Normalized slack `(rhs - lhs) / rhs`; negative when violated.
    pub fn margin(&self) -> f64 {
        (self.rhs - self.lhs) / self.rhs
    }
}

/// Full result of a criterion evaluation.
///
/// `margin` is the smallest normalized slack among the enforced checks;
/// `loop_gain_product` is the physical gain product for the buck and the
/// ratio of the certified gain to the active threshold for the boost.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub verdict: Verdict,
    pub loop_gain_product: f64,
    pub checks: Vec<CriterionCheck>,
    pub branch: Option<BoostBranch>,
    pub discriminant: Option<f64>,
    pub assumptions: AssumptionReport,
    pub margin: f64,
}

/// Criterion-evaluation failures.
#[derive(Debug, Clone, PartialEq)]
pub enum CriteriaError {
    Param(ParamError),
    Voltage(VoltageError),
    Lure(LureError),
    TopologyMismatch { expected: Topology, found: Topology },
    BadGain { value: f64 },
    BadTolerance { value: f64 },
}

impl fmt::Display for CriteriaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriteriaError::Param(e) => write!(f, "{e}"),
            CriteriaError::Voltage(e) => write!(f, "{e}"),
            CriteriaError::Lure(e) => write!(f, "{e}"),
            CriteriaError::TopologyMismatch { expected, found } => {
                write!(f, "criterion expects {expected}, got {found}")
            }
            CriteriaError::BadGain { value } => {
                write!(f, "certified gain must be finite and nonnegative, got {value}")
            }
            CriteriaError::BadTolerance { value } => {
                write!(f, "tolerance must be positive and finite, got {value}")
            }
        }
    }
}

impl std::error::Error for CriteriaError {}

impl From<ParamError> for CriteriaError {
    fn from(e: ParamError) -> Self {
        CriteriaError::Param(e)
    }
}

impl From<VoltageError> for CriteriaError {
    fn from(e: VoltageError) -> Self {
        CriteriaError::Voltage(e)
    }
}

impl From<LureError> for CriteriaError {
    fn from(e: LureError) -> Self {
        CriteriaError::Lure(e)
    }
}

/// Small-gain product of two block gains and whether it is strictly below
/// one.
pub fn small_gain_check(gamma_iv: f64, gamma_vi: f64) -> (f64, bool) {
    let product = gamma_iv * gamma_vi;
    (product, product < 1.0)
}

fn require_topology(params: &ConverterParams, expected: Topology) -> Result<(), CriteriaError> {
    params.validate()?;
    if params.topology != expected {
        return Err(CriteriaError::TopologyMismatch { expected, found: params.topology });
    }
    Ok(())
}

fn check_gain(gamma_hat: f64) -> Result<(), CriteriaError> {
    if gamma_hat.is_finite() && gamma_hat >= 0.0 {
        Ok(())
    } else {
        Err(CriteriaError::BadGain { value: gamma_hat })
    }
}

fn finalize(
    checks: Vec<CriterionCheck>,
    loop_gain_product: f64,
    branch: Option<BoostBranch>,
    discriminant: Option<f64>,
    assumptions: AssumptionReport,
) -> StabilityReport {
    let enforced_hold = checks.iter().filter(|c| c.enforced).all(|c| c.holds);
    let margin = checks
        .iter()
        .filter(|c| c.enforced)
        .map(CriterionCheck::margin)
        .fold(f64::INFINITY, f64::min);
    StabilityReport {
        verdict: if enforced_hold { Verdict::Certified } else { Verdict::NotCertified },
        loop_gain_product,
        checks,
        branch,
        discriminant,
        assumptions,
        margin,
    }
}

/// Gain threshold of the buck criterion,
/// `(tau2 + T_on/2) * (Ts_min/Ts_max) / Ts_ss`.
pub fn buck_gain_threshold(params: &ConverterParams) -> Result<f64, CriteriaError> {
    require_topology(params, Topology::BuckConstOn)?;
    let d = derived_constants(params)?;
    let eq = compute_equilibrium(params)?;
    Ok((d.tau2 + 0.5 * params.t_fixed) * (d.t_s_min / d.t_s_max) / eq.t_s_ss)
}

/// Evaluates the constant on-time buck criterion for a certified gain:
/// (a) `gamma_hat < (tau2 + T_on/2)(Ts_min/Ts_max)/Ts_ss` and
/// (b) `Ts_max (1 + T_on/(2 tau2)) < tau1`.
pub fn buck_on_time_criterion(
    params: &ConverterParams,
    sector: &SectorBound,
    gamma_hat: f64,
) -> Result<StabilityReport, CriteriaError> {
    require_topology(params, Topology::BuckConstOn)?;
    sector.validate()?;
    check_gain(gamma_hat)?;

    let d = derived_constants(params)?;
    let eq = compute_equilibrium(params)?;
    let rhs_gain = buck_gain_threshold(params)?;
    let lhs_timing = d.t_s_max * (1.0 + params.t_fixed / (2.0 * d.tau2));
    let checks = vec![
        CriterionCheck::new("gain", gamma_hat, rhs_gain, true),
        CriterionCheck::new("timing", lhs_timing, d.tau1, true),
    ];

    // Physical loop product: voltage-block peak gain (ohms) times the
    // scaled current-block gain (amperes per volt).
    let v_gain = voltage_block_gain_bound(params)?;
    let i_gain = gamma_hat * eq.t_s_ss / params.inductance;
    let (product, _) = small_gain_check(v_gain.gamma_total, i_gain);

    let assumptions = validate_class_sigma(params, 0.1)?;
    Ok(finalize(checks, product, None, None, assumptions))
}

/// Largest symmetric sector radius whose certified gain passes the buck
/// criterion, found by bisection to absolute tolerance `tol`. Returns zero
/// when the timing inequality fails on its own.
pub fn max_stable_sector(params: &ConverterParams, tol: f64) -> Result<f64, CriteriaError> {
    require_topology(params, Topology::BuckConstOn)?;
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(CriteriaError::BadTolerance { value: tol });
    }

    let d = derived_constants(params)?;
    let lhs_timing = d.t_s_max * (1.0 + params.t_fixed / (2.0 * d.tau2));
    if !(lhs_timing < d.tau1) {
        return Ok(0.0);
    }
    let rhs_gain = buck_gain_threshold(params)?;

    let sys = unitless_current_block();
    let opts = SolverOptions::default();
    let certifies = |radius: f64| -> Result<bool, CriteriaError> {
        let sector = SectorBound::symmetric(radius)?;
        match certify_gain_with(&sys, &sector, &opts) {
            Ok(cert) => Ok(cert.gamma_hat < rhs_gain),
            Err(LureError::Infeasible { .. }) => Ok(false),
            Err(e) => Err(e.into()),
        }
    };

    let mut lo = 0.0_f64;
    let mut hi = 0.5_f64;
    if certifies(hi)? {
        return Ok(hi);
    }
    for _ in 0..64 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if certifies(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Discriminant selecting the boost branch,
/// `((1-lambda) T_off + Vout L/(Vin R)) (1 - Ts_ss/RC - Ts_max/RC - T_off^2/(2LC))
///  + (lambda T_off - Vout L/(Vin R))`.
pub fn boost_discriminant(params: &ConverterParams) -> Result<f64, CriteriaError> {
    require_topology(params, Topology::BoostConstOff)?;
    let d = derived_constants(params)?;
    let eq = compute_equilibrium(params)?;
    let t_off = params.t_fixed;
    let vl = params.v_out * params.inductance / (params.v_in * params.load);
    let shrink = 1.0
        - eq.t_s_ss / d.tau1
        - d.t_s_max / d.tau1
        - t_off * t_off / (2.0 * params.inductance * params.capacitance);
    Ok(((1.0 - params.lambda) * t_off + vl) * shrink + (params.lambda * t_off - vl))
}

/// Evaluates the constant off-time boost criterion for a certified gain.
///
/// A nonnegative discriminant selects case (i) with threshold
/// `1/2 + tau2 (Ts_ss + Ts_min)/(Ts_ss T_off)`; otherwise case (ii) applies.
/// The case (ii) threshold is recorded both as printed (units of seconds
/// squared) and divided by `T_off^2`; `rule` picks which decides the
/// verdict.
pub fn boost_off_time_criterion(
    params: &ConverterParams,
    sector: &SectorBound,
    gamma_hat: f64,
    rule: CaseIiRule,
) -> Result<StabilityReport, CriteriaError> {
    require_topology(params, Topology::BoostConstOff)?;
    sector.validate()?;
    check_gain(gamma_hat)?;

    let d = derived_constants(params)?;
    let eq = compute_equilibrium(params)?;
    let t_off = params.t_fixed;
    let disc = boost_discriminant(params)?;
    let assumptions = validate_class_sigma(params, 0.1)?;

    if disc >= 0.0 {
        let rhs = 0.5 + d.tau2 * (eq.t_s_ss + d.t_s_min) / (eq.t_s_ss * t_off);
        let checks = vec![CriterionCheck::new("gain_case_i", gamma_hat, rhs, true)];
        let product = gamma_hat / rhs;
        return Ok(finalize(
            checks,
            product,
            Some(BoostBranch::CaseI),
            Some(disc),
            assumptions,
        ));
    }

    let ratio = (2.0 * d.tau2 * (d.t_s_min + eq.t_s_ss) + t_off * t_off)
        / (2.0 * d.tau2 * (d.t_s_max + eq.t_s_ss) + t_off * t_off);
    let bracket = 2.0 * d.tau1 - eq.t_s_ss - d.t_s_max - t_off * t_off / (2.0 * d.tau2);
    let denom = 2.0 * params.v_out / params.v_in + (1.0 - 2.0 * params.lambda) * t_off / d.tau2;
    let rhs_printed = ratio * bracket / denom * t_off;
    let rhs_normalized = rhs_printed / (t_off * t_off);

    let checks = vec![
        CriterionCheck::new(
            "gain_case_ii_printed",
            gamma_hat,
            rhs_printed,
            rule == CaseIiRule::Printed,
        ),
        CriterionCheck::new(
            "gain_case_ii_normalized",
            gamma_hat,
            rhs_normalized,
            rule == CaseIiRule::Normalized,
        ),
    ];
    let active_rhs = match rule {
        CaseIiRule::Printed => rhs_printed,
        CaseIiRule::Normalized => rhs_normalized,
    };
    let product = gamma_hat / active_rhs;
    Ok(finalize(
        checks,
        product,
        Some(BoostBranch::CaseII),
        Some(disc),
        assumptions,
    ))
}

impl StabilityReport {
    /// Flat `key=value` rendering, one entry per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("verdict={}\n", self.verdict));
        out.push_str(&format!("loop_gain_product={:.9e}\n", self.loop_gain_product));
        out.push_str(&format!("margin={:.9e}\n", self.margin));
        match self.branch {
            Some(b) => out.push_str(&format!("branch={b}\n")),
            None => out.push_str("branch=none\n"),
        }
        if let Some(d) = self.discriminant {
            out.push_str(&format!("discriminant={d:.9e}\n"));
        }
        out.push_str(&format!("assumptions.ratio_rc={:.9e}\n", self.assumptions.ratio_rc));
        out.push_str(&format!(
            "assumptions.ratio_ripple={:.9e}\n",
            self.assumptions.ratio_ripple
        ));
        out.push_str(&format!("assumptions.pass={}\n", self.assumptions.pass));
        for c in &self.checks {
            out.push_str(&format!("check.{}.lhs={:.9e}\n", c.name, c.lhs));
            out.push_str(&format!("check.{}.rhs={:.9e}\n", c.name, c.rhs));
            out.push_str(&format!("check.{}.holds={}\n", c.name, c.holds));
            out.push_str(&format!("check.{}.enforced={}\n", c.name, c.enforced));
        }
        out
    }

    /// CSV header matching [`StabilityReport::to_csv_row`] for this report's
    /// check set.
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            String::from("verdict"),
            String::from("loop_gain_product"),
            String::from("margin"),
            String::from("branch"),
            String::from("assumptions_pass"),
        ];
        for c in &self.checks {
            cols.push(format!("{}_lhs", c.name));
            cols.push(format!("{}_rhs", c.name));
            cols.push(format!("{}_holds", c.name));
        }
        cols.join(",")
    }

    /// One CSV row of the report values.
    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![
            self.verdict.to_string(),
            format!("{:.9e}", self.loop_gain_product),
            format!("{:.9e}", self.margin),
            self.branch.map_or_else(|| String::from("none"), |b| b.to_string()),
            self.assumptions.pass.to_string(),
        ];
        for c in &self.checks {
            cols.push(format!("{:.9e}", c.lhs));
            cols.push(format!("{:.9e}", c.rhs));
            cols.push(c.holds.to_string());
        }
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::reference_buck;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table_buck(load: f64) -> ConverterParams {
        let t_off = (12.0 - 2.2) / 2.2 * 100e-9;
        reference_buck(load, t_off, t_off)
    }

    fn boost_case(l: f64, c: f64, lambda: f64) -> ConverterParams {
        ConverterParams {
            topology: Topology::BoostConstOff,
            v_in: 5.0,
            v_out: 12.0,
            inductance: l,
            capacitance: c,
            load: 2.0,
            t_fixed: 100e-9,
            lambda,
            t_var_min: 140e-9,
            t_var_max: 140e-9,
        }
    }

    #[test]
    fn small_gain_products() {
        assert_eq!(small_gain_check(0.3, 0.4), (0.12, true));
        assert_eq!(small_gain_check(2.0, 1.0), (2.0, false));
        let (product, ok) = small_gain_check(0.6462, 2.705);
        assert_relative_eq!(product, 1.748, max_relative = 1e-3);
        assert!(!ok);
    }

    #[test]
    fn buck_thresholds_match_hand_calculation() {
        assert_relative_eq!(
            buck_gain_threshold(&table_buck(0.4)).unwrap(),
            1.191666,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            buck_gain_threshold(&table_buck(0.05)).unwrap(),
            8.891666,
            max_relative = 1e-4
        );
    }

    #[test]
    fn buck_criterion_report() {
        let sector = SectorBound::symmetric(0.24).unwrap();
        let report = buck_on_time_criterion(&table_buck(0.4), &sector, 0.4615).unwrap();
        assert_eq!(report.verdict, Verdict::Certified);
        assert_eq!(report.branch, None);
        assert_eq!(report.checks.len(), 2);
        assert!(report.margin > 0.0);
        assert!(report.loop_gain_product < 1.0);

        let failing = buck_on_time_criterion(&table_buck(0.4), &sector, 1.3).unwrap();
        assert_eq!(failing.verdict, Verdict::NotCertified);
        assert!(failing.loop_gain_product > 1.0);
    }

    #[test]
    fn buck_timing_check_values() {
        let report = buck_on_time_criterion(
            &table_buck(0.05),
            &SectorBound::symmetric(0.3).unwrap(),
            0.75,
        )
        .unwrap();
        let timing = report.checks.iter().find(|c| c.name == "timing").unwrap();
        assert_relative_eq!(timing.lhs, 551.14e-9, max_relative = 1e-3);
        assert_relative_eq!(timing.rhs, 5e-6, max_relative = 1e-12);
        assert!(timing.holds);
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let sector = SectorBound::symmetric(0.2).unwrap();
        assert!(matches!(
            buck_on_time_criterion(&boost_case(480e-9, 100e-6, 0.5), &sector, 0.5),
            Err(CriteriaError::TopologyMismatch { .. })
        ));
        assert!(matches!(
            boost_off_time_criterion(&table_buck(0.4), &sector, 0.5, CaseIiRule::Printed),
            Err(CriteriaError::TopologyMismatch { .. })
        ));
    }

    #[test]
    fn max_sector_matches_threshold_inversion() {
        // With the tight certified gain a/(1 - 2a), the largest certifiable
        // radius solves a/(1 - 2a) = rhs, i.e. a = rhs/(1 + 2 rhs).
        let light = max_stable_sector(&table_buck(0.4), 1e-4).unwrap();
        assert_relative_eq!(light, 1.191666 / (1.0 + 2.0 * 1.191666), max_relative = 5e-3);

        let heavy = max_stable_sector(&table_buck(0.05), 1e-4).unwrap();
        assert_relative_eq!(heavy, 8.891666 / (1.0 + 2.0 * 8.891666), max_relative = 5e-3);
    }

    #[test]
    fn max_sector_zero_when_timing_fails() {
        let mut p = table_buck(0.4);
        p.capacitance = 1e-9;
        assert_eq!(max_stable_sector(&p, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn boost_case_i_worked_example() {
        let sector = SectorBound::symmetric(0.3).unwrap();
        let report =
            boost_off_time_criterion(&boost_case(480e-9, 100e-6, 0.5), &sector, 0.75, CaseIiRule::Printed)
                .unwrap();
        assert_eq!(report.branch, Some(BoostBranch::CaseI));
        assert_relative_eq!(report.discriminant.unwrap(), 9.8432e-8, max_relative = 1e-3);
        let check = &report.checks[0];
        assert_relative_eq!(check.rhs, 5.3, max_relative = 1e-6);
        assert_eq!(report.verdict, Verdict::Certified);
    }

    #[test]
    fn boost_case_ii_worked_example() {
        let sector = SectorBound::symmetric(0.3).unwrap();
        let params = boost_case(4.8e-6, 1e-6, 0.0);
        let printed =
            boost_off_time_criterion(&params, &sector, 0.75, CaseIiRule::Printed).unwrap();
        assert_eq!(printed.branch, Some(BoostBranch::CaseII));
        assert_relative_eq!(printed.discriminant.unwrap(), -1.3125e-6, max_relative = 1e-3);

        let p_check = printed
            .checks
            .iter()
            .find(|c| c.name == "gain_case_ii_printed")
            .unwrap();
        let n_check = printed
            .checks
            .iter()
            .find(|c| c.name == "gain_case_ii_normalized")
            .unwrap();
        assert_relative_eq!(p_check.rhs, 7.2659e-14, max_relative = 1e-3);
        assert_relative_eq!(n_check.rhs, 7.2659, max_relative = 1e-3);
        // The two forms differ by exactly the square of the fixed off-time.
        assert_relative_eq!(p_check.rhs, n_check.rhs * 1e-14, max_relative = 1e-12);

        // A sensible certified gain fails the printed form but passes the
        // normalized one.
        assert_eq!(printed.verdict, Verdict::NotCertified);
        let normalized =
            boost_off_time_criterion(&params, &sector, 0.75, CaseIiRule::Normalized).unwrap();
        assert_eq!(normalized.verdict, Verdict::Certified);
    }

    #[test]
    fn report_serialization_round_trip_shape() {
        let sector = SectorBound::symmetric(0.24).unwrap();
        let report = buck_on_time_criterion(&table_buck(0.4), &sector, 0.4615).unwrap();
        let kv = report.to_key_value();
        assert!(kv.contains("verdict=Certified"), "key-value block:\n{kv}");
        assert!(kv.contains("check.gain.lhs="));
        let header = report.csv_header();
        let row = report.to_csv_row();
        assert_eq!(header.split(',').count(), row.split(',').count());
        assert!(header.starts_with("verdict,loop_gain_product,margin,branch"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gain_check_equals_small_gain_product(
            load in 0.05f64..2.0,
            gamma_hat in 0.0f64..4.0,
            window_lo in 200.0f64..500.0,
            stretch in 1.0f64..3.0,
        ) {
            let p = reference_buck(load, window_lo * 1e-9, window_lo * stretch * 1e-9);
            let sector = SectorBound::symmetric(0.2).unwrap();
            let report = match buck_on_time_criterion(&p, &sector, gamma_hat) {
                Ok(r) => r,
                // Very light loads can push the decay factor out of range.
                Err(CriteriaError::Voltage(_)) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            };
            let gain_check = report.checks.iter().find(|c| c.name == "gain").unwrap();
            prop_assert_eq!(gain_check.holds, report.loop_gain_product < 1.0);
            prop_assert!(
                (report.loop_gain_product - gain_check.lhs / gain_check.rhs).abs()
                    <= 1e-9 * report.loop_gain_product.max(1.0),
                "product {} vs ratio {}",
                report.loop_gain_product,
                gain_check.lhs / gain_check.rhs
            );
        }

        #[test]
        fn gain_threshold_grows_with_inductance(
            load in 0.05f64..2.0,
            scale in 1.1f64..4.0,
        ) {
            let t_off = (12.0 - 2.2) / 2.2 * 100e-9;
            let base = reference_buck(load, t_off, t_off);
            let mut larger = base;
            larger.inductance *= scale;
            let rhs_base = buck_gain_threshold(&base).unwrap();
            let rhs_larger = buck_gain_threshold(&larger).unwrap();
            prop_assert!(
                rhs_larger >= rhs_base,
                "rhs fell from {rhs_base} to {rhs_larger}"
            );
        }
    }
}
