//! Acceptance gate: every release criterion in one target, one PASS/FAIL
//! line per criterion (visible with `--nocapture`, and in the failure
//! message otherwise).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cyclegain::{
    boost_off_time_criterion, buck_on_time_criterion, certify_gain, certify_gain_with,
    charge_balance_step, classify_stability, compute_equilibrium, derived_constants,
    dissipation_check, lti_lower_bound_oracle, ltv_coefficients, max_stable_sector,
    reference_buck, run_transient, simulate_unitless, unitless_current_block, BoostBranch,
    CaseIiRule, CommandProfile, ConverterParams, GainCertificate, InterferenceModel, LureError,
    Schedule, SectorBound, SectorNormalization, SolverOptions, StabilityClass, Topology, Verdict,
};

fn report(tag: &str, pass: bool, detail: &str) -> String {
    let line = format!(
        "criterion {tag}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    line
}

/// Table-point buck with the physical off-time window at half and double
/// the equilibrium off-time.
fn windowed_reference(load: f64) -> ConverterParams {
    let provisional = reference_buck(load, 1e-9, 1e-6);
    let t_ss = compute_equilibrium(&provisional)
        .expect("reference equilibrium")
        .t_var_ss;
    reference_buck(load, 0.5 * t_ss, 2.0 * t_ss)
}

/// Table-point buck with the off-time window collapsed onto the
/// equilibrium off-time, pinning the period ratio at one.
fn degenerate_reference(load: f64) -> ConverterParams {
    let provisional = reference_buck(load, 1e-9, 1e-6);
    let t_ss = compute_equilibrium(&provisional)
        .expect("reference equilibrium")
        .t_var_ss;
    reference_buck(load, t_ss, t_ss)
}

#[test]
fn criterion_1_zero_sector_gain() {
    let t0 = Instant::now();
    let sector = SectorBound {
        alpha: 0.0,
        beta: 0.0,
    };
    let cert = certify_gain(&unitless_current_block(), &sector)
        .expect("zero sector must be certifiable");
    let secs = t0.elapsed().as_secs_f64();
    let pass = cert.gamma_hat <= 1e-4 && secs < 1.0;
    let line = report(
        "1 zero-sector gain",
        pass,
        &format!("gamma_hat={:.3e}, {secs:.3} s", cert.gamma_hat),
    );
    assert!(pass, "{line}");
}

#[test]
fn criterion_2_reference_threshold_anchors() {
    let t0 = Instant::now();
    let a1 = max_stable_sector(&degenerate_reference(0.4), 1e-3).expect("bisection R=0.4");
    let a2 = max_stable_sector(&degenerate_reference(0.05), 1e-3).expect("bisection R=0.05");
    let secs = t0.elapsed().as_secs_f64();
    let pass = (a1 - 0.24).abs() <= 0.03 && (a2 - 0.44).abs() <= 0.03 && secs < 120.0;
    let line = report(
        "2 reference threshold anchors",
        pass,
        &format!("R=0.4: a*={a1:.6} want 0.24+-0.03; R=0.05: a*={a2:.6} want 0.44+-0.03; {secs:.1} s"),
    );
    assert!(pass, "{line}");
}

#[test]
fn criterion_3_reference_simulation_verdicts() {
    let t0 = Instant::now();
    let mut observed = Vec::new();
    for (load, radius) in [(0.4, 0.48), (0.05, 0.30)] {
        let params = windowed_reference(load);
        let interference = InterferenceModel::SectorGainSchedule {
            sector: SectorBound {
                alpha: -radius,
                beta: radius,
            },
            schedule: Schedule::Alternating,
            normalization: SectorNormalization::Equilibrium,
        };
        let command = CommandProfile::Step {
            before: -1.0417,
            after: 0.0,
        };
        let trace =
            run_transient(&params, &interference, &command, 6000).expect("transient run");
        let verdict = classify_stability(&trace, 500, 1e-3).expect("classification");
        observed.push(verdict.classification);
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = observed[0] == StabilityClass::Unstable
        && observed[1] == StabilityClass::Stable
        && secs < 10.0;
    let line = report(
        "3 reference simulation verdicts",
        pass,
        &format!(
            "case 1 (R=0.4, a=0.48): {} want unstable; case 2 (R=0.05, a=0.3): {} want stable; {secs:.1} s",
            observed[0], observed[1]
        ),
    );
    assert!(pass, "{line}");
}

/// Draws a valid buck parameter set with a non-degenerate off-time window.
fn random_buck(rng: &mut ChaCha8Rng) -> ConverterParams {
    loop {
        let v_in = rng.gen_range(3.0..48.0);
        let v_out = v_in * rng.gen_range(0.15..0.85);
        let log = |lo: f64, hi: f64, r: &mut ChaCha8Rng| -> f64 {
            (r.gen_range(lo.ln()..hi.ln())).exp()
        };
        let inductance = log(5e-8, 1e-6, rng);
        let capacitance = log(1e-6, 1e-3, rng);
        let load = log(0.02, 5.0, rng);
        let t_fixed = log(2e-8, 3e-7, rng);
        let lambda = rng.gen_range(0.0..=1.0);
        let t_ss = (v_in - v_out) / v_out * t_fixed;
        let params = ConverterParams {
            topology: Topology::BuckConstOn,
            v_in,
            v_out,
            inductance,
            capacitance,
            load,
            t_fixed,
            lambda,
            t_var_min: t_ss * rng.gen_range(0.2..0.9),
            t_var_max: t_ss * rng.gen_range(1.1..4.0),
        };
        if params.validate().is_err() {
            continue;
        }
        // The bound identity needs the slow-filter coefficient to stay
        // inside (0, 1) over the whole window.
        let d = derived_constants(&params).expect("derived constants");
        let worst = (params.t_fixed + params.t_var_max)
            * (1.0 + params.t_fixed / (2.0 * d.tau2));
        if worst < d.tau1 {
            return params;
        }
    }
}

#[test]
fn criterion_4_voltage_bound_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut worst_rel = 0.0_f64;
    for _ in 0..1000 {
        let params = random_buck(&mut rng);
        let d = derived_constants(&params).expect("derived constants");
        let eq = compute_equilibrium(&params).expect("equilibrium");
        let lo = ltv_coefficients(&params, params.t_var_min).expect("coefficients at min");
        let hi = ltv_coefficients(&params, params.t_var_max).expect("coefficients at max");
        let alpha_max = lo.alpha.max(hi.alpha);
        let direct = (hi.beta + hi.gamma) / (1.0 - alpha_max);
        let closed = params.load / (1.0 + params.t_fixed / (2.0 * d.tau2)) * d.t_s_max
            / d.t_s_min;
        let rel = (direct - closed).abs() / closed.abs();
        worst_rel = worst_rel.max(rel);
        assert!(
            rel <= 1e-9,
            "bound identity broke: direct {direct:.12e} vs closed {closed:.12e} \
             (rel {rel:.3e}) at v_in={}, v_out={}, t_ss={:.3e}",
            params.v_in,
            params.v_out,
            eq.t_var_ss
        );
    }
    let line = report(
        "4 voltage bound identity",
        true,
        &format!("1000 parameter sets, worst relative error {worst_rel:.3e}"),
    );
    assert!(worst_rel <= 1e-9, "{line}");
}

/// 21x21 sector grid over alpha in [-0.5, 0], beta in [0, 0.5] with the
/// per-cell certification outcome.
fn grid_certificates() -> Vec<(SectorBound, Option<GainCertificate>)> {
    let sys = unitless_current_block();
    let opts = SolverOptions::default();
    let mut cells = Vec::with_capacity(441);
    for i in 0..21 {
        for j in 0..21 {
            let alpha = -0.5 + 0.5 * i as f64 / 20.0;
            let beta = 0.5 * j as f64 / 20.0;
            let sector = SectorBound { alpha, beta };
            match certify_gain_with(&sys, &sector, &opts) {
                Ok(cert) => cells.push((sector, Some(cert))),
                Err(LureError::Infeasible { .. }) => cells.push((sector, None)),
                Err(e) => panic!(
                    "solver failed at sector [{alpha}, {beta}]: {e}"
                ),
            }
        }
    }
    cells
}

fn unitless_trial(
    sector: &SectorBound,
    seed: u64,
    length: usize,
) -> (Vec<cyclegain::UnitlessStep>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slopes: Vec<f64> = (0..length)
        .map(|_| {
            if sector.alpha == sector.beta {
                sector.alpha
            } else {
                rng.gen_range(sector.alpha..=sector.beta)
            }
        })
        .collect();
    let inputs: Vec<f64> = (0..length).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let steps = simulate_unitless(sector, &slopes, &inputs).expect("unitless run");
    let in_energy: f64 = inputs.iter().map(|r| r * r).sum();
    let out_energy: f64 = steps.iter().map(|s| s.e * s.e).sum();
    (steps, (out_energy / in_energy).sqrt())
}

#[test]
fn criterion_5_oracle_domination() {
    let cells = grid_certificates();
    let mut feasible = 0usize;
    let mut worst_margin = f64::INFINITY;
    for (idx, (sector, cert)) in cells.iter().enumerate() {
        let oracle = lti_lower_bound_oracle(sector);
        match cert {
            None => assert!(
                oracle.is_infinite(),
                "solver infeasible at [{}, {}] but the constant-slope oracle is finite ({oracle})",
                sector.alpha,
                sector.beta
            ),
            Some(cert) => {
                assert!(
                    oracle.is_finite(),
                    "solver certified [{}, {}] but the constant-slope oracle diverges",
                    sector.alpha,
                    sector.beta
                );
                assert!(
                    cert.gamma_hat + 1e-12 >= oracle,
                    "certified gain {:.9e} below the constant-slope oracle {:.9e} at [{}, {}]",
                    cert.gamma_hat,
                    oracle,
                    sector.alpha,
                    sector.beta
                );
                let slack = cert.gamma_hat * cert.tolerance + 1e-9;
                for trial in 0..100u64 {
                    let seed = (idx as u64) << 16 | trial;
                    let (_, emp) = unitless_trial(sector, seed, 10_000);
                    worst_margin = worst_margin.min(cert.gamma_hat + slack - emp);
                    assert!(
                        cert.gamma_hat + slack >= emp,
                        "empirical gain {emp:.9e} exceeds certified {:.9e} (+{slack:.1e}) \
                         at [{}, {}] seed {seed}",
                        cert.gamma_hat,
                        sector.alpha,
                        sector.beta
                    );
                }
                feasible += 1;
            }
        }
    }
    let line = report(
        "5 oracle domination",
        true,
        &format!(
            "{feasible}/441 feasible cells, 100 schedules each, worst slack {worst_margin:.3e}"
        ),
    );
    assert!(feasible > 0, "{line}");
}

#[test]
fn criterion_6_dissipation_property() {
    let cells = grid_certificates();
    let mut checked = 0usize;
    for (idx, (sector, cert)) in cells.iter().enumerate() {
        let Some(cert) = cert else { continue };
        let p = cert.p[(0, 0)];
        let tol = 1e-8 * (1.0 + p);
        for trial in 0..100u64 {
            let seed = 0xD15C << 32 | (idx as u64) << 16 | trial;
            let (steps, _) = unitless_trial(sector, seed, 300);
            assert!(
                dissipation_check(&steps, cert, sector, tol),
                "dissipation inequality violated at sector [{}, {}], seed {seed}, \
                 gamma_hat {:.9e}, P {p:.9e}",
                sector.alpha,
                sector.beta,
                cert.gamma_hat
            );
        }
        checked += 1;
    }
    let line = report(
        "6 dissipation property",
        true,
        &format!("{checked} certificates x 100 trajectories, tol 1e-8*(1+P)"),
    );
    assert!(checked > 0, "{line}");
}

#[test]
fn criterion_7_charge_balance_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    let mut param_sets = vec![windowed_reference(0.4), windowed_reference(0.05)];
    for _ in 0..18 {
        param_sets.push(random_buck(&mut rng));
    }
    let mut worst_rel = 0.0_f64;
    for params in &param_sets {
        for _ in 0..100 {
            let i_tilde = rng.gen_range(-2.0..2.0);
            let v_tilde = params.v_out * rng.gen_range(-0.2..0.2);
            let i_next = rng.gen_range(-2.0..2.0);
            let t_off = rng.gen_range(params.t_var_min..=params.t_var_max);
            let coeff = ltv_coefficients(params, t_off).expect("coefficients");
            let ltv = coeff.alpha * v_tilde + coeff.beta * i_tilde + coeff.gamma * i_next;
            let charge = charge_balance_step(params, i_tilde, v_tilde, i_next, t_off)
                .expect("charge assembly");
            let scale = ltv.abs().max(params.v_out * 1e-9);
            let rel = (charge - ltv).abs() / scale;
            worst_rel = worst_rel.max(rel);
            assert!(
                rel <= 1e-6,
                "charge assembly {charge:.12e} vs map {ltv:.12e} (rel {rel:.3e}) \
                 at t_off {t_off:.3e}, v_in {}, load {}",
                params.v_in,
                params.load
            );
        }
    }
    let line = report(
        "7 charge-balance equivalence",
        true,
        &format!(
            "{} parameter sets x 100 states, worst relative error {worst_rel:.3e}",
            param_sets.len()
        ),
    );
    assert!(worst_rel <= 1e-6, "{line}");
}

#[test]
fn criterion_8_small_gain_consistency() {
    let sys = unitless_current_block();
    let opts = SolverOptions::default();
    let mut configurations = Vec::new();
    for (load, radii) in [
        (0.4, [0.05, 0.10, 0.15, 0.20]),
        (0.05, [0.10, 0.20, 0.30, 0.40]),
    ] {
        for radius in radii {
            configurations.push((windowed_reference(load), radius));
        }
    }
    let mut runs = 0usize;
    for (params, radius) in &configurations {
        let sector = SectorBound {
            alpha: -radius,
            beta: *radius,
        };
        let cert = certify_gain_with(&sys, &sector, &opts).expect("sector gain");
        let rep = buck_on_time_criterion(params, &sector, cert.gamma_hat)
            .expect("criterion evaluation");
        assert_eq!(
            rep.verdict,
            Verdict::Certified,
            "configuration load={} radius={radius} must be certified for this check",
            params.load
        );
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0xC8 << 32 | seed);
            let interference = InterferenceModel::SectorGainSchedule {
                sector,
                schedule: Schedule::Random { seed },
                normalization: SectorNormalization::Instantaneous,
            };
            let command = CommandProfile::Pulse {
                base: 0.0,
                amplitude: rng.gen_range(-1.5..1.5),
                start: 10 + (seed as usize % 50),
                width: 100 + (seed as usize * 7) % 400,
            };
            let trace =
                run_transient(params, &interference, &command, 2500).expect("ensemble run");
            let verdict = classify_stability(&trace, 400, 1e-3).expect("classification");
            assert_eq!(
                verdict.classification,
                StabilityClass::Stable,
                "certified configuration load={} radius={radius} classified {} on seed {seed} \
                 (final rms {:.3e})",
                params.load,
                verdict.classification,
                verdict.final_rms
            );
            runs += 1;
        }
    }
    let line = report(
        "8 small-gain consistency",
        true,
        &format!(
            "{} certified configurations x 50 seeded runs, {runs} traces all stable",
            configurations.len()
        ),
    );
    assert!(runs == configurations.len() * 50, "{line}");
}

#[test]
fn criterion_9_boost_branch_selection() {
    let sector = SectorBound {
        alpha: -0.3,
        beta: 0.3,
    };
    let cert = certify_gain(&unitless_current_block(), &sector).expect("sector gain");

    let case_i = ConverterParams {
        topology: Topology::BoostConstOff,
        v_in: 5.0,
        v_out: 12.0,
        inductance: 480e-9,
        capacitance: 100e-6,
        load: 2.0,
        t_fixed: 100e-9,
        lambda: 0.5,
        t_var_min: 140e-9,
        t_var_max: 140e-9,
    };
    let rep_i = boost_off_time_criterion(&case_i, &sector, cert.gamma_hat, CaseIiRule::Printed)
        .expect("case (i) evaluation");
    let threshold = rep_i
        .checks
        .iter()
        .find(|c| c.name == "gain_case_i")
        .expect("case (i) check present")
        .rhs;

    let case_ii = ConverterParams {
        inductance: 4.8e-6,
        capacitance: 1e-6,
        lambda: 0.0,
        ..case_i
    };
    let rep_ii = boost_off_time_criterion(&case_ii, &sector, cert.gamma_hat, CaseIiRule::Printed)
        .expect("case (ii) evaluation");
    let printed = rep_ii
        .checks
        .iter()
        .find(|c| c.name == "gain_case_ii_printed")
        .expect("printed variant reported")
        .rhs;
    let normalized = rep_ii
        .checks
        .iter()
        .find(|c| c.name == "gain_case_ii_normalized")
        .expect("normalized variant reported")
        .rhs;
    let t_off_sq = case_ii.t_fixed * case_ii.t_fixed;
    let factor_rel = (printed - normalized * t_off_sq).abs() / printed.abs();

    let pass = rep_i.branch == Some(BoostBranch::CaseI)
        && (threshold - 5.3).abs() <= 5.3 * 1e-6
        && rep_ii.branch == Some(BoostBranch::CaseII)
        && factor_rel <= 1e-12;
    let line = report(
        "9 boost branch selection",
        pass,
        &format!(
            "case (i) branch {:?} threshold {threshold:.6}; case (ii) branch {:?}, \
             printed/normalized ratio error {factor_rel:.3e}",
            rep_i.branch, rep_ii.branch
        ),
    );
    assert!(pass, "{line}");
}
