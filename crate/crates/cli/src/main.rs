use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cyclegain::{
    boost_off_time_criterion, buck_on_time_criterion, certify_gain_with, classify_stability,
    compute_equilibrium, derived_constants, gain_surface, max_stable_sector, parse_config,
    reference_buck, render_config, run_transient, unitless_current_block, validate_class_sigma,
    CommandProfile, ConfigError, ConverterParams, CriteriaError, InterferenceModel, LureError,
    ParamError, ResolvedConfig, Schedule, SectorBound, SectorNormalization, SimError,
    StabilityClass, Topology, Verdict,
};

/// Certification and simulation toolkit for cycle-by-cycle current-mode
/// dc-dc converters.
#[derive(Parser)]
#[command(name = "cyclegain", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the steady-state cycle, derived constants, and model-assumption ratios.
    Equilibrium {
        /// Path to a key = value configuration file.
        config: PathBuf,
    },
    /// Certify the current-loop gain over a sector grid and write the surface CSV.
    GainSurface {
        config: PathBuf,
        /// Directory for emitted artifacts (overrides the config `out` key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the small-gain stability criterion for the configured sector.
    Certify {
        config: PathBuf,
    },
    /// Bisect the largest symmetric sector radius that passes the criterion.
    MaxSector {
        config: PathBuf,
    },
    /// Run the cycle-by-cycle transient, write the trace CSV, and classify it.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both reference validation cases and compare verdicts and thresholds.
    ValidateTables {
        /// Optional configuration; only run-length and settle keys apply.
        config: Option<PathBuf>,
    },
}

enum CliError {
    Config(ConfigError),
    Io { path: PathBuf, err: std::io::Error },
    Criteria(CriteriaError),
    Lure(LureError),
    Sim(SimError),
    Param(ParamError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Io { path, err } => write!(f, "{}: {err}", path.display()),
            CliError::Criteria(e) => write!(f, "criterion: {e}"),
            CliError::Lure(e) => write!(f, "gain solver: {e}"),
            CliError::Sim(e) => write!(f, "simulation: {e}"),
            CliError::Param(e) => write!(f, "parameters: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}
impl From<CriteriaError> for CliError {
    fn from(e: CriteriaError) -> Self {
        CliError::Criteria(e)
    }
}
impl From<LureError> for CliError {
    fn from(e: LureError) -> Self {
        CliError::Lure(e)
    }
}
impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}
impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Param(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Equilibrium { config } => cmd_equilibrium(&config),
        Command::GainSurface { config, out } => cmd_gain_surface(&config, out),
        Command::Certify { config } => cmd_certify(&config),
        Command::MaxSector { config } => cmd_max_sector(&config),
        Command::Simulate { config, out } => cmd_simulate(&config, out),
        Command::ValidateTables { config } => cmd_validate_tables(config.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> Result<ResolvedConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|err| CliError::Io {
        path: path.to_path_buf(),
        err,
    })?;
    Ok(parse_config(&text)?)
}

/// Echoes every effective configuration value, applied defaults included.
fn echo_config(cfg: &ResolvedConfig) {
    print!("resolved configuration:\n{}", render_config(cfg));
    println!();
}

fn out_dir(flag: Option<PathBuf>, cfg: &ResolvedConfig) -> PathBuf {
    flag.unwrap_or_else(|| {
        cfg.out_dir
            .as_deref()
            .map_or_else(|| PathBuf::from("."), PathBuf::from)
    })
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|err| CliError::Io {
        path: dir.to_path_buf(),
        err,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|err| CliError::Io {
        path: path.clone(),
        err,
    })?;
    Ok(path)
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or_else(|| String::from("none"), |x| format!("{x:.9e}"))
}

fn cmd_equilibrium(config: &Path) -> Result<u8, CliError> {
    let cfg = load_config(config)?;
    let eq = compute_equilibrium(&cfg.params)?;
    let d = derived_constants(&cfg.params)?;
    let a = validate_class_sigma(&cfg.params, 0.1)?;
    echo_config(&cfg);
    println!("equilibrium:");
    println!("i_valley_A = {}", opt_f(eq.i_valley));
    println!("t_var_ss_s = {:.9e}", eq.t_var_ss);
    println!("t_s_ss_s = {:.9e}", eq.t_s_ss);
    println!("derived constants:");
    println!("tau1_s = {:.9e}", d.tau1);
    println!("tau2_s = {:.9e}", d.tau2);
    println!("t_s_min_s = {:.9e}", d.t_s_min);
    println!("t_s_max_s = {:.9e}", d.t_s_max);
    println!("assumptions:");
    println!("ratio_rc = {:.9e}", a.ratio_rc);
    println!("ratio_ripple = {:.9e}", a.ratio_ripple);
    println!("threshold = {:.9e}", a.threshold);
    println!("pass = {}", a.pass);
    Ok(0)
}

fn cmd_gain_surface(config: &Path, out: Option<PathBuf>) -> Result<u8, CliError> {
    let cfg = load_config(config)?;
    let surface = gain_surface(
        (cfg.grid_alpha_min, cfg.grid_alpha_max),
        (cfg.grid_beta_min, cfg.grid_beta_max),
        cfg.grid_points,
        cfg.grid_points,
        &cfg.solver,
    )?;
    let dir = out_dir(out, &cfg);
    let path = write_artifact(&dir, "gain_surface.csv", &surface.to_csv())?;
    let infeasible = surface.gamma_hat.iter().filter(|g| !g.is_finite()).count();
    echo_config(&cfg);
    println!("gain surface:");
    println!("cells = {}", surface.gamma_hat.len());
    println!("infeasible = {infeasible}");
    println!("wrote {}", path.display());
    Ok(0)
}

/// Certifies the configured sector's gain, then evaluates the topology's
/// small-gain criterion with it. An infeasible sector is a NotCertified
/// verdict, not a solver failure.
fn cmd_certify(config: &Path) -> Result<u8, CliError> {
    let cfg = load_config(config)?;
    let sys = unitless_current_block();
    let cert = match certify_gain_with(&sys, &cfg.sector, &cfg.solver) {
        Ok(cert) => cert,
        Err(LureError::Infeasible { .. }) => {
            echo_config(&cfg);
            println!("verdict=NotCertified");
            println!("gamma_hat=inf");
            println!(
                "note=no finite gain is certifiable for sector [{:.9e}, {:.9e}]",
                cfg.sector.alpha, cfg.sector.beta
            );
            return Ok(1);
        }
        Err(e) => return Err(e.into()),
    };
    let report = match cfg.params.topology {
        Topology::BuckConstOn => buck_on_time_criterion(&cfg.params, &cfg.sector, cert.gamma_hat)?,
        Topology::BoostConstOff => {
            boost_off_time_criterion(&cfg.params, &cfg.sector, cert.gamma_hat, cfg.case_ii_rule)?
        }
    };
    echo_config(&cfg);
    println!("gamma_hat={:.9e}", cert.gamma_hat);
    print!("{}", report.to_key_value());
    Ok(match report.verdict {
        Verdict::Certified => 0,
        Verdict::NotCertified => 1,
    })
}

fn cmd_max_sector(config: &Path) -> Result<u8, CliError> {
    let cfg = load_config(config)?;
    let radius = max_stable_sector(&cfg.params, cfg.sector_tol)?;
    echo_config(&cfg);
    println!("max_stable_sector = {radius:.9e}");
    Ok(0)
}

fn cmd_simulate(config: &Path, out: Option<PathBuf>) -> Result<u8, CliError> {
    let cfg = load_config(config)?;
    let trace = run_transient(&cfg.params, &cfg.interference, &cfg.command, cfg.cycles)?;
    let verdict = classify_stability(&trace, cfg.settle_window, cfg.settle_tol)?;
    let dir = out_dir(out, &cfg);
    let path = write_artifact(&dir, "trace.csv", &trace.to_csv())?;
    echo_config(&cfg);
    println!("verdict:");
    println!("classification = {}", verdict.classification);
    println!("peak_current_A = {:.9e}", verdict.peak_current);
    println!("peak_voltage_V = {:.9e}", verdict.peak_voltage);
    println!("mid_rms_A = {:.9e}", verdict.mid_rms);
    println!("final_rms_A = {:.9e}", verdict.final_rms);
    println!(
        "diverged_at = {}",
        verdict
            .diverged_at
            .map_or_else(|| String::from("none"), |n| n.to_string())
    );
    println!(
        "clamped_cycles = {}",
        trace.states.iter().filter(|s| s.clamped).count()
    );
    println!("non_monotone_cycles = {}", trace.non_monotone_count());
    println!("wrote {} ({} states)", path.display(), trace.states.len());
    Ok(match verdict.classification {
        StabilityClass::Stable => 0,
        StabilityClass::Unstable | StabilityClass::Indeterminate => 1,
    })
}

struct TableCase {
    label: &'static str,
    load: f64,
    sector_radius: f64,
    command_step: f64,
    expected_verdict: StabilityClass,
    expected_max_sector: f64,
}

/// Reference validation cases: the 12 V to 2.2 V buck at two load points,
/// driven by a current-command step into the operating point under the
/// worst-case alternating interference schedule.
const TABLE_CASES: [TableCase; 2] = [
    TableCase {
        label: "case1",
        load: 0.4,
        sector_radius: 0.48,
        command_step: 1.0417,
        expected_verdict: StabilityClass::Unstable,
        expected_max_sector: 0.24,
    },
    TableCase {
        label: "case2",
        load: 0.05,
        sector_radius: 0.30,
        command_step: 1.0417,
        expected_verdict: StabilityClass::Stable,
        expected_max_sector: 0.44,
    },
];

fn reference_params(load: f64) -> Result<ConverterParams, CliError> {
    let provisional = reference_buck(load, 1e-9, 1e-6);
    let t_ss = compute_equilibrium(&provisional)?.t_var_ss;
    Ok(reference_buck(load, 0.5 * t_ss, 2.0 * t_ss))
}

fn cmd_validate_tables(config: Option<&Path>) -> Result<u8, CliError> {
    let overrides = config.map(load_config).transpose()?;
    let (cycles, settle_window, settle_tol, sector_tol) = overrides.as_ref().map_or(
        (6000, 500, 1e-3, 1e-3),
        |c| (c.cycles, c.settle_window, c.settle_tol, c.sector_tol),
    );

    let mut rows = Vec::new();
    let mut verdicts_match = true;
    for case in &TABLE_CASES {
        let params = reference_params(case.load)?;
        // The reference thresholds assume a degenerate clamp window (period
        // ratio pinned at one); the transient needs the physical window.
        let t_ss = compute_equilibrium(&params)?.t_var_ss;
        let degenerate = reference_buck(case.load, t_ss, t_ss);
        let observed_max = max_stable_sector(&degenerate, sector_tol)?;
        let sector = SectorBound::symmetric(case.sector_radius)?;
        let interference = InterferenceModel::SectorGainSchedule {
            sector,
            schedule: Schedule::Alternating,
            normalization: SectorNormalization::Equilibrium,
        };
        let command = CommandProfile::Step {
            before: -case.command_step,
            after: 0.0,
        };
        let trace = run_transient(&params, &interference, &command, cycles)?;
        let verdict = classify_stability(&trace, settle_window, settle_tol)?;
        verdicts_match &= verdict.classification == case.expected_verdict;
        rows.push(format!(
            "{}  R={:.9e}  a={:.9e}  expected_verdict={}  observed_verdict={}  expected_max_sector={:.9e}  observed_max_sector={:.9e}",
            case.label,
            case.load,
            case.sector_radius,
            case.expected_verdict,
            verdict.classification,
            case.expected_max_sector,
            observed_max,
        ));
    }

    if let Some(cfg) = &overrides {
        echo_config(cfg);
    }
    println!("validation summary:");
    for row in &rows {
        println!("{row}");
    }
    Ok(if verdicts_match { 0 } else { 1 })
}
