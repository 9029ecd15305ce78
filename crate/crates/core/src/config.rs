//! Flat `key = value` run-configuration format shared by the command-line
//! tool.
//!
//! One assignment per line; `#` starts a comment (full-line or trailing);
//! numeric values accept the SI suffixes `n`, `u`, `m`, `k`. Every derived
//! default is materialized into the resolved configuration so that
//! [`render_config`] echoes the complete effective setup, and
//! `parse_config(render_config(cfg))` reproduces `cfg` exactly.

use crate::converter::{compute_equilibrium, ConverterParams, ParamError, Topology};
use crate::criteria::CaseIiRule;
use crate::lure::{SectorBound, SolverOptions};
use crate::sim::{CommandProfile, InterferenceModel, Schedule, SectorNormalization};
use std::collections::HashMap;
use std::fmt;

/// Errors from configuration parsing and resolution.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// A line is not `key = value`, a comment, or blank.
    BadLine { line: usize, content: String },
    /// The key is not part of the configuration vocabulary.
    UnknownKey { line: usize, key: String },
    /// The key was assigned twice.
    DuplicateKey { line: usize, key: String },
    /// The value does not parse as a number with an optional SI suffix.
    BadUnit {
        line: usize,
        key: String,
        value: String,
    },
    /// The value is not one of the admissible words for the key.
    BadChoice {
        line: usize,
        key: String,
        value: String,
        allowed: &'static str,
    },
    /// The value is numeric but out of range for the key.
    BadValue {
        line: usize,
        key: String,
        value: f64,
        what: &'static str,
    },
    /// A key required by the resolved topology or mode is absent.
    MissingKey { key: &'static str },
    /// The resolved converter parameters violate a model invariant.
    Param(ParamError),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::BadLine { line, content } => {
                write!(f, "line {line}: expected `key = value`, got `{content}`")
            }
            ConfigError::UnknownKey { line, key } => {
                write!(f, "line {line}: unknown key `{key}`")
            }
            ConfigError::DuplicateKey { line, key } => {
                write!(f, "line {line}: key `{key}` assigned more than once")
            }
            ConfigError::BadUnit { line, key, value } => write!(
                f,
                "line {line}: value `{value}` for `{key}` is not a number with optional n/u/m/k suffix"
            ),
            ConfigError::BadChoice {
                line,
                key,
                value,
                allowed,
            } => write!(
                f,
                "line {line}: value `{value}` for `{key}` must be one of {allowed}"
            ),
            ConfigError::BadValue {
                line,
                key,
                value,
                what,
            } => write!(f, "line {line}: value {value} for `{key}` {what}"),
            ConfigError::MissingKey { key } => write!(f, "missing required key `{key}`"),
            ConfigError::Param(e) => write!(f, "invalid converter parameters: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<ParamError> for ConfigError {
    fn from(e: ParamError) -> Self {
        ConfigError::Param(e)
    }
}

/// Fully resolved run configuration with every default materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub params: ConverterParams,
    /// Current-sense resistance, accepted for completeness; the sampled
    /// model is formulated in amperes, so it does not enter any computation.
    pub rs_sense: Option<f64>,
    pub sector: SectorBound,
    pub solver: SolverOptions,
    /// Bisection tolerance for the largest certifiable symmetric sector.
    pub sector_tol: f64,
    pub case_ii_rule: CaseIiRule,
    pub cycles: usize,
    pub settle_window: usize,
    pub settle_tol: f64,
    pub seed: u64,
    pub trials: usize,
    pub trial_length: usize,
    pub amplitude: f64,
    pub interference: InterferenceModel,
    pub command: CommandProfile,
    pub grid_alpha_min: f64,
    pub grid_alpha_max: f64,
    pub grid_beta_min: f64,
    pub grid_beta_max: f64,
    pub grid_points: usize,
    pub out_dir: Option<String>,
}

const KNOWN_KEYS: &[&str] = &[
    "topology",
    "Vin",
    "Vout",
    "L",
    "C",
    "R",
    "Rs",
    "Ton",
    "Toff",
    "lambda",
    "Toff_min",
    "Toff_max",
    "Ton_min",
    "Ton_max",
    "sector",
    "sector_alpha",
    "sector_beta",
    "case_ii_rule",
    "solver_rel_tol",
    "solver_lambda_grid",
    "sector_tol",
    "cycles",
    "settle_window",
    "settle_tol",
    "seed",
    "trials",
    "trial_length",
    "amplitude",
    "interference",
    "schedule",
    "schedule_slope",
    "normalization",
    "sin_amplitude",
    "sin_period",
    "sin_phase",
    "command",
    "cmd_level",
    "cmd_before",
    "cmd_after",
    "cmd_base",
    "cmd_amplitude",
    "cmd_start",
    "cmd_width",
    "grid_alpha_min",
    "grid_alpha_max",
    "grid_beta_min",
    "grid_beta_max",
    "grid_points",
    "out",
];

/// Parse a number with an optional trailing SI suffix (n, u, m, k).
fn parse_si(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() || !t.is_ascii() {
        return None;
    }
    let (num, mult) = match t.as_bytes()[t.len() - 1] {
        b'n' => (&t[..t.len() - 1], 1e-9),
        b'u' => (&t[..t.len() - 1], 1e-6),
        b'm' => (&t[..t.len() - 1], 1e-3),
        b'k' => (&t[..t.len() - 1], 1e3),
        _ => (t, 1.0),
    };
    let v: f64 = num.trim().parse().ok()?;
    if v.is_finite() {
        Some(v * mult)
    } else {
        None
    }
}

struct RawConfig {
    entries: HashMap<String, (usize, String)>,
}

impl RawConfig {
    fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => match parse_si(value) {
                Some(v) => Ok(Some(v)),
                None => Err(ConfigError::BadUnit {
                    line: *line,
                    key: key.to_string(),
                    value: value.clone(),
                }),
            },
        }
    }

    fn get_f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    fn require_f64(&self, key: &'static str) -> Result<f64, ConfigError> {
        self.get_f64(key)?
            .ok_or(ConfigError::MissingKey { key })
    }

    fn get_count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get_f64(key)? {
            None => Ok(default),
            Some(v) => {
                let (line, _) = self.entries[key];
                if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                    Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: v,
                        what: "must be a non-negative integer",
                    })
                } else {
                    Ok(v as usize)
                }
            }
        }
    }

    fn get_seed(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get_f64(key)? {
            None => Ok(default),
            Some(v) => {
                let (line, _) = self.entries[key];
                if v < 0.0 || v.fract() != 0.0 || v > 2f64.powi(53) {
                    Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: v,
                        what: "must be a non-negative integer seed",
                    })
                } else {
                    Ok(v as u64)
                }
            }
        }
    }

    fn get_choice(&self, key: &str, allowed: &'static str) -> Result<Option<String>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => {
                let v = value.trim().to_string();
                if allowed.split('|').any(|w| w.trim() == v) {
                    Ok(Some(v))
                } else {
                    Err(ConfigError::BadChoice {
                        line: *line,
                        key: key.to_string(),
                        value: v,
                        allowed,
                    })
                }
            }
        }
    }

    fn get_string(&self, key: &str) -> Option<String> {
        self.entries.get(key).map(|(_, v)| v.clone())
    }
}

fn scan_lines(text: &str) -> Result<RawConfig, ConfigError> {
    let mut entries: HashMap<String, (usize, String)> = HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine {
                line: line_no,
                content: line.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::BadLine {
                line: line_no,
                content: line.to_string(),
            });
        }
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line: line_no, key });
        }
        if entries.contains_key(&key) {
            return Err(ConfigError::DuplicateKey { line: line_no, key });
        }
        entries.insert(key, (line_no, value));
    }
    Ok(RawConfig { entries })
}

/// Parse configuration text into a fully resolved configuration.
///
/// All converter keys are required for every command so a single file can
/// drive any of them; everything else falls back to documented defaults.
/// The variable-time clamp window defaults to half and double the
/// equilibrium variable time.
pub fn parse_config(text: &str) -> Result<ResolvedConfig, ConfigError> {
    let raw = scan_lines(text)?;

    let topology = match raw
        .get_choice("topology", "buck_const_on | boost_const_off")?
        .as_deref()
    {
        None | Some("buck_const_on") => Topology::BuckConstOn,
        Some("boost_const_off") => Topology::BoostConstOff,
        Some(_) => unreachable!("choices are pre-validated"),
    };

    let v_in = raw.require_f64("Vin")?;
    let v_out = raw.require_f64("Vout")?;
    let inductance = raw.require_f64("L")?;
    let capacitance = raw.require_f64("C")?;
    let load = raw.require_f64("R")?;
    let t_fixed = match topology {
        Topology::BuckConstOn => raw.require_f64("Ton")?,
        Topology::BoostConstOff => raw.require_f64("Toff")?,
    };
    let lambda = raw.get_f64_or("lambda", 0.5)?;
    let rs_sense = raw.get_f64("Rs")?;

    // Resolve the clamp window around the equilibrium variable time, using
    // a provisional placeholder window for the intermediate validation.
    let mut params = ConverterParams {
        topology,
        v_in,
        v_out,
        inductance,
        capacitance,
        load,
        t_fixed,
        lambda,
        t_var_min: t_fixed,
        t_var_max: 2.0 * t_fixed,
    };
    params.validate()?;
    let t_var_ss = compute_equilibrium(&params)?.t_var_ss;
    let (min_key, max_key) = match topology {
        Topology::BuckConstOn => ("Toff_min", "Toff_max"),
        Topology::BoostConstOff => ("Ton_min", "Ton_max"),
    };
    params.t_var_min = raw.get_f64_or(min_key, 0.5 * t_var_ss)?;
    params.t_var_max = raw.get_f64_or(max_key, 2.0 * t_var_ss)?;
    params.validate()?;

    let sector = resolve_sector(&raw)?;

    let mut solver = SolverOptions::default();
    solver.rel_tol = raw.get_f64_or("solver_rel_tol", solver.rel_tol)?;
    solver.lambda_grid = raw.get_count("solver_lambda_grid", solver.lambda_grid)?;

    let case_ii_rule = match raw
        .get_choice("case_ii_rule", "printed | normalized")?
        .as_deref()
    {
        None | Some("printed") => CaseIiRule::Printed,
        Some("normalized") => CaseIiRule::Normalized,
        Some(_) => unreachable!("choices are pre-validated"),
    };

    let cycles = raw.get_count("cycles", 5000)?;
    let settle_window = raw.get_count("settle_window", 500)?;
    let settle_tol = raw.get_f64_or("settle_tol", 1e-3)?;
    let seed = raw.get_seed("seed", 0)?;
    let trials = raw.get_count("trials", 100)?;
    let trial_length = raw.get_count("trial_length", 10_000)?;
    let amplitude = raw.get_f64_or("amplitude", 1.0)?;

    let interference = resolve_interference(&raw, &sector, seed)?;
    let command = resolve_command(&raw, cycles)?;

    let grid_alpha_min = raw.get_f64_or("grid_alpha_min", -0.5)?;
    let grid_alpha_max = raw.get_f64_or("grid_alpha_max", 0.0)?;
    let grid_beta_min = raw.get_f64_or("grid_beta_min", 0.0)?;
    let grid_beta_max = raw.get_f64_or("grid_beta_max", 0.5)?;
    let grid_points = raw.get_count("grid_points", 21)?;

    Ok(ResolvedConfig {
        params,
        rs_sense,
        sector,
        solver,
        sector_tol: raw.get_f64_or("sector_tol", 1e-3)?,
        case_ii_rule,
        cycles,
        settle_window,
        settle_tol,
        seed,
        trials,
        trial_length,
        amplitude,
        interference,
        command,
        grid_alpha_min,
        grid_alpha_max,
        grid_beta_min,
        grid_beta_max,
        grid_points,
        out_dir: raw.get_string("out"),
    })
}

fn resolve_sector(raw: &RawConfig) -> Result<SectorBound, ConfigError> {
    let alpha = raw.get_f64("sector_alpha")?;
    let beta = raw.get_f64("sector_beta")?;
    match (alpha, beta) {
        (Some(a), Some(b)) => {
            if a > b {
                let (line, _) = raw.entries["sector_alpha"];
                return Err(ConfigError::BadValue {
                    line,
                    key: "sector_alpha".to_string(),
                    value: a,
                    what: "must not exceed sector_beta",
                });
            }
            Ok(SectorBound { alpha: a, beta: b })
        }
        (Some(_), None) => Err(ConfigError::MissingKey { key: "sector_beta" }),
        (None, Some(_)) => Err(ConfigError::MissingKey { key: "sector_alpha" }),
        (None, None) => {
            let radius = raw.get_f64_or("sector", 0.0)?;
            if radius < 0.0 {
                let (line, _) = raw.entries["sector"];
                return Err(ConfigError::BadValue {
                    line,
                    key: "sector".to_string(),
                    value: radius,
                    what: "symmetric sector radius must be non-negative",
                });
            }
            Ok(SectorBound {
                alpha: -radius,
                beta: radius,
            })
        }
    }
}

fn resolve_interference(
    raw: &RawConfig,
    sector: &SectorBound,
    seed: u64,
) -> Result<InterferenceModel, ConfigError> {
    match raw
        .get_choice("interference", "none | schedule | sinusoid")?
        .as_deref()
    {
        None | Some("none") => Ok(InterferenceModel::None),
        Some("schedule") => {
            let schedule = match raw
                .get_choice("schedule", "alternating | constant | random")?
                .as_deref()
            {
                None | Some("alternating") => Schedule::Alternating,
                Some("constant") => Schedule::Constant {
                    slope: raw.get_f64_or("schedule_slope", sector.beta)?,
                },
                Some("random") => Schedule::Random { seed },
                Some(_) => unreachable!("choices are pre-validated"),
            };
            let normalization = match raw
                .get_choice("normalization", "equilibrium | instantaneous")?
                .as_deref()
            {
                None | Some("equilibrium") => SectorNormalization::Equilibrium,
                Some("instantaneous") => SectorNormalization::Instantaneous,
                Some(_) => unreachable!("choices are pre-validated"),
            };
            Ok(InterferenceModel::SectorGainSchedule {
                sector: *sector,
                schedule,
                normalization,
            })
        }
        Some("sinusoid") => Ok(InterferenceModel::Sinusoid {
            amplitude: raw
                .get_f64("sin_amplitude")?
                .ok_or(ConfigError::MissingKey {
                    key: "sin_amplitude",
                })?,
            period: raw
                .get_f64("sin_period")?
                .ok_or(ConfigError::MissingKey { key: "sin_period" })?,
            phase: raw.get_f64_or("sin_phase", 0.0)?,
        }),
        Some(_) => unreachable!("choices are pre-validated"),
    }
}

fn resolve_command(raw: &RawConfig, cycles: usize) -> Result<CommandProfile, ConfigError> {
    match raw
        .get_choice("command", "constant | step | pulse")?
        .as_deref()
    {
        Some("constant") => Ok(CommandProfile::Constant {
            level: raw.get_f64_or("cmd_level", 0.0)?,
        }),
        None | Some("step") => Ok(CommandProfile::Step {
            before: raw.get_f64_or("cmd_before", 0.0)?,
            after: raw.get_f64_or("cmd_after", 0.0)?,
        }),
        Some("pulse") => Ok(CommandProfile::Pulse {
            base: raw.get_f64_or("cmd_base", 0.0)?,
            amplitude: raw.get_f64_or("cmd_amplitude", 0.0)?,
            start: raw.get_count("cmd_start", 0)?,
            width: raw.get_count("cmd_width", (cycles / 10).max(1))?,
        }),
        Some(_) => unreachable!("choices are pre-validated"),
    }
}

/// Render the resolved configuration as canonical `key = value` text.
///
/// The output contains every effective value, including applied defaults,
/// in a fixed order, and parses back to an identical configuration.
pub fn render_config(cfg: &ResolvedConfig) -> String {
    let mut out = String::new();
    let mut kv = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    let num = |v: f64| format!("{v:e}");

    kv("topology", cfg.params.topology.to_string());
    kv("Vin", num(cfg.params.v_in));
    kv("Vout", num(cfg.params.v_out));
    kv("L", num(cfg.params.inductance));
    kv("C", num(cfg.params.capacitance));
    kv("R", num(cfg.params.load));
    if let Some(rs) = cfg.rs_sense {
        kv("Rs", num(rs));
    }
    match cfg.params.topology {
        Topology::BuckConstOn => {
            kv("Ton", num(cfg.params.t_fixed));
            kv("Toff_min", num(cfg.params.t_var_min));
            kv("Toff_max", num(cfg.params.t_var_max));
        }
        Topology::BoostConstOff => {
            kv("Toff", num(cfg.params.t_fixed));
            kv("Ton_min", num(cfg.params.t_var_min));
            kv("Ton_max", num(cfg.params.t_var_max));
        }
    }
    kv("lambda", num(cfg.params.lambda));
    kv("sector_alpha", num(cfg.sector.alpha));
    kv("sector_beta", num(cfg.sector.beta));
    kv(
        "case_ii_rule",
        match cfg.case_ii_rule {
            CaseIiRule::Printed => "printed".to_string(),
            CaseIiRule::Normalized => "normalized".to_string(),
        },
    );
    kv("solver_rel_tol", num(cfg.solver.rel_tol));
    kv("solver_lambda_grid", cfg.solver.lambda_grid.to_string());
    kv("sector_tol", num(cfg.sector_tol));
    kv("cycles", cfg.cycles.to_string());
    kv("settle_window", cfg.settle_window.to_string());
    kv("settle_tol", num(cfg.settle_tol));
    kv("seed", cfg.seed.to_string());
    kv("trials", cfg.trials.to_string());
    kv("trial_length", cfg.trial_length.to_string());
    kv("amplitude", num(cfg.amplitude));
    match &cfg.interference {
        InterferenceModel::None => kv("interference", "none".to_string()),
        InterferenceModel::SectorGainSchedule {
            schedule,
            normalization,
            ..
        } => {
            kv("interference", "schedule".to_string());
            match schedule {
                Schedule::Alternating => kv("schedule", "alternating".to_string()),
                Schedule::Constant { slope } => {
                    kv("schedule", "constant".to_string());
                    kv("schedule_slope", num(*slope));
                }
                Schedule::Random { .. } => kv("schedule", "random".to_string()),
            }
            kv(
                "normalization",
                match normalization {
                    SectorNormalization::Equilibrium => "equilibrium".to_string(),
                    SectorNormalization::Instantaneous => "instantaneous".to_string(),
                },
            );
        }
        InterferenceModel::Sinusoid {
            amplitude,
            period,
            phase,
        } => {
            kv("interference", "sinusoid".to_string());
            kv("sin_amplitude", num(*amplitude));
            kv("sin_period", num(*period));
            kv("sin_phase", num(*phase));
        }
    }
    match &cfg.command {
        CommandProfile::Constant { level } => {
            kv("command", "constant".to_string());
            kv("cmd_level", num(*level));
        }
        CommandProfile::Step { before, after } => {
            kv("command", "step".to_string());
            kv("cmd_before", num(*before));
            kv("cmd_after", num(*after));
        }
        CommandProfile::Pulse {
            base,
            amplitude,
            start,
            width,
        } => {
            kv("command", "pulse".to_string());
            kv("cmd_base", num(*base));
            kv("cmd_amplitude", num(*amplitude));
            kv("cmd_start", start.to_string());
            kv("cmd_width", width.to_string());
        }
    }
    kv("grid_alpha_min", num(cfg.grid_alpha_min));
    kv("grid_alpha_max", num(cfg.grid_alpha_max));
    kv("grid_beta_min", num(cfg.grid_beta_min));
    kv("grid_beta_max", num(cfg.grid_beta_max));
    kv("grid_points", cfg.grid_points.to_string());
    if let Some(dir) = &cfg.out_dir {
        kv("out", dir.clone());
    }
    out
}
