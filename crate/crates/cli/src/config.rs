//! Experiment settings: command-line flags, the key=value config file, and
//! validation into an [`ExperimentConfig`].

use std::path::{Path, PathBuf};

use bdf_weak_adjoint::bdf::MAX_ORDER;
use bdf_weak_adjoint::model::ProblemSpec;
use clap::{Args, Parser, ValueEnum};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemName {
    Catenary,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Nonadaptive,
    Adaptive,
}

/// Settings shared by every command. All fields are optional here; each
/// command checks for the ones it needs.
///
/// Numbers accept powers written as `2^-6`; list-valued flags take
/// comma-separated values or may be repeated.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Problem to solve.
    #[arg(long, value_enum)]
    pub problem: Option<ProblemName>,
    /// Catenary: horizontal tension parameter (> 0).
    #[arg(long, value_parser = parse_number, allow_hyphen_values = true)]
    pub p: Option<f64>,
    /// Catenary: initial slope.
    #[arg(long = "A", value_parser = parse_number, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// Start of the interval (linear problem only, default 0).
    #[arg(long, value_parser = parse_number, allow_hyphen_values = true)]
    pub ts: Option<f64>,
    /// End of the interval.
    #[arg(long, value_parser = parse_number, allow_hyphen_values = true)]
    pub tf: Option<f64>,
    /// Linear problem: system matrix, rows separated by ';', entries by ','.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: Option<String>,
    /// Linear problem: initial state.
    #[arg(long, value_parser = parse_number, value_delimiter = ',', allow_hyphen_values = true)]
    pub y0: Vec<f64>,
    /// Linear problem: criterion weights `c` in `J(y) = cᵀy`.
    #[arg(long, value_parser = parse_number, value_delimiter = ',', allow_hyphen_values = true)]
    pub c: Vec<f64>,

    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// BDF order of the non-adaptive driver.
    #[arg(long)]
    pub order: Option<usize>,
    /// Stepsize; a list for `converge`.
    #[arg(long, value_parser = parse_number, value_delimiter = ',', allow_hyphen_values = true)]
    pub h: Vec<f64>,
    /// Relative tolerance; a list for `converge`.
    #[arg(long, value_parser = parse_number, value_delimiter = ',', allow_hyphen_values = true)]
    pub rtol: Vec<f64>,
    #[arg(long, value_parser = parse_number, allow_hyphen_values = true)]
    pub atol: Option<f64>,
    /// Time at which `converge` evaluates the weak-adjoint error.
    #[arg(long, value_parser = parse_number, value_delimiter = ',', allow_hyphen_values = true)]
    pub probe: Vec<f64>,

    #[arg(long)]
    pub tape: Option<PathBuf>,
    #[arg(long = "adjoint-file")]
    pub adjoint_file: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config file of `key = value` lines under `[section]` headers; keys are
    /// the flag names. Flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Parser)]
#[command(no_binary_name = true, disable_help_flag = true)]
struct FileFlags {
    #[command(flatten)]
    flags: Flags,
}

fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('^') {
        Some((base, exp)) => {
            let base: f64 = base.trim().parse().map_err(|e| format!("'{s}': {e}"))?;
            let exp: f64 = exp.trim().parse().map_err(|e| format!("'{s}': {e}"))?;
            base.powf(exp)
        }
        None => s.parse().map_err(|e| format!("'{s}': {e}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("'{s}' is not a finite number"))
    }
}

impl Flags {
    /// Fills every setting missing here from `fallback`.
    pub fn or(self, fallback: Flags) -> Flags {
        fn list(a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
            if a.is_empty() {
                b
            } else {
                a
            }
        }
        Flags {
            problem: self.problem.or(fallback.problem),
            p: self.p.or(fallback.p),
            a: self.a.or(fallback.a),
            ts: self.ts.or(fallback.ts),
            tf: self.tf.or(fallback.tf),
            matrix: self.matrix.or(fallback.matrix),
            y0: list(self.y0, fallback.y0),
            c: list(self.c, fallback.c),
            mode: self.mode.or(fallback.mode),
            order: self.order.or(fallback.order),
            h: list(self.h, fallback.h),
            rtol: list(self.rtol, fallback.rtol),
            atol: self.atol.or(fallback.atol),
            probe: list(self.probe, fallback.probe),
            tape: self.tape.or(fallback.tape),
            adjoint_file: self.adjoint_file.or(fallback.adjoint_file),
            out: self.out.or(fallback.out),
            config: self.config.or(fallback.config),
        }
    }

    /// Command-line flags layered over the config file they name, if any.
    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let merged = match &self.config {
            Some(path) => {
                let mut file = read_config_file(path)?;
                // switching problem or mode on the command line drops the
                // file's settings that belong to the other choice
                if self.problem.is_some() && self.problem != file.problem {
                    file = Flags {
                        problem: None,
                        p: None,
                        a: None,
                        ts: None,
                        tf: None,
                        matrix: None,
                        y0: Vec::new(),
                        c: Vec::new(),
                        probe: Vec::new(),
                        ..file
                    };
                }
                if self.mode.is_some() && self.mode != file.mode {
                    file = Flags {
                        mode: None,
                        order: None,
                        h: Vec::new(),
                        rtol: Vec::new(),
                        atol: None,
                        ..file
                    };
                }
                self.or(file)
            }
            None => self,
        };
        ExperimentConfig::from_flags(merged)
    }
}

/// Reads a config file. Section headers only group keys; every key must be a
/// flag name, and repeated keys behave like repeated flags.
pub fn read_config_file(path: &Path) -> Result<Flags, CliError> {
    let ini = ini::Ini::load_from_file(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut argv = Vec::new();
    for (_, props) in ini.iter() {
        for (key, value) in props.iter() {
            if key == "config" {
                return Err(CliError::Usage(format!(
                    "{}: config files cannot include other config files",
                    path.display()
                )));
            }
            argv.push(format!("--{key}"));
            argv.push(value.to_string());
        }
    }
    FileFlags::try_parse_from(argv)
        .map(|f| f.flags)
        .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), first_line(&e))))
}

fn first_line(e: &clap::Error) -> String {
    let text = e.to_string();
    text.lines()
        .next()
        .unwrap_or_default()
        .trim_start_matches("error: ")
        .to_string()
}

/// The integration settings of one run or sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum RunSettings {
    Nonadaptive { order: usize, h: Vec<f64> },
    Adaptive { rtol: Vec<f64>, atol: f64 },
}

impl RunSettings {
    pub fn points(&self) -> usize {
        match self {
            RunSettings::Nonadaptive { h, .. } => h.len(),
            RunSettings::Adaptive { rtol, .. } => rtol.len(),
        }
    }
}

/// Validated settings. Integration settings and the problem stay optional
/// until a command asks for them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Option<ProblemSpec>,
    pub run: Option<RunSettings>,
    pub probes: Vec<f64>,
    pub tape: Option<PathBuf>,
    pub adjoint_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|x| parse_number(x).map_err(|e| usage(format!("--matrix: {e}"))))
                .collect()
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_flags(f: Flags) -> Result<Self, CliError> {
        let problem = match f.problem {
            None => {
                if f.p.is_some() || f.a.is_some() || f.matrix.is_some() {
                    return Err(usage("problem parameters given without --problem"));
                }
                None
            }
            Some(ProblemName::Catenary) => {
                if f.matrix.is_some() || !f.y0.is_empty() || !f.c.is_empty() || f.ts.is_some() {
                    return Err(usage("the catenary problem takes only --p, --A and --tf"));
                }
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| usage(format!("the catenary problem needs --{name}")))
                };
                Some(ProblemSpec::Catenary {
                    p: positive("p", need(f.p, "p")?)?,
                    a: need(f.a, "A")?,
                    tf: need(f.tf, "tf")?,
                })
            }
            Some(ProblemName::Linear) => {
                if f.p.is_some() || f.a.is_some() {
                    return Err(usage("the linear problem does not take --p or --A"));
                }
                let matrix = parse_matrix(
                    f.matrix
                        .as_deref()
                        .ok_or_else(|| usage("the linear problem needs --matrix"))?,
                )?;
                if f.y0.is_empty() {
                    return Err(usage("the linear problem needs --y0"));
                }
                let c = if f.c.is_empty() {
                    vec![1.0; f.y0.len()]
                } else {
                    f.c
                };
                Some(ProblemSpec::Linear {
                    matrix,
                    y0: f.y0,
                    c,
                    ts: f.ts.unwrap_or(0.0),
                    tf: f.tf.ok_or_else(|| usage("the linear problem needs --tf"))?,
                })
            }
        };
        // building the problem checks the interval and dimensions up front
        let interval = match &problem {
            Some(spec) => {
                let (p, _) = spec
                    .build()
                    .map_err(|e| usage(format!("invalid problem: {e}")))?;
                Some((p.t_start(), p.t_final()))
            }
            None => None,
        };

        let run = match f.mode {
            None => {
                if f.order.is_some() || !f.h.is_empty() || !f.rtol.is_empty() || f.atol.is_some() {
                    return Err(usage("integration settings given without --mode"));
                }
                None
            }
            Some(Mode::Nonadaptive) => {
                if !f.rtol.is_empty() || f.atol.is_some() {
                    return Err(usage("--rtol/--atol apply to the adaptive mode only"));
                }
                let order = f
                    .order
                    .ok_or_else(|| usage("the nonadaptive mode needs --order"))?;
                if !(1..=MAX_ORDER).contains(&order) {
                    return Err(usage(format!(
                        "--order must lie in 1..={MAX_ORDER}, got {order}"
                    )));
                }
                if f.h.is_empty() {
                    return Err(usage("the nonadaptive mode needs --h"));
                }
                for &h in &f.h {
                    positive("h", h)?;
                }
                Some(RunSettings::Nonadaptive { order, h: f.h })
            }
            Some(Mode::Adaptive) => {
                if f.order.is_some() || !f.h.is_empty() {
                    return Err(usage("--order/--h apply to the nonadaptive mode only"));
                }
                if f.rtol.is_empty() {
                    return Err(usage("the adaptive mode needs --rtol"));
                }
                for &r in &f.rtol {
                    positive("rtol", r)?;
                }
                let atol = f
                    .atol
                    .ok_or_else(|| usage("the adaptive mode needs --atol"))?;
                Some(RunSettings::Adaptive {
                    rtol: f.rtol,
                    atol: positive("atol", atol)?,
                })
            }
        };

        if let Some((ts, tf)) = interval {
            if let Some(&t) = f.probe.iter().find(|&&t| !(ts..=tf).contains(&t)) {
                return Err(usage(format!("probe time {t} lies outside [{ts}, {tf}]")));
            }
        } else if !f.probe.is_empty() {
            return Err(usage("probe times need a problem"));
        }

        Ok(Self {
            problem,
            run,
            probes: f.probe,
            tape: f.tape,
            adjoint_file: f.adjoint_file,
            out: f.out,
        })
    }

    pub fn require_problem(&self) -> Result<&ProblemSpec, CliError> {
        self.problem
            .as_ref()
            .ok_or_else(|| usage("no problem given (use --problem or a config file)"))
    }

    pub fn require_run(&self) -> Result<&RunSettings, CliError> {
        self.run
            .as_ref()
            .ok_or_else(|| usage("no integration mode given (use --mode)"))
    }

    pub fn require_path<'a>(
        &self,
        path: &'a Option<PathBuf>,
        flag: &str,
    ) -> Result<&'a Path, CliError> {
        path.as_deref()
            .ok_or_else(|| usage(format!("--{flag} is required")))
    }
}
