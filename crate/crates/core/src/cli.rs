//! Batch command line: validate, build, verify, degree, sample, trace.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::assembly::{build_assembly, AssemblyError, AssemblyParams, FieldAssembly};
use crate::contact_verify::{verify, Tolerances};
use crate::corpus::{random_corpus, SpecInput};
use crate::foliation_trace::{integrate, trajectories_csv, Direction, TraceError};
use crate::gauss_degree::{degree_report, DegreeError};
use crate::local_models::ModelError;
use crate::morse_spec::{validate_spec, DividingSetSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "convexform",
    version,
    about = "Contact-form vector fields on convex surfaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a Morse or dividing-set spec and print its genus.
    Validate { spec: PathBuf },
    /// Assemble the atlas for a spec.
    Build {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sample every check on an atlas.
    Verify {
        atlas: PathBuf,
        #[arg(long, default_value_t = 128, value_parser = parse_grid)]
        grid: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Gauss-map degree of a dividing set.
    Degree {
        spec: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Field values on one chart as CSV.
    Sample {
        atlas: PathBuf,
        #[arg(long)]
        chart: String,
        #[arg(long, default_value_t = 128, value_parser = parse_grid)]
        grid: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Integrate one trajectory of X and write it as CSV.
    Trace {
        atlas: PathBuf,
        #[arg(long)]
        chart: String,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        at: [f64; 2],
        #[arg(long)]
        backward: bool,
        #[arg(long, default_value_t = 1e-3, value_parser = parse_step)]
        step: f64,
        #[arg(long, default_value_t = 100_000)]
        max_steps: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write seeded random dividing sets, one JSON file each.
    Random {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        max_genus: u32,
        #[arg(short, long)]
        output_dir: PathBuf,
    },
}

/// Chart-default overrides for `build`.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON file with any subset of the assembly parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub safety_factor: Option<f64>,
    #[arg(long, value_parser = parse_grid)]
    pub slope_grid: Option<usize>,
    #[arg(long)]
    pub elliptic_radius: Option<f64>,
    /// Use this collar slope everywhere and skip the surgery check.
    #[arg(long)]
    pub force_slope: Option<f64>,
}

fn parse_grid(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n < 8 {
        return Err(format!("grid must be at least 8, got {n}"));
    }
    Ok(n)
}

fn parse_step(s: &str) -> Result<f64, String> {
    let h: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(format!("step must be positive, got {s}"));
    }
    Ok(h)
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    let u = u.trim().parse().map_err(|e| format!("{e}"))?;
    let v = v.trim().parse().map_err(|e| format!("{e}"))?;
    Ok([u, v])
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<AssemblyError> for CliError {
    fn from(e: AssemblyError) -> Self {
        match e {
            AssemblyError::Invariant(_) => CliError::Internal(e.to_string()),
            AssemblyError::Model(ModelError::SlopeTooSmall { .. }) => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<DegreeError> for CliError {
    fn from(e: DegreeError) -> Self {
        match e {
            DegreeError::Invariant(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load_spec(path: &Path) -> Result<SpecInput, CliError> {
    SpecInput::from_json(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_atlas(path: &Path) -> Result<FieldAssembly, CliError> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn params_from(o: &Overrides) -> Result<AssemblyParams, CliError> {
    let mut p = match &o.params {
        Some(path) => serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        None => AssemblyParams::default(),
    };
    if let Some(v) = o.safety_factor {
        p.safety_factor = v;
    }
    if let Some(v) = o.slope_grid {
        p.slope_grid = v;
    }
    if let Some(v) = o.elliptic_radius {
        p.elliptic_radius = v;
    }
    if o.force_slope.is_some() {
        p.force_slope = o.force_slope;
    }
    Ok(p)
}

fn sample_csv(assembly: &FieldAssembly, chart: &str, grid: usize) -> Result<String, CliError> {
    let c = assembly
        .chart(chart)
        .ok_or_else(|| CliError::Input(format!("unknown chart {chart}")))?;
    let mut out = String::from("chart_id,u,v,f,Xu,Xv,density,div,contact\n");
    for p in c.model.sample_points(grid) {
        let s = c.model.sample(p);
        let _ = writeln!(
            out,
            "{chart},{},{},{},{},{},{},{},{}",
            p[0],
            p[1],
            s.f,
            s.x[0],
            s.x[1],
            s.rho,
            s.div,
            s.contact_density()
        );
    }
    Ok(out)
}

/// Executes one parsed command. Messages go to `out`; the return value is
/// the process exit code.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let say = |out: &mut dyn Write, line: String| {
        let _ = writeln!(out, "{line}");
    };
    match cli.command {
        Command::Validate { spec } => {
            let morse = load_spec(&spec)?
                .to_morse()
                .map_err(|e| CliError::Input(e.to_string()))?;
            match validate_spec(&morse) {
                Ok(summary) => {
                    say(out, format!("genus {}", summary.genus));
                    say(
                        out,
                        format!("minima {} maxima {}", summary.minima, summary.maxima),
                    );
                    Ok(EXIT_OK)
                }
                Err(v) => Err(CliError::Input(v.to_string())),
            }
        }
        Command::Build {
            spec,
            output,
            overrides,
        } => {
            let morse = load_spec(&spec)?
                .to_morse()
                .map_err(|e| CliError::Input(e.to_string()))?;
            let params = params_from(&overrides)?;
            let assembly = build_assembly(&morse, &params)?;
            write(&output, &to_json(&assembly)?)?;
            say(
                out,
                format!(
                    "{} charts, {} seams",
                    assembly.charts.len(),
                    assembly.seams.len()
                ),
            );
            Ok(EXIT_OK)
        }
        Command::Verify {
            atlas,
            grid,
            output,
        } => {
            let assembly = load_atlas(&atlas)?;
            let report = verify(&assembly, grid, &Tolerances::default());
            if let Some(path) = output {
                write(&path, &to_json(&report)?)?;
            }
            say(out, format!("contact margin {}", report.contact_margin()));
            for f in report.failures() {
                say(
                    out,
                    format!(
                        "FAIL {} on {} (margin {}, at {:?})",
                        f.check, f.chart, f.min_margin, f.worst_point
                    ),
                );
            }
            say(
                out,
                if report.pass {
                    "pass".into()
                } else {
                    "fail".into()
                },
            );
            Ok(if report.pass { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Degree { spec, output } => {
            let text = read(&spec)?;
            let dspec: DividingSetSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", spec.display())))?;
            let report = degree_report(&dspec)?;
            let json = to_json(&report)?;
            match output {
                Some(path) => {
                    write(&path, &json)?;
                    say(out, format!("degree {}", report.degree_formula));
                }
                None => {
                    let _ = out.write_all(json.as_bytes());
                }
            }
            Ok(EXIT_OK)
        }
        Command::Sample {
            atlas,
            chart,
            grid,
            output,
        } => {
            let assembly = load_atlas(&atlas)?;
            write(&output, &sample_csv(&assembly, &chart, grid)?)?;
            Ok(EXIT_OK)
        }
        Command::Trace {
            atlas,
            chart,
            at,
            backward,
            step,
            max_steps,
            output,
        } => {
            let assembly = load_atlas(&atlas)?;
            let direction = if backward {
                Direction::Backward
            } else {
                Direction::Forward
            };
            let t = integrate(&assembly, &chart, at, direction, step, max_steps)?;
            write(
                &output,
                &trajectories_csv(&assembly, std::slice::from_ref(&t)),
            )?;
            say(
                out,
                format!("{} points, {:?}", t.points.len(), t.termination),
            );
            Ok(EXIT_OK)
        }
        Command::Random {
            seed,
            count,
            max_genus,
            output_dir,
        } => {
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| CliError::Internal(format!("{}: {e}", output_dir.display())))?;
            for (i, d) in random_corpus(seed, count, max_genus).iter().enumerate() {
                write(
                    &output_dir.join(format!("random_{seed}_{i:04}.json")),
                    &to_json(d)?,
                )?;
            }
            Ok(EXIT_OK)
        }
    }
}

/// Parses `argv` (including the program name) and runs it.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
