//! `gridrisk` command-line front end.
//!
//! Exit codes: 0 success, 2 bad input, 3 solver failure, 4 identification
//! did not converge (artifacts are still written).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cascade_sim::{simulate, CascadeReport, ControlSchedule, Epsilon, ScheduleFile, TripConfig, TripMode};
use crate::dc_powerflow::{find_islands, solve_flow, DEFAULT_LIVE_THRESHOLD};
use crate::error::SolveError;
use crate::grid_model::{parse_case, selection, Network};
use crate::worst_case_id::{identify, IdentificationConfig, IdentifiedSolution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "gridrisk", version, about = "Cascading outage simulation and worst-case fluctuation identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print bus/branch counts, base flows and threshold margins.
    Inspect { case: PathBuf },
    /// Run the cascade under a fluctuation schedule and write its report.
    Simulate(SimulateArgs),
    /// Identify the worst-case schedule, then replay it with hard tripping.
    Identify(IdentifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Smooth,
    Hard,
}

impl From<ModeArg> for TripMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Smooth => TripMode::Smooth,
            ModeArg::Hard => TripMode::Hard,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub case: PathBuf,
    /// JSON schedule: {"select_bus": [ids], "controls": [[per-step values]]}.
    #[arg(long, conflicts_with = "zero", required_unless_present = "zero")]
    pub schedule: Option<PathBuf>,
    /// Run without fluctuations.
    #[arg(long)]
    pub zero: bool,
    #[arg(long, default_value_t = 4)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = DEFAULT_LIVE_THRESHOLD)]
    pub live_threshold: f64,
    /// Penalty weight, one value or a comma-separated value per step.
    #[arg(long, default_value = "10")]
    pub epsilon: String,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    pub case: PathBuf,
    /// Buses admitting fluctuations, comma separated.
    #[arg(long, required = true, num_args = 0.., value_delimiter = ',')]
    pub select_bus: Vec<usize>,
    #[arg(long, default_value = "10")]
    pub epsilon: String,
    #[arg(long, default_value_t = 4)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub newton_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_LIVE_THRESHOLD)]
    pub live_threshold: f64,
    /// Worker threads for the Newton Jacobian.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Solution file (JSON). The hard-mode replay goes next to it as
    /// `<stem>.replay.<json|csv>`. Without it both are printed as one JSON
    /// document.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Format of the replay report.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
}

/// Everything a run depends on, resolved and validated before any work.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub case: PathBuf,
    pub subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trip: Option<TripConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identification: Option<IdentificationConfig>,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl RunManifest {
    fn validate(&self) -> anyhow::Result<()> {
        if !self.case.is_file() {
            bail!("case file {} does not exist", self.case.display());
        }
        if let Some(trip) = &self.trip {
            trip.validate()?;
        }
        if let Some(cfg) = &self.identification {
            cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Solver(anyhow::Error),
    NotConverged,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn solver(e: SolveError) -> Failure {
    Failure::Solver(e.into())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Inspect { case } => cmd_inspect(&case),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Identify(args) => cmd_identify(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver error: {e:#}");
            EXIT_SOLVER
        }
        Err(Failure::NotConverged) => {
            eprintln!("identification did not converge; best iterate written");
            EXIT_NOT_CONVERGED
        }
    }
}

fn load_case(path: &Path) -> anyhow::Result<Network> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read case file {}", path.display()))?;
    parse_case(&text).with_context(|| format!("in {}", path.display()))
}

fn parse_epsilon(text: &str) -> anyhow::Result<Epsilon> {
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad epsilon value '{v}': {e}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(match values.as_slice() {
        [single] => Epsilon::Scalar(*single),
        _ => Epsilon::PerStep(values),
    })
}

fn emit(text: &str, output: Option<&Path>) -> anyhow::Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render(report: &CascadeReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => report.to_json() + "\n",
        OutputFormat::Csv => report.to_csv(),
    }
}

/// Text summary of a case: sizes, base flows and margins to the thresholds.
pub fn inspect_summary(net: &Network) -> Result<String, SolveError> {
    let y = net.base_admittances();
    let partition = find_islands(net, &y, DEFAULT_LIVE_THRESHOLD);
    let flows = solve_flow(net, &y, &net.injections(), &partition)?.flows;
    let c = net.thresholds();
    let max = flows.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let mut out = format!("{} buses, {} branches, base flow max |P| = {:.4}\n", net.n_buses(), net.n_branches(), max);
    let _ =
        writeln!(out, "{:>6} {:>5} {:>5} {:>10} {:>10} {:>10}", "branch", "from", "to", "flow", "threshold", "margin");
    for (r, b) in net.branches().iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>6} {:>5} {:>5} {:>10.4} {:>10.4} {:>10.4}",
            r + 1,
            b.from,
            b.to,
            flows[r],
            c[r],
            c[r] - flows[r].abs()
        );
    }
    Ok(out)
}

fn cmd_inspect(case: &Path) -> Result<(), Failure> {
    let net = load_case(case)?;
    print!("{}", inspect_summary(&net).map_err(solver)?);
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let trip = TripConfig { sigma: args.sigma, mode: args.mode.into(), live_threshold: args.live_threshold };
    let manifest = RunManifest {
        case: args.case.clone(),
        subcommand: "simulate",
        trip: Some(trip),
        identification: None,
        output: args.out.output.clone(),
        format: args.out.format,
    };
    manifest.validate()?;
    let epsilon = parse_epsilon(&args.epsilon)?;
    let net = load_case(&manifest.case)?;
    let schedule = match &args.schedule {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("cannot read schedule {}", path.display()))?;
            let file: ScheduleFile =
                serde_json::from_str(&text).with_context(|| format!("malformed schedule {}", path.display()))?;
            file.into_schedule(&net)?
        }
        None => ControlSchedule::zeros(crate::grid_model::SelectionMatrix::empty(net.n_buses()), args.steps),
    };
    if schedule.len() < args.steps {
        return Err(Failure::Input(anyhow!("schedule has {} steps but {} were requested", schedule.len(), args.steps)));
    }
    if args.steps > 0 {
        epsilon.validate(args.steps).map_err(anyhow::Error::from)?;
    }
    let report = simulate(&net, &schedule, args.steps, &trip, &epsilon).map_err(solver)?;
    emit(&render(&report, manifest.format), manifest.output.as_deref())?;
    Ok(())
}

/// Path of the replay report written next to the solution file.
pub fn replay_path(output: &Path, format: OutputFormat) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = match format {
        OutputFormat::Json => "json",
        OutputFormat::Csv => "csv",
    };
    output.with_file_name(format!("{stem}.replay.{ext}"))
}

#[derive(Serialize)]
struct Combined<'a> {
    solution: &'a IdentifiedSolution,
    replay: &'a CascadeReport,
}

fn cmd_identify(args: &IdentifyArgs) -> Result<(), Failure> {
    let cfg = IdentificationConfig {
        epsilon: parse_epsilon(&args.epsilon)?,
        steps: args.steps,
        sigma: args.sigma,
        delta: args.delta,
        newton_tol: args.newton_tol,
        newton_max_iter: args.max_iter,
        live_threshold: args.live_threshold,
        threads: args.threads,
        ..Default::default()
    };
    let manifest = RunManifest {
        case: args.case.clone(),
        subcommand: "identify",
        trip: None,
        identification: Some(cfg.clone()),
        output: args.output.clone(),
        format: args.format,
    };
    manifest.validate()?;
    if args.select_bus.is_empty() {
        return Err(Failure::Input(anyhow!("--select-bus needs at least one bus id")));
    }
    let net = load_case(&manifest.case)?;
    let sel = selection(&net, &args.select_bus).map_err(anyhow::Error::from)?;
    let solution = identify(&net, &sel, &cfg).map_err(solver)?;
    let replay_cfg = TripConfig { live_threshold: cfg.live_threshold, ..TripConfig::hard() };
    let replay = simulate(&net, &solution.schedule(&sel), cfg.steps, &replay_cfg, &cfg.epsilon).map_err(solver)?;
    match &manifest.output {
        Some(path) => {
            emit(&(solution.to_json() + "\n"), Some(path))?;
            emit(&render(&replay, manifest.format), Some(&replay_path(path, manifest.format)))?;
        }
        None => {
            let text = serde_json::to_string_pretty(&Combined { solution: &solution, replay: &replay })
                .expect("output serializes");
            emit(&(text + "\n"), None)?;
        }
    }
    if solution.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}
