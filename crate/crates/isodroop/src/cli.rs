//! Command-line front end.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isodroop_core::smallsignal::{apply_sweep_value, eigen_report, linearize, operating_point};
use isodroop_core::steady_state::droop_equilibrium;
use isodroop_core::timedomain::{measure_metrics, run};
use rayon::prelude::*;

use crate::acceptance::{run_suite, CRITERION_COUNT};
use crate::config::{parse_with_overrides, ConfigError, ScenarioFile};
use crate::output::{
    labeled_spectrum, write_eigen, write_equilibrium, write_metrics, write_sweep, write_sweep_summary, write_trace,
    LabeledEigenvalue, SweepSummaryRow,
};
use crate::scenarios::builtin_text;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ISODROOP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "isodroop", version, about = "Parallel-inverter droop simulation and stability analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the time-domain simulation; writes the trace CSV and a metrics report.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulation time step, seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Simulated time, seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Keep every N-th step in the trace.
        #[arg(long)]
        decimate: Option<usize>,
    },
    /// Solve the droop equilibrium; writes the phasor CSV.
    Equilibrium {
        #[command(flatten)]
        common: Common,
    },
    /// Linearize at the equilibrium; writes the eigenvalue CSV.
    Eigen {
        #[command(flatten)]
        common: Common,
    },
    /// Eigenvalues over the [sweep] grid of the scenario; writes stacked and summary CSVs.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads for the grid points.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Run the built-in acceptance suite on the shipped scenarios.
    Verify {
        /// Criteria to run (1-10); all when omitted.
        #[arg(long = "criterion")]
        criteria: Vec<usize>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file, or the name of a shipped scenario such as `sharing`.
    #[arg(value_name = "CONFIG", required_unless_present = "config")]
    pub config_positional: Option<String>,
    #[arg(long, conflicts_with = "config_positional")]
    pub config: Option<String>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out: PathBuf,
    /// Override a value, as in `--set load.resistance=24`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    Model(#[from] isodroop_core::Error),
    #[error("{message}; partial trace in {}", partial.display())]
    Simulation { message: String, partial: PathBuf },
    #[error("{failed} of {total} acceptance criteria failed")]
    Verify { failed: usize, total: usize },
}

impl CliError {
    /// 1 acceptance failure, 3 configuration, 4 file system, 5 analysis, 6 simulation abort.
    /// Usage errors exit with 2.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify { .. } => 1,
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Model(_) => 5,
            CliError::Simulation { .. } => 6,
        }
    }
}

fn io_context(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Loaded scenario with the stem used to name outputs.
struct Loaded {
    file: ScenarioFile,
    stem: String,
}

fn load(common: &Common, extra: &[String]) -> Result<Loaded, CliError> {
    let name = common.config.as_ref().or(common.config_positional.as_ref()).expect("clap requires a config");
    let path = Path::new(name);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(io_context(format!("reading {name}")))?
    } else if let Some(t) = builtin_text(name) {
        t.to_string()
    } else {
        return Err(CliError::Io {
            context: format!("reading {name}"),
            source: io::Error::new(io::ErrorKind::NotFound, "no such file or shipped scenario"),
        });
    };
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    let file = parse_with_overrides(&text, &overrides)?;
    let stem = path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
    Ok(Loaded { file, stem })
}

/// Writes through `<path>.partial` and renames once `write` succeeds, so an interrupted or
/// failed write never leaves a file that looks complete.
fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<PathBuf, CliError> {
    let partial = partial_path(path);
    let ctx = || format!("writing {}", partial.display());
    let mut w = BufWriter::new(File::create(&partial).map_err(io_context(ctx()))?);
    write(&mut w).and_then(|_| w.flush()).map_err(io_context(ctx()))?;
    drop(w);
    fs::rename(&partial, path).map_err(io_context(format!("renaming {}", partial.display())))?;
    Ok(path.to_path_buf())
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn out_dir(common: &Common) -> Result<&Path, CliError> {
    fs::create_dir_all(&common.out).map_err(io_context(format!("creating {}", common.out.display())))?;
    Ok(&common.out)
}

fn simulate(common: &Common, dt: Option<f64>, duration: Option<f64>, decimate: Option<usize>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(v) = dt {
        extra.push(format!("simulation.time_step={v}"));
    }
    if let Some(v) = duration {
        extra.push(format!("simulation.duration={v}"));
    }
    if let Some(v) = decimate {
        extra.push(format!("simulation.decimation={v}"));
    }
    let l = load(common, &extra)?;
    let dir = out_dir(common)?;
    let trace_path = dir.join(format!("{}_trace.csv", l.stem));
    let trace = match run(&l.file.scenario) {
        Ok(t) => t,
        Err(failure) => {
            let partial = partial_path(&trace_path);
            let f = File::create(&partial).map_err(io_context(format!("writing {}", partial.display())))?;
            write_trace(BufWriter::new(f), &failure.partial).map_err(io_context(format!("writing {}", partial.display())))?;
            return Err(CliError::Simulation { message: failure.to_string(), partial });
        }
    };
    write_file(&trace_path, |w| write_trace(w, &trace))?;
    let metrics = measure_metrics(&trace, l.file.metrics_window())?;
    let metrics_path = write_file(&dir.join(format!("{}_metrics.txt", l.stem)), |w| write_metrics(w, &metrics))?;
    let _ = writeln!(out, "trace: {} ({} samples)", trace_path.display(), trace.len());
    let _ = writeln!(out, "metrics: {}", metrics_path.display());
    for (k, (p, q)) in metrics.active_power.iter().zip(&metrics.reactive_power).enumerate() {
        let _ = writeln!(out, "  inverter {}: P = {p:.2} W, Q = {q:.2} var", k + 1);
    }
    if let (Some(p), Some(q)) = (metrics.p_share.first(), metrics.q_share.first()) {
        let _ = writeln!(out, "  P1/P2 = {p:.4}, Q1/Q2 = {q:.4}");
    }
    for w in trace.warnings.iter().chain(&metrics.warnings) {
        let _ = writeln!(out, "warning: {w}");
    }
    Ok(())
}

fn equilibrium(common: &Common, out: &mut dyn Write) -> Result<(), CliError> {
    let l = load(common, &[])?;
    let eq = droop_equilibrium(l.file.config())?;
    let path = write_file(&out_dir(common)?.join(format!("{}_equilibrium.csv", l.stem)), |w| write_equilibrium(w, &eq))?;
    let _ = writeln!(out, "equilibrium: {} ({} iterations)", path.display(), eq.iterations);
    for k in 0..eq.solution.len() {
        let s = &eq.solution;
        let _ = writeln!(out, "  inverter {}: E = {:.4} V, P = {:.2} W, Q = {:.2} var", k + 1, eq.voltage_magnitudes[k], s.active_power[k], s.reactive_power[k]);
    }
    Ok(())
}

fn spectrum_of(cfg: &isodroop_core::net::MicrogridConfig) -> Result<(isodroop_core::smallsignal::EigenReport, Vec<LabeledEigenvalue>), isodroop_core::Error> {
    let model = linearize(&operating_point(cfg)?, cfg)?;
    let report = eigen_report(&model)?;
    let spectrum = labeled_spectrum(&model, &report);
    Ok((report, spectrum))
}

fn eigen(common: &Common, out: &mut dyn Write) -> Result<(), CliError> {
    let l = load(common, &[])?;
    let (report, spectrum) = spectrum_of(l.file.config())?;
    let path = write_file(&out_dir(common)?.join(format!("{}_eigen.csv", l.stem)), |w| write_eigen(w, &spectrum, None))?;
    let _ = writeln!(out, "eigenvalues: {} ({} modes)", path.display(), spectrum.len());
    let _ = writeln!(
        out,
        "  {}: spectral abscissa {:.4} 1/s, dominant {:.4}{:+.4}j ({})",
        if report.stable { "stable" } else { "unstable" },
        report.spectral_abscissa,
        report.dominant_eigenvalue.re,
        report.dominant_eigenvalue.im,
        report.dominant_mode_label
    );
    Ok(())
}

fn sweep(common: &Common, parallel: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let l = load(common, &[])?;
    let Some(spec) = l.file.sweep.clone() else {
        return Err(ConfigError { line: None, message: "the scenario has no [sweep] section".into() }.into());
    };
    let cfg = l.file.config();
    let point = |v: &f64| -> (f64, Result<(isodroop_core::smallsignal::EigenReport, Vec<LabeledEigenvalue>), String>) {
        let r = apply_sweep_value(cfg, spec.axis, *v).and_then(|c| spectrum_of(&c)).map_err(|e| e.to_string());
        (*v, r)
    };
    let results: Vec<_> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| CliError::Io { context: "starting worker threads".into(), source: io::Error::other(e) })?;
        pool.install(|| spec.values.par_iter().map(point).collect())
    } else {
        spec.values.iter().map(point).collect()
    };
    let stacked: Vec<(f64, Vec<LabeledEigenvalue>)> =
        results.iter().filter_map(|(v, r)| r.as_ref().ok().map(|(_, s)| (*v, s.clone()))).collect();
    let summary: Vec<SweepSummaryRow> = results
        .iter()
        .map(|(v, r)| SweepSummaryRow { parameter: *v, outcome: r.as_ref().map(|(rep, _)| rep.clone()).map_err(Clone::clone) })
        .collect();
    let dir = out_dir(common)?;
    let p1 = write_file(&dir.join(format!("{}_sweep.csv", l.stem)), |w| write_sweep(w, &stacked))?;
    let p2 = write_file(&dir.join(format!("{}_sweep_summary.csv", l.stem)), |w| write_sweep_summary(w, &summary))?;
    let _ = writeln!(out, "sweep over {}: {} and {}", spec.axis.name(), p1.display(), p2.display());
    for row in &summary {
        match &row.outcome {
            Ok(r) => {
                let _ = writeln!(out, "  {:>10.4}: abscissa {:.4} ({})", row.parameter, r.spectral_abscissa, if r.stable { "stable" } else { "unstable" });
            }
            Err(e) => {
                let _ = writeln!(out, "  {:>10.4}: error: {e}", row.parameter);
            }
        }
    }
    Ok(())
}

fn verify(criteria: &[usize], parallel: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let ids: Vec<usize> = if criteria.is_empty() { (1..=CRITERION_COUNT).collect() } else { criteria.to_vec() };
    if let Some(bad) = ids.iter().find(|i| !(1..=CRITERION_COUNT).contains(*i)) {
        return Err(ConfigError { line: None, message: format!("there is no criterion {bad}") }.into());
    }
    let results = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| CliError::Io { context: "starting worker threads".into(), source: io::Error::other(e) })?;
        pool.install(|| run_suite(&ids, true))
    } else {
        run_suite(&ids, false)
    };
    for r in &results {
        let _ = writeln!(out, "{}", r.summary_line());
        for c in &r.checks {
            let _ = writeln!(out, "       {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(out, "{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        return Err(CliError::Verify { failed, total: results.len() });
    }
    Ok(())
}

/// Executes a parsed command, writing progress to `out`.
pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { common, dt, duration, decimate } => simulate(common, *dt, *duration, *decimate, out),
        Command::Equilibrium { common } => equilibrium(common, out),
        Command::Eigen { common } => eigen(common, out),
        Command::Sweep { common, parallel } => sweep(common, *parallel, out),
        Command::Verify { criteria, parallel } => verify(criteria, *parallel, out),
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = io::stdout();
    match dispatch(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["isodroop", "simulate", "sharing", "--dt", "5e-6", "--set", "load.resistance=24", "--set", "inverter.1.virtual_resistance=0.3", "--out", "/tmp/x"]).unwrap();
        let Command::Simulate { common, dt, .. } = cli.command else { panic!() };
        assert_eq!(dt, Some(5e-6));
        assert_eq!(common.overrides.len(), 2);
        assert_eq!(common.out, PathBuf::from("/tmp/x"));
        let cli = Cli::try_parse_from(["isodroop", "sweep", "--config", "a.cfg", "--parallel", "4"]).unwrap();
        assert!(matches!(cli.command, Command::Sweep { parallel: 4, .. }));
        assert!(Cli::try_parse_from(["isodroop", "eigen"]).is_err());
        assert!(Cli::try_parse_from(["isodroop", "eigen", "a.cfg", "--config", "b.cfg"]).is_err());
    }

    #[test]
    fn exit_codes_are_distinct_per_category() {
        let errs = [
            CliError::Verify { failed: 1, total: 10 },
            CliError::Config(ConfigError { line: None, message: String::new() }),
            CliError::Io { context: String::new(), source: io::Error::other("x") },
            CliError::Model(isodroop_core::Error::Domain(String::new())),
            CliError::Simulation { message: String::new(), partial: PathBuf::new() },
        ];
        let mut codes: Vec<u8> = errs.iter().map(CliError::exit_code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
        assert!(!codes.contains(&0) && !codes.contains(&2));
    }

    #[test]
    fn partial_suffix_is_appended() {
        assert_eq!(partial_path(Path::new("out/a_trace.csv")), PathBuf::from("out/a_trace.csv.partial"));
    }
}
