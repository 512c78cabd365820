//! `sidyn`: run experiments, verify the theory, plot traces and inspect
//! artifact directories.
//!
//! Exit codes: 0 success, 1 runtime or IO failure (including a failed
//! verification or hash check), 2 bad input (config, objective id, plot
//! kind, command line).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use sidyn::experiment::{self, ExperimentConfig, PointManifest, SweepSummary, MANIFEST, OUTPUT_ROOT_ENV};
use sidyn::jumps::LARGE_DELTA;
use sidyn::plot::{self, PlotKind, PlotOptions};
use sidyn::{io, verify, Error};

#[derive(Parser)]
#[command(name = "sidyn", version, about = "Training dynamics of scale-invariant objectives under weight decay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Directory the config's `output` is resolved against
        /// (default: $SIDYN_OUTPUT_ROOT, else the current directory).
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Run verification suites (`all` or one name).
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        /// Where to write verification.json/.txt (default: <output root>/verification).
        #[arg(long)]
        out: Option<PathBuf>,
        /// List the suites and exit.
        #[arg(long)]
        list: bool,
    },
    /// Draw an SVG from a trace CSV, overlay CSV or point directory.
    Plot {
        input: PathBuf,
        /// series, period, phase or bounds.
        #[arg(long)]
        kind: String,
        /// Output file (default: next to the input, `<stem>-<kind>.svg`).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Jump threshold; overrides the one in an adjacent manifest.
        #[arg(long)]
        delta: Option<f64>,
        /// Index among classified periods (default: the middle one).
        #[arg(long)]
        period: Option<usize>,
        /// Learning rate and weight decay for `bounds` when no manifest is adjacent.
        #[arg(long, num_args = 2, value_names = ["ETA", "LAMBDA"])]
        eta_lambda: Option<Vec<f64>>,
    },
    /// Check artifact hashes and print the summary of a run directory.
    Report {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        // Error already renders its source inline.
        let msg = anyhow!(e.to_string());
        match e {
            Error::Config(_)
            | Error::UnknownObjective(_)
            | Error::Domain(_)
            | Error::Certification { .. }
            | Error::Dimension { .. } => Failure::Input(msg),
            _ => Failure::Runtime(msg),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<ExitCode, Failure>;

fn output_root(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn cmd_run(config: &Path, root: Option<PathBuf>) -> Outcome {
    let text = io::read_string(config)?;
    let cfg = ExperimentConfig::parse(&text, &config.display().to_string())?;
    let outcome = experiment::run_experiment(&cfg, &text, output_root(root).as_deref())?;
    print!("{}", outcome.summary.to_text());
    println!("\nwrote {} point(s) to {}", outcome.points.len(), outcome.dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(suite: &str, out: Option<PathBuf>, list: bool) -> Outcome {
    if list {
        for s in verify::SUITES {
            println!("{s}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let report = verify::verify(suite)?;
    print!("{}", report.to_text());
    let dir = out.unwrap_or_else(|| output_root(None).unwrap_or_default().join("verification"));
    report.write(&dir)?;
    println!("report written to {}", dir.display());
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_plot(
    input: &Path,
    kind: &str,
    output: Option<PathBuf>,
    delta: Option<f64>,
    period: Option<usize>,
    eta_lambda: Option<Vec<f64>>,
) -> Outcome {
    let kind: PlotKind = kind.parse()?;
    let (trace_path, dir) = if input.is_dir() {
        (input.join("trace.csv"), input.to_path_buf())
    } else {
        (input.to_path_buf(), input.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    let text = io::read_string(&trace_path)?;
    let manifest_path = dir.join(MANIFEST);
    let manifest: Option<PointManifest> =
        if manifest_path.exists() { Some(io::read_json(&manifest_path)?) } else { None };

    let mut opts = PlotOptions {
        delta: delta
            .or_else(|| manifest.as_ref().and_then(|m| m.deltas.first().copied()))
            .unwrap_or(LARGE_DELTA),
        period,
        eta_lambda: eta_lambda
            .map(|v| (v[0], v[1]))
            .or_else(|| manifest.as_ref().map(|m| (m.config.eta, m.config.lambda))),
        title: trace_path.display().to_string(),
    };
    if let Some(m) = &manifest {
        opts.title = format!("{} point {}", m.experiment, m.point.index);
    }

    let svg = if text.starts_with(io::OVERLAY_HEADER) {
        if kind != PlotKind::Bounds {
            return Err(Error::Config(format!("an overlay CSV can only be drawn as `bounds`, not {kind:?}")).into());
        }
        plot::plot_overlay(&plot::parse_overlay_csv(&text)?, &opts.title)?
    } else {
        plot::plot_trace(&io::parse_trace_csv(&text)?, kind, &opts)?
    };

    let out = output.unwrap_or_else(|| {
        let stem = trace_path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
        let kind_name = plot::PlotKind::ALL[kind as usize];
        dir.join(format!("{stem}-{kind_name}.svg"))
    });
    fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(dir: &Path, json: bool) -> Outcome {
    let integrity = experiment::check_integrity(dir)?;
    let summary_path = dir.join("summary.json");
    let summary: Option<SweepSummary> =
        if summary_path.exists() { Some(io::read_json(&summary_path)?) } else { None };
    if json {
        let doc = serde_json::json!({ "integrity": integrity, "summary": summary });
        println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| anyhow!(e))?);
    } else {
        if let Some(s) = &summary {
            print!("{}", s.to_text());
        }
        println!("\nintegrity: {} file(s) checked, {} mismatch(es)", integrity.checked, integrity.mismatches.len());
        for m in &integrity.mismatches {
            match &m.found {
                Some(h) => println!("  MODIFIED {} (expected {}, found {h})", m.path.display(), m.expected),
                None => println!("  MISSING  {}", m.path.display()),
            }
        }
    }
    Ok(if integrity.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, output_root } => cmd_run(&config, output_root),
        Command::Verify { suite, out, list } => cmd_verify(&suite, out, list),
        Command::Plot { input, kind, output, delta, period, eta_lambda } => {
            cmd_plot(&input, &kind, output, delta, period, eta_lambda)
        }
        Command::Report { dir, json } => cmd_report(&dir, json),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
