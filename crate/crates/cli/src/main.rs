use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sagin_core::experiments::{
    compare_schemes, reproduce_figure, write_comparison, write_debug_dump, write_run, ExperimentError, FigureTag,
    RunResult, Runner, DEBUG_DIR_ENV,
};
use sagin_core::par::Parallelism;
use sagin_core::scenario::{load_scenario_file, serialize_scenario, validate};
use sagin_core::{default_scenario, OptimizerSettings, ScenarioConfig, Scheme};

/// Energy-efficiency optimizer for a cache-assisted UAV and LEO edge network.
#[derive(Debug, Parser)]
#[command(name = "sagin", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML); the built-in default scenario when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Cache hit indicators, one per device, e.g. `1,1,1,1,1,1,0,0`.
    #[arg(long, global = true, value_name = "BITS", value_parser = parse_pattern)]
    cache_pattern: Option<Pattern>,
    /// Seed for random device placement; the preset layout when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Outer-loop stop threshold on the fractional objective increase.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Maximum number of outer iterations.
    #[arg(long, global = true)]
    max_outer: Option<usize>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize one scheme and write its plan, trajectory and trace.
    Run {
        #[arg(long, value_parser = parse_scheme, default_value = "JO-C")]
        scheme: Scheme,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Run several schemes on the same scenario.
    Compare {
        /// Comma-separated scheme names.
        #[arg(long, value_delimiter = ',', value_parser = parse_scheme,
              default_value = "JO-C,NTO-C,NBO-C,NOO-C,JO-NC")]
        schemes: Vec<Scheme>,
        #[arg(long, default_value = "out/compare")]
        out: PathBuf,
    },
    /// Write the data series of one study figure (fig5 ... fig10).
    Figure {
        #[arg(long, value_parser = parse_tag)]
        tag: FigureTag,
        /// Output directory; `out/<tag>` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the scenario and print findings.
    Validate,
    /// Print the scenario in canonical TOML form.
    Show,
}

#[derive(Debug, Clone)]
struct Pattern(Vec<u8>);

fn parse_pattern(s: &str) -> Result<Pattern, String> {
    let bits: Vec<&str> = if s.contains(',') {
        s.split(',').map(str::trim).collect()
    } else {
        s.split("").filter(|b| !b.is_empty()).collect()
    };
    bits.into_iter()
        .map(|b| match b {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(format!("cache indicator must be 0 or 1, got `{other}`")),
        })
        .collect::<Result<_, _>>()
        .map(Pattern)
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    Scheme::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Scheme::ALL.iter().map(|s| s.name()).collect();
        format!("unknown scheme `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_tag(s: &str) -> Result<FigureTag, String> {
    s.parse().map_err(|e: ExperimentError| e.to_string())
}

enum Failure {
    Usage(String),
    Run(ExperimentError),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure::Run(e)
    }
}

fn scenario(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut c = match &common.scenario {
        Some(p) => load_scenario_file(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => default_scenario(),
    };
    if let Some(seed) = common.seed {
        c.seed = seed;
        c.randomize_devices(seed);
    }
    if let Some(Pattern(p)) = &common.cache_pattern {
        if p.len() != c.num_devices() {
            return Err(Failure::Usage(format!(
                "--cache-pattern has {} entries but the scenario has {} devices",
                p.len(),
                c.num_devices()
            )));
        }
        c.cache_pattern = Some(p.clone());
    }
    Ok(c)
}

fn settings(common: &Common) -> OptimizerSettings {
    let mut s = OptimizerSettings::default();
    if let Some(eps) = common.eps {
        s.eps = eps;
    }
    if let Some(n) = common.max_outer {
        s.max_outer = n;
    }
    if common.sequential {
        s.parallelism = Parallelism::Sequential;
    }
    s
}

fn debug_dump(run: &RunResult) -> Result<(), Failure> {
    if let Some(dir) = std::env::var_os(DEBUG_DIR_ENV) {
        let path = write_debug_dump(Path::new(&dir), run)?;
        eprintln!("debug dump: {}", path.display());
    }
    Ok(())
}

fn print_run(run: &RunResult) {
    println!(
        "{:<6} {:>14.6e} bits/J  {:>12.3} J  outer {:>2}  converged {}",
        run.scheme.name(),
        run.energy_efficiency,
        run.total_energy_j,
        run.report.q1,
        run.report.converged
    );
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let c = scenario(&cli.common)?;
    let s = settings(&cli.common);
    let runner = Runner::new(s);
    match cli.command {
        Command::Run { scheme, out } => {
            let run = runner.run(&c, scheme)?;
            write_run(&out, &run, s.feas_tol)?;
            debug_dump(&run)?;
            print_run(&run);
            println!("wrote {}", out.display());
        }
        Command::Compare { schemes, out } => {
            let cmp = compare_schemes(&runner, &c, &schemes)?;
            write_comparison(&out, &cmp, s.feas_tol)?;
            for run in &cmp.runs {
                debug_dump(run)?;
                print_run(run);
            }
            println!("wrote {}", out.display());
        }
        Command::Figure { tag, out } => {
            let out = out.unwrap_or_else(|| Path::new("out").join(tag.name()));
            let fig = reproduce_figure(tag, &runner, &c, &out)?;
            for series in &fig.series {
                debug_dump(&series.run)?;
                print!("{:<20} ", series.label);
                print_run(&series.run);
            }
            println!("wrote {} files to {}", fig.files.len(), out.display());
        }
        Command::Validate => {
            let report = validate(&c);
            for w in &report.warnings {
                println!("warning: {w}");
            }
            for e in &report.errors {
                println!("error: {e}");
            }
            if !report.is_ok() {
                return Err(Failure::Run(ExperimentError::InvalidScenario(format!(
                    "{} error(s)",
                    report.errors.len()
                ))));
            }
            println!("ok");
        }
        Command::Show => {
            let text = serialize_scenario(&c).map_err(ExperimentError::from)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            if e.is_infeasibility() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
