use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use femu_core::control::config::{AssetKind, Origin, Resolver};
use femu_core::control::protocol::{serve_stream, Session};
use femu_core::control::scenario::{run_scenario, Scenario, ScenarioError, ScenarioReport};
use femu_core::engine::{EngineConfig, TimingTable, WorkloadProgram};
use femu_core::metrics::{counters_snapshot, estimate_energy, CounterMode, EnergyReport};
use femu_core::model::{validate_energy_model, ClockConfig, EnergyModel};
use femu_core::periph::adc::SampleSource;
use femu_core::{json, register_accelerator, AcceleratorSpec, Engine, Platform};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "femu",
    version,
    about = "Deterministic TinyAI SoC emulation: runs, scenarios and a control server"
)]
struct Cli {
    /// Seed for synthetic inputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Automatic,
    Manual,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Model,
    Program,
    Timing,
    Accelerator,
    Scenario,
}

#[derive(Subcommand)]
enum Command {
    /// Run one program and write its energy report.
    Run {
        #[arg(long)]
        program: String,
        #[arg(long = "energy-model", default_value = "tsmc65")]
        energy_model: String,
        #[arg(long)]
        timing: Option<String>,
        /// Accelerator spec to register; repeatable.
        #[arg(long = "accelerator")]
        accelerators: Vec<String>,
        /// Engine configuration file.
        #[arg(long)]
        engine: Option<String>,
        /// Sample source file for acquisitions.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "automatic")]
        mode: Mode,
        #[arg(long = "clock-hz")]
        clock_hz: Option<u64>,
    },
    /// Run a scenario by built-in name or file.
    Scenario { name: String },
    /// Serve the control protocol on stdin/stdout or a Unix socket.
    Serve {
        #[arg(long)]
        socket: Option<PathBuf>,
    },
    /// Check a configuration file.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Convert a report to CSV.
    Export { report: PathBuf },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Check(anyhow::Error),
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Check(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Check(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            ref program,
            ref energy_model,
            ref timing,
            ref accelerators,
            ref engine,
            ref samples,
            mode,
            clock_hz,
        } => cmd_run(
            &cli,
            RunInputs {
                program,
                energy_model,
                timing: timing.as_deref(),
                accelerators,
                engine: engine.as_deref(),
                samples: samples.as_deref(),
                mode: match mode {
                    Mode::Automatic => CounterMode::Automatic,
                    Mode::Manual => CounterMode::Manual,
                },
                clock_hz,
            },
        ),
        Command::Scenario { ref name } => cmd_scenario(&cli, name),
        Command::Serve { ref socket } => cmd_serve(&cli, socket.as_deref()),
        Command::Validate { ref file, kind } => cmd_validate(file, kind),
        Command::Export { ref report } => cmd_export(&cli, report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolver() -> Resolver {
    Resolver::new(None)
}

fn load<T: serde::de::DeserializeOwned>(r: &Resolver, name: &str, kind: AssetKind) -> Result<T, Failure> {
    let (text, origin) = r.load(name, Some(kind)).map_err(usage)?;
    json::parse(&text).map_err(|e| Failure::Check(anyhow!("{origin}: {e}")))
}

struct RunInputs<'a> {
    program: &'a str,
    energy_model: &'a str,
    timing: Option<&'a str>,
    accelerators: &'a [String],
    engine: Option<&'a str>,
    samples: Option<&'a Path>,
    mode: CounterMode,
    clock_hz: Option<u64>,
}

fn cmd_run(cli: &Cli, inputs: RunInputs) -> Result<(), Failure> {
    let r = resolver();
    let program: WorkloadProgram = load(&r, inputs.program, AssetKind::Program)?;
    let model: EnergyModel = load(&r, inputs.energy_model, AssetKind::Model)?;
    let timing: TimingTable = match inputs.timing {
        Some(t) => load(&r, t, AssetKind::Timing)?,
        None => TimingTable::default(),
    };
    let config: EngineConfig = match inputs.engine {
        Some(e) => load(&r, e, AssetKind::Program)?,
        None => EngineConfig::default(),
    };
    let clock = ClockConfig::new(inputs.clock_hz.unwrap_or(model.ref_freq_hz)).map_err(|e| usage(anyhow!(e)))?;
    let mut platform = Platform::from_model(model, clock).map_err(|errs| {
        Failure::Check(anyhow!(errs
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("\n")))
    })?;
    for a in inputs.accelerators {
        let spec: AcceleratorSpec = load(&r, a, AssetKind::Accelerator)?;
        platform = register_accelerator(spec, &platform).map_err(|e| Failure::Check(e.into()))?;
    }
    let source = match inputs.samples {
        Some(p) => SampleSource::from_file(p).map_err(usage)?,
        None => {
            let n: u64 = program
                .phases
                .iter()
                .map(|p| match p {
                    femu_core::Phase::Acquire { n_samples, .. } => *n_samples,
                    _ => 0,
                })
                .sum();
            SampleSource::synthetic(n.max(1) as usize, cli.seed.unwrap_or(0))
        }
    };
    let mut engine =
        Engine::load(program, timing, platform, config, source, None).map_err(|e| Failure::Check(e.into()))?;
    let outcome = engine.run_to_end().map_err(|e| Failure::Check(e.into()))?;
    let counters = counters_snapshot(&outcome, inputs.mode).map_err(|e| Failure::Check(e.into()))?;
    let report = estimate_energy(&counters, engine.platform().model(), clock).map_err(|e| Failure::Check(e.into()))?;

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("report.json"), report.to_json())?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    std::fs::write(out.join("outcome.json"), json::to_pretty(&outcome))?;
    println!(
        "{}: {} cycles, {:.6e} J, active time share {:.4}",
        outcome.program, report.window_cycles, report.total_energy_j, report.breakdown.active_time_share
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn print_assertions(report: &ScenarioReport) {
    for a in &report.assertions {
        println!("[{}] {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
}

fn cmd_scenario(cli: &Cli, name: &str) -> Result<(), Failure> {
    let scenario = match Scenario::load(name, &resolver()) {
        Ok(s) => s,
        Err(e @ ScenarioError::MissingInput(_)) => return Err(usage(e)),
        Err(e) => return Err(Failure::Check(e.into())),
    };
    let scenario = match cli.seed {
        Some(seed) => scenario.with_seed(seed),
        None => scenario,
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.file.name));
    match run_scenario(&scenario, &out) {
        Ok(report) => {
            print_assertions(&report);
            println!("wrote {}", out.display());
            Ok(())
        }
        Err(ScenarioError::AssertionFailed { failed }) => {
            if let Ok(report) = scenario.execute() {
                print_assertions(&report);
            }
            Err(Failure::Check(anyhow!("assertion(s) failed: {}", failed.join(", "))))
        }
        Err(e) => Err(Failure::Check(e.into())),
    }
}

fn cmd_serve(cli: &Cli, socket: Option<&Path>) -> Result<(), Failure> {
    let template = Session::new(resolver(), cli.seed.unwrap_or(0));
    match socket {
        None => {
            let mut session = template;
            let stdin = std::io::stdin();
            serve_stream(&mut session, stdin.lock(), std::io::stdout().lock())?;
            Ok(())
        }
        #[cfg(unix)]
        Some(path) => {
            femu_core::control::protocol::serve_unix(path, template)?;
            Ok(())
        }
        #[cfg(not(unix))]
        Some(_) => Err(usage(anyhow!("Unix sockets are not available on this platform"))),
    }
}

fn detect(value: &Value) -> Option<Kind> {
    let obj = value.as_object()?;
    if obj.contains_key("runs") {
        Some(Kind::Scenario)
    } else if obj.contains_key("phases") {
        Some(Kind::Program)
    } else if obj.contains_key("stage") {
        Some(Kind::Accelerator)
    } else if obj.contains_key("technology") || obj.contains_key("domains") {
        Some(Kind::Model)
    } else if obj.values().all(Value::is_object) {
        Some(Kind::Timing)
    } else {
        None
    }
}

fn cmd_validate(file: &Path, kind: Option<Kind>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(Failure::Usage)?;
    let name = file.display().to_string();
    let fail = |e: &dyn std::fmt::Display| Failure::Check(anyhow!("{name}: {e}"));
    let value: Value = json::parse(&text).map_err(|e| fail(&e))?;
    let kind = kind
        .or_else(|| detect(&value))
        .ok_or_else(|| usage(anyhow!("{name}: cannot tell what kind of file this is; pass --kind")))?;
    let label = match kind {
        Kind::Model => {
            let model = EnergyModel::from_json(&text).map_err(|e| fail(&e))?;
            let validated = validate_energy_model(&model, &model.platform()).map_err(|errs| {
                Failure::Check(anyhow!(
                    "{name}:\n{}",
                    errs.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
                ))
            })?;
            for w in &validated.warnings {
                eprintln!("warning: {w}");
            }
            "energy model"
        }
        Kind::Program => {
            WorkloadProgram::from_json(&text).map_err(|e| fail(&e))?;
            "program"
        }
        Kind::Timing => {
            TimingTable::from_json(&text).map_err(|e| fail(&e))?;
            "timing table"
        }
        Kind::Accelerator => {
            let spec = AcceleratorSpec::from_json(&text).map_err(|e| fail(&e))?;
            spec.validate().map_err(|e| fail(&e))?;
            "accelerator"
        }
        Kind::Scenario => {
            let origin = Origin::File(file.to_path_buf());
            Scenario::from_text(&text, origin, &resolver()).map_err(|e| fail(&e))?;
            "scenario"
        }
    };
    println!("{name}: valid {label}");
    Ok(())
}

fn cmd_export(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Usage)?;
    let mut value: Value = json::parse(&text).map_err(|e| Failure::Check(anyhow!("{}: {e}", path.display())))?;
    if let Some(energy) = value.get_mut("energy") {
        value = energy.take();
    }
    let report: EnergyReport =
        json::from_value(value).map_err(|e| Failure::Check(anyhow!("{}: {e}", path.display())))?;
    let csv = report.to_csv();
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
            let target = dir.join(format!("{stem}.csv"));
            std::fs::write(&target, csv)?;
            println!("wrote {}", target.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
