use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dcgrid_cli::scenario_file::Overrides;
use dcgrid_cli::{presets, Failure, RunOptions, X1Choice};
use dcgrid_core::BusLaw;

/// Closed-loop DC microgrid simulator.
#[derive(Debug, Parser)]
#[command(name = "dcgrid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario file or preset and write CSV, plots and a summary.
    Run {
        /// Scenario file path or preset name.
        scenario: String,
        /// Integration step in seconds.
        #[arg(long)]
        step: Option<f64>,
        /// Final time in seconds.
        #[arg(long)]
        t_end: Option<f64>,
        /// Record every n-th step.
        #[arg(long)]
        record_every: Option<usize>,
        /// Bus-voltage law: printed or centred.
        #[arg(long)]
        bus_law: Option<BusLaw>,
        /// Exit with status 3 if the Lyapunov monitor finds violations.
        #[arg(long)]
        strict_lyapunov: bool,
        #[arg(long)]
        no_plots: bool,
        /// Output directory (default out/<scenario name>).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check admissibility, equilibrium duties and gain stability.
    Certify {
        /// Scenario file path or preset name (defaults if omitted).
        scenario: Option<String>,
    },
    /// Solve the battery reference from the current balance.
    SolveRefs {
        /// Scenario file path or preset name (defaults if omitted).
        scenario: Option<String>,
        /// Load resistance in ohms.
        #[arg(long)]
        load: Option<f64>,
        /// PV voltage reference in volts, or V_PV.
        #[arg(long = "x1star")]
        x1_star: Option<X1Choice>,
    },
    /// Preset scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Compare the printed closed forms with the exact equilibria.
    Audit {
        /// Write the Markdown report here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Redraw the figures from an existing output directory.
    Plot {
        dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset's scenario file.
    Show { name: String },
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            scenario,
            step,
            t_end,
            record_every,
            bus_law,
            strict_lyapunov,
            no_plots,
            output,
        } => {
            let opts = RunOptions {
                overrides: Overrides {
                    h: step,
                    t_end,
                    record_every,
                    bus_law,
                },
                strict_lyapunov,
                no_plots,
                output,
            };
            let outcome = dcgrid_cli::run(&scenario, &opts)?;
            print!("{}", outcome.summary);
            println!("output: {}", outcome.output_dir.display());
        }
        Command::Certify { scenario } => {
            let c = dcgrid_cli::certify(scenario.as_deref())?;
            print!("{}", c.report);
            if !c.passed() {
                return Err(Failure::Invalid(c.failures.join("\n")));
            }
        }
        Command::SolveRefs {
            scenario,
            load,
            x1_star,
        } => {
            let s = dcgrid_cli::solve_refs(scenario.as_deref(), load, x1_star)?;
            print!("{}", s.report);
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in presets::names().map_err(Failure::Invalid)? {
                    println!("{name}");
                }
            }
            PresetAction::Show { name } => match presets::source(&name).map_err(Failure::Invalid)? {
                Some(src) => print!("{src}"),
                None => return Err(Failure::Invalid(format!("no preset named {name}"))),
            },
        },
        Command::Audit { output } => {
            let md = dcgrid_cli::audit_markdown()?;
            match output {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent).map_err(|e| Failure::Io(format!("{}: {e}", parent.display())))?;
                    }
                    std::fs::write(&path, md).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{md}"),
            }
        }
        Command::Plot { dir } => {
            let files = dcgrid_cli::plot_from_csv(&dir.join("trace.csv"), &dir.join("references.csv"), &dir)?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
