//! `rpgsim`: protocol runs, figure data and channel dumps for the three-qubit
//! Rydberg parity gate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rpg_core::config::{C6Unit, Frequency, RunConfig, C6};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rpg_core::Error),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use rpg_core::Error as E;
        match self {
            Self::Usage(_) => 2,
            Self::Core(E::Config(_) | E::MissingKey(_) | E::InvalidParameter { .. } | E::InvalidInput(_)) => 2,
            Self::Core(E::Tolerance(_) | E::PositivityViolation { .. } | E::NonFinite { .. }) => 3,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rpgsim", version, about = "Pulse-level simulation of a three-qubit Rydberg parity gate")]
pub struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for sweeps and channel extraction.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Raman Rabi frequency Ω_e/2π in MHz, overriding `physics.omega_e`.
    #[arg(long, global = true)]
    pub omega_e: Option<f64>,
    /// vdW coefficient C6/2π in MHz·µm⁶, overriding `physics.c6`.
    #[arg(long, global = true)]
    pub c6: Option<f64>,
    /// Switch spontaneous decay on or off, overriding `physics.decay`.
    #[arg(long, global = true)]
    pub decay: Option<bool>,
    /// Integrator resolution, overriding `integrator.points_per_period`.
    #[arg(long, global = true)]
    pub points_per_period: Option<f64>,
    /// Propagate the closed system even where the config asks for Lindblad.
    #[arg(long, global = true)]
    pub closed: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the three-stage protocol on one computational input.
    Protocol {
        /// Input label such as `10A` (controls, then target A/B).
        #[arg(long)]
        input: String,
        #[arg(long, value_enum, default_value_t = ModelArg::Parity)]
        model: ModelArg,
    },
    /// Write the CSV behind one figure into the output directory.
    Figure {
        #[arg(value_enum)]
        name: FigureName,
        /// fig3b: also locate the blockade giving F = 0.9935 and its spacing.
        #[arg(long)]
        anchor: bool,
    },
    /// Dump the extracted gate channel as JSON.
    Channel {
        #[arg(long)]
        output: PathBuf,
        /// Include the two-atom CNOT channel.
        #[arg(long)]
        cnot: bool,
    },
    /// Sweep one parameter and print a CSV to stdout (or `--output`).
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value_t = SweepMetric::Fidelity)]
        metric: SweepMetric,
        /// Input state for `population` and `leakage`.
        #[arg(long, default_value = "00A")]
        input: String,
        /// Target level for `population`.
        #[arg(long, value_enum, default_value_t = TargetLevel::A)]
        level: TargetLevel,
        /// Lindblad propagation (needs decay switched on to differ).
        #[arg(long)]
        dissipative: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Deutsch–Jozsa P(|11>) against gate duration, CSV to stdout.
    Dj {
        /// Durations in µs; `circuits.dj_durations_us` when omitted.
        #[arg(long, value_delimiter = ',')]
        durations: Vec<f64>,
    },
    /// Ising ZZ simulation overlaps, CSV to stdout.
    Ising {
        /// Duration in µs; `circuits.ising_duration_us` when omitted.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// vdW shift against spacing, CSV to stdout.
    Vdw {
        /// Spacings in µm; `sweeps.fig3b.spacing_um` when omitted.
        #[arg(long, value_delimiter = ',')]
        spacing: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Parity,
    Controlled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FigureName {
    Fig2a,
    Fig2b,
    Fig2c,
    Fig2d,
    Fig3a,
    Fig3b,
    Fig4c,
    Fig5c,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    OmegaCOverOmegaE,
    DeltaOverOmegaE,
    OmegaROverOmegaE,
    /// Sets `δ = V` along with `V`.
    VOverOmegaC,
    /// Two-photon detuning alone.
    DeltaSmallOverOmegaE,
    /// Scales every frequency, i.e. the gate time.
    OmegaEMhz,
    /// `V = C6/l⁶`; needs C6.
    SpacingUm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMetric {
    Fidelity,
    Population,
    Leakage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetLevel {
    A,
    B,
    E,
    R,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.omega_e {
        cfg.physics.omega_e = Frequency::mhz(w);
    }
    if let Some(c6) = cli.c6 {
        cfg.physics.c6 = Some(C6 { value: c6, unit: C6Unit::MhzUm6 });
    }
    if let Some(d) = cli.decay {
        cfg.physics.decay = d;
    }
    if let Some(p) = cli.points_per_period {
        cfg.integrator.points_per_period = p;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    cfg.params()?;
    cfg.policy()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    let ctx = commands::Context::new(cfg, cli.closed)?;
    match cli.command {
        Command::Protocol { input, model } => ctx.protocol(&input, model),
        Command::Figure { name, anchor } => ctx.figure(name, anchor),
        Command::Channel { output, cnot } => ctx.channel(&output, cnot),
        Command::Sweep { axis, values, metric, input, level, dissipative, output } => {
            ctx.sweep(axis, &values, metric, &input, level, dissipative, output.as_deref())
        }
        Command::Dj { durations } => ctx.dj(&durations),
        Command::Ising { duration } => ctx.ising(duration),
        Command::Vdw { spacing } => ctx.vdw(&spacing),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
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
    fn exit_codes() {
        assert_eq!(CliError::from(rpg_core::Error::MissingKey("physics.c6".into())).exit_code(), 2);
        assert_eq!(CliError::from(rpg_core::Error::Tolerance("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(rpg_core::Error::PositivityViolation { min_eigenvalue: -1.0 }).exit_code(), 3);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::parse_from(["rpgsim", "--omega-e", "45", "--decay", "false", "vdw"]);
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.physics.omega_e, Frequency::mhz(45.0));
        assert!(!cfg.physics.decay);
    }
}
