use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use multiport_battery::scenario::{cmd_simulate, RunMode};
use multiport_battery::verify::{cmd_characterize, cmd_gain_profile, cmd_verify, GridSpec, ProfileSource};

#[derive(Parser)]
#[command(name = "mbsim", version, about = "Multiport battery string analysis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Literal,
    Oracle,
    DcConsistent,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Literal => RunMode::Literal,
            Mode::Oracle => RunMode::Oracle,
            Mode::DcConsistent => RunMode::DcConsistent,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file; writes time_series.csv, metrics.json and manifest.toml.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Coupling override for asymmetric control.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Tabulate normalized port output voltages over m.
    GainProfile {
        #[arg(long)]
        n_c: usize,
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long, default_value_t = 96.0)]
        v_m: f64,
        #[arg(long, default_value_t = 0.001)]
        step: f64,
        /// `oracle` measures exact waveforms; anything else uses closed forms.
        #[arg(long, value_enum, default_value = "literal")]
        mode: Mode,
        /// CSV destination, `-` for stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Closed-form and measured port quantities side by side.
    Characterize {
        #[arg(long)]
        m: f64,
        #[arg(long)]
        n_c: usize,
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 96.0)]
        v_m: f64,
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        /// Per-module switching frequency.
        #[arg(long, default_value_t = 2000.0)]
        f_sw: f64,
        #[arg(long)]
        json: bool,
    },
    /// Check the closed forms against the exact-waveform oracle on a grid.
    Verify {
        #[arg(long, default_value_t = 2)]
        n_c_min: usize,
        #[arg(long, default_value_t = 12)]
        n_c_max: usize,
        #[arg(long, default_value_t = 0.001)]
        step: f64,
        /// Skip m within this distance of a branch boundary; 0 keeps all.
        #[arg(long, default_value_t = 1e-9)]
        boundary_exclusion: f64,
        #[arg(long)]
        symmetric_only: bool,
        /// Also write verify.json here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { config, out_dir, mode } => {
            let a = cmd_simulate(&config, out_dir.as_deref(), mode.map(Into::into))
                .with_context(|| format!("simulating {}", config.display()))?;
            for w in &a.report.windows {
                println!(
                    "window {:.3}-{:.3} s  v_dc1 mean {:.2} V ripple {:.3}% error {:.3}%  v_dc2 mean {:.2} V ripple {:.3}% error {:.3}%",
                    w.window_start_s,
                    w.window_end_s,
                    w.v_dc1.mean,
                    w.v_dc1.ripple_pct,
                    w.v_dc1.steady_state_error_pct,
                    w.v_dc2.mean,
                    w.v_dc2.ripple_pct,
                    w.v_dc2.steady_state_error_pct
                );
            }
            println!("wrote {}", a.time_series.display());
            println!("wrote {}", a.metrics.display());
            println!("wrote {}", a.manifest.display());
            Ok(true)
        }
        Command::GainProfile {
            n_c,
            l,
            ratio,
            v_m,
            step,
            mode,
            out,
        } => {
            let source = match mode {
                Mode::Oracle => ProfileSource::Oracle,
                Mode::Literal | Mode::DcConsistent => ProfileSource::Analytic,
            };
            let p = cmd_gain_profile(n_c, l, v_m, ratio, step, source, &out)?;
            if out.as_os_str() != "-" {
                eprintln!("wrote {} ({} points, layout {:?})", out.display(), p.entries.len(), p.meta.layout);
            }
            Ok(true)
        }
        Command::Characterize {
            m,
            n_c,
            l,
            v_m,
            ratio,
            f_sw,
            json,
        } => {
            let r = cmd_characterize(m, n_c, l, v_m, ratio, f_sw)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", r.render());
            }
            Ok(true)
        }
        Command::Verify {
            n_c_min,
            n_c_max,
            step,
            boundary_exclusion,
            symmetric_only,
            out_dir,
        } => {
            let grid = GridSpec {
                n_c_min,
                n_c_max,
                step,
                boundary_exclusion,
                symmetric_only,
            };
            let start = std::time::Instant::now();
            let r = cmd_verify(&grid, out_dir.as_deref())?;
            print!("{}", r.render());
            println!("elapsed {:.2} s", start.elapsed().as_secs_f64());
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
