use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use efield_cli::{emit_summary, parse_config, parse_override, render_config};
use efield_core::link::{decode_frame, encode_frame};
use efield_core::loop_runner::{run_both, step_response_config};
use efield_core::{
    measure_pipeline_latency, run_closed_loop, Arithmetic, LoopConfig, MutualMatrix, Trace,
    CHANNELS,
};

#[derive(Parser)]
#[command(
    name = "efield",
    version,
    about = "Error-field feedback loop simulator"
)]
struct Cli {
    /// Print the default configuration and exit.
    #[arg(long, global = true)]
    print_defaults: bool,

    /// Override the top-level RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured closed-loop scenario and write the trace CSV.
    Run {
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        /// key=value overrides applied on top of the config file.
        overrides: Vec<String>,
    },
    /// Unit-step disturbance on one channel.
    StepResponse {
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
        #[arg(long)]
        channel: usize,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        overrides: Vec<String>,
    },
    /// Mutual-inductance matrix utilities.
    Matrix {
        #[command(subcommand)]
        action: MatrixAction,
    },
    /// Frame codec utilities.
    Link {
        #[command(subcommand)]
        action: LinkAction,
    },
    /// Measure digital pipeline latency against the configured budget.
    Bench {
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
        overrides: Vec<String>,
    },
}

#[derive(Subcommand)]
enum MatrixAction {
    /// Write the 16x16 matrix as row-major CSV in henries.
    Dump {
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        /// Take the matrix parameters from this config instead of the defaults.
        #[arg(short = 'c', long = "config")]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LinkAction {
    /// Print a sample encoded frame in hex and check it decodes.
    Selftest,
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> AnyResult<LoopConfig> {
    let mut parsed = overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = seed {
        parsed.push(("seed".to_string(), toml::Value::Integer(s as i64)));
    }
    Ok(parse_config(path, &parsed)?)
}

fn write_trace(trace: &Trace, path: &Path) -> AnyResult<()> {
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut w = BufWriter::new(file);
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn companion_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    path.with_file_name(format!("{stem}.float.csv"))
}

fn run_scenario(cfg: &LoopConfig, output: &Path) -> AnyResult<()> {
    let trace = if cfg.mode == Arithmetic::Both {
        let (fixed, float) = run_both(cfg)?;
        let companion = companion_path(output);
        write_trace(&float, &companion)?;
        let divergence = fixed
            .records
            .iter()
            .zip(&float.records)
            .flat_map(|(a, b)| (0..CHANNELS).map(move |ch| (a.currents[ch] - b.currents[ch]).abs()))
            .fold(0.0, f64::max);
        println!("float trace: {}", companion.display());
        println!("max |i_fixed - i_float|: {divergence:.6e} A");
        fixed
    } else {
        run_closed_loop(cfg)?
    };
    write_trace(&trace, output)?;
    println!("{}", emit_summary(&trace)?);
    Ok(())
}

fn dispatch(cli: Cli) -> AnyResult<()> {
    if cli.print_defaults {
        let mut cfg = LoopConfig::default();
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        print!("{}", render_config(&cfg));
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err("no subcommand given (try --help)".into());
    };
    match command {
        Command::Run {
            config,
            output,
            overrides,
        } => {
            let cfg = load(&config, &overrides, cli.seed)?;
            run_scenario(&cfg, &output)
        }
        Command::StepResponse {
            config,
            channel,
            output,
            overrides,
        } => {
            let cfg = load(&config, &overrides, cli.seed)?;
            run_scenario(&step_response_config(&cfg, channel)?, &output)
        }
        Command::Matrix {
            action: MatrixAction::Dump { output, config },
        } => {
            let m = match config {
                Some(path) => load(&path, &[], cli.seed)?.mutual_matrix()?,
                None => MutualMatrix::default(),
            };
            let file = File::create(&output).map_err(|e| format!("{}: {e}", output.display()))?;
            m.write_csv(BufWriter::new(file))?;
            Ok(())
        }
        Command::Link {
            action: LinkAction::Selftest,
        } => {
            let payload: [i16; CHANNELS] = std::array::from_fn(|i| (i as i16 - 8) * 0x0101);
            let frame = encode_frame(&payload, 0x2A);
            let hex: Vec<String> = frame.iter().map(|b| format!("{b:02x}")).collect();
            println!("{}", hex.join(" "));
            let decoded = decode_frame(&frame)?;
            if decoded.seq != 0x2A || decoded.payload != payload {
                return Err("decoded frame does not match the encoded payload".into());
            }
            let mut corrupted = frame;
            corrupted[10] ^= 0x10;
            if decode_frame(&corrupted).is_ok() {
                return Err("single-bit corruption was not detected".into());
            }
            println!("selftest ok");
            Ok(())
        }
        Command::Bench { config, overrides } => {
            let cfg = load(&config, &overrides, cli.seed)?;
            let r = measure_pipeline_latency(&cfg)?;
            println!("mode: {}", cfg.mode.as_str());
            println!("iterations: {}", r.iterations);
            println!("mean: {:.3} us", r.mean * 1e6);
            println!("std_dev: {:.3} us", r.std_dev * 1e6);
            println!("p99: {:.3} us", r.p99 * 1e6);
            println!("max: {:.3} us", r.max * 1e6);
            println!(
                "budget: {:.3} us ({})",
                r.budget * 1e6,
                if r.within_budget() {
                    "within"
                } else {
                    "EXCEEDED"
                }
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
