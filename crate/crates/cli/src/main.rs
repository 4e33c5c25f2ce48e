use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qcorr_cli::app::{run_and_write, run_preset, Overrides};
use qcorr_cli::config::load_config;
use qcorr_cli::sweep::run_sweep;
use qcorr_cli::{CliError, ExperimentConfig, Mode};

/// Simulate correlated qubit pairs between thermal baths.
#[derive(Debug, Parser)]
#[command(name = "qcorr-pump", version)]
struct Args {
    mode: Mode,
    /// TOML experiment file
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Built-in parameter set: fig1 .. fig5
    #[arg(long)]
    preset: Option<String>,
    /// Hierarchy depth
    #[arg(long)]
    depth: Option<usize>,
    /// Matsubara terms per bath
    #[arg(long)]
    matsubara: Option<usize>,
    /// Zero the bath memory at every correlation injection
    #[arg(long)]
    reset_ados: bool,
    /// Worker threads for sweeps [default: available parallelism]
    #[arg(long)]
    jobs: Option<usize>,
}

fn execute(args: Args) -> Result<(), CliError> {
    let overrides = Overrides {
        depth: args.depth,
        matsubara: args.matsubara,
        reset_ados: args.reset_ados,
    };
    if let Some(name) = &args.preset {
        let out = args
            .out
            .ok_or_else(|| CliError::Config("--out is required with --preset".into()))?;
        let files = run_preset(name, Some(args.mode), &out, &overrides)?;
        for f in files {
            println!("{}", out.join(f).display());
        }
        return Ok(());
    }

    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = config.mode {
        if m != args.mode {
            return Err(CliError::Config(format!(
                "mode: config says {}, command line says {}",
                m.as_str(),
                args.mode.as_str()
            )));
        }
    }
    overrides.apply(&mut config);
    let out = args
        .out
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| CliError::Config("out_dir: set it in the config or pass --out".into()))?;

    if args.mode == Mode::Sweep {
        let jobs = match args.jobs {
            Some(0) => return Err(CliError::Config("--jobs: must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        run_sweep(&config, &out, jobs)?;
        println!("{}", out.join("summary.csv").display());
    } else {
        qcorr_cli::output::ensure_dir(&out)?;
        let stem = args.mode.as_str();
        run_and_write(&config, args.mode, &out, stem, None)?;
        println!("{}", out.join(format!("{stem}.csv")).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qcorr-pump: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
