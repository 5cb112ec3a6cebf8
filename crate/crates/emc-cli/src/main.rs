use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emc::config::{desk_preset, preset, RunConfig, PRESETS};
use emc::error::{ConfigError, Error};
use emc::harness::{compare, fom_harness, run_config};
use emc::io;

#[derive(Parser)]
#[command(name = "emc", version, about = "Monte Carlo thermal radiative transfer (EMC, IMC, diffusion)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a TOML config.
    Run {
        config: PathBuf,
        /// Output directory for snapshots and diagnostics.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Add per-group rho columns to snapshots.
        #[arg(long)]
        rho: bool,
        /// Also write a gnuplot data/script pair for the final snapshot.
        #[arg(long)]
        plot: bool,
    },
    /// Print a benchmark preset as TOML.
    Preset {
        name: String,
        /// CI-sized profile instead of the full benchmark.
        #[arg(long)]
        desk: bool,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Figure of merit over independent-seed replicas.
    Fom {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        replicas: usize,
        /// FOM report CSV path.
        #[arg(long, default_value = "fom.csv")]
        out: PathBuf,
        /// Reuse the config seed for every replica.
        #[arg(long)]
        same_seed: bool,
    },
    /// Run two configs and report wall times and L1 field differences.
    Compare { a: PathBuf, b: PathBuf },
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    Ok(RunConfig::load(path)?)
}

fn run(config: &Path, out: &Path, rho: bool, plot: bool) -> Result<(), Error> {
    let cfg = load(config)?;
    let res = run_config(&cfg)?;
    let mesh = &res.sim.problem.mesh;
    for snap in &res.snapshots {
        io::write_snapshot(mesh, snap, rho, &out.join(format!("snapshot_{:06}.csv", snap.step)))?;
        for (k, y) in cfg.lineouts.iter().enumerate() {
            let path = out.join(format!("lineout{k}_{:06}.csv", snap.step));
            io::write_file(&path, &io::lineout_csv(mesh, snap, *y))?;
        }
    }
    io::write_file(&out.join("diagnostics.csv"), &io::diagnostics_csv(&res.sim.reports))?;
    io::write_file(&out.join("convergence.csv"), &io::convergence_csv(&res.sim.reports))?;
    io::save_checkpoint(&res.sim.checkpoint(), &out.join("checkpoint.json"))?;
    if plot {
        io::write_plot(mesh, res.last(), out, "final")?;
    }
    let worst = res.sim.reports.iter().map(|r| r.conservation_error()).fold(0.0, f64::max);
    let picard = res.sim.reports.iter().map(|r| r.picard_iterations).max().unwrap_or(0);
    println!(
        "{}: {} steps in {:.2} s, CFL {:.2}, max Picard iterations {picard}, \
         worst step conservation {worst:.2e}, energy ledger error {:.2e}",
        if cfg.name.is_empty() { "run" } else { &cfg.name },
        res.sim.reports.len(),
        res.wall,
        res.sim.problem.cfl(cfg.dt),
        res.sim.ledger_error()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn show_preset(name: &str, desk: bool, out: Option<&Path>) -> Result<(), Error> {
    let cfg = if desk { desk_preset(name) } else { preset(name) }.map_err(|e| match e {
        ConfigError::UnknownPreset(n) => {
            ConfigError::Invalid(format!("unknown preset {n:?}; choose one of {}", PRESETS.join(", ")))
        }
        other => other,
    })?;
    let text = cfg.to_toml()?;
    match out {
        Some(path) => io::write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fom(config: &Path, replicas: usize, out: &Path, same_seed: bool) -> Result<(), Error> {
    let cfg = load(config)?;
    let report = fom_harness(&cfg, replicas, same_seed)?;
    io::write_file(out, &report.to_csv())?;
    println!(
        "{replicas} replicas, {:.3} s each: Var(Tm) {:.3e} FOM(Tm) {:.3e}, Var(Tr) {:.3e} FOM(Tr) {:.3e}",
        report.wall, report.mean_var_tm, report.fom_tm, report.mean_var_tr, report.fom_tr
    );
    Ok(())
}

fn compare_cmd(a: &Path, b: &Path) -> Result<(), Error> {
    let (ca, cb) = (load(a)?, load(b)?);
    let c = compare(&ca, &cb)?;
    println!("wall A {:.3} s, wall B {:.3} s, ratio A/B {:.3}", c.wall_a, c.wall_b, c.wall_a / c.wall_b);
    println!("L1 |Tm_A - Tm_B| {:.6e}", c.l1_tm);
    println!("L1 |Tr_A - Tr_B| {:.6e}", c.l1_tr);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run { config, out, rho, plot } => run(config, out, *rho, *plot),
        Command::Preset { name, desk, out } => show_preset(name, *desk, out.as_deref()),
        Command::Fom { config, replicas, out, same_seed } => fom(config, *replicas, out, *same_seed),
        Command::Compare { a, b } => compare_cmd(a, b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
