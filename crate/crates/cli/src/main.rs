//! Command-line front end: every subcommand reads a JSON run config and writes
//! plot-ready CSV files into the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use polylattice::config::RunConfig;
use polylattice::experiments::{self, AlphaMarker};
use polylattice::lindblad::CurrentTrace;
use polylattice::modulation::ModulationKind;
use polylattice::{Error, Result};

#[derive(Parser)]
#[command(name = "polylattice", version, about = "Transport through depth-modulated optical lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ω, U and J over [v_min, v_max] and the exponential tunneling fit.
    Params(Io),
    /// Current against time for the configured drive and its effective model.
    Evolve(Io),
    /// Steady current of the configured system.
    Steady(Io),
    /// Stationary, modulated, ideal and effective currents for each offset list.
    Table1(Io),
    /// Steady current against the clamp depth V_max.
    SweepVmax(Io),
    /// Two-site steady current against the drive frequency α.
    SweepAlpha(Io),
}

#[derive(Args)]
struct Io {
    /// Run config (JSON). Defaults describe the five-site lattice δ = [−0.1, 0.3, −0.4, 0.2].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl Io {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::for_offsets(&[-0.1, 0.3, -0.4, 0.2]),
        };
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("config.json"), cfg.to_json()? + "\n")?;
        Ok(cfg)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        info!("writing {}", path.display());
        Ok(BufWriter::new(File::create(path)?))
    }
}

fn describe_drive(cfg: &RunConfig) {
    let m = &cfg.modulation;
    match m.kind {
        ModulationKind::None => info!("no modulation: V = v_min"),
        ModulationKind::Polychromatic => info!(
            "polychromatic drive V(t) = v_min − ln[(1/M) Σ_{{k=1..M}} cos²(δ_k t/2)]/β, clamped at v_max = {}",
            cfg.lattice.v_max
        ),
        ModulationKind::Monochromatic => info!(
            "monochromatic drive V(t) = v_min − ln cos²(αt/2)/β, clamped at v_max = {}",
            cfg.lattice.v_max
        ),
    }
}

fn params(io: &Io) -> Result<()> {
    let cfg = io.load()?;
    let (fit, rows) = experiments::params_table(&cfg)?;
    experiments::write_params_csv(io.create(&cfg.outputs.paths.params)?, &rows)?;
    println!(
        "J_max = {:.4e} E_r, beta = {:.4} /E_r, fit residual = {:.1}%",
        fit.j_max,
        fit.beta,
        100.0 * fit.residual
    );
    Ok(())
}

fn evolve(io: &Io) -> Result<()> {
    let cfg = io.load()?;
    describe_drive(&cfg);
    let ev = experiments::evolve(&cfg)?;
    let paths = &cfg.outputs.paths;
    ev.full.write_csv(io.create(&paths.evolve)?, ev.normalization)?;
    if let Some(eff) = &ev.effective {
        eff.write_csv(io.create(&paths.evolve_effective)?, ev.normalization)?;
    }
    let full = ev.full.steady_value.unwrap_or(f64::NAN);
    println!("steady current {full:.6e} ({:.4} normalized)", full / ev.normalization);
    if let Some(e) = ev.effective.as_ref().and_then(|e| e.current.last()) {
        println!("effective model at t_end {e:.6e} ({:.4} normalized)", e / ev.normalization);
    }
    Ok(())
}

fn steady(io: &Io) -> Result<()> {
    let cfg = io.load()?;
    describe_drive(&cfg);
    let r = experiments::steady(&cfg)?;
    experiments::write_steady_csv(io.create(&cfg.outputs.paths.steady)?, &r)?;
    println!(
        "steady current {:.6e}, stationary {:.6e}, normalized {:.4}",
        r.steady_current, r.stationary_current, r.normalized
    );
    Ok(())
}

fn table1(io: &Io) -> Result<()> {
    let cfg = io.load()?;
    describe_drive(&cfg);
    let rows = experiments::table1(&cfg)?;
    experiments::write_table1_csv(io.create(&cfg.outputs.paths.table1)?, &rows)?;
    let mut first_error = None;
    for (offsets, row) in rows {
        match row {
            Ok(r) => println!(
                "{offsets:?}: gain {}, recovered {:.1}%, effective error {}",
                r.gain.map_or("-".into(), |g| format!("{g:.3e}")),
                100.0 * r.percent_recovered,
                r.heff_percent_error.map_or("-".into(), |e| format!("{:.2}%", 100.0 * e)),
            ),
            Err(e) => {
                eprintln!("{offsets:?}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn sweep_vmax(io: &Io) -> Result<()> {
    let cfg = io.load()?;
    describe_drive(&cfg);
    let points = experiments::sweep_vmax(&cfg)?;
    experiments::write_vmax_csv(io.create(&cfg.outputs.paths.sweep_vmax)?, &points)?;
    for p in &points {
        println!("V_max {:>6.2}: {:.4}", p.v_max, p.normalized);
    }
    Ok(())
}

fn sweep_alpha(io: &Io) -> Result<()> {
    let cfg = io.load()?;
    let sweep = experiments::sweep_alpha(&cfg)?;
    experiments::write_alpha_csv(io.create(&cfg.outputs.paths.sweep_alpha)?, &sweep)?;
    println!("<U> = {:.6} E_r, stationary current {:.6e}", sweep.mean_u, sweep.stationary_current);
    for marker in [AlphaMarker::Offset, AlphaMarker::Resonance] {
        if let Some((alpha, i)) = sweep.at(marker) {
            println!("alpha {alpha:.6}: current {i:.6e}, gain {:.3e}", i / sweep.stationary_current);
        }
    }
    println!("effective model current {:.6e}", sweep.effective_current);
    Ok(())
}

impl Command {
    fn io(&self) -> &Io {
        match self {
            Command::Params(io)
            | Command::Evolve(io)
            | Command::Steady(io)
            | Command::Table1(io)
            | Command::SweepVmax(io)
            | Command::SweepAlpha(io) => io,
        }
    }
}

fn run(command: &Command) -> Result<()> {
    match command {
        Command::Params(io) => params(io),
        Command::Evolve(io) => evolve(io),
        Command::Steady(io) => steady(io),
        Command::Table1(io) => table1(io),
        Command::SweepVmax(io) => sweep_vmax(io),
        Command::SweepAlpha(io) => sweep_alpha(io),
    }
}

fn save_partial(out: &Path, trace: &CurrentTrace) -> std::io::Result<PathBuf> {
    let path = out.join("partial_trace.csv");
    trace.write_csv(BufWriter::new(File::create(&path)?), 1.0)?;
    Ok(path)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NotConverged { trace, .. } = &e {
                match save_partial(&cli.command.io().out, trace) {
                    Ok(path) => eprintln!("partial trace written to {}", path.display()),
                    Err(io) => eprintln!("could not save the partial trace: {io}"),
                }
            }
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
