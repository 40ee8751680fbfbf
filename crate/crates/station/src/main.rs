use std::fs::File;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use probestation::api::ApiCommand;
use probestation::replay::replay_session;
use probestation::report::{Report, MANUAL_RANGE};
use probestation::server;
use probestation::service::{Station, StationOptions};
use probestation::session::{read_session, RecordBody};
use probestation_core::autocontrol::{BatchParams, BatchPlan, SlotRecord};
use probestation_core::gcode::SlipModel;
use probestation_core::measurement::Interval;
use probestation_core::vision::SceneDescription;
use probestation_core::{MachineConfig, SimSetup};

#[derive(Parser)]
#[command(name = "probestation", version, about = "Virtual automated probe station")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SetupArgs {
    /// Machine configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene description (JSON).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Belt slip model (JSON).
    #[arg(long)]
    slip: Option<PathBuf>,
    /// Seed for detector noise, slip and junction noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Start the simulator and serve the command/telemetry socket.
    Serve {
        #[command(flatten)]
        setup: SetupArgs,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Optional raw G-code console.
        #[arg(long)]
        gcode_listen: Option<String>,
        /// Session log file.
        #[arg(long, default_value = "session.ndjson")]
        log: PathBuf,
        /// Advance simulated time with wall time while idle, in this period (s).
        #[arg(long)]
        tick: Option<f64>,
        /// Run procedures at this multiple of real time instead of flat out.
        #[arg(long)]
        realtime: Option<f64>,
    },
    /// Measure every slot of a batch plan and print the records.
    RunBatch {
        plan: PathBuf,
        #[command(flatten)]
        setup: SetupArgs,
        /// Procedure parameters (JSON).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "session.ndjson")]
        log: PathBuf,
        /// Print the slot records as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-execute a session log and compare it with the recording.
    Replay {
        log: PathBuf,
        /// Refuse unless the log was recorded with this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the reconstructed records here (NDJSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Timing table, savings and per-junction CSV from a session log.
    Report {
        log: PathBuf,
        /// Manual time per junction, "lo,hi" seconds.
        #[arg(long, value_parser = parse_range)]
        manual: Option<(f64, f64)>,
        /// Automated time per junction, "lo,hi" seconds; defaults to the session's.
        #[arg(long, value_parser = parse_range)]
        auto: Option<(f64, f64)>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        samples_csv: Option<PathBuf>,
    },
    /// Print the default machine configuration, scene and slip model.
    Defaults,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Interval::new(lo, hi).map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_setup(a: &SetupArgs) -> Result<SimSetup> {
    let mut setup = SimSetup::default();
    if let Some(p) = &a.config {
        setup.config = MachineConfig::load(p)?;
    }
    if let Some(p) = &a.scene {
        setup.scene = read_json::<SceneDescription>(p)?;
    }
    if let Some(p) = &a.slip {
        setup.slip = read_json::<SlipModel>(p)?;
    }
    Ok(setup.with_seed(a.seed))
}

struct ServeArgs {
    setup: SetupArgs,
    listen: String,
    gcode_listen: Option<String>,
    log: PathBuf,
    tick: Option<f64>,
    realtime: Option<f64>,
}

fn serve(a: ServeArgs) -> Result<()> {
    let ServeArgs {
        setup,
        listen,
        gcode_listen,
        log,
        tick,
        realtime,
    } = a;
    if let Some(f) = realtime {
        if !(f > 0.0 && f.is_finite()) {
            bail!("--realtime must be > 0");
        }
    }
    let station = Station::new(StationOptions {
        setup: build_setup(&setup)?,
        log_path: Some(log.clone()),
        retain_records: false,
        realtime,
    })?;
    if let Some(period) = tick {
        if !(period > 0.0 && period.is_finite()) {
            bail!("--tick must be > 0");
        }
        station.start_clock(Duration::from_secs_f64(period));
    }
    if let Some(addr) = gcode_listen {
        let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
        let s = station.clone();
        std::thread::spawn(move || server::serve_gcode(s, listener));
        log::info!("G-code console on {addr}");
    }
    let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
    log::info!("listening on {listen}, logging to {}", log.display());
    server::serve(station, listener)?;
    Ok(())
}

fn run_batch(plan: PathBuf, setup: SetupArgs, params: Option<PathBuf>, log: PathBuf, json: bool) -> Result<ExitCode> {
    let plan: BatchPlan = read_json(&plan)?;
    let params = match params {
        Some(p) => read_json(&p)?,
        None => BatchParams::standard(),
    };
    let station = Station::new(StationOptions {
        setup: build_setup(&setup)?,
        log_path: Some(log),
        retain_records: false,
        realtime: None,
    })?;
    station
        .handle(ApiCommand::RunBatch {
            plan,
            params: Some(params),
        })
        .map_err(anyhow::Error::from)?;
    let done = station.wait_idle().context("batch produced no result")?;
    station.flush_log()?;
    if let Some(e) = station.log_failure() {
        bail!("session log incomplete: {e}");
    }
    let Some(outcome) = done.batch else {
        bail!("batch refused: {}", done.error.unwrap_or_default());
    };
    let mut out = io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut out, &outcome)?;
        writeln!(out)?;
    } else {
        for rec in &outcome.records {
            match rec {
                SlotRecord::Measured { slot, result } => writeln!(
                    out,
                    "slot {slot}: R = {:.6} ohm, Ic = {:.6e} A",
                    result.resistance, result.critical_current
                )?,
                SlotRecord::Failed { slot, failure } => {
                    writeln!(out, "slot {slot}: failed during {}: {}", failure.stage, failure.reason)?
                }
            }
        }
        if outcome.aborted {
            writeln!(out, "batch aborted by emergency stop")?;
        }
    }
    Ok(if outcome.records.iter().all(SlotRecord::is_measured) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn replay(log: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let session = read_session(&log).with_context(|| format!("reading {}", log.display()))?;
    let report = replay_session(&session, seed)?;
    if let Some(path) = out {
        let mut w = io::BufWriter::new(File::create(&path)?);
        for r in &report.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
    }
    let commands = report.records.iter().filter(|r| matches!(r.body, RecordBody::Command(_))).count();
    match &report.divergence {
        None => {
            println!("replay identical: {} records compared, {commands} commands re-executed", report.compared);
            Ok(ExitCode::SUCCESS)
        }
        Some(d) => {
            println!("replay diverged at record {} of {}", d.index, report.compared);
            println!("logged:   {}", serde_json::to_string(&d.logged)?);
            println!("replayed: {}", serde_json::to_string(&d.replayed)?);
            Ok(ExitCode::from(1))
        }
    }
}

fn report(
    log: PathBuf,
    manual: Option<(f64, f64)>,
    auto: Option<(f64, f64)>,
    csv: Option<PathBuf>,
    samples_csv: Option<PathBuf>,
) -> Result<()> {
    let session = read_session(&log).with_context(|| format!("reading {}", log.display()))?;
    let r = Report::from_session(&session);
    let (mlo, mhi) = manual.unwrap_or(MANUAL_RANGE);
    let manual = Interval::new(mlo, mhi)?;
    let auto = auto.map(|(lo, hi)| Interval::new(lo, hi)).transpose()?;
    print!("{}", r.render(auto, manual));
    if let Some(p) = csv {
        r.write_junctions_csv(File::create(&p)?)?;
    }
    if let Some(p) = samples_csv {
        r.write_samples_csv(File::create(&p)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve {
            setup,
            listen,
            gcode_listen,
            log,
            tick,
            realtime,
        } => serve(ServeArgs {
            setup,
            listen,
            gcode_listen,
            log,
            tick,
            realtime,
        })
        .map(|_| ExitCode::SUCCESS),
        Command::RunBatch {
            plan,
            setup,
            params,
            log,
            json,
        } => run_batch(plan, setup, params, log, json),
        Command::Replay { log, seed, out } => replay(log, seed, out),
        Command::Report {
            log,
            manual,
            auto,
            csv,
            samples_csv,
        } => report(log, manual, auto, csv, samples_csv).map(|_| ExitCode::SUCCESS),
        Command::Defaults => {
            let setup = SimSetup::default();
            serde_json::to_string_pretty(&serde_json::json!({
                "config": setup.config,
                "scene": setup.scene,
                "slip": setup.slip,
                "batch_params": BatchParams::standard(),
            }))
            .map(|s| {
                println!("{s}");
                ExitCode::SUCCESS
            })
            .map_err(Into::into)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
