use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use hgnav_core::harness::{
    self, read_rows_csv, rmse_of_rows, run_scenario, RunLog, ScenarioConfig, ScheduledEvent, Termination,
};

/// Exit status of a run that ended before landing.
const EXIT_EARLY_TERMINATION: u8 = 3;

#[derive(Parser)]
#[command(name = "hgnav", version, about = "Heightmap-gradient navigation scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write run.json and log.csv.
    Run {
        /// Scenario TOML file; may be omitted when --preset is given.
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: $HGNAV_OUT_DIR or ./runs].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Preset to start from (overrides `preset` in the file).
        #[arg(long)]
        preset: Option<String>,
        /// Inject a mission event, e.g. `120:returnHomeSrv`. Repeatable.
        #[arg(long, value_name = "T:EVENT")]
        inject: Vec<String>,
    },
    /// Print RMSE_odom and RMSE_method of a log.csv.
    Rmse { log: PathBuf },
    /// Convert a run.json to CSV or GeoJSON.
    Export {
        run: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        /// Output file [default: stdout].
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run a scenario over a seed range in parallel and print one summary line per seed.
    Sweep {
        config: Option<PathBuf>,
        /// Inclusive range `A..B`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        preset: Option<String>,
    },
    /// List presets, or print one as TOML.
    Preset { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Geojson,
}

fn load_config(config: Option<&Path>, preset: Option<&str>) -> anyhow::Result<ScenarioConfig> {
    Ok(match (config, preset) {
        (Some(path), p) => ScenarioConfig::load(path, p)?,
        (None, Some(p)) => ScenarioConfig::preset(p)?,
        (None, None) => bail!("give a config file or --preset"),
    })
}

fn parse_seeds(s: &str) -> anyhow::Result<std::ops::RangeInclusive<u64>> {
    let (a, b) = s.split_once("..").with_context(|| format!("seed range {s:?} is not of the form A..B"))?;
    let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
    if a > b {
        bail!("empty seed range {s}");
    }
    Ok(a..=b)
}

fn parse_inject(s: &str) -> anyhow::Result<ScheduledEvent> {
    let (t, ev) = s.split_once(':').with_context(|| format!("--inject {s:?} is not of the form T:EVENT"))?;
    let e = ScheduledEvent { at: t.parse().with_context(|| format!("bad time in --inject {s:?}"))?, event: ev.into() };
    e.parse_event()?;
    Ok(e)
}

fn print_summary(out: &mut impl Write, log: &RunLog) -> io::Result<()> {
    let s = &log.summary;
    writeln!(out, "scenario      {} (seed {})", log.name, log.seed)?;
    writeln!(out, "termination   {} after {:.1} s", s.termination, s.duration)?;
    writeln!(out, "waypoints     {}/{}", s.waypoints_detected, s.waypoints_total)?;
    writeln!(out, "rmse_odom     {:.2} m", s.rmse_odom)?;
    writeln!(out, "rmse_method   {:.2} m", s.rmse_method)?;
    writeln!(out, "final error   {:.2} m (odometry {:.2} m)", s.final_error, s.final_odom_error)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out, preset, inject } => {
            let mut cfg = load_config(config.as_deref(), preset.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            for i in &inject {
                cfg.run.events.push(parse_inject(i)?);
            }
            let log = run_scenario(&cfg)?;
            let base = out
                .or_else(|| std::env::var_os("HGNAV_OUT_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let dir = base.join(format!("{}_seed{}", cfg.name, cfg.seed));
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            log.write_json(BufWriter::new(File::create(dir.join("run.json"))?))?;
            log.write_csv(BufWriter::new(File::create(dir.join("log.csv"))?))?;
            std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
            let mut stdout = io::stdout().lock();
            print_summary(&mut stdout, &log)?;
            writeln!(stdout, "output        {}", dir.display())?;
            Ok(if log.summary.termination == Termination::Landed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_EARLY_TERMINATION)
            })
        }
        Command::Rmse { log } => {
            let file = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let rows = read_rows_csv(BufReader::new(file)).with_context(|| format!("reading {}", log.display()))?;
            let (odom, method) = rmse_of_rows(&rows)?;
            println!("rmse_odom {odom}");
            println!("rmse_method {method}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { run, format, output } => {
            let file = File::open(&run).with_context(|| format!("opening {}", run.display()))?;
            let log = RunLog::read_json(BufReader::new(file)).with_context(|| format!("reading {}", run.display()))?;
            let mut sink: Box<dyn Write> = match output {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(io::stdout().lock()),
            };
            match format {
                Format::Csv => log.write_csv(&mut sink)?,
                Format::Geojson => {
                    serde_json::to_writer_pretty(&mut sink, &log.to_geojson())?;
                    writeln!(sink)?;
                }
            }
            sink.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, seeds, preset } => {
            let cfg = load_config(config.as_deref(), preset.as_deref())?;
            let results = harness::sweep(&cfg, parse_seeds(&seeds)?);
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "seed,rmse_odom,rmse_method,final_error,waypoints_detected,waypoints_total,termination")?;
            let mut failed = false;
            for (seed, r) in results {
                match r {
                    Ok(s) => writeln!(
                        stdout,
                        "{seed},{:.3},{:.3},{:.3},{},{},{}",
                        s.rmse_odom, s.rmse_method, s.final_error, s.waypoints_detected, s.waypoints_total, s.termination
                    )?,
                    Err(e) => {
                        failed = true;
                        eprintln!("seed {seed}: {e}");
                    }
                }
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Preset { name } => {
            match name {
                Some(n) => print!("{}", ScenarioConfig::preset(&n)?.to_toml_string()?),
                None => harness::preset_names().for_each(|n| println!("{n}")),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
