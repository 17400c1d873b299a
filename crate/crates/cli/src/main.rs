use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use blockade::eigenstructure;
use blockade::experiment::{self, ExperimentConfig, RunOptions};
use blockade::model::{self, WitnessDispersive};
use blockade::pnr::{self, AnalysisOptions, LineLadder, PeakWeighting};

#[derive(Parser)]
#[command(name = "blockade", version, about = "Photon blockade simulation and PNR spectrum analysis")]
struct Cli {
    /// Output path: a directory for `run`, a file for the other commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the cavity Fock truncation n_max.
    #[arg(long, global = true)]
    truncation: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run { config: PathBuf },
    /// Extract P(n) and g(m) from a witness spectrum CSV.
    Analyze {
        spectrum: PathBuf,
        /// Dispersive shift in MHz (default: reference witness).
        #[arg(long)]
        chi: Option<f64>,
        /// Lamb-shifted witness frequency in GHz (default: reference witness).
        #[arg(long = "omega-w")]
        omega_w: Option<f64>,
        /// `dispersive` or `resonant:N`.
        #[arg(long, default_value = "dispersive")]
        ladder: String,
        #[arg(long = "min-prominence", default_value_t = pnr::DEFAULT_MIN_PROMINENCE)]
        min_prominence: f64,
        /// Assignment window in units of chi.
        #[arg(long, default_value_t = pnr::DEFAULT_ASSIGN_TOLERANCE)]
        tolerance: f64,
        #[arg(long, value_enum, default_value_t = Weighting::Deconvolved)]
        weighting: Weighting,
    },
    /// Print the eigen-ladder table with witness shifts.
    Ladder {
        #[arg(long = "N")]
        n_emitters: usize,
        #[arg(long = "n-max")]
        n_max: usize,
        #[arg(long, default_value_t = model::PAPER_G_MEAN)]
        g: f64,
        #[arg(long = "omega-c", default_value_t = model::PAPER_CAVITY_FREQ)]
        omega_c: f64,
        /// Emitter frequency (default: resonant with the cavity).
        #[arg(long = "omega-a")]
        omega_a: Option<f64>,
    },
    /// Fit Rabi traces and calibrate MHz per volt.
    Calibrate {
        traces: PathBuf,
        /// Number of lowest amplitudes in the linear fit.
        #[arg(long = "fit-points", default_value_t = pnr::DEFAULT_CALIBRATION_POINTS)]
        fit_points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    /// Prominences corrected for overlap of neighbouring Lorentzian lines.
    Deconvolved,
    Prominence,
    Area,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let dir = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let opts = RunOptions { threads: cli.threads, truncation: cli.truncation };
            let result = experiment::run(&cfg, &opts)?;
            let files = result.write_dir(&cfg, &dir)?;
            let tagged = result.records.iter().filter(|r| r.error.is_some()).count();
            log::info!("{} points, {tagged} tagged", result.records.len());
            let files: Vec<String> = files.iter().map(|f| f.display().to_string()).collect();
            println!("{}", serde_json::to_string_pretty(&json!({ "summary": result.summary, "files": files }))?);
        }
        Command::Analyze { spectrum, chi, omega_w, ladder, min_prominence, tolerance, weighting } => {
            let reference = WitnessDispersive::from_witness(&model::SystemSpec::paper_witness(), model::PAPER_CAVITY_FREQ)?;
            let chi = chi.unwrap_or(reference.chi);
            let omega_w = omega_w.unwrap_or(reference.lamb_shifted_freq * 1e-3);
            let ladder = LineLadder::parse(&ladder)?;
            let opts = AnalysisOptions {
                min_prominence,
                tolerance,
                weighting: match weighting {
                    Weighting::Deconvolved => PeakWeighting::Deconvolved,
                    Weighting::Prominence => PeakWeighting::Prominence,
                    Weighting::Area => PeakWeighting::Area,
                },
                ..Default::default()
            };
            let file = File::open(&spectrum).with_context(|| format!("opening {}", spectrum.display()))?;
            let records = pnr::read_spectra_csv(file)?;
            let mut reports = Vec::new();
            for rec in &records {
                let report = match pnr::analyze_spectrum(&rec.spectrum, chi, omega_w, &ladder, &opts) {
                    Ok(r) => serde_json::to_value(r)?,
                    Err(e) if records.len() == 1 => return Err(e.into()),
                    Err(e) => json!({ "error": e.to_string() }),
                };
                reports.push(json!({ "drive_amp_v": rec.drive_amp_v, "chi_mhz": chi, "omega_w_ghz": omega_w, "report": report }));
            }
            let value = if reports.len() == 1 { reports.pop().unwrap() } else { json!(reports) };
            emit(cli.out, |w| Ok(writeln!(w, "{}", serde_json::to_string_pretty(&value)?)?))?;
        }
        Command::Ladder { n_emitters, n_max, g, omega_c, omega_a } => {
            if n_emitters == 0 {
                bail!("--N must be at least 1");
            }
            let ladder = eigenstructure::eigen_ladder(n_emitters, n_max, omega_c, omega_a.unwrap_or(omega_c), g)?;
            emit(cli.out, |w| Ok(ladder.write_csv(w)?))?;
        }
        Command::Calibrate { traces, fit_points } => {
            let file = File::open(&traces).with_context(|| format!("opening {}", traces.display()))?;
            let report = pnr::calibrate_traces(&pnr::read_traces_csv(file)?, fit_points);
            if report.branches.iter().all(|b| b.calibration.is_none()) {
                bail!("no branch could be calibrated: {:?}", report.branches.iter().map(|b| &b.error).collect::<Vec<_>>());
            }
            emit(cli.out, |w| Ok(writeln!(w, "{}", serde_json::to_string_pretty(&report)?)?))?;
        }
    }
    Ok(())
}

fn emit(out: Option<PathBuf>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            f(&mut file)
        }
        None => f(&mut io::stdout().lock()),
    }
}
