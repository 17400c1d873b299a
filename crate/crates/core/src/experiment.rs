//! Declarative sweeps: a TOML [`ExperimentConfig`] names an experiment kind,
//! the system, and the axes to scan. [`run`] evaluates every grid point on a
//! worker pool and returns rows in grid order, with failures recorded per
//! point instead of aborting the sweep.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{
    build_liouvillian, evolve, solve_steady_state, DisplacementPolicy, PhotonDistribution,
    SolveOptions,
};
use crate::eigenstructure::{self, EigenLadder};
use crate::error::{Error, Result};
use crate::hilbert::DensityState;
use crate::model::{self, EmitterSpec, SystemSpec};
use crate::pnr::{self, AnalysisOptions, LineLadder, PnrSpectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    AvoidedCrossing,
    PnrVsAmplitude,
    PnrVsDriveFreq,
    G2Map,
    Calibration,
    LadderTable,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AvoidedCrossing => "avoided_crossing",
            Self::PnrVsAmplitude => "pnr_vs_amplitude",
            Self::PnrVsDriveFreq => "pnr_vs_drive_freq",
            Self::G2Map => "g2_map",
            Self::Calibration => "calibration",
            Self::LadderTable => "ladder_table",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Mhz,
    /// Multiples of the mean emitter coupling.
    G,
    /// Multiples of the cavity linewidth.
    Kappa,
    /// Source volts, converted with the calibration's MHz-per-volt.
    Volt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Axis {
    Values {
        values: Vec<f64>,
        #[serde(default)]
        unit: Unit,
    },
    Range {
        start: f64,
        stop: f64,
        steps: usize,
        #[serde(default)]
        unit: Unit,
        #[serde(default)]
        spacing: Spacing,
    },
}

impl Axis {
    pub fn unit(&self) -> Unit {
        match self {
            Self::Values { unit, .. } | Self::Range { unit, .. } => *unit,
        }
    }

    /// Grid values in the axis unit.
    pub fn raw_values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Self::Values { values, .. } => values.clone(),
            Self::Range { start, stop, steps, spacing, .. } => {
                if *steps == 0 {
                    return Err(Error::Config("axis steps must be >= 1".into()));
                }
                match spacing {
                    Spacing::Linear => pnr::linear_grid(*start, *stop, *steps),
                    Spacing::Log => {
                        if !(*start > 0.0 && *stop > 0.0) {
                            return Err(Error::Config("log axis needs positive bounds".into()));
                        }
                        pnr::linear_grid(start.ln(), stop.ln(), *steps).into_iter().map(f64::exp).collect()
                    }
                }
            }
        };
        if v.is_empty() {
            return Err(Error::Config("axis has no values".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("axis values must be finite".into()));
        }
        Ok(v)
    }
}

/// A number in MHz, or `{ value, unit }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Mhz(f64),
    WithUnit { value: f64, unit: Unit },
}

impl Quantity {
    fn resolve(&self, ctx: &UnitContext) -> Result<f64> {
        match *self {
            Self::Mhz(v) => Ok(v),
            Self::WithUnit { value, unit } => ctx.to_mhz(value, unit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Emitter minus cavity frequency.
    pub detuning: Option<Axis>,
    /// Drive amplitude `η`.
    pub amplitude: Option<Axis>,
    /// Drive frequency relative to the cavity.
    pub drive_offset: Option<Axis>,
    /// Replaces the emitter list with `N` copies of the first emitter.
    pub n_emitters: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveRule {
    #[default]
    LowerPolariton,
    UpperPolariton,
    /// Bare cavity frequency.
    Cavity,
    /// Cavity plus `drive.offset` or the `drive_offset` axis.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    #[serde(default)]
    pub rule: DriveRule,
    pub amplitude: Option<Quantity>,
    pub offset: Option<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub enabled: bool,
    /// Witness line FWHM, MHz.
    pub linewidth: f64,
    pub points_per_linewidth: f64,
    pub min_prominence: f64,
    /// Gaussian noise standard deviation relative to the spectrum maximum.
    pub noise: f64,
    /// Lines weaker than this fraction of the strongest are left off the grid.
    pub window_floor: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            linewidth: 0.5,
            points_per_linewidth: 10.0,
            min_prominence: 0.01,
            noise: 0.0,
            window_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_state_dim: usize,
    pub tail_tol: f64,
    /// Displace the cavity frame above this many mean-field photons.
    pub displacement_min_photons: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { max_state_dim: d.max_state_dim, tail_tol: d.tail_tol, displacement_min_photons: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub mhz_per_volt: f64,
    #[serde(default = "default_fit_points")]
    pub fit_points: usize,
    /// Trace length in units of the nominal period `1/η`.
    #[serde(default = "default_periods")]
    pub periods: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_fit_points() -> usize {
    pnr::DEFAULT_CALIBRATION_POINTS
}

fn default_periods() -> f64 {
    6.0
}

fn default_samples() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub n_max: usize,
    pub n_emitters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub system: SystemSpec,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub calibration: Option<CalibrationConfig>,
    pub ladder: Option<LadderConfig>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{} requires {what}", self.kind.as_str())))
            }
        };
        let s = &self.sweep;
        for axis in [&s.detuning, &s.amplitude, &s.drive_offset].into_iter().flatten() {
            axis.raw_values()?;
        }
        if let Some(ns) = &s.n_emitters {
            need(!ns.is_empty() && ns.iter().all(|&n| n >= 1), "a nonempty n_emitters list of positive counts")?;
        }
        if [&s.detuning, &s.drive_offset].into_iter().flatten().any(|a| a.unit() == Unit::Volt) {
            return Err(Error::Config("only the amplitude axis may use volts".into()));
        }
        if s.amplitude.as_ref().is_some_and(|a| a.unit() == Unit::Volt) {
            need(self.calibration.is_some(), "a [calibration] table for volt amplitudes")?;
        }
        let has_emitters = !self.system.emitters.is_empty();
        match self.kind {
            ExperimentKind::AvoidedCrossing => {
                need(s.detuning.is_some(), "sweep.detuning")?;
                need(has_emitters, "at least one emitter")?;
            }
            ExperimentKind::PnrVsAmplitude => need(s.amplitude.is_some(), "sweep.amplitude")?,
            ExperimentKind::PnrVsDriveFreq => {
                need(s.drive_offset.is_some(), "sweep.drive_offset")?;
                need(self.drive.amplitude.is_some(), "drive.amplitude")?;
            }
            ExperimentKind::G2Map => {
                need(s.detuning.is_some(), "sweep.detuning")?;
                need(s.amplitude.is_some(), "sweep.amplitude")?;
            }
            ExperimentKind::Calibration => {
                need(self.calibration.is_some(), "a [calibration] table")?;
                need(s.amplitude.is_some(), "sweep.amplitude")?;
                need(has_emitters, "at least one emitter")?;
                let c = self.calibration.as_ref().unwrap();
                need(c.mhz_per_volt > 0.0 && c.samples >= 24 && c.periods > 0.0, "positive calibration settings")?;
            }
            ExperimentKind::LadderTable => {
                need(self.ladder.is_some(), "a [ladder] table")?;
                need(has_emitters || self.ladder.as_ref().unwrap().n_emitters.is_some(), "an emitter count")?;
            }
        }
        if matches!(self.kind, ExperimentKind::PnrVsAmplitude | ExperimentKind::G2Map | ExperimentKind::Calibration)
            && !has_emitters
            && s.n_emitters.is_none()
            && self.drive.rule != DriveRule::Cavity
            && self.drive.rule != DriveRule::Fixed
        {
            return Err(Error::Config("polariton drive rules need emitters".into()));
        }
        if self.drive.rule == DriveRule::Fixed && s.drive_offset.is_none() && self.drive.offset.is_none() {
            return Err(Error::Config("fixed drive rule needs drive.offset or sweep.drive_offset".into()));
        }
        if self.spectrum.enabled && !(self.spectrum.linewidth > 0.0 && self.spectrum.points_per_linewidth >= 5.0) {
            return Err(Error::Config("spectrum needs linewidth > 0 and points_per_linewidth >= 5".into()));
        }
        Ok(())
    }
}

struct UnitContext {
    g: f64,
    kappa: f64,
    mhz_per_volt: Option<f64>,
}

impl UnitContext {
    fn to_mhz(&self, v: f64, unit: Unit) -> Result<f64> {
        match unit {
            Unit::Mhz => Ok(v),
            Unit::G => Ok(v * self.g),
            Unit::Kappa => Ok(v * self.kappa),
            Unit::Volt => self
                .mhz_per_volt
                .map(|k| v * k)
                .ok_or_else(|| Error::Config("volt units need calibration.mhz_per_volt".into())),
        }
    }
}

/// Overrides applied on top of a config, typically from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub truncation: Option<usize>,
}

/// Parameters of one grid point, in MHz.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointParams {
    pub n_emitters: usize,
    pub detuning: f64,
    pub emitter_freq: Option<f64>,
    pub drive_freq: Option<f64>,
    pub drive_amplitude: Option<f64>,
    pub drive_amp_v: Option<f64>,
    pub branch: Option<String>,
}

/// Observables of one grid point; absent values stay `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Observables {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub mean_photons: Option<f64>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub p_multi: Option<f64>,
    pub g2: Option<f64>,
    pub g2_spectrum: Option<f64>,
    pub resolvable: Option<bool>,
    pub residual: Option<f64>,
    pub truncation_tail: Option<f64>,
    pub cavity_truncation: Option<usize>,
    pub displaced: Option<bool>,
    pub rabi_rate: Option<f64>,
    pub rabi_decay: Option<f64>,
    pub fit_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub index: usize,
    pub params: PointParams,
    pub observables: Observables,
    pub distribution: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub drive_amp_v: f64,
    pub branch: String,
    pub time_us: f64,
    pub population: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub kind: ExperimentKind,
    pub records: Vec<SweepRecord>,
    pub spectra: Vec<(usize, PnrSpectrum)>,
    pub traces: Vec<TraceRow>,
    pub ladder: Option<EigenLadder>,
    pub summary: serde_json::Value,
}

const SWEEP_HEADER: [&str; 25] = [
    "index",
    "n_emitters",
    "detuning_mhz",
    "emitter_freq_mhz",
    "drive_freq_mhz",
    "drive_amplitude_mhz",
    "drive_amp_v",
    "branch",
    "lower_mhz",
    "upper_mhz",
    "mean_photons",
    "p0",
    "p1",
    "p_multi",
    "g2",
    "g2_spectrum",
    "resolvable",
    "residual",
    "truncation_tail",
    "cavity_truncation",
    "displaced",
    "rabi_rate_mhz",
    "rabi_decay_mhz",
    "fit_residual",
    "error",
];

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl SweepRecord {
    fn param_cells(&self) -> Vec<String> {
        let p = &self.params;
        vec![
            self.index.to_string(),
            p.n_emitters.to_string(),
            p.detuning.to_string(),
            cell(&p.emitter_freq),
            cell(&p.drive_freq),
            cell(&p.drive_amplitude),
            cell(&p.drive_amp_v),
            cell(&p.branch),
        ]
    }

    fn row(&self) -> Vec<String> {
        let o = &self.observables;
        let mut r = self.param_cells();
        r.extend([
            cell(&o.lower),
            cell(&o.upper),
            cell(&o.mean_photons),
            cell(&o.p0),
            cell(&o.p1),
            cell(&o.p_multi),
            cell(&o.g2),
            cell(&o.g2_spectrum),
            cell(&o.resolvable),
            cell(&o.residual),
            cell(&o.truncation_tail),
            cell(&o.cavity_truncation),
            cell(&o.displaced),
            cell(&o.rabi_rate),
            cell(&o.rabi_decay),
            cell(&o.fit_residual),
            cell(&self.error),
        ]);
        r
    }
}

impl SweepResult {
    pub fn write_sweep_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SWEEP_HEADER)?;
        for r in &self.records {
            out.write_record(r.row())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long format: one row per photon number and point.
    pub fn write_distributions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SWEEP_HEADER[..8].iter().chain(&["n", "probability"]))?;
        for r in &self.records {
            for (n, p) in r.distribution.iter().flatten().enumerate() {
                let mut row = r.param_cells();
                row.extend([n.to_string(), p.to_string()]);
                out.write_record(row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_spectra_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SWEEP_HEADER[..8].iter().chain(&["freq_ghz", "response"]))?;
        for (idx, s) in &self.spectra {
            let params = self.records[*idx].param_cells();
            for (f, v) in s.freq().iter().zip(s.response()) {
                let mut row = params.clone();
                row.extend([f.to_string(), v.to_string()]);
                out.write_record(row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_traces_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["drive_amp_v", "branch", "time_us", "population"])?;
        for t in &self.traces {
            out.write_record([t.drive_amp_v.to_string(), t.branch.clone(), t.time_us.to_string(), t.population.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn report(&self, cfg: &ExperimentConfig) -> serde_json::Value {
        json!({
            "kind": self.kind.as_str(),
            "config": cfg,
            "summary": self.summary,
            "points": self.records,
        })
    }

    /// Writes every table that applies to this kind into `dir`; returns the
    /// files written.
    pub fn write_dir(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut emit = |name: &str, f: &dyn Fn(fs::File) -> Result<()>| -> Result<()> {
            let path = dir.join(name);
            f(fs::File::create(&path)?)?;
            written.push(path);
            Ok(())
        };
        if let Some(ladder) = &self.ladder {
            emit("ladder.csv", &|f| ladder.write_csv(f))?;
        } else {
            emit("sweep.csv", &|f| self.write_sweep_csv(f))?;
        }
        if self.records.iter().any(|r| r.distribution.is_some()) {
            emit("distributions.csv", &|f| self.write_distributions_csv(f))?;
        }
        if !self.spectra.is_empty() {
            emit("spectra.csv", &|f| self.write_spectra_csv(f))?;
        }
        if !self.traces.is_empty() {
            emit("traces.csv", &|f| self.write_traces_csv(f))?;
        }
        emit("report.json", &|mut f| {
            serde_json::to_writer_pretty(&mut f, &self.report(cfg))?;
            writeln!(f)?;
            Ok(())
        })?;
        Ok(written)
    }
}

/// Runs the experiment. Grid points are solved in parallel; the result is in
/// grid order and does not depend on the thread count.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    if let Some(n) = opts.truncation {
        cfg.system.cavity_truncation = n;
        cfg.system.validate()?;
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.kind {
        ExperimentKind::AvoidedCrossing => run_avoided_crossing(&cfg),
        ExperimentKind::PnrVsAmplitude | ExperimentKind::PnrVsDriveFreq | ExperimentKind::G2Map => {
            run_steady_sweep(&cfg)
        }
        ExperimentKind::Calibration => run_calibration(&cfg),
        ExperimentKind::LadderTable => run_ladder_table(&cfg),
    })
}

fn unit_context(cfg: &ExperimentConfig, system: &SystemSpec) -> UnitContext {
    UnitContext {
        g: system.mean_coupling(),
        kappa: system.cavity_decay,
        mhz_per_volt: cfg.calibration.as_ref().map(|c| c.mhz_per_volt),
    }
}

fn axis_mhz(axis: &Option<Axis>, ctx: &UnitContext, default: f64) -> Result<Vec<f64>> {
    match axis {
        None => Ok(vec![default]),
        Some(a) => a.raw_values()?.into_iter().map(|v| ctx.to_mhz(v, a.unit())).collect(),
    }
}

/// System with `n` emitters copied from the first configured one.
fn system_with_emitters(base: &SystemSpec, n: Option<usize>) -> SystemSpec {
    let mut s = base.clone();
    if let Some(n) = n {
        let template = base.emitters.first().cloned().unwrap_or(EmitterSpec {
            freq: base.cavity_freq,
            coupling: model::PAPER_G_SINGLE,
            decay: model::PAPER_GAMMA,
        });
        s.emitters = vec![template; n];
    }
    s
}

/// Lowest and highest single-excitation eigenfrequencies of identical
/// emitters at detuning `delta` with coupling `g`.
fn single_excitation_pair(n: usize, omega_c: f64, delta: f64, g: f64) -> Result<(f64, f64)> {
    let spec = eigenstructure::manifold_hamiltonian(n, 1, 0.0, delta, g)?.spectrum()?;
    Ok((omega_c + spec[0].0, omega_c + spec[spec.len() - 1].0))
}

fn drive_frequency(rule: DriveRule, system: &SystemSpec, delta: f64, offset: Option<f64>) -> Result<f64> {
    let wc = system.cavity_freq;
    let pair = || single_excitation_pair(system.num_emitters(), wc, delta, system.mean_coupling());
    match rule {
        DriveRule::LowerPolariton => Ok(pair()?.0),
        DriveRule::UpperPolariton => Ok(pair()?.1),
        DriveRule::Cavity => Ok(wc),
        DriveRule::Fixed => offset
            .map(|o| wc + o)
            .ok_or_else(|| Error::Config("fixed drive rule needs an offset".into())),
    }
}

fn run_avoided_crossing(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let system = &cfg.system;
    let ctx = unit_context(cfg, system);
    let n = system.num_emitters();
    let g = system.mean_coupling();
    let deltas = axis_mhz(&cfg.sweep.detuning, &ctx, 0.0)?;
    let records: Vec<SweepRecord> = deltas
        .iter()
        .enumerate()
        .map(|(index, &delta)| {
            let params = PointParams {
                n_emitters: n,
                detuning: delta,
                emitter_freq: Some(system.cavity_freq + delta),
                drive_freq: None,
                drive_amplitude: None,
                drive_amp_v: None,
                branch: None,
            };
            let (observables, error) = match single_excitation_pair(n, system.cavity_freq, delta, g) {
                Ok((lo, hi)) => (Observables { lower: Some(lo), upper: Some(hi), ..Default::default() }, None),
                Err(e) => (Observables::default(), Some(e.to_string())),
            };
            SweepRecord { index, params, observables, distribution: None, error }
        })
        .collect();
    let fit = fit_avoided_crossing(&records);
    let summary = match fit {
        Ok((g_col, min_split)) => json!({
            "collective_coupling_mhz": g_col,
            "coupling_mhz": g_col / (n as f64).sqrt(),
            "min_splitting_mhz": min_split,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    Ok(SweepResult { kind: cfg.kind, records, spectra: vec![], traces: vec![], ladder: None, summary })
}

/// Fits `(ω₊ - ω₋)² = Δ² + 4 g_col²` by least squares in `Δ²`; returns
/// `g_col` and the smallest observed splitting.
pub fn fit_avoided_crossing(records: &[SweepRecord]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.params.detuning.powi(2), (r.observables.upper? - r.observables.lower?).powi(2))))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit("avoided crossing needs at least two points".into()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let intercept = if sxx == 0.0 {
        my - mx
    } else {
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
        my - slope * mx
    };
    if !(intercept > 0.0) {
        return Err(Error::Fit("non-positive splitting intercept".into()));
    }
    let min_split = pts.iter().map(|p| p.1.sqrt()).fold(f64::INFINITY, f64::min);
    Ok((0.5 * intercept.sqrt(), min_split))
}

struct SteadyPoint {
    params: PointParams,
    spec: Option<SystemSpec>,
}

fn run_steady_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let counts: Vec<Option<usize>> = match &cfg.sweep.n_emitters {
        Some(ns) => ns.iter().map(|&n| Some(n)).collect(),
        None => vec![None],
    };
    let mut points = Vec::new();
    for n in counts {
        let system = system_with_emitters(&cfg.system, n);
        let ctx = unit_context(cfg, &system);
        let fixed_amp = cfg.drive.amplitude.map(|q| q.resolve(&ctx)).transpose()?;
        let fixed_offset = cfg.drive.offset.map(|q| q.resolve(&ctx)).transpose()?;
        let deltas = axis_mhz(&cfg.sweep.detuning, &ctx, 0.0)?;
        let offsets: Vec<Option<f64>> = match &cfg.sweep.drive_offset {
            Some(_) => axis_mhz(&cfg.sweep.drive_offset, &ctx, 0.0)?.into_iter().map(Some).collect(),
            None => vec![fixed_offset],
        };
        let amps: Vec<(f64, Option<f64>)> = match &cfg.sweep.amplitude {
            Some(a) => {
                let raw = a.raw_values()?;
                raw.iter()
                    .map(|&v| Ok((ctx.to_mhz(v, a.unit())?, (a.unit() == Unit::Volt).then_some(v))))
                    .collect::<Result<_>>()?
            }
            None => vec![(fixed_amp.unwrap_or(0.0), None)],
        };
        for &delta in &deltas {
            for &offset in &offsets {
                let rule = if cfg.sweep.drive_offset.is_some() { DriveRule::Fixed } else { cfg.drive.rule };
                let detuned = system.clone().with_detuning(delta);
                let drive_freq = drive_frequency(rule, &detuned, delta, offset);
                for &(eta, volts) in &amps {
                    let params = PointParams {
                        n_emitters: system.num_emitters(),
                        detuning: delta,
                        emitter_freq: (!system.emitters.is_empty()).then_some(system.cavity_freq + delta),
                        drive_freq: drive_freq.as_ref().ok().copied(),
                        drive_amplitude: Some(eta),
                        drive_amp_v: volts,
                        branch: None,
                    };
                    let spec = drive_freq.as_ref().ok().map(|&f| detuned.clone().with_drive(eta, f));
                    points.push(SteadyPoint { params, spec });
                }
            }
        }
    }
    let solve_opts = SolveOptions {
        max_state_dim: cfg.solver.max_state_dim,
        tail_tol: cfg.solver.tail_tol,
        displacement: DisplacementPolicy::Auto { min_photons: cfg.solver.displacement_min_photons },
        ..Default::default()
    };
    let outcomes: Vec<(SweepRecord, Option<PnrSpectrum>)> = points
        .into_par_iter()
        .enumerate()
        .map(|(index, pt)| {
            let mut rec = SweepRecord {
                index,
                params: pt.params,
                observables: Observables::default(),
                distribution: None,
                error: None,
            };
            let spectrum = match pt.spec {
                None => {
                    rec.error = Some("no drive frequency for this point".into());
                    None
                }
                Some(spec) => match steady_point(cfg, &spec, &solve_opts, index, &mut rec) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("point {index}: {e}");
                        rec.error = Some(e.to_string());
                        None
                    }
                },
            };
            (rec, spectrum)
        })
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut spectra = Vec::new();
    for (rec, s) in outcomes {
        if let Some(s) = s {
            spectra.push((rec.index, s));
        }
        records.push(rec);
    }
    let summary = steady_summary(cfg, &records);
    Ok(SweepResult { kind: cfg.kind, records, spectra, traces: vec![], ladder: None, summary })
}

fn steady_point(
    cfg: &ExperimentConfig,
    spec: &SystemSpec,
    opts: &SolveOptions,
    index: usize,
    rec: &mut SweepRecord,
) -> Result<Option<PnrSpectrum>> {
    let ss = solve_steady_state(spec, opts)?;
    let p = ss.photon_distribution()?;
    let o = &mut rec.observables;
    o.mean_photons = Some(p.mean());
    o.p0 = Some(p.get(0));
    o.p1 = Some(p.get(1));
    o.p_multi = Some(p.at_least(2));
    o.residual = Some(ss.residual);
    o.truncation_tail = Some(ss.diagnostics.truncation_tail);
    o.cavity_truncation = Some(ss.diagnostics.cavity_truncation);
    o.displaced = Some(ss.is_displaced());
    match ss.g2() {
        Ok(g2) => o.g2 = Some(g2),
        Err(Error::UndefinedCorrelation { .. }) => rec.error = Some("undefined: vacuum".into()),
        Err(e) => return Err(e),
    }
    rec.distribution = Some(p.probabilities().to_vec());
    if !cfg.spectrum.enabled || spec.witness.is_none() {
        return Ok(None);
    }
    let wd = spec.witness_dispersive()?;
    let delta = spec.emitters.first().map(|e| e.freq - spec.cavity_freq).unwrap_or(0.0);
    let branch = match cfg.drive.rule {
        DriveRule::UpperPolariton => eigenstructure::Branch::Highest,
        _ => eigenstructure::Branch::Lowest,
    };
    let offsets = branch_offsets(spec.num_emitters(), delta, spec.mean_coupling(), branch, p.len() + 2)?;
    let ladder = LineLadder::Custom(offsets);
    let mut s = synthesize_window(&p, wd.chi, wd.lamb_shifted_freq * 1e-3, &ladder, &cfg.spectrum)?;
    if cfg.spectrum.noise > 0.0 {
        s = add_noise(&s, cfg.spectrum.noise, cfg.seed.unwrap_or(0).wrapping_add(index as u64))?;
    }
    let analysis = AnalysisOptions { min_prominence: cfg.spectrum.min_prominence, ..Default::default() };
    match pnr::analyze_spectrum(&s, wd.chi, wd.lamb_shifted_freq * 1e-3, &ladder, &analysis) {
        Ok(report) => {
            rec.observables.g2_spectrum = report.g2;
            let seen: Vec<usize> = report.peaks.iter().filter_map(|pk| pk.assigned_n).collect();
            rec.observables.resolvable = Some(resolvable(&p, &seen));
        }
        Err(e) => {
            rec.observables.resolvable = Some(false);
            log::debug!("point {index}: spectrum analysis failed: {e}");
        }
    }
    Ok(Some(s))
}

/// Witness line offsets (units of χ) for the given branch at detuning
/// `delta`: `2⟨a†a⟩` of the branch in each manifold, `2n` without emitters.
pub fn branch_offsets(
    n_emitters: usize,
    delta: f64,
    g: f64,
    branch: eigenstructure::Branch,
    n_max: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0];
    for n in 1..=n_max {
        if n_emitters == 0 || g == 0.0 {
            out.push(2.0 * n as f64);
            continue;
        }
        let spec = eigenstructure::manifold_hamiltonian(n_emitters, n, 0.0, delta, g)?.spectrum()?;
        let w = match branch {
            eigenstructure::Branch::Lowest => spec[0].1,
            eigenstructure::Branch::Highest => spec[spec.len() - 1].1,
        };
        out.push(2.0 * w);
    }
    Ok(out)
}

/// Synthesises only the part of the spectrum where lines carry weight.
fn synthesize_window(
    p: &PhotonDistribution,
    chi: f64,
    omega_w: f64,
    ladder: &LineLadder,
    sc: &SpectrumConfig,
) -> Result<PnrSpectrum> {
    let probs = p.probabilities();
    let pmax = probs.iter().cloned().fold(0.0, f64::max);
    let visible: Vec<usize> = (0..probs.len()).filter(|&n| probs[n] >= sc.window_floor * pmax).collect();
    let offsets = ladder.offsets(probs.len() - 1)?;
    let pos: Vec<f64> = visible.iter().map(|&n| offsets[n] * chi).collect();
    let lo = pos.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * chi.abs();
    let hi = pos.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * chi.abs();
    let step = sc.linewidth / sc.points_per_linewidth;
    let points = ((hi - lo) / step).ceil() as usize + 1;
    let grid: Vec<f64> = (0..points).map(|i| omega_w + (lo + step * i as f64) * 1e-3).collect();
    pnr::synthesize_spectrum(p, chi, omega_w, ladder, sc.linewidth, &grid)
}

fn add_noise(s: &PnrSpectrum, rel: f64, seed: u64) -> Result<PnrSpectrum> {
    let top = s.response().iter().cloned().fold(0.0, f64::max);
    let normal = Normal::new(0.0, rel * top).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let response = s.response().iter().map(|v| v + normal.sample(&mut rng)).collect();
    PnrSpectrum::new(s.freq().to_vec(), response, s.meta.clone())
}

/// Share of `⟨n⟩` or `⟨n(n-1)⟩` that undetected lines may carry before a
/// point counts as unresolvable.
pub const HIDDEN_SHARE: f64 = 0.05;

/// Whether the spectrum route saw what `g⁽²⁾` depends on: photon numbers
/// without a detected line carry at most [`HIDDEN_SHARE`] of `⟨n⟩` and of
/// `⟨n(n-1)⟩`.
pub fn resolvable(p: &PhotonDistribution, detected: &[usize]) -> bool {
    let (mut n1, mut n2, mut h1, mut h2) = (0.0, 0.0, 0.0, 0.0);
    for (n, &w) in p.probabilities().iter().enumerate() {
        let hidden = !detected.contains(&n);
        let n = n as f64;
        n1 += n * w;
        n2 += n * (n - 1.0) * w;
        if hidden {
            h1 += n * w;
            h2 += n * (n - 1.0) * w;
        }
    }
    n1 > 0.0 && h1 <= HIDDEN_SHARE * n1 && h2 <= HIDDEN_SHARE * n2
}

fn steady_summary(cfg: &ExperimentConfig, records: &[SweepRecord]) -> serde_json::Value {
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let mut summary = json!({ "points": records.len(), "tagged": failed });
    match cfg.kind {
        ExperimentKind::PnrVsDriveFreq => {
            // strongest single-photon response on each side of the cavity
            let side = |below: bool| {
                records
                    .iter()
                    .filter(|r| r.params.drive_freq.is_some_and(|f| (f < cfg.system.cavity_freq) == below))
                    .filter_map(|r| Some((r.params.drive_freq? - cfg.system.cavity_freq, r.observables.p1?)))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(off, p1)| json!({ "offset_mhz": off, "p1": p1 }))
            };
            summary["lower_peak"] = json!(side(true));
            summary["upper_peak"] = json!(side(false));
        }
        ExperimentKind::G2Map => {
            let pairs: Vec<f64> = records
                .iter()
                .filter(|r| r.observables.resolvable == Some(true))
                .filter_map(|r| Some((r.observables.g2_spectrum? - r.observables.g2?).abs() / r.observables.g2?))
                .collect();
            summary["resolvable_points"] = json!(pairs.len());
            summary["max_route_disagreement"] = json!(pairs.iter().cloned().fold(None, |m: Option<f64>, v| Some(
                m.map_or(v, |m| m.max(v))
            )));
        }
        _ => {}
    }
    summary
}

fn run_calibration(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let cal = cfg.calibration.as_ref().unwrap();
    let system = system_with_emitters(&cfg.system, cfg.sweep.n_emitters.as_ref().and_then(|v| v.first().copied()));
    let ctx = unit_context(cfg, &system);
    let axis = cfg.sweep.amplitude.as_ref().unwrap();
    let raw = axis.raw_values()?;
    let volts: Vec<f64> = match axis.unit() {
        Unit::Volt => raw,
        u => raw.iter().map(|&v| Ok(ctx.to_mhz(v, u)? / cal.mhz_per_volt)).collect::<Result<_>>()?,
    };
    let delta = axis_mhz(&cfg.sweep.detuning, &ctx, 0.0)?[0];
    let detuned = system.clone().with_detuning(delta);
    let branches = [("lower", DriveRule::LowerPolariton), ("upper", DriveRule::UpperPolariton)];
    let mut jobs = Vec::new();
    for (label, rule) in branches {
        for &v in &volts {
            jobs.push((label, rule, v));
        }
    }
    let results: Vec<(SweepRecord, Vec<TraceRow>)> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(index, (label, rule, v))| {
            let eta = v * cal.mhz_per_volt;
            let freq = drive_frequency(rule, &detuned, delta, None);
            let mut rec = SweepRecord {
                index,
                params: PointParams {
                    n_emitters: detuned.num_emitters(),
                    detuning: delta,
                    emitter_freq: Some(detuned.cavity_freq + delta),
                    drive_freq: freq.as_ref().ok().copied(),
                    drive_amplitude: Some(eta),
                    drive_amp_v: Some(v),
                    branch: Some(label.to_string()),
                },
                observables: Observables::default(),
                distribution: None,
                error: None,
            };
            let mut rows = Vec::new();
            let outcome = freq.and_then(|f| {
                let (times, pop) = rabi_trace(&detuned.clone().with_drive(eta, f), cal.periods / eta, cal.samples)?;
                rows = times
                    .iter()
                    .zip(&pop)
                    .map(|(&t, &p)| TraceRow { drive_amp_v: v, branch: label.into(), time_us: t, population: p })
                    .collect();
                pnr::fit_rabi(&times, &pop)
            });
            match outcome {
                Ok(fit) => {
                    rec.observables.rabi_rate = Some(fit.rabi_rate);
                    rec.observables.rabi_decay = Some(fit.decay_rate);
                    rec.observables.fit_residual = Some(fit.residual);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            (rec, rows)
        })
        .collect();
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in results {
        records.push(r);
        traces.extend(t);
    }
    let summary = calibration_summary(&records, cal);
    Ok(SweepResult { kind: cfg.kind, records, spectra: vec![], traces, ladder: None, summary })
}

/// Excited-state population `1 - ⟨0,g…|ρ|0,g…⟩` after switching on the
/// drive at `t = 0`, sampled at `samples` evenly spaced times over
/// `duration` μs.
pub fn rabi_trace(spec: &SystemSpec, duration: f64, samples: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(duration > 0.0) || samples < 2 {
        return Err(Error::Config("trace needs positive duration and at least two samples".into()));
    }
    let l = build_liouvillian(&model::build_rotating_frame(spec)?, &model::build_collapse_set(spec)?)?;
    let ground = vec![0; l.space().num_subsystems()];
    let rho0 = DensityState::basis(l.space().clone(), &ground)?;
    let times = pnr::linear_grid(0.0, duration, samples);
    let states = evolve(&rho0, &l, &times)?;
    let pop = states.iter().map(|s| 1.0 - s.matrix()[(0, 0)].re).collect();
    Ok((times, pop))
}

/// Per-branch slopes and the matrix-element sum rule from fitted rates.
pub fn calibration_summary(records: &[SweepRecord], cal: &CalibrationConfig) -> serde_json::Value {
    let mut out = json!({ "mhz_per_volt": cal.mhz_per_volt });
    let mut slopes = Vec::new();
    for label in ["lower", "upper"] {
        let (v, r): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|rec| rec.params.branch.as_deref() == Some(label))
            .filter_map(|rec| Some((rec.params.drive_amp_v?, rec.observables.rabi_rate?)))
            .unzip();
        match pnr::calibrate_drive_with(&v, &r, cal.fit_points) {
            Ok(c) => {
                out[label] = json!({
                    "slope_mhz_per_volt": c.slope,
                    "slope_ratio": c.slope / cal.mhz_per_volt,
                    "used": c.used,
                    "residuals": c.residuals,
                });
                slopes.push(c.slope);
            }
            Err(e) => out[label] = json!({ "error": e.to_string() }),
        }
    }
    if let [lo, hi] = slopes[..] {
        let (m_lo, m_hi) = (pnr::matrix_element_from_rate(lo), pnr::matrix_element_from_rate(hi));
        out["sum_rule_ratio"] = json!((m_lo + m_hi) / cal.mhz_per_volt);
        out["quadrature_ratio"] = json!((m_lo * m_lo + m_hi * m_hi).sqrt() / cal.mhz_per_volt);
    }
    out
}

fn run_ladder_table(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let lc = cfg.ladder.as_ref().unwrap();
    let s = &cfg.system;
    let n = lc.n_emitters.unwrap_or(s.num_emitters());
    let g = if s.emitters.is_empty() { model::PAPER_G_SINGLE } else { s.mean_coupling() };
    let wa = s.emitters.first().map(|e| e.freq).unwrap_or(s.cavity_freq);
    let ladder = eigenstructure::eigen_ladder(n, lc.n_max, s.cavity_freq, wa, g)?;
    let summary = json!({ "n_emitters": n, "n_max": lc.n_max, "entries": ladder.entries().len() });
    Ok(SweepResult { kind: cfg.kind, records: vec![], spectra: vec![], traces: vec![], ladder: Some(ladder), summary })
}
