//! Photon-number-resolved witness spectroscopy: forward synthesis of witness
//! spectra from `P(n)`, the inverse peak → distribution pipeline, and Rabi
//! fits for drive calibration.

use std::io::{Read, Write};

use faer::linalg::solvers::Solve;
use faer::Mat;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{gm_from_distribution, PhotonDistribution};
use crate::eigenstructure;
use crate::error::{Error, Result};

/// Minimum grid points per linewidth accepted by the synthesiser.
pub const MIN_POINTS_PER_LINEWIDTH: f64 = 5.0;
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.05;
/// Assignment window around each predicted line, in units of `|χ|`.
pub const DEFAULT_ASSIGN_TOLERANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumSource {
    #[default]
    Simulated,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub drive_amplitude: Option<f64>,
    pub detuning: Option<f64>,
    pub n_emitters: Option<usize>,
    pub source: SpectrumSource,
}

/// Witness response on an ascending frequency grid (GHz).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PnrSpectrum {
    freq: Vec<f64>,
    response: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl PnrSpectrum {
    pub fn new(freq: Vec<f64>, response: Vec<f64>, meta: SpectrumMeta) -> Result<Self> {
        if freq.len() != response.len() {
            return Err(Error::DimensionMismatch { expected: freq.len(), found: response.len() });
        }
        if freq.len() < 3 {
            return Err(Error::InvalidSpectrum("need at least three points".into()));
        }
        if freq.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSpectrum("frequency grid must be strictly ascending".into()));
        }
        if freq.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpectrum("non-finite value".into()));
        }
        Ok(Self { freq, response, meta })
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    /// Flips the sign when the dominant excursion from the median points
    /// down, as phase-type responses can.
    pub fn oriented_upward(mut self) -> Self {
        let med = median(&self.response);
        let max = self.response.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.response.iter().cloned().fold(f64::INFINITY, f64::min);
        if med - min > max - med {
            self.response.iter_mut().for_each(|v| *v = -*v);
        }
        self
    }

    /// Same spectrum with the response multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { response: self.response.iter().map(|v| v * k).collect(), ..self.clone() }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["freq_ghz", "response"])?;
        for (f, r) in self.freq.iter().zip(&self.response) {
            out.write_record([format!("{f:.9}"), format!("{r:.12e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One spectrum from a file, with its drive amplitude for long-format input.
#[derive(Debug, Clone)]
pub struct SpectrumRecord {
    pub drive_amp_v: Option<f64>,
    pub spectrum: PnrSpectrum,
}

/// Reads `freq_ghz,response` or `freq_ghz,drive_amp_v,response` CSV.
/// Long-format files yield one spectrum per amplitude, in order of first
/// appearance; every spectrum is oriented so peaks point up.
pub fn read_spectra_csv<R: Read>(r: R) -> Result<Vec<SpectrumRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (fi, ri) = match (col("freq_ghz"), col("response")) {
        (Some(f), Some(r)) => (f, r),
        _ => {
            return Err(Error::InvalidSpectrum(format!(
                "expected columns freq_ghz,response[,drive_amp_v], found {:?}",
                headers.iter().collect::<Vec<_>>()
            )))
        }
    };
    let ai = col("drive_amp_v");
    let mut groups: Vec<(Option<f64>, Vec<(f64, f64)>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidSpectrum(format!("bad number in row {:?}", rec.position())))
        };
        let amp = ai.map(&parse).transpose()?;
        let point = (parse(fi)?, parse(ri)?);
        match groups.iter_mut().find(|(a, _)| *a == amp) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((amp, vec![point])),
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidSpectrum("no data rows".into()));
    }
    groups
        .into_iter()
        .map(|(amp, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let meta = SpectrumMeta { drive_amplitude: amp, source: SpectrumSource::Measured, ..Default::default() };
            let spectrum = PnrSpectrum::new(
                pts.iter().map(|p| p.0).collect(),
                pts.iter().map(|p| p.1).collect(),
                meta,
            )?
            .oriented_upward();
            Ok(SpectrumRecord { drive_amp_v: amp, spectrum })
        })
        .collect()
}

/// Witness line positions relative to the Lamb-shifted witness frequency, in
/// units of `χ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineLadder {
    /// Far-detuned emitters: `2nχ`.
    Dispersive,
    /// `N` resonant emitters driven into the lowest branch: `2⟨a†a⟩_n χ`.
    Resonant { n_emitters: usize },
    Custom(Vec<f64>),
}

impl LineLadder {
    /// Offsets for `n = 0..=n_max`.
    pub fn offsets(&self, n_max: usize) -> Result<Vec<f64>> {
        match self {
            Self::Dispersive => Ok((0..=n_max).map(|n| 2.0 * n as f64).collect()),
            Self::Resonant { n_emitters } => Ok(eigenstructure::lowest_branch_weights(*n_emitters, n_max)?
                .into_iter()
                .map(|w| 2.0 * w)
                .collect()),
            Self::Custom(v) => {
                if v.len() <= n_max {
                    return Err(Error::InvalidSpec(format!("custom ladder has {} lines, need {}", v.len(), n_max + 1)));
                }
                Ok(v[..=n_max].to_vec())
            }
        }
    }

    /// Parses `dispersive` or `resonant:N`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "dispersive" => Ok(Self::Dispersive),
            Some(("resonant", n)) => n
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .map(|n_emitters| Self::Resonant { n_emitters })
                .ok_or_else(|| Error::InvalidSpec(format!("bad emitter count in ladder {s:?}"))),
            _ => Err(Error::InvalidSpec(format!("unknown ladder {s:?}; use dispersive or resonant:N"))),
        }
    }

    fn max_lines(&self) -> usize {
        match self {
            Self::Custom(v) => v.len().saturating_sub(1),
            _ => 64,
        }
    }
}

/// Lorentzian with unit peak height.
fn lorentzian(x: f64, center: f64, fwhm: f64) -> f64 {
    let hw = 0.5 * fwhm;
    hw * hw / ((x - center).powi(2) + hw * hw)
}

/// `S(ω) = Σ P(n) L(ω; ω̃_w + shift(n)·χ, linewidth)` on `grid` (GHz).
/// `chi` and `linewidth` are in MHz.
pub fn synthesize_spectrum(
    p: &PhotonDistribution,
    chi: f64,
    omega_w_tilde: f64,
    ladder: &LineLadder,
    linewidth: f64,
    grid: &[f64],
) -> Result<PnrSpectrum> {
    if !(linewidth > 0.0) {
        return Err(Error::InvalidSpec(format!("linewidth must be positive, got {linewidth}")));
    }
    let max_step = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max) * 1e3;
    let ppl = linewidth / max_step;
    if !(ppl >= MIN_POINTS_PER_LINEWIDTH) {
        return Err(Error::Resolution { points_per_linewidth: ppl });
    }
    let offsets = ladder.offsets(p.len() - 1)?;
    let centers: Vec<f64> = offsets.iter().map(|o| omega_w_tilde + o * chi * 1e-3).collect();
    let fwhm = linewidth * 1e-3;
    let response = grid
        .iter()
        .map(|&x| {
            p.probabilities()
                .iter()
                .zip(&centers)
                .filter(|(&w, _)| w > 0.0)
                .map(|(&w, &c)| w * lorentzian(x, c, fwhm))
                .sum()
        })
        .collect();
    PnrSpectrum::new(grid.to_vec(), response, SpectrumMeta::default())
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![start];
    }
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|i| start + step * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    /// GHz, refined by a parabola through the three top samples.
    pub position: f64,
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
    /// Weight used for `P(n)`; the prominence unless a crosstalk
    /// correction replaced it.
    pub weight: f64,
    /// Integrated baseline-subtracted response between the peak's bases.
    pub area: f64,
    pub assigned_n: Option<usize>,
    pub spurious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
    pub baseline: f64,
}

impl PeakSet {
    pub fn assigned(&self) -> impl Iterator<Item = &Peak> {
        self.peaks.iter().filter(|p| p.assigned_n.is_some() && !p.spurious)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

/// Local maxima of the median-subtracted response whose topographic
/// prominence is at least `min_prominence` times the largest response.
pub fn find_peaks(s: &PnrSpectrum, min_prominence: f64) -> Result<PeakSet> {
    let baseline = median(&s.response);
    let y: Vec<f64> = s.response.iter().map(|v| v - baseline).collect();
    let top = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) {
        return Err(Error::NoPeaks);
    }
    let threshold = min_prominence * top;
    let n = y.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i - 1] < y[i] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let idx = (i + j) / 2;
                let (prominence, lo, hi) = prominence_at(&y, idx);
                if prominence >= threshold && prominence > 0.0 {
                    peaks.push(Peak {
                        position: refine(&s.freq, &y, idx),
                        index: idx,
                        height: y[idx],
                        prominence,
                        weight: prominence,
                        area: trapezoid(&s.freq[lo..=hi], &y[lo..=hi]),
                        assigned_n: None,
                        spurious: false,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    if peaks.is_empty() {
        return Err(Error::NoPeaks);
    }
    Ok(PeakSet { peaks, baseline })
}

/// Prominence and the indices of the left and right bases.
fn prominence_at(y: &[f64], idx: usize) -> (f64, usize, usize) {
    let h = y[idx];
    let (mut lo, mut lmin) = (idx, h);
    let mut k = idx;
    while k > 0 {
        k -= 1;
        if y[k] > h {
            break;
        }
        if y[k] < lmin {
            lmin = y[k];
            lo = k;
        }
    }
    let (mut hi, mut rmin) = (idx, h);
    for (k, &v) in y.iter().enumerate().skip(idx + 1) {
        if v > h {
            break;
        }
        if v < rmin {
            rmin = v;
            hi = k;
        }
    }
    (h - lmin.max(rmin), lo, hi)
}

fn refine(x: &[f64], y: &[f64], i: usize) -> f64 {
    let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if curv >= 0.0 {
        return x1;
    }
    // vertex of the interpolating parabola
    let v = 0.5 * (x0 + x1) - d01 / (2.0 * curv);
    v.clamp(x0, x2)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1])).sum()
}

/// Assigns each peak to the nearest predicted line `ω̃_w + offset(n)·χ`;
/// peaks further than `tolerance·|χ|` from every line are flagged spurious.
pub fn assign_photon_numbers(
    peaks: &PeakSet,
    omega_w_tilde: f64,
    chi: f64,
    ladder: &LineLadder,
    tolerance: f64,
) -> Result<PeakSet> {
    if chi == 0.0 {
        return Err(Error::InvalidSpec("chi must be nonzero".into()));
    }
    let window = tolerance * chi.abs() * 1e-3;
    let reach = peaks
        .peaks
        .iter()
        .map(|p| ((p.position - omega_w_tilde) / (chi * 1e-3)).abs())
        .fold(0.0, f64::max);
    // enough lines to pass the furthest peak; offsets grow at least as fast as n
    let n_max = ((reach + tolerance).ceil() as usize + 1).min(ladder.max_lines());
    let lines: Vec<f64> = ladder.offsets(n_max)?.iter().map(|o| omega_w_tilde + o * chi * 1e-3).collect();
    let mut out = peaks.clone();
    let mut owner: Vec<Option<f64>> = vec![None; lines.len()];
    for peak in out.peaks.iter_mut() {
        let (n, dist) = lines
            .iter()
            .enumerate()
            .map(|(n, &c)| (n, (peak.position - c).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if dist > window {
            peak.assigned_n = None;
            peak.spurious = true;
            continue;
        }
        if let Some(first) = owner[n] {
            return Err(Error::AmbiguousAssignment { n, first, second: peak.position });
        }
        owner[n] = Some(peak.position);
        peak.assigned_n = Some(n);
        peak.spurious = false;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakWeighting {
    /// Topographic prominence of each line as measured.
    Prominence,
    /// Amplitudes of a Lorentzian model whose prominences reproduce the
    /// measured ones. Equals `Prominence` for isolated lines and removes
    /// the saddle bias of neighbouring lines a few linewidths apart.
    #[default]
    Deconvolved,
    /// Area between the peak's bases. Overlapping Lorentzian tails are
    /// shared unevenly between neighbours, so this biases weak lines.
    Area,
}

/// `P(n) = W_n / Σ W` over assigned peaks, zero for unobserved `n`.
pub fn distribution_from_peaks(peaks: &PeakSet) -> Result<PhotonDistribution> {
    distribution_from_peaks_weighted(peaks, PeakWeighting::Prominence)
}

pub fn distribution_from_peaks_weighted(peaks: &PeakSet, weighting: PeakWeighting) -> Result<PhotonDistribution> {
    let assigned: Vec<&Peak> = peaks.assigned().collect();
    if assigned.is_empty() {
        return Err(Error::NoAssignedPeaks);
    }
    let n_max = assigned.iter().filter_map(|p| p.assigned_n).max().unwrap();
    let mut w = vec![0.0; n_max + 1];
    for p in assigned {
        w[p.assigned_n.unwrap()] = match weighting {
            PeakWeighting::Prominence => p.prominence,
            PeakWeighting::Deconvolved => p.weight,
            PeakWeighting::Area => p.area.max(0.0),
        };
    }
    PhotonDistribution::from_weights(w)
}

/// Full width at half maximum of the peak at `idx`, in the units of `x`.
fn half_width(x: &[f64], y: &[f64], idx: usize) -> Option<f64> {
    let half = 0.5 * y[idx];
    let cross = |k: usize, j: usize| x[k] + (half - y[k]) * (x[j] - x[k]) / (y[j] - y[k]);
    let left = (1..=idx).rev().find(|&k| y[k - 1] < half).map(|k| x[idx] - cross(k - 1, k));
    let right = (idx..x.len() - 1).find(|&k| y[k + 1] < half).map(|k| cross(k, k + 1) - x[idx]);
    match (left, right) {
        (Some(l), Some(r)) => Some(l + r),
        (Some(h), None) | (None, Some(h)) => Some(2.0 * h),
        (None, None) => None,
    }
}

fn climb(y: &[f64], mut i: usize) -> usize {
    loop {
        if i + 1 < y.len() && y[i + 1] > y[i] {
            i += 1;
        } else if i > 0 && y[i - 1] > y[i] {
            i -= 1;
        } else {
            return i;
        }
    }
}

/// Replaces each peak's `weight` by the amplitude of a Lorentzian line such
/// that the sum of all lines has the measured topographic prominences.
/// The common linewidth is fitted alongside from the tallest peak. Returns
/// the linewidth (in the spectrum's frequency unit), or `None` with the
/// weights left at the raw prominences when the model does not converge.
pub fn deconvolve_prominences(s: &PnrSpectrum, peaks: &mut PeakSet) -> Option<f64> {
    let x = &s.freq;
    let y: Vec<f64> = s.response.iter().map(|v| v - peaks.baseline).collect();
    let tallest = peaks.peaks.iter().max_by(|a, b| a.height.total_cmp(&b.height))?.index;
    let target_width = half_width(x, &y, tallest)?;
    let centers: Vec<f64> = peaks.peaks.iter().map(|p| p.position).collect();
    let target: Vec<f64> = peaks.peaks.iter().map(|p| p.prominence).collect();
    let mut amp = target.clone();
    let mut fwhm = target_width;
    let mut model = vec![0.0; x.len()];
    for _ in 0..500 {
        for (m, &xi) in model.iter_mut().zip(x) {
            *m = amp.iter().zip(&centers).map(|(a, &c)| a * lorentzian(xi, c, fwhm)).sum();
        }
        let mut change: f64 = 0.0;
        for (j, p) in peaks.peaks.iter().enumerate() {
            let top = climb(&model, p.index);
            if top.abs_diff(p.index) > 2 {
                return None;
            }
            let (prom, _, _) = prominence_at(&model, top);
            if !(prom > 0.0) {
                return None;
            }
            let ratio = target[j] / prom;
            amp[j] *= ratio;
            change = change.max((ratio - 1.0).abs());
        }
        let width_ratio = target_width / half_width(x, &model, climb(&model, tallest))?;
        fwhm *= width_ratio;
        change = change.max((width_ratio - 1.0).abs());
        if change < 1e-9 {
            for (p, a) in peaks.peaks.iter_mut().zip(amp) {
                p.weight = a;
            }
            return Some(fwhm);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub min_prominence: f64,
    pub tolerance: f64,
    pub weighting: PeakWeighting,
    /// Highest correlation order reported.
    pub max_order: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            min_prominence: DEFAULT_MIN_PROMINENCE,
            tolerance: DEFAULT_ASSIGN_TOLERANCE,
            weighting: PeakWeighting::Deconvolved,
            max_order: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationValue {
    pub m: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisDiagnostics {
    pub n_peaks: usize,
    pub n_assigned: usize,
    pub n_spurious: usize,
    pub baseline: f64,
    pub min_prominence: f64,
    /// Fitted FWHM used by the crosstalk correction.
    pub linewidth_mhz: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub peaks: Vec<Peak>,
    #[serde(rename = "P")]
    pub distribution: Vec<f64>,
    pub g2: Option<f64>,
    pub gm: Vec<CorrelationValue>,
    pub diagnostics: AnalysisDiagnostics,
}

/// Full inverse pipeline. Vacuum spectra produce `g2 = None` with a warning
/// rather than an error.
pub fn analyze_spectrum(
    s: &PnrSpectrum,
    chi: f64,
    omega_w_tilde: f64,
    ladder: &LineLadder,
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    let found = find_peaks(s, opts.min_prominence)?;
    let mut peaks = assign_photon_numbers(&found, omega_w_tilde, chi, ladder, opts.tolerance)?;
    let mut warnings = Vec::new();
    let mut linewidth = None;
    if opts.weighting == PeakWeighting::Deconvolved {
        linewidth = deconvolve_prominences(s, &mut peaks);
        if linewidth.is_none() {
            warnings.push("crosstalk correction did not converge; using raw prominences".to_string());
        }
    }
    let p = distribution_from_peaks_weighted(&peaks, opts.weighting)?;
    let gm: Vec<CorrelationValue> = (2..=opts.max_order.max(2))
        .map(|m| match gm_from_distribution(&p, m) {
            Ok(v) => CorrelationValue { m, value: Some(v) },
            Err(e) => {
                if m == 2 {
                    warnings.push(e.to_string());
                }
                CorrelationValue { m, value: None }
            }
        })
        .collect();
    let n_spurious = peaks.peaks.iter().filter(|p| p.spurious).count();
    Ok(AnalysisReport {
        g2: gm[0].value,
        distribution: p.probabilities().to_vec(),
        gm,
        diagnostics: AnalysisDiagnostics {
            n_peaks: peaks.peaks.len(),
            n_assigned: peaks.peaks.len() - n_spurious,
            n_spurious,
            baseline: peaks.baseline,
            min_prominence: opts.min_prominence,
            linewidth_mhz: linewidth.map(|w| w * 1e3),
            warnings,
        },
        peaks: peaks.peaks,
    })
}

/// `g⁽²⁾(0)` of the distribution recovered from a spectrum.
pub fn g2_from_spectrum(
    s: &PnrSpectrum,
    chi: f64,
    omega_w_tilde: f64,
    ladder: &LineLadder,
    opts: &AnalysisOptions,
) -> Result<f64> {
    let report = analyze_spectrum(s, chi, omega_w_tilde, ladder, opts)?;
    gm_from_distribution(&PhotonDistribution::new(report.distribution)?, 2)
}

/// Least-squares fit of `A e^{-Γt} cos(2πft + φ) + c` (t in μs, f and Γ in
/// MHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RabiFit {
    pub rabi_rate: f64,
    pub decay_rate: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub iterations: usize,
}

impl RabiFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-self.decay_rate * t).exp() * (std::f64::consts::TAU * self.rabi_rate * t + self.phase).cos()
            + self.offset
    }
}

const LM_MAX_ITERS: usize = 500;

pub fn fit_rabi(times: &[f64], population: &[f64]) -> Result<RabiFit> {
    let n = times.len();
    if n != population.len() {
        return Err(Error::DimensionMismatch { expected: n, found: population.len() });
    }
    if n < 24 {
        return Err(Error::UnderSampled(format!("{n} samples")));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Fit("times must be strictly ascending".into()));
    }
    let span = times[n - 1] - times[0];
    let dt = span / (n - 1) as f64;
    if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Fit("times must be evenly spaced".into()));
    }
    let mean = population.iter().sum::<f64>() / n as f64;

    // dominant component of the zero-padded spectrum
    let padded = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = population.iter().map(|&p| Complex::new(p - mean, 0.0)).collect();
    buf.resize(padded, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let (k, peak) = buf[1..padded / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, *c))
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .unwrap();
    let f0 = k as f64 / (padded as f64 * dt);
    if f0 * span < 3.0 {
        return Err(Error::UnderSampled(format!("{:.2} periods in trace", f0 * span)));
    }
    if 1.0 / (f0 * dt) < 8.0 {
        return Err(Error::UnderSampled(format!("{:.2} samples per period", 1.0 / (f0 * dt))));
    }
    let phi0 = peak.arg() - std::f64::consts::TAU * f0 * times[0];
    let (lo, hi) = population.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut theta = [0.5 * (hi - lo), 0.0, f0, phi0, mean];

    let model = |th: &[f64; 5], t: f64| {
        th[0] * (-th[1] * t).exp() * (std::f64::consts::TAU * th[2] * t + th[3]).cos() + th[4]
    };
    let cost = |th: &[f64; 5]| -> f64 { times.iter().zip(population).map(|(&t, &p)| (p - model(th, t)).powi(2)).sum() };

    let mut lambda = 1e-3;
    let mut c = cost(&theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < LM_MAX_ITERS {
        iterations += 1;
        let mut jtj = Mat::<f64>::zeros(5, 5);
        let mut jtr = Mat::<f64>::zeros(5, 1);
        for (&t, &p) in times.iter().zip(population) {
            let env = (-theta[1] * t).exp();
            let arg = std::f64::consts::TAU * theta[2] * t + theta[3];
            let (s, co) = arg.sin_cos();
            let jac = [
                env * co,
                -t * theta[0] * env * co,
                -theta[0] * env * s * std::f64::consts::TAU * t,
                -theta[0] * env * s,
                1.0,
            ];
            let r = p - model(&theta, t);
            for a in 0..5 {
                jtr[(a, 0)] += jac[a] * r;
                for b in 0..5 {
                    jtj[(a, b)] += jac[a] * jac[b];
                }
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut m = jtj.clone();
            for a in 0..5 {
                m[(a, a)] += lambda * jtj[(a, a)].max(1e-300);
            }
            let step = m.partial_piv_lu().solve(&jtr);
            let trial: [f64; 5] = std::array::from_fn(|a| theta[a] + step[(a, 0)]);
            let ct = cost(&trial);
            if ct.is_finite() && ct <= c {
                let rel = (c - ct) / c.max(1e-300);
                let small_step = (0..5).all(|a| step[(a, 0)].abs() <= 1e-12 * theta[a].abs().max(1e-9));
                theta = trial;
                c = ct;
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                if rel < 1e-15 || small_step || c < 1e-28 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step left at any damping: a minimum within precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!("no convergence after {LM_MAX_ITERS} iterations")));
    }
    let [mut amp, decay, mut freq, mut phase, offset] = theta;
    if freq < 0.0 {
        freq = -freq;
        phase = -phase;
    }
    if amp < 0.0 {
        amp = -amp;
        phase += std::f64::consts::PI;
    }
    phase = phase.rem_euclid(std::f64::consts::TAU);
    Ok(RabiFit {
        rabi_rate: freq,
        decay_rate: decay,
        amplitude: amp,
        phase,
        offset,
        residual: (c / n as f64).sqrt(),
        iterations,
    })
}

/// Proportionality between Rabi rate and drive amplitude.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriveCalibration {
    /// MHz per volt.
    pub slope: f64,
    /// Number of lowest-amplitude points used in the fit.
    pub used: usize,
    /// `rate - slope·amplitude` for every input point, in input order.
    pub residuals: Vec<f64>,
}

pub const DEFAULT_CALIBRATION_POINTS: usize = 4;

/// Least-squares line through the origin over the lowest `use_points`
/// amplitudes; stronger drives leave the linear regime.
pub fn calibrate_drive(amplitudes: &[f64], rates: &[f64]) -> Result<DriveCalibration> {
    calibrate_drive_with(amplitudes, rates, DEFAULT_CALIBRATION_POINTS)
}

pub fn calibrate_drive_with(amplitudes: &[f64], rates: &[f64], use_points: usize) -> Result<DriveCalibration> {
    if amplitudes.len() != rates.len() {
        return Err(Error::DimensionMismatch { expected: amplitudes.len(), found: rates.len() });
    }
    let mut order: Vec<usize> = (0..amplitudes.len())
        .filter(|&i| amplitudes[i].is_finite() && rates[i].is_finite())
        .collect();
    order.sort_by(|&a, &b| amplitudes[a].total_cmp(&amplitudes[b]));
    order.truncate(use_points);
    if order.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 usable points, have {}", order.len())));
    }
    let sxx: f64 = order.iter().map(|&i| amplitudes[i] * amplitudes[i]).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all amplitudes are zero".into()));
    }
    let sxy: f64 = order.iter().map(|&i| amplitudes[i] * rates[i]).sum();
    let slope = sxy / sxx;
    Ok(DriveCalibration {
        slope,
        used: order.len(),
        residuals: amplitudes.iter().zip(rates).map(|(a, r)| r - slope * a).collect(),
    })
}

/// Population trace at one drive amplitude, optionally tagged with the
/// polariton branch that was driven.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiTrace {
    pub branch: Option<String>,
    pub drive_amp_v: f64,
    pub times: Vec<f64>,
    pub population: Vec<f64>,
}

/// Reads `drive_amp_v,time_us,population[,branch]` CSV, one trace per
/// (branch, amplitude) in order of first appearance.
pub fn read_traces_csv<R: Read>(r: R) -> Result<Vec<RabiTrace>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ai, ti, pi) = match (col("drive_amp_v"), col("time_us"), col("population")) {
        (Some(a), Some(t), Some(p)) => (a, t, p),
        _ => return Err(Error::Fit("expected columns drive_amp_v,time_us,population[,branch]".into())),
    };
    let bi = col("branch");
    let mut traces: Vec<RabiTrace> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Fit(format!("bad number in row {:?}", rec.position())))
        };
        let branch = bi.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()).map(str::to_string);
        let (amp, t, p) = (num(ai)?, num(ti)?, num(pi)?);
        match traces.iter_mut().find(|tr| tr.branch == branch && tr.drive_amp_v == amp) {
            Some(tr) => {
                tr.times.push(t);
                tr.population.push(p);
            }
            None => traces.push(RabiTrace { branch, drive_amp_v: amp, times: vec![t], population: vec![p] }),
        }
    }
    if traces.is_empty() {
        return Err(Error::Fit("no trace rows".into()));
    }
    for tr in &mut traces {
        let mut idx: Vec<usize> = (0..tr.times.len()).collect();
        idx.sort_by(|&a, &b| tr.times[a].total_cmp(&tr.times[b]));
        tr.times = idx.iter().map(|&i| tr.times[i]).collect();
        tr.population = idx.iter().map(|&i| tr.population[i]).collect();
    }
    Ok(traces)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceFit {
    pub branch: Option<String>,
    pub drive_amp_v: f64,
    pub fit: Option<RabiFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchCalibration {
    pub branch: Option<String>,
    pub calibration: Option<DriveCalibration>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub fits: Vec<TraceFit>,
    pub branches: Vec<BranchCalibration>,
}

/// Fits every trace, then calibrates each branch from its successful fits.
pub fn calibrate_traces(traces: &[RabiTrace], use_points: usize) -> CalibrationReport {
    let fits: Vec<TraceFit> = traces
        .iter()
        .map(|tr| {
            let (fit, error) = match fit_rabi(&tr.times, &tr.population) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            TraceFit { branch: tr.branch.clone(), drive_amp_v: tr.drive_amp_v, fit, error }
        })
        .collect();
    let mut names: Vec<Option<String>> = Vec::new();
    for f in &fits {
        if !names.contains(&f.branch) {
            names.push(f.branch.clone());
        }
    }
    let branches = names
        .into_iter()
        .map(|branch| {
            let (v, r): (Vec<f64>, Vec<f64>) = fits
                .iter()
                .filter(|f| f.branch == branch)
                .filter_map(|f| Some((f.drive_amp_v, f.fit?.rabi_rate)))
                .unzip();
            match calibrate_drive_with(&v, &r, use_points) {
                Ok(c) => BranchCalibration { branch, calibration: Some(c), error: None },
                Err(e) => BranchCalibration { branch, calibration: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    CalibrationReport { fits, branches }
}

/// Drive matrix element between vacuum and a polariton implied by a Rabi
/// rate: a resonant two-level Rabi rate is twice the coupling.
pub fn matrix_element_from_rate(rate: f64) -> f64 {
    0.5 * rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const CHI: f64 = 5.5;
    const WW: f64 = 5.3;

    fn grid_around(span_chi: f64, step_mhz: f64) -> Vec<f64> {
        let lo = WW - 2.0 * CHI * 1e-3;
        let hi = WW + span_chi * CHI * 1e-3;
        let points = ((hi - lo) / (step_mhz * 1e-3)).round() as usize + 1;
        linear_grid(lo, hi, points)
    }

    #[test]
    fn vacuum_spectrum_single_line_at_witness() {
        let p = PhotonDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        let grid = grid_around(6.0, 0.01);
        let s = synthesize_spectrum(&p, CHI, WW, &LineLadder::Dispersive, 0.1, &grid).unwrap();
        let peaks = find_peaks(&s, 0.05).unwrap();
        assert_eq!(peaks.peaks.len(), 1);
        assert!((peaks.peaks[0].position - WW).abs() <= 0.01e-3);
    }

    #[test]
    fn dispersive_lines_spaced_two_chi() {
        let p = PhotonDistribution::new(vec![0.3, 0.25, 0.2, 0.15, 0.1]).unwrap();
        let grid = grid_around(10.0, 0.01);
        let s = synthesize_spectrum(&p, CHI, WW, &LineLadder::Dispersive, 0.1, &grid).unwrap();
        let peaks = find_peaks(&s, 0.05).unwrap();
        assert_eq!(peaks.peaks.len(), 5);
        for w in peaks.peaks.windows(2) {
            assert_abs_diff_eq!((w[1].position - w[0].position) * 1e3, 2.0 * CHI, epsilon = 0.01);
        }
    }

    #[test]
    fn resonant_blockaded_lines_spaced_chi() {
        let p = PhotonDistribution::new(vec![0.8, 0.2]).unwrap();
        let grid = grid_around(4.0, 0.01);
        for n_e in 1..=3 {
            let s = synthesize_spectrum(&p, CHI, WW, &LineLadder::Resonant { n_emitters: n_e }, 0.1, &grid).unwrap();
            let peaks = find_peaks(&s, 0.05).unwrap();
            assert_eq!(peaks.peaks.len(), 2);
            assert_abs_diff_eq!((peaks.peaks[1].position - peaks.peaks[0].position) * 1e3, CHI, epsilon = 0.01);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let p = PhotonDistribution::new(vec![1.0]).unwrap();
        let grid = grid_around(2.0, 0.05);
        assert!(matches!(
            synthesize_spectrum(&p, CHI, WW, &LineLadder::Dispersive, 0.1, &grid),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn equal_lorentzians_have_equal_prominence() {
        let grid = linear_grid(0.0, 1.0, 2001);
        let fwhm = 0.02;
        let resp: Vec<f64> =
            grid.iter().map(|&x| lorentzian(x, 0.4, fwhm) + lorentzian(x, 0.4 + 10.0 * fwhm, fwhm)).collect();
        let s = PnrSpectrum::new(grid, resp, SpectrumMeta::default()).unwrap();
        let peaks = find_peaks(&s, 0.05).unwrap();
        assert_eq!(peaks.peaks.len(), 2);
        let (a, b) = (peaks.peaks[0].prominence, peaks.peaks[1].prominence);
        assert!((a - b).abs() / a.max(b) < 0.01);
    }

    #[test]
    fn poisson_prominences_follow_distribution() {
        let p = PhotonDistribution::poisson(1.5, 4).unwrap();
        let fwhm = 0.2 * 2.0 * CHI;
        let grid = grid_around(12.0, fwhm / 20.0);
        let s = synthesize_spectrum(&p, CHI, WW, &LineLadder::Dispersive, fwhm, &grid).unwrap();
        let peaks = find_peaks(&s, 0.01).unwrap();
        assert_eq!(peaks.peaks.len(), 5);
        let mut by_p: Vec<usize> = (0..5).collect();
        by_p.sort_by(|&a, &b| p.get(a).total_cmp(&p.get(b)));
        let mut by_prom: Vec<usize> = (0..5).collect();
        by_prom.sort_by(|&a, &b| peaks.peaks[a].prominence.total_cmp(&peaks.peaks[b].prominence));
        assert_eq!(by_p, by_prom);
    }

    #[test]
    fn prominence_matches_topographic_definition() {
        // small peak on the flank of a larger one: prominence is measured
        // from the saddle, not from zero
        let y = [0.0, 1.0, 0.5, 0.7, 0.2, 3.0, 0.0];
        let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
        let s = PnrSpectrum::new(x, y.to_vec(), SpectrumMeta::default()).unwrap();
        let peaks = find_peaks(&s, 0.0).unwrap();
        let base = median(&y);
        let proms: Vec<f64> = peaks.peaks.iter().map(|p| p.prominence).collect();
        assert_eq!(peaks.peaks.len(), 3);
        assert_abs_diff_eq!(proms[0], 1.0 - 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(proms[1], 0.7 - 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(proms[2], 3.0 - 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(peaks.peaks[2].height, 3.0 - base, epsilon = 1e-12);
    }

    #[test]
    fn flat_spectrum_has_no_peaks() {
        let s = PnrSpectrum::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4], SpectrumMeta::default()).unwrap();
        assert!(matches!(find_peaks(&s, 0.05), Err(Error::NoPeaks)));
    }

    fn peak_at(pos: f64) -> Peak {
        Peak { position: pos, index: 0, height: 1.0, prominence: 1.0, weight: 1.0, area: 1.0, assigned_n: None, spurious: false }
    }

    #[test]
    fn assignment_examples() {
        let set = PeakSet {
            peaks: [0.0, 2.0, 4.0].iter().map(|k| peak_at(WW + k * CHI * 1e-3)).collect(),
            baseline: 0.0,
        };
        let a = assign_photon_numbers(&set, WW, CHI, &LineLadder::Dispersive, 0.3).unwrap();
        let ns: Vec<_> = a.peaks.iter().map(|p| p.assigned_n).collect();
        assert_eq!(ns, vec![Some(0), Some(1), Some(2)]);

        let set = PeakSet { peaks: vec![peak_at(WW + CHI * 1e-3)], baseline: 0.0 };
        let a = assign_photon_numbers(&set, WW, CHI, &LineLadder::Resonant { n_emitters: 1 }, 0.3).unwrap();
        assert_eq!(a.peaks[0].assigned_n, Some(1));

        // device witness with its Lamb shift, and the unexplained 5.35 GHz feature
        let ww = 5.313 + CHI * 1e-3;
        let set = PeakSet { peaks: vec![peak_at(ww), peak_at(5.35)], baseline: 0.0 };
        let a = assign_photon_numbers(&set, ww, CHI, &LineLadder::Resonant { n_emitters: 1 }, 0.3).unwrap();
        assert!(!a.peaks[0].spurious);
        assert!(a.peaks[1].spurious && a.peaks[1].assigned_n.is_none());
        let p = distribution_from_peaks(&a).unwrap();
        assert_eq!(p.probabilities(), &[1.0]);

        let set = PeakSet { peaks: vec![peak_at(WW), peak_at(WW + 0.2 * CHI * 1e-3)], baseline: 0.0 };
        assert!(matches!(
            assign_photon_numbers(&set, WW, CHI, &LineLadder::Dispersive, 0.3),
            Err(Error::AmbiguousAssignment { n: 0, .. })
        ));
    }

    #[test]
    fn distribution_examples() {
        let mut set = PeakSet { peaks: vec![peak_at(WW), peak_at(WW + 2.0 * CHI * 1e-3)], baseline: 0.0 };
        set.peaks[0].assigned_n = Some(0);
        set.peaks[1].assigned_n = Some(1);
        assert_eq!(distribution_from_peaks(&set).unwrap().probabilities(), &[0.5, 0.5]);
        set.peaks.iter_mut().for_each(|p| p.spurious = true);
        assert!(matches!(distribution_from_peaks(&set), Err(Error::NoAssignedPeaks)));
    }

    fn roundtrip(p: &PhotonDistribution, spacing_fwhm: f64) -> (PhotonDistribution, f64) {
        let fwhm = 2.0 * CHI / spacing_fwhm;
        let n = p.len() as f64;
        let grid = grid_around(2.0 * n + 2.0, fwhm / 10.0);
        let s = synthesize_spectrum(p, CHI, WW, &LineLadder::Dispersive, fwhm, &grid).unwrap();
        let opts = AnalysisOptions { min_prominence: 0.005, ..Default::default() };
        let report = analyze_spectrum(&s, CHI, WW, &LineLadder::Dispersive, &opts).unwrap();
        let q = PhotonDistribution::new(report.distribution.clone()).unwrap();
        (q, report.g2.unwrap_or(f64::NAN))
    }

    #[test]
    fn roundtrip_recovers_distribution() {
        let p = PhotonDistribution::from_weights(vec![0.35, 0.3, 0.2, 0.1, 0.05]).unwrap();
        let (q, g2) = roundtrip(&p, 5.0);
        assert!(p.max_abs_diff(&q) < 0.02, "{:?}", q.probabilities());
        let g2_true = gm_from_distribution(&p, 2).unwrap();
        assert!((g2 - g2_true).abs() / g2_true < 0.05);
    }

    #[test]
    fn poisson_eight_lines_g2() {
        let p = PhotonDistribution::poisson(1.0, 7).unwrap();
        let (_, g2) = roundtrip(&p, 8.0);
        assert!((g2 - 1.0).abs() < 0.05, "{g2}");
    }

    #[test]
    fn blockaded_spectrum_g2_is_zero_and_vacuum_undefined() {
        let set = |w: &[f64]| PeakSet {
            peaks: w
                .iter()
                .enumerate()
                .map(|(n, &w)| Peak { prominence: w, weight: w, assigned_n: Some(n), ..peak_at(WW + n as f64 * CHI * 1e-3) })
                .collect(),
            baseline: 0.0,
        };
        let p = distribution_from_peaks(&set(&[0.8, 0.2])).unwrap();
        assert_eq!(gm_from_distribution(&p, 2).unwrap(), 0.0);
        let grid = grid_around(4.0, 0.01);
        let vac = synthesize_spectrum(
            &PhotonDistribution::new(vec![1.0]).unwrap(),
            CHI,
            WW,
            &LineLadder::Dispersive,
            0.1,
            &grid,
        )
        .unwrap();
        assert!(matches!(
            g2_from_spectrum(&vac, CHI, WW, &LineLadder::Dispersive, &AnalysisOptions::default()),
            Err(Error::UndefinedCorrelation { .. })
        ));
        let report = analyze_spectrum(&vac, CHI, WW, &LineLadder::Dispersive, &AnalysisOptions::default()).unwrap();
        assert!(report.g2.is_none());
        assert_eq!(report.diagnostics.warnings.len(), 1);
    }

    #[test]
    fn scaling_response_leaves_distribution_unchanged() {
        let p = PhotonDistribution::from_weights(vec![0.5, 0.3, 0.2]).unwrap();
        let grid = grid_around(8.0, 0.01);
        let s = synthesize_spectrum(&p, CHI, WW, &LineLadder::Dispersive, 0.1, &grid).unwrap();
        let opts = AnalysisOptions::default();
        let a = analyze_spectrum(&s, CHI, WW, &LineLadder::Dispersive, &opts).unwrap();
        for k in [1e-3, 7.0, 1e4] {
            let b = analyze_spectrum(&s.scaled(k), CHI, WW, &LineLadder::Dispersive, &opts).unwrap();
            for (x, y) in a.distribution.iter().zip(&b.distribution) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn csv_roundtrip_and_orientation() {
        let p = PhotonDistribution::from_weights(vec![0.6, 0.4]).unwrap();
        let grid = grid_around(4.0, 0.01);
        let s = synthesize_spectrum(&p, CHI, WW, &LineLadder::Dispersive, 0.1, &grid).unwrap();
        let mut buf = Vec::new();
        s.scaled(-1.0).write_csv(&mut buf).unwrap();
        let recs = read_spectra_csv(buf.as_slice()).unwrap();
        assert_eq!(recs.len(), 1);
        let back = &recs[0].spectrum;
        assert_eq!(back.meta.source, SpectrumSource::Measured);
        assert!(back.response().iter().zip(s.response()).all(|(a, b)| (a - b).abs() < 1e-9));

        let long = "freq_ghz,drive_amp_v,response\n5.30,0.1,1\n5.29,0.1,0\n5.31,0.1,0\n5.30,0.2,2\n5.29,0.2,0\n5.31,0.2,0\n";
        let recs = read_spectra_csv(long.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].drive_amp_v, Some(0.2));
        assert_eq!(recs[0].spectrum.freq(), &[5.29, 5.30, 5.31]);
        assert!(read_spectra_csv("f,r\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn ladder_parsing() {
        assert_eq!(LineLadder::parse("dispersive").unwrap(), LineLadder::Dispersive);
        assert_eq!(LineLadder::parse("resonant:3").unwrap(), LineLadder::Resonant { n_emitters: 3 });
        assert!(LineLadder::parse("resonant:0").is_err());
        assert!(LineLadder::parse("foo").is_err());
        let off = LineLadder::Resonant { n_emitters: 1 }.offsets(2).unwrap();
        assert_abs_diff_eq!(off[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(off[2], 3.0, epsilon = 1e-12);
    }

    fn damped(f: f64, gamma: f64, dt: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let y = t
            .iter()
            .map(|&t| 0.4 * (-gamma * t).exp() * (std::f64::consts::TAU * f * t + 0.3).cos() + 0.5)
            .collect();
        (t, y)
    }

    #[test]
    fn fit_recovers_damped_cosine() {
        let (t, y) = damped(1.0, 0.05, 0.02, 400);
        let fit = fit_rabi(&t, &y).unwrap();
        assert!((fit.rabi_rate - 1.0).abs() < 1e-3);
        assert_abs_diff_eq!(fit.decay_rate, 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.amplitude, 0.4, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.offset, 0.5, epsilon = 1e-6);
        assert!(fit.residual < 1e-8);
    }

    #[test]
    fn fit_pure_cosine() {
        let (t, y) = damped(0.37, 0.0, 0.05, 300);
        let fit = fit_rabi(&t, &y).unwrap();
        assert!((fit.rabi_rate - 0.37).abs() < 1.0 / (300.0 * 0.05));
        assert_abs_diff_eq!(fit.rabi_rate, 0.37, epsilon = 1e-8);
    }

    #[test]
    fn fit_is_stable_under_denser_sampling() {
        let (t1, y1) = damped(0.8, 0.1, 0.04, 250);
        let (t2, y2) = damped(0.8, 0.1, 0.02, 499);
        let a = fit_rabi(&t1, &y1).unwrap().rabi_rate;
        let b = fit_rabi(&t2, &y2).unwrap().rabi_rate;
        assert!((a - b).abs() / a < 1e-4);
    }

    #[test]
    fn fit_rejects_undersampled_traces() {
        let (t, y) = damped(1.0, 0.0, 0.02, 100);
        assert!(matches!(fit_rabi(&t, &y), Err(Error::UnderSampled(_))));
        let (t, y) = damped(1.0, 0.0, 0.15, 60);
        assert!(matches!(fit_rabi(&t, &y), Err(Error::UnderSampled(_))));
    }

    #[test]
    fn trace_file_calibration() {
        let mut text = String::from("drive_amp_v,time_us,population,branch\n");
        for (b, k) in [("lower", 1.0), ("upper", 1.1)] {
            for v in [0.5, 1.0, 1.5] {
                let (t, y) = damped(k * v, 0.02, 0.02, 400);
                // rows deliberately reversed in time
                for (t, y) in t.iter().zip(&y).rev() {
                    text += &format!("{v},{t},{y},{b}\n");
                }
            }
        }
        let traces = read_traces_csv(text.as_bytes()).unwrap();
        assert_eq!(traces.len(), 6);
        assert!(traces[0].times.windows(2).all(|w| w[1] > w[0]));
        let rep = calibrate_traces(&traces, 4);
        assert_eq!(rep.branches.len(), 2);
        assert_abs_diff_eq!(rep.branches[0].calibration.as_ref().unwrap().slope, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.branches[1].calibration.as_ref().unwrap().slope, 1.1, epsilon = 1e-6);
        assert!(read_traces_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn calibration_examples() {
        let cal = calibrate_drive(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(cal.slope, 1.0, epsilon = 1e-15);
        let sat = calibrate_drive(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 3.2]).unwrap();
        assert_abs_diff_eq!(sat.slope, 1.0, epsilon = 1e-15);
        assert_eq!(sat.used, 4);
        assert_abs_diff_eq!(sat.residuals[4], -1.8, epsilon = 1e-12);
        assert!(calibrate_drive(&[1.0], &[1.0]).is_err());
    }
}
