//! Physical Hamiltonians and collapse operators built from a declarative
//! [`SystemSpec`].
//!
//! All frequencies and rates are ordinary frequencies in MHz. No factor of
//! 2π is applied here; the Liouvillian assembly in [`crate::dynamics`] does
//! that once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, CompositeSpace, OperatorMatrix, DEFAULT_DIMENSION_CAP};
use crate::sparse::SparseMatrix;
use crate::C64;

/// Cavity frequency of the reference device, MHz.
pub const PAPER_CAVITY_FREQ: f64 = 5230.0;
/// Coupling of the single-emitter (Jaynes-Cummings) runs, MHz.
pub const PAPER_G_SINGLE: f64 = 13.7;
/// Mean coupling used for the N = 2, 3 runs, MHz.
pub const PAPER_G_MEAN: f64 = 13.2;
pub const PAPER_KAPPA: f64 = 0.1;
pub const PAPER_GAMMA: f64 = 0.1;
pub const PAPER_WITNESS_FREQ: f64 = 5313.0;
pub const PAPER_WITNESS_COUPLING: f64 = 17.0;
pub const PAPER_WITNESS_ANHARMONICITY: f64 = 227.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    pub freq: f64,
    pub coupling: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub amplitude: f64,
    pub freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessSpec {
    pub freq: f64,
    pub coupling: f64,
    pub anharmonicity: f64,
    #[serde(default = "default_witness_decay")]
    pub decay: f64,
    #[serde(default = "default_witness_levels")]
    pub levels: usize,
    /// Couple the witness into the simulated dynamics. When false the
    /// witness only enters through the synthesized spectrum.
    #[serde(default)]
    pub in_simulation: bool,
}

fn default_witness_decay() -> f64 {
    0.1
}

fn default_witness_levels() -> usize {
    3
}

fn default_truncation() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub cavity_freq: f64,
    #[serde(default)]
    pub emitters: Vec<EmitterSpec>,
    pub cavity_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessSpec>,
    #[serde(default = "default_truncation")]
    pub cavity_truncation: usize,
}

impl SystemSpec {
    /// `n` identical emitters at `emitter_freq`, no drive, no witness.
    pub fn tavis_cummings(
        n: usize,
        cavity_freq: f64,
        emitter_freq: f64,
        coupling: f64,
        cavity_decay: f64,
        emitter_decay: f64,
    ) -> Self {
        Self {
            cavity_freq,
            emitters: vec![EmitterSpec { freq: emitter_freq, coupling, decay: emitter_decay }; n],
            cavity_decay,
            drive: None,
            witness: None,
            cavity_truncation: default_truncation(),
        }
    }

    /// Reference device: `n` emitters resonant with the cavity, reference
    /// couplings and linewidths.
    pub fn paper_device(n: usize) -> Self {
        let g = if n <= 1 { PAPER_G_SINGLE } else { PAPER_G_MEAN };
        Self::tavis_cummings(n, PAPER_CAVITY_FREQ, PAPER_CAVITY_FREQ, g, PAPER_KAPPA, PAPER_GAMMA)
    }

    pub fn paper_witness() -> WitnessSpec {
        WitnessSpec {
            freq: PAPER_WITNESS_FREQ,
            coupling: PAPER_WITNESS_COUPLING,
            anharmonicity: PAPER_WITNESS_ANHARMONICITY,
            decay: default_witness_decay(),
            levels: 3,
            in_simulation: false,
        }
    }

    pub fn with_drive(mut self, amplitude: f64, freq: f64) -> Self {
        self.drive = Some(DriveSpec { amplitude, freq });
        self
    }

    pub fn with_witness(mut self, witness: WitnessSpec) -> Self {
        self.witness = Some(witness);
        self
    }

    pub fn with_truncation(mut self, n_max: usize) -> Self {
        self.cavity_truncation = n_max;
        self
    }

    /// Sets every emitter to `cavity_freq + detuning`.
    pub fn with_detuning(mut self, detuning: f64) -> Self {
        for e in &mut self.emitters {
            e.freq = self.cavity_freq + detuning;
        }
        self
    }

    pub fn num_emitters(&self) -> usize {
        self.emitters.len()
    }

    pub fn mean_coupling(&self) -> f64 {
        if self.emitters.is_empty() {
            return 0.0;
        }
        self.emitters.iter().map(|e| e.coupling).sum::<f64>() / self.emitters.len() as f64
    }

    pub fn witness_in_simulation(&self) -> Option<&WitnessSpec> {
        self.witness.as_ref().filter(|w| w.in_simulation)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.cavity_freq > 0.0) {
            return bad(format!("cavity_freq must be > 0, got {}", self.cavity_freq));
        }
        if !(self.cavity_decay >= 0.0) {
            return bad(format!("cavity_decay must be >= 0, got {}", self.cavity_decay));
        }
        if self.cavity_truncation < 1 {
            return bad("cavity_truncation must be >= 1".into());
        }
        for (i, e) in self.emitters.iter().enumerate() {
            if !(e.freq > 0.0) {
                return bad(format!("emitter {i}: freq must be > 0"));
            }
            if !(e.coupling >= 0.0) || !(e.decay >= 0.0) {
                return bad(format!("emitter {i}: coupling and decay must be >= 0"));
            }
        }
        if let Some(d) = &self.drive {
            if !(d.amplitude >= 0.0) || !(d.freq > 0.0) {
                return bad("drive amplitude must be >= 0 and freq > 0".into());
            }
        }
        if let Some(w) = &self.witness {
            if !(w.freq > 0.0) || !(w.coupling >= 0.0) || !(w.decay >= 0.0) {
                return bad("witness freq must be > 0, coupling and decay >= 0".into());
            }
            match w.levels {
                2 => {}
                3 if w.anharmonicity > 0.0 => {}
                3 => return bad("3-level witness needs anharmonicity > 0".into()),
                l => return bad(format!("witness levels must be 2 or 3, got {l}")),
            }
        }
        Ok(())
    }

    /// Composite space: cavity, emitters, then the witness when it is part
    /// of the simulation.
    pub fn space(&self) -> Result<CompositeSpace> {
        let mut dims = vec![self.cavity_truncation + 1];
        dims.extend(std::iter::repeat(2).take(self.emitters.len()));
        if let Some(w) = self.witness_in_simulation() {
            dims.push(w.levels);
        }
        CompositeSpace::with_cap(dims, DEFAULT_DIMENSION_CAP)
    }

    pub fn witness_index(&self) -> Option<usize> {
        self.witness_in_simulation().map(|_| 1 + self.emitters.len())
    }

    /// χ and Lamb-shifted frequency of the witness, from its parameters.
    pub fn witness_dispersive(&self) -> Result<WitnessDispersive> {
        let w = self.witness.as_ref().ok_or(Error::MissingWitness)?;
        WitnessDispersive::from_witness(w, self.cavity_freq)
    }
}

/// Dispersive parameters of a witness qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessDispersive {
    pub chi: f64,
    pub chi_tls: f64,
    /// `ω_w + g_w²/Δ_w`, MHz.
    pub lamb_shifted_freq: f64,
}

impl WitnessDispersive {
    pub fn from_witness(w: &WitnessSpec, cavity_freq: f64) -> Result<Self> {
        let delta = w.freq - cavity_freq;
        let chi_tls = chi_tls(w.coupling, delta)?;
        let chi = if w.levels == 2 { chi_tls } else { chi(w.coupling, delta, w.anharmonicity)? };
        Ok(Self { chi, chi_tls, lamb_shifted_freq: w.freq + chi_tls })
    }
}

/// Transmon dispersive shift `g_w² / (Δ_w (1 - Δ_w/α))`.
pub fn chi(g_w: f64, delta_w: f64, alpha: f64) -> Result<f64> {
    if delta_w == 0.0 {
        return Err(Error::SingularParameter("witness detuning is zero"));
    }
    if delta_w == alpha {
        return Err(Error::SingularParameter("witness detuning equals the anharmonicity"));
    }
    if alpha.is_infinite() {
        return chi_tls(g_w, delta_w);
    }
    Ok(g_w * g_w / (delta_w * (1.0 - delta_w / alpha)))
}

/// Two-level dispersive shift `g_w² / Δ_w`.
pub fn chi_tls(g_w: f64, delta_w: f64) -> Result<f64> {
    if delta_w == 0.0 {
        return Err(Error::SingularParameter("witness detuning is zero"));
    }
    Ok(g_w * g_w / delta_w)
}

/// Embedded building-block operators for a spec.
struct Ladder {
    space: CompositeSpace,
    a: OperatorMatrix,
    sigma: Vec<OperatorMatrix>,
    witness: Option<OperatorMatrix>,
}

impl Ladder {
    fn new(spec: &SystemSpec, displacement: C64) -> Result<Self> {
        spec.validate()?;
        let space = spec.space()?;
        let mut a = hilbert::embed(&hilbert::annihilation(spec.cavity_truncation + 1)?, 0, &space)?;
        if displacement != C64::new(0.0, 0.0) {
            a = a.try_add(&OperatorMatrix::identity(&space).scale(displacement))?;
        }
        let sm = hilbert::lowering_emitter();
        let sigma = (0..spec.emitters.len())
            .map(|i| hilbert::embed(&sm, 1 + i, &space))
            .collect::<Result<Vec<_>>>()?;
        let witness = match (spec.witness_in_simulation(), spec.witness_index()) {
            (Some(w), Some(idx)) => Some(hilbert::embed(&hilbert::annihilation(w.levels)?, idx, &space)?),
            _ => None,
        };
        Ok(Self { space, a, sigma, witness })
    }

    fn number(op: &OperatorMatrix) -> Result<OperatorMatrix> {
        op.adjoint().try_mul(op)
    }

    /// `x† y + y† x`
    fn exchange(x: &OperatorMatrix, y: &OperatorMatrix) -> Result<OperatorMatrix> {
        x.adjoint().try_mul(y)?.try_add(&y.adjoint().try_mul(x)?)
    }

    /// Hamiltonian with every frequency shifted down by `frame`, plus the
    /// drive term `η (a + a†)` when `drive` is given.
    fn hamiltonian(&self, spec: &SystemSpec, frame: f64, drive: Option<f64>) -> Result<OperatorMatrix> {
        let mut h = Self::number(&self.a)?.scale(spec.cavity_freq - frame);
        for (e, s) in spec.emitters.iter().zip(&self.sigma) {
            h = h.try_add(&Self::number(s)?.scale(e.freq - frame))?;
            h = h.try_add(&Self::exchange(&self.a, s)?.scale(e.coupling))?;
        }
        if let (Some(w), Some(b)) = (spec.witness_in_simulation(), &self.witness) {
            let nb = Self::number(b)?;
            h = h.try_add(&nb.scale(w.freq - frame))?;
            if w.levels == 3 {
                let kerr = b.adjoint().try_mul(&b.adjoint())?.try_mul(b)?.try_mul(b)?;
                h = h.try_add(&kerr.scale(-0.5 * w.anharmonicity))?;
            }
            h = h.try_add(&Self::exchange(&self.a, b)?.scale(w.coupling))?;
        }
        if let Some(eta) = drive {
            h = h.try_add(&self.a.try_add(&self.a.adjoint())?.scale(eta))?;
        }
        OperatorMatrix::hermitian(self.space.clone(), h.matrix().clone())
    }
}

/// Lab-frame Tavis-Cummings Hamiltonian (plus witness terms when the
/// witness is part of the simulation).
pub fn build_tc_hamiltonian(spec: &SystemSpec) -> Result<OperatorMatrix> {
    Ladder::new(spec, C64::new(0.0, 0.0))?.hamiltonian(spec, 0.0, None)
}

/// Hamiltonian in the frame rotating at the drive frequency, generated by
/// the total excitation number.
pub fn build_rotating_frame(spec: &SystemSpec) -> Result<OperatorMatrix> {
    build_rotating_frame_displaced(spec, C64::new(0.0, 0.0))
}

/// As [`build_rotating_frame`] with the cavity operator replaced by
/// `a + α`, i.e. expressed in the frame displaced by the coherent amplitude
/// `α`.
pub fn build_rotating_frame_displaced(spec: &SystemSpec, alpha: C64) -> Result<OperatorMatrix> {
    let drive = spec.drive.as_ref().ok_or(Error::MissingDrive)?;
    Ladder::new(spec, alpha)?.hamiltonian(spec, drive.freq, Some(drive.amplitude))
}

/// `a†a + Σ σ⁺σ⁻ (+ b†b)`.
pub fn total_excitation(spec: &SystemSpec) -> Result<OperatorMatrix> {
    let l = Ladder::new(spec, C64::new(0.0, 0.0))?;
    let mut n = Ladder::number(&l.a)?;
    for s in &l.sigma {
        n = n.try_add(&Ladder::number(s)?)?;
    }
    if let Some(b) = &l.witness {
        n = n.try_add(&Ladder::number(b)?)?;
    }
    Ok(n)
}

/// Cavity lowering operator embedded in the spec's space.
pub fn cavity_lowering(spec: &SystemSpec) -> Result<OperatorMatrix> {
    Ok(Ladder::new(spec, C64::new(0.0, 0.0))?.a)
}

/// Lowering operator of emitter `i` embedded in the spec's space.
pub fn emitter_lowering(spec: &SystemSpec, i: usize) -> Result<OperatorMatrix> {
    let l = Ladder::new(spec, C64::new(0.0, 0.0))?;
    l.sigma
        .into_iter()
        .nth(i)
        .ok_or(Error::IndexOutOfRange { index: i, len: spec.emitters.len() })
}

/// Dispersive witness Hamiltonian
/// `ω_c a†a + (ω̃_w + 2χ a†a) σ⁺σ⁻` on the `[cavity, witness]` space.
pub fn build_dispersive(spec: &SystemSpec) -> Result<OperatorMatrix> {
    spec.validate()?;
    let disp = spec.witness_dispersive()?;
    let dim = spec.cavity_truncation + 1;
    let space = CompositeSpace::new(vec![dim, 2])?;
    let diag: Vec<C64> = (0..2 * dim)
        .map(|k| {
            let (n, e) = ((k / 2) as f64, (k % 2) as f64);
            C64::new(spec.cavity_freq * n + (disp.lamb_shifted_freq + 2.0 * disp.chi * n) * e, 0.0)
        })
        .collect();
    OperatorMatrix::hermitian(space, SparseMatrix::diagonal(&diag))
}

/// Collapse operators, each pre-scaled by `√rate` (rates in MHz).
#[derive(Debug, Clone)]
pub struct CollapseSet {
    space: CompositeSpace,
    ops: Vec<OperatorMatrix>,
}

impl CollapseSet {
    pub fn new(space: CompositeSpace, ops: Vec<OperatorMatrix>) -> Result<Self> {
        if ops.iter().any(|o| o.space() != &space) {
            return Err(Error::SpaceMismatch);
        }
        Ok(Self { space, ops })
    }

    pub fn empty(space: CompositeSpace) -> Self {
        Self { space, ops: Vec::new() }
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn operators(&self) -> &[OperatorMatrix] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

pub fn build_collapse_set(spec: &SystemSpec) -> Result<CollapseSet> {
    build_collapse_set_displaced(spec, C64::new(0.0, 0.0))
}

/// Collapse set with the cavity jump operator `√κ (a + α)`.
pub fn build_collapse_set_displaced(spec: &SystemSpec, alpha: C64) -> Result<CollapseSet> {
    let l = Ladder::new(spec, alpha)?;
    let mut ops = Vec::new();
    if spec.cavity_decay > 0.0 {
        ops.push(l.a.scale(spec.cavity_decay.sqrt()));
    }
    for (e, s) in spec.emitters.iter().zip(&l.sigma) {
        if e.decay > 0.0 {
            ops.push(s.scale(e.decay.sqrt()));
        }
    }
    if let (Some(w), Some(b)) = (spec.witness_in_simulation(), &l.witness) {
        if w.decay > 0.0 {
            ops.push(b.scale(w.decay.sqrt()));
        }
    }
    CollapseSet::new(l.space, ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use approx::assert_abs_diff_eq;

    fn eigenvalues(op: &OperatorMatrix) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&op.to_dense()).unwrap()
    }

    #[test]
    fn empty_cavity_hamiltonian_is_diagonal_ladder() {
        let spec = SystemSpec::tavis_cummings(0, 5230.0, 5230.0, 0.0, 0.1, 0.0).with_truncation(4);
        let h = build_tc_hamiltonian(&spec).unwrap();
        for n in 0..5 {
            assert_abs_diff_eq!(h.get(n, n).re, 5230.0 * n as f64, epsilon = 1e-9);
        }
        assert_eq!(h.matrix().nnz(), 4);
    }

    #[test]
    fn jc_single_excitation_splitting() {
        let spec = SystemSpec::tavis_cummings(1, 5000.0, 5000.0, 10.0, 0.0, 0.0).with_truncation(3);
        let vals = eigenvalues(&build_tc_hamiltonian(&spec).unwrap());
        // ground 0, then ω_c ± g
        assert_abs_diff_eq!(vals[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(vals[1], 4990.0, epsilon = 1e-9);
        assert_abs_diff_eq!(vals[2], 5010.0, epsilon = 1e-9);
    }

    #[test]
    fn three_emitter_collective_lower_polariton() {
        let g = PAPER_G_MEAN;
        let spec = SystemSpec::tavis_cummings(3, PAPER_CAVITY_FREQ, PAPER_CAVITY_FREQ, g, 0.0, 0.0)
            .with_truncation(2);
        let vals = eigenvalues(&build_tc_hamiltonian(&spec).unwrap());
        let expect = PAPER_CAVITY_FREQ - 3f64.sqrt() * g;
        assert_abs_diff_eq!(vals[1], expect, epsilon = 1e-8);
    }

    #[test]
    fn rotating_frame_resonant_drive_keeps_coupling_and_drive_only() {
        let spec = SystemSpec::tavis_cummings(1, 5230.0, 5230.0, 13.7, 0.1, 0.1)
            .with_truncation(3)
            .with_drive(0.5, 5230.0);
        let h = build_rotating_frame(&spec).unwrap();
        for k in 0..h.dim() {
            assert_abs_diff_eq!(h.get(k, k).norm(), 0.0, epsilon = 1e-12);
        }
        // ⟨0,g| η(a + a†) |1,g⟩ = η; index of |1,g⟩ is 2
        assert_abs_diff_eq!(h.get(0, 2).re, 0.5, epsilon = 1e-15);
        // ⟨1,g| g a†σ⁻ |0,e⟩ = g; |0,e⟩ is index 1
        assert_abs_diff_eq!(h.get(2, 1).re, 13.7, epsilon = 1e-12);
    }

    #[test]
    fn rotating_frame_requires_drive() {
        let spec = SystemSpec::paper_device(1);
        assert!(matches!(build_rotating_frame(&spec), Err(Error::MissingDrive)));
    }

    #[test]
    fn lower_polariton_gap_to_two_excitation_manifold() {
        // static eigenstructure of the rotating frame without drive amplitude
        let g = 13.7;
        let wc = 5230.0;
        let spec = SystemSpec::tavis_cummings(1, wc, wc, g, 0.0, 0.0)
            .with_truncation(3)
            .with_drive(0.0, wc - g);
        let vals = eigenvalues(&build_rotating_frame(&spec).unwrap());
        // lower polariton sits at 0 in this frame; nearest n = 2 state at
        // 2(ω_c - ω_d) - √2 g
        let n2_lower = 2.0 * g - 2f64.sqrt() * g;
        let gap = vals
            .iter()
            .map(|v| (v - n2_lower).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(gap < 1e-9);
        assert!(vals.iter().any(|v| v.abs() < 1e-9));
        assert_abs_diff_eq!(n2_lower, (2.0 - 2f64.sqrt()) * g, epsilon = 1e-12);
    }

    #[test]
    fn chi_matches_reported_value() {
        let c = chi(17.0, 83.0, 227.0).unwrap();
        assert!((c - 5.5).abs() / 5.5 < 0.02, "chi = {c}");
        assert_abs_diff_eq!(c, 5.488, epsilon = 1e-3);
    }

    #[test]
    fn chi_limits_and_errors() {
        assert_abs_diff_eq!(chi(17.0, 83.0, f64::INFINITY).unwrap(), 289.0 / 83.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chi(17.0, 83.0, 1e12).unwrap(), 289.0 / 83.0, epsilon = 1e-6);
        assert_eq!(chi(0.0, 83.0, 227.0).unwrap(), 0.0);
        assert!(matches!(chi(17.0, 0.0, 227.0), Err(Error::SingularParameter(_))));
        assert!(matches!(chi(17.0, 227.0, 227.0), Err(Error::SingularParameter(_))));
    }

    #[test]
    fn chi_sign_follows_denominator() {
        for &(d, a) in &[(83.0, 227.0), (-83.0, 227.0), (300.0, 227.0), (-300.0, 227.0), (50.0, 40.0)] {
            let c = chi(10.0, d, a).unwrap();
            let denom: f64 = d * (1.0 - d / a);
            assert_eq!(c.signum(), denom.signum());
        }
    }

    #[test]
    fn dispersive_hamiltonian_ladder() {
        let spec = SystemSpec::paper_device(0).with_witness(SystemSpec::paper_witness()).with_truncation(6);
        let h = build_dispersive(&spec).unwrap();
        let d = spec.witness_dispersive().unwrap();
        for n in 0..=6 {
            let g_idx = 2 * n;
            let e_idx = 2 * n + 1;
            let gap = h.get(e_idx, e_idx).re - h.get(g_idx, g_idx).re;
            assert_abs_diff_eq!(gap, d.lamb_shifted_freq + 2.0 * d.chi * n as f64, epsilon = 1e-9);
        }
        let gap4 = h.get(9, 9).re - h.get(8, 8).re;
        assert_abs_diff_eq!(gap4, d.lamb_shifted_freq + 8.0 * d.chi, epsilon = 1e-9);
        assert!(matches!(build_dispersive(&SystemSpec::paper_device(1)), Err(Error::MissingWitness)));
    }

    #[test]
    fn collapse_set_sizes() {
        let none = SystemSpec::tavis_cummings(2, 5000.0, 5000.0, 10.0, 0.0, 0.0);
        assert!(build_collapse_set(&none).unwrap().is_empty());
        let cav = SystemSpec::tavis_cummings(0, 5000.0, 5000.0, 0.0, 0.1, 0.0).with_truncation(3);
        let c = build_collapse_set(&cav).unwrap();
        assert_eq!(c.len(), 1);
        assert_abs_diff_eq!(c.operators()[0].get(0, 1).re, 0.1f64.sqrt(), epsilon = 1e-15);
        let three = SystemSpec::paper_device(3).with_truncation(3);
        assert_eq!(build_collapse_set(&three).unwrap().len(), 4);
    }

    #[test]
    fn witness_in_simulation_extends_space() {
        let mut w = SystemSpec::paper_witness();
        w.in_simulation = true;
        let spec = SystemSpec::paper_device(1).with_witness(w).with_truncation(3);
        assert_eq!(spec.space().unwrap().dims(), &[4, 2, 3]);
        let h = build_tc_hamiltonian(&spec).unwrap();
        assert!(h.is_hermitian());
        let n = total_excitation(&spec).unwrap();
        assert!(h.commutator(&n).unwrap().max_abs() < 1e-9);
        assert_eq!(build_collapse_set(&spec).unwrap().len(), 3);
    }

    #[test]
    fn validation_errors() {
        let mut s = SystemSpec::paper_device(1);
        s.cavity_decay = -1.0;
        assert!(s.validate().is_err());
        let mut w = SystemSpec::paper_witness();
        w.anharmonicity = 0.0;
        assert!(SystemSpec::paper_device(1).with_witness(w).validate().is_err());
    }

    #[test]
    fn config_roundtrip_uses_fixed_field_names() {
        let spec = SystemSpec::paper_device(2)
            .with_drive(1.0, 5211.0)
            .with_witness(SystemSpec::paper_witness());
        let text = toml::to_string(&spec).unwrap();
        assert!(text.contains("cavity_freq") && text.contains("anharmonicity"));
        let back: SystemSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
