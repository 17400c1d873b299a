//! Excitation ladder of the resonant Tavis-Cummings system in the symmetric
//! (Dicke) sector, and the witness-qubit line positions it implies.
//!
//! The generic two-excitation shift is `(6N-2)/(2N-1)` in units of `χ`; a
//! frequently quoted `(6N-1)/(2N-1)` disagrees with direct diagonalisation
//! and with the `N = 3` value of `3.2`.

use std::io::Write;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Lowest,
    Highest,
}

/// Hamiltonian of the `n`-excitation manifold in the basis
/// `|n-k photons, k collective excitations⟩`, `k = 0..=min(n, N)`.
#[derive(Debug, Clone)]
pub struct ManifoldHamiltonian {
    pub n_emitters: usize,
    pub excitations: usize,
    pub matrix: Mat<f64>,
}

impl ManifoldHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Photon number of each basis state.
    pub fn photon_numbers(&self) -> Vec<usize> {
        (0..self.dim()).map(|k| self.excitations - k).collect()
    }

    /// Ascending energies with the cavity weight `⟨a†a⟩` of each eigenvector.
    pub fn spectrum(&self) -> Result<Vec<(f64, f64)>> {
        let (vals, vecs) = linalg::symmetric_eigen(&self.matrix)?;
        let photons = self.photon_numbers();
        Ok(vals
            .iter()
            .enumerate()
            .map(|(j, &e)| {
                let w = photons.iter().enumerate().map(|(k, &p)| vecs[(k, j)].powi(2) * p as f64).sum();
                (e, w)
            })
            .collect())
    }
}

pub fn manifold_hamiltonian(
    n_emitters: usize,
    excitations: usize,
    omega_c: f64,
    omega_a: f64,
    g: f64,
) -> Result<ManifoldHamiltonian> {
    if n_emitters == 0 {
        return Err(Error::NoPolariton);
    }
    if excitations == 0 {
        return Err(Error::InvalidSpec("manifold needs at least one excitation".into()));
    }
    let (n, big_n) = (excitations, n_emitters);
    let dim = n.min(big_n) + 1;
    let matrix = Mat::from_fn(dim, dim, |i, j| {
        if i == j {
            (n - i) as f64 * omega_c + i as f64 * omega_a
        } else if i.abs_diff(j) == 1 {
            let k = i.min(j);
            // a ⊗ S⁺ between |n-k, k⟩ and |n-k-1, k+1⟩
            g * (((n - k) * (k + 1) * (big_n - k)) as f64).sqrt()
        } else {
            0.0
        }
    });
    Ok(ManifoldHamiltonian { n_emitters, excitations, matrix })
}

/// `(ω_c - √N g, ω_c + √N g)`.
pub fn polariton_frequencies(n_emitters: usize, g: f64, omega_c: f64) -> Result<(f64, f64)> {
    if n_emitters == 0 {
        return Err(Error::NoPolariton);
    }
    if !(g > 0.0) {
        return Err(Error::InvalidSpec(format!("coupling must be positive, got {g}")));
    }
    let split = (n_emitters as f64).sqrt() * g;
    Ok((omega_c - split, omega_c + split))
}

/// Detuning between a drive at the lower polariton and the nearest
/// two-excitation level, `(2√N - √(4N-2)) g`.
pub fn blockade_detuning(n_emitters: usize, g: f64) -> Result<f64> {
    if n_emitters == 0 {
        return Err(Error::NoPolariton);
    }
    let n = n_emitters as f64;
    Ok((2.0 * n.sqrt() - (4.0 * n - 2.0).sqrt()) * g)
}

/// Witness line shift in units of `χ`, tagged with whether a closed form
/// covered the request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftValue {
    pub value: f64,
    pub closed_form: bool,
}

/// Closed-form shift `1 + 2⟨a†a⟩` of the extreme branches at resonance.
/// Uncovered `(N, n)` fall back to diagonalisation with `closed_form =
/// false`. Both extreme branches share the same cavity weight at
/// resonance.
pub fn witness_shift_closed_form(n_emitters: usize, excitations: usize, branch: Branch) -> Result<ShiftValue> {
    if n_emitters == 0 {
        return Err(Error::NoPolariton);
    }
    let (big_n, n) = (n_emitters as f64, excitations as f64);
    let value = match (n_emitters, excitations) {
        (_, 0) => Some(1.0),
        (1, _) => Some(2.0 * n),
        (_, 1) => Some(2.0),
        (2, _) => Some(2.0 * n - 1.0 + 1.0 / (2.0 * n - 1.0)),
        (_, 2) => Some((6.0 * big_n - 2.0) / (2.0 * big_n - 1.0)),
        (3, _) => Some(2.0 * n - 2.0 + 6.0 / (16.0 * n * (n - 2.0) + 25.0).sqrt()),
        _ => None,
    };
    match value {
        Some(value) => Ok(ShiftValue { value, closed_form: true }),
        None => Ok(ShiftValue {
            value: witness_shift_numeric(n_emitters, excitations, branch)?,
            closed_form: false,
        }),
    }
}

/// `1 + 2⟨a†a⟩` of the requested extreme eigenvector at resonance.
pub fn witness_shift_numeric(n_emitters: usize, excitations: usize, branch: Branch) -> Result<f64> {
    if excitations == 0 {
        return Ok(1.0);
    }
    let spectrum = manifold_hamiltonian(n_emitters, excitations, 0.0, 0.0, 1.0)?.spectrum()?;
    let (_, w) = match branch {
        Branch::Lowest => spectrum[0],
        Branch::Highest => spectrum[spectrum.len() - 1],
    };
    Ok(1.0 + 2.0 * w)
}

/// Aligned and crossed witness-flip matrix elements between `n`- and
/// `(n+1)`-excitation polaritons of a single resonant emitter.
pub fn witness_transition_overlap(excitations: usize, chi: f64, g: f64) -> Result<(f64, f64)> {
    if excitations == 0 {
        return Err(Error::InvalidSpec("overlap needs n >= 1".into()));
    }
    let n = excitations as f64;
    let root = (4.0 * n * g * g + chi * chi).sqrt();
    if root == 0.0 {
        return Ok((1.0, 0.0));
    }
    Ok((2.0 * n.sqrt() * g / root, chi / root))
}

/// Reduction of the energy needed to add the `(n+1)`-th excitation caused
/// by the witness.
pub fn witness_backaction(excitations: usize, chi: f64, g: f64) -> Result<f64> {
    if excitations == 0 {
        return Err(Error::InvalidSpec("backaction needs n >= 1".into()));
    }
    let n = excitations as f64;
    // ½√(4g²m + χ²) - g√m written without cancellation
    let excess = |m: f64| {
        let bare = 2.0 * g * m.sqrt();
        0.5 * chi * chi / ((bare * bare + chi * chi).sqrt() + bare)
    };
    Ok(chi + excess(n) - excess(n + 1.0))
}

/// Spacing between the `n = 1` and `n = 2` witness lines, `2N/(2N-1) χ`.
pub fn n2_line_shift(n_emitters: usize, chi: f64) -> Result<f64> {
    if n_emitters == 0 {
        return Err(Error::NoPolariton);
    }
    let n = n_emitters as f64;
    Ok(2.0 * n / (2.0 * n - 1.0) * chi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderEntry {
    pub n_emitters: usize,
    pub excitations: usize,
    /// Position in the ascending spectrum of the manifold.
    pub branch: usize,
    pub branch_label: String,
    pub energy: f64,
    pub cavity_weight: f64,
    pub witness_shift: f64,
}

impl LadderEntry {
    pub fn is_extreme(&self) -> bool {
        self.branch_label != "middle"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenLadder {
    entries: Vec<LadderEntry>,
}

/// All levels of manifolds `0..=n_max`, energies in MHz.
pub fn eigen_ladder(n_emitters: usize, n_max: usize, omega_c: f64, omega_a: f64, g: f64) -> Result<EigenLadder> {
    let mut entries = vec![LadderEntry {
        n_emitters,
        excitations: 0,
        branch: 0,
        branch_label: "ground".into(),
        energy: 0.0,
        cavity_weight: 0.0,
        witness_shift: 1.0,
    }];
    for n in 1..=n_max {
        let spectrum = manifold_hamiltonian(n_emitters, n, omega_c, omega_a, g)?.spectrum()?;
        let last = spectrum.len() - 1;
        for (j, &(energy, w)) in spectrum.iter().enumerate() {
            let label = match j {
                0 => "lowest",
                j if j == last => "highest",
                _ => "middle",
            };
            entries.push(LadderEntry {
                n_emitters,
                excitations: n,
                branch: j,
                branch_label: label.into(),
                energy,
                cavity_weight: w,
                witness_shift: 1.0 + 2.0 * w,
            });
        }
    }
    Ok(EigenLadder { entries })
}

impl EigenLadder {
    pub fn entries(&self) -> &[LadderEntry] {
        &self.entries
    }

    pub fn extreme(&self, excitations: usize, branch: Branch) -> Option<&LadderEntry> {
        let label = match (excitations, branch) {
            (0, _) => "ground",
            (_, Branch::Lowest) => "lowest",
            (_, Branch::Highest) => "highest",
        };
        self.entries.iter().find(|e| e.excitations == excitations && e.branch_label == label)
    }

    /// CSV with columns `N,n,branch,energy,cavity_weight,shift_in_chi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["N", "n", "branch", "energy", "cavity_weight", "shift_in_chi"])?;
        for e in &self.entries {
            out.write_record([
                e.n_emitters.to_string(),
                e.excitations.to_string(),
                e.branch_label.clone(),
                format!("{:.10}", e.energy),
                format!("{:.12}", e.cavity_weight),
                format!("{:.12}", e.witness_shift),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cavity weight of the lowest branch of each manifold `0..=n_max` at
/// resonance; the states reached by driving at the lower polariton.
pub fn lowest_branch_weights(n_emitters: usize, n_max: usize) -> Result<Vec<f64>> {
    let ladder = eigen_ladder(n_emitters, n_max, 0.0, 0.0, 1.0)?;
    (0..=n_max)
        .map(|n| {
            ladder
                .extreme(n, Branch::Lowest)
                .map(|e| e.cavity_weight)
                .ok_or_else(|| Error::InvalidSpec(format!("missing manifold {n}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polariton_examples() {
        let (lo, hi) = polariton_frequencies(1, 13.7, 5230.0).unwrap();
        assert_abs_diff_eq!(lo, 5230.0 - 13.7, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 5230.0 + 13.7, epsilon = 1e-12);
        let (lo, hi) = polariton_frequencies(2, 13.2, 0.0).unwrap();
        assert_abs_diff_eq!(hi - lo, 37.34, epsilon = 5e-3);
        assert_eq!(polariton_frequencies(4, 1.0, 0.0).unwrap(), (-2.0, 2.0));
        assert!(matches!(polariton_frequencies(0, 1.0, 0.0), Err(Error::NoPolariton)));
    }

    #[test]
    fn blockade_detuning_examples() {
        assert_abs_diff_eq!(blockade_detuning(1, 1.0).unwrap(), 2.0 - 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(blockade_detuning(1, 13.7).unwrap(), 8.03, epsilon = 5e-3);
        assert!(blockade_detuning(0, 1.0).is_err());
    }

    #[test]
    fn blockade_detuning_matches_diagonalisation() {
        for n in 1..=6 {
            let g = 13.7;
            let m1 = manifold_hamiltonian(n, 1, 0.0, 0.0, g).unwrap().spectrum().unwrap();
            let m2 = manifold_hamiltonian(n, 2, 0.0, 0.0, g).unwrap().spectrum().unwrap();
            let two_photon = 2.0 * m1[0].0;
            let nearest = m2.iter().map(|&(e, _)| (e - two_photon).abs()).fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(nearest, blockade_detuning(n, g).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn printed_manifold_matrices() {
        let g = 1.7;
        let m = manifold_hamiltonian(3, 2, 0.0, 0.0, g).unwrap().matrix;
        assert_eq!(m.nrows(), 3);
        assert_abs_diff_eq!(m[(0, 1)], 6f64.sqrt() * g, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(1, 2)], 2.0 * g, epsilon = 1e-14);
        for n in 2..6 {
            let m = manifold_hamiltonian(2, n, 0.0, 0.0, g).unwrap().matrix;
            assert_abs_diff_eq!(m[(0, 1)], (2.0 * n as f64).sqrt() * g, epsilon = 1e-13);
            assert_abs_diff_eq!(m[(1, 2)], (2.0 * (n as f64 - 1.0)).sqrt() * g, epsilon = 1e-13);
            assert_eq!(m[(0, 2)], 0.0);
        }
        let m = manifold_hamiltonian(2, 3, 5.0, 7.0, g).unwrap().matrix;
        assert_eq!((m[(0, 0)], m[(1, 1)], m[(2, 2)]), (15.0, 17.0, 19.0));
    }

    #[test]
    fn single_emitter_resonant_pair() {
        let s = manifold_hamiltonian(1, 1, 5230.0, 5230.0, 13.7).unwrap().spectrum().unwrap();
        assert_abs_diff_eq!(s[0].0, 5230.0 - 13.7, epsilon = 1e-10);
        assert_abs_diff_eq!(s[1].0, 5230.0 + 13.7, epsilon = 1e-10);
    }

    #[test]
    fn single_excitation_matches_polaritons() {
        for n in 1..=8 {
            let s = manifold_hamiltonian(n, 1, 100.0, 100.0, 2.5).unwrap().spectrum().unwrap();
            let (lo, hi) = polariton_frequencies(n, 2.5, 100.0).unwrap();
            assert_abs_diff_eq!(s[0].0, lo, epsilon = 1e-10);
            assert_abs_diff_eq!(s[1].0, hi, epsilon = 1e-10);
            assert_abs_diff_eq!(s[0].1, 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(s[1].1, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_examples() {
        let v = |n_e, n| witness_shift_closed_form(n_e, n, Branch::Lowest).unwrap();
        assert_eq!(v(1, 3).value, 6.0);
        assert_abs_diff_eq!(v(2, 2).value, 10.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v(3, 2).value, 3.2, epsilon = 1e-14);
        assert_eq!(v(2, 1).value, 2.0);
        assert!(v(3, 2).closed_form);
        let uncovered = v(5, 4);
        assert!(!uncovered.closed_form);
        assert_abs_diff_eq!(
            uncovered.value,
            witness_shift_numeric(5, 4, Branch::Lowest).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn numeric_examples() {
        assert_abs_diff_eq!(witness_shift_numeric(1, 5, Branch::Lowest).unwrap(), 10.0, epsilon = 1e-10);
        assert_abs_diff_eq!(
            witness_shift_numeric(3, 4, Branch::Highest).unwrap(),
            6.0 + 6.0 / 153f64.sqrt(),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(witness_shift_numeric(2, 2, Branch::Lowest).unwrap(), 10.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn closed_forms_agree_with_diagonalisation() {
        for big_n in 1..=8 {
            for n in 0..=8 {
                for branch in [Branch::Lowest, Branch::Highest] {
                    let cf = witness_shift_closed_form(big_n, n, branch).unwrap();
                    let num = witness_shift_numeric(big_n, n, branch).unwrap();
                    assert!((cf.value - num).abs() < 1e-9, "N={big_n} n={n}: {} vs {num}", cf.value);
                }
            }
        }
    }

    #[test]
    fn generic_two_excitation_formula() {
        for big_n in 1..=10 {
            let num = witness_shift_numeric(big_n, 2, Branch::Lowest).unwrap();
            let bn = big_n as f64;
            assert_abs_diff_eq!(num, (6.0 * bn - 2.0) / (2.0 * bn - 1.0), epsilon = 1e-10);
            assert!((num - (6.0 * bn - 1.0) / (2.0 * bn - 1.0)).abs() > 0.05);
            let step = num - witness_shift_numeric(big_n, 1, Branch::Lowest).unwrap();
            assert_abs_diff_eq!(step, n2_line_shift(big_n, 1.0).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn n2_line_shift_examples() {
        assert_eq!(n2_line_shift(1, 5.5).unwrap(), 11.0);
        assert_abs_diff_eq!(n2_line_shift(2, 3.0).unwrap(), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(n2_line_shift(3, 1.0).unwrap(), 1.2, epsilon = 1e-14);
    }

    #[test]
    fn shift_ordering_over_grid() {
        for n in 1..=6 {
            let mut prev = f64::INFINITY;
            for big_n in 1..=8 {
                let s = witness_shift_numeric(big_n, n, Branch::Lowest).unwrap();
                assert!(s <= prev + 1e-12);
                assert!(s >= n as f64 + 1.0 - 1e-12 && s <= 2.0 * n as f64 + 1e-12);
                prev = s;
            }
        }
        for big_n in 1..=8 {
            let shifts: Vec<f64> =
                (1..=12).map(|n| witness_shift_numeric(big_n, n, Branch::Lowest).unwrap()).collect();
            let steps: Vec<f64> = shifts.windows(2).map(|w| w[1] - w[0]).collect();
            for w in steps.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
            assert!(*steps.last().unwrap() <= 2.0 + 1e-9, "N={big_n}: {steps:?}");
        }
        // per-excitation slope at n = 1 → 2 approaches 1 for many emitters
        let slope = |big_n| {
            witness_shift_numeric(big_n, 2, Branch::Lowest).unwrap()
                - witness_shift_numeric(big_n, 1, Branch::Lowest).unwrap()
        };
        assert!(slope(200) - 1.0 < 1e-2);
    }

    #[test]
    fn blockade_detuning_decreases_with_emitters() {
        let vals: Vec<f64> = (1..=10).map(|n| blockade_detuning(n, 1.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    /// Eigenvector of `[[a, c], [c, b]]` for the upper or lower eigenvalue.
    fn eig2(a: f64, b: f64, c: f64, upper: bool) -> (f64, [f64; 2]) {
        let m = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => a,
            (1, 1) => b,
            _ => c,
        });
        let (vals, vecs) = linalg::symmetric_eigen(&m).unwrap();
        let j = if upper { 1 } else { 0 };
        (vals[j], [vecs[(0, j)], vecs[(1, j)]])
    }

    #[test]
    fn overlap_examples_and_block_oracle() {
        assert_eq!(witness_transition_overlap(3, 0.0, 13.7).unwrap(), (1.0, 0.0));
        let (al, cr) = witness_transition_overlap(1, 5.5, 13.7).unwrap();
        assert_abs_diff_eq!(al, 0.980, epsilon = 5e-4);
        assert_abs_diff_eq!(cr, 0.197, epsilon = 5e-4);
        let (al, cr) = witness_transition_overlap(100_000, 5.5, 13.7).unwrap();
        assert!(al > 0.999_999 && cr < 1e-3);

        // blocks with the witness in |g⟩ (n excitations) and |e⟩ (n+1)
        let (wc, ww, chi, g) = (5230.0, 5313.0, 5.5, 13.7);
        for n in 1..=4 {
            let nf = n as f64;
            let (_, vg) = eig2(nf * (wc - chi), (nf - 1.0) * (wc - chi) + wc, g * nf.sqrt(), true);
            let (_, ve_same) = eig2(
                nf * (wc + chi) + ww + chi,
                (nf - 1.0) * (wc + chi) + ww + chi + wc,
                g * nf.sqrt(),
                true,
            );
            let (_, ve_other) = eig2(
                nf * (wc + chi) + ww + chi,
                (nf - 1.0) * (wc + chi) + ww + chi + wc,
                g * nf.sqrt(),
                false,
            );
            let dot = |a: [f64; 2], b: [f64; 2]| (a[0] * b[0] + a[1] * b[1]).abs();
            let (al, cr) = witness_transition_overlap(n, chi, g).unwrap();
            assert_abs_diff_eq!(dot(vg, ve_same), al, epsilon = 1e-10);
            assert_abs_diff_eq!(dot(vg, ve_other), cr, epsilon = 1e-10);
        }
    }

    #[test]
    fn backaction_examples_and_block_oracle() {
        assert_eq!(witness_backaction(2, 0.0, 13.7).unwrap(), 0.0);
        let b = witness_backaction(1, 5.5, 13.7).unwrap();
        assert!((b - 5.5).abs() < 0.55);
        let mut prev = f64::INFINITY;
        for g in [1.0, 3.0, 10.0, 30.0, 100.0, 1000.0] {
            let err = (witness_backaction(2, 5.5, g).unwrap() - 5.5).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-2);

        // upper-branch transition energies with and without the witness
        let (wc, chi, g) = (5230.0, 5.5, 13.7);
        for n in 1..=4 {
            let upper = |m: usize, shift: f64| {
                let mf = m as f64;
                eig2(mf * (wc - shift), (mf - 1.0) * (wc - shift) + wc, g * mf.sqrt(), true).0
            };
            let with = upper(n + 1, chi) - upper(n, chi);
            let without = upper(n + 1, 0.0) - upper(n, 0.0);
            assert_abs_diff_eq!(without - with, witness_backaction(n, chi, g).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn ladder_table() {
        let ladder = eigen_ladder(1, 3, 5230.0, 5230.0, 13.7).unwrap();
        assert_eq!(ladder.entries().len(), 7);
        for e in ladder.entries() {
            assert!(e.cavity_weight >= -1e-12 && e.cavity_weight <= e.excitations as f64 + 1e-12);
            assert_eq!(e.witness_shift, 1.0 + 2.0 * e.cavity_weight);
        }
        for n in 1..=3 {
            let lo = ladder.extreme(n, Branch::Lowest).unwrap();
            let hi = ladder.extreme(n, Branch::Highest).unwrap();
            assert!(lo.energy < hi.energy);
            assert_abs_diff_eq!(lo.witness_shift, 2.0 * n as f64, epsilon = 1e-10);
        }
        let mut buf = Vec::new();
        ladder.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,n,branch,energy,cavity_weight,shift_in_chi\n"));
        assert_eq!(text.lines().count(), 8);
        let w = lowest_branch_weights(1, 2).unwrap();
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 1.5, epsilon = 1e-12);
    }
}
