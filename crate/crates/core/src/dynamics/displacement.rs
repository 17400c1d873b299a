//! Coherent displacement support for strongly driven cavities.
//!
//! A cavity holding hundreds of photons is solved in the frame `a → a + α`,
//! where only the fluctuations around the mean field need a Fock basis.

use faer::Mat;

use super::correlation::PhotonDistribution;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SystemSpec;
use crate::C64;

const CONTINUATION_STEPS: usize = 60;
const NEWTON_ITERS: usize = 50;

/// Semiclassical steady-state cavity amplitude `⟨a⟩` in the drive frame.
///
/// Each emitter (and the witness, when simulated, as a two-level system) is
/// replaced by its driven-damped steady-state coherence; the cavity equation
/// is then solved by Newton iteration, continued from `η = 0`.
pub fn mean_field_amplitude(spec: &SystemSpec) -> Result<C64> {
    spec.validate()?;
    let drive = spec.drive.as_ref().ok_or(Error::MissingDrive)?;
    let mut tls: Vec<(f64, f64, f64)> =
        spec.emitters.iter().map(|e| (e.freq - drive.freq, e.coupling, e.decay)).collect();
    if let Some(w) = spec.witness_in_simulation() {
        tls.push((w.freq - drive.freq, w.coupling, w.decay));
    }
    let dc = spec.cavity_freq - drive.freq;
    let kappa = spec.cavity_decay;

    let residual = |alpha: C64, eta: f64| -> C64 {
        let mut coh = C64::new(0.0, 0.0);
        for &(delta, g, gamma) in &tls {
            coh += g * tls_coherence(g * alpha, delta, gamma);
        }
        C64::new(0.0, -1.0) * (dc * alpha + coh + eta) - 0.5 * kappa * alpha
    };

    let mut alpha = C64::new(0.0, 0.0);
    for step in 1..=CONTINUATION_STEPS {
        let eta = drive.amplitude * step as f64 / CONTINUATION_STEPS as f64;
        alpha = newton(|z| residual(z, eta), alpha).unwrap_or_else(|| {
            log::debug!("mean-field Newton stalled at eta = {eta}");
            alpha
        });
    }
    Ok(alpha)
}

/// `⟨σ⁻⟩` of a two-level system driven by `Ω σ⁺ + h.c.` at detuning `δ`
/// with decay `γ`.
fn tls_coherence(omega: C64, delta: f64, gamma: f64) -> C64 {
    let d = 0.25 * gamma * gamma + delta * delta;
    if d == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let s = omega.norm_sqr() / d;
    let p = s / (1.0 + 2.0 * s);
    C64::new(0.0, 1.0) * omega * (2.0 * p - 1.0) / C64::new(0.5 * gamma, delta)
}

/// Newton iteration on a complex function treated as a map of `R²`.
fn newton(f: impl Fn(C64) -> C64, start: C64) -> Option<C64> {
    let mut z = start;
    for _ in 0..NEWTON_ITERS {
        let fz = f(z);
        let h = 1e-7 * z.norm().max(1.0);
        let dx = (f(z + C64::new(h, 0.0)) - fz) / h;
        let dy = (f(z + C64::new(0.0, h)) - fz) / h;
        let det = dx.re * dy.im - dy.re * dx.im;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let step_re = (dy.im * fz.re - dy.re * fz.im) / det;
        let step_im = (-dx.im * fz.re + dx.re * fz.im) / det;
        z -= C64::new(step_re, step_im);
        if step_re.hypot(step_im) < 1e-12 * z.norm().max(1.0) {
            return Some(z);
        }
    }
    None
}

/// First `cols` columns of the displacement operator `D(α)` in a Fock
/// space of dimension `dim`, from the eigen-decomposition of the Hermitian
/// generator `i(α a† - α* a)`.
pub fn displacement_columns(alpha: C64, dim: usize, cols: usize) -> Result<Mat<C64>> {
    if cols > dim {
        return Err(Error::DimensionMismatch { expected: dim, found: cols });
    }
    let i = C64::new(0.0, 1.0);
    let gen = Mat::from_fn(dim, dim, |r, c| {
        if r == c + 1 {
            i * alpha * (r as f64).sqrt()
        } else if c == r + 1 {
            -i * alpha.conj() * (c as f64).sqrt()
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let (vals, u) = linalg::hermitian_eigen(&gen)?;
    let phased = Mat::from_fn(dim, dim, |r, k| u[(r, k)] * C64::from_polar(1.0, -vals[k]));
    let head = Mat::from_fn(dim, cols, |k, c| u[(c, k)].conj());
    Ok(&phased * &head)
}

/// Lab-frame photon distribution of a cavity state `ρ_b` expressed in the
/// frame displaced by `α`: `P(n) = ⟨n|D(α) ρ_b D(α)†|n⟩`.
pub fn lab_distribution(reduced: &Mat<C64>, alpha: C64) -> Result<PhotonDistribution> {
    let m = reduced.nrows();
    let reach = alpha.norm() + (m as f64).sqrt();
    let dim = ((reach + 10.0).powi(2).ceil() as usize).max(m + 10);
    let d = displacement_columns(alpha, dim, m)?;
    let x = &d * reduced;
    let probs: Vec<f64> = (0..dim)
        .map(|n| (0..m).map(|k| (x[(n, k)] * d[(n, k)].conj()).re).sum::<f64>())
        .collect();
    let keep = ((reach + 7.0).powi(2).ceil() as usize).clamp(m, dim);
    let lost: f64 = probs[keep..].iter().sum();
    if lost > 1e-9 {
        log::warn!("displaced distribution loses {lost:.3e} beyond n = {keep}");
    }
    PhotonDistribution::from_weights(probs[..keep].iter().map(|&p| p.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn displaced_vacuum_is_coherent() {
        let alpha = C64::new(1.2, -0.7);
        let d = displacement_columns(alpha, 60, 1).unwrap();
        let mut amp = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        for n in 0..20 {
            if n > 0 {
                amp *= alpha / (n as f64).sqrt();
            }
            assert_abs_diff_eq!((d[(n, 0)] - amp).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn lab_distribution_of_displaced_vacuum_is_poisson() {
        let alpha = C64::new(0.0, -4.0);
        let mut rho = Mat::<C64>::zeros(6, 6);
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let p = lab_distribution(&rho, alpha).unwrap();
        let poisson = PhotonDistribution::poisson(16.0, p.len() - 1).unwrap();
        assert!(p.max_abs_diff(&poisson) < 1e-10);
        assert_abs_diff_eq!(p.mean(), 16.0, epsilon = 1e-8);
    }

    #[test]
    fn empty_cavity_mean_field_is_exact() {
        let (kappa, eta, det) = (0.2, 0.3, 0.15);
        let spec = SystemSpec::tavis_cummings(0, 5000.0, 5000.0, 0.0, kappa, 0.0)
            .with_drive(eta, 5000.0 - det);
        let alpha = mean_field_amplitude(&spec).unwrap();
        let expect = C64::new(0.0, -eta) / C64::new(0.5 * kappa, det);
        assert_abs_diff_eq!((alpha - expect).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn weak_drive_mean_field_matches_linear_response() {
        let spec = SystemSpec::tavis_cummings(1, 5230.0, 5250.0, 13.7, 0.1, 0.1).with_drive(1e-4, 5225.0);
        let alpha = mean_field_amplitude(&spec).unwrap();
        // linear cavity pulled by the emitter susceptibility
        let chi_e = C64::new(13.7 * 13.7, 0.0) / C64::new(25.0, -0.05);
        let expect = C64::new(0.0, -1e-4) / (C64::new(0.05, 5.0) - C64::new(0.0, 1.0) * chi_e);
        assert!((alpha - expect).norm() < 1e-6 * expect.norm());
    }
}
