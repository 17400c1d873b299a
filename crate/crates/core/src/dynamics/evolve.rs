use faer::Mat;

use super::liouvillian::Liouvillian;
use crate::error::{Error, Result};
use crate::hilbert::DensityState;
use crate::linalg;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Largest tolerated trace drift along the trajectory.
    pub trace_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-11, max_steps: 2_000_000, trace_tol: 1e-8 }
    }
}

/// `ρ(t)` at each requested time (μs), integrating `dρ/dt = L[ρ]` with an
/// adaptive Dormand-Prince 5(4) scheme.
pub fn evolve(rho0: &DensityState, l: &Liouvillian, times: &[f64]) -> Result<Vec<DensityState>> {
    evolve_with(rho0, l, times, &EvolveOptions::default())
}

pub fn evolve_with(
    rho0: &DensityState,
    l: &Liouvillian,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<DensityState>> {
    if rho0.space() != l.space() {
        return Err(Error::SpaceMismatch);
    }
    if times.first().is_some_and(|&t| t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidState("times must be ascending and nonnegative".into()));
    }
    let d = l.hilbert_dim();
    let rhs = |y: &[C64], dy: &mut [C64]| l.matrix().matvec(y, dy);
    let mut y = linalg::vectorize(rho0.matrix());
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let mut stepper = Dopri5::new(y.len(), opts);
    for &target in times {
        stepper.advance(&rhs, &mut t, &mut y, target)?;
        let m = linalg::unvectorize(&y, d);
        let m = Mat::from_fn(d, d, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        let drift = (linalg::trace(&m) - C64::new(1.0, 0.0)).norm();
        if drift > opts.trace_tol {
            return Err(Error::Integrator(format!("trace drift {drift:.3e} at t = {target}")));
        }
        out.push(DensityState::new_unchecked_positivity(l.space().clone(), m)?);
    }
    Ok(out)
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Dopri5 {
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    ynew: Vec<C64>,
    h: f64,
    rtol: f64,
    atol: f64,
    max_steps: usize,
}

impl Dopri5 {
    fn new(n: usize, opts: &EvolveOptions) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Self {
            k: std::array::from_fn(|_| z.clone()),
            tmp: z.clone(),
            ynew: z,
            h: 0.0,
            rtol: opts.rtol,
            atol: opts.atol,
            max_steps: opts.max_steps,
        }
    }

    fn stage(&mut self, y: &[C64], h: f64, coeffs: &[(usize, f64)]) {
        for (i, t) in self.tmp.iter_mut().enumerate() {
            let mut acc = y[i];
            for &(s, a) in coeffs {
                acc += self.k[s][i] * (h * a);
            }
            *t = acc;
        }
    }

    fn advance(
        &mut self,
        f: &impl Fn(&[C64], &mut [C64]),
        t: &mut f64,
        y: &mut Vec<C64>,
        target: f64,
    ) -> Result<()> {
        if target <= *t {
            return Ok(());
        }
        if self.h == 0.0 {
            f(y, &mut self.k[0]);
            let scale = self.k[0].iter().map(|v| v.norm()).fold(0.0, f64::max);
            self.h = if scale > 0.0 { 0.01 / scale } else { target - *t };
        } else {
            f(y, &mut self.k[0]);
        }
        let mut steps = 0;
        while *t < target {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Integrator(format!("step limit reached at t = {t}")));
            }
            let h = self.h.min(target - *t);
            self.stage(y, h, &[(0, A21)]);
            f(&self.tmp, &mut self.k[1]);
            self.stage(y, h, &[(0, A31), (1, A32)]);
            f(&self.tmp, &mut self.k[2]);
            self.stage(y, h, &[(0, A41), (1, A42), (2, A43)]);
            f(&self.tmp, &mut self.k[3]);
            self.stage(y, h, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
            f(&self.tmp, &mut self.k[4]);
            self.stage(y, h, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
            f(&self.tmp, &mut self.k[5]);
            self.stage(y, h, &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)]);
            std::mem::swap(&mut self.ynew, &mut self.tmp);
            f(&self.ynew, &mut self.k[6]);

            let mut err2 = 0.0;
            for i in 0..y.len() {
                let e = (self.k[0][i] * E1
                    + self.k[2][i] * E3
                    + self.k[3][i] * E4
                    + self.k[4][i] * E5
                    + self.k[5][i] * E6
                    + self.k[6][i] * E7)
                    * h;
                let sc = self.atol + self.rtol * y[i].norm().max(self.ynew[i].norm());
                err2 += (e.norm() / sc).powi(2);
            }
            let err = (err2 / y.len() as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integrator(format!("non-finite error estimate at t = {t}")));
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                *t = if h >= target - *t { target } else { *t + h };
                std::mem::swap(y, &mut self.ynew);
                self.k.swap(0, 6);
                if h == self.h || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.h = h * factor.min(1.0);
            }
            if self.h < 1e-14 * target.max(1.0) {
                return Err(Error::Integrator(format!("step size underflow at t = {t}")));
            }
        }
        Ok(())
    }
}
