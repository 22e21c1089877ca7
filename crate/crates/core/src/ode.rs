//! Adaptive Dormand–Prince 5(4) integrator.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel: 1e-8,
            abs: 1e-10,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
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
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` and calls `observe(t, y)` at each requested time.
///
/// Steps are clipped so that every entry of `times` is hit exactly.
pub struct Dopri5<F> {
    rhs: F,
    tol: Tolerances,
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(rhs: F, tol: Tolerances) -> Result<Self> {
        if !(tol.rel > 0.0) || !(tol.abs > 0.0) {
            return Err(Error::invalid("tolerances", "must be positive"));
        }
        Ok(Self {
            rhs,
            tol,
            h: 0.0,
            accepted: 0,
            rejected: 0,
        })
    }

    pub fn integrate(
        &mut self,
        t0: f64,
        y: &mut [f64],
        times: &[f64],
        mut observe: impl FnMut(f64, &[f64]),
    ) -> Result<()> {
        let n = y.len();
        let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
        let mut tmp = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut t = t0;
        (self.rhs)(t, y, &mut k[0]);
        if self.h == 0.0 {
            self.h = self.initial_step(t, y, &k[0]);
        }
        for &target in times {
            if target < t {
                return Err(Error::invalid("record_times", "must be non-decreasing"));
            }
            while t < target {
                let mut h = self.h.min(target - t);
                let clipped = h < self.h;
                if h <= 1e-14 * t.abs().max(1.0) {
                    // residual rounding gap to the target
                    if target - t <= 1e-12 * t.abs().max(1.0) {
                        t = target;
                        break;
                    }
                    return Err(Error::StepSizeUnderflow { t, h });
                }
                loop {
                    self.stages(t, h, y, &mut k, &mut tmp, &mut y_new);
                    let err = self.error_norm(y, &y_new, &k, h);
                    if err <= 1.0 {
                        t = if clipped && h == target - t {
                            target
                        } else {
                            t + h
                        };
                        y.copy_from_slice(&y_new);
                        k.swap(0, 6);
                        self.accepted += 1;
                        let factor = if err == 0.0 {
                            5.0
                        } else {
                            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        if !clipped {
                            self.h = h * factor;
                        } else {
                            self.h = self.h.max(h * factor);
                        }
                        break;
                    }
                    self.rejected += 1;
                    h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                    self.h = h;
                    if h <= 1e-14 * t.abs().max(1.0) {
                        return Err(Error::StepSizeUnderflow { t, h });
                    }
                }
            }
            observe(target, y);
        }
        Ok(())
    }

    fn initial_step(&self, t: f64, y: &[f64], f0: &[f64]) -> f64 {
        let sc = |yi: f64| self.tol.abs + self.tol.rel * yi.abs();
        let d0 = rms(y.iter().map(|&yi| yi / sc(yi)));
        let d1 = rms(y.iter().zip(f0).map(|(&yi, &fi)| fi / sc(yi)));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let _ = t;
        h0.max(1e-8)
    }

    fn stages(
        &mut self,
        t: f64,
        h: f64,
        y: &[f64],
        k: &mut [Vec<f64>],
        tmp: &mut [f64],
        y_new: &mut [f64],
    ) {
        let n = y.len();
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k[0][i];
        }
        (self.rhs)(t + C2 * h, tmp, &mut k[1]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        (self.rhs)(t + C3 * h, tmp, &mut k[2]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        (self.rhs)(t + C4 * h, tmp, &mut k[3]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        (self.rhs)(t + C5 * h, tmp, &mut k[4]);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k[0][i]
                    + A62 * k[1][i]
                    + A63 * k[2][i]
                    + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        (self.rhs)(t + h, tmp, &mut k[5]);
        for i in 0..n {
            y_new[i] = y[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        (self.rhs)(t + h, y_new, &mut k[6]);
    }

    fn error_norm(&self, y: &[f64], y_new: &[f64], k: &[Vec<f64>], h: f64) -> f64 {
        rms((0..y.len()).map(|i| {
            let e = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
            let sc = self.tol.abs + self.tol.rel * y[i].abs().max(y_new[i].abs());
            e / sc
        }))
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}
