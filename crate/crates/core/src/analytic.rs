//! Translationally invariant single-spin reduction of the model without matter.
//!
//! With every link spin equal, the mean-field equations collapse to one
//! collective spin (an LMG-type model). Written in the frame where the
//! gauge-invariant start is `sigma = (0, 0, +1)` and `G = (sigma^z)^3`,
//!
//! ```text
//!   d sigma^x/dt =  (V/2 - V sigma^z) sigma^y
//!   d sigma^y/dt = -(V/2 - V sigma^z) sigma^x - (Omega/2) sigma^z
//!   d sigma^z/dt =  (Omega/2) sigma^y
//! ```
//!
//! Energy conservation fixes `sigma^x = (V/Omega)(sigma^z - (sigma^z)^2)`, and
//! with the spin length this gives `dG/dt^2 + F(G) = 0` where
//!
//! ```text
//!   F(G) = -(9/4) [ Omega^2 G^(4/3) - (Omega^2 + V^2) G^2 - V^2 G^(8/3) + 2 V^2 G^(7/3) ]
//! ```
//!
//! `F` vanishes at `G = 1`; an interior root that confines `G(t)` close to 1
//! appears above `(V/Omega)_c = sqrt((11 + 5 sqrt 5) / 2)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, Tolerances};
use crate::state::Vec3;

/// `sqrt((11 + 5 sqrt 5) / 2)`, the protection strength above which `G`
/// stays confined near 1.
pub fn critical_protection() -> f64 {
    ((11.0 + 5.0 * 5f64.sqrt()) / 2.0).sqrt()
}

/// Bracket of `F` in units where `F = -(9/4) Omega^2 * bracket`, with `s = (V/Omega)^2`.
/// Also returns the first two `G` derivatives and the mixed derivatives in `s`.
struct Bracket {
    b: f64,
    b_g: f64,
    b_gg: f64,
    b_s: f64,
    b_gs: f64,
}

fn bracket(g_big: f64, s: f64) -> Bracket {
    let c = g_big.cbrt();
    let c2 = c * c;
    let g43 = g_big * c;
    let g53 = g_big * c2;
    let g73 = g_big * g_big * c;
    let g83 = g_big * g_big * c2;
    Bracket {
        b: g43 - (1.0 + s) * g_big * g_big - s * g83 + 2.0 * s * g73,
        b_g: 4.0 / 3.0 * c - 2.0 * (1.0 + s) * g_big - 8.0 / 3.0 * s * g53 + 14.0 / 3.0 * s * g43,
        b_gg: 4.0 / (9.0 * c2) - 2.0 * (1.0 + s) - 40.0 / 9.0 * s * c2 + 56.0 / 9.0 * s * c,
        b_s: -g_big * g_big - g83 + 2.0 * g73,
        b_gs: -2.0 * g_big - 8.0 / 3.0 * g53 + 14.0 / 3.0 * g43,
    }
}

fn check_couplings(v: f64, omega: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid("v", "must be finite and non-negative"));
    }
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::invalid("omega", "must be finite and non-negative"));
    }
    Ok(())
}

fn potential_unchecked(g_big: f64, v: f64, omega: f64) -> f64 {
    let c = g_big.cbrt();
    let g43 = g_big * c;
    let g73 = g_big * g_big * c;
    let g83 = g73 * c;
    let (w2, v2) = (omega * omega, v * v);
    -2.25 * (w2 * g43 - (w2 + v2) * g_big * g_big - v2 * g83 + 2.0 * v2 * g73)
}

/// Effective potential `F(G)` for `G` in `(0, 1]`, in units of `Omega^2`.
pub fn effective_potential(g: f64, v: f64, omega: f64) -> Result<f64> {
    check_couplings(v, omega)?;
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::invalid("g", format!("{g} lies outside (0, 1]")));
    }
    Ok(potential_unchecked(g, v, omega))
}

/// `dF/dG` for `G` in `(0, 1]`.
pub fn effective_potential_derivative(g: f64, v: f64, omega: f64) -> Result<f64> {
    check_couplings(v, omega)?;
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::invalid("g", format!("{g} lies outside (0, 1]")));
    }
    // the bracket is linear in (V/Omega)^2, so split it into its Omega^2 and V^2 parts
    let b_w = bracket(g, 0.0).b_g;
    let b_v = bracket(g, 1.0).b_gs;
    Ok(-2.25 * (omega * omega * b_w + v * v * b_v))
}

const ROOT_GRID: usize = 20_000;

/// Sorted roots of `F` in `(0, 1]`; `G = 1` is always the last entry.
pub fn potential_roots(v: f64, omega: f64) -> Result<Vec<f64>> {
    check_couplings(v, omega)?;
    let f = |g: f64| potential_unchecked(g, v, omega);
    let scale = 2.25 * (omega * omega + v * v).max(f64::MIN_POSITIVE);
    let mut roots = Vec::new();
    // stop short of 1 so the trivial root is not picked up twice
    let hi = 1.0 - 1e-6;
    let grid: Vec<f64> = (1..=ROOT_GRID)
        .map(|k| hi * k as f64 / ROOT_GRID as f64)
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&g| f(g)).collect();
    for i in 0..grid.len() - 1 {
        let (a, b) = (vals[i], vals[i + 1]);
        if a == 0.0 {
            roots.push(grid[i]);
        } else if a * b < 0.0 {
            roots.push(bisect(&f, grid[i], grid[i + 1]));
        } else if i > 0 {
            // a touching zero shows up as a local extremum of |F| near zero
            let prev = vals[i - 1];
            if a.abs() < prev.abs() && a.abs() < b.abs() && a.abs() < 1e-6 * scale {
                let g = golden_min(|x| f(x).abs(), grid[i - 1], grid[i + 1]);
                if f(g).abs() < 1e-12 * scale {
                    roots.push(g);
                }
            }
        }
    }
    roots.push(1.0);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(roots)
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a) < 1e-15 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while (b - a).abs() > 1e-14 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    0.5 * (a + b)
}

/// Largest root of `F` below 1, which bounds the oscillation of `G` from below.
pub fn constraining_root(v: f64, omega: f64) -> Result<Option<f64>> {
    let roots = potential_roots(v, omega)?;
    Ok(roots.iter().rev().nth(1).copied())
}

/// Interior double root of `F`: the point where `F` and `dF/dG` vanish
/// together, found by Newton iteration in `(G, (V/Omega)^2)`.
///
/// Returns `(G, V/Omega)`.
pub fn double_root() -> Result<(f64, f64)> {
    // coarse start: scan V/Omega for the first interior root
    let mut s_lo: f64 = 1.0;
    let mut s_hi = 25.0;
    for _ in 0..60 {
        let s = 0.5 * (s_lo + s_hi);
        if potential_roots(s.sqrt(), 1.0)?.len() > 1 {
            s_hi = s;
        } else {
            s_lo = s;
        }
    }
    let s0 = s_hi;
    let mut best_g = 0.5;
    let mut best = f64::INFINITY;
    for k in 1..1000 {
        let g = k as f64 / 1000.0;
        let b = bracket(g, s0).b.abs() + bracket(g, s0).b_g.abs();
        if b < best {
            best = b;
            best_g = g;
        }
    }
    let (mut g, mut s) = (best_g, s0);
    for _ in 0..100 {
        let br = bracket(g, s);
        // Jacobian of (b, b_g) in (g, s)
        let (j11, j12, j21, j22) = (br.b_g, br.b_s, br.b_gg, br.b_gs);
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 {
            return Err(Error::Degenerate(
                "singular Jacobian at the double root".into(),
            ));
        }
        let dg = (br.b * j22 - j12 * br.b_g) / det;
        let ds = (j11 * br.b_g - j21 * br.b) / det;
        g -= dg;
        s -= ds;
        if dg.abs() < 1e-15 && ds.abs() < 1e-13 {
            break;
        }
    }
    let br = bracket(g, s);
    if br.b.abs() > 1e-12 || br.b_g.abs() > 1e-10 {
        return Err(Error::FitNotConverged {
            iterations: 100,
            residual: br.b.abs() + br.b_g.abs(),
        });
    }
    Ok((g, s.sqrt()))
}

/// Solution of the collective-spin equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmgSeries {
    pub times: Vec<f64>,
    pub sigma: Vec<Vec3>,
    /// `G = (sigma^z)^3`.
    pub gauss: Vec<f64>,
}

impl LmgSeries {
    pub fn min_gauss(&self) -> f64 {
        self.gauss.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation from `sigma^x = (V/Omega)(sigma^z - (sigma^z)^2)`.
    pub fn constraint_violation(&self, v: f64, omega: f64) -> f64 {
        self.sigma
            .iter()
            .map(|s| (omega * s[0] - v * (s[2] - s[2] * s[2])).abs() / omega.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.sigma
            .iter()
            .map(|s| ((s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// CSV rows `t,sx,sy,sz,G`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,sx,sy,sz,G")?;
        for i in 0..self.times.len() {
            let s = self.sigma[i];
            writeln!(
                w,
                "{:?},{:?},{:?},{:?},{:?}",
                self.times[i], s[0], s[1], s[2], self.gauss[i]
            )?;
        }
        Ok(())
    }
}

/// Integrates the collective-spin equations from `(0, 0, +1)` and records
/// every `dt` up to `t_end`.
pub fn lmg_evolve(v: f64, omega: f64, t_end: f64, dt: f64) -> Result<LmgSeries> {
    check_couplings(v, omega)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::invalid("t_end", "must be finite and non-negative"));
    }
    let n = (t_end / dt).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    let half_omega = omega / 2.0;
    let mut solver = Dopri5::new(
        |_t, y: &[f64], dy: &mut [f64]| {
            let w = v / 2.0 - v * y[2];
            dy[0] = w * y[1];
            dy[1] = -w * y[0] - half_omega * y[2];
            dy[2] = half_omega * y[1];
        },
        Tolerances {
            rel: 1e-12,
            abs: 1e-13,
        },
    )?;
    let mut y = vec![0.0, 0.0, 1.0];
    let mut out = LmgSeries {
        times: Vec::with_capacity(times.len()),
        sigma: Vec::with_capacity(times.len()),
        gauss: Vec::with_capacity(times.len()),
    };
    solver.integrate(0.0, &mut y, &times, |t, y| {
        out.times.push(t);
        out.sigma.push([y[0], y[1], y[2]]);
        out.gauss.push(y[2].powi(3));
    })?;
    Ok(out)
}

/// Result of checking `dG/dt^2 + F(G) = 0` along a `G(t)` series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicCheck {
    pub max_residual: f64,
    /// `max |F|` over the checked points, the natural scale of the residual.
    pub max_abs_potential: f64,
    pub n_points: usize,
}

impl KinematicCheck {
    pub fn relative(&self) -> f64 {
        if self.max_abs_potential == 0.0 {
            self.max_residual
        } else {
            self.max_residual / self.max_abs_potential
        }
    }
}

/// Centered-difference check of `dG/dt^2 + F(G) = 0` on a uniformly sampled
/// series. Points with `G <= 0` (or neighbours outside the domain) are skipped.
pub fn kinematic_consistency(
    v: f64,
    omega: f64,
    times: &[f64],
    gauss: &[f64],
) -> Result<KinematicCheck> {
    kinematic_residual(v, omega, times, gauss, 1.0)
}

/// Like [`kinematic_consistency`] but checks `dG/dt^2 + sign * F(G) = 0`.
pub fn kinematic_residual(
    v: f64,
    omega: f64,
    times: &[f64],
    gauss: &[f64],
    sign: f64,
) -> Result<KinematicCheck> {
    check_couplings(v, omega)?;
    if times.len() != gauss.len() {
        return Err(Error::DimensionMismatch {
            context: "G series",
            expected: times.len(),
            found: gauss.len(),
        });
    }
    if times.len() < 3 {
        return Err(Error::Degenerate("need at least three samples".into()));
    }
    let mut check = KinematicCheck {
        max_residual: 0.0,
        max_abs_potential: 0.0,
        n_points: 0,
    };
    let in_domain = |g: f64| g > 0.0 && g <= 1.0 + 1e-12;
    for i in 1..times.len() - 1 {
        let (a, g, b) = (gauss[i - 1], gauss[i], gauss[i + 1]);
        if !(in_domain(a) && in_domain(g) && in_domain(b)) {
            continue;
        }
        let rate = (b - a) / (times[i + 1] - times[i - 1]);
        let f = potential_unchecked(g.min(1.0), v, omega);
        check.max_residual = check.max_residual.max((rate * rate + sign * f).abs());
        check.max_abs_potential = check.max_abs_potential.max(f.abs());
        check.n_points += 1;
    }
    if check.n_points == 0 {
        return Err(Error::Degenerate("series never enters G > 0".into()));
    }
    Ok(check)
}

/// `F` sampled on a grid of `G`, with its roots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialCurve {
    pub v: f64,
    pub omega: f64,
    pub g: Vec<f64>,
    pub f: Vec<f64>,
    pub roots: Vec<f64>,
}

impl PotentialCurve {
    pub fn sample(v: f64, omega: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::invalid("n_points", "needs at least 2 points"));
        }
        let g: Vec<f64> = (1..=n_points).map(|k| k as f64 / n_points as f64).collect();
        let f = g
            .iter()
            .map(|&x| effective_potential(x, v, omega))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            v,
            omega,
            g,
            f,
            roots: potential_roots(v, omega)?,
        })
    }

    /// CSV rows `G,F`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "G,F")?;
        for (g, f) in self.g.iter().zip(&self.f) {
            writeln!(w, "{g:?},{f:?}")?;
        }
        Ok(())
    }
}
