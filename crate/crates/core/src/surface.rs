//! Defect masks, height functions of the defect front, and their scaling analysis.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, SpinLattice};

pub const DEFAULT_G_THRES: f64 = 0.2;
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (50.0, 1000.0);

// keeps values sitting exactly on the threshold (e.g. G = 0.8) on the defect side
const MASK_SLACK: f64 = 1e-12;

/// `mask[t][j]` is true where `1 - G_j(t) >= g_thres`.
pub fn defect_mask(gauss_series: &[Vec<f64>], g_thres: f64) -> Result<Vec<Vec<bool>>> {
    if !(g_thres > 0.0 && g_thres < 2.0) {
        return Err(Error::invalid("g_thres", "must lie in (0, 2)"));
    }
    Ok(gauss_series
        .iter()
        .map(|row| {
            row.iter()
                .map(|&g| 1.0 - g >= g_thres - MASK_SLACK)
                .collect()
        })
        .collect())
}

/// How the front height of one column is read from the defect mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeightRule {
    /// Highest defect in the column that is connected to the bottom row
    /// through defect vertices.
    #[default]
    ClusterConnected,
    /// Highest defect in the column regardless of connectivity.
    Topmost,
}

/// Front heights `h(X, t)` of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightField {
    pub times: Vec<f64>,
    /// `heights[t][X]` in lattice units above the bottom row.
    pub heights: Vec<Vec<f64>>,
}

impl HeightField {
    pub fn n_columns(&self) -> usize {
        self.heights.first().map_or(0, |h| h.len())
    }
}

/// Heights of the defect front for every recorded mask.
pub fn height_function(
    mask_series: &[Vec<bool>],
    times: &[f64],
    lattice: &SpinLattice,
    rule: HeightRule,
) -> Result<HeightField> {
    if lattice.boundary_y != Boundary::Open {
        return Err(Error::invalid(
            "lattice",
            "height extraction needs an open Y boundary",
        ));
    }
    if mask_series.len() != times.len() {
        return Err(Error::DimensionMismatch {
            context: "mask series",
            expected: times.len(),
            found: mask_series.len(),
        });
    }
    let nm = lattice.n_matter();
    let n_cols = lattice.n_columns();
    let base = lattice.row_height(0);
    let mut heights = Vec::with_capacity(times.len());
    let mut seen = vec![false; nm];
    let mut queue = VecDeque::new();
    for mask in mask_series {
        if mask.len() != nm {
            return Err(Error::DimensionMismatch {
                context: "defect mask",
                expected: nm,
                found: mask.len(),
            });
        }
        let mut top: Vec<Option<usize>> = vec![None; n_cols];
        let raise = |j: usize, top: &mut Vec<Option<usize>>| {
            let site = &lattice.matter_sites[j];
            let slot = &mut top[site.column];
            if slot.map_or(true, |r| site.row > r) {
                *slot = Some(site.row);
            }
        };
        match rule {
            HeightRule::Topmost => {
                for j in (0..nm).filter(|&j| mask[j]) {
                    raise(j, &mut top);
                }
            }
            HeightRule::ClusterConnected => {
                seen.fill(false);
                for j in lattice.row_vertices(0) {
                    if mask[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
                while let Some(j) = queue.pop_front() {
                    raise(j, &mut top);
                    for k in lattice.vertex_neighbours(j) {
                        if mask[k] && !seen[k] {
                            seen[k] = true;
                            queue.push_back(k);
                        }
                    }
                }
            }
        }
        heights.push(
            top.iter()
                .map(|r| r.map_or(0.0, |r| lattice.row_height(r) - base))
                .collect(),
        );
    }
    Ok(HeightField {
        times: times.to_vec(),
        heights,
    })
}

/// Mean height and width per recorded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightStats {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub width: Vec<f64>,
}

fn check_ensemble(fields: &[HeightField]) -> Result<&HeightField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Degenerate("empty ensemble".into()))?;
    for f in fields {
        if f.times != first.times || f.heights.iter().any(|h| h.len() != first.n_columns()) {
            return Err(Error::Degenerate(
                "height fields have different shapes".into(),
            ));
        }
    }
    if first.n_columns() == 0 {
        return Err(Error::Degenerate("height fields have no columns".into()));
    }
    Ok(first)
}

/// `h(t) = <<h_n(X,t)>_X>_n` and `dh(t) = < sqrt(<(h_n - <h_n>_X)^2>_X) >_n`:
/// the column variance sits under the square root, the ensemble mean outside.
pub fn height_stats(fields: &[HeightField]) -> Result<HeightStats> {
    let first = check_ensemble(fields)?;
    let n = fields.len() as f64;
    let mut mean = Vec::with_capacity(first.times.len());
    let mut width = Vec::with_capacity(first.times.len());
    for t in 0..first.times.len() {
        let (mut m, mut w) = (0.0, 0.0);
        for f in fields {
            let row = &f.heights[t];
            let mx = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|h| (h - mx).powi(2)).sum::<f64>() / row.len() as f64;
            m += mx;
            w += var.sqrt();
        }
        mean.push(m / n);
        width.push(w / n);
    }
    Ok(HeightStats {
        times: first.times.clone(),
        mean,
        width,
    })
}

/// Standardized third and fourth cumulants of `h` pooled over columns and
/// realizations; the kurtosis is the excess kurtosis. Times with zero
/// height variance (a flat front) give NaN.
pub fn height_cumulants(fields: &[HeightField]) -> Result<(Vec<f64>, Vec<f64>)> {
    if fields.len() < 2 {
        return Err(Error::Degenerate(
            "cumulants need at least two realizations".into(),
        ));
    }
    let first = check_ensemble(fields)?;
    let mut skew = Vec::with_capacity(first.times.len());
    let mut kurt = Vec::with_capacity(first.times.len());
    for t in 0..first.times.len() {
        let pooled = fields.iter().flat_map(|f| f.heights[t].iter().copied());
        let (s, k) = standardized_cumulants(pooled).unwrap_or((f64::NAN, f64::NAN));
        skew.push(s);
        kurt.push(k);
    }
    Ok((skew, kurt))
}

/// Skewness and excess kurtosis of a sample; `None` for zero variance.
pub fn standardized_cumulants(xs: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return None;
    }
    let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Some((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

/// Fit of `a + b t^c` with one-sigma parameter errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_err: f64,
    pub b_err: f64,
    pub c_err: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub residual: f64,
    pub n_points: usize,
    /// Set when the amplitude vanishes and the exponent is unidentifiable.
    pub degenerate: bool,
}

const FIT_MAX_ITER: usize = 500;

/// Fit window cut off before the front saturates.
///
/// The upper end is the first time the mean height reaches half of `extent`
/// (or `window.1` if earlier); the lower end is `window.0`, pulled down to a
/// fifth of the upper end when the window would otherwise span less than a
/// factor of five.
pub fn presaturation_window(
    times: &[f64],
    mean: &[f64],
    extent: f64,
    window: (f64, f64),
) -> (f64, f64) {
    let t_sat = times
        .iter()
        .zip(mean)
        .find(|(_, &h)| h >= 0.5 * extent)
        .map_or(f64::INFINITY, |(&t, _)| t);
    let t_max = window.1.min(t_sat);
    let t_min = if t_max >= 5.0 * window.0 {
        window.0
    } else {
        t_max / 5.0
    };
    (t_min, t_max)
}

/// Levenberg–Marquardt fit of `y = a + b t^c` on the points with `t` in `window`.
pub fn fit_power_law(times: &[f64], ys: &[f64], window: (f64, f64)) -> Result<ScalingFit> {
    let (t_min, t_max) = window;
    if !(t_min < t_max) {
        return Err(Error::invalid("window", "needs t_min < t_max"));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(ys)
        .filter(|(&t, _)| t >= t_min && t <= t_max && t > 0.0)
        .map(|(&t, &y)| (t, y))
        .collect();
    if pts.len() < 8 {
        return Err(Error::Degenerate(format!(
            "{} points in the fit window, need at least 8",
            pts.len()
        )));
    }
    let n = pts.len();
    let y_scale = pts
        .iter()
        .map(|p| p.1.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let spread = pts
        .iter()
        .map(|p| (p.1 - pts[0].1).abs())
        .fold(0.0, f64::max);
    if spread <= 1e-12 * y_scale {
        return Ok(ScalingFit {
            a: pts[0].1,
            b: 0.0,
            c: f64::NAN,
            a_err: 0.0,
            b_err: f64::NAN,
            c_err: f64::NAN,
            t_min,
            t_max,
            residual: 0.0,
            n_points: n,
            degenerate: true,
        });
    }

    // start from the log-log slope after subtracting the first point
    let (t0, y0) = pts[0];
    let ll: Vec<(f64, f64)> = pts[1..]
        .iter()
        .filter(|p| (p.1 - y0).abs() > 0.0)
        .map(|p| ((p.0).ln(), (p.1 - y0).abs().ln()))
        .collect();
    let sign = if pts[n - 1].1 >= y0 { 1.0 } else { -1.0 };
    let mut c = if ll.len() >= 2 {
        crate::observables::linear_regression(&ll).0
    } else {
        1.0
    };
    if !c.is_finite() || c.abs() < 1e-3 {
        c = 1.0;
    }
    c = c.clamp(-5.0, 5.0);
    let (mut a, mut b) = linear_ab(&pts, c);
    if !b.is_finite() {
        b = sign;
        a = y0 - b * t0.powf(c);
    }

    // work in ln t relative to the window centre for conditioning
    let tref = (t_min.max(pts[0].0) * t_max.min(pts[n - 1].0)).sqrt();
    let model = |a: f64, bb: f64, c: f64, t: f64| a + bb * (t / tref).powf(c);
    let mut bb = b * tref.powf(c);
    let sse = |a: f64, bb: f64, c: f64| -> f64 {
        pts.iter()
            .map(|&(t, y)| (y - model(a, bb, c, t)).powi(2))
            .sum()
    };
    let mut cost = sse(a, bb, c);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iter = 0;
    while iter < FIT_MAX_ITER {
        iter += 1;
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for &(t, y) in &pts {
            let u = t / tref;
            let p = u.powf(c);
            let jac = nalgebra::Vector3::new(1.0, p, bb * p * u.ln());
            let r = y - model(a, bb, c, t);
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        let mut step_taken = false;
        for _ in 0..30 {
            let mut m = jtj;
            for k in 0..3 {
                m[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = m.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let (na, nb, nc) = (a + delta[0], bb + delta[1], c + delta[2]);
            let new_cost = sse(na, nb, nc);
            if new_cost.is_finite() && new_cost <= cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                let small_step = delta.norm() <= 1e-12 * (1.0 + a.abs() + bb.abs() + c.abs());
                a = na;
                bb = nb;
                c = nc;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-15);
                step_taken = true;
                if rel < 1e-15 || small_step || cost <= 1e-30 * y_scale * y_scale * n as f64 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !step_taken {
            converged = true;
            break;
        }
    }
    if !converged || !cost.is_finite() {
        return Err(Error::FitNotConverged {
            iterations: iter,
            residual: cost,
        });
    }

    // covariance from the Gauss–Newton Hessian at the optimum
    let mut jtj = nalgebra::Matrix3::<f64>::zeros();
    for &(t, _) in &pts {
        let u = t / tref;
        let p = u.powf(c);
        let jac = nalgebra::Vector3::new(1.0, p, bb * p * u.ln());
        jtj += jac * jac.transpose();
    }
    let dof = (n as f64 - 3.0).max(1.0);
    let sigma2 = cost / dof;
    let (a_err, bb_err, c_err) = match jtj.try_inverse() {
        Some(cov) => (
            (sigma2 * cov[(0, 0)]).max(0.0).sqrt(),
            (sigma2 * cov[(1, 1)]).max(0.0).sqrt(),
            (sigma2 * cov[(2, 2)]).max(0.0).sqrt(),
        ),
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    let scale = tref.powf(-c);
    let b = bb * scale;
    // error of b = bb tref^-c combines the bb and c uncertainties to first order
    let b_err = (bb_err * scale).hypot(b * tref.ln() * c_err);
    let degenerate = b.abs() * (t_max.min(pts[n - 1].0)).powf(c) < 1e-9 * y_scale;
    Ok(ScalingFit {
        a,
        b,
        c,
        a_err,
        b_err,
        c_err,
        t_min,
        t_max,
        residual: cost,
        n_points: n,
        degenerate,
    })
}

/// Best `(a, b)` for fixed `c` by linear least squares.
fn linear_ab(pts: &[(f64, f64)], c: f64) -> (f64, f64) {
    let xs: Vec<(f64, f64)> = pts.iter().map(|&(t, y)| (t.powf(c), y)).collect();
    let (b, a) = crate::observables::linear_regression(&xs);
    (a, b)
}

/// One width curve `dh(t)` for linear size `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthCurve {
    pub l: f64,
    pub times: Vec<f64>,
    pub width: Vec<f64>,
}

/// Outcome of a Family–Vicsek collapse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub residual: f64,
    /// False when fewer than two curves overlap, which makes the residual meaningless.
    pub informative: bool,
}

const COLLAPSE_GRID: usize = 200;

/// Rescales each curve to `(t / L^z, dh / L^alpha)` and measures the spread
/// between curves on a common logarithmic grid over the overlapping range.
///
/// The residual is the mean over grid points of the inter-curve variance of
/// `ln(dh / L^alpha)`, divided by the total variance of those values.
pub fn family_vicsek_collapse(curves: &[WidthCurve], alpha: f64, z: f64) -> Result<Collapse> {
    if curves.is_empty() {
        return Err(Error::Degenerate("no width curves".into()));
    }
    for c in curves {
        if c.times.len() != c.width.len() {
            return Err(Error::DimensionMismatch {
                context: "width curve",
                expected: c.times.len(),
                found: c.width.len(),
            });
        }
        if !(c.l > 0.0) {
            return Err(Error::invalid("l", "system sizes must be positive"));
        }
    }
    if curves.len() < 2 {
        return Ok(Collapse {
            residual: 0.0,
            informative: false,
        });
    }
    // rescaled log-log curves restricted to positive values
    let scaled: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            let (lt, lw) = (z * c.l.ln(), alpha * c.l.ln());
            c.times
                .iter()
                .zip(&c.width)
                .filter(|(&t, &w)| t > 0.0 && w > 0.0)
                .map(|(&t, &w)| (t.ln() - lt, w.ln() - lw))
                .collect()
        })
        .collect();
    let lo = scaled
        .iter()
        .map(|s| s.first().map_or(f64::INFINITY, |p| p.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = scaled
        .iter()
        .map(|s| s.last().map_or(f64::NEG_INFINITY, |p| p.0))
        .fold(f64::INFINITY, f64::min);
    if !(lo < hi) {
        return Err(Error::Degenerate(format!(
            "rescaled curves do not overlap for alpha = {alpha}, z = {z}"
        )));
    }
    let mut within = 0.0;
    let mut all = Vec::with_capacity(COLLAPSE_GRID * curves.len());
    for k in 0..COLLAPSE_GRID {
        let x = lo + (hi - lo) * k as f64 / (COLLAPSE_GRID - 1) as f64;
        let vals: Vec<f64> = scaled.iter().map(|s| interp_sorted(s, x)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        within += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        all.extend(vals);
    }
    within /= COLLAPSE_GRID as f64;
    let m = all.iter().sum::<f64>() / all.len() as f64;
    let total = all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64;
    let residual = if total > 0.0 { within / total } else { within };
    Ok(Collapse {
        residual,
        informative: true,
    })
}

fn interp_sorted(pts: &[(f64, f64)], x: f64) -> f64 {
    let i = pts.partition_point(|p| p.0 < x);
    if i == 0 {
        return pts[0].1;
    }
    if i == pts.len() {
        return pts[i - 1].1;
    }
    let (x0, y0) = pts[i - 1];
    let (x1, y1) = pts[i];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Residuals of the collapse over a grid of exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentScan {
    pub best_alpha: f64,
    pub best_z: f64,
    pub best_residual: f64,
    /// `(alpha, z, residual)`; grid points without overlap are skipped.
    pub surface: Vec<(f64, f64, f64)>,
}

impl ExponentScan {
    /// CSV rows `alpha,z,residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha,z,residual")?;
        for (a, z, r) in &self.surface {
            writeln!(w, "{a:?},{z:?},{r:?}")?;
        }
        Ok(())
    }
}

pub fn scan_exponents(
    curves: &[WidthCurve],
    alpha_grid: &[f64],
    z_grid: &[f64],
) -> Result<ExponentScan> {
    if alpha_grid.is_empty() || z_grid.is_empty() {
        return Err(Error::invalid(
            "grid",
            "alpha and z grids must be non-empty",
        ));
    }
    let mut surface = Vec::with_capacity(alpha_grid.len() * z_grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &a in alpha_grid {
        for &z in z_grid {
            match family_vicsek_collapse(curves, a, z) {
                Ok(c) => {
                    surface.push((a, z, c.residual));
                    if best.map_or(true, |b| c.residual < b.2) {
                        best = Some((a, z, c.residual));
                    }
                }
                Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let (best_alpha, best_z, best_residual) =
        best.ok_or_else(|| Error::Degenerate("no grid point gives overlapping curves".into()))?;
    Ok(ExponentScan {
        best_alpha,
        best_z,
        best_residual,
        surface,
    })
}

/// Writes height fields as CSV rows `n,t,X,h`.
pub fn write_heights_csv<W: Write>(fields: &[HeightField], mut w: W) -> Result<()> {
    writeln!(w, "n,t,X,h")?;
    for (n, f) in fields.iter().enumerate() {
        for (t, row) in f.times.iter().zip(&f.heights) {
            for (x, h) in row.iter().enumerate() {
                writeln!(w, "{n},{t:?},{x},{h:?}")?;
            }
        }
    }
    Ok(())
}

/// Reads the CSV written by [`write_heights_csv`].
pub fn read_heights_csv<R: BufRead>(r: R) -> Result<Vec<HeightField>> {
    let mut fields: Vec<HeightField> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "n,t,X,h" {
                return Err(Error::parse(
                    "height csv",
                    format!("unexpected header `{line}`"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::parse(
                format!("height csv line {}", i + 1),
                "expected 4 columns",
            ));
        }
        let bad = |e: &dyn std::fmt::Display| {
            Error::parse(format!("height csv line {}", i + 1), e.to_string())
        };
        let n: usize = parts[0].parse().map_err(|e| bad(&e))?;
        let t: f64 = parts[1].parse().map_err(|e| bad(&e))?;
        let x: usize = parts[2].parse().map_err(|e| bad(&e))?;
        let h: f64 = parts[3].parse().map_err(|e| bad(&e))?;
        if n > fields.len() {
            return Err(bad(&"realizations must be listed in order"));
        }
        if n == fields.len() {
            fields.push(HeightField {
                times: Vec::new(),
                heights: Vec::new(),
            });
        }
        let f = &mut fields[n];
        if f.times.last() != Some(&t) {
            f.times.push(t);
            f.heights.push(Vec::new());
        }
        let row = f.heights.last_mut().unwrap();
        if x != row.len() {
            return Err(bad(&"columns must be listed in order"));
        }
        row.push(h);
    }
    Ok(fields)
}

/// Writes `t,L,width` rows for a set of width curves.
pub fn write_width_curves_csv<W: Write>(curves: &[WidthCurve], mut w: W) -> Result<()> {
    writeln!(w, "L,t,width")?;
    for c in curves {
        for (t, d) in c.times.iter().zip(&c.width) {
            writeln!(w, "{:?},{t:?},{d:?}", c.l)?;
        }
    }
    Ok(())
}

/// Reads the CSV written by [`write_width_curves_csv`].
pub fn read_width_curves_csv<R: BufRead>(r: R) -> Result<Vec<WidthCurve>> {
    let mut curves: Vec<WidthCurve> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "L,t,width" {
                return Err(Error::parse(
                    "width csv",
                    format!("unexpected header `{line}`"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(format!("width csv line {}", i + 1), e.to_string()))?;
        if vals.len() != 3 {
            return Err(Error::parse(
                format!("width csv line {}", i + 1),
                "expected 3 columns",
            ));
        }
        match curves.last_mut() {
            Some(c) if c.l == vals[0] => {
                c.times.push(vals[1]);
                c.width.push(vals[2]);
            }
            _ => curves.push(WidthCurve {
                l: vals[0],
                times: vec![vals[1]],
                width: vec![vals[2]],
            }),
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_honeycomb, ROW_SPACING};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Exp, Normal};

    fn strip() -> SpinLattice {
        build_honeycomb(6, 8, Boundary::Periodic, Boundary::Open).unwrap()
    }

    fn rows_mask(lattice: &SpinLattice, rows: &[usize]) -> Vec<bool> {
        lattice
            .matter_sites
            .iter()
            .map(|s| rows.contains(&s.row))
            .collect()
    }

    #[test]
    fn mask_thresholds() {
        let m = defect_mask(&[vec![1.0, -1.0, 0.85, 0.8]], 0.2).unwrap();
        assert_eq!(m[0], vec![false, true, false, true]);
        assert!(defect_mask(&[vec![1.0]], 0.0).is_err());
        assert!(defect_mask(&[vec![1.0]], 2.0).is_err());
    }

    #[test]
    fn flat_fronts() {
        let lattice = strip();
        let h = height_function(
            &[rows_mask(&lattice, &[0]), rows_mask(&lattice, &[0, 1])],
            &[0.0, 1.0],
            &lattice,
            HeightRule::ClusterConnected,
        )
        .unwrap();
        assert!(h.heights[0].iter().all(|&x| x == 0.0));
        assert!(h.heights[1].iter().all(|&x| x == ROW_SPACING));
        assert_eq!(h.n_columns(), 12);
    }

    #[test]
    fn detached_bubble_is_ignored() {
        let lattice = strip();
        let mask = rows_mask(&lattice, &[0, 5]);
        let h = height_function(
            &[mask.clone()],
            &[0.0],
            &lattice,
            HeightRule::ClusterConnected,
        )
        .unwrap();
        assert!(h.heights[0].iter().all(|&x| x == 0.0));
        let top = height_function(&[mask], &[0.0], &lattice, HeightRule::Topmost).unwrap();
        assert!(top.heights[0].iter().all(|&x| x == 5.0 * ROW_SPACING));
        let periodic = build_honeycomb(3, 3, Boundary::Periodic, Boundary::Periodic).unwrap();
        assert!(height_function(&[], &[], &periodic, HeightRule::Topmost).is_err());
    }

    #[test]
    fn stats_follow_column_then_ensemble_order() {
        let flat = HeightField {
            times: vec![0.0],
            heights: vec![vec![2.0; 4]],
        };
        let s = height_stats(&[flat]).unwrap();
        assert_eq!((s.mean[0], s.width[0]), (2.0, 0.0));
        let alt = HeightField {
            times: vec![0.0],
            heights: vec![vec![1.0, -1.0, 1.0, -1.0]],
        };
        let s = height_stats(&[alt]).unwrap();
        assert_eq!((s.mean[0], s.width[0]), (0.0, 1.0));
        // one flat and one rough realization: mean of widths is 1/2, while the
        // pooled root-mean-square would give sqrt(1/2)
        let a = HeightField {
            times: vec![0.0],
            heights: vec![vec![0.0; 4]],
        };
        let b = HeightField {
            times: vec![0.0],
            heights: vec![vec![1.0, -1.0, 1.0, -1.0]],
        };
        let s = height_stats(&[a, b]).unwrap();
        assert!((s.width[0] - 0.5).abs() < 1e-15);
        assert!(height_stats(&[]).is_err());
    }

    #[test]
    fn cumulants_of_known_distributions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, kind: u8| -> Vec<HeightField> {
            (0..50)
                .map(|_| HeightField {
                    times: vec![0.0],
                    heights: vec![(0..400)
                        .map(|_| match kind {
                            0 => Normal::new(0.0, 1.0).unwrap().sample(rng),
                            1 => Exp::new(1.0).unwrap().sample(rng),
                            _ => rng.random_range(-1.0..1.0),
                        })
                        .collect()],
                })
                .collect()
        };
        let (s, k) = height_cumulants(&draw(&mut rng, 0)).unwrap();
        assert!(s[0].abs() < 0.05 && k[0].abs() < 0.1, "{s:?} {k:?}");
        let (s, _) = height_cumulants(&draw(&mut rng, 1)).unwrap();
        assert!((s[0] - 2.0).abs() < 0.15, "{s:?}");
        let (s, _) = height_cumulants(&draw(&mut rng, 2)).unwrap();
        assert!(s[0].abs() < 0.05);
        let flat = vec![
            HeightField {
                times: vec![0.0],
                heights: vec![vec![1.0; 3]]
            };
            2
        ];
        let (s, k) = height_cumulants(&flat).unwrap();
        assert!(s[0].is_nan() && k[0].is_nan());
    }

    #[test]
    fn power_law_recovers_synthetic_parameters() {
        let times: Vec<f64> = (0..60).map(|k| 50.0 * 1.05f64.powi(k)).collect();
        let ys: Vec<f64> = times.iter().map(|t| 2.0 + 3.0 * t.sqrt()).collect();
        let fit = fit_power_law(&times, &ys, (50.0, 1000.0)).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.b - 3.0).abs() < 1e-6);
        assert!((fit.c - 0.5).abs() < 1e-6);
        assert!(!fit.degenerate);
        let flat = fit_power_law(&times, &vec![4.0; 60], (50.0, 1000.0)).unwrap();
        assert!(flat.degenerate && flat.b == 0.0);
        assert!(fit_power_law(&times[..5], &ys[..5], (50.0, 1000.0)).is_err());
    }

    fn kpz_like(l: f64, alpha: f64, z: f64) -> WidthCurve {
        let times: Vec<f64> = (0..80).map(|k| 1.1f64.powi(k)).collect();
        let f = |x: f64| x.powf(1.0 / 3.0) / (1.0 + x.powf(1.0 / 3.0));
        WidthCurve {
            l,
            width: times
                .iter()
                .map(|t| l.powf(alpha) * f(t / l.powf(z)))
                .collect(),
            times,
        }
    }

    #[test]
    fn exact_collapse_has_zero_residual() {
        let curves: Vec<WidthCurve> = [40.0, 80.0, 160.0]
            .iter()
            .map(|&l| kpz_like(l, 0.5, 1.5))
            .collect();
        let c = family_vicsek_collapse(&curves, 0.5, 1.5).unwrap();
        assert!(c.informative && c.residual < 1e-10, "{c:?}");
        let bad = family_vicsek_collapse(&curves, 1.0, 1.0).unwrap();
        assert!(bad.residual > 1e-3);
        let single = family_vicsek_collapse(&curves[..1], 0.5, 1.5).unwrap();
        assert!(!single.informative && single.residual == 0.0);
        // relabeling sizes does not matter
        let mut rev = curves.clone();
        rev.reverse();
        let (r1, r2) = (
            family_vicsek_collapse(&rev, 0.7, 1.2).unwrap().residual,
            family_vicsek_collapse(&curves, 0.7, 1.2).unwrap().residual,
        );
        assert!((r1 - r2).abs() < 1e-12 * r2);
    }

    #[test]
    fn scan_finds_generating_exponents() {
        let curves: Vec<WidthCurve> = [40.0, 80.0, 160.0]
            .iter()
            .map(|&l| kpz_like(l, 0.5, 1.5))
            .collect();
        let alphas: Vec<f64> = (0..=10).map(|k| 0.2 + 0.06 * k as f64).collect();
        let zs: Vec<f64> = (0..=10).map(|k| 1.0 + 0.1 * k as f64).collect();
        let scan = scan_exponents(&curves, &alphas, &zs).unwrap();
        assert!(
            (scan.best_alpha - 0.5).abs() < 0.031 && (scan.best_z - 1.5).abs() < 0.051,
            "{scan:?}"
        );
        assert!(scan_exponents(&curves, &[], &zs).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let fields = vec![
            HeightField {
                times: vec![0.0, 1.5],
                heights: vec![vec![0.0, 1.5], vec![3.0, 1.5]],
            },
            HeightField {
                times: vec![0.0, 1.5],
                heights: vec![vec![0.0, 0.0], vec![1.5, 4.5]],
            },
        ];
        let mut buf = Vec::new();
        write_heights_csv(&fields, &mut buf).unwrap();
        assert_eq!(read_heights_csv(&buf[..]).unwrap(), fields);
        let curves = vec![kpz_like(40.0, 0.5, 1.5), kpz_like(80.0, 0.5, 1.5)];
        let mut buf = Vec::new();
        write_width_curves_csv(&curves, &mut buf).unwrap();
        assert_eq!(read_width_curves_csv(&buf[..]).unwrap(), curves);
    }
}
