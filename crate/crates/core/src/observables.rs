//! Gauss-law values, the time-averaged gauge violation, and ensemble scalars.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{TrajectoryRecord, Variant};
use crate::error::{Error, Result};
use crate::lattice::SpinLattice;
use crate::state::SpinConfiguration;

/// Time at which the plateau value is read off.
pub const PLATEAU_TIME: f64 = 20.0;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 11;

/// `G_j = -sigma^z_j prod_links sigma^z`; the Rydberg variant fixes `sigma^z_j = 1`.
pub fn gauss_law(
    config: &SpinConfiguration,
    lattice: &SpinLattice,
    variant: Variant,
    vertex: usize,
) -> f64 {
    let nm = lattice.n_matter();
    let matter = match variant {
        Variant::WithMatter => config.spins[vertex][2],
        Variant::NoMatterRydberg => 1.0,
    };
    -lattice.vertex_links[vertex]
        .iter()
        .fold(matter, |acc, &l| acc * config.spins[nm + l][2])
}

pub fn gauss_all(config: &SpinConfiguration, lattice: &SpinLattice, variant: Variant) -> Vec<f64> {
    (0..lattice.n_matter())
        .map(|j| gauss_law(config, lattice, variant, j))
        .collect()
}

/// `eps(t) = t^-1 int_0^t (1 - G(tau)) dtau` by the trapezoidal rule on the given grid.
///
/// The average runs from the first grid time; its value there is the first
/// integrand value.
pub fn time_averaged_error(times: &[f64], mean_gauss: &[f64]) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(Error::Degenerate("empty record".into()));
    }
    if times.len() != mean_gauss.len() {
        return Err(Error::DimensionMismatch {
            context: "gauss series",
            expected: times.len(),
            found: mean_gauss.len(),
        });
    }
    let mut out = Vec::with_capacity(times.len());
    let mut integral = 0.0;
    let t0 = times[0];
    for i in 0..times.len() {
        if i > 0 {
            let dt = times[i] - times[i - 1];
            if !(dt > 0.0) {
                return Err(Error::invalid("times", "must be strictly increasing"));
            }
            integral += 0.5 * dt * ((1.0 - mean_gauss[i - 1]) + (1.0 - mean_gauss[i]));
        }
        out.push(if i == 0 {
            1.0 - mean_gauss[0]
        } else {
            integral / (times[i] - t0)
        });
    }
    Ok(out)
}

/// Linear interpolation of `ys` at `t`.
pub fn interpolate(times: &[f64], ys: &[f64], t: f64) -> Result<f64> {
    if times.is_empty() || t < times[0] || t > *times.last().unwrap() {
        return Err(Error::Degenerate(format!(
            "time {t} outside the recorded grid"
        )));
    }
    let i = times.partition_point(|&x| x < t);
    if i == 0 || times[i] == t {
        return Ok(ys[i]);
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let w = (t - t0) / (t1 - t0);
    Ok(ys[i - 1] * (1.0 - w) + ys[i] * w)
}

/// Mean `eps` at `t Omega = 20`.
pub fn plateau_value(times: &[f64], eps: &[f64]) -> Result<f64> {
    interpolate(times, eps, PLATEAU_TIME)
        .map_err(|_| Error::Degenerate("record grid does not span t = 20".into()))
}

/// Variable in which the curvature of `eps` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureAxis {
    /// `d^2 eps / dt^2`.
    Linear,
    /// `d^2 eps / d(ln t)^2`; matches the logarithmic record grid.
    #[default]
    Log,
}

/// Local quadratic fit of `ys` against `xs`; returns `(value, first, second)`
/// derivatives at `x0`.
fn local_quadratic(xs: &[f64], ys: &[f64], x0: f64) -> Option<(f64, f64, f64)> {
    let scale = xs
        .iter()
        .map(|x| (x - x0).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let u = (x - x0) / scale;
        let row = nalgebra::Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
        aty += row * y;
    }
    let c = ata.lu().solve(&aty)?;
    Some((c[0], c[1] / scale, 2.0 * c[2] / (scale * scale)))
}

/// Time of maximum curvature of `eps` after `t Omega = 20`.
///
/// Curvature comes from a Savitzky–Golay style quadratic fit over `window`
/// consecutive grid points. Fails with [`Error::Censored`] unless the final
/// `eps` exceeds twice the plateau value.
pub fn critical_time(
    times: &[f64],
    eps: &[f64],
    window: usize,
    axis: CurvatureAxis,
) -> Result<f64> {
    if window < 3 {
        return Err(Error::invalid(
            "smoothing_window",
            "needs at least 3 points",
        ));
    }
    let plateau = plateau_value(times, eps)?;
    let last = *eps.last().unwrap();
    if !(last > 2.0 * plateau) {
        return Err(Error::Censored(format!(
            "final eps {last:.4} does not exceed twice the plateau value {plateau:.4}"
        )));
    }
    let start = times.partition_point(|&t| t < PLATEAU_TIME);
    let half = window / 2;
    if times.len() < window || start + half >= times.len() - half {
        return Err(Error::Degenerate("too few points after t = 20".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    // only points with a full centred window
    for i in start.max(half)..times.len() - half {
        let lo = i - half;
        let hi = i + half + 1;
        let xs: Vec<f64> = match axis {
            CurvatureAxis::Linear => times[lo..hi].to_vec(),
            CurvatureAxis::Log => times[lo..hi].iter().map(|t| t.ln()).collect(),
        };
        let x0 = match axis {
            CurvatureAxis::Linear => times[i],
            CurvatureAxis::Log => times[i].ln(),
        };
        if let Some((_, _, curv)) = local_quadratic(&xs, &eps[lo..hi], x0) {
            if best.map_or(true, |(c, _)| curv > c) {
                best = Some((curv, times[i]));
            }
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::Degenerate("curvature undefined".into()))
}

/// Least-squares slope of `ln eps` against `ln t` for `t` in `[t_min, t_max]`.
pub fn early_time_exponent(times: &[f64], eps: &[f64], t_min: f64, t_max: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(eps)
        .filter(|(&t, &e)| t >= t_min && t <= t_max && t > 0.0 && e > 0.0)
        .map(|(&t, &e)| (t.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!(
            "only {} positive points in [{t_min}, {t_max}]",
            pts.len()
        )));
    }
    Ok(linear_regression(&pts).0)
}

/// Ordinary least squares `y = slope x + intercept`; returns `(slope, intercept)`.
pub fn linear_regression(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn pearson(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Ensemble mean of `eps(t)` and the derived scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub eps_mean: Vec<f64>,
    pub eps_stderr: Vec<f64>,
    pub eps_min: Vec<f64>,
    pub eps_max: Vec<f64>,
    pub energy_mean: Vec<f64>,
    pub n_ens: usize,
    pub eps_pre: Option<f64>,
    pub eps_pre_stderr: Option<f64>,
    pub t_crit: Option<f64>,
    pub smoothing_window: usize,
    pub curvature_axis: CurvatureAxis,
}

#[derive(Debug, Serialize)]
struct SummaryHeader<'a> {
    n_ens: usize,
    eps_pre: Option<f64>,
    eps_pre_stderr: Option<f64>,
    t_crit: Option<f64>,
    plateau_time: f64,
    smoothing_window: usize,
    curvature_axis: CurvatureAxis,
    #[serde(flatten)]
    extra: &'a serde_json::Value,
}

impl EnsembleSummary {
    /// Aggregates trajectories recorded on a common grid.
    pub fn from_records(records: &[TrajectoryRecord]) -> Result<Self> {
        Self::from_records_with(records, DEFAULT_SMOOTHING_WINDOW, CurvatureAxis::default())
    }

    pub fn from_records_with(
        records: &[TrajectoryRecord],
        smoothing_window: usize,
        curvature_axis: CurvatureAxis,
    ) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Degenerate("empty ensemble".into()))?;
        let times = first.times.clone();
        for r in records {
            if r.times != times {
                return Err(Error::Degenerate(
                    "trajectories recorded on different grids".into(),
                ));
            }
        }
        let n = records.len();
        let nt = times.len();
        let mut eps_mean = vec![0.0; nt];
        let mut eps_stderr = vec![0.0; nt];
        let mut eps_min = vec![f64::INFINITY; nt];
        let mut eps_max = vec![f64::NEG_INFINITY; nt];
        let mut energy_mean = vec![0.0; nt];
        for i in 0..nt {
            let vals = records.iter().map(|r| r.eps_series[i]);
            let (m, se) = mean_stderr(vals.clone());
            eps_mean[i] = m;
            eps_stderr[i] = se;
            for v in vals {
                eps_min[i] = eps_min[i].min(v);
                eps_max[i] = eps_max[i].max(v);
            }
            energy_mean[i] = records.iter().map(|r| r.energy_series[i]).sum::<f64>() / n as f64;
        }
        let eps_pre = plateau_value(&times, &eps_mean).ok();
        let eps_pre_stderr = eps_pre.and_then(|_| {
            let per: Vec<f64> = records
                .iter()
                .filter_map(|r| plateau_value(&r.times, &r.eps_series).ok())
                .collect();
            (per.len() == n).then(|| mean_stderr(per.into_iter()).1)
        });
        let t_crit = critical_time(&times, &eps_mean, smoothing_window, curvature_axis).ok();
        Ok(Self {
            times,
            eps_mean,
            eps_stderr,
            eps_min,
            eps_max,
            energy_mean,
            n_ens: n,
            eps_pre,
            eps_pre_stderr,
            t_crit,
            smoothing_window,
            curvature_axis,
        })
    }

    /// CSV rows `t,eps_mean,eps_stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,eps_mean,eps_stderr")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:?},{:?},{:?}",
                self.times[i], self.eps_mean[i], self.eps_stderr[i]
            )?;
        }
        Ok(())
    }

    /// JSON header with the derived scalars plus caller-provided parameters.
    pub fn header_json(&self, params: &serde_json::Value) -> Result<String> {
        let header = SummaryHeader {
            n_ens: self.n_ens,
            eps_pre: self.eps_pre,
            eps_pre_stderr: self.eps_pre_stderr,
            t_crit: self.t_crit,
            plateau_time: PLATEAU_TIME,
            smoothing_window: self.smoothing_window,
            curvature_axis: self.curvature_axis,
            extra: params,
        };
        Ok(serde_json::to_string_pretty(&header)?)
    }
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_stderr(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = vals.collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
