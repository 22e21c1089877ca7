//! Classical mean-field dynamics: energy, effective fields, and the two
//! integrators (trotterized frozen-field rotations and adaptive Runge–Kutta).
//!
//! Spins evolve under `d sigma / dt = sigma x dH/dsigma`. The protection term
//! is evaluated in its two-body form: for each vertex with spins `k` and
//! coefficient `c_j = V (1 + delta_j) / 4`,
//!
//! ```text
//!   H_V,j = c_j / 2 * (S_j^2 - sum_k (sigma^z_k)^2 + n_j - 4),   S_j = sum_k sigma^z_k
//! ```
//!
//! which equals `V (1 + delta_j) / 8 * (S_j^2 - 4)` on every `+-z` product
//! state but carries no classical self-interaction, so the z-field on spin
//! `k` is `c_j (S_j - sigma^z_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::SpinLattice;
use crate::ode::{Dopri5, Tolerances};
use crate::state::{DisorderField, SpinConfiguration, Vec3};

/// Which Hamiltonian is evolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Matter on vertices, gauge spins on links, three-body `J` coupling.
    WithMatter,
    /// Links only, `(V/4) sum s_A s_B + (V/2) sum s_A + (Omega/2) sum x_A`.
    NoMatterRydberg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub j: f64,
    pub omega: f64,
    pub v: f64,
    pub disorder: DisorderField,
    pub variant: Variant,
    /// Trotter step in units of `1/Omega`.
    pub dt: f64,
    pub t_end: f64,
}

impl ModelParams {
    pub fn new(j: f64, omega: f64, v: f64, disorder: DisorderField, variant: Variant) -> Self {
        Self {
            j,
            omega,
            v,
            disorder,
            variant,
            dt: 0.01,
            t_end: 100.0,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn validate(&self, lattice: &SpinLattice) -> Result<()> {
        for (name, x) in [("j", self.j), ("omega", self.omega), ("v", self.v)] {
            if !x.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if self.v > 0.0 && self.dt >= 1.0 / self.v {
            return Err(Error::invalid(
                "dt",
                format!("must be below 1/V = {}", 1.0 / self.v),
            ));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::invalid("t_end", "must be non-negative"));
        }
        if self.disorder.delta_j.len() != lattice.n_matter() {
            return Err(Error::DimensionMismatch {
                context: "disorder field",
                expected: lattice.n_matter(),
                found: self.disorder.delta_j.len(),
            });
        }
        if self.variant == Variant::NoMatterRydberg && !self.disorder.is_zero() {
            return Err(Error::invalid(
                "disorder",
                "the Rydberg variant carries no vertex disorder",
            ));
        }
        Ok(())
    }
}

/// Couplings of one Hamiltonian on one lattice, flattened for fast sweeps.
#[derive(Debug, Clone)]
pub struct Model {
    pub variant: Variant,
    j: f64,
    half_omega: f64,
    /// Single-spin z field of the Rydberg variant.
    detuning: f64,
    n_matter: usize,
    n_spins: usize,
    first_active: usize,
    vertex_coeff: Vec<f64>,
    vertex_const: Vec<f64>,
    /// Spin indices of the links of each vertex (CSR).
    vlink_offsets: Vec<u32>,
    vlink_spins: Vec<u32>,
    /// `(matter a, link spin, matter b)` per link.
    link_ends: Vec<[u32; 3]>,
}

/// Per-step buffers.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    pub vertex_sz: Vec<f64>,
    pub gauss: Vec<f64>,
    pub field_x: Vec<f64>,
}

impl Model {
    pub fn new(lattice: &SpinLattice, params: &ModelParams) -> Result<Self> {
        params.validate(lattice)?;
        let nm = lattice.n_matter();
        let mut vlink_offsets = Vec::with_capacity(nm + 1);
        let mut vlink_spins = Vec::with_capacity(3 * nm);
        vlink_offsets.push(0);
        for links in &lattice.vertex_links {
            vlink_spins.extend(links.iter().map(|&l| (nm + l) as u32));
            vlink_offsets.push(vlink_spins.len() as u32);
        }
        let link_ends = lattice
            .link_sites
            .iter()
            .enumerate()
            .map(|(l, s)| {
                [
                    s.endpoints[0] as u32,
                    (nm + l) as u32,
                    s.endpoints[1] as u32,
                ]
            })
            .collect();
        let (vertex_coeff, vertex_const, detuning, first_active) = match params.variant {
            Variant::WithMatter => {
                let coeff: Vec<f64> = params
                    .disorder
                    .delta_j
                    .iter()
                    .map(|d| params.v * (1.0 + d) / 4.0)
                    .collect();
                let konst = coeff
                    .iter()
                    .zip(&lattice.vertex_links)
                    .map(|(c, links)| 0.5 * c * (links.len() as f64 + 1.0 - 4.0))
                    .collect();
                (coeff, konst, 0.0, 0)
            }
            Variant::NoMatterRydberg => {
                (vec![params.v / 4.0; nm], vec![0.0; nm], params.v / 2.0, nm)
            }
        };
        Ok(Self {
            variant: params.variant,
            j: if params.variant == Variant::WithMatter {
                params.j
            } else {
                0.0
            },
            half_omega: params.omega / 2.0,
            detuning,
            n_matter: nm,
            n_spins: lattice.n_spins(),
            first_active: first_active,
            vertex_coeff,
            vertex_const,
            vlink_offsets,
            vlink_spins,
            link_ends,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn n_vertices(&self) -> usize {
        self.n_matter
    }

    /// Spins that carry dynamics (links only in the Rydberg variant).
    pub fn active_spins(&self) -> std::ops::Range<usize> {
        self.first_active..self.n_spins
    }

    pub fn n_active(&self) -> usize {
        self.n_spins - self.first_active
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            vertex_sz: vec![0.0; self.n_matter],
            gauss: vec![0.0; self.n_matter],
            field_x: vec![0.0; self.n_spins],
        }
    }

    #[inline]
    fn links_of(&self, j: usize) -> &[u32] {
        &self.vlink_spins[self.vlink_offsets[j] as usize..self.vlink_offsets[j + 1] as usize]
    }

    /// Fills vertex z-sums and Gauss values; returns the vertex-mean Gauss law.
    pub fn vertex_pass(&self, spins: &[Vec3], scratch: &mut Scratch) -> f64 {
        let with_matter = self.variant == Variant::WithMatter;
        let mut total = 0.0;
        for j in 0..self.n_matter {
            let (mut sum, mut prod) = if with_matter {
                (spins[j][2], spins[j][2])
            } else {
                (0.0, 1.0)
            };
            for &s in self.links_of(j) {
                let z = spins[s as usize][2];
                sum += z;
                prod *= z;
            }
            scratch.vertex_sz[j] = sum;
            scratch.gauss[j] = -prod;
            total -= prod;
        }
        total / self.n_matter as f64
    }

    fn fill_field_x(&self, spins: &[Vec3], field_x: &mut [f64]) {
        field_x.fill(self.half_omega);
        if self.j != 0.0 {
            for &[a, l, b] in &self.link_ends {
                let (a, l, b) = (a as usize, l as usize, b as usize);
                let (xa, xl, xb) = (spins[a][0], spins[l][0], spins[b][0]);
                field_x[a] += self.j * xl * xb;
                field_x[l] += self.j * xa * xb;
                field_x[b] += self.j * xa * xl;
            }
        }
    }

    #[inline]
    fn field_z(&self, spins: &[Vec3], vertex_sz: &[f64], k: usize) -> f64 {
        let z = spins[k][2];
        if k < self.n_matter {
            self.vertex_coeff[k] * (vertex_sz[k] - z)
        } else {
            let [a, _, b] = self.link_ends[k - self.n_matter];
            let (a, b) = (a as usize, b as usize);
            self.vertex_coeff[a] * (vertex_sz[a] - z)
                + self.vertex_coeff[b] * (vertex_sz[b] - z)
                + self.detuning
        }
    }

    /// `dH/dsigma` for every spin; inactive spins get a zero field.
    pub fn fields(&self, spins: &[Vec3]) -> Vec<Vec3> {
        let mut scratch = self.scratch();
        self.vertex_pass(spins, &mut scratch);
        self.fill_field_x(spins, &mut scratch.field_x);
        (0..self.n_spins)
            .map(|k| {
                if k < self.first_active {
                    [0.0; 3]
                } else {
                    [
                        scratch.field_x[k],
                        0.0,
                        self.field_z(spins, &scratch.vertex_sz, k),
                    ]
                }
            })
            .collect()
    }

    pub fn energy(&self, spins: &[Vec3]) -> f64 {
        let mut e = 0.0;
        for j in 0..self.n_matter {
            let (mut sum, mut sq) = if self.variant == Variant::WithMatter {
                let z = spins[j][2];
                (z, z * z)
            } else {
                (0.0, 0.0)
            };
            for &s in self.links_of(j) {
                let z = spins[s as usize][2];
                sum += z;
                sq += z * z;
            }
            e += 0.5 * self.vertex_coeff[j] * (sum * sum - sq) + self.vertex_const[j];
        }
        for s in &spins[self.first_active..] {
            e += self.half_omega * s[0] + self.detuning * s[2];
        }
        if self.j != 0.0 {
            for &[a, l, b] in &self.link_ends {
                e += self.j * spins[a as usize][0] * spins[l as usize][0] * spins[b as usize][0];
            }
        }
        e
    }

    /// Protection energy of a single vertex.
    pub fn vertex_energy(&self, spins: &[Vec3], j: usize) -> f64 {
        let (mut sum, mut sq) = if self.variant == Variant::WithMatter {
            (spins[j][2], spins[j][2] * spins[j][2])
        } else {
            (0.0, 0.0)
        };
        for &s in self.links_of(j) {
            let z = spins[s as usize][2];
            sum += z;
            sq += z * z;
        }
        0.5 * self.vertex_coeff[j] * (sum * sum - sq) + self.vertex_const[j]
    }

    /// One frozen-field step: all fields from the pre-step configuration,
    /// then an exact rotation of each spin. Expects `scratch` to hold the
    /// vertex pass of `spins`.
    pub fn rotate_pass(&self, spins: &mut [Vec3], scratch: &mut Scratch, dt: f64) {
        self.fill_field_x(spins, &mut scratch.field_x);
        for k in self.first_active..self.n_spins {
            let b = [
                scratch.field_x[k],
                0.0,
                self.field_z(spins, &scratch.vertex_sz, k),
            ];
            spins[k] = precess(spins[k], b, dt);
        }
    }

    pub fn trotter_step(&self, spins: &mut [Vec3], scratch: &mut Scratch, dt: f64) {
        self.vertex_pass(spins, scratch);
        self.rotate_pass(spins, scratch, dt);
    }

    /// Right-hand side `sigma x dH/dsigma` on a flat `3N` state.
    pub fn rhs(&self, y: &[f64], dy: &mut [f64], scratch: &mut Scratch) -> f64 {
        let spins: &[Vec3] = as_vec3(y);
        let mean_g = self.vertex_pass(spins, scratch);
        self.fill_field_x(spins, &mut scratch.field_x);
        dy[..3 * self.first_active].fill(0.0);
        for k in self.first_active..self.n_spins {
            let s = spins[k];
            let bx = scratch.field_x[k];
            let bz = self.field_z(spins, &scratch.vertex_sz, k);
            // s x (bx, 0, bz)
            dy[3 * k] = s[1] * bz;
            dy[3 * k + 1] = s[2] * bx - s[0] * bz;
            dy[3 * k + 2] = -s[1] * bx;
        }
        mean_g
    }
}

fn as_vec3(y: &[f64]) -> &[Vec3] {
    assert_eq!(y.len() % 3, 0);
    // SAFETY: [f64; 3] has the same layout as three consecutive f64 values.
    unsafe { std::slice::from_raw_parts(y.as_ptr() as *const Vec3, y.len() / 3) }
}

/// Exact solution of `ds/dt = s x b` over `dt` for a constant field `b`.
#[inline]
pub fn precess(s: Vec3, b: Vec3, dt: f64) -> Vec3 {
    let norm_b = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if norm_b == 0.0 {
        return s;
    }
    let k = [b[0] / norm_b, b[1] / norm_b, b[2] / norm_b];
    // s x b = -(b x s): rotation about b by -|b| dt
    let (sin, cos) = (-norm_b * dt).sin_cos();
    let kxs = [
        k[1] * s[2] - k[2] * s[1],
        k[2] * s[0] - k[0] * s[2],
        k[0] * s[1] - k[1] * s[0],
    ];
    let kds = (k[0] * s[0] + k[1] * s[1] + k[2] * s[2]) * (1.0 - cos);
    [
        s[0] * cos + kxs[0] * sin + k[0] * kds,
        s[1] * cos + kxs[1] * sin + k[1] * kds,
        s[2] * cos + kxs[2] * sin + k[2] * kds,
    ]
}

pub fn energy(
    config: &SpinConfiguration,
    lattice: &SpinLattice,
    params: &ModelParams,
) -> Result<f64> {
    config.check_len(lattice)?;
    Ok(Model::new(lattice, params)?.energy(&config.spins))
}

pub fn effective_field(
    config: &SpinConfiguration,
    lattice: &SpinLattice,
    params: &ModelParams,
    spin_index: usize,
) -> Result<Vec3> {
    config.check_len(lattice)?;
    if spin_index >= lattice.n_spins() {
        return Err(Error::invalid(
            "spin_index",
            format!("{spin_index} out of range 0..{}", lattice.n_spins()),
        ));
    }
    Ok(Model::new(lattice, params)?.fields(&config.spins)[spin_index])
}

pub fn trotter_step(
    config: &SpinConfiguration,
    lattice: &SpinLattice,
    params: &ModelParams,
) -> Result<SpinConfiguration> {
    config.check_len(lattice)?;
    let model = Model::new(lattice, params)?;
    let mut out = config.clone();
    let mut scratch = model.scratch();
    model.trotter_step(&mut out.spins, &mut scratch, params.dt);
    Ok(out)
}

/// Time series of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub mean_gauss: Vec<f64>,
    /// Time-averaged gauge violation, integrated at full step resolution.
    pub eps_series: Vec<f64>,
    /// Energy per active spin.
    pub energy_series: Vec<f64>,
    /// Per-vertex Gauss values at each recorded time, when kept.
    pub gauss_series: Option<Vec<Vec<f64>>>,
}

impl TrajectoryRecord {
    fn with_capacity(n: usize, keep_vertices: bool) -> Self {
        Self {
            times: Vec::with_capacity(n),
            mean_gauss: Vec::with_capacity(n),
            eps_series: Vec::with_capacity(n),
            energy_series: Vec::with_capacity(n),
            gauss_series: keep_vertices.then(|| Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// JSON-lines rendering: one object per recorded time.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let line = RecordLine {
                t: self.times[i],
                eps: self.eps_series[i],
                mean_gauss: self.mean_gauss[i],
                energy_density: self.energy_series[i],
                gauss: self.gauss_series.as_ref().map(|g| g[i].clone()),
            };
            out.push_str(&serde_json::to_string(&line).expect("record line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut rec = Self::with_capacity(0, false);
        let mut vertices: Vec<Vec<f64>> = Vec::new();
        let mut all_have_gauss = true;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: RecordLine = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("trajectory line {}", i + 1), e.to_string()))?;
            rec.times.push(l.t);
            rec.eps_series.push(l.eps);
            rec.mean_gauss.push(l.mean_gauss);
            rec.energy_series.push(l.energy_density);
            match l.gauss {
                Some(g) => vertices.push(g),
                None => all_have_gauss = false,
            }
        }
        if all_have_gauss && !vertices.is_empty() {
            rec.gauss_series = Some(vertices);
        }
        Ok(rec)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    t: f64,
    eps: f64,
    mean_gauss: f64,
    energy_density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gauss: Option<Vec<f64>>,
}

/// Linear grid up to `t = 10` (spacing 0.1) followed by log-spaced points.
pub fn default_record_times(t_end: f64) -> Vec<f64> {
    let mut times: Vec<f64> = (0..=100)
        .map(|k| k as f64 * 0.1)
        .take_while(|&t| t <= t_end + 1e-12)
        .collect();
    if t_end > 10.0 {
        let per_decade = 40.0;
        let n = ((t_end / 10.0).log10() * per_decade).ceil() as usize;
        for k in 1..=n {
            let t = 10.0 * 10f64.powf(k as f64 / per_decade);
            times.push(t.min(t_end));
        }
    }
    times.dedup();
    times
}

/// Observer hook for [`run_trotter`]: `(time, spins, per-vertex gauss, mean gauss, eps)`.
pub type Observer<'a> = dyn FnMut(f64, &[Vec3], &[f64], f64, f64) + 'a;

/// Trotterized evolution with a callback at the requested step indices.
///
/// `record_steps` must be sorted; the time-averaged error is accumulated with
/// the trapezoidal rule at every step.
pub fn run_trotter(
    model: &Model,
    spins: &mut [Vec3],
    dt: f64,
    n_steps: usize,
    record_steps: &[usize],
    observer: &mut Observer<'_>,
) {
    let mut scratch = model.scratch();
    let mut next = 0;
    let mut integral = 0.0;
    let mut f_prev = 0.0;
    for step in 0..=n_steps {
        let g = model.vertex_pass(spins, &mut scratch);
        let f = 1.0 - g;
        if step > 0 {
            integral += 0.5 * dt * (f_prev + f);
        }
        f_prev = f;
        while next < record_steps.len() && record_steps[next] == step {
            let t = step as f64 * dt;
            let eps = if step == 0 { f } else { integral / t };
            observer(t, spins, &scratch.gauss, g, eps);
            next += 1;
        }
        if step == n_steps || next == record_steps.len() {
            break;
        }
        model.rotate_pass(spins, &mut scratch, dt);
    }
}

/// Maps requested times to sorted, de-duplicated step indices.
pub fn record_steps(record_times: &[f64], dt: f64, t_end: f64) -> Result<(Vec<usize>, usize)> {
    if !(t_end >= 0.0) {
        return Err(Error::invalid("t_end", "must be non-negative"));
    }
    let n_steps = (t_end / dt).round() as usize;
    let mut steps = Vec::with_capacity(record_times.len());
    for &t in record_times {
        if !(t >= 0.0) || t > t_end * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::invalid(
                "record_times",
                format!("{t} lies outside [0, {t_end}]"),
            ));
        }
        steps.push(((t / dt).round() as usize).min(n_steps));
    }
    steps.sort_unstable();
    steps.dedup();
    Ok((steps, n_steps))
}

pub fn integrate_trotter(
    config: &SpinConfiguration,
    lattice: &SpinLattice,
    params: &ModelParams,
    record_times: &[f64],
) -> Result<TrajectoryRecord> {
    integrate_trotter_opts(config, lattice, params, record_times, true)
}

pub fn integrate_trotter_opts(
    config: &SpinConfiguration,
    lattice: &SpinLattice,
    params: &ModelParams,
    record_times: &[f64],
    keep_vertices: bool,
) -> Result<TrajectoryRecord> {
    config.check_len(lattice)?;
    let model = Model::new(lattice, params)?;
    let (steps, n_steps) = record_steps(record_times, params.dt, params.t_end)?;
    let mut spins = config.spins.clone();
    let mut rec = TrajectoryRecord::with_capacity(steps.len(), keep_vertices);
    let n_active = model.n_active() as f64;
    run_trotter(
        &model,
        &mut spins,
        params.dt,
        n_steps,
        &steps,
        &mut |t, s, gauss, g, eps| {
            rec.times.push(t);
            rec.mean_gauss.push(g);
            rec.eps_series.push(eps);
            rec.energy_series.push(model.energy(s) / n_active);
            if let Some(series) = rec.gauss_series.as_mut() {
                series.push(gauss.to_vec());
            }
        },
    );
    Ok(rec)
}

/// Reference solution with adaptive Dormand–Prince 5(4) on the full system.
///
/// The state is augmented with the running integral of `1 - <G>` so the
/// time-averaged error is as accurate as the spins themselves.
pub fn integrate_ode(
    config: &SpinConfiguration,
    lattice: &SpinLattice,
    params: &ModelParams,
    rel_tol: f64,
    abs_tol: f64,
    record_times: &[f64],
) -> Result<TrajectoryRecord> {
    config.check_len(lattice)?;
    if !(rel_tol > 0.0) || !(abs_tol > 0.0) {
        return Err(Error::invalid("tolerances", "must be positive"));
    }
    if !(params.t_end >= 0.0) {
        return Err(Error::invalid("t_end", "must be non-negative"));
    }
    let model = Model::new(lattice, params)?;
    let n = 3 * lattice.n_spins();
    let mut y = vec![0.0; n + 1];
    for (k, s) in config.spins.iter().enumerate() {
        y[3 * k..3 * k + 3].copy_from_slice(s);
    }
    let mut times: Vec<f64> = record_times.to_vec();
    if times
        .iter()
        .any(|&t| !(t >= 0.0) || t > params.t_end * (1.0 + 1e-12) + 1e-12)
    {
        return Err(Error::invalid("record_times", "must lie within [0, t_end]"));
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    let mut scratch = model.scratch();
    let mut solver = Dopri5::new(
        |_t, y: &[f64], dy: &mut [f64]| {
            let g = model.rhs(&y[..n], &mut dy[..n], &mut scratch);
            dy[n] = 1.0 - g;
        },
        Tolerances {
            rel: rel_tol,
            abs: abs_tol,
        },
    )?;
    let mut rec = TrajectoryRecord::with_capacity(times.len(), true);
    let n_active = model.n_active() as f64;
    let mut obs_scratch = model.scratch();
    solver.integrate(0.0, &mut y, &times, |t, y| {
        let spins = as_vec3(&y[..n]);
        let g = model.vertex_pass(spins, &mut obs_scratch);
        rec.times.push(t);
        rec.mean_gauss.push(g);
        rec.eps_series
            .push(if t > 0.0 { y[n] / t } else { 1.0 - g });
        rec.energy_series.push(model.energy(spins) / n_active);
        rec.gauss_series
            .as_mut()
            .unwrap()
            .push(obs_scratch.gauss.clone());
    })?;
    Ok(rec)
}
