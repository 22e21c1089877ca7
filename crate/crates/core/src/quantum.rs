//! Exact quantum dynamics of small lattices and the mean-field / DTWA / ED
//! comparison.
//!
//! Basis states are bit strings over the active spins in lattice order
//! (links only for the Rydberg variant); bit `q = 1` means `sigma^z = +1`.
//! Every term of either Hamiltonian is either diagonal in that basis or a
//! product of `sigma^x`, so operators are stored as a diagonal plus a list
//! of bit-flip masks.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_trotter_opts, record_steps, Model, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::lattice::SpinLattice;
use crate::state::{
    default_n_mix, sample_disorder, sample_dtwa, sample_gauge_invariant,
    sample_gauge_invariant_no_matter, SeededRng, SpinConfiguration,
};

/// Largest register handled by [`build_hamiltonian`].
pub const MAX_QUBITS: usize = 24;

/// Largest register for the dense-exponential oracle.
pub const MAX_DENSE_QUBITS: usize = 10;

pub type StateVector = Vec<Complex64>;

/// Factor on `H` that makes Pauli dynamics run on the classical clock.
pub const CLASSICAL_CLOCK: f64 = 0.5;

/// `H = diag + sum_m coeff_m X^{mask_m}`.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub n_qubits: usize,
    pub diag: Vec<f64>,
    pub flips: Vec<(u64, f64)>,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Always true: real diagonal plus real symmetric flips.
    pub fn is_hermitian(&self) -> bool {
        self.diag.iter().all(|d| d.is_finite()) && self.flips.iter().all(|(_, c)| c.is_finite())
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        if row == col {
            return self.diag[row];
        }
        let m = (row ^ col) as u64;
        self.flips
            .iter()
            .filter(|(mask, _)| *mask == m)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        out.par_iter_mut()
            .enumerate()
            .with_min_len(1024)
            .for_each(|(s, o)| {
                let mut acc = psi[s] * self.diag[s];
                for &(mask, c) in &self.flips {
                    acc += psi[s ^ mask as usize] * c;
                }
                *o = acc;
            });
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.n_qubits > MAX_DENSE_QUBITS {
            return Err(Error::invalid(
                "n_qubits",
                format!("dense matrices limited to {MAX_DENSE_QUBITS} qubits"),
            ));
        }
        let d = self.dim();
        Ok(DMatrix::from_fn(d, d, |r, c| self.entry(r, c)))
    }

    /// `f * H`.
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            n_qubits: self.n_qubits,
            diag: self.diag.iter().map(|d| d * f).collect(),
            flips: self.flips.iter().map(|&(m, c)| (m, c * f)).collect(),
        }
    }

    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut h = vec![Complex64::new(0.0, 0.0); psi.len()];
        self.apply(psi, &mut h);
        psi.iter().zip(&h).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// Maps lattice spins onto register qubits.
#[derive(Debug, Clone)]
pub struct Register {
    pub variant: Variant,
    pub first_spin: usize,
    pub n_qubits: usize,
    /// Qubit masks of the spins entering each vertex's Gauss law.
    pub vertex_masks: Vec<u64>,
}

impl Register {
    pub fn new(lattice: &SpinLattice, variant: Variant) -> Result<Self> {
        let nm = lattice.n_matter();
        let first_spin = match variant {
            Variant::WithMatter => 0,
            Variant::NoMatterRydberg => nm,
        };
        let n_qubits = lattice.n_spins() - first_spin;
        if n_qubits > MAX_QUBITS {
            return Err(Error::invalid(
                "lattice",
                format!("{n_qubits} spins exceed the exact-evolution limit of {MAX_QUBITS}"),
            ));
        }
        let vertex_masks = lattice
            .vertex_links
            .iter()
            .enumerate()
            .map(|(j, links)| {
                let mut m = links
                    .iter()
                    .fold(0u64, |m, &l| m | 1 << (nm + l - first_spin));
                if variant == Variant::WithMatter {
                    m |= 1 << j;
                }
                m
            })
            .collect();
        Ok(Self {
            variant,
            first_spin,
            n_qubits,
            vertex_masks,
        })
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// `+-z` configuration of a basis state (inactive matter spins at `+z`).
    pub fn basis_config(&self, lattice: &SpinLattice, index: usize) -> SpinConfiguration {
        let mut spins = vec![[0.0, 0.0, 1.0]; lattice.n_spins()];
        for q in 0..self.n_qubits {
            spins[self.first_spin + q][2] = if index >> q & 1 == 1 { 1.0 } else { -1.0 };
        }
        SpinConfiguration { spins }
    }

    /// Basis index of a `+-z` configuration.
    pub fn basis_index(&self, config: &SpinConfiguration) -> Result<usize> {
        if !config.is_z_product() {
            return Err(Error::invalid("config", "not a +-z product state"));
        }
        Ok((0..self.n_qubits)
            .filter(|&q| config.spins[self.first_spin + q][2] > 0.0)
            .fold(0usize, |i, q| i | 1 << q))
    }

    /// `G_j` of a basis state: minus the product of the vertex's `sigma^z`.
    #[inline]
    pub fn gauss_sign(&self, vertex: usize, index: usize) -> f64 {
        let mask = self.vertex_masks[vertex];
        let ups = (index as u64 & mask).count_ones();
        let downs = mask.count_ones() - ups;
        if downs % 2 == 0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Sparse Hamiltonian of the chosen variant; the diagonal is the classical
/// energy of each basis configuration.
pub fn build_hamiltonian(
    lattice: &SpinLattice,
    params: &ModelParams,
) -> Result<(SparseOperator, Register)> {
    let reg = Register::new(lattice, params.variant)?;
    let model = Model::new(lattice, params)?;
    let diag = (0..reg.dim())
        .into_par_iter()
        .map(|i| model.energy(&reg.basis_config(lattice, i).spins))
        .collect();
    let mut flips = Vec::new();
    if params.omega != 0.0 {
        flips.extend((0..reg.n_qubits).map(|q| (1u64 << q, params.omega / 2.0)));
    }
    if params.variant == Variant::WithMatter && params.j != 0.0 {
        let nm = lattice.n_matter();
        for t in &lattice.bond_triples {
            let mask = 1u64 << t.matter_a | 1u64 << (nm + t.link) | 1u64 << t.matter_b;
            flips.push((mask, params.j));
        }
    }
    Ok((
        SparseOperator {
            n_qubits: reg.n_qubits,
            diag,
            flips,
        },
        reg,
    ))
}

pub fn basis_state(dim: usize, index: usize) -> StateVector {
    let mut psi = vec![Complex64::new(0.0, 0.0); dim];
    psi[index] = Complex64::new(1.0, 0.0);
    psi
}

pub fn norm(psi: &[Complex64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// `<G_j>` as a probability-weighted sum over basis states.
pub fn gauss_expectation(psi: &[Complex64], reg: &Register, vertex: usize) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(i, a)| a.norm_sqr() * reg.gauss_sign(vertex, i))
        .sum()
}

/// Vertex-mean `<G>`.
pub fn mean_gauss(psi: &[Complex64], reg: &Register) -> f64 {
    let nv = reg.vertex_masks.len();
    let total: f64 = psi
        .par_iter()
        .enumerate()
        .with_min_len(1024)
        .map(|(i, a)| {
            let p = a.norm_sqr();
            if p == 0.0 {
                return 0.0;
            }
            p * (0..nv).map(|j| reg.gauss_sign(j, i)).sum::<f64>()
        })
        .sum();
    total / nv as f64
}

/// Lanczos propagator settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KrylovOptions {
    pub krylov_dim: usize,
    pub tol: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            krylov_dim: 30,
            tol: 1e-12,
        }
    }
}

/// `exp(-i H dt) psi` from a Lanczos subspace with full reorthogonalization.
///
/// The step is halved until the a-posteriori error estimate
/// `beta_m |(exp(-i T dt) e_1)_m|` drops below `tol`; an invariant subspace
/// ends the recursion early and is exact.
pub fn krylov_evolve(
    psi: &[Complex64],
    h: &SparseOperator,
    dt: f64,
    opts: KrylovOptions,
) -> Result<StateVector> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if opts.krylov_dim < 2 {
        return Err(Error::invalid("krylov_dim", "must be at least 2"));
    }
    let mut state = psi.to_vec();
    let mut remaining = dt;
    let mut step = dt;
    let mut halvings = 0;
    while remaining > 0.0 {
        let tau = step.min(remaining);
        match krylov_step(&state, h, tau, opts)? {
            Some(next) => {
                state = next;
                remaining -= tau;
                if remaining < 1e-15 * dt {
                    break;
                }
            }
            None => {
                halvings += 1;
                if halvings > 50 {
                    return Err(Error::Krylov(format!(
                        "no step below tolerance {:e}",
                        opts.tol
                    )));
                }
                step = tau / 2.0;
            }
        }
    }
    Ok(state)
}

fn krylov_step(
    psi: &[Complex64],
    h: &SparseOperator,
    tau: f64,
    opts: KrylovOptions,
) -> Result<Option<StateVector>> {
    let n = psi.len();
    let beta0 = norm(psi);
    if beta0 == 0.0 {
        return Ok(Some(psi.to_vec()));
    }
    let m_max = opts.krylov_dim.min(n);
    let mut basis: Vec<StateVector> = vec![psi.iter().map(|a| a / beta0).collect()];
    let mut alpha = Vec::with_capacity(m_max);
    let mut beta = Vec::with_capacity(m_max);
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let coeffs = loop {
        let k = alpha.len();
        h.apply(&basis[k], &mut w);
        let a: f64 = basis[k]
            .iter()
            .zip(&w)
            .map(|(v, x)| (v.conj() * x).re)
            .sum();
        alpha.push(a);
        for v in &basis {
            let c: Complex64 = v.iter().zip(&w).map(|(v, x)| v.conj() * x).sum();
            w.iter_mut().zip(v).for_each(|(x, v)| *x -= c * v);
        }
        let b = norm(&w);
        if b < 1e-13 * (a.abs() + 1.0) {
            break small_exp(&alpha, &beta, tau);
        }
        if k >= 2 || k + 1 == m_max {
            let c = small_exp(&alpha, &beta, tau);
            if b * c[k].norm() <= opts.tol {
                break c;
            }
            if k + 1 == m_max {
                return Ok(None);
            }
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    };
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (v, c) in basis.iter().zip(&coeffs) {
        let c = c * beta0;
        out.iter_mut().zip(v).for_each(|(o, v)| *o += c * v);
    }
    Ok(Some(out))
}

/// `exp(-i T tau) e_1` for the Lanczos tridiagonal `T`.
fn small_exp(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<Complex64> {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    (0..m)
        .map(|i| {
            (0..m)
                .map(|l| {
                    let phase = Complex64::from_polar(1.0, -eig.eigenvalues[l] * tau);
                    phase * eig.eigenvectors[(i, l)] * eig.eigenvectors[(0, l)]
                })
                .sum()
        })
        .collect()
}

/// Dense `exp(-i H t) psi` via full diagonalization; reference for small registers.
pub fn dense_evolve(psi: &[Complex64], h: &SparseOperator, t: f64) -> Result<StateVector> {
    let eig = SymmetricEigen::new(h.to_dense()?);
    let v = &eig.eigenvectors;
    let d = psi.len();
    let proj: Vec<Complex64> = (0..d)
        .map(|l| {
            let c: Complex64 = (0..d).map(|s| psi[s] * v[(s, l)]).sum();
            c * Complex64::from_polar(1.0, -eig.eigenvalues[l] * t)
        })
        .collect();
    Ok((0..d)
        .map(|s| (0..d).map(|l| proj[l] * v[(s, l)]).sum())
        .collect())
}

/// `<G>(t)` and its running time average from one basis state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumTrajectory {
    pub times: Vec<f64>,
    pub mean_gauss: Vec<f64>,
    pub eps_series: Vec<f64>,
    pub energy: Vec<f64>,
    pub max_norm_deviation: f64,
}

/// Evolves `psi` with fixed steps `dt`, integrating `1 - <G>` at every step
/// and recording at the grid points of `record_times` (snapped to `dt`).
pub fn evolve_recorded(
    psi: &[Complex64],
    h: &SparseOperator,
    reg: &Register,
    dt: f64,
    t_end: f64,
    record_times: &[f64],
    opts: KrylovOptions,
) -> Result<QuantumTrajectory> {
    let (steps, n_steps) = record_steps(record_times, dt, t_end)?;
    let mut psi = psi.to_vec();
    let mut out = QuantumTrajectory {
        times: Vec::with_capacity(steps.len()),
        mean_gauss: Vec::with_capacity(steps.len()),
        eps_series: Vec::with_capacity(steps.len()),
        energy: Vec::with_capacity(steps.len()),
        max_norm_deviation: 0.0,
    };
    let mut g = mean_gauss(&psi, reg);
    let mut integral = 0.0;
    let mut next = steps.iter().peekable();
    let record =
        |n: usize, g: f64, integral: f64, psi: &[Complex64], out: &mut QuantumTrajectory| {
            let t = n as f64 * dt;
            out.times.push(t);
            out.mean_gauss.push(g);
            out.eps_series
                .push(if n == 0 { 1.0 - g } else { integral / t });
            out.energy.push(h.expectation(psi));
        };
    for n in 0..=n_steps {
        if n > 0 {
            psi = krylov_evolve(&psi, h, dt, opts)?;
            let g_new = mean_gauss(&psi, reg);
            integral += 0.5 * dt * ((1.0 - g) + (1.0 - g_new));
            g = g_new;
            out.max_norm_deviation = out.max_norm_deviation.max((norm(&psi) - 1.0).abs());
        }
        while next.peek() == Some(&&n) {
            next.next();
            record(n, g, integral, &psi, &mut out);
        }
    }
    Ok(out)
}

/// Settings of the three-way method comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSpec {
    /// Disorder strength of the with-matter variant (ignored without matter).
    pub delta: f64,
    /// Independent initial states (and disorder draws) averaged over.
    pub n_draws: usize,
    /// DTWA samples per draw.
    pub n_dtwa: usize,
    /// Fixed step of the exact evolution.
    pub ed_dt: f64,
    pub krylov: KrylovOptions,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            delta: 0.1,
            n_draws: 20,
            n_dtwa: 2000,
            ed_dt: 0.05,
            krylov: KrylovOptions::default(),
        }
    }
}

/// Ensemble-averaged `eps(t)` of the three methods on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub times: Vec<f64>,
    pub meanfield: Vec<f64>,
    pub dtwa: Vec<f64>,
    pub ed: Vec<f64>,
}

impl MethodComparison {
    /// Long format `method,t,eps`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,t,eps")?;
        for (name, series) in [
            ("meanfield", &self.meanfield),
            ("dtwa", &self.dtwa),
            ("ed", &self.ed),
        ] {
            for (t, e) in self.times.iter().zip(series) {
                writeln!(w, "{name},{t},{e}")?;
            }
        }
        Ok(())
    }
}

/// Runs mean-field, DTWA and exact evolution from the same `+-z` initial
/// states. `params.disorder` is replaced by a fresh draw per initial state;
/// record times must be multiples of both `params.dt` and `spec.ed_dt`.
///
/// The classical equations `dsigma/dt = sigma x dH/dsigma` are the
/// semiclassical limit of Pauli operators evolving under `H/2`, so the exact
/// evolution uses [`CLASSICAL_CLOCK`] times `H` to share the classical time axis.
pub fn compare_methods(
    lattice: &SpinLattice,
    params: &ModelParams,
    spec: &CompareSpec,
    seed: u64,
    record_times: &[f64],
) -> Result<MethodComparison> {
    if spec.n_draws == 0 || spec.n_dtwa == 0 {
        return Err(Error::invalid("n_draws/n_dtwa", "must be at least 1"));
    }
    if spec.delta < 0.0 {
        return Err(Error::invalid("delta", "must be non-negative"));
    }
    Register::new(lattice, params.variant)?;
    let rngs = SeededRng::new(seed);
    let draws: Vec<[Vec<f64>; 3]> = (0..spec.n_draws as u64)
        .into_par_iter()
        .map(|d| compare_one(lattice, params, spec, &rngs, d, record_times))
        .collect::<Result<_>>()?;
    let (_, first) = record_grid(record_times, params)?;
    let mean = |k: usize| -> Vec<f64> {
        (0..first.len())
            .map(|i| draws.iter().map(|d| d[k][i]).sum::<f64>() / draws.len() as f64)
            .collect()
    };
    let (meanfield, dtwa, ed) = (mean(0), mean(1), mean(2));
    Ok(MethodComparison {
        times: first,
        meanfield,
        dtwa,
        ed,
    })
}

fn record_grid(record_times: &[f64], params: &ModelParams) -> Result<(Vec<usize>, Vec<f64>)> {
    let (steps, _) = record_steps(record_times, params.dt, params.t_end)?;
    let times = steps.iter().map(|&n| n as f64 * params.dt).collect();
    Ok((steps, times))
}

fn compare_one(
    lattice: &SpinLattice,
    params: &ModelParams,
    spec: &CompareSpec,
    rngs: &SeededRng,
    draw: u64,
    record_times: &[f64],
) -> Result<[Vec<f64>; 3]> {
    let mut rng = rngs.substream(draw, 0);
    let mut p = params.clone();
    let base = match params.variant {
        Variant::WithMatter => {
            p.disorder = sample_disorder(lattice, spec.delta, &mut rng)?;
            sample_gauge_invariant(lattice, &mut rng)
        }
        Variant::NoMatterRydberg => {
            sample_gauge_invariant_no_matter(lattice, &mut rng, default_n_mix(lattice))?
        }
    };
    let (_, grid) = record_grid(record_times, &p)?;

    let mf = integrate_trotter_opts(&base, lattice, &p, &grid, false)?;

    let mut dtwa = vec![0.0; grid.len()];
    for s in 0..spec.n_dtwa as u64 {
        let mut r = rngs.substream(draw, 1 + s);
        let sample = sample_dtwa(&base, &mut r)?;
        let rec = integrate_trotter_opts(&sample, lattice, &p, &grid, false)?;
        dtwa.iter_mut()
            .zip(&rec.eps_series)
            .for_each(|(a, e)| *a += e);
    }
    dtwa.iter_mut().for_each(|a| *a /= spec.n_dtwa as f64);

    let (h, reg) = build_hamiltonian(lattice, &p)?;
    let h = h.scaled(CLASSICAL_CLOCK);
    let psi = basis_state(reg.dim(), reg.basis_index(&base)?);
    let ed = evolve_recorded(&psi, &h, &reg, spec.ed_dt, p.t_end, &grid, spec.krylov)?;
    let ed_eps = grid
        .iter()
        .map(|&t| crate::observables::interpolate(&ed.times, &ed.eps_series, t))
        .collect::<Result<Vec<_>>>()?;
    Ok([mf.eps_series, dtwa, ed_eps])
}
