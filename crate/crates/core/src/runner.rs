//! Experiment presets and the ensemble runner.
//!
//! A run writes `manifest.json`, one JSON-lines file per trajectory under
//! `trajectories/`, and CSV/JSON summaries under `summary/`. Trajectory `n`
//! always draws its disorder and initial state from stream `n` of the master
//! seed, so outputs do not depend on the worker count and an interrupted run
//! can be completed from the files already on disk.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{
    constraining_root, critical_protection, double_root, kinematic_consistency, lmg_evolve,
    PotentialCurve,
};
use crate::dynamics::{
    default_record_times, integrate_ode, integrate_trotter_opts, ModelParams, TrajectoryRecord,
    Variant,
};
use crate::error::{Error, Result};
use crate::lattice::{build_honeycomb, Boundary, SpinLattice};
use crate::observables::{interpolate, linear_regression, pearson, CurvatureAxis, EnsembleSummary};
use crate::quantum::{compare_methods, CompareSpec, KrylovOptions};
use crate::state::{line_defect_state, sample_disorder, sample_gauge_invariant, SeededRng};
use crate::surface::{
    defect_mask, family_vicsek_collapse, fit_power_law, height_cumulants, height_function,
    height_stats, presaturation_window, scan_exponents, write_heights_csv, write_width_curves_csv,
    HeightField, HeightRule, ScalingFit, WidthCurve,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Plateau height and critical time versus `V/Omega`.
    PlateauScan,
    /// Effective potential, roots and collective-spin orbits around `(V/Omega)_c`.
    CriticalScan,
    /// Line-defect fronts, height statistics and scaling collapse.
    SurfaceGrowth,
    /// Mean-field, DTWA and exact evolution of a small lattice.
    MethodCompare,
    /// Trotterized versus adaptive integration.
    TrotterBenchmark,
    /// Plateau scan repeated over disorder strengths.
    DisorderScan,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::PlateauScan,
        Preset::CriticalScan,
        Preset::SurfaceGrowth,
        Preset::MethodCompare,
        Preset::TrotterBenchmark,
        Preset::DisorderScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PlateauScan => "plateau_scan",
            Preset::CriticalScan => "critical_scan",
            Preset::SurfaceGrowth => "surface_growth",
            Preset::MethodCompare => "method_compare",
            Preset::TrotterBenchmark => "trotter_benchmark",
            Preset::DisorderScan => "disorder_scan",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::invalid("preset", format!("unknown preset `{name}`")))
    }
}

/// Every knob of the post-processing, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub g_thres: f64,
    pub smoothing_window: usize,
    pub curvature_axis: CurvatureAxis,
    pub fit_window: (f64, f64),
    /// Cut the surface fit window before the front reaches half the lattice.
    pub presaturation: bool,
    pub height_rule: HeightRule,
    pub alpha_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    pub ode_rel_tol: f64,
    pub ode_abs_tol: f64,
    /// Trotter-versus-ODE comparison window for `eps`.
    pub benchmark_window: (f64, f64),
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            g_thres: crate::surface::DEFAULT_G_THRES,
            smoothing_window: crate::observables::DEFAULT_SMOOTHING_WINDOW,
            curvature_axis: CurvatureAxis::Log,
            fit_window: crate::surface::DEFAULT_FIT_WINDOW,
            presaturation: true,
            height_rule: HeightRule::ClusterConnected,
            alpha_grid: (1..=10).map(|k| k as f64 * 0.1).collect(),
            z_grid: (4..=12).map(|k| k as f64 * 0.25).collect(),
            ode_rel_tol: 1e-8,
            ode_abs_tol: 1e-10,
            benchmark_window: (1.0, 100.0),
        }
    }
}

/// Settings of the small-system quantum comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumSettings {
    pub variant: Variant,
    pub n_dtwa: usize,
    pub ed_dt: f64,
    pub krylov_dim: usize,
    pub krylov_tol: f64,
}

impl Default for QuantumSettings {
    fn default() -> Self {
        Self {
            variant: Variant::NoMatterRydberg,
            n_dtwa: 2000,
            ed_dt: 0.05,
            krylov_dim: 30,
            krylov_tol: 1e-12,
        }
    }
}

/// Full description of one experiment; everything that changes numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub preset: Preset,
    /// `(n_cells_x, n_cells_y)`; for surface growth only the row count is used.
    pub cells: [usize; 2],
    /// Surface growth: `n_cells_x` of each system size.
    #[serde(default)]
    pub surface_cells_x: Vec<usize>,
    pub v_over_omega: Vec<f64>,
    pub omega: f64,
    pub j_over_omega: f64,
    pub delta: f64,
    /// Disorder scan: strengths to sweep (replaces `delta`).
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Trajectories per parameter point (disorder/state draws for `method_compare`).
    pub n_ens: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub quantum: QuantumSettings,
}

impl ExperimentSpec {
    /// Desk-scale defaults of each preset.
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            preset,
            cells: [10, 10],
            surface_cells_x: Vec::new(),
            v_over_omega: vec![4.0, 6.0, 10.0, 20.0],
            omega: 1.0,
            j_over_omega: 1.0,
            delta: 0.1,
            deltas: Vec::new(),
            n_ens: 50,
            t_end: 200.0,
            dt: 0.01,
            seed: 1,
            analysis: AnalysisSettings::default(),
            quantum: QuantumSettings::default(),
        };
        match preset {
            Preset::PlateauScan => base,
            Preset::CriticalScan => Self {
                v_over_omega: vec![2.0, 3.0, 3.3, 3.32, 3.34, 3.4, 4.0, 5.0],
                n_ens: 1,
                t_end: 50.0,
                ..base
            },
            Preset::SurfaceGrowth => Self {
                cells: [20, 20],
                surface_cells_x: vec![20, 40],
                v_over_omega: vec![10.0],
                t_end: 1000.0,
                ..base
            },
            Preset::MethodCompare => Self {
                cells: [2, 2],
                v_over_omega: vec![10.0],
                j_over_omega: 0.0,
                n_ens: 20,
                t_end: 1000.0,
                ..base
            },
            Preset::TrotterBenchmark => Self {
                cells: [2, 2],
                v_over_omega: vec![10.0],
                n_ens: 10,
                t_end: 1000.0,
                ..base
            },
            Preset::DisorderScan => Self {
                v_over_omega: vec![4.0, 10.0, 20.0],
                deltas: vec![0.0, 0.05, 0.1, 0.2],
                n_ens: 20,
                t_end: 1000.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be positive and finite"))
            }
        };
        if self.v_over_omega.is_empty() {
            return Err(Error::invalid("v_over_omega", "list is empty"));
        }
        for &v in &self.v_over_omega {
            finite_pos("v_over_omega", v)?;
        }
        if self.n_ens == 0 {
            return Err(Error::invalid("n_ens", "must be at least 1"));
        }
        if self.cells[0] == 0 || self.cells[1] == 0 {
            return Err(Error::invalid("cells", "must be positive"));
        }
        finite_pos("omega", self.omega)?;
        finite_pos("dt", self.dt)?;
        finite_pos("t_end", self.t_end)?;
        if !self.j_over_omega.is_finite() {
            return Err(Error::invalid("j_over_omega", "must be finite"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", "must be non-negative"));
        }
        if self.deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid("deltas", "must be non-negative"));
        }
        let a = &self.analysis;
        if !(a.g_thres > 0.0 && a.g_thres < 2.0) {
            return Err(Error::invalid("g_thres", "must lie in (0, 2)"));
        }
        if a.smoothing_window < 3 {
            return Err(Error::invalid(
                "smoothing_window",
                "needs at least 3 points",
            ));
        }
        if !(a.fit_window.0 < a.fit_window.1) {
            return Err(Error::invalid("fit_window", "t_min must be below t_max"));
        }
        match self.preset {
            Preset::SurfaceGrowth if self.surface_cells_x.is_empty() => {
                return Err(Error::invalid("surface_cells_x", "list is empty"));
            }
            Preset::SurfaceGrowth if self.surface_cells_x.contains(&0) => {
                return Err(Error::invalid("surface_cells_x", "sizes must be positive"));
            }
            Preset::DisorderScan if self.deltas.is_empty() => {
                return Err(Error::invalid("deltas", "list is empty"));
            }
            Preset::MethodCompare if self.quantum.n_dtwa == 0 => {
                return Err(Error::invalid("n_dtwa", "must be at least 1"));
            }
            _ => {}
        }
        if self.preset != Preset::CriticalScan {
            for &v in &self.v_over_omega {
                if self.dt * v * self.omega >= 1.0 {
                    return Err(Error::invalid(
                        "dt",
                        format!("dt must satisfy dt < 1/V (V = {})", v * self.omega),
                    ));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn param_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn params(&self, v_over_omega: f64, lattice: &SpinLattice, variant: Variant) -> ModelParams {
        ModelParams::new(
            self.j_over_omega * self.omega,
            self.omega,
            v_over_omega * self.omega,
            crate::state::DisorderField::zeros(lattice.n_matter()),
            variant,
        )
        .with_dt(self.dt)
        .with_t_end(self.t_end)
    }

    fn record_times(&self) -> Vec<f64> {
        default_record_times(self.t_end)
    }
}

/// Execution settings that do not change results.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub job: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub code_version: String,
    pub preset: Preset,
    pub param_hash: String,
    pub spec: ExperimentSpec,
    pub threads: usize,
    pub wall_time_s: f64,
    pub n_jobs: usize,
    pub n_computed: usize,
    pub n_reused: usize,
    pub failures: Vec<Failure>,
    pub complete: bool,
}

impl Manifest {
    pub fn read(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::FileNotFound(path));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn write(&self, out_dir: &Path) -> Result<()> {
        write_atomic(
            &out_dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }
}

/// Outcome of [`run_experiment`] or [`resume`].
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn opt_csv(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:?}"))
}

/// Runs every job, isolating panics and errors per job. Results keep job order.
pub fn run_isolated<J, T, F>(jobs: &[J], f: F) -> Vec<std::result::Result<T, String>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    jobs.par_iter()
        .map(|job| match catch_unwind(AssertUnwindSafe(|| f(job))) {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(e)) => Err(e.to_string()),
            Err(panic) => Err(panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".into())),
        })
        .collect()
}

/// Executes a preset, reusing trajectory files left by an earlier run with
/// the same parameter hash.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunReport> {
    spec.validate()?;
    fs::create_dir_all(opts.out_dir.join("trajectories"))?;
    fs::create_dir_all(opts.out_dir.join("summary"))?;
    let hash = spec.param_hash();
    if opts.out_dir.join(MANIFEST_FILE).exists() {
        let old = Manifest::read(&opts.out_dir)?;
        if old.param_hash != hash {
            return Err(Error::ManifestMismatch(format!(
                "{} holds a run with different parameters (hash {} vs {})",
                opts.out_dir.display(),
                old.param_hash,
                hash
            )));
        }
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = opts.threads {
            b = b.num_threads(n.max(1));
        }
        b.build()
            .map_err(|e| Error::invalid("threads", e.to_string()))?
    };
    let start = Instant::now();
    let mut manifest = Manifest {
        format: MANIFEST_FORMAT,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        preset: spec.preset,
        param_hash: hash,
        spec: spec.clone(),
        threads: pool.current_num_threads(),
        wall_time_s: 0.0,
        n_jobs: 0,
        n_computed: 0,
        n_reused: 0,
        failures: Vec::new(),
        complete: false,
    };
    manifest.write(&opts.out_dir)?;
    let ctx = Ctx {
        spec,
        dir: &opts.out_dir,
    };
    let stats = pool.install(|| match spec.preset {
        Preset::PlateauScan => run_plateau(&ctx, &[spec.delta]),
        Preset::DisorderScan => run_plateau(&ctx, &spec.deltas),
        Preset::CriticalScan => run_critical(&ctx),
        Preset::SurfaceGrowth => run_surface(&ctx),
        Preset::MethodCompare => run_compare(&ctx),
        Preset::TrotterBenchmark => run_benchmark(&ctx),
    })?;
    manifest.n_jobs = stats.n_jobs;
    manifest.n_computed = stats.n_computed;
    manifest.n_reused = stats.n_reused;
    manifest.failures = stats.failures;
    manifest.complete = true;
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&opts.out_dir)?;
    Ok(RunReport {
        out_dir: opts.out_dir.clone(),
        manifest,
    })
}

/// Completes the run described by `out_dir/manifest.json`.
pub fn resume(out_dir: &Path, threads: Option<usize>) -> Result<RunReport> {
    let manifest = Manifest::read(out_dir)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::ManifestMismatch(format!(
            "manifest format {} is not supported (expected {MANIFEST_FORMAT})",
            manifest.format
        )));
    }
    if manifest.spec.param_hash() != manifest.param_hash {
        return Err(Error::ManifestMismatch(
            "manifest spec does not match its parameter hash".into(),
        ));
    }
    if manifest.code_version != env!("CARGO_PKG_VERSION") {
        return Err(Error::ManifestMismatch(format!(
            "run was made by version {}, this is {}",
            manifest.code_version,
            env!("CARGO_PKG_VERSION")
        )));
    }
    run_experiment(
        &manifest.spec,
        &RunOptions {
            out_dir: out_dir.to_path_buf(),
            threads,
        },
    )
}

/// Resumes with an explicit spec, which must match the stored parameter hash.
pub fn resume_with(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunReport> {
    let manifest = Manifest::read(&opts.out_dir)?;
    if manifest.param_hash != spec.param_hash() {
        return Err(Error::ManifestMismatch(
            "parameters differ from the interrupted run".into(),
        ));
    }
    run_experiment(spec, opts)
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    dir: &'a Path,
}

#[derive(Default)]
struct JobStats {
    n_jobs: usize,
    n_computed: usize,
    n_reused: usize,
    failures: Vec<Failure>,
}

impl Ctx<'_> {
    fn traj_path(&self, key: &str) -> PathBuf {
        self.dir.join("trajectories").join(format!("{key}.jsonl"))
    }

    fn summary_path(&self, name: &str) -> PathBuf {
        self.dir.join("summary").join(name)
    }

    /// Loads a stored record or computes and stores it.
    fn cached<T, L, C, S>(&self, key: &str, load: L, compute: C, store: S) -> Result<(T, bool)>
    where
        L: Fn(&str) -> Result<T>,
        C: FnOnce() -> Result<T>,
        S: Fn(&T) -> String,
    {
        let path = self.traj_path(key);
        if path.exists() {
            if let Ok(v) = fs::read_to_string(&path)
                .map_err(Error::from)
                .and_then(|s| load(&s))
            {
                return Ok((v, true));
            }
        }
        let v = compute()?;
        write_atomic(&path, store(&v).as_bytes())?;
        Ok((v, false))
    }
}

fn collect_jobs<T>(
    stats: &mut JobStats,
    keys: &[String],
    results: Vec<std::result::Result<(T, bool), String>>,
) -> Vec<Option<T>> {
    stats.n_jobs += keys.len();
    keys.iter()
        .zip(results)
        .map(|(k, r)| match r {
            Ok((v, reused)) => {
                if reused {
                    stats.n_reused += 1;
                } else {
                    stats.n_computed += 1;
                }
                Some(v)
            }
            Err(message) => {
                stats.failures.push(Failure {
                    job: k.clone(),
                    message,
                });
                None
            }
        })
        .collect()
}

fn point_key(delta: Option<f64>, v: f64) -> String {
    match delta {
        Some(d) => format!("d{}_v{}", fmt_num(d), fmt_num(v)),
        None => format!("v{}", fmt_num(v)),
    }
}

fn ensemble_trajectory(
    spec: &ExperimentSpec,
    lattice: &SpinLattice,
    v: f64,
    delta: f64,
    n: usize,
    times: &[f64],
) -> Result<TrajectoryRecord> {
    let mut rng = SeededRng::new(spec.seed).stream(n as u64);
    let mut params = spec.params(v, lattice, Variant::WithMatter);
    params.disorder = sample_disorder(lattice, delta, &mut rng)?;
    let config = sample_gauge_invariant(lattice, &mut rng);
    integrate_trotter_opts(&config, lattice, &params, times, false)
}

#[derive(Debug, Clone, Serialize)]
struct FitsOut {
    eps_pre_loglog_slope: Option<f64>,
    log_tcrit_vs_v_slope: Option<f64>,
    log_tcrit_vs_v_pearson: Option<f64>,
    n_censored: usize,
}

fn run_plateau(ctx: &Ctx, deltas: &[f64]) -> Result<JobStats> {
    let spec = ctx.spec;
    let lattice = build_honeycomb(
        spec.cells[0],
        spec.cells[1],
        Boundary::Periodic,
        Boundary::Periodic,
    )?;
    let times = spec.record_times();
    let labelled = spec.preset == Preset::DisorderScan;
    let mut jobs = Vec::new();
    for &d in deltas {
        for &v in &spec.v_over_omega {
            for n in 0..spec.n_ens {
                jobs.push((d, v, n));
            }
        }
    }
    let keys: Vec<String> = jobs
        .iter()
        .map(|&(d, v, n)| format!("{}_{n:04}", point_key(labelled.then_some(d), v)))
        .collect();
    let results = run_isolated(&jobs, |&(d, v, n)| {
        let key = format!("{}_{n:04}", point_key(labelled.then_some(d), v));
        ctx.cached(
            &key,
            TrajectoryRecord::from_jsonl,
            || ensemble_trajectory(spec, &lattice, v, d, n, &times),
            TrajectoryRecord::to_jsonl,
        )
    });
    let mut stats = JobStats::default();
    let records = collect_jobs(&mut stats, &keys, results);

    let mut table = create_file(&ctx.summary_path("scan.csv"))?;
    writeln!(
        table,
        "delta,v_over_omega,n_ens,eps_pre,eps_pre_stderr,t_crit,eps_final"
    )?;
    let mut fits = BTreeMap::new();
    let mut idx = 0;
    for &d in deltas {
        let mut pre_pts = Vec::new();
        let mut crit_pts = Vec::new();
        let mut censored = 0;
        for &v in &spec.v_over_omega {
            let group: Vec<TrajectoryRecord> = records[idx..idx + spec.n_ens]
                .iter()
                .flatten()
                .cloned()
                .collect();
            idx += spec.n_ens;
            let key = point_key(labelled.then_some(d), v);
            if group.is_empty() {
                continue;
            }
            let s = EnsembleSummary::from_records_with(
                &group,
                spec.analysis.smoothing_window,
                spec.analysis.curvature_axis,
            )?;
            s.write_csv(create_file(&ctx.summary_path(&format!("eps_{key}.csv")))?)?;
            let header = s.header_json(&serde_json::json!({"v_over_omega": v, "delta": d}))?;
            write_atomic(
                &ctx.summary_path(&format!("eps_{key}.json")),
                header.as_bytes(),
            )?;
            writeln!(
                table,
                "{d:?},{v:?},{},{},{},{},{:?}",
                s.n_ens,
                opt_csv(s.eps_pre),
                opt_csv(s.eps_pre_stderr),
                opt_csv(s.t_crit),
                s.eps_mean.last().copied().unwrap_or(f64::NAN)
            )?;
            if let Some(e) = s.eps_pre {
                pre_pts.push((v.ln(), e.ln()));
            }
            match s.t_crit {
                Some(t) => crit_pts.push((v, t.ln())),
                None => censored += 1,
            }
        }
        let fit = FitsOut {
            eps_pre_loglog_slope: (pre_pts.len() >= 2).then(|| linear_regression(&pre_pts).0),
            log_tcrit_vs_v_slope: (crit_pts.len() >= 2).then(|| linear_regression(&crit_pts).0),
            log_tcrit_vs_v_pearson: (crit_pts.len() >= 3).then(|| pearson(&crit_pts)),
            n_censored: censored,
        };
        fits.insert(fmt_num(d), fit);
    }
    table.flush()?;
    write_atomic(
        &ctx.summary_path("fits.json"),
        serde_json::to_string_pretty(&fits)?.as_bytes(),
    )?;
    Ok(stats)
}

fn run_critical(ctx: &Ctx) -> Result<JobStats> {
    let spec = ctx.spec;
    let (g_c, v_c) = double_root()?;
    let info = serde_json::json!({
        "critical_protection": critical_protection(),
        "double_root_gauss": g_c,
        "double_root_v_over_omega": v_c,
    });
    write_atomic(
        &ctx.summary_path("critical.json"),
        serde_json::to_string_pretty(&info)?.as_bytes(),
    )?;
    let mut table = create_file(&ctx.summary_path("critical_scan.csv"))?;
    writeln!(
        table,
        "v_over_omega,constraining_root,lmg_min_gauss,kinematic_residual_rel"
    )?;
    for &r in &spec.v_over_omega {
        let v = r * spec.omega;
        let root = constraining_root(v, spec.omega)?;
        let lmg = lmg_evolve(v, spec.omega, spec.t_end, spec.dt)?;
        let kin = kinematic_consistency(v, spec.omega, &lmg.times, &lmg.gauss)?;
        writeln!(
            table,
            "{r:?},{},{:?},{:?}",
            opt_csv(root),
            lmg.min_gauss(),
            kin.relative()
        )?;
        let key = fmt_num(r);
        PotentialCurve::sample(v, spec.omega, 401)?.write_csv(create_file(
            &ctx.summary_path(&format!("potential_v{key}.csv")),
        )?)?;
        lmg.write_csv(create_file(&ctx.summary_path(&format!("lmg_v{key}.csv")))?)?;
    }
    table.flush()?;
    Ok(JobStats::default())
}

/// One line-defect realization: scalar observables plus front heights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTrajectory {
    pub record: TrajectoryRecord,
    pub heights: HeightField,
}

#[derive(Serialize, Deserialize)]
struct SurfaceLine {
    t: f64,
    eps: f64,
    mean_gauss: f64,
    energy_density: f64,
    h: Vec<f64>,
}

impl SurfaceTrajectory {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for i in 0..self.record.times.len() {
            let line = SurfaceLine {
                t: self.record.times[i],
                eps: self.record.eps_series[i],
                mean_gauss: self.record.mean_gauss[i],
                energy_density: self.record.energy_series[i],
                h: self.heights.heights[i].clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("finite values"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut record = TrajectoryRecord {
            times: vec![],
            mean_gauss: vec![],
            eps_series: vec![],
            energy_series: vec![],
            gauss_series: None,
        };
        let mut heights = vec![];
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let l: SurfaceLine = serde_json::from_str(line).map_err(|e| {
                Error::parse(format!("surface trajectory line {}", i + 1), e.to_string())
            })?;
            record.times.push(l.t);
            record.eps_series.push(l.eps);
            record.mean_gauss.push(l.mean_gauss);
            record.energy_series.push(l.energy_density);
            heights.push(l.h);
        }
        let times = record.times.clone();
        Ok(Self {
            record,
            heights: HeightField { times, heights },
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct SurfaceFits {
    l: usize,
    n_ens: usize,
    window: (f64, f64),
    mean_height: Option<ScalingFit>,
    width: Option<ScalingFit>,
    mean_height_error: Option<String>,
    width_error: Option<String>,
}

fn run_surface(ctx: &Ctx) -> Result<JobStats> {
    let spec = ctx.spec;
    let times = spec.record_times();
    let v = spec.v_over_omega[0];
    let lattices: Vec<SpinLattice> = spec
        .surface_cells_x
        .iter()
        .map(|&nx| build_honeycomb(nx, spec.cells[1], Boundary::Periodic, Boundary::Open))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..lattices.len())
        .flat_map(|s| (0..spec.n_ens).map(move |n| (s, n)))
        .collect();
    let key = |s: usize, n: usize| format!("L{}_{n:04}", 2 * spec.surface_cells_x[s]);
    let keys: Vec<String> = jobs.iter().map(|&(s, n)| key(s, n)).collect();
    let results = run_isolated(&jobs, |&(s, n)| {
        let lattice = &lattices[s];
        ctx.cached(
            &key(s, n),
            SurfaceTrajectory::from_jsonl,
            || {
                let mut rng = SeededRng::new(spec.seed).stream(n as u64);
                let mut params = spec.params(v, lattice, Variant::WithMatter);
                params.disorder = sample_disorder(lattice, spec.delta, &mut rng)?;
                let config = line_defect_state(lattice, &mut rng)?;
                let mut record = integrate_trotter_opts(&config, lattice, &params, &times, true)?;
                let gauss = record.gauss_series.take().unwrap_or_default();
                let mask = defect_mask(&gauss, spec.analysis.g_thres)?;
                let heights =
                    height_function(&mask, &record.times, lattice, spec.analysis.height_rule)?;
                Ok(SurfaceTrajectory { record, heights })
            },
            SurfaceTrajectory::to_jsonl,
        )
    });
    let mut stats = JobStats::default();
    let trajs = collect_jobs(&mut stats, &keys, results);

    let mut curves = Vec::new();
    let mut all_fits = Vec::new();
    for (s, lattice) in lattices.iter().enumerate() {
        let l = 2 * spec.surface_cells_x[s];
        let fields: Vec<HeightField> = trajs[s * spec.n_ens..(s + 1) * spec.n_ens]
            .iter()
            .flatten()
            .map(|t| t.heights.clone())
            .collect();
        if fields.is_empty() {
            continue;
        }
        write_heights_csv(
            &fields,
            create_file(&ctx.summary_path(&format!("heights_L{l}.csv")))?,
        )?;
        let st = height_stats(&fields)?;
        let mut w = create_file(&ctx.summary_path(&format!("width_L{l}.csv")))?;
        writeln!(w, "t,mean,width")?;
        for i in 0..st.times.len() {
            writeln!(w, "{:?},{:?},{:?}", st.times[i], st.mean[i], st.width[i])?;
        }
        w.flush()?;
        if fields.len() >= 2 {
            if let Ok((skew, kurt)) = height_cumulants(&fields) {
                let mut c = create_file(&ctx.summary_path(&format!("cumulants_L{l}.csv")))?;
                writeln!(c, "t,skewness,excess_kurtosis")?;
                for i in 0..st.times.len() {
                    writeln!(c, "{:?},{:?},{:?}", st.times[i], skew[i], kurt[i])?;
                }
                c.flush()?;
            }
        }
        let window = if spec.analysis.presaturation {
            presaturation_window(
                &st.times,
                &st.mean,
                lattice.height_extent(),
                spec.analysis.fit_window,
            )
        } else {
            spec.analysis.fit_window
        };
        let hf = fit_power_law(&st.times, &st.mean, window);
        let wf = fit_power_law(&st.times, &st.width, window);
        all_fits.push(SurfaceFits {
            l,
            n_ens: fields.len(),
            window,
            mean_height_error: hf.as_ref().err().map(|e| e.to_string()),
            width_error: wf.as_ref().err().map(|e| e.to_string()),
            mean_height: hf.ok(),
            width: wf.ok(),
        });
        curves.push(WidthCurve {
            l: l as f64,
            times: st.times.clone(),
            width: st.width.clone(),
        });
    }
    write_width_curves_csv(&curves, create_file(&ctx.summary_path("widths.csv"))?)?;
    let mut collapse = BTreeMap::new();
    for (a, z) in [(0.5, 1.5), (0.5, 2.0), (1.0, 1.0)] {
        let r = family_vicsek_collapse(&curves, a, z).ok();
        collapse.insert(format!("alpha={a},z={z}"), r);
    }
    if curves.len() >= 2 {
        if let Ok(scan) = scan_exponents(&curves, &spec.analysis.alpha_grid, &spec.analysis.z_grid)
        {
            scan.write_csv(create_file(&ctx.summary_path("collapse_scan.csv"))?)?;
        }
    }
    let out = serde_json::json!({ "fits": all_fits, "collapse": collapse });
    write_atomic(
        &ctx.summary_path("fits.json"),
        serde_json::to_string_pretty(&out)?.as_bytes(),
    )?;
    Ok(stats)
}

fn run_compare(ctx: &Ctx) -> Result<JobStats> {
    let spec = ctx.spec;
    let q = &spec.quantum;
    let lattice = build_honeycomb(
        spec.cells[0],
        spec.cells[1],
        Boundary::Periodic,
        Boundary::Periodic,
    )?;
    let step = q.ed_dt.max(spec.dt);
    // log-spaced record times snapped onto the common step
    let mut times: Vec<f64> = spec
        .record_times()
        .into_iter()
        .map(|t| ((t / step).round() * step).min(spec.t_end))
        .collect();
    times.dedup();
    let cmp_spec = CompareSpec {
        delta: spec.delta,
        n_draws: spec.n_ens,
        n_dtwa: q.n_dtwa,
        ed_dt: q.ed_dt,
        krylov: KrylovOptions {
            krylov_dim: q.krylov_dim,
            tol: q.krylov_tol,
        },
    };
    let mut stats = JobStats::default();
    for &v in &spec.v_over_omega {
        let params = spec.params(v, &lattice, q.variant);
        let c = compare_methods(&lattice, &params, &cmp_spec, spec.seed, &times)?;
        c.write_csv(create_file(
            &ctx.summary_path(&format!("method_compare_v{}.csv", fmt_num(v))),
        )?)?;
        stats.n_jobs += 1;
        stats.n_computed += 1;
    }
    Ok(stats)
}

/// Per-trajectory agreement of the two integrators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub trajectory: usize,
    pub max_rel_eps_deviation: f64,
    pub max_energy_drift: f64,
    pub max_energy_drift_ode: f64,
}

fn run_benchmark(ctx: &Ctx) -> Result<JobStats> {
    let spec = ctx.spec;
    let lattice = build_honeycomb(
        spec.cells[0],
        spec.cells[1],
        Boundary::Periodic,
        Boundary::Periodic,
    )?;
    let times = spec.record_times();
    let v = spec.v_over_omega[0];
    let jobs: Vec<usize> = (0..spec.n_ens).collect();
    let keys: Vec<String> = jobs.iter().map(|n| format!("pair_{n:04}")).collect();
    let results = run_isolated(&jobs, |&n| {
        let mut rng = SeededRng::new(spec.seed).stream(n as u64);
        let mut params = spec.params(v, &lattice, Variant::WithMatter);
        params.disorder = sample_disorder(&lattice, spec.delta, &mut rng)?;
        let config = sample_gauge_invariant(&lattice, &mut rng);
        let (t, r1) = ctx.cached(
            &format!("trotter_{n:04}"),
            TrajectoryRecord::from_jsonl,
            || integrate_trotter_opts(&config, &lattice, &params, &times, false),
            TrajectoryRecord::to_jsonl,
        )?;
        let (o, r2) = ctx.cached(
            &format!("ode_{n:04}"),
            TrajectoryRecord::from_jsonl,
            || {
                integrate_ode(
                    &config,
                    &lattice,
                    &params,
                    spec.analysis.ode_rel_tol,
                    spec.analysis.ode_abs_tol,
                    &times,
                )
            },
            TrajectoryRecord::to_jsonl,
        )?;
        Ok(((t, o), r1 && r2))
    });
    let mut stats = JobStats::default();
    let pairs = collect_jobs(&mut stats, &keys, results);
    let done: Vec<(usize, &(TrajectoryRecord, TrajectoryRecord))> = pairs
        .iter()
        .enumerate()
        .filter_map(|(n, p)| p.as_ref().map(|p| (n, p)))
        .collect();
    let (w0, w1) = spec.analysis.benchmark_window;
    let mut rows = Vec::new();
    for (n, (t, o)) in &done {
        rows.push(benchmark_row(*n, t, o, w0, w1)?);
    }
    let mut f = create_file(&ctx.summary_path("trotter_benchmark.csv"))?;
    writeln!(f, "t,eps_trotter,eps_ode,energy_trotter,energy_ode")?;
    if !done.is_empty() {
        let k = done.len() as f64;
        for i in 0..times.len().min(done[0].1 .0.times.len()) {
            let m = |sel: &dyn Fn(&(TrajectoryRecord, TrajectoryRecord)) -> f64| {
                done.iter().map(|(_, p)| sel(p)).sum::<f64>() / k
            };
            writeln!(
                f,
                "{:?},{:?},{:?},{:?},{:?}",
                done[0].1 .0.times[i],
                m(&|p| p.0.eps_series[i]),
                m(&|p| p.1.eps_series[i]),
                m(&|p| p.0.energy_series[i]),
                m(&|p| p.1.energy_series[i]),
            )?;
        }
    }
    f.flush()?;
    let mut f = create_file(&ctx.summary_path("trotter_benchmark_rows.csv"))?;
    writeln!(
        f,
        "trajectory,max_rel_eps_deviation,max_energy_drift,max_energy_drift_ode"
    )?;
    for r in &rows {
        writeln!(
            f,
            "{},{:?},{:?},{:?}",
            r.trajectory, r.max_rel_eps_deviation, r.max_energy_drift, r.max_energy_drift_ode
        )?;
    }
    f.flush()?;
    Ok(stats)
}

/// Largest relative `eps` deviation in `(w0, w1]` and the largest energy drifts.
pub fn benchmark_row(
    n: usize,
    trotter: &TrajectoryRecord,
    ode: &TrajectoryRecord,
    w0: f64,
    w1: f64,
) -> Result<BenchmarkRow> {
    let mut dev: f64 = 0.0;
    for (i, &t) in trotter.times.iter().enumerate() {
        if t > w0 && t <= w1 {
            let reference = interpolate(&ode.times, &ode.eps_series, t)?;
            dev = dev.max(
                (trotter.eps_series[i] - reference).abs() / reference.abs().max(f64::MIN_POSITIVE),
            );
        }
    }
    let drift = |r: &TrajectoryRecord| {
        let e0 = r.energy_series.first().copied().unwrap_or(0.0);
        r.energy_series
            .iter()
            .map(|e| (e - e0).abs())
            .fold(0.0, f64::max)
    };
    Ok(BenchmarkRow {
        trajectory: n,
        max_rel_eps_deviation: dev,
        max_energy_drift: drift(trotter),
        max_energy_drift_ode: drift(ode),
    })
}
