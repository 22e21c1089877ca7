use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use z2lgt::analytic::{
    constraining_root, critical_protection, double_root, lmg_evolve, potential_roots,
    PotentialCurve,
};
use z2lgt::dynamics::{
    default_record_times, integrate_ode, integrate_trotter_opts, ModelParams, Variant,
};
use z2lgt::lattice::{build_honeycomb, Boundary};
use z2lgt::runner::{self, ExperimentSpec, Preset, RunOptions};
use z2lgt::state::{
    default_n_mix, line_defect_state, sample_disorder, sample_gauge_invariant,
    sample_gauge_invariant_no_matter, SeededRng,
};
use z2lgt::surface::{
    family_vicsek_collapse, fit_power_law, read_width_curves_csv, scan_exponents, HeightRule,
};
use z2lgt::Error;

mod config;

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "z2lgt",
    version,
    term_width = 100,
    about = "Mean-field, DTWA and exact dynamics of a protected Z2 lattice gauge theory"
)]
struct Cli {
    /// Master random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "Z2LGT_THREADS")]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one trajectory with the Trotter and/or adaptive integrator
    Simulate(SimulateArgs),
    /// Run an experiment preset over an ensemble of trajectories
    Ensemble(EnsembleArgs),
    /// Line-defect surface growth: heights, power-law fits, scaling collapse
    Surface(SurfaceArgs),
    /// Closed-form critical protection, effective potential, collective-spin orbits
    Analytic(AnalyticArgs),
    /// Compare mean-field, DTWA and exact evolution on a small lattice
    Quantum(QuantumArgs),
    /// Fit a + b t^c to a column of a CSV file
    Fit(FitArgs),
    /// Family-Vicsek collapse of width curves from a CSV file
    Collapse(CollapseArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Trotter,
    Ode,
    Both,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    WithMatter,
    NoMatter,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::WithMatter => Variant::WithMatter,
            VariantArg::NoMatter => Variant::NoMatterRydberg,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum InitArg {
    /// Random gauge-invariant product state
    Random,
    /// Random gauge-invariant state with defects on the bottom row (open Y)
    LineDefect,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Cluster,
    Topmost,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Plaquettes along X and Y
    #[arg(long, num_args = 2, value_names = ["NX", "NY"], default_values_t = [2, 2])]
    cells: Vec<usize>,
    /// Open boundary along Y instead of periodic
    #[arg(long)]
    open_y: bool,
    /// Protection strength V [units of Omega]
    #[arg(long, default_value_t = 10.0)]
    v_over_omega: f64,
    /// Three-body coupling J [units of Omega]
    #[arg(long, default_value_t = 1.0)]
    j_over_omega: f64,
    /// Drive strength Omega [energy unit]
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Standard deviation of the relative disorder delta_j [dimensionless]
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Final time [1/Omega]
    #[arg(long, default_value_t = 100.0)]
    t_end: f64,
    /// Trotter step [1/Omega]
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Integrator
    #[arg(long, value_enum, default_value_t = Method::Trotter)]
    method: Method,
    /// Model variant
    #[arg(long, value_enum, default_value_t = VariantArg::WithMatter)]
    variant: VariantArg,
    /// Initial state (with-matter variant)
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    init: InitArg,
    /// Relative tolerance of the adaptive integrator [dimensionless]
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    /// Absolute tolerance of the adaptive integrator [dimensionless]
    #[arg(long, default_value_t = 1e-10)]
    abs_tol: f64,
    /// Also record every vertex's Gauss value
    #[arg(long)]
    vertices: bool,
}

#[derive(Args, Debug, Default)]
struct SpecOverrides {
    /// TOML file with experiment parameters (unknown keys are rejected)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Protection strengths to scan [units of Omega]
    #[arg(long, value_delimiter = ',')]
    v_over_omega: Option<Vec<f64>>,
    /// Trajectories per parameter point
    #[arg(long)]
    n_ens: Option<usize>,
    /// Final time [1/Omega]
    #[arg(long)]
    t_end: Option<f64>,
    /// Trotter step [1/Omega]
    #[arg(long)]
    dt: Option<f64>,
    /// Disorder strength [dimensionless]
    #[arg(long)]
    delta: Option<f64>,
    /// Three-body coupling J [units of Omega]
    #[arg(long)]
    j_over_omega: Option<f64>,
    /// Plaquettes along X and Y
    #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
    cells: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Experiment preset
    #[arg(long, default_value = "plateau_scan", value_parser = ["plateau_scan", "critical_scan", "surface_growth", "method_compare", "trotter_benchmark", "disorder_scan"])]
    preset: String,
    /// Disorder strengths for disorder_scan [dimensionless]
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Complete an interrupted run in --out-dir from its manifest
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    spec: SpecOverrides,
}

#[derive(Args, Debug)]
struct SurfaceArgs {
    /// Plaquettes along X of each system size (columns L = 2 * NX)
    #[arg(long, value_delimiter = ',')]
    cells_x: Option<Vec<usize>>,
    /// Plaquette rows (open Y)
    #[arg(long)]
    rows: Option<usize>,
    /// Defect threshold on 1 - G_j [dimensionless]
    #[arg(long)]
    g_thres: Option<f64>,
    /// Height rule
    #[arg(long, value_enum)]
    height_rule: Option<RuleArg>,
    /// Power-law fit window [1/Omega]
    #[arg(long, num_args = 2, value_names = ["T_MIN", "T_MAX"])]
    fit_window: Option<Vec<f64>>,
    /// Use the fit window as given instead of cutting it before saturation
    #[arg(long)]
    no_presaturation: bool,
    #[command(flatten)]
    spec: SpecOverrides,
}

#[derive(Args, Debug)]
struct AnalyticArgs {
    #[command(subcommand)]
    what: AnalyticCmd,
}

#[derive(Subcommand, Debug)]
enum AnalyticCmd {
    /// Print the closed-form critical protection and the numerical double root
    Critical,
    /// Roots of the effective potential F(G) in (0, 1]
    Roots {
        /// Protection strength [units of Omega]
        #[arg(long)]
        v_over_omega: f64,
    },
    /// Write F(G) on a grid as CSV
    Potential {
        /// Protection strength [units of Omega]
        #[arg(long)]
        v_over_omega: f64,
        /// Grid points in (0, 1]
        #[arg(long, default_value_t = 401)]
        points: usize,
    },
    /// Evolve the collective-spin equations and write the orbit as CSV
    Lmg {
        /// Protection strength [units of Omega]
        #[arg(long)]
        v_over_omega: f64,
        /// Final time [1/Omega]
        #[arg(long, default_value_t = 50.0)]
        t_end: f64,
        /// Output spacing [1/Omega]
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
    },
}

#[derive(Args, Debug)]
struct QuantumArgs {
    /// Model variant
    #[arg(long, value_enum, default_value_t = VariantArg::NoMatter)]
    variant: VariantArg,
    /// DTWA samples per initial state
    #[arg(long)]
    n_dtwa: Option<usize>,
    /// Step of the exact evolution [1/Omega]
    #[arg(long)]
    ed_dt: Option<f64>,
    /// Largest Lanczos subspace
    #[arg(long)]
    krylov_dim: Option<usize>,
    #[command(flatten)]
    spec: SpecOverrides,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV file with a `t` column
    #[arg(long)]
    input: PathBuf,
    /// Column to fit
    #[arg(long, default_value = "width")]
    column: String,
    /// Fit window [1/Omega]
    #[arg(long, num_args = 2, value_names = ["T_MIN", "T_MAX"], default_values_t = [50.0, 1000.0])]
    window: Vec<f64>,
}

#[derive(Args, Debug)]
struct CollapseArgs {
    /// CSV file with columns L,t,width
    #[arg(long)]
    input: PathBuf,
    /// Roughening exponent; with --z evaluates a single point instead of scanning
    #[arg(long, requires = "z")]
    alpha: Option<f64>,
    /// Dynamic exponent
    #[arg(long, requires = "alpha")]
    z: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed.unwrap_or(1), &cli.out_dir),
        Command::Ensemble(a) => ensemble(a, cli),
        Command::Surface(a) => surface(a, cli),
        Command::Analytic(a) => analytic(&a.what, &cli.out_dir),
        Command::Quantum(a) => quantum(a, cli),
        Command::Fit(a) => fit(a),
        Command::Collapse(a) => collapse(a, &cli.out_dir),
    }
}

fn create(dir: &Path, name: &str) -> CliResult<io::BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(io::BufWriter::new(fs::File::create(dir.join(name))?))
}

fn simulate(a: &SimulateArgs, seed: u64, out: &Path) -> CliResult<()> {
    let by = if a.open_y {
        Boundary::Open
    } else {
        Boundary::Periodic
    };
    let lattice = build_honeycomb(a.cells[0], a.cells[1], Boundary::Periodic, by)?;
    let variant: Variant = a.variant.into();
    let mut rng = SeededRng::new(seed).stream(0);
    let mut params = ModelParams::new(
        a.j_over_omega * a.omega,
        a.omega,
        a.v_over_omega * a.omega,
        z2lgt::DisorderField::zeros(lattice.n_matter()),
        variant,
    )
    .with_dt(a.dt)
    .with_t_end(a.t_end);
    let config = match variant {
        Variant::WithMatter => {
            params.disorder = sample_disorder(&lattice, a.delta, &mut rng)?;
            match a.init {
                InitArg::Random => sample_gauge_invariant(&lattice, &mut rng),
                InitArg::LineDefect => line_defect_state(&lattice, &mut rng)?,
            }
        }
        Variant::NoMatterRydberg => {
            sample_gauge_invariant_no_matter(&lattice, &mut rng, default_n_mix(&lattice))?
        }
    };
    params.validate(&lattice)?;
    let times = default_record_times(a.t_end);
    let mut records = Vec::new();
    if a.method != Method::Ode {
        let r = integrate_trotter_opts(&config, &lattice, &params, &times, a.vertices)?;
        write!(create(out, "trajectory_trotter.jsonl")?, "{}", r.to_jsonl())?;
        records.push(("trotter", r));
    }
    if a.method != Method::Trotter {
        let mut r = integrate_ode(&config, &lattice, &params, a.rel_tol, a.abs_tol, &times)?;
        if !a.vertices {
            r.gauss_series = None;
        }
        write!(create(out, "trajectory_ode.jsonl")?, "{}", r.to_jsonl())?;
        records.push(("ode", r));
    }
    if let [(_, t), (_, o)] = records.as_slice() {
        let mut f = create(out, "trotter_vs_ode.csv")?;
        writeln!(f, "t,eps_trotter,eps_ode,energy_trotter,energy_ode")?;
        for i in 0..t.times.len().min(o.times.len()) {
            writeln!(
                f,
                "{:?},{:?},{:?},{:?},{:?}",
                t.times[i],
                t.eps_series[i],
                o.eps_series[i],
                t.energy_series[i],
                o.energy_series[i]
            )?;
        }
        f.flush()?;
    }
    for (name, r) in &records {
        println!(
            "{name}: eps(t_end) = {:.6}, energy density drift = {:.3e}",
            r.eps_series.last().copied().unwrap_or(f64::NAN),
            r.energy_series
                .iter()
                .map(|e| (e - r.energy_series[0]).abs())
                .fold(0.0, f64::max)
        );
    }
    Ok(())
}

fn build_spec(preset: Preset, o: &SpecOverrides, seed: Option<u64>) -> CliResult<ExperimentSpec> {
    let mut spec = config::load_spec(preset, o.config.as_deref())?;
    if let Some(v) = &o.v_over_omega {
        spec.v_over_omega = v.clone();
    }
    if let Some(n) = o.n_ens {
        spec.n_ens = n;
    }
    if let Some(t) = o.t_end {
        spec.t_end = t;
    }
    if let Some(dt) = o.dt {
        spec.dt = dt;
    }
    if let Some(d) = o.delta {
        spec.delta = d;
    }
    if let Some(j) = o.j_over_omega {
        spec.j_over_omega = j;
    }
    if let Some(c) = &o.cells {
        spec.cells = [c[0], c[1]];
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn execute(spec: &ExperimentSpec, cli: &Cli, resume: bool) -> CliResult<()> {
    let opts = RunOptions {
        out_dir: cli.out_dir.clone(),
        threads: cli.threads,
    };
    let report = if resume {
        runner::resume_with(spec, &opts)?
    } else {
        runner::run_experiment(spec, &opts)?
    };
    let m = &report.manifest;
    println!(
        "{}: {} jobs ({} computed, {} reused, {} failed) in {:.1} s -> {}",
        m.preset.name(),
        m.n_jobs,
        m.n_computed,
        m.n_reused,
        m.failures.len(),
        m.wall_time_s,
        report.out_dir.display()
    );
    for f in &m.failures {
        eprintln!("failed {}: {}", f.job, f.message);
    }
    Ok(())
}

fn ensemble(a: &EnsembleArgs, cli: &Cli) -> CliResult<()> {
    let preset = Preset::from_name(&a.preset)?;
    if a.resume
        && a.spec.config.is_none()
        && a.spec.v_over_omega.is_none()
        && a.spec.n_ens.is_none()
        && a.spec.t_end.is_none()
        && a.spec.dt.is_none()
        && a.spec.delta.is_none()
        && a.spec.j_over_omega.is_none()
        && a.spec.cells.is_none()
        && a.deltas.is_none()
        && cli.seed.is_none()
    {
        let report = runner::resume(&cli.out_dir, cli.threads)?;
        println!(
            "{}: resumed, {} reused, {} computed",
            report.manifest.preset.name(),
            report.manifest.n_reused,
            report.manifest.n_computed
        );
        return Ok(());
    }
    let mut spec = build_spec(preset, &a.spec, cli.seed)?;
    if let Some(d) = &a.deltas {
        spec.deltas = d.clone();
    }
    execute(&spec, cli, a.resume)
}

fn surface(a: &SurfaceArgs, cli: &Cli) -> CliResult<()> {
    let mut spec = build_spec(Preset::SurfaceGrowth, &a.spec, cli.seed)?;
    if let Some(c) = &a.cells_x {
        spec.surface_cells_x = c.clone();
    }
    if let Some(r) = a.rows {
        spec.cells[1] = r;
    }
    if let Some(g) = a.g_thres {
        spec.analysis.g_thres = g;
    }
    if let Some(r) = a.height_rule {
        spec.analysis.height_rule = match r {
            RuleArg::Cluster => HeightRule::ClusterConnected,
            RuleArg::Topmost => HeightRule::Topmost,
        };
    }
    if let Some(w) = &a.fit_window {
        spec.analysis.fit_window = (w[0], w[1]);
    }
    if a.no_presaturation {
        spec.analysis.presaturation = false;
    }
    execute(&spec, cli, false)
}

fn quantum(a: &QuantumArgs, cli: &Cli) -> CliResult<()> {
    let mut spec = build_spec(Preset::MethodCompare, &a.spec, cli.seed)?;
    spec.quantum.variant = a.variant.into();
    if let Some(n) = a.n_dtwa {
        spec.quantum.n_dtwa = n;
    }
    if let Some(dt) = a.ed_dt {
        spec.quantum.ed_dt = dt;
    }
    if let Some(k) = a.krylov_dim {
        spec.quantum.krylov_dim = k;
    }
    execute(&spec, cli, false)
}

fn analytic(what: &AnalyticCmd, out: &Path) -> CliResult<()> {
    match what {
        AnalyticCmd::Critical => {
            let (g, v) = double_root()?;
            println!("{:.12}", critical_protection());
            eprintln!("numerical double root of F(G): V/Omega = {v:.12} at G = {g:.12}");
        }
        AnalyticCmd::Roots { v_over_omega } => {
            for r in potential_roots(*v_over_omega, 1.0)? {
                println!("{r:.12}");
            }
            if let Some(c) = constraining_root(*v_over_omega, 1.0)? {
                eprintln!("constraining root: {c:.12}");
            }
        }
        AnalyticCmd::Potential {
            v_over_omega,
            points,
        } => {
            let curve = PotentialCurve::sample(*v_over_omega, 1.0, *points)?;
            curve.write_csv(create(out, &format!("potential_v{v_over_omega}.csv"))?)?;
        }
        AnalyticCmd::Lmg {
            v_over_omega,
            t_end,
            dt,
        } => {
            let s = lmg_evolve(*v_over_omega, 1.0, *t_end, *dt)?;
            s.write_csv(create(out, &format!("lmg_v{v_over_omega}.csv"))?)?;
            println!("min G = {:.9}", s.min_gauss());
        }
    }
    Ok(())
}

fn open_input(path: &Path) -> CliResult<BufReader<fs::File>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()).into());
    }
    Ok(BufReader::new(fs::File::open(path)?))
}

fn fit(a: &FitArgs) -> CliResult<()> {
    let (times, ys) = config::read_columns(open_input(&a.input)?, "t", &a.column)?;
    let f = fit_power_law(&times, &ys, (a.window[0], a.window[1]))?;
    println!("{}", serde_json::to_string_pretty(&f)?);
    Ok(())
}

fn collapse(a: &CollapseArgs, out: &Path) -> CliResult<()> {
    let curves = read_width_curves_csv(open_input(&a.input)?)?;
    match (a.alpha, a.z) {
        (Some(alpha), Some(z)) => {
            let c = family_vicsek_collapse(&curves, alpha, z)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
        _ => {
            let alphas: Vec<f64> = (1..=10).map(|k| k as f64 * 0.1).collect();
            let zs: Vec<f64> = (4..=12).map(|k| k as f64 * 0.25).collect();
            let scan = scan_exponents(&curves, &alphas, &zs)?;
            scan.write_csv(create(out, "collapse_scan.csv")?)?;
            println!(
                "best alpha = {}, z = {}, residual = {:.6e}",
                scan.best_alpha, scan.best_z, scan.best_residual
            );
        }
    }
    Ok(())
}
