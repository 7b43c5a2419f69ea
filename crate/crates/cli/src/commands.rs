//! Subcommand bodies. Each writes its outputs into the run's artifacts.

use serde::Serialize;
use spacemean_core::backward::{
    terminal_adjoint, AdjointEnsemble, BackwardInput, Driver, HamiltonianDriver, PicardOptions, RegressionStats,
};
use spacemean_core::control::{ControlField, ControlMode, GradientReport, ObjectiveEstimate, OptimizerReport, OracleResult};
use spacemean_core::forward::ForwardEnsemble;
use spacemean_core::{Error, Result};

use crate::config::{CheckPoint, DirectionKind, DriverKind, TerminalKind};
use crate::output::{num, Artifacts, Csv};
use crate::setup::Setup;

/// Either a numerical failure or a write failure.
#[derive(Debug)]
pub enum Failure {
    Numerical(Error),
    Io(std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numerical(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Numerical(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "cannot write output: {e}"),
        }
    }
}

pub type Outcome = std::result::Result<(), Failure>;

fn coord_header(setup: &Setup) -> Vec<&'static str> {
    if setup.grid.dim() == 1 {
        vec!["x"]
    } else {
        vec!["x", "y"]
    }
}

fn coord_cells(setup: &Setup, i: usize) -> Vec<String> {
    let x = setup.grid.coords(i);
    x[..setup.grid.dim()].iter().map(|&v| num(v)).collect()
}

fn exported(setup: &Setup, available: usize) -> usize {
    setup.config.output.export_paths.min(available)
}

/// `E ∫ f(path)` over admissible paths.
fn mean_integral(setup: &Setup, ens: &ForwardEnsemble, f: impl Fn(usize) -> Vec<f64>) -> f64 {
    let ok: Vec<usize> = (0..ens.path_count()).filter(|&k| ens.paths[k].admissible).collect();
    if ok.is_empty() {
        return f64::NAN;
    }
    ok.iter().map(|&k| setup.grid.integrate(&f(k))).sum::<f64>() / ok.len() as f64
}

#[derive(Serialize)]
struct ForwardSummary {
    paths: usize,
    admissible: usize,
    rejected: Vec<usize>,
    initial_control: f64,
    objective: ObjectiveEstimate,
    /// `E ∫ Y(T, x) dx` over admissible paths.
    terminal_mean_integral: f64,
}

pub fn simulate(setup: &Setup, art: &mut Artifacts) -> Outcome {
    let problem = setup.problem(setup.noise()?);
    let u = setup.initial_control()?;
    let ens = problem.simulate(&u)?;
    let steps = setup.time.steps;
    let mut header = vec!["path", "t"];
    header.extend(coord_header(setup));
    header.push("Y");
    let mut csv = Csv::new(&header);
    for k in 0..exported(setup, ens.path_count()) {
        for m in 0..=steps {
            let y = ens.y(k, m);
            for (i, &v) in y.iter().enumerate() {
                let mut row = vec![k.to_string(), num(setup.time.time(m))];
                row.extend(coord_cells(setup, i));
                row.push(num(v));
                csv.row(&row);
            }
        }
    }
    art.write("forward.csv", &csv.into_bytes())?;
    let objective = spacemean_core::control::eval_j(&setup.forward.model, &u, &ens)?;
    art.write_json(
        "summary.json",
        &ForwardSummary {
            paths: ens.path_count(),
            admissible: ens.admissible_count(),
            rejected: ens.rejected(),
            initial_control: setup.config.solver.initial_control,
            objective,
            terminal_mean_integral: mean_integral(setup, &ens, |k| ens.y(k, steps).to_vec()),
        },
    )?;
    Ok(())
}

fn write_adjoint_csv(setup: &Setup, adj: &AdjointEnsemble, art: &mut Artifacts, name: &str) -> Outcome {
    let mut header = vec!["path", "t"];
    header.extend(coord_header(setup));
    header.extend(["p", "q", "c_r"]);
    let mut csv = Csv::new(&header);
    for k in 0..exported(setup, adj.path_count()) {
        for m in 0..=setup.time.steps {
            let (p, q, cr) = (adj.p(k, m), adj.q(k, m), adj.cr(k, m));
            for i in 0..setup.grid.len() {
                let mut row = vec![k.to_string(), num(setup.time.time(m))];
                row.extend(coord_cells(setup, i));
                row.extend([num(p[i]), num(q[i]), num(cr[i])]);
                csv.row(&row);
            }
        }
    }
    art.write(name, &csv.into_bytes())?;
    Ok(())
}

fn mean_adjoint_integral(setup: &Setup, adj: &AdjointEnsemble, m: usize) -> f64 {
    let total: f64 = (0..adj.path_count()).map(|k| setup.grid.integrate(adj.p(k, m))).sum();
    total / adj.path_count() as f64
}

#[derive(Serialize)]
struct AdjointSummary {
    estimator: spacemean_core::backward::Estimator,
    paths: usize,
    regression: RegressionStats,
    /// `E ∫ p(0, x) dx`.
    initial_mean_integral: f64,
    /// `E ∫ p(T, x) dx`.
    terminal_mean_integral: f64,
}

pub fn adjoint(setup: &Setup, art: &mut Artifacts) -> Outcome {
    let problem = setup.problem(setup.noise()?);
    let u = setup.initial_control()?;
    let ens = problem.simulate(&u)?;
    let adj = problem.adjoint(&u, &ens)?;
    write_adjoint_csv(setup, &adj, art, "adjoint.csv")?;
    art.write_json(
        "adjoint.json",
        &AdjointSummary {
            estimator: setup.estimator,
            paths: adj.path_count(),
            regression: adj.regression,
            initial_mean_integral: mean_adjoint_integral(setup, &adj, 0),
            terminal_mean_integral: mean_adjoint_integral(setup, &adj, setup.time.steps),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct PicardSummary {
    driver: DriverKind,
    terminal: TerminalKind,
    iterations: usize,
    converged: bool,
    /// Least-squares slope of `ln d_n` in `n`.
    log_slope: Option<f64>,
    max_ratio_from_second: Option<f64>,
    trace: spacemean_core::backward::PicardTrace,
}

pub fn picard(setup: &Setup, art: &mut Artifacts) -> Outcome {
    let problem = setup.problem(setup.noise()?);
    let u = setup.initial_control()?;
    let ens = problem.simulate(&u)?;
    let bp = &setup.backward;
    let model = &setup.forward.model;
    let pc = &setup.config.picard;
    let terminal = match pc.terminal {
        TerminalKind::Adjoint => terminal_adjoint(model, &bp.kernel, bp.mode, &ens)?,
        TerminalKind::State => (0..ens.path_count()).map(|k| ens.y(k, setup.time.steps).to_vec()).collect(),
    };
    let ham = HamiltonianDriver { model, kernel: &bp.kernel, mode: bp.mode };
    let driver: &dyn Driver = match pc.driver {
        DriverKind::Hamiltonian => &ham,
        DriverKind::Linear => &pc.linear,
    };
    let options = PicardOptions {
        max_iterations: pc.max_iterations,
        max_inner: pc.max_inner,
        tolerance: pc.tolerance,
        start: pc.start,
    };
    let input = BackwardInput { ensemble: Some(&ens), control: Some(&u) };
    let out = bp.picard(input, &terminal, driver, setup.estimator, &options)?;
    let mut csv = Csv::new(&["n", "dp", "dq", "dr", "ratio"]);
    for e in &out.trace.entries {
        csv.row(&[e.iteration.to_string(), num(e.dp), num(e.dq), num(e.dr), e.ratio.map(num).unwrap_or_default()]);
    }
    art.write("picard.csv", &csv.into_bytes())?;
    write_adjoint_csv(setup, &out.adjoint, art, "picard_adjoint.csv")?;
    let max_ratio = out.trace.entries.iter().skip(1).filter_map(|e| e.ratio).reduce(f64::max);
    art.write_json(
        "picard.json",
        &PicardSummary {
            driver: pc.driver,
            terminal: pc.terminal,
            iterations: out.iterations,
            converged: out.converged,
            log_slope: out.trace.log_slope(),
            max_ratio_from_second: max_ratio,
            trace: out.trace,
        },
    )?;
    Ok(())
}

fn control_csv(setup: &Setup, u: &ControlField) -> Vec<u8> {
    let steps = setup.time.steps;
    match u.mode() {
        ControlMode::Pointwise => {
            let mut header = vec!["t"];
            header.extend(coord_header(setup));
            header.push("u");
            let mut csv = Csv::new(&header);
            for m in 0..steps {
                for i in 0..setup.grid.len() {
                    let mut row = vec![num(setup.time.time(m))];
                    row.extend(coord_cells(setup, i));
                    row.push(num(u.value(0, m, i)));
                    csv.row(&row);
                }
            }
            csv.into_bytes()
        }
        ControlMode::XFree | ControlMode::Constant => {
            let mut csv = Csv::new(&["t", "u"]);
            for m in 0..steps {
                csv.row(&[num(setup.time.time(m)), num(u.value(0, m, 0))]);
            }
            csv.into_bytes()
        }
    }
}

#[derive(Serialize)]
struct OptimizeSummary {
    #[serde(flatten)]
    report: OptimizerReport,
    objective: ObjectiveEstimate,
    /// Controls vary by path; `control.csv` holds path 0.
    per_path: bool,
}

pub fn optimize(setup: &Setup, art: &mut Artifacts) -> Outcome {
    let problem = setup.problem(setup.noise()?);
    let (u, report) = problem.optimize(&setup.initial_control()?)?;
    let objective = problem.objective(&u)?;
    art.write("control.csv", &control_csv(setup, &u))?;
    art.write_json("report.json", &OptimizeSummary { report, objective, per_path: u.is_per_path() })?;
    Ok(())
}

/// Direction for the derivative check, in the configured control mode.
pub fn direction(setup: &Setup, kind: DirectionKind) -> Result<ControlField> {
    let mode = setup.config.solver.control_mode;
    let steps = setup.time.steps;
    let g = &setup.grid;
    let n = g.len();
    let growth = |m: usize| (m + 1) as f64 / steps as f64;
    let values = match (kind, mode) {
        (DirectionKind::Uniform, ControlMode::Pointwise) => vec![1.0; steps * n],
        (DirectionKind::Uniform, ControlMode::XFree) => vec![1.0; steps],
        (_, ControlMode::Constant) => vec![1.0],
        (DirectionKind::Bump, ControlMode::XFree) => (0..steps).map(growth).collect(),
        (DirectionKind::Bump, ControlMode::Pointwise) => {
            let bump = |i: usize| {
                let x = g.coords(i);
                (0..g.dim())
                    .map(|a| (std::f64::consts::PI * (x[a] - g.lower(a)) / (g.upper(a) - g.lower(a))).sin())
                    .product::<f64>()
                    * if g.is_interior(i) { 1.0 } else { 0.0 }
            };
            (0..steps).flat_map(|m| (0..n).map(move |i| growth(m) * bump(i))).collect()
        }
    };
    ControlField::direction(mode, steps, n, values)
}

#[derive(Serialize)]
struct GradcheckSummary {
    at: CheckPoint,
    direction: DirectionKind,
    #[serde(flatten)]
    report: GradientReport,
    /// Stationarity residual at the point (optimum only).
    residual: Option<f64>,
}

pub fn gradcheck(setup: &Setup, art: &mut Artifacts) -> Outcome {
    let problem = setup.problem(setup.noise()?);
    let gc = &setup.config.gradcheck;
    let (u, residual) = match gc.at {
        CheckPoint::Initial => (setup.initial_control()?, None),
        CheckPoint::Optimum => {
            let (u, report) = problem.optimize(&setup.initial_control()?)?;
            (u, Some(report.residual))
        }
    };
    let d = direction(setup, gc.direction)?;
    let report = problem.gradient_check(&u, &d, gc.theta)?;
    art.write_json("gradcheck.json", &GradcheckSummary { at: gc.at, direction: gc.direction, report, residual })?;
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary {
    #[serde(flatten)]
    oracle: OracleResult,
    /// The optimizer run in constant mode.
    optimizer_value: f64,
    optimizer_objective: f64,
    optimizer_converged: bool,
    relative_objective_gap: f64,
    /// Spacing of the value grid.
    grid_step: f64,
}

pub fn oracle(setup: &Setup, art: &mut Artifacts) -> Outcome {
    let problem = setup.problem(setup.noise()?);
    let oc = &setup.config.oracle;
    let values: Vec<f64> = if oc.points == 1 {
        vec![oc.low]
    } else {
        (0..oc.points).map(|i| oc.low + (oc.high - oc.low) * i as f64 / (oc.points - 1) as f64).collect()
    };
    let oracle = problem.brute_force_constant(&values)?;
    let mut csv = Csv::new(&["u", "J"]);
    for (v, j) in oracle.values.iter().zip(&oracle.objectives) {
        csv.row(&[num(*v), num(*j)]);
    }
    art.write("oracle.csv", &csv.into_bytes())?;
    let start = setup.uniform_control(ControlMode::Constant, setup.config.solver.initial_control)?;
    let (u, report) = problem.optimize(&start)?;
    let objective = problem.objective(&u)?.value;
    let gap = (objective - oracle.best_objective).abs() / oracle.best_objective.abs().max(f64::MIN_POSITIVE);
    let grid_step = if values.len() > 1 { values[1] - values[0] } else { 0.0 };
    art.write_json(
        "oracle.json",
        &OracleSummary {
            oracle,
            optimizer_value: u.value(0, 0, 0),
            optimizer_objective: objective,
            optimizer_converged: report.converged,
            relative_objective_gap: gap,
            grid_step,
        },
    )?;
    Ok(())
}
