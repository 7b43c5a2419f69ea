//! Invariant suite run at the configured scale.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spacemean_core::backward::{BackwardInput, Estimator, LinearDriver, PicardOptions};
use spacemean_core::noise::PathBundle;
use spacemean_core::spacemean::coverage;
use spacemean_core::{EllipticOperator, Grid, OperatorCoefficients, Poly2, Result};

use crate::commands::direction;
use crate::config::{DirectionKind, RunConfig};
use crate::setup::{self, Setup};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
    }
}

const TRIALS: usize = 20;

fn averaging_contracts(s: &Setup, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = &s.backward.kernel;
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let f: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(s.grid.l2_norm(&k.average(&f)) / s.grid.l2_norm(&f));
    }
    Ok((worst <= 1.02, format!("max ‖Gf‖/‖f‖ = {worst:.6} over {TRIALS} fields (bound 1.02)")))
}

fn dual_adjointness(s: &Setup, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = &s.backward.kernel;
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let f: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = s.grid.dot(&k.average(&f), &psi);
        let rhs = s.grid.dot(&f, &k.average_transpose(&psi));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    Ok((worst <= 1e-12, format!("max relative gap {worst:.3e} (bound 1e-12)")))
}

fn corner_coverage(s: &Setup) -> Result<(bool, String)> {
    let g = &s.grid;
    let v = coverage(g.clone(), s.config.model.theta)?;
    let expected = 0.5f64.powi(g.dim() as i32);
    let corner = v.values()[0];
    let fits = (0..g.dim()).all(|a| 2.0 * s.config.model.theta <= g.upper(a) - g.lower(a));
    if !fits {
        return Ok((true, format!("ball wider than the domain; corner coverage {corner:.6} not compared")));
    }
    Ok(((corner - expected).abs() <= 1e-3, format!("corner coverage {corner:.6}, expected {expected}")))
}

fn coercivity(s: &Setup, seed: u64) -> Result<(bool, String)> {
    let o = &s.config.operator;
    let bmax = o.advection.iter().map(|c| c.abs()).sum::<f64>().max(0.0);
    // ‖β u'‖·‖u‖ ≤ d‖u'‖² + β²/(4d)‖u‖², twice over
    let lambda = 1.0 + bmax * bmax / o.diffusion;
    let alpha = 0.5 * (2.0 * o.diffusion).min(1.0);
    let op = setup::operator(&s.config, s.grid.clone())?;
    let r = op.check_coercivity(lambda, alpha, TRIALS, seed)?;
    Ok((r.pass, format!("min ratio {:.6} with λ = {lambda}, bound {alpha}", r.min_ratio)))
}

fn transpose_matches_adjoint(s: &Setup, seed: u64) -> Result<(bool, String)> {
    let o = &s.config.operator;
    let co = |dim: usize| {
        if o.advection.iter().all(|&v| v == 0.0) {
            OperatorCoefficients::laplacian(o.diffusion)
        } else {
            debug_assert_eq!(dim, 1);
            let [a, b, c] = o.advection;
            OperatorCoefficients::one_d(Poly2::constant(o.diffusion), Poly2::in_x(a, b, c))
        }
    };
    let gap = |g: Arc<Grid>, rng: &mut ChaCha8Rng| -> Result<f64> {
        let c = co(g.dim());
        let t = EllipticOperator::assemble(g.clone(), c)?.transposed();
        let a = EllipticOperator::assemble_adjoint(g.clone(), c)?;
        // smooth interior field so the analytic adjoint is meaningful
        let w = rng.random_range(1.0..3.0);
        let psi: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.coords(i);
                (0..g.dim())
                    .map(|k| {
                        let t = (x[k] - g.lower(k)) / (g.upper(k) - g.lower(k));
                        (std::f64::consts::PI * t).sin().powi(3) * (w * t).cos()
                    })
                    .product()
            })
            .collect();
        let d: Vec<f64> = t.apply(&psi).iter().zip(a.apply(&psi)).map(|(x, y)| x - y).collect();
        Ok(g.l2_norm(&d) / g.l2_norm(&a.apply(&psi)).max(1e-300))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = gap(s.grid.clone(), &mut rng)?;
    if o.advection.iter().all(|&v| v == 0.0) {
        return Ok((coarse <= 1e-12, format!("relative gap {coarse:.3e} for the Laplacian (bound 1e-12)")));
    }
    let gc = &s.config.grid;
    let fine_res: Vec<usize> = gc.resolution.iter().map(|&r| 2 * r - 1).collect();
    let fine = Arc::new(Grid::new(&spacemean_core::DomainSpec { lower: gc.lower.clone(), upper: gc.upper.clone() }, &fine_res)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fine_gap = gap(fine, &mut rng)?;
    let ratio = coarse / fine_gap.max(1e-300);
    Ok((ratio >= 1.8 || coarse <= 1e-12, format!("gap {coarse:.3e} → {fine_gap:.3e} under h/2, ratio {ratio:.2} (bound 1.8)")))
}

fn concavity(s: &Setup, seed: u64) -> Result<(bool, String)> {
    let r = s.forward.model.check_concavity(1000, seed)?;
    Ok((r.pass, format!("worst midpoint violation {:.3e} over {} probes", r.worst_violation, r.samples)))
}

/// Mean of `Σ x / n` within three standard errors of zero.
fn mean_zero(xs: &[f64]) -> (bool, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        return (mean.abs() <= 1e-14, 0.0);
    }
    ((mean / se).abs() <= 3.0, mean / se)
}

fn compensated_noise(s: &Setup, noise: &[PathBundle]) -> Result<(bool, String)> {
    let levy = &s.forward.model.levy;
    let db: Vec<f64> = noise.iter().flat_map(|b| b.db.iter().copied()).collect();
    let dn: Vec<f64> = noise
        .iter()
        .flat_map(|b| (0..b.steps()).map(move |m| b.compensated_increment(m, levy, |z| z)))
        .collect();
    let (ok_b, zb) = mean_zero(&db);
    let (ok_n, zn) = mean_zero(&dn);
    Ok((ok_b && ok_n, format!("z-scores: Brownian {zb:.3}, compensated jumps {zn:.3} over {} increments", db.len())))
}

fn forward_data(s: &Setup, noise: Arc<Vec<PathBundle>>) -> Result<(bool, String)> {
    let problem = s.problem(noise);
    let ens = problem.simulate(&s.initial_control()?)?;
    let g = &s.grid;
    let st = &s.config.state;
    let mut worst_ic = 0.0f64;
    let mut worst_bc = 0.0f64;
    for k in 0..ens.path_count() {
        for i in g.interior_nodes() {
            worst_ic = worst_ic.max((ens.y(k, 0)[i] - st.initial).abs());
        }
        for m in 0..=s.time.steps {
            for i in g.boundary_nodes() {
                worst_bc = worst_bc.max((ens.y(k, m)[i] - st.boundary).abs());
            }
        }
    }
    Ok((worst_ic == 0.0 && worst_bc == 0.0, format!("max initial deviation {worst_ic:.3e}, max boundary deviation {worst_bc:.3e}")))
}

fn backward_data(s: &Setup, noise: Arc<Vec<PathBundle>>) -> Result<(bool, String)> {
    let problem = s.problem(noise);
    let u = s.initial_control()?;
    let ens = problem.simulate(&u)?;
    let adj = problem.adjoint(&u, &ens)?;
    let bp = &s.backward;
    let terminal = spacemean_core::backward::terminal_adjoint(&s.forward.model, &bp.kernel, bp.mode, &ens)?;
    let steps = s.time.steps;
    let mut worst_t = 0.0f64;
    let mut worst_b = 0.0f64;
    for (k, t) in terminal.iter().enumerate().take(adj.path_count()) {
        for (a, b) in adj.p(k, steps).iter().zip(t) {
            worst_t = worst_t.max((a - b).abs());
        }
        for m in 0..steps {
            for i in s.grid.boundary_nodes() {
                worst_b = worst_b.max(adj.p(k, m)[i].abs());
            }
        }
    }
    Ok((worst_t == 0.0 && worst_b == 0.0, format!("max terminal deviation {worst_t:.3e}, max boundary value {worst_b:.3e}")))
}

fn picard_step_zero(s: &Setup) -> Result<(bool, String)> {
    let terminal = vec![vec![1.0; s.grid.len()]];
    let driver = LinearDriver { source: 1.0, ..LinearDriver::default() };
    let out = s.backward.picard(BackwardInput::none(), &terminal, &driver, Estimator::Pathwise, &PicardOptions::default())?;
    Ok((out.converged && out.iterations == 1, format!("independent driver: {} iteration(s), converged {}", out.iterations, out.converged)))
}

/// The same instance with every noise channel switched off: regression over
/// several paths must reproduce the pathwise solve.
fn zero_noise_regimes(config: &RunConfig) -> Result<(bool, String)> {
    let mut c = config.clone();
    c.noise.intensity = 0.0;
    c.noise.paths = 8;
    c.model.beta = 0.0;
    if let Some(custom) = c.model.custom.as_mut() {
        custom.volatility = Default::default();
    }
    let mut s = setup::build(&c)?;
    let noise = s.noise()?;
    let u = s.initial_control()?;
    s.estimator = Estimator::Pathwise;
    let ens = s.problem(noise.clone()).simulate(&u)?;
    let a = s.problem(noise.clone()).adjoint(&u, &ens)?;
    s.estimator = Estimator::Regression;
    let b = s.problem(noise).adjoint(&u, &ens)?;
    let mut worst = 0.0f64;
    for k in 0..a.path_count() {
        for (x, y) in a.p[k].iter().zip(&b.p[k]) {
            worst = worst.max((x - y).abs());
        }
    }
    let q_zero = b.q.iter().chain(&b.cr).all(|v| v.iter().all(|&x| x == 0.0));
    Ok((worst <= 1e-8 && q_zero, format!("max |p_regression − p_pathwise| = {worst:.3e}, q and c_r identically zero: {q_zero}")))
}

fn gradient_forms(s: &Setup, noise: Arc<Vec<PathBundle>>) -> Result<(bool, String)> {
    let problem = s.problem(noise);
    let d = direction(s, DirectionKind::Bump)?;
    let r = problem.gradient_check(&s.initial_control()?, &d, s.config.gradcheck.theta)?;
    Ok((
        r.max_relative_gap <= 0.05,
        format!(
            "finite difference {:.6e}, ∂H/∂u form {:.6e}, derivative-process form {:.6e}, max relative gap {:.3e} (bound 5e-2)",
            r.finite_difference, r.hamiltonian_form, r.derivative_form, r.max_relative_gap
        ),
    ))
}

fn reproducible(s: &Setup) -> Result<(bool, String)> {
    let u = s.initial_control()?;
    let a = s.problem(s.noise()?).simulate(&u)?;
    let b = s.problem(s.noise()?).simulate(&u)?;
    let same = a.paths.iter().zip(&b.paths).all(|(x, y)| {
        x.y.iter().zip(&y.y).all(|(p, q)| p.to_bits() == q.to_bits())
    });
    Ok((same, format!("two simulations of {} path(s) bitwise equal: {same}", a.path_count())))
}

fn config_round_trip(config: &RunConfig) -> Result<(bool, String)> {
    let text = config.canonical();
    let same = RunConfig::parse(&text).map(|c| c == *config).unwrap_or(false);
    Ok((same, format!("canonical echo re-parses to an equal configuration: {same}")))
}

pub fn run(setup: &Setup) -> Result<Report> {
    let seed = setup.config.noise.seed;
    let noise = setup.noise()?;
    let checks = vec![
        check("averaging_contraction", averaging_contracts(setup, seed)),
        check("dual_adjointness", dual_adjointness(setup, seed ^ 1)),
        check("corner_coverage", corner_coverage(setup)),
        check("coercivity", coercivity(setup, seed ^ 2)),
        check("transpose_vs_analytic_adjoint", transpose_matches_adjoint(setup, seed ^ 3)),
        check("concavity", concavity(setup, seed ^ 4)),
        check("compensated_noise_mean", compensated_noise(setup, &noise)),
        check("forward_initial_and_boundary", forward_data(setup, noise.clone())),
        check("backward_terminal_and_boundary", backward_data(setup, noise.clone())),
        check("picard_independent_driver", picard_step_zero(setup)),
        check("zero_noise_regime_consistency", zero_noise_regimes(&setup.config)),
        check("gradient_forms_agree", gradient_forms(setup, noise)),
        check("reproducibility", reproducible(setup)),
        check("config_round_trip", config_round_trip(&setup.config)),
    ];
    let passed = checks.iter().filter(|c| c.pass).count();
    Ok(Report { passed, failed: checks.len() - passed, checks })
}
