//! Controls, the performance functional and the maximum-principle optimizer.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{terminal_adjoint, AdjointEnsemble, BackwardInput, BackwardProblem, Estimator, HamiltonianDriver};
use crate::error::{Error, Result};
use crate::forward::{ForwardEnsemble, ForwardProblem};
use crate::model::{ControlBounds, HamiltonianInputs, HamiltonianSlopes, ModelSpec, RunningUtility};
use crate::noise::PathBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// `u(t, x)`
    Pointwise,
    /// `u(t)`
    XFree,
    /// One value for all `(t, x)`.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    Shared(Vec<f64>),
    PerPath(Vec<Vec<f64>>),
}

/// Control values on the left points `t_0..t_{M−1}`, shared by all paths or
/// one series per path.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    mode: ControlMode,
    steps: usize,
    nodes: usize,
    bounds: ControlBounds,
    values: Values,
}

impl ControlField {
    fn series_len(mode: ControlMode, steps: usize, nodes: usize) -> usize {
        match mode {
            ControlMode::Pointwise => steps * nodes,
            ControlMode::XFree => steps,
            ControlMode::Constant => 1,
        }
    }

    pub fn uniform(mode: ControlMode, steps: usize, nodes: usize, bounds: ControlBounds, value: f64) -> Result<Self> {
        let len = Self::series_len(mode, steps, nodes);
        Self::shared(mode, steps, nodes, bounds, vec![value; len])
    }

    pub fn shared(mode: ControlMode, steps: usize, nodes: usize, bounds: ControlBounds, values: Vec<f64>) -> Result<Self> {
        let expected = Self::series_len(mode, steps, nodes);
        if values.len() != expected {
            return Err(Error::FieldLength { expected, got: values.len() });
        }
        let c = Self { mode, steps, nodes, bounds, values: Values::Shared(values) };
        c.check_bounds()?;
        Ok(c)
    }

    pub fn per_path(
        mode: ControlMode,
        steps: usize,
        nodes: usize,
        bounds: ControlBounds,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let expected = Self::series_len(mode, steps, nodes);
        if let Some(v) = values.iter().find(|v| v.len() != expected) {
            return Err(Error::FieldLength { expected, got: v.len() });
        }
        let c = Self { mode, steps, nodes, bounds, values: Values::PerPath(values) };
        c.check_bounds()?;
        Ok(c)
    }

    /// Unbounded field, used for perturbation directions.
    pub fn direction(mode: ControlMode, steps: usize, nodes: usize, values: Vec<f64>) -> Result<Self> {
        let free = ControlBounds { lower: f64::NEG_INFINITY, upper: f64::INFINITY };
        Self::shared(mode, steps, nodes, free, values)
    }

    fn check_bounds(&self) -> Result<()> {
        for s in self.all_series() {
            for &v in s {
                if !(v >= self.bounds.lower && v <= self.bounds.upper) {
                    return Err(Error::ControlOutOfBounds { value: v, lower: self.bounds.lower, upper: self.bounds.upper });
                }
            }
        }
        Ok(())
    }

    fn all_series(&self) -> Vec<&[f64]> {
        match &self.values {
            Values::Shared(v) => vec![v.as_slice()],
            Values::PerPath(vs) => vs.iter().map(|v| v.as_slice()).collect(),
        }
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn bounds(&self) -> ControlBounds {
        self.bounds
    }

    pub fn is_per_path(&self) -> bool {
        matches!(self.values, Values::PerPath(_))
    }

    pub fn path_count(&self) -> Option<usize> {
        match &self.values {
            Values::Shared(_) => None,
            Values::PerPath(v) => Some(v.len()),
        }
    }

    /// Raw series of `path` (the shared series for shared fields).
    pub fn series(&self, path: usize) -> &[f64] {
        match &self.values {
            Values::Shared(v) => v,
            Values::PerPath(vs) => &vs[path],
        }
    }

    pub fn value(&self, path: usize, m: usize, node: usize) -> f64 {
        let s = self.series(path);
        match self.mode {
            ControlMode::Pointwise => s[m * self.nodes + node],
            ControlMode::XFree => s[m],
            ControlMode::Constant => s[0],
        }
    }

    /// Values of step `m` at every node.
    pub fn fill_frame(&self, path: usize, m: usize, out: &mut [f64]) {
        let s = self.series(path);
        match self.mode {
            ControlMode::Pointwise => out.copy_from_slice(&s[m * self.nodes..(m + 1) * self.nodes]),
            ControlMode::XFree => out.fill(s[m]),
            ControlMode::Constant => out.fill(s[0]),
        }
    }

    fn zip_with(&self, other: &ControlField, f: impl Fn(f64, f64) -> f64, bounds: ControlBounds) -> Result<Self> {
        if self.mode != other.mode || self.steps != other.steps || self.nodes != other.nodes {
            return Err(Error::InvalidArgument("control fields have different layouts".into()));
        }
        let combine = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<f64>>();
        let values = match (&self.values, &other.values) {
            (Values::Shared(a), Values::Shared(b)) => Values::Shared(combine(a, b)),
            _ => {
                let n = self.path_count().or(other.path_count()).unwrap_or(1);
                if self.path_count().is_some_and(|k| k != n) || other.path_count().is_some_and(|k| k != n) {
                    return Err(Error::InvalidArgument("per-path controls have different path counts".into()));
                }
                Values::PerPath((0..n).map(|i| combine(self.series(i), other.series(i))).collect())
            }
        };
        let c = Self { mode: self.mode, steps: self.steps, nodes: self.nodes, bounds, values };
        c.check_bounds()?;
        Ok(c)
    }

    /// `self + θ·direction`; fails if the result leaves `U`.
    pub fn perturbed(&self, direction: &ControlField, theta: f64) -> Result<Self> {
        self.zip_with(direction, |a, d| a + theta * d, self.bounds)
    }

    /// `Π_U((1 − ω)·self + ω·target)`.
    pub fn relaxed(&self, target: &ControlField, omega: f64) -> Result<Self> {
        let b = self.bounds;
        self.zip_with(target, |a, t| b.project((1.0 - omega) * a + omega * t), b)
    }

    pub fn max_abs_diff(&self, other: &ControlField) -> Result<f64> {
        let d = self.zip_with(other, |a, b| (a - b).abs(), ControlBounds { lower: 0.0, upper: f64::INFINITY })?;
        Ok(d.all_series().iter().flat_map(|s| s.iter()).fold(0.0, |m, &v| m.max(v)))
    }
}

/// Monte Carlo estimate of the objective over the admissible paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveEstimate {
    pub value: f64,
    pub std_error: f64,
    pub admissible: usize,
    pub rejected: usize,
}

/// `E[Σ_m Δt ∫_D f(Y_m, Ȳ_m, u_m) dx + ∫_D g(x, Y_M, Ȳ_M) dx]` with the
/// left-point rule in time and the trapezoid rule in space.
pub fn eval_j(model: &ModelSpec, control: &ControlField, ensemble: &ForwardEnsemble) -> Result<ObjectiveEstimate> {
    let g = &ensemble.grid;
    let n = g.len();
    let steps = ensemble.time.steps;
    let dt = ensemble.time.dt();
    let per_path: Vec<f64> = (0..ensemble.path_count())
        .into_par_iter()
        .filter(|&k| ensemble.paths[k].admissible)
        .map(|k| {
            let mut u = vec![0.0; n];
            let mut buf = vec![0.0; n];
            let mut total = 0.0;
            for m in 0..steps {
                control.fill_frame(k, m, &mut u);
                let (y, yb) = (ensemble.y(k, m), ensemble.ybar(k, m));
                for i in 0..n {
                    buf[i] = model.running_utility(y[i], yb[i], u[i]);
                }
                total += dt * g.integrate(&buf);
            }
            let (y, yb) = (ensemble.y(k, steps), ensemble.ybar(k, steps));
            for i in 0..n {
                buf[i] = model.terminal_utility(g.coords(i), y[i], yb[i]);
            }
            total + g.integrate(&buf)
        })
        .collect();
    if per_path.is_empty() {
        return Err(Error::AllPathsRejected(ensemble.path_count()));
    }
    let count = per_path.len() as f64;
    let value = per_path.iter().sum::<f64>() / count;
    let var = if per_path.len() > 1 {
        per_path.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Ok(ObjectiveEstimate {
        value,
        std_error: (var / count).sqrt(),
        admissible: per_path.len(),
        rejected: ensemble.path_count() - per_path.len(),
    })
}

/// Root of a nonincreasing `f` on `[lo, hi]`; an end point when `f` does not
/// change sign.
pub fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    if f(a) <= 0.0 {
        return a;
    }
    if f(b) >= 0.0 {
        return b;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if f(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Stationary point of `u ↦ H` for the closed-form running utilities given
/// the aggregated slope `s` of the control-linear part (`∂H/∂u = f_u(u) − s`
/// for the presets). `None` when the utility has no closed form.
fn closed_form(running: RunningUtility, s: f64) -> Option<f64> {
    match running {
        RunningUtility::Log => Some(1.0 / s),
        RunningUtility::Power { rho } => Some(s.powf(1.0 / (rho - 1.0))),
        RunningUtility::Quadratic { .. } => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Stop when the stationarity residual falls below this.
    pub tolerance: f64,
    /// `ω` in `u ← (1 − ω)u + ω·u_new`.
    pub relaxation: f64,
    /// Projected-gradient step for models without a closed-form update.
    pub gradient_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-7, relaxation: 0.5, gradient_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub iterations: usize,
    pub j_trace: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    pub mode: ControlMode,
    /// Whether the objective never decreased from the second iterate on.
    pub j_nondecreasing: bool,
    /// Values the last update pushed back into `U`.
    pub projections: usize,
    pub diverged: bool,
}

/// One control update and the number of values projected onto `U`.
#[derive(Debug, Clone)]
pub struct ControlUpdate {
    pub control: ControlField,
    pub projections: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientReport {
    pub theta: f64,
    pub finite_difference: f64,
    pub hamiltonian_form: f64,
    pub derivative_form: f64,
    /// `max |a − b| / max(|a|, |b|)` over the three pairs.
    pub max_relative_gap: f64,
    /// `Σ Δt ∫ |direction|`, averaged over paths.
    pub direction_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub values: Vec<f64>,
    pub objectives: Vec<f64>,
    pub best_value: f64,
    pub best_objective: f64,
    /// Objective rises then falls along the value grid.
    pub unimodal: bool,
}

/// Forward model, adjoint solver and a fixed noise ensemble (common random
/// numbers for every evaluation).
pub struct ControlProblem<'a> {
    pub forward: &'a ForwardProblem,
    pub backward: &'a BackwardProblem,
    pub noise: Arc<Vec<PathBundle>>,
    pub estimator: Estimator,
    pub options: OptimizerOptions,
}

impl ControlProblem<'_> {
    fn model(&self) -> &ModelSpec {
        &self.forward.model
    }

    pub fn simulate(&self, u: &ControlField) -> Result<ForwardEnsemble> {
        self.forward.solve(u, self.noise.clone())
    }

    pub fn objective(&self, u: &ControlField) -> Result<ObjectiveEstimate> {
        eval_j(self.model(), u, &self.simulate(u)?)
    }

    pub fn adjoint(&self, u: &ControlField, ensemble: &ForwardEnsemble) -> Result<AdjointEnsemble> {
        let bp = self.backward;
        let terminal = terminal_adjoint(self.model(), &bp.kernel, bp.mode, ensemble)?;
        let driver = HamiltonianDriver { model: self.model(), kernel: &bp.kernel, mode: bp.mode };
        let input = BackwardInput { ensemble: Some(ensemble), control: Some(u) };
        bp.solve(input, &terminal, &driver, self.estimator)
    }

    fn adjoint_path(adj: &AdjointEnsemble, k: usize) -> usize {
        if adj.path_count() == 1 {
            0
        } else {
            k
        }
    }

    /// `∂H/∂u` on every node of step `m` of path `k`.
    fn dh_du_frame(&self, u: &ControlField, ens: &ForwardEnsemble, adj: &AdjointEnsemble, k: usize, m: usize) -> Vec<f64> {
        let model = self.model();
        let m2 = model.moments().m2;
        let a = Self::adjoint_path(adj, k);
        let n = ens.grid.len();
        let mut uf = vec![0.0; n];
        u.fill_frame(k, m, &mut uf);
        let (y, yb) = (ens.y(k, m), ens.ybar(k, m));
        let (p, q, cr) = (adj.p(a, m), adj.q(a, m), adj.cr(a, m));
        (0..n)
            .map(|i| {
                model
                    .slopes_unchecked(m2, &HamiltonianInputs { y: y[i], ybar: yb[i], u: uf[i], p: p[i], q: q[i], cr: cr[i] })
                    .du
            })
            .collect()
    }

    /// Slope of the control-linear part, `−(b_u p + σ_u q + γ_u m2 c_r)`,
    /// so that `∂H/∂u = f_u(u) − s`.
    fn linear_slope(&self, adj: &AdjointEnsemble, a: usize, m: usize, i: usize) -> f64 {
        let model = self.model();
        let m2 = model.moments().m2;
        -(model.drift.cu * adj.p(a, m)[i] + model.volatility.cu * adj.q(a, m)[i] + model.jump_core.cu * m2 * adj.cr(a, m)[i])
    }

    /// The maximum-condition update of `u` given its adjoint. Closed forms
    /// for the log and power utilities; a projected-gradient step
    /// (pointwise) or bisection (averaged modes) otherwise.
    pub fn update(&self, u: &ControlField, ens: &ForwardEnsemble, adj: &AdjointEnsemble) -> Result<ControlUpdate> {
        let model = self.model();
        let bounds = model.bounds;
        let g = &ens.grid;
        let n = g.len();
        let steps = ens.time.steps;
        let dt = ens.time.dt();
        let measure = g.integrate(&vec![1.0; n]);
        let closed = closed_form(model.running, 1.0).is_some();
        let mut projections = 0usize;
        let mut project = |v: f64| {
            let pv = bounds.project(v);
            if pv != v {
                projections += 1;
            }
            pv
        };
        let paths = adj.path_count();
        let admissible: Vec<usize> = (0..ens.path_count()).filter(|&k| ens.paths[k].admissible).collect();
        if admissible.is_empty() {
            return Err(Error::AllPathsRejected(ens.path_count()));
        }

        let mut series_for = |k: usize| -> Result<Vec<f64>> {
            let a = Self::adjoint_path(adj, k);
            match u.mode() {
                ControlMode::Pointwise => {
                    let mut out = Vec::with_capacity(steps * n);
                    for m in 0..steps {
                        if closed {
                            for i in 0..n {
                                let s = self.linear_slope(adj, a, m, i);
                                if g.is_interior(i) && s <= 0.0 {
                                    return Err(Error::NonPositiveAdjoint { what: "pointwise update", value: s });
                                }
                                // s = 0 on ∂D sends the control to its upper bound
                                out.push(if s <= 0.0 { project(f64::INFINITY) } else { project(closed_form(model.running, s).unwrap()) });
                            }
                        } else {
                            let du = self.dh_du_frame(u, ens, adj, k, m);
                            for i in 0..n {
                                out.push(project(u.value(k, m, i) + self.options.gradient_step * du[i]));
                            }
                        }
                    }
                    Ok(out)
                }
                ControlMode::XFree => {
                    let mut out = Vec::with_capacity(steps);
                    for m in 0..steps {
                        let s: Vec<f64> = (0..n).map(|i| self.linear_slope(adj, a, m, i)).collect();
                        let total = g.integrate(&s);
                        let size = g.integrate(&s.iter().map(|v| v.abs()).collect::<Vec<_>>());
                        out.push(self.averaged_root(
                            (total, size),
                            measure,
                            &|v| self.frame_slope_at(ens, adj, k, m, v),
                            &mut project,
                        )?);
                    }
                    Ok(out)
                }
                ControlMode::Constant => unreachable!(),
            }
        };

        let control = match u.mode() {
            ControlMode::Constant => {
                // deterministic: the time-space integral of the slope averaged
                // over the admissible paths
                let (mut total, mut size) = (0.0, 0.0);
                for &k in &admissible {
                    let a = Self::adjoint_path(adj, k);
                    for m in 0..steps {
                        let s: Vec<f64> = (0..n).map(|i| self.linear_slope(adj, a, m, i)).collect();
                        total += dt * g.integrate(&s);
                        size += dt * g.integrate(&s.iter().map(|v| v.abs()).collect::<Vec<_>>());
                    }
                }
                total /= admissible.len() as f64;
                size /= admissible.len() as f64;
                let horizon = ens.time.horizon;
                let value = self.averaged_root(
                    (total, size),
                    horizon * measure,
                    &|v| {
                        admissible
                            .iter()
                            .map(|&k| (0..steps).map(|m| dt * self.frame_slope_at(ens, adj, k, m, v)).sum::<f64>())
                            .sum::<f64>()
                            / admissible.len() as f64
                    },
                    &mut project,
                )?;
                ControlField::shared(ControlMode::Constant, steps, n, bounds, vec![value])?
            }
            mode if paths == 1 => ControlField::shared(mode, steps, n, bounds, series_for(0)?)?,
            mode => {
                let all = (0..paths).map(&mut series_for).collect::<Result<Vec<_>>>()?;
                ControlField::per_path(mode, steps, n, bounds, all)?
            }
        };
        Ok(ControlUpdate { control, projections })
    }

    /// `∫_D ∂H/∂u dx` on step `m` of path `k` with the control set to `v`
    /// everywhere.
    fn frame_slope_at(&self, ens: &ForwardEnsemble, adj: &AdjointEnsemble, k: usize, m: usize, v: f64) -> f64 {
        let model = self.model();
        let m2 = model.moments().m2;
        let a = Self::adjoint_path(adj, k);
        let g = &ens.grid;
        let (y, yb) = (ens.y(k, m), ens.ybar(k, m));
        let (p, q, cr) = (adj.p(a, m), adj.q(a, m), adj.cr(a, m));
        let du: Vec<f64> = (0..g.len())
            .map(|i| {
                model
                    .slopes_unchecked(m2, &HamiltonianInputs { y: y[i], ybar: yb[i], u: v, p: p[i], q: q[i], cr: cr[i] })
                    .du
            })
            .collect();
        g.integrate(&du)
    }

    /// Root of `weight·f_u(v) = total` (closed forms) or of `averaged(v) = 0`.
    /// `total` comes with the integral of the absolute slope, so that an
    /// integral lost in rounding counts as zero.
    fn averaged_root(
        &self,
        (total, size): (f64, f64),
        weight: f64,
        averaged: &dyn Fn(f64) -> f64,
        project: &mut dyn FnMut(f64) -> f64,
    ) -> Result<f64> {
        let model = self.model();
        if closed_form(model.running, 1.0).is_some() {
            if total <= 1e-12 * size {
                return Err(Error::NonPositiveAdjoint { what: "averaged update", value: total });
            }
            return Ok(project(closed_form(model.running, total / weight).unwrap()));
        }
        let b = model.bounds;
        if !b.lower.is_finite() || !b.upper.is_finite() {
            return Err(Error::InvalidArgument("averaged update of a custom model needs finite control bounds".into()));
        }
        Ok(bisect(averaged, b.lower, b.upper))
    }

    /// KKT residual `|u − Π_U(u + ∂H/∂u)|`: pointwise over `(t, x)` and the
    /// admissible paths, of the space (x-free) or time-space (constant)
    /// averages of `∂H/∂u` otherwise.
    pub fn stationarity_residual(&self, u: &ControlField, ens: &ForwardEnsemble, adj: &AdjointEnsemble) -> f64 {
        let b = self.model().bounds;
        let g = &ens.grid;
        let steps = ens.time.steps;
        let dt = ens.time.dt();
        let kkt = |v: f64, s: f64| (v - b.project(v + s)).abs();
        let admissible: Vec<usize> = (0..ens.path_count()).filter(|&k| ens.paths[k].admissible).collect();
        match u.mode() {
            ControlMode::Pointwise => admissible
                .par_iter()
                .map(|&k| {
                    let mut worst = 0.0f64;
                    for m in 0..steps {
                        let du = self.dh_du_frame(u, ens, adj, k, m);
                        for (i, s) in du.iter().enumerate() {
                            worst = worst.max(kkt(u.value(k, m, i), *s));
                        }
                    }
                    worst
                })
                .reduce(|| 0.0, f64::max),
            ControlMode::XFree => admissible
                .par_iter()
                .map(|&k| {
                    (0..steps)
                        .map(|m| kkt(u.value(k, m, 0), g.integrate(&self.dh_du_frame(u, ens, adj, k, m))))
                        .fold(0.0, f64::max)
                })
                .reduce(|| 0.0, f64::max),
            ControlMode::Constant => {
                let total: f64 = admissible
                    .iter()
                    .map(|&k| (0..steps).map(|m| dt * g.integrate(&self.dh_du_frame(u, ens, adj, k, m))).sum::<f64>())
                    .sum::<f64>()
                    / admissible.len().max(1) as f64;
                kkt(u.value(0, 0, 0), total / ens.time.horizon)
            }
        }
    }

    /// Damped fixed point: forward solve, adjoint solve, maximum-condition
    /// update, relaxation. The residual is evaluated before each update, so
    /// the returned control satisfies it when `converged`.
    pub fn optimize(&self, initial: &ControlField) -> Result<(ControlField, OptimizerReport)> {
        let mut u = initial.clone();
        let mut report = OptimizerReport {
            iterations: 0,
            j_trace: Vec::new(),
            residual: f64::INFINITY,
            converged: false,
            mode: u.mode(),
            j_nondecreasing: true,
            projections: 0,
            diverged: false,
        };
        for _ in 0..self.options.max_iterations.max(1) {
            report.iterations += 1;
            let ens = self.simulate(&u)?;
            let j = eval_j(self.model(), &u, &ens)?.value;
            if !j.is_finite() {
                report.diverged = true;
                report.j_trace.push(j);
                break;
            }
            report.j_trace.push(j);
            let adj = self.adjoint(&u, &ens)?;
            report.residual = self.stationarity_residual(&u, &ens, &adj);
            if report.residual < self.options.tolerance {
                report.converged = true;
                break;
            }
            let up = self.update(&u, &ens, &adj)?;
            report.projections = up.projections;
            u = u.relaxed(&up.control, self.options.relaxation)?;
        }
        let scale = report.j_trace.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        report.j_nondecreasing =
            report.j_trace.windows(2).skip(1).all(|w| w[1] >= w[0] - 1e-12 * scale);
        Ok((u, report))
    }

    /// The three forms of the derivative of the objective at `u` in
    /// `direction`: forward finite difference with step `theta`, the
    /// Hamiltonian form `E Σ Δt ∫ ∂H/∂u·d`, and the derivative-process form
    /// `E[Σ Δt ∫ (f_y Z + f_ȳ Z̄ + f_u d) + ∫ (g_y Z_M + g_ȳ Z̄_M)]`.
    pub fn gradient_check(&self, u: &ControlField, direction: &ControlField, theta: f64) -> Result<GradientReport> {
        let model = self.model();
        let ens = self.simulate(u)?;
        let base = eval_j(model, u, &ens)?.value;
        let bumped = u.perturbed(direction, theta)?;
        let fd = (self.objective(&bumped)?.value - base) / theta;

        let adj = self.adjoint(u, &ens)?;
        let g = &ens.grid;
        let n = g.len();
        let steps = ens.time.steps;
        let dt = ens.time.dt();
        let admissible: Vec<usize> = (0..ens.path_count()).filter(|&k| ens.paths[k].admissible).collect();
        let count = admissible.len() as f64;
        let mut d = vec![0.0; n];
        let mut ham = 0.0;
        let mut norm = 0.0;
        for &k in &admissible {
            for m in 0..steps {
                direction.fill_frame(k, m, &mut d);
                let du = self.dh_du_frame(u, &ens, &adj, k, m);
                let prod: Vec<f64> = du.iter().zip(&d).map(|(a, b)| a * b).collect();
                ham += dt * g.integrate(&prod);
                norm += dt * g.integrate(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
            }
        }
        ham /= count;
        norm /= count;

        let zs = self.forward.solve_derivative(&ens, direction)?;
        let kernel = &self.forward.kernel;
        let mut zform = 0.0;
        let mut uf = vec![0.0; n];
        for &k in &admissible {
            let z = &zs[k];
            for m in 0..steps {
                let zm = &z[m * n..(m + 1) * n];
                let zb = kernel.average(zm);
                direction.fill_frame(k, m, &mut d);
                u.fill_frame(k, m, &mut uf);
                let s: Vec<HamiltonianSlopes> = uf.iter().map(|&v| model.running_slopes(v)).collect();
                let v: Vec<f64> = (0..n).map(|i| s[i].dy * zm[i] + s[i].dybar * zb[i] + s[i].du * d[i]).collect();
                zform += dt * g.integrate(&v);
            }
            let zm = &z[steps * n..];
            let zb = kernel.average(zm);
            let (y, yb) = (ens.y(k, steps), ens.ybar(k, steps));
            let mut v = vec![0.0; n];
            for i in 0..n {
                let (gy, gyb) = model.terminal_slope(g.coords(i), y[i], yb[i])?;
                v[i] = gy * zm[i] + gyb * zb[i];
            }
            zform += g.integrate(&v);
        }
        zform /= count;

        let rel = |a: f64, b: f64| {
            let s = a.abs().max(b.abs());
            if s == 0.0 {
                0.0
            } else {
                (a - b).abs() / s
            }
        };
        Ok(GradientReport {
            theta,
            finite_difference: fd,
            hamiltonian_form: ham,
            derivative_form: zform,
            max_relative_gap: rel(fd, ham).max(rel(fd, zform)).max(rel(ham, zform)),
            direction_norm: norm,
        })
    }

    /// Objective of every constant control in `values` under the common
    /// noise; the argmax.
    pub fn brute_force_constant(&self, values: &[f64]) -> Result<OracleResult> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty value grid".into()));
        }
        let steps = self.forward.time.steps;
        let n = self.forward.grid.len();
        let bounds = self.model().bounds;
        let objectives = values
            .iter()
            .map(|&v| {
                let u = ControlField::uniform(ControlMode::Constant, steps, n, bounds, v)?;
                Ok(self.objective(&u)?.value)
            })
            .collect::<Result<Vec<f64>>>()?;
        let best = (0..values.len()).fold(0, |b, i| if objectives[i] > objectives[b] { i } else { b });
        let unimodal = objectives[..=best].windows(2).all(|w| w[1] >= w[0]) && objectives[best..].windows(2).all(|w| w[1] <= w[0]);
        Ok(OracleResult {
            values: values.to_vec(),
            objectives: objectives.clone(),
            best_value: values[best],
            best_objective: objectives[best],
            unimodal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b() -> ControlBounds {
        ControlBounds { lower: 0.1, upper: 10.0 }
    }

    #[test]
    fn layouts_and_lookup() {
        let c = ControlField::shared(ControlMode::Pointwise, 2, 3, b(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.value(0, 1, 2), 6.0);
        let mut frame = vec![0.0; 3];
        c.fill_frame(7, 0, &mut frame);
        assert_eq!(frame, vec![1.0, 2.0, 3.0]);
        let x = ControlField::shared(ControlMode::XFree, 2, 3, b(), vec![0.5, 0.7]).unwrap();
        assert_eq!(x.value(0, 1, 0), 0.7);
        let k = ControlField::uniform(ControlMode::Constant, 4, 3, b(), 2.0).unwrap();
        assert_eq!(k.value(0, 3, 2), 2.0);
        assert!(ControlField::shared(ControlMode::XFree, 2, 3, b(), vec![0.5]).is_err());
    }

    #[test]
    fn bounds_enforced() {
        assert!(matches!(
            ControlField::uniform(ControlMode::XFree, 2, 3, b(), 20.0),
            Err(Error::ControlOutOfBounds { .. })
        ));
        let c = ControlField::uniform(ControlMode::XFree, 2, 3, b(), 9.0).unwrap();
        let d = ControlField::direction(ControlMode::XFree, 2, 3, vec![1.0, -1.0]).unwrap();
        assert!(c.perturbed(&d, 0.5).is_ok());
        assert!(c.perturbed(&d, 2.0).is_err());
        let target = ControlField::direction(ControlMode::XFree, 2, 3, vec![100.0, 0.0]).unwrap();
        let r = c.relaxed(&target, 0.5).unwrap();
        assert_eq!(r.series(0), &[10.0, 4.5]);
    }

    #[test]
    fn per_path_mixes_with_shared() {
        let s = ControlField::uniform(ControlMode::XFree, 2, 1, b(), 1.0).unwrap();
        let p = ControlField::per_path(ControlMode::XFree, 2, 1, b(), vec![vec![2.0, 2.0], vec![3.0, 5.0]]).unwrap();
        let r = s.relaxed(&p, 0.5).unwrap();
        assert_eq!(r.path_count(), Some(2));
        assert_eq!(r.series(1), &[2.0, 3.0]);
        assert_eq!(s.max_abs_diff(&p).unwrap(), 4.0);
    }
}
