//! The adjoint backward equation.
//!
//! The sweep is the exact discrete adjoint of the forward scheme: with
//! `L* = I − Δt·A*` (identity rows on `∂D`),
//!
//! ```text
//! p_M = terminal
//! z_m = L*⁻¹ (p_{m+1} + Δt·F_{m+1})        (driver term only for m + 1 < M)
//! p_m = E_m[z_m],  q_m = E_m[z_m ΔB_m]/Δt,  c_r,m = E_m[z_m ΔÑ_m]/(Δt·m2)
//! ```
//!
//! so that `Δt·∂H/∂u(p_m, q_m, c_r,m)` weighted by the quadrature is the
//! gradient of the discrete objective in `u_m`. Conditional expectations are
//! either the identity (pathwise, zero-noise regime) or per-node least-squares
//! regressions on `(Y_m, Ȳ_m)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::forward::ForwardEnsemble;
use crate::grid::{Grid, TimeGrid};
use crate::linalg::BandedLu;
use crate::model::{HamiltonianInputs, ModelSpec};
use crate::operators::EllipticOperator;
use crate::spacemean::{BallKernel, DualMode};

/// Arguments of a driver at one time level of one path. Barred slices are the
/// ball averages of the unbarred ones.
pub struct DriverArgs<'a> {
    pub t: f64,
    pub y: &'a [f64],
    pub ybar: &'a [f64],
    pub u: &'a [f64],
    pub p: &'a [f64],
    pub pbar: &'a [f64],
    pub q: &'a [f64],
    pub qbar: &'a [f64],
    pub cr: &'a [f64],
    pub crbar: &'a [f64],
}

/// Which adjoint components a driver reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependence {
    pub p: bool,
    pub q: bool,
    pub r: bool,
}

impl Dependence {
    pub fn any(&self) -> bool {
        self.p || self.q || self.r
    }
}

pub trait Driver: Sync {
    fn dependence(&self) -> Dependence;
    fn eval(&self, args: &DriverArgs, out: &mut [f64]);
}

/// `∂H/∂y + ∇̄*(∂H/∂ȳ)`.
pub struct HamiltonianDriver<'a> {
    pub model: &'a ModelSpec,
    pub kernel: &'a BallKernel,
    pub mode: DualMode,
}

impl Driver for HamiltonianDriver<'_> {
    fn dependence(&self) -> Dependence {
        let m = self.model;
        let touches = |a: &crate::model::Affine| a.cy != 0.0 || a.cybar != 0.0;
        Dependence {
            p: touches(&m.drift),
            q: touches(&m.volatility),
            r: touches(&m.jump_core) && m.moments().m2 != 0.0,
        }
    }

    fn eval(&self, a: &DriverArgs, out: &mut [f64]) {
        let m2 = self.model.moments().m2;
        let n = out.len();
        let mut slope_bar = vec![0.0; n];
        for i in 0..n {
            let s = self.model.slopes_unchecked(
                m2,
                &HamiltonianInputs { y: a.y[i], ybar: a.ybar[i], u: a.u[i], p: a.p[i], q: a.q[i], cr: a.cr[i] },
            );
            out[i] = s.dy;
            slope_bar[i] = s.dybar;
        }
        let dual = self.kernel.averaged_dual_values(&slope_bar, self.mode);
        for (o, d) in out.iter_mut().zip(dual) {
            *o += d;
        }
    }
}

/// `a_p p + a_p̄ p̄ + a_q q + a_q̄ q̄ + a_r c_r + a_r̄ c̄_r + source`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearDriver {
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub pbar: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default)]
    pub qbar: f64,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub rbar: f64,
    #[serde(default)]
    pub source: f64,
}

impl Driver for LinearDriver {
    fn dependence(&self) -> Dependence {
        Dependence {
            p: self.p != 0.0 || self.pbar != 0.0,
            q: self.q != 0.0 || self.qbar != 0.0,
            r: self.r != 0.0 || self.rbar != 0.0,
        }
    }

    fn eval(&self, a: &DriverArgs, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.p * a.p[i]
                + self.pbar * a.pbar[i]
                + self.q * a.q[i]
                + self.qbar * a.qbar[i]
                + self.r * a.cr[i]
                + self.rbar * a.crbar[i]
                + self.source;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// `E_m` is the identity; `q = c_r = 0`.
    Pathwise,
    /// Per-node regression on `{1, Y, Ȳ, Y², YȲ, Ȳ²}`.
    Regression,
}

/// Adjoint triple on every path, `(M+1)·N` values per path, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointEnsemble {
    pub grid: Arc<Grid>,
    pub time: TimeGrid,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub cr: Vec<Vec<f64>>,
    pub regression: RegressionStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegressionStats {
    pub fits: usize,
    /// Fits with no usable feature, answered by the ensemble mean.
    pub mean_fallbacks: usize,
}

impl AdjointEnsemble {
    fn zeros(grid: Arc<Grid>, time: TimeGrid, paths: usize) -> Self {
        let len = (time.steps + 1) * grid.len();
        Self {
            grid,
            time,
            p: vec![vec![0.0; len]; paths],
            q: vec![vec![0.0; len]; paths],
            cr: vec![vec![0.0; len]; paths],
            regression: RegressionStats::default(),
        }
    }

    pub fn path_count(&self) -> usize {
        self.p.len()
    }

    fn slice(v: &[f64], n: usize, m: usize) -> &[f64] {
        &v[m * n..(m + 1) * n]
    }

    pub fn p(&self, path: usize, m: usize) -> &[f64] {
        Self::slice(&self.p[path], self.grid.len(), m)
    }

    pub fn q(&self, path: usize, m: usize) -> &[f64] {
        Self::slice(&self.q[path], self.grid.len(), m)
    }

    pub fn cr(&self, path: usize, m: usize) -> &[f64] {
        Self::slice(&self.cr[path], self.grid.len(), m)
    }

    fn rms_distance(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let n = self.grid.len();
        let steps = self.time.steps;
        let dt = self.time.dt();
        let total: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                (0..=steps)
                    .map(|m| {
                        let w = if m == 0 || m == steps { 0.5 * dt } else { dt };
                        let d: Vec<f64> = x[m * n..(m + 1) * n].iter().zip(&y[m * n..(m + 1) * n]).map(|(u, v)| u - v).collect();
                        w * self.grid.dot(&d, &d)
                    })
                    .sum::<f64>()
            })
            .sum();
        (total / a.len() as f64).sqrt()
    }

    /// Time-integrated H-norm distances `(dp, dq, dr)`, root-mean-square over
    /// paths.
    pub fn distance(&self, other: &AdjointEnsemble) -> (f64, f64, f64) {
        (
            self.rms_distance(&self.p, &other.p),
            self.rms_distance(&self.q, &other.q),
            self.rms_distance(&self.cr, &other.cr),
        )
    }
}

pub struct BackwardProblem {
    pub grid: Arc<Grid>,
    pub time: TimeGrid,
    pub adjoint_op: EllipticOperator,
    pub kernel: BallKernel,
    pub mode: DualMode,
    /// `∫γ₀² dν`, scaling of the jump component; `c_r` is only estimated
    /// when it is nonzero.
    pub m2: f64,
    /// Whether `q` is estimated; off for models without a Brownian channel.
    pub brownian: bool,
    lu: BandedLu,
}

/// Where the driver reads its adjoint arguments.
#[derive(Clone, Copy)]
pub enum Source<'a> {
    /// Values already computed at `m + 1` in the current sweep.
    Current,
    /// Previous iterates: `p` from the first, `(q, c_r)` from the second.
    Frozen(&'a AdjointEnsemble, &'a AdjointEnsemble),
}

/// Forward states and controls read by the driver and the regression.
#[derive(Clone, Copy)]
pub struct BackwardInput<'a> {
    pub ensemble: Option<&'a ForwardEnsemble>,
    pub control: Option<&'a ControlField>,
}

impl BackwardInput<'_> {
    pub fn none() -> Self {
        Self { ensemble: None, control: None }
    }
}

impl BackwardProblem {
    pub fn new(adjoint_op: EllipticOperator, kernel: BallKernel, time: TimeGrid, mode: DualMode, m2: f64) -> Result<Self> {
        let grid = adjoint_op.grid().clone();
        if **kernel.grid() != *grid {
            return Err(Error::GridMismatch);
        }
        let lu = BandedLu::factor(&adjoint_op.implicit_system(time.dt()))?;
        Ok(Self { grid, time, adjoint_op, kernel, mode, m2, brownian: true, lu })
    }

    /// Noise channels taken from `model`.
    pub fn for_model(adjoint_op: EllipticOperator, kernel: BallKernel, time: TimeGrid, mode: DualMode, model: &ModelSpec) -> Result<Self> {
        let mut bp = Self::new(adjoint_op, kernel, time, mode, model.moments().m2)?;
        bp.brownian = !model.volatility.is_zero();
        Ok(bp)
    }

    fn paths(&self, input: &BackwardInput, terminal: &[Vec<f64>]) -> Result<usize> {
        let n = self.grid.len();
        if let Some(t) = terminal.iter().find(|t| t.len() != n) {
            return Err(Error::FieldLength { expected: n, got: t.len() });
        }
        let paths = match input.ensemble {
            Some(e) => {
                if e.time != self.time || *e.grid != *self.grid {
                    return Err(Error::InvalidArgument("forward ensemble does not match the backward grids".into()));
                }
                e.path_count()
            }
            None => terminal.len(),
        };
        if terminal.len() != 1 && terminal.len() != paths {
            return Err(Error::InvalidArgument(format!("{} terminal fields for {paths} paths", terminal.len())));
        }
        if let Some(c) = input.control {
            if c.steps() != self.time.steps || c.nodes() != n {
                return Err(Error::InvalidArgument("control does not match the backward grids".into()));
            }
        }
        Ok(paths)
    }

    /// One backward sweep.
    pub fn sweep(
        &self,
        input: BackwardInput,
        terminal: &[Vec<f64>],
        driver: &dyn Driver,
        source: Source,
        estimator: Estimator,
    ) -> Result<AdjointEnsemble> {
        let paths = self.paths(&input, terminal)?;
        let g = &self.grid;
        let n = g.len();
        let steps = self.time.steps;
        let dt = self.time.dt();
        let mut out = AdjointEnsemble::zeros(g.clone(), self.time, paths);
        for (k, p) in out.p.iter_mut().enumerate() {
            let t = if terminal.len() == 1 { &terminal[0] } else { &terminal[k] };
            p[steps * n..].copy_from_slice(t);
        }
        let zeros = vec![0.0; n];
        for m in (0..steps).rev() {
            let next = m + 1;
            let zs: Vec<Vec<f64>> = (0..paths)
                .into_par_iter()
                .map(|k| {
                    let mut phi = AdjointEnsemble::slice(&out.p[k], n, next).to_vec();
                    if next < steps {
                        let (ps, qs) = match source {
                            Source::Current => (&out, &out),
                            Source::Frozen(a, b) => (a, b),
                        };
                        let p = ps.p(k, next);
                        let q = qs.q(k, next);
                        let cr = qs.cr(k, next);
                        let (y, ybar) = match input.ensemble {
                            Some(e) => (e.y(k, next), e.ybar(k, next)),
                            None => (&zeros[..], &zeros[..]),
                        };
                        let mut u = vec![0.0; n];
                        if let Some(c) = input.control {
                            c.fill_frame(k, next, &mut u);
                        }
                        let args = DriverArgs {
                            t: self.time.time(next),
                            y,
                            ybar,
                            u: &u,
                            p,
                            pbar: &self.kernel.average(p),
                            q,
                            qbar: &self.kernel.average(q),
                            cr,
                            crbar: &self.kernel.average(cr),
                        };
                        let mut f = vec![0.0; n];
                        driver.eval(&args, &mut f);
                        for (a, b) in phi.iter_mut().zip(&f) {
                            *a += dt * b;
                        }
                    }
                    for i in g.boundary_nodes() {
                        phi[i] = 0.0;
                    }
                    self.lu.solve(&mut phi);
                    for i in g.boundary_nodes() {
                        phi[i] = 0.0;
                    }
                    if phi.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { step: m, path: k });
                    }
                    Ok(phi)
                })
                .collect::<Result<_>>()?;

            match estimator {
                Estimator::Pathwise => {
                    for (k, z) in zs.iter().enumerate() {
                        out.p[k][m * n..(m + 1) * n].copy_from_slice(z);
                    }
                }
                Estimator::Regression => {
                    let e = input.ensemble.ok_or_else(|| {
                        Error::InvalidArgument("regression estimator needs a forward ensemble".into())
                    })?;
                    self.regress_step(e, m, &zs, &mut out)?;
                }
            }
        }
        Ok(out)
    }

    fn regress_step(&self, e: &ForwardEnsemble, m: usize, zs: &[Vec<f64>], out: &mut AdjointEnsemble) -> Result<()> {
        let g = &self.grid;
        let n = g.len();
        let dt = self.time.dt();
        let keep: Vec<usize> = (0..zs.len()).filter(|&k| e.paths[k].admissible).collect();
        if keep.is_empty() {
            return Err(Error::AllPathsRejected(zs.len()));
        }
        let with_jumps = self.m2 != 0.0;
        // per node: fitted (p, q, c_r) on every path, plus whether it fell back
        let fitted: Vec<(Vec<[f64; 3]>, bool)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if !g.is_interior(i) {
                    return (vec![[0.0; 3]; zs.len()], false);
                }
                let feats = |k: usize| features(e.y(k, m)[i], e.ybar(k, m)[i]);
                let fit = LeastSquares::fit(keep.iter().map(|&k| feats(k)));
                let targets: [Vec<f64>; 3] = [
                    keep.iter().map(|&k| zs[k][i]).collect(),
                    if self.brownian { keep.iter().map(|&k| zs[k][i] * e.noise[k].db[m]).collect() } else { Vec::new() },
                    if with_jumps { keep.iter().map(|&k| zs[k][i] * e.paths[k].dn[m]).collect() } else { Vec::new() },
                ];
                let coefs: Vec<Option<(f64, Vec<f64>)>> = targets
                    .iter()
                    .map(|t| if t.is_empty() { None } else { Some(fit.solve(keep.iter().map(|&k| feats(k)), t)) })
                    .collect();
                let vals = (0..zs.len())
                    .map(|k| {
                        let x = feats(k);
                        let mut v = [0.0; 3];
                        for (j, c) in coefs.iter().enumerate() {
                            if let Some(c) = c {
                                v[j] = fit.predict(c, &x);
                            }
                        }
                        v[1] /= dt;
                        if with_jumps {
                            v[2] /= dt * self.m2;
                        }
                        v
                    })
                    .collect();
                (vals, fit.kept.is_empty())
            })
            .collect();
        for (i, (vals, fallback)) in fitted.iter().enumerate() {
            if g.is_interior(i) {
                out.regression.fits += 1;
                if *fallback {
                    out.regression.mean_fallbacks += 1;
                }
            }
            for (k, v) in vals.iter().enumerate() {
                out.p[k][m * n + i] = v[0];
                out.q[k][m * n + i] = v[1];
                out.cr[k][m * n + i] = v[2];
            }
        }
        Ok(())
    }

    /// Explicit solve with the driver reading the current sweep.
    pub fn solve(&self, input: BackwardInput, terminal: &[Vec<f64>], driver: &dyn Driver, estimator: Estimator) -> Result<AdjointEnsemble> {
        self.sweep(input, terminal, driver, Source::Current, estimator)
    }

    /// Two-level Picard iteration: the outer level freezes `p`, the inner
    /// level iterates `(q, c_r)`, each pass being a linear solve with a
    /// known source.
    pub fn picard(
        &self,
        input: BackwardInput,
        terminal: &[Vec<f64>],
        driver: &dyn Driver,
        estimator: Estimator,
        options: &PicardOptions,
    ) -> Result<PicardOutcome> {
        let paths = self.paths(&input, terminal)?;
        let n = self.grid.len();
        let steps = self.time.steps;
        let dep = driver.dependence();
        let mut prev = AdjointEnsemble::zeros(self.grid.clone(), self.time, paths);
        if options.start == PicardStart::Terminal {
            for (k, p) in prev.p.iter_mut().enumerate() {
                let t = if terminal.len() == 1 { &terminal[0] } else { &terminal[k] };
                for m in 0..=steps {
                    p[m * n..(m + 1) * n].copy_from_slice(t);
                }
            }
        }
        let mut trace = PicardTrace::default();
        let mut converged = false;
        let mut last_d: Option<f64> = None;
        for it in 1..=options.max_iterations.max(1) {
            let mut qr = prev.clone();
            let mut candidate;
            let mut inner = 0;
            loop {
                inner += 1;
                candidate = self.sweep(input, terminal, driver, Source::Frozen(&prev, &qr), estimator)?;
                if !(dep.q || dep.r) || inner >= options.max_inner.max(1) {
                    break;
                }
                let (_, dq, dr) = candidate.distance(&qr);
                qr = candidate.clone();
                if (dq * dq + dr * dr).sqrt() < options.tolerance {
                    break;
                }
            }
            let (dp, dq, dr) = candidate.distance(&prev);
            let d = (dp * dp + dq * dq + dr * dr).sqrt();
            let ratio = last_d.filter(|&l| l > 0.0).map(|l| d / l);
            trace.entries.push(PicardEntry { iteration: it, dp, dq, dr, ratio, inner_iterations: inner });
            last_d = Some(d);
            prev = candidate;
            if !d.is_finite() {
                return Err(Error::Diverged(it));
            }
            // a driver that reads no adjoint argument is solved by one pass
            if !dep.any() || d < options.tolerance {
                converged = true;
                break;
            }
        }
        Ok(PicardOutcome { iterations: trace.entries.len(), adjoint: prev, trace, converged })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PicardStart {
    Zero,
    /// Terminal value held constant in time.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub max_iterations: usize,
    pub max_inner: usize,
    pub tolerance: f64,
    pub start: PicardStart,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { max_iterations: 50, max_inner: 50, tolerance: 1e-10, start: PicardStart::Zero }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardEntry {
    pub iteration: usize,
    pub dp: f64,
    pub dq: f64,
    pub dr: f64,
    /// `d_n / d_{n−1}` with `d = sqrt(dp² + dq² + dr²)`.
    pub ratio: Option<f64>,
    pub inner_iterations: usize,
}

impl PicardEntry {
    pub fn total(&self) -> f64 {
        (self.dp * self.dp + self.dq * self.dq + self.dr * self.dr).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardTrace {
    pub entries: Vec<PicardEntry>,
}

impl PicardTrace {
    /// Least-squares slope of `ln d_n` against `n` over the entries with a
    /// positive difference.
    pub fn log_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .entries
            .iter()
            .filter(|e| e.total() > 0.0)
            .map(|e| (e.iteration as f64, e.total().ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub adjoint: AdjointEnsemble,
    pub trace: PicardTrace,
    pub iterations: usize,
    pub converged: bool,
}

/// Terminal adjoint `∂g/∂y + ∇̄*(∂g/∂ȳ)` on every path. Rejected paths get a
/// zero terminal; they are excluded from every fit and from the objective.
pub fn terminal_adjoint(model: &ModelSpec, kernel: &BallKernel, mode: DualMode, ensemble: &ForwardEnsemble) -> Result<Vec<Vec<f64>>> {
    let g = &ensemble.grid;
    let steps = ensemble.time.steps;
    (0..ensemble.path_count())
        .map(|k| {
            if !ensemble.paths[k].admissible {
                return Ok(vec![0.0; g.len()]);
            }
            let (y, ybar) = (ensemble.y(k, steps), ensemble.ybar(k, steps));
            let mut dy = vec![0.0; g.len()];
            let mut dybar = vec![0.0; g.len()];
            for i in 0..g.len() {
                let (a, b) = model.terminal_slope(g.coords(i), y[i], ybar[i])?;
                dy[i] = a;
                dybar[i] = b;
            }
            let dual = kernel.averaged_dual_values(&dybar, mode);
            Ok(dy.iter().zip(dual).map(|(a, b)| a + b).collect())
        })
        .collect()
}

fn features(y: f64, ybar: f64) -> [f64; 5] {
    [y, ybar, y * y, y * ybar, ybar * ybar]
}

/// Least squares on standardized features with an eigenvalue-truncated
/// pseudo-inverse. Constant features are dropped; with none left the fit is
/// the sample mean.
struct LeastSquares {
    kept: Vec<usize>,
    mean: [f64; 5],
    scale: [f64; 5],
    pinv: DMatrix<f64>,
}

impl LeastSquares {
    fn fit(rows: impl Iterator<Item = [f64; 5]> + Clone) -> Self {
        let count = rows.clone().count() as f64;
        let mut mean = [0.0; 5];
        for r in rows.clone() {
            for j in 0..5 {
                mean[j] += r[j];
            }
        }
        for v in mean.iter_mut() {
            *v /= count;
        }
        let mut var = [0.0; 5];
        for r in rows.clone() {
            for j in 0..5 {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let mut scale = [1.0; 5];
        let mut kept = Vec::new();
        for j in 0..5 {
            let sd = (var[j] / count).sqrt();
            if sd > 1e-12 * (1.0 + mean[j].abs()) {
                scale[j] = sd;
                kept.push(j);
            }
        }
        let k = kept.len();
        let mut gram = DMatrix::<f64>::zeros(k, k);
        for r in rows {
            let x: Vec<f64> = kept.iter().map(|&j| (r[j] - mean[j]) / scale[j]).collect();
            for a in 0..k {
                for b in 0..k {
                    gram[(a, b)] += x[a] * x[b];
                }
            }
        }
        let pinv = if k == 0 {
            gram
        } else {
            let eig = SymmetricEigen::new(gram);
            let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let inv = DVector::from_iterator(
                k,
                eig.eigenvalues.iter().map(|&l| if l > 1e-10 * top { 1.0 / l } else { 0.0 }),
            );
            &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
        };
        Self { kept, mean, scale, pinv }
    }

    /// `(intercept, coefficients)` for one target.
    fn solve(&self, rows: impl Iterator<Item = [f64; 5]>, target: &[f64]) -> (f64, Vec<f64>) {
        let tmean = target.iter().sum::<f64>() / target.len() as f64;
        let k = self.kept.len();
        if k == 0 {
            return (tmean, Vec::new());
        }
        let mut rhs = DVector::<f64>::zeros(k);
        for (r, &t) in rows.zip(target) {
            for (a, &j) in self.kept.iter().enumerate() {
                rhs[a] += (r[j] - self.mean[j]) / self.scale[j] * (t - tmean);
            }
        }
        (tmean, (&self.pinv * rhs).iter().copied().collect())
    }

    fn predict(&self, c: &(f64, Vec<f64>), x: &[f64; 5]) -> f64 {
        c.0 + self
            .kept
            .iter()
            .zip(&c.1)
            .map(|(&j, b)| b * (x[j] - self.mean[j]) / self.scale[j])
            .sum::<f64>()
    }
}
