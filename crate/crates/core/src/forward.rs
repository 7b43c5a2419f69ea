//! Semi-implicit time stepping of the forward equation and of the derivative
//! process.
//!
//! Per step, with `Ȳ_m = G(Y_m)` and left-point coefficients:
//!
//! ```text
//! (I − Δt·A) Y_{m+1} = Y_m + Δt·b + σ·ΔB_m + γ_core·ΔÑ_m
//! ```
//!
//! where `ΔÑ_m = Σ_{jumps in step} γ₀(ζ) − Δt·m1`, followed by the Dirichlet
//! data on boundary rows. One factorization serves every step and path.

use std::sync::Arc;

use rayon::prelude::*;

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::grid::{Grid, TimeGrid};
use crate::linalg::BandedLu;
use crate::model::ModelSpec;
use crate::noise::PathBundle;
use crate::operators::EllipticOperator;
use crate::spacemean::BallKernel;

/// Time-independent Dirichlet data `η`.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryData {
    Constant(f64),
    Values(Vec<f64>),
}

impl BoundaryData {
    fn value(&self, node: usize) -> f64 {
        match self {
            BoundaryData::Constant(c) => *c,
            BoundaryData::Values(v) => v[node],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub grid: Arc<Grid>,
    pub time: TimeGrid,
    pub op: EllipticOperator,
    pub kernel: BallKernel,
    pub model: ModelSpec,
    pub initial: Vec<f64>,
    pub boundary: BoundaryData,
    lu: BandedLu,
}

impl ForwardProblem {
    pub fn new(
        op: EllipticOperator,
        kernel: BallKernel,
        time: TimeGrid,
        model: ModelSpec,
        initial: Vec<f64>,
        boundary: BoundaryData,
    ) -> Result<Self> {
        let grid = op.grid().clone();
        if !Arc::ptr_eq(&grid, kernel.grid()) && **kernel.grid() != *grid {
            return Err(Error::GridMismatch);
        }
        if initial.len() != grid.len() {
            return Err(Error::FieldLength { expected: grid.len(), got: initial.len() });
        }
        if let BoundaryData::Values(v) = &boundary {
            if v.len() != grid.len() {
                return Err(Error::FieldLength { expected: grid.len(), got: v.len() });
            }
        }
        model.validate()?;
        let lu = BandedLu::factor(&op.implicit_system(time.dt()))?;
        Ok(Self { grid, time, op, kernel, model, initial, boundary, lu })
    }

    pub fn lu(&self) -> &BandedLu {
        &self.lu
    }

    fn check_control(&self, u: &ControlField) -> Result<()> {
        if u.steps() != self.time.steps || u.nodes() != self.grid.len() {
            return Err(Error::InvalidArgument(format!(
                "control has {} steps on {} nodes, problem has {} steps on {} nodes",
                u.steps(),
                u.nodes(),
                self.time.steps,
                self.grid.len()
            )));
        }
        Ok(())
    }

    fn check_noise(&self, noise: &[PathBundle], control: &ControlField) -> Result<()> {
        if noise.is_empty() {
            return Err(Error::InvalidArgument("need at least one noise path".into()));
        }
        if let Some(b) = noise.iter().find(|b| b.steps() != self.time.steps) {
            return Err(Error::InvalidArgument(format!(
                "noise path {} has {} steps, expected {}",
                b.path,
                b.steps(),
                self.time.steps
            )));
        }
        if let Some(n) = control.path_count() {
            if n != noise.len() {
                return Err(Error::InvalidArgument(format!("{n} control paths for {} noise paths", noise.len())));
            }
        }
        Ok(())
    }

    /// Compensated kernel increments `ΔÑ_m` of one path.
    pub fn jump_increments(&self, bundle: &PathBundle) -> Vec<f64> {
        let m1 = self.model.moments().m1;
        (0..bundle.steps())
            .map(|m| bundle.compensated_kernel_increment(m, &self.model.levy, m1))
            .collect()
    }

    fn solve_path(&self, u: &ControlField, bundle: &PathBundle, index: usize) -> Result<PathState> {
        let g = &self.grid;
        let n = g.len();
        let steps = self.time.steps;
        let dt = self.time.dt();
        let dn = self.jump_increments(bundle);
        let mut y = Vec::with_capacity((steps + 1) * n);
        let mut ybar = Vec::with_capacity((steps + 1) * n);
        y.extend_from_slice(&self.initial);
        ybar.extend(self.kernel.average(&self.initial));
        let mut uf = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let (b, s, j) = (&self.model.drift, &self.model.volatility, &self.model.jump_core);
        for m in 0..steps {
            u.fill_frame(index, m, &mut uf);
            let (cur, cur_bar) = (&y[m * n..(m + 1) * n], &ybar[m * n..(m + 1) * n]);
            for i in 0..n {
                rhs[i] = if g.is_interior(i) {
                    let (yi, ybi, ui) = (cur[i], cur_bar[i], uf[i]);
                    yi + dt * b.eval(yi, ybi, ui) + s.eval(yi, ybi, ui) * bundle.db[m] + j.eval(yi, ybi, ui) * dn[m]
                } else {
                    self.boundary.value(i)
                };
            }
            self.lu.solve(&mut rhs);
            for i in g.boundary_nodes() {
                rhs[i] = self.boundary.value(i);
            }
            if rhs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: m + 1, path: index });
            }
            y.extend_from_slice(&rhs);
            ybar.extend(self.kernel.average(&rhs));
        }
        let admissible = y[steps * n..].iter().all(|&v| self.model.in_state_set(v));
        Ok(PathState { y, ybar, dn, admissible })
    }

    /// Solves every path under `control`; path `i` uses `noise[i]`.
    pub fn solve(&self, control: &ControlField, noise: Arc<Vec<PathBundle>>) -> Result<ForwardEnsemble> {
        self.check_control(control)?;
        self.check_noise(&noise, control)?;
        let paths = noise
            .par_iter()
            .enumerate()
            .map(|(i, b)| self.solve_path(control, b, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardEnsemble { grid: self.grid.clone(), time: self.time, paths, noise })
    }

    /// Derivative process in `direction` around `base` (solved under the same
    /// noise): the linearised scheme with `Z_0 = 0` and `Z = 0` on `∂D`.
    /// Affine coefficients make the partials constant, so `base` only fixes
    /// the noise.
    pub fn solve_derivative(&self, base: &ForwardEnsemble, direction: &ControlField) -> Result<Vec<Vec<f64>>> {
        self.check_control(direction)?;
        let g = &self.grid;
        let n = g.len();
        let steps = self.time.steps;
        let dt = self.time.dt();
        let (b, s, j) = (&self.model.drift, &self.model.volatility, &self.model.jump_core);
        let lin = |a: &crate::model::Affine, z: f64, zb: f64, d: f64| a.cy * z + a.cybar * zb + a.cu * d;
        base.paths
            .par_iter()
            .enumerate()
            .map(|(p, state)| {
                let db = &base.noise[p].db;
                let mut z = vec![0.0; (steps + 1) * n];
                let mut zbar = vec![0.0; n];
                let mut d = vec![0.0; n];
                let mut rhs = vec![0.0; n];
                for m in 0..steps {
                    direction.fill_frame(p, m, &mut d);
                    let cur = &z[m * n..(m + 1) * n];
                    for i in 0..n {
                        rhs[i] = if g.is_interior(i) {
                            cur[i]
                                + dt * lin(b, cur[i], zbar[i], d[i])
                                + lin(s, cur[i], zbar[i], d[i]) * db[m]
                                + lin(j, cur[i], zbar[i], d[i]) * state.dn[m]
                        } else {
                            0.0
                        };
                    }
                    self.lu.solve(&mut rhs);
                    for i in g.boundary_nodes() {
                        rhs[i] = 0.0;
                    }
                    if rhs.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { step: m + 1, path: p });
                    }
                    z[(m + 1) * n..(m + 2) * n].copy_from_slice(&rhs);
                    zbar = self.kernel.average(&rhs);
                }
                Ok(z)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    /// `(M+1)·N` values, time-major.
    pub y: Vec<f64>,
    pub ybar: Vec<f64>,
    /// `ΔÑ_m`, `m = 0..M`.
    pub dn: Vec<f64>,
    /// Terminal state inside `S` at every node.
    pub admissible: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardEnsemble {
    pub grid: Arc<Grid>,
    pub time: TimeGrid,
    pub paths: Vec<PathState>,
    pub noise: Arc<Vec<PathBundle>>,
}

impl ForwardEnsemble {
    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    pub fn y(&self, path: usize, m: usize) -> &[f64] {
        let n = self.grid.len();
        &self.paths[path].y[m * n..(m + 1) * n]
    }

    pub fn ybar(&self, path: usize, m: usize) -> &[f64] {
        let n = self.grid.len();
        &self.paths[path].ybar[m * n..(m + 1) * n]
    }

    pub fn admissible_count(&self) -> usize {
        self.paths.iter().filter(|p| p.admissible).count()
    }

    pub fn rejected(&self) -> Vec<usize> {
        (0..self.paths.len()).filter(|&i| !self.paths[i].admissible).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlMode;
    use crate::model::{Affine, ControlBounds, RunningUtility, TerminalUtility};
    use crate::noise::{sample_paths, JumpKernel, LevyModel, MarkLaw};
    use std::f64::consts::PI;

    fn unit(n: usize) -> Arc<Grid> {
        Arc::new(Grid::interval(0.0, 1.0, n).unwrap())
    }

    fn inert() -> ModelSpec {
        ModelSpec::custom_linear(
            Affine::default(),
            Affine::default(),
            Affine::default(),
            RunningUtility::Quadratic { u1: 0.0, u2: 0.0, y1: 0.0, ybar1: 0.0 },
            TerminalUtility::Quadratic { y1: 1.0, y2: 0.0, ybar1: 0.0 },
            ControlBounds { lower: -10.0, upper: 10.0 },
            LevyModel::none(),
        )
        .unwrap()
    }

    fn problem(g: &Arc<Grid>, op: EllipticOperator, steps: usize, horizon: f64, model: ModelSpec, init: impl Fn(f64) -> f64, eta: f64) -> ForwardProblem {
        let kernel = BallKernel::new(g.clone(), 5.0 * g.h(0)).unwrap();
        let initial = (0..g.len()).map(|i| init(g.coords(i)[0])).collect();
        ForwardProblem::new(op, kernel, TimeGrid::new(horizon, steps).unwrap(), model, initial, BoundaryData::Constant(eta)).unwrap()
    }

    fn noise(steps: usize, horizon: f64, paths: usize, levy: &LevyModel) -> Arc<Vec<PathBundle>> {
        Arc::new(sample_paths(steps, horizon, levy, paths, 9).unwrap())
    }

    fn heat_error(n: usize, steps: usize) -> (f64, f64) {
        let g = unit(n);
        let op = EllipticOperator::laplacian(g.clone(), 0.5).unwrap();
        let pr = problem(&g, op, steps, 0.1, inert(), |x| (PI * x).sin(), 0.0);
        let u = ControlField::uniform(ControlMode::Constant, steps, g.len(), pr.model.bounds, 0.0).unwrap();
        let ens = pr.solve(&u, noise(steps, 0.1, 1, &LevyModel::none())).unwrap();
        let decay = (-PI * PI * 0.1 / 2.0).exp();
        let yt = ens.y(0, steps);
        let amp = yt[n / 2];
        let err = (0..n).map(|i| (yt[i] - decay * (PI * g.coords(i)[0]).sin()).abs()).fold(0.0, f64::max);
        (amp, err)
    }

    #[test]
    fn heat_decay_amplitude() {
        let (amp, _) = heat_error(101, 200);
        assert!((amp - 0.61049).abs() < 0.02 * 0.61049, "amp {amp}");
    }

    #[test]
    fn heat_decay_error_halves() {
        let (_, e1) = heat_error(51, 100);
        let (_, e2) = heat_error(101, 200);
        assert!(e2 <= 0.5 * e1, "errors {e1} {e2}");
    }

    #[test]
    fn inert_dynamics_keep_initial_state() {
        let g = unit(21);
        let pr = problem(&g, EllipticOperator::zero(g.clone()), 30, 1.0, inert(), |x| 1.0 + x * x, 0.0);
        let u = ControlField::uniform(ControlMode::Pointwise, 30, g.len(), pr.model.bounds, 0.3).unwrap();
        let ens = pr.solve(&u, noise(30, 1.0, 2, &LevyModel::none())).unwrap();
        for m in 0..=30 {
            for i in g.interior_nodes() {
                assert_eq!(ens.y(1, m)[i], pr.initial[i]);
            }
        }
    }

    #[test]
    fn growth_matches_scalar_ode_away_from_boundary() {
        // horizon short enough that boundary diffusion has not reached x = 0.5
        let g = unit(101);
        let (alpha, horizon, steps) = (5.0, 0.01, 100);
        let model = ModelSpec::harvest_log(alpha, 0.0, ControlBounds { lower: 1e-3, upper: 10.0 }, LevyModel::none()).unwrap();
        let op = EllipticOperator::laplacian(g.clone(), 0.5).unwrap();
        let kernel = BallKernel::new(g.clone(), 20.0 * g.h(0)).unwrap();
        let pr = ForwardProblem::new(op, kernel, TimeGrid::new(horizon, steps).unwrap(), model, vec![2.0; g.len()], BoundaryData::Constant(0.0)).unwrap();
        let u = ControlField::uniform(ControlMode::Constant, steps, g.len(), pr.model.bounds, 1e-3).unwrap();
        let ens = pr.solve(&u, noise(steps, horizon, 1, &LevyModel::none())).unwrap();
        let exact = 2.0 * (alpha * horizon).exp();
        let got = ens.y(0, steps)[50];
        assert!((got - exact).abs() < 0.03 * (exact - 2.0).max(0.03 * exact), "{got} vs {exact}");
    }

    #[test]
    fn boundary_and_initial_conditions_hold() {
        let g = unit(31);
        let levy = LevyModel {
            intensity: 3.0,
            marks: MarkLaw::Uniform { low: -0.2, high: 0.3 },
            gamma0: JumpKernel::IDENTITY,
        };
        let model = ModelSpec::harvest_log(0.5, 0.4, ControlBounds { lower: 0.01, upper: 5.0 }, levy.clone()).unwrap();
        let pr = problem(&g, EllipticOperator::laplacian(g.clone(), 0.5).unwrap(), 40, 1.0, model, |_| 1.0, 0.7);
        let u = ControlField::uniform(ControlMode::XFree, 40, g.len(), pr.model.bounds, 0.2).unwrap();
        let ens = pr.solve(&u, noise(40, 1.0, 20, &levy)).unwrap();
        for p in 0..20 {
            assert_eq!(ens.y(p, 0), &pr.initial[..]);
            for m in 1..=40 {
                for i in g.boundary_nodes() {
                    assert_eq!(ens.y(p, m)[i], 0.7);
                }
            }
        }
        // noise makes paths differ
        assert_ne!(ens.y(0, 40), ens.y(1, 40));
    }

    #[test]
    fn zero_noise_paths_coincide() {
        let g = unit(21);
        let model = ModelSpec::harvest_log(0.5, 0.0, ControlBounds { lower: 0.01, upper: 5.0 }, LevyModel::none()).unwrap();
        let pr = problem(&g, EllipticOperator::laplacian(g.clone(), 0.5).unwrap(), 20, 1.0, model, |_| 1.0, 1.0);
        let u = ControlField::uniform(ControlMode::Pointwise, 20, g.len(), pr.model.bounds, 0.3).unwrap();
        let ens = pr.solve(&u, noise(20, 1.0, 5, &LevyModel::none())).unwrap();
        for p in 1..5 {
            assert_eq!(ens.paths[p].y, ens.paths[0].y);
        }
    }

    #[test]
    fn rejected_paths_flagged() {
        let g = unit(11);
        let model = ModelSpec::harvest_log(0.0, 0.0, ControlBounds { lower: 0.01, upper: 5.0 }, LevyModel::none()).unwrap();
        let pr = problem(&g, EllipticOperator::zero(g.clone()), 10, 1.0, model, |_| 1.0, 1.0);
        let u = ControlField::uniform(ControlMode::Constant, 10, g.len(), pr.model.bounds, 2.0).unwrap();
        let ens = pr.solve(&u, noise(10, 1.0, 3, &LevyModel::none())).unwrap();
        assert_eq!(ens.admissible_count(), 0);
        assert_eq!(ens.rejected(), vec![0, 1, 2]);
    }

    #[test]
    fn derivative_process_oracles() {
        let g = unit(21);
        let steps = 40;
        // harvest dynamics with α-coupling off and A = 0: dZ/dt = −1
        let model = ModelSpec::harvest_log(0.0, 0.0, ControlBounds { lower: 0.01, upper: 5.0 }, LevyModel::none()).unwrap();
        let pr = problem(&g, EllipticOperator::zero(g.clone()), steps, 1.0, model, |_| 3.0, 3.0);
        let u = ControlField::uniform(ControlMode::Pointwise, steps, g.len(), pr.model.bounds, 1.0).unwrap();
        let ens = pr.solve(&u, noise(steps, 1.0, 1, &LevyModel::none())).unwrap();
        let dir = ControlField::direction(ControlMode::Constant, steps, g.len(), vec![1.0]).unwrap();
        let z = pr.solve_derivative(&ens, &dir).unwrap();
        let n = g.len();
        for m in 0..=steps {
            let t = pr.time.time(m);
            for i in g.interior_nodes() {
                assert!((z[0][m * n + i] + t).abs() < 2.0 / steps as f64);
            }
        }
        let zero = ControlField::direction(ControlMode::Constant, steps, g.len(), vec![0.0]).unwrap();
        assert!(pr.solve_derivative(&ens, &zero).unwrap()[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn derivative_matches_finite_difference_and_is_linear() {
        let g = unit(41);
        let steps = 50;
        let model = ModelSpec::harvest_log(0.9, 0.0, ControlBounds { lower: 0.01, upper: 5.0 }, LevyModel::none()).unwrap();
        let pr = problem(&g, EllipticOperator::laplacian(g.clone(), 0.5).unwrap(), steps, 1.0, model, |_| 2.0, 1.0);
        let n = g.len();
        let base_vals: Vec<f64> = (0..steps * n).map(|k| 0.5 + 0.2 * ((k % n) as f64 / n as f64)).collect();
        let u = ControlField::shared(ControlMode::Pointwise, steps, n, pr.model.bounds, base_vals).unwrap();
        let nz = noise(steps, 1.0, 1, &LevyModel::none());
        let ens = pr.solve(&u, nz.clone()).unwrap();
        let d1: Vec<f64> = (0..steps * n).map(|k| (PI * g.coords(k % n)[0]).sin()).collect();
        let d2: Vec<f64> = (0..steps * n).map(|k| ((k / n) as f64 / steps as f64) - 0.3).collect();
        let dir1 = ControlField::direction(ControlMode::Pointwise, steps, n, d1.clone()).unwrap();
        let dir2 = ControlField::direction(ControlMode::Pointwise, steps, n, d2.clone()).unwrap();
        let z1 = pr.solve_derivative(&ens, &dir1).unwrap();

        let theta = 1e-3;
        let shifted = pr.solve(&u.perturbed(&dir1, theta).unwrap(), nz).unwrap();
        let fd: Vec<f64> = shifted.paths[0].y.iter().zip(&ens.paths[0].y).map(|(a, b)| (a - b) / theta).collect();
        let scale = z1[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = fd.iter().zip(&z1[0]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-8 * scale.max(1.0), "gap {gap}");

        let combo: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let z2 = pr.solve_derivative(&ens, &dir2).unwrap();
        let zc = pr.solve_derivative(&ens, &ControlField::direction(ControlMode::Pointwise, steps, n, combo).unwrap()).unwrap();
        for k in 0..zc[0].len() {
            assert!((zc[0][k] - (2.0 * z1[0][k] - 0.5 * z2[0][k])).abs() < 1e-12);
        }
    }
}
