//! Core objects built from a [`RunConfig`].

use std::sync::Arc;

use spacemean_core::backward::{BackwardProblem, Estimator};
use spacemean_core::control::{ControlField, ControlMode, ControlProblem, OptimizerOptions};
use spacemean_core::forward::{BoundaryData, ForwardProblem};
use spacemean_core::model::{Affine, ControlBounds, ModelSpec, RunningUtility, TerminalUtility};
use spacemean_core::noise::{sample_paths, JumpKernel, LevyModel, MarkLaw, PathBundle};
use spacemean_core::{
    BallKernel, DomainSpec, EllipticOperator, Grid, OperatorCoefficients, Poly2, Result, TimeGrid,
};

use crate::config::{AffineConfig, MarksConfig, Preset, RunConfig};

pub struct Setup {
    pub config: RunConfig,
    pub grid: Arc<Grid>,
    pub time: TimeGrid,
    pub forward: ForwardProblem,
    pub backward: BackwardProblem,
    pub estimator: Estimator,
}

fn affine(a: &AffineConfig) -> Affine {
    Affine { c0: a.c0, cy: a.cy, cybar: a.cybar, cu: a.cu }
}

pub fn levy(config: &RunConfig) -> LevyModel {
    let n = &config.noise;
    LevyModel {
        intensity: n.intensity,
        marks: match n.marks {
            MarksConfig::TwoPoint { values, probs } => MarkLaw::TwoPoint { values, probs },
            MarksConfig::Uniform { low, high } => MarkLaw::Uniform { low, high },
        },
        gamma0: JumpKernel { offset: n.gamma0[0], slope: n.gamma0[1] },
    }
}

pub fn model(config: &RunConfig) -> Result<ModelSpec> {
    let m = &config.model;
    let bounds = ControlBounds { lower: m.u_min, upper: m.u_max };
    let levy = levy(config);
    match m.preset {
        Preset::HarvestLog => ModelSpec::harvest_log(m.alpha, m.beta, bounds, levy),
        Preset::HarvestPower => {
            let mu = Poly2::in_x(m.mu[0], m.mu[1], m.mu[2]);
            ModelSpec::harvest_power(m.alpha, m.beta, m.rho, mu, bounds, levy)
        }
        Preset::Custom => {
            let c = m.custom.expect("checked at parse time");
            let [u1, u2, y1, ybar1] = c.running;
            let [ty1, ty2, tybar1] = c.terminal;
            ModelSpec::custom_linear(
                affine(&c.drift),
                affine(&c.volatility),
                affine(&c.jump),
                RunningUtility::Quadratic { u1, u2, y1, ybar1 },
                TerminalUtility::Quadratic { y1: ty1, y2: ty2, ybar1: tybar1 },
                bounds,
                levy,
            )
        }
    }
}

pub fn operator(config: &RunConfig, grid: Arc<Grid>) -> Result<EllipticOperator> {
    let o = &config.operator;
    if o.advection.iter().all(|&v| v == 0.0) {
        return EllipticOperator::laplacian(grid, o.diffusion);
    }
    if grid.dim() != 1 {
        return Err(spacemean_core::Error::InvalidArgument("operator.advection is only supported in one dimension".into()));
    }
    let [a, b, c] = o.advection;
    let co = OperatorCoefficients::one_d(Poly2::constant(o.diffusion), Poly2::in_x(a, b, c));
    EllipticOperator::assemble(grid, co)
}

/// Everything that does not involve sampling. Failures here are
/// configuration errors.
pub fn build(config: &RunConfig) -> Result<Setup> {
    let g = &config.grid;
    let grid = Arc::new(Grid::new(&DomainSpec { lower: g.lower.clone(), upper: g.upper.clone() }, &g.resolution)?);
    let time = TimeGrid::new(config.time.horizon, config.time.steps)?;
    let model = model(config)?;
    let op = operator(config, grid.clone())?;
    let kernel = BallKernel::new(grid.clone(), config.model.theta)?;
    let backward = BackwardProblem::for_model(op.transposed(), kernel.clone(), time, config.solver.dual_mode, &model)?;
    let estimator = config.solver.estimator.unwrap_or(if backward.brownian || backward.m2 != 0.0 {
        Estimator::Regression
    } else {
        Estimator::Pathwise
    });
    let initial = vec![config.state.initial; grid.len()];
    let forward = ForwardProblem::new(op, kernel, time, model, initial, BoundaryData::Constant(config.state.boundary))?;
    // fail early on a control outside U
    ControlField::uniform(config.solver.control_mode, time.steps, grid.len(), forward.model.bounds, config.solver.initial_control)?;
    Ok(Setup { config: config.clone(), grid, time, forward, backward, estimator })
}

impl Setup {
    pub fn noise(&self) -> Result<Arc<Vec<PathBundle>>> {
        let n = &self.config.noise;
        Ok(Arc::new(sample_paths(self.time.steps, self.time.horizon, &self.forward.model.levy, n.paths, n.seed)?))
    }

    pub fn initial_control(&self) -> Result<ControlField> {
        self.uniform_control(self.config.solver.control_mode, self.config.solver.initial_control)
    }

    pub fn uniform_control(&self, mode: ControlMode, value: f64) -> Result<ControlField> {
        ControlField::uniform(mode, self.time.steps, self.grid.len(), self.forward.model.bounds, value)
    }

    pub fn problem(&self, noise: Arc<Vec<PathBundle>>) -> ControlProblem<'_> {
        let s = &self.config.solver;
        ControlProblem {
            forward: &self.forward,
            backward: &self.backward,
            noise,
            estimator: self.estimator,
            options: OptimizerOptions {
                max_iterations: s.max_iterations,
                tolerance: s.tolerance,
                relaxation: s.relaxation,
                gradient_step: s.gradient_step,
            },
        }
    }
}
