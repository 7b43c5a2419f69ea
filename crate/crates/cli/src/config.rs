//! Run configuration: one TOML document, unknown keys rejected.

use serde::{Deserialize, Serialize};
use spacemean_core::backward::{Estimator, LinearDriver, PicardStart};
use spacemean_core::control::ControlMode;
use spacemean_core::DualMode;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub operator: OperatorConfig,
    pub state: StateConfig,
    pub noise: NoiseConfig,
    pub solver: SolverConfig,
    pub picard: PicardConfig,
    pub gradcheck: GradcheckConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    HarvestLog,
    HarvestPower,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Growth rate on `Ȳ`.
    pub alpha: f64,
    /// Volatility on `Ȳ`.
    pub beta: f64,
    /// Power-utility exponent.
    pub rho: f64,
    /// Terminal weight `μ(x) = μ0 + μ1 x + μ2 x²` of the power preset.
    pub mu: [f64; 3],
    /// Averaging radius.
    pub theta: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub custom: Option<CustomModelConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: Preset::HarvestLog,
            alpha: 0.5,
            beta: 0.0,
            rho: 0.5,
            mu: [1.0, 0.0, 0.0],
            theta: 0.25,
            u_min: 0.01,
            u_max: 1000.0,
            custom: None,
        }
    }
}

/// `c0 + cy·y + cybar·ȳ + cu·u`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineConfig {
    pub c0: f64,
    pub cy: f64,
    pub cybar: f64,
    pub cu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomModelConfig {
    pub drift: AffineConfig,
    pub volatility: AffineConfig,
    pub jump: AffineConfig,
    /// `f = u1·u + u2·u² + y1·y + ybar1·ȳ`.
    pub running: [f64; 4],
    /// `g = y1·y + y2·y² + ybar1·ȳ`.
    pub terminal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lower: vec![0.0], upper: vec![1.0], resolution: vec![21] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    /// `A = diffusion·Δ + β(x)·∂x`.
    pub diffusion: f64,
    /// `β(x) = a + b x + c x²`, one-dimensional grids only.
    pub advection: [f64; 3],
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { diffusion: 0.5, advection: [0.0; 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    pub initial: f64,
    pub boundary: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self { initial: 1.0, boundary: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarksConfig {
    TwoPoint { values: [f64; 2], probs: [f64; 2] },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub paths: usize,
    pub seed: u64,
    pub intensity: f64,
    pub marks: MarksConfig,
    /// `γ₀(ζ) = offset + slope·ζ`.
    pub gamma0: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            paths: 1,
            seed: 0,
            intensity: 0.0,
            marks: MarksConfig::TwoPoint { values: [-0.1, 0.1], probs: [0.5, 0.5] },
            gamma0: [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Chosen from the noise channels when absent.
    pub estimator: Option<Estimator>,
    pub dual_mode: DualMode,
    pub control_mode: ControlMode,
    pub initial_control: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub relaxation: f64,
    pub gradient_step: f64,
    /// Worker threads, 0 for the default pool.
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            estimator: None,
            dual_mode: DualMode::Exact,
            control_mode: ControlMode::Pointwise,
            initial_control: 0.5,
            tolerance: 1e-7,
            max_iterations: 200,
            relaxation: 0.5,
            gradient_step: 1.0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverKind {
    #[default]
    Hamiltonian,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalKind {
    /// Terminal slope of the model's utility.
    #[default]
    Adjoint,
    /// The simulated state `Y(T, ·)`.
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    pub driver: DriverKind,
    pub linear: LinearDriver,
    pub terminal: TerminalKind,
    pub max_iterations: usize,
    pub max_inner: usize,
    pub tolerance: f64,
    pub start: PicardStart,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            driver: DriverKind::Hamiltonian,
            linear: LinearDriver::default(),
            terminal: TerminalKind::Adjoint,
            max_iterations: 50,
            max_inner: 50,
            tolerance: 1e-10,
            start: PicardStart::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckPoint {
    #[default]
    Initial,
    Optimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    /// `sin`-bump vanishing on the boundary, growing in time.
    #[default]
    Bump,
    /// One everywhere.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub theta: f64,
    pub at: CheckPoint,
    pub direction: DirectionKind,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { theta: 1e-3, at: CheckPoint::Initial, direction: DirectionKind::Bump }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub low: f64,
    pub high: f64,
    pub points: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { low: 0.2, high: 4.0, points: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Paths written to the trajectory and adjoint CSVs.
    pub export_paths: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), export_paths: 4 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Canonical form: every key, defaults filled in.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn check(&self) -> Result<(), String> {
        let m = &self.model;
        let mut finite: Vec<(&str, f64)> = vec![
            ("model.alpha", m.alpha),
            ("model.beta", m.beta),
            ("model.rho", m.rho),
            ("model.theta", m.theta),
            ("model.u_min", m.u_min),
            ("model.u_max", m.u_max),
            ("time.horizon", self.time.horizon),
            ("operator.diffusion", self.operator.diffusion),
            ("state.initial", self.state.initial),
            ("state.boundary", self.state.boundary),
            ("noise.intensity", self.noise.intensity),
            ("solver.initial_control", self.solver.initial_control),
            ("solver.tolerance", self.solver.tolerance),
            ("solver.relaxation", self.solver.relaxation),
            ("solver.gradient_step", self.solver.gradient_step),
            ("picard.tolerance", self.picard.tolerance),
            ("gradcheck.theta", self.gradcheck.theta),
            ("oracle.low", self.oracle.low),
            ("oracle.high", self.oracle.high),
        ];
        finite.extend(m.mu.iter().map(|&v| ("model.mu", v)));
        finite.extend(self.operator.advection.iter().map(|&v| ("operator.advection", v)));
        finite.extend(self.grid.lower.iter().chain(&self.grid.upper).map(|&v| ("grid extents", v)));
        finite.extend(self.noise.gamma0.iter().map(|&v| ("noise.gamma0", v)));
        if let Some(c) = &m.custom {
            for a in [c.drift, c.volatility, c.jump] {
                finite.extend([a.c0, a.cy, a.cybar, a.cu].map(|v| ("model.custom", v)));
            }
            finite.extend(c.running.iter().chain(&c.terminal).map(|&v| ("model.custom", v)));
        }
        let l = &self.linear_terms();
        finite.extend(l.iter().map(|&v| ("picard.linear", v)));
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} must be finite, got {v}"));
        }
        let g = &self.grid;
        if g.lower.len() != g.upper.len() || g.lower.len() != g.resolution.len() {
            return Err("grid.lower, grid.upper and grid.resolution must have the same length".into());
        }
        if let Some(r) = g.resolution.iter().find(|&&r| r < 3) {
            return Err(format!("grid.resolution {r} is below the minimum of 3 nodes per axis"));
        }
        if self.time.steps == 0 {
            return Err("time.steps must be at least 1".into());
        }
        if self.time.horizon <= 0.0 {
            return Err(format!("time.horizon must be positive, got {}", self.time.horizon));
        }
        if self.noise.paths == 0 {
            return Err("noise.paths must be at least 1".into());
        }
        if m.u_min > m.u_max {
            return Err(format!("model.u_min {} exceeds model.u_max {}", m.u_min, m.u_max));
        }
        if !(0.0..=1.0).contains(&self.solver.relaxation) || self.solver.relaxation == 0.0 {
            return Err(format!("solver.relaxation must lie in (0, 1], got {}", self.solver.relaxation));
        }
        if m.preset == Preset::Custom && m.custom.is_none() {
            return Err("model.preset = \"custom\" needs a [model.custom] table".into());
        }
        if m.preset != Preset::Custom && m.custom.is_some() {
            return Err("[model.custom] is only read by the custom preset".into());
        }
        if self.oracle.points == 0 || self.oracle.low > self.oracle.high {
            return Err("oracle needs at least one point and low ≤ high".into());
        }
        if self.gradcheck.theta <= 0.0 {
            return Err(format!("gradcheck.theta must be positive, got {}", self.gradcheck.theta));
        }
        Ok(())
    }

    fn linear_terms(&self) -> [f64; 7] {
        let l = &self.picard.linear;
        [l.p, l.pbar, l.q, l.qbar, l.r, l.rbar, l.source]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn canonical_round_trip() {
        let text = r#"
            [model]
            preset = "harvest-power"
            rho = 0.3
            [noise]
            paths = 7
            intensity = 1.5
            marks = { law = "uniform", low = -0.2, high = 0.3 }
            [solver]
            estimator = "regression"
            control_mode = "x-free"
            [picard]
            driver = "linear"
            linear = { p = 0.2, qbar = 0.1 }
        "#;
        let c = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&c.canonical()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.canonical(), again.canonical());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[model]\nalpah = 0.5\n").is_err());
        assert!(RunConfig::parse("[nonsense]\n").is_err());
        assert!(RunConfig::parse("[noise]\nmarks = { law = \"uniform\", low = 0.0, high = 1.0, extra = 2 }\n").is_err());
    }

    #[test]
    fn preconditions_named() {
        let e = RunConfig::parse("[grid]\nresolution = [2]\n").unwrap_err();
        assert!(e.contains("resolution"), "{e}");
        let e = RunConfig::parse("[model]\nu_min = 5.0\nu_max = 1.0\n").unwrap_err();
        assert!(e.contains("u_min"), "{e}");
        let e = RunConfig::parse("[model]\npreset = \"custom\"\n").unwrap_err();
        assert!(e.contains("custom"), "{e}");
    }
}
