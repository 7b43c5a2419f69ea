//! Coefficient sets, utilities and the Hamiltonian.
//!
//! Coefficients depend on the field only through the ball average `ȳ`, and
//! drift, volatility and jump core are affine in `(y, ȳ, u)`. The jump
//! coefficient factorises as `γ = γ₀(ζ)·γ_core`, and the adjoint jump
//! component is carried as `r(ζ) = c_r·γ₀(ζ)`, so every mark integral reduces
//! to the moments of the Lévy measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{LevyModel, LevyMoments};
use crate::operators::Poly2;

/// `c0 + cy·y + cybar·ȳ + cu·u`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub cy: f64,
    #[serde(default)]
    pub cybar: f64,
    #[serde(default)]
    pub cu: f64,
}

impl Affine {
    pub fn eval(&self, y: f64, ybar: f64, u: f64) -> f64 {
        self.c0 + self.cy * y + self.cybar * ybar + self.cu * u
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    fn is_finite(&self) -> bool {
        [self.c0, self.cy, self.cybar, self.cu].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunningUtility {
    /// `log u`
    Log,
    /// `u^ρ / ρ`
    Power { rho: f64 },
    /// `a·u + b·u² + c·y + d·ȳ`
    Quadratic {
        #[serde(default)]
        u1: f64,
        #[serde(default)]
        u2: f64,
        #[serde(default)]
        y1: f64,
        #[serde(default)]
        ybar1: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalUtility {
    /// `log y`
    Log,
    /// `μ(x)·y`
    Linear { mu: Poly2 },
    /// `a·y + b·y² + c·ȳ`
    Quadratic {
        #[serde(default)]
        y1: f64,
        #[serde(default)]
        y2: f64,
        #[serde(default)]
        ybar1: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ControlBounds {
    pub fn project(&self, u: f64) -> f64 {
        u.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lower && u <= self.upper
    }
}

/// `(y, ȳ, u, p, q, c_r)` at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HamiltonianInputs {
    pub y: f64,
    pub ybar: f64,
    pub u: f64,
    pub p: f64,
    pub q: f64,
    pub cr: f64,
}

/// Partials of the Hamiltonian through the three channels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HamiltonianSlopes {
    pub dy: f64,
    pub dybar: f64,
    pub du: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub drift: Affine,
    pub volatility: Affine,
    pub jump_core: Affine,
    pub running: RunningUtility,
    pub terminal: TerminalUtility,
    pub bounds: ControlBounds,
    pub levy: LevyModel,
    /// Asserted for presets; probed by [`ModelSpec::check_concavity`].
    pub concave: bool,
}

impl ModelSpec {
    /// `b = αȳ − u`, `σ = βȳ`, `γ_core = ȳ`, `f = log u`, `g = log y`.
    pub fn harvest_log(alpha: f64, beta: f64, bounds: ControlBounds, levy: LevyModel) -> Result<Self> {
        let spec = Self {
            name: "harvest-log".into(),
            drift: Affine { cybar: alpha, cu: -1.0, ..Default::default() },
            volatility: Affine { cybar: beta, ..Default::default() },
            jump_core: Affine { cybar: 1.0, ..Default::default() },
            running: RunningUtility::Log,
            terminal: TerminalUtility::Log,
            bounds,
            levy,
            concave: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same dynamics, `f = u^ρ/ρ`, `g = μ(x)·y`.
    pub fn harvest_power(
        alpha: f64,
        beta: f64,
        rho: f64,
        mu: Poly2,
        bounds: ControlBounds,
        levy: LevyModel,
    ) -> Result<Self> {
        let mut spec = Self::harvest_log(alpha, beta, ControlBounds { lower: 1.0, upper: 2.0 }, levy)?;
        spec.name = "harvest-power".into();
        spec.running = RunningUtility::Power { rho };
        spec.terminal = TerminalUtility::Linear { mu };
        spec.bounds = bounds;
        spec.validate()?;
        Ok(spec)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn custom_linear(
        drift: Affine,
        volatility: Affine,
        jump_core: Affine,
        running: RunningUtility,
        terminal: TerminalUtility,
        bounds: ControlBounds,
        levy: LevyModel,
    ) -> Result<Self> {
        let concave = match running {
            RunningUtility::Quadratic { u2, .. } => u2 <= 0.0,
            _ => true,
        } && match terminal {
            TerminalUtility::Quadratic { y2, .. } => y2 <= 0.0,
            _ => true,
        };
        let spec = Self {
            name: "custom-linear".into(),
            drift,
            volatility,
            jump_core,
            running,
            terminal,
            bounds,
            levy,
            concave,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ControlBounds { lower, upper } = self.bounds;
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(Error::InvalidArgument(format!("control bounds [{lower}, {upper}] are not an interval")));
        }
        if !(self.drift.is_finite() && self.volatility.is_finite() && self.jump_core.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        match self.running {
            RunningUtility::Log if lower <= 0.0 => {
                return Err(Error::InvalidArgument(format!(
                    "log utility needs a positive lower control bound, got {lower}"
                )))
            }
            RunningUtility::Power { rho } => {
                if !(rho > 0.0 && rho < 1.0) {
                    return Err(Error::InvalidArgument(format!("power exponent must lie in (0,1), got {rho}")));
                }
                if lower <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "power utility needs a positive lower control bound, got {lower}"
                    )));
                }
            }
            RunningUtility::Quadratic { u1, u2, y1, ybar1 } if ![u1, u2, y1, ybar1].iter().all(|v| v.is_finite()) => {
                return Err(Error::InvalidArgument("utility coefficients must be finite".into()));
            }
            _ => {}
        }
        self.levy.validate()
    }

    pub fn moments(&self) -> LevyMoments {
        self.levy.moments()
    }

    /// Whether a terminal value lies in the state set `S`.
    pub fn in_state_set(&self, y: f64) -> bool {
        match self.terminal {
            TerminalUtility::Log => y > 0.0 && y.is_finite(),
            _ => y.is_finite(),
        }
    }

    fn check_control(&self, u: f64) -> Result<()> {
        if !self.bounds.contains(u) {
            return Err(Error::ControlOutOfBounds { value: u, lower: self.bounds.lower, upper: self.bounds.upper });
        }
        match self.running {
            RunningUtility::Log if u <= 0.0 => Err(Error::Domain { what: "log utility", value: u }),
            RunningUtility::Power { .. } if u < 0.0 => Err(Error::Domain { what: "power utility", value: u }),
            _ => Ok(()),
        }
    }

    /// Running utility `f(y, ȳ, u)`.
    pub fn running_utility(&self, y: f64, ybar: f64, u: f64) -> f64 {
        match self.running {
            RunningUtility::Log => u.ln(),
            RunningUtility::Power { rho } => u.powf(rho) / rho,
            RunningUtility::Quadratic { u1, u2, y1, ybar1 } => u1 * u + u2 * u * u + y1 * y + ybar1 * ybar,
        }
    }

    /// `(∂f/∂y, ∂f/∂ȳ, ∂f/∂u)`.
    pub fn running_slopes(&self, u: f64) -> HamiltonianSlopes {
        match self.running {
            RunningUtility::Log => HamiltonianSlopes { du: 1.0 / u, ..Default::default() },
            RunningUtility::Power { rho } => HamiltonianSlopes { du: u.powf(rho - 1.0), ..Default::default() },
            RunningUtility::Quadratic { u1, u2, y1, ybar1 } => {
                HamiltonianSlopes { dy: y1, dybar: ybar1, du: u1 + 2.0 * u2 * u }
            }
        }
    }

    /// `H = f + b·p + σ·q + γ_core·c_r·m2`, without domain checks.
    pub fn hamiltonian_unchecked(&self, m2: f64, v: &HamiltonianInputs) -> f64 {
        self.running_utility(v.y, v.ybar, v.u)
            + self.drift.eval(v.y, v.ybar, v.u) * v.p
            + self.volatility.eval(v.y, v.ybar, v.u) * v.q
            + self.jump_core.eval(v.y, v.ybar, v.u) * v.cr * m2
    }

    /// All three partials, without domain checks.
    pub fn slopes_unchecked(&self, m2: f64, v: &HamiltonianInputs) -> HamiltonianSlopes {
        let f = self.running_slopes(v.u);
        let (b, s, g) = (&self.drift, &self.volatility, &self.jump_core);
        let jr = v.cr * m2;
        HamiltonianSlopes {
            dy: f.dy + b.cy * v.p + s.cy * v.q + g.cy * jr,
            dybar: f.dybar + b.cybar * v.p + s.cybar * v.q + g.cybar * jr,
            du: f.du + b.cu * v.p + s.cu * v.q + g.cu * jr,
        }
    }

    pub fn hamiltonian(&self, v: &HamiltonianInputs) -> Result<f64> {
        self.check_control(v.u)?;
        Ok(self.hamiltonian_unchecked(self.moments().m2, v))
    }

    pub fn slopes(&self, v: &HamiltonianInputs) -> Result<HamiltonianSlopes> {
        self.check_control(v.u)?;
        Ok(self.slopes_unchecked(self.moments().m2, v))
    }

    pub fn dh_du(&self, v: &HamiltonianInputs) -> Result<f64> {
        self.slopes(v).map(|s| s.du)
    }

    pub fn dh_dy(&self, v: &HamiltonianInputs) -> Result<f64> {
        self.slopes(v).map(|s| s.dy)
    }

    pub fn dh_dybar(&self, v: &HamiltonianInputs) -> Result<f64> {
        self.slopes(v).map(|s| s.dybar)
    }

    /// Terminal utility `g(x, y, ȳ)`.
    pub fn terminal_utility(&self, x: [f64; 2], y: f64, ybar: f64) -> f64 {
        match self.terminal {
            TerminalUtility::Log => y.ln(),
            TerminalUtility::Linear { mu } => mu.eval(x) * y,
            TerminalUtility::Quadratic { y1, y2, ybar1 } => y1 * y + y2 * y * y + ybar1 * ybar,
        }
    }

    /// `(∂g/∂y, ∂g/∂ȳ)`.
    pub fn terminal_slope(&self, x: [f64; 2], y: f64, _ybar: f64) -> Result<(f64, f64)> {
        match self.terminal {
            TerminalUtility::Log => {
                if !self.in_state_set(y) {
                    return Err(Error::Domain { what: "log terminal utility", value: y });
                }
                Ok((1.0 / y, 0.0))
            }
            TerminalUtility::Linear { mu } => Ok((mu.eval(x), 0.0)),
            TerminalUtility::Quadratic { y1, y2, ybar1 } => Ok((y1 + 2.0 * y2 * y, ybar1)),
        }
    }

    /// Random midpoint-concavity probes of `(y, ȳ, u) ↦ H` (adjoint arguments
    /// held fixed per probe) and of `(y, ȳ) ↦ g`.
    pub fn check_concavity(&self, samples: usize, seed: u64) -> Result<ConcavityReport> {
        if samples < 2 {
            return Err(Error::InvalidArgument(format!("concavity check needs at least 2 samples, got {samples}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m2 = self.moments().m2;
        let (ylo, yhi) = match self.terminal {
            TerminalUtility::Log => (1e-2, 10.0),
            _ => (-5.0, 5.0),
        };
        let ulo = self.bounds.lower;
        let uhi = self.bounds.upper.min(ulo + 10.0);
        let mut worst_h = f64::NEG_INFINITY;
        let mut worst_g = f64::NEG_INFINITY;
        for _ in 0..samples {
            let (p, q, cr) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let mut point = || HamiltonianInputs {
                y: rng.random_range(ylo..=yhi),
                ybar: rng.random_range(ylo..=yhi),
                u: if uhi > ulo { rng.random_range(ulo..=uhi) } else { ulo },
                p,
                q,
                cr,
            };
            let (a, b) = (point(), point());
            let mid = HamiltonianInputs {
                y: 0.5 * (a.y + b.y),
                ybar: 0.5 * (a.ybar + b.ybar),
                u: 0.5 * (a.u + b.u),
                p,
                q,
                cr,
            };
            let h = |v: &HamiltonianInputs| self.hamiltonian_unchecked(m2, v);
            worst_h = worst_h.max(0.5 * (h(&a) + h(&b)) - h(&mid));
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let g = |v: &HamiltonianInputs| self.terminal_utility(x, v.y, v.ybar);
            worst_g = worst_g.max(0.5 * (g(&a) + g(&b)) - g(&mid));
        }
        let worst = worst_h.max(worst_g).max(0.0);
        Ok(ConcavityReport { samples, worst_violation: worst, hamiltonian_violation: worst_h.max(0.0), terminal_violation: worst_g.max(0.0), pass: worst <= 1e-12 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub samples: usize,
    pub worst_violation: f64,
    pub hamiltonian_violation: f64,
    pub terminal_violation: f64,
    pub pass: bool,
}
