//! Brownian and compensated compound-Poisson driving noise.
//!
//! Each path owns a ChaCha stream selected by its index, so a path never
//! changes when the ensemble grows and generation parallelises without
//! coordination. Within a step the draws are: one normal, the Poisson jump
//! count, then the marks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum MarkLaw {
    TwoPoint { values: [f64; 2], probs: [f64; 2] },
    Uniform { low: f64, high: f64 },
}

/// Jump kernel `γ₀(ζ) = offset + slope·ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpKernel {
    pub offset: f64,
    pub slope: f64,
}

impl JumpKernel {
    pub const IDENTITY: Self = Self { offset: 0.0, slope: 1.0 };

    pub fn eval(&self, zeta: f64) -> f64 {
        self.offset + self.slope * zeta
    }
}

impl Default for JumpKernel {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyModel {
    pub intensity: f64,
    pub marks: MarkLaw,
    #[serde(default)]
    pub gamma0: JumpKernel,
}

/// `∫ν(dζ)`, `∫γ₀ν(dζ)`, `∫γ₀²ν(dζ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyMoments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

// 5-point Gauss-Legendre on [-1, 1]
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

impl LevyModel {
    pub fn none() -> Self {
        Self {
            intensity: 0.0,
            marks: MarkLaw::TwoPoint { values: [0.0, 0.0], probs: [0.5, 0.5] },
            gamma0: JumpKernel::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.intensity.is_finite() || self.intensity < 0.0 {
            return Err(Error::InvalidLevy(format!("intensity must be finite and ≥ 0, got {}", self.intensity)));
        }
        if !(self.gamma0.offset.is_finite() && self.gamma0.slope.is_finite()) {
            return Err(Error::InvalidLevy("jump kernel coefficients must be finite".into()));
        }
        match &self.marks {
            MarkLaw::TwoPoint { values, probs } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidLevy("mark values must be finite".into()));
                }
                if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (probs[0] + probs[1] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidLevy(format!(
                        "mark probabilities {probs:?} must lie in [0,1] and sum to 1"
                    )));
                }
            }
            MarkLaw::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::InvalidLevy(format!("uniform marks need low < high, got [{low}, {high}]")));
                }
            }
        }
        Ok(())
    }

    /// `E[h(ζ)]` under the mark law (Gauss-Legendre for the uniform law).
    pub fn mark_expectation(&self, h: impl Fn(f64) -> f64) -> f64 {
        match &self.marks {
            MarkLaw::TwoPoint { values, probs } => probs[0] * h(values[0]) + probs[1] * h(values[1]),
            MarkLaw::Uniform { low, high } => {
                let panels = 64;
                let w = (high - low) / panels as f64;
                let mut s = 0.0;
                for k in 0..panels {
                    let mid = low + (k as f64 + 0.5) * w;
                    for (x, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
                        s += wt * h(mid + 0.5 * w * x);
                    }
                }
                0.5 * s / panels as f64
            }
        }
    }

    fn mark_moments(&self) -> (f64, f64) {
        match &self.marks {
            MarkLaw::TwoPoint { values, probs } => (
                probs[0] * values[0] + probs[1] * values[1],
                probs[0] * values[0] * values[0] + probs[1] * values[1] * values[1],
            ),
            MarkLaw::Uniform { low, high } => (
                0.5 * (low + high),
                (low * low + low * high + high * high) / 3.0,
            ),
        }
    }

    pub fn moments(&self) -> LevyMoments {
        let lam = self.intensity;
        if lam == 0.0 {
            return LevyMoments { m0: 0.0, m1: 0.0, m2: 0.0 };
        }
        let (e1, e2) = self.mark_moments();
        let JumpKernel { offset: o, slope: s } = self.gamma0;
        LevyMoments {
            m0: lam,
            m1: lam * (o + s * e1),
            m2: lam * (o * o + 2.0 * o * s * e1 + s * s * e2),
        }
    }

    fn draw_mark(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.marks {
            MarkLaw::TwoPoint { values, probs } => {
                if rng.random::<f64>() < probs[0] {
                    values[0]
                } else {
                    values[1]
                }
            }
            MarkLaw::Uniform { low, high } => rng.random_range(*low..*high),
        }
    }
}

/// Noise of one path on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub path: usize,
    pub seed: u64,
    pub dt: f64,
    /// `ΔB_m`, `m = 0..M`.
    pub db: Vec<f64>,
    // marks of step m live in marks[jump_ptr[m]..jump_ptr[m + 1]]
    jump_ptr: Vec<usize>,
    marks: Vec<f64>,
}

impl PathBundle {
    pub fn steps(&self) -> usize {
        self.db.len()
    }

    /// Marks of the jumps falling in `(t_m, t_{m+1}]`.
    pub fn marks_in(&self, m: usize) -> &[f64] {
        &self.marks[self.jump_ptr[m]..self.jump_ptr[m + 1]]
    }

    pub fn jump_count(&self) -> usize {
        self.marks.len()
    }

    /// `(step, mark)` for every jump.
    pub fn jumps(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.steps()).flat_map(move |m| self.marks_in(m).iter().map(move |&z| (m, z)))
    }

    /// `Σ_{jumps in step m} h(ζ) − Δt·λ·E[h(ζ)]`.
    pub fn compensated_increment(&self, m: usize, levy: &LevyModel, h: impl Fn(f64) -> f64) -> f64 {
        if levy.intensity == 0.0 {
            return 0.0;
        }
        let jumps: f64 = self.marks_in(m).iter().map(|&z| h(z)).sum();
        jumps - self.dt * levy.intensity * levy.mark_expectation(h)
    }

    /// Compensated increment with the jump kernel, using the closed-form `m1`.
    pub fn compensated_kernel_increment(&self, m: usize, levy: &LevyModel, m1: f64) -> f64 {
        if levy.intensity == 0.0 {
            return 0.0;
        }
        let jumps: f64 = self.marks_in(m).iter().map(|&z| levy.gamma0.eval(z)).sum();
        jumps - self.dt * m1
    }
}

pub fn sample_path(steps: usize, horizon: f64, levy: &LevyModel, seed: u64, path: usize) -> PathBundle {
    let dt = horizon / steps as f64;
    let sd = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    let poisson = (levy.intensity > 0.0).then(|| Poisson::new(levy.intensity * dt).expect("positive rate"));
    let mut db = Vec::with_capacity(steps);
    let mut jump_ptr = Vec::with_capacity(steps + 1);
    let mut marks = Vec::new();
    jump_ptr.push(0);
    for _ in 0..steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        db.push(sd * z);
        if let Some(dist) = &poisson {
            let count = dist.sample(&mut rng) as usize;
            for _ in 0..count {
                marks.push(levy.draw_mark(&mut rng));
            }
        }
        jump_ptr.push(marks.len());
    }
    PathBundle { path, seed, dt, db, jump_ptr, marks }
}

/// `P` independent bundles; output order and content do not depend on the
/// thread count.
pub fn sample_paths(steps: usize, horizon: f64, levy: &LevyModel, paths: usize, seed: u64) -> Result<Vec<PathBundle>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one time step".into()));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    levy.validate()?;
    Ok((0..paths)
        .into_par_iter()
        .map(|i| sample_path(steps, horizon, levy, seed, i))
        .collect())
}
