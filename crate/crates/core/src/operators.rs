//! Finite-difference discretisation of the second-order operator
//!
//! ```text
//! A φ = Σ_ij α_ij ∂_i∂_j φ + Σ_i β_i ∂_i φ
//! ```
//!
//! and of its formal adjoint `A* φ = Σ_ij ∂_i∂_j(α_ij φ) − Σ_i ∂_i(β_i φ)`.
//!
//! Coefficients are polynomials of degree ≤ 2 per axis so the derivatives
//! entering the adjoint are exact. Rows of boundary nodes are zero: the
//! stepping matrix `I − Δt·A` then has identity rows there and the time
//! steppers impose the Dirichlet data.
//!
//! Sign convention: `A` is the generator as it appears in the drift (`½Δ` for
//! the harvesting models). The coercivity check is run on `−A`, so `½Δ`
//! satisfies `2⟨−Au,u⟩ + λ‖u‖²_H ≥ α‖u‖²_V` through the Dirichlet energy.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::SparseMatrix;

/// `Σ_{i,j ≤ 2} c[i][j] x^i y^j`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Poly2 {
    pub c: [[f64; 3]; 3],
}

impl Poly2 {
    pub fn constant(v: f64) -> Self {
        let mut c = [[0.0; 3]; 3];
        c[0][0] = v;
        Self { c }
    }

    /// `a + b·x + c·x²` in the first coordinate.
    pub fn in_x(a: f64, b: f64, c2: f64) -> Self {
        let mut c = [[0.0; 3]; 3];
        c[0][0] = a;
        c[1][0] = b;
        c[2][0] = c2;
        Self { c }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let px = [1.0, x[0], x[0] * x[0]];
        let py = [1.0, x[1], x[1] * x[1]];
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.c[i][j] * px[i] * py[j];
            }
        }
        s
    }

    pub fn derivative(&self, axis: usize) -> Self {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                match axis {
                    0 if i > 0 => c[i - 1][j] += i as f64 * self.c[i][j],
                    1 if j > 0 => c[i][j - 1] += j as f64 * self.c[i][j],
                    _ => {}
                }
            }
        }
        Self { c }
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().flatten().all(|&v| v == 0.0)
    }
}

/// Symmetric diffusion matrix `[[a00, a01], [a01, a11]]` and drift `β`.
/// Only `a00` and `beta[0]` are used on 1D grids.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorCoefficients {
    pub a00: Poly2,
    pub a01: Poly2,
    pub a11: Poly2,
    pub beta: [Poly2; 2],
}

impl OperatorCoefficients {
    /// `scale·Δ`.
    pub fn laplacian(scale: f64) -> Self {
        Self {
            a00: Poly2::constant(scale),
            a11: Poly2::constant(scale),
            ..Default::default()
        }
    }

    pub fn one_d(alpha: Poly2, beta: Poly2) -> Self {
        Self { a00: alpha, beta: [beta, Poly2::default()], ..Default::default() }
    }

    pub fn alpha(&self, i: usize, j: usize) -> &Poly2 {
        match (i, j) {
            (0, 0) => &self.a00,
            (1, 1) => &self.a11,
            _ => &self.a01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    Forward,
    Adjoint,
    Transposed,
}

#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid: Arc<Grid>,
    coeffs: OperatorCoefficients,
    kind: OperatorKind,
    matrix: SparseMatrix,
    // zeroth-order part; `apply` uses it with differences `f_j − f_i`
    reaction: Vec<f64>,
}

/// Nodal coefficients of `Σ a_ij ∂_ij + Σ d_i ∂_i + c`.
struct Nodal {
    a: [[f64; 2]; 2],
    d: [f64; 2],
    c: f64,
}

fn check_definite(grid: &Grid, coeffs: &OperatorCoefficients) -> Result<()> {
    for node in 0..grid.len() {
        let x = grid.coords(node);
        let a = coeffs.a00.eval(x);
        let min_eig = if grid.dim() == 1 {
            a
        } else {
            let b = coeffs.a01.eval(x);
            let d = coeffs.a11.eval(x);
            0.5 * (a + d) - (0.25 * (a - d).powi(2) + b * b).sqrt()
        };
        let scale = 1.0 + a.abs();
        if min_eig < -1e-12 * scale || !min_eig.is_finite() {
            return Err(Error::IndefiniteDiffusion { node, min_eigenvalue: min_eig });
        }
    }
    Ok(())
}

fn discretise(grid: &Grid, nodal: impl Fn([f64; 2]) -> Nodal) -> (SparseMatrix, Vec<f64>) {
    let dim = grid.dim();
    let reaction: Vec<f64> = (0..grid.len())
        .map(|i| if grid.is_interior(i) { nodal(grid.coords(i)).c } else { 0.0 })
        .collect();
    let rows = (0..grid.len())
        .map(|node| {
            if !grid.is_interior(node) {
                return Vec::new();
            }
            let x = grid.coords(node);
            let co = nodal(x);
            let mut row = vec![(node, co.c)];
            let at = |d: [isize; 2]| grid.shifted(node, d).expect("interior stencil");
            for k in 0..dim {
                let h = grid.h(k);
                let mut e = [0isize; 2];
                e[k] = 1;
                let plus = at(e);
                let minus = at([-e[0], -e[1]]);
                let a = co.a[k][k] / (h * h);
                let b = co.d[k] / (2.0 * h);
                row.push((plus, a + b));
                row.push((minus, a - b));
                row.push((node, -2.0 * a));
            }
            if dim == 2 {
                // a01 + a10 = 2·a01 times the four-point cross difference
                let w = 2.0 * co.a[0][1] / (4.0 * grid.h(0) * grid.h(1));
                if w != 0.0 {
                    row.push((at([1, 1]), w));
                    row.push((at([-1, -1]), w));
                    row.push((at([1, -1]), -w));
                    row.push((at([-1, 1]), -w));
                }
            }
            row
        })
        .collect();
    (SparseMatrix::from_rows(rows), reaction)
}

impl EllipticOperator {
    pub fn assemble(grid: Arc<Grid>, coeffs: OperatorCoefficients) -> Result<Self> {
        check_definite(&grid, &coeffs)?;
        let (matrix, reaction) = discretise(&grid, |x| Nodal {
            a: [
                [coeffs.a00.eval(x), coeffs.a01.eval(x)],
                [coeffs.a01.eval(x), coeffs.a11.eval(x)],
            ],
            d: [coeffs.beta[0].eval(x), coeffs.beta[1].eval(x)],
            c: 0.0,
        });
        Ok(Self { grid, coeffs, kind: OperatorKind::Forward, matrix, reaction })
    }

    /// Discretises the analytic formal adjoint, expanded as
    /// `Σ α_ij ∂_ij φ + Σ_i (2 Σ_j ∂_j α_ij − β_i) ∂_i φ + (Σ ∂_ij α_ij − Σ ∂_i β_i) φ`.
    pub fn assemble_adjoint(grid: Arc<Grid>, coeffs: OperatorCoefficients) -> Result<Self> {
        check_definite(&grid, &coeffs)?;
        let dim = grid.dim();
        let (matrix, reaction) = discretise(&grid, |x| {
            let mut a = [[0.0; 2]; 2];
            let mut d = [0.0; 2];
            let mut c = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let aij = coeffs.alpha(i, j);
                    a[i][j] = aij.eval(x);
                    d[i] += 2.0 * aij.derivative(j).eval(x);
                    c += aij.derivative(i).derivative(j).eval(x);
                }
                d[i] -= coeffs.beta[i].eval(x);
                c -= coeffs.beta[i].derivative(i).eval(x);
            }
            Nodal { a, d, c }
        });
        Ok(Self { grid, coeffs, kind: OperatorKind::Adjoint, matrix, reaction })
    }

    pub fn laplacian(grid: Arc<Grid>, scale: f64) -> Result<Self> {
        Self::assemble(grid, OperatorCoefficients::laplacian(scale))
    }

    pub fn zero(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            coeffs: OperatorCoefficients::default(),
            kind: OperatorKind::Forward,
            matrix: SparseMatrix::from_rows(vec![Vec::new(); n]),
            reaction: vec![0.0; n],
        }
    }

    /// Discrete transpose restricted to interior rows. Since boundary rows of
    /// `self` vanish, the interior block is exactly `A_IIᵀ`.
    pub fn transposed(&self) -> Self {
        let t = self.matrix.transpose();
        let rows: Vec<Vec<(usize, f64)>> = (0..self.grid.len())
            .map(|i| if self.grid.is_interior(i) { t.row(i).collect() } else { Vec::new() })
            .collect();
        let reaction = rows.iter().map(|r| r.iter().map(|&(_, v)| v).sum()).collect();
        Self {
            grid: self.grid.clone(),
            coeffs: self.coeffs,
            kind: OperatorKind::Transposed,
            matrix: SparseMatrix::from_rows(rows),
            reaction,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &OperatorCoefficients {
        &self.coeffs
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..f.len())
            .map(|i| {
                self.matrix
                    .row(i)
                    .filter(|&(j, _)| j != i)
                    .map(|(j, v)| v * (f[j] - f[i]))
                    .sum::<f64>()
                    + self.reaction[i] * f[i]
            })
            .collect()
    }

    /// `I − Δt·A`; identity rows on the boundary.
    pub fn implicit_system(&self, dt: f64) -> SparseMatrix {
        SparseMatrix::identity(self.grid.len()).combine(1.0, &self.matrix, -dt)
    }

    /// `(2⟨−Au,u⟩ + λ‖u‖²_H) / ‖u‖²_V`.
    pub fn coercivity_ratio(&self, lambda: f64, u: &[f64]) -> f64 {
        let au = self.apply(u);
        let energy = -2.0 * self.grid.dot(&au, u);
        let v2 = self.grid.sobolev_norm(u).powi(2);
        (energy + lambda * self.grid.dot(u, u)) / v2
    }

    /// Probes the Gårding inequality on random interior-supported fields:
    /// even trials draw white noise, odd trials a random mix of low sine modes.
    pub fn check_coercivity(
        &self,
        lambda: f64,
        alpha_coer: f64,
        trials: usize,
        seed: u64,
    ) -> Result<CoercivityReport> {
        if trials == 0 {
            return Err(Error::InvalidArgument("coercivity check needs at least one trial".into()));
        }
        let g = &self.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut min_ratio = f64::INFINITY;
        for trial in 0..trials {
            let modes: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0),
                        rng.random_range(1..6) as f64,
                        rng.random_range(1..6) as f64,
                    )
                })
                .collect();
            let u: Vec<f64> = (0..g.len())
                .map(|i| {
                    if !g.is_interior(i) {
                        return 0.0;
                    }
                    if trial % 2 == 0 {
                        rng.random_range(-1.0..1.0)
                    } else {
                        let x = g.coords(i);
                        let s = |k: usize, m: f64| {
                            if k < g.dim() {
                                let t = (x[k] - g.lower(k)) / (g.upper(k) - g.lower(k));
                                (std::f64::consts::PI * m * t).sin()
                            } else {
                                1.0
                            }
                        };
                        modes.iter().map(|&(c, m0, m1)| c * s(0, m0) * s(1, m1)).sum()
                    }
                })
                .collect();
            if g.sobolev_norm(&u) == 0.0 {
                continue;
            }
            min_ratio = min_ratio.min(self.coercivity_ratio(lambda, &u));
        }
        Ok(CoercivityReport { min_ratio, trials, pass: min_ratio >= alpha_coer })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub min_ratio: f64,
    pub trials: usize,
    pub pass: bool,
}
