//! Uniform box grids over `D`, node fields and the discrete `H`/`V` norms.
//!
//! Nodes are stored row-major (last axis fastest). Every node of the index box
//! belongs to the closed domain; nodes on the faces of the box form the
//! boundary, the rest are interior. Fields are extended by zero outside the box.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `D = Π (lower_k, upper_k)` in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainSpec {
    pub fn interval(a: f64, b: f64) -> Self {
        Self { lower: vec![a], upper: vec![b] }
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64)) -> Self {
        Self { lower: vec![x.0, y.0], upper: vec![x.1, y.1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    n: [usize; 2],
    h: [f64; 2],
    interior: Vec<bool>,
    trapezoid: Vec<f64>,
}

impl Grid {
    /// Builds a uniform grid with `resolution[k]` nodes on axis `k`. A single
    /// resolution value is broadcast to every axis.
    pub fn new(domain: &DomainSpec, resolution: &[usize]) -> Result<Self> {
        let dim = domain.lower.len();
        if dim == 0 || dim > 2 || domain.upper.len() != dim {
            return Err(Error::UnsupportedDimension(dim.max(domain.upper.len())));
        }
        let res_at = |k: usize| -> usize {
            if resolution.len() == 1 {
                resolution[0]
            } else {
                resolution.get(k).copied().unwrap_or(0)
            }
        };
        let mut lower = [0.0; 2];
        let mut upper = [0.0; 2];
        let mut n = [1usize; 2];
        let mut h = [1.0; 2];
        for k in 0..dim {
            let (a, b) = (domain.lower[k], domain.upper[k]);
            if !a.is_finite() || !b.is_finite() || b - a <= 0.0 {
                return Err(Error::DegenerateExtent { axis: k, lower: a, upper: b });
            }
            let r = res_at(k);
            if r < 3 {
                return Err(Error::ResolutionTooSmall(r));
            }
            lower[k] = a;
            upper[k] = b;
            n[k] = r;
            h[k] = (b - a) / (r - 1) as f64;
        }

        let len = n[0] * n[1];
        let mut interior = vec![false; len];
        let mut trapezoid = vec![0.0; len];
        let cell: f64 = h[..dim].iter().product();
        for (idx, (inside, weight)) in interior.iter_mut().zip(trapezoid.iter_mut()).enumerate() {
            let ij = [idx / n[1], idx % n[1]];
            let mut on_face = false;
            let mut w = cell;
            for k in 0..dim {
                if ij[k] == 0 || ij[k] == n[k] - 1 {
                    on_face = true;
                    w *= 0.5;
                }
            }
            *inside = !on_face;
            *weight = w;
        }

        Ok(Self { dim, lower, upper, n, h, interior, trapezoid })
    }

    pub fn interval(a: f64, b: f64, resolution: usize) -> Result<Self> {
        Self::new(&DomainSpec::interval(a, b), &[resolution])
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), resolution: usize) -> Result<Self> {
        Self::new(&DomainSpec::rectangle(x, y), &[resolution])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of nodes, `Π resolution_k`.
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    /// Smallest cell width over the active axes.
    pub fn h_min(&self) -> f64 {
        self.h[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    /// Lebesgue measure of the box `D`.
    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|k| self.upper[k] - self.lower[k]).product()
    }

    /// Row-major strides per axis.
    pub fn strides(&self) -> [usize; 2] {
        [self.n[1], 1]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx / self.n[1], idx % self.n[1]]
    }

    pub fn flat_index(&self, ij: [usize; 2]) -> usize {
        ij[0] * self.n[1] + ij[1]
    }

    /// Flat index of `idx` shifted by `offset`, or `None` when the target
    /// falls outside the index box.
    pub fn shifted(&self, idx: usize, offset: [isize; 2]) -> Option<usize> {
        let ij = self.multi_index(idx);
        let mut out = [0usize; 2];
        for k in 0..2 {
            let v = ij[k] as isize + offset[k];
            if v < 0 || v >= self.n[k] as isize {
                return None;
            }
            out[k] = v as usize;
        }
        Some(self.flat_index(out))
    }

    /// Physical coordinates of a node. Unused axes report 0.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let ij = self.multi_index(idx);
        let mut x = [0.0; 2];
        for k in 0..self.dim {
            x[k] = self.lower[k] + ij[k] as f64 * self.h[k];
        }
        x
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.interior[idx]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.interior[i])
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.interior[i])
    }

    /// Whether `x` lies in the closed box `D̄`.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|k| x[k] >= self.lower[k] && x[k] <= self.upper[k])
    }

    /// Tensor trapezoid weights; exact for multilinear integrands over `D`.
    pub fn trapezoid_weights(&self) -> &[f64] {
        &self.trapezoid
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::FieldLength { expected: self.len(), got: values.len() });
        }
        Ok(())
    }

    /// Node-rule inner product `Σ f g · cell_volume` over `D̄`.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), g.len());
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.cell_volume()
    }

    /// Discrete `H = L²(D)` norm with full cell weight on every node.
    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.dot(f, f).sqrt()
    }

    /// Trapezoid-rule integral `∫_D f dx`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.trapezoid).map(|(a, w)| a * w).sum()
    }

    /// Central-difference gradient, one-sided first-order at the index faces.
    pub fn gradient(&self, f: &[f64]) -> Vec<Vec<f64>> {
        let strides = self.strides();
        (0..self.dim)
            .map(|k| {
                let s = strides[k];
                let h = self.h[k];
                (0..self.len())
                    .map(|idx| {
                        let i = self.multi_index(idx)[k];
                        if i == 0 {
                            (f[idx + s] - f[idx]) / h
                        } else if i == self.n[k] - 1 {
                            (f[idx] - f[idx - s]) / h
                        } else {
                            (f[idx + s] - f[idx - s]) / (2.0 * h)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Discrete `V = W^{1,2}(D)` norm: `sqrt(‖f‖² + Σ_k ‖∂_k f‖²)`. The
    /// gradient term uses trapezoid weights so the first-order one-sided
    /// differences on the faces only carry half a cell.
    pub fn sobolev_norm(&self, f: &[f64]) -> f64 {
        let grad_sq: f64 = self
            .gradient(f)
            .iter()
            .map(|g| g.iter().zip(&self.trapezoid).map(|(a, w)| a * a * w).sum::<f64>())
            .sum();
        (self.dot(f, f) + grad_sq).sqrt()
    }

    /// Multilinear interpolation of nodal values; exactly zero outside `D̄`.
    pub fn interpolate(&self, f: &[f64], x: &[f64]) -> f64 {
        if !self.contains_closed(x) {
            return 0.0;
        }
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..self.dim {
            let s = (x[k] - self.lower[k]) / self.h[k];
            let i = (s.floor() as usize).min(self.n[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        match self.dim {
            1 => f[base[0]] * (1.0 - frac[0]) + f[base[0] + 1] * frac[0],
            _ => {
                let at = |di: usize, dj: usize| f[self.flat_index([base[0] + di, base[1] + dj])];
                let (a, b) = (frac[0], frac[1]);
                at(0, 0) * (1.0 - a) * (1.0 - b)
                    + at(1, 0) * a * (1.0 - b)
                    + at(0, 1) * (1.0 - a) * b
                    + at(1, 1) * a * b
            }
        }
    }
}

/// Real-valued function on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        grid.check_len(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &Arc<Grid>) -> bool {
        Arc::ptr_eq(&self.grid, other) || *self.grid == **other
    }

    /// Value at an arbitrary point; zero outside `D̄`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.l2_norm(&self.values)
    }

    pub fn sobolev_norm(&self) -> f64 {
        self.grid.sobolev_norm(&self.values)
    }

    pub fn dot(&self, other: &Field) -> Result<f64> {
        if !other.same_grid(&self.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(self.grid.dot(&self.values, &other.values))
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }
}

/// Uniform time grid `t_m = m·Δt`, `m = 0..=steps`, with `Δt = horizon/steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("at least one time step required".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    /// Number of time levels, `steps + 1`.
    pub fn levels(&self) -> usize {
        self.steps + 1
    }
}

/// One field per time level on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeField {
    grid: Arc<Grid>,
    time: TimeGrid,
    frames: Vec<Vec<f64>>,
}

impl TimeField {
    pub fn zeros(grid: Arc<Grid>, time: TimeGrid) -> Self {
        let frames = vec![vec![0.0; grid.len()]; time.levels()];
        Self { grid, time, frames }
    }

    pub fn from_frames(grid: Arc<Grid>, time: TimeGrid, frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.len() != time.levels() {
            return Err(Error::InvalidArgument(format!(
                "expected {} time levels, got {}",
                time.levels(),
                frames.len()
            )));
        }
        for f in &frames {
            grid.check_len(f)?;
        }
        Ok(Self { grid, time, frames })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn frame(&self, m: usize) -> &[f64] {
        &self.frames[m]
    }

    pub fn frame_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.frames[m]
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn field(&self, m: usize) -> Field {
        Field { grid: self.grid.clone(), values: self.frames[m].clone() }
    }

    /// `sqrt(∫_0^T ‖f(t)‖_H² dt)` with the trapezoid rule in time.
    pub fn time_l2_norm(&self) -> f64 {
        let dt = self.time.dt();
        let last = self.time.steps;
        self.frames
            .iter()
            .enumerate()
            .map(|(m, f)| {
                let w = if m == 0 || m == last { 0.5 * dt } else { dt };
                w * self.grid.dot(f, f)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Time-integrated `H`-norm of `self - other`.
    pub fn distance(&self, other: &TimeField) -> f64 {
        let diff: Vec<Vec<f64>> = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        TimeField { grid: self.grid.clone(), time: self.time, frames: diff }.time_l2_norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn unit_interval_spacing() {
        let g = Grid::interval(0.0, 1.0, 101).unwrap();
        assert_relative_eq!(g.h(0), 0.01, epsilon = 1e-15);
        assert_eq!(g.len(), 101);
        assert_eq!(g.interior_count(), 99);
    }

    #[test]
    fn unit_square_counts() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 11).unwrap();
        assert_eq!(g.len(), 121);
        assert_eq!(g.interior_count(), 81);
    }

    #[test]
    fn degenerate_and_coarse_grids_rejected() {
        assert!(matches!(
            Grid::interval(0.0, 0.0, 11),
            Err(Error::DegenerateExtent { .. })
        ));
        assert!(matches!(Grid::interval(0.0, 1.0, 2), Err(Error::ResolutionTooSmall(2))));
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = Arc::new(Grid::interval(0.0, 1.0, 201).unwrap());
        let c = Field::constant(g.clone(), 2.0);
        // the rectangle rule over-counts by one cell
        assert!((c.l2_norm() - 2.0).abs() <= 2.0 * g.h(0));
        assert_eq!(Field::zeros(g.clone()).l2_norm(), 0.0);
        assert_eq!(Field::zeros(g.clone()).sobolev_norm(), 0.0);

        let s = Field::from_fn(g.clone(), |x| (PI * x[0]).sin());
        assert!((s.l2_norm() - 0.5f64.sqrt()).abs() < 1e-3);
        // constant has vanishing gradient
        assert_relative_eq!(c.sobolev_norm(), c.l2_norm(), epsilon = 1e-12);
    }

    #[test]
    fn sobolev_norm_of_sine_matches_quadrature_oracle() {
        // oracle: composite Simpson on ∫_0^1 sin²(πx) + π² cos²(πx) dx
        let n = 20_000;
        let hq = 1.0 / n as f64;
        let integrand = |x: f64| (PI * x).sin().powi(2) + (PI * (PI * x).cos()).powi(2);
        let mut s = integrand(0.0) + integrand(1.0);
        for i in 1..n {
            s += integrand(i as f64 * hq) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = (s * hq / 3.0).sqrt();
        assert!((oracle - (0.5 + PI * PI / 2.0).sqrt()).abs() < 1e-10);

        let g = Arc::new(Grid::interval(0.0, 1.0, 201).unwrap());
        let f = Field::from_fn(g, |x| (PI * x[0]).sin());
        assert!((f.sobolev_norm() - oracle).abs() < 1e-2);
    }

    #[test]
    fn zero_extension_outside_closure() {
        let g = Arc::new(Grid::rectangle((0.0, 1.0), (0.0, 2.0), 5).unwrap());
        let f = Field::constant(g, 3.0);
        assert_eq!(f.eval(&[-0.01, 1.0]), 0.0);
        assert_eq!(f.eval(&[0.5, 2.0001]), 0.0);
        assert_relative_eq!(f.eval(&[0.3, 1.7]), 3.0, epsilon = 1e-14);
        assert_relative_eq!(f.eval(&[1.0, 2.0]), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn trapezoid_integrates_linear_fields_exactly() {
        let g = Arc::new(Grid::rectangle((0.0, 2.0), (1.0, 2.0), 7).unwrap());
        let f = Field::from_fn(g.clone(), |x| 1.0 + x[0] + 2.0 * x[1]);
        // ∫_0^2 ∫_1^2 (1 + x + 2y) dy dx = 2 + 2 + 6
        assert_relative_eq!(f.integrate(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(g.measure(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn shifted_respects_box() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 4).unwrap();
        assert_eq!(g.shifted(0, [-1, 0]), None);
        assert_eq!(g.shifted(0, [1, 1]), Some(5));
        assert_eq!(g.shifted(15, [0, 1]), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn l2_bounded_by_sobolev_and_homogeneous(
                vals in prop::collection::vec(-10.0f64..10.0, 21),
                c in -5.0f64..5.0,
            ) {
                let g = Grid::interval(-1.0, 2.0, 21).unwrap();
                prop_assert!(g.l2_norm(&vals) <= g.sobolev_norm(&vals));
                let scaled: Vec<f64> = vals.iter().map(|v| c * v).collect();
                let lhs = g.l2_norm(&scaled);
                let rhs = c.abs() * g.l2_norm(&vals);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
            }
        }
    }
}
