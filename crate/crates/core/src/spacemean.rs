//! Ball averaging `Ȳ(x) = G(x, Y)`, its transpose (the dual kernel) and the
//! coverage fraction `v_D(x) = V((x + K_θ) ∩ D) / V(K_θ)`.
//!
//! The discrete kernel uses the cell-centre-in-ball rule: a neighbour at index
//! offset `d` contributes `cell_volume / V(K_θ)` when `|d·h| < θ`. Neighbours
//! outside the grid are dropped, which realises the zero extension of the
//! state outside `D̄` (no renormalisation near the boundary).

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// How `∇̄*_φ H` is formed from the pointwise slope field `∂H/∂ȳ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualMode {
    /// Transpose of the averaging table: `(1/V)∫_{(x+K_θ)∩D} c(y) dy`.
    #[default]
    Exact,
    /// `v_D(x)·c(x)`, exact only for spatially constant slopes.
    CoverageWeighted,
}

#[derive(Debug, Clone)]
pub struct BallKernel {
    grid: Arc<Grid>,
    theta: f64,
    ball_volume: f64,
    weight: f64,
    offsets: Vec<[isize; 2]>,
    coverage: Vec<f64>,
}

impl BallKernel {
    pub fn new(grid: Arc<Grid>, theta: f64) -> Result<Self> {
        if !theta.is_finite() || theta <= 0.0 {
            return Err(Error::NonPositiveRadius(theta));
        }
        let dim = grid.dim();
        let reach: Vec<isize> = (0..2)
            .map(|k| if k < dim { (theta / grid.h(k)).ceil() as isize } else { 0 })
            .collect();
        // strict inequality |d·h| < θ, guarded against round-off at equality
        let limit = theta * theta * (1.0 - 1e-10);
        let mut offsets = Vec::new();
        for d0 in -reach[0]..=reach[0] {
            for d1 in -reach[1]..=reach[1] {
                let x0 = d0 as f64 * grid.h(0);
                let x1 = if dim > 1 { d1 as f64 * grid.h(1) } else { 0.0 };
                if x0 * x0 + x1 * x1 < limit {
                    offsets.push([d0, d1]);
                }
            }
        }
        if offsets.len() <= 1 {
            return Err(Error::RadiusBelowResolution { theta, h: grid.h_min() });
        }
        let ball_volume = ball_volume(dim, theta);
        let weight = grid.cell_volume() / ball_volume;
        let coverage = coverage_values(&grid, theta);
        Ok(Self { grid, theta, ball_volume, weight, offsets, coverage })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `V(K_θ)`: `2θ` in 1D, `πθ²` in 2D.
    pub fn ball_volume(&self) -> f64 {
        self.ball_volume
    }

    /// Common weight `cell_volume / V(K_θ)` of every stencil entry.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Index offsets of the stencil, centre included.
    pub fn offsets(&self) -> &[[isize; 2]] {
        &self.offsets
    }

    /// Stencil row of `node`: neighbours inside the grid with their weights.
    pub fn row(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.offsets
            .iter()
            .filter_map(move |&d| self.grid.shifted(node, d).map(|j| (j, self.weight)))
    }

    /// Analytic coverage fraction at every node.
    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    /// `Ȳ = G(·, f)` on raw nodal values.
    pub fn average(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.grid.len());
        (0..f.len()).map(|x| self.row(x).map(|(y, w)| w * f[y]).sum()).collect()
    }

    /// Exact transpose of [`average`](Self::average), assembled by scattering
    /// each row instead of relying on the stencil symmetry.
    pub fn average_transpose(&self, psi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(psi.len(), self.grid.len());
        let mut out = vec![0.0; psi.len()];
        for (x, &px) in psi.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for (y, w) in self.row(x) {
                out[y] += w * px;
            }
        }
        out
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.same_grid(&self.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        Field::new(self.grid.clone(), self.average(f.values()))
    }

    pub fn apply_dual(&self, psi: &Field) -> Result<Field> {
        self.check(psi)?;
        Field::new(self.grid.clone(), self.average_transpose(psi.values()))
    }

    /// `∇̄*_φ` applied to a slope field on raw values.
    pub fn averaged_dual_values(&self, c: &[f64], mode: DualMode) -> Vec<f64> {
        match mode {
            DualMode::Exact => self.average_transpose(c),
            DualMode::CoverageWeighted => {
                c.iter().zip(&self.coverage).map(|(ci, v)| ci * v).collect()
            }
        }
    }

    pub fn averaged_dual(&self, c: &Field, mode: DualMode) -> Result<Field> {
        self.check(c)?;
        Field::new(self.grid.clone(), self.averaged_dual_values(c.values(), mode))
    }
}

pub fn ball_volume(dim: usize, theta: f64) -> f64 {
    match dim {
        1 => 2.0 * theta,
        _ => PI * theta * theta,
    }
}

/// Coverage fraction `v_D` from the exact ball–box intersection volume.
pub fn coverage(grid: Arc<Grid>, theta: f64) -> Result<Field> {
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::NonPositiveRadius(theta));
    }
    let values = coverage_values(&grid, theta);
    Field::new(grid, values)
}

fn coverage_values(grid: &Grid, theta: f64) -> Vec<f64> {
    let v = ball_volume(grid.dim(), theta);
    (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            let inter = match grid.dim() {
                1 if x[0] - theta >= grid.lower(0) && x[0] + theta <= grid.upper(0) => v,
                1 => ((x[0] + theta).min(grid.upper(0)) - (x[0] - theta).max(grid.lower(0))).max(0.0),
                _ => disc_box_area(
                    (x[0], x[1]),
                    theta,
                    (grid.lower(0), grid.upper(0)),
                    (grid.lower(1), grid.upper(1)),
                ),
            };
            (inter / v).clamp(0.0, 1.0)
        })
        .collect()
}

/// Area of the disc of radius `r` around `c` intersected with the rectangle
/// `xs × ys`, integrated piecewise in closed form.
pub fn disc_box_area(c: (f64, f64), r: f64, xs: (f64, f64), ys: (f64, f64)) -> f64 {
    let (cx, cy) = c;
    if cx - r >= xs.0 && cx + r <= xs.1 && cy - r >= ys.0 && cy + r <= ys.1 {
        return PI * r * r;
    }
    let a = (cx - r).max(xs.0);
    let b = (cx + r).min(xs.1);
    if a >= b {
        return 0.0;
    }
    let mut cuts = vec![a, b];
    for yb in [ys.0, ys.1] {
        let d = yb - cy;
        if d.abs() < r {
            let s = (r * r - d * d).sqrt();
            for x in [cx - s, cx + s] {
                if x > a && x < b {
                    cuts.push(x);
                }
            }
        }
    }
    cuts.sort_by(|p, q| p.total_cmp(q));

    let half_chord = |x: f64| (r * r - (x - cx).powi(2)).max(0.0).sqrt();
    // antiderivative of the half chord length
    let prim = |x: f64| {
        let u = ((x - cx) / r).clamp(-1.0, 1.0);
        0.5 * ((x - cx) * half_chord(x) + r * r * u.asin())
    };

    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (l, u) = (w[0], w[1]);
        if u <= l {
            continue;
        }
        let mid = 0.5 * (l + u);
        let s = half_chord(mid);
        let top_is_circle = cy + s < ys.1;
        let bottom_is_circle = cy - s > ys.0;
        let top_mid = if top_is_circle { cy + s } else { ys.1 };
        let bottom_mid = if bottom_is_circle { cy - s } else { ys.0 };
        if top_mid <= bottom_mid {
            continue;
        }
        // heights measured from the centre line to avoid cancellation
        let chord = prim(u) - prim(l);
        let top = if top_is_circle { chord } else { (ys.1 - cy) * (u - l) };
        let bottom = if bottom_is_circle { -chord } else { (ys.0 - cy) * (u - l) };
        area += top - bottom;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_interval(n: usize) -> Arc<Grid> {
        Arc::new(Grid::interval(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn one_dimensional_stencil() {
        let k = BallKernel::new(unit_interval(101), 0.05).unwrap();
        let mut d: Vec<isize> = k.offsets().iter().map(|o| o[0]).collect();
        d.sort();
        assert_eq!(d, (-4..=4).collect::<Vec<_>>());
        assert_relative_eq!(k.ball_volume(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn two_dimensional_disc_stencil() {
        let g = Arc::new(Grid::rectangle((0.0, 1.0), (0.0, 1.0), 11).unwrap());
        let k = BallKernel::new(g, 0.15).unwrap();
        let mut offs = k.offsets().to_vec();
        offs.sort();
        let mut expected = Vec::new();
        for a in -1..=1 {
            for b in -1..=1 {
                expected.push([a, b]);
            }
        }
        assert_eq!(offs, expected);
    }

    #[test]
    fn invalid_radii() {
        let g = unit_interval(101);
        assert!(matches!(BallKernel::new(g.clone(), 0.0), Err(Error::NonPositiveRadius(_))));
        assert!(matches!(BallKernel::new(g.clone(), -1.0), Err(Error::NonPositiveRadius(_))));
        assert!(matches!(
            BallKernel::new(g.clone(), 0.005),
            Err(Error::RadiusBelowResolution { .. })
        ));
        assert!(matches!(
            BallKernel::new(g, 0.01),
            Err(Error::RadiusBelowResolution { .. })
        ));
    }

    #[test]
    fn average_of_constant_and_zero() {
        let g = unit_interval(201);
        let k = BallKernel::new(g.clone(), 0.1).unwrap();
        let c = k.apply(&Field::constant(g.clone(), 3.0)).unwrap();
        let mid = 100;
        // (2θ/h - 1) cells of width h over 2θ: within one cell of the exact value
        assert!((c.values()[mid] - 3.0).abs() <= 3.0 * g.h(0) / 0.1);
        let z = k.apply(&Field::zeros(g)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn average_of_indicator_against_quadrature_oracle() {
        // oracle: midpoint rule for (1/2θ)∫_{x-θ}^{x+θ} 1_{(0,0.5)}(y) dy at x = 0.5
        let theta = 0.1;
        let n = 100_000;
        let oracle: f64 = (0..n)
            .map(|i| {
                let y = 0.4 + (i as f64 + 0.5) * (2.0 * theta / n as f64);
                if y > 0.0 && y < 0.5 { 1.0 } else { 0.0 }
            })
            .sum::<f64>()
            / n as f64;
        assert!((oracle - 0.5).abs() < 1e-9);

        let g = unit_interval(201);
        let k = BallKernel::new(g.clone(), theta).unwrap();
        let f = Field::from_fn(g.clone(), |x| if x[0] > 0.0 && x[0] < 0.5 { 1.0 } else { 0.0 });
        let gf = k.apply(&f).unwrap();
        assert!((gf.values()[100] - oracle).abs() <= 2.0 * g.h(0) / theta);
    }

    #[test]
    fn dual_matches_brute_force_double_sum() {
        let g = Arc::new(Grid::rectangle((0.0, 1.0), (0.0, 1.0), 17).unwrap());
        let theta = 0.2;
        let k = BallKernel::new(g.clone(), theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = g.len();
        for _ in 0..5 {
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let psi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            // brute force over all node pairs from the geometric definition
            let mut brute = 0.0;
            for x in 0..n {
                let cx = g.coords(x);
                for y in 0..n {
                    let cy = g.coords(y);
                    let d2 = (cx[0] - cy[0]).powi(2) + (cx[1] - cy[1]).powi(2);
                    if d2 < theta * theta * (1.0 - 1e-10) {
                        brute += k.weight() * f[y] * psi[x];
                    }
                }
            }
            brute *= g.cell_volume();
            let lhs = g.dot(&k.average(&f), &psi);
            let rhs = g.dot(&f, &k.average_transpose(&psi));
            let scale = g.l2_norm(&f) * g.l2_norm(&psi);
            assert!((lhs - rhs).abs() <= 1e-12 * scale);
            assert!((lhs - brute).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn dual_of_delta_is_ball_indicator() {
        let g = unit_interval(101);
        let k = BallKernel::new(g.clone(), 0.05).unwrap();
        let mut delta = vec![0.0; g.len()];
        delta[50] = 1.0;
        let out = k.average_transpose(&delta);
        for (i, v) in out.iter().enumerate() {
            let expected = if (i as isize - 50).abs() <= 4 { g.cell_volume() / 0.1 } else { 0.0 };
            assert_relative_eq!(*v, expected, epsilon = 1e-15);
        }
        assert!(k.average_transpose(&vec![0.0; g.len()]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coverage_reference_values() {
        let g = unit_interval(101);
        let v = coverage(g.clone(), 0.1).unwrap();
        assert_eq!(v.values()[50], 1.0);
        assert_eq!(v.values()[0], 0.5);
        let sq = Arc::new(Grid::rectangle((0.0, 1.0), (0.0, 1.0), 11).unwrap());
        let v2 = coverage(sq, 0.1).unwrap();
        assert_relative_eq!(v2.values()[0], 0.25, epsilon = 1e-12);
        assert!(matches!(coverage(g, 0.0), Err(Error::NonPositiveRadius(_))));
    }

    #[test]
    fn disc_box_area_against_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = (rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2));
            let r = rng.random_range(0.05..0.6);
            let exact = disc_box_area(c, r, (0.0, 1.0), (0.0, 0.7));
            // 400x400 midpoint grid over the bounding square
            let n = 400;
            let mut hits = 0usize;
            for i in 0..n {
                for j in 0..n {
                    let x = c.0 - r + (i as f64 + 0.5) * 2.0 * r / n as f64;
                    let y = c.1 - r + (j as f64 + 0.5) * 2.0 * r / n as f64;
                    let inside = (x - c.0).powi(2) + (y - c.1).powi(2) < r * r;
                    if inside && (0.0..=1.0).contains(&x) && (0.0..=0.7).contains(&y) {
                        hits += 1;
                    }
                }
            }
            let approx = hits as f64 * (2.0 * r / n as f64).powi(2);
            assert!((exact - approx).abs() < 2e-2 * PI * r * r, "{exact} vs {approx}");
        }
    }

    #[test]
    fn averaged_dual_modes() {
        let g = unit_interval(1001);
        let k = BallKernel::new(g.clone(), 0.1).unwrap();
        let one = Field::constant(g.clone(), 1.0);
        let v = coverage(g.clone(), 0.1).unwrap();
        for mode in [DualMode::Exact, DualMode::CoverageWeighted] {
            let out = k.averaged_dual(&one, mode).unwrap();
            for (a, b) in out.values().iter().zip(v.values()) {
                assert!((a - b).abs() <= 2.0 * g.h(0) / 0.1);
            }
        }

        // oracle: (1/0.2)∫_0^{0.15} y dy by the midpoint rule
        let n = 100_000;
        let hq = 0.15 / n as f64;
        let oracle: f64 = (0..n).map(|i| (i as f64 + 0.5) * hq).sum::<f64>() * hq / 0.2;
        assert!((oracle - 0.05625).abs() < 1e-10);

        let c = Field::from_fn(g.clone(), |x| x[0]);
        let exact = k.averaged_dual(&c, DualMode::Exact).unwrap();
        let point = k.averaged_dual(&c, DualMode::CoverageWeighted).unwrap();
        // cell-centre stencil carries an O(h/θ) mass defect
        let tol = 2.0 * g.h(0) / 0.1;
        assert!((exact.values()[500] - 0.5).abs() < tol);
        assert!((point.values()[500] - 0.5).abs() < 1e-12);
        // near the face |c| ≤ 0.15 on the ball
        let tol_face = 0.15 * tol;
        assert!((exact.values()[50] - oracle).abs() < tol_face);
        assert!((exact.values()[50] - point.values()[50]).abs() > 5.0 * tol_face);
        assert!((point.values()[50] - 0.0375).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let k = BallKernel::new(unit_interval(101), 0.05).unwrap();
        let other = Field::zeros(unit_interval(51));
        assert!(matches!(k.apply(&other), Err(Error::GridMismatch)));
        assert!(matches!(k.apply_dual(&other), Err(Error::GridMismatch)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn contraction_and_linearity(
                f in prop::collection::vec(-5.0f64..5.0, 81),
                g2 in prop::collection::vec(-5.0f64..5.0, 81),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
                mult in 5usize..20,
            ) {
                let grid = Arc::new(Grid::interval(0.0, 1.0, 81).unwrap());
                let theta = mult as f64 * grid.h(0);
                let k = BallKernel::new(grid.clone(), theta).unwrap();
                let gf = k.average(&f);
                let bound = grid.l2_norm(&f) * (1.0 + grid.h(0) / theta);
                prop_assert!(grid.l2_norm(&gf) <= bound + 1e-12);

                let combo: Vec<f64> = f.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
                let lhs = k.average(&combo);
                let gg = k.average(&g2);
                for i in 0..lhs.len() {
                    let rhs = a * gf[i] + b * gg[i];
                    prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
                }
            }

            #[test]
            fn coverage_bounds(theta in 0.02f64..0.6) {
                let grid = Arc::new(Grid::rectangle((0.0, 1.0), (0.0, 1.5), 13).unwrap());
                let v = coverage(grid.clone(), theta).unwrap();
                for (i, &vi) in v.values().iter().enumerate() {
                    prop_assert!((0.0..=1.0).contains(&vi));
                    let x = grid.coords(i);
                    let dist = x[0].min(1.0 - x[0]).min(x[1]).min(1.5 - x[1]);
                    if dist > theta {
                        prop_assert!((vi - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
