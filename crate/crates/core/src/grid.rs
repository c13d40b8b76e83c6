//! Uniform periodic grids on the unit torus and the vectors living on them.
//!
//! A 1-D grid with n nodes places x_i = i/n for i = 1..n with spacing
//! h = 1/n; indices wrap around, so node 0 is node n and node n+1 is node 1.
//! The 2-D grid is the tensor square of the 1-D one with the same wraparound
//! in each direction. Only n is stored; h is always derived from it.

use crate::error::MfgError;

/// Uniform periodic grid on the unit interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicGrid1D {
    n: usize,
}

impl PeriodicGrid1D {
    /// A grid with nodes i/n, i = 1..n. Needs n >= 3 so every node has two
    /// distinct neighbours.
    pub fn new(n: usize) -> Result<Self, MfgError> {
        if n < 3 {
            return Err(MfgError::GridTooSmall(n));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Node spacing, derived from n and never stored separately.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Coordinate of node i, for i in 1..=n.
    pub fn node(&self, i: usize) -> f64 {
        assert!(i >= 1 && i <= self.n, "node index {i} out of range 1..={}", self.n);
        i as f64 * self.h()
    }

    /// Cyclic successor of node i.
    #[inline]
    pub fn next(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.n);
        if i == self.n {
            1
        } else {
            i + 1
        }
    }

    /// Cyclic predecessor of node i.
    #[inline]
    pub fn prev(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.n);
        if i == 1 {
            self.n
        } else {
            i - 1
        }
    }
}

/// Backward/forward difference pair at a node: p = (u_i - u_{i+1})/h,
/// q = (u_i - u_{i-1})/h.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StencilPair {
    pub p: f64,
    pub q: f64,
}

/// Real-valued function sampled on a 1-D periodic grid, indexed 1..=n.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction1D {
    grid: PeriodicGrid1D,
    values: Vec<f64>,
}

impl GridFunction1D {
    /// Wraps a vector of node values; every entry must be finite.
    pub fn new(grid: PeriodicGrid1D, values: Vec<f64>) -> Result<Self, MfgError> {
        if values.len() != grid.n() {
            return Err(MfgError::LengthMismatch { expected: grid.n(), got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NonFiniteValue { index: k + 1 });
        }
        Ok(Self { grid, values })
    }

    /// Samples f at the grid nodes.
    pub fn from_fn(grid: PeriodicGrid1D, f: impl Fn(f64) -> f64) -> Result<Self, MfgError> {
        let values = (1..=grid.n()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, values)
    }

    /// The zero function.
    pub fn zeros(grid: PeriodicGrid1D) -> Self {
        Self { grid, values: vec![0.0; grid.n()] }
    }

    /// The constant-one function.
    pub fn ones(grid: PeriodicGrid1D) -> Self {
        Self { grid, values: vec![1.0; grid.n()] }
    }

    pub fn grid(&self) -> PeriodicGrid1D {
        self.grid
    }

    /// Value at node i, for i in 1..=n.
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i - 1] = v;
    }

    /// Node values in index order 1..n.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Upwind difference pair of u at node i.
pub fn stencil(u: &GridFunction1D, i: usize) -> StencilPair {
    let g = u.grid();
    assert!(i >= 1 && i <= g.n(), "stencil index {i} out of range 1..={}", g.n());
    let inv_h = g.n() as f64;
    StencilPair {
        p: (u.get(i) - u.get(g.next(i))) * inv_h,
        q: (u.get(i) - u.get(g.prev(i))) * inv_h,
    }
}

/// Trapezoidal mass h * sum of node values (exact for the periodic rule).
pub fn mass(f: &GridFunction1D) -> f64 {
    f.grid().h() * f.values().iter().sum::<f64>()
}

/// Subtracts the nodal mean, returning the projection onto mean-zero vectors.
pub fn mean_zero_project(f: &GridFunction1D) -> GridFunction1D {
    let mut out = f.clone();
    mean_zero_project_in_place(out.values_mut());
    out
}

/// In-place variant used in the flow inner loops.
pub(crate) fn mean_zero_project_in_place(values: &mut [f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in values.iter_mut() {
        *v -= mean;
    }
}

/// Grid-weighted l2 norm sqrt(h * sum f_i^2) and the max norm.
pub fn norms(f: &GridFunction1D) -> (f64, f64) {
    let l2 = (f.grid().h() * f.values().iter().map(|v| v * v).sum::<f64>()).sqrt();
    (l2, f.max_abs())
}

/// Uniform periodic grid on the unit square, n nodes per direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicGrid2D {
    n: usize,
}

impl PeriodicGrid2D {
    pub fn new(n: usize) -> Result<Self, MfgError> {
        if n < 3 {
            return Err(MfgError::GridTooSmall(n));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        assert!(i >= 1 && i <= self.n, "node index {i} out of range 1..={}", self.n);
        i as f64 * self.h()
    }

    #[inline]
    pub fn next(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.n);
        if i == self.n {
            1
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn prev(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.n);
        if i == 1 {
            self.n
        } else {
            i - 1
        }
    }
}

/// Function on the 2-D periodic grid, stored row-major with the x index
/// fastest: entry (i, j) sits at (j-1)*n + (i-1).
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction2D {
    grid: PeriodicGrid2D,
    values: Vec<f64>,
}

impl GridFunction2D {
    pub fn new(grid: PeriodicGrid2D, values: Vec<f64>) -> Result<Self, MfgError> {
        let n2 = grid.n() * grid.n();
        if values.len() != n2 {
            return Err(MfgError::LengthMismatch { expected: n2, got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NonFiniteValue { index: k + 1 });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: PeriodicGrid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self, MfgError> {
        let n = grid.n();
        let mut values = Vec::with_capacity(n * n);
        for j in 1..=n {
            for i in 1..=n {
                values.push(f(grid.node(i), grid.node(j)));
            }
        }
        Self::new(grid, values)
    }

    pub fn zeros(grid: PeriodicGrid2D) -> Self {
        Self { grid, values: vec![0.0; grid.n() * grid.n()] }
    }

    pub fn grid(&self) -> PeriodicGrid2D {
        self.grid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(j - 1) * self.grid.n() + (i - 1)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[(j - 1) * self.grid.n() + (i - 1)] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Difference pair of w along the x direction at node (i, j).
pub fn stencil2_x(w: &GridFunction2D, i: usize, j: usize) -> StencilPair {
    let g = w.grid();
    assert!(i >= 1 && i <= g.n() && j >= 1 && j <= g.n(), "stencil index ({i}, {j}) out of range");
    let inv_h = g.n() as f64;
    StencilPair {
        p: (w.get(i, j) - w.get(g.next(i), j)) * inv_h,
        q: (w.get(i, j) - w.get(g.prev(i), j)) * inv_h,
    }
}

/// Difference pair of w along the y direction at node (i, j).
pub fn stencil2_y(w: &GridFunction2D, i: usize, j: usize) -> StencilPair {
    let g = w.grid();
    assert!(i >= 1 && i <= g.n() && j >= 1 && j <= g.n(), "stencil index ({i}, {j}) out of range");
    let inv_h = g.n() as f64;
    StencilPair {
        p: (w.get(i, j) - w.get(i, g.next(j))) * inv_h,
        q: (w.get(i, j) - w.get(i, g.prev(j))) * inv_h,
    }
}

/// 2-D mass h^2 * sum of node values.
pub fn mass2(f: &GridFunction2D) -> f64 {
    let h = f.grid().h();
    h * h * f.values().iter().sum::<f64>()
}

pub fn mean_zero_project2(f: &GridFunction2D) -> GridFunction2D {
    let mut out = f.clone();
    mean_zero_project_in_place(out.values_mut());
    out
}

/// Grid-weighted l2 norm sqrt(h^2 * sum f_ij^2) and the max norm.
pub fn norms2(f: &GridFunction2D) -> (f64, f64) {
    let h = f.grid().h();
    let l2 = (h * h * f.values().iter().map(|v| v * v).sum::<f64>()).sqrt();
    (l2, f.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gf(n: usize, values: &[f64]) -> GridFunction1D {
        GridFunction1D::new(PeriodicGrid1D::new(n).unwrap(), values.to_vec()).unwrap()
    }

    #[test]
    fn nodes_and_spacing() {
        let g = PeriodicGrid1D::new(4).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.node(1), 0.25);
        assert_eq!(g.node(4), 1.0);
        assert!(PeriodicGrid1D::new(2).is_err());
    }

    #[test]
    fn wraparound_neighbours() {
        let g = PeriodicGrid1D::new(5).unwrap();
        assert_eq!(g.next(5), 1);
        assert_eq!(g.prev(1), 5);
        assert_eq!(g.next(2), 3);
        assert_eq!(g.prev(3), 2);
    }

    #[test]
    fn stencil_hand_values() {
        // n = 4, u = (1,2,3,4): neighbours of node 1 are u_2 = 2 and u_0 = u_4 = 4.
        let u = gf(4, &[1.0, 2.0, 3.0, 4.0]);
        let s1 = stencil(&u, 1);
        assert_eq!((s1.p, s1.q), (-4.0, -12.0));
        let s4 = stencil(&u, 4);
        assert_eq!((s4.p, s4.q), (12.0, 4.0));
    }

    #[test]
    fn stencil_of_constant_vanishes() {
        let u = gf(7, &[3.5; 7]);
        for i in 1..=7 {
            let s = stencil(&u, i);
            assert_eq!((s.p, s.q), (0.0, 0.0));
        }
    }

    #[test]
    fn stencil_matches_doubly_extended_vector() {
        // Same differences computed on [u_n, u_1..u_n, u_1] without wraparound.
        let vals = [0.3, -1.2, 2.7, 0.05, -0.9, 1.4];
        let n = vals.len();
        let u = gf(n, &vals);
        let mut ext = Vec::with_capacity(n + 2);
        ext.push(vals[n - 1]);
        ext.extend_from_slice(&vals);
        ext.push(vals[0]);
        let h = 1.0 / n as f64;
        for i in 1..=n {
            let s = stencil(&u, i);
            assert!((s.p - (ext[i] - ext[i + 1]) / h).abs() < 1e-13);
            assert!((s.q - (ext[i] - ext[i - 1]) / h).abs() < 1e-13);
        }
    }

    #[test]
    fn mass_values() {
        assert_eq!(mass(&GridFunction1D::ones(PeriodicGrid1D::new(4).unwrap())), 1.0);
        assert_eq!(mass(&gf(4, &[3.0, 1.0, 3.0, 1.0])), 2.0);
        assert_eq!(mass(&GridFunction1D::zeros(PeriodicGrid1D::new(5).unwrap())), 0.0);
    }

    #[test]
    fn mean_zero_examples() {
        let p = mean_zero_project(&gf(4, &[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(p.values(), &[0.0; 4]);
        let q = mean_zero_project(&gf(4, &[2.0, 0.0, 2.0, 0.0]));
        assert_eq!(q.values(), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn mean_zero_is_idempotent_and_linear() {
        let f = gf(6, &[0.4, -2.0, 3.1, 0.0, 5.5, -1.3]);
        let g = gf(6, &[1.0, 2.0, -0.5, 0.25, -4.0, 0.0]);
        let once = mean_zero_project(&f);
        let twice = mean_zero_project(&once);
        for i in 1..=6 {
            assert!((once.get(i) - twice.get(i)).abs() < 1e-15);
        }
        // P(2f + 3g) = 2 Pf + 3 Pg
        let comb = GridFunction1D::new(
            f.grid(),
            (0..6).map(|k| 2.0 * f.values()[k] + 3.0 * g.values()[k]).collect(),
        )
        .unwrap();
        let lhs = mean_zero_project(&comb);
        let pf = mean_zero_project(&f);
        let pg = mean_zero_project(&g);
        for i in 1..=6 {
            assert!((lhs.get(i) - (2.0 * pf.get(i) + 3.0 * pg.get(i))).abs() < 1e-14);
        }
    }

    #[test]
    fn norm_values() {
        let (l2, linf) = norms(&GridFunction1D::ones(PeriodicGrid1D::new(8).unwrap()));
        assert!((l2 - 1.0).abs() < 1e-15);
        assert_eq!(linf, 1.0);
        let (l2, linf) = norms(&gf(4, &[2.0, 0.0, 0.0, 0.0]));
        assert!((l2 - 1.0).abs() < 1e-15);
        assert_eq!(linf, 2.0);
        let (l2, linf) = norms(&GridFunction1D::zeros(PeriodicGrid1D::new(4).unwrap()));
        assert_eq!((l2, linf), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_vectors() {
        let g = PeriodicGrid1D::new(4).unwrap();
        assert!(GridFunction1D::new(g, vec![1.0; 3]).is_err());
        assert!(GridFunction1D::new(g, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn two_d_storage_order_and_stencils() {
        let g = PeriodicGrid2D::new(3).unwrap();
        // f(x, y) = x + 10 y at nodes 1/3, 2/3, 1.
        let f = GridFunction2D::from_fn(g, |x, y| x + 10.0 * y).unwrap();
        assert!((f.get(2, 1) - (2.0 / 3.0 + 10.0 / 3.0)).abs() < 1e-15);
        // x stencil at (3, 2) wraps to i = 1.
        let s = stencil2_x(&f, 3, 2);
        assert!((s.p - (1.0 - 1.0 / 3.0) * 3.0).abs() < 1e-12);
        assert!((s.q - (1.0 - 2.0 / 3.0) * 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_d_reduces_to_one_d_on_constant_in_y() {
        let n = 6;
        let g1 = PeriodicGrid1D::new(n).unwrap();
        let g2 = PeriodicGrid2D::new(n).unwrap();
        let f1 = GridFunction1D::from_fn(g1, |x| (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        let f2 = GridFunction2D::from_fn(g2, |x, _| (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        for j in 1..=n {
            for i in 1..=n {
                let sx = stencil2_x(&f2, i, j);
                let s1 = stencil(&f1, i);
                assert!((sx.p - s1.p).abs() < 1e-12);
                assert!((sx.q - s1.q).abs() < 1e-12);
                let sy = stencil2_y(&f2, i, j);
                assert_eq!((sy.p, sy.q), (0.0, 0.0));
            }
        }
        assert!((mass2(&f2) - mass(&f1)).abs() < 1e-14);
        let (l2a, la) = norms2(&f2);
        let (l2b, lb) = norms(&f1);
        assert!((l2a - l2b).abs() < 1e-13);
        assert!((la - lb).abs() < 1e-15);
    }
}
