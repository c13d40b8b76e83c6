//! The discrete Hamiltonian and the operators built from it.
//!
//! At each node the scheme evaluates F(p, q, x) = FQ(p, q) + FD(p, q, x) + V(x)
//! on the upwind difference pair (p, q) of the value function, where
//!
//!   FQ(p, q) = max(p, q, 0)^2 / 2,
//!   FD(p, q, x) = -b(x) p  if b(x) <= 0,  b(x) q  otherwise.
//!
//! FQ is jointly convex and nondecreasing in each slot, FD is linear with
//! nonnegative coefficients, and F(-p, p, x) = p^2/2 + b(x) p + V(x), so the
//! scheme is consistent with the quadratic Hamiltonian with drift b.
//! G maps a discrete value function u to the nodal values F(stencil(u), x);
//! L_u is the derivative of G at u and its adjoint transports densities, with
//! columns summing to zero so total mass is conserved.
//!
//! At the kink of the max the gradient takes the p slot on ties and (0, 0)
//! when the max is attained at 0; both choices are subgradients, which is
//! what the monotonicity of the coupled operator relies on.

use crate::error::MfgError;
use crate::grid::{
    stencil, GridFunction1D, GridFunction2D, PeriodicGrid1D, PeriodicGrid2D, StencilPair,
};

/// Model variant: the standard coupling or the congestion one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Standard,
    Congestion,
}

/// Partial derivatives of the Hamiltonian in the two difference slots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradPair {
    pub dp: f64,
    pub dq: f64,
}

/// Potential, drift and variant defining a 1-D problem instance.
#[derive(Clone, Debug)]
pub struct ProblemData1D {
    v: GridFunction1D,
    b: GridFunction1D,
    variant: Variant,
}

impl ProblemData1D {
    /// Bundles sampled potential and drift. The congestion variant has no
    /// drift term, so it requires b to vanish identically.
    pub fn new(v: GridFunction1D, b: GridFunction1D, variant: Variant) -> Result<Self, MfgError> {
        if v.grid() != b.grid() {
            return Err(MfgError::GridMismatch(v.grid().n(), b.grid().n()));
        }
        if variant == Variant::Congestion && b.values().iter().any(|&x| x != 0.0) {
            return Err(MfgError::InvalidConfig(
                "the congestion variant does not support a drift term".into(),
            ));
        }
        Ok(Self { v, b, variant })
    }

    /// Samples potential and drift on a fresh grid with n nodes.
    pub fn from_fns(
        n: usize,
        vf: impl Fn(f64) -> f64,
        bf: impl Fn(f64) -> f64,
        variant: Variant,
    ) -> Result<Self, MfgError> {
        let grid = PeriodicGrid1D::new(n)?;
        let v = GridFunction1D::from_fn(grid, vf)?;
        let b = GridFunction1D::from_fn(grid, bf)?;
        Self::new(v, b, variant)
    }

    pub fn grid(&self) -> PeriodicGrid1D {
        self.v.grid()
    }

    pub fn v(&self) -> &GridFunction1D {
        &self.v
    }

    pub fn b(&self) -> &GridFunction1D {
        &self.b
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

/// Potential defining a 2-D problem instance (standard variant, no drift).
#[derive(Clone, Debug)]
pub struct ProblemData2D {
    w: GridFunction2D,
}

impl ProblemData2D {
    pub fn new(w: GridFunction2D) -> Self {
        Self { w }
    }

    pub fn from_fn(n: usize, wf: impl Fn(f64, f64) -> f64) -> Result<Self, MfgError> {
        let grid = PeriodicGrid2D::new(n)?;
        Ok(Self::new(GridFunction2D::from_fn(grid, wf)?))
    }

    pub fn grid(&self) -> PeriodicGrid2D {
        self.w.grid()
    }

    pub fn w(&self) -> &GridFunction2D {
        &self.w
    }
}

/// Quadratic part max(p, q, 0)^2 / 2.
pub fn fq(s: StencilPair) -> f64 {
    let m = s.p.max(s.q).max(0.0);
    0.5 * m * m
}

/// Gradient of the quadratic part; on the tie p = q > 0 the p slot wins, and
/// the zero branch returns (0, 0). Both are subgradients.
pub fn fq_grad(s: StencilPair) -> GradPair {
    let m = s.p.max(s.q).max(0.0);
    if m == 0.0 {
        GradPair { dp: 0.0, dq: 0.0 }
    } else if s.p >= s.q {
        GradPair { dp: m, dq: 0.0 }
    } else {
        GradPair { dp: 0.0, dq: m }
    }
}

/// Drift part and its (constant) gradient. The sign split keeps both
/// coefficients nonnegative, which upwinds the transport direction.
pub fn fd_and_grad(s: StencilPair, b_val: f64) -> (f64, GradPair) {
    if b_val <= 0.0 {
        (-b_val * s.p, GradPair { dp: -b_val, dq: 0.0 })
    } else {
        (b_val * s.q, GradPair { dp: 0.0, dq: b_val })
    }
}

#[inline]
fn knext(k: usize, n: usize) -> usize {
    if k + 1 == n {
        0
    } else {
        k + 1
    }
}

#[inline]
fn kprev(k: usize, n: usize) -> usize {
    if k == 0 {
        n - 1
    } else {
        k - 1
    }
}

/// G_k(u) = F(stencil_k(u), x_k) on raw 0-based slices.
pub(crate) fn g_values(u: &[f64], v: &[f64], b: &[f64], out: &mut [f64]) {
    let n = u.len();
    let inv_h = n as f64;
    for k in 0..n {
        let s = StencilPair {
            p: (u[k] - u[knext(k, n)]) * inv_h,
            q: (u[k] - u[kprev(k, n)]) * inv_h,
        };
        let (fd, _) = fd_and_grad(s, b[k]);
        out[k] = fq(s) + fd + v[k];
    }
}

/// Hamiltonian gradients (quadratic plus drift part) at every stencil of u.
pub(crate) fn hamiltonian_grads(u: &[f64], b: &[f64], dp: &mut [f64], dq: &mut [f64]) {
    let n = u.len();
    let inv_h = n as f64;
    for k in 0..n {
        let s = StencilPair {
            p: (u[k] - u[knext(k, n)]) * inv_h,
            q: (u[k] - u[kprev(k, n)]) * inv_h,
        };
        let g = fq_grad(s);
        if b[k] <= 0.0 {
            dp[k] = g.dp - b[k];
            dq[k] = g.dq;
        } else {
            dp[k] = g.dp;
            dq[k] = g.dq + b[k];
        }
    }
}

/// Gradients of the quadratic part only (used by the congestion operator).
pub(crate) fn quadratic_grads(u: &[f64], dp: &mut [f64], dq: &mut [f64]) {
    let n = u.len();
    let inv_h = n as f64;
    for k in 0..n {
        let s = StencilPair {
            p: (u[k] - u[knext(k, n)]) * inv_h,
            q: (u[k] - u[kprev(k, n)]) * inv_h,
        };
        let g = fq_grad(s);
        dp[k] = g.dp;
        dq[k] = g.dq;
    }
}

/// FQ at every stencil of u.
pub(crate) fn fq_values(u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let inv_h = n as f64;
    for k in 0..n {
        let s = StencilPair {
            p: (u[k] - u[knext(k, n)]) * inv_h,
            q: (u[k] - u[kprev(k, n)]) * inv_h,
        };
        out[k] = fq(s);
    }
}

/// Adjoint transport (L_u^* w)_k from precomputed slot gradients:
/// (1/h) [ -dp_{k-1} w_{k-1} + (dp_k + dq_k) w_k - dq_{k+1} w_{k+1} ].
pub(crate) fn adjoint_from_grads(dp: &[f64], dq: &[f64], w: &[f64], out: &mut [f64]) {
    let n = w.len();
    let inv_h = n as f64;
    for k in 0..n {
        let km = kprev(k, n);
        let kp = knext(k, n);
        out[k] = inv_h * (-dp[km] * w[km] + (dp[k] + dq[k]) * w[k] - dq[kp] * w[kp]);
    }
}

fn assert_standard_1d(data: &ProblemData1D, who: &str) {
    assert!(
        data.variant == Variant::Standard,
        "{who} applies to the standard variant; use congestion_terms instead"
    );
}

/// Nodal Hamiltonian values G(u) for the standard variant.
pub fn g_apply(u: &GridFunction1D, data: &ProblemData1D) -> GridFunction1D {
    assert_standard_1d(data, "g_apply");
    assert_eq!(u.grid(), data.grid(), "u sampled on a different grid than the problem data");
    let mut out = GridFunction1D::zeros(u.grid());
    g_values(u.values(), data.v.values(), data.b.values(), out.values_mut());
    out
}

/// Directional derivative of G at u applied to v.
pub fn linearize_apply(
    u: &GridFunction1D,
    v: &GridFunction1D,
    data: &ProblemData1D,
) -> GridFunction1D {
    assert_standard_1d(data, "linearize_apply");
    assert_eq!(u.grid(), data.grid(), "u sampled on a different grid than the problem data");
    assert_eq!(v.grid(), data.grid(), "v sampled on a different grid than the problem data");
    let n = u.grid().n();
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    hamiltonian_grads(u.values(), data.b.values(), &mut dp, &mut dq);
    let mut out = GridFunction1D::zeros(u.grid());
    for i in 1..=n {
        let sv = stencil(v, i);
        out.set(i, dp[i - 1] * sv.p + dq[i - 1] * sv.q);
    }
    out
}

/// Adjoint of the linearization applied to the density w. Column sums of the
/// underlying matrix vanish, so sum((L_u^* w)_k) = 0 up to rounding.
pub fn adjoint_apply(
    u: &GridFunction1D,
    w: &GridFunction1D,
    data: &ProblemData1D,
) -> GridFunction1D {
    assert_standard_1d(data, "adjoint_apply");
    assert_eq!(u.grid(), data.grid(), "u sampled on a different grid than the problem data");
    assert_eq!(w.grid(), data.grid(), "w sampled on a different grid than the problem data");
    let n = u.grid().n();
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    hamiltonian_grads(u.values(), data.b.values(), &mut dp, &mut dq);
    let mut out = GridFunction1D::zeros(u.grid());
    adjoint_from_grads(&dp, &dq, w.values(), out.values_mut());
    out
}

/// 2-D Hamiltonian values: quadratic part per axis plus the potential,
/// G2_ij(w) = FQ(x-stencil) + FQ(y-stencil) + W_ij. Raw-slice kernel.
pub(crate) fn g2_values(w: &[f64], n: usize, wpot: &[f64], out: &mut [f64]) {
    let inv_h = n as f64;
    for j in 0..n {
        for i in 0..n {
            let c = j * n + i;
            let sx = StencilPair {
                p: (w[c] - w[j * n + knext(i, n)]) * inv_h,
                q: (w[c] - w[j * n + kprev(i, n)]) * inv_h,
            };
            let sy = StencilPair {
                p: (w[c] - w[knext(j, n) * n + i]) * inv_h,
                q: (w[c] - w[kprev(j, n) * n + i]) * inv_h,
            };
            out[c] = fq(sx) + fq(sy) + wpot[c];
        }
    }
}

/// Per-axis quadratic gradients at every stencil of w.
pub(crate) fn quadratic_grads_2d(
    w: &[f64],
    n: usize,
    dpx: &mut [f64],
    dqx: &mut [f64],
    dpy: &mut [f64],
    dqy: &mut [f64],
) {
    let inv_h = n as f64;
    for j in 0..n {
        for i in 0..n {
            let c = j * n + i;
            let gx = fq_grad(StencilPair {
                p: (w[c] - w[j * n + knext(i, n)]) * inv_h,
                q: (w[c] - w[j * n + kprev(i, n)]) * inv_h,
            });
            let gy = fq_grad(StencilPair {
                p: (w[c] - w[knext(j, n) * n + i]) * inv_h,
                q: (w[c] - w[kprev(j, n) * n + i]) * inv_h,
            });
            dpx[c] = gx.dp;
            dqx[c] = gx.dq;
            dpy[c] = gy.dp;
            dqy[c] = gy.dq;
        }
    }
}

/// 2-D adjoint transport: the per-axis adjoint stencils added together.
pub(crate) fn adjoint2_from_grads(
    n: usize,
    dpx: &[f64],
    dqx: &[f64],
    dpy: &[f64],
    dqy: &[f64],
    theta: &[f64],
    out: &mut [f64],
) {
    let inv_h = n as f64;
    for j in 0..n {
        for i in 0..n {
            let c = j * n + i;
            let xm = j * n + kprev(i, n);
            let xp = j * n + knext(i, n);
            let ym = kprev(j, n) * n + i;
            let yp = knext(j, n) * n + i;
            out[c] = inv_h
                * (-dpx[xm] * theta[xm] + (dpx[c] + dqx[c]) * theta[c] - dqx[xp] * theta[xp]
                    - dpy[ym] * theta[ym]
                    + (dpy[c] + dqy[c]) * theta[c]
                    - dqy[yp] * theta[yp]);
        }
    }
}

/// Nodal Hamiltonian values for the 2-D problem.
pub fn g2_apply(w: &GridFunction2D, data: &ProblemData2D) -> GridFunction2D {
    assert_eq!(w.grid(), data.grid(), "w sampled on a different grid than the problem data");
    let mut out = GridFunction2D::zeros(w.grid());
    g2_values(w.values(), w.grid().n(), data.w.values(), out.values_mut());
    out
}

/// 2-D adjoint transport of the density theta along the linearization at w.
pub fn adjoint2_apply(
    w: &GridFunction2D,
    theta: &GridFunction2D,
    data: &ProblemData2D,
) -> GridFunction2D {
    assert_eq!(w.grid(), data.grid(), "w sampled on a different grid than the problem data");
    assert_eq!(theta.grid(), data.grid(), "theta sampled on a different grid than the data");
    let n = w.grid().n();
    let mut dpx = vec![0.0; n * n];
    let mut dqx = vec![0.0; n * n];
    let mut dpy = vec![0.0; n * n];
    let mut dqy = vec![0.0; n * n];
    quadratic_grads_2d(w.values(), n, &mut dpx, &mut dqx, &mut dpy, &mut dqy);
    let mut out = GridFunction2D::zeros(w.grid());
    adjoint2_from_grads(n, &dpx, &dqx, &dpy, &dqy, theta.values(), out.values_mut());
    out
}

/// Congestion operator blocks: the Hamilton-Jacobi values
/// hj_k = FQ(stencil_k(u)) / sqrt(m_k) + V_k and the transport block
/// fp = L^* of sqrt(m) along the quadratic-part gradients of u.
pub fn congestion_terms(
    m: &GridFunction1D,
    u: &GridFunction1D,
    data: &ProblemData1D,
) -> Result<(GridFunction1D, GridFunction1D), MfgError> {
    assert!(
        data.variant == Variant::Congestion,
        "congestion_terms applies to the congestion variant"
    );
    assert_eq!(u.grid(), data.grid(), "u sampled on a different grid than the problem data");
    assert_eq!(m.grid(), data.grid(), "m sampled on a different grid than the problem data");
    if let Some(k) = m.values().iter().position(|&x| x <= 0.0) {
        return Err(MfgError::NonPositiveDensity { index: k + 1, value: m.values()[k] });
    }
    let n = data.grid().n();
    let mut hj = GridFunction1D::zeros(data.grid());
    let mut fp = GridFunction1D::zeros(data.grid());
    let mut scratch = CongestionScratch::new(n);
    congestion_kernel(
        m.values(),
        u.values(),
        data.v.values(),
        &mut scratch,
        hj.values_mut(),
        fp.values_mut(),
    );
    Ok((hj, fp))
}

pub(crate) struct CongestionScratch {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
    pub sqrt_m: Vec<f64>,
}

impl CongestionScratch {
    pub fn new(n: usize) -> Self {
        Self { dp: vec![0.0; n], dq: vec![0.0; n], sqrt_m: vec![0.0; n] }
    }
}

/// Raw congestion blocks; callers guarantee m > 0.
pub(crate) fn congestion_kernel(
    m: &[f64],
    u: &[f64],
    v: &[f64],
    scratch: &mut CongestionScratch,
    hj: &mut [f64],
    fp: &mut [f64],
) {
    let n = m.len();
    quadratic_grads(u, &mut scratch.dp, &mut scratch.dq);
    fq_values(u, hj);
    for k in 0..n {
        scratch.sqrt_m[k] = m[k].sqrt();
        hj[k] = hj[k] / scratch.sqrt_m[k] + v[k];
    }
    adjoint_from_grads(&scratch.dp, &scratch.dq, &scratch.sqrt_m, fp);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{mass, stencil2_x, stencil2_y, GridFunction1D, PeriodicGrid1D};
    use proptest::prelude::*;

    const TAU: f64 = std::f64::consts::TAU;

    fn gf(n: usize, values: &[f64]) -> GridFunction1D {
        GridFunction1D::new(PeriodicGrid1D::new(n).unwrap(), values.to_vec()).unwrap()
    }

    fn standard_data(n: usize, vf: impl Fn(f64) -> f64, bf: impl Fn(f64) -> f64) -> ProblemData1D {
        ProblemData1D::from_fns(n, vf, bf, Variant::Standard).unwrap()
    }

    /// Deterministic smooth test field from a handful of Fourier modes.
    fn smooth_field(n: usize, coeffs: &[(f64, f64)]) -> GridFunction1D {
        GridFunction1D::from_fn(PeriodicGrid1D::new(n).unwrap(), |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &(a, ph))| a * (TAU * (k + 1) as f64 * x + ph).cos())
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn fq_values_and_gradients() {
        assert_eq!(fq(StencilPair { p: 0.0, q: 0.0 }), 0.0);
        assert_eq!(fq(StencilPair { p: 3.0, q: -1.0 }), 4.5);
        assert_eq!(fq(StencilPair { p: -2.0, q: -1.0 }), 0.0);
        assert_eq!(fq_grad(StencilPair { p: 0.0, q: 0.0 }), GradPair { dp: 0.0, dq: 0.0 });
        assert_eq!(fq_grad(StencilPair { p: 3.0, q: -1.0 }), GradPair { dp: 3.0, dq: 0.0 });
        assert_eq!(fq_grad(StencilPair { p: -1.0, q: 2.0 }), GradPair { dp: 0.0, dq: 2.0 });
        // Tie at p = q > 0 resolves to the p slot.
        assert_eq!(fq_grad(StencilPair { p: 2.0, q: 2.0 }), GradPair { dp: 2.0, dq: 0.0 });
        assert_eq!(fq_grad(StencilPair { p: -3.0, q: -3.0 }), GradPair { dp: 0.0, dq: 0.0 });
    }

    #[test]
    fn fd_values_and_gradients() {
        let s = StencilPair { p: 1.0, q: 5.0 };
        let (v, g) = fd_and_grad(s, -2.0);
        assert_eq!(v, 2.0);
        assert_eq!(g, GradPair { dp: 2.0, dq: 0.0 });
        let (v, g) = fd_and_grad(s, 1.0);
        assert_eq!(v, 5.0);
        assert_eq!(g, GradPair { dp: 0.0, dq: 1.0 });
        let (v, g) = fd_and_grad(s, 0.0);
        assert_eq!(v, 0.0);
        assert_eq!(g.dp.abs(), 0.0);
        assert_eq!(g.dq, 0.0);
    }

    proptest! {
        #[test]
        fn consistency_on_antisymmetric_pairs(
            p in -50.0f64..50.0,
            b in -3.0f64..3.0,
            v in -2.0f64..2.0,
        ) {
            // F(-p, p, x) must equal p^2/2 + b p + V exactly up to rounding.
            let s = StencilPair { p: -p, q: p };
            let (fd, _) = fd_and_grad(s, b);
            let lhs = fq(s) + fd + v;
            let rhs = 0.5 * p * p + b * p + v;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn monotone_in_each_slot(
            p1 in -20.0f64..20.0,
            dp in 0.0f64..20.0,
            q in -20.0f64..20.0,
            b in -3.0f64..3.0,
        ) {
            let lo = StencilPair { p: p1, q };
            let hi = StencilPair { p: p1 + dp, q };
            let f = |s: StencilPair| fq(s) + fd_and_grad(s, b).0;
            prop_assert!(f(hi) >= f(lo) - 1e-12);
            let lo_q = StencilPair { p: q, q: p1 };
            let hi_q = StencilPair { p: q, q: p1 + dp };
            prop_assert!(f(hi_q) >= f(lo_q) - 1e-12);
        }

        #[test]
        fn midpoint_convexity(
            p1 in -20.0f64..20.0, q1 in -20.0f64..20.0,
            p2 in -20.0f64..20.0, q2 in -20.0f64..20.0,
            b in -3.0f64..3.0,
        ) {
            let f = |s: StencilPair| fq(s) + fd_and_grad(s, b).0;
            let mid = StencilPair { p: 0.5 * (p1 + p2), q: 0.5 * (q1 + q2) };
            let avg = 0.5 * (f(StencilPair { p: p1, q: q1 }) + f(StencilPair { p: p2, q: q2 }));
            prop_assert!(f(mid) <= avg + 1e-10 * (1.0 + avg.abs()));
        }

        #[test]
        fn gradient_is_a_subgradient(
            p1 in -20.0f64..20.0, q1 in -20.0f64..20.0,
            p2 in -20.0f64..20.0, q2 in -20.0f64..20.0,
        ) {
            // FQ(s2) >= FQ(s1) + grad(s1) . (s2 - s1), including at the kinks.
            let s1 = StencilPair { p: p1, q: q1 };
            let s2 = StencilPair { p: p2, q: q2 };
            let g = fq_grad(s1);
            let lin = fq(s1) + g.dp * (p2 - p1) + g.dq * (q2 - q1);
            prop_assert!(fq(s2) >= lin - 1e-10 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn g_of_zero_is_the_potential() {
        let data = standard_data(16, |x| (TAU * x).sin(), |_| 0.0);
        let g = g_apply(&GridFunction1D::zeros(data.grid()), &data);
        for i in 1..=16 {
            assert_eq!(g.get(i), data.v().get(i));
        }
    }

    #[test]
    fn g_hand_values() {
        // n = 4, V = 0, b = 0, u = (1,2,3,4): stencils give
        // i=1: (-4,-12) -> 0; i=2,3: (-4,4) -> 8; i=4: (12,4) -> 72.
        let data = standard_data(4, |_| 0.0, |_| 0.0);
        let u = gf(4, &[1.0, 2.0, 3.0, 4.0]);
        let g = g_apply(&u, &data);
        assert_eq!(g.values(), &[0.0, 8.0, 8.0, 72.0]);
    }

    #[test]
    fn g_alternating_profile() {
        // u = (0, c, 0, c): only the peaks see a positive slope pair.
        let c = 0.3;
        let data = standard_data(4, |x| x, |_| 0.0);
        let u = gf(4, &[0.0, c, 0.0, c]);
        let g = g_apply(&u, &data);
        let bump = 8.0 * c * c;
        for i in 1..=4 {
            let expect = if i % 2 == 0 { bump } else { 0.0 } + data.v().get(i);
            assert!((g.get(i) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn g_translation_invariance() {
        let data = standard_data(12, |x| (TAU * x).sin(), |x| 0.4 * (TAU * x).cos());
        let u = smooth_field(12, &[(0.8, 0.3), (0.2, 1.1)]);
        let mut shifted = u.clone();
        for k in shifted.values_mut() {
            *k += 0.7;
        }
        let g0 = g_apply(&u, &data);
        let g1 = g_apply(&shifted, &data);
        for i in 1..=12 {
            assert!((g0.get(i) - g1.get(i)).abs() < 1e-11);
        }
    }

    #[test]
    fn g_consistent_with_smooth_hamiltonian() {
        // G(u) -> u_x^2/2 + b u_x + V at first order for smooth u.
        let vf = |x: f64| (TAU * x).sin();
        let bf = |x: f64| 0.2 * (TAU * x).cos();
        let uf = |x: f64| 0.1 * (TAU * x).sin();
        let uxf = |x: f64| 0.1 * TAU * (TAU * x).cos();
        let err_at = |n: usize| -> f64 {
            let data = standard_data(n, vf, bf);
            let u = GridFunction1D::from_fn(data.grid(), uf).unwrap();
            let g = g_apply(&u, &data);
            (1..=n)
                .map(|i| {
                    let x = data.grid().node(i);
                    let ux = uxf(x);
                    (g.get(i) - (0.5 * ux * ux + bf(x) * ux + vf(x))).abs()
                })
                .fold(0.0f64, f64::max)
        };
        let e1 = err_at(64);
        let e2 = err_at(128);
        let e3 = err_at(256);
        assert!(e1 / e2 > 1.5, "first-order consistency: {e1} vs {e2}");
        assert!(e2 / e3 > 1.5, "first-order consistency: {e2} vs {e3}");
    }

    #[test]
    fn linearize_trivial_cases() {
        let data = standard_data(8, |x| x * x, |_| 0.0);
        let v = smooth_field(8, &[(1.0, 0.2)]);
        // At u = 0 with b = 0 every slot gradient vanishes.
        let lv = linearize_apply(&GridFunction1D::zeros(data.grid()), &v, &data);
        assert_eq!(lv.values(), &[0.0; 8]);
        // Constant directions are killed by the stencils.
        let u = smooth_field(8, &[(0.5, 0.9), (0.3, 0.0)]);
        let c = gf(8, &[2.5; 8]);
        let lc = linearize_apply(&u, &c, &data);
        for i in 1..=8 {
            assert_eq!(lc.get(i), 0.0);
        }
    }

    #[test]
    fn linearize_matches_finite_differences() {
        let data = standard_data(8, |x| (TAU * x).sin(), |x| 0.3 * (TAU * x).cos());
        let u = smooth_field(8, &[(0.9, 0.4), (0.25, 2.0)]);
        let v = smooth_field(8, &[(0.6, 1.3), (0.1, 0.7)]);
        let lv = linearize_apply(&u, &v, &data);
        let eps = 1e-6;
        for i in 1..=8 {
            let mut up = u.clone();
            let mut um = u.clone();
            for k in 1..=8 {
                up.set(k, u.get(k) + eps * v.get(k));
                um.set(k, u.get(k) - eps * v.get(k));
            }
            let fd = (g_apply(&up, &data).get(i) - g_apply(&um, &data).get(i)) / (2.0 * eps);
            assert!(
                (lv.get(i) - fd).abs() < 1e-7 * (1.0 + fd.abs()),
                "node {i}: {} vs {fd}",
                lv.get(i)
            );
        }
    }

    #[test]
    fn adjoint_hand_values() {
        // n = 4, u = (1,0,0,0), b = 0: only node 1 has an active slot, with
        // dp_1 = 4 after the tie rule. Applied to w = 1 the adjoint leaves
        // exactly +dp_1/h at node 1 and -dp_1/h at node 2.
        let data = standard_data(4, |_| 0.0, |_| 0.0);
        let u = gf(4, &[1.0, 0.0, 0.0, 0.0]);
        let w = GridFunction1D::ones(data.grid());
        let out = adjoint_apply(&u, &w, &data);
        assert_eq!(out.values(), &[16.0, -16.0, 0.0, 0.0]);
    }

    #[test]
    fn adjoint_at_rest_is_zero() {
        let data = standard_data(6, |x| x, |_| 0.0);
        let w = smooth_field(6, &[(1.0, 0.1)]);
        let out = adjoint_apply(&GridFunction1D::zeros(data.grid()), &w, &data);
        assert_eq!(out.values(), &[0.0; 6]);
    }

    #[test]
    fn adjoint_identity() {
        for &n in &[4usize, 16] {
            let data = standard_data(n, |x| (TAU * x).sin(), |x| 0.5 * (TAU * x).cos());
            let u = smooth_field(n, &[(0.7, 0.5), (0.2, 1.9)]);
            let v = smooth_field(n, &[(0.4, 0.0), (0.3, 2.4)]);
            let w = smooth_field(n, &[(1.1, 1.0)]);
            let lv = linearize_apply(&u, &v, &data);
            let lw = adjoint_apply(&u, &w, &data);
            let lhs: f64 = (1..=n).map(|i| lv.get(i) * w.get(i)).sum();
            let rhs: f64 = (1..=n).map(|i| v.get(i) * lw.get(i)).sum();
            let scale: f64 = (1..=n)
                .map(|i| (lv.get(i) * w.get(i)).abs() + (v.get(i) * lw.get(i)).abs())
                .sum::<f64>()
                + 1.0;
            assert!((lhs - rhs).abs() <= 1e-12 * scale, "n = {n}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn adjoint_conserves_mass() {
        // Rough inputs on purpose; conservation is a telescoping identity.
        let data = standard_data(9, |x| (TAU * x).cos(), |x| if x < 0.5 { -1.0 } else { 2.0 });
        let u = gf(9, &[0.3, -1.0, 2.0, 0.7, -0.2, 1.4, -2.3, 0.0, 0.9]);
        let w = gf(9, &[1.0, 2.0, 0.5, 3.0, 0.1, 0.4, 2.2, 1.7, 0.8]);
        let out = adjoint_apply(&u, &w, &data);
        let total: f64 = out.values().iter().sum();
        let scale: f64 = out.values().iter().map(|x| x.abs()).sum::<f64>() + 1.0;
        assert!(total.abs() <= 1e-13 * scale);
    }

    #[test]
    fn two_d_rest_values() {
        let data = ProblemData2D::from_fn(5, |x, y| x + 2.0 * y).unwrap();
        let w = GridFunction2D::zeros(data.grid());
        let g = g2_apply(&w, &data);
        for j in 1..=5 {
            for i in 1..=5 {
                assert_eq!(g.get(i, j), data.w().get(i, j));
            }
        }
        let theta = GridFunction2D::from_fn(data.grid(), |x, y| 1.0 + 0.3 * x * y).unwrap();
        let a = adjoint2_apply(&w, &theta, &data);
        assert_eq!(a.values(), vec![0.0; 25].as_slice());
    }

    #[test]
    fn two_d_reduces_to_one_d() {
        // w(x, y) = u(x) and W(x, y) = V(x) reproduce the 1-D operator rows.
        let n = 6;
        let data1 = standard_data(n, |x| (TAU * x).sin(), |_| 0.0);
        let data2 = ProblemData2D::from_fn(n, |x, _| (TAU * x).sin()).unwrap();
        let u = smooth_field(n, &[(0.8, 0.2), (0.3, 1.4)]);
        let w = GridFunction2D::from_fn(data2.grid(), |x, _| {
            0.8 * (TAU * x + 0.2).cos() + 0.3 * (2.0 * TAU * x + 1.4).cos()
        })
        .unwrap();
        let g1 = g_apply(&u, &data1);
        let g2 = g2_apply(&w, &data2);
        let m1 = smooth_field(n, &[(0.2, 0.5)]);
        let m2 = GridFunction2D::from_fn(data2.grid(), |x, _| 0.2 * (TAU * x + 0.5).cos()).unwrap();
        let a1 = adjoint_apply(&u, &m1, &data1);
        let a2 = adjoint2_apply(&w, &m2, &data2);
        for j in 1..=n {
            for i in 1..=n {
                assert!((g2.get(i, j) - g1.get(i)).abs() < 1e-11);
                assert!((a2.get(i, j) - a1.get(i)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_d_adjoint_identity() {
        let n = 6;
        let data = ProblemData2D::from_fn(n, |x, y| (TAU * x).sin() + (TAU * y).cos()).unwrap();
        let w = GridFunction2D::from_fn(data.grid(), |x, y| {
            0.5 * (TAU * (x + 2.0 * y)).cos() + 0.2 * (TAU * (2.0 * x - y) + 0.4).cos()
        })
        .unwrap();
        let v = GridFunction2D::from_fn(data.grid(), |x, y| {
            0.3 * (TAU * (x - y) + 1.0).cos() + 0.15 * (TAU * (x + y)).sin()
        })
        .unwrap();
        let th = GridFunction2D::from_fn(data.grid(), |x, y| {
            1.0 + 0.4 * (TAU * x).cos() * (TAU * y).sin()
        })
        .unwrap();
        // Build L2_w v directly from per-axis stencils and gradients.
        let mut lhs = 0.0;
        for j in 1..=n {
            for i in 1..=n {
                let gx = fq_grad(stencil2_x(&w, i, j));
                let gy = fq_grad(stencil2_y(&w, i, j));
                let vx = stencil2_x(&v, i, j);
                let vy = stencil2_y(&v, i, j);
                let l2v = gx.dp * vx.p + gx.dq * vx.q + gy.dp * vy.p + gy.dq * vy.q;
                lhs += l2v * th.get(i, j);
            }
        }
        let at = adjoint2_apply(&w, &th, &data);
        let mut rhs = 0.0;
        let mut scale = 1.0;
        for j in 1..=n {
            for i in 1..=n {
                rhs += v.get(i, j) * at.get(i, j);
                scale += (v.get(i, j) * at.get(i, j)).abs();
            }
        }
        assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
        // Conservation in 2-D.
        let total: f64 = at.values().iter().sum();
        let tscale: f64 = at.values().iter().map(|x| x.abs()).sum::<f64>() + 1.0;
        assert!(total.abs() <= 1e-13 * tscale);
    }

    #[test]
    fn congestion_at_rest() {
        let data = ProblemData1D::from_fns(10, |x| (TAU * x).sin(), |_| 0.0, Variant::Congestion)
            .unwrap();
        let m = GridFunction1D::from_fn(data.grid(), |x| 1.0 + 0.5 * (TAU * x).cos()).unwrap();
        let u = GridFunction1D::zeros(data.grid());
        let (hj, fp) = congestion_terms(&m, &u, &data).unwrap();
        for i in 1..=10 {
            assert_eq!(hj.get(i), data.v().get(i));
            assert_eq!(fp.get(i), 0.0);
        }
    }

    #[test]
    fn congestion_reduces_to_standard_at_unit_density() {
        let n = 8;
        let cong =
            ProblemData1D::from_fns(n, |x| (TAU * x).sin(), |_| 0.0, Variant::Congestion).unwrap();
        let std_data = standard_data(n, |x| (TAU * x).sin(), |_| 0.0);
        let u = smooth_field(n, &[(0.7, 0.9), (0.2, 0.1)]);
        let ones = GridFunction1D::ones(cong.grid());
        let (hj, fp) = congestion_terms(&ones, &u, &cong).unwrap();
        let g = g_apply(&u, &std_data);
        let a = adjoint_apply(&u, &ones, &std_data);
        for i in 1..=n {
            assert!((hj.get(i) - g.get(i)).abs() < 1e-13);
            assert!((fp.get(i) - a.get(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn congestion_transport_pairing() {
        // sum_i m_i (L^Q_u v)_i / sqrt(m_i) = sum_i v_i fp_i.
        let n = 9;
        let data =
            ProblemData1D::from_fns(n, |x| (TAU * x).cos(), |_| 0.0, Variant::Congestion).unwrap();
        let u = smooth_field(n, &[(0.6, 0.3), (0.25, 1.8)]);
        let v = smooth_field(n, &[(0.5, 2.1)]);
        let m = GridFunction1D::from_fn(data.grid(), |x| 1.2 + 0.8 * (TAU * x).sin()).unwrap();
        let (_, fp) = congestion_terms(&m, &u, &data).unwrap();
        let mut lhs = 0.0;
        for i in 1..=n {
            let g = fq_grad(stencil(&u, i));
            let sv = stencil(&v, i);
            lhs += m.get(i) * (g.dp * sv.p + g.dq * sv.q) / m.get(i).sqrt();
        }
        let rhs: f64 = (1..=n).map(|i| v.get(i) * fp.get(i)).sum();
        let scale: f64 = (1..=n).map(|i| (v.get(i) * fp.get(i)).abs()).sum::<f64>() + 1.0;
        assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn congestion_rejects_nonpositive_density() {
        let data =
            ProblemData1D::from_fns(4, |_| 0.0, |_| 0.0, Variant::Congestion).unwrap();
        let u = GridFunction1D::zeros(data.grid());
        let m = gf(4, &[1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            congestion_terms(&m, &u, &data),
            Err(MfgError::NonPositiveDensity { index: 2, .. })
        ));
    }

    #[test]
    fn congestion_data_rejects_drift() {
        let err = ProblemData1D::from_fns(4, |_| 0.0, |_| 1.0, Variant::Congestion);
        assert!(err.is_err());
    }

    #[test]
    fn mass_is_a_probability_check() {
        let grid = PeriodicGrid1D::new(5).unwrap();
        let m = GridFunction1D::from_fn(grid, |_| 1.0).unwrap();
        assert!((mass(&m) - 1.0).abs() < 1e-15);
    }
}
