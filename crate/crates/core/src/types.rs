//! Domain types shared by every module: states, controls, model realizations,
//! and the convex sets used to bound model uncertainty.

use alloc::vec::Vec;
use core::ops::Index;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{cholesky_regularized, is_symmetric, SYMMETRY_TOL};
use crate::math::sqrt;
use crate::{Error, Result};

macro_rules! vector_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(DVector<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(DVector::from_vec(values))
            }

            pub fn from_slice(values: &[f64]) -> Self {
                Self(DVector::from_column_slice(values))
            }

            pub fn zeros(len: usize) -> Self {
                Self(DVector::zeros(len))
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice()
            }

            pub fn as_vector(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn into_vector(self) -> DVector<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl From<DVector<f64>> for $name {
            fn from(v: DVector<f64>) -> Self {
                Self(v)
            }
        }

        impl Index<usize> for $name {
            type Output = f64;

            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }
    };
}

vector_newtype!(
    /// A point `x` of the state space.
    StateVector
);
vector_newtype!(
    /// A control input `u`. Construction never clamps; limit checks go through [`BoxLimits`].
    ControlVector
);

/// Axis-aligned box `[lower, upper]`, used for both the state space and the control limits.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLimits {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxLimits {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box limits"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidArgument("box lower bound exceeds upper bound".into()));
        }
        Ok(Self {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    /// Symmetric box `[-r_i, r_i]`.
    pub fn symmetric(radii: &[f64]) -> Result<Self> {
        Self::new(radii.iter().map(|r| -r).collect(), radii.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, v)| *v >= self.lower[i] - tol && *v <= self.upper[i] + tol)
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(i, v)| v.clamp(self.lower[i], self.upper[i])),
        )
    }

    /// All `2^d` corners, in binary counting order over the coordinates.
    pub fn corners(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        (0..(1usize << d))
            .map(|mask| {
                DVector::from_iterator(
                    d,
                    (0..d).map(|i| {
                        if mask & (1 << i) != 0 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    }),
                )
            })
            .collect()
    }

    /// The same box scaled about its center by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let half = self.widths() * (0.5 * factor);
        Self {
            lower: &c - &half,
            upper: &c + &half,
        }
    }
}

/// Row-major flattening of `g`: `g_flat[i*m + j] = g[i][j]`.
pub fn flatten_g(g: &DMatrix<f64>) -> DVector<f64> {
    let (n, m) = g.shape();
    DVector::from_iterator(n * m, (0..n).flat_map(|i| (0..m).map(move |j| g[(i, j)])))
}

/// Inverse of [`flatten_g`].
pub fn unflatten_g(flat: &[f64], n: usize, m: usize) -> Result<DMatrix<f64>> {
    if flat.len() != n * m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: flat.len(),
        });
    }
    Ok(DMatrix::from_row_slice(n, m, flat))
}

/// One realization `(f, g)` of the uncertain control-affine model at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSample {
    f: DVector<f64>,
    g: DMatrix<f64>,
    g_flat: DVector<f64>,
}

impl DynamicsSample {
    pub fn new(f: DVector<f64>, g: DMatrix<f64>) -> Result<Self> {
        if f.len() != g.nrows() {
            return Err(Error::DimensionMismatch {
                expected: f.len(),
                got: g.nrows(),
            });
        }
        let g_flat = flatten_g(&g);
        Ok(Self { f, g, g_flat })
    }

    pub fn from_flat(f: DVector<f64>, g_flat: &[f64], m: usize) -> Result<Self> {
        let n = f.len();
        let g = unflatten_g(g_flat, n, m)?;
        Self::new(f, g)
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g_flat(&self) -> &DVector<f64> {
        &self.g_flat
    }

    pub fn state_dim(&self) -> usize {
        self.f.len()
    }

    pub fn control_dim(&self) -> usize {
        self.g.ncols()
    }

    /// `x_dot = f + g u`.
    pub fn state_derivative(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.f + &self.g * u
    }

    pub fn is_finite(&self) -> bool {
        self.f.iter().chain(self.g.iter()).all(|v| v.is_finite())
    }
}

/// Convex hull of a finite vertex list (V-representation).
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeSet {
    vertices: Vec<DVector<f64>>,
    dim: usize,
}

impl PolytopeSet {
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Self> {
        let dim = vertices.first().ok_or(Error::Empty("polytope vertex list"))?.len();
        for v in &vertices {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("polytope vertex"));
            }
        }
        Ok(Self { vertices, dim })
    }

    pub fn singleton(point: DVector<f64>) -> Result<Self> {
        Self::new(alloc::vec![point])
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `max_i w^T v_i` and the first index attaining it.
    pub fn support(&self, w: &DVector<f64>) -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, v) in self.vertices.iter().enumerate() {
            let s = w.dot(v);
            if s > best {
                best = s;
                arg = i;
            }
        }
        (best, arg)
    }

    /// Image of the polytope under `v -> T v`.
    pub fn map_linear(&self, t: &DMatrix<f64>) -> Result<Self> {
        Self::new(self.vertices.iter().map(|v| t * v).collect())
    }

    /// Euclidean distance from `p` to the hull, by Wolfe's minimum-norm-point method.
    pub fn distance(&self, p: &DVector<f64>) -> f64 {
        let shifted: Vec<DVector<f64>> = self.vertices.iter().map(|v| v - p).collect();
        min_norm_point(&shifted).norm()
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        p.len() == self.dim && self.distance(p) <= tol
    }
}

/// Minimum-norm point of the convex hull of `points` (Wolfe 1976).
fn min_norm_point(points: &[DVector<f64>]) -> DVector<f64> {
    let scale = points.iter().map(|p| p.norm_squared()).fold(0.0_f64, f64::max).max(1e-300);
    let eps_major = 1e-12 * scale;
    let eps_weight = 1e-12;

    let start = (0..points.len())
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .unwrap_or(0);
    let mut corral: Vec<usize> = alloc::vec![start];
    let mut weights: Vec<f64> = alloc::vec![1.0];
    let mut x = points[start].clone();

    for _ in 0..(20 * points.len() + 50) {
        let (j, wj) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, x.dot(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if x.norm_squared() - wj <= eps_major || corral.contains(&j) {
            return x;
        }
        corral.push(j);
        weights.push(0.0);

        loop {
            let alpha = match affine_minimizer(points, &corral) {
                Some(a) => a,
                None => return x,
            };
            if alpha.iter().all(|a| *a > eps_weight) {
                x = combine(points, &corral, &alpha);
                weights = alpha;
                break;
            }
            let mut theta = 1.0_f64;
            for (k, a) in alpha.iter().enumerate() {
                if *a <= eps_weight {
                    let denom = weights[k] - a;
                    if denom > 0.0 {
                        theta = theta.min(weights[k] / denom);
                    }
                }
            }
            for (w, a) in weights.iter_mut().zip(&alpha) {
                *w = theta * a + (1.0 - theta) * *w;
            }
            let mut k = 0;
            while k < corral.len() {
                if weights[k] <= eps_weight {
                    corral.remove(k);
                    weights.remove(k);
                } else {
                    k += 1;
                }
            }
            if corral.is_empty() {
                return x;
            }
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
            x = combine(points, &corral, &weights);
        }
    }
    x
}

fn combine(points: &[DVector<f64>], idx: &[usize], w: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(points[idx[0]].len());
    for (i, wi) in idx.iter().zip(w) {
        x.axpy(*wi, &points[*i], 1.0);
    }
    x
}

/// Weights of the minimum-norm point of the affine hull of `points[idx]`.
fn affine_minimizer(points: &[DVector<f64>], idx: &[usize]) -> Option<Vec<f64>> {
    let k = idx.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            kkt[(a, b)] = points[idx[a]].dot(&points[idx[b]]);
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let alpha: Vec<f64> = sol.iter().take(k).copied().collect();
    if alpha.iter().all(|a| a.is_finite()) {
        Some(alpha)
    } else {
        None
    }
}

/// `{v : (v - mu)^T Q^{-1} (v - mu) <= dof}` with `Q` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSet {
    mu: DVector<f64>,
    q: DMatrix<f64>,
    dof: f64,
    chol: DMatrix<f64>,
    regularized: bool,
}

impl EllipsoidSet {
    /// Validates symmetry and positive definiteness. A singular `Q` is shifted
    /// by `1e-10 * trace(Q) / d` on the diagonal (see [`EllipsoidSet::was_regularized`]).
    pub fn new(mu: DVector<f64>, q: DMatrix<f64>, dof: f64) -> Result<Self> {
        let d = mu.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q.nrows(),
            });
        }
        if !(dof > 0.0) || !dof.is_finite() {
            return Err(Error::InvalidArgument("ellipsoid scale must be positive".into()));
        }
        if mu.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ellipsoid"));
        }
        if !is_symmetric(&q, SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        let (ch, q, regularized) = cholesky_regularized(&q)?;
        Ok(Self {
            mu,
            q,
            dof,
            chol: ch.l(),
            regularized,
        })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Lower-triangular `L` with `L L^T = Q`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn was_regularized(&self) -> bool {
        self.regularized
    }

    /// `(v - mu)^T Q^{-1} (v - mu)`, via an LU solve.
    pub fn mahalanobis_sq(&self, v: &DVector<f64>) -> f64 {
        let diff = v - &self.mu;
        match self.q.clone().lu().solve(&diff) {
            Some(y) => diff.dot(&y),
            None => f64::INFINITY,
        }
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.dim() && self.mahalanobis_sq(v) <= self.dof + tol
    }

    /// Support function `w^T mu + sqrt(dof * w^T Q w)`.
    pub fn support(&self, w: &DVector<f64>) -> f64 {
        let qw = &self.q * w;
        w.dot(&self.mu) + sqrt((self.dof * w.dot(&qw)).max(0.0))
    }

    /// Boundary point maximizing `w^T v`.
    pub fn support_point(&self, w: &DVector<f64>) -> DVector<f64> {
        let qw = &self.q * w;
        let s = sqrt(w.dot(&qw).max(0.0));
        if s == 0.0 {
            return self.mu.clone();
        }
        &self.mu + qw * (sqrt(self.dof) / s)
    }

    /// Image under `v -> T v`; `dof` is preserved.
    pub fn map_linear(&self, t: &DMatrix<f64>) -> Result<Self> {
        let q = t * &self.q * t.transpose();
        let q = (&q + q.transpose()) * 0.5;
        Self::new(t * &self.mu, q, self.dof)
    }
}

/// Either kind of bounded convex set used for uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Polytope(PolytopeSet),
    Ellipsoid(EllipsoidSet),
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Polytope(p) => p.dim(),
            ConvexSet::Ellipsoid(e) => e.dim(),
        }
    }

    pub fn support(&self, w: &DVector<f64>) -> f64 {
        match self {
            ConvexSet::Polytope(p) => p.support(w).0,
            ConvexSet::Ellipsoid(e) => e.support(w),
        }
    }

    pub fn map_linear(&self, t: &DMatrix<f64>) -> Result<Self> {
        Ok(match self {
            ConvexSet::Polytope(p) => ConvexSet::Polytope(p.map_linear(t)?),
            ConvexSet::Ellipsoid(e) => ConvexSet::Ellipsoid(e.map_linear(t)?),
        })
    }
}

/// Ranges `V_f` of `L_f phi` and `V_g` of `L_g phi`, plus the right-hand side
/// `c = -gamma(phi) - max V_f` of the robust constraint `max_{v in V_g} v^T u <= c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivativeBounds {
    pub v_f: ConvexSet,
    pub v_g: ConvexSet,
    pub c: f64,
}

impl LieDerivativeBounds {
    pub fn control_dim(&self) -> usize {
        self.v_g.dim()
    }

    /// Worst case of `v^T u` over `V_g`.
    pub fn worst_case(&self, u: &DVector<f64>) -> f64 {
        self.v_g.support(u)
    }

    /// Same bounds with `c` tightened by `margin`.
    pub fn with_margin(&self, margin: f64) -> Self {
        Self {
            c: self.c - margin,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    /// The robust safe control set itself is empty.
    InfeasibleEmptyUr,
    /// The robust safe control set is non-empty but misses the control box.
    InfeasibleControlLimits,
}

impl SolveStatus {
    pub fn is_feasible(self) -> bool {
        self == SolveStatus::Optimal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::InfeasibleEmptyUr => "infeasible_empty_ur",
            SolveStatus::InfeasibleControlLimits => "infeasible_control_limits",
        }
    }
}

/// Output of a robust safe control filter.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustControlResult {
    pub u: ControlVector,
    pub status: SolveStatus,
    /// Linear constraints in the final relaxation (1 for the SOC and constant filters).
    pub cuts_used: usize,
    pub iterations: usize,
    /// Largest violation of the robust constraint or the box at exit.
    pub residual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn flatten_examples() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flatten_g(&g).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flatten_g(&DMatrix::zeros(2, 2)).as_slice(), &[0.0; 4]);
        assert_eq!(
            flatten_g(&DMatrix::identity(2, 2)).as_slice(),
            &[1.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn flatten_is_row_major_for_tall_matrices() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let flat = flatten_g(&g);
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(flat[i * 2 + j], g[(i, j)]);
            }
        }
        assert_eq!(unflatten_g(flat.as_slice(), 3, 2).unwrap(), g);
        assert!(unflatten_g(flat.as_slice(), 2, 2).is_err());
    }

    #[test]
    fn polytope_rejects_bad_input() {
        assert!(PolytopeSet::new(vec![]).is_err());
        assert!(PolytopeSet::new(vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0, 2.0])]).is_err());
        assert!(PolytopeSet::new(vec![DVector::from_vec(vec![f64::NAN])]).is_err());
    }

    #[test]
    fn polytope_support_ties_take_lowest_index() {
        let p = PolytopeSet::new(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 5.0]),
            DVector::from_vec(vec![-1.0, 0.0]),
        ])
        .unwrap();
        let (val, idx) = p.support(&DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(val, 1.0);
        assert_eq!(idx, 0);
    }

    #[test]
    fn segment_midpoint_is_member() {
        let p = PolytopeSet::new(vec![
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
            DVector::from_vec(vec![2.0, 4.0, -1.0]),
        ])
        .unwrap();
        assert!(p.contains(&DVector::from_vec(vec![1.0, 2.0, 0.0]), 1e-9));
        assert!(!p.contains(&DVector::from_vec(vec![1.0, 2.1, 0.0]), 1e-9));
        let d = p.distance(&DVector::from_vec(vec![3.0, 4.0, -1.0]));
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_distance_matches_geometry() {
        let p = PolytopeSet::new(vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![0.5, 0.5]),
        ])
        .unwrap();
        assert!(p.contains(&DVector::from_vec(vec![0.3, 0.9]), 1e-12));
        let d = p.distance(&DVector::from_vec(vec![2.0, 2.0]));
        assert!((d - core::f64::consts::SQRT_2).abs() < 1e-12);
        let d = p.distance(&DVector::from_vec(vec![0.5, -3.0]));
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_validation() {
        let mu = DVector::zeros(2);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(EllipsoidSet::new(mu.clone(), asym, 1.0), Err(Error::NotSymmetric));
        assert!(EllipsoidSet::new(mu.clone(), DMatrix::identity(2, 2), 0.0).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(EllipsoidSet::new(mu.clone(), indefinite, 1.0).is_err());
        let e = EllipsoidSet::new(mu, DMatrix::zeros(2, 2), 1.0).unwrap();
        assert!(e.was_regularized());
    }

    #[test]
    fn unit_ellipsoid_support() {
        let e = EllipsoidSet::new(DVector::zeros(2), DMatrix::identity(2, 2), 4.0).unwrap();
        assert!((e.support(&DVector::from_vec(vec![1.0, 0.0])) - 2.0).abs() < 1e-15);
        let p = e.support_point(&DVector::from_vec(vec![0.0, 3.0]));
        assert!((p[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn box_corners_and_scaling() {
        let b = BoxLimits::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.corners().len(), 4);
        assert!(b.contains(&[0.0, 2.0], 0.0));
        assert!(!b.contains(&[0.0, 2.1], 0.0));
        let s = b.scaled(2.0);
        assert_eq!(s.lower().as_slice(), &[-2.0, -1.0]);
        assert!(BoxLimits::new(vec![1.0], vec![0.0]).is_err());
    }
}
