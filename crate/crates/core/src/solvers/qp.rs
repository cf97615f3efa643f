//! Primal active-set method for `min ||u - u_ref||^2` over halfspaces and a box.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::lp::{LinearProgram, LpOutcome};
use crate::math::abs;
use crate::types::BoxLimits;

/// Stationarity tolerance.
pub const QP_TOL: f64 = 1e-8;
/// Constraint violation tolerance.
pub const FEAS_TOL: f64 = 1e-6;

const MAX_ACTIVE_SET_ITERS: usize = 500;

/// `minimize ||u - u_ref||^2` subject to `a_k^T u <= b_k` and `lower <= u <= upper`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub u_ref: Vec<f64>,
    pub rows: Vec<(Vec<f64>, f64)>,
    pub control_box: BoxLimits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// Indices into `rows` active at the solution (box constraints excluded).
    pub active_rows: Vec<usize>,
    pub iterations: usize,
    /// Largest violation over rows and box.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpError {
    Infeasible,
    /// Iteration cap reached; should not happen for well-posed problems.
    NotConverged,
}

impl QpProblem {
    pub fn new(u_ref: Vec<f64>, control_box: BoxLimits) -> Self {
        Self {
            u_ref,
            rows: Vec::new(),
            control_box,
        }
    }

    pub fn dim(&self) -> usize {
        self.u_ref.len()
    }

    pub fn push(&mut self, a: Vec<f64>, b: f64) {
        debug_assert_eq!(a.len(), self.dim());
        self.rows.push((a, b));
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.u_ref).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Largest violation of the rows and the box at `u`.
    pub fn violation(&self, u: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in &self.rows {
            worst = worst.max(dot(a, u) - b);
        }
        for (j, v) in u.iter().enumerate() {
            worst = worst
                .max(self.control_box.lower()[j] - v)
                .max(v - self.control_box.upper()[j]);
        }
        worst
    }

    fn constraint(&self, k: usize) -> (Vec<f64>, f64) {
        let m = self.dim();
        let nrows = self.rows.len();
        if k < nrows {
            return self.rows[k].clone();
        }
        let j = (k - nrows) / 2;
        let mut a = vec![0.0; m];
        if (k - nrows).is_multiple_of(2) {
            a[j] = 1.0;
            (a, self.control_box.upper()[j])
        } else {
            a[j] = -1.0;
            (a, -self.control_box.lower()[j])
        }
    }

    fn num_constraints(&self) -> usize {
        self.rows.len() + 2 * self.dim()
    }

    /// Some point satisfying all constraints, or `None` if there is none.
    pub fn feasible_point(&self) -> Option<Vec<f64>> {
        let clamped: Vec<f64> = self
            .control_box
            .clamp(&DVector::from_column_slice(&self.u_ref))
            .as_slice()
            .to_vec();
        if self.violation(&clamped) <= 0.0 {
            return Some(clamped);
        }
        let center = self.control_box.center().as_slice().to_vec();
        if self.violation(&center) <= 0.0 {
            return Some(center);
        }
        // min t s.t. a^T u - t <= b, u in box
        let m = self.dim();
        let mut c = vec![0.0; m + 1];
        c[m] = 1.0;
        let mut lp = LinearProgram::new(c);
        for j in 0..m {
            lp.bound(j, Some(self.control_box.lower()[j]), Some(self.control_box.upper()[j]));
        }
        for (a, b) in &self.rows {
            let mut row = a.clone();
            row.push(-1.0);
            lp.leq(row, *b);
        }
        lp.bound(m, Some(-1.0), None);
        match lp.solve() {
            LpOutcome::Optimal { x, objective } => {
                if objective <= FEAS_TOL * 1e-2 {
                    Some(x[..m].to_vec())
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the projection QP with the dual active-set method of Goldfarb and
/// Idnani. It starts from the unconstrained minimizer `u_ref`, adds the most
/// violated constraint each round and keeps the dual iterate feasible, so it
/// needs no feasible start and proves infeasibility when no step exists.
pub fn solve_qp(p: &QpProblem, tol: f64) -> Result<QpSolution, QpError> {
    let m = p.dim();
    let ncons = p.num_constraints();
    // stored as n^T u >= b' with n = -a, b' = -b
    let cons: Vec<(DVector<f64>, f64, f64)> = (0..ncons)
        .map(|k| {
            let (a, b) = p.constraint(k);
            let n = -DVector::from_vec(a);
            let norm = n.norm();
            (n, -b, norm)
        })
        .collect();
    let scale = 1.0 + p.u_ref.iter().fold(0.0_f64, |a, v| a.max(abs(*v)));
    let viol_tol = tol.min(FEAS_TOL) * 1e-3 * scale;
    let mut u = DVector::from_column_slice(&p.u_ref);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        // most violated constraint, scaled by the normal length
        let mut pick = None;
        let mut worst = viol_tol;
        for (k, (n, b, norm)) in cons.iter().enumerate() {
            if *norm == 0.0 || active.contains(&k) {
                continue;
            }
            let v = (b - n.dot(&u)) / norm;
            if v > worst {
                worst = v;
                pick = Some(k);
            }
        }
        let Some(q) = pick else {
            let nrows = p.rows.len();
            let mut active_rows: Vec<usize> = active.iter().copied().filter(|k| *k < nrows).collect();
            active_rows.sort_unstable();
            let u: Vec<f64> = u.iter().copied().collect();
            let residual = p.violation(&u).max(0.0);
            // the scan skips active constraints; do not hand back a point that
            // lost them to roundoff
            if residual > FEAS_TOL * scale {
                return Err(QpError::NotConverged);
            }
            return Ok(QpSolution {
                u,
                active_rows,
                iterations,
                residual,
            });
        };
        let nq = &cons[q].0;
        let mut lambda_q = 0.0;
        loop {
            iterations += 1;
            if iterations > MAX_ACTIVE_SET_ITERS {
                return Err(QpError::NotConverged);
            }
            let (mut z, r) = directions(&cons, &active, nq, m);
            // once the active normals span the space the primal step is zero;
            // whatever is left is roundoff and must not drive a step
            if active.len() >= m || z.norm() <= 1e-10 * cons[q].2 {
                z.fill(0.0);
            }
            let z_norm = z.norm();
            let zn = z.dot(nq);
            // partial step limit from the active multipliers
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, rj) in r.iter().enumerate() {
                if *rj > 1e-14 {
                    let t = lambda[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let t2 = if z_norm > 0.0 && zn > 0.0 {
                (cons[q].1 - nq.dot(&u)) / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            if t2.is_finite() {
                u += &z * t;
            }
            for (lj, rj) in lambda.iter_mut().zip(r.iter()) {
                *lj -= t * rj;
            }
            lambda_q += t;
            if t2 <= t1 {
                active.push(q);
                lambda.push(lambda_q);
                break;
            }
            let j = drop.expect("finite partial step has a blocking multiplier");
            active.remove(j);
            lambda.remove(j);
        }
    }
}

/// Primal step `z = (I - N N^+) n` and dual step `r = N^+ n` for the active normals `N`.
fn directions(
    cons: &[(DVector<f64>, f64, f64)],
    active: &[usize],
    n: &DVector<f64>,
    m: usize,
) -> (DVector<f64>, DVector<f64>) {
    let k = active.len();
    if k == 0 {
        return (n.clone(), DVector::zeros(0));
    }
    let big_n = DMatrix::from_fn(m, k, |i, j| cons[active[j]].0[i]);
    let gram = big_n.transpose() * &big_n;
    let rhs = big_n.transpose() * n;
    let r = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.pseudo_inverse(1e-14).ok().map(|g| g * &rhs))
        .unwrap_or_else(|| DVector::zeros(k));
    let z = n - &big_n * &r;
    (z, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big_box() -> BoxLimits {
        BoxLimits::symmetric(&[20.0, 20.0]).unwrap()
    }

    #[test]
    fn unconstrained_returns_reference() {
        let p = QpProblem::new(vec![3.0, -4.0], big_box());
        let s = solve_qp(&p, QP_TOL).unwrap();
        assert_eq!(s.u, vec![3.0, -4.0]);
    }

    #[test]
    fn axis_halfspaces() {
        let mut p = QpProblem::new(vec![2.0, 2.0], big_box());
        p.push(vec![1.0, 0.0], 1.0);
        p.push(vec![0.0, 1.0], 1.0);
        let s = solve_qp(&p, QP_TOL).unwrap();
        assert!((s.u[0] - 1.0).abs() < 1e-10 && (s.u[1] - 1.0).abs() < 1e-10);
        assert_eq!(s.active_rows.len(), 2);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = QpProblem::new(vec![0.0, 0.0], big_box());
        p.push(vec![1.0, 0.0], -1.0);
        p.push(vec![-1.0, 0.0], -2.0);
        assert_eq!(solve_qp(&p, QP_TOL), Err(QpError::Infeasible));
    }

    #[test]
    fn halfspace_outside_box_is_infeasible() {
        let mut p = QpProblem::new(vec![0.0, 0.0], big_box());
        p.push(vec![1.0, 1.0], -50.0);
        assert_eq!(solve_qp(&p, QP_TOL), Err(QpError::Infeasible));
    }

    #[test]
    fn oblique_projection() {
        // project (2, 0) onto u1 + u2 <= 1 -> (1.5, -0.5)
        let mut p = QpProblem::new(vec![2.0, 0.0], big_box());
        p.push(vec![1.0, 1.0], 1.0);
        let s = solve_qp(&p, QP_TOL).unwrap();
        assert!((s.u[0] - 1.5).abs() < 1e-10 && (s.u[1] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn box_and_row_together() {
        // reference far out; box corner cut by a halfspace
        let mut p = QpProblem::new(vec![100.0, 100.0], big_box());
        p.push(vec![1.0, 2.0], 30.0);
        let s = solve_qp(&p, QP_TOL).unwrap();
        assert!((s.u[0] - 20.0).abs() < 1e-9 && (s.u[1] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn start_needs_phase_one() {
        // feasible region is a thin wedge away from both the clamped reference and the center
        let mut p = QpProblem::new(vec![-10.0, 0.0], big_box());
        p.push(vec![-1.0, 0.0], -5.0);
        p.push(vec![1.0, -1.0], 0.0);
        let s = solve_qp(&p, QP_TOL).unwrap();
        assert!((s.u[0] - 5.0).abs() < 1e-9 && (s.u[1] - 5.0).abs() < 1e-9, "{:?}", s.u);
    }

    #[test]
    fn row_nearly_parallel_to_box_face() {
        // thin sliver under the upper u2 bound; the old primal method cycled here
        let mut p = QpProblem::new(vec![-12.597259852930467, 15.647520618410985], big_box());
        p.push(vec![3.306174777772952e-5, -1.5285138614082934], -30.570938431550484);
        p.push(vec![3.8222676260524224e-5, -2.0022110881409008], -30.570938431550484);
        let s = solve_qp(&p, QP_TOL).unwrap();
        assert!(p.violation(&s.u) <= 1e-9, "{:?}", s.u);
        assert!(s.u[1] > 19.99);
    }

    #[test]
    fn nearly_antiparallel_rows_are_infeasible() {
        // the wedge between the two rows leaves the box; the active pair spans the
        // plane, so the leftover primal direction is roundoff
        let mut p = QpProblem::new(vec![0.0, 0.0], big_box());
        p.push(vec![-1.3560308940750376, -1.101722454131046], -19.599884499215843);
        p.push(vec![2.2957426904161227, 1.8253752100021359], 0.0);
        assert_eq!(solve_qp(&p, QP_TOL), Err(QpError::Infeasible));
    }

    #[test]
    fn multipliers_drop_when_a_face_stops_binding() {
        // u_ref projects onto the corner of two rows only after the first is released
        let mut p = QpProblem::new(vec![0.0, 3.0], big_box());
        p.push(vec![0.0, 1.0], 1.0);
        p.push(vec![1.0, 1.0], 0.0);
        let s = solve_qp(&p, QP_TOL).unwrap();
        // projection of (0, 3) onto u1 + u2 <= 0 is (-1.5, 1.5), then u2 <= 1 caps it at (-1, 1)
        assert!((s.u[0] + 1.0).abs() < 1e-10 && (s.u[1] - 1.0).abs() < 1e-10, "{:?}", s.u);
    }
}
