//! Barrier method for the single-cone projection problem
//! `min ||u - u_ref||^2  s.t.  ||L^T u|| <= c - mu^T u,  lower <= u <= upper`.


use nalgebra::{DMatrix, DVector};

use crate::math::log;
use crate::types::BoxLimits;

/// Barrier weight reduction per outer iteration.
pub const BARRIER_REDUCTION: f64 = 0.2;
const MAX_NEWTON: usize = 100;
const MAX_OUTER: usize = 60;
/// Half the squared Newton decrement at which centering stops.
const NEWTON_TOL: f64 = 1e-10;
/// Smallest duality-gap target relative to `1 + ||u_ref||^2`; tighter targets
/// sit below what double precision can resolve in the barrier value.
const MIN_GAP: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SocProblem {
    pub u_ref: DVector<f64>,
    pub mu: DVector<f64>,
    /// `L` with `L L^T` the cone shape matrix.
    pub l: DMatrix<f64>,
    pub c: f64,
    pub control_box: BoxLimits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocSolution {
    pub u: DVector<f64>,
    pub newton_steps: usize,
    /// Duality-gap bound on the objective at exit.
    pub gap: f64,
    /// `max(0, ||L^T u|| + mu^T u - c)` together with box violation.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocError {
    /// No point strictly inside the cone and the box.
    Infeasible,
    NumericalFailure,
}

impl SocProblem {
    pub fn dim(&self) -> usize {
        self.u_ref.len()
    }

    /// `||L^T u|| + mu^T u - c`; non-positive exactly on the cone.
    pub fn cone_value(&self, u: &DVector<f64>) -> f64 {
        (self.l.transpose() * u).norm() + self.mu.dot(u) - self.c
    }

    pub fn residual(&self, u: &DVector<f64>) -> f64 {
        let mut worst = self.cone_value(u).max(0.0);
        for j in 0..self.dim() {
            worst = worst
                .max(self.control_box.lower()[j] - u[j])
                .max(u[j] - self.control_box.upper()[j]);
        }
        worst
    }
}

/// Objective selector for the shared barrier loop.
#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// Variables `(u, s)`, minimize `s` with the cone relaxed by `s`.
    Phase1,
    Project,
}

struct Barrier<'a> {
    p: &'a SocProblem,
    mode: Mode,
}

impl Barrier<'_> {
    fn nvars(&self) -> usize {
        self.p.dim() + usize::from(self.mode == Mode::Phase1)
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, f64) {
        let m = self.p.dim();
        let u = z.rows(0, m).into_owned();
        let s = if self.mode == Mode::Phase1 { z[m] } else { 0.0 };
        (u, s)
    }

    /// Cone slack pair `(sigma, w)` with `sigma = c + s - mu^T u`, `w = L^T u`.
    fn cone(&self, z: &DVector<f64>) -> (f64, DVector<f64>) {
        let (u, s) = self.split(z);
        (self.p.c + s - self.p.mu.dot(&u), self.p.l.transpose() * u)
    }

    fn in_domain(&self, z: &DVector<f64>) -> bool {
        let (u, _) = self.split(z);
        for j in 0..self.p.dim() {
            if !(u[j] > self.p.control_box.lower()[j] && u[j] < self.p.control_box.upper()[j]) {
                return false;
            }
        }
        let (sigma, w) = self.cone(z);
        sigma > 0.0 && sigma * sigma - w.norm_squared() > 0.0
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let (u, s) = self.split(z);
        match self.mode {
            Mode::Phase1 => s,
            Mode::Project => (u - &self.p.u_ref).norm_squared(),
        }
    }

    fn value(&self, z: &DVector<f64>, t: f64) -> f64 {
        let (u, _) = self.split(z);
        let (sigma, w) = self.cone(z);
        let mut v = t * self.objective(z) - log(sigma * sigma - w.norm_squared());
        for j in 0..self.p.dim() {
            v -= log(u[j] - self.p.control_box.lower()[j]) + log(self.p.control_box.upper()[j] - u[j]);
        }
        v
    }

    fn derivatives(&self, z: &DVector<f64>, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.p.dim();
        let n = self.nvars();
        let (u, _) = self.split(z);
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        match self.mode {
            Mode::Phase1 => grad[m] += t,
            Mode::Project => {
                for j in 0..m {
                    grad[j] += 2.0 * t * (u[j] - self.p.u_ref[j]);
                    hess[(j, j)] += 2.0 * t;
                }
            }
        }
        for j in 0..m {
            let a = u[j] - self.p.control_box.lower()[j];
            let b = self.p.control_box.upper()[j] - u[j];
            grad[j] += -1.0 / a + 1.0 / b;
            hess[(j, j)] += 1.0 / (a * a) + 1.0 / (b * b);
        }
        // -log(sigma^2 - |w|^2) composed with the affine map z -> (sigma, w)
        let (sigma, w) = self.cone(z);
        let d = sigma * sigma - w.norm_squared();
        let k = 1 + m;
        let mut jac = DMatrix::zeros(k, n);
        for j in 0..m {
            jac[(0, j)] = -self.p.mu[j];
            for i in 0..m {
                jac[(1 + i, j)] = self.p.l[(j, i)];
            }
        }
        if self.mode == Mode::Phase1 {
            jac[(0, m)] = 1.0;
        }
        let mut dd = DVector::zeros(k);
        dd[0] = 2.0 * sigma;
        for i in 0..m {
            dd[1 + i] = -2.0 * w[i];
        }
        let mut h_inner = &dd * dd.transpose() / (d * d);
        h_inner[(0, 0)] -= 2.0 / d;
        for i in 0..m {
            h_inner[(1 + i, 1 + i)] += 2.0 / d;
        }
        grad += jac.transpose() * (-&dd / d);
        hess += jac.transpose() * h_inner * &jac;
        (grad, hess)
    }

    /// Damped Newton centering; returns the step count.
    fn center(&self, z: &mut DVector<f64>, t: f64, stop_below: Option<f64>) -> Result<usize, SocError> {
        for step in 0..MAX_NEWTON {
            if let Some(level) = stop_below {
                if self.split(z).1 < level {
                    return Ok(step);
                }
            }
            let (grad, hess) = self.derivatives(z, t);
            let Some(chol) = shifted_cholesky(hess) else {
                return Err(SocError::NumericalFailure);
            };
            let dz = -chol.solve(&grad);
            let decrement = -grad.dot(&dz);
            if decrement * 0.5 <= NEWTON_TOL {
                return Ok(step + 1);
            }
            let f0 = self.value(z, t);
            let floor = 4.0 * f64::EPSILON * (1.0 + z.amax());
            let mut alpha = 1.0;
            loop {
                // steps below rounding of z leave nothing to gain
                if alpha * dz.amax() <= floor {
                    return Ok(step + 1);
                }
                let cand = &*z + &dz * alpha;
                if self.in_domain(&cand) && self.value(&cand, t) <= f0 - 0.25 * alpha * decrement {
                    *z = cand;
                    break;
                }
                alpha *= 0.5;
            }
        }
        Ok(MAX_NEWTON)
    }
}

/// Cholesky factor, with a growing diagonal shift when rounding near the cone
/// boundary leaves the Hessian numerically indefinite.
fn shifted_cholesky(hess: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = hess.clone().cholesky() {
        return Some(c);
    }
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut tau = 1e-14 * scale;
    while tau <= scale {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += tau;
        }
        if let Some(c) = h.cholesky() {
            return Some(c);
        }
        tau *= 10.0;
    }
    None
}

/// Phase-1 barrier on `(u, s)`: minimizes `s` with `||L^T u|| + mu^T u - c <= s`.
/// With `stop_at_zero` it returns as soon as a strictly feasible `u` is found.
fn phase_one(p: &SocProblem, stop_at_zero: bool, steps: &mut usize) -> Result<(DVector<f64>, f64), SocError> {
    let center = p.control_box.center();
    let m = p.dim();
    let phase1 = Barrier { p, mode: Mode::Phase1 };
    let mut z = DVector::zeros(m + 1);
    z.rows_mut(0, m).copy_from(&center);
    z[m] = p.cone_value(&center).max(0.0) + 1.0;
    let nu = 2.0 + 2.0 * m as f64;
    let scale = 1.0 + p.c.abs() + p.mu.norm() * p.control_box.widths().norm();
    let mut t = nu / scale;
    let stop = if stop_at_zero { Some(0.0) } else { None };
    for _ in 0..MAX_OUTER {
        *steps += phase1.center(&mut z, t, stop)?;
        let s = z[m];
        if stop_at_zero && s < 0.0 {
            break;
        }
        // s - nu/t lower-bounds the phase-1 optimum
        if (stop_at_zero && s - nu / t > 0.0) || nu / t < 1e-13 * scale {
            break;
        }
        t /= BARRIER_REDUCTION;
    }
    let s = z[m];
    Ok((z.rows(0, m).into_owned(), s))
}

/// Strictly feasible point, from the box center or by a phase-1 barrier solve.
fn strictly_feasible(p: &SocProblem, steps: &mut usize) -> Result<DVector<f64>, SocError> {
    let center = p.control_box.center();
    let project = Barrier {
        p,
        mode: Mode::Project,
    };
    if project.in_domain(&center) {
        return Ok(center);
    }
    let (u, s) = phase_one(p, true, steps)?;
    if s < 0.0 && project.in_domain(&u) {
        Ok(u)
    } else {
        Err(SocError::Infeasible)
    }
}

/// Box point minimizing `||L^T u|| + mu^T u`, the least violating control when the cone misses the box.
pub fn minimize_cone_value(p: &SocProblem) -> Result<DVector<f64>, SocError> {
    let mut steps = 0;
    phase_one(p, false, &mut steps).map(|(u, _)| u)
}

/// Solve to a duality gap below `tol^2 * (1 + ||u_ref||^2)` (floored at 1e-14
/// relative), which keeps the minimizer within about `tol` of the exact one.
pub fn solve_socp(p: &SocProblem, tol: f64) -> Result<SocSolution, SocError> {
    let mut steps = 0;
    let mut z = strictly_feasible(p, &mut steps)?;
    let barrier = Barrier {
        p,
        mode: Mode::Project,
    };
    let m = p.dim();
    let nu = 2.0 + 2.0 * m as f64;
    let gap_target = (tol * tol).max(MIN_GAP) * (1.0 + p.u_ref.norm_squared());
    let mut t = nu / (1.0 + barrier.objective(&z));
    let mut gap = f64::INFINITY;
    for _ in 0..MAX_OUTER {
        steps += barrier.center(&mut z, t, None)?;
        gap = nu / t;
        if gap <= gap_target {
            break;
        }
        t /= BARRIER_REDUCTION;
    }
    let residual = p.residual(&z);
    Ok(SocSolution {
        u: z,
        newton_steps: steps,
        gap,
        residual,
    })
}



#[cfg(test)]
mod tests {
    use super::*;

    fn problem(u_ref: [f64; 2], mu: [f64; 2], l: [f64; 4], c: f64) -> SocProblem {
        SocProblem {
            u_ref: DVector::from_row_slice(&u_ref),
            mu: DVector::from_row_slice(&mu),
            l: DMatrix::from_row_slice(2, 2, &l),
            c,
            control_box: BoxLimits::symmetric(&[20.0, 20.0]).unwrap(),
        }
    }

    #[test]
    fn unit_ball_projection() {
        let p = problem([2.0, 0.0], [0.0, 0.0], [1.0, 0.0, 0.0, 1.0], 1.0);
        let s = solve_socp(&p, 1e-8).unwrap();
        assert!((s.u[0] - 1.0).abs() < 1e-6 && s.u[1].abs() < 1e-6, "{}", s.u);
        assert!(s.residual == 0.0);
    }

    #[test]
    fn reference_inside_is_returned() {
        let p = problem([0.2, -0.1], [0.0, 0.0], [1.0, 0.0, 0.0, 1.0], 1.0);
        let s = solve_socp(&p, 1e-8).unwrap();
        assert!((s.u[0] - 0.2).abs() < 1e-6 && (s.u[1] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn needs_phase_one_when_center_outside() {
        // cone: |u| <= -2 u1 - 5, nearest point to the origin is (-5, 0)
        let p = problem([0.0, 0.0], [2.0, 0.0], [1.0, 0.0, 0.0, 1.0], -5.0);
        let s = solve_socp(&p, 1e-8).unwrap();
        assert!(p.cone_value(&s.u) <= 1e-9);
        assert!((s.u[0] + 5.0).abs() < 1e-5 && s.u[1].abs() < 1e-5, "{}", s.u);
    }

    #[test]
    fn detects_empty_cone() {
        // |u| <= -1 has no solutions
        let p = problem([0.0, 0.0], [0.0, 0.0], [1.0, 0.0, 0.0, 1.0], -1.0);
        assert_eq!(solve_socp(&p, 1e-8), Err(SocError::Infeasible));
    }

    #[test]
    fn detects_cone_outside_box() {
        // u1 <= -30 is required but the box stops at -20
        let p = problem([0.0, 0.0], [1.0, 0.0], [1e-3, 0.0, 0.0, 1e-3], -30.0);
        assert_eq!(solve_socp(&p, 1e-8), Err(SocError::Infeasible));
    }
}
