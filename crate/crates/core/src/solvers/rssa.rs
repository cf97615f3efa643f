use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::lp::{LinearProgram, LpOutcome};
use super::qp::{solve_qp, QpError, QpProblem, FEAS_TOL, QP_TOL};
use super::socp::{minimize_cone_value, solve_socp, SocError, SocProblem};
use crate::bounds::{lie_bounds_at, UncertaintyBound};
use crate::dynamics::UncertainSystem;
use crate::math::sqrt;
use crate::safety_index::SafetyIndexParams;
use crate::types::{
    BoxLimits, ControlVector, ConvexSet, EllipsoidSet, LieDerivativeBounds, PolytopeSet, RobustControlResult,
    SolveStatus, StateVector,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssaOptions {
    /// QP stationarity and barrier accuracy.
    pub tol: f64,
    /// Accepted violation of the robust constraint.
    pub feas_tol: f64,
    /// Cutting-plane rounds; `None` means the vertex count.
    pub max_iters: Option<usize>,
}

impl Default for RssaOptions {
    fn default() -> Self {
        Self {
            tol: QP_TOL,
            feas_tol: FEAS_TOL,
            max_iters: None,
        }
    }
}

fn box_violation(control_box: &BoxLimits, u: &DVector<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..u.len() {
        worst = worst
            .max(control_box.lower()[j] - u[j])
            .max(u[j] - control_box.upper()[j]);
    }
    worst
}

fn infeasible(status: SolveStatus, u_ref: &DVector<f64>, control_box: &BoxLimits, cuts: usize, iters: usize) -> RobustControlResult {
    RobustControlResult {
        u: ControlVector::from(control_box.clamp(u_ref)),
        status,
        cuts_used: cuts,
        iterations: iters,
        residual: f64::INFINITY,
    }
}

/// Whether the origin lies in the interior of the hull of `v`.
///
/// One and two dimensions are decided geometrically; higher dimensions use
/// [`zero_in_interior_lp`].
pub fn zero_in_interior(v: &PolytopeSet) -> bool {
    let scale = v.vertices().iter().fold(0.0_f64, |a, x| a.max(x.amax()));
    if scale == 0.0 {
        return false;
    }
    let tiny = 1e-12 * scale;
    match v.dim() {
        1 => {
            let lo = v.vertices().iter().fold(f64::INFINITY, |a, x| a.min(x[0]));
            let hi = v.vertices().iter().fold(f64::NEG_INFINITY, |a, x| a.max(x[0]));
            lo < -tiny && hi > tiny
        }
        2 => {
            let mut angles: Vec<f64> = v
                .vertices()
                .iter()
                .filter(|x| x.norm() > tiny)
                .map(|x| libm::atan2(x[1], x[0]))
                .collect();
            if angles.len() < 3 {
                return false;
            }
            angles.sort_by(|a, b| a.total_cmp(b));
            let mut gap = 2.0 * core::f64::consts::PI - (angles[angles.len() - 1] - angles[0]);
            for w in angles.windows(2) {
                gap = gap.max(w[1] - w[0]);
            }
            gap < core::f64::consts::PI - 1e-12
        }
        _ => zero_in_interior_lp(v),
    }
}

/// LP form of the interior test: the origin is outside the interior exactly when
/// some nonzero `w` has `w^T v_i <= 0` for every vertex. With `||w||_inf = 1`
/// this is `2 m` small LPs, one per signed coordinate pinned to 1.
pub fn zero_in_interior_lp(v: &PolytopeSet) -> bool {
    let m = v.dim();
    let scale = v.vertices().iter().fold(0.0_f64, |a, x| a.max(x.amax()));
    if scale == 0.0 {
        return false;
    }
    for k in 0..m {
        for sign in [1.0, -1.0] {
            let mut c = vec![0.0; m + 1];
            c[m] = 1.0;
            let mut lp = LinearProgram::new(c);
            for j in 0..m {
                if j == k {
                    lp.bound(j, Some(sign), Some(sign));
                } else {
                    lp.bound(j, Some(-1.0), Some(1.0));
                }
            }
            for x in v.vertices() {
                let mut row: Vec<f64> = x.iter().copied().collect();
                row.push(-1.0);
                lp.leq(row, 0.0);
            }
            if let LpOutcome::Optimal { objective, .. } = lp.solve() {
                if objective <= 1e-12 * scale {
                    return false;
                }
            }
        }
    }
    true
}

fn classify_polytope_infeasibility(v_g: &PolytopeSet, c: f64) -> SolveStatus {
    if c < 0.0 && v_g.contains(&DVector::zeros(v_g.dim()), 1e-12) {
        SolveStatus::InfeasibleEmptyUr
    } else {
        SolveStatus::InfeasibleControlLimits
    }
}

/// Cutting-plane solution of `min ||u - u_ref||^2` s.t. `v^T u <= c` for every
/// vertex `v` of `V_g`, within the box.
pub fn polytope_rssa_lie(
    v_g: &PolytopeSet,
    c: f64,
    u_ref: &DVector<f64>,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> RobustControlResult {
    if c < 0.0 && zero_in_interior(v_g) {
        return infeasible(SolveStatus::InfeasibleEmptyUr, u_ref, control_box, 0, 0);
    }
    let max_iters = opts.max_iters.unwrap_or(v_g.vertices().len()).max(1);
    let (_, first) = v_g.support(u_ref);
    let mut cuts: Vec<usize> = vec![first];
    let mut qp = QpProblem::new(u_ref.iter().copied().collect(), control_box.clone());
    qp.push(v_g.vertices()[first].iter().copied().collect(), c);
    let mut u = DVector::zeros(u_ref.len());
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        match solve_qp(&qp, opts.tol) {
            Ok(sol) => u = DVector::from_vec(sol.u),
            Err(QpError::Infeasible) => {
                return infeasible(classify_polytope_infeasibility(v_g, c), u_ref, control_box, cuts.len(), iterations)
            }
            Err(QpError::NotConverged) => {
                log::warn!("active-set QP did not converge; keeping last iterate");
            }
        }
        let (worst, idx) = v_g.support(&u);
        if worst <= c + opts.feas_tol || cuts.contains(&idx) {
            break;
        }
        cuts.push(idx);
        qp.push(v_g.vertices()[idx].iter().copied().collect(), c);
    }
    let residual = (v_g.support(&u).0 - c).max(box_violation(control_box, &u)).max(0.0);
    let status = if residual <= opts.feas_tol {
        SolveStatus::Optimal
    } else {
        classify_polytope_infeasibility(v_g, c)
    };
    RobustControlResult {
        u: ControlVector::from(u),
        status,
        cuts_used: cuts.len(),
        iterations,
        residual,
    }
}

/// Cone data `(mu_v, L)` with `L L^T = dof * Q_v`.
pub fn ellipsoid_cone(v_g: &EllipsoidSet) -> (DVector<f64>, DMatrix<f64>) {
    (v_g.mu().clone(), v_g.cholesky_factor() * sqrt(v_g.dof()))
}

fn classify_ellipsoid_infeasibility(v_g: &EllipsoidSet, c: f64) -> SolveStatus {
    if c < 0.0 && v_g.contains(&DVector::zeros(v_g.dim()), 1e-12) {
        SolveStatus::InfeasibleEmptyUr
    } else {
        SolveStatus::InfeasibleControlLimits
    }
}

/// Exact SOC form of the ellipsoid-robust constraint:
/// `||L^T u|| <= -mu_v^T u + c` with the box.
pub fn ellipsoid_rssa_lie(
    v_g: &EllipsoidSet,
    c: f64,
    u_ref: &DVector<f64>,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> RobustControlResult {
    let (mu, l) = ellipsoid_cone(v_g);
    let problem = SocProblem {
        u_ref: u_ref.clone(),
        mu,
        l,
        c,
        control_box: control_box.clone(),
    };
    match solve_socp(&problem, opts.tol.max(1e-9)) {
        Ok(sol) => {
            let residual = (v_g.support(&sol.u) - c).max(box_violation(control_box, &sol.u)).max(0.0);
            let status = if residual <= opts.feas_tol {
                SolveStatus::Optimal
            } else {
                classify_ellipsoid_infeasibility(v_g, c)
            };
            RobustControlResult {
                u: ControlVector::from(sol.u),
                status,
                cuts_used: 1,
                iterations: sol.newton_steps,
                residual,
            }
        }
        Err(SocError::Infeasible) => infeasible(classify_ellipsoid_infeasibility(v_g, c), u_ref, control_box, 1, 0),
        Err(SocError::NumericalFailure) => {
            log::warn!("barrier Newton system lost positive definiteness");
            infeasible(classify_ellipsoid_infeasibility(v_g, c), u_ref, control_box, 1, 0)
        }
    }
}

/// One halfspace `a^T u <= c` projected with the QP engine.
pub fn halfspace_rssa_lie(
    a: &DVector<f64>,
    c: f64,
    u_ref: &DVector<f64>,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> RobustControlResult {
    let mut qp = QpProblem::new(u_ref.iter().copied().collect(), control_box.clone());
    qp.push(a.iter().copied().collect(), c);
    match solve_qp(&qp, opts.tol) {
        Ok(sol) => {
            let residual = sol.residual;
            RobustControlResult {
                u: ControlVector::new(sol.u),
                status: if residual <= opts.feas_tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::InfeasibleControlLimits
                },
                cuts_used: 1,
                iterations: sol.iterations,
                residual,
            }
        }
        Err(_) => {
            let empty = c < 0.0 && a.iter().all(|v| *v == 0.0);
            let status = if empty {
                SolveStatus::InfeasibleEmptyUr
            } else {
                SolveStatus::InfeasibleControlLimits
            };
            infeasible(status, u_ref, control_box, 1, 0)
        }
    }
}

/// Dispatch on the shape of `V_g`.
pub fn robust_filter_lie(
    lie: &LieDerivativeBounds,
    u_ref: &DVector<f64>,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> RobustControlResult {
    match &lie.v_g {
        ConvexSet::Polytope(p) if p.vertices().len() == 1 => {
            halfspace_rssa_lie(&p.vertices()[0], lie.c, u_ref, control_box, opts)
        }
        ConvexSet::Polytope(p) => polytope_rssa_lie(p, lie.c, u_ref, control_box, opts),
        ConvexSet::Ellipsoid(e) => ellipsoid_rssa_lie(e, lie.c, u_ref, control_box, opts),
    }
}

fn check_dims<M: UncertainSystem + ?Sized>(model: &M, u_ref: &ControlVector, control_box: &BoxLimits) -> Result<()> {
    if u_ref.len() != model.control_dim() || control_box.dim() != model.control_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.control_dim(),
            got: u_ref.len(),
        });
    }
    Ok(())
}

fn expect_kind(bound: &UncertaintyBound, kind: &'static str) -> Result<()> {
    if bound.kind_name() == kind {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!(
            "expected a {kind} bound, got {}",
            bound.kind_name()
        )))
    }
}

/// Polytope RSSA at a state.
pub fn polytope_rssa<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    params: &SafetyIndexParams,
    bound: &UncertaintyBound,
    u_ref: &ControlVector,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> Result<RobustControlResult> {
    expect_kind(bound, "polytope")?;
    robust_filter(model, state, params, bound, u_ref, control_box, opts)
}

/// Ellipsoid RSSA at a state.
pub fn ellipsoid_rssa<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    params: &SafetyIndexParams,
    bound: &UncertaintyBound,
    u_ref: &ControlVector,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> Result<RobustControlResult> {
    expect_kind(bound, "ellipsoid")?;
    robust_filter(model, state, params, bound, u_ref, control_box, opts)
}

/// Constant RSSA at a state: the mean model with `c` tightened by `d_res`.
pub fn constant_rssa<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    params: &SafetyIndexParams,
    bound: &UncertaintyBound,
    u_ref: &ControlVector,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> Result<RobustControlResult> {
    expect_kind(bound, "constant")?;
    robust_filter(model, state, params, bound, u_ref, control_box, opts)
}

/// Whichever filter matches the bound.
pub fn robust_filter<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    params: &SafetyIndexParams,
    bound: &UncertaintyBound,
    u_ref: &ControlVector,
    control_box: &BoxLimits,
    opts: &RssaOptions,
) -> Result<RobustControlResult> {
    check_dims(model, u_ref, control_box)?;
    let lie = lie_bounds_at(model, params, state, bound)?;
    Ok(robust_filter_lie(&lie, u_ref.as_vector(), control_box, opts))
}

/// A lower bound on `min_u max_{v in V_g} v^T u` over the box, from single
/// members of `V_g`: each vertex for polytopes, the center for ellipsoids.
fn box_floor(v_g: &ConvexSet, control_box: &BoxLimits) -> f64 {
    let floor = |v: &DVector<f64>| -> f64 {
        (0..v.len())
            .map(|j| (v[j] * control_box.lower()[j]).min(v[j] * control_box.upper()[j]))
            .sum()
    };
    match v_g {
        ConvexSet::Polytope(p) => p.vertices().iter().map(floor).fold(f64::NEG_INFINITY, f64::max),
        ConvexSet::Ellipsoid(e) => floor(e.mu()),
    }
}

/// Whether a control in the box meets the robust constraint tightened by `margin`.
pub fn is_feasible_lie(lie: &LieDerivativeBounds, control_box: &BoxLimits, margin: f64) -> bool {
    let tightened = lie.with_margin(margin);
    if box_floor(&lie.v_g, control_box) > tightened.c + FEAS_TOL {
        return false;
    }
    let u_ref = control_box.center();
    robust_filter_lie(&tightened, &u_ref, control_box, &RssaOptions::default())
        .status
        .is_feasible()
}

pub fn is_feasible<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    params: &SafetyIndexParams,
    bound: &UncertaintyBound,
    control_box: &BoxLimits,
    margin: f64,
) -> Result<bool> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument("feasibility margin must be non-negative".into()));
    }
    let lie = lie_bounds_at(model, params, state, bound)?;
    Ok(is_feasible_lie(&lie, control_box, margin))
}

/// Box control minimizing the worst case `max_{v in V_g} v^T u`: an LP over the
/// vertices for polytopes, the phase-1 cone problem for ellipsoids.
pub fn least_violating_control(lie: &LieDerivativeBounds, control_box: &BoxLimits) -> DVector<f64> {
    let m = control_box.dim();
    match &lie.v_g {
        ConvexSet::Polytope(p) => {
            let mut c = vec![0.0; m + 1];
            c[m] = 1.0;
            let mut lp = LinearProgram::new(c);
            for j in 0..m {
                lp.bound(j, Some(control_box.lower()[j]), Some(control_box.upper()[j]));
            }
            for v in p.vertices() {
                let mut row: Vec<f64> = v.iter().copied().collect();
                row.push(-1.0);
                lp.leq(row, 0.0);
            }
            match lp.solve() {
                LpOutcome::Optimal { x, .. } => DVector::from_row_slice(&x[..m]),
                _ => control_box.center(),
            }
        }
        ConvexSet::Ellipsoid(e) => {
            let (mu, l) = ellipsoid_cone(e);
            let problem = SocProblem {
                u_ref: control_box.center(),
                mu,
                l,
                c: lie.c,
                control_box: control_box.clone(),
            };
            minimize_cone_value(&problem).unwrap_or_else(|_| control_box.center())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_row_slice(&[a, b])
    }

    fn bx() -> BoxLimits {
        BoxLimits::symmetric(&[20.0, 20.0]).unwrap()
    }

    #[test]
    fn single_vertex_projection() {
        let p = PolytopeSet::new(vec![v2(1.0, 0.0)]).unwrap();
        let r = polytope_rssa_lie(&p, 1.0, &v2(2.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.u[0] - 1.0).abs() < 1e-9 && r.u[1].abs() < 1e-9);
    }

    #[test]
    fn two_vertices_two_cuts() {
        let p = PolytopeSet::new(vec![v2(1.0, 0.0), v2(0.0, 1.0)]).unwrap();
        let r = polytope_rssa_lie(&p, 1.0, &v2(2.0, 2.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.u[0] - 1.0).abs() < 1e-9 && (r.u[1] - 1.0).abs() < 1e-9);
        assert!(r.cuts_used <= 2);
    }

    #[test]
    fn emptiness_pre_check_on_surrounding_vertices() {
        let p = PolytopeSet::new(vec![v2(1.0, 0.0), v2(-1.0, 1.0), v2(-1.0, -1.0)]).unwrap();
        assert!(zero_in_interior(&p) && zero_in_interior_lp(&p));
        let r = polytope_rssa_lie(&p, -0.1, &v2(0.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::InfeasibleEmptyUr);
        assert_eq!(r.iterations, 0);
        // with c >= 0 the origin control is admissible
        let r = polytope_rssa_lie(&p, 0.0, &v2(3.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
    }

    #[test]
    fn boundary_origin_is_not_interior() {
        let p = PolytopeSet::new(vec![v2(1.0, 0.0), v2(-1.0, 0.0), v2(0.0, 1.0)]).unwrap();
        assert!(!zero_in_interior(&p) && !zero_in_interior_lp(&p));
        // U_r is still empty for c < 0 since the origin is in the hull
        let r = polytope_rssa_lie(&p, -0.1, &v2(0.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::InfeasibleEmptyUr);
    }

    #[test]
    fn control_limits_status() {
        let p = PolytopeSet::new(vec![v2(1.0, 0.0), v2(1.0, 0.1)]).unwrap();
        let r = polytope_rssa_lie(&p, -30.0, &v2(0.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::InfeasibleControlLimits);
        let u = least_violating_control(
            &LieDerivativeBounds {
                v_f: ConvexSet::Polytope(PolytopeSet::singleton(DVector::zeros(1)).unwrap()),
                v_g: ConvexSet::Polytope(p),
                c: -30.0,
            },
            &bx(),
        );
        assert!((u[0] + 20.0).abs() < 1e-9);
    }

    #[test]
    fn ellipsoid_unit_ball() {
        let e = EllipsoidSet::new(DVector::zeros(2), DMatrix::identity(2, 2), 1.0).unwrap();
        let r = ellipsoid_rssa_lie(&e, 1.0, &v2(2.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.u[0] - 1.0).abs() < 1e-6 && r.u[1].abs() < 1e-6, "{}", r.u.as_vector());
    }

    #[test]
    fn ellipsoid_empty_and_limited() {
        let e = EllipsoidSet::new(DVector::zeros(2), DMatrix::identity(2, 2), 1.0).unwrap();
        let r = ellipsoid_rssa_lie(&e, -1.0, &v2(0.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::InfeasibleEmptyUr);
        let e = EllipsoidSet::new(v2(1.0, 0.0), DMatrix::identity(2, 2) * 1e-4, 1.0).unwrap();
        let r = ellipsoid_rssa_lie(&e, -30.0, &v2(0.0, 0.0), &bx(), &RssaOptions::default());
        assert_eq!(r.status, SolveStatus::InfeasibleControlLimits);
    }

    #[test]
    fn feasibility_is_monotone_in_margin() {
        let p = PolytopeSet::new(vec![v2(1.0, 0.5), v2(0.8, -0.2)]).unwrap();
        let lie = LieDerivativeBounds {
            v_f: ConvexSet::Polytope(PolytopeSet::singleton(DVector::zeros(1)).unwrap()),
            v_g: ConvexSet::Polytope(p),
            c: -5.0,
        };
        assert!(is_feasible_lie(&lie, &bx(), 0.0));
        assert!(is_feasible_lie(&lie, &bx(), 5.0));
        assert!(!is_feasible_lie(&lie, &bx(), 1e4));
    }
}
