//! Closed-loop simulation with a robust safe control filter in the loop, and
//! the studies built on it: start-state scans, feasibility maps and forward
//! invariance under parameters outside the modeled range.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bounds::{lie_bounds_at, BoundBuilder};
use crate::dynamics::{ScaraModel, SegwayModel, UncertainSystem};
use crate::safety_index::{constraint_index, gamma, gamma_inverse, phi, phi0, SafetyIndexParams};
use crate::solvers::{least_violating_control, robust_filter_lie, solve_qp, QpProblem, RssaOptions};
use crate::stats::stream_rng;
use crate::synthesis::{sample_box_grid, MaybeSync};
use crate::types::{BoxLimits, ConvexSet, ControlVector, LieDerivativeBounds, SolveStatus, StateVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RssaVariant {
    /// Reference control passed through (clamped to the box).
    None,
    Polytope,
    Ellipsoid,
    Constant,
}

impl RssaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RssaVariant::None => "none",
            RssaVariant::Polytope => "polytope",
            RssaVariant::Ellipsoid => "ellipsoid",
            RssaVariant::Constant => "constant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(RssaVariant::None),
            "polytope" => Some(RssaVariant::Polytope),
            "ellipsoid" => Some(RssaVariant::Ellipsoid),
            "constant" => Some(RssaVariant::Constant),
            _ => None,
        }
    }
}

/// Nominal (unfiltered) controllers.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Saturated PD on the position half of the state:
    /// `u = kd (clamp(kp (target - q), -v_max, v_max) - q_dot)`.
    JointPd { target: Vec<f64>, kp: f64, kd: f64, v_max: f64 },
    /// `u = feedforward - K (x - setpoint)`.
    StateFeedback {
        gain: DMatrix<f64>,
        setpoint: DVector<f64>,
        feedforward: DVector<f64>,
    },
    Zero { control_dim: usize },
}

impl Reference {
    /// PD toward the stretched-out pose `(0, 0)`, whose end effector lies past the wall.
    pub fn scara_push(_model: &ScaraModel) -> Self {
        Reference::JointPd {
            target: vec![0.0, 0.0],
            kp: 2.0,
            kd: 2.0,
            v_max: 1.5,
        }
    }

    /// Cruise-speed tracker: LQR on the nominal model linearized at
    /// `(tilt, p_dot, tilt_dot) = (0, v, 0)`, position left free.
    pub fn segway_cruise(model: &SegwayModel) -> Result<Self> {
        Self::segway_cruise_weighted(model, [10.0, 20.0, 1.0], 0.1)
    }

    /// [`Reference::segway_cruise`] with LQR weights on `(tilt, p_dot, tilt_dot)` and the input.
    pub fn segway_cruise_weighted(model: &SegwayModel, q: [f64; 3], r: f64) -> Result<Self> {
        let v = model.target_speed;
        let nominal = model.k_m.mean;
        let setpoint = DVector::from_row_slice(&[0.0, 0.0, v, 0.0]);
        // motor input holding the cruise speed against back-EMF damping
        let u_ff = model.k_b * v / model.r;
        let u0 = DVector::from_element(1, u_ff);
        let deriv = |x: &DVector<f64>, u: &DVector<f64>| -> Result<DVector<f64>> {
            Ok(model
                .segway_dynamics(&StateVector::from(x.clone()), nominal)?
                .state_derivative(u))
        };
        let h = 1e-6;
        let idx = [1usize, 2, 3];
        let mut a = DMatrix::zeros(3, 3);
        let mut b = DMatrix::zeros(3, 1);
        for (col, &j) in idx.iter().enumerate() {
            let mut xp = setpoint.clone();
            let mut xm = setpoint.clone();
            xp[j] += h;
            xm[j] -= h;
            let d = (deriv(&xp, &u0)? - deriv(&xm, &u0)?) / (2.0 * h);
            for (row, &i) in idx.iter().enumerate() {
                a[(row, col)] = d[i];
            }
        }
        let d = (deriv(&setpoint, &DVector::from_element(1, u_ff + h))?
            - deriv(&setpoint, &DVector::from_element(1, u_ff - h))?)
            / (2.0 * h);
        for (row, &i) in idx.iter().enumerate() {
            b[(row, 0)] = d[i];
        }
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&q));
        let r = DMatrix::from_element(1, 1, r);
        let k3 = lqr_gain(&a, &b, &q, &r, 0.01)?;
        let mut gain = DMatrix::zeros(1, 4);
        for (col, &j) in idx.iter().enumerate() {
            gain[(0, j)] = k3[(0, col)];
        }
        Ok(Reference::StateFeedback {
            gain,
            setpoint,
            feedforward: DVector::from_element(1, u_ff),
        })
    }

    pub fn control(&self, state: &StateVector) -> ControlVector {
        match self {
            Reference::JointPd { target, kp, kd, v_max } => {
                let k = target.len();
                let u: Vec<f64> = (0..k)
                    .map(|i| kd * ((kp * (target[i] - state[i])).clamp(-v_max, *v_max) - state[k + i]))
                    .collect();
                ControlVector::new(u)
            }
            Reference::StateFeedback {
                gain,
                setpoint,
                feedforward,
            } => ControlVector::from(feedforward - gain * (state.as_vector() - setpoint)),
            Reference::Zero { control_dim } => ControlVector::zeros(*control_dim),
        }
    }
}

/// Nominal controller of each shipped robot.
pub fn reference_controller<M: UncertainSystem + ?Sized>(reference: &Reference, _model: &M, state: &StateVector) -> ControlVector {
    reference.control(state)
}

/// Infinite-horizon discrete LQR gain for `x+ = (I + A h) x + B h u` by Riccati iteration.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let ad = DMatrix::identity(n, n) + a * h;
    let bd = b * h;
    let mut p = q.clone();
    for _ in 0..200_000 {
        let s = r + bd.transpose() * &p * &bd;
        let s_inv = s.try_inverse().ok_or(Error::NotPositiveDefinite)?;
        let k = &s_inv * bd.transpose() * &p * &ad;
        let next = q + ad.transpose() * &p * (&ad - &bd * &k);
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).amax();
        p = next;
        if change <= 1e-10 * (1.0 + p.amax()) {
            return Ok(k);
        }
    }
    Err(Error::InvalidArgument("Riccati iteration did not converge".into()))
}

/// One simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub state: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub u: Vec<f64>,
    pub phi0: f64,
    pub phi: f64,
    /// Worst case over the bound of `phi_dot + gamma(phi)` for the applied control
    /// (NaN without a filter).
    pub worst_rate: f64,
    /// `phi_dot + gamma(phi)` under the true model.
    pub true_rate: f64,
    pub status: Option<SolveStatus>,
    pub fallback: bool,
    pub in_state_box: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub robot: &'static str,
    pub variant: RssaVariant,
    pub true_parameter: f64,
    pub dt: f64,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_phi0(&self) -> f64 {
        self.steps.iter().map(|s| s.phi0).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_phi(&self) -> f64 {
        self.steps.iter().map(|s| s.phi).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest audited `phi_dot + gamma(phi)` over steps where the filter found a solution.
    pub fn max_worst_rate(&self) -> f64 {
        self.steps
            .iter()
            .filter(|s| s.status == Some(SolveStatus::Optimal))
            .map(|s| s.worst_rate)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn fallback_count(&self) -> usize {
        self.steps.iter().filter(|s| s.fallback).count()
    }

    /// `sum |u - clamp(u_ref)| dt`.
    pub fn cumulative_deviation(&self, control_box: &BoxLimits) -> f64 {
        self.steps
            .iter()
            .map(|s| {
                let r = control_box.clamp(&DVector::from_row_slice(&s.u_ref));
                (DVector::from_row_slice(&s.u) - r).norm() * self.dt
            })
            .sum()
    }

    /// Time of the first step with `phi0 > tol`.
    pub fn first_violation(&self, tol: f64) -> Option<f64> {
        self.steps.iter().find(|s| s.phi0 > tol).map(|s| s.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub steps: usize,
    pub options: RssaOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            steps: 2500,
            options: RssaOptions::default(),
        }
    }
}

/// Classical fourth-order Runge-Kutta step with the control held constant.
pub fn rk4_step<M: UncertainSystem + ?Sized>(
    model: &M,
    parameter: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let deriv = |s: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(model.dynamics(&StateVector::from(s.clone()), parameter)?.state_derivative(u))
    };
    let k1 = deriv(x)?;
    let k2 = deriv(&(x + &k1 * (dt / 2.0)))?;
    let k3 = deriv(&(x + &k2 * (dt / 2.0)))?;
    let k4 = deriv(&(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Safest box control when the filter is infeasible: the smallest achievable
/// worst case `t*` of `max_{v in V_g} v^T u`, then the control closest to
/// `u_ref` attaining it.
pub fn fallback_control(lie: &LieDerivativeBounds, u_ref: &DVector<f64>, control_box: &BoxLimits) -> DVector<f64> {
    let u_star = least_violating_control(lie, control_box);
    let t_star = lie.v_g.support(&u_star);
    let slack = 1e-9 * (1.0 + t_star.abs());
    let relaxed = LieDerivativeBounds {
        c: t_star + slack,
        ..lie.clone()
    };
    let res = robust_filter_lie(&relaxed, u_ref, control_box, &RssaOptions::default());
    if res.status.is_feasible() {
        return res.u.into_vector();
    }
    if let ConvexSet::Polytope(p) = &lie.v_g {
        let mut qp = QpProblem::new(u_ref.iter().copied().collect(), control_box.clone());
        for v in p.vertices() {
            qp.push(v.iter().copied().collect(), t_star + 1e-6 * (1.0 + t_star.abs()));
        }
        if let Ok(sol) = solve_qp(&qp, 1e-8) {
            return DVector::from_vec(sol.u);
        }
    }
    u_star
}

/// Roll out the true model (hidden `true_parameter`) under the reference
/// controller, filtered by the bound from `filter` when given.
pub fn simulate<M: UncertainSystem + ?Sized>(
    model: &M,
    true_parameter: f64,
    reference: &Reference,
    params: &SafetyIndexParams,
    filter: Option<(&BoundBuilder, RssaVariant)>,
    x0: &StateVector,
    cfg: &SimulationConfig,
) -> Result<TrajectoryLog> {
    if !(cfg.dt > 0.0) {
        return Err(Error::InvalidArgument("time step must be positive".into()));
    }
    model.check_state(x0)?;
    let control_box = model.control_box();
    let mut x = x0.as_vector().clone();
    let mut steps = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let t = k as f64 * cfg.dt;
        let state = StateVector::from(x.clone());
        let u_ref = reference.control(&state).into_vector();
        let idx = constraint_index(params, model, &state);
        let (u, status, fallback, worst_rate) = match filter {
            Some((builder, _)) => {
                let bound = builder.build(model, &state)?;
                let lie = lie_bounds_at(model, params, &state, &bound)?;
                let res = robust_filter_lie(&lie, &u_ref, control_box, &cfg.options);
                let (u, fallback) = if res.status.is_feasible() {
                    (res.u.into_vector(), false)
                } else {
                    log::debug!("t={t:.4}: {} filter infeasible, safety fallback", res.status.as_str());
                    (fallback_control(&lie, &u_ref, control_box), true)
                };
                // worst case of phi_dot + gamma = support(u) - c
                let worst = lie.v_g.support(&u) - lie.c;
                (u, Some(res.status), fallback, worst)
            }
            None => (control_box.clamp(&u_ref), None, false, f64::NAN),
        };
        let truth = model.dynamics(&state, true_parameter)?;
        let true_rate = idx.grad.dot(&truth.state_derivative(&u)) + gamma(params, idx.value);
        steps.push(StepRecord {
            t,
            state: x.iter().copied().collect(),
            u_ref: u_ref.iter().copied().collect(),
            u: u.iter().copied().collect(),
            phi0: phi0(model, &state),
            phi: phi(params, model, &state),
            worst_rate,
            true_rate,
            status,
            fallback,
            in_state_box: model.state_box().contains(x.as_slice(), 1e-9),
        });
        x = rk4_step(model, true_parameter, &x, &u, cfg.dt)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("simulated state"));
        }
    }
    Ok(TrajectoryLog {
        robot: model.name(),
        variant: filter.map(|(_, v)| v).unwrap_or(RssaVariant::None),
        true_parameter,
        dt: cfg.dt,
        steps,
    })
}

/// Start states for the two trajectory studies, found by a grid scan of the
/// joint-position plane at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseStarts {
    /// `phi < 0`: the state with the smallest `phi`.
    pub case1: StateVector,
    /// `phi0 < 0 < phi`: the state with the largest `phi`.
    pub case2: StateVector,
}

/// Scan a grid over the position half of the state box (velocities zero, plus
/// the velocity samples given) for the two study start states.
pub fn scan_case_starts<M: UncertainSystem + ?Sized>(
    model: &M,
    params: &SafetyIndexParams,
    counts: usize,
    velocities: &[Vec<f64>],
    phi0_margin: f64,
) -> Result<CaseStarts> {
    let n = model.state_dim();
    let k = n / 2;
    let pos_box = BoxLimits::new(
        model.state_box().lower().rows(0, k).iter().copied().collect(),
        model.state_box().upper().rows(0, k).iter().copied().collect(),
    )?;
    let (positions, _) = sample_box_grid(&pos_box, &vec![counts; k])?;
    let zero = vec![0.0; n - k];
    let mut case1: Option<(f64, StateVector)> = None;
    let mut case2: Option<(f64, StateVector)> = None;
    for q in &positions {
        for v in core::iter::once(&zero).chain(velocities.iter()) {
            let mut x: Vec<f64> = q.as_slice().to_vec();
            x.extend_from_slice(v);
            let s = StateVector::new(x);
            let (p0, p) = (phi0(model, &s), phi(params, model, &s));
            if p < 0.0 && case1.as_ref().is_none_or(|(best, _)| p < *best) {
                case1 = Some((p, s.clone()));
            }
            if p0 < -phi0_margin && p > 0.0 && case2.as_ref().is_none_or(|(best, _)| p > *best) {
                case2 = Some((p, s));
            }
        }
    }
    Ok(CaseStarts {
        case1: case1.ok_or(Error::Empty("states with phi < 0"))?.1,
        case2: case2.ok_or(Error::Empty("states with phi0 < 0 < phi"))?.1,
    })
}

/// Infeasible fraction for one joint-position cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCell {
    pub position: Vec<f64>,
    pub infeasible_fraction: f64,
}

/// For every cell of a grid over the position half of the state box, the share
/// of uniformly sampled velocities without a robust safe control (margin 0).
/// Velocities of cell `i` come from the stream `(seed, i)`.
pub fn feasibility_map<M: UncertainSystem + MaybeSync + ?Sized>(
    model: &M,
    params: &SafetyIndexParams,
    builder: &BoundBuilder,
    position_counts: &[usize],
    velocity_samples: usize,
    seed: u64,
) -> Result<Vec<FeasibilityCell>> {
    if velocity_samples == 0 {
        return Err(Error::InvalidArgument("at least one velocity sample per cell is required".into()));
    }
    let n = model.state_dim();
    let k = position_counts.len();
    let sbox = model.state_box();
    let pos_box = BoxLimits::new(
        sbox.lower().rows(0, k).iter().copied().collect(),
        sbox.upper().rows(0, k).iter().copied().collect(),
    )?;
    let (positions, _) = sample_box_grid(&pos_box, position_counts)?;
    let control_box = model.control_box();
    let cell = |(i, q): (usize, &StateVector)| -> Result<FeasibilityCell> {
        let mut rng = stream_rng(seed, i as u64);
        let mut bad = 0usize;
        for _ in 0..velocity_samples {
            let mut x: Vec<f64> = q.as_slice().to_vec();
            for j in k..n {
                x.push(rng.random_range(sbox.lower()[j]..=sbox.upper()[j]));
            }
            let s = StateVector::new(x);
            if !crate::synthesis::state_feasible(params, model, builder, &s, 0.0, control_box)? {
                bad += 1;
            }
        }
        Ok(FeasibilityCell {
            position: q.as_slice().to_vec(),
            infeasible_fraction: bad as f64 / velocity_samples as f64,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        positions.par_iter().enumerate().map(cell).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        positions.iter().enumerate().map(cell).collect()
    }
}

/// Largest `|f_true + g_true u - (f_nom + g_nom u)|` over `grid` and the control-box
/// corners, with the nominal parameter the nearest one inside the modeled support.
pub fn residual_magnitude<M: UncertainSystem + ?Sized>(model: &M, true_parameter: f64, grid: &[StateVector]) -> Result<f64> {
    let dist = model.parameter_distribution();
    let nominal = true_parameter.clamp(dist.lower, dist.upper);
    if nominal == true_parameter {
        return Ok(0.0);
    }
    let corners = model.control_box().corners();
    let mut worst: f64 = 0.0;
    for s in grid {
        let truth = model.dynamics(s, true_parameter)?;
        let nom = model.dynamics(s, nominal)?;
        for u in &corners {
            worst = worst.max((truth.state_derivative(u) - nom.state_derivative(u)).norm());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceRow {
    pub true_parameter: f64,
    pub phi_max: f64,
    pub residual: f64,
    /// `gamma^{-1}(k_phi * residual)`.
    pub bound: f64,
    pub trials: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceConfig {
    pub trials: usize,
    pub sim: SimulationConfig,
    pub seed: u64,
    /// Grid used for the residual magnitude.
    pub residual_grid: Vec<usize>,
    pub k_phi: f64,
}

/// Random start with `phi <= 0`, from stream `(seed, trial)`.
pub fn random_safe_start<M: UncertainSystem + ?Sized>(
    model: &M,
    params: &SafetyIndexParams,
    seed: u64,
    trial: u64,
) -> Result<StateVector> {
    let mut rng = stream_rng(seed, trial);
    let b = model.state_box();
    for _ in 0..100_000 {
        let x: Vec<f64> = (0..b.dim()).map(|i| rng.random_range(b.lower()[i]..=b.upper()[i])).collect();
        let s = StateVector::new(x);
        if phi(params, model, &s) <= 0.0 {
            return Ok(s);
        }
    }
    Err(Error::Empty("safe start states"))
}

/// Roll out the filtered system from random safe starts under each true parameter
/// and compare the largest `phi` reached with the enlarged invariant level.
pub fn forward_invariance_study<M: UncertainSystem + MaybeSync + ?Sized>(
    model: &M,
    params: &SafetyIndexParams,
    builder: &BoundBuilder,
    reference: &Reference,
    true_parameters: &[f64],
    cfg: &InvarianceConfig,
) -> Result<Vec<InvarianceRow>>
where
    Reference: Sync,
{
    let (grid, _) = sample_box_grid(model.state_box(), &cfg.residual_grid)?;
    let variant = match builder.kind {
        crate::bounds::BoundKind::Polytope => RssaVariant::Polytope,
        crate::bounds::BoundKind::Constant { .. } => RssaVariant::Constant,
        _ => RssaVariant::Ellipsoid,
    };
    let mut rows = Vec::with_capacity(true_parameters.len());
    for &p_true in true_parameters {
        let run = |trial: usize| -> Result<(f64, usize)> {
            let x0 = random_safe_start(model, params, cfg.seed, trial as u64)?;
            let log = simulate(model, p_true, reference, params, Some((builder, variant)), &x0, &cfg.sim)?;
            Ok((log.max_phi(), log.fallback_count()))
        };
        #[cfg(feature = "parallel")]
        let results: Result<Vec<(f64, usize)>> = {
            use rayon::prelude::*;
            (0..cfg.trials).into_par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Result<Vec<(f64, usize)>> = (0..cfg.trials).map(run).collect();
        let results = results?;
        let phi_max = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
        let fallbacks = results.iter().map(|r| r.1).sum();
        let residual = residual_magnitude(model, p_true, &grid)?;
        rows.push(InvarianceRow {
            true_parameter: p_true,
            phi_max,
            residual,
            bound: gamma_inverse(params, cfg.k_phi * residual),
            trials: cfg.trials,
            fallbacks,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundKind;

    #[test]
    fn scara_reference_is_zero_at_target() {
        let model = ScaraModel::default();
        let r = Reference::scara_push(&model);
        assert_eq!(r.control(&StateVector::zeros(4)).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn segway_reference_is_feedforward_at_cruise() {
        let model = SegwayModel::default();
        let r = Reference::segway_cruise(&model).unwrap();
        let u = r.control(&StateVector::from_slice(&[3.0, 0.0, 1.0, 0.0]));
        assert!((u[0] - model.k_b / model.r).abs() < 1e-12);
        // cruise is an equilibrium of the nominal model with that input
        let d = model
            .segway_dynamics(&StateVector::from_slice(&[0.0, 0.0, 1.0, 0.0]), model.k_m.mean)
            .unwrap()
            .state_derivative(u.as_vector());
        assert!(d[2].abs() < 1e-9 && d[3].abs() < 1e-9);
    }

    #[test]
    fn unfiltered_scara_reference_hits_the_wall() {
        let model = ScaraModel::default();
        let r = Reference::scara_push(&model);
        let x0 = StateVector::from_slice(&[0.8, 0.8, 0.0, 0.0]);
        let cfg = SimulationConfig {
            steps: 1500,
            ..Default::default()
        };
        let log = simulate(&model, 0.5, &r, &SafetyIndexParams::learned_scara(), None, &x0, &cfg).unwrap();
        assert!(phi0(&model, &x0) < 0.0);
        assert!(log.max_phi0() > 0.0);
        assert_eq!(log.len(), 1500);
        assert!(log.steps.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn in_bound_parameter_has_no_residual() {
        let model = ScaraModel::default();
        let (grid, _) = sample_box_grid(model.state_box(), &[3, 3, 3, 3]).unwrap();
        assert_eq!(residual_magnitude(&model, 1.0, &grid).unwrap(), 0.0);
        assert!(residual_magnitude(&model, 2.5, &grid).unwrap() > 0.0);
    }

    #[test]
    fn feasibility_map_fractions_are_probabilities() {
        let model = ScaraModel::default();
        let builder = BoundBuilder::new(&model, BoundKind::Polytope, 5, 1).unwrap();
        let map = feasibility_map(&model, &SafetyIndexParams::user_index(), &builder, &[4, 4], 5, 2).unwrap();
        assert_eq!(map.len(), 16);
        assert!(map.iter().all(|c| (0.0..=1.0).contains(&c.infeasible_fraction)));
    }

    #[test]
    fn case_scan_finds_both_starts() {
        let model = ScaraModel::default();
        let p = SafetyIndexParams::learned_scara();
        let starts = scan_case_starts(&model, &p, 41, &[], 1e-3).unwrap();
        assert!(phi(&p, &model, &starts.case1) < 0.0);
        assert!(phi0(&model, &starts.case2) < 0.0 && phi(&p, &model, &starts.case2) > 0.0);
    }
}
