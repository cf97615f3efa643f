//! The parameterized safety index family
//!
//! ```text
//! phi0 = d - d_lim
//! phi  = max(phi0, -d_lim^alpha + d^alpha + k_v * d_dot + beta)
//! ```
//!
//! where `d` is a model-specific safety coordinate (end-effector `x` for the
//! SCARA arm, `|tilt|` for the Segway). Fractional powers use the sign-preserving
//! convention `sign(d) |d|^alpha` so the index stays real and continuous for `d < 0`.
//!
//! The robust constraint `phi_dot <= -gamma(phi)` is imposed on the parametric
//! branch ([`constraint_index`]): the `phi0` branch depends on position only and has
//! no control authority, so a constraint on it can never be met by any input.

use nalgebra::DVector;

use crate::dynamics::UncertainSystem;
use crate::math::{abs, signed_pow, signed_pow_derivative};
use crate::types::StateVector;
use crate::{Error, Result};

/// Branch gaps below this are treated as lying on the switching surface.
pub const SWITCHING_TOL: f64 = 1e-9;

/// Safety coordinate `d`, its rate `d_dot`, their state gradients and the limit `d_lim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyGeometry {
    pub distance: f64,
    pub distance_grad: DVector<f64>,
    pub rate: f64,
    pub rate_grad: DVector<f64>,
    pub limit: f64,
    /// `d` is not differentiable at this state (e.g. `|tilt|` at zero tilt).
    pub kink: bool,
}

/// Index parameters `(alpha, k_v, beta)` and the slope `lambda` of the linear `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyIndexParams {
    pub alpha: f64,
    pub k_v: f64,
    pub beta: f64,
    pub gamma_slope: f64,
}

pub const DEFAULT_GAMMA_SLOPE: f64 = 1.0;

impl SafetyIndexParams {
    pub fn new(alpha: f64, k_v: f64, beta: f64) -> Self {
        Self {
            alpha,
            k_v,
            beta,
            gamma_slope: DEFAULT_GAMMA_SLOPE,
        }
    }

    pub fn with_gamma_slope(mut self, slope: f64) -> Self {
        self.gamma_slope = slope;
        self
    }

    /// `(1, 0, 0)` reduces the parametric branch to `phi0` itself.
    pub fn user_index() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    /// Hand-tuned SCARA index `(1.0, 0.2, 0.0)`.
    pub fn hand_designed() -> Self {
        Self::new(1.0, 0.2, 0.0)
    }

    /// Synthesized SCARA index `(0.57, 2.15, 0.072)`.
    pub fn learned_scara() -> Self {
        Self::new(0.57, 2.15, 0.072)
    }

    /// Segway tilt index `(1.0, 0.2, 0.0)` with `gamma` slope 3: tracks the cruise
    /// speed under the sampled polytope bound while staying feasible near upright.
    pub fn segway() -> Self {
        Self::new(1.0, 0.2, 0.0).with_gamma_slope(3.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.k_v, self.beta]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.k_v >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument("index needs alpha > 0, k_v >= 0, finite beta".into()));
        }
        if !(self.gamma_slope > 0.0) || !self.gamma_slope.is_finite() {
            return Err(Error::InvalidArgument("gamma slope must be positive".into()));
        }
        Ok(())
    }
}

/// Open search ranges for `(alpha, k_v, beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            lower: [0.1, 0.1, 0.001],
            upper: [5.0, 5.0, 1.0],
        }
    }
}

impl SearchBox {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] > self.lower[i] && p[i] < self.upper[i])
    }

    pub fn widths(&self) -> [f64; 3] {
        [
            self.upper[0] - self.lower[0],
            self.upper[1] - self.lower[1],
            self.upper[2] - self.lower[2],
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.upper[0] + self.lower[0]),
            0.5 * (self.upper[1] + self.lower[1]),
            0.5 * (self.upper[2] + self.lower[2]),
        ]
    }

    /// Clip strictly inside the open box.
    pub fn clip(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = p;
        for i in 0..3 {
            let pad = 1e-9 * (self.upper[i] - self.lower[i]);
            out[i] = p[i].clamp(self.lower[i] + pad, self.upper[i] - pad);
        }
        out
    }
}

pub fn phi0<M: UncertainSystem + ?Sized>(model: &M, state: &StateVector) -> f64 {
    let geo = model.safety_geometry(state);
    geo.distance - geo.limit
}

fn branch_value(params: &SafetyIndexParams, geo: &SafetyGeometry) -> f64 {
    -signed_pow(geo.limit, params.alpha) + signed_pow(geo.distance, params.alpha) + params.k_v * geo.rate
        + params.beta
}

fn branch_gradient(params: &SafetyIndexParams, geo: &SafetyGeometry) -> DVector<f64> {
    let dpow = signed_pow_derivative(geo.distance, params.alpha);
    let mut g = &geo.rate_grad * params.k_v;
    if dpow.is_finite() {
        g.axpy(dpow, &geo.distance_grad, 1.0);
    }
    g
}

/// Parametric branch `-d_lim^alpha + d^alpha + k_v d_dot + beta`.
pub fn parametric_branch<M: UncertainSystem + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    state: &StateVector,
) -> f64 {
    branch_value(params, &model.safety_geometry(state))
}

/// The max-form index `max(phi0, parametric branch)`; its zero-sublevel set lies inside `{phi0 <= 0}`.
pub fn phi<M: UncertainSystem + ?Sized>(params: &SafetyIndexParams, model: &M, state: &StateVector) -> f64 {
    let geo = model.safety_geometry(state);
    (geo.distance - geo.limit).max(branch_value(params, &geo))
}

/// Analytic gradient of the active branch of [`phi`].
///
/// Fails with [`Error::AtSwitchingSurface`] when the two branches are within
/// [`SWITCHING_TOL`] of each other or the safety coordinate is not differentiable.
pub fn grad_phi<M: UncertainSystem + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    state: &StateVector,
) -> Result<DVector<f64>> {
    let geo = model.safety_geometry(state);
    let base = geo.distance - geo.limit;
    let branch = branch_value(params, &geo);
    if abs(branch - base) <= SWITCHING_TOL || geo.kink {
        return Err(Error::AtSwitchingSurface);
    }
    if base > branch {
        Ok(geo.distance_grad)
    } else {
        if !signed_pow_derivative(geo.distance, params.alpha).is_finite() {
            return Err(Error::AtSwitchingSurface);
        }
        Ok(branch_gradient(params, &geo))
    }
}

/// Gradient of the branch with the larger value (ties go to the parametric
/// branch). Never fails; at kinks the non-differentiable part contributes zero.
pub fn subgradient_phi<M: UncertainSystem + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    state: &StateVector,
) -> DVector<f64> {
    let geo = model.safety_geometry(state);
    if geo.distance - geo.limit > branch_value(params, &geo) {
        geo.distance_grad
    } else {
        branch_gradient(params, &geo)
    }
}

/// Value and gradient of the function the robust constraint acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintIndex {
    pub value: f64,
    pub grad: DVector<f64>,
}

/// The parametric branch and its gradient, used by every robust safe control filter.
pub fn constraint_index<M: UncertainSystem + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    state: &StateVector,
) -> ConstraintIndex {
    let geo = model.safety_geometry(state);
    ConstraintIndex {
        value: branch_value(params, &geo),
        grad: branch_gradient(params, &geo),
    }
}

/// `gamma(phi) = lambda * phi`.
pub fn gamma(params: &SafetyIndexParams, phi_value: f64) -> f64 {
    params.gamma_slope * phi_value
}

pub fn gamma_inverse(params: &SafetyIndexParams, y: f64) -> f64 {
    y / params.gamma_slope
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ScaraModel, SegwayModel};

    fn s(v: &[f64]) -> StateVector {
        StateVector::from_slice(v)
    }

    #[test]
    fn user_index_values() {
        let scara = ScaraModel::default();
        assert!((phi0(&scara, &s(&[0.0; 4])) - 0.5).abs() < 1e-15);
        let seg = SegwayModel::default();
        assert!((phi0(&seg, &s(&[0.0; 4])) + 0.1).abs() < 1e-15);
        assert!(phi0(&seg, &s(&[0.0, 0.1, 0.0, 0.0])).abs() < 1e-15);
        assert!(phi0(&seg, &s(&[0.0, -0.1, 0.0, 0.0])).abs() < 1e-15);
    }

    #[test]
    fn max_form_dominated_by_phi0() {
        let scara = ScaraModel::default();
        // moving away from the wall quickly: branch far below phi0
        let x = s(&[0.0, 1.2, 0.0, 2.0]);
        let p = SafetyIndexParams::learned_scara();
        assert!(parametric_branch(&p, &scara, &x) < phi0(&scara, &x));
        assert_eq!(phi(&p, &scara, &x), phi0(&scara, &x));
    }

    #[test]
    fn hand_designed_index_is_linear_in_distance() {
        let scara = ScaraModel::default();
        let x = s(&[0.3, 0.2, 0.5, -0.4]);
        let geo = scara.safety_geometry(&x);
        let p = SafetyIndexParams::hand_designed();
        let expected = geo.distance - 1.5 + 0.2 * geo.rate;
        assert!((parametric_branch(&p, &scara, &x) - expected).abs() < 1e-14);
    }

    #[test]
    fn user_index_branch_equals_phi0() {
        let scara = ScaraModel::default();
        let x = s(&[0.3, 0.2, 0.5, -0.4]);
        let p = SafetyIndexParams::user_index();
        assert!((parametric_branch(&p, &scara, &x) - phi0(&scara, &x)).abs() < 1e-15);
    }

    #[test]
    fn segway_phi0_branch_gradient() {
        let seg = SegwayModel::default();
        // tilt beyond the limit with large negative rate: phi0 branch active
        let p = SafetyIndexParams::new(1.0, 1.0, 0.0);
        let x = s(&[0.0, -0.15, 0.0, 1.0]);
        let g = grad_phi(&p, &seg, &x).unwrap();
        assert_eq!(g.as_slice(), &[0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn scara_velocity_gradient_is_scaled_jacobian() {
        let scara = ScaraModel::default();
        let p = SafetyIndexParams::learned_scara();
        let x = s(&[0.4, 0.3, -0.8, -0.6]);
        let geo = scara.safety_geometry(&x);
        let g = grad_phi(&p, &scara, &x).unwrap();
        assert!((g[2] - p.k_v * geo.rate_grad[2]).abs() < 1e-14);
        assert!((g[3] - p.k_v * geo.rate_grad[3]).abs() < 1e-14);
    }

    #[test]
    fn switching_surface_is_reported() {
        let seg = SegwayModel::default();
        let p = SafetyIndexParams::learned_scara();
        assert_eq!(grad_phi(&p, &seg, &s(&[0.0, 0.0, 0.0, 0.0])), Err(Error::AtSwitchingSurface));
        // subgradient still available
        assert_eq!(subgradient_phi(&p, &seg, &s(&[0.0; 4])).len(), 4);
    }

    #[test]
    fn gamma_is_linear_through_origin() {
        let p = SafetyIndexParams::new(1.0, 1.0, 0.0);
        assert_eq!(gamma(&p, 0.0), 0.0);
        assert_eq!(gamma(&p, 2.0), 2.0);
        let q = p.with_gamma_slope(0.5);
        assert_eq!(gamma_inverse(&q, gamma(&q, 3.0)), 3.0);
        let mut prev = f64::NEG_INFINITY;
        for i in -100..=100 {
            let v = gamma(&q, i as f64 * 0.1);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn search_box_clip_stays_open() {
        let b = SearchBox::default();
        let c = b.clip([0.0, 10.0, 0.5]);
        assert!(b.contains(&c));
    }
}
