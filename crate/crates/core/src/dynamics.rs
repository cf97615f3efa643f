//! Uncertain control-affine robot models.
//!
//! Each model has one uncertain physical parameter drawn from a truncated
//! Gaussian (the SCARA payload mass `m2`, the Segway motor constant `K_m`).
//! A [`DynamicsSample`] is the `(f, g)` pair obtained for one parameter value.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::math::{cos, sin};
use crate::safety_index::SafetyGeometry;
use crate::stats::{sample_parameter, TruncatedGaussian};
use crate::types::{BoxLimits, DynamicsSample, StateVector};
use crate::{Error, Result};

/// Mass-matrix determinants below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// A control-affine model `x_dot = f(x; p) + g(x; p) u` with an uncertain scalar parameter `p`.
pub trait UncertainSystem {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn state_box(&self) -> &BoxLimits;
    fn control_box(&self) -> &BoxLimits;
    fn parameter_distribution(&self) -> &TruncatedGaussian;

    /// `(f, g)` for one parameter value.
    fn dynamics(&self, state: &StateVector, parameter: f64) -> Result<DynamicsSample>;

    /// Safety-relevant coordinate and its rate, from which the safety index is built.
    fn safety_geometry(&self, state: &StateVector) -> SafetyGeometry;

    /// True when `f` and `g` are affine in the uncertain parameter.
    fn parameter_affine(&self) -> bool {
        false
    }

    fn check_state(&self, state: &StateVector) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }
}

impl<T: UncertainSystem + ?Sized> UncertainSystem for &T {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn state_box(&self) -> &BoxLimits {
        (**self).state_box()
    }
    fn control_box(&self) -> &BoxLimits {
        (**self).control_box()
    }
    fn parameter_distribution(&self) -> &TruncatedGaussian {
        (**self).parameter_distribution()
    }
    fn dynamics(&self, state: &StateVector, parameter: f64) -> Result<DynamicsSample> {
        (**self).dynamics(state, parameter)
    }
    fn safety_geometry(&self, state: &StateVector) -> SafetyGeometry {
        (**self).safety_geometry(state)
    }
    fn parameter_affine(&self) -> bool {
        (**self).parameter_affine()
    }
}

/// One dynamics realization per sampled parameter value.
pub fn sample_dynamics<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    seed: u64,
    count: usize,
) -> Result<Vec<DynamicsSample>> {
    let params = sample_parameter(model.parameter_distribution(), seed, count)?;
    dynamics_for(model, state, &params)
}

pub fn dynamics_for<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    parameters: &[f64],
) -> Result<Vec<DynamicsSample>> {
    parameters.iter().map(|p| model.dynamics(state, *p)).collect()
}

fn block_dynamics(qdot: Vector2<f64>, drift: Vector2<f64>, input: DMatrix<f64>) -> Result<DynamicsSample> {
    let m = input.ncols();
    let f = DVector::from_vec(alloc::vec![qdot[0], qdot[1], drift[0], drift[1]]);
    let mut g = DMatrix::zeros(4, m);
    g.view_mut((2, 0), (2, m)).copy_from(&input);
    DynamicsSample::new(f, g)
}

fn invert_mass(mass: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = mass.determinant();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::SingularMassMatrix { det });
    }
    Ok(Matrix2::new(mass[(1, 1)], -mass[(0, 1)], -mass[(1, 0)], mass[(0, 0)]) / det)
}

/// Planar two-link arm pushing toward a vertical wall at `x = x_wall`.
///
/// State `(theta1, theta2, theta1_dot, theta2_dot)`, control: two joint torques.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaraModel {
    pub m1: f64,
    pub l1: f64,
    pub l2: f64,
    pub x_wall: f64,
    pub m2: TruncatedGaussian,
    state_box: BoxLimits,
    control_box: BoxLimits,
}

impl Default for ScaraModel {
    fn default() -> Self {
        Self::new(
            1.0,
            1.0,
            1.0,
            1.5,
            TruncatedGaussian {
                mean: 1.0,
                sd: 0.3,
                lower: 0.1,
                upper: 1.9,
            },
        )
        .expect("default SCARA parameters are valid")
    }
}

impl ScaraModel {
    pub fn new(m1: f64, l1: f64, l2: f64, x_wall: f64, m2: TruncatedGaussian) -> Result<Self> {
        if !(m1 > 0.0 && l1 > 0.0 && l2 > 0.0) {
            return Err(Error::InvalidArgument("SCARA masses and lengths must be positive".into()));
        }
        if !(m2.lower > 0.0) {
            return Err(Error::InvalidArgument("payload mass support must be positive".into()));
        }
        let half_pi = core::f64::consts::FRAC_PI_2;
        Ok(Self {
            m1,
            l1,
            l2,
            x_wall,
            m2,
            state_box: BoxLimits::symmetric(&[half_pi, half_pi, 2.0, 2.0])?,
            control_box: BoxLimits::symmetric(&[20.0, 20.0])?,
        })
    }

    pub fn with_control_box(mut self, control_box: BoxLimits) -> Result<Self> {
        if control_box.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: control_box.dim(),
            });
        }
        self.control_box = control_box;
        Ok(self)
    }

    /// `(A, B, C)` inertia constants for payload `m2`.
    pub fn inertia_constants(&self, m2: f64) -> (f64, f64, f64) {
        let a = self.m1 * self.l1 * self.l1 / 6.0 + m2 * self.l1 * self.l1 / 2.0;
        let b = m2 * self.l2 * self.l2 / 6.0;
        let c = m2 * self.l1 * self.l2 / 2.0;
        (a, b, c)
    }

    pub fn mass_matrix(&self, theta2: f64, m2: f64) -> Matrix2<f64> {
        let (a, b, c) = self.inertia_constants(m2);
        let c2 = cos(theta2);
        let off = 2.0 * b + c * c2;
        Matrix2::new(2.0 * a + 2.0 * b + 2.0 * c * c2, off, off, 2.0 * b)
    }

    pub fn coriolis(&self, state: &StateVector, m2: f64) -> Vector2<f64> {
        let (_, _, c) = self.inertia_constants(m2);
        let s2 = sin(state[1]);
        let (d1, d2) = (state[2], state[3]);
        Vector2::new(-c * s2 * (2.0 * d1 + d2) * d2, c * s2 * d1 * d1)
    }

    /// End-effector `(x, y)`.
    pub fn end_effector(&self, state: &StateVector) -> (f64, f64) {
        let (t1, t12) = (state[0], state[0] + state[1]);
        (
            self.l1 * cos(t1) + self.l2 * cos(t12),
            self.l1 * sin(t1) + self.l2 * sin(t12),
        )
    }

    pub fn scara_dynamics(&self, state: &StateVector, m2: f64) -> Result<DynamicsSample> {
        self.check_state(state)?;
        if !(m2 > 0.0) || !m2.is_finite() {
            return Err(Error::InvalidArgument("payload mass must be positive".into()));
        }
        let mass = self.mass_matrix(state[1], m2);
        let inv = invert_mass(&mass)?;
        let drift = -(inv * self.coriolis(state, m2));
        let input = DMatrix::from_iterator(2, 2, inv.iter().copied());
        block_dynamics(Vector2::new(state[2], state[3]), drift, input)
    }
}

impl UncertainSystem for ScaraModel {
    fn name(&self) -> &'static str {
        "scara"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn state_box(&self) -> &BoxLimits {
        &self.state_box
    }
    fn control_box(&self) -> &BoxLimits {
        &self.control_box
    }
    fn parameter_distribution(&self) -> &TruncatedGaussian {
        &self.m2
    }
    fn dynamics(&self, state: &StateVector, parameter: f64) -> Result<DynamicsSample> {
        self.scara_dynamics(state, parameter)
    }

    fn safety_geometry(&self, state: &StateVector) -> SafetyGeometry {
        let (t1, t12) = (state[0], state[0] + state[1]);
        let (d1, d2) = (state[2], state[3]);
        let (s1, s12, c1, c12) = (sin(t1), sin(t12), cos(t1), cos(t12));
        let (x_ee, _) = self.end_effector(state);
        // Jacobian row of x_ee with respect to (theta1, theta2)
        let j1 = -self.l1 * s1 - self.l2 * s12;
        let j2 = -self.l2 * s12;
        let x_dot = j1 * d1 + j2 * d2;
        let dxd_dt1 = -self.l1 * c1 * d1 - self.l2 * c12 * (d1 + d2);
        let dxd_dt2 = -self.l2 * c12 * (d1 + d2);
        SafetyGeometry {
            distance: x_ee,
            distance_grad: DVector::from_vec(alloc::vec![j1, j2, 0.0, 0.0]),
            rate: x_dot,
            rate_grad: DVector::from_vec(alloc::vec![dxd_dt1, dxd_dt2, j1, j2]),
            limit: self.x_wall,
            kink: false,
        }
    }
}

/// Two-wheeled inverted pendulum. State `(p, tilt, p_dot, tilt_dot)`, one motor input.
#[derive(Debug, Clone, PartialEq)]
pub struct SegwayModel {
    pub m0: f64,
    pub m: f64,
    pub l: f64,
    pub j0: f64,
    pub r: f64,
    pub g_grav: f64,
    pub k_b: f64,
    pub k_m: TruncatedGaussian,
    pub tilt_limit: f64,
    pub target_speed: f64,
    state_box: BoxLimits,
    control_box: BoxLimits,
}

impl Default for SegwayModel {
    fn default() -> Self {
        Self::new(
            52.71,
            44.798,
            0.169,
            5.108,
            0.195,
            9.81,
            0.325,
            TruncatedGaussian {
                mean: 2.524,
                sd: 0.3,
                lower: 1.624,
                upper: 3.424,
            },
        )
        .expect("default Segway parameters are valid")
    }
}

impl SegwayModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m0: f64,
        m: f64,
        l: f64,
        j0: f64,
        r: f64,
        g_grav: f64,
        k_b: f64,
        k_m: TruncatedGaussian,
    ) -> Result<Self> {
        if [m0, m, l, j0, r, g_grav, k_b].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("Segway physical parameters must be positive".into()));
        }
        if !(k_m.lower > 0.0) {
            return Err(Error::InvalidArgument("motor constant support must be positive".into()));
        }
        Ok(Self {
            m0,
            m,
            l,
            j0,
            r,
            g_grav,
            k_b,
            k_m,
            tilt_limit: 0.1,
            target_speed: 1.0,
            state_box: BoxLimits::symmetric(&[5.0, 0.2, 2.0, 2.0])?,
            control_box: BoxLimits::symmetric(&[20.0])?,
        })
    }

    pub fn with_boxes(mut self, state_box: BoxLimits, control_box: BoxLimits) -> Result<Self> {
        if state_box.dim() != 4 || control_box.dim() != 1 {
            return Err(Error::InvalidArgument("Segway boxes must be 4-D state and 1-D control".into()));
        }
        self.state_box = state_box;
        self.control_box = control_box;
        Ok(self)
    }

    pub fn mass_matrix(&self, tilt: f64) -> Matrix2<f64> {
        let off = self.m * self.l * cos(tilt);
        Matrix2::new(self.m0, off, off, self.j0)
    }

    pub fn segway_dynamics(&self, state: &StateVector, k_m: f64) -> Result<DynamicsSample> {
        self.check_state(state)?;
        if !k_m.is_finite() || k_m < 0.0 {
            return Err(Error::InvalidArgument("motor constant must be non-negative".into()));
        }
        let (tilt, p_dot, tilt_dot) = (state[1], state[2], state[3]);
        let b_t = k_m * self.k_b / self.r;
        let slip = p_dot - self.r * tilt_dot;
        let h = Vector2::new(
            -self.m * self.l * sin(tilt) * tilt_dot * tilt_dot + b_t / self.r * slip,
            -self.m * self.g_grav * self.l * sin(tilt) - b_t * slip,
        );
        let inv = invert_mass(&self.mass_matrix(tilt))?;
        let drift = -(inv * h);
        let input = inv * Vector2::new(k_m / self.r, -k_m);
        block_dynamics(
            Vector2::new(p_dot, tilt_dot),
            drift,
            DMatrix::from_column_slice(2, 1, input.as_slice()),
        )
    }
}

impl UncertainSystem for SegwayModel {
    fn name(&self) -> &'static str {
        "segway"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn state_box(&self) -> &BoxLimits {
        &self.state_box
    }
    fn control_box(&self) -> &BoxLimits {
        &self.control_box
    }
    fn parameter_distribution(&self) -> &TruncatedGaussian {
        &self.k_m
    }
    fn dynamics(&self, state: &StateVector, parameter: f64) -> Result<DynamicsSample> {
        self.segway_dynamics(state, parameter)
    }
    fn parameter_affine(&self) -> bool {
        true
    }

    fn safety_geometry(&self, state: &StateVector) -> SafetyGeometry {
        let (tilt, tilt_dot) = (state[1], state[3]);
        let s = crate::math::sign(tilt);
        SafetyGeometry {
            distance: tilt.abs(),
            distance_grad: DVector::from_vec(alloc::vec![0.0, s, 0.0, 0.0]),
            rate: s * tilt_dot,
            rate_grad: DVector::from_vec(alloc::vec![0.0, 0.0, 0.0, s]),
            limit: self.tilt_limit,
            kink: tilt == 0.0,
        }
    }
}

/// One-dimensional point mass `p_ddot = b u` approaching a limit at `p = limit`.
///
/// Serves as an analytically tractable model for tests and smoke runs; with a
/// degenerate `b` distribution it is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub gain: TruncatedGaussian,
    pub limit: f64,
    state_box: BoxLimits,
    control_box: BoxLimits,
}

impl PointMass {
    pub fn new(gain: TruncatedGaussian, limit: f64, state_box: BoxLimits, control_box: BoxLimits) -> Result<Self> {
        if state_box.dim() != 2 || control_box.dim() != 1 {
            return Err(Error::InvalidArgument("point mass boxes must be 2-D state and 1-D control".into()));
        }
        Ok(Self {
            gain,
            limit,
            state_box,
            control_box,
        })
    }

    /// Deterministic unit-gain point mass on `[-1, 1] x [-1, 1]` with a wall at `p = 2`.
    pub fn deterministic_toy() -> Self {
        Self::new(
            TruncatedGaussian::degenerate(1.0),
            2.0,
            BoxLimits::symmetric(&[1.0, 1.0]).expect("valid"),
            BoxLimits::symmetric(&[100.0]).expect("valid"),
        )
        .expect("valid")
    }
}

impl UncertainSystem for PointMass {
    fn name(&self) -> &'static str {
        "point_mass"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn state_box(&self) -> &BoxLimits {
        &self.state_box
    }
    fn control_box(&self) -> &BoxLimits {
        &self.control_box
    }
    fn parameter_distribution(&self) -> &TruncatedGaussian {
        &self.gain
    }
    fn dynamics(&self, state: &StateVector, parameter: f64) -> Result<DynamicsSample> {
        self.check_state(state)?;
        DynamicsSample::new(
            DVector::from_vec(alloc::vec![state[1], 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, parameter]),
        )
    }
    fn parameter_affine(&self) -> bool {
        true
    }
    fn safety_geometry(&self, state: &StateVector) -> SafetyGeometry {
        SafetyGeometry {
            distance: state[0],
            distance_grad: DVector::from_vec(alloc::vec![1.0, 0.0]),
            rate: state[1],
            rate_grad: DVector::from_vec(alloc::vec![0.0, 1.0]),
            limit: self.limit,
            kink: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: &[f64]) -> StateVector {
        StateVector::from_slice(v)
    }

    #[test]
    fn scara_zero_velocity_has_zero_drift() {
        let model = ScaraModel::default();
        for m2 in [0.1, 1.0, 1.9] {
            let s = model.dynamics(&state(&[0.0, 0.0, 0.0, 0.0]), m2).unwrap();
            assert!(s.f().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn scara_mass_matrix_unit_parameters() {
        let model = ScaraModel::default();
        let m = model.mass_matrix(0.0, 1.0);
        let expected = Matrix2::new(8.0 / 3.0, 5.0 / 6.0, 5.0 / 6.0, 1.0 / 3.0);
        assert!((m - expected).abs().max() < 1e-14);
    }

    #[test]
    fn scara_input_block_inverts_mass() {
        let model = ScaraModel::default();
        let x = state(&[0.3, -0.7, 0.5, -1.2]);
        let s = model.dynamics(&x, 0.8).unwrap();
        let lower = s.g().view((2, 0), (2, 2)).into_owned();
        let m = model.mass_matrix(-0.7, 0.8);
        let prod = DMatrix::from_iterator(2, 2, m.iter().copied()) * lower;
        assert!((prod - DMatrix::identity(2, 2)).abs().max() < 1e-10);
        assert!(s.g().view((0, 0), (2, 2)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scara_rejects_bad_inputs() {
        let model = ScaraModel::default();
        assert!(model.dynamics(&state(&[0.0, 0.0, 0.0]), 1.0).is_err());
        assert!(model.dynamics(&state(&[0.0; 4]), 0.0).is_err());
    }

    #[test]
    fn segway_equilibrium() {
        let model = SegwayModel::default();
        let s = model.dynamics(&state(&[0.3, 0.0, 0.0, 0.0]), 2.524).unwrap();
        assert!(s.f().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn segway_input_is_linear_in_motor_constant() {
        let model = SegwayModel::default();
        let x = state(&[0.0, 0.05, 0.4, -0.3]);
        let g1 = model.dynamics(&x, 2.0).unwrap();
        let g2 = model.dynamics(&x, 4.0).unwrap();
        assert!((g1.g() * 2.0 - g2.g()).abs().max() < 1e-12);
    }

    #[test]
    fn singular_mass_matrix_is_reported() {
        // m0 * J0 == (m L)^2 at zero tilt makes M singular.
        let model = SegwayModel::new(1.0, 1.0, 1.0, 1.0, 0.2, 9.81, 0.3, TruncatedGaussian::degenerate(1.0)).unwrap();
        let err = model.dynamics(&state(&[0.0; 4]), 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularMassMatrix { .. }));
    }

    #[test]
    fn degenerate_distribution_gives_deterministic_model() {
        let model = ScaraModel {
            m2: TruncatedGaussian::degenerate(0.7),
            ..ScaraModel::default()
        };
        let x = state(&[0.2, 0.4, 0.3, -0.2]);
        let samples = sample_dynamics(&model, &x, 5, 1).unwrap();
        assert_eq!(samples[0], model.dynamics(&x, 0.7).unwrap());
    }

    #[test]
    fn scara_at_rest_samples_share_drift() {
        let model = ScaraModel::default();
        let x = state(&[0.2, 0.4, 0.0, 0.0]);
        let samples = sample_dynamics(&model, &x, 11, 20).unwrap();
        for s in &samples {
            assert_eq!(s.f(), samples[0].f());
        }
        assert!(samples.iter().any(|s| s.g() != samples[0].g()));
    }

    #[test]
    fn point_mass_is_a_double_integrator() {
        let pm = PointMass::deterministic_toy();
        let s = pm.dynamics(&state(&[0.5, -0.25]), 1.0).unwrap();
        assert_eq!(s.f().as_slice(), &[-0.25, 0.0]);
        assert_eq!(s.g_flat().as_slice(), &[0.0, 1.0]);
    }
}
