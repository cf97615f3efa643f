//! Uncertainty bounds on `(f, g_flat)` built from dynamics samples, and their
//! projection onto the Lie-derivative ranges `V_f`, `V_g`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{dynamics_for, UncertainSystem};
use crate::linalg::{covariance, mean};
use crate::safety_index::{constraint_index, gamma, SafetyIndexParams};
use crate::stats::{chi_square_quantile, sample_parameter};
use crate::types::{
    BoxLimits, ConvexSet, DynamicsSample, EllipsoidSet, LieDerivativeBounds, PolytopeSet, StateVector,
};
use crate::{Error, Result};

/// Bound on the model at one state. `sigma_g` lives in the space of `g_flat`.
#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintyBound {
    Polytope {
        sigma_f: PolytopeSet,
        sigma_g: PolytopeSet,
        control_dim: usize,
    },
    Ellipsoid {
        sigma_f: EllipsoidSet,
        sigma_g: EllipsoidSet,
        control_dim: usize,
    },
    /// Mean model plus a scalar bound `d_res` on the residual rate of the index.
    Constant { mean: DynamicsSample, d_res: f64 },
}

impl UncertaintyBound {
    pub fn state_dim(&self) -> usize {
        match self {
            UncertaintyBound::Polytope { sigma_f, .. } => sigma_f.dim(),
            UncertaintyBound::Ellipsoid { sigma_f, .. } => sigma_f.dim(),
            UncertaintyBound::Constant { mean, .. } => mean.state_dim(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            UncertaintyBound::Polytope { control_dim, .. } | UncertaintyBound::Ellipsoid { control_dim, .. } => {
                *control_dim
            }
            UncertaintyBound::Constant { mean, .. } => mean.control_dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            UncertaintyBound::Polytope { .. } => "polytope",
            UncertaintyBound::Ellipsoid { .. } => "ellipsoid",
            UncertaintyBound::Constant { .. } => "constant",
        }
    }
}

fn require_samples(samples: &[DynamicsSample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or(Error::Empty("dynamics samples"))?;
    let (n, m) = (first.state_dim(), first.control_dim());
    for s in samples {
        if s.state_dim() != n || s.control_dim() != m {
            return Err(Error::DimensionMismatch {
                expected: n * (m + 1),
                got: s.state_dim() * (s.control_dim() + 1),
            });
        }
    }
    Ok((n, m))
}

/// Hulls of the sampled `f` and `g_flat`; the samples themselves are the vertices.
pub fn build_polytope_bound(samples: &[DynamicsSample]) -> Result<UncertaintyBound> {
    let (_, m) = require_samples(samples)?;
    Ok(UncertaintyBound::Polytope {
        sigma_f: PolytopeSet::new(samples.iter().map(|s| s.f().clone()).collect())?,
        sigma_g: PolytopeSet::new(samples.iter().map(|s| s.g_flat().clone()).collect())?,
        control_dim: m,
    })
}

/// Gaussian fit: sample mean and covariance, scaled by the chi-square quantile
/// of the requested confidence.
pub fn build_ellipsoid_bound(samples: &[DynamicsSample], confidence: f64) -> Result<UncertaintyBound> {
    let (n, m) = require_samples(samples)?;
    let fs: Vec<DVector<f64>> = samples.iter().map(|s| s.f().clone()).collect();
    let gs: Vec<DVector<f64>> = samples.iter().map(|s| s.g_flat().clone()).collect();
    let mu_f = mean(&fs).ok_or(Error::Empty("dynamics samples"))?;
    let mu_g = mean(&gs).ok_or(Error::Empty("dynamics samples"))?;
    let q_f = covariance(&fs, &mu_f);
    let q_g = covariance(&gs, &mu_g);
    let dof_f = chi_square_quantile(n as f64, confidence)?;
    let dof_g = chi_square_quantile((n * m) as f64, confidence)?;
    Ok(UncertaintyBound::Ellipsoid {
        sigma_f: EllipsoidSet::new(mu_f, q_f, dof_f)?,
        sigma_g: EllipsoidSet::new(mu_g, q_g, dof_g)?,
        control_dim: m,
    })
}

/// Exact Gaussian pushforward for models affine in their parameter: with
/// `f(p) = a + b p`, the bound is centered at `a + b mean(p)` with shape
/// `sd(p)^2 b b^T` and a one-degree-of-freedom quantile. Truncation is ignored.
pub fn analytic_affine_ellipsoid<M: UncertainSystem + ?Sized>(
    model: &M,
    state: &StateVector,
    confidence: f64,
) -> Result<UncertaintyBound> {
    if !model.parameter_affine() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} dynamics are not affine in the uncertain parameter",
            model.name()
        )));
    }
    let dist = model.parameter_distribution();
    let at0 = model.dynamics(state, 0.0)?;
    let at1 = model.dynamics(state, 1.0)?;
    let dof = chi_square_quantile(1.0, confidence)?;
    let push = |a: &DVector<f64>, b1: &DVector<f64>| -> Result<EllipsoidSet> {
        let slope = b1 - a;
        let mu = a + &slope * dist.mean;
        let q = &slope * slope.transpose() * (dist.sd * dist.sd);
        EllipsoidSet::new(mu, q, dof)
    };
    Ok(UncertaintyBound::Ellipsoid {
        sigma_f: push(at0.f(), at1.f())?,
        sigma_g: push(at0.g_flat(), at1.g_flat())?,
        control_dim: at0.control_dim(),
    })
}

/// Segway bound computed without sampling.
pub fn analytic_segway_ellipsoid(
    model: &crate::dynamics::SegwayModel,
    state: &StateVector,
    confidence: f64,
) -> Result<UncertaintyBound> {
    analytic_affine_ellipsoid(model, state, confidence)
}

/// Average of the sampled `f` and `g`.
pub fn mean_model(samples: &[DynamicsSample]) -> Result<DynamicsSample> {
    let (_, m) = require_samples(samples)?;
    let fs: Vec<DVector<f64>> = samples.iter().map(|s| s.f().clone()).collect();
    let gs: Vec<DVector<f64>> = samples.iter().map(|s| s.g_flat().clone()).collect();
    let f = mean(&fs).ok_or(Error::Empty("dynamics samples"))?;
    let g = mean(&gs).ok_or(Error::Empty("dynamics samples"))?;
    DynamicsSample::from_flat(f, g.as_slice(), m)
}

/// The `m x (n m)` map with `T g_flat = g^T grad`, i.e. `T[j, i m + j] = grad_i`.
pub fn lie_map(grad: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let n = grad.len();
    let mut t = DMatrix::zeros(m, n * m);
    for i in 0..n {
        for j in 0..m {
            t[(j, i * m + j)] = grad[i];
        }
    }
    t
}

/// `V_f` and `V_g` for the given index gradient. For the constant bound both
/// are singletons of the mean model.
pub fn project_to_lie(bound: &UncertaintyBound, grad: &DVector<f64>) -> Result<(ConvexSet, ConvexSet)> {
    let n = bound.state_dim();
    if grad.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: grad.len(),
        });
    }
    let m = bound.control_dim();
    Ok(match bound {
        UncertaintyBound::Polytope { sigma_f, sigma_g, .. } => {
            let vf = sigma_f
                .vertices()
                .iter()
                .map(|f| DVector::from_element(1, grad.dot(f)))
                .collect();
            let vg = sigma_g.vertices().iter().map(|g| lie_of_flat(grad, g, m)).collect();
            (ConvexSet::Polytope(PolytopeSet::new(vf)?), ConvexSet::Polytope(PolytopeSet::new(vg)?))
        }
        UncertaintyBound::Ellipsoid { sigma_f, sigma_g, .. } => {
            let tf = DMatrix::from_row_slice(1, n, grad.as_slice());
            (
                ConvexSet::Ellipsoid(sigma_f.map_linear(&tf)?),
                ConvexSet::Ellipsoid(sigma_g.map_linear(&lie_map(grad, m))?),
            )
        }
        UncertaintyBound::Constant { mean, .. } => (
            ConvexSet::Polytope(PolytopeSet::singleton(DVector::from_element(1, grad.dot(mean.f())))?),
            ConvexSet::Polytope(PolytopeSet::singleton(mean.g().transpose() * grad)?),
        ),
    })
}

/// `g^T grad` from the flattened `g`.
pub fn lie_of_flat(grad: &DVector<f64>, g_flat: &DVector<f64>, m: usize) -> DVector<f64> {
    let mut out = DVector::zeros(m);
    for (i, gi) in grad.iter().enumerate() {
        for j in 0..m {
            out[j] += gi * g_flat[i * m + j];
        }
    }
    out
}

/// `c = -gamma(phi) - max V_f`.
pub fn compute_c(v_f: &ConvexSet, phi_value: f64, params: &SafetyIndexParams) -> f64 {
    -gamma(params, phi_value) - v_f.support(&DVector::from_element(1, 1.0))
}

/// Lie-derivative bounds and right-hand side for an index with the given value
/// and gradient. The constant bound also subtracts `d_res` from `c`.
pub fn lie_bounds(
    bound: &UncertaintyBound,
    grad: &DVector<f64>,
    phi_value: f64,
    params: &SafetyIndexParams,
) -> Result<LieDerivativeBounds> {
    let (v_f, v_g) = project_to_lie(bound, grad)?;
    let mut c = compute_c(&v_f, phi_value, params);
    if let UncertaintyBound::Constant { d_res, .. } = bound {
        c -= d_res;
    }
    Ok(LieDerivativeBounds { v_f, v_g, c })
}

/// Lie-derivative bounds at `state` for the constrained index of `params`.
pub fn lie_bounds_at<M: UncertainSystem + ?Sized>(
    model: &M,
    params: &SafetyIndexParams,
    state: &StateVector,
    bound: &UncertaintyBound,
) -> Result<LieDerivativeBounds> {
    let idx = constraint_index(params, model, state);
    lie_bounds(bound, &idx.grad, idx.value, params)
}

/// Largest `|grad . ((f - f_mean) + (g - g_mean) u)|` over grid states, parameter
/// samples and control-box corners.
pub fn estimate_constant_residual_bound<M: UncertainSystem + ?Sized>(
    model: &M,
    params: &SafetyIndexParams,
    parameters: &[f64],
    state_grid: &[StateVector],
    control_box: &BoxLimits,
) -> Result<f64> {
    if state_grid.is_empty() {
        return Err(Error::Empty("state grid"));
    }
    let corners = control_box.corners();
    let mut worst: f64 = 0.0;
    for state in state_grid {
        let samples = dynamics_for(model, state, parameters)?;
        let mean = mean_model(&samples)?;
        let grad = constraint_index(params, model, state).grad;
        let lf_mean = grad.dot(mean.f());
        let lg_mean = mean.g().transpose() * &grad;
        for s in &samples {
            let lf = grad.dot(s.f()) - lf_mean;
            let lg = s.g().transpose() * &grad - &lg_mean;
            for u in &corners {
                worst = worst.max((lf + lg.dot(u)).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundKind {
    Polytope,
    /// Gaussian fit to the samples at the given confidence.
    Ellipsoid { confidence: f64 },
    /// Closed-form ellipsoid for parameter-affine models.
    AnalyticEllipsoid { confidence: f64 },
    /// Mean of the samples with a residual constant.
    Constant { d_res: f64 },
}

/// Builds the bound at any state from one fixed set of parameter samples, so
/// that everything downstream is a deterministic function of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundBuilder {
    pub kind: BoundKind,
    parameters: Vec<f64>,
}

impl BoundBuilder {
    pub fn new<M: UncertainSystem + ?Sized>(model: &M, kind: BoundKind, samples: usize, seed: u64) -> Result<Self> {
        if let BoundKind::Ellipsoid { confidence } | BoundKind::AnalyticEllipsoid { confidence } = kind {
            if !(confidence > 0.0 && confidence < 1.0) {
                return Err(Error::InvalidArgument("confidence must lie in (0, 1)".into()));
            }
        }
        Ok(Self {
            kind,
            parameters: sample_parameter(model.parameter_distribution(), seed, samples)?,
        })
    }

    pub fn with_parameters(kind: BoundKind, parameters: Vec<f64>) -> Result<Self> {
        if parameters.is_empty() {
            return Err(Error::Empty("parameter samples"));
        }
        Ok(Self { kind, parameters })
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn samples<M: UncertainSystem + ?Sized>(&self, model: &M, state: &StateVector) -> Result<Vec<DynamicsSample>> {
        dynamics_for(model, state, &self.parameters)
    }

    pub fn build<M: UncertainSystem + ?Sized>(&self, model: &M, state: &StateVector) -> Result<UncertaintyBound> {
        match self.kind {
            BoundKind::Polytope => build_polytope_bound(&self.samples(model, state)?),
            BoundKind::Ellipsoid { confidence } => build_ellipsoid_bound(&self.samples(model, state)?, confidence),
            BoundKind::AnalyticEllipsoid { confidence } => analytic_affine_ellipsoid(model, state, confidence),
            BoundKind::Constant { d_res } => Ok(UncertaintyBound::Constant {
                mean: mean_model(&self.samples(model, state)?)?,
                d_res,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ScaraModel, SegwayModel};
    use alloc::vec;

    fn sample(f: &[f64], g: &[f64], m: usize) -> DynamicsSample {
        DynamicsSample::from_flat(DVector::from_row_slice(f), g, m).unwrap()
    }

    #[test]
    fn single_sample_gives_singletons() {
        let s = sample(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0], 2);
        let b = build_polytope_bound(&[s]).unwrap();
        let UncertaintyBound::Polytope { sigma_f, sigma_g, .. } = b else { panic!() };
        assert_eq!(sigma_f.vertices().len(), 1);
        assert_eq!(sigma_g.vertices().len(), 1);
    }

    #[test]
    fn segment_midpoint_is_covered() {
        let a = sample(&[0.0, 0.0], &[0.0, 0.0, 0.0, 0.0], 2);
        let b = sample(&[2.0, 4.0], &[2.0, 2.0, 2.0, 2.0], 2);
        let UncertaintyBound::Polytope { sigma_f, sigma_g, .. } = build_polytope_bound(&[a, b]).unwrap() else {
            panic!()
        };
        assert!(sigma_f.contains(&DVector::from_row_slice(&[1.0, 2.0]), 1e-9));
        assert!(sigma_g.contains(&DVector::from_element(4, 1.0), 1e-9));
    }

    #[test]
    fn identical_samples_give_regularized_point() {
        let s = sample(&[1.0, 1.0], &[1.0, 0.0, 0.0, 1.0], 2);
        let b = build_ellipsoid_bound(&[s.clone(), s.clone(), s], 0.95).unwrap();
        let UncertaintyBound::Ellipsoid { sigma_f, sigma_g, .. } = b else { panic!() };
        assert!(sigma_f.was_regularized() && sigma_g.was_regularized());
        assert!(sigma_f.q().amax() < 1e-9);
        assert_eq!(sigma_f.mu().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn ellipsoid_dof_uses_bound_dimension() {
        let samples: Vec<DynamicsSample> = (0..10)
            .map(|i| {
                let x = i as f64;
                sample(&[x, x * x], &[x, 1.0, -x, 2.0 * x * x], 2)
            })
            .collect();
        let UncertaintyBound::Ellipsoid { sigma_f, sigma_g, .. } = build_ellipsoid_bound(&samples, 0.95).unwrap()
        else {
            panic!()
        };
        assert!((sigma_f.dof() - chi_square_quantile(2.0, 0.95).unwrap()).abs() < 1e-12);
        assert!((sigma_g.dof() - chi_square_quantile(4.0, 0.95).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn selector_gradient_picks_first_row() {
        let s = sample(&[3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], 2);
        let b = build_polytope_bound(&[s]).unwrap();
        let (vf, vg) = project_to_lie(&b, &DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        let ConvexSet::Polytope(vg) = vg else { panic!() };
        assert_eq!(vg.vertices()[0].as_slice(), &[1.0, 2.0]);
        assert_eq!(vf.support(&DVector::from_element(1, 1.0)), 3.0);
        let (vf0, vg0) = project_to_lie(&b, &DVector::zeros(2)).unwrap();
        assert_eq!(vf0.support(&DVector::from_element(1, 1.0)), 0.0);
        assert_eq!(vg0.support(&DVector::from_element(2, 1.0)), 0.0);
    }

    #[test]
    fn lie_map_matches_transpose_product() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let grad = DVector::from_row_slice(&[0.5, -1.0, 2.0]);
        let flat = crate::types::flatten_g(&g);
        let t = lie_map(&grad, 2);
        assert_eq!(t * &flat, g.transpose() * &grad);
        assert_eq!(lie_of_flat(&grad, &flat, 2), g.transpose() * &grad);
    }

    #[test]
    fn c_for_unit_ellipsoid() {
        let params = SafetyIndexParams::new(1.0, 1.0, 0.0);
        let e = EllipsoidSet::new(DVector::zeros(2), DMatrix::identity(2, 2), 4.0).unwrap();
        let b = UncertaintyBound::Ellipsoid {
            sigma_f: e.clone(),
            sigma_g: EllipsoidSet::new(DVector::zeros(2), DMatrix::identity(2, 2), 4.0).unwrap(),
            control_dim: 1,
        };
        let lie = lie_bounds(&b, &DVector::from_row_slice(&[1.0, 0.0]), 0.7, &params).unwrap();
        assert!((lie.c - (-0.7 - 2.0)).abs() < 1e-12);
        let vf = ConvexSet::Polytope(
            PolytopeSet::new(vec![DVector::from_element(1, -1.0), DVector::from_element(1, 3.0)]).unwrap(),
        );
        assert_eq!(compute_c(&vf, 0.0, &params), -3.0);
    }

    #[test]
    fn zero_uncertainty_gives_zero_residual_constant() {
        let model = ScaraModel::default();
        let params = SafetyIndexParams::learned_scara();
        let grid = vec![StateVector::from_slice(&[0.3, 0.2, 1.0, -0.5]), StateVector::from_slice(&[0.0; 4])];
        let d = estimate_constant_residual_bound(&model, &params, &[0.8, 0.8], &grid, model.control_box()).unwrap();
        assert_eq!(d, 0.0);
        let spread = [0.5, 1.5];
        let small = estimate_constant_residual_bound(&model, &params, &spread, &grid, model.control_box()).unwrap();
        let big = estimate_constant_residual_bound(&model, &params, &spread, &grid, &model.control_box().scaled(2.0))
            .unwrap();
        assert!(small > 0.0 && big >= small);
    }

    #[test]
    fn analytic_segway_variance_is_affine_pushforward() {
        let model = SegwayModel::default();
        let state = StateVector::from_slice(&[0.0, 0.05, 0.5, -0.1]);
        let b = analytic_segway_ellipsoid(&model, &state, 0.95).unwrap();
        let UncertaintyBound::Ellipsoid { sigma_g, .. } = b else { panic!() };
        let g0 = model.segway_dynamics(&state, 0.0).unwrap();
        let g1 = model.segway_dynamics(&state, 1.0).unwrap();
        for i in 0..4 {
            let slope = g1.g_flat()[i] - g0.g_flat()[i];
            let expected = (slope * 0.3) * (slope * 0.3);
            assert!((sigma_g.q()[(i, i)] - expected).abs() <= 1e-9 * (1.0 + expected));
        }
        assert!((sigma_g.dof() - chi_square_quantile(1.0, 0.95).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn analytic_bound_rejects_nonaffine_models() {
        let model = ScaraModel::default();
        assert!(analytic_affine_ellipsoid(&model, &StateVector::zeros(4), 0.95).is_err());
    }

    #[test]
    fn builder_is_deterministic() {
        let model = ScaraModel::default();
        let a = BoundBuilder::new(&model, BoundKind::Polytope, 50, 9).unwrap();
        let b = BoundBuilder::new(&model, BoundKind::Polytope, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameters().len(), 50);
        assert!(BoundBuilder::new(&model, BoundKind::Ellipsoid { confidence: 1.0 }, 5, 0).is_err());
    }
}
