//! Safety index synthesis: a state grid, the sampling margin, the feasible-rate
//! objective, and CMA-ES over `(alpha, k_v, beta)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bounds::{lie_bounds, lie_bounds_at, BoundBuilder, UncertaintyBound};
use crate::dynamics::UncertainSystem;
use crate::math::{exp, log, sqrt};
use crate::safety_index::{constraint_index, SafetyIndexParams, SearchBox};
use crate::solvers::is_feasible_lie;
use crate::types::{BoxLimits, StateVector};
use crate::{Error, Result};

/// `Sync` when the `parallel` feature is on, empty otherwise.
#[cfg(feature = "parallel")]
pub trait MaybeSync: Sync {}
#[cfg(feature = "parallel")]
impl<T: Sync + ?Sized> MaybeSync for T {}
#[cfg(not(feature = "parallel"))]
pub trait MaybeSync {}
#[cfg(not(feature = "parallel"))]
impl<T: ?Sized> MaybeSync for T {}

/// Uniform tensor grid over `bounds` and its covering radius: half the
/// Euclidean diagonal of one cell.
pub fn sample_box_grid(bounds: &BoxLimits, counts: &[usize]) -> Result<(Vec<StateVector>, f64)> {
    let n = bounds.dim();
    if counts.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: counts.len(),
        });
    }
    if counts.iter().any(|c| *c < 2) {
        return Err(Error::InvalidArgument("grid needs at least 2 points per dimension".into()));
    }
    let steps: Vec<f64> = (0..n)
        .map(|i| (bounds.upper()[i] - bounds.lower()[i]) / (counts[i] - 1) as f64)
        .collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let x: Vec<f64> = (0..n)
            .map(|i| {
                if idx[i] == counts[i] - 1 {
                    bounds.upper()[i]
                } else {
                    bounds.lower()[i] + steps[i] * idx[i] as f64
                }
            })
            .collect();
        out.push(StateVector::new(x));
        // last coordinate varies fastest
        for i in (0..n).rev() {
            idx[i] += 1;
            if idx[i] < counts[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    let delta = 0.5 * sqrt(steps.iter().map(|s| s * s).sum::<f64>());
    Ok((out, delta))
}

pub fn sample_state_grid<M: UncertainSystem + ?Sized>(model: &M, counts: &[usize]) -> Result<(Vec<StateVector>, f64)> {
    sample_box_grid(model.state_box(), counts)
}

/// Constants of the sampling-margin bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LipschitzConstants {
    pub k_gamma: f64,
    pub k_phi: f64,
    pub k_grad_phi: f64,
    pub k_sigma_f: f64,
    pub k_sigma_g: f64,
    pub m_u: f64,
    pub m_xdot: f64,
}

impl LipschitzConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.k_gamma,
            self.k_phi,
            self.k_grad_phi,
            self.k_sigma_f,
            self.k_sigma_g,
            self.m_u,
            self.m_xdot,
        ];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("Lipschitz and magnitude constants must be finite and non-negative".into()))
        }
    }
}

/// `eps = k_phi (k_sf + k_sg M_u) delta + k_grad_phi delta M_xdot + k_gamma k_phi delta`.
pub fn margin_epsilon(k: &LipschitzConstants, delta: f64) -> f64 {
    k.k_phi * (k.k_sigma_f + k.k_sigma_g * k.m_u) * delta + k.k_grad_phi * delta * k.m_xdot + k.k_gamma * k.k_phi * delta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmaConfig {
    pub population: usize,
    /// Initial step size as a fraction of the search-box width.
    pub sigma0: f64,
    pub max_generations: usize,
    pub seed: u64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            population: 16,
            sigma0: 0.3,
            max_generations: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub grid_counts: Vec<usize>,
    pub delta: f64,
    pub constants: LipschitzConstants,
    /// Used instead of the computed margin when set.
    pub epsilon_override: Option<f64>,
    pub cma: CmaConfig,
    pub search_box: SearchBox,
    pub gamma_slope: f64,
    /// Start of the search; the search-box center when absent.
    pub initial: Option<[f64; 3]>,
    pub lipschitz_probes: usize,
    pub safety_factor: f64,
}

impl SynthesisConfig {
    pub fn new<M: UncertainSystem + ?Sized>(model: &M, grid_counts: Vec<usize>) -> Result<Self> {
        let (_, delta) = sample_state_grid(model, &grid_counts)?;
        Ok(Self {
            grid_counts,
            delta,
            constants: LipschitzConstants::default(),
            epsilon_override: None,
            cma: CmaConfig::default(),
            search_box: SearchBox::default(),
            gamma_slope: crate::safety_index::DEFAULT_GAMMA_SLOPE,
            initial: None,
            lipschitz_probes: 2000,
            safety_factor: 1.5,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon_override
            .unwrap_or_else(|| margin_epsilon(&self.constants, self.delta))
    }
}

fn random_state<R: Rng + ?Sized>(bounds: &BoxLimits, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(bounds.dim(), |i, _| rng.random_range(bounds.lower()[i]..=bounds.upper()[i]))
}

/// One-sided set distance `max_a min_b |a - b|` between sample sets.
fn set_excess(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Empirical constants from difference quotients on random state pairs at
/// distance `radius`, inflated by `safety_factor`. `M_u` is exact from the box
/// corners, `M_xdot` is the largest sampled speed over `grid` and the corners,
/// and `k_gamma` is the slope of `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_lipschitz<M: UncertainSystem + ?Sized>(
    model: &M,
    params: &SafetyIndexParams,
    builder: &BoundBuilder,
    grid: &[StateVector],
    radius: f64,
    probes: usize,
    seed: u64,
    safety_factor: f64,
) -> Result<LipschitzConstants> {
    if probes < 100 {
        return Err(Error::InvalidArgument("at least 100 Lipschitz probes are required".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("probe radius must be positive".into()));
    }
    let sbox = model.state_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut k_phi, mut k_grad, mut k_sf, mut k_sg) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..probes {
        let x = random_state(sbox, &mut rng);
        let dir = DVector::from_fn(x.len(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let step = dir.normalize() * (radius * rng.random_range(0.0..=1.0));
        let x2 = sbox.clamp(&(&x + step));
        let dist = (&x2 - &x).norm();
        if !(dist > 1e-12) {
            continue;
        }
        let (s1, s2) = (StateVector::from(x), StateVector::from(x2));
        let (i1, i2) = (constraint_index(params, model, &s1), constraint_index(params, model, &s2));
        let q_phi = (i1.value - i2.value).abs() / dist;
        let q_grad = (&i1.grad - &i2.grad).norm() / dist;
        let d1 = builder.samples(model, &s1)?;
        let d2 = builder.samples(model, &s2)?;
        let f1: Vec<DVector<f64>> = d1.iter().map(|d| d.f().clone()).collect();
        let f2: Vec<DVector<f64>> = d2.iter().map(|d| d.f().clone()).collect();
        let g1: Vec<DVector<f64>> = d1.iter().map(|d| d.g_flat().clone()).collect();
        let g2: Vec<DVector<f64>> = d2.iter().map(|d| d.g_flat().clone()).collect();
        let q_sf = set_excess(&f1, &f2).max(set_excess(&f2, &f1)) / dist;
        let q_sg = set_excess(&g1, &g2).max(set_excess(&g2, &g1)) / dist;
        for (acc, q) in [(&mut k_phi, q_phi), (&mut k_grad, q_grad), (&mut k_sf, q_sf), (&mut k_sg, q_sg)] {
            if q.is_finite() {
                *acc = acc.max(q);
            }
        }
    }
    let corners = model.control_box().corners();
    let m_u = corners.iter().map(|u| u.norm()).fold(0.0, f64::max);
    let mut m_xdot: f64 = 0.0;
    for state in grid {
        for d in builder.samples(model, state)? {
            for u in &corners {
                m_xdot = m_xdot.max(d.state_derivative(u).norm());
            }
        }
    }
    Ok(LipschitzConstants {
        k_gamma: params.gamma_slope,
        k_phi: k_phi * safety_factor,
        k_grad_phi: k_grad * safety_factor,
        k_sigma_f: k_sf * safety_factor,
        k_sigma_g: k_sg * safety_factor,
        m_u,
        m_xdot: m_xdot * safety_factor,
    })
}

/// Whether the state admits a robust safe control with margin `epsilon`.
pub fn state_feasible<M: UncertainSystem + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    builder: &BoundBuilder,
    state: &StateVector,
    epsilon: f64,
    control_box: &BoxLimits,
) -> Result<bool> {
    let bound = builder.build(model, state)?;
    let lie = lie_bounds_at(model, params, state, &bound)?;
    Ok(is_feasible_lie(&lie, control_box, epsilon))
}

/// Per-state feasibility flags over `grid`, in grid order.
pub fn feasibility_flags<M: UncertainSystem + MaybeSync + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    builder: &BoundBuilder,
    grid: &[StateVector],
    epsilon: f64,
    control_box: &BoxLimits,
) -> Result<Vec<bool>> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument("margin must be non-negative".into()));
    }
    let check = |s: &StateVector| {
        if epsilon.is_infinite() {
            return Ok(false);
        }
        state_feasible(params, model, builder, s, epsilon, control_box)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.par_iter().map(check).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        grid.iter().map(check).collect()
    }
}

/// `|B*| / |B|`: the fraction of grid states admitting a robust safe control with margin `epsilon`.
pub fn feasible_rate<M: UncertainSystem + MaybeSync + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    builder: &BoundBuilder,
    grid: &[StateVector],
    epsilon: f64,
    control_box: &BoxLimits,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("state grid"));
    }
    let flags = feasibility_flags(params, model, builder, grid, epsilon, control_box)?;
    Ok(flags.iter().filter(|f| **f).count() as f64 / grid.len() as f64)
}

/// Bounds at every grid state. They do not depend on the index, so one set
/// serves every candidate of a search.
pub fn grid_bounds<M: UncertainSystem + MaybeSync + ?Sized>(
    model: &M,
    builder: &BoundBuilder,
    grid: &[StateVector],
) -> Result<Vec<UncertaintyBound>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.par_iter().map(|s| builder.build(model, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        grid.iter().map(|s| builder.build(model, s)).collect()
    }
}

/// [`feasible_rate`] with the bounds from [`grid_bounds`].
pub fn feasible_rate_with_bounds<M: UncertainSystem + MaybeSync + ?Sized>(
    params: &SafetyIndexParams,
    model: &M,
    grid: &[StateVector],
    bounds: &[UncertaintyBound],
    epsilon: f64,
    control_box: &BoxLimits,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("state grid"));
    }
    if grid.len() != bounds.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: bounds.len(),
        });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument("margin must be non-negative".into()));
    }
    if epsilon.is_infinite() {
        return Ok(0.0);
    }
    let check = |(s, b): (&StateVector, &UncertaintyBound)| -> Result<bool> {
        let idx = constraint_index(params, model, s);
        let lie = lie_bounds(b, &idx.grad, idx.value, params)?;
        Ok(is_feasible_lie(&lie, control_box, epsilon))
    };
    #[cfg(feature = "parallel")]
    let flags: Result<Vec<bool>> = {
        use rayon::prelude::*;
        grid.par_iter().zip(bounds.par_iter()).map(check).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let flags: Result<Vec<bool>> = grid.iter().zip(bounds.iter()).map(check).collect();
    Ok(flags?.iter().filter(|f| **f).count() as f64 / grid.len() as f64)
}

/// Minimal CMA-ES (weighted recombination, cumulative step-size adaptation,
/// rank-one and rank-mu covariance updates) minimizing over the unit cube.
#[derive(Debug, Clone)]
pub struct Cmaes {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    pub mean: DVector<f64>,
    pub sigma: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: usize,
    rng: ChaCha8Rng,
}

/// Resampling attempts before a candidate outside the unit cube is clipped.
pub const MAX_RESAMPLES: usize = 100;

impl Cmaes {
    pub fn new(mean: DVector<f64>, sigma: f64, population: usize, seed: u64) -> Self {
        let n = mean.len();
        let lambda = population.max(4 + (3.0 * log(n as f64)) as usize).max(2);
        let mu = lambda / 2;
        let raw: Vec<f64> = (0..mu).map(|i| log(mu as f64 + 0.5) - log(i as f64 + 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (sqrt((mu_eff - 1.0) / (nf + 1.0)) - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3) * (nf + 1.3) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0) * (nf + 2.0) + mu_eff));
        let chi_n = sqrt(nf) * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            dim: n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean,
            sigma,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn population(&self) -> usize {
        self.lambda
    }

    fn eigen(&self) -> (DMatrix<f64>, DVector<f64>) {
        let eig = SymmetricEigen::new(self.cov.clone());
        let d = eig.eigenvalues.map(|v| sqrt(v.max(1e-20)));
        (eig.eigenvectors, d)
    }

    /// Candidates inside the unit cube.
    pub fn ask(&mut self) -> Vec<DVector<f64>> {
        let (b, d) = self.eigen();
        let bd = &b * DMatrix::from_diagonal(&d);
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let mut x = DVector::zeros(self.dim);
            let mut inside = false;
            for _ in 0..MAX_RESAMPLES {
                let z = DVector::from_fn(self.dim, |_, _| {
                    let v: f64 = StandardNormal.sample(&mut self.rng);
                    v
                });
                x = &self.mean + (&bd * z) * self.sigma;
                if x.iter().all(|v| (0.0..=1.0).contains(v)) {
                    inside = true;
                    break;
                }
            }
            if !inside {
                x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            out.push(x);
        }
        out
    }

    /// Update from candidates and their costs (lower is better; ties keep ask order).
    pub fn tell(&mut self, candidates: &[DVector<f64>], costs: &[f64]) {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|a, b| costs[*a].total_cmp(&costs[*b]).then(a.cmp(b)));
        let old = self.mean.clone();
        let mut new_mean = DVector::zeros(self.dim);
        for (w, i) in self.weights.iter().zip(&order) {
            new_mean += &candidates[*i] * *w;
        }
        let y_w = (&new_mean - &old) / self.sigma;
        let (b, d) = self.eigen();
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();
        self.p_sigma = &self.p_sigma * (1.0 - self.c_sigma)
            + &inv_sqrt * &y_w * sqrt(self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff);
        let g = (self.generation + 1) as f64;
        let norm_ps = self.p_sigma.norm();
        let h_sigma = norm_ps / sqrt(1.0 - libm::pow(1.0 - self.c_sigma, 2.0 * g))
            < (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - self.c_c) + &y_w * (h * sqrt(self.c_c * (2.0 - self.c_c) * self.mu_eff));
        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, i) in self.weights.iter().zip(order.iter().take(self.mu)) {
            let y = (&candidates[*i] - &old) / self.sigma;
            rank_mu += &y * y.transpose() * *w;
        }
        let rank_one = &self.p_c * self.p_c.transpose() + &self.cov * ((1.0 - h) * self.c_c * (2.0 - self.c_c));
        self.cov = &self.cov * (1.0 - self.c_1 - self.c_mu) + rank_one * self.c_1 + rank_mu * self.c_mu;
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        self.cov = sym;
        self.sigma *= exp((self.c_sigma / self.d_sigma) * (norm_ps / self.chi_n - 1.0));
        self.sigma = self.sigma.min(1.0);
        self.mean = new_mean.map(|v| v.clamp(0.0, 1.0));
        self.generation += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best rate seen so far (non-decreasing).
    pub best_rate: f64,
    pub generation_best_rate: f64,
    pub best_params: [f64; 3],
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub params: SafetyIndexParams,
    pub rate: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub constants: LipschitzConstants,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
    pub grid_size: usize,
}

impl SynthesisResult {
    /// Every grid state admits a robust safe control with the margin.
    pub fn certified(&self) -> bool {
        self.rate >= 1.0
    }
}

fn to_params(search: &SearchBox, x: &DVector<f64>, slope: f64) -> SafetyIndexParams {
    let w = search.widths();
    let p = search.clip([
        search.lower[0] + x[0] * w[0],
        search.lower[1] + x[1] * w[1],
        search.lower[2] + x[2] * w[2],
    ]);
    SafetyIndexParams::new(p[0], p[1], p[2]).with_gamma_slope(slope)
}

fn to_unit(search: &SearchBox, p: [f64; 3]) -> DVector<f64> {
    let w = search.widths();
    DVector::from_fn(3, |i, _| ((p[i] - search.lower[i]) / w[i]).clamp(0.0, 1.0))
}

/// CMA-ES maximizing the feasible rate over the search box. Stops at rate 1 or
/// the generation cap and returns the best parameters seen.
pub fn synthesize<M: UncertainSystem + MaybeSync + ?Sized>(
    cfg: &SynthesisConfig,
    model: &M,
    builder: &BoundBuilder,
) -> Result<SynthesisResult> {
    cfg.constants.validate()?;
    let (grid, delta) = sample_state_grid(model, &cfg.grid_counts)?;
    let epsilon = cfg.epsilon();
    let control_box = model.control_box().clone();
    let search = cfg.search_box;
    let bounds = grid_bounds(model, builder, &grid)?;
    let rate_of = |p: &SafetyIndexParams| feasible_rate_with_bounds(p, model, &grid, &bounds, epsilon, &control_box);

    let start = cfg.initial.map(|p| to_unit(&search, p)).unwrap_or_else(|| DVector::from_element(3, 0.5));
    let mut best_params = to_params(&search, &start, cfg.gamma_slope);
    let mut best_rate = rate_of(&best_params)?;
    let mut evaluations = 1;
    let mut history = Vec::new();
    log::info!("synthesis start: rate {best_rate:.6} at {:?}, eps {epsilon:e}", best_params.as_array());
    let mut cma = Cmaes::new(start, cfg.cma.sigma0, cfg.cma.population, cfg.cma.seed);
    let mut generation = 0;
    while best_rate < 1.0 && generation < cfg.cma.max_generations {
        generation += 1;
        let candidates = cma.ask();
        let mut costs = Vec::with_capacity(candidates.len());
        let mut gen_best = f64::NEG_INFINITY;
        for x in &candidates {
            let p = to_params(&search, x, cfg.gamma_slope);
            let r = rate_of(&p)?;
            evaluations += 1;
            costs.push(-r);
            gen_best = gen_best.max(r);
            if r > best_rate {
                best_rate = r;
                best_params = p;
            }
        }
        cma.tell(&candidates, &costs);
        log::info!("generation {generation}: best {gen_best:.6}, best ever {best_rate:.6}");
        history.push(GenerationRecord {
            generation,
            best_rate,
            generation_best_rate: gen_best,
            best_params: best_params.as_array(),
            sigma: cma.sigma,
        });
    }
    Ok(SynthesisResult {
        params: best_params,
        rate: best_rate,
        epsilon,
        delta,
        constants: cfg.constants,
        history,
        evaluations,
        grid_size: grid.len(),
    })
}
