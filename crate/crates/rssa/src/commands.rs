//! The five subcommands. Each returns the process exit code on success; any
//! error maps to exit code 1 in the binary.

use anyhow::{bail, Context, Result};
use rssa_core::bounds::{estimate_constant_residual_bound, BoundBuilder, BoundKind};
use rssa_core::experiments::{
    feasibility_map, forward_invariance_study, scan_case_starts, simulate, InvarianceConfig, RssaVariant,
    SimulationConfig, TrajectoryLog,
};
use rssa_core::safety_index::{phi0, SafetyIndexParams};
use rssa_core::synthesis::{estimate_lipschitz, sample_box_grid, sample_state_grid, synthesize, CmaConfig, SynthesisConfig};
use rssa_core::types::StateVector;
use serde_json::{json, Value};

use crate::bench::{timing_bench, BenchSetup};
use crate::config::{format_params, parse_params, IndexPreset, RunConfig, StartSpec};
use crate::output::{to_json, write_trajectory_csv, Staged};
use crate::robot::Robot;

/// Exit code of `synthesize` when the rate stays below one.
pub const EXIT_UNCERTIFIED: i32 = 2;
/// Exit code of `simulate` when the filtered run leaves the safe set although
/// the plant parameter lies inside the modeled support.
pub const EXIT_VIOLATION: i32 = 3;

/// `phi0` above this counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-6;

const SCAN_COUNTS: usize = 41;

fn check_out_dir(cfg: &RunConfig) -> Result<()> {
    if !cfg.out.is_dir() {
        bail!("output directory {} does not exist", cfg.out.display());
    }
    Ok(())
}

fn schema(name: &str) -> String {
    format!("rssa.{name}.v1")
}

pub fn load_params(cfg: &RunConfig, robot: &Robot) -> Result<SafetyIndexParams> {
    let mut p = match &cfg.params {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            parse_params(&text, &path.display().to_string())?
        }
        None => match cfg.index {
            IndexPreset::Robot => robot.default_params(),
            IndexPreset::Phi0 => SafetyIndexParams::user_index(),
            IndexPreset::Hand => SafetyIndexParams::hand_designed(),
        },
    };
    if let Some(s) = cfg.gamma_slope {
        p = p.with_gamma_slope(s);
    }
    p.validate()?;
    Ok(p)
}

/// The bound builder of `variant`, or `None` for the unfiltered run. The
/// ellipsoid is closed-form where the model is affine in its parameter.
pub fn make_builder(
    cfg: &RunConfig,
    robot: &Robot,
    params: &SafetyIndexParams,
    variant: RssaVariant,
) -> Result<Option<BoundBuilder>> {
    let model = robot.model();
    let kind = match variant {
        RssaVariant::None => return Ok(None),
        RssaVariant::Polytope => BoundKind::Polytope,
        RssaVariant::Ellipsoid => match robot {
            Robot::Scara(_) => BoundKind::Ellipsoid {
                confidence: cfg.confidence,
            },
            Robot::Segway(_) | Robot::Toy(_) => BoundKind::AnalyticEllipsoid {
                confidence: cfg.confidence,
            },
        },
        RssaVariant::Constant => {
            let d_res = match cfg.d_res {
                Some(d) => d,
                None => estimate_d_res(cfg, robot, params)?,
            };
            BoundKind::Constant { d_res }
        }
    };
    Ok(Some(BoundBuilder::new(model, kind, cfg.samples, cfg.seed)?))
}

/// Residual constant of the mean-model bound over the residual grid.
pub fn estimate_d_res(cfg: &RunConfig, robot: &Robot, params: &SafetyIndexParams) -> Result<f64> {
    let model = robot.model();
    let samples = BoundBuilder::new(model, BoundKind::Polytope, cfg.samples, cfg.seed)?;
    let counts = cfg.residual_grid.clone().unwrap_or_else(|| robot.default_residual_grid());
    let (grid, _) = sample_box_grid(model.state_box(), &counts)?;
    Ok(estimate_constant_residual_bound(
        model,
        params,
        samples.parameters(),
        &grid,
        model.control_box(),
    )?)
}

fn d_res_of(builder: &Option<BoundBuilder>) -> Option<f64> {
    match builder.as_ref().map(|b| b.kind) {
        Some(BoundKind::Constant { d_res }) => Some(d_res),
        _ => None,
    }
}

pub fn cmd_synthesize(cfg: &RunConfig) -> Result<i32> {
    check_out_dir(cfg)?;
    let robot = Robot::new(cfg.robot);
    let model = robot.model();
    let initial = load_params(cfg, &robot)?;
    let variant = if cfg.rssa == RssaVariant::None {
        bail!("synthesis needs a bound; rssa = none is not allowed here");
    } else {
        cfg.rssa
    };
    let builder = make_builder(cfg, &robot, &initial, variant)?.expect("bound variant");
    let counts = cfg.grid.clone().unwrap_or_else(|| robot.default_grid());
    let mut scfg = SynthesisConfig::new(model, counts.clone())?;
    let (grid, delta) = sample_state_grid(model, &counts)?;
    scfg.gamma_slope = initial.gamma_slope;
    scfg.initial = cfg.params.as_ref().map(|_| initial.as_array());
    scfg.epsilon_override = cfg.epsilon;
    scfg.lipschitz_probes = cfg.probes;
    scfg.safety_factor = cfg.safety_factor;
    scfg.cma = CmaConfig {
        population: cfg.population,
        sigma0: cfg.sigma0,
        max_generations: cfg.generations,
        seed: cfg.seed,
    };
    scfg.constants = estimate_lipschitz(model, &initial, &builder, &grid, delta, cfg.probes, cfg.seed, cfg.safety_factor)?;
    log::info!("lipschitz constants {:?}, margin {:e}", scfg.constants, scfg.epsilon());
    let res = synthesize(&scfg, model, &builder)?;

    let k = res.constants;
    let report = json!({
        "schema": schema("synthesis"),
        "robot": robot.kind().as_str(),
        "rssa": variant.as_str(),
        "seed": cfg.seed,
        "samples": cfg.samples,
        "grid": counts,
        "grid_size": res.grid_size,
        "delta": res.delta,
        "epsilon": res.epsilon,
        "epsilon_overridden": cfg.epsilon.is_some(),
        "d_res": d_res_of(&Some(builder.clone())),
        "constants": {
            "k_gamma": k.k_gamma, "k_phi": k.k_phi, "k_grad_phi": k.k_grad_phi,
            "k_sigma_f": k.k_sigma_f, "k_sigma_g": k.k_sigma_g, "m_u": k.m_u, "m_xdot": k.m_xdot,
        },
        "params": {
            "alpha": res.params.alpha, "k_v": res.params.k_v, "beta": res.params.beta,
            "gamma_slope": res.params.gamma_slope,
        },
        "rate": res.rate,
        "certified": res.certified(),
        "evaluations": res.evaluations,
        "history": res.history.iter().map(|h| json!({
            "generation": h.generation,
            "best_rate": h.best_rate,
            "generation_best_rate": h.generation_best_rate,
            "best_params": h.best_params,
            "sigma": h.sigma,
        })).collect::<Vec<Value>>(),
    });
    let mut stage = Staged::new();
    stage.add(&cfg.out.join("params.txt"), format_params(&res.params).as_bytes())?;
    stage.add(&cfg.out.join("synthesis.json"), to_json(&report)?.as_bytes())?;
    stage.commit()?;
    println!(
        "rate {} at alpha {} k_v {} beta {} (margin {:e})",
        res.rate, res.params.alpha, res.params.k_v, res.params.beta, res.epsilon
    );
    Ok(if res.certified() { 0 } else { EXIT_UNCERTIFIED })
}

/// Resolve the configured start into a state.
pub fn start_state(cfg: &RunConfig, robot: &Robot, params: &SafetyIndexParams) -> Result<StateVector> {
    let model = robot.model();
    let spec = cfg.start.clone().unwrap_or_else(|| robot.default_start());
    Ok(match spec {
        StartSpec::Rest => StateVector::zeros(model.state_dim()),
        StartSpec::State(v) => {
            if v.len() != model.state_dim() {
                bail!("start has {} entries, the {} state has {}", v.len(), model.name(), model.state_dim());
            }
            StateVector::new(v)
        }
        StartSpec::Case1 => scan_case_starts(model, params, SCAN_COUNTS, &[], 1e-3)?.case1,
        StartSpec::Case2 => scan_case_starts(model, params, SCAN_COUNTS, &[], 1e-3)?.case2,
    })
}

fn summarize(log: &TrajectoryLog, robot: &Robot) -> Value {
    let model = robot.model();
    let m = model.control_dim();
    let n = log.len().max(1) as f64;
    let mean_u: Vec<f64> = (0..m).map(|j| log.steps.iter().map(|s| s.u[j]).sum::<f64>() / n).collect();
    let mean_abs_u: Vec<f64> = (0..m).map(|j| log.steps.iter().map(|s| s.u[j].abs()).sum::<f64>() / n).collect();
    let outside = log.steps.iter().filter(|s| !s.in_state_box).count();
    let infeasible = log
        .steps
        .iter()
        .filter(|s| s.status.is_some_and(|st| !st.is_feasible()))
        .count();
    json!({
        "steps": log.len(),
        "max_phi0": log.max_phi0(),
        "max_phi": log.max_phi(),
        "max_worst_rate": log.max_worst_rate(),
        "first_violation_t": log.first_violation(VIOLATION_TOL),
        "fallbacks": log.fallback_count(),
        "infeasible_steps": infeasible,
        "steps_outside_state_box": outside,
        "cumulative_deviation": log.cumulative_deviation(model.control_box()),
        "mean_u": mean_u,
        "mean_abs_u": mean_abs_u,
        "final_state": log.steps.last().map(|s| s.state.clone()),
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    check_out_dir(cfg)?;
    let robot = Robot::new(cfg.robot);
    let model = robot.model();
    let params = load_params(cfg, &robot)?;
    let builder = make_builder(cfg, &robot, &params, cfg.rssa)?;
    let x0 = start_state(cfg, &robot, &params)?;
    let p_true = cfg.true_param.unwrap_or_else(|| robot.default_true_param());
    let reference = robot.reference()?;
    let sim = SimulationConfig {
        dt: cfg.dt,
        steps: cfg.steps(),
        ..SimulationConfig::default()
    };
    let log = simulate(
        model,
        p_true,
        &reference,
        &params,
        builder.as_ref().map(|b| (b, cfg.rssa)),
        &x0,
        &sim,
    )?;
    let matched = model.parameter_distribution().contains(p_true);
    let violated = log.max_phi0() > VIOLATION_TOL;

    let mut report = json!({
        "schema": schema("simulate"),
        "robot": robot.kind().as_str(),
        "rssa": cfg.rssa.as_str(),
        "seed": cfg.seed,
        "samples": cfg.samples,
        "confidence": cfg.confidence,
        "d_res": d_res_of(&builder),
        "dt": cfg.dt,
        "params": params.as_array(),
        "gamma_slope": params.gamma_slope,
        "true_param": p_true,
        "matched": matched,
        "start": x0.as_slice(),
        "start_phi0": phi0(model, &x0),
        "violated": violated,
    });
    if let (Value::Object(a), Value::Object(b)) = (&mut report, summarize(&log, &robot)) {
        a.extend(b);
    }
    let mut csv = Vec::new();
    write_trajectory_csv(&log, &mut csv)?;
    let mut stage = Staged::new();
    stage.add(&cfg.out.join("trajectory.csv"), &csv)?;
    stage.add(&cfg.out.join("simulate.json"), to_json(&report)?.as_bytes())?;
    stage.commit()?;
    println!(
        "max phi0 {} over {} steps, {} fallbacks",
        log.max_phi0(),
        log.len(),
        log.fallback_count()
    );
    if violated && matched && cfg.rssa != RssaVariant::None {
        eprintln!(
            "safety violation at t = {} with the plant parameter inside the modeled support",
            log.first_violation(VIOLATION_TOL).unwrap_or(f64::NAN)
        );
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}

pub fn cmd_feasmap(cfg: &RunConfig) -> Result<i32> {
    check_out_dir(cfg)?;
    let robot = Robot::new(cfg.robot);
    let model = robot.model();
    let params = load_params(cfg, &robot)?;
    let Some(builder) = make_builder(cfg, &robot, &params, cfg.rssa)? else {
        bail!("the feasibility map needs a bound; rssa = none is not allowed here");
    };
    let counts = cfg.map_grid.clone().unwrap_or_else(|| robot.default_map_grid());
    if counts.len() > model.state_dim() {
        bail!("map_grid has more axes than the state");
    }
    let cells = feasibility_map(model, &params, &builder, &counts, cfg.velocity_samples, cfg.seed)?;
    let max_fraction = cells.iter().map(|c| c.infeasible_fraction).fold(0.0, f64::max);
    let bad_cells = cells.iter().filter(|c| c.infeasible_fraction > 0.0).count();
    let mean = cells.iter().map(|c| c.infeasible_fraction).sum::<f64>() / cells.len() as f64;
    let report = json!({
        "schema": schema("feasmap"),
        "robot": robot.kind().as_str(),
        "rssa": cfg.rssa.as_str(),
        "seed": cfg.seed,
        "samples": cfg.samples,
        "params": params.as_array(),
        "gamma_slope": params.gamma_slope,
        "map_grid": counts,
        "velocity_samples": cfg.velocity_samples,
        "max_infeasible_fraction": max_fraction,
        "mean_infeasible_fraction": mean,
        "cells_with_infeasible_states": bad_cells,
        "cells": cells.iter().map(|c| json!({
            "position": c.position,
            "infeasible_fraction": c.infeasible_fraction,
        })).collect::<Vec<Value>>(),
    });
    let mut csv = String::new();
    let k = counts.len();
    let cols: Vec<String> = (0..k).map(|i| format!("q{i}")).chain(["infeasible_fraction".to_string()]).collect();
    csv.push_str(&cols.join(","));
    csv.push('\n');
    for c in &cells {
        let row: Vec<String> = c
            .position
            .iter()
            .chain(std::iter::once(&c.infeasible_fraction))
            .map(f64::to_string)
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let mut stage = Staged::new();
    stage.add(&cfg.out.join("feasmap.csv"), csv.as_bytes())?;
    stage.add(&cfg.out.join("feasmap.json"), to_json(&report)?.as_bytes())?;
    stage.commit()?;
    println!("largest infeasible fraction {max_fraction} ({bad_cells} of {} cells)", cells.len());
    Ok(0)
}

pub fn cmd_fistudy(cfg: &RunConfig) -> Result<i32> {
    check_out_dir(cfg)?;
    let robot = Robot::new(cfg.robot);
    let model = robot.model();
    let params = load_params(cfg, &robot)?;
    let Some(builder) = make_builder(cfg, &robot, &params, cfg.rssa)? else {
        bail!("the invariance study needs a bound; rssa = none is not allowed here");
    };
    let counts = cfg.grid.clone().unwrap_or_else(|| robot.default_grid());
    let (grid, delta) = sample_state_grid(model, &counts)?;
    let k = estimate_lipschitz(model, &params, &builder, &grid, delta, cfg.probes, cfg.seed, cfg.safety_factor)?;
    let residual_grid = cfg.residual_grid.clone().unwrap_or_else(|| robot.default_residual_grid());
    let icfg = InvarianceConfig {
        trials: cfg.trials,
        sim: SimulationConfig {
            dt: cfg.dt,
            steps: cfg.steps(),
            ..SimulationConfig::default()
        },
        seed: cfg.seed,
        residual_grid: residual_grid.clone(),
        k_phi: k.k_phi,
    };
    let reference = robot.reference()?;
    let rows = forward_invariance_study(model, &params, &builder, &reference, &cfg.fi_values, &icfg)?;
    let monotone = rows.windows(2).all(|w| w[1].phi_max >= w[0].phi_max);
    let report = json!({
        "schema": schema("fistudy"),
        "robot": robot.kind().as_str(),
        "rssa": cfg.rssa.as_str(),
        "seed": cfg.seed,
        "samples": cfg.samples,
        "params": params.as_array(),
        "gamma_slope": params.gamma_slope,
        "k_phi": k.k_phi,
        "probe_radius": delta,
        "residual_grid": residual_grid,
        "horizon": cfg.horizon,
        "dt": cfg.dt,
        "phi_max_monotone": monotone,
        "rows": rows.iter().map(|r| json!({
            "true_param": r.true_parameter,
            "phi_max": r.phi_max,
            "residual": r.residual,
            "bound": r.bound,
            "within_bound": r.phi_max <= r.bound,
            "trials": r.trials,
            "fallbacks": r.fallbacks,
        })).collect::<Vec<Value>>(),
    });
    let mut stage = Staged::new();
    stage.add(&cfg.out.join("fistudy.json"), to_json(&report)?.as_bytes())?;
    stage.commit()?;
    for r in &rows {
        println!(
            "true {}: phi_max {} bound {} (residual {})",
            r.true_parameter, r.phi_max, r.bound, r.residual
        );
    }
    Ok(0)
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<i32> {
    check_out_dir(cfg)?;
    let robot = Robot::new(cfg.robot);
    let params = load_params(cfg, &robot)?;
    let reference = robot.reference()?;
    let report = timing_bench(&BenchSetup {
        model: robot.model(),
        params: &params,
        reference: &reference,
        confidence: cfg.confidence,
        sample_counts: &cfg.sample_counts,
        repeats: cfg.repeats,
        states: cfg.bench_states,
        seed: cfg.seed,
    })?;
    let out = json!({
        "schema": schema("bench"),
        "robot": robot.kind().as_str(),
        "seed": cfg.seed,
        "repeats": cfg.repeats,
        "states_per_repeat": cfg.bench_states,
        "report": report,
    });
    let mut stage = Staged::new();
    stage.add(&cfg.out.join("bench.json"), to_json(&out)?.as_bytes())?;
    stage.commit()?;
    for r in &report.rows {
        println!("{:<9} {:>5} samples: {:.3e} s (sd {:.1e})", r.variant, r.samples, r.mean_s, r.std_s);
    }
    println!(
        "polytope rank correlation {:.3}, ellipsoid spread {:.3}",
        report.polytope_spearman, report.ellipsoid_spread
    );
    Ok(0)
}
