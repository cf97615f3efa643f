//! Wall-clock cost of one robust filter call against the number of dynamics samples.

use std::time::Instant;

use rand::Rng;
use rssa_core::bounds::{lie_bounds_at, BoundBuilder, BoundKind};
use rssa_core::dynamics::UncertainSystem;
use rssa_core::experiments::Reference;
use rssa_core::safety_index::SafetyIndexParams;
use rssa_core::solvers::{robust_filter_lie, RssaOptions};
use rssa_core::stats::stream_rng;
use rssa_core::types::StateVector;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub variant: String,
    pub samples: usize,
    /// Seconds per filter call, averaged within each repeat.
    pub mean_s: f64,
    pub std_s: f64,
    pub per_repeat_s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Rank correlation of polytope per-repeat times with the sample count.
    pub polytope_spearman: f64,
    /// Largest over smallest mean ellipsoid time across sample counts.
    pub ellipsoid_spread: f64,
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub struct BenchSetup<'a, M: UncertainSystem + ?Sized> {
    pub model: &'a M,
    pub params: &'a SafetyIndexParams,
    pub reference: &'a Reference,
    pub confidence: f64,
    pub sample_counts: &'a [usize],
    pub repeats: usize,
    /// Filter calls per timing.
    pub states: usize,
    pub seed: u64,
}

/// Time bound construction, projection and the filter solve at random
/// in-box states. The polytope bound is built from `count` samples; the
/// ellipsoid is the closed-form one and ignores the count.
pub fn timing_bench<M: UncertainSystem + ?Sized>(setup: &BenchSetup<'_, M>) -> anyhow::Result<BenchReport> {
    anyhow::ensure!(setup.repeats >= 10, "timing needs at least 10 repeats");
    let model = setup.model;
    let kinds = [
        ("polytope", BoundKind::Polytope),
        (
            "ellipsoid",
            BoundKind::AnalyticEllipsoid {
                confidence: setup.confidence,
            },
        ),
    ];
    let mut builders = Vec::new();
    for &count in setup.sample_counts {
        for (name, kind) in kinds {
            builders.push((name, count, BoundBuilder::new(model, kind, count, setup.seed)?));
        }
    }
    let opts = RssaOptions::default();
    let sbox = model.state_box();
    let run = |builder: &BoundBuilder, states: &[StateVector]| -> anyhow::Result<f64> {
        let start = Instant::now();
        for s in states {
            let bound = builder.build(model, s)?;
            let lie = lie_bounds_at(model, setup.params, s, &bound)?;
            let u_ref = setup.reference.control(s).into_vector();
            std::hint::black_box(robust_filter_lie(&lie, &u_ref, model.control_box(), &opts));
        }
        Ok(start.elapsed().as_secs_f64() / states.len() as f64)
    };
    let mut times = vec![Vec::with_capacity(setup.repeats); builders.len()];
    for repeat in 0..setup.repeats {
        let mut rng = stream_rng(setup.seed, repeat as u64);
        let states: Vec<StateVector> = (0..setup.states)
            .map(|_| {
                StateVector::new(
                    (0..sbox.dim())
                        .map(|i| rng.random_range(sbox.lower()[i]..=sbox.upper()[i]))
                        .collect(),
                )
            })
            .collect();
        if repeat == 0 {
            for (_, _, b) in &builders {
                run(b, &states[..1])?;
            }
        }
        for (k, (_, _, b)) in builders.iter().enumerate() {
            times[k].push(run(b, &states)?);
        }
    }
    let mut rows = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for ((name, count, _), t) in builders.iter().zip(times) {
        let (mean, std) = mean_std(&t);
        if *name == "polytope" {
            xs.extend(std::iter::repeat_n(*count as f64, t.len()));
            ys.extend(t.iter().copied());
        }
        rows.push(BenchRow {
            variant: name.to_string(),
            samples: *count,
            mean_s: mean,
            std_s: std,
            per_repeat_s: t,
        });
    }
    let ell: Vec<f64> = rows.iter().filter(|r| r.variant == "ellipsoid").map(|r| r.mean_s).collect();
    let spread = ell.iter().copied().fold(f64::NEG_INFINITY, f64::max) / ell.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BenchReport {
        rows,
        polytope_spearman: spearman(&xs, &ys),
        ellipsoid_spread: spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_of_monotone_data_is_one() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.5, 0.7, 9.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
