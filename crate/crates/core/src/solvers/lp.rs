//! Dense two-phase simplex for the small linear programs used by the filters:
//! phase-1 feasibility, the empty-interior test on `V_g`, and the minimax fallback.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::abs;

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 50_000;

/// `minimize c^T x` subject to `A_ub x <= b_ub`, `A_eq x = b_eq` and per-variable bounds.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    /// `(lower, upper)`; `None` is unbounded on that side.
    pub bounds: Vec<(Option<f64>, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<(&[f64], f64)> {
        match self {
            LpOutcome::Optimal { x, objective } => Some((x, *objective)),
            _ => None,
        }
    }
}

impl LinearProgram {
    /// `n` free variables and no constraints.
    pub fn new(c: Vec<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            bounds: vec![(None, None); n],
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn leq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        debug_assert_eq!(row.len(), self.num_vars());
        self.a_ub.push(row);
        self.b_ub.push(rhs);
        self
    }

    pub fn eq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        debug_assert_eq!(row.len(), self.num_vars());
        self.a_eq.push(row);
        self.b_eq.push(rhs);
        self
    }

    pub fn bound(&mut self, var: usize, lower: Option<f64>, upper: Option<f64>) -> &mut Self {
        self.bounds[var] = (lower, upper);
        self
    }

    pub fn solve(&self) -> LpOutcome {
        solve_lp(self)
    }
}

/// How an original variable is recovered from the non-negative standard-form ones.
#[derive(Clone, Copy)]
enum VarMap {
    Shift { col: usize, lower: f64 },
    Mirror { col: usize, upper: f64 },
    Split { pos: usize, neg: usize },
}

pub fn solve_lp(lp: &LinearProgram) -> LpOutcome {
    let n = lp.num_vars();
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut extra_ub: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        match lp.bounds.get(j).copied().unwrap_or((None, None)) {
            (Some(l), u) => {
                if let Some(u) = u {
                    if u < l {
                        return LpOutcome::Infeasible;
                    }
                    extra_ub.push((ncols, u - l));
                }
                maps.push(VarMap::Shift { col: ncols, lower: l });
                ncols += 1;
            }
            (None, Some(u)) => {
                maps.push(VarMap::Mirror { col: ncols, upper: u });
                ncols += 1;
            }
            (None, None) => {
                maps.push(VarMap::Split { pos: ncols, neg: ncols + 1 });
                ncols += 2;
            }
        }
    }

    // Translate a row over original variables into standard-form columns plus a constant.
    let translate = |row: &[f64]| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; ncols];
        let mut constant = 0.0;
        for (j, a) in row.iter().enumerate() {
            match maps[j] {
                VarMap::Shift { col, lower } => {
                    out[col] += a;
                    constant += a * lower;
                }
                VarMap::Mirror { col, upper } => {
                    out[col] -= a;
                    constant += a * upper;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] += a;
                    out[neg] -= a;
                }
            }
        }
        (out, constant)
    };

    let n_ub = lp.a_ub.len() + extra_ub.len();
    let n_eq = lp.a_eq.len();
    let total_cols = ncols + n_ub;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_ub + n_eq);
    let mut rhs: Vec<f64> = Vec::with_capacity(n_ub + n_eq);
    let mut slack = ncols;
    for (row, b) in lp.a_ub.iter().zip(&lp.b_ub) {
        let (mut r, k) = translate(row);
        r.resize(total_cols, 0.0);
        r[slack] = 1.0;
        slack += 1;
        rows.push(r);
        rhs.push(b - k);
    }
    for (col, width) in &extra_ub {
        let mut r = vec![0.0; total_cols];
        r[*col] = 1.0;
        r[slack] = 1.0;
        slack += 1;
        rows.push(r);
        rhs.push(*width);
    }
    for (row, b) in lp.a_eq.iter().zip(&lp.b_eq) {
        let (mut r, k) = translate(row);
        r.resize(total_cols, 0.0);
        rows.push(r);
        rhs.push(b - k);
    }
    let (cost, cost_const) = translate(&lp.c);
    let mut cost = cost;
    cost.resize(total_cols, 0.0);

    match standard_form_simplex(rows, rhs, &cost) {
        StdOutcome::Optimal(y) => {
            let x: Vec<f64> = maps
                .iter()
                .map(|m| match *m {
                    VarMap::Shift { col, lower } => lower + y[col],
                    VarMap::Mirror { col, upper } => upper - y[col],
                    VarMap::Split { pos, neg } => y[pos] - y[neg],
                })
                .collect();
            let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
            let _ = cost_const;
            LpOutcome::Optimal { x, objective }
        }
        StdOutcome::Infeasible => LpOutcome::Infeasible,
        StdOutcome::Unbounded => LpOutcome::Unbounded,
    }
}

enum StdOutcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

/// `min c^T y, A y = b, y >= 0` by the two-phase method with Bland's rule.
fn standard_form_simplex(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, cost: &[f64]) -> StdOutcome {
    let m = a.len();
    let n = cost.len();
    if m == 0 {
        return if cost.iter().any(|c| *c < 0.0) {
            StdOutcome::Unbounded
        } else {
            StdOutcome::Optimal(vec![0.0; n])
        };
    }
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            for v in a[i].iter_mut() {
                *v = -*v;
            }
        }
    }
    let scale = b.iter().fold(1.0_f64, |acc, v| acc.max(abs(*v)));
    // artificial columns n..n+m
    for (i, row) in a.iter_mut().enumerate() {
        row.resize(n + m, 0.0);
        row[n + i] = 1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut phase1 = vec![0.0; n + m];
    for v in phase1.iter_mut().skip(n) {
        *v = 1.0;
    }
    let allowed_all = vec![true; n + m];
    if run_simplex(&mut a, &mut b, &phase1, &mut basis, &allowed_all).is_err() {
        return StdOutcome::Infeasible;
    }
    let infeas: f64 = basis
        .iter()
        .zip(&b)
        .filter(|(j, _)| **j >= n)
        .map(|(_, v)| *v)
        .sum();
    if infeas > 1e-9 * scale {
        return StdOutcome::Infeasible;
    }
    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < a.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| abs(a[i][j]) > 1e-9) {
                pivot(&mut a, &mut b, &mut basis, i, j);
                i += 1;
            } else {
                a.remove(i);
                b.remove(i);
                basis.remove(i);
            }
        } else {
            i += 1;
        }
    }
    let mut allowed = vec![true; n + m];
    for v in allowed.iter_mut().skip(n) {
        *v = false;
    }
    let mut full_cost = cost.to_vec();
    full_cost.resize(n + m, 0.0);
    if run_simplex(&mut a, &mut b, &full_cost, &mut basis, &allowed).is_err() {
        return StdOutcome::Unbounded;
    }
    let mut y = vec![0.0; n];
    for (row, j) in basis.iter().enumerate() {
        if *j < n {
            y[*j] = b[row].max(0.0);
        }
    }
    StdOutcome::Optimal(y)
}

struct Unbounded;

fn run_simplex(
    a: &mut [Vec<f64>],
    b: &mut [f64],
    cost: &[f64],
    basis: &mut [usize],
    allowed: &[bool],
) -> core::result::Result<(), Unbounded> {
    let m = a.len();
    let ncols = cost.len();
    let cscale = cost.iter().fold(1.0_f64, |acc, v| acc.max(abs(*v)));
    for _ in 0..MAX_PIVOTS {
        // Bland: first improving column
        let mut entering = None;
        for j in 0..ncols {
            if !allowed[j] || basis.contains(&j) {
                continue;
            }
            let mut r = cost[j];
            for i in 0..m {
                r -= cost[basis[i]] * a[i][j];
            }
            if r < -1e-12 * cscale {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if a[i][j] > PIVOT_TOL {
                let ratio = b[i] / a[i][j];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-14 || (abs(ratio - lr) <= 1e-14 && basis[i] < basis[li]) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((i, _)) = leave else {
            return Err(Unbounded);
        };
        pivot(a, b, basis, i, j);
    }
    log::warn!("simplex hit the pivot limit");
    Ok(())
}

fn pivot(a: &mut [Vec<f64>], b: &mut [f64], basis: &mut [usize], row: usize, col: usize) {
    let p = a[row][col];
    for v in a[row].iter_mut() {
        *v /= p;
    }
    b[row] /= p;
    let pivot_row = a[row].clone();
    let pivot_b = b[row];
    for i in 0..a.len() {
        if i == row {
            continue;
        }
        let factor = a[i][col];
        if factor != 0.0 {
            for (v, pv) in a[i].iter_mut().zip(&pivot_row) {
                *v -= factor * pv;
            }
            b[i] -= factor * pivot_b;
            if abs(b[i]) < 1e-15 {
                b[i] = 0.0;
            }
        }
    }
    basis[row] = col;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp_optimum() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  -> (1.6, 1.2)
        let mut lp = LinearProgram::new(vec![-1.0, -1.0]);
        lp.leq(vec![1.0, 2.0], 4.0)
            .leq(vec![3.0, 1.0], 6.0)
            .bound(0, Some(0.0), None)
            .bound(1, Some(0.0), None);
        let (x, obj) = lp.solve().optimal().map(|(x, o)| (x.to_vec(), o)).unwrap();
        assert!((x[0] - 1.6).abs() < 1e-10 && (x[1] - 1.2).abs() < 1e-10);
        assert!((obj + 2.8).abs() < 1e-10);
    }

    #[test]
    fn free_and_boxed_variables() {
        // min x - y, -3 <= x <= 2, y <= 5 (y free below) with x + y >= -10
        let mut lp = LinearProgram::new(vec![1.0, -1.0]);
        lp.bound(0, Some(-3.0), Some(2.0)).bound(1, None, Some(5.0));
        lp.leq(vec![-1.0, -1.0], 10.0);
        let (x, _) = lp.solve().optimal().map(|(x, o)| (x.to_vec(), o)).unwrap();
        assert!((x[0] + 3.0).abs() < 1e-10 && (x[1] - 5.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.leq(vec![1.0], -1.0).leq(vec![-1.0], -2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.bound(0, Some(0.0), None);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn equality_constraints() {
        // min x + 2y + 3z s.t. x + y + z = 1, x - y = 0, all >= 0 -> x = y = 0.5
        let mut lp = LinearProgram::new(vec![1.0, 2.0, 3.0]);
        for j in 0..3 {
            lp.bound(j, Some(0.0), None);
        }
        lp.eq(vec![1.0, 1.0, 1.0], 1.0).eq(vec![1.0, -1.0, 0.0], 0.0);
        let (x, obj) = lp.solve().optimal().map(|(x, o)| (x.to_vec(), o)).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-10 && (x[1] - 0.5).abs() < 1e-10 && x[2].abs() < 1e-10);
        assert!((obj - 1.5).abs() < 1e-10);
    }

    #[test]
    fn degenerate_redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.bound(0, Some(0.0), None).bound(1, Some(0.0), None);
        lp.eq(vec![1.0, 1.0], 2.0).eq(vec![2.0, 2.0], 4.0);
        let (_, obj) = lp.solve().optimal().map(|(x, o)| (x.to_vec(), o)).unwrap();
        assert!((obj - 2.0).abs() < 1e-10);
    }
}
