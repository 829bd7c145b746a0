//! Deterministic multi-start maximization over a box.
//!
//! Each start runs a projected quasi-Newton (BFGS) ascent with an Armijo
//! backtracking line search. Gradients come from the objective when it can
//! supply them, otherwise from central differences.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvrError};
use crate::types::Rng;

/// Central-difference step, in optimizer (standardized) coordinates.
pub const FD_STEP: f64 = 1e-6;

/// Something to maximize.
pub trait Objective {
    fn value(&self, p: &[f64]) -> f64;

    /// Value and gradient. Defaults to central finite differences.
    fn value_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        (self.value(p), fd_gradient(|q| self.value(q), p, FD_STEP))
    }
}

/// Objective from a value-only closure.
pub struct FnObjective<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Objective for FnObjective<F> {
    fn value(&self, p: &[f64]) -> f64 {
        (self.0)(p)
    }
}

/// Objective with an analytic gradient.
pub struct GradObjective<F>(pub F);

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for GradObjective<F> {
    fn value(&self, p: &[f64]) -> f64 {
        (self.0)(p).0
    }

    fn value_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        (self.0)(p)
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, p: &[f64], step: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            q[i] = p[i] + step;
            let up = f(&q);
            q[i] = p[i] - step;
            let down = f(&q);
            q[i] = p[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Search budget for acquisition maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptBudget {
    pub restarts: usize,
    pub max_iters: usize,
    /// Latent noise coordinates are searched in `[-latent_box, latent_box]`.
    pub latent_box: f64,
    pub tol: f64,
    /// Size of the Latin-hypercube screen, per restart, used to place starts.
    pub screen: usize,
}

impl Default for OptBudget {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iters: 200,
            latent_box: 3.0,
            tol: 1e-8,
            screen: 20,
        }
    }
}

impl OptBudget {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || !(self.latent_box > 0.0) || self.max_iters == 0 {
            return Err(TvrError::Config(format!("invalid optimizer budget {self:?}")));
        }
        Ok(())
    }
}

/// Box `[lo, hi]` in optimizer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn project(&self, p: &mut [f64]) {
        for ((v, &l), &h) in p.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(l, h);
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .all(|((&v, &l), &h)| v >= l && v <= h)
    }

    /// Random Latin hypercube of `n` points in the box.
    pub fn latin_hypercube(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        let unit = latin_hypercube_unit(n, self.dim(), rng);
        unit.into_iter()
            .map(|u| {
                u.iter()
                    .zip(&self.lo)
                    .zip(&self.hi)
                    .map(|((&t, &l), &h)| l + t * (h - l))
                    .collect()
            })
            .collect()
    }
}

/// `n` points on `[0,1]^dim`, one per stratum in every column, jittered within strata.
pub fn latin_hypercube_unit(n: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dim]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..dim {
        perm.shuffle(rng);
        for (i, row) in out.iter_mut().enumerate() {
            let jitter: f64 = rng.random();
            row[j] = (perm[i] as f64 + jitter) / n as f64;
        }
    }
    out
}

/// Outcome of one local ascent.
#[derive(Clone, Debug)]
pub struct LocalResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub start_value: f64,
    /// Objective value after every accepted step (starting value first).
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected BFGS ascent from `start`.
pub fn local_ascent<O: Objective + ?Sized>(
    obj: &O,
    bx: &SearchBox,
    start: &[f64],
    max_iters: usize,
    tol: f64,
) -> LocalResult {
    let n = bx.dim();
    let widths: Vec<f64> = bx.lo.iter().zip(&bx.hi).map(|(l, h)| h - l).collect();
    let mut x = start.to_vec();
    bx.project(&mut x);
    let (mut f, mut g) = obj.value_grad(&x);
    let start_value = f;
    let mut trace = vec![f];
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return LocalResult {
            point: x,
            value: f,
            start_value,
            trace,
        };
    }
    let identity = |n: usize| {
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        h
    };
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut stalls = 0;

    for _ in 0..max_iters {
        let at_bound = |i: usize, gi: f64| {
            (x[i] <= bx.lo[i] && gi < 0.0) || (x[i] >= bx.hi[i] && gi > 0.0)
        };
        let pg = (0..n)
            .filter(|&i| !at_bound(i, g[i]))
            .map(|i| (g[i] * widths[i]).abs())
            .fold(0.0, f64::max);
        if pg < tol {
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut d: Vec<f64> = (0..n).map(|i| dot(&hinv[i], &g)).collect();
            for i in 0..n {
                if at_bound(i, g[i]) {
                    d[i] = 0.0;
                }
            }
            if dot(&d, &g) <= 0.0 {
                hinv = identity(n);
                fresh = true;
                d = (0..n).map(|i| if at_bound(i, g[i]) { 0.0 } else { g[i] }).collect();
            }
            if fresh {
                // first step moves at most a quarter of the box
                let rel = (0..n).map(|i| d[i].abs() / widths[i]).fold(0.0, f64::max);
                if rel > 0.25 {
                    for v in d.iter_mut() {
                        *v *= 0.25 / rel;
                    }
                }
            }
            let mut t = 1.0;
            for _ in 0..50 {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                bx.project(&mut xn);
                let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let moved = (0..n).map(|i| step[i].abs() / widths[i]).fold(0.0, f64::max);
                if moved < 1e-15 {
                    break;
                }
                let fnew = obj.value(&xn);
                if fnew.is_finite() && fnew >= f + 1e-4 * dot(&g, &step) && fnew >= f {
                    accepted = Some((xn, fnew, step));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || fresh || attempt == 1 {
                break;
            }
            hinv = identity(n);
            fresh = true;
        }
        let Some((xn, fnew, s)) = accepted else {
            break;
        };
        let (fv, gn) = obj.value_grad(&xn);
        let fnew = if fv.is_finite() { fv } else { fnew };
        if gn.iter().any(|v| !v.is_finite()) {
            x = xn;
            f = fnew;
            trace.push(f);
            break;
        }
        // curvature pair for minimizing -f
        let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if fresh {
                let yy = dot(&y, &y);
                let scale = sy / yy;
                for (i, row) in hinv.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if i == j { scale } else { 0.0 };
                    }
                }
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        let df = fnew - f;
        x = xn;
        f = fnew;
        g = gn;
        trace.push(f);
        if df.abs() <= 1e-14 * (1.0 + f.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    LocalResult {
        point: x,
        value: f,
        start_value,
        trace,
    }
}

/// Result of a multi-start search: all local optima, best first.
#[derive(Clone, Debug)]
pub struct OptResult {
    pub ranked: Vec<LocalResult>,
}

impl OptResult {
    pub fn best(&self) -> &LocalResult {
        &self.ranked[0]
    }

    pub fn point(&self) -> &[f64] {
        &self.ranked[0].point
    }

    pub fn value(&self) -> f64 {
        self.ranked[0].value
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Orders results by decreasing value, then lexicographic point order.
pub fn rank_results(results: &mut [LocalResult]) {
    results.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then_with(|| lexicographic(&a.point, &b.point))
    });
}

/// Start points: the given seeds first, then the best distinct points of a
/// Latin-hypercube screen until `restarts` starts are collected.
pub fn choose_starts<O: Objective + ?Sized>(
    obj: &O,
    bx: &SearchBox,
    budget: &OptBudget,
    seeds: &[Vec<f64>],
    rng: &mut Rng,
) -> Vec<Vec<f64>> {
    let mut starts: Vec<Vec<f64>> = seeds
        .iter()
        .take(budget.restarts)
        .map(|s| {
            let mut p = s.clone();
            bx.project(&mut p);
            p
        })
        .collect();
    let remaining = budget.restarts.saturating_sub(starts.len());
    if remaining == 0 {
        return starts;
    }
    let n_screen = (budget.screen.max(1) * budget.restarts).max(remaining);
    let mut screen: Vec<(f64, Vec<f64>)> = bx
        .latin_hypercube(n_screen, rng)
        .into_iter()
        .map(|p| {
            let v = obj.value(&p);
            (if v.is_finite() { v } else { f64::NEG_INFINITY }, p)
        })
        .collect();
    screen.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| lexicographic(&a.1, &b.1)));
    starts.extend(screen.into_iter().take(remaining).map(|(_, p)| p));
    starts
}

/// Multi-start maximization of `obj` over `bx`.
pub fn maximize<O: Objective + ?Sized>(
    obj: &O,
    bx: &SearchBox,
    budget: &OptBudget,
    seeds: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<OptResult> {
    let starts = choose_starts(obj, bx, budget, seeds, rng);
    maximize_from(obj, bx, budget, &starts)
}

/// Local ascents from explicit starts.
pub fn maximize_from<O: Objective + ?Sized>(
    obj: &O,
    bx: &SearchBox,
    budget: &OptBudget,
    starts: &[Vec<f64>],
) -> Result<OptResult> {
    let mut ranked: Vec<LocalResult> = starts
        .iter()
        .map(|s| local_ascent(obj, bx, s, budget.max_iters, budget.tol))
        .filter(|r| r.value.is_finite())
        .collect();
    if ranked.is_empty() {
        return Err(TvrError::Optimizer(
            "no start produced a finite objective value".into(),
        ));
    }
    rank_results(&mut ranked);
    Ok(OptResult { ranked })
}

/// The `k`-fold product of `point_box`, for stacked batch vectors.
pub fn stacked_box(point_box: &SearchBox, k: usize) -> SearchBox {
    let lo = (0..k).flat_map(|_| point_box.lo.iter().copied()).collect();
    let hi = (0..k).flat_map(|_| point_box.hi.iter().copied()).collect();
    SearchBox::new(lo, hi)
}

/// Maximizes an objective over `k` stacked points of `point_box`. `greedy`
/// (a stacked vector) is the first start; the rest come from the screen.
pub fn maximize_batch<O: Objective + ?Sized>(
    obj: &O,
    k: usize,
    point_box: &SearchBox,
    budget: &OptBudget,
    greedy: Option<Vec<f64>>,
    rng: &mut Rng,
) -> Result<OptResult> {
    if k < 1 {
        return Err(TvrError::Config("batch size must be at least 1".into()));
    }
    let bx = stacked_box(point_box, k);
    let seeds: Vec<Vec<f64>> = greedy.into_iter().collect();
    maximize(obj, &bx, budget, &seeds, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::seeded_rng;

    #[test]
    fn concave_quadratic_interior() {
        let c = [0.3, -0.7, 1.2];
        let obj = GradObjective(|p: &[f64]| {
            let v = -p.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let g = p.iter().zip(&c).map(|(a, b)| -2.0 * (a - b)).collect();
            (v, g)
        });
        let bx = SearchBox::new(vec![-2.0; 3], vec![2.0; 3]);
        let r = maximize(&obj, &bx, &OptBudget::default(), &[], &mut seeded_rng(1)).unwrap();
        for (a, b) in r.point().iter().zip(&c) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn concave_quadratic_finite_differences() {
        let c = [0.25, 0.8];
        let obj = FnObjective(|p: &[f64]| -p.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
        let r = maximize(&obj, &SearchBox::unit(2), &OptBudget::default(), &[], &mut seeded_rng(2))
            .unwrap();
        for (a, b) in r.point().iter().zip(&c) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn linear_objective_goes_to_corner() {
        let obj = FnObjective(|p: &[f64]| 2.0 * p[0] - p[1]);
        let bx = SearchBox::new(vec![-1.0, -3.0], vec![4.0, 5.0]);
        let r = maximize(&obj, &bx, &OptBudget::default(), &[], &mut seeded_rng(3)).unwrap();
        assert!((r.point()[0] - 4.0).abs() < 1e-6);
        assert!((r.point()[1] + 3.0).abs() < 1e-6);
    }

    #[test]
    fn two_bumps_global_found() {
        // small bump at 0.2, taller and narrower bump at 0.8
        let f = |x: f64| 0.6 * (-(x - 0.2).powi(2) / 0.02).exp() + (-(x - 0.8).powi(2) / 0.005).exp();
        let grid_best = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .max_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        let obj = FnObjective(|p: &[f64]| f(p[0]));
        let mut hits = 0;
        for seed in 0..50 {
            let r = maximize(&obj, &SearchBox::unit(1), &OptBudget::default(), &[], &mut seeded_rng(seed))
                .unwrap();
            if (r.point()[0] - grid_best).abs() < 1e-3 {
                hits += 1;
            }
        }
        assert!(hits >= 45, "hits={hits}");
    }

    #[test]
    fn result_dominates_starts_and_is_feasible() {
        let obj = FnObjective(|p: &[f64]| (3.0 * p[0]).sin() * (2.0 * p[1]).cos() + 0.1 * p[0]);
        let bx = SearchBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]);
        let starts = bx.latin_hypercube(5, &mut seeded_rng(4));
        let r = maximize_from(&obj, &bx, &OptBudget::default(), &starts).unwrap();
        for lr in &r.ranked {
            assert!(lr.value >= lr.start_value);
            assert!(bx.contains(&lr.point));
            assert!(lr.trace.windows(2).all(|w| w[1] >= w[0]));
        }
        let best_start = starts.iter().map(|s| obj.value(s)).fold(f64::NEG_INFINITY, f64::max);
        assert!(r.value() >= best_start);
    }

    #[test]
    fn deterministic_under_seed() {
        let obj = FnObjective(|p: &[f64]| (5.0 * p[0]).sin() + (7.0 * p[1]).cos());
        let a = maximize(&obj, &SearchBox::unit(2), &OptBudget::default(), &[], &mut seeded_rng(9)).unwrap();
        let b = maximize(&obj, &SearchBox::unit(2), &OptBudget::default(), &[], &mut seeded_rng(9)).unwrap();
        assert_eq!(a.point(), b.point());
    }

    #[test]
    fn all_non_finite_is_an_error() {
        let obj = FnObjective(|_: &[f64]| f64::NAN);
        assert!(maximize(&obj, &SearchBox::unit(1), &OptBudget::default(), &[], &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn lhs_stratification() {
        let pts = latin_hypercube_unit(10, 3, &mut seeded_rng(6));
        for j in 0..3 {
            let mut strata: Vec<usize> = pts.iter().map(|p| (p[j] * 10.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batch_of_separable_objective_finds_both_maximizers() {
        let f = |x: f64| (-(x - 0.3).powi(2) / 0.01).exp();
        let g = |x: f64| (-(x - 0.7).powi(2) / 0.02).exp();
        let obj = FnObjective(|p: &[f64]| f(p[0]) + g(p[1]));
        let budget = OptBudget::default();
        let r = maximize_batch(&obj, 2, &SearchBox::unit(1), &budget, Some(vec![0.35, 0.65]), &mut seeded_rng(8)).unwrap();
        assert!((r.point()[0] - 0.3).abs() < 1e-3 && (r.point()[1] - 0.7).abs() < 1e-3);
        assert!(r.value() >= obj.value(&[0.35, 0.65]));
    }
}
