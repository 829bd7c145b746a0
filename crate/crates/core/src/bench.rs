//! Test problems, the exact objective oracle and the replication harness.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acqopt::{self, FnObjective, OptBudget, SearchBox};
use crate::driver::{run, History, Method, RunConfig};
use crate::error::{Result, TvrError};
use crate::noise::{ChainTransform, DiscreteNoise, Marginal, NoiseSpec};
use crate::quadrature::GaussHermite;
use crate::types::{derive_rng, sub_seed, Bounds, ProblemSpec, Simulator};

/// Problem names accepted by [`BenchProblem::new`].
pub const PROBLEMS: [&str; 4] = ["motivating", "trig", "trid", "brake-like"];
/// Noise names accepted by [`bench_noise`].
pub const NOISES: [&str; 7] = [
    "motivating",
    "trig-1",
    "trig-2",
    "trid-beta",
    "trid-mixed",
    "trid-correlated",
    "brake-like",
];

fn bump(c: f64, x: f64) -> f64 {
    (-c * x * x).exp()
}

/// One-control, one-noise function with strong control-to-noise interaction.
pub fn motivating_f(x: f64, theta: f64) -> f64 {
    let t4 = theta.powi(4);
    4.0 / (t4 / 2.0 + 1.0) * bump(8.0, x + theta / 20.0 - 1.6)
        + 0.5 * bump(2.0, x + theta / 50.0 + 1.5)
        + 5.0 / 7.0 * bump(3.0, x)
        - 0.5 * bump(4.0, x + 0.75)
        - theta / 5.0
            * (0.5 * bump(8.0, x + 1.5)
                + 0.5 * bump(8.0, x)
                + bump(8.0, x - 0.75)
                + bump(8.0, x + 0.75)
                + bump(8.0, x - 1.6))
}

pub fn trig_f(x: f64, theta: f64) -> f64 {
    2.0 * (x / std::f64::consts::PI).cos() * (-4.0 * (x - theta).powi(2)).exp() - theta
}

/// Negated Trid function on the interleaving `(x1, t1, x2, t2, x3, t3)`.
pub fn trid_f(x: &[f64], theta: &[f64]) -> f64 {
    let tau: Vec<f64> = x.iter().zip(theta).flat_map(|(&a, &b)| [a, b]).collect();
    let sq: f64 = tau.iter().map(|t| (t - 1.0).powi(2)).sum();
    let cross: f64 = tau.windows(2).map(|w| w[0] * w[1]).sum();
    -sq - cross
}

/// Synthetic peak brake temperature (to be minimized).
///
/// Controls are conductivity (W/mK), density (kg/m^3) and specific heat (J/kgK);
/// noise is initial speed (m/s) and stopping time (s). The first term is the
/// surface rise of a semi-infinite solid under constant flux, the others
/// penalize material choices away from a speed- and time-dependent sweet spot.
pub fn brake_like_f(x: &[f64], theta: &[f64]) -> f64 {
    let (k, rho, c) = (x[0], x[1], x[2]);
    let (v, t) = (theta[0], theta[1].max(0.1));
    let energy = 125.0 * v * v;
    let area = 0.02;
    let rise = 2.0 * energy / (t * area) * t.sqrt() / (std::f64::consts::PI * k * rho * c).sqrt();
    let k_pen = 30.0 * ((k - 120.0 - 10.0 * (v - 27.8)) / 40.0).powi(2);
    let c_pen = 15.0 * ((c - 450.0 - 80.0 * (t - 2.75)) / 150.0).powi(2);
    let rho_pen = 10.0 * ((rho - 8200.0 + 150.0 * (v - 27.8)) / 1000.0).powi(2);
    20.0 + rise + k_pen + c_pen + rho_pen
}

/// The named benchmark noise distributions.
pub fn bench_noise(name: &str) -> Result<NoiseSpec> {
    let beta = |a: f64, b: f64| Marginal::ScaledBeta {
        a,
        b,
        scale: 72.0,
        shift: -36.0,
    };
    match name {
        "motivating" => {
            let support: Vec<Vec<f64>> = (-5..=5).map(|m| vec![f64::from(m)]).collect();
            let z = 41.0;
            let masses = (-5i32..=5).map(|m| f64::from(m.abs() + 1) / z).collect();
            NoiseSpec::discrete(support, masses)
        }
        "trig-1" => {
            let (support, masses) = trig1_raw();
            Ok(NoiseSpec::Discrete(DiscreteNoise::renormalized(support, masses)?))
        }
        "trig-2" => {
            let support = [15.0, 16.0, 17.0, 18.0, 19.0, 20.0]
                .iter()
                .map(|k| vec![k / 30.0])
                .collect();
            NoiseSpec::discrete(support, vec![0.0762, 0.2509, 0.1454, 0.2080, 0.1057, 0.2138])
        }
        "trid-beta" => NoiseSpec::independent(
            (1..=3)
                .map(|j| beta(3.0 * f64::from(j), 10.0 - 3.0 * f64::from(j)))
                .collect(),
        ),
        "trid-mixed" => NoiseSpec::independent(vec![
            beta(3.0, 7.0),
            Marginal::Normal { mean: 2.0, sd: 2.0 },
            Marginal::Exponential { rate: 1.0 / 6.0 },
        ]),
        "trid-correlated" => Ok(NoiseSpec::chain(ChainTransform::TridCorrelated)),
        "brake-like" => NoiseSpec::independent(vec![
            Marginal::Normal { mean: 27.8, sd: 1.0 },
            Marginal::Normal { mean: 2.75, sd: 0.5 },
        ]),
        _ => Err(TvrError::Unknown {
            kind: "noise",
            name: name.to_string(),
            expected: NOISES.join(", "),
        }),
    }
}

/// The printed distribution-1 masses, which sum to 1.0001.
pub fn trig1_raw() -> (Vec<Vec<f64>>, Vec<f64>) {
    let support = [-1.0, -2.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
        .iter()
        .map(|&m| vec![m])
        .collect();
    (support, vec![0.2088, 0.1612, 0.0792, 0.0811, 0.1137, 0.3561])
}

fn default_noise(problem: &str) -> Option<&'static str> {
    match problem {
        "motivating" => Some("motivating"),
        "trig" => Some("trig-1"),
        "trid" => Some("trid-beta"),
        "brake-like" => Some("brake-like"),
        _ => None,
    }
}

fn compatible(problem: &str, noise: &str) -> bool {
    match problem {
        "motivating" => noise == "motivating",
        "trig" => noise.starts_with("trig-"),
        "trid" => noise.starts_with("trid-"),
        "brake-like" => noise == "brake-like",
        _ => false,
    }
}

/// Oracle value with an error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub error: f64,
}

/// Reference optimum of the robust objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x: Vec<f64>,
    pub value: f64,
    pub error: f64,
}

/// A named test problem with its oracle.
#[derive(Clone)]
pub struct BenchProblem {
    pub name: String,
    pub noise_name: String,
    pub spec: ProblemSpec,
    /// Gauss-Hermite nodes per noise dimension.
    quad_nodes: usize,
    /// Remarks on how the problem deviates from a literal reading of its source.
    pub notes: Vec<String>,
    reference: Arc<OnceLock<Reference>>,
    grids: Arc<OnceLock<[Vec<(Vec<f64>, f64)>; 2]>>,
}

impl std::fmt::Debug for BenchProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchProblem")
            .field("name", &self.name)
            .field("noise", &self.noise_name)
            .finish()
    }
}

impl BenchProblem {
    /// `noise` defaults to the problem's usual distribution.
    pub fn new(problem: &str, noise: Option<&str>) -> Result<Self> {
        let default = default_noise(problem).ok_or_else(|| TvrError::Unknown {
            kind: "problem",
            name: problem.to_string(),
            expected: PROBLEMS.join(", "),
        })?;
        let noise_name = noise.unwrap_or(default);
        let noise_spec = bench_noise(noise_name)?;
        if !compatible(problem, noise_name) {
            return Err(TvrError::Config(format!(
                "noise '{noise_name}' does not fit problem '{problem}'"
            )));
        }
        let (bounds, sim, maximize): (Bounds, Simulator, bool) = match problem {
            "motivating" => (
                Bounds::cube(1, -2.0, 2.0)?,
                Arc::new(|x: &[f64], t: &[f64]| motivating_f(x[0], t[0])),
                true,
            ),
            "trig" => (
                Bounds::cube(1, -1.0, 1.0)?,
                Arc::new(|x: &[f64], t: &[f64]| trig_f(x[0], t[0])),
                true,
            ),
            "trid" => (Bounds::cube(3, -36.0, 36.0)?, Arc::new(trid_f), true),
            _ => (
                Bounds::new(vec![(50.0, 200.0), (7000.0, 9000.0), (300.0, 700.0)])?,
                Arc::new(brake_like_f),
                false,
            ),
        };
        let mut notes = Vec::new();
        if noise_name == "trig-1" {
            notes.push("distribution-1 masses printed with sum 1.0001; renormalized".to_string());
        }
        if problem == "brake-like" {
            notes.push("synthetic analytic stand-in for the finite-element brake study".to_string());
        }
        Ok(Self {
            name: problem.to_string(),
            noise_name: noise_name.to_string(),
            spec: ProblemSpec::new(bounds, noise_spec, sim, maximize),
            quad_nodes: 32,
            notes,
            reference: Arc::new(OnceLock::new()),
            grids: Arc::new(OnceLock::new()),
        })
    }

    /// Same problem with a different quadrature size (caches are not shared).
    pub fn with_quad_nodes(&self, nodes: usize) -> Self {
        Self {
            quad_nodes: nodes.max(1),
            reference: Arc::new(OnceLock::new()),
            grids: Arc::new(OnceLock::new()),
            ..self.clone()
        }
    }

    pub fn quad_nodes(&self) -> usize {
        self.quad_nodes
    }

    /// `problem/noise` label.
    pub fn label(&self) -> String {
        format!("{}/{}", self.name, self.noise_name)
    }

    /// `(theta, weight)` pairs for the full and half-size rules.
    fn grids(&self) -> &[Vec<(Vec<f64>, f64)>; 2] {
        self.grids.get_or_init(|| {
            let noise = &self.spec.noise;
            let grid = |n: usize| match noise {
                NoiseSpec::Discrete(dn) => dn.support().iter().cloned().zip(dn.masses().iter().copied()).collect(),
                _ => GaussHermite::new(n)
                    .tensor_grid(noise.dim())
                    .into_iter()
                    .map(|(z, w)| (noise.from_latent(&z).expect("latent maps are total"), w))
                    .collect(),
            };
            [grid(self.quad_nodes), grid((self.quad_nodes / 2).max(1))]
        })
    }

    fn expect_on(&self, x: &[f64], grid: &[(Vec<f64>, f64)]) -> f64 {
        grid.iter()
            .map(|(t, w)| w * self.spec.evaluate(x, t).expect("bench problems carry a simulator"))
            .sum()
    }

    /// Robust objective without the error estimate.
    pub fn oracle_value(&self, x: &[f64]) -> f64 {
        self.expect_on(x, &self.grids()[0])
    }

    /// Robust objective `E f(x, Theta)` in the problem's own sign.
    ///
    /// Discrete noise is summed exactly; continuous noise uses tensor
    /// Gauss-Hermite in the latent space, with the change from half as many
    /// nodes as error estimate.
    pub fn oracle_g(&self, x: &[f64]) -> OracleValue {
        let [full, half] = self.grids();
        let value = self.expect_on(x, full);
        let error = if self.spec.noise.is_discrete() {
            0.0
        } else {
            (value - self.expect_on(x, half)).abs()
        };
        OracleValue { value, error }
    }

    /// Plain Monte Carlo estimate of the robust objective and its standard error.
    pub fn oracle_mc(&self, x: &[f64], n: usize, rng: &mut crate::types::Rng) -> OracleValue {
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let t = self.spec.noise.sample_theta(rng);
                self.spec.evaluate(x, &t).expect("bench problems carry a simulator")
            })
            .collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        OracleValue {
            value: m,
            error: (var / n as f64).sqrt(),
        }
    }

    /// Best robust objective value, computed once and cached.
    ///
    /// One control dimension: a 10^4-point grid refined by golden section.
    /// Otherwise: 50 local ascents of the oracle from a Latin hypercube.
    pub fn reference(&self) -> &Reference {
        self.reference.get_or_init(|| self.compute_reference())
    }

    fn compute_reference(&self) -> Reference {
        let s = self.spec.sign();
        let bounds = &self.spec.bounds;
        let obj = |u: &[f64]| s * self.oracle_value(&bounds.from_unit(u));
        let u = if self.spec.d() == 1 {
            let n = 10_000;
            let grid = |i: usize| i as f64 / (n - 1) as f64;
            let best = (0..n)
                .max_by(|&a, &b| obj(&[grid(a)]).total_cmp(&obj(&[grid(b)])))
                .unwrap_or(0);
            let (mut lo, mut hi) = (grid(best.saturating_sub(1)), grid((best + 1).min(n - 1)));
            let r = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..60 {
                let a = hi - r * (hi - lo);
                let b = lo + r * (hi - lo);
                if obj(&[a]) >= obj(&[b]) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            let mid = 0.5 * (lo + hi);
            if obj(&[mid]) >= obj(&[grid(best)]) {
                vec![mid]
            } else {
                vec![grid(best)]
            }
        } else {
            let budget = OptBudget {
                restarts: 50,
                max_iters: 500,
                tol: 1e-12,
                ..OptBudget::default()
            };
            let mut rng = derive_rng(0x5eed, &[self.spec.d() as u64]);
            acqopt::maximize(&FnObjective(obj), &SearchBox::unit(self.spec.d()), &budget, &[], &mut rng)
                .expect("oracle is finite on the box")
                .point()
                .to_vec()
        };
        let x = bounds.from_unit(&u);
        let o = self.oracle_g(&x);
        Reference {
            x,
            value: o.value,
            error: o.error,
        }
    }

    /// Optimization gap `g(x*) - g(x)` (sign-adjusted so that it is
    /// nonnegative up to oracle error) and the oracle error at `x`.
    pub fn gap(&self, x: &[f64]) -> (f64, f64) {
        let r = self.reference();
        let o = self.oracle_g(x);
        (self.spec.sign() * (r.value - o.value), o.error + r.error)
    }
}

/// Budget of one replicated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub n_init: usize,
    /// Sequential evaluations after the design; a batch run uses
    /// `n_seq / batch_size` rounds.
    pub n_seq: usize,
    pub batch_size: usize,
}

impl Budgets {
    pub fn rounds(&self, method: Method) -> Result<usize> {
        if method != Method::Ktvr || self.batch_size == 1 {
            return Ok(self.n_seq);
        }
        if self.batch_size == 0 || self.n_seq % self.batch_size != 0 {
            return Err(TvrError::Config(format!(
                "n_seq {} is not a multiple of batch size {}",
                self.n_seq, self.batch_size
            )));
        }
        Ok(self.n_seq / self.batch_size)
    }
}

/// One row of the long-form summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub problem: String,
    pub method: String,
    pub trial: usize,
    pub iteration: usize,
    pub n_evals: usize,
    pub gap: f64,
    pub chosen_x: Vec<f64>,
    pub runtime_ms: Option<f64>,
}

/// A failed trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub problem: String,
    pub method: String,
    pub trial: usize,
    pub message: String,
}

/// Mean and 10th/90th percentile gap per evaluation count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub n_evals: usize,
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
    pub trials: usize,
}

/// Output of [`replicate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<TrialFailure>,
    /// Largest oracle error estimate met while computing gaps.
    pub max_oracle_error: f64,
    #[serde(skip)]
    pub histories: Vec<(String, usize, History)>,
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

const FIXED_COLUMNS: [&str; 6] = ["problem", "method", "trial", "iteration", "n_evals", "gap"];

impl SummaryTable {
    /// Per `(problem, method)` gap curves, keys in sorted order.
    pub fn curves(&self) -> BTreeMap<(String, String), Vec<CurvePoint>> {
        let mut groups: BTreeMap<(String, String), BTreeMap<(usize, usize), Vec<f64>>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.problem.clone(), r.method.clone()))
                .or_default()
                .entry((r.iteration, r.n_evals))
                .or_default()
                .push(r.gap);
        }
        groups
            .into_iter()
            .map(|(k, its)| {
                let pts = its
                    .into_iter()
                    .map(|((iteration, n_evals), g)| CurvePoint {
                        iteration,
                        n_evals,
                        mean: g.iter().sum::<f64>() / g.len() as f64,
                        q10: quantile7(&g, 0.1),
                        q90: quantile7(&g, 0.9),
                        trials: g.len(),
                    })
                    .collect();
                (k, pts)
            })
            .collect()
    }

    /// Mean gap at the last iteration of each `(problem, method)`.
    pub fn final_gaps(&self) -> BTreeMap<(String, String), f64> {
        self.curves()
            .into_iter()
            .filter_map(|(k, c)| c.last().map(|p| (k, p.mean)))
            .collect()
    }

    /// Final gap of every trial.
    pub fn final_gap_by_trial(&self, problem: &str, method: &str) -> Vec<f64> {
        let mut last: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.problem == problem && r.method == method) {
            let e = last.entry(r.trial).or_insert((r.iteration, r.gap));
            if r.iteration >= e.0 {
                *e = (r.iteration, r.gap);
            }
        }
        last.into_values().map(|(_, g)| g).collect()
    }

    fn width(&self) -> usize {
        self.rows.iter().map(|r| r.chosen_x.len()).max().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.width();
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((1..=d).map(|j| format!("chosen_x{j}")));
        header.push("runtime_ms".into());
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![
                r.problem.clone(),
                r.method.clone(),
                r.trial.to_string(),
                r.iteration.to_string(),
                r.n_evals.to_string(),
                r.gap.to_string(),
            ];
            row.extend((0..d).map(|j| r.chosen_x.get(j).map(|v| v.to_string()).unwrap_or_default()));
            row.push(r.runtime_ms.map(|v| v.to_string()).unwrap_or_default());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Parses a summary written by [`SummaryTable::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| TvrError::Config(format!("summary is missing column '{name}'")))
        };
        let idx: Vec<usize> = FIXED_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
        let xcols: Vec<usize> = (1..)
            .map_while(|j| header.iter().position(|h| h == format!("chosen_x{j}")))
            .collect();
        let rt = header.iter().position(|h| h == "runtime_ms");
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |c: &str, v: &str| TvrError::Config(format!("row {}: column '{c}' has bad value '{v}'", line + 2));
            let get = |k: usize| rec.get(idx[k]).unwrap_or("");
            let int = |k: usize| get(k).parse::<usize>().map_err(|_| bad(FIXED_COLUMNS[k], get(k)));
            let gap = get(5).parse::<f64>().map_err(|_| bad("gap", get(5)))?;
            let chosen_x = xcols
                .iter()
                .filter_map(|&c| rec.get(c).filter(|s| !s.is_empty()))
                .map(|s| s.parse::<f64>().map_err(|_| bad("chosen_x", s)))
                .collect::<Result<_>>()?;
            let runtime_ms = match rt.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
                Some(s) => Some(s.parse::<f64>().map_err(|_| bad("runtime_ms", s))?),
                None => None,
            };
            rows.push(SummaryRow {
                problem: get(0).to_string(),
                method: get(1).to_string(),
                trial: int(2)?,
                iteration: int(3)?,
                n_evals: int(4)?,
                gap,
                chosen_x,
                runtime_ms,
            });
        }
        if rows.is_empty() {
            return Err(TvrError::Config("summary has no rows".into()));
        }
        Ok(Self {
            rows,
            ..Self::default()
        })
    }
}

/// Gap rows for one run: one per acquisition round.
pub fn gap_rows(problem: &BenchProblem, method: &str, trial: usize, h: &History) -> (Vec<SummaryRow>, f64) {
    let mut rows = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut runtime: BTreeMap<usize, f64> = BTreeMap::new();
    for r in &h.records {
        if let Some(t) = r.runtime_ms {
            // every record of a round carries the round's time
            runtime.insert(r.iteration, t);
        }
    }
    for r in &h.records {
        if let Some(x) = &r.x_star {
            let (gap, err) = problem.gap(x);
            max_err = max_err.max(err);
            rows.push(SummaryRow {
                problem: problem.label(),
                method: method.to_string(),
                trial,
                iteration: r.iteration,
                n_evals: r.index + 1,
                gap,
                chosen_x: x.clone(),
                runtime_ms: runtime.get(&r.iteration).copied(),
            });
        }
    }
    (rows, max_err)
}

/// Runs every method on `n_trials` seeds derived from `seed0`.
///
/// Trial `t` uses the same seed (hence the same initial design) for every
/// method. Trials run on a pool of `jobs` threads (0 = all cores); results
/// are gathered in a fixed order, so the table does not depend on scheduling.
pub fn replicate(
    problem: &BenchProblem,
    methods: &[Method],
    n_trials: usize,
    budgets: &Budgets,
    seed0: u64,
    config: &RunConfig,
    jobs: usize,
) -> Result<SummaryTable> {
    if n_trials == 0 {
        return Err(TvrError::Config("n_trials must be at least 1".into()));
    }
    for &m in methods {
        budgets.rounds(m)?;
    }
    let mut cfg = config.clone();
    cfg.batch_size = budgets.batch_size.max(1);
    problem.reference();
    let tasks: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..n_trials).map(move |t| (m, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| TvrError::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(m, t)| {
                let rounds = budgets.rounds(m).expect("checked above");
                let seed = sub_seed(seed0, t as u64);
                (m, t, run(&problem.spec, m, budgets.n_init, rounds, seed, &cfg))
            })
            .collect()
    });
    let mut table = SummaryTable::default();
    for (m, t, res) in results {
        match res {
            Ok(h) => {
                let (rows, err) = gap_rows(problem, m.name(), t, &h);
                table.max_oracle_error = table.max_oracle_error.max(err);
                table.rows.extend(rows);
                table.histories.push((m.name().to_string(), t, h));
            }
            Err(e) => {
                warn!("{} {m} trial {t} failed: {e}", problem.label());
                table.failures.push(TrialFailure {
                    problem: problem.label(),
                    method: m.name().to_string(),
                    trial: t,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(table)
}
