//! The robust optimization loop: fit, acquire, evaluate, update.
//!
//! [`RobustOptimizer`] is an ask/tell state machine; [`run_sequential`] and
//! [`run_batch`] drive it against an attached simulator. Every random choice
//! draws from a stream keyed by `(seed, data size, purpose)`, so asking is
//! side-effect free and an external ask/tell loop reproduces the built-in runs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::acqopt::{self, fd_gradient, maximize_batch, Objective, OptBudget, SearchBox, FD_STEP};
use crate::acquisition::{expected_improvement, ktvr_model, tvr_model, Incumbent, KgContext};
use crate::design::initial_design;
use crate::error::{Result, TvrError};
use crate::kernel::GpHyperParams;
use crate::surrogate::{fit_detailed, FitConfig, FittedGp, GpSpace, NoiseMode};
use crate::types::{derive_rng, ControlPoint, Dataset, NoisePoint, ProblemSpec, Rng};

/// Acquisition strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Tvr,
    Ktvr,
    Random,
    TwoStage,
    Vr,
    Kg,
    Naive,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Tvr,
        Method::Ktvr,
        Method::Random,
        Method::TwoStage,
        Method::Vr,
        Method::Kg,
        Method::Naive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tvr => "tvr",
            Method::Ktvr => "ktvr",
            Method::Random => "random",
            Method::TwoStage => "two-stage",
            Method::Vr => "vr",
            Method::Kg => "kg",
            Method::Naive => "naive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = TvrError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| TvrError::Unknown {
                kind: "method",
                name: s.to_string(),
                expected: Method::ALL.map(|m| m.name()).join(", "),
            })
    }
}

/// Tunables of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub opt: OptBudget,
    pub fit: FitConfig,
    /// Also start the hyperparameter search from the previous fit.
    pub warm_start: bool,
    pub kg_samples: usize,
    pub kg_inner: usize,
    pub batch_size: usize,
    /// Write wall-clock times into the history (makes outputs run-dependent).
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            opt: OptBudget::default(),
            fit: FitConfig::default(),
            warm_start: true,
            kg_samples: 64,
            kg_inner: 100,
            batch_size: 1,
            record_timing: false,
        }
    }
}

/// A point proposed by [`RobustOptimizer::ask`].
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub x: ControlPoint,
    pub noise: NoisePoint,
    /// Acquisition value in natural units, when the method has one.
    pub acq_value: Option<f64>,
}

/// One evaluated point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Zero-based evaluation index.
    pub index: usize,
    /// Acquisition round; 0 is the initial design.
    pub iteration: usize,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub z: Option<Vec<f64>>,
    /// Raw simulator output.
    pub y: f64,
    pub hp_digest: Option<String>,
    /// Predicted solution after this point's group was incorporated.
    pub x_star: Option<Vec<f64>>,
    /// Posterior mean of the objective at `x_star`, in the problem's sign.
    pub mu_star: Option<f64>,
    pub acq_value: Option<f64>,
    pub runtime_ms: Option<f64>,
}

/// A proposal whose evaluation failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub message: String,
}

/// Everything a run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub method: Method,
    pub seed: u64,
    pub d: usize,
    pub q: usize,
    pub records: Vec<Record>,
    pub failures: Vec<Failure>,
}

const TAG_DESIGN: u64 = 1;
const TAG_FIT: u64 = 2;
const TAG_SOLVE: u64 = 3;
const TAG_ASK: u64 = 4;

/// FNV-1a digest, used for short fingerprints of hyperparameters and configs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn hp_digest(hp: &GpHyperParams, noise_var: f64) -> String {
    let mut bytes = Vec::new();
    for v in [hp.mu, hp.sigma2, hp.nugget, noise_var]
        .iter()
        .chain(&hp.ell)
        .chain(&hp.gamma)
    {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    format!("{:016x}", fnv1a(&bytes))
}

/// Value and optional gradient at a joint model point.
type JointFn<'a> = dyn Fn(&[f64], bool) -> (f64, Option<Vec<f64>>) + 'a;

/// Objective over the free coordinates, with fixed trailing coordinates appended.
struct Restricted<'a> {
    f: &'a JointFn<'a>,
    tail: &'a [f64],
}

impl Restricted<'_> {
    fn full(&self, p: &[f64]) -> Vec<f64> {
        let mut v = p.to_vec();
        v.extend_from_slice(self.tail);
        v
    }
}

impl Objective for Restricted<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        (self.f)(&self.full(p), false).0
    }

    fn value_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        match (self.f)(&self.full(p), true) {
            (v, Some(g)) => (v, g[..p.len()].to_vec()),
            (v, None) => (v, fd_gradient(|pp| self.value(pp), p, FD_STEP)),
        }
    }
}

/// A candidate in model coordinates.
#[derive(Clone, Debug)]
struct Cand {
    p: Vec<f64>,
    support: Option<usize>,
    value: f64,
}

/// Ask/tell state for one optimization run.
pub struct RobustOptimizer {
    spec: ProblemSpec,
    method: Method,
    config: RunConfig,
    seed: u64,
    space: GpSpace,
    data: Dataset,
    gp: Option<FittedGp>,
    solution: Option<(Vec<f64>, f64)>,
    records: Vec<Record>,
    failures: Vec<Failure>,
    rounds: usize,
}

impl RobustOptimizer {
    pub fn new(spec: ProblemSpec, method: Method, config: RunConfig, seed: u64) -> Result<Self> {
        config.opt.validate()?;
        if config.batch_size == 0 {
            return Err(TvrError::Config("batch_size must be at least 1".into()));
        }
        let space = if method == Method::Naive {
            GpSpace::control_only(&spec.bounds)
        } else {
            GpSpace::new(&spec.bounds, &spec.noise)
        };
        Ok(Self {
            spec,
            method,
            config,
            seed,
            space,
            data: Dataset::new(),
            gp: None,
            solution: None,
            records: Vec::new(),
            failures: Vec::new(),
            rounds: 0,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn gp(&self) -> Option<&FittedGp> {
        self.gp.as_ref()
    }

    /// Current predicted solution and its posterior mean (problem sign).
    pub fn solution(&self) -> Option<(Vec<f64>, f64)> {
        self.solution
            .as_ref()
            .map(|(x, m)| (x.clone(), self.spec.sign() * m))
    }

    fn batch_size(&self) -> usize {
        if self.method == Method::Ktvr {
            self.config.batch_size
        } else {
            1
        }
    }

    /// The shared initial design for this seed (identical across methods).
    pub fn initial_design(&self, n: usize) -> Result<Vec<(ControlPoint, NoisePoint)>> {
        let mut rng = derive_rng(self.seed, &[0, TAG_DESIGN]);
        initial_design(n, &self.spec.bounds, &self.spec.noise, &mut rng)
    }

    fn validate_point(&self, x: &ControlPoint, noise: &NoisePoint) -> Result<NoisePoint> {
        if x.0.len() != self.spec.d() {
            return Err(TvrError::DimensionMismatch {
                expected: self.spec.d(),
                got: x.0.len(),
            });
        }
        if noise.theta.len() != self.spec.q() {
            return Err(TvrError::DimensionMismatch {
                expected: self.spec.q(),
                got: noise.theta.len(),
            });
        }
        if !self.spec.bounds.contains(&x.0) {
            return Err(TvrError::Config(format!("point {:?} lies outside the bounds", x.0)));
        }
        if self.spec.noise.is_discrete() {
            Ok(NoisePoint::discrete(noise.theta.clone()))
        } else {
            let z = match &noise.z {
                Some(z) if z.len() == self.spec.q() => z.clone(),
                Some(z) => {
                    return Err(TvrError::DimensionMismatch {
                        expected: self.spec.q(),
                        got: z.len(),
                    })
                }
                None => self.spec.noise.to_latent(&noise.theta)?,
            };
            Ok(NoisePoint::continuous(noise.theta.clone(), z))
        }
    }

    /// Appends one evaluation and refits.
    pub fn tell(&mut self, x: ControlPoint, noise: NoisePoint, y: f64) -> Result<()> {
        self.tell_many(vec![(x, noise, y)])
    }

    /// Appends a group of evaluations and refits once.
    pub fn tell_many(&mut self, points: Vec<(ControlPoint, NoisePoint, f64)>) -> Result<()> {
        let round = if self.data.is_empty() { 0 } else { self.rounds + 1 };
        self.commit(points.into_iter().map(|(x, n, y)| (x, n, y, None)).collect(), round, None)
    }

    fn commit(
        &mut self,
        points: Vec<(ControlPoint, NoisePoint, f64, Option<f64>)>,
        iteration: usize,
        runtime_ms: Option<f64>,
    ) -> Result<()> {
        let mut checked = Vec::with_capacity(points.len());
        for (x, noise, y, acq) in points {
            let noise = self.validate_point(&x, &noise)?;
            if !y.is_finite() {
                return Err(TvrError::NonFinite(format!("output {y} at {:?}", x.0)));
            }
            checked.push((x, noise, y, acq));
        }
        for (x, noise, y, acq) in checked {
            self.data.push(x.clone(), noise.clone(), self.spec.sign() * y)?;
            self.records.push(Record {
                index: self.records.len(),
                iteration,
                x: x.0,
                theta: noise.theta,
                z: noise.z,
                y,
                hp_digest: None,
                x_star: None,
                mu_star: None,
                acq_value: acq,
                runtime_ms,
            });
        }
        if iteration > 0 {
            self.rounds = iteration;
        }
        self.refit()
    }

    fn refit(&mut self) -> Result<()> {
        let n = self.data.len();
        if n < 2 {
            return Ok(());
        }
        let mut cfg = self.config.fit.clone();
        if self.method == Method::Naive {
            cfg.learn_noise = true;
        }
        let warm = if self.config.warm_start {
            self.gp.as_ref().map(|g| g.hp().clone())
        } else {
            None
        };
        let mut rng = derive_rng(self.seed, &[n as u64, TAG_FIT]);
        let (gp, _) = fit_detailed(&self.data, &self.space, &cfg, warm.as_ref(), &mut rng)?;
        let mut rng = derive_rng(self.seed, &[n as u64, TAG_SOLVE]);
        let (u, m) = gp.argmax_mean_model(&self.config.opt, &mut rng)?;
        let out = gp.output_scale();
        let x = self.space.decode_x(&u);
        let mean = out.shift + out.scale * m;
        if let Some(last) = self.records.last_mut() {
            last.hp_digest = Some(hp_digest(gp.hp(), gp.noise_var()));
            last.x_star = Some(x.clone());
            last.mu_star = Some(self.spec.sign() * mean);
        }
        self.solution = Some((x, mean));
        self.gp = Some(gp);
        Ok(())
    }

    /// The next point(s) to evaluate. Does not change the state.
    pub fn ask(&self) -> Result<Vec<Proposal>> {
        Ok(self.ask_ranked()?.swap_remove(0))
    }

    /// Alternative proposals, best first, used to recover from failed evaluations.
    pub fn ask_ranked(&self) -> Result<Vec<Vec<Proposal>>> {
        let n = self.data.len();
        let mut rng = derive_rng(self.seed, &[n as u64, TAG_ASK]);
        if self.method == Method::Random {
            return Ok(vec![vec![self.random_proposal(&mut rng)]]);
        }
        let gp = self
            .gp
            .as_ref()
            .ok_or(TvrError::NotEnoughData { need: 2, have: n })?;
        let (x_star, _) = self.solution.as_ref().expect("solution accompanies the fit");
        let u_star = self.space.encode_x(x_star);
        let k = self.batch_size();
        let ranked = match self.method {
            Method::Tvr => self.propose_tvr(gp, &u_star, &mut rng)?,
            Method::Ktvr if k == 1 => self.propose_tvr(gp, &u_star, &mut rng)?,
            Method::Ktvr => self.propose_ktvr(gp, &u_star, k, &mut rng)?,
            Method::TwoStage => self.propose_two_stage(gp, &u_star, &mut rng)?,
            Method::Vr => self.propose_vr(gp, &u_star, &mut rng)?,
            Method::Kg => self.propose_kg(gp, &u_star, &mut rng)?,
            Method::Naive => self.propose_naive(gp, &u_star, &mut rng)?,
            Method::Random => unreachable!(),
        };
        if ranked.is_empty() {
            return Err(TvrError::Optimizer("no candidate found".into()));
        }
        Ok(ranked)
    }

    fn random_proposal(&self, rng: &mut Rng) -> Proposal {
        let u: Vec<f64> = (0..self.spec.d()).map(|_| rng.random::<f64>()).collect();
        let noise = self.spec.noise.sample(rng, 1).remove(0);
        Proposal {
            x: ControlPoint(self.spec.bounds.from_unit(&u)),
            noise,
            acq_value: None,
        }
    }

    fn to_proposal(&self, c: &Cand, acq_scale: f64, rng: &mut Rng) -> Result<Proposal> {
        let d = self.space.d();
        let x = ControlPoint(self.spec.bounds.from_unit(&c.p[..d]).iter().zip(self.spec.bounds.intervals())
            .map(|(v, &(lo, hi))| v.clamp(lo, hi))
            .collect());
        let noise = match self.space.mode() {
            NoiseMode::Continuous => self.spec.noise.point_from_latent(&c.p[d..])?,
            NoiseMode::Discrete => {
                let dn = self.spec.noise.as_discrete().expect("discrete mode");
                NoisePoint::discrete(dn.support()[c.support.expect("support index")].clone())
            }
            NoiseMode::Absent => self.spec.noise.sample(rng, 1).remove(0),
        };
        Ok(Proposal {
            x,
            noise,
            acq_value: Some(acq_scale * c.value),
        })
    }

    fn joint_box(&self) -> SearchBox {
        let d = self.space.d();
        let mut lo = vec![0.0; d];
        let mut hi = vec![1.0; d];
        if self.space.mode() == NoiseMode::Continuous {
            let l = self.config.opt.latent_box;
            lo.extend(std::iter::repeat_n(-l, self.space.q()));
            hi.extend(std::iter::repeat_n(l, self.space.q()));
        }
        SearchBox::new(lo, hi)
    }

    /// Maximizes `f` over joint model points: continuous noise searches the
    /// latent box, discrete noise enumerates the support.
    fn search(&self, f: &JointFn<'_>, seeds_u: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<Cand>> {
        let d = self.space.d();
        let budget = &self.config.opt;
        let mut out = Vec::new();
        match self.space.mode() {
            NoiseMode::Continuous | NoiseMode::Absent => {
                let q = if self.space.mode() == NoiseMode::Continuous { self.space.q() } else { 0 };
                // Near convergence TVR is a ridge along u = u*, which random
                // starts rarely reach, so each seed control gets the best noise
                // coordinate of a small screen (z = 0 included) on its slice.
                let slice = SearchBox::new(vec![-budget.latent_box; q], vec![budget.latent_box; q]);
                let seeds: Vec<Vec<f64>> = seeds_u
                    .iter()
                    .map(|u| {
                        let mut zs = vec![vec![0.0; q]];
                        if q > 0 {
                            zs.extend(slice.latin_hypercube(budget.screen.max(1), rng));
                        }
                        let mut best = (f64::NEG_INFINITY, u.clone());
                        for z in zs {
                            let mut p = u.clone();
                            p.extend(z);
                            let v = f(&p, false).0;
                            if v > best.0 {
                                best = (v, p);
                            }
                        }
                        if best.1.len() < d + q {
                            best.1.extend(std::iter::repeat_n(0.0, q));
                        }
                        best.1
                    })
                    .collect();
                let obj = Restricted { f, tail: &[] };
                let r = acqopt::maximize(&obj, &self.joint_box(), budget, &seeds, rng)?;
                out.extend(r.ranked.into_iter().map(|lr| Cand {
                    p: lr.point,
                    support: None,
                    value: lr.value,
                }));
            }
            NoiseMode::Discrete => {
                let support = self.space.support_model().expect("discrete support");
                for (idx, s) in support.iter().enumerate() {
                    let obj = Restricted { f, tail: s };
                    if let Ok(r) = acqopt::maximize(&obj, &SearchBox::unit(d), budget, seeds_u, rng) {
                        out.extend(r.ranked.into_iter().map(|lr| {
                            let mut p = lr.point;
                            p.extend_from_slice(s);
                            Cand {
                                p,
                                support: Some(idx),
                                value: lr.value,
                            }
                        }));
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            b.value.total_cmp(&a.value).then_with(|| {
                a.p.iter()
                    .zip(&b.p)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        if out.is_empty() {
            return Err(TvrError::Optimizer("acquisition search produced no finite value".into()));
        }
        Ok(out)
    }

    fn singles(&self, cands: Vec<Cand>, scale: f64, rng: &mut Rng) -> Result<Vec<Vec<Proposal>>> {
        cands
            .iter()
            .map(|c| Ok(vec![self.to_proposal(c, scale, rng)?]))
            .collect()
    }

    fn propose_tvr(&self, gp: &FittedGp, u_star: &[f64], rng: &mut Rng) -> Result<Vec<Vec<Proposal>>> {
        let inc = Incumbent::new(gp, u_star);
        let f = |p: &[f64], g: bool| {
            let e = tvr_model(gp, &inc, p, g);
            (e.value, e.grad)
        };
        let cands = self.search(&f, &[u_star.to_vec()], rng)?;
        self.singles(cands, gp.output_scale().scale.powi(2), rng)
    }

    fn propose_ktvr(&self, gp: &FittedGp, u_star: &[f64], k: usize, rng: &mut Rng) -> Result<Vec<Vec<Proposal>>> {
        let inc = Incumbent::new(gp, u_star);
        let d = self.space.d();
        let batch_value = |pts: &[Vec<f64>]| ktvr_model(gp, &inc, pts).unwrap_or(f64::NEG_INFINITY);

        // greedy initialization
        let f1 = |p: &[f64], g: bool| {
            let e = tvr_model(gp, &inc, p, g);
            (e.value, e.grad)
        };
        let mut chosen = vec![self.search(&f1, &[u_star.to_vec()], rng)?.swap_remove(0)];
        while chosen.len() < k {
            let prefix: Vec<Vec<f64>> = chosen.iter().map(|c| c.p.clone()).collect();
            let f = |p: &[f64], _g: bool| {
                let mut pts = prefix.clone();
                pts.push(p.to_vec());
                (batch_value(&pts), None)
            };
            let seeds: Vec<Vec<f64>> = vec![u_star.to_vec()];
            chosen.push(self.search(&f, &seeds, rng)?.swap_remove(0));
        }

        let continuous = self.space.mode() == NoiseMode::Continuous;
        let width = if continuous { d + self.space.q() } else { d };
        let fixed: Vec<Vec<f64>> = chosen.iter().map(|c| c.p[width..].to_vec()).collect();
        let unstack = |v: &[f64]| -> Vec<Vec<f64>> {
            (0..k)
                .map(|i| {
                    let mut p = v[i * width..(i + 1) * width].to_vec();
                    p.extend_from_slice(&fixed[i]);
                    p
                })
                .collect()
        };
        let greedy: Vec<f64> = chosen.iter().flat_map(|c| c.p[..width].to_vec()).collect();
        let point_box = if continuous { self.joint_box() } else { SearchBox::unit(d) };
        let obj = acqopt::FnObjective(|v: &[f64]| batch_value(&unstack(v)));
        let r = maximize_batch(&obj, k, &point_box, &self.config.opt, Some(greedy), rng)?;
        let scale = gp.output_scale().scale.powi(2);
        r.ranked
            .iter()
            .map(|lr| {
                unstack(&lr.point)
                    .into_iter()
                    .zip(&chosen)
                    .map(|(p, c)| {
                        let cand = Cand {
                            p,
                            support: c.support,
                            value: lr.value,
                        };
                        self.to_proposal(&cand, scale, rng)
                    })
                    .collect()
            })
            .collect()
    }

    fn propose_two_stage(&self, gp: &FittedGp, u_star: &[f64], rng: &mut Rng) -> Result<Vec<Vec<Proposal>>> {
        let d = self.space.d();
        let incumbent = Incumbent::new(gp, u_star).mean;
        let ei = acqopt::FnObjective(|u: &[f64]| {
            let (m, v) = gp.g_post_model(u);
            expected_improvement(m, v.sqrt(), incumbent)
        });
        let stage1 = acqopt::maximize(&ei, &SearchBox::unit(d), &self.config.opt, &[u_star.to_vec()], rng)?;
        let mut out = Vec::new();
        for lr in stage1.ranked.iter() {
            let u = lr.point.clone();
            // second stage: noise coordinate with the largest variance reduction at u
            let f = |p: &[f64], _g: bool| {
                let mut full = u.clone();
                full.extend_from_slice(&p[d..]);
                (gp.vr_model(&u, &[full]).unwrap_or(f64::NEG_INFINITY), None)
            };
            let cands = self.stage_two(&f, &u, rng)?;
            let mut c = cands.into_iter().next().expect("non-empty");
            c.p[..d].copy_from_slice(&u);
            c.value = lr.value;
            out.push(vec![self.to_proposal(&c, gp.output_scale().scale, rng)?]);
        }
        Ok(out)
    }

    /// Noise-only search at fixed control `u`.
    fn stage_two(&self, f: &JointFn<'_>, u: &[f64], rng: &mut Rng) -> Result<Vec<Cand>> {
        let d = self.space.d();
        match self.space.mode() {
            NoiseMode::Discrete => {
                let support = self.space.support_model().expect("discrete support");
                let mut best: Option<Cand> = None;
                for (idx, s) in support.iter().enumerate() {
                    let mut p = u.to_vec();
                    p.extend_from_slice(s);
                    let v = f(&p, false).0;
                    if best.as_ref().is_none_or(|b| v > b.value) {
                        best = Some(Cand {
                            p,
                            support: Some(idx),
                            value: v,
                        });
                    }
                }
                Ok(best.into_iter().collect())
            }
            _ => {
                let q = self.space.q();
                let l = self.config.opt.latent_box;
                let obj = acqopt::FnObjective(|z: &[f64]| {
                    let mut p = u.to_vec();
                    p.extend_from_slice(z);
                    f(&p, false).0
                });
                let r = acqopt::maximize(
                    &obj,
                    &SearchBox::new(vec![-l; q], vec![l; q]),
                    &self.config.opt,
                    &[vec![0.0; q]],
                    rng,
                )?;
                Ok(r.ranked
                    .into_iter()
                    .map(|lr| {
                        let mut p = u.to_vec();
                        p.extend(lr.point);
                        let _ = d;
                        Cand {
                            p,
                            support: None,
                            value: lr.value,
                        }
                    })
                    .collect())
            }
        }
    }

    fn propose_vr(&self, gp: &FittedGp, u_star: &[f64], rng: &mut Rng) -> Result<Vec<Vec<Proposal>>> {
        let d = self.space.d();
        let f = |p: &[f64], _g: bool| (gp.vr_model(&p[..d], &[p.to_vec()]).unwrap_or(f64::NEG_INFINITY), None);
        let cands = self.search(&f, &[u_star.to_vec()], rng)?;
        self.singles(cands, gp.output_scale().scale.powi(2), rng)
    }

    fn kg_context(&self, gp: &FittedGp, u_star: &[f64], rng: &mut Rng) -> KgContext {
        let mut inner = acqopt::latin_hypercube_unit(self.config.kg_inner, self.space.d(), rng);
        inner.push(u_star.to_vec());
        KgContext::new(gp, inner, self.config.kg_samples, rng)
    }

    fn propose_kg(&self, gp: &FittedGp, u_star: &[f64], rng: &mut Rng) -> Result<Vec<Vec<Proposal>>> {
        let ctx = self.kg_context(gp, u_star, rng);
        let f = |p: &[f64], _g: bool| (ctx.value(gp, p), None);
        let cands = self.search(&f, &[u_star.to_vec()], rng)?;
        self.singles(cands, gp.output_scale().scale, rng)
    }

    fn propose_naive(&self, gp: &FittedGp, u_star: &[f64], rng: &mut Rng) -> Result<Vec<Vec<Proposal>>> {
        // same as KG, on the control-only model; noise drawn from its law
        self.propose_kg(gp, u_star, rng)
    }

    /// Evaluates proposals with the attached simulator, falling back to the
    /// next-ranked alternative when an evaluation fails.
    fn step(&mut self) -> Result<()> {
        let started = Instant::now();
        let ranked = self.ask_ranked()?;
        let iteration = self.rounds + 1;
        for batch in ranked {
            let mut outputs = Vec::with_capacity(batch.len());
            let mut failed = None;
            for p in &batch {
                match self.spec.evaluate(&p.x.0, &p.noise.theta) {
                    Ok(y) if y.is_finite() => outputs.push(y),
                    Ok(y) => {
                        failed = Some((p.clone(), format!("non-finite output {y}")));
                        break;
                    }
                    Err(e) => {
                        failed = Some((p.clone(), e.to_string()));
                        break;
                    }
                }
            }
            if let Some((p, message)) = failed {
                warn!("evaluation failed at {:?}: {message}; trying the next candidate", p.x.0);
                self.failures.push(Failure {
                    iteration,
                    x: p.x.0,
                    theta: p.noise.theta,
                    message,
                });
                continue;
            }
            let runtime = self
                .config
                .record_timing
                .then(|| started.elapsed().as_secs_f64() * 1e3);
            let points = batch
                .into_iter()
                .zip(outputs)
                .map(|(p, y)| (p.x, p.noise, y, p.acq_value))
                .collect();
            return self.commit(points, iteration, runtime);
        }
        Err(TvrError::NonFinite(format!(
            "every candidate of iteration {iteration} failed to evaluate"
        )))
    }

    /// Evaluates the initial design with the attached simulator.
    fn start(&mut self, n_init: usize) -> Result<()> {
        let started = Instant::now();
        let mut points = Vec::new();
        for (x, noise) in self.initial_design(n_init)? {
            let y = self.spec.evaluate(&x.0, &noise.theta)?;
            if y.is_finite() {
                points.push((x, noise, y, None));
            } else {
                warn!("initial design point {:?} returned {y}; skipped", x.0);
                self.failures.push(Failure {
                    iteration: 0,
                    x: x.0,
                    theta: noise.theta,
                    message: format!("non-finite output {y}"),
                });
            }
        }
        let runtime = self
            .config
            .record_timing
            .then(|| started.elapsed().as_secs_f64() * 1e3);
        self.commit(points, 0, runtime)
    }

    pub fn into_history(self) -> History {
        History {
            method: self.method,
            seed: self.seed,
            d: self.spec.d(),
            q: self.spec.q(),
            records: self.records,
            failures: self.failures,
        }
    }

    pub fn history(&self) -> History {
        History {
            method: self.method,
            seed: self.seed,
            d: self.spec.d(),
            q: self.spec.q(),
            records: self.records.clone(),
            failures: self.failures.clone(),
        }
    }
}

/// Runs `n_init` design points then `n_rounds` acquisition rounds
/// (`batch_size` points per round for the batch method).
pub fn run(
    spec: &ProblemSpec,
    method: Method,
    n_init: usize,
    n_rounds: usize,
    seed: u64,
    config: &RunConfig,
) -> Result<History> {
    let mut opt = RobustOptimizer::new(spec.clone(), method, config.clone(), seed)?;
    opt.start(n_init)?;
    for r in 0..n_rounds {
        opt.step()?;
        info!("{method} seed {seed}: round {} of {n_rounds}", r + 1);
    }
    Ok(opt.into_history())
}

/// Sequential run: one evaluation per acquisition.
pub fn run_sequential(
    spec: &ProblemSpec,
    method: Method,
    n_init: usize,
    n_seq: usize,
    seed: u64,
    config: &RunConfig,
) -> Result<History> {
    let mut cfg = config.clone();
    cfg.batch_size = 1;
    run(spec, method, n_init, n_seq, seed, &cfg)
}

/// Batch run with `k` points per round; `k = 1` is the sequential TVR run.
pub fn run_batch(
    spec: &ProblemSpec,
    k: usize,
    n_init: usize,
    n_batches: usize,
    seed: u64,
    config: &RunConfig,
) -> Result<History> {
    if k == 0 {
        return Err(TvrError::Config("batch size must be at least 1".into()));
    }
    if k == 1 {
        return run_sequential(spec, Method::Tvr, n_init, n_batches, seed, config);
    }
    let mut cfg = config.clone();
    cfg.batch_size = k;
    run(spec, Method::Ktvr, n_init, n_batches, seed, &cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl History {
    /// Final predicted solution and its posterior mean.
    pub fn final_solution(&self) -> Option<(Vec<f64>, f64)> {
        self.records
            .iter()
            .rev()
            .find_map(|r| Some((r.x_star.clone()?, r.mu_star?)))
    }

    /// `(evaluations so far, solution)` after every refit.
    pub fn solution_trace(&self) -> Vec<(usize, usize, Vec<f64>)> {
        self.records
            .iter()
            .filter_map(|r| r.x_star.clone().map(|x| (r.iteration, r.index + 1, x)))
            .collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["index".to_string(), "iteration".to_string()];
        h.extend((1..=self.d).map(|j| format!("x{j}")));
        h.extend((1..=self.q).map(|j| format!("theta{j}")));
        h.extend((1..=self.q).map(|j| format!("z{j}")));
        h.push("y".into());
        h.push("hp_digest".into());
        h.extend((1..=self.d).map(|j| format!("x_star{j}")));
        h.extend(["mu_star", "acq_value", "runtime_ms"].map(String::from));
        h
    }

    /// One line per record.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header())?;
        for r in &self.records {
            let mut row = vec![r.index.to_string(), r.iteration.to_string()];
            row.extend(r.x.iter().map(|v| v.to_string()));
            row.extend(r.theta.iter().map(|v| v.to_string()));
            match &r.z {
                Some(z) => row.extend(z.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), self.q)),
            }
            row.push(r.y.to_string());
            row.push(r.hp_digest.clone().unwrap_or_default());
            match &r.x_star {
                Some(x) => row.extend(x.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), self.d)),
            }
            row.push(fmt_opt(r.mu_star));
            row.push(fmt_opt(r.acq_value));
            row.push(fmt_opt(r.runtime_ms));
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

    /// Failed evaluations, one line each.
    pub fn write_failures_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "x", "theta", "message"])?;
        for f in &self.failures {
            let join = |v: &[f64]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";");
            wr.write_record([f.iteration.to_string(), join(&f.x), join(&f.theta), f.message.clone()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Stable fingerprint of a serializable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let s = serde_json::to_string(config)?;
    Ok(format!("{:016x}", fnv1a(s.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{Marginal, NoiseSpec};
    use crate::types::Bounds;
    use std::sync::Arc;

    fn toy(discrete: bool) -> ProblemSpec {
        let noise = if discrete {
            NoiseSpec::discrete(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![0.25, 0.5, 0.25]).unwrap()
        } else {
            NoiseSpec::independent(vec![Marginal::Normal { mean: 0.0, sd: 0.5 }]).unwrap()
        };
        ProblemSpec::new(
            Bounds::cube(1, -1.0, 1.0).unwrap(),
            noise,
            Arc::new(|x: &[f64], t: &[f64]| -(x[0] - 0.3 * t[0]).powi(2) + 0.2 * t[0]),
            true,
        )
    }

    fn quick() -> RunConfig {
        let mut c = RunConfig::default();
        c.opt.restarts = 3;
        c.fit.starts = 3;
        c
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "nope".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("tvr") && err.contains("two-stage"));
    }

    #[test]
    fn zero_sequential_steps_keeps_only_design() {
        let h = run_sequential(&toy(false), Method::Tvr, 6, 0, 1, &quick()).unwrap();
        assert_eq!(h.records.len(), 6);
        assert!(h.records[..5].iter().all(|r| r.x_star.is_none()));
        assert!(h.final_solution().is_some());
    }

    #[test]
    fn every_method_runs_on_both_noise_kinds() {
        for discrete in [false, true] {
            for m in [Method::Tvr, Method::Random, Method::TwoStage, Method::Vr, Method::Kg, Method::Naive] {
                let h = run_sequential(&toy(discrete), m, 5, 2, 3, &quick()).unwrap();
                assert_eq!(h.records.len(), 7, "{m}");
                let spec = toy(discrete);
                for r in &h.records {
                    assert!(spec.bounds.contains(&r.x));
                    if let Some(x) = &r.x_star {
                        assert!(spec.bounds.contains(x));
                    }
                    if let Some(z) = &r.z {
                        assert_eq!(spec.noise.from_latent(z).unwrap(), r.theta);
                    }
                }
            }
        }
    }

    #[test]
    fn batch_rounds_group_points() {
        let h = run_batch(&toy(false), 3, 5, 2, 4, &quick()).unwrap();
        assert_eq!(h.records.len(), 11);
        assert!(h.records[5..8].iter().all(|r| r.iteration == 1));
        assert!(h.records[8..].iter().all(|r| r.iteration == 2));
        let hd = run_batch(&toy(true), 2, 5, 1, 4, &quick()).unwrap();
        assert_eq!(hd.records.len(), 7);
    }

    #[test]
    fn batch_of_one_is_sequential() {
        let a = run_batch(&toy(false), 1, 5, 3, 9, &quick()).unwrap();
        let b = run_sequential(&toy(false), Method::Tvr, 5, 3, 9, &quick()).unwrap();
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
    }

    #[test]
    fn ask_tell_reproduces_run() {
        let spec = toy(false);
        let h = run_sequential(&spec, Method::Tvr, 5, 4, 11, &quick()).unwrap();
        let mut opt = RobustOptimizer::new(spec.clone(), Method::Tvr, quick(), 11).unwrap();
        let design = opt.initial_design(5).unwrap();
        let told = design
            .into_iter()
            .map(|(x, n)| {
                let y = spec.evaluate(&x.0, &n.theta).unwrap();
                (x, n, y)
            })
            .collect();
        opt.tell_many(told).unwrap();
        for _ in 0..4 {
            let a = opt.ask().unwrap();
            assert_eq!(a, opt.ask().unwrap());
            let p = a.into_iter().next().unwrap();
            let y = spec.evaluate(&p.x.0, &p.noise.theta).unwrap();
            opt.commit(vec![(p.x, p.noise, y, p.acq_value)], opt.rounds + 1, None).unwrap();
        }
        assert_eq!(opt.history().to_csv_string().unwrap(), h.to_csv_string().unwrap());
    }

    #[test]
    fn tell_accepts_duplicates_and_rejects_bad_dims() {
        let spec = toy(false);
        let mut opt = RobustOptimizer::new(spec, Method::Tvr, quick(), 2).unwrap();
        let pts: Vec<(ControlPoint, NoisePoint, f64)> = [(-0.5, 0.1), (0.2, -0.3), (0.7, 0.5)]
            .iter()
            .map(|&(x, t)| (ControlPoint(vec![x]), NoisePoint::discrete(vec![t]), -(x * x)))
            .collect();
        opt.tell_many(pts).unwrap();
        let before = opt.gp().unwrap().posterior_f(&[0.2], &opt.data().points[1].1.z.clone().unwrap()).1;
        opt.tell(ControlPoint(vec![0.2]), NoisePoint::discrete(vec![-0.3]), -0.04).unwrap();
        let after = opt.gp().unwrap().posterior_f(&[0.2], &opt.data().points[1].1.z.clone().unwrap()).1;
        assert!(after <= before + 1e-12);
        assert!(opt.tell(ControlPoint(vec![0.2, 0.1]), NoisePoint::discrete(vec![0.0]), 0.0).is_err());
        assert!(opt.tell(ControlPoint(vec![0.2]), NoisePoint::discrete(vec![0.0, 1.0]), 0.0).is_err());
    }

    #[test]
    fn failed_evaluations_fall_back_to_next_candidate() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        // the first acquisition-round evaluation (call 5 after 4 design points) fails
        let fail_first_round = |method: Method| {
            let calls = Arc::new(AtomicUsize::new(0));
            let mut spec = toy(false);
            spec.simulator = Some(Arc::new(move |x: &[f64], _t: &[f64]| {
                if calls.fetch_add(1, Ordering::SeqCst) == 4 {
                    f64::NAN
                } else {
                    -x[0] * x[0]
                }
            }));
            run_sequential(&spec, method, 4, 3, 5, &quick())
        };
        let h = fail_first_round(Method::Tvr).unwrap();
        assert_eq!(h.records.len(), 7);
        assert!(h.records.iter().all(|r| r.y.is_finite()));
        assert_eq!(h.failures.len(), 1);
        assert_eq!(h.failures[0].iteration, 1);

        // a simulator that always fails ends the run with an error, not a panic
        let mut spec = toy(false);
        spec.simulator = Some(Arc::new(|x: &[f64], _t: &[f64]| if x[0] > -1.0 { f64::NAN } else { 0.0 }));
        assert!(run_sequential(&spec, Method::Tvr, 4, 1, 5, &quick()).is_err());
    }

    #[test]
    fn minimization_flips_internal_sign() {
        let mut spec = toy(false);
        spec.maximize = false;
        spec.simulator = Some(Arc::new(|x: &[f64], _t: &[f64]| (x[0] - 0.4).powi(2)));
        let h = run_sequential(&spec, Method::Tvr, 6, 4, 1, &quick()).unwrap();
        let (x, m) = h.final_solution().unwrap();
        assert!((x[0] - 0.4).abs() < 0.1);
        assert!(m < 0.05);
    }
}
