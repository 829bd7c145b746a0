//! Gaussian-process surrogate over joint `(x, w)` inputs, fitted by MAP, with
//! closed-form posteriors of the simulator `f` and of the noise-averaged
//! objective `g(x) = E[f(x, W)]`.
//!
//! Internally controls live on `[0,1]^d`, discrete noise supports on
//! `[0,1]^q`, latent `z` is left as is, and outputs are standardized. The
//! public posterior methods take and return natural units; the `*_model`
//! methods work on the internal scale and are what the acquisition code uses.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::acqopt::{self, GradObjective, OptBudget, SearchBox};
use crate::error::{Result, TvrError};
use crate::kernel::{k_control, k_joint, GpHyperParams, NoiseIntegral, DEFAULT_NUGGET};
use crate::noise::NoiseSpec;
use crate::types::{Bounds, Dataset, NoisePoint, Rng};

/// Gamma prior with shape/rate parametrization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn ln_pdf(&self, v: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * v.ln()
            - self.rate * v
    }

    /// Derivative of [`GammaPrior::ln_pdf`] with respect to `ln v`.
    fn dln(&self, v: f64) -> f64 {
        (self.shape - 1.0) - self.rate * v
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("valid gamma prior")
            .sample(rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Prior on the signal variance (and the observation-noise variance when learned).
    pub variance: GammaPrior,
    /// Prior on every length-scale.
    pub length: GammaPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            variance: GammaPrior {
                shape: 2.0,
                rate: 0.15,
            },
            length: GammaPrior {
                shape: 3.0,
                rate: 6.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub starts: usize,
    pub max_iters: usize,
    /// Initial relative jitter.
    pub nugget: f64,
    /// Largest relative jitter tried before giving up.
    pub max_nugget: f64,
    pub priors: Priors,
    /// Also fit a homoscedastic observation-noise variance.
    pub learn_noise: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            max_iters: 200,
            nugget: DEFAULT_NUGGET,
            max_nugget: 1e-4,
            priors: Priors::default(),
            learn_noise: false,
        }
    }
}

/// What the noise coordinate of the GP input represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Discrete,
    Continuous,
    /// Control-only model (no noise coordinate).
    Absent,
}

/// Affine maps between natural and model coordinates plus the noise law in
/// model coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GpSpace {
    x_lo: Vec<f64>,
    x_width: Vec<f64>,
    w_lo: Vec<f64>,
    w_width: Vec<f64>,
    mode: NoiseMode,
    integral: NoiseIntegral,
}

impl GpSpace {
    pub fn new(bounds: &Bounds, noise: &NoiseSpec) -> Self {
        let (x_lo, x_width) = bounds.intervals().iter().map(|&(l, h)| (l, h - l)).unzip();
        match noise.as_discrete() {
            Some(dn) => {
                let q = dn.dim();
                let mut w_lo = vec![0.0; q];
                let mut w_width = vec![1.0; q];
                for l in 0..q {
                    let lo = dn.support().iter().map(|s| s[l]).fold(f64::INFINITY, f64::min);
                    let hi = dn.support().iter().map(|s| s[l]).fold(f64::NEG_INFINITY, f64::max);
                    w_lo[l] = lo;
                    if hi > lo {
                        w_width[l] = hi - lo;
                    }
                }
                let support = dn
                    .support()
                    .iter()
                    .map(|s| s.iter().enumerate().map(|(l, v)| (v - w_lo[l]) / w_width[l]).collect())
                    .collect();
                Self {
                    x_lo,
                    x_width,
                    w_lo,
                    w_width,
                    mode: NoiseMode::Discrete,
                    integral: NoiseIntegral::Discrete {
                        support,
                        masses: dn.masses().to_vec(),
                    },
                }
            }
            None => {
                let q = noise.dim();
                Self {
                    x_lo,
                    x_width,
                    w_lo: vec![0.0; q],
                    w_width: vec![1.0; q],
                    mode: NoiseMode::Continuous,
                    integral: NoiseIntegral::Gaussian,
                }
            }
        }
    }

    /// Model over controls only.
    pub fn control_only(bounds: &Bounds) -> Self {
        let (x_lo, x_width) = bounds.intervals().iter().map(|&(l, h)| (l, h - l)).unzip();
        Self {
            x_lo,
            x_width,
            w_lo: vec![],
            w_width: vec![],
            mode: NoiseMode::Absent,
            integral: NoiseIntegral::Gaussian,
        }
    }

    /// Continuous-noise space with no rescaling of controls.
    pub fn identity_continuous(d: usize, q: usize) -> Self {
        Self {
            x_lo: vec![0.0; d],
            x_width: vec![1.0; d],
            w_lo: vec![0.0; q],
            w_width: vec![1.0; q],
            mode: NoiseMode::Continuous,
            integral: NoiseIntegral::Gaussian,
        }
    }

    /// Discrete-noise space with no rescaling of either coordinate.
    pub fn identity_discrete(d: usize, support: Vec<Vec<f64>>, masses: Vec<f64>) -> Self {
        let q = support.first().map_or(0, |s| s.len());
        Self {
            x_lo: vec![0.0; d],
            x_width: vec![1.0; d],
            w_lo: vec![0.0; q],
            w_width: vec![1.0; q],
            mode: NoiseMode::Discrete,
            integral: NoiseIntegral::Discrete { support, masses },
        }
    }

    pub fn d(&self) -> usize {
        self.x_lo.len()
    }

    pub fn q(&self) -> usize {
        self.w_lo.len()
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn integral(&self) -> &NoiseIntegral {
        &self.integral
    }

    pub fn x_widths(&self) -> &[f64] {
        &self.x_width
    }

    pub fn encode_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.x_lo)
            .zip(&self.x_width)
            .map(|((v, l), w)| (v - l) / w)
            .collect()
    }

    pub fn decode_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.x_lo)
            .zip(&self.x_width)
            .map(|((v, l), w)| l + v * w)
            .collect()
    }

    /// Natural noise coordinate (`z` or `theta`) to model coordinate.
    pub fn encode_w(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.w_lo)
            .zip(&self.w_width)
            .map(|((v, l), s)| (v - l) / s)
            .collect()
    }

    pub fn decode_w(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.w_lo)
            .zip(&self.w_width)
            .map(|((v, l), s)| l + v * s)
            .collect()
    }

    /// The natural noise coordinate the GP sees for a realization: `z` for
    /// continuous noise, `theta` for discrete noise, nothing for control-only models.
    pub fn noise_coord(&self, np: &NoisePoint) -> Result<Vec<f64>> {
        match self.mode {
            NoiseMode::Absent => Ok(vec![]),
            NoiseMode::Discrete => Ok(np.theta.clone()),
            NoiseMode::Continuous => np
                .z
                .clone()
                .ok_or_else(|| TvrError::InvalidNoise("continuous-noise point without latent z".into())),
        }
    }

    /// Model-coordinate joint input from natural `x` and natural noise coordinate `w`.
    pub fn encode(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut p = self.encode_x(x);
        p.extend(self.encode_w(w));
        p
    }

    /// Discrete support in model coordinates.
    pub fn support_model(&self) -> Option<&[Vec<f64>]> {
        match &self.integral {
            NoiseIntegral::Discrete { support, .. } => Some(support),
            NoiseIntegral::Gaussian => None,
        }
    }
}

/// Affine output standardization `y = shift + scale * y_model`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub shift: f64,
    pub scale: f64,
}

impl OutputScale {
    pub const IDENTITY: OutputScale = OutputScale {
        shift: 0.0,
        scale: 1.0,
    };

    pub fn from_outputs(y: &[f64]) -> Self {
        let n = y.len();
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = y.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            shift: mean,
            scale: if sd > 1e-300 && sd.is_finite() { sd } else { 1.0 },
        }
    }
}

/// Log marginal likelihood of `y` at `inputs` with the constant mean `hp.mu`.
pub fn log_marginal_likelihood(hp: &GpHyperParams, inputs: &[Vec<f64>], y: &[f64]) -> f64 {
    let priors = Priors::default();
    let ctx = MapContext::new(inputs, y, hp.d(), hp.nugget, &priors, false);
    ctx.terms(&log_params(hp, None), Some(hp.mu))
        .map_or(f64::NEG_INFINITY, |t| t.lml)
}

/// Log marginal likelihood plus log prior densities; `-inf` when the Gram
/// matrix cannot be factorized.
pub fn log_map_objective(hp: &GpHyperParams, inputs: &[Vec<f64>], y: &[f64], priors: &Priors) -> f64 {
    let ctx = MapContext::new(inputs, y, hp.d(), hp.nugget, priors, false);
    ctx.terms(&log_params(hp, None), Some(hp.mu))
        .map_or(f64::NEG_INFINITY, |t| t.value)
}

/// Gradient of [`log_map_objective`] in `(ln sigma2, ln ell_1.., ln gamma_1..)`.
pub fn log_map_gradient(
    hp: &GpHyperParams,
    inputs: &[Vec<f64>],
    y: &[f64],
    priors: &Priors,
) -> Option<Vec<f64>> {
    let ctx = MapContext::new(inputs, y, hp.d(), hp.nugget, priors, false);
    ctx.terms(&log_params(hp, None), Some(hp.mu)).map(|t| t.grad)
}

fn log_params(hp: &GpHyperParams, noise_var: Option<f64>) -> Vec<f64> {
    let mut lp = vec![hp.sigma2.ln()];
    lp.extend(hp.ell.iter().chain(&hp.gamma).map(|v| v.ln()));
    if let Some(t) = noise_var {
        lp.push(t.ln());
    }
    lp
}

struct MapTerms {
    value: f64,
    lml: f64,
    grad: Vec<f64>,
    mu: f64,
}

struct MapContext<'a> {
    n: usize,
    d: usize,
    dims: usize,
    /// Squared coordinate differences per dimension over pairs `i < k`.
    pair_sq: Vec<Vec<f64>>,
    y: &'a [f64],
    nugget: f64,
    priors: &'a Priors,
    learn_noise: bool,
}

impl<'a> MapContext<'a> {
    fn new(
        inputs: &[Vec<f64>],
        y: &'a [f64],
        d: usize,
        nugget: f64,
        priors: &'a Priors,
        learn_noise: bool,
    ) -> Self {
        let n = inputs.len();
        let dims = inputs.first().map_or(d, |p| p.len());
        let mut pair_sq = vec![Vec::with_capacity(n * n.saturating_sub(1) / 2); dims];
        for i in 0..n {
            for k in (i + 1)..n {
                for (j, col) in pair_sq.iter_mut().enumerate() {
                    let t = inputs[i][j] - inputs[k][j];
                    col.push(t * t);
                }
            }
        }
        Self {
            n,
            d,
            dims,
            pair_sq,
            y,
            nugget,
            priors,
            learn_noise,
        }
    }

    fn n_params(&self) -> usize {
        1 + self.dims + usize::from(self.learn_noise)
    }

    fn terms(&self, lp: &[f64], fixed_mu: Option<f64>) -> Option<MapTerms> {
        let n = self.n;
        let sigma2 = lp[0].exp();
        let inv_l2: Vec<f64> = (0..self.dims).map(|j| (-2.0 * lp[1 + j]).exp()).collect();
        let tau2 = if self.learn_noise { lp[1 + self.dims].exp() } else { 0.0 };
        if !sigma2.is_finite() || inv_l2.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return None;
        }

        let mut k = DMatrix::<f64>::zeros(n, n);
        let mut off = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        let mut idx = 0;
        for i in 0..n {
            k[(i, i)] = sigma2 * (1.0 + self.nugget) + tau2;
            for kk in (i + 1)..n {
                let mut s = 0.0;
                for (col, il) in self.pair_sq.iter().zip(&inv_l2) {
                    s += col[idx] * il;
                }
                let v = sigma2 * (-0.5 * s).exp();
                k[(i, kk)] = v;
                k[(kk, i)] = v;
                off.push(v);
                idx += 1;
            }
        }
        let chol = Cholesky::new(k)?;
        let ones = DVector::from_element(n, 1.0);
        let y = DVector::from_column_slice(self.y);
        let kinv_y = chol.solve(&y);
        let mu = match fixed_mu {
            Some(m) => m,
            None => {
                let kinv_1 = chol.solve(&ones);
                let den = kinv_1.sum();
                if den > 0.0 {
                    kinv_y.sum() / den
                } else {
                    0.0
                }
            }
        };
        let r = &y - &ones * mu;
        let alpha = chol.solve(&r);
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let lml = -0.5 * r.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        if !lml.is_finite() {
            return None;
        }
        let p = self.priors;
        let mut prior = p.variance.ln_pdf(sigma2);
        for il in &inv_l2 {
            prior += p.length.ln_pdf(il.powf(-0.5));
        }
        if self.learn_noise {
            prior += p.variance.ln_pdf(tau2);
        }

        let kinv = chol.inverse();
        let mut grad = vec![0.0; self.n_params()];
        // W = alpha alpha^T - K^{-1}; dL/dtheta = tr(W dK/dtheta) / 2
        let mut diag_w = 0.0;
        let mut gs = 0.0;
        for i in 0..n {
            let w = alpha[i] * alpha[i] - kinv[(i, i)];
            diag_w += w;
            gs += w * sigma2 * (1.0 + self.nugget);
        }
        let mut idx = 0;
        for i in 0..n {
            for kk in (i + 1)..n {
                let w = alpha[i] * alpha[kk] - kinv[(i, kk)];
                let wk = w * off[idx];
                gs += 2.0 * wk;
                for j in 0..self.dims {
                    grad[1 + j] += wk * self.pair_sq[j][idx] * inv_l2[j];
                }
                idx += 1;
            }
        }
        grad[0] = 0.5 * gs + p.variance.dln(sigma2);
        for j in 0..self.dims {
            grad[1 + j] += p.length.dln(inv_l2[j].powf(-0.5));
        }
        if self.learn_noise {
            grad[1 + self.dims] = 0.5 * tau2 * diag_w + p.variance.dln(tau2);
        }
        let _ = self.d;
        Some(MapTerms {
            value: lml + prior,
            lml,
            grad,
            mu,
        })
    }
}

/// Diagnostics from [`fit_detailed`].
#[derive(Clone, Debug)]
pub struct FitReport {
    /// MAP objective at each start, before ascent.
    pub start_values: Vec<f64>,
    /// MAP objective at the end of each ascent.
    pub final_values: Vec<f64>,
    /// Accepted-step trajectory of the winning ascent.
    pub best_trace: Vec<f64>,
    /// Relative jitter the final model uses.
    pub nugget: f64,
}

/// Prospective observations prepared by [`FittedGp::obs_batch`].
#[derive(Clone, Debug)]
pub struct ObsBatch {
    points: Vec<Vec<f64>>,
    bs: Vec<DVector<f64>>,
    chol: Cholesky<f64, Dyn>,
}

/// A GP conditioned on data. Immutable once built.
#[derive(Clone, Debug)]
pub struct FittedGp {
    hp: GpHyperParams,
    noise_var: f64,
    space: GpSpace,
    out: OutputScale,
    data: Dataset,
    inputs: Vec<Vec<f64>>,
    y: Vec<f64>,
    l: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    s0_factor: f64,
}

/// Fits hyperparameters by MAP and conditions on `data`.
pub fn fit(data: &Dataset, space: &GpSpace, config: &FitConfig, rng: &mut Rng) -> Result<FittedGp> {
    fit_detailed(data, space, config, None, rng).map(|(g, _)| g)
}

const LOG_BOX_VARIANCE: (f64, f64) = (-7.0, 8.0);
const LOG_BOX_LENGTH: (f64, f64) = (-5.0, 5.0);
const LOG_BOX_NOISE: (f64, f64) = (-16.0, 3.0);

/// [`fit`] with optional extra warm start and diagnostics.
pub fn fit_detailed(
    data: &Dataset,
    space: &GpSpace,
    config: &FitConfig,
    warm: Option<&GpHyperParams>,
    rng: &mut Rng,
) -> Result<(FittedGp, FitReport)> {
    let n = data.len();
    if n < 2 {
        return Err(TvrError::NotEnoughData { need: 2, have: n });
    }
    let inputs = encode_inputs(data, space)?;
    let out = OutputScale::from_outputs(&data.outputs);
    let y: Vec<f64> = data.outputs.iter().map(|v| (v - out.shift) / out.scale).collect();
    let d = space.d();
    let q = space.q();
    let dims = d + q;

    let mut lo = vec![LOG_BOX_VARIANCE.0];
    let mut hi = vec![LOG_BOX_VARIANCE.1];
    lo.extend(std::iter::repeat_n(LOG_BOX_LENGTH.0, dims));
    hi.extend(std::iter::repeat_n(LOG_BOX_LENGTH.1, dims));
    if config.learn_noise {
        lo.push(LOG_BOX_NOISE.0);
        hi.push(LOG_BOX_NOISE.1);
    }
    let bx = SearchBox::new(lo, hi);

    let mut starts = Vec::new();
    if let Some(w) = warm {
        if w.d() == d && w.q() == q {
            starts.push(log_params(w, config.learn_noise.then_some(0.01)));
        }
    }
    for _ in 0..config.starts {
        let mut s = vec![config.priors.variance.sample(rng).ln()];
        for _ in 0..dims {
            s.push(config.priors.length.sample(rng).ln());
        }
        if config.learn_noise {
            let t: f64 = rng.random_range(-6.0..-1.0);
            s.push(t * std::f64::consts::LN_10);
        }
        bx.project(&mut s);
        starts.push(s);
    }

    let mut nugget = config.nugget;
    loop {
        let ctx = MapContext::new(&inputs, &y, d, nugget, &config.priors, config.learn_noise);
        let obj = GradObjective(|lp: &[f64]| match ctx.terms(lp, None) {
            Some(t) => (t.value, t.grad),
            None => (f64::NEG_INFINITY, vec![0.0; lp.len()]),
        });
        let mut results: Vec<acqopt::LocalResult> = starts
            .iter()
            .map(|s| acqopt::local_ascent(&obj, &bx, s, config.max_iters, 1e-6))
            .collect();
        let start_values: Vec<f64> = results.iter().map(|r| r.start_value).collect();
        let final_values: Vec<f64> = results.iter().map(|r| r.value).collect();
        results.retain(|r| r.value.is_finite());
        if !results.is_empty() {
            acqopt::rank_results(&mut results);
            let best = &results[0];
            let terms = ctx.terms(&best.point, None).expect("finite at optimum");
            let lp = &best.point;
            let hp = GpHyperParams {
                mu: terms.mu,
                sigma2: lp[0].exp(),
                ell: lp[1..1 + d].iter().map(|v| v.exp()).collect(),
                gamma: lp[1 + d..1 + dims].iter().map(|v| v.exp()).collect(),
                nugget,
            };
            let noise_var = if config.learn_noise { lp[1 + dims].exp() } else { 0.0 };
            match FittedGp::build(hp, noise_var, space.clone(), data.clone(), inputs.clone(), y.clone(), out) {
                Ok(gp) => {
                    let report = FitReport {
                        start_values,
                        final_values,
                        best_trace: best.trace.clone(),
                        nugget,
                    };
                    return Ok((gp, report));
                }
                Err(_) if nugget * 10.0 <= config.max_nugget * (1.0 + 1e-9) => {}
                Err(e) => return Err(e),
            }
        }
        if nugget * 10.0 > config.max_nugget * (1.0 + 1e-9) {
            return Err(TvrError::NotPositiveDefinite {
                jitter: nugget,
            });
        }
        warn!("GP fit failed at relative jitter {nugget:e}; escalating");
        nugget *= 10.0;
    }
}

fn encode_inputs(data: &Dataset, space: &GpSpace) -> Result<Vec<Vec<f64>>> {
    data.points
        .iter()
        .map(|(x, np)| {
            if x.0.len() != space.d() {
                return Err(TvrError::DimensionMismatch {
                    expected: space.d(),
                    got: x.0.len(),
                });
            }
            let w = space.noise_coord(np)?;
            if w.len() != space.q() {
                return Err(TvrError::DimensionMismatch {
                    expected: space.q(),
                    got: w.len(),
                });
            }
            Ok(space.encode(&x.0, &w))
        })
        .collect()
}

fn clip_var(v: f64) -> f64 {
    if v < 0.0 {
        if v < -1e-8 {
            warn!("negative posterior variance {v:e} clipped to 0");
        }
        0.0
    } else {
        v
    }
}

impl FittedGp {
    /// Conditions on `data` with fixed hyperparameters (given on the model scale).
    /// With `standardize = false` outputs are used as is.
    pub fn condition(
        hp: GpHyperParams,
        noise_var: f64,
        space: &GpSpace,
        data: &Dataset,
        standardize: bool,
    ) -> Result<Self> {
        hp.validate()?;
        if hp.d() != space.d() || hp.q() != space.q() {
            return Err(TvrError::DimensionMismatch {
                expected: space.d() + space.q(),
                got: hp.d() + hp.q(),
            });
        }
        let inputs = encode_inputs(data, space)?;
        let out = if standardize {
            OutputScale::from_outputs(&data.outputs)
        } else {
            OutputScale::IDENTITY
        };
        let y = data.outputs.iter().map(|v| (v - out.shift) / out.scale).collect();
        Self::build(hp, noise_var, space.clone(), data.clone(), inputs, y, out)
    }

    fn build(
        hp: GpHyperParams,
        noise_var: f64,
        space: GpSpace,
        data: Dataset,
        inputs: Vec<Vec<f64>>,
        y: Vec<f64>,
        out: OutputScale,
    ) -> Result<Self> {
        let n = inputs.len();
        let mut k = crate::kernel::gram(&inputs, &hp);
        let extra = hp.jitter() + noise_var;
        for i in 0..n {
            k[(i, i)] += extra;
        }
        let chol = Cholesky::new(k).ok_or(TvrError::NotPositiveDefinite { jitter: hp.nugget })?;
        let r = DVector::from_iterator(n, y.iter().map(|v| v - hp.mu));
        let alpha = chol.solve(&r);
        let l = chol.l();
        let s0_factor = space.integral.s0_factor(&hp.gamma);
        Ok(Self {
            hp,
            noise_var,
            space,
            out,
            data,
            inputs,
            y,
            l,
            chol,
            alpha,
            s0_factor,
        })
    }

    pub fn hp(&self) -> &GpHyperParams {
        &self.hp
    }

    /// Observation-noise variance on the model scale (zero unless learned).
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn space(&self) -> &GpSpace {
        &self.space
    }

    pub fn output_scale(&self) -> OutputScale {
        self.out
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn mode(&self) -> NoiseMode {
        self.space.mode
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    /// Training inputs in model coordinates.
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// Standardized training outputs.
    pub fn y_model(&self) -> &[f64] {
        &self.y
    }

    /// `K^{-1}(y - mu 1)` on the model scale.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower Cholesky factor of the jittered Gram matrix.
    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn s0_factor(&self) -> f64 {
        self.s0_factor
    }

    /// Diagonal term added to the Gram matrix of any set of new observations.
    pub fn obs_extra(&self) -> f64 {
        self.hp.jitter() + self.noise_var
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `L^{-1} v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Gram matrix rebuilt from the factor.
    pub fn reconstructed_gram(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// Jittered Gram matrix computed directly.
    pub fn jittered_gram(&self) -> DMatrix<f64> {
        let mut k = crate::kernel::gram(&self.inputs, &self.hp);
        for i in 0..self.n() {
            k[(i, i)] += self.obs_extra();
        }
        k
    }

    pub fn k_vec_model(&self, p: &[f64]) -> DVector<f64> {
        crate::kernel::k_vec(&self.inputs, p, &self.hp)
    }

    pub fn h_vec_model(&self, u: &[f64]) -> DVector<f64> {
        crate::kernel::h_vec(&self.inputs, u, &self.hp, &self.space.integral)
    }

    /// Posterior mean and variance of `f` at a model-coordinate joint point.
    pub fn f_post_model(&self, p: &[f64]) -> (f64, f64) {
        let kv = self.k_vec_model(p);
        let m = self.hp.mu + kv.dot(&self.alpha);
        let a = self.whiten(&kv);
        (m, clip_var(self.hp.sigma2 - a.norm_squared()))
    }

    /// Posterior mean of `g` at model control `u`.
    pub fn g_mean_model(&self, u: &[f64]) -> f64 {
        self.hp.mu + self.h_vec_model(u).dot(&self.alpha)
    }

    /// Posterior mean and variance of `g` at model control `u`.
    pub fn g_post_model(&self, u: &[f64]) -> (f64, f64) {
        let hv = self.h_vec_model(u);
        let m = self.hp.mu + hv.dot(&self.alpha);
        let a = self.whiten(&hv);
        (m, clip_var(self.hp.sigma2 * self.s0_factor - a.norm_squared()))
    }

    /// Posterior covariance of `g(u)` and `g(u2)`.
    pub fn g_cov_model(&self, u: &[f64], u2: &[f64]) -> f64 {
        let a = self.whiten(&self.h_vec_model(u));
        let b = self.whiten(&self.h_vec_model(u2));
        k_control(u, u2, &self.hp) * self.s0_factor - a.dot(&b)
    }

    /// Posterior quantities of a set of prospective observations, reusable
    /// across variance-reduction targets.
    pub fn obs_batch(&self, cands: &[Vec<f64>]) -> Result<ObsBatch> {
        let m = cands.len();
        let bs: Vec<DVector<f64>> = cands.iter().map(|c| self.whiten(&self.k_vec_model(c))).collect();
        let mut s = DMatrix::zeros(m, m);
        for j in 0..m {
            s[(j, j)] = self.hp.sigma2 - bs[j].norm_squared() + self.obs_extra();
            for l in 0..j {
                let v = k_joint(&cands[j], &cands[l], &self.hp) - bs[j].dot(&bs[l]);
                s[(j, l)] = v;
                s[(l, j)] = v;
            }
        }
        let chol = Cholesky::new(s).ok_or(TvrError::NotPositiveDefinite {
            jitter: self.hp.nugget,
        })?;
        Ok(ObsBatch {
            points: cands.to_vec(),
            bs,
            chol,
        })
    }

    /// Reduction of `Var[g(u_t)]` from observing the batch.
    pub fn batch_vr(&self, batch: &ObsBatch, u_t: &[f64]) -> f64 {
        let a_t = self.whiten(&self.h_vec_model(u_t));
        let c = DVector::from_iterator(
            batch.points.len(),
            batch
                .points
                .iter()
                .zip(&batch.bs)
                .map(|(p, b)| self.space.integral.h(p, u_t, &self.hp) - b.dot(&a_t)),
        );
        c.dot(&batch.chol.solve(&c)).max(0.0)
    }

    /// Reduction of `Var[g(u_t)]` from observing `f` at model points `cands`.
    pub fn vr_model(&self, u_t: &[f64], cands: &[Vec<f64>]) -> Result<f64> {
        let batch = self.obs_batch(cands)?;
        Ok(self.batch_vr(&batch, u_t))
    }

    /// Posterior mean of `f(x, w)` in natural units (`w` is `z` or `theta`).
    pub fn posterior_f(&self, x: &[f64], w: &[f64]) -> (f64, f64) {
        let (m, v) = self.f_post_model(&self.space.encode(x, w));
        (self.out.shift + self.out.scale * m, self.out.scale.powi(2) * v)
    }

    /// Posterior mean and variance of `g(x)` in natural units.
    pub fn posterior_g(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.g_post_model(&self.space.encode_x(x));
        (self.out.shift + self.out.scale * m, self.out.scale.powi(2) * v)
    }

    /// Posterior covariance `s_n(x, x')` in natural units.
    pub fn posterior_g_cov(&self, x: &[f64], x2: &[f64]) -> f64 {
        let c = self.g_cov_model(&self.space.encode_x(x), &self.space.encode_x(x2));
        self.out.scale.powi(2) * c
    }

    /// Variance reduction of `g(x_target)` from observing `f` at every `(x, w)` in `cands`.
    pub fn variance_reduction(&self, x_target: &[f64], cands: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let ps: Vec<Vec<f64>> = cands.iter().map(|(x, w)| self.space.encode(x, w)).collect();
        let vr = self.vr_model(&self.space.encode_x(x_target), &ps)?;
        Ok(self.out.scale.powi(2) * vr)
    }

    /// Posterior mean of `g` and its gradient with respect to model control `u`.
    pub fn g_mean_grad_model(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let d = self.space.d();
        let mut m = self.hp.mu;
        let mut grad = vec![0.0; d];
        for (i, p) in self.inputs.iter().enumerate() {
            let hi = self.space.integral.h(p, u, &self.hp) * self.alpha[i];
            m += hi;
            for j in 0..d {
                grad[j] -= hi * (u[j] - p[j]) / (self.hp.ell[j] * self.hp.ell[j]);
            }
        }
        (m, grad)
    }

    /// Maximizer of the posterior mean of `g` over `[0,1]^d`, as `(u, mean)` on the model scale.
    pub fn argmax_mean_model(&self, budget: &OptBudget, rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
        let d = self.space.d();
        let obj = GradObjective(|u: &[f64]| self.g_mean_grad_model(u));
        let seed = self
            .inputs
            .iter()
            .map(|p| p[..d].to_vec())
            .map(|u| (self.g_mean_model(&u), u))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let seeds: Vec<Vec<f64>> = seed.into_iter().map(|(_, u)| u).collect();
        let r = acqopt::maximize(&obj, &SearchBox::unit(d), budget, &seeds, rng)?;
        Ok((r.point().to_vec(), r.value()))
    }

    /// Predicted solution `argmax_x mu_n(x)` and its posterior mean, natural units.
    pub fn argmax_posterior_mean(&self, budget: &OptBudget, rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
        let (u, m) = self.argmax_mean_model(budget, rng)?;
        Ok((self.space.decode_x(&u), self.out.shift + self.out.scale * m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{seeded_rng, ControlPoint};

    fn ds(points: &[(f64, f64)], y: &[f64]) -> Dataset {
        let mut d = Dataset::new();
        for (&(x, z), &v) in points.iter().zip(y) {
            d.push(ControlPoint(vec![x]), NoisePoint::continuous(vec![z], vec![z]), v)
                .unwrap();
        }
        d
    }

    #[test]
    fn single_point_likelihood() {
        let hp = GpHyperParams::new(1.0, vec![1.0], vec![1.0]);
        let v = log_marginal_likelihood(&hp, &[vec![0.2, 0.1]], &[0.0]);
        let expect = -0.5 * (2.0 * std::f64::consts::PI * (1.0 + hp.nugget)).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((v + 0.9189).abs() < 1e-4);
        let with_prior = log_map_objective(&hp, &[vec![0.2, 0.1]], &[0.0], &Priors::default());
        let p = Priors::default();
        let lp = p.variance.ln_pdf(1.0) + 2.0 * p.length.ln_pdf(1.0);
        assert!((with_prior - v - lp).abs() < 1e-12);
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(11);
        let priors = Priors::default();
        for _ in 0..20 {
            let n = rng.random_range(3..12);
            let dims = 3;
            let inputs: Vec<Vec<f64>> =
                (0..n).map(|_| (0..dims).map(|_| rng.random::<f64>()).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let mut hp = GpHyperParams::new(
                rng.random_range(0.3..3.0),
                vec![rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)],
                vec![rng.random_range(0.2..2.0)],
            );
            hp.mu = rng.random_range(-0.5..0.5);
            hp.nugget = 1e-6;
            let g = log_map_gradient(&hp, &inputs, &y, &priors).unwrap();
            let h = 1e-5;
            let at = |which: usize, delta: f64| {
                let mut h2 = hp.clone();
                match which {
                    0 => h2.sigma2 *= delta.exp(),
                    1 | 2 => h2.ell[which - 1] *= delta.exp(),
                    _ => h2.gamma[0] *= delta.exp(),
                }
                log_map_objective(&h2, &inputs, &y, &priors)
            };
            for (i, gi) in g.iter().enumerate() {
                let fd = (at(i, h) - at(i, -h)) / (2.0 * h);
                assert!(
                    (fd - gi).abs() <= 1e-4 * gi.abs().max(1.0),
                    "param {i}: fd={fd} analytic={gi}"
                );
            }
        }
    }

    #[test]
    fn duplicated_rows_are_finite() {
        let hp = GpHyperParams::new(1.0, vec![0.5], vec![0.5]);
        let inputs = vec![vec![0.3, 0.1]; 4];
        let v = log_map_objective(&hp, &inputs, &[1.0, 1.0, 1.0, 1.0], &Priors::default());
        assert!(v.is_finite());
    }

    #[test]
    fn constant_outputs_give_that_mean() {
        let bounds = Bounds::cube(1, -10.0, 10.0).unwrap();
        let space = GpSpace::new(&bounds, &NoiseSpec::independent(vec![crate::noise::Marginal::Normal { mean: 0.0, sd: 1.0 }]).unwrap());
        let data = ds(&[(-10.0, 0.0), (10.0, 0.5)], &[3.25, 3.25]);
        let gp = fit(&data, &space, &FitConfig::default(), &mut seeded_rng(0)).unwrap();
        let (m, _) = gp.posterior_g(&[0.0]);
        assert!((gp.output_scale().shift + gp.output_scale().scale * gp.hp().mu - 3.25).abs() < 1e-12);
        assert!((m - 3.25).abs() < 1e-9);
    }

    #[test]
    fn hand_computed_single_point_posterior() {
        // k(p, p1) = 0.5 when the scaled distance is sqrt(2 ln 2)
        let ell = 1.0 / (2.0 * 2f64.ln()).sqrt();
        let hp = GpHyperParams::new(1.0, vec![ell], vec![1.0]);
        let space = GpSpace::identity_continuous(1, 1);
        let gp = FittedGp::condition(hp.clone(), 0.0, &space, &ds(&[(0.0, 0.0)], &[2.0]), false).unwrap();
        let (m, v) = gp.posterior_f(&[1.0], &[0.0]);
        let nug = hp.nugget;
        assert!((m - 0.5 * 2.0 / (1.0 + nug)).abs() < 1e-12);
        assert!((v - (1.0 - 0.25 / (1.0 + nug))).abs() < 1e-12);
    }

    #[test]
    fn interpolation_and_prior_reversion() {
        let mut rng = seeded_rng(3);
        let pts: Vec<(f64, f64)> = (0..8).map(|_| (rng.random::<f64>(), rng.random::<f64>() * 2.0 - 1.0)).collect();
        let y: Vec<f64> = pts.iter().map(|(x, z)| (3.0 * x).sin() + 0.3 * z).collect();
        let data = ds(&pts, &y);
        let hp = GpHyperParams::new(1.3, vec![0.2], vec![0.7]);
        let gp = FittedGp::condition(hp.clone(), 0.0, &GpSpace::identity_continuous(1, 1), &data, false).unwrap();
        for (&(x, z), &v) in pts.iter().zip(&y) {
            let (m, s2) = gp.posterior_f(&[x], &[z]);
            assert!((m - v).abs() < 1e-6);
            assert!(s2 <= hp.jitter() * (1.0 + 1e-6));
        }
        let (m, s2) = gp.posterior_f(&[10.0], &[0.0]);
        assert!((m - hp.mu).abs() < 1e-6 && (s2 - hp.sigma2).abs() < 1e-6);
        let rec = gp.reconstructed_gram();
        let direct = gp.jittered_gram();
        assert!((rec - &direct).norm() <= 1e-8 * direct.norm());
    }

    #[test]
    fn prior_g_variance_and_point_mass_reduction() {
        let hp = GpHyperParams::new(1.0, vec![0.4], vec![1.0]);
        let gp = FittedGp::condition(hp.clone(), 0.0, &GpSpace::identity_continuous(1, 1), &Dataset::new(), false)
            .unwrap();
        let (m, v) = gp.posterior_g(&[0.3]);
        assert_eq!(m, 0.0);
        assert!((v - 3f64.powf(-0.5)).abs() < 1e-14);

        let space = GpSpace::identity_discrete(1, vec![vec![0.4]], vec![1.0]);
        let mut data = Dataset::new();
        for (x, y) in [(0.1, 1.0), (0.5, -0.4), (0.9, 0.3)] {
            data.push(ControlPoint(vec![x]), NoisePoint::discrete(vec![0.4]), y).unwrap();
        }
        let gp = FittedGp::condition(hp, 0.0, &space, &data, false).unwrap();
        for x in [0.0, 0.33, 0.7, 1.0] {
            let a = gp.posterior_g(&[x]);
            let b = gp.posterior_f(&[x], &[0.4]);
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn g_covariance_properties() {
        let hp = GpHyperParams::new(1.0, vec![0.1], vec![1.0]);
        let prior = FittedGp::condition(hp.clone(), 0.0, &GpSpace::identity_continuous(1, 1), &Dataset::new(), false)
            .unwrap();
        assert!(prior.posterior_g_cov(&[0.0], &[1.0]).abs() < 1e-8);
        let mut rng = seeded_rng(5);
        let pts: Vec<(f64, f64)> = (0..10).map(|_| (rng.random::<f64>(), rng.random::<f64>() * 2.0 - 1.0)).collect();
        let y: Vec<f64> = pts.iter().map(|(x, z)| x * z).collect();
        let gp = FittedGp::condition(hp, 0.0, &GpSpace::identity_continuous(1, 1), &ds(&pts, &y), false).unwrap();
        for _ in 0..200 {
            let a = rng.random::<f64>();
            let b = rng.random::<f64>();
            let vaa = gp.posterior_g(&[a]).1;
            let vbb = gp.posterior_g(&[b]).1;
            let vab = gp.posterior_g_cov(&[a], &[b]);
            assert!((gp.posterior_g_cov(&[a], &[a]) - vaa).abs() < 1e-10);
            assert!((vab - gp.posterior_g_cov(&[b], &[a])).abs() < 1e-14);
            let tr = vaa + vbb;
            let det = vaa * vbb - vab * vab;
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            assert!(tr / 2.0 - disc >= -1e-9);
        }
    }

    fn random_gp(rng: &mut Rng, discrete: bool, n: usize) -> FittedGp {
        let hp = GpHyperParams::new(
            rng.random_range(0.5..2.0),
            vec![rng.random_range(0.15..0.6)],
            vec![rng.random_range(0.3..1.5)],
        );
        let mut data = Dataset::new();
        let support = vec![vec![0.0], vec![0.3], vec![1.0]];
        let masses = vec![0.2, 0.5, 0.3];
        for _ in 0..n {
            let x = rng.random::<f64>();
            if discrete {
                let s = support[rng.random_range(0..3)].clone();
                let y = (4.0 * x).sin() + s[0];
                data.push(ControlPoint(vec![x]), NoisePoint::discrete(s), y).unwrap();
            } else {
                let z: f64 = rng.random_range(-2.0..2.0);
                let y = (4.0 * x).sin() + 0.5 * z;
                data.push(ControlPoint(vec![x]), NoisePoint::continuous(vec![z], vec![z]), y).unwrap();
            }
        }
        let space = if discrete {
            GpSpace::identity_discrete(1, support, masses)
        } else {
            GpSpace::identity_continuous(1, 1)
        };
        let mut hp = hp;
        hp.nugget = 1e-6;
        FittedGp::condition(hp, 0.0, &space, &data, false).unwrap()
    }

    fn with_phantom(gp: &FittedGp, x: f64, w: f64) -> FittedGp {
        let mut data = gp.data().clone();
        let np = match gp.mode() {
            NoiseMode::Discrete => NoisePoint::discrete(vec![w]),
            _ => NoisePoint::continuous(vec![w], vec![w]),
        };
        data.push(ControlPoint(vec![x]), np, 0.0).unwrap();
        FittedGp::condition(gp.hp().clone(), 0.0, gp.space(), &data, false).unwrap()
    }

    #[test]
    fn variance_reduction_matches_phantom_refit() {
        let mut rng = seeded_rng(21);
        for i in 0..200 {
            let discrete = i % 2 == 0;
            let gp = random_gp(&mut rng, discrete, 6);
            let xt = rng.random::<f64>();
            let xc = rng.random::<f64>();
            let w = if discrete { [0.0, 0.3, 1.0][rng.random_range(0..3)] } else { rng.random_range(-2.0..2.0) };
            let vr = gp.variance_reduction(&[xt], &[(vec![xc], vec![w])]).unwrap();
            let before = gp.posterior_g(&[xt]).1;
            let after = with_phantom(&gp, xc, w).posterior_g(&[xt]).1;
            assert!((before - after - vr).abs() < 1e-7, "vr={vr} diff={}", before - after);
        }
    }

    #[test]
    fn variance_reduction_bounds() {
        let mut rng = seeded_rng(22);
        for i in 0..1000 {
            let discrete = i % 2 == 1;
            let gp = random_gp(&mut rng, discrete, 5);
            let xt = rng.random::<f64>();
            let cand = (vec![rng.random::<f64>()], vec![if discrete { 0.3 } else { rng.random_range(-3.0..3.0) }]);
            let vr = gp.variance_reduction(&[xt], std::slice::from_ref(&cand)).unwrap();
            let s2 = gp.posterior_g(&[xt]).1;
            assert!(vr >= 0.0 && vr <= s2 + 1e-12);
            let batch = gp.variance_reduction(&[xt], std::slice::from_ref(&cand)).unwrap();
            assert!((batch - vr).abs() < 1e-10);
        }
        let gp = random_gp(&mut rng, false, 5);
        let vr = gp.variance_reduction(&[20.0], &[(vec![-20.0], vec![0.0])]).unwrap();
        assert!(vr < 1e-6);
    }

    #[test]
    fn batch_variance_reduction_matches_sequential_phantoms() {
        let mut rng = seeded_rng(23);
        for _ in 0..50 {
            let gp = random_gp(&mut rng, false, 6);
            let xt = rng.random::<f64>();
            let c: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
                .map(|_| (vec![rng.random::<f64>()], vec![rng.random_range(-2.0..2.0)]))
                .collect();
            let vr = gp.variance_reduction(&[xt], &c).unwrap();
            let mut g2 = gp.clone();
            for (x, w) in &c {
                g2 = with_phantom(&g2, x[0], w[0]);
            }
            let diff = gp.posterior_g(&[xt]).1 - g2.posterior_g(&[xt]).1;
            assert!((diff - vr).abs() < 1e-7);
        }
    }

    #[test]
    fn added_observation_never_increases_g_variance() {
        let mut rng = seeded_rng(24);
        for _ in 0..40 {
            let gp = random_gp(&mut rng, false, 6);
            let g2 = with_phantom(&gp, rng.random(), rng.random_range(-2.0..2.0));
            for i in 0..50 {
                let x = i as f64 / 49.0;
                assert!(g2.posterior_g(&[x]).1 <= gp.posterior_g(&[x]).1 + 1e-9);
            }
        }
    }

    #[test]
    fn fit_ascends_from_every_start() {
        let mut rng = seeded_rng(31);
        let pts: Vec<(f64, f64)> = (0..12).map(|_| (rng.random::<f64>(), rng.random::<f64>() * 2.0 - 1.0)).collect();
        let y: Vec<f64> = pts.iter().map(|(x, z)| (5.0 * x).cos() * (1.0 + z)).collect();
        let data = ds(&pts, &y);
        let space = GpSpace::identity_continuous(1, 1);
        let (gp, rep) = fit_detailed(&data, &space, &FitConfig::default(), None, &mut rng).unwrap();
        for (s, f) in rep.start_values.iter().zip(&rep.final_values) {
            assert!(f >= s);
        }
        assert!(rep.best_trace.windows(2).all(|w| w[1] >= w[0]));
        let best = rep.final_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((rep.best_trace.last().unwrap() - best).abs() < 1e-12);
        assert!(gp.hp().validate().is_ok());
    }

    #[test]
    fn argmax_of_flat_prior_and_single_bump() {
        let hp = GpHyperParams::new(1.0, vec![0.2], vec![1.0]);
        let space = GpSpace::identity_continuous(1, 1);
        let prior = FittedGp::condition(hp.clone(), 0.0, &space, &Dataset::new(), false).unwrap();
        let (x, v) = prior.argmax_posterior_mean(&OptBudget::default(), &mut seeded_rng(1)).unwrap();
        assert!((0.0..=1.0).contains(&x[0]));
        assert_eq!(v, 0.0);
        let gp = FittedGp::condition(hp, 0.0, &space, &ds(&[(0.37, 0.8)], &[1.5]), false).unwrap();
        let (x, _) = gp.argmax_posterior_mean(&OptBudget::default(), &mut seeded_rng(1)).unwrap();
        assert!((x[0] - 0.37).abs() < 1e-2);
    }

    #[test]
    fn g_mean_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(41);
        for discrete in [false, true] {
            let gp = random_gp(&mut rng, discrete, 7);
            for _ in 0..20 {
                let u = [rng.random::<f64>()];
                let (_, g) = gp.g_mean_grad_model(&u);
                let fd = acqopt::fd_gradient(|p| gp.g_mean_model(p), &u, 1e-6);
                assert!((g[0] - fd[0]).abs() < 1e-6 * (1.0 + g[0].abs()));
            }
        }
    }
}
