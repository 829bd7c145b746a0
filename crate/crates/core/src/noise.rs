//! Noise distributions and the latent reparametrization `theta = T(z)`,
//! `z ~ N(0, I)`.
//!
//! Continuous distributions are represented either by independent marginals
//! (`T(z)_l = P_l^{-1}(Phi(z_l))`) or by a conditional chain in which each
//! coordinate is a monotone map of its own latent given the earlier
//! coordinates. Discrete distributions have no latent representation; the
//! surrogate integrates them by finite sums instead.

use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Result, TvrError};
use crate::special::{norm_cdf, norm_isf, norm_quantile, norm_sf};
use crate::types::{NoisePoint, Rng};

/// Finite support with probability masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteNoise {
    support: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl DiscreteNoise {
    pub fn new(support: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != masses.len() {
            return Err(TvrError::InvalidNoise(format!(
                "{} support points but {} masses",
                support.len(),
                masses.len()
            )));
        }
        let q = support[0].len();
        if q == 0 || support.iter().any(|s| s.len() != q) {
            return Err(TvrError::InvalidNoise(
                "support points must share a positive dimension".into(),
            ));
        }
        if masses.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(TvrError::InvalidNoise("masses must be positive".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(TvrError::InvalidNoise(format!(
                "masses sum to {total}, not 1"
            )));
        }
        for i in 0..support.len() {
            for j in 0..i {
                if support[i] == support[j] {
                    return Err(TvrError::InvalidNoise(format!(
                        "duplicate support point {:?}",
                        support[i]
                    )));
                }
            }
        }
        Ok(Self { support, masses })
    }

    /// Like [`DiscreteNoise::new`] but rescales the masses to sum to one.
    pub fn renormalized(support: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(TvrError::InvalidNoise("masses must be positive".into()));
        }
        let scaled: Vec<f64> = masses.iter().map(|p| p / total).collect();
        // rescaling leaves the sum within a few ulps of one
        let fix = 1.0 - scaled.iter().sum::<f64>();
        let mut scaled = scaled;
        scaled[0] += fix;
        Self::new(support, scaled)
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    /// Support index selected by inverting the cumulative mass at `u ∈ [0,1)`.
    pub fn index_for(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (m, &p) in self.masses.iter().enumerate() {
            acc += p;
            if u < acc {
                return m;
            }
        }
        self.masses.len() - 1
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (s, &p) in self.support.iter().zip(&self.masses) {
            for (o, &v) in out.iter_mut().zip(s) {
                *o += p * v;
            }
        }
        out
    }
}

/// One-dimensional continuous marginal with a closed-form or bisected quantile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Exponential with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    /// `shift + scale * Beta(a, b)`.
    ScaledBeta { a: f64, b: f64, scale: f64, shift: f64 },
}

/// Quantile of Beta(a, b) at `p`, by bisection on the regularized incomplete beta.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Normal { mean, sd } => mean.is_finite() && sd > 0.0,
            Marginal::Uniform { lo, hi } => lo < hi,
            Marginal::Exponential { rate } => rate > 0.0,
            Marginal::ScaledBeta { a, b, scale, shift } => {
                a > 0.0 && b > 0.0 && scale > 0.0 && shift.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(TvrError::InvalidNoise(format!("bad parameters: {self:?}")))
        }
    }

    /// `P^{-1}(Phi(z))`, evaluated through whichever tail keeps precision.
    pub fn from_latent(&self, z: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * z,
            Marginal::Uniform { lo, hi } => {
                if z <= 0.0 {
                    lo + (hi - lo) * norm_cdf(z)
                } else {
                    hi - (hi - lo) * norm_sf(z)
                }
            }
            Marginal::Exponential { rate } => {
                if z <= 0.0 {
                    -(-norm_cdf(z)).ln_1p() / rate
                } else {
                    -norm_sf(z).ln() / rate
                }
            }
            Marginal::ScaledBeta { a, b, scale, shift } => {
                let t = if z <= 0.0 {
                    beta_quantile(a, b, norm_cdf(z))
                } else {
                    1.0 - beta_quantile(b, a, norm_sf(z))
                };
                shift + scale * t
            }
        }
    }

    /// `Phi^{-1}(P(theta))`; errors outside the open support.
    pub fn to_latent(&self, theta: f64, dim: usize) -> Result<f64> {
        let outside = || TvrError::OutsideSupport { dim, value: theta };
        if !theta.is_finite() {
            return Err(outside());
        }
        match *self {
            Marginal::Normal { mean, sd } => Ok((theta - mean) / sd),
            Marginal::Uniform { lo, hi } => {
                if theta <= lo || theta >= hi {
                    return Err(outside());
                }
                let u = (theta - lo) / (hi - lo);
                Ok(if u <= 0.5 {
                    norm_quantile(u)
                } else {
                    norm_isf((hi - theta) / (hi - lo))
                })
            }
            Marginal::Exponential { rate } => {
                if theta <= 0.0 {
                    return Err(outside());
                }
                let cdf = -(-rate * theta).exp_m1();
                Ok(if cdf <= 0.5 {
                    norm_quantile(cdf)
                } else {
                    norm_isf((-rate * theta).exp())
                })
            }
            Marginal::ScaledBeta { a, b, scale, shift } => {
                let t = (theta - shift) / scale;
                if t <= 0.0 || t >= 1.0 {
                    return Err(outside());
                }
                let cdf = beta_reg(a, b, t);
                Ok(if cdf <= 0.5 {
                    norm_quantile(cdf)
                } else {
                    norm_isf(beta_reg(b, a, 1.0 - t))
                })
            }
        }
    }

    /// Quantile function `P^{-1}(u)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * norm_quantile(u),
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * u,
            Marginal::Exponential { rate } => -(-u).ln_1p() / rate,
            Marginal::ScaledBeta { a, b, scale, shift } => shift + scale * beta_quantile(a, b, u),
        }
    }

    /// Direct draw (not through the quantile function).
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * Distribution::<f64>::sample(&StandardNormal, rng),
            Marginal::Uniform { lo, hi } => rng.random_range(lo..hi),
            Marginal::Exponential { rate } => rand_distr::Exp::new(rate).expect("validated rate").sample(rng),
            Marginal::ScaledBeta { a, b, scale, shift } => {
                shift + scale * rand_distr::Beta::new(a, b).expect("validated shape").sample(rng)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
            Marginal::Exponential { rate } => 1.0 / rate,
            Marginal::ScaledBeta { a, b, scale, shift } => shift + scale * a / (a + b),
        }
    }
}

/// User-supplied invertible map between latent normals and natural noise.
#[derive(Clone)]
pub struct CustomTransform {
    pub name: String,
    pub dim: usize,
    pub forward: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    pub inverse: Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>,
}

impl fmt::Debug for CustomTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomTransform({}, dim={})", self.name, self.dim)
    }
}

impl PartialEq for CustomTransform {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.dim == other.dim
    }
}

/// Conditional-chain transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainTransform {
    /// `theta1 ~ U[-1.5, 7.5]`, `theta2 | theta1 ~ N(theta1 + 1, 4)`,
    /// `theta3 | theta1 ~ N(((theta1 - 1)/3)^2, 1/4)`.
    TridCorrelated,
    #[serde(skip)]
    Custom(CustomTransform),
}

impl ChainTransform {
    fn dim(&self) -> usize {
        match self {
            ChainTransform::TridCorrelated => 3,
            ChainTransform::Custom(c) => c.dim,
        }
    }

    fn forward(&self, z: &[f64]) -> Vec<f64> {
        match self {
            ChainTransform::TridCorrelated => {
                let t1 = Marginal::Uniform { lo: -1.5, hi: 7.5 }.from_latent(z[0]);
                let t2 = t1 + 1.0 + 2.0 * z[1];
                let c = (t1 - 1.0) / 3.0;
                let t3 = c * c + 0.5 * z[2];
                vec![t1, t2, t3]
            }
            ChainTransform::Custom(c) => (c.forward)(z),
        }
    }

    fn inverse(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            ChainTransform::TridCorrelated => {
                let z1 = Marginal::Uniform { lo: -1.5, hi: 7.5 }.to_latent(theta[0], 0)?;
                let z2 = (theta[1] - theta[0] - 1.0) / 2.0;
                let c = (theta[0] - 1.0) / 3.0;
                let z3 = (theta[2] - c * c) / 0.5;
                for (dim, v) in [z2, z3].into_iter().enumerate() {
                    if !v.is_finite() {
                        return Err(TvrError::OutsideSupport {
                            dim: dim + 1,
                            value: theta[dim + 1],
                        });
                    }
                }
                Ok(vec![z1, z2, z3])
            }
            ChainTransform::Custom(c) => (c.inverse)(theta),
        }
    }
}

/// The noise distribution `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum NoiseSpec {
    Discrete(DiscreteNoise),
    Independent { marginals: Vec<Marginal> },
    Chain { chain: ChainTransform },
}

impl NoiseSpec {
    pub fn discrete(support: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        Ok(NoiseSpec::Discrete(DiscreteNoise::new(support, masses)?))
    }

    pub fn independent(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(TvrError::InvalidNoise("no marginals".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(NoiseSpec::Independent { marginals })
    }

    pub fn chain(chain: ChainTransform) -> Self {
        NoiseSpec::Chain { chain }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseSpec::Discrete(d) => d.dim(),
            NoiseSpec::Independent { marginals } => marginals.len(),
            NoiseSpec::Chain { chain } => chain.dim(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, NoiseSpec::Discrete(_))
    }

    pub fn as_discrete(&self) -> Option<&DiscreteNoise> {
        match self {
            NoiseSpec::Discrete(d) => Some(d),
            _ => None,
        }
    }

    /// `theta = T(z)`.
    pub fn from_latent(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        match self {
            NoiseSpec::Discrete(_) => Err(TvrError::UnsupportedVariant("from_latent")),
            NoiseSpec::Independent { marginals } => Ok(marginals
                .iter()
                .zip(z)
                .map(|(m, &zl)| m.from_latent(zl))
                .collect()),
            NoiseSpec::Chain { chain } => Ok(chain.forward(z)),
        }
    }

    /// `z = T^{-1}(theta)`.
    pub fn to_latent(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta.len())?;
        match self {
            NoiseSpec::Discrete(_) => Err(TvrError::UnsupportedVariant("to_latent")),
            NoiseSpec::Independent { marginals } => marginals
                .iter()
                .zip(theta)
                .enumerate()
                .map(|(l, (m, &t))| m.to_latent(t, l))
                .collect(),
            NoiseSpec::Chain { chain } => chain.inverse(theta),
        }
    }

    /// Noise point for a latent `z` (continuous variants only).
    pub fn point_from_latent(&self, z: &[f64]) -> Result<NoisePoint> {
        Ok(NoisePoint::continuous(self.from_latent(z)?, z.to_vec()))
    }

    /// Maps a point of `[0,1]^q` through the inverse CDF: per dimension for
    /// continuous noise, joint support index from `u[0]` for discrete noise.
    pub fn from_unit(&self, u: &[f64]) -> Result<NoisePoint> {
        self.check_dim(u.len())?;
        match self {
            NoiseSpec::Discrete(d) => Ok(NoisePoint::discrete(
                d.support[d.index_for(u[0])].clone(),
            )),
            _ => {
                let z: Vec<f64> = u
                    .iter()
                    .map(|&v| norm_quantile(v.clamp(1e-12, 1.0 - 1e-12)))
                    .collect();
                self.point_from_latent(&z)
            }
        }
    }

    /// `n` independent draws from `P`.
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<NoisePoint> {
        (0..n)
            .map(|_| match self {
                NoiseSpec::Discrete(d) => {
                    let u: f64 = rng.random();
                    NoisePoint::discrete(d.support[d.index_for(u)].clone())
                }
                _ => {
                    let z: Vec<f64> = (0..self.dim())
                        .map(|_| StandardNormal.sample(rng))
                        .collect();
                    self.point_from_latent(&z)
                        .expect("continuous noise always maps latents")
                }
            })
            .collect()
    }

    /// One draw of `theta` from native samplers, without the latent map
    /// (discrete and chain noise fall back to [`NoiseSpec::sample`]).
    pub fn sample_theta(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            NoiseSpec::Independent { marginals } => marginals.iter().map(|m| m.sample(rng)).collect(),
            _ => self.sample(rng, 1).remove(0).theta,
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(TvrError::DimensionMismatch {
                expected: self.dim(),
                got,
            })
        }
    }
}
