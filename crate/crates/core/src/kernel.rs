//! Squared-exponential covariance over joint `(x, w)` inputs and its
//! integrals over the noise coordinate.
//!
//! `w` is the latent standard-normal `z` for continuous noise, or the (scaled)
//! support coordinate for discrete noise. Integrating the joint kernel over
//! the noise law factorizes into the control part times a noise factor:
//!
//! * `h((x, w), x') = k_x(x, x') * H(w)` with `H(w) = E_W'[c(w, W')]`
//! * `s0(x, x') = k_x(x, x') * S` with `S = E_{W,W'}[c(W, W')]`
//!
//! where `c` is the noise-part correlation. For `W ~ N(0, I)` both factors are
//! closed form; for a finite support they are mass-weighted sums.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvrError};

/// Kernel hyperparameters on the model's internal (standardized) scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperParams {
    /// Constant prior mean.
    pub mu: f64,
    /// Signal variance.
    pub sigma2: f64,
    /// Control length-scales.
    pub ell: Vec<f64>,
    /// Noise length-scales.
    pub gamma: Vec<f64>,
    /// Relative jitter: `nugget * sigma2` is added to Gram diagonals.
    pub nugget: f64,
}

pub const DEFAULT_NUGGET: f64 = 1e-8;

impl GpHyperParams {
    pub fn new(sigma2: f64, ell: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self {
            mu: 0.0,
            sigma2,
            ell,
            gamma,
            nugget: DEFAULT_NUGGET,
        }
    }

    pub fn d(&self) -> usize {
        self.ell.len()
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TvrError::InvalidHyperParams(m.to_string()));
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return bad("sigma2 must be positive");
        }
        if self.ell.iter().chain(&self.gamma).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return bad("length-scales must be positive");
        }
        if !(self.nugget > 0.0 && self.nugget <= 1e-2) {
            return bad("nugget must lie in (0, 1e-2]");
        }
        if !self.mu.is_finite() {
            return bad("mean must be finite");
        }
        Ok(())
    }

    /// Absolute jitter added to Gram diagonals.
    pub fn jitter(&self) -> f64 {
        self.nugget * self.sigma2
    }
}

#[inline]
fn scaled_sq_dist(a: &[f64], b: &[f64], scales: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scales)
        .map(|((&u, &v), &s)| {
            let t = (u - v) / s;
            t * t
        })
        .sum()
}

/// Control part `sigma2 * exp(-sum (x_j - x'_j)^2 / (2 ell_j^2))`.
#[inline]
pub fn k_control(x: &[f64], x2: &[f64], hp: &GpHyperParams) -> f64 {
    hp.sigma2 * (-0.5 * scaled_sq_dist(x, x2, &hp.ell)).exp()
}

/// Noise part `exp(-sum (w_l - w'_l)^2 / (2 gamma_l^2))`.
#[inline]
pub fn noise_corr(w: &[f64], w2: &[f64], gamma: &[f64]) -> f64 {
    (-0.5 * scaled_sq_dist(w, w2, gamma)).exp()
}

/// Joint kernel on concatenated points `p = (x, w)`.
#[inline]
pub fn k_joint(p: &[f64], p2: &[f64], hp: &GpHyperParams) -> f64 {
    let d = hp.d();
    k_control(&p[..d], &p2[..d], hp) * noise_corr(&p[d..], &p2[d..], &hp.gamma)
}

/// `E_{Z'}[c(z, Z')]` for `Z' ~ N(0, I)`.
pub fn gaussian_h_factor(z: &[f64], gamma: &[f64]) -> f64 {
    z.iter()
        .zip(gamma)
        .map(|(&zl, &g)| {
            let ig2 = 1.0 / (g * g);
            let a = ig2 - 1.0 / (g * g + g.powi(4));
            (ig2 + 1.0).powf(-0.5) * (-0.5 * zl * zl * a).exp()
        })
        .product()
}

/// `E_{Z,Z'}[c(Z, Z')]` for independent standard normals.
pub fn gaussian_s0_factor(gamma: &[f64]) -> f64 {
    gamma
        .iter()
        .map(|&g| {
            let ig2 = 1.0 / (g * g);
            ((ig2 + 1.0) * (ig2 + 1.0 - 1.0 / (g * g + g.powi(4)))).powf(-0.5)
        })
        .product()
}

/// Cross covariance between `f(x, z)` and `g(x')` for Gaussian latent noise.
pub fn h_cross(p: &[f64], x2: &[f64], hp: &GpHyperParams) -> f64 {
    let d = hp.d();
    k_control(&p[..d], x2, hp) * gaussian_h_factor(&p[d..], &hp.gamma)
}

/// Prior covariance of `g(x)` and `g(x')` for Gaussian latent noise.
pub fn s0_sq(x: &[f64], x2: &[f64], hp: &GpHyperParams) -> f64 {
    k_control(x, x2, hp) * gaussian_s0_factor(&hp.gamma)
}

/// How the objective integrates the noise coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseIntegral {
    /// `w` is a latent standard normal.
    Gaussian,
    /// `w` ranges over a finite support (in model coordinates) with masses.
    Discrete {
        support: Vec<Vec<f64>>,
        masses: Vec<f64>,
    },
}

impl NoiseIntegral {
    pub fn is_discrete(&self) -> bool {
        matches!(self, NoiseIntegral::Discrete { .. })
    }

    /// Noise factor of `h`: `E_{W'}[c(w, W')]`.
    pub fn h_factor(&self, w: &[f64], gamma: &[f64]) -> f64 {
        match self {
            NoiseIntegral::Gaussian => gaussian_h_factor(w, gamma),
            NoiseIntegral::Discrete { support, masses } => support
                .iter()
                .zip(masses)
                .map(|(s, &p)| p * noise_corr(w, s, gamma))
                .sum(),
        }
    }

    /// Gradient of [`NoiseIntegral::h_factor`] with respect to `w`.
    pub fn h_factor_grad(&self, w: &[f64], gamma: &[f64]) -> Vec<f64> {
        match self {
            NoiseIntegral::Gaussian => {
                let h = gaussian_h_factor(w, gamma);
                w.iter()
                    .zip(gamma)
                    .map(|(&wl, &g)| {
                        let a = 1.0 / (g * g) - 1.0 / (g * g + g.powi(4));
                        -h * a * wl
                    })
                    .collect()
            }
            NoiseIntegral::Discrete { support, masses } => {
                let mut grad = vec![0.0; w.len()];
                for (s, &p) in support.iter().zip(masses) {
                    let c = p * noise_corr(w, s, gamma);
                    for l in 0..w.len() {
                        grad[l] -= c * (w[l] - s[l]) / (gamma[l] * gamma[l]);
                    }
                }
                grad
            }
        }
    }

    /// Noise factor of `s0`: `E_{W,W'}[c(W, W')]`.
    pub fn s0_factor(&self, gamma: &[f64]) -> f64 {
        match self {
            NoiseIntegral::Gaussian => gaussian_s0_factor(gamma),
            NoiseIntegral::Discrete { support, masses } => {
                let mut acc = 0.0;
                for (s, &p) in support.iter().zip(masses) {
                    for (s2, &p2) in support.iter().zip(masses) {
                        acc += p * p2 * noise_corr(s, s2, gamma);
                    }
                }
                acc
            }
        }
    }

    /// `h((x, w), x')` on concatenated `p = (x, w)`.
    pub fn h(&self, p: &[f64], x2: &[f64], hp: &GpHyperParams) -> f64 {
        let d = hp.d();
        k_control(&p[..d], x2, hp) * self.h_factor(&p[d..], &hp.gamma)
    }

    /// `s0(x, x')`.
    pub fn s0(&self, x: &[f64], x2: &[f64], hp: &GpHyperParams) -> f64 {
        k_control(x, x2, hp) * self.s0_factor(&hp.gamma)
    }
}

/// Gram matrix `K` of the joint kernel on `points` (no jitter).
pub fn gram(points: &[Vec<f64>], hp: &GpHyperParams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hp.sigma2;
        for j in 0..i {
            let v = k_joint(&points[i], &points[j], hp);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `k_n(p) = [k(p_i, p)]_i`.
pub fn k_vec(points: &[Vec<f64>], p: &[f64], hp: &GpHyperParams) -> DVector<f64> {
    DVector::from_iterator(points.len(), points.iter().map(|pi| k_joint(pi, p, hp)))
}

/// `h_n(x') = [h(p_i, x')]_i`.
pub fn h_vec(
    points: &[Vec<f64>],
    x2: &[f64],
    hp: &GpHyperParams,
    integral: &NoiseIntegral,
) -> DVector<f64> {
    DVector::from_iterator(points.len(), points.iter().map(|pi| integral.h(pi, x2, hp)))
}
