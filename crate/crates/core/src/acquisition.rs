//! Acquisition functions: TVR and its batch form, plus the comparison
//! baselines (expected improvement on `g`, the second-stage prediction
//! error, knowledge gradient and plain variance reduction).
//!
//! The `*_model` functions take model coordinates (controls on `[0,1]^d`,
//! latent or scaled noise coordinates) and return values on the
//! standardized output scale. The plain functions take natural units.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TvrError};
use crate::kernel::k_control;
use crate::special::{norm_cdf, norm_pdf};
use crate::surrogate::FittedGp;
use crate::types::Rng;

/// Controls closer than this (max-norm on `[0,1]^d`) count as the same point.
pub const SAME_POINT_TOL: f64 = 1e-9;
/// Comparison variances below this use the limiting branch.
pub const DEGENERATE_VAR: f64 = 1e-12;

fn same_control(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < SAME_POINT_TOL)
}

/// Posterior quantities at the current predicted solution `u*`.
#[derive(Clone, Debug)]
pub struct Incumbent {
    pub u: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    /// `h_n(u*)`
    h: DVector<f64>,
    /// `L^{-1} h_n(u*)`
    a: DVector<f64>,
    /// `K^{-1} h_n(u*)`
    v: DVector<f64>,
}

impl Incumbent {
    pub fn new(gp: &FittedGp, u: &[f64]) -> Self {
        let h = gp.h_vec_model(u);
        let a = gp.whiten(&h);
        let v = gp.solve(&h);
        let mean = gp.hp().mu + h.dot(gp.alpha());
        let var = (gp.hp().sigma2 * gp.s0_factor() - a.norm_squared()).max(0.0);
        Self {
            u: u.to_vec(),
            mean,
            var,
            h,
            a,
            v,
        }
    }
}

/// TVR value with its two factors and, optionally, the gradient in `(u, w)`.
#[derive(Clone, Debug)]
pub struct TvrEval {
    pub value: f64,
    pub vr: f64,
    pub poi: f64,
    pub grad: Option<Vec<f64>>,
}

/// TVR at the joint model point `p = (u, w)`, with the limiting value at `u*`.
pub fn tvr_model(gp: &FittedGp, inc: &Incumbent, p: &[f64], want_grad: bool) -> TvrEval {
    let hp = gp.hp();
    let d = hp.d();
    let q = hp.q();
    let (u, w) = p.split_at(d);
    let integral = gp.space().integral();
    let s0f = gp.s0_factor();

    let kn = gp.k_vec_model(p);
    let hn = gp.h_vec_model(u);
    let b = gp.whiten(&kn);
    let a = gp.whiten(&hn);
    let hw = integral.h_factor(w, &hp.gamma);
    let c = hp.sigma2 * hw - b.dot(&a);
    let s = hp.sigma2 - b.norm_squared() + gp.obs_extra();
    let vr = c * c / s;

    let m = (&hn - &inc.h).dot(gp.alpha());
    let s2 = (hp.sigma2 * s0f - a.norm_squared()).max(0.0);
    let kc_star = k_control(u, &inc.u, hp);
    let cov_star = kc_star * s0f - a.dot(&inc.a);
    let dvar = inc.var + s2 - 2.0 * cov_star;
    let limit = same_control(u, &inc.u) || dvar < DEGENERATE_VAR;
    let (poi, t) = if limit {
        (0.5, 0.0)
    } else {
        let t = m / dvar.sqrt();
        (norm_cdf(t), t)
    };
    let value = vr * poi;
    if !want_grad {
        return TvrEval {
            value,
            vr,
            poi,
            grad: None,
        };
    }

    let inputs = gp.inputs();
    let n = inputs.len();
    let r = gp.solve(&kn);
    let v = gp.solve(&hn);
    let alpha = gp.alpha();
    let dh_w = integral.h_factor_grad(w, &hp.gamma);
    let mut grad = vec![0.0; d + q];
    for j in 0..d + q {
        let is_u = j < d;
        let scale = if is_u { hp.ell[j] } else { hp.gamma[j - d] };
        let inv2 = 1.0 / (scale * scale);
        // derivative vectors of k_n and (for controls) h_n
        let mut dk_v = 0.0;
        let mut r_dk = 0.0;
        let mut r_dh = 0.0;
        let mut dh_alpha = 0.0;
        let mut v_dh = 0.0;
        let mut vstar_dh = 0.0;
        for i in 0..n {
            let dk = -kn[i] * (p[j] - inputs[i][j]) * inv2;
            dk_v += dk * v[i];
            r_dk += r[i] * dk;
            if is_u {
                let dh = -hn[i] * (p[j] - inputs[i][j]) * inv2;
                r_dh += r[i] * dh;
                dh_alpha += dh * alpha[i];
                v_dh += v[i] * dh;
                vstar_dh += inc.v[i] * dh;
            }
        }
        let dself = if is_u { 0.0 } else { hp.sigma2 * dh_w[j - d] };
        let dc = dself - dk_v - r_dh;
        let ds = -2.0 * r_dk;
        let dvr = 2.0 * c * dc / s - c * c * ds / (s * s);
        grad[j] = if limit {
            0.5 * dvr
        } else {
            let (dm, dd) = if is_u {
                let ds2 = -2.0 * v_dh;
                let dcov = -kc_star * (u[j] - inc.u[j]) * inv2 * s0f - vstar_dh;
                (dh_alpha, ds2 - 2.0 * dcov)
            } else {
                (0.0, 0.0)
            };
            let sd = dvar.sqrt();
            let dt = dm / sd - m * dd / (2.0 * dvar * sd);
            dvr * poi + vr * norm_pdf(t) * dt
        };
    }
    TvrEval {
        value,
        vr,
        poi,
        grad: Some(grad),
    }
}

/// TVR in natural units; `w` is the latent `z` (continuous noise) or `theta` (discrete).
pub fn tvr(gp: &FittedGp, x_star: &[f64], x: &[f64], w: &[f64]) -> f64 {
    let (vr, poi) = tvr_components(gp, x_star, x, w);
    vr * poi
}

/// The variance-reduction and probability-of-improvement factors of TVR.
pub fn tvr_components(gp: &FittedGp, x_star: &[f64], x: &[f64], w: &[f64]) -> (f64, f64) {
    let space = gp.space();
    let inc = Incumbent::new(gp, &space.encode_x(x_star));
    let e = tvr_model(gp, &inc, &space.encode(x, w), false);
    (gp.output_scale().scale.powi(2) * e.vr, e.poi)
}

/// Means and covariance of `g` at `k` new controls followed by the incumbent.
#[derive(Clone, Debug, PartialEq)]
pub struct BestProbInputs {
    pub mu: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// The `k x (k+1)` comparison matrix for point `i` (0-based): row `u` contrasts
/// point `i` with the `u`-th other point, the incumbent being last.
pub fn comparison_matrix(k: usize, i: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(k, k + 1);
    // 1-based rule: 1 if v = i; -1 if u = v < i or v = u + 1 > i
    let ib = i + 1;
    for ub in 1..=k {
        for vb in 1..=k + 1 {
            if vb == ib {
                a[(ub - 1, vb - 1)] = 1.0;
            } else if (ub == vb && vb < ib) || (vb == ub + 1 && vb > ib) {
                a[(ub - 1, vb - 1)] = -1.0;
            }
        }
    }
    a
}

/// `(A S A^T)^{-1/2} A mu` with a symmetric root and eigenvalue floor.
fn standardized_contrasts(a: &DMatrix<f64>, mu: &[f64], cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = a * cov * a.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let scale = m.diagonal().iter().cloned().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&l| l < -1e-8 * scale.max(1e-300)) {
        return Err(TvrError::NotPositiveDefinite { jitter: 0.0 });
    }
    let inv_root = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(1e-12).sqrt()),
    );
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&inv_root) * eig.eigenvectors.transpose();
    Ok(root * (a * DVector::from_column_slice(mu)))
}

fn product_of_cdfs(alpha: &DVector<f64>) -> f64 {
    alpha.iter().map(|&v| norm_cdf(v)).product()
}

/// Probability that new point `i` beats every other new point and the
/// incumbent, as the product over all `k` standardized contrasts.
pub fn prob_best(inputs: &BestProbInputs, i: usize) -> Result<f64> {
    let k1 = inputs.mu.len();
    if k1 < 2 || inputs.cov.nrows() != k1 || inputs.cov.ncols() != k1 || i + 1 >= k1 {
        return Err(TvrError::DimensionMismatch {
            expected: k1,
            got: inputs.cov.nrows(),
        });
    }
    let a = comparison_matrix(k1 - 1, i);
    Ok(product_of_cdfs(&standardized_contrasts(&a, &inputs.mu, &inputs.cov)?))
}

/// Same product for point `i` against an arbitrary set of rivals.
fn prob_beats(mu: &[f64], cov: &DMatrix<f64>, i: usize, rivals: &[usize]) -> Result<f64> {
    if rivals.is_empty() {
        return Ok(1.0);
    }
    let mut a = DMatrix::zeros(rivals.len(), mu.len());
    for (row, &j) in rivals.iter().enumerate() {
        a[(row, i)] = 1.0;
        a[(row, j)] = -1.0;
    }
    Ok(product_of_cdfs(&standardized_contrasts(&a, mu, cov)?))
}

/// Batch TVR with the duplicate-aware extension, at model points `batch`.
pub fn ktvr_model(gp: &FittedGp, inc: &Incumbent, batch: &[Vec<f64>]) -> Result<f64> {
    let d = gp.space().d();
    if batch.len() == 1 {
        return Ok(tvr_model(gp, inc, &batch[0], false).value);
    }
    let obs = gp.obs_batch(batch)?;
    // unique controls, in first-appearance order
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for p in batch {
        if !unique.iter().any(|u| same_control(u, &p[..d])) {
            unique.push(p[..d].to_vec());
        }
    }
    let star_pos = unique.iter().position(|u| same_control(u, &inc.u));
    let mut pts = unique.clone();
    if star_pos.is_none() {
        pts.push(inc.u.clone());
    }
    let m = pts.len();
    let hs: Vec<DVector<f64>> = pts.iter().map(|u| gp.h_vec_model(u)).collect();
    let whs: Vec<DVector<f64>> = hs.iter().map(|h| gp.whiten(h)).collect();
    let mu: Vec<f64> = hs.iter().map(|h| gp.hp().mu + h.dot(gp.alpha())).collect();
    let s0f = gp.s0_factor();
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = k_control(&pts[i], &pts[j], gp.hp()) * s0f - whs[i].dot(&whs[j]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mut total = 0.0;
    for (i, u) in unique.iter().enumerate() {
        let rivals: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        let mut p = prob_beats(&mu, &cov, i, &rivals)?;
        if star_pos == Some(i) {
            p *= 0.5;
        }
        total += p * gp.batch_vr(&obs, u);
    }
    Ok(total)
}

/// Batch TVR in natural units; each batch entry is `(x, w)`.
pub fn ktvr(gp: &FittedGp, x_star: &[f64], batch: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let space = gp.space();
    let inc = Incumbent::new(gp, &space.encode_x(x_star));
    let pts: Vec<Vec<f64>> = batch.iter().map(|(x, w)| space.encode(x, w)).collect();
    Ok(gp.output_scale().scale.powi(2) * ktvr_model(gp, &inc, &pts)?)
}

/// Gaussian expected improvement of `g` over `incumbent` given mean and sd.
pub fn expected_improvement(mean: f64, sd: f64, incumbent: f64) -> f64 {
    let gain = mean - incumbent;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let u = gain / sd;
    (sd * (u * norm_cdf(u) + norm_pdf(u))).max(gain.max(0.0))
}

/// Expected improvement of `g(x)` over `incumbent_value` (natural units).
pub fn ei_on_g(gp: &FittedGp, x: &[f64], incumbent_value: f64) -> f64 {
    let (m, v) = gp.posterior_g(x);
    expected_improvement(m, v.sqrt(), incumbent_value)
}

/// Posterior variance of `g(x_fixed)` after a phantom observation at `(x_fixed, w)`.
pub fn stage2_mspe(gp: &FittedGp, x_fixed: &[f64], w: &[f64]) -> Result<f64> {
    let s2 = gp.posterior_g(x_fixed).1;
    let vr = gp.variance_reduction(x_fixed, &[(x_fixed.to_vec(), w.to_vec())])?;
    Ok((s2 - vr).max(0.0))
}

/// Variance reduction of `g(x)` from observing at `(x, w)`.
pub fn vr_acq(gp: &FittedGp, x: &[f64], w: &[f64]) -> Result<f64> {
    gp.variance_reduction(x, &[(x.to_vec(), w.to_vec())])
}

/// Fixed inner candidate set and common random numbers for knowledge gradient.
#[derive(Clone, Debug)]
pub struct KgContext {
    inner: Vec<Vec<f64>>,
    means: Vec<f64>,
    whitened: Vec<DVector<f64>>,
    best_mean: f64,
    eps: Vec<f64>,
}

impl KgContext {
    /// `inner` are model-coordinate controls; `n_mc` fantasy draws are fixed here.
    pub fn new(gp: &FittedGp, inner: Vec<Vec<f64>>, n_mc: usize, rng: &mut Rng) -> Self {
        let hs: Vec<DVector<f64>> = inner.iter().map(|u| gp.h_vec_model(u)).collect();
        let means: Vec<f64> = hs.iter().map(|h| gp.hp().mu + h.dot(gp.alpha())).collect();
        let whitened = hs.iter().map(|h| gp.whiten(h)).collect();
        let best_mean = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let eps = (0..n_mc.max(1)).map(|_| StandardNormal.sample(rng)).collect();
        Self {
            inner,
            means,
            whitened,
            best_mean,
            eps,
        }
    }

    pub fn inner(&self) -> &[Vec<f64>] {
        &self.inner
    }

    /// Per-draw improvement of the inner maximum after fantasizing at model point `p`.
    pub fn samples(&self, gp: &FittedGp, p: &[f64]) -> Vec<f64> {
        let hp = gp.hp();
        let integral = gp.space().integral();
        let b = gp.whiten(&gp.k_vec_model(p));
        let s2 = hp.sigma2 - b.norm_squared() + gp.obs_extra();
        if s2 <= 0.0 {
            return vec![0.0; self.eps.len()];
        }
        let sd = s2.sqrt();
        let slopes: Vec<f64> = self
            .inner
            .iter()
            .zip(&self.whitened)
            .map(|(u, a)| (integral.h(p, u, hp) - b.dot(a)) / sd)
            .collect();
        self.eps
            .iter()
            .map(|&e| {
                let best = self
                    .means
                    .iter()
                    .zip(&slopes)
                    .map(|(m, s)| m + s * e)
                    .fold(f64::NEG_INFINITY, f64::max);
                best - self.best_mean
            })
            .collect()
    }

    /// Monte-Carlo knowledge gradient at model point `p` (standardized scale).
    pub fn value(&self, gp: &FittedGp, p: &[f64]) -> f64 {
        let s = self.samples(gp, p);
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Monte-Carlo knowledge gradient in natural units. `inner` holds natural controls.
pub fn kg_mc(gp: &FittedGp, x: &[f64], w: &[f64], n_mc: usize, inner: &[Vec<f64>], rng: &mut Rng) -> f64 {
    let space = gp.space();
    let ctx = KgContext::new(gp, inner.iter().map(|u| space.encode_x(u)).collect(), n_mc, rng);
    gp.output_scale().scale * ctx.value(gp, &space.encode(x, w))
}

/// Knowledge gradient of a control-only GP with fitted observation noise.
pub fn naive_noisy(gp_x_only: &FittedGp, x: &[f64], n_mc: usize, inner: &[Vec<f64>], rng: &mut Rng) -> f64 {
    kg_mc(gp_x_only, x, &[], n_mc, inner, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acqopt::fd_gradient;
    use crate::kernel::GpHyperParams;
    use crate::surrogate::GpSpace;
    use crate::types::{seeded_rng, ControlPoint, Dataset, NoisePoint};
    use rand::Rng as _;

    fn random_gp(rng: &mut Rng, d: usize, q: usize, n: usize) -> FittedGp {
        let mut data = Dataset::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let z: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = x.iter().map(|v| (4.0 * v).sin()).sum::<f64>() + 0.4 * z.iter().sum::<f64>() * x[0];
            data.push(ControlPoint(x), NoisePoint::continuous(z.clone(), z), y).unwrap();
        }
        let hp = GpHyperParams::new(
            rng.random_range(0.5..2.0),
            (0..d).map(|_| rng.random_range(0.2..0.6)).collect(),
            (0..q).map(|_| rng.random_range(0.5..1.5)).collect(),
        );
        FittedGp::condition(hp, 0.0, &GpSpace::identity_continuous(d, q), &data, false).unwrap()
    }

    #[test]
    fn comparison_matrices_by_hand() {
        let a = comparison_matrix(2, 0);
        assert_eq!(a, DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 1.0, 0.0, -1.0]));
        let a = comparison_matrix(2, 1);
        assert_eq!(a, DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, 1.0, -1.0]));
        let a = comparison_matrix(3, 1);
        assert_eq!(
            a,
            DMatrix::from_row_slice(3, 4, &[-1.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0])
        );
        let a = comparison_matrix(3, 2);
        assert_eq!(
            a,
            DMatrix::from_row_slice(3, 4, &[-1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0])
        );
    }

    #[test]
    fn prob_best_examples() {
        let eq = BestProbInputs {
            mu: vec![0.0; 3],
            cov: DMatrix::identity(3, 3),
        };
        assert!((prob_best(&eq, 0).unwrap() - 0.25).abs() < 1e-14);
        let dom = BestProbInputs {
            mu: vec![10.0, 0.0, 0.0],
            cov: DMatrix::identity(3, 3),
        };
        assert!((prob_best(&dom, 0).unwrap() - 1.0).abs() < 1e-6);
        let p1 = prob_best(&eq, 1).unwrap();
        assert!((p1 - 0.25).abs() < 1e-14);
    }

    #[test]
    fn tvr_at_incumbent_is_half_vr() {
        let mut rng = seeded_rng(1);
        let gp = random_gp(&mut rng, 1, 1, 6);
        let xs = [0.4];
        let w = [0.3];
        let (vr, poi) = tvr_components(&gp, &xs, &xs, &w);
        assert_eq!(poi, 0.5);
        assert!((vr - vr_acq(&gp, &xs, &w).unwrap()).abs() < 1e-14);
        assert!((tvr(&gp, &xs, &xs, &w) - 0.5 * vr).abs() < 1e-14);
    }

    #[test]
    fn tvr_factorization_and_ranges() {
        let mut rng = seeded_rng(2);
        let gp = random_gp(&mut rng, 2, 1, 8);
        let xs = vec![0.5, 0.5];
        for _ in 0..100 {
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            let w = vec![rng.random_range(-3.0..3.0)];
            let (vr, poi) = tvr_components(&gp, &xs, &x, &w);
            assert!((vr * poi - tvr(&gp, &xs, &x, &w)).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&poi));
            assert!(vr >= 0.0 && vr <= gp.posterior_g(&x).1 + 1e-12);
        }
    }

    #[test]
    fn tvr_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(3);
        for trial in 0..10 {
            let (d, q) = [(1, 1), (2, 1), (3, 3), (2, 2), (1, 2)][trial % 5];
            let gp = random_gp(&mut rng, d, q, 10);
            let inc = Incumbent::new(&gp, &(0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            for _ in 0..5 {
                let mut p: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..0.95)).collect();
                p.extend((0..q).map(|_| rng.random_range(-2.0..2.0)));
                let g = tvr_model(&gp, &inc, &p, true).grad.unwrap();
                let fd = fd_gradient(|pp| tvr_model(&gp, &inc, pp, false).value, &p, 1e-6);
                let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-4 * scale, "analytic {g:?} fd {fd:?}");
                }
            }
        }
    }

    #[test]
    fn ei_examples() {
        assert_eq!(expected_improvement(-1.0, 0.0, 0.0), 0.0);
        assert!((expected_improvement(2.0, 3.0, 2.0) - 3.0 * 0.398_942_280_401_432_7).abs() < 1e-15);
        let mut rng = seeded_rng(4);
        for _ in 0..1000 {
            let m = rng.random_range(-3.0..3.0);
            let s = rng.random_range(0.0..2.0);
            let inc = rng.random_range(-3.0..3.0);
            assert!(expected_improvement(m, s, inc) >= (m - inc).max(0.0));
        }
    }

    #[test]
    fn ktvr_single_point_is_tvr() {
        let mut rng = seeded_rng(5);
        let gp = random_gp(&mut rng, 2, 1, 8);
        let inc = Incumbent::new(&gp, &[0.3, 0.6]);
        for _ in 0..20 {
            let p = vec![rng.random::<f64>(), rng.random::<f64>(), rng.random_range(-2.0..2.0)];
            let a = ktvr_model(&gp, &inc, std::slice::from_ref(&p)).unwrap();
            let b = tvr_model(&gp, &inc, &p, false).value;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kg_toy_matches_quadrature() {
        let mut rng = seeded_rng(6);
        let gp = random_gp(&mut rng, 1, 1, 5);
        let inner = vec![vec![0.2], vec![0.8]];
        let ctx = KgContext::new(&gp, inner.clone(), 20_000, &mut rng);
        let p = [0.5, 0.1];
        let samples = ctx.samples(&gp, &p);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // direct integral over the standardized fantasy
        let b = gp.whiten(&gp.k_vec_model(&p));
        let s2 = gp.hp().sigma2 - b.norm_squared() + gp.obs_extra();
        let lines: Vec<(f64, f64)> = inner
            .iter()
            .map(|u| {
                let h = gp.h_vec_model(u);
                let m = gp.hp().mu + h.dot(gp.alpha());
                let c = gp.space().integral().h(&p, u, gp.hp()) - b.dot(&gp.whiten(&h));
                (m, c / s2.sqrt())
            })
            .collect();
        let best = lines.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max);
        let steps = 200_000;
        let mut integral = 0.0;
        for i in 0..=steps {
            let e = -10.0 + 20.0 * i as f64 / steps as f64;
            let wgt = if i == 0 || i == steps { 0.5 } else { 1.0 };
            let v = lines.iter().map(|(m, s)| m + s * e).fold(f64::NEG_INFINITY, f64::max) - best;
            integral += wgt * v * norm_pdf(e) * 20.0 / steps as f64;
        }
        assert!((mean - integral).abs() <= 3.0 * sd / n.sqrt());
        assert!(integral >= -1e-9, "integral={integral}");
    }

    #[test]
    fn kg_vanishes_at_training_point() {
        let mut rng = seeded_rng(7);
        let gp = random_gp(&mut rng, 1, 1, 6);
        let p = gp.inputs()[2].clone();
        let inner = vec![vec![0.1], vec![0.5], vec![0.9]];
        let ctx = KgContext::new(&gp, inner, 64, &mut rng);
        assert!(ctx.value(&gp, &p).abs() < 1e-3);
    }
}
