//! Gauss–Hermite rules for expectations over standard-normal variables.

use std::f64::consts::PI;

/// Nodes and weights with `sum_i w_i f(z_i) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `n`-point rule, computed by Newton iteration on the orthonormal
    /// Hermite recurrence (physicists' convention) and rescaled.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let pim4 = PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let jf = j as f64;
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let scale = 1.0 / PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = x
            .iter()
            .zip(&w)
            .map(|(&t, &wt)| (t * std::f64::consts::SQRT_2, wt * scale))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// `E[f(Z)]` for scalar `Z ~ N(0,1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }

    /// `E[f(Z)]` for `Z ~ N(0, I_q)` using the tensor-product rule.
    pub fn expect_tensor<F: FnMut(&[f64]) -> f64>(&self, q: usize, mut f: F) -> f64 {
        let n = self.nodes.len();
        let mut idx = vec![0usize; q];
        let mut z = vec![0.0; q];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (l, &i) in idx.iter().enumerate() {
                z[l] = self.nodes[i];
                w *= self.weights[i];
            }
            total += w * f(&z);
            // odometer increment
            let mut l = 0;
            loop {
                if l == q {
                    return total;
                }
                idx[l] += 1;
                if idx[l] < n {
                    break;
                }
                idx[l] = 0;
                l += 1;
            }
        }
    }

    /// All tensor nodes with their weights (first dimension fastest).
    pub fn tensor_grid(&self, q: usize) -> Vec<(Vec<f64>, f64)> {
        let n = self.nodes.len();
        let total = n.pow(q as u32);
        (0..total)
            .map(|k| {
                let mut rem = k;
                let mut z = Vec::with_capacity(q);
                let mut w = 1.0;
                for _ in 0..q {
                    z.push(self.nodes[rem % n]);
                    w *= self.weights[rem % n];
                    rem /= n;
                }
                (z, w)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments_are_exact() {
        for n in [8, 32, 64] {
            let gh = GaussHermite::new(n);
            assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-13);
            assert!(gh.expect(|z| z).abs() < 1e-13);
            assert!((gh.expect(|z| z * z) - 1.0).abs() < 1e-12);
            assert!((gh.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11);
            assert!((gh.expect(|z| z.powi(6)) - 15.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_integrand() {
        // E[exp(-Z^2/2)] = 1/sqrt(2)
        let gh = GaussHermite::new(64);
        assert!((gh.expect(|z| (-0.5 * z * z).exp()) - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn tensor_rule_factorizes() {
        let gh = GaussHermite::new(10);
        let v = gh.expect_tensor(3, |z| z[0] * z[0] + z[1] * z[2] + (z[2] * z[2]) * 2.0);
        assert!((v - 3.0).abs() < 1e-12);
        let grid = gh.tensor_grid(2);
        assert_eq!(grid.len(), 100);
        let s: f64 = grid.iter().map(|(z, w)| w * z[0] * z[0] * z[1] * z[1]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
