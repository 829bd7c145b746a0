//! Initial designs: a random Latin hypercube on `[0,1]^{d+q}` with the noise
//! columns pushed through the inverse CDF of the noise law.

use crate::acqopt::latin_hypercube_unit;
use crate::error::{Result, TvrError};
use crate::noise::NoiseSpec;
use crate::types::{Bounds, ControlPoint, NoisePoint, Rng};

/// `n` design points for controls in `bounds` and noise drawn through `noise`.
pub fn initial_design(
    n: usize,
    bounds: &Bounds,
    noise: &NoiseSpec,
    rng: &mut Rng,
) -> Result<Vec<(ControlPoint, NoisePoint)>> {
    if n < 2 {
        return Err(TvrError::NotEnoughData { need: 2, have: n });
    }
    let d = bounds.dim();
    let q = noise.dim();
    latin_hypercube_unit(n, d + q, rng)
        .into_iter()
        .map(|u| {
            let x = bounds.from_unit(&u[..d]);
            Ok((ControlPoint(x), noise.from_unit(&u[d..])?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Marginal;
    use crate::types::seeded_rng;

    #[test]
    fn one_point_per_stratum() {
        let bounds = Bounds::cube(1, -1.0, 1.0).unwrap();
        let noise = NoiseSpec::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }]).unwrap();
        let pts = initial_design(10, &bounds, &noise, &mut seeded_rng(3)).unwrap();
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0 .0[0]).collect();
        xs.sort_by(f64::total_cmp);
        for (i, x) in xs.iter().enumerate() {
            let lo = -1.0 + 0.2 * i as f64;
            assert!(*x >= lo - 1e-12 && *x < lo + 0.2 + 1e-12);
        }
        let mut zs: Vec<f64> = pts.iter().map(|p| crate::special::norm_cdf(p.1.z.as_ref().unwrap()[0])).collect();
        zs.sort_by(f64::total_cmp);
        for (i, u) in zs.iter().enumerate() {
            assert!((u * 10.0).floor() as usize == i);
        }
    }

    #[test]
    fn latent_and_theta_are_consistent() {
        let bounds = Bounds::cube(2, 0.0, 1.0).unwrap();
        let noise = NoiseSpec::independent(vec![
            Marginal::Exponential { rate: 0.5 },
            Marginal::Normal { mean: 2.0, sd: 3.0 },
        ])
        .unwrap();
        for (_, np) in initial_design(20, &bounds, &noise, &mut seeded_rng(5)).unwrap() {
            let back = noise.from_latent(np.z.as_ref().unwrap()).unwrap();
            assert_eq!(back, np.theta);
        }
    }

    #[test]
    fn seeds_matter_and_repeat() {
        let bounds = Bounds::cube(2, 0.0, 1.0).unwrap();
        let noise = NoiseSpec::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }]).unwrap();
        let a = initial_design(8, &bounds, &noise, &mut seeded_rng(1)).unwrap();
        let b = initial_design(8, &bounds, &noise, &mut seeded_rng(1)).unwrap();
        let c = initial_design(8, &bounds, &noise, &mut seeded_rng(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(initial_design(1, &bounds, &noise, &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn standard_normal_column_is_centered() {
        let bounds = Bounds::cube(1, 0.0, 1.0).unwrap();
        let noise = NoiseSpec::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }]).unwrap();
        let mut all = Vec::new();
        for seed in 0..100 {
            for (_, np) in initial_design(100, &bounds, &noise, &mut seeded_rng(seed)).unwrap() {
                all.push(np.theta[0]);
            }
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 / n.sqrt());
    }

    #[test]
    fn discrete_masses_follow_inverse_cdf() {
        let support: Vec<Vec<f64>> = [-1.0, -2.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].iter().map(|&v| vec![v]).collect();
        let noise = NoiseSpec::Discrete(
            crate::noise::DiscreteNoise::renormalized(support, vec![0.2088, 0.1612, 0.0792, 0.0811, 0.1137, 0.3561]).unwrap(),
        );
        let bounds = Bounds::cube(1, -1.0, 1.0).unwrap();
        let mut hits = 0;
        let mut total = 0;
        for seed in 0..100 {
            for (_, np) in initial_design(100, &bounds, &noise, &mut seeded_rng(seed)).unwrap() {
                total += 1;
                if np.theta[0] == 1.0 {
                    hits += 1;
                }
            }
        }
        assert!((hits as f64 / total as f64 - 0.3561).abs() < 0.01);
    }
}
