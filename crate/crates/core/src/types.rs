//! Shared domain types: box bounds, query points, problems, datasets and the
//! deterministic random-stream contract.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvrError};
use crate::noise::NoiseSpec;

/// Random stream used throughout the crate.
pub type Rng = ChaCha8Rng;

/// A control setting `x` in the natural units of the problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint(pub Vec<f64>);

impl ControlPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// A noise realization. `z` is the latent standard-normal coordinate and is
/// only present for continuous noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub theta: Vec<f64>,
    pub z: Option<Vec<f64>>,
}

impl NoisePoint {
    pub fn discrete(theta: Vec<f64>) -> Self {
        Self { theta, z: None }
    }

    pub fn continuous(theta: Vec<f64>, z: Vec<f64>) -> Self {
        Self { theta, z: Some(z) }
    }
}

/// Axis-aligned box `[lo_j, hi_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds(Vec<(f64, f64)>);

impl Bounds {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(TvrError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        for (index, &(lo, hi)) in intervals.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(TvrError::InvalidBounds { index, lo, hi });
            }
        }
        Ok(Self(intervals))
    }

    /// `d` copies of the same interval.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi); d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.0)
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Maps a point of the box onto `[0,1]^d`.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.0)
            .map(|(&v, &(lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    /// Inverse of [`Bounds::to_unit`].
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.0)
            .map(|(&v, &(lo, hi))| lo + v * (hi - lo))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.0.iter().map(|&(lo, hi)| hi - lo).collect()
    }
}

/// Projects `x` coordinate-wise onto the box.
pub fn clamp_to_bounds(x: &[f64], bounds: &Bounds) -> Result<ControlPoint> {
    if x.len() != bounds.dim() {
        return Err(TvrError::DimensionMismatch {
            expected: bounds.dim(),
            got: x.len(),
        });
    }
    Ok(ControlPoint(
        x.iter()
            .zip(bounds.intervals())
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect(),
    ))
}

/// Black-box simulator `f(x, theta)`.
pub type Simulator = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A robust optimization problem: maximize (or minimize) `E[f(x, Theta)]`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub bounds: Bounds,
    pub noise: NoiseSpec,
    /// May be absent when points are evaluated externally through ask/tell.
    pub simulator: Option<Simulator>,
    pub maximize: bool,
}

impl ProblemSpec {
    pub fn new(bounds: Bounds, noise: NoiseSpec, simulator: Simulator, maximize: bool) -> Self {
        Self {
            bounds,
            noise,
            simulator: Some(simulator),
            maximize,
        }
    }

    pub fn d(&self) -> usize {
        self.bounds.dim()
    }

    pub fn q(&self) -> usize {
        self.noise.dim()
    }

    /// +1 for maximization, -1 for minimization.
    pub fn sign(&self) -> f64 {
        if self.maximize {
            1.0
        } else {
            -1.0
        }
    }

    /// Raw simulator output at `(x, theta)`.
    pub fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        let sim = self
            .simulator
            .as_ref()
            .ok_or_else(|| TvrError::Config("problem has no simulator attached".into()))?;
        Ok(sim(x, theta))
    }
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("bounds", &self.bounds)
            .field("noise", &self.noise)
            .field("simulator", &self.simulator.as_ref().map(|_| "<fn>"))
            .field("maximize", &self.maximize)
            .finish()
    }
}

/// Evaluated points and their outputs, in the internal (maximization) sign.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<(ControlPoint, NoisePoint)>,
    pub outputs: Vec<f64>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn push(&mut self, x: ControlPoint, noise: NoisePoint, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(TvrError::NonFinite(format!("simulator output {y}")));
        }
        self.points.push((x, noise));
        self.outputs.push(y);
        Ok(())
    }
}

/// Deterministic stream for a given seed.
pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Seed for replication `trial` of a study started from `seed`.
pub fn sub_seed(seed: u64, trial: u64) -> u64 {
    seed.wrapping_mul(1_000_000).wrapping_add(trial)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream keyed by `seed` and a tag path, e.g. `(seed, [iteration, purpose])`.
///
/// Streams for different tags do not depend on how much of any other stream was consumed.
pub fn derive_rng(seed: u64, tags: &[u64]) -> Rng {
    let mut h = splitmix(seed);
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    Rng::seed_from_u64(h)
}
