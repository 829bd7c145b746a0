//! Driving the optimizer by hand: the simulator lives outside the library.
//!
//! `cargo run --release -p tvr-core --example ask_tell`

use std::sync::Arc;

use tvr_core::driver::{Method, RobustOptimizer, RunConfig};
use tvr_core::{Bounds, Marginal, NoiseSpec, ProblemSpec};

fn simulator(x: &[f64], theta: &[f64]) -> f64 {
    // the best x depends on theta; E over theta peaks at x = 0.35
    -(x[0] - 0.5 * theta[0]).powi(2) - 0.3 * x[0] * theta[0]
}

fn main() -> tvr_core::Result<()> {
    let bounds = Bounds::cube(1, -2.0, 2.0)?;
    let noise = NoiseSpec::independent(vec![Marginal::Normal { mean: 1.0, sd: 0.5 }])?;
    let spec = ProblemSpec::new(bounds, noise, Arc::new(simulator), true);
    let mut opt = RobustOptimizer::new(spec, Method::Tvr, RunConfig::default(), 7)?;

    let design = opt.initial_design(8)?;
    let first = design
        .into_iter()
        .map(|(x, n)| {
            let y = simulator(&x.0, &n.theta);
            (x, n, y)
        })
        .collect();
    opt.tell_many(first)?;

    for _ in 0..12 {
        let batch = opt.ask()?;
        for p in batch {
            let y = simulator(&p.x.0, &p.noise.theta);
            opt.tell(p.x, p.noise, y)?;
        }
    }
    if let Some((x, mean)) = opt.solution() {
        println!("x* = {x:?}, posterior mean of E f = {mean:.4}");
    }
    Ok(())
}
