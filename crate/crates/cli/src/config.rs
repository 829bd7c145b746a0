use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tvr_core::bench::{BenchProblem, Budgets};
use tvr_core::driver::{Method, RunConfig};

/// A whole experiment as one JSON document. Flags override top-level keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    /// Noise for `run`; defaults to the problem's usual distribution.
    pub noise: Option<String>,
    /// Noise list for `bench`; empty means `[noise]`.
    pub noises: Vec<String>,
    pub method: String,
    /// Method list for `bench`; empty means `[method]`.
    pub methods: Vec<String>,
    pub n_init: usize,
    pub n_seq: usize,
    pub batch_size: usize,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads for `bench` (0 = one per core).
    pub jobs: usize,
    pub out: PathBuf,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: "trig".into(),
            noise: None,
            noises: Vec::new(),
            method: "tvr".into(),
            methods: Vec::new(),
            n_init: 10,
            n_seq: 20,
            batch_size: 1,
            trials: 20,
            seed: 0,
            jobs: 0,
            out: PathBuf::from("out"),
            run: RunConfig::default(),
        }
    }
}

/// Marker written into `meta.json` so it can be fed back as `--config`.
pub const META_KIND: &str = "tvr-meta";

/// Reads a config file, or the `config` block of a `meta.json`.
pub fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| format!("config error in {}: {e}", path.display()))?;
    if value.get("kind").and_then(Value::as_str) == Some(META_KIND) {
        let inner = value
            .get("config")
            .cloned()
            .ok_or_else(|| format!("config error in {}: meta file without a config block", path.display()))?;
        return serde_json::from_value(inner).map_err(|e| format!("config error in {} (config block): {e}", path.display()));
    }
    serde_json::from_str(&text).map_err(|e| format!("config error in {}: {e}", path.display()))
}

/// Config with every default spelled out and every name checked.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub methods: Vec<Method>,
    pub problems: Vec<BenchProblem>,
}

impl Resolved {
    pub fn budgets(&self) -> Budgets {
        Budgets {
            n_init: self.config.n_init,
            n_seq: self.config.n_seq,
            batch_size: self.config.batch_size,
        }
    }
}

fn split_list(v: &[String]) -> Vec<String> {
    v.iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// Validates names and numbers before anything is simulated.
pub fn resolve(mut c: ExperimentConfig, bench: bool) -> Result<Resolved, String> {
    let problem_default = BenchProblem::new(&c.problem, None).map_err(|e| e.to_string())?;
    let noise = c.noise.clone().unwrap_or_else(|| problem_default.noise_name.clone());
    c.noise = Some(noise.clone());
    let mut noises = split_list(&c.noises);
    if noises.is_empty() || !bench {
        noises = vec![noise];
    }
    let mut methods = split_list(&c.methods);
    if methods.is_empty() || !bench {
        methods = vec![c.method.clone()];
    }
    let methods: Vec<Method> = methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let problems: Vec<BenchProblem> = noises
        .iter()
        .map(|n| BenchProblem::new(&c.problem, Some(n)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if bench {
        c.noises = noises;
        c.methods = methods.iter().map(|m| m.name().to_string()).collect();
    }

    if c.n_init < 2 {
        return Err(format!("n_init must be at least 2 (got {})", c.n_init));
    }
    if c.batch_size == 0 {
        return Err("batch_size must be at least 1".into());
    }
    if c.batch_size > 1 && methods.iter().any(|&m| m != Method::Ktvr) {
        return Err(format!("batch_size {} applies only to method ktvr", c.batch_size));
    }
    if bench && c.trials == 0 {
        return Err("trials must be at least 1".into());
    }
    c.run.batch_size = c.batch_size;
    c.run.opt.validate().map_err(|e| e.to_string())?;
    let fit = &c.run.fit;
    if fit.starts == 0 || fit.max_iters == 0 || !(fit.nugget > 0.0 && fit.nugget <= fit.max_nugget) {
        return Err("fit needs starts >= 1, max_iters >= 1 and 0 < nugget <= max_nugget".into());
    }
    if c.run.kg_samples == 0 || c.run.kg_inner == 0 {
        return Err("kg_samples and kg_inner must be at least 1".into());
    }
    let r = Resolved {
        config: c,
        methods,
        problems,
    };
    for &m in &r.methods {
        r.budgets().rounds(m).map_err(|e| e.to_string())?;
    }
    Ok(r)
}
