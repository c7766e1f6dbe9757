//! Config-file loading and flag/file/default resolution.
//!
//! One JSON file carries the sections `schema-ref`, `policy-ref`, `search`,
//! `ep`, `coverage_samples` and `mutation-plan`. Command-line flags override
//! file values, which override the built-in defaults. Paths inside the
//! config resolve relative to the config file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use shaketab_core::context::{io::load_schema, ContextSchema};
use shaketab_core::error::{Error, Result};
use shaketab_core::metric::EpConfig;
use shaketab_core::mutation::MutantPlan;
use shaketab_core::search::{GlobalObjectiveWeights, LocalObjectiveWeights, SearchConfig};

#[derive(Debug, Default, Deserialize)]
pub struct FileConfig {
    #[serde(rename = "schema-ref")]
    pub schema_ref: Option<PathBuf>,
    #[serde(rename = "policy-ref")]
    pub policy_ref: Option<PathBuf>,
    pub search: Option<SearchSection>,
    pub ep: Option<EpConfig>,
    pub coverage_samples: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(rename = "mutation-plan")]
    pub mutation_plan: Option<MutantPlan>,
}

#[derive(Debug, Default, Deserialize)]
pub struct SearchSection {
    pub flow_length: Option<usize>,
    pub tabu_tenure: Option<usize>,
    pub mem_max_age: Option<usize>,
    pub stale_limit: Option<usize>,
    pub hard_limit: Option<usize>,
    pub local_iterations: Option<usize>,
    pub neighborhood: Option<usize>,
    pub lambda_size: Option<f64>,
    pub seed: Option<u64>,
    pub weights: Option<WeightsSection>,
}

#[derive(Debug, Default, Deserialize)]
pub struct WeightsSection {
    pub w_cov_local: Option<f64>,
    pub w_ep: Option<f64>,
    pub w_re: Option<f64>,
    pub w_cov_global: Option<f64>,
    pub w_shape: Option<f64>,
}

/// EP threshold overrides passed as flags.
#[derive(Debug, Clone, Copy, Default)]
pub struct EpOverrides {
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub window_max: Option<usize>,
}

pub struct Resolved {
    pub schema: ContextSchema,
    pub schema_path: PathBuf,
    pub policy_path: Option<PathBuf>,
    pub search: SearchConfig,
    pub plan: MutantPlan,
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::parse(path.display().to_string(), e.line(), e.column(), e.to_string())
    })
}

fn relative_to(base: Option<&Path>, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match base {
        Some(dir) => dir.join(path),
        None => path.to_path_buf(),
    }
}

/// Resolve the effective schema, search configuration and mutation plan.
pub fn resolve(
    config_path: Option<&Path>,
    schema_flag: Option<&Path>,
    policy_flag: Option<&Path>,
    seed_flag: Option<u64>,
    ep_flags: EpOverrides,
    trace: bool,
) -> Result<Resolved> {
    let file = match config_path {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let base = config_path.and_then(Path::parent);

    let schema_path = match (schema_flag, &file.schema_ref) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => relative_to(base, p),
        (None, None) => {
            return Err(Error::Config(
                "no schema given: pass --schema or set schema-ref in the config".into(),
            ))
        }
    };
    let mut schema = load_schema(&schema_path)?;

    let policy_path = match (policy_flag, &file.policy_ref) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(p)) => Some(relative_to(base, p)),
        (None, None) => None,
    };

    if let Some(samples) = file.coverage_samples {
        schema = schema.with_coverage_samples(samples)?;
    }

    // EP precedence: flags > config section > schema file > defaults.
    let mut ep = file.ep.or_else(|| schema.ep().copied()).unwrap_or_default();
    if let Some(rho) = ep_flags.rho {
        ep.rho = rho;
    }
    if let Some(eps) = ep_flags.epsilon {
        ep.epsilon = eps;
    }
    if let Some(w) = ep_flags.window_max {
        ep.window_max = w;
    }
    ep.check()?;

    let mut search = SearchConfig::default();
    if let Some(section) = file.search {
        if let Some(n) = section.flow_length {
            search.flow_length = n;
            // Derive the tenure unless the file pins it explicitly.
            search.tabu_tenure = (n / 2).max(1);
        }
        if let Some(n) = section.tabu_tenure {
            search.tabu_tenure = n;
        }
        if let Some(n) = section.mem_max_age {
            search.mem_max_age = n;
        }
        if let Some(n) = section.stale_limit {
            search.stale_limit = n;
        }
        if let Some(n) = section.hard_limit {
            search.hard_iteration_limit = n;
        }
        if let Some(n) = section.local_iterations {
            search.local_iterations = n;
        }
        if let Some(n) = section.neighborhood {
            search.neighborhood = n;
        }
        if let Some(v) = section.lambda_size {
            search.lambda_size = v;
        }
        if let Some(s) = section.seed {
            search.rng_seed = s;
        }
        if let Some(w) = section.weights {
            let mut local = LocalObjectiveWeights::default();
            let mut global = GlobalObjectiveWeights::default();
            if let Some(v) = w.w_cov_local {
                local.w_cov = v;
            }
            if let Some(v) = w.w_ep {
                local.w_ep = v;
            }
            if let Some(v) = w.w_re {
                local.w_re = v;
            }
            if let Some(v) = w.w_cov_global {
                global.w_cov = v;
            }
            if let Some(v) = w.w_shape {
                global.w_shape = v;
            }
            search.local_weights = local;
            search.global_weights = global;
        }
    }
    if let Some(seed) = seed_flag {
        search.rng_seed = seed;
    }
    search.ep = ep;
    search.collect_trace = trace;
    search.check()?;

    let plan = file.mutation_plan.unwrap_or_else(MutantPlan::default_scaled);

    Ok(Resolved {
        schema,
        schema_path,
        policy_path,
        search,
        plan,
    })
}
