//! Python bindings: the schema, policy and search surface as an in-process
//! extension module.
//!
//! Scalars cross the boundary natively; nested structures (profile reports,
//! search results, simulation traces, mutation reports) cross as JSON
//! strings for the caller to `json.loads`.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use shaketab_core::context::{
    context_space_size, flow_space_size, io::load_schema, validate_instance, ContextFlow,
    ContextInstance, ContextSchema, SpaceMode,
};
use shaketab_core::coverage::build_pairwise_universe;
use shaketab_core::error::Error;
use shaketab_core::metric::detect_ep;
use shaketab_core::mutation::{
    generate_mutants, report, run_experiment, AeqSuite, GroupPlan, MutantPlan,
};
use shaketab_core::policy::{parse_policy, run, AdaptationPolicy, FuzzySets, Variant};
use shaketab_core::search::{global_search, SearchConfig};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyRuntimeError::new_err(format!("serialization error: {e}"))
}

fn to_flow(id: &str, instances: Vec<Vec<f64>>) -> ContextFlow {
    ContextFlow::new(id, instances.into_iter().map(ContextInstance::new).collect())
}

/// A context schema: bounded property domains, validity constraints and the
/// profiling configuration.
#[pyclass]
struct Schema {
    inner: ContextSchema,
}

#[pymethods]
impl Schema {
    /// Load a schema JSON file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = load_schema(Path::new(path)).map_err(to_py_err)?;
        Ok(Schema { inner })
    }

    fn property_names(&self) -> Vec<String> {
        self.inner
            .properties()
            .iter()
            .map(|p| p.name().to_string())
            .collect()
    }

    /// Violation descriptions for one instance; an empty list means valid.
    fn validate_instance(&self, values: Vec<f64>) -> PyResult<Vec<String>> {
        let report = validate_instance(&self.inner, &ContextInstance::new(values))
            .map_err(to_py_err)?;
        Ok(report.violations.iter().map(|v| v.to_string()).collect())
    }

    /// Normalized Euclidean distance between two instances.
    fn distance(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        shaketab_core::metric::distance(
            &self.inner,
            &ContextInstance::new(a),
            &ContextInstance::new(b),
        )
        .map_err(to_py_err)
    }

    /// Context-space size as a decimal string (`exact` enumerates under the
    /// configured cap; otherwise the unconstrained product).
    #[pyo3(signature = (exact = false))]
    fn context_space_size(&self, exact: bool) -> PyResult<String> {
        let mode = if exact { SpaceMode::Exact } else { SpaceMode::Unconstrained };
        Ok(context_space_size(&self.inner, mode).map_err(to_py_err)?.to_string())
    }

    /// Flow-space size |space|^length as a decimal string.
    fn flow_space_size(&self, length: u64) -> PyResult<String> {
        Ok(flow_space_size(&self.inner, length).map_err(to_py_err)?.to_string())
    }

    /// Earthquake-profile report for a flow, as JSON.
    fn profile_flow(&self, instances: Vec<Vec<f64>>) -> PyResult<String> {
        let flow = to_flow("py", instances);
        let ep = self.inner.ep().copied().unwrap_or_default();
        let report = detect_ep(&self.inner, &flow, &ep).map_err(to_py_err)?;
        serde_json::to_string(&report).map_err(json_err)
    }

    /// Parse a rule-DSL policy against this schema.
    fn parse_policy(&self, text: &str) -> PyResult<Policy> {
        let policy = parse_policy(text, &self.inner).map_err(to_py_err)?;
        Ok(Policy {
            inner: policy,
            schema: self.inner.clone(),
        })
    }

    /// Run the two-level search and return the suite as JSON (flows,
    /// per-flow stats, G value, iteration count).
    #[pyo3(signature = (seed = 42, flow_length = 60, local_iterations = 500, stale_limit = 100, hard_limit = 1000))]
    fn generate_suite(
        &self,
        seed: u64,
        flow_length: usize,
        local_iterations: usize,
        stale_limit: usize,
        hard_limit: usize,
    ) -> PyResult<String> {
        let mut cfg = SearchConfig::with_flow_length(flow_length);
        cfg.rng_seed = seed;
        cfg.local_iterations = local_iterations;
        cfg.stale_limit = stale_limit;
        cfg.hard_iteration_limit = hard_limit;
        if let Some(ep) = self.inner.ep() {
            cfg.ep = *ep;
        }
        let universe = build_pairwise_universe(&self.inner).map_err(to_py_err)?;
        let result = global_search(&self.inner, &universe, &cfg).map_err(to_py_err)?;
        serde_json::to_string(&result).map_err(json_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Schema(properties={:?}, constraints={})",
            self.property_names(),
            self.inner.constraints().len()
        )
    }
}

/// A parsed adaptation policy bound to its schema.
#[pyclass]
struct Policy {
    inner: AdaptationPolicy,
    schema: ContextSchema,
}

#[pymethods]
impl Policy {
    fn rule_count(&self) -> usize {
        self.inner.rules.len()
    }

    /// Simulate the adaptive server over a flow; returns the variant trace
    /// as JSON.
    #[pyo3(signature = (instances, servers = 1))]
    fn simulate(&self, instances: Vec<Vec<f64>>, servers: u32) -> PyResult<String> {
        let flow = to_flow("py", instances);
        let initial = Variant::no_cache(servers).map_err(to_py_err)?;
        let sets = FuzzySets::standard_for(&self.schema);
        let trace = run(&self.inner, &sets, &self.schema, &initial, &flow, None);
        serde_json::to_string(&trace.steps).map_err(json_err)
    }

    /// Generate mutants (per-group caps), run them against one AEQ suite and
    /// return the summary report as JSON.
    #[pyo3(signature = (flows, f1 = 3, f2 = 12, f3 = 15, f4 = 15))]
    fn mutation_report(
        &self,
        flows: Vec<Vec<Vec<f64>>>,
        f1: usize,
        f2: usize,
        f3: usize,
        f4: usize,
    ) -> PyResult<String> {
        let plan = MutantPlan::Counts {
            f1: GroupPlan::Count(f1),
            f2: GroupPlan::Count(f2),
            f3: GroupPlan::Count(f3),
            f4: GroupPlan::Count(f4),
        };
        let mutants = generate_mutants(&self.inner, &self.schema, &plan).map_err(to_py_err)?;
        let suite = AeqSuite {
            id: "py".to_string(),
            flows: flows
                .into_iter()
                .enumerate()
                .map(|(i, rows)| to_flow(&format!("aeq_{i:03}"), rows))
                .collect(),
        };
        let sets = FuzzySets::standard_for(&self.schema);
        let matrix = run_experiment(
            &self.schema,
            &self.inner,
            &sets,
            &mutants,
            std::slice::from_ref(&suite),
            &Variant::default(),
        )
        .map_err(to_py_err)?;
        serde_json::to_string(&report(&matrix)).map_err(json_err)
    }

    fn __repr__(&self) -> String {
        format!("Policy(rules={})", self.inner.rules.len())
    }
}

/// The reference adaptation policy text shipped with the toolkit.
#[pyfunction]
fn reference_policy() -> &'static str {
    shaketab_core::policy::REFERENCE_POLICY
}

#[pymodule]
fn shaketab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Schema>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(reference_policy, m)?)?;
    Ok(())
}
