//! The system under test: a simulated adaptive web server driven by fuzzy
//! WHEN/IF/THEN rules.
//!
//! A [`Variant`] is the server's configuration tuple; [`step`] folds one
//! context instance through the policy (fuzzify, match rules, apply
//! actions); [`run`] records the resulting [`VariantFlow`]. Instrumentation
//! seams let mutation analysis rewrite the sensed instance before
//! fuzzification or the adjectives after it.

mod parser;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{ContextFlow, ContextInstance, ContextSchema};
use crate::error::{Error, Result};

pub use parser::parse_policy;

/// A concrete server configuration.
///
/// Invariant: a cache, when present, has size in [10, 1024] and validity
/// >= 1 s; when absent both are 0. The data-server pool stays in [1, 100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub cache_exists: bool,
    pub cache_size: u32,
    pub cache_validity_s: u32,
    pub data_servers: u32,
}

impl Variant {
    pub const MIN_CACHE_SIZE: u32 = 10;
    pub const MAX_CACHE_SIZE: u32 = 1024;
    pub const MIN_SERVERS: u32 = 1;
    pub const MAX_SERVERS: u32 = 100;

    pub fn no_cache(data_servers: u32) -> Result<Self> {
        let v = Variant {
            cache_exists: false,
            cache_size: 0,
            cache_validity_s: 0,
            data_servers,
        };
        v.check()?;
        Ok(v)
    }

    pub fn with_cache(cache_size: u32, cache_validity_s: u32, data_servers: u32) -> Result<Self> {
        let v = Variant {
            cache_exists: true,
            cache_size,
            cache_validity_s,
            data_servers,
        };
        v.check()?;
        Ok(v)
    }

    /// Enforce the variant-space constraint.
    pub fn check(&self) -> Result<()> {
        if self.cache_exists {
            if self.cache_size < Self::MIN_CACHE_SIZE || self.cache_size > Self::MAX_CACHE_SIZE {
                return Err(Error::Constraint(format!(
                    "cache size {} outside [{}, {}]",
                    self.cache_size,
                    Self::MIN_CACHE_SIZE,
                    Self::MAX_CACHE_SIZE
                )));
            }
            if self.cache_validity_s < 1 {
                return Err(Error::Constraint(
                    "cache validity must be at least 1 s when a cache exists".into(),
                ));
            }
        } else if self.cache_size != 0 || self.cache_validity_s != 0 {
            return Err(Error::Constraint(
                "cache size and validity must be 0 when no cache exists".into(),
            ));
        }
        if self.data_servers < Self::MIN_SERVERS || self.data_servers > Self::MAX_SERVERS {
            return Err(Error::Constraint(format!(
                "data servers {} outside [{}, {}]",
                self.data_servers,
                Self::MIN_SERVERS,
                Self::MAX_SERVERS
            )));
        }
        Ok(())
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant {
            cache_exists: false,
            cache_size: 0,
            cache_validity_s: 0,
            data_servers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjective {
    Low,
    Medium,
    High,
}

impl Adjective {
    pub const ALL: [Adjective; 3] = [Adjective::Low, Adjective::Medium, Adjective::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            Adjective::Low => "low",
            Adjective::Medium => "medium",
            Adjective::High => "high",
        }
    }
}

impl fmt::Display for Adjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A triangular membership function over the normalized [0, 1] range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub left: f64,
    pub peak: f64,
    pub right: f64,
}

impl Triangle {
    pub fn new(left: f64, peak: f64, right: f64) -> Self {
        Triangle { left, peak, right }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.left || x > self.right {
            0.0
        } else if x == self.peak {
            1.0
        } else if x < self.peak {
            (x - self.left) / (self.peak - self.left)
        } else {
            (self.right - x) / (self.right - self.peak)
        }
    }
}

/// low/medium/high membership functions for one property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjectiveSets {
    pub low: Triangle,
    pub medium: Triangle,
    pub high: Triangle,
}

impl AdjectiveSets {
    pub fn standard() -> Self {
        AdjectiveSets {
            low: Triangle::new(0.0, 0.0, 0.5),
            medium: Triangle::new(0.25, 0.5, 0.75),
            high: Triangle::new(0.5, 1.0, 1.0),
        }
    }

    pub fn membership(&self, adj: Adjective) -> &Triangle {
        match adj {
            Adjective::Low => &self.low,
            Adjective::Medium => &self.medium,
            Adjective::High => &self.high,
        }
    }

    fn check(&self, prop: &str) -> Result<()> {
        if !(self.low.peak < self.medium.peak && self.medium.peak < self.high.peak) {
            return Err(Error::Config(format!(
                "fuzzy sets for `{prop}`: peaks must be ordered low < medium < high"
            )));
        }
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            if self.low.eval(x) <= 0.0 && self.medium.eval(x) <= 0.0 && self.high.eval(x) <= 0.0 {
                return Err(Error::Config(format!(
                    "fuzzy sets for `{prop}` leave {x} with zero membership everywhere"
                )));
            }
        }
        Ok(())
    }
}

/// Fuzzy sets for every schema property, in property order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzySets {
    pub per_property: Vec<AdjectiveSets>,
}

impl FuzzySets {
    /// The standard low/medium/high trio for each property.
    pub fn standard_for(schema: &ContextSchema) -> Self {
        FuzzySets {
            per_property: vec![AdjectiveSets::standard(); schema.arity()],
        }
    }

    pub fn check(&self, schema: &ContextSchema) -> Result<()> {
        if self.per_property.len() != schema.arity() {
            return Err(Error::Config(format!(
                "fuzzy sets cover {} properties but the schema has {}",
                self.per_property.len(),
                schema.arity()
            )));
        }
        for (sets, prop) in self.per_property.iter().zip(schema.properties()) {
            sets.check(prop.name())?;
        }
        Ok(())
    }
}

/// Variant predicates usable in rule guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guard {
    CachePresent,
    CacheAbsent,
    ServersAtMax,
    ServersAtMin,
}

impl Guard {
    pub fn holds(&self, v: &Variant) -> bool {
        match self {
            Guard::CachePresent => v.cache_exists,
            Guard::CacheAbsent => !v.cache_exists,
            Guard::ServersAtMax => v.data_servers == Variant::MAX_SERVERS,
            Guard::ServersAtMin => v.data_servers == Variant::MIN_SERVERS,
        }
    }
}

/// Reconfiguration actions a rule can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "ADDCACHE")]
    AddCache,
    #[serde(rename = "REMOVECACHE")]
    RemoveCache,
    #[serde(rename = "ADDSERVER")]
    AddServer,
    #[serde(rename = "REMOVESERVER")]
    RemoveServer,
    #[serde(rename = "GROWCACHE")]
    GrowCache,
    #[serde(rename = "SHRINKCACHE")]
    ShrinkCache,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::AddCache => "ADDCACHE",
            Action::RemoveCache => "REMOVECACHE",
            Action::AddServer => "ADDSERVER",
            Action::RemoveServer => "REMOVESERVER",
            Action::GrowCache => "GROWCACHE",
            Action::ShrinkCache => "SHRINKCACHE",
        }
    }

    /// Apply with clamping; boundary actions never fault. Adding a cache
    /// over an existing one keeps the current size and validity.
    fn apply(self, v: &Variant, default_size: u32, default_validity: u32) -> Variant {
        let mut out = *v;
        match self {
            Action::AddCache => {
                if !out.cache_exists {
                    out.cache_exists = true;
                    out.cache_size = default_size;
                    out.cache_validity_s = default_validity;
                }
            }
            Action::RemoveCache => {
                out.cache_exists = false;
                out.cache_size = 0;
                out.cache_validity_s = 0;
            }
            Action::AddServer => {
                out.data_servers = (out.data_servers + 1).min(Variant::MAX_SERVERS);
            }
            Action::RemoveServer => {
                out.data_servers = out.data_servers.saturating_sub(1).max(Variant::MIN_SERVERS);
            }
            Action::GrowCache => {
                if out.cache_exists {
                    out.cache_size = (out.cache_size.saturating_mul(2)).min(Variant::MAX_CACHE_SIZE);
                }
            }
            Action::ShrinkCache => {
                if out.cache_exists {
                    out.cache_size = (out.cache_size / 2).max(Variant::MIN_CACHE_SIZE);
                }
            }
        }
        out
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One adaptation rule: WHEN property IS adjectives [IF guard]
/// THEN UTILITY OF action IS adjective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rule {
    pub property: usize,
    pub property_name: String,
    pub when: Vec<Adjective>,
    pub guard: Option<Guard>,
    pub action: Action,
    pub utility: Adjective,
}

/// Fixed numeric values the fuzzy engine assigns to utility adjectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityValues {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl Default for UtilityValues {
    fn default() -> Self {
        UtilityValues {
            low: 0.25,
            medium: 0.5,
            high: 0.75,
        }
    }
}

impl UtilityValues {
    pub fn value(&self, adj: Adjective) -> f64 {
        match adj {
            Adjective::Low => self.low,
            Adjective::Medium => self.medium,
            Adjective::High => self.high,
        }
    }
}

/// An ordered rule set plus the defuzzification parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptationPolicy {
    pub rules: Vec<Rule>,
    pub utility_threshold: f64,
    pub utility_values: UtilityValues,
    pub cache_default_size: u32,
    pub cache_default_validity: u32,
}

impl AdaptationPolicy {
    pub fn empty() -> Self {
        AdaptationPolicy {
            rules: Vec::new(),
            utility_threshold: 0.5,
            utility_values: UtilityValues::default(),
            cache_default_size: 128,
            cache_default_validity: 5,
        }
    }
}

/// Mutation seams applied during a run: rewrite the sensed instance before
/// fuzzification, or the computed adjectives after it.
pub trait Instrumentation: Sync {
    fn rewrite_instance(&self, inst: &ContextInstance) -> ContextInstance {
        inst.clone()
    }

    fn rewrite_adjective(&self, _property: usize, adjective: Adjective) -> Adjective {
        adjective
    }
}

/// Per-property argmax adjective and membership degree.
///
/// Normalized values are saturated into [0, 1], so instrumented sensors that
/// push readings out of range still fuzzify. Ties resolve toward the
/// adjective with the lower peak.
pub fn fuzzify(
    sets: &FuzzySets,
    schema: &ContextSchema,
    inst: &ContextInstance,
) -> Vec<(Adjective, f64)> {
    debug_assert_eq!(inst.len(), schema.arity());
    inst.values()
        .iter()
        .zip(schema.properties())
        .zip(&sets.per_property)
        .map(|((&v, p), adj_sets)| {
            let span = p.upper() - p.lower();
            let x = if span == 0.0 {
                0.0
            } else {
                ((v - p.lower()) / span).clamp(0.0, 1.0)
            };
            let mut best = Adjective::Low;
            let mut best_degree = adj_sets.low.eval(x);
            for adj in [Adjective::Medium, Adjective::High] {
                let degree = adj_sets.membership(adj).eval(x);
                if degree > best_degree {
                    best = adj;
                    best_degree = degree;
                }
            }
            (best, best_degree)
        })
        .collect()
}

/// Advance the variant by one context instance.
///
/// A rule is enabled when the fuzzified adjective of its property is in the
/// WHEN set and its guard holds on the current (possibly already updated
/// this step) state; it fires when utility x degree reaches the threshold.
/// Firing rules apply sequentially in source order.
pub fn step(
    policy: &AdaptationPolicy,
    sets: &FuzzySets,
    schema: &ContextSchema,
    state: &Variant,
    instance: &ContextInstance,
) -> (Variant, Vec<Action>) {
    step_instrumented(policy, sets, schema, state, instance, None)
}

pub fn step_instrumented(
    policy: &AdaptationPolicy,
    sets: &FuzzySets,
    schema: &ContextSchema,
    state: &Variant,
    instance: &ContextInstance,
    hooks: Option<&dyn Instrumentation>,
) -> (Variant, Vec<Action>) {
    let sensed = match hooks {
        Some(h) => h.rewrite_instance(instance),
        None => instance.clone(),
    };
    let mut fuzzified = fuzzify(sets, schema, &sensed);
    if let Some(h) = hooks {
        for (prop, entry) in fuzzified.iter_mut().enumerate() {
            entry.0 = h.rewrite_adjective(prop, entry.0);
        }
    }

    let mut current = *state;
    let mut fired = Vec::new();
    for rule in &policy.rules {
        let (adjective, degree) = fuzzified[rule.property];
        if !rule.when.contains(&adjective) {
            continue;
        }
        if let Some(guard) = rule.guard {
            if !guard.holds(&current) {
                continue;
            }
        }
        if policy.utility_values.value(rule.utility) * degree >= policy.utility_threshold {
            current = rule.action.apply(
                &current,
                policy.cache_default_size,
                policy.cache_default_validity,
            );
            fired.push(rule.action);
        }
    }
    debug_assert!(current.check().is_ok());
    (current, fired)
}

/// One recorded simulation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub instance: ContextInstance,
    pub variant: Variant,
    pub actions: Vec<Action>,
}

/// The reconfiguration trace of a run: one entry per injected instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariantFlow {
    pub steps: Vec<TraceStep>,
}

impl VariantFlow {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Fold [`step`] over a flow, recording each post-adaptation variant.
pub fn run(
    policy: &AdaptationPolicy,
    sets: &FuzzySets,
    schema: &ContextSchema,
    initial: &Variant,
    flow: &ContextFlow,
    hooks: Option<&dyn Instrumentation>,
) -> VariantFlow {
    let mut state = *initial;
    let mut steps = Vec::with_capacity(flow.len());
    for (i, instance) in flow.instances.iter().enumerate() {
        let (next, actions) = step_instrumented(policy, sets, schema, &state, instance, hooks);
        steps.push(TraceStep {
            step: i,
            instance: instance.clone(),
            variant: next,
            actions,
        });
        state = next;
    }
    VariantFlow { steps }
}

/// Outcome of comparing two traces on their post-state variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceComparison {
    pub equal: bool,
    pub first_divergence: Option<usize>,
}

/// Traces are equal when they have the same length and field-equal variants
/// at every step; fired actions are not part of the comparison basis.
pub fn trace_equal(a: &VariantFlow, b: &VariantFlow) -> TraceComparison {
    let common = a.len().min(b.len());
    for i in 0..common {
        if a.steps[i].variant != b.steps[i].variant {
            return TraceComparison {
                equal: false,
                first_divergence: Some(i),
            };
        }
    }
    if a.len() != b.len() {
        return TraceComparison {
            equal: false,
            first_divergence: Some(common),
        };
    }
    TraceComparison {
        equal: true,
        first_divergence: None,
    }
}

/// Write a trace as JSON lines.
pub fn write_trace(trace: &VariantFlow, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for step in &trace.steps {
        serde_json::to_writer(&mut out, step)
            .map_err(|e| Error::Internal(format!("trace serialization: {e}")))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&out)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a JSON-lines trace.
pub fn read_trace(path: &Path) -> Result<VariantFlow> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let step: TraceStep = serde_json::from_str(line).map_err(|e| {
            Error::parse(path.display().to_string(), i + 1, e.column(), e.to_string())
        })?;
        steps.push(step);
    }
    Ok(VariantFlow { steps })
}

/// Parse a policy file from disk.
pub fn load_policy(path: &Path, schema: &ContextSchema) -> Result<AdaptationPolicy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_policy(&text, schema).map_err(|e| match e {
        Error::Parse { line, col, msg, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            col,
            msg,
        },
        other => other,
    })
}

/// The reference adaptation policy shipped with the toolkit.
///
/// Cache deployment and sizing follow request dispersion, the data-server
/// pool follows request density, and cache sizing also follows file number.
/// The dispersion-high ADDCACHE rule carries a LOW utility, so it never
/// clears the threshold: it documents that adding a cache under high
/// dispersion is not considered useful.
pub const REFERENCE_POLICY: &str = "\
# Reference adaptation policy for the simulated adaptive web server.

THRESHOLD 0.5
DEFAULT CACHESIZE 128
DEFAULT CACHEVALIDITY 5

WHEN REQUEST_DISPERSION IS 'LOW' OR 'MEDIUM'
IF CACHE_ABSENT
THEN UTILITY OF ADDCACHE IS 'HIGH'

WHEN REQUEST_DISPERSION IS 'HIGH'
IF CACHE_PRESENT
THEN UTILITY OF REMOVECACHE IS 'HIGH'

WHEN REQUEST_DISPERSION IS 'HIGH'
IF CACHE_ABSENT
THEN UTILITY OF ADDCACHE IS 'LOW'

WHEN REQUEST_DISPERSION IS 'LOW'
IF CACHE_PRESENT
THEN UTILITY OF SHRINKCACHE IS 'HIGH'

WHEN REQUEST_DISPERSION IS 'MEDIUM'
IF CACHE_PRESENT
THEN UTILITY OF GROWCACHE IS 'HIGH'

WHEN REQUEST_DENSITY IS 'HIGH'
THEN UTILITY OF ADDSERVER IS 'HIGH'

WHEN REQUEST_DENSITY IS 'MEDIUM'
THEN UTILITY OF ADDSERVER IS 'LOW'

WHEN REQUEST_DENSITY IS 'LOW'
THEN UTILITY OF REMOVESERVER IS 'HIGH'

WHEN FILE_NUMBER IS 'HIGH'
IF CACHE_PRESENT
THEN UTILITY OF GROWCACHE IS 'HIGH'

WHEN FILE_NUMBER IS 'LOW'
IF CACHE_PRESENT
THEN UTILITY OF SHRINKCACHE IS 'HIGH'
";
