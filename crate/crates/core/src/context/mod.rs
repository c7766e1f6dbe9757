//! Environment model: property domains, context instances, context flows,
//! validity constraints and space-size accounting.
//!
//! Schemas, instances and flows are immutable after construction; every
//! operation here is a pure function, safe to share across threads.

mod constraint;
pub mod io;

use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

pub use constraint::{Constraint, ConstraintKind};

use crate::error::{Error, Result};
use crate::metric::{EpConfig, OriginSpec};

/// Tolerance for grid alignment: `(v - lower) / step` must be within this
/// distance of an integer.
pub const GRID_TOL: f64 = 1e-9;

/// Default cap on exhaustive enumerations (exact space counts, pair universes).
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Integer,
    Real,
}

/// A bounded, discretized environmental property.
#[derive(Debug, Clone, Serialize)]
pub struct PropertySpec {
    name: String,
    kind: PropertyKind,
    lower: f64,
    upper: f64,
    step: f64,
}

impl PropertySpec {
    pub fn new(name: &str, kind: PropertyKind, lower: f64, upper: f64, step: f64) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::Config("property name must not be empty".into()));
        }
        if !lower.is_finite() || !upper.is_finite() || !step.is_finite() {
            return Err(Error::Config(format!("property `{name}`: bounds and step must be finite")));
        }
        if lower > upper {
            return Err(Error::Config(format!(
                "property `{name}`: lower {lower} exceeds upper {upper}"
            )));
        }
        if step <= 0.0 {
            return Err(Error::Config(format!("property `{name}`: step must be positive")));
        }
        let ratio = (upper - lower) / step;
        if (ratio - ratio.round()).abs() > GRID_TOL {
            return Err(Error::Config(format!(
                "property `{name}`: (upper - lower) is not a multiple of step"
            )));
        }
        if kind == PropertyKind::Integer
            && (lower.fract() != 0.0 || upper.fract() != 0.0 || step.fract() != 0.0)
        {
            return Err(Error::Config(format!(
                "property `{name}`: integer properties need integral bounds and step"
            )));
        }
        Ok(PropertySpec {
            name: name.to_string(),
            kind,
            lower,
            upper,
            step,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> PropertyKind {
        self.kind
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid points in the domain.
    pub fn cardinality(&self) -> u64 {
        ((self.upper - self.lower) / self.step).round() as u64 + 1
    }

    /// Value at grid index `idx` (not bounds-checked against cardinality).
    pub fn value_at(&self, idx: u64) -> f64 {
        self.lower + idx as f64 * self.step
    }

    /// Grid index of `v`, or `None` when `v` is off-grid or out of bounds.
    pub fn grid_index(&self, v: f64) -> Option<u64> {
        if !v.is_finite() {
            return None;
        }
        let ratio = (v - self.lower) / self.step;
        let r = ratio.round();
        if (ratio - r).abs() > GRID_TOL || r < 0.0 || r as u64 >= self.cardinality() {
            return None;
        }
        Some(r as u64)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.grid_index(v).is_some()
    }
}

/// The typed environment model: ordered properties, validity constraints,
/// the distance origin and optional profiling / coverage metadata.
#[derive(Debug, Clone)]
pub struct ContextSchema {
    properties: Vec<PropertySpec>,
    constraints: Vec<Constraint>,
    origin: OriginSpec,
    ep: Option<EpConfig>,
    coverage_samples: Option<BTreeMap<String, Vec<f64>>>,
}

impl ContextSchema {
    pub fn new(properties: Vec<PropertySpec>, constraint_exprs: &[String]) -> Result<Self> {
        if properties.is_empty() {
            return Err(Error::Config("schema needs at least one property".into()));
        }
        for (i, p) in properties.iter().enumerate() {
            if properties[..i].iter().any(|q| q.name() == p.name()) {
                return Err(Error::Config(format!("duplicate property name `{}`", p.name())));
            }
        }
        let constraints = constraint_exprs
            .iter()
            .map(|e| Constraint::parse(e, &properties))
            .collect::<Result<Vec<_>>>()?;
        Ok(ContextSchema {
            properties,
            constraints,
            origin: OriginSpec::default(),
            ep: None,
            coverage_samples: None,
        })
    }

    pub fn with_origin(mut self, origin: OriginSpec) -> Result<Self> {
        origin.check(&self)?;
        self.origin = origin;
        Ok(self)
    }

    pub fn with_ep(mut self, ep: EpConfig) -> Result<Self> {
        ep.check()?;
        self.ep = Some(ep);
        Ok(self)
    }

    /// Attach per-property coverage value samples; each value must lie on
    /// the property's grid.
    pub fn with_coverage_samples(mut self, samples: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        for (name, values) in &samples {
            let prop = self
                .property_by_name(name)
                .ok_or_else(|| Error::Config(format!("coverage_samples: unknown property `{name}`")))?;
            if values.is_empty() {
                return Err(Error::Config(format!("coverage_samples: empty list for `{name}`")));
            }
            for &v in values {
                if prop.grid_index(v).is_none() {
                    return Err(Error::Config(format!(
                        "coverage_samples: value {v} for `{name}` is off-grid"
                    )));
                }
            }
        }
        self.coverage_samples = Some(samples);
        Ok(self)
    }

    pub fn properties(&self) -> &[PropertySpec] {
        &self.properties
    }

    pub fn property(&self, idx: usize) -> &PropertySpec {
        &self.properties[idx]
    }

    pub fn property_by_name(&self, name: &str) -> Option<&PropertySpec> {
        self.properties.iter().find(|p| p.name() == name)
    }

    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name() == name)
    }

    pub fn arity(&self) -> usize {
        self.properties.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn origin(&self) -> &OriginSpec {
        &self.origin
    }

    pub fn ep(&self) -> Option<&EpConfig> {
        self.ep.as_ref()
    }

    pub fn coverage_samples(&self) -> Option<&BTreeMap<String, Vec<f64>>> {
        self.coverage_samples.as_ref()
    }
}

/// One concrete environmental condition: a tuple of values, one per property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextInstance(pub Vec<f64>);

impl ContextInstance {
    pub fn new(values: Vec<f64>) -> Self {
        ContextInstance(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The tuple of grid indices, or `None` when any value is off-grid.
    pub fn grid_key(&self, schema: &ContextSchema) -> Option<Vec<u64>> {
        if self.0.len() != schema.arity() {
            return None;
        }
        self.0
            .iter()
            .zip(schema.properties())
            .map(|(&v, p)| p.grid_index(v))
            .collect()
    }
}

impl From<Vec<f64>> for ContextInstance {
    fn from(v: Vec<f64>) -> Self {
        ContextInstance(v)
    }
}

/// A time-ordered sequence of context instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFlow {
    pub id: String,
    pub instances: Vec<ContextInstance>,
}

impl ContextFlow {
    pub fn new(id: impl Into<String>, instances: Vec<ContextInstance>) -> Self {
        ContextFlow {
            id: id.into(),
            instances,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Same instances in reverse order, under a derived id.
    pub fn reversed(&self) -> ContextFlow {
        ContextFlow {
            id: format!("{}_rev", self.id),
            instances: self.instances.iter().rev().cloned().collect(),
        }
    }
}

/// A single reason an instance is invalid.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutOfBounds { property: String, value: f64 },
    OffGrid { property: String, value: f64 },
    Constraint { expression: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::OutOfBounds { property, value } => {
                write!(f, "value {value} out of bounds for `{property}`")
            }
            Violation::OffGrid { property, value } => {
                write!(f, "value {value} off the grid of `{property}`")
            }
            Violation::Constraint { expression } => write!(f, "violates `{expression}`"),
        }
    }
}

/// Outcome of validating an instance: valid, or the full violation list.
#[derive(Debug, Clone, Serialize)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check bounds, grid alignment and every constraint.
///
/// An arity mismatch is a structural error, not invalidity.
pub fn validate_instance(schema: &ContextSchema, inst: &ContextInstance) -> Result<ValidityReport> {
    if inst.len() != schema.arity() {
        return Err(Error::Precondition(format!(
            "instance has {} values but schema has {} properties",
            inst.len(),
            schema.arity()
        )));
    }
    let mut violations = Vec::new();
    for (&v, p) in inst.values().iter().zip(schema.properties()) {
        if !v.is_finite() || v < p.lower() - GRID_TOL || v > p.upper() + GRID_TOL {
            violations.push(Violation::OutOfBounds {
                property: p.name().to_string(),
                value: v,
            });
        } else if p.grid_index(v).is_none() {
            violations.push(Violation::OffGrid {
                property: p.name().to_string(),
                value: v,
            });
        }
    }
    for c in schema.constraints() {
        if !c.eval(inst.values()) {
            violations.push(Violation::Constraint {
                expression: c.text().to_string(),
            });
        }
    }
    Ok(ValidityReport { violations })
}

/// Check that a flow is non-empty and that every instance is valid.
pub fn validate_flow(schema: &ContextSchema, flow: &ContextFlow) -> Result<()> {
    if flow.is_empty() {
        return Err(Error::Precondition(format!("flow `{}` is empty", flow.id)));
    }
    for (i, inst) in flow.instances.iter().enumerate() {
        let report = validate_instance(schema, inst)?;
        if !report.is_valid() {
            let detail = report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Constraint(format!(
                "flow `{}` instance {i}: {detail}",
                flow.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceMode {
    /// Product of property cardinalities, constraints ignored.
    Unconstrained,
    /// Enumerate the grid and count constraint-satisfying instances.
    Exact,
}

/// Number of context instances in the schema's space.
pub fn context_space_size(schema: &ContextSchema, mode: SpaceMode) -> Result<BigUint> {
    context_space_size_with_cap(schema, mode, DEFAULT_ENUMERATION_CAP)
}

pub fn context_space_size_with_cap(
    schema: &ContextSchema,
    mode: SpaceMode,
    cap: u64,
) -> Result<BigUint> {
    let unconstrained: BigUint = schema
        .properties()
        .iter()
        .map(|p| BigUint::from(p.cardinality()))
        .product();
    match mode {
        SpaceMode::Unconstrained => Ok(unconstrained),
        SpaceMode::Exact => {
            if unconstrained > BigUint::from(cap) {
                return Err(Error::Capacity(format!(
                    "exact space enumeration of {unconstrained} instances exceeds the cap of {cap}"
                )));
            }
            let mut count: u64 = 0;
            let mut values = vec![0.0; schema.arity()];
            for_each_grid_point(schema, &mut values, 0, &mut |vals| {
                if schema.constraints().iter().all(|c| c.eval(vals)) {
                    count += 1;
                }
            });
            Ok(BigUint::from(count))
        }
    }
}

/// Number of ordered instance sequences of the given length:
/// `|space|^flow_length` over the unconstrained space.
pub fn flow_space_size(schema: &ContextSchema, flow_length: u64) -> Result<BigUint> {
    if flow_length < 1 {
        return Err(Error::Precondition("flow length must be at least 1".into()));
    }
    let exp = u32::try_from(flow_length)
        .map_err(|_| Error::Capacity(format!("flow length {flow_length} too large to exponentiate")))?;
    let base = context_space_size(schema, SpaceMode::Unconstrained)?;
    Ok(base.pow(exp))
}

/// Depth-first walk over the full grid, invoking `f` on each value tuple.
pub(crate) fn for_each_grid_point(
    schema: &ContextSchema,
    values: &mut Vec<f64>,
    depth: usize,
    f: &mut impl FnMut(&[f64]),
) {
    if depth == schema.arity() {
        f(values);
        return;
    }
    let p = schema.property(depth);
    for idx in 0..p.cardinality() {
        values[depth] = p.value_at(idx);
        for_each_grid_point(schema, values, depth + 1, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::webserver_schema;

    #[test]
    fn property_cardinality_counts_grid_points() {
        let p = PropertySpec::new("density", PropertyKind::Integer, 1.0, 1000.0, 1.0).unwrap();
        assert_eq!(p.cardinality(), 1000);
        // Period 0.1 on [0, 1] gives 11 grid points.
        let p = PropertySpec::new("dispersion", PropertyKind::Real, 0.0, 1.0, 0.1).unwrap();
        assert_eq!(p.cardinality(), 11);
        assert_eq!(p.grid_index(0.5), Some(5));
        assert_eq!(p.grid_index(0.55), None);
    }

    #[test]
    fn property_spec_rejects_bad_domains() {
        assert!(PropertySpec::new("p", PropertyKind::Real, 1.0, 0.0, 0.1).is_err());
        assert!(PropertySpec::new("p", PropertyKind::Real, 0.0, 1.0, 0.0).is_err());
        assert!(PropertySpec::new("p", PropertyKind::Real, 0.0, 1.0, 0.3).is_err());
        assert!(PropertySpec::new("p", PropertyKind::Integer, 0.5, 2.5, 1.0).is_err());
    }

    #[test]
    fn webserver_instance_examples() {
        let schema = webserver_schema();
        let ok = validate_instance(&schema, &ContextInstance::new(vec![12.0, 3.0, 0.5])).unwrap();
        assert!(ok.is_valid());

        let bad = validate_instance(&schema, &ContextInstance::new(vec![5.0, 100.0, 1.0])).unwrap();
        assert!(!bad.is_valid());
        assert!(matches!(bad.violations[0], Violation::Constraint { .. }));

        let lower = validate_instance(&schema, &ContextInstance::new(vec![1.0, 1.0, 0.0])).unwrap();
        assert!(lower.is_valid());
    }

    #[test]
    fn arity_mismatch_is_structural() {
        let schema = webserver_schema();
        let err = validate_instance(&schema, &ContextInstance::new(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn validation_is_pure() {
        let schema = webserver_schema();
        let inst = ContextInstance::new(vec![12.0, 3.0, 0.5]);
        let a = validate_instance(&schema, &inst).unwrap().is_valid();
        let b = validate_instance(&schema, &inst).unwrap().is_valid();
        assert_eq!(a, b);
    }

    fn schema_with_cardinalities() -> ContextSchema {
        // 1000 x 10 x 500 grid points.
        ContextSchema::new(
            vec![
                PropertySpec::new("a", PropertyKind::Integer, 1.0, 1000.0, 1.0).unwrap(),
                PropertySpec::new("b", PropertyKind::Real, 0.1, 1.0, 0.1).unwrap(),
                PropertySpec::new("c", PropertyKind::Integer, 1.0, 500.0, 1.0).unwrap(),
            ],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_space_is_cardinality_product() {
        let schema = schema_with_cardinalities();
        let size = context_space_size(&schema, SpaceMode::Unconstrained).unwrap();
        assert_eq!(size, BigUint::from(5_000_000u64));
    }

    #[test]
    fn boolean_like_space() {
        let schema = ContextSchema::new(
            vec![PropertySpec::new("flag", PropertyKind::Integer, 0.0, 1.0, 1.0).unwrap()],
            &[],
        )
        .unwrap();
        assert_eq!(
            context_space_size(&schema, SpaceMode::Unconstrained).unwrap(),
            BigUint::from(2u32)
        );
    }

    #[test]
    fn exact_space_counts_constrained_grid() {
        // Brute-force oracle over the 16 grid points: p2 <= p1 leaves 10.
        let schema = ContextSchema::new(
            vec![
                PropertySpec::new("p1", PropertyKind::Integer, 1.0, 4.0, 1.0).unwrap(),
                PropertySpec::new("p2", PropertyKind::Integer, 1.0, 4.0, 1.0).unwrap(),
            ],
            &["p2 <= p1".to_string()],
        )
        .unwrap();
        let mut oracle = 0u64;
        for p1 in 1..=4u64 {
            for p2 in 1..=4u64 {
                if p2 <= p1 {
                    oracle += 1;
                }
            }
        }
        assert_eq!(oracle, 10);
        assert_eq!(
            context_space_size(&schema, SpaceMode::Exact).unwrap(),
            BigUint::from(oracle)
        );
    }

    #[test]
    fn exact_space_with_conditional_constraint() {
        let schema = ContextSchema::new(
            vec![
                PropertySpec::new("p1", PropertyKind::Integer, 1.0, 4.0, 1.0).unwrap(),
                PropertySpec::new("p2", PropertyKind::Integer, 1.0, 4.0, 1.0).unwrap(),
            ],
            &["IF p1 >= 3 THEN p2 >= p1 - 1".to_string()],
        )
        .unwrap();
        let mut oracle = 0u64;
        for p1 in 1..=4i32 {
            for p2 in 1..=4i32 {
                if p1 < 3 || p2 >= p1 - 1 {
                    oracle += 1;
                }
            }
        }
        assert_eq!(
            context_space_size(&schema, SpaceMode::Exact).unwrap(),
            BigUint::from(oracle)
        );
    }

    #[test]
    fn exact_space_over_cap_errors() {
        let schema = schema_with_cardinalities();
        let err = context_space_size_with_cap(&schema, SpaceMode::Exact, 1000).unwrap_err();
        match err {
            Error::Capacity(msg) => assert!(msg.contains("1000")),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn exact_never_exceeds_unconstrained() {
        let schema = ContextSchema::new(
            vec![
                PropertySpec::new("p1", PropertyKind::Integer, 1.0, 6.0, 1.0).unwrap(),
                PropertySpec::new("p2", PropertyKind::Integer, 1.0, 6.0, 1.0).unwrap(),
            ],
            &["p2 <= p1".to_string()],
        )
        .unwrap();
        let exact = context_space_size(&schema, SpaceMode::Exact).unwrap();
        let unconstrained = context_space_size(&schema, SpaceMode::Unconstrained).unwrap();
        assert!(exact <= unconstrained);

        let free = ContextSchema::new(
            vec![PropertySpec::new("p1", PropertyKind::Integer, 1.0, 6.0, 1.0).unwrap()],
            &[],
        )
        .unwrap();
        assert_eq!(
            context_space_size(&free, SpaceMode::Exact).unwrap(),
            context_space_size(&free, SpaceMode::Unconstrained).unwrap()
        );
    }

    #[test]
    fn flow_space_sizes() {
        let two = ContextSchema::new(
            vec![PropertySpec::new("flag", PropertyKind::Integer, 0.0, 1.0, 1.0).unwrap()],
            &[],
        )
        .unwrap();
        assert_eq!(flow_space_size(&two, 3).unwrap(), BigUint::from(8u32));

        let ten = ContextSchema::new(
            vec![PropertySpec::new("d", PropertyKind::Integer, 1.0, 10.0, 1.0).unwrap()],
            &[],
        )
        .unwrap();
        // Oracle: enumerate all ordered pairs of a 10-value space.
        assert_eq!(flow_space_size(&ten, 2).unwrap(), BigUint::from(100u32));

        let million = ContextSchema::new(
            vec![
                PropertySpec::new("a", PropertyKind::Integer, 1.0, 1000.0, 1.0).unwrap(),
                PropertySpec::new("b", PropertyKind::Integer, 1.0, 1000.0, 1.0).unwrap(),
            ],
            &[],
        )
        .unwrap();
        assert_eq!(
            flow_space_size(&million, 2).unwrap(),
            BigUint::from(10u64.pow(12))
        );
        assert!(flow_space_size(&million, 0).is_err());
    }
}
