//! Pairwise coverage: the universe of constraint-feasible property-value
//! pairs and the C_L / C_G counts that feed the search objectives.
//!
//! The universe is a value object: `mark_covered` returns a new universe,
//! and the counting operations are pure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::context::{ContextFlow, ContextInstance, ContextSchema, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};

/// Identity of a pair inside a universe: (prop_a, grid_a, prop_b, grid_b)
/// with prop_a < prop_b.
pub type PairKey = (usize, u64, usize, u64);

/// A cross-property value pair, both values on their property grids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValuePair {
    pub prop_a: usize,
    pub val_a: f64,
    pub prop_b: usize,
    pub val_b: f64,
}

/// The set of feasible pairs for a criterion, plus covered/uncovered
/// bookkeeping.
#[derive(Debug, Clone)]
pub struct CoverageUniverse {
    criterion_id: String,
    schema: ContextSchema,
    pairs: BTreeMap<PairKey, ValuePair>,
    covered: BTreeSet<PairKey>,
}

/// Build the pairwise universe over the schema's coverage samples (or, when
/// absent, the full grids), keeping only pairs some valid full instance
/// realizes.
pub fn build_pairwise_universe(schema: &ContextSchema) -> Result<CoverageUniverse> {
    build_pairwise_universe_with_cap(schema, DEFAULT_ENUMERATION_CAP)
}

pub fn build_pairwise_universe_with_cap(
    schema: &ContextSchema,
    cap: u64,
) -> Result<CoverageUniverse> {
    let samples = sample_indices(schema)?;

    let mut candidate_count: u128 = 0;
    for a in 0..schema.arity() {
        for b in (a + 1)..schema.arity() {
            candidate_count += samples[a].len() as u128 * samples[b].len() as u128;
        }
    }
    if candidate_count > cap as u128 {
        return Err(Error::Capacity(format!(
            "pairwise universe of {candidate_count} candidate pairs exceeds the cap of {cap}; \
             provide coverage_samples to coarsen the grids"
        )));
    }

    let mut pairs = BTreeMap::new();
    for a in 0..schema.arity() {
        for b in (a + 1)..schema.arity() {
            for &ia in &samples[a] {
                for &ib in &samples[b] {
                    if pair_feasible(schema, &samples, a, ia, b, ib) {
                        let key = (a, ia, b, ib);
                        pairs.insert(
                            key,
                            ValuePair {
                                prop_a: a,
                                val_a: schema.property(a).value_at(ia),
                                prop_b: b,
                                val_b: schema.property(b).value_at(ib),
                            },
                        );
                    }
                }
            }
        }
    }

    Ok(CoverageUniverse {
        criterion_id: "pairwise".to_string(),
        schema: schema.clone(),
        pairs,
        covered: BTreeSet::new(),
    })
}

/// Per-property grid indices to draw pair values from.
fn sample_indices(schema: &ContextSchema) -> Result<Vec<Vec<u64>>> {
    let mut out = Vec::with_capacity(schema.arity());
    for p in schema.properties() {
        let indices = match schema.coverage_samples().and_then(|s| s.get(p.name())) {
            Some(values) => values
                .iter()
                .map(|&v| {
                    p.grid_index(v).ok_or_else(|| {
                        Error::Config(format!(
                            "coverage sample {v} for `{}` is off-grid",
                            p.name()
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => (0..p.cardinality()).collect(),
        };
        out.push(indices);
    }
    Ok(out)
}

/// Whether some valid full instance realizes (a=ia, b=ib).
///
/// Constraints that mention only these two properties are checked by direct
/// projection; anything else triggers a witness search over the remaining
/// properties' sampled values.
fn pair_feasible(
    schema: &ContextSchema,
    samples: &[Vec<u64>],
    a: usize,
    ia: u64,
    b: usize,
    ib: u64,
) -> bool {
    let mut values: Vec<f64> = schema.properties().iter().map(|p| p.lower()).collect();
    values[a] = schema.property(a).value_at(ia);
    values[b] = schema.property(b).value_at(ib);

    let mut needs_witness = false;
    for c in schema.constraints() {
        let mentions = c.mentions();
        if mentions.iter().all(|&m| m == a || m == b) {
            if !c.eval(&values) {
                return false;
            }
        } else {
            needs_witness = true;
        }
    }
    if !needs_witness {
        return true;
    }

    let remaining: Vec<usize> = (0..schema.arity()).filter(|&p| p != a && p != b).collect();
    witness_search(schema, samples, &remaining, 0, &mut values)
}

fn witness_search(
    schema: &ContextSchema,
    samples: &[Vec<u64>],
    remaining: &[usize],
    depth: usize,
    values: &mut Vec<f64>,
) -> bool {
    if depth == remaining.len() {
        return schema.constraints().iter().all(|c| c.eval(values));
    }
    let prop = remaining[depth];
    for &idx in &samples[prop] {
        values[prop] = schema.property(prop).value_at(idx);
        if witness_search(schema, samples, remaining, depth + 1, values) {
            return true;
        }
    }
    false
}

impl CoverageUniverse {
    pub fn criterion_id(&self) -> &str {
        &self.criterion_id
    }

    pub fn schema(&self) -> &ContextSchema {
        &self.schema
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn covered_count(&self) -> usize {
        self.covered.len()
    }

    pub fn uncovered_count(&self) -> usize {
        self.pairs.len() - self.covered.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &ValuePair> {
        self.pairs.values()
    }

    pub fn contains(&self, key: &PairKey) -> bool {
        self.pairs.contains_key(key)
    }

    pub fn is_covered(&self, key: &PairKey) -> bool {
        self.covered.contains(key)
    }

    /// Universe pairs realized by one instance (at most one per property
    /// pair). Off-sample values simply match nothing.
    pub fn instance_pairs(&self, inst: &ContextInstance) -> Vec<PairKey> {
        let mut out = Vec::new();
        let Some(key) = inst.grid_key(&self.schema) else {
            return out;
        };
        for a in 0..key.len() {
            for b in (a + 1)..key.len() {
                let pair = (a, key[a], b, key[b]);
                if self.pairs.contains_key(&pair) {
                    out.push(pair);
                }
            }
        }
        out
    }

    /// Distinct universe pairs realized by a flow.
    pub fn realized_keys(&self, flow: &ContextFlow) -> BTreeSet<PairKey> {
        let mut keys = BTreeSet::new();
        for inst in &flow.instances {
            keys.extend(self.instance_pairs(inst));
        }
        keys
    }

    /// C_L: number of universe pairs realized by at least one instance of
    /// the flow. Does not mutate the universe.
    pub fn coverage_local(&self, flow: &ContextFlow) -> usize {
        self.realized_keys(flow).len()
    }

    /// C_L restricted to pairs not yet covered.
    pub fn coverage_local_uncovered(&self, flow: &ContextFlow) -> usize {
        self.realized_keys(flow)
            .iter()
            .filter(|k| !self.covered.contains(*k))
            .count()
    }

    /// C_G: pairs covered by the union of all instances across the flows.
    pub fn coverage_global(&self, flows: &[ContextFlow]) -> usize {
        let mut keys = BTreeSet::new();
        for flow in flows {
            keys.extend(self.realized_keys(flow));
        }
        keys.len()
    }

    /// A new universe with the flows' pairs added to the covered set.
    /// Idempotent; never shrinks the covered set.
    pub fn mark_covered(&self, flows: &[ContextFlow]) -> CoverageUniverse {
        let mut out = self.clone();
        for flow in flows {
            out.covered.extend(out.realized_keys(flow));
        }
        out
    }

    /// CSV export: prop_a, val_a, prop_b, val_b, covered.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("prop_a,val_a,prop_b,val_b,covered\n");
        for (key, pair) in &self.pairs {
            let covered = u8::from(self.covered.contains(key));
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.schema.property(pair.prop_a).name(),
                pair.val_a,
                self.schema.property(pair.prop_b).name(),
                pair.val_b,
                covered
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{PropertyKind, PropertySpec};
    use crate::test_util::{inst, webserver_schema_sampled};

    fn two_binary_props() -> ContextSchema {
        ContextSchema::new(
            vec![
                PropertySpec::new("x", PropertyKind::Integer, 0.0, 1.0, 1.0).unwrap(),
                PropertySpec::new("y", PropertyKind::Integer, 0.0, 1.0, 1.0).unwrap(),
            ],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_pairs_are_the_cross_product() {
        let universe = build_pairwise_universe(&two_binary_props()).unwrap();
        assert_eq!(universe.pair_count(), 4);
        assert_eq!(universe.criterion_id(), "pairwise");
    }

    #[test]
    fn constrained_pairs_match_brute_force() {
        let schema = ContextSchema::new(
            vec![
                PropertySpec::new("p1", PropertyKind::Integer, 1.0, 4.0, 1.0).unwrap(),
                PropertySpec::new("p2", PropertyKind::Integer, 1.0, 4.0, 1.0).unwrap(),
            ],
            &["p2 <= p1".to_string()],
        )
        .unwrap();
        let universe = build_pairwise_universe(&schema).unwrap();
        // Oracle: enumerate the 16 candidate pairs and filter.
        let mut oracle = 0;
        for p1 in 1..=4 {
            for p2 in 1..=4 {
                if p2 <= p1 {
                    oracle += 1;
                }
            }
        }
        assert_eq!(universe.pair_count(), oracle);
    }

    #[test]
    fn infeasible_sample_pair_is_excluded() {
        let universe = build_pairwise_universe(&webserver_schema_sampled()).unwrap();
        // density=1 cannot pair with files=5 because file_number <= request_density.
        assert!(!universe.contains(&(0, 0, 1, 4)));
        // density=10, files=5 is fine.
        assert!(universe.contains(&(0, 9, 1, 4)));
        // 10 (density, files) + 12 (density, dispersion) + 12 (files, dispersion).
        assert_eq!(universe.pair_count(), 34);
    }

    #[test]
    fn every_kept_pair_has_a_valid_witness() {
        let schema = webserver_schema_sampled();
        let universe = build_pairwise_universe(&schema).unwrap();
        let samples = schema.coverage_samples().unwrap();
        let densities = &samples["request_density"];
        let files = &samples["file_number"];
        let dispersions = &samples["request_dispersion"];
        for pair in universe.pairs() {
            let mut witnessed = false;
            for &d in densities {
                for &f in files {
                    for &p in dispersions {
                        let candidate = [d, f, p];
                        if (candidate[pair.prop_a] - pair.val_a).abs() > 1e-9
                            || (candidate[pair.prop_b] - pair.val_b).abs() > 1e-9
                        {
                            continue;
                        }
                        let report = crate::context::validate_instance(
                            &schema,
                            &inst(&candidate),
                        )
                        .unwrap();
                        if report.is_valid() {
                            witnessed = true;
                        }
                    }
                }
            }
            assert!(witnessed, "pair {pair:?} has no valid witness");
        }
    }

    #[test]
    fn single_instance_covers_its_pairs() {
        let universe = build_pairwise_universe(&webserver_schema_sampled()).unwrap();
        let flow = ContextFlow::new("f", vec![inst(&[1.0, 1.0, 0.0])]);
        assert_eq!(universe.coverage_local(&flow), 3);
    }

    #[test]
    fn off_sample_instances_cover_nothing() {
        let universe = build_pairwise_universe(&webserver_schema_sampled()).unwrap();
        let flow = ContextFlow::new("f", vec![inst(&[7.0, 3.0, 0.2])]);
        assert_eq!(universe.coverage_local(&flow), 0);
    }

    #[test]
    fn concatenation_is_monotone() {
        let universe = build_pairwise_universe(&webserver_schema_sampled()).unwrap();
        let f1 = ContextFlow::new("f1", vec![inst(&[1.0, 1.0, 0.0])]);
        let f2 = ContextFlow::new("f2", vec![inst(&[1000.0, 500.0, 1.0])]);
        let mut joined = f1.instances.clone();
        joined.extend(f2.instances.clone());
        let cat = ContextFlow::new("cat", joined);
        assert!(
            universe.coverage_local(&cat)
                >= universe.coverage_local(&f1).max(universe.coverage_local(&f2))
        );
    }

    #[test]
    fn global_coverage_examples() {
        let universe = build_pairwise_universe(&webserver_schema_sampled()).unwrap();
        assert_eq!(universe.coverage_global(&[]), 0);

        let f = ContextFlow::new("f", vec![inst(&[10.0, 5.0, 0.5])]);
        assert_eq!(
            universe.coverage_global(std::slice::from_ref(&f)),
            universe.coverage_local(&f)
        );

        // Disjoint pair footprints add up.
        let f1 = ContextFlow::new("f1", vec![inst(&[1.0, 1.0, 0.0])]);
        let f2 = ContextFlow::new("f2", vec![inst(&[1000.0, 500.0, 1.0])]);
        assert_eq!(
            universe.coverage_global(&[f1.clone(), f2.clone()]),
            universe.coverage_local(&f1) + universe.coverage_local(&f2)
        );
    }

    #[test]
    fn mark_covered_is_idempotent_and_monotone() {
        let universe = build_pairwise_universe(&webserver_schema_sampled()).unwrap();
        let f = ContextFlow::new("f", vec![inst(&[10.0, 5.0, 0.5])]);
        let once = universe.mark_covered(std::slice::from_ref(&f));
        let twice = once.mark_covered(std::slice::from_ref(&f));
        assert_eq!(once.covered_count(), twice.covered_count());
        assert!(once.covered_count() >= universe.covered_count());
        // After marking, the uncovered view of the same flow is empty.
        assert_eq!(once.coverage_local_uncovered(&f), 0);
    }

    #[test]
    fn cap_exceeded_suggests_samples() {
        let schema = crate::test_util::webserver_schema(); // full grids
        let err = build_pairwise_universe_with_cap(&schema, 1000).unwrap_err();
        match err {
            Error::Capacity(msg) => assert!(msg.contains("coverage_samples")),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }
}
