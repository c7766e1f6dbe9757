//! Fault injection for the adaptation-policy realization: mutant
//! enumeration across four fault groups, suite execution against original
//! and mutant policies, kill matrices and summary reports.
//!
//! Transforms are declarative edits interpreted by the simulator's
//! instrumentation seams (F1, F2) or applied as policy edits (F3, F4); the
//! policy source text is never rewritten.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{ContextFlow, ContextInstance, ContextSchema};
use crate::error::{Error, Result};
use crate::policy::{
    run, trace_equal, AdaptationPolicy, Adjective, FuzzySets, Instrumentation, Variant,
    VariantFlow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultGroup {
    F1,
    F2,
    F3,
    F4,
}

impl FaultGroup {
    pub const ALL: [FaultGroup; 4] = [FaultGroup::F1, FaultGroup::F2, FaultGroup::F3, FaultGroup::F4];

    pub fn as_str(&self) -> &'static str {
        match self {
            FaultGroup::F1 => "F1",
            FaultGroup::F2 => "F2",
            FaultGroup::F3 => "F3",
            FaultGroup::F4 => "F4",
        }
    }
}

/// An adjective slot inside a rule: one WHEN occurrence or the THEN slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    When(usize),
    Then,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    pub rule: usize,
    pub slot: Slot,
}

/// The declarative edit a mutant applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// No-op fixture; must survive every AEQ.
    Identity,
    /// F1: exchange two property values before fuzzification.
    SwapProperties { a: usize, b: usize },
    /// F1: scale one property value before fuzzification.
    ScaleProperty { prop: usize, factor: f64 },
    /// F2: substitute adjectives of one property after fuzzification.
    AdjectiveMap {
        prop: usize,
        map: Vec<(Adjective, Adjective)>,
    },
    /// F3: replace the adjective in one rule slot.
    ReplaceSlot { slot: SlotRef, to: Adjective },
    /// F4: swap the adjectives of two rule slots.
    SwapSlots { a: SlotRef, b: SlotRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantSpec {
    pub id: String,
    pub group: FaultGroup,
    pub description: String,
    pub transform: Transform,
}

/// Per-group caps, or the full enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupPlan {
    All(String),
    Count(usize),
}

impl GroupPlan {
    fn cap(&self) -> Result<Option<usize>> {
        match self {
            GroupPlan::Count(n) => Ok(Some(*n)),
            GroupPlan::All(s) if s == "all" => Ok(None),
            GroupPlan::All(s) => Err(Error::Config(format!(
                "group plan must be a count or \"all\", got {s:?}"
            ))),
        }
    }
}

/// A mutant plan: per-group counts, the full small enumeration, or an
/// explicit mutant list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MutantPlan {
    Keyword(String),
    Counts {
        #[serde(rename = "F1")]
        f1: GroupPlan,
        #[serde(rename = "F2")]
        f2: GroupPlan,
        #[serde(rename = "F3")]
        f3: GroupPlan,
        #[serde(rename = "F4")]
        f4: GroupPlan,
    },
    Explicit(Vec<MutantSpec>),
}

impl MutantPlan {
    /// The default scaled plan: 3 + 12 + 15 + 15 = 45 mutants.
    pub fn default_scaled() -> Self {
        MutantPlan::Counts {
            f1: GroupPlan::Count(3),
            f2: GroupPlan::Count(12),
            f3: GroupPlan::Count(15),
            f4: GroupPlan::Count(15),
        }
    }

    pub fn exhaustive_small() -> Self {
        MutantPlan::Keyword("exhaustive-small".to_string())
    }
}

fn slot_adjective(policy: &AdaptationPolicy, slot: &SlotRef) -> Result<Adjective> {
    let rule = policy
        .rules
        .get(slot.rule)
        .ok_or_else(|| Error::Config(format!("mutant references missing rule {}", slot.rule)))?;
    match slot.slot {
        Slot::When(i) => rule
            .when
            .get(i)
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "mutant references missing WHEN slot {i} of rule {}",
                    slot.rule
                ))
            }),
        Slot::Then => Ok(rule.utility),
    }
}

fn slot_label(slot: &Slot) -> String {
    match slot {
        Slot::When(i) => format!("when{i}"),
        Slot::Then => "then".to_string(),
    }
}

fn enumerate_group(
    policy: &AdaptationPolicy,
    schema: &ContextSchema,
    group: FaultGroup,
) -> Vec<MutantSpec> {
    let mut out = Vec::new();
    match group {
        FaultGroup::F1 => {
            for a in 0..schema.arity() {
                for b in (a + 1)..schema.arity() {
                    out.push(MutantSpec {
                        id: format!(
                            "f1_swap_{}_{}",
                            schema.property(a).name(),
                            schema.property(b).name()
                        ),
                        group,
                        description: format!(
                            "sensor permutes {} and {}",
                            schema.property(a).name(),
                            schema.property(b).name()
                        ),
                        transform: Transform::SwapProperties { a, b },
                    });
                }
            }
            for prop in 0..schema.arity() {
                for factor in [2.0, 0.5] {
                    out.push(MutantSpec {
                        id: format!("f1_scale_{}_x{}", schema.property(prop).name(), factor),
                        group,
                        description: format!(
                            "sensor scales {} by {factor}",
                            schema.property(prop).name()
                        ),
                        transform: Transform::ScaleProperty { prop, factor },
                    });
                }
            }
        }
        FaultGroup::F2 => {
            for prop in 0..schema.arity() {
                let name = schema.property(prop).name();
                for from in Adjective::ALL {
                    for to in Adjective::ALL {
                        if from == to {
                            continue;
                        }
                        out.push(MutantSpec {
                            id: format!("f2_{name}_{from}_to_{to}"),
                            group,
                            description: format!("fuzzy engine reports {from} as {to} for {name}"),
                            transform: Transform::AdjectiveMap {
                                prop,
                                map: vec![(from, to)],
                            },
                        });
                    }
                }
                for (x, y) in [
                    (Adjective::Low, Adjective::Medium),
                    (Adjective::Low, Adjective::High),
                    (Adjective::Medium, Adjective::High),
                ] {
                    out.push(MutantSpec {
                        id: format!("f2_{name}_swap_{x}_{y}"),
                        group,
                        description: format!("fuzzy engine swaps {x} and {y} for {name}"),
                        transform: Transform::AdjectiveMap {
                            prop,
                            map: vec![(x, y), (y, x)],
                        },
                    });
                }
            }
        }
        FaultGroup::F3 => {
            for (rule_idx, rule) in policy.rules.iter().enumerate() {
                for (occ, &old) in rule.when.iter().enumerate() {
                    for to in Adjective::ALL {
                        if to == old {
                            continue;
                        }
                        out.push(MutantSpec {
                            id: format!("f3_r{rule_idx}_when{occ}_{old}_to_{to}"),
                            group,
                            description: format!(
                                "rule {rule_idx}: WHEN adjective {old} replaced by {to}"
                            ),
                            transform: Transform::ReplaceSlot {
                                slot: SlotRef {
                                    rule: rule_idx,
                                    slot: Slot::When(occ),
                                },
                                to,
                            },
                        });
                    }
                }
                for to in Adjective::ALL {
                    if to == rule.utility {
                        continue;
                    }
                    out.push(MutantSpec {
                        id: format!("f3_r{rule_idx}_then_{}_to_{to}", rule.utility),
                        group,
                        description: format!(
                            "rule {rule_idx}: utility {} replaced by {to}",
                            rule.utility
                        ),
                        transform: Transform::ReplaceSlot {
                            slot: SlotRef {
                                rule: rule_idx,
                                slot: Slot::Then,
                            },
                            to,
                        },
                    });
                }
            }
        }
        FaultGroup::F4 => {
            let mut slots: Vec<(SlotRef, Adjective)> = Vec::new();
            for (rule_idx, rule) in policy.rules.iter().enumerate() {
                for (occ, &adj) in rule.when.iter().enumerate() {
                    slots.push((
                        SlotRef {
                            rule: rule_idx,
                            slot: Slot::When(occ),
                        },
                        adj,
                    ));
                }
                slots.push((
                    SlotRef {
                        rule: rule_idx,
                        slot: Slot::Then,
                    },
                    rule.utility,
                ));
            }
            for i in 0..slots.len() {
                for j in (i + 1)..slots.len() {
                    let (a, adj_a) = slots[i];
                    let (b, adj_b) = slots[j];
                    // Cross-rule swaps of differing adjectives only; anything
                    // else edits nothing.
                    if a.rule == b.rule || adj_a == adj_b {
                        continue;
                    }
                    out.push(MutantSpec {
                        id: format!(
                            "f4_r{}_{}_r{}_{}",
                            a.rule,
                            slot_label(&a.slot),
                            b.rule,
                            slot_label(&b.slot)
                        ),
                        group,
                        description: format!(
                            "swap {adj_a} (rule {} {}) with {adj_b} (rule {} {})",
                            a.rule,
                            slot_label(&a.slot),
                            b.rule,
                            slot_label(&b.slot)
                        ),
                        transform: Transform::SwapSlots { a, b },
                    });
                }
            }
        }
    }
    out
}

/// Enumerate mutants per the plan, in deterministic order. Duplicate-effect
/// transforms are kept; equivalence is discovered empirically by the
/// experiment.
pub fn generate_mutants(
    policy: &AdaptationPolicy,
    schema: &ContextSchema,
    plan: &MutantPlan,
) -> Result<Vec<MutantSpec>> {
    match plan {
        MutantPlan::Keyword(kw) if kw == "exhaustive-small" => Ok(FaultGroup::ALL
            .iter()
            .flat_map(|&g| enumerate_group(policy, schema, g))
            .collect()),
        MutantPlan::Keyword(kw) => Err(Error::Config(format!(
            "unknown mutant plan keyword {kw:?} (expected \"exhaustive-small\")"
        ))),
        MutantPlan::Counts { f1, f2, f3, f4 } => {
            let mut out = Vec::new();
            for (group, plan) in [
                (FaultGroup::F1, f1),
                (FaultGroup::F2, f2),
                (FaultGroup::F3, f3),
                (FaultGroup::F4, f4),
            ] {
                let all = enumerate_group(policy, schema, group);
                match plan.cap()? {
                    None => out.extend(all),
                    Some(n) => {
                        if n > all.len() {
                            return Err(Error::Config(format!(
                                "plan requests {n} {} mutants but only {} are enumerable",
                                group.as_str(),
                                all.len()
                            )));
                        }
                        out.extend(all.into_iter().take(n));
                    }
                }
            }
            Ok(out)
        }
        MutantPlan::Explicit(specs) => {
            for spec in specs {
                check_spec(policy, schema, spec)?;
            }
            Ok(specs.clone())
        }
    }
}

fn check_spec(policy: &AdaptationPolicy, schema: &ContextSchema, spec: &MutantSpec) -> Result<()> {
    match &spec.transform {
        Transform::Identity => Ok(()),
        Transform::SwapProperties { a, b } => {
            if *a >= schema.arity() || *b >= schema.arity() || a == b {
                return Err(Error::Config(format!(
                    "mutant {}: bad property pair ({a}, {b})",
                    spec.id
                )));
            }
            Ok(())
        }
        Transform::ScaleProperty { prop, factor } => {
            if *prop >= schema.arity() {
                return Err(Error::Config(format!("mutant {}: bad property {prop}", spec.id)));
            }
            if !factor.is_finite() {
                return Err(Error::Config(format!("mutant {}: bad factor", spec.id)));
            }
            Ok(())
        }
        Transform::AdjectiveMap { prop, map } => {
            if *prop >= schema.arity() {
                return Err(Error::Config(format!("mutant {}: bad property {prop}", spec.id)));
            }
            if map.is_empty() {
                return Err(Error::Config(format!("mutant {}: empty adjective map", spec.id)));
            }
            Ok(())
        }
        Transform::ReplaceSlot { slot, .. } => slot_adjective(policy, slot).map(|_| ()),
        Transform::SwapSlots { a, b } => {
            slot_adjective(policy, a)?;
            slot_adjective(policy, b)?;
            Ok(())
        }
    }
}

/// Instrumentation for sensor/fuzzifier transforms (F1, F2).
struct SensorHooks<'a> {
    transform: &'a Transform,
}

impl Instrumentation for SensorHooks<'_> {
    fn rewrite_instance(&self, inst: &ContextInstance) -> ContextInstance {
        match self.transform {
            Transform::SwapProperties { a, b } => {
                let mut values = inst.values().to_vec();
                values.swap(*a, *b);
                ContextInstance::new(values)
            }
            Transform::ScaleProperty { prop, factor } => {
                let mut values = inst.values().to_vec();
                values[*prop] *= factor;
                ContextInstance::new(values)
            }
            _ => inst.clone(),
        }
    }

    fn rewrite_adjective(&self, property: usize, adjective: Adjective) -> Adjective {
        match self.transform {
            Transform::AdjectiveMap { prop, map } if *prop == property => map
                .iter()
                .find(|(from, _)| *from == adjective)
                .map(|(_, to)| *to)
                .unwrap_or(adjective),
            _ => adjective,
        }
    }
}

/// The mutated policy for rule-edit transforms (F3, F4); other groups leave
/// the policy unchanged.
pub fn mutated_policy(policy: &AdaptationPolicy, transform: &Transform) -> Result<AdaptationPolicy> {
    let mut out = policy.clone();
    match transform {
        Transform::ReplaceSlot { slot, to } => {
            write_slot(&mut out, slot, *to)?;
        }
        Transform::SwapSlots { a, b } => {
            let adj_a = slot_adjective(policy, a)?;
            let adj_b = slot_adjective(policy, b)?;
            write_slot(&mut out, a, adj_b)?;
            write_slot(&mut out, b, adj_a)?;
        }
        _ => {}
    }
    Ok(out)
}

fn write_slot(policy: &mut AdaptationPolicy, slot: &SlotRef, value: Adjective) -> Result<()> {
    let rule = policy
        .rules
        .get_mut(slot.rule)
        .ok_or_else(|| Error::Config(format!("missing rule {}", slot.rule)))?;
    match slot.slot {
        Slot::When(i) => {
            let entry = rule
                .when
                .get_mut(i)
                .ok_or_else(|| Error::Config(format!("missing WHEN slot {i}")))?;
            *entry = value;
        }
        Slot::Then => rule.utility = value,
    }
    Ok(())
}

/// Run one flow under a mutant.
pub fn run_mutant(
    spec: &MutantSpec,
    policy: &AdaptationPolicy,
    sets: &FuzzySets,
    schema: &ContextSchema,
    initial: &Variant,
    flow: &ContextFlow,
) -> Result<VariantFlow> {
    match &spec.transform {
        Transform::ReplaceSlot { .. } | Transform::SwapSlots { .. } => {
            let mutated = mutated_policy(policy, &spec.transform)?;
            Ok(run(&mutated, sets, schema, initial, flow, None))
        }
        _ => {
            let hooks = SensorHooks {
                transform: &spec.transform,
            };
            Ok(run(policy, sets, schema, initial, flow, Some(&hooks)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CellOutcome {
    Killed { divergence_step: usize },
    Survived,
    Error { message: String },
}

impl CellOutcome {
    pub fn is_killed(&self) -> bool {
        matches!(self, CellOutcome::Killed { .. })
    }
}

/// An identified AEQ suite.
#[derive(Debug, Clone)]
pub struct AeqSuite {
    pub id: String,
    pub flows: Vec<ContextFlow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MutantInfo {
    pub id: String,
    pub group: FaultGroup,
    pub description: String,
}

/// Per-mutant, per-AEQ kill outcomes.
#[derive(Debug, Clone, Serialize)]
pub struct KillMatrix {
    pub mutants: Vec<MutantInfo>,
    /// Column ids, `suite_id/flow_id`.
    pub aeq_ids: Vec<String>,
    /// Row-major cells, aligned with `mutants` x `aeq_ids`.
    pub cells: Vec<Vec<CellOutcome>>,
}

impl KillMatrix {
    pub fn kill_count(&self, row: usize) -> usize {
        self.cells[row].iter().filter(|c| c.is_killed()).count()
    }

    pub fn kill_fraction(&self, row: usize) -> f64 {
        if self.aeq_ids.is_empty() {
            0.0
        } else {
            self.kill_count(row) as f64 / self.aeq_ids.len() as f64
        }
    }

    pub fn killed_by_any(&self, row: usize) -> bool {
        self.kill_count(row) > 0
    }

    /// Mutants no AEQ killed, presumed behaviorally identical.
    pub fn possibly_equivalent(&self) -> Vec<String> {
        self.mutants
            .iter()
            .enumerate()
            .filter(|(row, _)| !self.killed_by_any(*row))
            .map(|(_, m)| m.id.clone())
            .collect()
    }

    /// CSV export: mutant_id, group, aeq_id, killed, divergence_step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mutant_id,group,aeq_id,killed,divergence_step\n");
        for (row, mutant) in self.mutants.iter().enumerate() {
            for (col, aeq) in self.aeq_ids.iter().enumerate() {
                let (killed, step) = match &self.cells[row][col] {
                    CellOutcome::Killed { divergence_step } => (1, divergence_step.to_string()),
                    CellOutcome::Survived => (0, String::new()),
                    CellOutcome::Error { .. } => (0, "error".to_string()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    mutant.id,
                    mutant.group.as_str(),
                    aeq,
                    killed,
                    step
                );
            }
        }
        out
    }
}

/// Execute every (mutant, AEQ) cell: the original trace per AEQ is computed
/// once and compared against each mutant run. Cells evaluate in parallel;
/// assembly order is fixed by (row, column).
pub fn run_experiment(
    schema: &ContextSchema,
    policy: &AdaptationPolicy,
    sets: &FuzzySets,
    mutants: &[MutantSpec],
    suites: &[AeqSuite],
    initial: &Variant,
) -> Result<KillMatrix> {
    initial.check()?;
    sets.check(schema)?;

    let mut aeq_ids = Vec::new();
    let mut flows: Vec<&ContextFlow> = Vec::new();
    for suite in suites {
        for flow in &suite.flows {
            aeq_ids.push(format!("{}/{}", suite.id, flow.id));
            flows.push(flow);
        }
    }

    let originals: Vec<VariantFlow> = flows
        .par_iter()
        .map(|flow| run(policy, sets, schema, initial, flow, None))
        .collect();

    let cells: Vec<Vec<CellOutcome>> = mutants
        .par_iter()
        .map(|spec| {
            flows
                .par_iter()
                .zip(originals.par_iter())
                .map(|(flow, original)| {
                    let outcome = catch_unwind(AssertUnwindSafe(|| {
                        run_mutant(spec, policy, sets, schema, initial, flow)
                    }));
                    match outcome {
                        Ok(Ok(trace)) => {
                            let cmp = trace_equal(original, &trace);
                            if cmp.equal {
                                CellOutcome::Survived
                            } else {
                                CellOutcome::Killed {
                                    divergence_step: cmp.first_divergence.unwrap_or(0),
                                }
                            }
                        }
                        Ok(Err(e)) => CellOutcome::Error {
                            message: e.to_string(),
                        },
                        Err(_) => CellOutcome::Error {
                            message: "simulation panicked".to_string(),
                        },
                    }
                })
                .collect()
        })
        .collect();

    Ok(KillMatrix {
        mutants: mutants
            .iter()
            .map(|m| MutantInfo {
                id: m.id.clone(),
                group: m.group,
                description: m.description.clone(),
            })
            .collect(),
        aeq_ids,
        cells,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub group: FaultGroup,
    pub mutants: usize,
    pub killed: usize,
    /// Mean per-mutant fraction of AEQs that kill it.
    pub avg_kill_fraction: f64,
}

/// Summary statistics projected from a kill matrix.
#[derive(Debug, Clone, Serialize)]
pub struct MutationReport {
    pub total_mutants: usize,
    pub total_aeqs: usize,
    /// (mutants + 1) x AEQ count: every cell plus the original runs.
    pub total_simulations: usize,
    /// Mutants killed by at least one AEQ, over all mutants.
    pub raw_kill_fraction: f64,
    /// Mutants killed by every AEQ.
    pub killed_by_all_fraction: f64,
    /// Mutants killed by more than 60% of the AEQs.
    pub killed_by_gt60_fraction: f64,
    pub per_group: Vec<GroupReport>,
    pub possibly_equivalent: Vec<String>,
}

/// Pure projection of a kill matrix into the summary report.
pub fn report(matrix: &KillMatrix) -> MutationReport {
    let total = matrix.mutants.len();
    let columns = matrix.aeq_ids.len();
    let mut killed_any = 0usize;
    let mut killed_all = 0usize;
    let mut killed_gt60 = 0usize;
    let mut groups: BTreeMap<FaultGroup, (usize, usize, f64)> = BTreeMap::new();

    for row in 0..total {
        let kills = matrix.kill_count(row);
        let fraction = matrix.kill_fraction(row);
        if kills > 0 {
            killed_any += 1;
        }
        if columns > 0 && kills == columns {
            killed_all += 1;
        }
        if fraction > 0.6 {
            killed_gt60 += 1;
        }
        let entry = groups.entry(matrix.mutants[row].group).or_insert((0, 0, 0.0));
        entry.0 += 1;
        if kills > 0 {
            entry.1 += 1;
        }
        entry.2 += fraction;
    }

    let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    MutationReport {
        total_mutants: total,
        total_aeqs: columns,
        total_simulations: (total + 1) * columns,
        raw_kill_fraction: frac(killed_any),
        killed_by_all_fraction: frac(killed_all),
        killed_by_gt60_fraction: frac(killed_gt60),
        per_group: groups
            .into_iter()
            .map(|(group, (mutants, killed, fraction_sum))| GroupReport {
                group,
                mutants,
                killed,
                avg_kill_fraction: if mutants == 0 { 0.0 } else { fraction_sum / mutants as f64 },
            })
            .collect(),
        possibly_equivalent: matrix.possibly_equivalent(),
    }
}

impl MutationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mutation analysis: {} mutants x {} AEQs ({} simulations)",
            self.total_mutants, self.total_aeqs, self.total_simulations);
        let _ = writeln!(out, "  killed (any AEQ): {:.1}%", self.raw_kill_fraction * 100.0);
        let _ = writeln!(out, "  killed by all AEQs: {:.1}%", self.killed_by_all_fraction * 100.0);
        let _ = writeln!(out, "  killed by >60% of AEQs: {:.1}%", self.killed_by_gt60_fraction * 100.0);
        for g in &self.per_group {
            let _ = writeln!(
                out,
                "  {}: {}/{} killed, avg kill fraction {:.2}",
                g.group.as_str(),
                g.killed,
                g.mutants,
                g.avg_kill_fraction
            );
        }
        if self.possibly_equivalent.is_empty() {
            let _ = writeln!(out, "  possibly equivalent: none");
        } else {
            let _ = writeln!(out, "  possibly equivalent: {}", self.possibly_equivalent.join(", "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,mutants,killed,avg_kill_fraction\n");
        for g in &self.per_group {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                g.group.as_str(),
                g.mutants,
                g.killed,
                g.avg_kill_fraction
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{parse_policy, REFERENCE_POLICY};
    use crate::test_util::{inst, webserver_schema};

    fn fixture() -> (ContextSchema, AdaptationPolicy, FuzzySets) {
        let schema = webserver_schema();
        let policy = parse_policy(REFERENCE_POLICY, &schema).unwrap();
        let sets = FuzzySets::standard_for(&schema);
        (schema, policy, sets)
    }

    #[test]
    fn f1_enumeration_contains_the_property_swaps() {
        let (schema, policy, _) = fixture();
        let mutants = enumerate_group(&policy, &schema, FaultGroup::F1);
        assert!(mutants
            .iter()
            .any(|m| m.id == "f1_swap_request_density_request_dispersion"));
        // 3 swaps + 6 scalings.
        assert_eq!(mutants.len(), 9);
        assert_eq!(
            mutants[0].transform,
            Transform::SwapProperties { a: 0, b: 1 }
        );
    }

    #[test]
    fn f2_enumeration_contains_the_low_high_swap() {
        let (schema, policy, _) = fixture();
        let mutants = enumerate_group(&policy, &schema, FaultGroup::F2);
        let swap = mutants
            .iter()
            .find(|m| m.id == "f2_request_density_swap_low_high")
            .expect("low/high swap missing");
        assert_eq!(
            swap.transform,
            Transform::AdjectiveMap {
                prop: 0,
                map: vec![
                    (Adjective::Low, Adjective::High),
                    (Adjective::High, Adjective::Low)
                ],
            }
        );
        // 9 per property.
        assert_eq!(mutants.len(), 27);
    }

    #[test]
    fn f3_replaces_single_slots() {
        let (schema, _, _) = fixture();
        let listing = "\
WHEN REQUEST_DISPERSION IS 'LOW' OR 'MEDIUM'
IF CACHE_ABSENT
THEN UTILITY OF ADDCACHE IS 'HIGH'

WHEN REQUEST_DISPERSION IS 'HIGH'
IF CACHE_ABSENT
THEN UTILITY OF ADDCACHE IS 'LOW'
";
        let policy = parse_policy(listing, &schema).unwrap();
        let mutants = enumerate_group(&policy, &schema, FaultGroup::F3);
        // Rule 2 THEN slot: low replaced by high.
        let target = mutants
            .iter()
            .find(|m| m.id == "f3_r1_then_low_to_high")
            .expect("THEN-slot replacement missing");
        let mutated = mutated_policy(&policy, &target.transform).unwrap();
        assert_eq!(mutated.rules[1].utility, Adjective::High);
        // Exactly one slot changed.
        assert_eq!(mutated.rules[0], policy.rules[0]);
        assert_eq!(mutated.rules[1].when, policy.rules[1].when);
    }

    #[test]
    fn f4_swaps_cross_rule_slots() {
        let (schema, policy, _) = fixture();
        let mutants = enumerate_group(&policy, &schema, FaultGroup::F4);
        assert!(!mutants.is_empty());
        for m in &mutants {
            if let Transform::SwapSlots { a, b } = &m.transform {
                assert_ne!(a.rule, b.rule);
                let adj_a = slot_adjective(&policy, a).unwrap();
                let adj_b = slot_adjective(&policy, b).unwrap();
                assert_ne!(adj_a, adj_b);
                let mutated = mutated_policy(&policy, &m.transform).unwrap();
                assert_eq!(slot_adjective(&mutated, a).unwrap(), adj_b);
                assert_eq!(slot_adjective(&mutated, b).unwrap(), adj_a);
            } else {
                panic!("F4 must swap slots");
            }
        }
    }

    #[test]
    fn plan_caps_and_overflow() {
        let (schema, policy, _) = fixture();
        let plan = MutantPlan::default_scaled();
        let mutants = generate_mutants(&policy, &schema, &plan).unwrap();
        assert_eq!(mutants.len(), 45);
        assert_eq!(mutants.iter().filter(|m| m.group == FaultGroup::F1).count(), 3);

        let too_many = MutantPlan::Counts {
            f1: GroupPlan::Count(1000),
            f2: GroupPlan::Count(0),
            f3: GroupPlan::Count(0),
            f4: GroupPlan::Count(0),
        };
        let err = generate_mutants(&policy, &schema, &too_many).unwrap_err();
        assert!(err.to_string().contains("only 9"));

        let exhaustive = generate_mutants(&policy, &schema, &MutantPlan::exhaustive_small()).unwrap();
        assert!(exhaustive.len() > 45);

        // Deterministic order.
        let again = generate_mutants(&policy, &schema, &plan).unwrap();
        assert_eq!(mutants, again);
    }

    fn small_suite(schema: &ContextSchema) -> Vec<AeqSuite> {
        let spike = ContextFlow::new(
            "spiky",
            vec![
                inst(&[10.0, 5.0, 1.0]),
                inst(&[1000.0, 300.0, 0.1]),
                inst(&[1000.0, 300.0, 0.1]),
                inst(&[10.0, 5.0, 1.0]),
                inst(&[500.0, 250.0, 0.5]),
            ],
        );
        crate::context::validate_flow(schema, &spike).unwrap();
        vec![AeqSuite {
            id: "s0".to_string(),
            flows: vec![spike],
        }]
    }

    #[test]
    fn identity_mutant_survives_everything() {
        let (schema, policy, sets) = fixture();
        let mutants = vec![MutantSpec {
            id: "identity".to_string(),
            group: FaultGroup::F1,
            description: "no-op fixture".to_string(),
            transform: Transform::Identity,
        }];
        let matrix = run_experiment(
            &schema,
            &policy,
            &sets,
            &mutants,
            &small_suite(&schema),
            &Variant::default(),
        )
        .unwrap();
        assert!(matrix.cells[0].iter().all(|c| *c == CellOutcome::Survived));
        let rep = report(&matrix);
        assert_eq!(rep.possibly_equivalent, vec!["identity".to_string()]);
    }

    #[test]
    fn f1_swap_is_killed_on_a_divergent_flow() {
        let (schema, policy, sets) = fixture();
        let mutants = vec![MutantSpec {
            id: "swap01".to_string(),
            group: FaultGroup::F1,
            description: "swap density and files".to_string(),
            transform: Transform::SwapProperties { a: 0, b: 2 },
        }];
        let matrix = run_experiment(
            &schema,
            &policy,
            &sets,
            &mutants,
            &small_suite(&schema),
            &Variant::default(),
        )
        .unwrap();
        assert!(matrix.cells[0][0].is_killed());
    }

    #[test]
    fn report_recomputes_from_cells() {
        let (schema, policy, sets) = fixture();
        let plan = MutantPlan::Counts {
            f1: GroupPlan::Count(3),
            f2: GroupPlan::Count(4),
            f3: GroupPlan::Count(4),
            f4: GroupPlan::Count(4),
        };
        let mutants = generate_mutants(&policy, &schema, &plan).unwrap();
        let matrix = run_experiment(
            &schema,
            &policy,
            &sets,
            &mutants,
            &small_suite(&schema),
            &Variant::default(),
        )
        .unwrap();
        let rep = report(&matrix);

        // Independent bucket recomputation from raw cells.
        let mut killed_any = 0;
        let mut killed_all = 0;
        let mut gt60 = 0;
        for row in 0..matrix.mutants.len() {
            let kills = matrix.cells[row].iter().filter(|c| c.is_killed()).count();
            if kills > 0 {
                killed_any += 1;
            }
            if kills == matrix.aeq_ids.len() {
                killed_all += 1;
            }
            if kills as f64 / matrix.aeq_ids.len() as f64 > 0.6 {
                gt60 += 1;
            }
        }
        let n = matrix.mutants.len() as f64;
        assert!((rep.raw_kill_fraction - killed_any as f64 / n).abs() < 1e-12);
        assert!((rep.killed_by_all_fraction - killed_all as f64 / n).abs() < 1e-12);
        assert!((rep.killed_by_gt60_fraction - gt60 as f64 / n).abs() < 1e-12);
        assert_eq!(rep.total_simulations, (matrix.mutants.len() + 1) * matrix.aeq_ids.len());
    }

    #[test]
    fn all_killed_matrix_reports_full_scores() {
        let matrix = KillMatrix {
            mutants: vec![
                MutantInfo {
                    id: "m0".into(),
                    group: FaultGroup::F1,
                    description: String::new(),
                },
                MutantInfo {
                    id: "m1".into(),
                    group: FaultGroup::F3,
                    description: String::new(),
                },
            ],
            aeq_ids: vec!["s/a0".into(), "s/a1".into()],
            cells: vec![
                vec![CellOutcome::Killed { divergence_step: 0 }; 2],
                vec![CellOutcome::Killed { divergence_step: 3 }; 2],
            ],
        };
        let rep = report(&matrix);
        assert_eq!(rep.raw_kill_fraction, 1.0);
        assert_eq!(rep.killed_by_all_fraction, 1.0);
        assert!(rep.possibly_equivalent.is_empty());
    }

    #[test]
    fn simulation_count_formula() {
        // 90 mutants x 300 AEQs plus the original runs: 91 * 300 = 27300.
        let matrix = KillMatrix {
            mutants: (0..90)
                .map(|i| MutantInfo {
                    id: format!("m{i}"),
                    group: FaultGroup::F2,
                    description: String::new(),
                })
                .collect(),
            aeq_ids: (0..300).map(|i| format!("s/a{i}")).collect(),
            cells: vec![vec![CellOutcome::Survived; 300]; 90],
        };
        assert_eq!(report(&matrix).total_simulations, 27300);
    }

    #[test]
    fn plan_file_forms_parse() {
        let counts: MutantPlan =
            serde_json::from_str(r#"{"F1": 3, "F2": "all", "F3": 0, "F4": 2}"#).unwrap();
        let (schema, policy, _) = fixture();
        let mutants = generate_mutants(&policy, &schema, &counts).unwrap();
        assert_eq!(
            mutants.iter().filter(|m| m.group == FaultGroup::F2).count(),
            27
        );
        assert_eq!(mutants.iter().filter(|m| m.group == FaultGroup::F3).count(), 0);

        let keyword: MutantPlan = serde_json::from_str(r#""exhaustive-small""#).unwrap();
        assert_eq!(keyword, MutantPlan::exhaustive_small());

        let explicit: MutantPlan = serde_json::from_str(
            r#"[{"id": "x", "group": "F2", "description": "d",
                 "transform": {"kind": "adjective_map", "prop": 0,
                               "map": [["low", "high"]]}}]"#,
        )
        .unwrap();
        let mutants = generate_mutants(&policy, &schema, &explicit).unwrap();
        assert_eq!(mutants.len(), 1);

        let bad: MutantPlan = serde_json::from_str(r#""everything""#).unwrap();
        assert!(generate_mutants(&policy, &schema, &bad).is_err());
    }

    #[test]
    fn kills_are_monotone_in_the_test_set() {
        let (schema, policy, sets) = fixture();
        let mutants = generate_mutants(&policy, &schema, &MutantPlan::default_scaled()).unwrap();
        let small = small_suite(&schema);
        let mut larger = small.clone();
        larger[0].flows.push(ContextFlow::new(
            "calm",
            vec![inst(&[100.0, 50.0, 0.5]), inst(&[200.0, 50.0, 0.4])],
        ));

        let a = run_experiment(&schema, &policy, &sets, &mutants, &small, &Variant::default())
            .unwrap();
        let b = run_experiment(&schema, &policy, &sets, &mutants, &larger, &Variant::default())
            .unwrap();
        for row in 0..mutants.len() {
            if a.killed_by_any(row) {
                assert!(b.killed_by_any(row), "kill set shrank with more AEQs");
            }
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let (schema, policy, sets) = fixture();
        let mutants =
            generate_mutants(&policy, &schema, &MutantPlan::default_scaled()).unwrap();
        let suites = small_suite(&schema);
        let a = run_experiment(&schema, &policy, &sets, &mutants, &suites, &Variant::default())
            .unwrap();
        let b = run_experiment(&schema, &policy, &sets, &mutants, &suites, &Variant::default())
            .unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
