//! Two-level search: a tabu local search maximizing the per-flow objective
//! L(f), and a memory-based global loop maximizing the suite objective G(sf).
//!
//! The global loop keeps the accepted suite, a shelf of flows that may
//! become useful later (with age-based eviction) and a memory of the pairs
//! and instances the suite already covers. The local search is steered away
//! from that memory: candidates repeating more than [`MAX_MEMORY_OVERLAP`]
//! memorized instances are discarded, and the coverage term only rewards
//! uncovered pairs.
//!
//! All objective terms are normalized to [0, 1] so the configured weights
//! stay commensurable; the suite-size term of G becomes `-lambda * |suite|`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextFlow, ContextInstance, ContextSchema};
use crate::coverage::{CoverageUniverse, PairKey};
use crate::error::{Error, Result};
use crate::metric::{consecutive_distances, detect_ep, EpConfig, ShapeClass};

/// A flow overlapping more than this many memorized instances is pushed away
/// from the already-covered region.
pub const MAX_MEMORY_OVERLAP: usize = 3;

/// Probability that a re-randomized property draws from the coverage samples
/// (when samples exist) instead of the full grid.
const SAMPLE_BIAS: f64 = 0.5;

const REJECTION_TRIES: usize = 1000;

/// Weights of the per-flow objective L = w_cov*C + w_ep*E + w_re*R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalObjectiveWeights {
    pub w_cov: f64,
    pub w_ep: f64,
    pub w_re: f64,
}

impl Default for LocalObjectiveWeights {
    fn default() -> Self {
        LocalObjectiveWeights {
            w_cov: 0.4,
            w_ep: 0.6,
            w_re: 0.0,
        }
    }
}

impl LocalObjectiveWeights {
    pub fn check(&self) -> Result<()> {
        if self.w_cov < 0.0 || self.w_ep < 0.0 || self.w_re < 0.0 {
            return Err(Error::Config("local weights must be non-negative".into()));
        }
        let sum = self.w_cov + self.w_ep + self.w_re;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("local weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Weights of the suite objective G = w_cov*C_G + w_shape*S - lambda*|sf|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalObjectiveWeights {
    pub w_cov: f64,
    pub w_shape: f64,
}

impl Default for GlobalObjectiveWeights {
    fn default() -> Self {
        GlobalObjectiveWeights {
            w_cov: 0.5,
            w_shape: 0.5,
        }
    }
}

impl GlobalObjectiveWeights {
    pub fn check(&self) -> Result<()> {
        if self.w_cov < 0.0 || self.w_shape < 0.0 {
            return Err(Error::Config("global weights must be non-negative".into()));
        }
        let sum = self.w_cov + self.w_shape;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("global weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// All knobs of the two-level search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub flow_length: usize,
    /// Tabu list size; half the flow length by default.
    pub tabu_tenure: usize,
    /// Iterations a flow may stay on the shelf before eviction.
    pub mem_max_age: usize,
    /// Stop after this many global iterations without G improvement.
    pub stale_limit: usize,
    pub hard_iteration_limit: usize,
    pub local_iterations: usize,
    /// Candidates examined per local-search iteration.
    pub neighborhood: usize,
    /// Suite-size penalty per flow.
    pub lambda_size: f64,
    pub rng_seed: u64,
    pub ep: EpConfig,
    pub local_weights: LocalObjectiveWeights,
    pub global_weights: GlobalObjectiveWeights,
    /// Record global-loop events (promote/shelve/evict/accept_new).
    #[serde(default)]
    pub collect_trace: bool,
    /// Record local-search moves (for tabu-discipline checks).
    #[serde(default)]
    pub collect_moves: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            flow_length: 60,
            tabu_tenure: 30,
            mem_max_age: 10,
            stale_limit: 100,
            hard_iteration_limit: 1000,
            local_iterations: 500,
            neighborhood: 20,
            lambda_size: 0.01,
            rng_seed: 42,
            ep: EpConfig::default(),
            local_weights: LocalObjectiveWeights::default(),
            global_weights: GlobalObjectiveWeights::default(),
            collect_trace: false,
            collect_moves: false,
        }
    }
}

impl SearchConfig {
    /// Defaults for a given flow length, with the tenure derived as half of it.
    pub fn with_flow_length(flow_length: usize) -> Self {
        SearchConfig {
            flow_length,
            tabu_tenure: (flow_length / 2).max(1),
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.flow_length < 3 {
            return Err(Error::Config("flow_length must be at least 3".into()));
        }
        if self.tabu_tenure < 1 {
            return Err(Error::Config("tabu_tenure must be at least 1".into()));
        }
        if self.mem_max_age < 1 {
            return Err(Error::Config("mem_max_age must be at least 1".into()));
        }
        if self.stale_limit > self.hard_iteration_limit {
            return Err(Error::Config(
                "stale_limit must not exceed hard_iteration_limit".into(),
            ));
        }
        if self.neighborhood < 1 {
            return Err(Error::Config("neighborhood must be at least 1".into()));
        }
        if self.lambda_size < 0.0 {
            return Err(Error::Config("lambda_size must be non-negative".into()));
        }
        self.ep.check()?;
        self.local_weights.check()?;
        self.global_weights.check()?;
        Ok(())
    }
}

/// A reference probability mass per property, over grid indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealityDistribution {
    pub per_property: Vec<BTreeMap<u64, f64>>,
}

impl RealityDistribution {
    pub fn check(&self, schema: &ContextSchema) -> Result<()> {
        if self.per_property.len() != schema.arity() {
            return Err(Error::Config(format!(
                "reality distribution covers {} properties, schema has {}",
                self.per_property.len(),
                schema.arity()
            )));
        }
        for (mass, prop) in self.per_property.iter().zip(schema.properties()) {
            let mut total = 0.0;
            for (&idx, &p) in mass {
                if idx >= prop.cardinality() {
                    return Err(Error::Config(format!(
                        "reality distribution indexes {idx} beyond the grid of `{}`",
                        prop.name()
                    )));
                }
                if p < 0.0 {
                    return Err(Error::Config("reality distribution has negative mass".into()));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "reality distribution for `{}` sums to {total}, expected 1",
                    prop.name()
                )));
            }
        }
        Ok(())
    }
}

/// RE term: 1 minus the average per-property total-variation distance
/// between the flow's empirical value histogram and the reference mass.
pub fn reality_score(
    schema: &ContextSchema,
    flow: &ContextFlow,
    dist: &RealityDistribution,
) -> Result<f64> {
    dist.check(schema)?;
    if flow.is_empty() {
        return Err(Error::Precondition("reality score needs a non-empty flow".into()));
    }
    let n = flow.len() as f64;
    let mut score_sum = 0.0;
    for (prop_idx, prop) in schema.properties().iter().enumerate() {
        let mut empirical: BTreeMap<u64, f64> = BTreeMap::new();
        for inst in &flow.instances {
            let idx = prop.grid_index(inst.values()[prop_idx]).ok_or_else(|| {
                Error::Config(format!(
                    "flow value {} is off the grid of `{}`",
                    inst.values()[prop_idx],
                    prop.name()
                ))
            })?;
            *empirical.entry(idx).or_insert(0.0) += 1.0 / n;
        }
        let reference = &dist.per_property[prop_idx];
        let keys: BTreeSet<u64> = empirical.keys().chain(reference.keys()).copied().collect();
        let tv: f64 = 0.5
            * keys
                .iter()
                .map(|k| {
                    (empirical.get(k).copied().unwrap_or(0.0)
                        - reference.get(k).copied().unwrap_or(0.0))
                    .abs()
                })
                .sum::<f64>();
        score_sum += 1.0 - tv;
    }
    Ok(score_sum / schema.arity() as f64)
}

/// Fast EP term: count of violent-variation windows, without the full report.
fn ep_window_count(schema: &ContextSchema, flow: &ContextFlow, cfg: &EpConfig) -> Result<usize> {
    let dists = consecutive_distances(schema, flow)?;
    Ok(crate::metric::scan_window_count(&dists, cfg))
}

/// L(f): weighted sum of the normalized coverage, EP and reality terms.
///
/// The coverage term counts only pairs the universe has not covered yet
/// (1 when nothing is uncovered); the EP term divides the window count by
/// floor((len-1)/2); the reality term is 0 without a distribution.
pub fn local_objective(
    flow: &ContextFlow,
    universe: &CoverageUniverse,
    weights: &LocalObjectiveWeights,
    ep: &EpConfig,
    distribution: Option<&RealityDistribution>,
) -> Result<f64> {
    weights.check()?;
    let uncovered = universe.uncovered_count();
    let c_hat = if uncovered == 0 {
        1.0
    } else {
        universe.coverage_local_uncovered(flow) as f64 / uncovered as f64
    };
    let max_windows = ((flow.len().saturating_sub(1)) / 2).max(1);
    let e_hat = ep_window_count(universe.schema(), flow, ep)? as f64 / max_windows as f64;
    let r_hat = match distribution {
        Some(dist) => reality_score(universe.schema(), flow, dist)?,
        None => 0.0,
    };
    Ok(weights.w_cov * c_hat + weights.w_ep * e_hat + weights.w_re * r_hat)
}

/// G(sf): weighted coverage and shape-diversity terms minus the size
/// penalty. The empty suite scores 0.
pub fn global_objective(
    solution: &[ContextFlow],
    universe: &CoverageUniverse,
    weights: &GlobalObjectiveWeights,
    ep: &EpConfig,
    lambda: f64,
) -> Result<f64> {
    weights.check()?;
    if solution.is_empty() {
        return Ok(0.0);
    }
    let covered = universe.coverage_global(solution);
    let mut shapes = BTreeSet::new();
    for flow in solution {
        shapes.insert(detect_ep(universe.schema(), flow, ep)?.shape);
    }
    Ok(g_value(
        covered,
        universe.pair_count(),
        shapes.len(),
        solution.len(),
        weights,
        lambda,
    ))
}

fn g_value(
    covered: usize,
    pair_total: usize,
    distinct_shapes: usize,
    flows: usize,
    weights: &GlobalObjectiveWeights,
    lambda: f64,
) -> f64 {
    if flows == 0 {
        return 0.0;
    }
    let cov = if pair_total == 0 {
        1.0
    } else {
        covered as f64 / pair_total as f64
    };
    weights.w_cov * cov + weights.w_shape * (distinct_shapes.min(3) as f64 / 3.0)
        - lambda * flows as f64
}

/// Search memory: the pairs and instances the accepted suite covers.
#[derive(Debug, Clone)]
pub struct SearchMemory {
    universe: CoverageUniverse,
    instances: BTreeSet<Vec<u64>>,
}

impl SearchMemory {
    pub fn new(universe: CoverageUniverse) -> Self {
        SearchMemory {
            universe,
            instances: BTreeSet::new(),
        }
    }

    pub fn universe(&self) -> &CoverageUniverse {
        &self.universe
    }

    /// Record a flow's pairs and instances as covered.
    pub fn absorb(&mut self, flow: &ContextFlow) {
        self.universe = self.universe.mark_covered(std::slice::from_ref(flow));
        let schema = self.universe.schema().clone();
        for inst in &flow.instances {
            if let Some(key) = inst.grid_key(&schema) {
                self.instances.insert(key);
            }
        }
    }

    /// Number of flow positions holding an already-memorized instance.
    pub fn overlap_count(&self, flow: &ContextFlow) -> usize {
        let schema = self.universe.schema();
        flow.instances
            .iter()
            .filter(|inst| {
                inst.grid_key(schema)
                    .map(|k| self.instances.contains(&k))
                    .unwrap_or(false)
            })
            .count()
    }
}

/// A local-search move, recorded when `collect_moves` is on.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MoveRecord {
    pub iteration: usize,
    pub position: usize,
    pub instance_hash: u64,
    pub aspiration: bool,
}

/// Result of one tabu local search.
#[derive(Debug, Clone)]
pub struct LocalSearchOutcome {
    pub flow: ContextFlow,
    pub l_value: f64,
    pub moves: Vec<MoveRecord>,
}

fn fnv1a(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn instance_hash(schema: &ContextSchema, inst: &ContextInstance) -> u64 {
    match inst.grid_key(schema) {
        Some(key) => fnv1a(key),
        None => fnv1a(inst.values().iter().map(|v| v.to_bits())),
    }
}

/// Draw one uniformly random valid instance by rejection sampling, falling
/// back to a bounded grid scan; errors when no valid instance exists.
pub fn random_valid_instance(schema: &ContextSchema, rng: &mut ChaCha8Rng) -> Result<ContextInstance> {
    for _ in 0..REJECTION_TRIES {
        let values: Vec<f64> = schema
            .properties()
            .iter()
            .map(|p| p.value_at(rng.random_range(0..p.cardinality())))
            .collect();
        if schema.constraints().iter().all(|c| c.eval(&values)) {
            return Ok(ContextInstance::new(values));
        }
    }
    // Constraints reject nearly everything; scan the grid deterministically.
    let mut found = None;
    let mut values = vec![0.0; schema.arity()];
    crate::context::for_each_grid_point(schema, &mut values, 0, &mut |vals| {
        if found.is_none() && schema.constraints().iter().all(|c| c.eval(vals)) {
            found = Some(ContextInstance::new(vals.to_vec()));
        }
    });
    found.ok_or_else(|| {
        Error::Constraint(
            "no valid instance exists; the schema constraints are unsatisfiable".into(),
        )
    })
}

/// Re-randomize an instance, biasing each property toward the coverage
/// samples when present.
fn random_biased_instance(
    schema: &ContextSchema,
    samples: &[Option<Vec<f64>>],
    rng: &mut ChaCha8Rng,
) -> Result<ContextInstance> {
    for _ in 0..64 {
        let values: Vec<f64> = schema
            .properties()
            .iter()
            .enumerate()
            .map(|(i, p)| match &samples[i] {
                Some(list) if rng.random_bool(SAMPLE_BIAS) => {
                    list[rng.random_range(0..list.len())]
                }
                _ => p.value_at(rng.random_range(0..p.cardinality())),
            })
            .collect();
        if schema.constraints().iter().all(|c| c.eval(&values)) {
            return Ok(ContextInstance::new(values));
        }
    }
    random_valid_instance(schema, rng)
}

/// Nudge one property of `inst` by a few grid steps, projecting back onto
/// the nearest constraint-satisfying grid point; `None` when no projection
/// exists.
fn nudge_instance(
    schema: &ContextSchema,
    inst: &ContextInstance,
    rng: &mut ChaCha8Rng,
) -> Option<ContextInstance> {
    let prop_idx = rng.random_range(0..schema.arity());
    let prop = schema.property(prop_idx);
    let card = prop.cardinality();
    if card < 2 {
        return None;
    }
    let current = prop.grid_index(inst.values()[prop_idx])?;
    let max_delta = (card / 8).max(1);
    let delta = rng.random_range(1..=max_delta) as i64;
    let signed = if rng.random_bool(0.5) { delta } else { -delta };
    let target = (current as i64 + signed).clamp(0, card as i64 - 1) as u64;
    let target = if target == current {
        if current == 0 {
            1
        } else {
            current - 1
        }
    } else {
        target
    };

    let mut values = inst.values().to_vec();
    let valid_at = |values: &mut Vec<f64>, idx: u64| {
        values[prop_idx] = prop.value_at(idx);
        schema.constraints().iter().all(|c| c.eval(values))
    };
    if valid_at(&mut values, target) {
        return Some(ContextInstance::new(values));
    }
    // Project outward from the target onto the nearest valid grid point.
    for offset in 1..card {
        let up = target + offset;
        if up < card && valid_at(&mut values, up) {
            return Some(ContextInstance::new(values));
        }
        if offset <= target {
            let down = target - offset;
            if valid_at(&mut values, down) {
                return Some(ContextInstance::new(values));
            }
        }
    }
    None
}

/// A uniformly random valid flow of the given length.
pub fn random_valid_flow(
    schema: &ContextSchema,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ContextInstance>> {
    (0..length).map(|_| random_valid_instance(schema, rng)).collect()
}

/// Tabu local search: synthesize one flow maximizing L against the memory's
/// uncovered pairs, staying away from memorized instances.
///
/// Moves mutate a single flow position (biased re-randomization or a nudge
/// with projection repair), are identified by (position, new-instance hash)
/// and stay tabu for `tabu_tenure` iterations unless they beat the best
/// value seen (aspiration). With `local_iterations = 0` the initial random
/// valid flow is returned unchanged.
pub fn tabu_local_search(
    memory: &SearchMemory,
    cfg: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LocalSearchOutcome> {
    cfg.check()?;
    let schema = memory.universe().schema().clone();
    let samples: Vec<Option<Vec<f64>>> = schema
        .properties()
        .iter()
        .map(|p| {
            schema
                .coverage_samples()
                .and_then(|s| s.get(p.name()))
                .cloned()
        })
        .collect();

    let evaluate = |instances: &[ContextInstance]| -> Result<f64> {
        let flow = ContextFlow::new("candidate", instances.to_vec());
        local_objective(&flow, memory.universe(), &cfg.local_weights, &cfg.ep, None)
    };

    let mut current = random_valid_flow(&schema, cfg.flow_length, rng)?;
    let mut current_l = evaluate(&current)?;
    let mut current_overlap = memory.overlap_count(&ContextFlow::new("c", current.clone()));
    let mut best = current.clone();
    let mut best_l = current_l;
    let mut best_overlap = current_overlap;

    let mut tabu: HashMap<(usize, u64), usize> = HashMap::new();
    let mut moves = Vec::new();

    for iteration in 0..cfg.local_iterations {
        let mut chosen: Option<(usize, ContextInstance, f64, u64, bool, usize)> = None;
        for _ in 0..cfg.neighborhood {
            let position = rng.random_range(0..current.len());
            let replacement = if rng.random_bool(0.5) {
                random_biased_instance(&schema, &samples, rng)?
            } else {
                match nudge_instance(&schema, &current[position], rng) {
                    Some(inst) => inst,
                    None => continue,
                }
            };

            let old_in_memory = memory
                .instances
                .contains(&current[position].grid_key(&schema).unwrap_or_default());
            let new_in_memory = memory
                .instances
                .contains(&replacement.grid_key(&schema).unwrap_or_default());
            let overlap = current_overlap - usize::from(old_in_memory) + usize::from(new_in_memory);
            if overlap > MAX_MEMORY_OVERLAP {
                continue; // forced away from the covered region
            }

            let hash = instance_hash(&schema, &replacement);
            let mut candidate = current.clone();
            candidate[position] = replacement.clone();
            let l = evaluate(&candidate)?;

            let tabu_active = tabu
                .get(&(position, hash))
                .map(|&expiry| expiry > iteration)
                .unwrap_or(false);
            let aspiration = l > best_l;
            if tabu_active && !aspiration {
                continue;
            }
            if chosen.as_ref().map(|c| l > c.2).unwrap_or(true) {
                chosen = Some((position, replacement, l, hash, aspiration, overlap));
            }
        }

        if let Some((position, replacement, l, hash, aspiration, overlap)) = chosen {
            current[position] = replacement;
            current_l = l;
            current_overlap = overlap;
            tabu.insert((position, hash), iteration + cfg.tabu_tenure);
            if cfg.collect_moves {
                moves.push(MoveRecord {
                    iteration,
                    position,
                    instance_hash: hash,
                    aspiration,
                });
            }
            // Accepted moves are always memory-compliant; make sure a
            // non-compliant initial flow is displaced as soon as possible.
            if current_l > best_l || best_overlap > MAX_MEMORY_OVERLAP {
                best = current.clone();
                best_l = current_l;
                best_overlap = overlap;
            }
        }
    }

    Ok(LocalSearchOutcome {
        flow: ContextFlow::new("local", best),
        l_value: best_l,
        moves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAction {
    Promote,
    Shelve,
    Evict,
    AcceptNew,
}

/// One global-loop event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iter: usize,
    pub action: TraceAction,
    pub flow: String,
    pub g_before: f64,
    pub g_after: f64,
}

/// Per-accepted-flow diagnostics, aligned 1:1 with the solution.
#[derive(Debug, Clone, Serialize)]
pub struct FlowStats {
    pub id: String,
    /// L(f) against the universe state at acceptance time.
    pub l_value: f64,
    pub ep_count: usize,
    pub shape: ShapeClass,
    /// Universe pairs newly covered by this flow at acceptance time.
    pub pairs_covered: usize,
}

/// The assembled suite with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub solution: Vec<ContextFlow>,
    pub g_value: f64,
    pub per_flow: Vec<FlowStats>,
    pub iterations_used: usize,
    pub trace: Option<Vec<TraceEvent>>,
}

struct MemEntry {
    flow: ContextFlow,
    keys: BTreeSet<PairKey>,
    ep_count: usize,
    shape: ShapeClass,
    age: usize,
}

/// The global memory-based loop.
///
/// Each iteration sweeps the shelf (promote entries that raise G, evict
/// entries at `mem_max_age`), runs one tabu local search against the
/// memory, accepts the new flow if it raises G, otherwise shelves it; then
/// the memory absorbs the suite's new flow and every shelf age is
/// incremented. The loop stops after `stale_limit`
/// iterations without improvement or at `hard_iteration_limit`. Acceptance
/// additionally enforces the anti-overlap rule against T.
pub fn global_search(
    schema: &ContextSchema,
    universe: &CoverageUniverse,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut memory = SearchMemory::new(universe.clone());
    let pair_total = universe.pair_count();

    let mut solution: Vec<ContextFlow> = Vec::new();
    let mut per_flow: Vec<FlowStats> = Vec::new();
    let mut shapes: BTreeSet<ShapeClass> = BTreeSet::new();
    let mut covered: usize = universe.covered_count();
    let mut mem: Vec<MemEntry> = Vec::new();
    let mut trace: Vec<TraceEvent> = Vec::new();

    let mut g_cur = 0.0;
    let mut stale = 0usize;
    let mut iterations = 0usize;
    let mut flow_counter = 0usize;

    while stale < cfg.stale_limit && iterations < cfg.hard_iteration_limit {
        iterations += 1;
        let mut improved = false;

        // Sweep the shelf: promote what helps, evict what aged out.
        let mut kept = Vec::with_capacity(mem.len());
        for entry in mem {
            let new_covered = covered + entry.keys.iter().filter(|k| !memory.universe().is_covered(k)).count();
            let mut new_shapes = shapes.clone();
            new_shapes.insert(entry.shape);
            let g_new = g_value(
                new_covered,
                pair_total,
                new_shapes.len(),
                solution.len() + 1,
                &cfg.global_weights,
                cfg.lambda_size,
            );
            let overlap_ok = memory.overlap_count(&entry.flow) <= MAX_MEMORY_OVERLAP;
            if g_new > g_cur && overlap_ok {
                let l_value = local_objective(
                    &entry.flow,
                    memory.universe(),
                    &cfg.local_weights,
                    &cfg.ep,
                    None,
                )?;
                if cfg.collect_trace {
                    trace.push(TraceEvent {
                        iter: iterations,
                        action: TraceAction::Promote,
                        flow: entry.flow.id.clone(),
                        g_before: g_cur,
                        g_after: g_new,
                    });
                }
                let accepted_id = format!("aeq_{:03}", solution.len());
                let pairs_new = new_covered - covered;
                let mut flow = entry.flow;
                flow.id = accepted_id.clone();
                memory.absorb(&flow);
                covered = new_covered;
                shapes = new_shapes;
                per_flow.push(FlowStats {
                    id: accepted_id,
                    l_value,
                    ep_count: entry.ep_count,
                    shape: entry.shape,
                    pairs_covered: pairs_new,
                });
                solution.push(flow);
                g_cur = g_new;
                improved = true;
            } else if entry.age >= cfg.mem_max_age {
                if cfg.collect_trace {
                    trace.push(TraceEvent {
                        iter: iterations,
                        action: TraceAction::Evict,
                        flow: entry.flow.id.clone(),
                        g_before: g_cur,
                        g_after: g_cur,
                    });
                }
            } else {
                kept.push(entry);
            }
        }
        mem = kept;

        // Synthesize a fresh flow against the covered memory.
        let outcome = tabu_local_search(&memory, cfg, &mut rng)?;
        let mut flow = outcome.flow;
        flow.id = format!("f{flow_counter:04}");
        flow_counter += 1;

        let report = detect_ep(schema, &flow, &cfg.ep)?;
        let keys = memory.universe().realized_keys(&flow);
        let new_covered = covered + keys.iter().filter(|k| !memory.universe().is_covered(k)).count();
        let mut new_shapes = shapes.clone();
        new_shapes.insert(report.shape);
        let g_new = g_value(
            new_covered,
            pair_total,
            new_shapes.len(),
            solution.len() + 1,
            &cfg.global_weights,
            cfg.lambda_size,
        );
        let overlap_ok = memory.overlap_count(&flow) <= MAX_MEMORY_OVERLAP;

        if g_new > g_cur && overlap_ok {
            let l_value =
                local_objective(&flow, memory.universe(), &cfg.local_weights, &cfg.ep, None)?;
            if cfg.collect_trace {
                trace.push(TraceEvent {
                    iter: iterations,
                    action: TraceAction::AcceptNew,
                    flow: flow.id.clone(),
                    g_before: g_cur,
                    g_after: g_new,
                });
            }
            let accepted_id = format!("aeq_{:03}", solution.len());
            let pairs_new = new_covered - covered;
            flow.id = accepted_id.clone();
            memory.absorb(&flow);
            covered = new_covered;
            shapes = new_shapes;
            per_flow.push(FlowStats {
                id: accepted_id,
                l_value,
                ep_count: report.ep_count,
                shape: report.shape,
                pairs_covered: pairs_new,
            });
            solution.push(flow);
            g_cur = g_new;
            improved = true;
        } else {
            if cfg.collect_trace {
                trace.push(TraceEvent {
                    iter: iterations,
                    action: TraceAction::Shelve,
                    flow: flow.id.clone(),
                    g_before: g_cur,
                    g_after: g_cur,
                });
            }
            mem.push(MemEntry {
                flow,
                keys,
                ep_count: report.ep_count,
                shape: report.shape,
                age: 0,
            });
        }

        // Age the shelf.
        for entry in &mut mem {
            entry.age += 1;
        }

        if improved {
            stale = 0;
        } else {
            stale += 1;
        }
    }

    Ok(SearchResult {
        solution,
        g_value: g_cur,
        per_flow,
        iterations_used: iterations,
        trace: if cfg.collect_trace { Some(trace) } else { None },
    })
}
