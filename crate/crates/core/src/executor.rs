//! Transfer phase (semi-join reduction) and join phase (binary hash joins).

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bloom::{
    bits_to_selection, hash_rows, mix64, BlockedBloomFilter, DEFAULT_HASH_SEED, DEFAULT_TARGET_FPR,
};
use crate::joingraph::{
    classify_acyclicity, derive_schedule, largest_root, GraphError, JoinGraph, TransferSchedule,
};
use crate::planner::{JoinPlan, PlanError, PlanNode};
use crate::query::{Instance, Query, QueryError};
use crate::relstore::{
    AttributeId, Relation, Schema, SelectionVector, StoreError, DEFAULT_BATCH_SIZE,
};

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("relation {0} not in instance")]
    UnknownRelation(String),
    #[error("semi-join of {target} by {from} has no attributes")]
    EmptyAttributes { target: String, from: String },
    #[error("join of {left} and {right} shares no attribute")]
    CartesianProduct { left: String, right: String },
}

pub type Result<T, E = ExecError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemiJoinMode {
    #[default]
    Exact,
    Bloom,
}

impl std::fmt::Display for SemiJoinMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SemiJoinMode::Exact => "exact",
            SemiJoinMode::Bloom => "bloom",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneFlags {
    /// Skip steps whose source is an unreduced relation keyed on the step attributes.
    #[serde(default)]
    pub skip_trivial: bool,
    /// Skip the backward pass; the caller certifies the plan follows the tree bottom-up.
    #[serde(default)]
    pub skip_backward_aligned: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BloomConfig {
    pub target_fpr: f64,
    pub seed: u64,
}

impl Default for BloomConfig {
    fn default() -> Self {
        BloomConfig {
            target_fpr: DEFAULT_TARGET_FPR,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

/// Plan file: a join plan plus optional execution settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    #[serde(flatten)]
    pub plan: JoinPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SemiJoinMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<PruneFlags>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub schedule: TransferSchedule,
    pub mode: SemiJoinMode,
}

/// Instance after the transfer phase; `provenance` is `None` when untransferred.
#[derive(Clone, Debug)]
pub struct ReducedInstance {
    pub instance: Instance,
    pub provenance: Option<Provenance>,
}

impl ReducedInstance {
    pub fn unreduced(instance: Instance) -> Self {
        ReducedInstance {
            instance,
            provenance: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepStats {
    pub pass: Pass,
    pub target: String,
    pub source: String,
    pub before: usize,
    pub after: usize,
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JoinStats {
    pub label: String,
    pub rows: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExecStats {
    pub steps: Vec<StepStats>,
    /// Join outputs in plan post-order; the last entry is the final result.
    pub joins: Vec<JoinStats>,
    pub total_intermediate: usize,
    pub output_rows: usize,
    /// Visible rows of every base relation entering the join phase.
    pub reduced_base_rows: usize,
    pub bloom_builds: usize,
    pub bloom_probes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    pub cyclic: bool,
    pub timed_out: bool,
}

impl ExecStats {
    /// Sum of every join output, including the final result.
    pub fn join_work(&self) -> usize {
        self.joins.iter().map(|j| j.rows).sum()
    }

    pub fn max_join_rows(&self) -> usize {
        self.joins.iter().map(|j| j.rows).max().unwrap_or(0)
    }

    fn absorb(&mut self, other: ExecStats) {
        self.steps.extend(other.steps);
        self.joins.extend(other.joins);
        self.total_intermediate += other.total_intermediate;
        self.output_rows = other.output_rows;
        self.reduced_base_rows = other.reduced_base_rows;
        self.bloom_builds += other.bloom_builds;
        self.bloom_probes += other.bloom_probes;
        self.timed_out |= other.timed_out;
    }
}

fn check_attrs(
    target: &Relation,
    source: &Relation,
    attrs: &[AttributeId],
) -> Result<(Vec<usize>, Vec<usize>)> {
    if attrs.is_empty() {
        return Err(ExecError::EmptyAttributes {
            target: target.name().to_string(),
            from: source.name().to_string(),
        });
    }
    Ok((target.column_indices(attrs)?, source.column_indices(attrs)?))
}

/// Visible rows of `target` whose `attrs` tuple occurs in `source`.
pub fn semi_join_exact(
    target: &Relation,
    source: &Relation,
    attrs: &[AttributeId],
) -> Result<SelectionVector> {
    let (tc, sc) = check_attrs(target, source, attrs)?;
    let keep: Vec<usize> = if let ([t], [s]) = (tc.as_slice(), sc.as_slice()) {
        let scol = source.column(*s);
        let keys: HashSet<i64> = source.visible_rows().map(|r| scol[r]).collect();
        let tcol = target.column(*t);
        target
            .visible_rows()
            .filter(|&r| keys.contains(&tcol[r]))
            .collect()
    } else {
        let keys: HashSet<Vec<i64>> = source
            .visible_rows()
            .map(|r| source.key_at(r, &sc))
            .collect();
        target
            .visible_rows()
            .filter(|&r| keys.contains(&target.key_at(r, &tc)))
            .collect()
    };
    Ok(SelectionVector::from_sorted(keep))
}

/// Visible rows of `target` whose `attrs` tuple probes positive in `filter`.
pub fn semi_join_bloom(
    target: &Relation,
    filter: &BlockedBloomFilter,
    attrs: &[AttributeId],
) -> Result<SelectionVector> {
    let cols = target.column_indices(attrs)?;
    let mut keep = Vec::new();
    for batch in target.batches(DEFAULT_BATCH_SIZE) {
        let hashes = hash_rows(filter.seed(), target, batch.rows(), &cols);
        let bits = filter.probe_hashes(&hashes);
        let sel = bits_to_selection(&bits, Some(batch.rows())).expect("one bit per batch row");
        keep.extend(sel.into_vec());
    }
    Ok(SelectionVector::from_sorted(keep))
}

/// Filter over `source`'s visible `attrs` tuples.
pub fn build_filter(
    source: &Relation,
    attrs: &[AttributeId],
    cfg: &BloomConfig,
) -> Result<BlockedBloomFilter> {
    let cols = source.column_indices(attrs)?;
    Ok(BlockedBloomFilter::from_relation(
        source,
        &cols,
        cfg.target_fpr,
        cfg.seed,
    ))
}

fn is_trivial(inst: &Instance, source: &Relation, attrs: &[AttributeId]) -> bool {
    let Some(pk) = inst.primary_key(source.name()) else {
        return false;
    };
    let pk: HashSet<&AttributeId> = pk.iter().collect();
    let at: HashSet<&AttributeId> = attrs.iter().collect();
    pk == at && source.visible_count() == source.num_rows()
}

pub fn transfer_phase(
    instance: &Instance,
    schedule: &TransferSchedule,
    mode: SemiJoinMode,
    prune: PruneFlags,
) -> Result<(ReducedInstance, ExecStats)> {
    transfer_phase_with(instance, schedule, mode, prune, &BloomConfig::default())
}

pub fn transfer_phase_with(
    instance: &Instance,
    schedule: &TransferSchedule,
    mode: SemiJoinMode,
    prune: PruneFlags,
    cfg: &BloomConfig,
) -> Result<(ReducedInstance, ExecStats)> {
    let mut inst = instance.clone();
    let mut stats = ExecStats::default();
    let backward: &[_] = if prune.skip_backward_aligned {
        &[]
    } else {
        &schedule.backward
    };
    let passes = schedule
        .forward
        .iter()
        .map(|s| (Pass::Forward, s))
        .chain(backward.iter().map(|s| (Pass::Backward, s)));
    for (i, (pass, step)) in passes.enumerate() {
        let target = inst
            .get(&step.target)
            .ok_or_else(|| ExecError::UnknownRelation(step.target.clone()))?;
        let source = inst
            .get(&step.source)
            .ok_or_else(|| ExecError::UnknownRelation(step.source.clone()))?;
        let before = target.visible_count();
        let skipped = prune.skip_trivial && is_trivial(&inst, source, &step.attrs);
        let after = if skipped {
            before
        } else {
            let sel = match mode {
                SemiJoinMode::Exact => semi_join_exact(target, source, &step.attrs)?,
                SemiJoinMode::Bloom => {
                    let step_cfg = BloomConfig {
                        seed: mix64(cfg.seed ^ i as u64),
                        ..*cfg
                    };
                    let filter = build_filter(source, &step.attrs, &step_cfg)?;
                    check_attrs(target, source, &step.attrs)?;
                    stats.bloom_builds += 1;
                    stats.bloom_probes += before;
                    semi_join_bloom(target, &filter, &step.attrs)?
                }
            };
            let reduced = target.with_selection_unchecked(sel);
            let after = reduced.visible_count();
            inst.insert(reduced);
            after
        };
        stats.steps.push(StepStats {
            pass,
            target: step.target.clone(),
            source: step.source.clone(),
            before,
            after,
            skipped,
        });
    }
    stats.reduced_base_rows = inst.total_visible();
    Ok((
        ReducedInstance {
            instance: inst,
            provenance: Some(Provenance {
                schedule: schedule.clone(),
                mode,
            }),
        },
        stats,
    ))
}

/// Equi-join on all shared attributes, building the hash table on `build`.
/// Output schema is `probe`'s attributes followed by `build`-only ones.
/// Stops once the output exceeds `limit` rows, returning `None`.
pub fn hash_join_limited(
    probe: &Relation,
    build: &Relation,
    limit: Option<usize>,
) -> Result<Option<Relation>> {
    let shared = probe.schema().shared_with(build.schema());
    if shared.is_empty() {
        return Err(ExecError::CartesianProduct {
            left: probe.name().to_string(),
            right: build.name().to_string(),
        });
    }
    let pk = probe.column_indices(&shared)?;
    let bk = build.column_indices(&shared)?;
    let extra: Vec<usize> = (0..build.schema().len())
        .filter(|c| !probe.schema().contains(&build.schema().attrs()[*c]))
        .collect();
    let schema = probe.schema().union(build.schema());
    let name = format!("({}⋈{})", probe.name(), build.name());
    let mut out: Vec<Vec<i64>> = vec![Vec::new(); schema.len()];
    let limit = limit.unwrap_or(usize::MAX);
    let mut emitted = 0usize;
    let mut emit = |p: usize, b: usize, out: &mut Vec<Vec<i64>>| {
        for (c, col) in out.iter_mut().enumerate().take(probe.schema().len()) {
            col.push(probe.value(p, c));
        }
        for (o, &c) in extra.iter().enumerate() {
            out[probe.schema().len() + o].push(build.value(b, c));
        }
        emitted += 1;
        emitted <= limit
    };
    if let ([p1], [b1]) = (pk.as_slice(), bk.as_slice()) {
        let bcol = build.column(*b1);
        let mut table: HashMap<i64, Vec<usize>> = HashMap::new();
        for r in build.visible_rows() {
            table.entry(bcol[r]).or_default().push(r);
        }
        let pcol = probe.column(*p1);
        for p in probe.visible_rows() {
            if let Some(rows) = table.get(&pcol[p]) {
                for &b in rows {
                    if !emit(p, b, &mut out) {
                        return Ok(None);
                    }
                }
            }
        }
    } else {
        let mut table: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for r in build.visible_rows() {
            table.entry(build.key_at(r, &bk)).or_default().push(r);
        }
        for p in probe.visible_rows() {
            if let Some(rows) = table.get(&probe.key_at(p, &pk)) {
                for &b in rows {
                    if !emit(p, b, &mut out) {
                        return Ok(None);
                    }
                }
            }
        }
    }
    Ok(Some(Relation::from_columns(name, schema, out)?))
}

pub fn hash_join(probe: &Relation, build: &Relation) -> Result<Relation> {
    Ok(hash_join_limited(probe, build, None)?.expect("no limit"))
}

pub fn join_phase(reduced: &ReducedInstance, plan: &JoinPlan) -> Result<(Relation, ExecStats)> {
    let (out, stats) = join_phase_limited(reduced, plan, None)?;
    Ok((out.expect("no limit"), stats))
}

/// Runs `plan`; when cumulative join output exceeds `budget` the run stops
/// with `timed_out` set and no output.
pub fn join_phase_limited(
    reduced: &ReducedInstance,
    plan: &JoinPlan,
    budget: Option<usize>,
) -> Result<(Option<Relation>, ExecStats)> {
    let inst = &reduced.instance;
    let tree = plan.tree();
    let mut seen = HashSet::new();
    for leaf in tree.leaves() {
        if inst.get(leaf).is_none() {
            return Err(ExecError::UnknownRelation(leaf.to_string()));
        }
        if !seen.insert(leaf) {
            return Err(PlanError::DuplicateRelation(leaf.to_string()).into());
        }
    }
    if let Some(r) = inst.relations().iter().find(|r| !seen.contains(r.name())) {
        return Err(PlanError::MissingRelation(r.name().to_string()).into());
    }
    let mut stats = ExecStats {
        reduced_base_rows: inst.total_visible(),
        ..ExecStats::default()
    };
    let out = eval(&tree, inst, budget, &mut stats)?;
    if let Some(rel) = &out {
        stats.output_rows = rel.visible_count();
        if !stats.joins.is_empty() {
            stats.total_intermediate = stats.join_work() - stats.output_rows;
        }
    } else {
        stats.timed_out = true;
        stats.total_intermediate = stats.join_work();
    }
    Ok((out, stats))
}

fn eval(
    node: &PlanNode,
    inst: &Instance,
    budget: Option<usize>,
    stats: &mut ExecStats,
) -> Result<Option<Relation>> {
    match node {
        PlanNode::Leaf(n) => Ok(Some(inst.get(n).expect("checked leaf").clone())),
        PlanNode::Join { probe, build } => {
            let Some(l) = eval(probe, inst, budget, stats)? else {
                return Ok(None);
            };
            let Some(r) = eval(build, inst, budget, stats)? else {
                return Ok(None);
            };
            let remaining = budget.map(|b| b.saturating_sub(stats.join_work()));
            match hash_join_limited(&l, &r, remaining)? {
                Some(j) => {
                    stats.joins.push(JoinStats {
                        label: node.to_string(),
                        rows: j.num_rows(),
                    });
                    Ok(Some(j.with_name(node.to_string())))
                }
                None => {
                    stats.joins.push(JoinStats {
                        label: node.to_string(),
                        rows: remaining.unwrap_or(0) + 1,
                    });
                    Ok(None)
                }
            }
        }
    }
}

/// LargestRoot schedule for `instance` (already filtered) over graph `g`.
pub fn plan_transfer(g: &JoinGraph, instance: &Instance) -> Result<TransferSchedule> {
    let tree = largest_root(g, &instance.cardinalities(g))?;
    Ok(derive_schedule(&tree))
}

/// Filters, transfers along the LargestRoot tree, then joins along `plan`.
pub fn execute(
    query: &Query,
    raw: &Instance,
    plan: &JoinPlan,
    mode: SemiJoinMode,
    prune: PruneFlags,
) -> Result<(Relation, ExecStats)> {
    let start = Instant::now();
    let g = query.join_graph()?;
    plan.validate(&g)?;
    let filtered = query.prepare(raw)?;
    let schedule = plan_transfer(&g, &filtered)?;
    let (reduced, mut stats) = transfer_phase(&filtered, &schedule, mode, prune)?;
    stats.cyclic = !classify_acyclicity(&g).is_alpha_acyclic();
    let (out, join_stats) = join_phase(&reduced, plan)?;
    stats.absorb(join_stats);
    stats.wall_time = Some(start.elapsed().as_secs_f64());
    Ok((out, stats))
}

/// Empty relation with `schema`, used when a query has no relations to join.
pub fn empty_relation(name: &str, schema: Schema) -> Relation {
    let cols = vec![Vec::new(); schema.len()];
    Relation::from_columns(name, schema, cols).expect("empty columns")
}
