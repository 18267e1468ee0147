//! Verification battery and robustness sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::executor::{
    execute, join_phase_limited, plan_transfer, transfer_phase, ExecError, PruneFlags,
    ReducedInstance, SemiJoinMode,
};
use crate::joingraph::{classify_acyclicity, safe_subjoin, AcyclicityClass, GraphError, JoinGraph};
use crate::oracle::{canonical_rows, digest, nested_loop_join};
use crate::planner::{
    derive_seed, enumerate_bushy, enumerate_left_deep, plan_budget, sample_bushy, sample_left_deep,
    JoinPlan, MAX_ENUMERATION,
};
use crate::query::{Instance, Query, QueryError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("instance has {found} tuples, above the oracle budget of {budget}")]
    BudgetExceeded { found: usize, budget: usize },
    #[error("exhaustive plans need at most {limit} relations, query has {found}")]
    TooManyRelations { found: usize, limit: usize },
    #[error("report: {0}")]
    Csv(#[from] csv::Error),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub const DEFAULT_ORACLE_BUDGET: usize = 100_000;
pub const DEFAULT_TIMEOUT_MULTIPLE: f64 = 1000.0;

// ---------------------------------------------------------------------------
// verify

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub query: String,
    pub acyclicity: String,
    pub output_rows: usize,
    pub checks: Vec<Check>,
    /// Plans whose intermediates exceed the output, as display strings.
    pub unsafe_plans: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "query {} ({}), output {} rows",
            self.query, self.acyclicity, self.output_rows
        )?;
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skipped => "SKIP",
            };
            writeln!(f, "{tag} {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

fn check(name: &str, ok: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.to_string(),
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn skipped(name: &str, detail: impl Into<String>) -> Check {
    Check {
        name: name.to_string(),
        status: Status::Skipped,
        detail: detail.into(),
    }
}

/// Survivor row ids per relation.
pub fn survivors(inst: &Instance) -> BTreeMap<String, BTreeSet<usize>> {
    inst.relations()
        .iter()
        .map(|r| (r.name().to_string(), r.visible_rows().collect()))
        .collect()
}

/// Runs the oracle battery on `raw` filtered by `query`.
pub fn verify(query: &Query, raw: &Instance, budget: usize) -> Result<VerifyReport> {
    let filtered = query.prepare(raw)?;
    let found = raw.total_visible();
    if found > budget {
        return Err(HarnessError::BudgetExceeded { found, budget });
    }
    let g = query.join_graph()?;
    let class = classify_acyclicity(&g);
    let oracle = nested_loop_join(&filtered, None);
    let expected = oracle.sorted_rows();
    let mut checks = Vec::new();

    // output equality across modes, prune flags and plan shapes
    let plans = [sample_left_deep(&g, 0), sample_bushy(&g, 1)];
    let prunes = [
        PruneFlags::default(),
        PruneFlags {
            skip_trivial: true,
            skip_backward_aligned: false,
        },
        PruneFlags {
            skip_trivial: true,
            skip_backward_aligned: true,
        },
    ];
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for mode in [SemiJoinMode::Exact, SemiJoinMode::Bloom] {
        for prune in prunes {
            for plan in &plans {
                let (out, _) = execute(query, raw, plan, mode, prune)?;
                runs += 1;
                if canonical_rows(&out, &oracle.attrs) != expected {
                    mismatches.push(format!("{mode} {plan}"));
                }
            }
        }
    }
    checks.push(check(
        "output_equality",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{runs} executions match {} oracle rows", expected.len())
        } else {
            format!("mismatch: {}", mismatches.join("; "))
        },
    ));

    let schedule = plan_transfer(&g, &filtered)?;
    let (exact, _) = transfer_phase(
        &filtered,
        &schedule,
        SemiJoinMode::Exact,
        PruneFlags::default(),
    )?;
    let (bloom, _) = transfer_phase(
        &filtered,
        &schedule,
        SemiJoinMode::Bloom,
        PruneFlags::default(),
    )?;
    let exact_surv = survivors(&exact.instance);
    let bloom_surv = survivors(&bloom.instance);

    if class.is_alpha_acyclic() {
        let want = oracle.contributing_all();
        let bad: Vec<&String> = want
            .iter()
            .filter(|(n, s)| exact_surv[*n] != **s)
            .map(|(n, _)| n)
            .collect();
        checks.push(check(
            "full_reduction",
            bad.is_empty(),
            if bad.is_empty() {
                "survivors equal contributing tuples".to_string()
            } else {
                format!("extra or missing survivors in {bad:?}")
            },
        ));
    } else {
        checks.push(skipped("full_reduction", "query is cyclic"));
    }

    let not_superset: Vec<&String> = exact_surv
        .iter()
        .filter(|(n, s)| !s.is_subset(&bloom_surv[*n]))
        .map(|(n, _)| n)
        .collect();
    checks.push(check(
        "bloom_superset",
        not_superset.is_empty(),
        if not_superset.is_empty() {
            "bloom survivors contain exact survivors".to_string()
        } else {
            format!("bloom dropped tuples in {not_superset:?}")
        },
    ));

    let mut unsafe_plans = Vec::new();
    let out = oracle.len();
    if !class.is_alpha_acyclic() {
        checks.push(skipped("safety_bound", "query is cyclic"));
    } else if g.len() > MAX_ENUMERATION {
        checks.push(skipped(
            "safety_bound",
            format!("more than {MAX_ENUMERATION} relations"),
        ));
    } else {
        let mut plans = enumerate_left_deep(&g, MAX_ENUMERATION).expect("size checked");
        plans.extend(enumerate_bushy(&g, MAX_ENUMERATION).expect("size checked"));
        let m = g.len();
        let mut disagreements = Vec::new();
        for plan in &plans {
            let (_, st) = join_phase_limited(&exact, plan, None)?;
            let tree = plan.tree();
            let over: Vec<Vec<&str>> = tree
                .subjoins()
                .into_iter()
                .zip(&st.joins)
                .filter(|(_, j)| j.rows > out)
                .map(|(s, _)| s)
                .collect();
            let total_ok = st.join_work() <= m.saturating_sub(1) * out;
            if !over.is_empty() || !total_ok {
                unsafe_plans.push(plan.to_string());
            }
            if class.is_gamma_acyclic() {
                continue;
            }
            for sub in over {
                if safe_subjoin(&g, &sub)? {
                    disagreements.push(format!("{plan}: {sub:?} is safe but exceeds the output"));
                }
            }
        }
        if class.is_gamma_acyclic() {
            checks.push(check(
                "safety_bound",
                unsafe_plans.is_empty(),
                format!(
                    "{} plans, {} exceed the bound",
                    plans.len(),
                    unsafe_plans.len()
                ),
            ));
        } else {
            checks.push(check(
                "safe_subjoin_agreement",
                disagreements.is_empty(),
                if disagreements.is_empty() {
                    format!(
                        "{} plans, {} exceed the output, all through unsafe subjoins",
                        plans.len(),
                        unsafe_plans.len()
                    )
                } else {
                    disagreements.join("; ")
                },
            ));
        }
    }

    Ok(VerifyReport {
        query: query.name.clone(),
        acyclicity: class_name(class).to_string(),
        output_rows: out,
        checks,
        unsafe_plans,
    })
}

pub fn class_name(c: AcyclicityClass) -> &'static str {
    match c {
        AcyclicityClass::GammaAcyclic => "gamma-acyclic",
        AcyclicityClass::AlphaAcyclicOnly => "alpha-acyclic",
        AcyclicityClass::Cyclic => "cyclic",
    }
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    RptExact,
    RptBloom,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::RptExact, Variant::RptBloom];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::RptExact => "rpt-exact",
            Variant::RptBloom => "rpt-bloom",
        }
    }

    pub fn mode(self) -> Option<SemiJoinMode> {
        match self {
            Variant::Baseline => None,
            Variant::RptExact => Some(SemiJoinMode::Exact),
            Variant::RptBloom => Some(SemiJoinMode::Bloom),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    LeftDeep,
    Bushy,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::LeftDeep => "left_deep",
            Shape::Bushy => "bushy",
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "left_deep" | "left-deep" => Ok(Shape::LeftDeep),
            "bushy" => Ok(Shape::Bushy),
            _ => Err(format!("unknown shape {s}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanCount {
    /// Plan budget derived from the join count.
    Formula,
    Fixed(usize),
    /// Every Cartesian-free plan of the shape.
    Exhaustive,
}

impl std::str::FromStr for PlanCount {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "formula" => Ok(PlanCount::Formula),
            "all" | "exhaustive" => Ok(PlanCount::Exhaustive),
            n => n
                .parse()
                .map(PlanCount::Fixed)
                .map_err(|_| format!("expected a number, formula or all, got {n}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub variants: Vec<Variant>,
    pub shapes: Vec<Shape>,
    pub plans: PlanCount,
    pub seed: u64,
    pub timeout_multiple: f64,
    pub wall_time: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            variants: Variant::ALL.to_vec(),
            shapes: vec![Shape::LeftDeep, Shape::Bushy],
            plans: PlanCount::Formula,
            seed: 0,
            timeout_multiple: DEFAULT_TIMEOUT_MULTIPLE,
            wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub variant: Variant,
    pub shape: Shape,
    pub plan_id: usize,
    pub seed: Option<u64>,
    pub plan: String,
    /// Join outputs including the final result, plus reduced base tables for RPT variants.
    pub metric: u64,
    pub is_timeout: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    pub join_work: u64,
    pub max_intermediate: u64,
    pub output_rows: Option<u64>,
    pub output_digest: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfSummary {
    pub variant: Variant,
    pub shape: Shape,
    pub plans: usize,
    pub timeouts: usize,
    pub min: u64,
    pub max: u64,
    /// `None` when the minimum is zero and the maximum is not.
    pub rf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub query: String,
    pub seed: u64,
    pub records: Vec<PlanRecord>,
    pub summary: Vec<RfSummary>,
}

/// max/min of `values`; 1 when all are equal, `None` when only the minimum is 0.
pub fn robustness_factor(values: &[u64]) -> Option<f64> {
    let (min, max) = (values.iter().min()?, values.iter().max()?);
    if min == max {
        Some(1.0)
    } else if *min == 0 {
        None
    } else {
        Some(*max as f64 / *min as f64)
    }
}

pub fn summarize(records: &[PlanRecord]) -> Vec<RfSummary> {
    let mut groups: BTreeMap<(Variant, Shape), Vec<&PlanRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.variant, r.shape)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((variant, shape), rs)| {
            let values: Vec<u64> = rs.iter().map(|r| r.metric).collect();
            RfSummary {
                variant,
                shape,
                plans: rs.len(),
                timeouts: rs.iter().filter(|r| r.is_timeout).count(),
                min: values.iter().copied().min().unwrap_or(0),
                max: values.iter().copied().max().unwrap_or(0),
                rf: robustness_factor(&values),
            }
        })
        .collect()
}

impl RobustnessReport {
    pub fn rf(&self, variant: Variant, shape: Shape) -> Option<&RfSummary> {
        self.summary
            .iter()
            .find(|s| s.variant == variant && s.shape == shape)
    }

    pub fn records_for(&self, variant: Variant, shape: Shape) -> impl Iterator<Item = &PlanRecord> {
        self.records
            .iter()
            .filter(move |r| r.variant == variant && r.shape == shape)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_time = self.records.iter().any(|r| r.wall_time.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "variant",
            "shape",
            "plan_id",
            "seed",
            "metric",
            "is_timeout",
        ];
        if with_time {
            header.push("wall_time");
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.variant.as_str().to_string(),
                r.shape.as_str().to_string(),
                r.plan_id.to_string(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.metric.to_string(),
                r.is_timeout.to_string(),
            ];
            if with_time {
                row.push(r.wall_time.map(|t| format!("{t:.6}")).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown format {s}")),
        }
    }
}

pub fn emit_report(r: &RobustnessReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_report(r, format, file)
}

pub fn write_report<W: Write>(
    r: &RobustnessReport,
    format: ReportFormat,
    mut out: W,
) -> Result<()> {
    match format {
        ReportFormat::Csv => r.write_csv(out),
        ReportFormat::Json => {
            out.write_all(r.to_json().as_bytes())?;
            out.write_all(b"\n")?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Plans for one shape, each with an optional sampling seed.
pub fn sweep_plans(
    g: &JoinGraph,
    shape: Shape,
    count: PlanCount,
    master: u64,
) -> Result<Vec<JoinPlan>> {
    let stream = shape as u64;
    let sample = |n: usize| -> Vec<JoinPlan> {
        (0..n)
            .map(|i| {
                let seed = derive_seed(master, stream, i as u64);
                match shape {
                    Shape::LeftDeep => sample_left_deep(g, seed),
                    Shape::Bushy => sample_bushy(g, seed),
                }
            })
            .collect()
    };
    match count {
        PlanCount::Formula => Ok(sample(plan_budget(g.len().saturating_sub(1)))),
        PlanCount::Fixed(n) => Ok(sample(n)),
        PlanCount::Exhaustive => {
            let out = match shape {
                Shape::LeftDeep => enumerate_left_deep(g, MAX_ENUMERATION),
                Shape::Bushy => enumerate_bushy(g, MAX_ENUMERATION),
            };
            out.map_err(|_| HarnessError::TooManyRelations {
                found: g.len(),
                limit: MAX_ENUMERATION,
            })
        }
    }
}

/// Executes every plan of every shape under every variant.
///
/// Each variant's transfer phase runs once and is shared by its plans. A
/// plan times out when its metric would exceed `timeout_multiple` times the
/// best metric seen so far for the same variant and shape; its metric is
/// then recorded as that cap.
pub fn robustness_sweep(
    query: &Query,
    raw: &Instance,
    cfg: &SweepConfig,
) -> Result<RobustnessReport> {
    let g = query.join_graph()?;
    let filtered = query.prepare(raw)?;
    let mut plan_sets = Vec::new();
    for &shape in &cfg.shapes {
        plan_sets.push((shape, sweep_plans(&g, shape, cfg.plans, cfg.seed)?));
    }
    let mut records = Vec::new();
    for &variant in &cfg.variants {
        let (reduced, base) = match variant.mode() {
            None => (ReducedInstance::unreduced(filtered.clone()), 0u64),
            Some(mode) => {
                let schedule = plan_transfer(&g, &filtered)?;
                let (red, st) = transfer_phase(&filtered, &schedule, mode, PruneFlags::default())?;
                (red, st.reduced_base_rows as u64)
            }
        };
        for (shape, plans) in &plan_sets {
            let mut best: Option<u64> = None;
            for (plan_id, plan) in plans.iter().enumerate() {
                let cap = best.map(|b| (cfg.timeout_multiple * b.max(1) as f64).ceil() as u64);
                let join_budget = cap.map(|c| c.saturating_sub(base) as usize);
                let start = Instant::now();
                let (out, st) = join_phase_limited(&reduced, plan, join_budget)?;
                let elapsed = start.elapsed().as_secs_f64();
                let (metric, output_rows, output_digest) = match &out {
                    Some(rel) => {
                        let mut attrs = rel.schema().attrs().to_vec();
                        attrs.sort();
                        let rows = canonical_rows(rel, &attrs);
                        (
                            base + st.join_work() as u64,
                            Some(rows.len() as u64),
                            Some(digest(&rows)),
                        )
                    }
                    None => (cap.expect("timeouts need a cap"), None, None),
                };
                if out.is_some() {
                    best = Some(best.map_or(metric, |b| b.min(metric)));
                }
                records.push(PlanRecord {
                    variant,
                    shape: *shape,
                    plan_id,
                    seed: plan.seed,
                    plan: plan.to_string(),
                    metric,
                    is_timeout: out.is_none(),
                    wall_time: cfg.wall_time.then_some(elapsed),
                    join_work: st.join_work() as u64,
                    max_intermediate: st.max_join_rows() as u64,
                    output_rows,
                    output_digest,
                });
            }
        }
    }
    let summary = summarize(&records);
    Ok(RobustnessReport {
        query: query.name.clone(),
        seed: cfg.seed,
        records,
        summary,
    })
}
