//! Cartesian-product-free join plans: random sampling and enumeration.
//!
//! Sampling draws uniformly at every decision point. Left-deep plans start
//! from a uniformly chosen relation and repeatedly append a uniformly chosen
//! joinable relation as the build side. Bushy plans repeatedly merge a
//! uniformly chosen joinable pair of candidates with random build/probe
//! sides until one candidate remains.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bloom::mix64;
use crate::joingraph::JoinGraph;

/// Portable seeded generator used for every random plan.
pub type PlanRng = ChaCha8Rng;

pub fn plan_rng(seed: u64) -> PlanRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child seed for `(stream, index)` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(stream.wrapping_add(0x9e37_79b9_7f4a_7c15))) ^ index)
}

pub const MAX_ENUMERATION: usize = 7;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("{found} relations exceed the enumeration limit of {limit}")]
    TooManyRelations { found: usize, limit: usize },
    #[error("plan references unknown relation {0}")]
    UnknownRelation(String),
    #[error("relation {0} appears more than once in the plan")]
    DuplicateRelation(String),
    #[error("plan does not cover relation {0}")]
    MissingRelation(String),
    #[error("join of {0} and {1} is a Cartesian product")]
    CartesianProduct(String, String),
}

/// Join tree node. `probe` streams through the hash table built on `build`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanNode {
    Leaf(String),
    Join {
        probe: Box<PlanNode>,
        build: Box<PlanNode>,
    },
}

impl PlanNode {
    pub fn leaf(name: impl Into<String>) -> Self {
        PlanNode::Leaf(name.into())
    }

    pub fn join(probe: PlanNode, build: PlanNode) -> Self {
        PlanNode::Join {
            probe: Box::new(probe),
            build: Box::new(build),
        }
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            PlanNode::Leaf(n) => out.push(n),
            PlanNode::Join { probe, build } => {
                probe.collect_leaves(out);
                build.collect_leaves(out);
            }
        }
    }

    /// Relation sets of every join node, in post-order.
    pub fn subjoins(&self) -> Vec<Vec<&str>> {
        let mut out = Vec::new();
        self.collect_subjoins(&mut out);
        out
    }

    fn collect_subjoins<'a>(&'a self, out: &mut Vec<Vec<&'a str>>) -> Vec<&'a str> {
        match self {
            PlanNode::Leaf(n) => vec![n.as_str()],
            PlanNode::Join { probe, build } => {
                let mut l = probe.collect_subjoins(out);
                l.extend(build.collect_subjoins(out));
                out.push(l.clone());
                l
            }
        }
    }

    pub fn num_joins(&self) -> usize {
        match self {
            PlanNode::Leaf(_) => 0,
            PlanNode::Join { probe, build } => 1 + probe.num_joins() + build.num_joins(),
        }
    }
}

impl fmt::Display for PlanNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanNode::Leaf(n) => f.write_str(n),
            PlanNode::Join { probe, build } => write!(f, "({probe}⋈{build})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanShape {
    /// Join order; each later relation is the build side.
    LeftDeep(Vec<String>),
    Bushy(PlanNode),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JoinPlan {
    #[serde(flatten)]
    pub shape: PlanShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl JoinPlan {
    pub fn left_deep<S: Into<String>>(order: impl IntoIterator<Item = S>) -> Self {
        JoinPlan {
            shape: PlanShape::LeftDeep(order.into_iter().map(Into::into).collect()),
            seed: None,
        }
    }

    pub fn bushy(root: PlanNode) -> Self {
        JoinPlan {
            shape: PlanShape::Bushy(root),
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn is_left_deep(&self) -> bool {
        matches!(self.shape, PlanShape::LeftDeep(_))
    }

    /// Binary tree form; a left-deep order folds into `((r0⋈r1)⋈r2)…`.
    pub fn tree(&self) -> PlanNode {
        match &self.shape {
            PlanShape::Bushy(n) => n.clone(),
            PlanShape::LeftDeep(order) => {
                let mut it = order.iter();
                let first = PlanNode::leaf(it.next().cloned().unwrap_or_default());
                it.fold(first, |acc, r| {
                    PlanNode::join(acc, PlanNode::leaf(r.clone()))
                })
            }
        }
    }

    pub fn num_relations(&self) -> usize {
        match &self.shape {
            PlanShape::LeftDeep(o) => o.len(),
            PlanShape::Bushy(n) => n.leaves().len(),
        }
    }

    /// Checks coverage of `g` and that every join shares an attribute.
    pub fn validate(&self, g: &JoinGraph) -> Result<(), PlanError> {
        let tree = self.tree();
        let mut seen = BTreeSet::new();
        for leaf in tree.leaves() {
            if g.index_of(leaf).is_err() {
                return Err(PlanError::UnknownRelation(leaf.to_string()));
            }
            if !seen.insert(leaf) {
                return Err(PlanError::DuplicateRelation(leaf.to_string()));
            }
        }
        if let Some(v) = g
            .vertices()
            .iter()
            .find(|v| !seen.contains(v.name.as_str()))
        {
            return Err(PlanError::MissingRelation(v.name.clone()));
        }
        check_joinable(&tree, g).map(|_| ())
    }
}

impl fmt::Display for JoinPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.tree().fmt(f)
    }
}

fn check_joinable(node: &PlanNode, g: &JoinGraph) -> Result<BTreeSet<usize>, PlanError> {
    match node {
        PlanNode::Leaf(n) => Ok(BTreeSet::from([g
            .index_of(n)
            .map_err(|_| PlanError::UnknownRelation(n.clone()))?])),
        PlanNode::Join { probe, build } => {
            let l = check_joinable(probe, g)?;
            let r = check_joinable(build, g)?;
            if !l.iter().any(|&a| r.iter().any(|&b| g.weight(a, b) > 0)) {
                return Err(PlanError::CartesianProduct(
                    probe.to_string(),
                    build.to_string(),
                ));
            }
            Ok(l.union(&r).copied().collect())
        }
    }
}

/// Plan count for a query with `joins` joins, clamped to the 3..=17 range.
pub fn plan_budget(joins: usize) -> usize {
    70 * joins.clamp(3, 17) - 190
}

fn adjacent_to_set(g: &JoinGraph, v: usize, set: &[bool]) -> bool {
    g.incident(v).any(|e| set[e.other(v)])
}

pub fn random_left_deep<R: Rng + ?Sized>(g: &JoinGraph, rng: &mut R) -> JoinPlan {
    let n = g.len();
    let mut used = vec![false; n];
    let first = rng.random_range(0..n);
    used[first] = true;
    let mut order = vec![g.name(first).to_string()];
    for _ in 1..n {
        let frontier: Vec<usize> = (0..n)
            .filter(|&v| !used[v] && adjacent_to_set(g, v, &used))
            .collect();
        let next = frontier[rng.random_range(0..frontier.len())];
        used[next] = true;
        order.push(g.name(next).to_string());
    }
    JoinPlan::left_deep(order)
}

pub fn random_bushy<R: Rng + ?Sized>(g: &JoinGraph, rng: &mut R) -> JoinPlan {
    let mut candidates: Vec<(Vec<bool>, PlanNode)> = (0..g.len())
        .map(|v| {
            let mut m = vec![false; g.len()];
            m[v] = true;
            (m, PlanNode::leaf(g.name(v)))
        })
        .collect();
    while candidates.len() > 1 {
        let mut pairs = Vec::new();
        for i in 0..candidates.len() {
            for j in i + 1..candidates.len() {
                let (a, b) = (&candidates[i].0, &candidates[j].0);
                if (0..g.len()).any(|v| a[v] && adjacent_to_set(g, v, b)) {
                    pairs.push((i, j));
                }
            }
        }
        let (i, j) = pairs[rng.random_range(0..pairs.len())];
        let (mj, nj) = candidates.swap_remove(j);
        let (mi, ni) = candidates.swap_remove(i);
        let members: Vec<bool> = mi.iter().zip(&mj).map(|(x, y)| *x || *y).collect();
        let node = if rng.random_bool(0.5) {
            PlanNode::join(ni, nj)
        } else {
            PlanNode::join(nj, ni)
        };
        candidates.push((members, node));
    }
    JoinPlan::bushy(candidates.pop().expect("non-empty graph").1)
}

/// Random left-deep plan recording its seed.
pub fn sample_left_deep(g: &JoinGraph, seed: u64) -> JoinPlan {
    random_left_deep(g, &mut plan_rng(seed)).with_seed(seed)
}

/// Random bushy plan recording its seed.
pub fn sample_bushy(g: &JoinGraph, seed: u64) -> JoinPlan {
    random_bushy(g, &mut plan_rng(seed)).with_seed(seed)
}

/// Every left-deep order whose prefixes are connected.
pub fn enumerate_left_deep(g: &JoinGraph, max_m: usize) -> Result<Vec<JoinPlan>, PlanError> {
    let limit = max_m.min(MAX_ENUMERATION);
    if g.len() > limit {
        return Err(PlanError::TooManyRelations {
            found: g.len(),
            limit,
        });
    }
    fn extend(
        g: &JoinGraph,
        used: &mut Vec<bool>,
        order: &mut Vec<usize>,
        out: &mut Vec<JoinPlan>,
    ) {
        if order.len() == g.len() {
            out.push(JoinPlan::left_deep(
                order.iter().map(|&v| g.name(v).to_string()),
            ));
            return;
        }
        for v in 0..g.len() {
            if used[v] || (!order.is_empty() && !adjacent_to_set(g, v, used)) {
                continue;
            }
            used[v] = true;
            order.push(v);
            extend(g, used, order, out);
            order.pop();
            used[v] = false;
        }
    }
    let mut out = Vec::new();
    extend(g, &mut vec![false; g.len()], &mut Vec::new(), &mut out);
    Ok(out)
}

/// Every Cartesian-free binary join tree, one per unordered shape (the
/// probe side always holds the lower-indexed relation of the split).
pub fn enumerate_bushy(g: &JoinGraph, max_m: usize) -> Result<Vec<JoinPlan>, PlanError> {
    let limit = max_m.min(MAX_ENUMERATION);
    if g.len() > limit {
        return Err(PlanError::TooManyRelations {
            found: g.len(),
            limit,
        });
    }
    let n = g.len();
    let mut adj = vec![0u32; n];
    for e in g.edges() {
        adj[e.a] |= 1 << e.b;
        adj[e.b] |= 1 << e.a;
    }
    let connected = |mask: u32| {
        let start = mask.trailing_zeros();
        let mut seen = 1u32 << start;
        let mut frontier = seen;
        while frontier != 0 {
            let v = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let next = adj[v] & mask & !seen;
            seen |= next;
            frontier |= next;
        }
        seen == mask
    };
    fn build(
        mask: u32,
        g: &JoinGraph,
        adj: &[u32],
        connected: &dyn Fn(u32) -> bool,
        memo: &mut HashMap<u32, Vec<PlanNode>>,
    ) -> Vec<PlanNode> {
        if let Some(v) = memo.get(&mask) {
            return v.clone();
        }
        let out = if mask.count_ones() == 1 {
            vec![PlanNode::leaf(g.name(mask.trailing_zeros() as usize))]
        } else {
            let low = mask & mask.wrapping_neg();
            let rest = mask & !low;
            let mut out = Vec::new();
            // subsets of `rest`, each joined with `low`
            let mut sub = rest;
            loop {
                let left = sub | low;
                let right = mask & !left;
                if right != 0 && connected(left) && connected(right) {
                    let touches = (0..g.len()).any(|v| left & (1 << v) != 0 && adj[v] & right != 0);
                    if touches {
                        let ls = build(left, g, adj, connected, memo);
                        let rs = build(right, g, adj, connected, memo);
                        for l in &ls {
                            for r in &rs {
                                out.push(PlanNode::join(l.clone(), r.clone()));
                            }
                        }
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            out
        };
        memo.insert(mask, out.clone());
        out
    }
    let mut memo = HashMap::new();
    let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    Ok(build(full, g, &adj, &connected, &mut memo)
        .into_iter()
        .map(JoinPlan::bushy)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joingraph::build_join_graph;
    use crate::relstore::Schema;
    use std::collections::HashSet;

    fn graph(rels: &[(&str, &[&str])]) -> JoinGraph {
        build_join_graph(rels.iter().map(|(n, a)| (*n, Schema::of(a)))).unwrap()
    }

    fn chain() -> JoinGraph {
        graph(&[("R", &["A", "B"]), ("S", &["B", "C"]), ("T", &["C", "D"])])
    }

    fn orders(plans: &[JoinPlan]) -> BTreeSet<String> {
        plans
            .iter()
            .map(|p| match &p.shape {
                PlanShape::LeftDeep(o) => o.concat(),
                PlanShape::Bushy(_) => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn budget_formula() {
        assert_eq!(plan_budget(3), 20);
        assert_eq!(plan_budget(17), 1000);
        assert_eq!(plan_budget(10), 510);
        assert_eq!(plan_budget(1), 20);
        assert_eq!(plan_budget(40), 1000);
    }

    #[test]
    fn enumerate_examples() {
        let two = graph(&[("R", &["A"]), ("S", &["A"])]);
        assert_eq!(enumerate_left_deep(&two, 7).unwrap().len(), 2);
        let c = enumerate_left_deep(&chain(), 7).unwrap();
        assert_eq!(
            orders(&c),
            ["RST", "SRT", "STR", "TSR"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        let star = graph(&[("C", &["X", "Y"]), ("L1", &["X"]), ("L2", &["Y"])]);
        assert_eq!(enumerate_left_deep(&star, 7).unwrap().len(), 4);
    }

    #[test]
    fn enumeration_limit() {
        let rels: Vec<(String, Schema)> = (0..8)
            .map(|i| (format!("R{i}"), Schema::of(&["A"])))
            .collect();
        let g = build_join_graph(rels).unwrap();
        assert_eq!(
            enumerate_left_deep(&g, 7).unwrap_err(),
            PlanError::TooManyRelations { found: 8, limit: 7 }
        );
        assert!(enumerate_left_deep(&chain(), 2).is_err());
    }

    #[test]
    fn bushy_enumeration_counts() {
        // chain of 3: (R⋈S)⋈T and R⋈(S⋈T)
        assert_eq!(enumerate_bushy(&chain(), 7).unwrap().len(), 2);
        // clique of 4 has 15 unordered binary trees
        let clique = graph(&[("A", &["x"]), ("B", &["x"]), ("C", &["x"]), ("D", &["x"])]);
        let plans = enumerate_bushy(&clique, 7).unwrap();
        assert_eq!(plans.len(), 15);
        let unique: HashSet<_> = plans.iter().collect();
        assert_eq!(unique.len(), 15);
        for p in &plans {
            p.validate(&clique).unwrap();
        }
    }

    #[test]
    fn left_deep_chain_continuation() {
        let g = chain();
        for seed in 0..200 {
            let p = sample_left_deep(&g, seed);
            p.validate(&g).unwrap();
            if let PlanShape::LeftDeep(o) = &p.shape {
                if o[0] == "R" {
                    assert_eq!(o[1..], ["S".to_string(), "T".to_string()]);
                }
            }
        }
    }

    #[test]
    fn two_relation_plans_both_reachable() {
        let g = graph(&[("R", &["A"]), ("S", &["A"])]);
        let ld: HashSet<String> = (0..64)
            .map(|s| sample_left_deep(&g, s).to_string())
            .collect();
        assert_eq!(ld.len(), 2);
        let bushy: HashSet<String> = (0..64).map(|s| sample_bushy(&g, s).to_string()).collect();
        assert_eq!(
            bushy,
            HashSet::from(["(R⋈S)".to_string(), "(S⋈R)".to_string()])
        );
    }

    #[test]
    fn bushy_chain_never_joins_ends_first() {
        let g = chain();
        for seed in 0..200 {
            let p = sample_bushy(&g, seed);
            p.validate(&g).unwrap();
            for sj in p.tree().subjoins() {
                let set: BTreeSet<&str> = sj.into_iter().collect();
                assert_ne!(set, BTreeSet::from(["R", "T"]));
            }
        }
    }

    #[test]
    fn seeds_reproduce() {
        let g = graph(&[
            ("A", &["x", "y"]),
            ("B", &["y", "z"]),
            ("C", &["z"]),
            ("D", &["x"]),
            ("E", &["x"]),
        ]);
        for seed in [0u64, 1, 99, u64::MAX] {
            assert_eq!(sample_left_deep(&g, seed), sample_left_deep(&g, seed));
            assert_eq!(sample_bushy(&g, seed), sample_bushy(&g, seed));
        }
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
    }

    #[test]
    fn sampling_hits_every_enumerated_plan() {
        let g = graph(&[
            ("A", &["x", "y"]),
            ("B", &["y", "z"]),
            ("C", &["z"]),
            ("D", &["x"]),
        ]);
        let all = enumerate_left_deep(&g, 7).unwrap();
        let draws = 10 * all.len();
        let seen: HashSet<PlanShape> = (0..draws as u64)
            .map(|s| sample_left_deep(&g, s).shape)
            .collect();
        for p in &all {
            assert!(seen.contains(&p.shape), "never sampled {p}");
        }
    }

    #[test]
    fn validation_errors() {
        let g = chain();
        assert_eq!(
            JoinPlan::left_deep(["R", "T", "S"])
                .validate(&g)
                .unwrap_err(),
            PlanError::CartesianProduct("R".into(), "T".into())
        );
        assert!(matches!(
            JoinPlan::left_deep(["R", "S"]).validate(&g),
            Err(PlanError::MissingRelation(_))
        ));
        assert!(matches!(
            JoinPlan::left_deep(["R", "S", "S"]).validate(&g),
            Err(PlanError::DuplicateRelation(_))
        ));
        assert!(matches!(
            JoinPlan::left_deep(["R", "S", "Q"]).validate(&g),
            Err(PlanError::UnknownRelation(_))
        ));
    }

    #[test]
    fn plan_json_forms() {
        let p = JoinPlan::left_deep(["R", "S", "T"]).with_seed(7);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"left_deep":["R","S","T"],"seed":7}"#);
        assert_eq!(serde_json::from_str::<JoinPlan>(&text).unwrap(), p);

        let b: JoinPlan =
            serde_json::from_str(r#"{"bushy":{"probe":"R","build":{"probe":"S","build":"T"}}}"#)
                .unwrap();
        assert_eq!(b.to_string(), "(R⋈(S⋈T))");
        assert_eq!(b.seed, None);
        assert_eq!(
            JoinPlan::left_deep(["R", "S", "T"]).to_string(),
            "((R⋈S)⋈T)"
        );
    }
}
