//! Join graphs, join trees and transfer schedules.
//!
//! Vertices are relations; an edge joins two relations that share at least
//! one attribute and is weighted by the number of shared attributes. A
//! spanning tree is a join tree exactly when it is a maximum-weight spanning
//! tree of an α-acyclic graph, which is what [`largest_root`] builds.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::relstore::{AttributeId, Schema};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("a join graph needs at least one relation")]
    Empty,
    #[error("duplicate relation name {0}")]
    DuplicateRelation(String),
    #[error("join graph is disconnected: components {0:?}")]
    Disconnected(Vec<Vec<String>>),
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("{0} and {1} share no attribute")]
    NoSharedAttribute(String, String),
    #[error("invalid join tree: {0}")]
    InvalidTree(String),
    #[error("expected {expected} cardinalities, got {found}")]
    Cardinalities { expected: usize, found: usize },
}

#[derive(Clone, Debug)]
pub struct Vertex {
    pub name: String,
    pub schema: Schema,
}

/// Undirected edge; `a < b` by vertex index.
#[derive(Clone, Debug)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub shared: Vec<AttributeId>,
}

impl Edge {
    pub fn weight(&self) -> usize {
        self.shared.len()
    }

    pub fn other(&self, v: usize) -> usize {
        if v == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Clone, Debug)]
pub struct JoinGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

/// Builds the join graph and rejects disconnected inputs.
pub fn build_join_graph<N, I>(relations: I) -> Result<JoinGraph, GraphError>
where
    N: Into<String>,
    I: IntoIterator<Item = (N, Schema)>,
{
    let g = JoinGraph::unchecked(relations)?;
    let comps = g.components();
    if comps.len() > 1 {
        return Err(GraphError::Disconnected(
            comps
                .into_iter()
                .map(|c| c.into_iter().map(|v| g.vertices[v].name.clone()).collect())
                .collect(),
        ));
    }
    Ok(g)
}

impl JoinGraph {
    fn unchecked<N, I>(relations: I) -> Result<JoinGraph, GraphError>
    where
        N: Into<String>,
        I: IntoIterator<Item = (N, Schema)>,
    {
        let vertices: Vec<Vertex> = relations
            .into_iter()
            .map(|(n, schema)| Vertex {
                name: n.into(),
                schema,
            })
            .collect();
        if vertices.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut index = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.name.clone(), i).is_some() {
                return Err(GraphError::DuplicateRelation(v.name.clone()));
            }
        }
        let mut edges = Vec::new();
        let mut adjacency = vec![Vec::new(); vertices.len()];
        for a in 0..vertices.len() {
            for b in a + 1..vertices.len() {
                let shared = vertices[a].schema.shared_with(&vertices[b].schema);
                if !shared.is_empty() {
                    adjacency[a].push(edges.len());
                    adjacency[b].push(edges.len());
                    edges.push(Edge { a, b, shared });
                }
            }
        }
        Ok(JoinGraph {
            vertices,
            edges,
            adjacency,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn name(&self, v: usize) -> &str {
        &self.vertices[v].name
    }

    pub fn names(&self) -> Vec<String> {
        self.vertices.iter().map(|v| v.name.clone()).collect()
    }

    pub fn schema(&self, v: usize) -> &Schema {
        &self.vertices[v].schema
    }

    pub fn index_of(&self, name: &str) -> Result<usize, GraphError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownRelation(name.to_string()))
    }

    pub fn incident(&self, v: usize) -> impl Iterator<Item = &Edge> {
        self.adjacency[v].iter().map(move |&e| &self.edges[e])
    }

    pub fn edge_between(&self, u: usize, v: usize) -> Option<&Edge> {
        self.incident(u).find(|e| e.other(u) == v)
    }

    pub fn weight(&self, u: usize, v: usize) -> usize {
        self.edge_between(u, v).map_or(0, Edge::weight)
    }

    pub fn max_edge_weight(&self) -> usize {
        self.edges.iter().map(Edge::weight).max().unwrap_or(0)
    }

    /// Connected components as sorted vertex-index lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut i = 0;
            while i < comp.len() {
                let v = comp[i];
                i += 1;
                for e in self.incident(v) {
                    let w = e.other(v);
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// True when `subset` induces a connected subgraph.
    pub fn is_connected_subset(&self, subset: &[usize]) -> bool {
        let Some(&first) = subset.first() else {
            return false;
        };
        let member: BTreeSet<usize> = subset.iter().copied().collect();
        let mut seen = BTreeSet::from([first]);
        let mut stack = vec![first];
        while let Some(v) = stack.pop() {
            for e in self.incident(v) {
                let w = e.other(v);
                if member.contains(&w) && seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        seen.len() == member.len()
    }

    /// Subgraph over `subset`, vertices in the given order.
    pub fn induced(&self, subset: &[usize]) -> Result<JoinGraph, GraphError> {
        build_join_graph(subset.iter().map(|&v| {
            (
                self.vertices[v].name.clone(),
                self.vertices[v].schema.clone(),
            )
        }))
    }

    /// Every attribute that appears in some relation.
    pub fn attributes(&self) -> BTreeSet<AttributeId> {
        self.vertices
            .iter()
            .flat_map(|v| v.schema.attrs().iter().cloned())
            .collect()
    }

    fn check_cards(&self, cards: &[usize]) -> Result<(), GraphError> {
        if cards.len() != self.len() {
            return Err(GraphError::Cardinalities {
                expected: self.len(),
                found: cards.len(),
            });
        }
        Ok(())
    }
}

/// Directed child-to-parent edge of a [`JoinTree`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TreeEdge {
    pub child: usize,
    pub parent: usize,
    pub shared: Vec<AttributeId>,
}

/// Rooted spanning arborescence; edges kept in insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinTree {
    names: Vec<String>,
    root: usize,
    parent: Vec<Option<usize>>,
    edges: Vec<TreeEdge>,
}

impl JoinTree {
    /// Builds a tree from `(child, parent)` name pairs over `g`'s vertices.
    pub fn from_links(
        g: &JoinGraph,
        root: &str,
        links: &[(&str, &str)],
    ) -> Result<JoinTree, GraphError> {
        let root = g.index_of(root)?;
        let mut edges = Vec::with_capacity(links.len());
        for (c, p) in links {
            let (c, p) = (g.index_of(c)?, g.index_of(p)?);
            let e = g
                .edge_between(c, p)
                .ok_or_else(|| GraphError::NoSharedAttribute(g.name(c).into(), g.name(p).into()))?;
            edges.push(TreeEdge {
                child: c,
                parent: p,
                shared: e.shared.clone(),
            });
        }
        JoinTree::new(g.names(), root, edges)
    }

    pub fn new(
        names: Vec<String>,
        root: usize,
        edges: Vec<TreeEdge>,
    ) -> Result<JoinTree, GraphError> {
        let n = names.len();
        if root >= n {
            return Err(GraphError::InvalidTree(format!("root {root} out of range")));
        }
        if edges.len() + 1 != n {
            return Err(GraphError::InvalidTree(format!(
                "{} edges for {} vertices",
                edges.len(),
                n
            )));
        }
        let mut parent = vec![None; n];
        for e in &edges {
            if e.child >= n || e.parent >= n || e.child == root {
                return Err(GraphError::InvalidTree(format!(
                    "bad edge {}->{}",
                    e.child, e.parent
                )));
            }
            if parent[e.child].replace(e.parent).is_some() {
                return Err(GraphError::InvalidTree(format!(
                    "{} has two parents",
                    names[e.child]
                )));
            }
        }
        for mut v in 0..n {
            let mut hops = 0;
            while let Some(p) = parent[v] {
                v = p;
                hops += 1;
                if hops > n {
                    return Err(GraphError::InvalidTree("cycle".into()));
                }
            }
            if v != root {
                return Err(GraphError::InvalidTree(format!(
                    "{} does not reach the root",
                    names[v]
                )));
            }
        }
        Ok(JoinTree {
            names,
            root,
            parent,
            edges,
        })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_name(&self) -> &str {
        &self.names[self.root]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    /// Children of `v` in the order their edges were added.
    pub fn children(&self, v: usize) -> impl Iterator<Item = &TreeEdge> {
        self.edges.iter().filter(move |e| e.parent == v)
    }

    pub fn weight(&self) -> usize {
        self.edges.iter().map(|e| e.shared.len()).sum()
    }

    pub fn depth(&self, mut v: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[v] {
            v = p;
            d += 1;
        }
        d
    }

    /// `(child, parent)` name pairs in insertion order.
    pub fn links(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|e| (self.names[e.child].clone(), self.names[e.parent].clone()))
            .collect()
    }
}

impl fmt::Display for JoinTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "root {}", self.root_name())?;
        for e in &self.edges {
            write!(f, "; {}->{}", self.names[e.child], self.names[e.parent])?;
        }
        Ok(())
    }
}

/// Prim-style growth shared by [`largest_root`] and [`safe_subjoin`].
struct Growth<'g> {
    g: &'g JoinGraph,
    cards: &'g [usize],
    in_tree: Vec<bool>,
    depth: Vec<usize>,
    edges: Vec<TreeEdge>,
}

impl Growth<'_> {
    fn run(mut self) -> Vec<TreeEdge> {
        let g = self.g;
        loop {
            // (weight, card R, R, depth S, S, edge)
            let mut best: Option<(usize, usize, usize, usize, usize, usize)> = None;
            for (ei, e) in g.edges.iter().enumerate() {
                let (r, s) = match (self.in_tree[e.a], self.in_tree[e.b]) {
                    (false, true) => (e.a, e.b),
                    (true, false) => (e.b, e.a),
                    _ => continue,
                };
                let cand = (e.weight(), self.cards[r], r, self.depth[s], s, ei);
                let better = match best {
                    None => true,
                    Some(b) => self.prefer(cand, b),
                };
                if better {
                    best = Some(cand);
                }
            }
            let Some((_, _, r, _, s, ei)) = best else {
                break;
            };
            self.in_tree[r] = true;
            self.depth[r] = self.depth[s] + 1;
            self.edges.push(TreeEdge {
                child: r,
                parent: s,
                shared: g.edges[ei].shared.clone(),
            });
        }
        self.edges
    }

    /// Largest weight, then largest R (cardinality, then smallest name),
    /// then shallowest S, then smallest S name.
    fn prefer(
        &self,
        a: (usize, usize, usize, usize, usize, usize),
        b: (usize, usize, usize, usize, usize, usize),
    ) -> bool {
        let name = |v: usize| self.g.name(v);
        if a.0 != b.0 {
            return a.0 > b.0;
        }
        if a.1 != b.1 {
            return a.1 > b.1;
        }
        if a.2 != b.2 {
            return name(a.2) < name(b.2);
        }
        if a.3 != b.3 {
            return a.3 < b.3;
        }
        name(a.4) < name(b.4)
    }
}

/// Index of the largest relation; ties go to the smallest name.
fn largest_vertex(g: &JoinGraph, cards: &[usize]) -> usize {
    (0..g.len())
        .min_by(|&a, &b| {
            cards[b]
                .cmp(&cards[a])
                .then_with(|| g.name(a).cmp(g.name(b)))
        })
        .expect("non-empty graph")
}

/// Maximum spanning tree grown from the largest relation.
///
/// `cards[i]` is the visible row count of vertex `i`. Among the frontier
/// edges the heaviest wins; ties prefer the larger outside relation and then
/// the shallower inside endpoint, which keeps trees flat.
pub fn largest_root(g: &JoinGraph, cards: &[usize]) -> Result<JoinTree, GraphError> {
    g.check_cards(cards)?;
    let root = largest_vertex(g, cards);
    let mut in_tree = vec![false; g.len()];
    in_tree[root] = true;
    let edges = Growth {
        g,
        cards,
        in_tree,
        depth: vec![0; g.len()],
        edges: Vec::new(),
    }
    .run();
    JoinTree::new(g.names(), root, edges)
}

/// Maximum spanning tree weight by Kruskal's algorithm.
pub fn max_spanning_weight(g: &JoinGraph) -> usize {
    let mut order: Vec<&Edge> = g.edges.iter().collect();
    order.sort_by_key(|e| std::cmp::Reverse(e.weight()));
    let mut parent: Vec<usize> = (0..g.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut total = 0;
    for e in order {
        let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
        if ra != rb {
            parent[ra] = rb;
            total += e.weight();
        }
    }
    total
}

/// True iff every attribute's relations induce a connected subtree of `t`.
pub fn is_join_tree(t: &JoinTree, g: &JoinGraph) -> bool {
    if t.names.len() != g.len() || t.names.iter().enumerate().any(|(i, n)| n != g.name(i)) {
        return false;
    }
    g.attributes().iter().all(|attr| {
        let holders = g
            .vertices
            .iter()
            .filter(|v| v.schema.contains(attr))
            .count();
        let inside = t
            .edges
            .iter()
            .filter(|e| g.schema(e.child).contains(attr) && g.schema(e.parent).contains(attr))
            .count();
        inside + 1 == holders
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AcyclicityClass {
    GammaAcyclic,
    AlphaAcyclicOnly,
    Cyclic,
}

impl AcyclicityClass {
    pub fn is_alpha_acyclic(self) -> bool {
        !matches!(self, AcyclicityClass::Cyclic)
    }

    pub fn is_gamma_acyclic(self) -> bool {
        matches!(self, AcyclicityClass::GammaAcyclic)
    }
}

impl fmt::Display for AcyclicityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcyclicityClass::GammaAcyclic => "gamma-acyclic",
            AcyclicityClass::AlphaAcyclicOnly => "alpha-acyclic (not gamma-acyclic)",
            AcyclicityClass::Cyclic => "cyclic",
        })
    }
}

/// Relations and attributes realizing the size-3 pattern
/// `R(x, y), S(y, z), T(x, y, z)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GammaTriangle {
    pub r: String,
    pub s: String,
    pub t: String,
    pub x: Vec<AttributeId>,
    pub y: Vec<AttributeId>,
    pub z: Vec<AttributeId>,
}

/// Searches all relation triples and role assignments for the size-3
/// γ-cycle pattern. `x` is shared by R and T but not S, `z` by S and T but
/// not R, `y` by all three; each group is reported maximal.
pub fn find_gamma_triangle(g: &JoinGraph) -> Option<GammaTriangle> {
    let n = g.len();
    for t in 0..n {
        for r in 0..n {
            for s in 0..n {
                if r == s || r == t || s == t {
                    continue;
                }
                let (rs, ss, ts) = (g.schema(r), g.schema(s), g.schema(t));
                let y: Vec<_> = ts
                    .attrs()
                    .iter()
                    .filter(|a| rs.contains(a) && ss.contains(a))
                    .cloned()
                    .collect();
                if y.is_empty() {
                    continue;
                }
                let x: Vec<_> = ts
                    .attrs()
                    .iter()
                    .filter(|a| rs.contains(a) && !ss.contains(a))
                    .cloned()
                    .collect();
                let z: Vec<_> = ts
                    .attrs()
                    .iter()
                    .filter(|a| ss.contains(a) && !rs.contains(a))
                    .cloned()
                    .collect();
                if !x.is_empty() && !z.is_empty() {
                    return Some(GammaTriangle {
                        r: g.name(r).into(),
                        s: g.name(s).into(),
                        t: g.name(t).into(),
                        x,
                        y,
                        z,
                    });
                }
            }
        }
    }
    None
}

/// α-acyclicity via a maximum spanning tree, γ via the size-3 pattern.
pub fn classify_acyclicity(g: &JoinGraph) -> AcyclicityClass {
    let tree = largest_root(g, &vec![0; g.len()]).expect("cardinalities sized to graph");
    if !is_join_tree(&tree, g) {
        return AcyclicityClass::Cyclic;
    }
    // no composite-key joins: the pattern needs |T ∩ R| ≥ 2
    if g.max_edge_weight() <= 1 {
        return AcyclicityClass::GammaAcyclic;
    }
    if find_gamma_triangle(g).is_some() {
        AcyclicityClass::AlphaAcyclicOnly
    } else {
        AcyclicityClass::GammaAcyclic
    }
}

/// GYO ear removal; true iff the hypergraph reduces to a single relation.
pub fn gyo_reduce(g: &JoinGraph) -> bool {
    let mut remaining: Vec<BTreeSet<&AttributeId>> = g
        .vertices
        .iter()
        .map(|v| v.schema.attrs().iter().collect())
        .collect();
    while remaining.len() > 1 {
        let ear = (0..remaining.len()).find(|&e| {
            let shared: BTreeSet<&AttributeId> = remaining[e]
                .iter()
                .copied()
                .filter(|a| {
                    remaining
                        .iter()
                        .enumerate()
                        .any(|(j, other)| j != e && other.contains(a))
                })
                .collect();
            remaining
                .iter()
                .enumerate()
                .any(|(f, other)| f != e && shared.is_subset(other))
        });
        match ear {
            Some(e) => {
                remaining.swap_remove(e);
            }
            None => return false,
        }
    }
    true
}

/// Whether joining `subset` first can never exceed the output size on a
/// fully reduced instance: grow a maximum spanning tree of the subset, extend
/// it over the whole graph, and compare with the maximum spanning weight.
pub fn safe_subjoin<S: AsRef<str>>(g: &JoinGraph, subset: &[S]) -> Result<bool, GraphError> {
    let members: Vec<usize> = subset
        .iter()
        .map(|s| g.index_of(s.as_ref()))
        .collect::<Result<_, _>>()?;
    let sub = g.induced(&members)?;
    let sub_tree = largest_root(&sub, &vec![0; sub.len()])?;

    let mut in_tree = vec![false; g.len()];
    let mut depth = vec![0; g.len()];
    for (local, &global) in members.iter().enumerate() {
        in_tree[global] = true;
        depth[global] = sub_tree.depth(local);
    }
    let seeded: Vec<TreeEdge> = sub_tree
        .edges()
        .iter()
        .map(|e| TreeEdge {
            child: members[e.child],
            parent: members[e.parent],
            shared: e.shared.clone(),
        })
        .collect();
    let cards = vec![0; g.len()];
    let edges = Growth {
        g,
        cards: &cards,
        in_tree,
        depth,
        edges: seeded,
    }
    .run();
    let weight: usize = edges.iter().map(|e| e.shared.len()).sum();
    Ok(weight == max_spanning_weight(g))
}

/// `target ⋉ source` on `attrs`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SemiJoinStep {
    pub target: String,
    pub source: String,
    pub attrs: Vec<AttributeId>,
}

impl fmt::Display for SemiJoinStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}⋉{}", self.target, self.source)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TransferSchedule {
    pub forward: Vec<SemiJoinStep>,
    pub backward: Vec<SemiJoinStep>,
}

impl TransferSchedule {
    pub fn is_empty(&self) -> bool {
        self.forward.is_empty() && self.backward.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = &SemiJoinStep> {
        self.forward.iter().chain(&self.backward)
    }
}

impl fmt::Display for TransferSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |steps: &[SemiJoinStep]| {
            steps
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        writeln!(f, "forward: {}", list(&self.forward))?;
        write!(f, "backward: {}", list(&self.backward))
    }
}

/// Post-order forward pass (parents reduced by children) followed by a
/// level-order backward pass (children reduced by parents).
pub fn derive_schedule(t: &JoinTree) -> TransferSchedule {
    let step = |target: usize, source: usize, attrs: &[AttributeId]| SemiJoinStep {
        target: t.name(target).to_string(),
        source: t.name(source).to_string(),
        attrs: attrs.to_vec(),
    };

    let mut forward = Vec::with_capacity(t.edges.len());
    // iterative post-order: (vertex, next child cursor)
    let children: Vec<Vec<&TreeEdge>> = (0..t.names.len())
        .map(|v| t.children(v).collect())
        .collect();
    let mut stack: Vec<(usize, usize)> = vec![(t.root, 0)];
    while let Some(&mut (v, ref mut cursor)) = stack.last_mut() {
        if let Some(e) = children[v].get(*cursor) {
            *cursor += 1;
            stack.push((e.child, 0));
        } else {
            stack.pop();
            if let Some(p) = t.parent(v) {
                let e = children[p]
                    .iter()
                    .find(|e| e.child == v)
                    .expect("tree edge");
                forward.push(step(p, v, &e.shared));
            }
        }
    }

    let mut backward = Vec::with_capacity(t.edges.len());
    let mut queue = VecDeque::from([t.root]);
    while let Some(v) = queue.pop_front() {
        for e in &children[v] {
            backward.push(step(e.child, v, &e.shared));
            queue.push_back(e.child);
        }
    }
    TransferSchedule { forward, backward }
}

/// Baseline transfer schedule: each edge points from the smaller relation to
/// the larger one (ties by name), the forward pass follows a Kahn order of
/// that DAG and the backward pass a Kahn order of its reverse. In each pass a
/// relation is probed by all of its incoming filters when it is dequeued.
pub fn small2large_schedule(
    g: &JoinGraph,
    cards: &[usize],
) -> Result<TransferSchedule, GraphError> {
    g.check_cards(cards)?;
    let smaller = |u: usize, v: usize| (cards[u], g.name(u)) < (cards[v], g.name(v));
    let arcs: Vec<(usize, usize, &[AttributeId])> = g
        .edges
        .iter()
        .map(|e| {
            if smaller(e.a, e.b) {
                (e.a, e.b, e.shared.as_slice())
            } else {
                (e.b, e.a, e.shared.as_slice())
            }
        })
        .collect();

    let kahn = |arcs: &[(usize, usize, &[AttributeId])]| -> Vec<SemiJoinStep> {
        let mut indeg = vec![0usize; g.len()];
        for &(_, to, _) in arcs {
            indeg[to] += 1;
        }
        let mut ready: BTreeSet<(&str, usize)> = (0..g.len())
            .filter(|&v| indeg[v] == 0)
            .map(|v| (g.name(v), v))
            .collect();
        let mut steps = Vec::new();
        while let Some((_, v)) = ready.pop_first() {
            let mut incoming: Vec<_> = arcs.iter().filter(|a| a.1 == v).collect();
            incoming.sort_by_key(|a| g.name(a.0));
            for &&(from, to, attrs) in &incoming {
                steps.push(SemiJoinStep {
                    target: g.name(to).into(),
                    source: g.name(from).into(),
                    attrs: attrs.to_vec(),
                });
            }
            for &(from, to, _) in arcs {
                if from == v {
                    indeg[to] -= 1;
                    if indeg[to] == 0 {
                        ready.insert((g.name(to), to));
                    }
                }
            }
        }
        steps
    };

    let reversed: Vec<_> = arcs.iter().map(|&(a, b, s)| (b, a, s)).collect();
    Ok(TransferSchedule {
        forward: kahn(&arcs),
        backward: kahn(&reversed),
    })
}
