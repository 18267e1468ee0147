//! Shared generators and brute-force oracles for integration tests.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;

use rpt::joingraph::{build_join_graph, JoinGraph};
use rpt::query::{Instance, Query, RelationDef};
use rpt::relstore::{CmpOp, Predicate, Relation, Schema};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmallShape {
    Chain,
    Star,
    Fig2,
}

pub const ACYCLIC_SHAPES: [SmallShape; 3] = [SmallShape::Chain, SmallShape::Star, SmallShape::Fig2];

fn column<R: Rng>(rng: &mut R, rows: usize, dom: i64) -> Vec<i64> {
    (0..rows).map(|_| rng.random_range(0..dom)).collect()
}

/// Relation definitions and data for one small random query.
pub fn random_query<R: Rng>(rng: &mut R, shape: SmallShape, max_rows: usize) -> (Query, Instance) {
    let schemas: Vec<(String, Vec<String>)> = match shape {
        SmallShape::Chain => {
            let k = rng.random_range(3..=6);
            (1..=k)
                .map(|i| {
                    (
                        format!("R{i}"),
                        vec![format!("A{}", i - 1), format!("A{i}")],
                    )
                })
                .collect()
        }
        SmallShape::Star => {
            let k = rng.random_range(2..=5);
            let mut v = vec![("F".to_string(), (1..=k).map(|i| format!("K{i}")).collect())];
            v.extend((1..=k).map(|i| (format!("D{i}"), vec![format!("K{i}"), format!("P{i}")])));
            v
        }
        SmallShape::Fig2 => vec![
            ("R".to_string(), vec!["A".to_string(), "B".to_string()]),
            ("S".to_string(), vec!["A".to_string(), "C".to_string()]),
            ("T".to_string(), vec!["B".to_string(), "D".to_string()]),
        ],
    };
    // one key domain per query, sized for a join fan-out near 1
    let fanout = rng.random_range(0.7..1.6);
    let dom = ((max_rows as f64 / fanout).ceil() as i64).max(2);
    let mut defs = Vec::new();
    let mut rels = Vec::new();
    for (name, attrs) in &schemas {
        let rows = rng.random_range(max_rows / 2..=max_rows);
        let attr_refs: Vec<&str> = attrs.iter().map(String::as_str).collect();
        let cols = attrs.iter().map(|_| column(rng, rows, dom)).collect();
        rels.push(Relation::from_columns(name.as_str(), Schema::of(&attr_refs), cols).unwrap());
        let mut def = RelationDef::new(name.as_str(), &attr_refs);
        if rng.random_bool(0.4) {
            let attr = *attr_refs.choose(rng).unwrap();
            let op = *[CmpOp::Eq, CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge]
                .choose(rng)
                .unwrap();
            def = def.with_filter(Predicate::new(attr, op, rng.random_range(0..dom)));
        }
        defs.push(def);
    }
    (Query::new(defs), Instance::new(rels))
}

/// Random connected join graph on at most `max_v` relations over a small attribute pool.
pub fn random_graph<R: Rng>(rng: &mut R, max_v: usize) -> JoinGraph {
    const POOL: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];
    loop {
        let n = rng.random_range(1..=max_v);
        let pool = rng.random_range(2..=POOL.len());
        let rels: Vec<(String, Schema)> = (0..n)
            .map(|i| {
                let width = rng.random_range(1..=pool.min(4));
                let mut attrs: Vec<&str> =
                    POOL[..pool].choose_multiple(rng, width).copied().collect();
                attrs.sort_unstable();
                (format!("V{i}"), Schema::of(&attrs))
            })
            .collect();
        if let Ok(g) = build_join_graph(rels) {
            return g;
        }
    }
}

/// Maximum spanning-tree weight by exhaustive search over edge subsets.
pub fn brute_force_max_spanning(g: &JoinGraph) -> usize {
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    fn go(
        g: &JoinGraph,
        i: usize,
        parent: &[usize],
        picked: usize,
        weight: usize,
        best: &mut Option<usize>,
    ) {
        if picked + 1 == g.len() {
            *best = Some(best.map_or(weight, |b| b.max(weight)));
            return;
        }
        if i == g.edges().len() || g.edges().len() - i < g.len() - 1 - picked {
            return;
        }
        let e = &g.edges()[i];
        let mut p = parent.to_vec();
        let (ra, rb) = (find(&mut p, e.a), find(&mut p, e.b));
        if ra != rb {
            p[ra] = rb;
            go(g, i + 1, &p, picked + 1, weight + e.weight(), best);
        }
        go(g, i + 1, parent, picked, weight, best);
    }
    let mut best = None;
    go(g, 0, &(0..g.len()).collect::<Vec<_>>(), 0, 0, &mut best);
    best.expect("connected graph has a spanning tree")
}
