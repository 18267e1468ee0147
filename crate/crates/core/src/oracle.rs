//! Nested-loop reference join.
//!
//! Enumerates every combination of visible rows that agrees on shared
//! attributes by backtracking over row ids. Slow by design; it shares no
//! code with the hash join or the transfer schedules and serves as ground
//! truth for them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::bloom::mix64;
use crate::query::Instance;
use crate::relstore::{AttributeId, Relation};

#[derive(Clone, Debug)]
pub struct OracleJoin {
    /// Relations in the order used for `combos`.
    pub relations: Vec<String>,
    /// Sorted union of all attributes.
    pub attrs: Vec<AttributeId>,
    /// One entry per output row: the physical row id taken from each relation.
    pub combos: Vec<Vec<usize>>,
    /// Output rows projected onto `attrs`.
    rows: Vec<Vec<i64>>,
}

impl OracleJoin {
    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    /// Output multiset over `attrs`, sorted.
    pub fn sorted_rows(&self) -> Vec<Vec<i64>> {
        let mut r = self.rows.clone();
        r.sort_unstable();
        r
    }

    /// Row ids of `name` that take part in at least one output row.
    pub fn contributing(&self, name: &str) -> BTreeSet<usize> {
        let Some(i) = self.relations.iter().position(|r| r == name) else {
            return BTreeSet::new();
        };
        self.combos.iter().map(|c| c[i]).collect()
    }

    pub fn contributing_all(&self) -> BTreeMap<String, BTreeSet<usize>> {
        self.relations
            .iter()
            .map(|r| (r.clone(), self.contributing(r)))
            .collect()
    }
}

/// Joins the named relations of `inst` (all of them when `names` is `None`).
pub fn nested_loop_join(inst: &Instance, names: Option<&[&str]>) -> OracleJoin {
    let rels: Vec<&Relation> = match names {
        Some(ns) => ns
            .iter()
            .map(|n| inst.get(n).expect("relation in instance"))
            .collect(),
        None => inst.relations().iter().collect(),
    };
    let order = connected_order(&rels);
    let ordered: Vec<&Relation> = order.iter().map(|&i| rels[i]).collect();

    let mut attrs: Vec<AttributeId> = ordered
        .iter()
        .flat_map(|r| r.schema().attrs().iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    attrs.sort();
    let slot: HashMap<&AttributeId, usize> =
        attrs.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let cols: Vec<Vec<usize>> = ordered
        .iter()
        .map(|r| r.schema().attrs().iter().map(|a| slot[a]).collect())
        .collect();
    let visible: Vec<Vec<usize>> = ordered.iter().map(|r| r.visible_rows().collect()).collect();

    let mut state = Search {
        rels: &ordered,
        cols: &cols,
        visible: &visible,
        binding: vec![None; attrs.len()],
        picked: Vec::with_capacity(ordered.len()),
        combos: Vec::new(),
        rows: Vec::new(),
    };
    if !ordered.is_empty() {
        state.descend(0);
    }
    let (combos, rows) = (state.combos, state.rows);

    // report combos in the caller's relation order
    let mut inverse = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        inverse[i] = pos;
    }
    let combos = combos
        .into_iter()
        .map(|c| inverse.iter().map(|&p| c[p]).collect())
        .collect();
    OracleJoin {
        relations: rels.iter().map(|r| r.name().to_string()).collect(),
        attrs,
        combos,
        rows,
    }
}

/// Greedy order where each relation shares an attribute with an earlier one
/// when possible, so that backtracking prunes early.
fn connected_order(rels: &[&Relation]) -> Vec<usize> {
    let mut order = Vec::with_capacity(rels.len());
    let mut used = vec![false; rels.len()];
    let mut bound: BTreeSet<&AttributeId> = BTreeSet::new();
    for _ in 0..rels.len() {
        let next = (0..rels.len())
            .filter(|&i| !used[i])
            .max_by_key(|&i| {
                let shared = rels[i]
                    .schema()
                    .attrs()
                    .iter()
                    .filter(|a| bound.contains(a))
                    .count();
                (shared, std::cmp::Reverse(i))
            })
            .expect("unused relation left");
        used[next] = true;
        bound.extend(rels[next].schema().attrs());
        order.push(next);
    }
    order
}

struct Search<'a> {
    rels: &'a [&'a Relation],
    cols: &'a [Vec<usize>],
    visible: &'a [Vec<usize>],
    binding: Vec<Option<i64>>,
    picked: Vec<usize>,
    combos: Vec<Vec<usize>>,
    rows: Vec<Vec<i64>>,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize) {
        if depth == self.rels.len() {
            self.combos.push(self.picked.clone());
            self.rows.push(
                self.binding
                    .iter()
                    .map(|v| v.expect("all attributes bound"))
                    .collect(),
            );
            return;
        }
        let rel = self.rels[depth];
        let cols = &self.cols[depth];
        'rows: for &row in &self.visible[depth] {
            let mut newly = Vec::new();
            for (c, &slot) in cols.iter().enumerate() {
                let v = rel.value(row, c);
                match self.binding[slot] {
                    Some(b) if b != v => {
                        for s in newly {
                            self.binding[s] = None;
                        }
                        continue 'rows;
                    }
                    Some(_) => {}
                    None => {
                        self.binding[slot] = Some(v);
                        newly.push(slot);
                    }
                }
            }
            self.picked.push(row);
            self.descend(depth + 1);
            self.picked.pop();
            for s in newly {
                self.binding[s] = None;
            }
        }
    }
}

/// Visible rows of `rel` projected onto `attrs` and sorted.
pub fn canonical_rows(rel: &Relation, attrs: &[AttributeId]) -> Vec<Vec<i64>> {
    let cols = rel.column_indices(attrs).expect("attributes present");
    let mut rows: Vec<Vec<i64>> = rel.visible_rows().map(|r| rel.key_at(r, &cols)).collect();
    rows.sort_unstable();
    rows
}

/// Order-independent digest of a sorted row multiset.
pub fn digest(sorted_rows: &[Vec<i64>]) -> u64 {
    let mut h = mix64(sorted_rows.len() as u64);
    for row in sorted_rows {
        for &v in row {
            h = mix64(h ^ v as u64);
        }
        h = mix64(h.rotate_left(7));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relstore::{Schema, SelectionVector};

    fn rel(name: &str, attrs: &[&str], rows: &[&[i64]]) -> Relation {
        let rows: Vec<Vec<i64>> = rows.iter().map(|r| r.to_vec()).collect();
        Relation::from_rows(name, Schema::of(attrs), &rows).unwrap()
    }

    #[test]
    fn chain_join_and_contributors() {
        let inst = Instance::new(vec![
            rel("R", &["A", "B"], &[&[1, 1], &[2, 2], &[3, 9]]),
            rel("S", &["B", "C"], &[&[1, 5], &[1, 6], &[2, 7]]),
            rel("T", &["C"], &[&[5], &[7], &[8]]),
        ]);
        let j = nested_loop_join(&inst, None);
        assert_eq!(j.sorted_rows(), vec![vec![1, 1, 5], vec![2, 2, 7]]);
        assert_eq!(j.contributing("R"), BTreeSet::from([0, 1]));
        assert_eq!(j.contributing("S"), BTreeSet::from([0, 2]));
        assert_eq!(j.contributing("T"), BTreeSet::from([0, 1]));
    }

    #[test]
    fn bag_semantics_and_selection() {
        let r = rel("R", &["A"], &[&[1], &[1], &[2]]);
        let s = rel("S", &["A"], &[&[1], &[1], &[2]]);
        let inst = Instance::new(vec![r.clone(), s.clone()]);
        assert_eq!(nested_loop_join(&inst, None).len(), 5);
        let r = r
            .apply_selection(&SelectionVector::new(vec![2]).unwrap())
            .unwrap();
        let inst = Instance::new(vec![r, s]);
        assert_eq!(nested_loop_join(&inst, None).combos, vec![vec![2, 2]]);
    }

    #[test]
    fn combos_follow_caller_order() {
        // T listed first but it only connects through S
        let inst = Instance::new(vec![
            rel("T", &["C"], &[&[5]]),
            rel("R", &["A", "B"], &[&[1, 1]]),
            rel("S", &["B", "C"], &[&[1, 5]]),
        ]);
        let j = nested_loop_join(&inst, Some(&["T", "R", "S"]));
        assert_eq!(j.relations, ["T", "R", "S"]);
        assert_eq!(j.combos, vec![vec![0, 0, 0]]);
        let sub = nested_loop_join(&inst, Some(&["R", "S"]));
        assert_eq!(
            sub.attrs,
            vec![
                AttributeId::new("A"),
                AttributeId::new("B"),
                AttributeId::new("C")
            ]
        );
    }

    #[test]
    fn digest_is_order_sensitive_on_unsorted_input() {
        let a = vec![vec![1, 2], vec![3, 4]];
        let b = vec![vec![3, 4], vec![1, 2]];
        assert_ne!(digest(&a), digest(&b));
        assert_eq!(digest(&a), digest(&a.clone()));
    }
}
