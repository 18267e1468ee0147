//! Columnar in-memory relations.
//!
//! A [`Relation`] stores one `i64` array per attribute and an optional
//! [`SelectionVector`] naming the physical rows that are still visible.
//! Semi-join reductions never delete rows; they replace the selection.
//! Columns are shared behind `Arc`, so producing a relation with a new
//! selection is cheap and leaves the original untouched.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Default number of rows handed out per [`Batch`].
pub const DEFAULT_BATCH_SIZE: usize = 2048;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("line {line}: cannot parse field {field} ({value:?}) as a 64-bit integer")]
    Parse {
        line: u64,
        field: usize,
        value: String,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("duplicate attribute {0} in schema")]
    DuplicateAttribute(AttributeId),
    #[error("relation {relation} has no attribute {attr}")]
    UnknownAttribute { relation: String, attr: AttributeId },
    #[error("selection index {index} out of range for {rows} rows")]
    OutOfRange { index: usize, rows: usize },
    #[error("selection vector is not strictly increasing at position {0}")]
    Unsorted(usize),
    #[error("column length mismatch: expected {expected}, found {found}")]
    ColumnLength { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Join attribute name. Relations sharing an `AttributeId` join on it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeId(String);

impl AttributeId {
    pub fn new(name: impl Into<String>) -> Self {
        AttributeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AttributeId {
    fn from(s: &str) -> Self {
        AttributeId::new(s)
    }
}

/// Ordered, duplicate-free attribute list.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Schema {
    attrs: Vec<AttributeId>,
}

impl Schema {
    pub fn new(attrs: Vec<AttributeId>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(attrs.len());
        for a in &attrs {
            if !seen.insert(a) {
                return Err(StoreError::DuplicateAttribute(a.clone()));
            }
        }
        Ok(Schema { attrs })
    }

    /// Convenience constructor for literal attribute names.
    ///
    /// Panics on duplicates; intended for tests and generators.
    pub fn of(names: &[&str]) -> Self {
        Schema::new(names.iter().map(|n| AttributeId::new(*n)).collect())
            .expect("duplicate attribute in literal schema")
    }

    pub fn attrs(&self) -> &[AttributeId] {
        &self.attrs
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn index_of(&self, attr: &AttributeId) -> Option<usize> {
        self.attrs.iter().position(|a| a == attr)
    }

    pub fn contains(&self, attr: &AttributeId) -> bool {
        self.index_of(attr).is_some()
    }

    /// Attributes present in both schemas, in `self`'s order.
    pub fn shared_with(&self, other: &Schema) -> Vec<AttributeId> {
        self.attrs
            .iter()
            .filter(|a| other.contains(a))
            .cloned()
            .collect()
    }

    /// `self` followed by the attributes of `other` not already present.
    pub fn union(&self, other: &Schema) -> Schema {
        let mut attrs = self.attrs.clone();
        attrs.extend(other.attrs.iter().filter(|a| !self.contains(a)).cloned());
        Schema { attrs }
    }
}

/// Strictly increasing list of physical row positions.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SelectionVector {
    indices: Vec<usize>,
}

impl SelectionVector {
    /// Validates ordering; range is checked when applied to a relation.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if let Some(pos) = indices.windows(2).position(|w| w[0] >= w[1]) {
            return Err(StoreError::Unsorted(pos + 1));
        }
        Ok(SelectionVector { indices })
    }

    /// Caller guarantees `indices` is strictly increasing.
    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        SelectionVector { indices }
    }

    pub fn full(rows: usize) -> Self {
        SelectionVector {
            indices: (0..rows).collect(),
        }
    }

    pub fn empty() -> Self {
        SelectionVector::default()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.indices
    }

    /// Sorted-merge intersection.
    pub fn intersect(&self, other: &SelectionVector) -> SelectionVector {
        let (a, b) = (&self.indices, &other.indices);
        let mut out = Vec::with_capacity(a.len().min(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        SelectionVector { indices: out }
    }
}

/// Named columnar table of 64-bit integers.
#[derive(Clone, Debug)]
pub struct Relation {
    name: String,
    schema: Schema,
    columns: Vec<Arc<Vec<i64>>>,
    rows: usize,
    selection: Option<Arc<SelectionVector>>,
}

impl Relation {
    pub fn from_columns(
        name: impl Into<String>,
        schema: Schema,
        columns: Vec<Vec<i64>>,
    ) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(StoreError::Arity {
                line: 0,
                expected: schema.len(),
                found: columns.len(),
            });
        }
        let rows = columns.first().map_or(0, Vec::len);
        for c in &columns {
            if c.len() != rows {
                return Err(StoreError::ColumnLength {
                    expected: rows,
                    found: c.len(),
                });
            }
        }
        Ok(Relation {
            name: name.into(),
            schema,
            columns: columns.into_iter().map(Arc::new).collect(),
            rows,
            selection: None,
        })
    }

    /// Builds a relation from row tuples. Every row must have `schema.len()` values.
    pub fn from_rows(name: impl Into<String>, schema: Schema, rows: &[Vec<i64>]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); schema.len()];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(StoreError::Arity {
                    line: i as u64 + 1,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(*v);
            }
        }
        Relation::from_columns(name, schema, columns)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Physical row count, ignoring the selection.
    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn selection(&self) -> Option<&SelectionVector> {
        self.selection.as_deref()
    }

    pub fn column(&self, idx: usize) -> &[i64] {
        &self.columns[idx]
    }

    pub fn column_by_attr(&self, attr: &AttributeId) -> Option<&[i64]> {
        self.schema.index_of(attr).map(|i| self.column(i))
    }

    pub fn value(&self, row: usize, col: usize) -> i64 {
        self.columns[col][row]
    }

    /// Column positions for `attrs`, erroring on any missing attribute.
    pub fn column_indices(&self, attrs: &[AttributeId]) -> Result<Vec<usize>> {
        attrs
            .iter()
            .map(|a| {
                self.schema
                    .index_of(a)
                    .ok_or_else(|| StoreError::UnknownAttribute {
                        relation: self.name.clone(),
                        attr: a.clone(),
                    })
            })
            .collect()
    }

    pub fn visible_count(&self) -> usize {
        self.selection.as_ref().map_or(self.rows, |s| s.len())
    }

    /// Physical positions of visible rows, in order.
    pub fn visible_rows(&self) -> VisibleRows<'_> {
        match &self.selection {
            Some(sel) => VisibleRows::Selected(sel.as_slice().iter()),
            None => VisibleRows::All(0..self.rows),
        }
    }

    /// Selection equal to the current visible rows (materialized when absent).
    pub fn visible_selection(&self) -> SelectionVector {
        match &self.selection {
            Some(sel) => (**sel).clone(),
            None => SelectionVector::full(self.rows),
        }
    }

    /// Restricts visibility to `sel ∩ visible`. `sel` holds physical positions.
    pub fn apply_selection(&self, sel: &SelectionVector) -> Result<Relation> {
        if let Some(&last) = sel.as_slice().last() {
            if last >= self.rows {
                return Err(StoreError::OutOfRange {
                    index: last,
                    rows: self.rows,
                });
            }
        }
        let next = match &self.selection {
            Some(cur) => cur.intersect(sel),
            None => sel.clone(),
        };
        Ok(self.with_selection_unchecked(next))
    }

    /// Drops any selection and exposes every physical row.
    pub fn without_selection(&self) -> Relation {
        Relation {
            selection: None,
            ..self.clone()
        }
    }

    pub(crate) fn with_selection_unchecked(&self, sel: SelectionVector) -> Relation {
        Relation {
            name: self.name.clone(),
            schema: self.schema.clone(),
            columns: self.columns.clone(),
            rows: self.rows,
            selection: Some(Arc::new(sel)),
        }
    }

    /// Visible values of the given columns for one row.
    pub fn key_at(&self, row: usize, cols: &[usize]) -> Vec<i64> {
        cols.iter().map(|&c| self.columns[c][row]).collect()
    }

    /// Iterates visible rows in chunks of at most `batch_size`.
    pub fn batches(&self, batch_size: usize) -> Batches<'_> {
        assert!(batch_size > 0, "batch size must be positive");
        Batches {
            relation: self,
            batch_size,
            pos: 0,
        }
    }

    /// Visible rows as value tuples, in selection order.
    pub fn rows_vec(&self) -> Vec<Vec<i64>> {
        let all: Vec<usize> = (0..self.schema.len()).collect();
        self.visible_rows().map(|r| self.key_at(r, &all)).collect()
    }

    /// Reads a header-less CSV of integers.
    pub fn load_csv(
        path: impl AsRef<Path>,
        name: impl Into<String>,
        schema: Schema,
    ) -> Result<Relation> {
        let file = std::fs::File::open(path)?;
        Relation::read_csv(file, name, schema)
    }

    pub fn read_csv<R: Read>(
        reader: R,
        name: impl Into<String>,
        schema: Schema,
    ) -> Result<Relation> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut columns: Vec<Vec<i64>> = vec![Vec::new(); schema.len()];
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != schema.len() {
                return Err(StoreError::Arity {
                    line,
                    expected: schema.len(),
                    found: record.len(),
                });
            }
            for (field, (value, col)) in record.iter().zip(columns.iter_mut()).enumerate() {
                let v = value.trim().parse::<i64>().map_err(|_| StoreError::Parse {
                    line,
                    field,
                    value: value.to_string(),
                })?;
                col.push(v);
            }
        }
        Relation::from_columns(name, schema, columns)
    }

    /// Writes visible rows as canonical CSV (`i64` display, `\n` terminated).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for row in self.visible_rows() {
            line.clear();
            for c in 0..self.schema.len() {
                if c > 0 {
                    line.push(',');
                }
                line.push_str(&self.columns[c][row].to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub enum VisibleRows<'a> {
    All(std::ops::Range<usize>),
    Selected(std::slice::Iter<'a, usize>),
}

impl Iterator for VisibleRows<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            VisibleRows::All(r) => r.next(),
            VisibleRows::Selected(it) => it.next().copied(),
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        match self {
            VisibleRows::All(r) => r.size_hint(),
            VisibleRows::Selected(it) => it.size_hint(),
        }
    }
}

impl ExactSizeIterator for VisibleRows<'_> {}

/// Up to `batch_size` visible rows of one relation.
#[derive(Debug)]
pub struct Batch<'a> {
    relation: &'a Relation,
    rows: Vec<usize>,
}

impl<'a> Batch<'a> {
    /// Physical row positions in this batch.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn relation(&self) -> &'a Relation {
        self.relation
    }

    /// Gathers the values of column `col` for the batch rows.
    pub fn gather(&self, col: usize) -> Vec<i64> {
        let data = self.relation.column(col);
        self.rows.iter().map(|&r| data[r]).collect()
    }
}

pub struct Batches<'a> {
    relation: &'a Relation,
    batch_size: usize,
    pos: usize,
}

impl<'a> Iterator for Batches<'a> {
    type Item = Batch<'a>;

    fn next(&mut self) -> Option<Batch<'a>> {
        let total = self.relation.visible_count();
        if self.pos >= total {
            return None;
        }
        let end = (self.pos + self.batch_size).min(total);
        let rows = match self.relation.selection() {
            Some(sel) => sel.as_slice()[self.pos..end].to_vec(),
            None => (self.pos..end).collect(),
        };
        self.pos = end;
        Some(Batch {
            relation: self.relation,
            rows,
        })
    }
}

/// Comparison operator for base-table filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
}

impl CmpOp {
    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

/// `attr op value` filter on one relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub attr: AttributeId,
    pub op: CmpOp,
    pub value: i64,
}

impl Predicate {
    pub fn new(attr: impl Into<AttributeId>, op: CmpOp, value: i64) -> Self {
        Predicate {
            attr: attr.into(),
            op,
            value,
        }
    }
}

impl From<String> for AttributeId {
    fn from(s: String) -> Self {
        AttributeId(s)
    }
}

/// Applies a conjunction of predicates, narrowing the selection.
pub fn apply_predicates(rel: &Relation, preds: &[Predicate]) -> Result<Relation> {
    if preds.is_empty() {
        return Ok(rel.clone());
    }
    let cols: Vec<usize> = preds
        .iter()
        .map(|p| {
            rel.column_indices(std::slice::from_ref(&p.attr))
                .map(|v| v[0])
        })
        .collect::<Result<_>>()?;
    let kept: Vec<usize> = rel
        .visible_rows()
        .filter(|&r| {
            preds
                .iter()
                .zip(&cols)
                .all(|(p, &c)| p.op.eval(rel.value(r, c), p.value))
        })
        .collect();
    Ok(rel.with_selection_unchecked(SelectionVector::from_sorted(kept)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn five() -> Relation {
        Relation::from_columns("R", Schema::of(&["A"]), vec![vec![10, 11, 12, 13, 14]]).unwrap()
    }

    #[test]
    fn load_two_rows() {
        let r = Relation::read_csv("1,2\n3,4".as_bytes(), "R", Schema::of(&["A", "B"])).unwrap();
        assert_eq!(r.visible_count(), 2);
        assert_eq!(r.rows_vec(), vec![vec![1, 2], vec![3, 4]]);
        assert!(r.selection().is_none());
    }

    #[test]
    fn load_empty() {
        let r = Relation::read_csv("".as_bytes(), "R", Schema::of(&["A", "B"])).unwrap();
        assert_eq!(r.visible_count(), 0);
    }

    #[test]
    fn load_parse_error_reports_line() {
        let err = Relation::read_csv("1,x".as_bytes(), "R", Schema::of(&["A", "B"])).unwrap_err();
        match err {
            StoreError::Parse { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = Relation::read_csv("1,2\n3,4\n5,y\n".as_bytes(), "R", Schema::of(&["A", "B"]))
            .unwrap_err();
        assert!(matches!(err, StoreError::Parse { line: 3, .. }));
    }

    #[test]
    fn load_arity_mismatch() {
        let err =
            Relation::read_csv("1,2\n3\n".as_bytes(), "R", Schema::of(&["A", "B"])).unwrap_err();
        assert!(matches!(
            err,
            StoreError::Arity {
                line: 2,
                expected: 2,
                found: 1
            }
        ));
    }

    #[test]
    fn duplicate_schema_rejected() {
        assert!(Schema::new(vec!["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn selection_examples() {
        let r = five();
        let s = r
            .apply_selection(&SelectionVector::new(vec![0, 2, 4]).unwrap())
            .unwrap();
        assert_eq!(s.visible_count(), 3);
        let t = s
            .apply_selection(&SelectionVector::new(vec![2]).unwrap())
            .unwrap();
        assert_eq!(t.visible_count(), 1);
        assert_eq!(t.rows_vec(), vec![vec![12]]);
        let e = r.apply_selection(&SelectionVector::empty()).unwrap();
        assert_eq!(e.visible_count(), 0);
    }

    #[test]
    fn selection_out_of_range() {
        let r = five();
        let err = r
            .apply_selection(&SelectionVector::new(vec![1, 5]).unwrap())
            .unwrap_err();
        assert!(matches!(err, StoreError::OutOfRange { index: 5, rows: 5 }));
        assert!(SelectionVector::new(vec![2, 2]).is_err());
        assert!(SelectionVector::new(vec![3, 1]).is_err());
    }

    #[test]
    fn visible_count_examples() {
        let r = Relation::from_columns("R", Schema::of(&["A"]), vec![(0..10).collect()]).unwrap();
        assert_eq!(r.visible_count(), 10);
        let s = r
            .apply_selection(&SelectionVector::new(vec![1, 5, 9]).unwrap())
            .unwrap();
        assert_eq!(s.visible_count(), 3);
        let z = Relation::from_columns("Z", Schema::of(&["A"]), vec![vec![]]).unwrap();
        assert_eq!(z.visible_count(), 0);
    }

    #[test]
    fn predicates_filter() {
        let r = five();
        let f = apply_predicates(
            &r,
            &[
                Predicate::new("A", CmpOp::Ge, 11),
                Predicate::new("A", CmpOp::Lt, 14),
            ],
        )
        .unwrap();
        assert_eq!(f.rows_vec(), vec![vec![11], vec![12], vec![13]]);
        assert!(apply_predicates(&r, &[Predicate::new("Q", CmpOp::Eq, 1)]).is_err());
    }

    #[test]
    fn cmp_op_json_names() {
        let p: Predicate = serde_json::from_str(r#"{"attr":"A","op":"≤","value":3}"#).unwrap();
        assert_eq!(p.op, CmpOp::Le);
        assert_eq!(serde_json::to_string(&CmpOp::Ge).unwrap(), "\">=\"");
    }

    fn rel_and_sel() -> impl Strategy<Value = (Vec<i64>, Vec<usize>)> {
        prop::collection::vec(-50i64..50, 0..200).prop_flat_map(|vals| {
            let n = vals.len();
            let sel = prop::collection::btree_set(0..n.max(1), 0..=n)
                .prop_map(move |s| s.into_iter().filter(|&i| i < n).collect::<Vec<_>>());
            (Just(vals), sel)
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec((any::<i64>(), any::<i64>()), 0..50)) {
            let mut text = String::new();
            for (a, b) in &rows {
                text.push_str(&format!("{a},{b}\n"));
            }
            let r = Relation::read_csv(text.as_bytes(), "R", Schema::of(&["A", "B"])).unwrap();
            let mut out = Vec::new();
            r.write_csv(&mut out).unwrap();
            prop_assert_eq!(String::from_utf8(out).unwrap(), text);
        }

        #[test]
        fn selection_idempotent((vals, sel) in rel_and_sel()) {
            let r = Relation::from_columns("R", Schema::of(&["A"]), vec![vals]).unwrap();
            let sel = SelectionVector::new(sel).unwrap();
            let once = r.apply_selection(&sel).unwrap();
            let twice = once.apply_selection(&sel).unwrap();
            prop_assert_eq!(once.visible_selection(), twice.visible_selection());
        }

        #[test]
        fn batches_cover_visible_rows((vals, sel) in rel_and_sel(), bs in 1usize..64) {
            let r = Relation::from_columns("R", Schema::of(&["A"]), vec![vals]).unwrap();
            let r = r.apply_selection(&SelectionVector::new(sel).unwrap()).unwrap();
            let mut seen = Vec::new();
            for b in r.batches(bs) {
                prop_assert!(b.len() <= bs && !b.is_empty());
                seen.extend_from_slice(b.rows());
            }
            prop_assert_eq!(seen.len(), r.visible_count());
            prop_assert_eq!(seen, r.visible_rows().collect::<Vec<_>>());
        }
    }
}
