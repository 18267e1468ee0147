//! Query documents and relation instances.
//!
//! A query document lists relations with their attribute names, the CSV
//! file holding their rows, optional base-table filters and an optional
//! declared primary key:
//!
//! ```json
//! {"relations": [
//!   {"name": "R", "attrs": ["A", "B"], "data": "R.csv",
//!    "filters": [{"attr": "A", "op": "<", "value": 10}]},
//!   {"name": "S", "attrs": ["B"], "data": "S.csv", "primary_key": ["B"]}
//! ]}
//! ```
//!
//! Relative `data` paths resolve against the document's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::joingraph::{build_join_graph, GraphError, JoinGraph};
use crate::relstore::{apply_predicates, AttributeId, Predicate, Relation, Schema, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("query document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("relation {0} has no data file")]
    NoData(String),
    #[error("relation {0} missing from instance")]
    MissingRelation(String),
    #[error("relation {name}: instance schema {found:?} differs from query schema {expected:?}")]
    SchemaMismatch {
        name: String,
        expected: Vec<AttributeId>,
        found: Vec<AttributeId>,
    },
    #[error("relation {relation}: primary key attribute {attr} not in schema")]
    BadPrimaryKey { relation: String, attr: AttributeId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationDef {
    pub name: String,
    pub attrs: Vec<AttributeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_key: Option<Vec<AttributeId>>,
}

impl RelationDef {
    pub fn new(name: impl Into<String>, attrs: &[&str]) -> Self {
        RelationDef {
            name: name.into(),
            attrs: attrs.iter().map(|a| AttributeId::new(*a)).collect(),
            data: None,
            filters: Vec::new(),
            primary_key: None,
        }
    }

    pub fn with_filter(mut self, p: Predicate) -> Self {
        self.filters.push(p);
        self
    }

    pub fn with_primary_key(mut self, attrs: &[&str]) -> Self {
        self.primary_key = Some(attrs.iter().map(|a| AttributeId::new(*a)).collect());
        self
    }

    pub fn with_data(mut self, path: impl Into<PathBuf>) -> Self {
        self.data = Some(path.into());
        self
    }

    pub fn schema(&self) -> Result<Schema, StoreError> {
        Schema::new(self.attrs.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Query {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub relations: Vec<RelationDef>,
}

impl Query {
    pub fn new(relations: Vec<RelationDef>) -> Self {
        Query {
            name: String::new(),
            relations,
        }
    }

    pub fn from_json(text: &str) -> Result<Query, QueryError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("query serializes")
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDef> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn join_graph(&self) -> Result<JoinGraph, QueryError> {
        let rels = self
            .relations
            .iter()
            .map(|r| Ok((r.name.clone(), r.schema()?)))
            .collect::<Result<Vec<_>, StoreError>>()?;
        Ok(build_join_graph(rels)?)
    }

    /// Reads every relation's CSV; relative paths resolve against `base`.
    pub fn load_instance(&self, base: &Path) -> Result<Instance, QueryError> {
        let mut rels = Vec::with_capacity(self.relations.len());
        for def in &self.relations {
            let data = def
                .data
                .as_ref()
                .ok_or_else(|| QueryError::NoData(def.name.clone()))?;
            let path = if data.is_relative() {
                base.join(data)
            } else {
                data.clone()
            };
            let file = std::fs::File::open(&path).map_err(|source| QueryError::Io {
                path: path.clone(),
                source,
            })?;
            rels.push(Relation::read_csv(file, def.name.clone(), def.schema()?)?);
        }
        Ok(Instance::new(rels))
    }

    /// Checks schemas, applies filters and attaches declared keys.
    pub fn prepare(&self, raw: &Instance) -> Result<Instance, QueryError> {
        let mut out = Vec::with_capacity(self.relations.len());
        let mut keys = HashMap::new();
        for def in &self.relations {
            let rel = raw
                .get(&def.name)
                .ok_or_else(|| QueryError::MissingRelation(def.name.clone()))?;
            if rel.schema().attrs() != def.attrs.as_slice() {
                return Err(QueryError::SchemaMismatch {
                    name: def.name.clone(),
                    expected: def.attrs.clone(),
                    found: rel.schema().attrs().to_vec(),
                });
            }
            if let Some(pk) = &def.primary_key {
                if let Some(attr) = pk.iter().find(|a| !rel.schema().contains(a)) {
                    return Err(QueryError::BadPrimaryKey {
                        relation: def.name.clone(),
                        attr: attr.clone(),
                    });
                }
                keys.insert(def.name.clone(), pk.clone());
            }
            out.push(apply_predicates(rel, &def.filters)?);
        }
        let mut inst = Instance::new(out);
        inst.primary_keys = keys;
        Ok(inst)
    }
}

/// Loads a query document from disk.
pub fn read_query(path: &Path) -> Result<Query, QueryError> {
    let text = std::fs::read_to_string(path).map_err(|source| QueryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Query::from_json(&text)
}

/// Named set of relations plus declared primary keys.
#[derive(Clone, Debug, Default)]
pub struct Instance {
    relations: Vec<Relation>,
    index: HashMap<String, usize>,
    primary_keys: HashMap<String, Vec<AttributeId>>,
}

impl Instance {
    /// Later relations replace earlier ones with the same name.
    pub fn new(relations: Vec<Relation>) -> Self {
        let mut inst = Instance::default();
        for r in relations {
            inst.insert(r);
        }
        inst
    }

    pub fn insert(&mut self, rel: Relation) {
        match self.index.get(rel.name()) {
            Some(&i) => self.relations[i] = rel,
            None => {
                self.index
                    .insert(rel.name().to_string(), self.relations.len());
                self.relations.push(rel);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Relation> {
        self.index.get(name).map(|&i| &self.relations[i])
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn primary_key(&self, name: &str) -> Option<&[AttributeId]> {
        self.primary_keys.get(name).map(Vec::as_slice)
    }

    pub fn set_primary_key(&mut self, name: &str, attrs: Vec<AttributeId>) {
        self.primary_keys.insert(name.to_string(), attrs);
    }

    /// Visible row counts aligned with `g`'s vertex order (0 when absent).
    pub fn cardinalities(&self, g: &JoinGraph) -> Vec<usize> {
        g.vertices()
            .iter()
            .map(|v| self.get(&v.name).map_or(0, Relation::visible_count))
            .collect()
    }

    pub fn total_visible(&self) -> usize {
        self.relations.iter().map(Relation::visible_count).sum()
    }
}
