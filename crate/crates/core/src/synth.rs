//! Deterministic synthetic instances.
//!
//! Each generator returns a query document (with `<name>.csv` data paths and
//! any filters) and the raw, unfiltered instance it describes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::query::{Instance, Query, RelationDef};
use crate::relstore::{CmpOp, Predicate, Relation, Schema, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown generator {0}")]
    UnknownGenerator(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum Generator {
    /// R(A,B,C)={(i,1,i)}, S(A,B)={(i,1)}, T(B,C)={(1,i)}.
    Unsafe3 { n: usize },
    /// Chain R(A,B),S(B,C),T(C,D) with quadratic pairwise joins and no output.
    Blowup3 { n: usize },
    /// R1..Rk chained one-to-one on random permutations; `sel` filters R1.
    Chain { k: usize, n: usize, sel: f64 },
    /// Fact with `n` rows and `k` dimensions of `n/10` keys; `sel` filters D1.
    Star { k: usize, n: usize, sel: f64 },
    /// R(A,B),S(B,C),T(C,A) with uniform values.
    Triangle { n: usize },
    /// R(A,B),S(A,C),T(B,D) with |R|<|S|<|T| and a predicate on S removing A=0.
    Fig2 { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub generator: Generator,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(generator: Generator, seed: u64) -> Self {
        SyntheticSpec { generator, seed }
    }

    /// Builds a generator from its name and optional parameters.
    pub fn parse(
        name: &str,
        k: Option<usize>,
        n: Option<usize>,
        sel: Option<f64>,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let n = n.unwrap_or(100);
        let generator = match name {
            "unsafe3" => Generator::Unsafe3 { n },
            "blowup3" => Generator::Blowup3 { n },
            "chain" => Generator::Chain {
                k: k.unwrap_or(3),
                n,
                sel: sel.unwrap_or(1.0),
            },
            "star" => Generator::Star {
                k: k.unwrap_or(3),
                n,
                sel: sel.unwrap_or(1.0),
            },
            "triangle" => Generator::Triangle { n },
            "fig2" => Generator::Fig2 { n },
            other => return Err(SynthError::UnknownGenerator(other.to_string())),
        };
        let spec = SyntheticSpec { generator, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParameter(m.to_string()));
        match self.generator {
            Generator::Chain { k, sel, .. } | Generator::Star { k, sel, .. } => {
                if k < 1 || (matches!(self.generator, Generator::Chain { .. }) && k < 2) {
                    return bad("k too small");
                }
                if !(sel > 0.0 && sel <= 1.0) {
                    return bad("sel must be in (0, 1]");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn generate(&self) -> Result<(Query, Instance), SynthError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (mut query, rels) = match self.generator {
            Generator::Unsafe3 { n } => unsafe3(n),
            Generator::Blowup3 { n } => blowup3(n),
            Generator::Chain { k, n, sel } => chain(k, n, sel, &mut rng),
            Generator::Star { k, n, sel } => star(k, n, sel, &mut rng),
            Generator::Triangle { n } => triangle(n, &mut rng),
            Generator::Fig2 { n } => fig2(n, &mut rng),
        };
        for def in &mut query.relations {
            def.data = Some(format!("{}.csv", def.name).into());
        }
        query.name = self.label();
        let rels = rels
            .into_iter()
            .map(|(name, schema, cols)| Relation::from_columns(name, schema, cols))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((query, Instance::new(rels)))
    }

    pub fn label(&self) -> String {
        match self.generator {
            Generator::Unsafe3 { n } => format!("unsafe3(n={n})"),
            Generator::Blowup3 { n } => format!("blowup3(n={n})"),
            Generator::Chain { k, n, sel } => format!("chain(k={k},n={n},sel={sel})"),
            Generator::Star { k, n, sel } => format!("star(k={k},n={n},sel={sel})"),
            Generator::Triangle { n } => format!("triangle(n={n})"),
            Generator::Fig2 { n } => format!("fig2(n={n})"),
        }
    }

    /// Writes `query.json`, `spec.json` and one CSV per relation into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(Query, Instance), SynthError> {
        let (query, inst) = self.generate()?;
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for rel in inst.relations() {
            rel.save_csv(dir.join(format!("{}.csv", rel.name())))?;
        }
        let qp = dir.join("query.json");
        std::fs::write(&qp, query.to_json() + "\n").map_err(io(&qp))?;
        let sp = dir.join("spec.json");
        let spec = serde_json::to_string_pretty(self).expect("spec serializes");
        std::fs::write(&sp, spec + "\n").map_err(io(&sp))?;
        Ok((query, inst))
    }
}

type Columns = (String, Schema, Vec<Vec<i64>>);

fn table(name: &str, attrs: &[&str], cols: Vec<Vec<i64>>) -> Columns {
    (name.to_string(), Schema::of(attrs), cols)
}

fn def(name: &str, attrs: &[&str]) -> RelationDef {
    RelationDef::new(name, attrs)
}

fn unsafe3(n: usize) -> (Query, Vec<Columns>) {
    let ids: Vec<i64> = (1..=n as i64).collect();
    let ones = vec![1; n];
    (
        Query::new(vec![
            def("R", &["A", "B", "C"]),
            def("S", &["A", "B"]),
            def("T", &["B", "C"]),
        ]),
        vec![
            table(
                "R",
                &["A", "B", "C"],
                vec![ids.clone(), ones.clone(), ids.clone()],
            ),
            table("S", &["A", "B"], vec![ids.clone(), ones.clone()]),
            table("T", &["B", "C"], vec![ones, ids]),
        ],
    )
}

/// R joins the first half of S on B=0, T joins the second half on C=0, and
/// no S row has both.
fn blowup3(n: usize) -> (Query, Vec<Columns>) {
    let half = n / 2;
    let ids: Vec<i64> = (0..n as i64).collect();
    let mut sb = vec![0; half];
    let mut sc: Vec<i64> = (1..=half as i64).collect();
    sb.extend(1..=(n - half) as i64);
    sc.extend(std::iter::repeat_n(0, n - half));
    (
        Query::new(vec![
            def("R", &["A", "B"]),
            def("S", &["B", "C"]),
            def("T", &["C", "D"]),
        ]),
        vec![
            table("R", &["A", "B"], vec![ids.clone(), vec![0; n]]),
            table("S", &["B", "C"], vec![sb, sc]),
            table("T", &["C", "D"], vec![vec![0; n], ids]),
        ],
    )
}

fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<i64> {
    let mut p: Vec<i64> = (0..n as i64).collect();
    p.shuffle(rng);
    p
}

fn threshold(sel: f64, n: usize) -> i64 {
    (sel * n as f64).round() as i64
}

fn chain<R: Rng>(k: usize, n: usize, sel: f64, rng: &mut R) -> (Query, Vec<Columns>) {
    // key K_j of entity e is perm[j][e]; R_i holds (K_{i-1}, K_i)
    let perms: Vec<Vec<i64>> = (0..=k).map(|_| permutation(n, rng)).collect();
    let mut defs = Vec::with_capacity(k);
    let mut tables = Vec::with_capacity(k);
    for i in 1..=k {
        let name = format!("R{i}");
        let (a, b) = (format!("K{}", i - 1), format!("K{i}"));
        let order = permutation(n, rng);
        let left = order.iter().map(|&e| perms[i - 1][e as usize]).collect();
        let right = order.iter().map(|&e| perms[i][e as usize]).collect();
        let mut d = def(&name, &[&a, &b]);
        if i == 1 && sel < 1.0 {
            d = d.with_filter(Predicate::new(a.as_str(), CmpOp::Lt, threshold(sel, n)));
        }
        defs.push(d);
        tables.push(table(&name, &[&a, &b], vec![left, right]));
    }
    (Query::new(defs), tables)
}

fn star<R: Rng>(k: usize, n: usize, sel: f64, rng: &mut R) -> (Query, Vec<Columns>) {
    let nd = (n / 10).max(1);
    let fact_attrs: Vec<String> = (1..=k).map(|i| format!("K{i}")).collect();
    let fact_cols: Vec<Vec<i64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.random_range(0..nd as i64)).collect())
        .collect();
    let fa: Vec<&str> = fact_attrs.iter().map(String::as_str).collect();
    let mut defs = vec![def("F", &fa)];
    let mut tables = vec![table("F", &fa, fact_cols)];
    for i in 1..=k {
        let name = format!("D{i}");
        let (key, payload) = (format!("K{i}"), format!("P{i}"));
        let mut d = def(&name, &[&key, &payload]).with_primary_key(&[&key]);
        if i == 1 && sel < 1.0 {
            d = d.with_filter(Predicate::new(
                payload.as_str(),
                CmpOp::Lt,
                threshold(sel, nd),
            ));
        }
        defs.push(d);
        tables.push(table(
            &name,
            &[&key, &payload],
            vec![(0..nd as i64).collect(), permutation(nd, rng)],
        ));
    }
    (Query::new(defs), tables)
}

fn triangle<R: Rng>(n: usize, rng: &mut R) -> (Query, Vec<Columns>) {
    let dom = (n / 2).max(2) as i64;
    let mut col = || {
        (0..n)
            .map(|_| rng.random_range(0..dom))
            .collect::<Vec<i64>>()
    };
    let (rab, rbb, sb, sc, tc, ta) = (col(), col(), col(), col(), col(), col());
    (
        Query::new(vec![
            def("R", &["A", "B"]),
            def("S", &["B", "C"]),
            def("T", &["C", "A"]),
        ]),
        vec![
            table("R", &["A", "B"], vec![rab, rbb]),
            table("S", &["B", "C"], vec![sb, sc]),
            table("T", &["C", "A"], vec![tc, ta]),
        ],
    )
}

fn fig2<R: Rng>(n: usize, rng: &mut R) -> (Query, Vec<Columns>) {
    let da = n.clamp(1, 4) as i64;
    let r_a: Vec<i64> = (0..n as i64).map(|i| i % da).collect();
    let r_b: Vec<i64> = (0..n as i64).collect();
    let s_a: Vec<i64> = (0..2 * n as i64).map(|j| j % da).collect();
    let s_c: Vec<i64> = s_a
        .iter()
        .enumerate()
        .map(|(j, &a)| if a == 0 { 0 } else { j as i64 + 1 })
        .collect();
    let t_b: Vec<i64> = (0..3 * n as i64).map(|j| j % n.max(1) as i64).collect();
    let t_d = (0..3 * n).map(|_| rng.random_range(0..1000)).collect();
    (
        Query::new(vec![
            def("R", &["A", "B"]),
            def("S", &["A", "C"]).with_filter(Predicate::new("C", CmpOp::Gt, 0)),
            def("T", &["B", "D"]),
        ]),
        vec![
            table("R", &["A", "B"], vec![r_a, r_b]),
            table("S", &["A", "C"], vec![s_a, s_c]),
            table("T", &["B", "D"], vec![t_b, t_d]),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(g: Generator) -> (Query, Instance) {
        SyntheticSpec::new(g, 7).generate().unwrap()
    }

    #[test]
    fn unsafe3_shape() {
        let (q, inst) = gen(Generator::Unsafe3 { n: 100 });
        assert_eq!(q.relations.len(), 3);
        for r in inst.relations() {
            assert_eq!(r.num_rows(), 100);
        }
        assert_eq!(inst.get("R").unwrap().rows_vec()[4], vec![5, 1, 5]);
    }

    #[test]
    fn chain_is_one_to_one() {
        let (q, inst) = gen(Generator::Chain {
            k: 4,
            n: 50,
            sel: 0.2,
        });
        let f = q.prepare(&inst).unwrap();
        assert_eq!(f.get("R1").unwrap().visible_count(), 10);
        for r in inst.relations() {
            let mut keys: Vec<i64> = r.column(1).to_vec();
            keys.sort_unstable();
            assert_eq!(keys, (0..50).collect::<Vec<_>>());
        }
        let (_, empty) = gen(Generator::Chain {
            k: 3,
            n: 0,
            sel: 1.0,
        });
        assert_eq!(empty.total_visible(), 0);
    }

    #[test]
    fn star_declares_keys_and_filters_first_dimension() {
        let (q, inst) = gen(Generator::Star {
            k: 3,
            n: 1000,
            sel: 0.1,
        });
        assert_eq!(inst.get("D2").unwrap().num_rows(), 100);
        let f = q.prepare(&inst).unwrap();
        assert_eq!(f.get("D1").unwrap().visible_count(), 10);
        assert_eq!(f.get("D2").unwrap().visible_count(), 100);
        assert_eq!(f.primary_key("D3").unwrap()[0].as_str(), "K3");
    }

    #[test]
    fn fig2_sizes_grow() {
        let (q, inst) = gen(Generator::Fig2 { n: 10 });
        let f = q.prepare(&inst).unwrap();
        let c = |n: &str| f.get(n).unwrap().visible_count();
        assert!(c("R") < c("S") && c("S") < c("T"));
    }

    #[test]
    fn deterministic_given_seed() {
        let g = Generator::Triangle { n: 30 };
        let a = SyntheticSpec::new(g.clone(), 3).generate().unwrap().1;
        let b = SyntheticSpec::new(g.clone(), 3).generate().unwrap().1;
        let c = SyntheticSpec::new(g, 4).generate().unwrap().1;
        let rows = |i: &Instance| {
            i.relations()
                .iter()
                .map(Relation::rows_vec)
                .collect::<Vec<_>>()
        };
        assert_eq!(rows(&a), rows(&b));
        assert_ne!(rows(&a), rows(&c));
    }

    #[test]
    fn parse_and_validate() {
        assert!(matches!(
            SyntheticSpec::parse("snowflake", None, None, None, 0),
            Err(SynthError::UnknownGenerator(_))
        ));
        assert!(matches!(
            SyntheticSpec::parse("chain", Some(1), Some(10), None, 0),
            Err(SynthError::InvalidParameter(_))
        ));
        assert!(SyntheticSpec::parse("star", Some(2), Some(10), Some(0.0), 0).is_err());
        let s = SyntheticSpec::parse("chain", Some(6), Some(10), Some(0.5), 9).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(
            text,
            r#"{"generator":"chain","k":6,"n":10,"sel":0.5,"seed":9}"#
        );
        assert_eq!(serde_json::from_str::<SyntheticSpec>(&text).unwrap(), s);
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::new(Generator::Fig2 { n: 8 }, 1);
        let (q, inst) = spec.write_to(dir.path()).unwrap();
        let back = crate::query::read_query(&dir.path().join("query.json")).unwrap();
        assert_eq!(back, q);
        let loaded = back.load_instance(dir.path()).unwrap();
        for r in inst.relations() {
            assert_eq!(loaded.get(r.name()).unwrap().rows_vec(), r.rows_vec());
        }
    }
}
