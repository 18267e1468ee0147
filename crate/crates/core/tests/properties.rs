mod common;

use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_force_max_spanning, random_graph, random_query, SmallShape, ACYCLIC_SHAPES};
use rpt::executor::{
    execute, hash_join, join_phase, plan_transfer, semi_join_exact, transfer_phase, PruneFlags,
    SemiJoinMode,
};
use rpt::harness::survivors;
use rpt::joingraph::{
    classify_acyclicity, derive_schedule, gyo_reduce, is_join_tree, largest_root, TransferSchedule,
};
use rpt::oracle::{canonical_rows, nested_loop_join};
use rpt::planner::{
    enumerate_bushy, enumerate_left_deep, sample_bushy, sample_left_deep, JoinPlan, PlanNode,
};
use rpt::query::Instance;
use rpt::relstore::Relation;
use rpt::synth::{Generator, SyntheticSpec};

const ALL_PRUNES: [PruneFlags; 4] = [
    PruneFlags {
        skip_trivial: false,
        skip_backward_aligned: false,
    },
    PruneFlags {
        skip_trivial: true,
        skip_backward_aligned: false,
    },
    PruneFlags {
        skip_trivial: false,
        skip_backward_aligned: true,
    },
    PruneFlags {
        skip_trivial: true,
        skip_backward_aligned: true,
    },
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shape_strategy() -> impl Strategy<Value = SmallShape> {
    prop::sample::select(ACYCLIC_SHAPES.to_vec())
}

fn exhaustive(g: &rpt::joingraph::JoinGraph) -> Vec<JoinPlan> {
    let mut plans = enumerate_left_deep(g, 7).unwrap();
    plans.extend(enumerate_bushy(g, 7).unwrap());
    plans
}

fn reduced_exact(q: &rpt::query::Query, raw: &Instance) -> Instance {
    let filtered = q.prepare(raw).unwrap();
    let g = q.join_graph().unwrap();
    let sched = plan_transfer(&g, &filtered).unwrap();
    transfer_phase(
        &filtered,
        &sched,
        SemiJoinMode::Exact,
        PruneFlags::default(),
    )
    .unwrap()
    .0
    .instance
}

/// Evaluates `node` and asserts every input row of every join finds a partner.
fn assert_no_loss(node: &PlanNode, inst: &Instance) -> Relation {
    match node {
        PlanNode::Leaf(n) => inst.get(n).unwrap().clone(),
        PlanNode::Join { probe, build } => {
            let l = assert_no_loss(probe, inst);
            let r = assert_no_loss(build, inst);
            let shared = l.schema().shared_with(r.schema());
            assert_eq!(
                semi_join_exact(&l, &r, &shared).unwrap().len(),
                l.visible_count(),
                "{node}"
            );
            assert_eq!(
                semi_join_exact(&r, &l, &shared).unwrap().len(),
                r.visible_count(),
                "{node}"
            );
            let j = hash_join(&l, &r).unwrap();
            assert!(j.num_rows() >= l.visible_count().max(r.visible_count()));
            j
        }
    }
}

fn prefix(s: &TransferSchedule, k: usize) -> TransferSchedule {
    let f = k.min(s.forward.len());
    TransferSchedule {
        forward: s.forward[..f].to_vec(),
        backward: s.backward[..k - f].to_vec(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn largest_root_is_maximum_spanning_join_tree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 7);
        let cards: Vec<usize> = (0..g.len()).map(|i| (seed as usize >> (i * 3)) % 50).collect();
        let t = largest_root(&g, &cards).unwrap();
        prop_assert_eq!(t.weight(), brute_force_max_spanning(&g));
        prop_assert_eq!(t.edges().len() + 1, g.len());
        let max_card = cards.iter().max().copied().unwrap();
        prop_assert_eq!(cards[t.root()], max_card);
    }

    #[test]
    fn alpha_verdict_matches_ear_removal(seed in any::<u64>()) {
        let g = random_graph(&mut rng(seed), 7);
        let class = classify_acyclicity(&g);
        prop_assert_eq!(class.is_alpha_acyclic(), gyo_reduce(&g));
        if class.is_gamma_acyclic() {
            prop_assert!(class.is_alpha_acyclic());
        }
        let t = largest_root(&g, &vec![1; g.len()]).unwrap();
        prop_assert_eq!(is_join_tree(&t, &g), class.is_alpha_acyclic());
    }

    #[test]
    fn schedule_visits_each_tree_edge_once_per_pass(seed in any::<u64>()) {
        let g = random_graph(&mut rng(seed), 7);
        let t = largest_root(&g, &vec![1; g.len()]).unwrap();
        let s = derive_schedule(&t);
        let links: HashSet<(String, String)> = t.links().into_iter().collect();
        let fwd: HashSet<(String, String)> = s.forward.iter().map(|x| (x.source.clone(), x.target.clone())).collect();
        let bwd: HashSet<(String, String)> = s.backward.iter().map(|x| (x.target.clone(), x.source.clone())).collect();
        prop_assert_eq!(s.forward.len(), links.len());
        prop_assert_eq!(s.backward.len(), links.len());
        prop_assert_eq!(&fwd, &links);
        prop_assert_eq!(&bwd, &links);
        // a relation is used as a source only after it has been reduced
        for (i, step) in s.forward.iter().enumerate() {
            prop_assert!(s.forward[i..].iter().all(|later| later.target != step.source));
        }
        for (i, step) in s.backward.iter().enumerate() {
            prop_assert!(s.backward[i..].iter().all(|later| later.target != step.source));
        }
    }

    #[test]
    fn sampled_plans_are_cartesian_free(seed in any::<u64>()) {
        let g = random_graph(&mut rng(seed), 7);
        let a = sample_left_deep(&g, seed);
        let b = sample_bushy(&g, seed);
        prop_assert!(a.validate(&g).is_ok());
        prop_assert!(b.validate(&g).is_ok());
        prop_assert_eq!(a.num_relations(), g.len());
        prop_assert_eq!(&a, &sample_left_deep(&g, seed));
        prop_assert_eq!(&b, &sample_bushy(&g, seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn execution_matches_oracle(seed in any::<u64>(), shape in shape_strategy()) {
        let mut r = rng(seed);
        let (q, raw) = random_query(&mut r, shape, 30);
        let oracle = nested_loop_join(&q.prepare(&raw).unwrap(), None);
        let expected = oracle.sorted_rows();
        let g = q.join_graph().unwrap();
        for plan in [sample_left_deep(&g, seed), sample_bushy(&g, seed)] {
            for mode in [SemiJoinMode::Exact, SemiJoinMode::Bloom] {
                for prune in ALL_PRUNES {
                    let (out, _) = execute(&q, &raw, &plan, mode, prune).unwrap();
                    prop_assert_eq!(&canonical_rows(&out, &oracle.attrs), &expected, "{} {} {:?}", plan, mode, prune);
                }
            }
        }
    }

    #[test]
    fn exact_transfer_fully_reduces(seed in any::<u64>(), shape in shape_strategy()) {
        let (q, raw) = random_query(&mut rng(seed), shape, 50);
        let reduced = reduced_exact(&q, &raw);
        let oracle = nested_loop_join(&q.prepare(&raw).unwrap(), None);
        prop_assert_eq!(survivors(&reduced), oracle.contributing_all());
    }

    #[test]
    fn bloom_survivors_contain_exact_after_every_step(seed in any::<u64>(), shape in shape_strategy()) {
        let (q, raw) = random_query(&mut rng(seed), shape, 50);
        let filtered = q.prepare(&raw).unwrap();
        let g = q.join_graph().unwrap();
        let sched = plan_transfer(&g, &filtered).unwrap();
        let total = sched.forward.len() + sched.backward.len();
        for k in 0..=total {
            let p = prefix(&sched, k);
            let (e, _) = transfer_phase(&filtered, &p, SemiJoinMode::Exact, PruneFlags::default()).unwrap();
            let (b, _) = transfer_phase(&filtered, &p, SemiJoinMode::Bloom, PruneFlags::default()).unwrap();
            let (se, sb) = (survivors(&e.instance), survivors(&b.instance));
            for (name, rows) in &se {
                prop_assert!(rows.is_subset(&sb[name]), "step {} relation {}", k, name);
                let before: BTreeSet<usize> = filtered.get(name).unwrap().visible_rows().collect();
                prop_assert!(sb[name].is_subset(&before));
            }
        }
    }

    #[test]
    fn gamma_acyclic_plans_stay_within_output(seed in any::<u64>(), shape in shape_strategy()) {
        let (q, raw) = random_query(&mut rng(seed), shape, 40);
        let g = q.join_graph().unwrap();
        prop_assume!(classify_acyclicity(&g).is_gamma_acyclic());
        let reduced = rpt::executor::ReducedInstance::unreduced(reduced_exact(&q, &raw));
        let m = g.len();
        for plan in exhaustive(&g) {
            let (out, st) = join_phase(&reduced, &plan).unwrap();
            let n = out.num_rows();
            prop_assert!(st.joins.iter().all(|j| j.rows <= n), "{}", plan);
            prop_assert!(st.join_work() <= (m - 1) * n);
            prop_assert!(st.total_intermediate <= (m - 1) * n);
        }
    }

    #[test]
    fn joins_on_reduced_gamma_instances_lose_no_rows(seed in any::<u64>(), shape in shape_strategy()) {
        let (q, raw) = random_query(&mut rng(seed), shape, 40);
        let g = q.join_graph().unwrap();
        prop_assume!(classify_acyclicity(&g).is_gamma_acyclic());
        let reduced = reduced_exact(&q, &raw);
        for plan in [sample_left_deep(&g, seed), sample_bushy(&g, seed ^ 1)] {
            assert_no_loss(&plan.tree(), &reduced);
        }
    }

    #[test]
    fn unsafe_order_witness(n in 1usize..60) {
        let (q, raw) = SyntheticSpec::new(Generator::Unsafe3 { n }, 0).generate().unwrap();
        let inst = q.prepare(&raw).unwrap();
        let red = rpt::executor::ReducedInstance::unreduced(inst);
        let (out, st) = join_phase(&red, &JoinPlan::left_deep(["S", "T", "R"])).unwrap();
        prop_assert_eq!(st.joins[0].rows, n * n);
        prop_assert_eq!(out.num_rows(), n);
    }
}

#[test]
fn synthetic_gamma_queries_respect_the_bound() {
    for spec in [
        Generator::Chain {
            k: 5,
            n: 200,
            sel: 0.1,
        },
        Generator::Star {
            k: 4,
            n: 500,
            sel: 0.2,
        },
        Generator::Fig2 { n: 30 },
    ] {
        let (q, raw) = SyntheticSpec::new(spec, 5).generate().unwrap();
        let g = q.join_graph().unwrap();
        assert!(classify_acyclicity(&g).is_gamma_acyclic());
        let reduced = rpt::executor::ReducedInstance::unreduced(reduced_exact(&q, &raw));
        for plan in exhaustive(&g) {
            let (out, st) = join_phase(&reduced, &plan).unwrap();
            assert!(st.max_join_rows() <= out.num_rows(), "{} {plan}", q.name);
        }
    }
}
