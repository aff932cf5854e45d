mod common;

use common::{brute_force_weight, state_of};
use deltamem_core::agent::{parse_transcript, render_transcript, ProposedOp, Step, ToolHit, Trajectory};
use deltamem_core::grpo::{clipped_term, group_advantages, grpo_objective, kl_term, Rollout, RolloutGroup};
use deltamem_core::memory::{
    apply_operations, state_fingerprint, MemoryEntry, MemoryOperation, MemoryState, SequentialIds,
};
use deltamem_core::retrieval::{embed_hashed, HashedEmbedder, VectorIndex};
use deltamem_core::reward::{
    matching_weight, optimal_matching, trans_reward, Provenance, SimilarityMatrix,
    TransitionConfig,
};
use deltamem_core::text::normalize_text;
use proptest::prelude::*;

fn content() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,8}( [a-z]{1,8}){0,5}",
        "\\PC{1,30}".prop_filter("nonblank", |s| !s.trim().is_empty()),
    ]
}

fn state() -> impl Strategy<Value = MemoryState> {
    prop::collection::btree_map("[a-z0-9]{1,10}", (content(), any::<i64>()), 0..12).prop_map(|m| {
        MemoryState::from_entries(
            m.into_iter().map(|(id, (content, timestamp))| MemoryEntry { id, content, timestamp }),
        )
        .unwrap()
    })
}

fn matrix(max: usize) -> impl Strategy<Value = SimilarityMatrix> {
    (0..=max, 0..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0f64..=1.0, r * c).prop_map(move |v| SimilarityMatrix::new(r, c, v))
    })
}

fn valid_ops(len: usize) -> impl Strategy<Value = Vec<(bool, String)>> {
    prop::collection::vec((any::<bool>(), "[a-z]{1,6} [a-z]{1,6}"), 0..len)
}

/// Adds always; an update targets the most recent entry when one exists.
fn materialize(start: &MemoryState, plan: &[(bool, String)], first_id: u64) -> Vec<MemoryOperation> {
    let mut last = start.ids().last().map(str::to_owned);
    let mut next = first_id;
    plan.iter()
        .enumerate()
        .map(|(t, (update, content))| match (&last, update) {
            (Some(id), true) => MemoryOperation::Update {
                target_id: id.clone(),
                new_content: content.clone(),
                timestamp: t as i64,
            },
            _ => {
                last = Some(format!("m{next:06}"));
                next += 1;
                MemoryOperation::Add { content: content.clone(), timestamp: t as i64 }
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn state_json_round_trip(s in state()) {
        prop_assert_eq!(MemoryState::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn fold_splits_at_any_point(plan in valid_ops(12), split in 0usize..12) {
        let start = MemoryState::new();
        let ops = materialize(&start, &plan, 1);
        let k = split.min(ops.len());
        let whole = apply_operations(&start, &ops, &mut SequentialIds::new()).unwrap();
        let mut ids = SequentialIds::new();
        let left = apply_operations(&start, &ops[..k], &mut ids).unwrap();
        let right = apply_operations(&left, &ops[k..], &mut ids).unwrap();
        prop_assert_eq!(state_fingerprint(&whole), state_fingerprint(&right));
        let adds = ops.iter().filter(|o| o.is_add()).count();
        prop_assert_eq!(&whole, &right);
        prop_assert_eq!(whole.len(), adds);
    }

    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,40}") {
        let once = normalize_text(&s);
        prop_assert_eq!(normalize_text(&once), once);
    }

    #[test]
    fn hashed_embeddings_are_unit(s in "[a-zA-Z ]{1,40}") {
        let e = embed_hashed(&s);
        if s.trim().is_empty() {
            prop_assert!(e.is_zero());
        } else {
            prop_assert!((e.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_nonnegative(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        prop_assert!(kl_term(a, b) >= 0.0);
    }

    #[test]
    fn unit_ratio_returns_advantage(lp in -10.0f64..0.0, adv in -5.0f64..5.0) {
        prop_assert_eq!(clipped_term(lp, lp, adv, 0.2), adv);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matching_is_optimal_and_one_to_one(phi in matrix(6), tau in prop::sample::select(vec![0.0, 0.5, 0.75, 0.9])) {
        let pairs = optimal_matching(&phi, tau).unwrap();
        let best = brute_force_weight(&phi, tau);
        prop_assert!((matching_weight(&pairs) - best).abs() < 1e-12);
        let mut rows: Vec<usize> = pairs.iter().map(|p| p.pred).collect();
        let mut cols: Vec<usize> = pairs.iter().map(|p| p.target).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(rows.len(), pairs.len());
        prop_assert_eq!(cols.len(), pairs.len());
        prop_assert!(pairs.iter().all(|p| p.phi >= tau));
    }

    #[test]
    fn matching_beats_greedy(phi in matrix(6)) {
        let mut edges: Vec<(f64, usize, usize)> = (0..phi.rows())
            .flat_map(|i| (0..phi.cols()).map(move |j| (i, j)))
            .map(|(i, j)| (phi.get(i, j), i, j))
            .collect();
        edges.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (mut ru, mut cu, mut greedy) = (vec![false; phi.rows()], vec![false; phi.cols()], 0.0);
        for (w, i, j) in edges {
            if !ru[i] && !cu[j] {
                ru[i] = true;
                cu[j] = true;
                greedy += w;
            }
        }
        let pairs = optimal_matching(&phi, 0.0).unwrap();
        prop_assert!(matching_weight(&pairs) >= greedy - 1e-12);
    }

    #[test]
    fn raising_tau_never_adds_pairs(phi in matrix(6)) {
        let mut prev = usize::MAX;
        for tau in [0.0, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9] {
            let n = optimal_matching(&phi, tau).unwrap().len();
            prop_assert!(n <= prev, "tau {tau}: {n} > {prev}");
            prev = n;
        }
    }

    #[test]
    fn trans_reward_bounds_and_identity(
        pred in prop::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,3}", 0..6),
        target in prop::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,3}", 0..6),
        tau in 0.0f64..=1.0,
        use_fidelity in any::<bool>(),
    ) {
        let e = HashedEmbedder::default();
        let cfg = TransitionConfig { tau, use_fidelity };
        let none = Provenance::new();
        let (p, t) = (state_of(&pred), state_of(&target));
        let s = trans_reward(&p, &t, &none, &none, &e, cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.r_trans));
        let sum: f64 = s.matching.pairs.iter().map(|m| m.fidelity).sum();
        let lhs = s.dist_plus + s.dist_minus;
        let rhs = (s.n_pred + s.n_target) as f64 - 2.0 * sum;
        prop_assert!((lhs - rhs).abs() < 1e-9);
        prop_assert_eq!(trans_reward(&t, &t, &none, &none, &e, cfg).unwrap().r_trans, 1.0);
    }

    #[test]
    fn runtime_style_trajectories_round_trip(traj in trajectory()) {
        let text = render_transcript(&traj);
        prop_assert_eq!(parse_transcript(&text).unwrap(), traj);
    }

    #[test]
    fn advantages_normalize(rewards in prop::collection::vec(-10.0f64..10.0, 2..16), shift in -100.0f64..100.0) {
        let a = group_advantages(&rewards).unwrap();
        let g = a.len() as f64;
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-9 * g);
        let mean = rewards.iter().sum::<f64>() / g;
        let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g).sqrt();
        if std > 1e-6 {
            let var = a.iter().map(|x| x * x).sum::<f64>() / g;
            prop_assert!((var - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let b = group_advantages(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn objective_decreases_in_beta(seed in any::<u64>(), beta in 0.0f64..1.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = rng.gen_range(2..6);
        let group = RolloutGroup {
            rewards: (0..g).map(|_| rng.gen_range(0.0..1.0)).collect(),
            rollouts: (0..g).map(|_| {
                let n = rng.gen_range(1..5);
                let mut lp = || (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect::<Vec<f64>>();
                Rollout { logp_new: lp(), logp_old: lp(), logp_ref: lp() }
            }).collect(),
        };
        let lo = grpo_objective(&group, 0.2, beta).unwrap();
        let hi = grpo_objective(&group, 0.2, beta + 0.5).unwrap();
        prop_assert!(hi < lo);
    }
}

fn hit() -> impl Strategy<Value = ToolHit> {
    ("m[0-9]{6}", content(), any::<i64>(), -1.0f64..1.0)
        .prop_map(|(id, content, timestamp, score)| ToolHit { id, content, timestamp, score })
}

fn op() -> impl Strategy<Value = ProposedOp> {
    prop_oneof![
        content().prop_map(|content| ProposedOp::Add { content }),
        ("m[0-9]{6}", content()).prop_map(|(id, content)| ProposedOp::Update { id, content }),
        content().prop_map(|content| ProposedOp::None { content }),
    ]
}

/// Trajectories shaped like the runtime's: thoughts, then call/response
/// pairs, then an answer.
fn trajectory() -> impl Strategy<Value = Trajectory> {
    let think = "[A-Za-z0-9 .,]{0,30}".prop_map(|text| vec![Step::Think { text }]);
    let exchange = (prop::collection::vec(content(), 1..4), 1usize..30, prop::collection::vec(hit(), 0..4))
        .prop_map(|(queries, top_k, hits)| {
            vec![Step::ToolCall { queries, top_k }, Step::ToolResponse { hits }]
        });
    (
        prop::collection::vec(prop_oneof![think, exchange], 0..5),
        prop::collection::vec(op(), 0..5),
    )
        .prop_map(|(chunks, ops)| {
            let mut t = Trajectory::default();
            for step in chunks.into_iter().flatten() {
                t.push(step);
            }
            t.final_ops = Some(ops);
            t
        })
}

#[test]
fn sync_is_idempotent_and_incremental() {
    let e = HashedEmbedder::default();
    let s = state_of(&["likes tea".into(), "owns a dog".into()]);
    let mut index = VectorIndex::new(256);
    index.sync(&s, &e);
    let calls = index.embed_calls();
    index.sync(&s, &e);
    assert_eq!(index.embed_calls(), calls);
    let updated = apply_operations(
        &s,
        &[MemoryOperation::Update { target_id: "m000002".into(), new_content: "owns two dogs".into(), timestamp: 1 }],
        &mut SequentialIds::after(&s),
    )
    .unwrap();
    let before = index.vector("m000001").cloned();
    index.sync(&updated, &e);
    assert_eq!(index.embed_calls(), calls + 1);
    assert_eq!(index.vector("m000001").cloned(), before);
}
