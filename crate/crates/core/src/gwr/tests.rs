use super::*;
use crate::error::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tr(state: Vec<f64>, next: Vec<f64>, action: Vec<f64>, reward: f64, done: f64) -> Transition {
    Transition {
        state,
        next_state: next,
        action,
        reward,
        done,
        episode_start: false,
    }
}

/// Assembles a map with explicit nodes and temporal edges through the
/// snapshot path (hand-set habituations, zero contexts, no neighborhood
/// edges).
fn map_from_parts(
    params: GwrParams,
    state_dim: usize,
    nodes: &[(u64, Vec<f64>, f64, f64)],
    edges: &[(u64, u64, u64, Vec<f64>, f64)],
) -> GwrMap {
    let k = params.context_depth;
    let snap = MapSnapshot {
        state_dim,
        action_dim: edges.first().map(|e| e.3.len()),
        params,
        pending_episode_start: false,
        last_bmu: None,
        next_id: nodes.iter().map(|n| n.0).max().unwrap_or(0) + 1,
        inserts: 0,
        merges: 0,
        nodes: nodes
            .iter()
            .map(|(id, w, h, d)| NodeRecord {
                id: NodeId(*id),
                node: GwrNode {
                    weight: w.clone(),
                    habituation: *h,
                    done_avg: *d,
                    done_updates: 1,
                    context: vec![vec![0.0; state_dim]; k],
                },
            })
            .collect(),
        neighborhood_edges: Vec::new(),
        temporal_edges: edges
            .iter()
            .map(|(f, t, c, a, r)| TemporalEdgeRecord {
                from: NodeId(*f),
                to: NodeId(*t),
                count: *c,
                action: a.clone(),
                reward: *r,
            })
            .collect(),
        global_context: vec![vec![0.0; state_dim]; k],
        drift: Vec::new(),
    };
    GwrMap::from_snapshot(snap).unwrap()
}

fn always_merge_params() -> GwrParams {
    GwrParams {
        activation_threshold: 1e-9,
        context_depth: 0,
        eps_bmu: 0.0,
        eps_neighbor: 0.0,
        ..GwrParams::default()
    }
}

#[test]
fn new_map_has_two_fresh_nodes_and_no_edges() {
    let map = GwrMap::new(GwrParams::default(), 4, &mut rng(3)).unwrap();
    assert_eq!(map.memory_size(), 2);
    for id in map.node_ids().collect::<Vec<_>>() {
        let n = map.node(id).unwrap();
        assert_eq!(n.habituation, 1.0);
        assert_eq!(n.weight.len(), 4);
        assert!(n.weight.iter().all(|w| (-1.0..=1.0).contains(w)));
    }
    assert_eq!(map.temporal_edge_count(), 0);
    assert_eq!(map.neighborhood_edges().count(), 0);
}

#[test]
fn invalid_params_are_rejected() {
    let bad = GwrParams {
        kappa: 1.0,
        ..GwrParams::default()
    };
    assert!(matches!(
        GwrMap::new(bad, 4, &mut rng(0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn distance_euclidean_without_context() {
    let params = GwrParams {
        context_depth: 0,
        ..GwrParams::default()
    };
    let map = map_from_parts(params, 2, &[(0, vec![0.0, 0.0], 1.0, 0.0)], &[]);
    assert_eq!(map.distance(NodeId(0), &[3.0, 4.0]).unwrap(), 5.0);
    assert_eq!(map.distance(NodeId(0), &[0.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn distance_with_context_normalizes_by_depth() {
    let params = GwrParams {
        context_depth: 2,
        ..GwrParams::default()
    };
    let map = map_from_parts(params, 2, &[(0, vec![0.0, 0.0], 1.0, 0.0)], &[]);
    let d = map.distance(NodeId(0), &[3.0, 4.0]).unwrap();
    assert!((d - 5.0 / 3.0_f64.sqrt()).abs() < 1e-12, "got {d}");
}

#[test]
fn distance_rejects_dimension_mismatch() {
    let map = GwrMap::new(GwrParams::default(), 2, &mut rng(0)).unwrap();
    let id = map.node_ids().next().unwrap();
    assert!(matches!(map.distance(id, &[1.0]), Err(Error::Config(_))));
}

#[test]
fn activation_values() {
    assert_eq!(activation(0.0), 1.0);
    let at_boundary = activation(-(0.95_f64.ln()));
    assert!((at_boundary - 0.95).abs() < 1e-15);
    assert!((activation(1.0) - 0.36787944117144233).abs() < 1e-15);
}

#[test]
fn habituation_steps() {
    assert!((habituate(1.0, 0.3, 1.05) - 0.7).abs() < 1e-15);
    assert!((habituate(0.7, 0.3, 1.05) - 0.4945).abs() < 1e-15);
    let floor = 1.0 - 1.0 / 1.05;
    assert!((habituate(floor, 0.3, 1.05) - floor).abs() < 1e-15);
}

#[test]
fn ewa_first_and_recursive_values() {
    assert_eq!(ewa_update(0.0, 1.0, 0.7, false), 0.7);
    assert_eq!(ewa_update(0.9, 0.3, 0.7, true), 0.3);
    let mut v = ewa_update(0.0, 1.0, 0.7, true);
    v = ewa_update(v, 0.0, 0.7, false);
    v = ewa_update(v, 1.0, 0.7, false);
    assert!((v - 0.79).abs() < 1e-12);
}

#[test]
fn fresh_map_merges_because_habituation_blocks_insertion() {
    let mut map = GwrMap::new(GwrParams::default(), 2, &mut rng(5)).unwrap();
    let out = map
        .add(&tr(vec![9.0, 9.0], vec![10.0, 10.0], vec![0.2], 1.0, 0.0))
        .unwrap();
    assert_eq!(out.kind, AddKind::Merged);
    assert_eq!(map.memory_size(), 2);
    let h = map.node(out.bmu).unwrap().habituation;
    assert!((h - 0.7).abs() < 1e-15, "BMU habituation {h}");
}

#[test]
fn eligible_bmu_inserts_exactly_at_sample() {
    let params = GwrParams {
        context_depth: 0,
        ..GwrParams::default()
    };
    // BMU habituation 0.7 < 0.8; activation e^-0.1 < 0.95.
    let mut map = map_from_parts(
        params,
        2,
        &[(0, vec![0.0, 0.0], 0.7, 0.0), (1, vec![10.0, 10.0], 1.0, 0.0)],
        &[],
    );
    let x = vec![0.1, 0.0];
    let out = map
        .add(&tr(vec![-1.0, 0.0], x.clone(), vec![0.0], 0.0, 0.25))
        .unwrap();
    assert_eq!(out.kind, AddKind::Inserted);
    let k = out.new_node.unwrap();
    let node = map.node(k).unwrap();
    assert_eq!(node.weight, x);
    assert_eq!(node.habituation, 1.0);
    assert_eq!(node.done_avg, 0.25);
    // Neighborhood edges to BMU and second-BMU.
    let mut partners: Vec<NodeId> = map.neighbors_of(k).collect();
    partners.sort();
    assert_eq!(partners, vec![NodeId(0), NodeId(1)]);
}

#[test]
fn very_high_thresholds_insert_every_sample() {
    let mut map = GwrMap::new(GwrParams::always_insert(), 3, &mut rng(7)).unwrap();
    let n = 20;
    for i in 0..n {
        let s = vec![i as f64, 0.0, 0.0];
        let s2 = vec![i as f64 + 1.0, 0.0, 0.0];
        map.add(&tr(s, s2, vec![0.1], 0.5, 0.0)).unwrap();
    }
    assert_eq!(map.memory_size(), 2 + n);
    assert_eq!(map.update_counts().0, n as u64);
}

#[test]
fn episode_start_learns_the_reset_state_standalone() {
    let mut map = GwrMap::new(GwrParams::always_insert(), 1, &mut rng(11)).unwrap();
    // One five-step episode over distinct states s0..s5.
    for i in 0..5 {
        let t = Transition {
            state: vec![10.0 + i as f64],
            next_state: vec![11.0 + i as f64],
            action: vec![0.0],
            reward: 1.0,
            done: 0.0,
            episode_start: i == 0,
        };
        map.add(&t).unwrap();
    }
    // The start state plus five next-states were inserted, on top of the
    // two seed nodes; the start state has no incoming temporal edge.
    assert_eq!(map.update_counts().0, 6);
    assert_eq!(map.memory_size(), 8);
    assert_eq!(map.temporal_edge_count(), 5);
    let start_node = NodeId(2);
    assert_eq!(map.node(start_node).unwrap().weight, vec![10.0]);
    assert!(map.temporal_counts().all(|((_, to), _)| to != start_node));
}

#[test]
fn terminal_done_cuts_the_chain_on_the_next_add() {
    let mut map = GwrMap::new(GwrParams::always_insert(), 1, &mut rng(13)).unwrap();
    map.add(&tr(vec![0.0], vec![1.0], vec![0.0], 0.0, 1.0)).unwrap();
    let edges_before = map.temporal_edge_count();
    assert_eq!(edges_before, 0);
    // No explicit flag here; the map remembers the terminal done.
    map.add(&tr(vec![5.0], vec![6.0], vec![0.0], 0.0, 0.0)).unwrap();
    // Standalone reset state + next state: exactly one new edge between
    // them, none from the previous episode's final node.
    assert_eq!(map.memory_size(), 5);
    assert_eq!(map.temporal_edge_count(), 1);
    let ((from, to), _) = map.temporal_counts().next().unwrap();
    assert_eq!(map.node(from).unwrap().weight, vec![5.0]);
    assert_eq!(map.node(to).unwrap().weight, vec![6.0]);
}

#[test]
fn successor_probabilities_follow_count_ratios() {
    let map = map_from_parts(
        GwrParams::default(),
        1,
        &[
            (0, vec![0.0], 1.0, 0.0),
            (1, vec![1.0], 1.0, 0.0),
            (2, vec![2.0], 1.0, 0.0),
        ],
        &[
            (0, 1, 3, vec![0.1], 0.0),
            (0, 2, 1, vec![0.2], 0.0),
        ],
    );
    let dist = map.successor_distribution(NodeId(0));
    assert_eq!(dist, vec![(NodeId(1), 0.75), (NodeId(2), 0.25)]);
}

#[test]
fn single_chain_always_yields_the_stored_tuple() {
    let map = map_from_parts(
        GwrParams::default(),
        2,
        &[(0, vec![0.0, 1.0], 1.0, 0.0), (1, vec![2.0, 3.0], 1.0, 0.25)],
        &[(0, 1, 4, vec![0.5], 2.5)],
    );
    let mut r = rng(17);
    let batch = map.sample_batch(100, &mut r).unwrap();
    for t in batch.iter() {
        assert_eq!(t.state, vec![0.0, 1.0]);
        assert_eq!(t.next_state, vec![2.0, 3.0]);
        assert_eq!(t.action, vec![0.5]);
        assert_eq!(t.reward, 2.5);
        assert_eq!(t.done, 0.25);
    }
}

#[test]
fn star_graph_successor_frequencies_match_ratios() {
    let map = map_from_parts(
        GwrParams::default(),
        1,
        &[
            (0, vec![0.0], 1.0, 0.0),
            (1, vec![1.0], 1.0, 0.0),
            (2, vec![2.0], 1.0, 0.0),
            (3, vec![3.0], 1.0, 0.0),
        ],
        &[
            (0, 1, 1, vec![0.0], 0.0),
            (0, 2, 1, vec![0.0], 0.0),
            (0, 3, 2, vec![0.0], 0.0),
        ],
    );
    let mut r = rng(23);
    let draws = 100_000;
    let batch = map.sample_batch(draws, &mut r).unwrap();
    let mut counts = [0usize; 4];
    for t in batch.iter() {
        counts[t.next_state[0] as usize] += 1;
    }
    let expected = [0.0, 0.25, 0.25, 0.5];
    for i in 1..4 {
        let freq = counts[i] as f64 / draws as f64;
        assert!(
            (freq - expected[i]).abs() < 0.01,
            "successor {i} frequency {freq}, expected {}",
            expected[i]
        );
    }
}

#[test]
fn sampling_without_edges_is_an_empty_memory_error() {
    let map = GwrMap::new(GwrParams::default(), 2, &mut rng(29)).unwrap();
    assert!(matches!(
        map.sample_batch(1, &mut rng(0)),
        Err(Error::EmptyMemory(_))
    ));
}

#[test]
fn stationary_agent_gets_a_self_loop() {
    let mut map = map_from_parts(
        always_merge_params(),
        1,
        &[(0, vec![0.0], 1.0, 0.0), (1, vec![100.0], 1.0, 0.0)],
        &[],
    );
    map.add(&tr(vec![0.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
    map.add(&tr(vec![0.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
    assert_eq!(map.temporal_edge(NodeId(0), NodeId(0)).unwrap().count, 1);
    map.add(&tr(vec![0.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
    assert_eq!(map.temporal_edge(NodeId(0), NodeId(0)).unwrap().count, 2);
}

#[test]
fn merge_updates_edge_by_exponential_average() {
    let mut map = map_from_parts(
        always_merge_params(),
        1,
        &[(0, vec![0.0], 1.0, 0.0), (1, vec![100.0], 1.0, 0.0)],
        &[],
    );
    // Walk 0 -> 1 twice; second traversal folds the new values in.
    map.add(&tr(vec![0.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
    map.add(&tr(vec![0.0], vec![100.0], vec![1.0], 10.0, 0.0)).unwrap();
    map.add(&tr(vec![100.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
    map.add(&tr(vec![0.0], vec![100.0], vec![0.0], 0.0, 0.0)).unwrap();
    let e = map.temporal_edge(NodeId(0), NodeId(1)).unwrap();
    assert_eq!(e.count, 2);
    assert!((e.action[0] - 0.3).abs() < 1e-15);
    assert!((e.reward - 3.0).abs() < 1e-12);
}

#[test]
fn drift_requires_recording_enabled() {
    let map = GwrMap::new(GwrParams::default(), 2, &mut rng(31)).unwrap();
    assert!(matches!(map.drift_stats(16), Err(Error::Unavailable(_))));
}

#[test]
fn drift_records_merge_deviations() {
    let params = GwrParams {
        record_drift: true,
        ..always_merge_params()
    };
    let mut map = map_from_parts(
        params,
        1,
        &[(0, vec![0.0], 1.0, 0.0), (1, vec![100.0], 1.0, 0.0)],
        &[],
    );
    let empty = map.drift_stats(16).unwrap();
    assert_eq!((empty.count, empty.mean, empty.max), (0, 0.0, 0.0));

    map.add(&tr(vec![0.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
    map.add(&tr(vec![0.0], vec![100.0], vec![0.0], 0.0, 0.0)).unwrap();
    map.add(&tr(vec![100.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
    map.add(&tr(vec![0.0], vec![100.0], vec![1.0], 0.0, 0.0)).unwrap();
    let s = map.drift_stats(16).unwrap();
    assert_eq!(s.max, 1.0);

    // Constant incoming action: deviations shrink geometrically at 1 - phi.
    for _ in 0..4 {
        map.add(&tr(vec![100.0], vec![0.0], vec![0.0], 0.0, 0.0)).unwrap();
        map.add(&tr(vec![0.0], vec![100.0], vec![1.0], 0.0, 0.0)).unwrap();
    }
    let devs: Vec<f64> = map.drift_records().filter(|d| *d > 0.0).collect();
    assert!(devs.len() >= 4);
    for pair in devs.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!((ratio - 0.3).abs() < 1e-9, "ratio {ratio}");
    }
}

#[test]
fn snapshot_round_trip_is_exact() {
    let mut map = GwrMap::new(GwrParams::default(), 3, &mut rng(37)).unwrap();
    let mut r = rng(38);
    for i in 0..200 {
        let s: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let t = Transition {
            state: s,
            next_state: s2,
            action: vec![r.gen_range(-1.0..1.0)],
            reward: r.gen_range(-1.0..1.0),
            done: if i % 40 == 39 { 1.0 } else { 0.0 },
            episode_start: i == 0,
        };
        map.add(&t).unwrap();
    }
    let bytes = map.snapshot_bytes();
    let restored = GwrMap::restore(&bytes).unwrap();
    assert_eq!(restored.snapshot(), map.snapshot());
    assert_eq!(restored.snapshot_bytes(), bytes);

    // Restored map samples identically under the same seed.
    let a = map.sample_batch(32, &mut rng(99)).unwrap();
    let b = restored.sample_batch(32, &mut rng(99)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fresh_snapshot_decodes_to_two_nodes() {
    let map = GwrMap::new(GwrParams::default(), 4, &mut rng(41)).unwrap();
    let snap = MapSnapshot::from_bytes(&map.snapshot_bytes()).unwrap();
    assert_eq!(snap.nodes.len(), 2);
    assert!(snap.neighborhood_edges.is_empty());
    assert!(snap.temporal_edges.is_empty());
}

#[test]
fn truncated_snapshot_is_a_decode_error() {
    let map = GwrMap::new(GwrParams::default(), 4, &mut rng(43)).unwrap();
    let bytes = map.snapshot_bytes();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        match GwrMap::restore(&bytes[..cut]) {
            Err(Error::Decode { .. }) => {}
            other => panic!("expected decode error at cut {cut}, got {other:?}"),
        }
    }
}

#[test]
fn random_stream_preserves_structural_integrity() {
    let params = GwrParams {
        activation_threshold: 0.7,
        habituation_threshold: 0.9,
        age_max: 3,
        context_depth: 2,
        ..GwrParams::default()
    };
    let mut map = GwrMap::new(params, 2, &mut rng(47)).unwrap();
    let mut r = rng(48);
    let mut prev = vec![0.0, 0.0];
    for i in 0..2000 {
        let next: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
        let t = Transition {
            state: prev.clone(),
            next_state: next.clone(),
            action: vec![r.gen_range(-1.0..1.0)],
            reward: r.gen_range(-1.0..1.0),
            done: if r.gen_bool(0.02) { 1.0 } else { 0.0 },
            episode_start: i == 0,
        };
        map.add(&t).unwrap();
        prev = next;
        if i % 200 == 199 {
            let problems = map.check_integrity();
            assert!(problems.is_empty(), "integrity violations: {problems:?}");
        }
    }
    let count_keys: Vec<_> = map.temporal_counts().map(|(k, _)| k).collect();
    let action_keys: Vec<_> = map.temporal_actions().map(|(k, _)| k).collect();
    let reward_keys: Vec<_> = map.temporal_rewards().map(|(k, _)| k).collect();
    assert_eq!(count_keys, action_keys);
    assert_eq!(count_keys, reward_keys);
}

proptest! {
    /// The habituation update never leaves `[1 - 1/kappa, 1]` and never
    /// increases within the band.
    #[test]
    fn habituation_band_and_monotonicity(h in 0.0f64..=1.0, tau in 0.0f64..=1.0, kappa in 1.01f64..3.0) {
        let floor = 1.0 - 1.0 / kappa;
        let h = floor + h * (1.0 - floor);
        let next = habituate(h, tau, kappa);
        prop_assert!(next <= h + 1e-15);
        prop_assert!(next >= floor - 1e-15);
        prop_assert!(next <= 1.0);
    }
}
