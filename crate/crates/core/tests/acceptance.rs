//! Release gate: one test per acceptance criterion, each printing a PASS
//! line with its measured runtime and enforcing a runtime ceiling.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drivemind_core::harness::{
    good_driver_backend, EpisodeConfig, EpisodeRunner, MemoryBank, MemoryMode,
};
use drivemind_core::llm::{Embedder, HashEmbedder};
use drivemind_core::memory::{
    cosine, ExperienceRecord, FinalDecision, MemoryStore, RecordId,
};
use drivemind_core::reflection::{
    efficiency_score, flag_decisions, safety_score, update_memory, CorrectedDecision,
    DecisionRecord, FlagReason, ReflectionFlag, ReflectionThresholds, ScorePair,
};
use drivemind_core::road::{NetworkKind, RoadNetwork, Segment};
use drivemind_core::scenario::{build_world, ScenarioConfig};
use drivemind_core::sim::{
    compute_ttc, detect_collisions, MetaAction, Ttc, VehicleId, VehicleKind, VehicleState, World,
};

fn finish(name: &str, detail: &str, limit_s: f64, started: Instant) {
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_s,
        "FAIL {name}: took {elapsed:.2} s, limit {limit_s} s"
    );
    println!("PASS {name}: {detail} ({elapsed:.2} s < {limit_s} s)");
}

#[test]
fn safety_score_is_exact() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..10_000 {
        let t = if rng.random_bool(0.1) {
            f64::INFINITY
        } else {
            rng.random_range(0.0..=10.0)
        };
        let got = safety_score(Ttc(t));
        // Independent form: clamp the line through (1.5, 0) and (3.0, 10).
        let expected = ((t - 1.5) / (3.0 - 1.5) * 10.0).clamp(0.0, 10.0);
        assert!(
            (got - expected).abs() < 1e-12,
            "ttc {t}: got {got}, expected {expected}"
        );
    }
    assert_eq!(safety_score(Ttc(1.5)), 0.0);
    assert_eq!(safety_score(Ttc(3.0)), 10.0);
    assert_eq!(safety_score(Ttc::INFINITE), 10.0);
    finish(
        "safety score",
        "10000 samples match the piecewise form, boundaries exact",
        1.0,
        started,
    );
}

#[test]
fn efficiency_score_is_exact() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..10_000 {
        let v_llm = rng.random_range(0.0..=35.0);
        let v_avg = if rng.random_bool(0.1) {
            rng.random_range(0.0..=0.1)
        } else {
            rng.random_range(0.0..=35.0)
        };
        let got = efficiency_score(v_llm, v_avg);
        let expected =
            if v_avg <= 0.1 { 10.0 } else { (10.0 * v_llm / v_avg).min(10.0) };
        assert!(
            (got - expected).abs() < 1e-12,
            "({v_llm}, {v_avg}): got {got}, expected {expected}"
        );
        if v_llm >= v_avg {
            assert_eq!(got, 10.0, "at or above the average pace must score 10");
        }
    }
    finish(
        "efficiency score",
        "10000 pairs match min(10, 10*v/avg) with the standstill rule",
        1.0,
        started,
    );
}

fn throwaway_record(id: u64, embedding: Vec<f32>) -> ExperienceRecord {
    ExperienceRecord {
        record_id: RecordId(id),
        agent_id: VehicleId(0),
        episode_id: "oracle".to_string(),
        frame: id as u32,
        scenario_description: format!("scene {id}"),
        planning_process: "plan".to_string(),
        final_decision: FinalDecision {
            action: MetaAction::Idle,
            justification: "steady".to_string(),
        },
        evaluation_score: ScorePair::new(9.0, 9.0),
        corrected: false,
        embedding,
    }
}

#[test]
fn retrieval_matches_brute_force() {
    let started = Instant::now();
    let dim = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // Hand checks of the similarity itself on known vectors.
    assert!((cosine(&[1.0, 0.0], &[0.0, 1.0]) - 0.0).abs() < 1e-12);
    assert!((cosine(&[2.0, 0.0], &[5.0, 0.0]) - 1.0).abs() < 1e-12);
    assert!((cosine(&[1.0, 0.0], &[-3.0, 0.0]) + 1.0).abs() < 1e-12);

    for store_idx in 0..200 {
        let n = rng.random_range(1..=2000);
        let mut store = MemoryStore::new("oracle-embedder", dim);
        let mut embeddings: Vec<Vec<f32>> = Vec::with_capacity(n);
        for i in 0..n {
            // Every fifth record clones an earlier embedding so exact
            // similarity ties exist and the id tie-break is exercised.
            let emb: Vec<f32> = if i > 0 && i % 5 == 0 {
                embeddings[rng.random_range(0..i)].clone()
            } else {
                (0..dim).map(|_| rng.random_range(-1.0f32..=1.0)).collect()
            };
            embeddings.push(emb.clone());
            store.insert(throwaway_record(i as u64, emb)).unwrap();
        }
        let query: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..=1.0)).collect();

        // Full-sort reference: similarity descending, then record id.
        let mut scored: Vec<(u64, f64)> = embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (i as u64, cosine(&query, e)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        for k in [1usize, 3, 10] {
            let got = store.retrieve_by_vector(&query, k);
            let want = &scored[..k.min(scored.len())];
            assert_eq!(got.len(), want.len(), "store {store_idx} k {k}");
            for (g, w) in got.iter().zip(want) {
                assert_eq!(g.0.record_id, RecordId(w.0), "store {store_idx} k {k}");
                assert!(
                    (g.1 - w.1).abs() < 1e-9,
                    "store {store_idx} k {k}: similarity {} vs {}",
                    g.1,
                    w.1
                );
            }
        }
    }
    finish(
        "retrieval",
        "200 random stores equal the full-sort reference for k in {1, 3, 10}",
        30.0,
        started,
    );
}

fn straight_two_lane() -> RoadNetwork {
    RoadNetwork {
        kind: NetworkKind::RampMerge,
        segments: vec![Segment {
            id: "main".into(),
            length: 5000.0,
            lane_count: 2,
            frame: 0,
            origin: 0.0,
            base_slot: 0,
            cyclic: false,
        }],
        junctions: vec![],
        lane_width: drivemind_core::road::LANE_WIDTH,
        merge_pos: None,
        endpoint_pos: None,
    }
}

#[test]
fn ttc_matches_substep_integration() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let substep = 0.1;
    let mut skipped = 0usize;
    for case in 0..500 {
        let x0 = rng.random_range(100.0..=500.0);
        let delta = rng.random_range(5.6..=300.0);
        let v_ego = rng.random_range(0.0..=30.0);
        let v_leader = rng.random_range(0.0..=30.0);
        let ego = VehicleState::background(VehicleId(0), "main", 0, x0, v_ego);
        let leader = VehicleState::background(VehicleId(1), "main", 0, x0 + delta, v_leader);
        let touch_dist = (ego.length + leader.length) / 2.0;
        let world = World::new(straight_two_lane(), vec![ego, leader], 30.0).unwrap();
        let ttc = compute_ttc(&world, VehicleId(0)).unwrap();

        // Pure constant-speed integration, one substep at a time.
        let mut xe = x0;
        let mut xl = x0 + delta;
        let mut touch_step: Option<usize> = None;
        for k in 0..=20_000usize {
            if xl - xe <= touch_dist {
                touch_step = Some(k);
                break;
            }
            xe += v_ego * substep;
            xl += v_leader * substep;
        }

        if ttc.is_finite() {
            if ttc.seconds() > 1800.0 {
                skipped += 1;
                continue;
            }
            let k = touch_step
                .unwrap_or_else(|| panic!("case {case}: ttc {} but never touched", ttc.seconds()));
            let diff = (ttc.seconds() - k as f64 * substep).abs();
            assert!(
                diff <= substep + 1e-9,
                "case {case}: ttc {} vs first-touch step {k} ({}s)",
                ttc.seconds(),
                k as f64 * substep
            );
        } else {
            assert_eq!(
                touch_step, None,
                "case {case}: reported no collision but the rectangles touch"
            );
        }
    }
    assert!(skipped < 50, "too many near-zero-closing cases skipped: {skipped}");
    finish(
        "time to collision",
        "500 two-vehicle cases agree with first-touch integration within one substep",
        10.0,
        started,
    );
}

#[tokio::test]
async fn episode_loop_structure_and_determinism() {
    let started = Instant::now();
    let chat = good_driver_backend();
    let embedder = HashEmbedder::new(256);
    let runner = EpisodeRunner::new(&chat, &embedder);
    let mut cfg = EpisodeConfig::new(ScenarioConfig::ramp_merge(8));
    cfg.memory_mode = MemoryMode::Shared;

    // Two cold runs must be byte-identical.
    let mut bank_a = MemoryBank::open(MemoryMode::Shared, None, &embedder).unwrap();
    let log_a = runner.run_episode(&cfg, "conformance", &mut bank_a, false).await.unwrap();
    let mut bank_b = MemoryBank::open(MemoryMode::Shared, None, &embedder).unwrap();
    let log_b = runner.run_episode(&cfg, "conformance", &mut bank_b, false).await.unwrap();
    assert_eq!(log_a.to_jsonl(), log_b.to_jsonl(), "logs differ across identical runs");

    // Loop structure: per frame, one scene/decision per agent in id order,
    // then exactly one step; reflection never appears without reflect.
    let agents = log_a.header.agent_ids.clone();
    assert_eq!(agents.len(), 2);
    for (i, step) in log_a.steps.iter().enumerate() {
        assert_eq!(step.frame, i as u32, "steps must be consecutive frames");
        let frame_decisions: Vec<_> =
            log_a.decisions.iter().filter(|d| d.frame == step.frame).collect();
        let ids: Vec<VehicleId> = frame_decisions.iter().map(|d| d.agent_id).collect();
        assert_eq!(ids, agents, "frame {i}: one decision per agent, ascending ids");
        for d in &frame_decisions {
            assert!(!d.scene_text.is_empty());
            assert!(d.retrieved.len() <= cfg.retrieval_k);
        }
    }
    assert_eq!(
        log_a.decisions.len(),
        log_a.steps.len() * agents.len(),
        "every frame carries exactly one decision per agent"
    );
    assert!(log_a.reflection.is_none(), "no reflection entry without reflect");
    assert_eq!(bank_a.total_len(), 0, "memory must not change without reflect");
    assert_eq!(
        bank_a.retrieval_calls(),
        log_a.decisions.len(),
        "exactly one retrieval per decision"
    );

    // With reflect on, memory is updated exactly once, at episode end.
    let mut bank_r = MemoryBank::open(MemoryMode::Shared, None, &embedder).unwrap();
    let log_r = runner.run_episode(&cfg, "conformance", &mut bank_r, true).await.unwrap();
    assert!(log_r.reflection.is_some(), "reflect run must log the reflection pass");
    let learned = bank_r.total_len();
    assert!(learned > 0, "successful run should retain experiences");

    // A second episode over that memory retrieves k records per decision.
    let mut cfg2 = cfg.clone();
    cfg2.scenario.seed = 9;
    let log2 = runner.run_episode(&cfg2, "conformance-2", &mut bank_r, false).await.unwrap();
    let expect_k = cfg.retrieval_k.min(learned);
    for d in &log2.decisions {
        assert_eq!(
            d.retrieved.len(),
            expect_k,
            "frame {} agent {}: retrieval size",
            d.frame,
            d.agent_id
        );
    }
    finish(
        "episode loop",
        "decide-all-then-step order, single end reflection, byte-identical logs",
        5.0,
        started,
    );
}

#[test]
fn flagging_matches_linear_scan_oracle() {
    let started = Instant::now();
    let thresholds = ReflectionThresholds::default();
    assert_eq!(thresholds.extreme_low, 2.5);
    assert_eq!(thresholds.sudden_drop, 5.0);

    // Rank matches the declaration order of the reason enum.
    fn rank(reason: FlagReason) -> u8 {
        match reason {
            FlagReason::CollisionTerminal => 0,
            FlagReason::ExtremeLow => 1,
            FlagReason::SuddenDrop => 2,
        }
    }
    fn oracle(scores: &[f64], collided: bool) -> Vec<(usize, u8)> {
        let mut out: BTreeSet<(usize, u8)> = BTreeSet::new();
        for (i, &c) in scores.iter().enumerate() {
            if c < 2.5 {
                out.insert((i, rank(FlagReason::ExtremeLow)));
            }
        }
        for i in 1..scores.len() {
            if scores[i - 1] - scores[i] >= 5.0 {
                out.insert((i, rank(FlagReason::SuddenDrop)));
            }
        }
        if collided && !scores.is_empty() {
            let last = scores.len() - 1;
            out.insert((last, rank(FlagReason::CollisionTerminal)));
            if last >= 1 {
                // Start of the final non-increasing run: one past the last rise.
                let mut run_start = 0usize;
                for j in 1..=last {
                    if scores[j] > scores[j - 1] {
                        run_start = j;
                    }
                }
                out.insert((run_start.max(1), rank(FlagReason::CollisionTerminal)));
            }
        }
        out.into_iter().collect()
    }

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for case in 0..1000 {
        let len = rng.random_range(0..=40);
        let scores: Vec<ScorePair> = (0..len)
            .map(|_| ScorePair::new(rng.random_range(0.0..=10.0), rng.random_range(0.0..=10.0)))
            .collect();
        let collided = rng.random_bool(0.4);
        let combined: Vec<f64> = scores.iter().map(|s| s.combined).collect();

        let got: Vec<(usize, u8)> = flag_decisions(VehicleId(3), &scores, collided, &thresholds)
            .iter()
            .map(|f| {
                assert_eq!(f.agent_id, VehicleId(3));
                (f.frame, rank(f.reason))
            })
            .collect();
        assert_eq!(got, oracle(&combined, collided), "case {case}: scores {combined:?}");
    }
    finish(
        "decision flagging",
        "1000 random score lists match the independent linear scan",
        5.0,
        started,
    );
}

#[tokio::test]
async fn retention_policy_keeps_good_and_corrected_records() {
    let started = Instant::now();
    let thresholds = ReflectionThresholds::default();
    let embedder = HashEmbedder::new(64);
    let mut store = MemoryStore::for_embedder(&embedder);

    let decision = |frame: u32, safety: f64, efficiency: f64, scene: &str| DecisionRecord {
        agent_id: VehicleId(0),
        frame,
        scene_text: scene.to_string(),
        planning_process: "goal: pass | plan: hold".to_string(),
        decision: FinalDecision {
            action: MetaAction::Idle,
            justification: "steady".to_string(),
        },
        score: ScorePair::new(safety, efficiency),
    };
    let decisions = vec![
        decision(0, 9.0, 9.5, "clean cruise well above retention"),
        decision(1, 5.0, 5.0, "mediocre unflagged frame"),
        decision(2, 1.0, 1.0, "flagged frame that was corrected"),
        decision(3, 1.0, 2.0, "flagged frame left uncorrected"),
    ];
    let flags = vec![
        ReflectionFlag { frame: 2, reason: FlagReason::ExtremeLow, agent_id: VehicleId(0) },
        ReflectionFlag { frame: 3, reason: FlagReason::ExtremeLow, agent_id: VehicleId(0) },
    ];
    let corrections = vec![CorrectedDecision {
        agent_id: VehicleId(0),
        frame: 2,
        corrected_action: MetaAction::Decelerate,
        corrected_reasoning: "slow down before the gap closes".to_string(),
    }];

    let report = update_memory(
        &mut store,
        "retention-check",
        &decisions,
        &flags,
        &corrections,
        &thresholds,
        &embedder,
    )
    .await
    .unwrap();

    assert_eq!(report.retained_unflagged, 1, "only the >= 8.0 unflagged frame stays");
    assert_eq!(report.retained_corrected, 1, "corrected frames always stay");
    assert_eq!(report.discarded, 2, "sub-threshold and uncorrected-flagged are dropped");
    assert_eq!(store.len(), 2);

    let records: Vec<&ExperienceRecord> = store.records().collect();
    let kept_high = records
        .iter()
        .find(|r| r.scenario_description.contains("clean cruise"))
        .expect("high scorer retained");
    assert!(!kept_high.corrected);
    let kept_corrected = records
        .iter()
        .find(|r| r.scenario_description.contains("was corrected"))
        .expect("corrected frame retained");
    assert!(kept_corrected.corrected);
    assert_eq!(kept_corrected.final_decision.action, MetaAction::Decelerate);
    assert!(records.iter().all(|r| !r.scenario_description.contains("mediocre")));
    assert!(records.iter().all(|r| !r.scenario_description.contains("uncorrected")));
    finish(
        "retention policy",
        "high unflagged kept, low unflagged dropped, corrected kept",
        5.0,
        started,
    );
}

#[test]
fn scenario_builds_conform() {
    let started = Instant::now();
    for seed in 0..100u64 {
        let world = build_world(&ScenarioConfig::ramp_merge(seed), 30.0).unwrap();
        assert_eq!(world.vehicles.len(), 7, "seed {seed}");
        assert_eq!(world.agent_ids(), vec![VehicleId(0), VehicleId(1)], "seed {seed}");
        let ramp = world.road.segment(&"ramp".into()).unwrap();
        assert_eq!(ramp.length, 120.0);
        assert_eq!(ramp.lane_count, 1);
        assert_eq!(world.road.segment(&"main".into()).unwrap().lane_count, 2);
        let mut by_lane: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for v in world.vehicles.values() {
            assert!(
                (20.0..=25.0).contains(&v.v),
                "seed {seed}: {} speed {}",
                v.id,
                v.v
            );
            assert_eq!(v.target_speed, v.v, "seed {seed}");
            if v.segment.as_str() == "main" {
                by_lane.entry(v.lane_index).or_default().push(v.s);
            }
        }
        let v1 = world.vehicle(VehicleId(1)).unwrap();
        assert_eq!(v1.segment.as_str(), "ramp", "seed {seed}");
        assert_eq!(v1.route.last().unwrap().as_str(), "main", "seed {seed}");
        for (lane, mut xs) in by_lane {
            xs.sort_by(f64::total_cmp);
            for pair in xs.windows(2) {
                let gap = pair[1] - pair[0];
                assert!(
                    (30.0..=50.0).contains(&gap),
                    "seed {seed} lane {lane}: gap {gap} outside spacing 40 +/- 10"
                );
            }
        }
        assert!(detect_collisions(&world).is_empty(), "seed {seed}: overlapping spawn");
    }

    for seed in 0..100u64 {
        let world = build_world(&ScenarioConfig::roundabout(seed), 30.0).unwrap();
        assert_eq!(world.vehicles.len(), 6, "seed {seed}");
        assert_eq!(world.agent_ids(), vec![VehicleId(0)], "seed {seed}");
        let agent = world.vehicle(VehicleId(0)).unwrap();
        assert_eq!(agent.segment.as_str(), "entry_south", "seed {seed}");
        let route: Vec<&str> = agent.route.iter().map(|s| s.as_str()).collect();
        assert_eq!(route, ["entry_south", "ring", "exit_east"], "seed {seed}");
        let followers = world
            .vehicles
            .values()
            .filter(|v| v.kind == VehicleKind::IdmBackground)
            .count();
        assert_eq!(followers, 5, "seed {seed}");
        let west_platoon = world
            .vehicles
            .values()
            .filter(|v| v.segment.as_str() == "entry_west")
            .count();
        assert_eq!(west_platoon, 4, "seed {seed}: western platoon");
        for v in world.vehicles.values() {
            assert!((20.0..=25.0).contains(&v.v), "seed {seed}: {} speed {}", v.id, v.v);
        }
        let ring = world.road.segment(&"ring".into()).unwrap();
        assert!(ring.cyclic);
        assert_eq!(ring.lane_count, 2);
        assert!(detect_collisions(&world).is_empty(), "seed {seed}: overlapping spawn");
    }
    finish(
        "scenario conformance",
        "100 ramp and 100 roundabout builds satisfy every layout constraint",
        5.0,
        started,
    );
}

#[tokio::test]
async fn shared_memory_crosses_agents_and_per_agent_stays_disjoint() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let chat = good_driver_backend();
    let embedder = HashEmbedder::new(256);
    let runner = EpisodeRunner::new(&chat, &embedder);

    // Shared mode: train three episodes into one store.
    let shared_path = dir.path().join("shared.jsonl");
    let mut cfg = EpisodeConfig::new(ScenarioConfig::ramp_merge(0));
    cfg.memory_mode = MemoryMode::Shared;
    cfg.memory_path = Some(shared_path.clone());
    let mut bank =
        MemoryBank::open(MemoryMode::Shared, Some(shared_path.as_path()), &embedder).unwrap();
    let summary = runner.train(&cfg, 3, 8, &mut bank, None).await.unwrap();
    assert_eq!(summary.rows.len(), 3);

    let store = MemoryStore::load(&shared_path, Some(embedder.id().as_str())).unwrap();
    let writers: BTreeSet<VehicleId> = store.records().map(|r| r.agent_id).collect();
    assert!(
        writers.contains(&VehicleId(0)) && writers.contains(&VehicleId(1)),
        "both agents should have written to the shared store, got {writers:?}"
    );

    // Test time: agent v1's queries must surface at least one record agent
    // v0 wrote during training.
    let record_owner: BTreeMap<u64, VehicleId> =
        store.records().map(|r| (r.record_id.0, r.agent_id)).collect();
    let mut test_cfg = cfg.clone();
    test_cfg.scenario.seed = 777;
    let mut test_bank =
        MemoryBank::open(MemoryMode::Shared, Some(shared_path.as_path()), &embedder).unwrap();
    let log = runner.run_episode(&test_cfg, "cross-check", &mut test_bank, false).await.unwrap();
    let sources: BTreeSet<VehicleId> = log
        .decisions
        .iter()
        .filter(|d| d.agent_id == VehicleId(1))
        .flat_map(|d| d.retrieved.iter())
        .map(|r| record_owner[&r.record_id.0])
        .collect();
    assert!(
        sources.contains(&VehicleId(0)),
        "agent v1 never retrieved a v0 experience; sources {sources:?}"
    );
    assert_eq!(test_bank.total_len(), store.len(), "test runs must not grow memory");

    // Per-agent mode: one store file per agent, each holding only its own
    // records.
    let per_base = dir.path().join("per.jsonl");
    let mut per_cfg = cfg.clone();
    per_cfg.memory_mode = MemoryMode::PerAgent;
    per_cfg.memory_path = Some(per_base.clone());
    let mut per_bank =
        MemoryBank::open(MemoryMode::PerAgent, Some(per_base.as_path()), &embedder).unwrap();
    runner.train(&per_cfg, 3, 8, &mut per_bank, None).await.unwrap();

    let path_a = drivemind_core::harness::agent_store_path(&per_base, VehicleId(0));
    let path_b = drivemind_core::harness::agent_store_path(&per_base, VehicleId(1));
    assert!(path_a.exists() && path_b.exists(), "expected one store file per agent");
    assert!(!per_base.exists(), "per-agent mode must not write the shared file");
    let store_a = MemoryStore::load(&path_a, Some(embedder.id().as_str())).unwrap();
    let store_b = MemoryStore::load(&path_b, Some(embedder.id().as_str())).unwrap();
    assert!(!store_a.is_empty() && !store_b.is_empty());
    assert!(store_a.records().all(|r| r.agent_id == VehicleId(0)));
    assert!(store_b.records().all(|r| r.agent_id == VehicleId(1)));
    let scenes_a: BTreeSet<&str> =
        store_a.records().map(|r| r.scenario_description.as_str()).collect();
    let scenes_b: BTreeSet<&str> =
        store_b.records().map(|r| r.scenario_description.as_str()).collect();
    assert!(scenes_a.is_disjoint(&scenes_b), "agent stores share scene records");

    finish(
        "memory modes",
        "shared store crosses agents at test time; per-agent stores stay disjoint",
        10.0,
        started,
    );
}

#[tokio::test]
async fn good_driver_ramp_run_succeeds_with_high_scores() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let chat = good_driver_backend();
    let embedder = HashEmbedder::new(256);
    let runner = EpisodeRunner::new(&chat, &embedder);

    let mut cfg = EpisodeConfig::new(ScenarioConfig::ramp_merge(0));
    cfg.memory_path = Some(dir.path().join("mem.jsonl"));
    let mut bank =
        MemoryBank::open(MemoryMode::Shared, cfg.memory_path.as_deref(), &embedder).unwrap();
    let summary = runner.train(&cfg, 3, 8, &mut bank, None).await.unwrap();

    assert!(
        summary.successes >= 1,
        "expected at least one success, got {summary:?}"
    );
    assert!(
        summary.mean_combined >= 8.0,
        "mean combined over successes {} below 8.0",
        summary.mean_combined
    );
    finish(
        "good-driver run",
        &format!(
            "{} of {} episodes succeed, mean combined {:.2} >= 8.0",
            summary.successes,
            summary.rows.len(),
            summary.mean_combined
        ),
        5.0,
        started,
    );
}
