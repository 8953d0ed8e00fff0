//! Whole-run checks on both engines.

use rampsim_core::analysis::queue_time_average;
use rampsim_core::scenario::presets;
use rampsim_core::{run, EngineKind, GeometrySpec, InitialCondition, PolicyKind, RoutingMatrix, Scenario, Shape};

fn ring(kind: PolicyKind, engine: EngineKind, lambda: f64, horizon: u64) -> Scenario {
    let mut s = presets::base("t", kind, false, lambda, horizon);
    s.engine = engine;
    s
}

#[test]
fn slot_and_micro_agree_on_light_traffic() {
    for kind in [PolicyKind::Greedy, PolicyKind::Renewal, PolicyKind::Fcq] {
        let slot = run(&ring(kind, EngineKind::Slot, 0.3, 4_000)).unwrap();
        let micro = run(&ring(kind, EngineKind::Micro, 0.3, 4_000)).unwrap();
        assert_eq!(slot.arrivals, micro.arrivals, "{kind:?}: arrivals share one stream");
        let (a, b) = (slot.releases.len() as f64, micro.releases.len() as f64);
        assert!((a - b).abs() <= 0.02 * a, "{kind:?}: releases {a} vs {b}");
        let (qa, qb) = (queue_time_average(&slot), queue_time_average(&micro));
        assert!((qa - qb).abs() <= 0.25 + 0.2 * qa, "{kind:?}: queues {qa} vs {qb}");
        assert_eq!(micro.safety.collisions, 0);
        assert_eq!(micro.safety.spacing_violations, 0);
    }
}

#[test]
fn random_congested_start_is_collision_free() {
    let mut s = presets::get("random_congested").unwrap();
    s.demand.horizon = 5_000;
    for seed in 1..=3 {
        s.demand.seed = seed;
        let t = run(&s).unwrap();
        assert_eq!(t.safety.collisions, 0, "seed {seed}");
        assert!(t.initial_vehicles >= 20);
    }
}

#[test]
fn renewal_cycles_respect_quotas() {
    let t = run(&ring(PolicyKind::Renewal, EngineKind::Micro, 0.45, 5_000)).unwrap();
    assert!(t.cycles.len() > 10);
    assert!(t.quotas_respected());
}

#[test]
fn empty_road_drains() {
    let mut s = ring(PolicyKind::Greedy, EngineKind::Micro, 0.0, 300);
    s.initial = InitialCondition::FreeFlowSlots { n: 30 };
    let t = run(&s).unwrap();
    assert_eq!(t.arrivals, 0);
    assert_eq!(t.exited, 30);
    assert!(t.total_queue().iter().all(|&q| q == 0.0));
}

#[test]
fn straight_road_runs() {
    let mut s = ring(PolicyKind::Greedy, EngineKind::Micro, 0.3, 3_000);
    s.geometry = GeometrySpec {
        shape: Shape::Straight,
        length: 1860.0,
        m: 3,
        onramp_pos: vec![155.0, 775.0, 1395.0],
        offramp_pos: vec![465.0, 1085.0, 1705.0],
        merge_point: None,
        ramp_run: None,
        merge_speed: Some(vec![15.0; 3]),
    };
    s.routing.r = RoutingMatrix::new(vec![vec![0.2, 0.3, 0.5], vec![0.0, 0.4, 0.6], vec![0.0, 0.0, 1.0]]).unwrap();
    s.validate().unwrap();
    for engine in [EngineKind::Micro, EngineKind::Slot] {
        s.engine = engine;
        let t = run(&s).unwrap();
        assert_eq!(t.safety.collisions, 0, "{engine:?}");
        assert!(t.exited > 0 && t.exited <= t.arrivals, "{engine:?}");
        assert!(queue_time_average(&t) < 5.0, "{engine:?}");
    }
}

#[test]
fn seeds_change_the_run() {
    let mut s = ring(PolicyKind::Drr, EngineKind::Slot, 0.4, 2_000);
    let a = run(&s).unwrap().checksum().unwrap();
    s.demand.seed = 2;
    assert_ne!(a, run(&s).unwrap().checksum().unwrap());
}
