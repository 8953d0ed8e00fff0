//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The long simulations (probes, comparison) dominate the runtime; expect a
//! few minutes on one core.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rampsim_core::analysis::region::examples;
use rampsim_core::analysis::{
    batch_means, cycle_chain, empirical_drift, queue_chain, saturation_probe, BatchProtocol, ProbeConfig,
    ThroughputRegion, Verdict,
};
use rampsim_core::dynamics::{
    assign_virtual_leader, merge_headway_multiple, predict_crossing_time, safety_distance, VehicleState,
};
use rampsim_core::experiments::{compare, cycle_sweep, CompareConfig};
use rampsim_core::scenario::presets;
use rampsim_core::{run, EngineKind, InitialCondition, Params, PolicyKind, Trace};

/// Region coefficients must match to this absolute tolerance.
const REGION_TOL: f64 = 1e-12;
const CROSSING_TOL: f64 = 0.01;
const PROBE_WIDTH: f64 = 0.05;
const COVERAGE_MIN: usize = 90;
const MIN_EPOCHS: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// True when `reg` is exactly the set `{a . x < b}` listed in `want`, up to
/// row order. Rows are compared after scaling so that `b = 1`.
fn same_rows(reg: &ThroughputRegion, want: &[([f64; 2], f64)]) -> bool {
    if reg.constraints.len() != want.len() {
        return false;
    }
    let norm = |a: &[f64], b: f64| [a[0] / b, a[1] / b];
    let got: Vec<[f64; 2]> = reg.constraints.iter().map(|c| norm(&c.a, c.b)).collect();
    want.iter().all(|(a, b)| {
        let w = norm(a, *b);
        got.iter().any(|g| (g[0] - w[0]).abs() <= REGION_TOL && (g[1] - w[1]).abs() <= REGION_TOL)
    })
}

fn region_algebra() -> Outcome {
    let cases: [(&str, Vec<([f64; 2], f64)>); 3] = [
        ("fixed_cycle_all_vf", vec![([1.0, 0.0], 0.75), ([0.8, 1.0], 1.0)]),
        ("renewal_slow_ramp2", vec![([1.6, 1.0], 1.0)]),
        ("fixed_cycle_slow_ramp2", vec![([1.6, 2.0], 1.0)]),
    ];
    let mut bad = Vec::new();
    for (name, want) in &cases {
        match examples::get(name).map(|c| c.region()) {
            Some(Ok(reg)) if same_rows(&reg, want) => {}
            _ => bad.push(*name),
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "3 regions exact".into() } else { format!("mismatch: {bad:?}") })
}

fn headway_multiples() -> Outcome {
    let p = Params::default();
    let (vf, slow) = (merge_headway_multiple(p.v_free, &p), merge_headway_multiple(5.0, &p));
    outcome(vf == 2 && slow == 3, format!("k(Vf)={vf}, k(5)={slow}"))
}

fn merge_replay() -> Outcome {
    let p = Params::default();
    let upstream = [5.0, 36.0, 70.0, 101.0, 132.0];
    let cars: Vec<VehicleState> =
        upstream.iter().enumerate().map(|(i, &d)| VehicleState::cruising(i as u64 + 1, -d, p.v_free, 0.0)).collect();
    let ego = &cars[2];
    let t = predict_crossing_time(ego, 0.0, 0.0);
    let m = assign_virtual_leader(ego, 0.0, &cars, 0.0, |_, _| true, &p);
    let leader = m.leader.map(|l| (l.id, l.gap));
    let s_e = safety_distance(p.v_free, p.v_free, &p);
    let pass = (t - 4.67).abs() <= CROSSING_TOL
        && leader.map_or(false, |(id, gap)| id == 2 && (gap - 29.5).abs() < 1e-9 && gap >= s_e)
        && (s_e - 26.5).abs() < 1e-12;
    outcome(pass, format!("t_m={t:.4}, leader={leader:?}, S_e={s_e}"))
}

fn probes() -> Outcome {
    let cfg = ProbeConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, target) in [("greedy_vf", 5.0 / 9.0), ("greedy_low", 0.44)] {
        match saturation_probe(&presets::get(name).unwrap(), &cfg) {
            Ok(r) => {
                pass &= r.contains(target) && r.width() <= PROBE_WIDTH;
                parts.push(format!("{name} [{:.4}, {:.4}] vs {target:.4}", r.lo, r.hi));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn sweep() -> Outcome {
    let mut s = presets::get("cycle_sweep_low").unwrap();
    s.demand.horizon = 200_000;
    let t_cycs = [1, 5, 9, 13, 17, 25];
    let rows = match cycle_sweep(&s, &t_cycs, &[1, 2, 3], BatchProtocol::DESK) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let at = |t: u64| rows.iter().find(|r| r.t_cyc == t).unwrap();
    let first_saturated = at(1).verdict == Verdict::Saturated;
    let some_stable = rows.iter().any(|r| r.t_cyc >= 9 && r.verdict == Verdict::Stable);
    let ordered = at(13).verdict == Verdict::Stable && at(13).plot_value() <= at(25).plot_value();
    let table: Vec<String> = rows
        .iter()
        .map(|r| match r.verdict {
            Verdict::Stable => format!("{}:{:.2}", r.t_cyc, r.plot_value()),
            Verdict::Saturated => format!("{}:sat", r.t_cyc),
        })
        .collect();
    outcome(first_saturated && some_stable && ordered, table.join(" "))
}

const COMPARED: [&str; 7] = [
    "compare_renewal",
    "compare_drr",
    "compare_dis_drr",
    "compare_dsg",
    "compare_greedy",
    "compare_safe_alinea",
    "compare_alinea",
];

fn comparison(rows: &[rampsim_core::experiments::CompareRow]) -> Outcome {
    let row = |k: PolicyKind| rows.iter().find(|r| r.policy == k).unwrap();
    let stable = [PolicyKind::Drr, PolicyKind::Renewal, PolicyKind::DisDrr, PolicyKind::Dsg]
        .iter()
        .all(|&k| row(k).verdict == Verdict::Stable);
    let drr = row(PolicyKind::Drr).ttt_min;
    let poor = [PolicyKind::SafeAlinea, PolicyKind::Greedy]
        .iter()
        .all(|&k| row(k).verdict == Verdict::Saturated || row(k).ttt_min >= 3.0 * drr);
    let ratio = drr / row(PolicyKind::SafeAlinea).ttt_min;
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!("{}={:.2}{}", r.policy.name(), r.ttt_min, if r.verdict == Verdict::Saturated { "*" } else { "" })
        })
        .collect();
    outcome(stable && poor && ratio <= 0.5, format!("TTT min ({}), drr/safe_alinea={ratio:.3}", table.join(" ")))
}

/// Releases in each fixed cycle never exceed the queue the policy saw at
/// its start, which is the queue recorded at the end of the previous step.
fn fixed_quotas_hold(t: &Trace, t_cyc: u64) -> bool {
    let empty = vec![0; t.m];
    let mut count = vec![0u32; t.m];
    let mut start = 0;
    let mut rel = t.releases.iter().peekable();
    while start < t.steps {
        count.iter_mut().for_each(|c| *c = 0);
        let end = start + t_cyc;
        while let Some(&&(step, ramp, _)) = rel.peek() {
            if step >= end {
                break;
            }
            count[ramp] += 1;
            rel.next();
        }
        let seen = if start == 0 { &empty[..] } else { t.queue(start - 1) };
        if count.iter().zip(seen).any(|(c, q)| c > q) {
            return false;
        }
        start = end;
    }
    true
}

fn drr_matches_fcq() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut same = 0;
    let total = 100;
    for _ in 0..total {
        let mut s = presets::base("eq", PolicyKind::Drr, rng.gen_bool(0.5), rng.gen_range(0.05..0.5), 400);
        s.engine = EngineKind::Slot;
        s.demand.seed = rng.gen();
        s.policy.t_cyc = rng.gen_range(1..=20);
        s.initial = InitialCondition::FreeFlowSlots { n: rng.gen_range(0..=40) };
        let mut f = s.clone();
        f.policy.kind = PolicyKind::Fcq;
        let (a, b) = (run(&s).unwrap(), run(&f).unwrap());
        if a.releases == b.releases && a.queues == b.queues {
            same += 1;
        }
    }
    (same, total)
}

fn safety(rows: &[rampsim_core::experiments::CompareRow]) -> Outcome {
    let mut collisions: u64 = rows.iter().map(|r| r.safety.collisions).sum();
    let mut violations = 0;
    let mut quota_ok = true;
    for kind in PolicyKind::ALL.into_iter().filter(|k| k.is_gated()) {
        let mut s = presets::base("free", kind, true, 0.455, 10_000);
        s.initial = InitialCondition::FreeFlowSlots { n: 30 };
        s.metrics.vehicles = false;
        let t = run(&s).unwrap();
        violations += t.safety.spacing_violations;
        collisions += t.safety.collisions;
        quota_ok &= match kind {
            PolicyKind::Renewal => !t.cycles.is_empty() && t.quotas_respected(),
            PolicyKind::SafeAlinea => true,
            _ => fixed_quotas_hold(&t, s.policy.t_cyc),
        };
    }
    let (same, total) = drr_matches_fcq();
    let pass = collisions == 0 && violations == 0 && quota_ok && same == total;
    outcome(
        pass,
        format!(
            "collisions={collisions}, free-flow violations={violations}, quotas {}, drr==fcq {same}/{total}",
            if quota_ok { "ok" } else { "broken" }
        ),
    )
}

fn estimator_and_determinism() -> Outcome {
    let (warmup, batch, batches, reps) = (1_000, 1_000, 50, 100);
    let normal = Normal::new(5.0, 1.0).unwrap();
    let mut covered = 0;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(rep);
        let x: Vec<f64> = (0..warmup + batch * batches).map(|_| normal.sample(&mut rng)).collect();
        if batch_means(&x, warmup, batch, 0.95).unwrap().covers(5.0) {
            covered += 1;
        }
    }
    let mut same = true;
    for engine in [EngineKind::Slot, EngineKind::Micro] {
        let mut s = presets::base("det", PolicyKind::Drr, true, 0.45, 3_000);
        s.engine = engine;
        s.demand.seed = 42;
        same &= run(&s).unwrap().checksum().unwrap() == run(&s).unwrap().checksum().unwrap();
    }
    outcome(
        covered >= COVERAGE_MIN && same,
        format!("coverage {covered}/{reps}, checksums {}", if same { "identical" } else { "differ" }),
    )
}

fn drift() -> Outcome {
    let mut s = presets::base("drift_renewal", PolicyKind::Renewal, true, 0.4, 100_000);
    s.engine = EngineKind::Slot;
    s.metrics.vehicles = false;
    let renewal = empirical_drift(&cycle_chain(&run(&s).unwrap()), |_| 0.0, 5, 10);
    let mut g = presets::get("greedy_vf").unwrap();
    g.demand.lambda = vec![0.6; 3];
    g.demand.horizon = 100_000;
    let greedy = empirical_drift(&queue_chain(&run(&g).unwrap(), 100), |_| 0.0, 5, 10);
    match (renewal, greedy) {
        (Ok(r), Ok(q)) => outcome(
            r.epochs >= MIN_EPOCHS && q.epochs >= MIN_EPOCHS && r.drift_outside_b < 0.0 && q.drift_outside_b > 0.0,
            format!(
                "renewal {:.3} over {} epochs, greedy {:+.3} over {} epochs",
                r.drift_outside_b, r.epochs, q.drift_outside_b, q.epochs
            ),
        ),
        (r, q) => outcome(false, format!("renewal {:?}, greedy {:?}", r.err(), q.err())),
    }
}

fn report(n: usize, name: &str, t0: Instant, o: &Outcome) {
    println!(
        "criterion {n}: {} {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t0.elapsed().as_secs_f64()
    );
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results = Vec::new();
    let mut check = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        report(results.len() + 1, name, t0, &o);
        results.push(o.pass);
    };
    check("region algebra", &mut region_algebra);
    check("merge headway multiples", &mut headway_multiples);
    check("merge prediction replay", &mut merge_replay);
    check("greedy saturation probes", &mut probes);
    check("cycle length sweep", &mut sweep);
    let compared: Vec<_> = COMPARED.iter().map(|n| presets::get(n).unwrap()).collect();
    let rows = compare(&compared, &CompareConfig::default()).unwrap();
    check("policy comparison", &mut || comparison(&rows));
    check("safety", &mut || safety(&rows));
    check("batch means and determinism", &mut estimator_and_determinism);
    check("empirical drift", &mut drift);
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} passed in {:.0}s", results.len(), start.elapsed().as_secs_f64());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
