use proptest::prelude::*;

use rampsim_core::analysis::{
    batch_means, inner_region_fixed_cycle, inner_region_renewal, outer_region, ThroughputRegion,
};
use rampsim_core::{cumulative_routing, link_loads, RoutingMatrix, Shape};

fn example_rt() -> rampsim_core::CumulativeRouting {
    cumulative_routing(&RoutingMatrix::example(), Shape::Ring).unwrap()
}

fn rates() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..0.8f64, 3)
}

fn multiples() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(2..=5u32, 3)
}

/// Row-stochastic 3x3 matrix from positive weights.
fn routing() -> impl Strategy<Value = RoutingMatrix> {
    prop::collection::vec(prop::collection::vec(0.01..1.0f64, 3), 3).prop_map(|rows| {
        let rows = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect();
        RoutingMatrix::new(rows).unwrap()
    })
}

fn load_limit(reg: &ThroughputRegion, lambda: &[f64]) -> f64 {
    reg.constraints.iter().map(|c| c.a.iter().zip(lambda).map(|(a, l)| a * l).sum::<f64>() / c.b).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn regions_are_nested(lambda in rates(), k in multiples()) {
        let rt = example_rt();
        let fixed = inner_region_fixed_cycle(&rt, &k).unwrap();
        let renewal = inner_region_renewal(&rt, &k).unwrap();
        let outer = outer_region(&rt);
        if fixed.contains(&lambda) {
            prop_assert!(renewal.contains(&lambda));
        }
        if renewal.contains(&lambda) {
            prop_assert!(outer.contains(&lambda));
        }
    }

    #[test]
    fn outer_region_is_max_load_below_one(lambda in rates(), r in routing()) {
        let rt = cumulative_routing(&r, Shape::Ring).unwrap();
        let (_, max) = link_loads(&lambda, &rt);
        let outer = outer_region(&rt);
        prop_assert_eq!(outer.contains(&lambda), max < 1.0);
        prop_assert!((load_limit(&outer, &lambda) - max).abs() < 1e-12);
    }

    #[test]
    fn scale_limit_lands_on_boundary(dir in prop::collection::vec(0.01..1.0f64, 3), k in multiples()) {
        let reg = inner_region_renewal(&example_rt(), &k).unwrap();
        let t = reg.scale_limit(&dir);
        let at = |s: f64| dir.iter().map(|d| d * s).collect::<Vec<_>>();
        prop_assert!(reg.contains(&at(t * (1.0 - 1e-9))));
        prop_assert!(!reg.contains(&at(t * (1.0 + 1e-9))));
    }

    #[test]
    fn loads_are_linear(lambda in rates(), c in 0.0..3.0f64) {
        let rt = example_rt();
        let (a, _) = link_loads(&lambda, &rt);
        let scaled: Vec<f64> = lambda.iter().map(|l| c * l).collect();
        let (b, _) = link_loads(&scaled, &rt);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((c * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_routing_rows_start_at_one(r in routing()) {
        let rt = cumulative_routing(&r, Shape::Ring).unwrap();
        for i in 0..3 {
            prop_assert_eq!(rt.get(i, i), 1.0);
            for j in 0..3 {
                prop_assert!((0.0..=1.0).contains(&rt.get(i, j)));
            }
        }
    }

    #[test]
    fn batch_means_shift_and_scale(
        xs in prop::collection::vec(-10.0..10.0f64, 200..400),
        shift in -50.0..50.0f64,
        scale in 0.1..10.0f64,
    ) {
        let a = batch_means(&xs, 20, 30, 0.95).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        let b = batch_means(&ys, 20, 30, 0.95).unwrap();
        prop_assert!((b.mean - (scale * a.mean + shift)).abs() < 1e-9);
        prop_assert!((b.half_width - scale * a.half_width).abs() < 1e-9);
        prop_assert_eq!(a.batches, b.batches);
    }
}

#[test]
fn straight_road_never_wraps() {
    let r = RoutingMatrix::new(vec![vec![0.2, 0.3, 0.5], vec![0.0, 0.4, 0.6], vec![0.0, 0.0, 1.0]]).unwrap();
    let rt = cumulative_routing(&r, Shape::Straight).unwrap();
    for i in 0..3 {
        for j in 0..i {
            assert_eq!(rt.get(i, j), 0.0);
        }
    }
    // Ramp 1 traffic: all of it on link 1, 80% still on link 2, 50% on link 3.
    assert_eq!(rt.0[0], vec![1.0, 0.8, 0.5]);
}
