use rand::Rng;

use crate::dynamics::safety_distance;
use crate::error::{Error, Result};
use crate::geometry::{Geometry, Shape};
use crate::model::{pick, stream_rng, RoutingMatrix, Stream};
use crate::params::Params;
use crate::scenario::InitialCondition;

/// A vehicle present at time zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Placed {
    pub p: f64,
    pub v: f64,
    pub safety: bool,
    pub dest: usize,
    pub slot: Option<usize>,
}

/// Ramp whose merge point was passed last before `x`.
fn upstream_ramp(g: &Geometry, x: f64) -> usize {
    g.link_of(x)
}

/// Distance from `x` to the exit of a vehicle heading for off-ramp `dest`.
/// On a straight road a vehicle past its off-ramp leaves at the end.
pub fn distance_to_exit(g: &Geometry, x: f64, dest: usize) -> f64 {
    let d = g.forward(x, g.ramps[dest].offramp_pos);
    match g.shape {
        Shape::Ring => d,
        Shape::Straight if d > 0.0 => d,
        Shape::Straight => g.length - x,
    }
}

/// Builds the vehicles of `init`, drawing everything random from the
/// initial-condition stream of `seed`.
pub fn place(init: &InitialCondition, g: &Geometry, r: &RoutingMatrix, p: &Params, seed: u64) -> Result<Vec<Placed>> {
    let mut rng = stream_rng(seed, Stream::Initial);
    let len = g.length;
    let mut out: Vec<Placed> = match *init {
        InitialCondition::Empty => Vec::new(),
        InitialCondition::FreeFlowSlots { n } => {
            let n_c = g.slots.n_c;
            if n > n_c {
                return Err(Error::Scenario(format!("{n} vehicles do not fit in {n_c} slots")));
            }
            (0..n)
                .map(|i| {
                    let k = i * n_c / n;
                    Placed { p: g.slots.position(k, 0), v: p.v_free, safety: false, dest: 0, slot: Some(k) }
                })
                .collect()
        }
        InitialCondition::Congested { n, v0, gap } => {
            if !(gap >= 0.0) || !(0.0..=p.v_free * 1.05).contains(&v0) {
                return Err(Error::Scenario("congested start needs gap >= 0 and 0 <= v0 <= 1.05 Vf".into()));
            }
            if n as f64 * (gap + p.length) > len + 1e-9 {
                return Err(Error::Scenario(format!("{n} vehicles with gap {gap} m exceed the road")));
            }
            let x0 = g.slots.phase;
            (0..n)
                .map(|k| Placed {
                    p: g.wrap(x0 - k as f64 * (gap + p.length)),
                    v: v0,
                    safety: true,
                    dest: 0,
                    slot: None,
                })
                .collect()
        }
        InitialCondition::RandomCongested { n_min, n_max, v_min, v_max } => {
            if n_min > n_max || !(0.0..=v_max).contains(&v_min) || v_max > p.v_free {
                return Err(Error::Scenario("random congested start has an empty range".into()));
            }
            let mut n = rng.gen_range(n_min..=n_max);
            let speeds: Vec<f64> = (0..n).map(|_| rng.gen_range(v_min..=v_max)).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            // Vehicle k follows vehicle k - 1; vehicle 0 follows the last one.
            let need = |n: usize| -> Vec<f64> {
                (0..n)
                    .map(|k| {
                        let lead = speeds[(k + n - 1) % n];
                        safety_distance(speeds[k], lead, p).max(p.s0)
                    })
                    .collect()
            };
            let mut gaps = need(n);
            while n > 0 && gaps.iter().sum::<f64>() + n as f64 * p.length > len {
                n -= 1;
                gaps = need(n);
            }
            let slack = len - gaps.iter().sum::<f64>() - n as f64 * p.length;
            let wsum: f64 = weights[..n].iter().sum::<f64>().max(1e-12);
            let mut x = g.slots.phase;
            let mut out = Vec::with_capacity(n);
            for k in 0..n {
                if k > 0 {
                    x -= gaps[k] + slack * weights[k] / wsum + p.length;
                }
                out.push(Placed { p: g.wrap(x), v: speeds[k], safety: true, dest: 0, slot: None });
            }
            out
        }
    };
    for v in &mut out {
        let row = &r.0[upstream_ramp(g, v.p)];
        v.dest = pick(row, rng.gen());
    }
    Ok(out)
}
