//! Routing algebra, demand, and seeded arrival sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Shape;

/// `R[i][j]`: probability that an arrival at on-ramp `i` leaves at off-ramp `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoutingMatrix(pub Vec<Vec<f64>>);

impl RoutingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = RoutingMatrix(rows);
        r.validate()?;
        Ok(r)
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.0.len();
        if m == 0 {
            return Err(Error::Routing("empty matrix".into()));
        }
        for (i, row) in self.0.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Routing(format!("row {i} has {} entries, expected {m}", row.len())));
            }
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::Routing(format!("row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Routing(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Straight roads cannot route a vehicle upstream.
    pub fn is_upper_triangular(&self) -> bool {
        self.0.iter().enumerate().all(|(i, row)| row[..i].iter().all(|&x| x == 0.0))
    }

    /// Three-ramp reference matrix.
    pub fn example() -> Self {
        RoutingMatrix(vec![vec![0.2, 0.7, 0.1], vec![0.0, 0.8, 0.2], vec![0.5, 0.0, 0.5]])
    }
}

/// `Rt[i][j]`: fraction of on-ramp `i` arrivals that traverse link `j`,
/// where link `j` runs from on-ramp `j` to on-ramp `j+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CumulativeRouting(pub Vec<Vec<f64>>);

impl CumulativeRouting {
    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }
}

/// Walks the road from each on-ramp and keeps the destination mass that has
/// not exited yet. On a straight road nothing wraps around.
pub fn cumulative_routing(r: &RoutingMatrix, shape: Shape) -> Result<CumulativeRouting> {
    r.validate()?;
    let m = r.size();
    let mut rt = vec![vec![0.0; m]; m];
    for i in 0..m {
        rt[i][i] = 1.0;
        let mut surviving = 1.0;
        let hops = match shape {
            Shape::Ring => m,
            Shape::Straight => m - i,
        };
        for step in 1..hops {
            surviving -= r.0[i][(i + step - 1) % m];
            rt[i][(i + step) % m] = surviving.clamp(0.0, 1.0);
        }
    }
    Ok(CumulativeRouting(rt))
}

/// Link loads `rho[j] = sum_i lambda[i] * Rt[i][j]` and their maximum.
pub fn link_loads(lambda: &[f64], rt: &CumulativeRouting) -> (Vec<f64>, f64) {
    let m = rt.size();
    let rho: Vec<f64> = (0..m).map(|j| (0..m).map(|i| lambda[i] * rt.get(i, j)).sum()).collect();
    let max = rho.iter().cloned().fold(0.0, f64::max);
    (rho, max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    /// Bernoulli arrival probability per step for each on-ramp.
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    pub horizon: u64,
}

impl DemandSpec {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.lambda.len() != m {
            return Err(Error::Scenario(format!("{} arrival rates for {m} ramps", self.lambda.len())));
        }
        if self.lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(Error::Scenario("arrival rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Named random streams. Each purpose gets its own ChaCha stream so that
/// changing how one is consumed never perturbs the others.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    Destinations = 2,
    Connectivity = 3,
    Initial = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Counter-addressed arrival sampler: the draws for step `t` depend only on
/// the seed and `t`, so any step can be regenerated in isolation.
#[derive(Clone, Debug)]
pub struct ArrivalSampler {
    arrivals: ChaCha8Rng,
    destinations: ChaCha8Rng,
}

impl ArrivalSampler {
    pub fn new(seed: u64) -> Self {
        ArrivalSampler {
            arrivals: stream_rng(seed, Stream::Arrivals),
            destinations: stream_rng(seed, Stream::Destinations),
        }
    }

    /// Arrivals at step `t` as `(on-ramp, destination)` pairs, ramps in order.
    pub fn sample(&mut self, lambda: &[f64], r: &RoutingMatrix, t: u64) -> Vec<(usize, usize)> {
        let m = lambda.len() as u128;
        // Each f64 draw consumes two 32-bit words.
        let pos = t as u128 * m * 2;
        self.arrivals.set_word_pos(pos);
        self.destinations.set_word_pos(pos);
        let mut out = Vec::new();
        for (i, &l) in lambda.iter().enumerate() {
            let u: f64 = self.arrivals.gen();
            let d: f64 = self.destinations.gen();
            if u < l {
                out.push((i, pick(&r.0[i], d)));
            }
        }
        out
    }
}

/// Index drawn from a probability row with the uniform variate `u`.
pub fn pick(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding can leave `acc` a hair below one; fall back to the last
    // destination that has mass.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

pub fn sample_arrivals(
    demand: &DemandSpec,
    r: &RoutingMatrix,
    t: u64,
    sampler: &mut ArrivalSampler,
) -> Vec<(usize, usize)> {
    sampler.sample(&demand.lambda, r, t)
}
