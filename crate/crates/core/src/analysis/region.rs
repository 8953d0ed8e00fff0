//! Throughput regions as polytopes in arrival-rate space.

use std::io::Write;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CumulativeRouting;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    InnerRenewal,
    InnerFixedCycle,
    Outer,
}

impl RegionKind {
    pub fn name(self) -> &'static str {
        match self {
            RegionKind::InnerRenewal => "inner_renewal",
            RegionKind::InnerFixedCycle => "inner_fixed_cycle",
            RegionKind::Outer => "outer",
        }
    }
}

/// `a . lambda < b`, or `<=` for the outer region.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub a: Vec<f64>,
    pub b: f64,
    /// Link whose load the constraint bounds.
    pub link: usize,
}

impl Constraint {
    fn lhs(&self, lambda: &[f64]) -> f64 {
        self.a.iter().zip(lambda).map(|(a, l)| a * l).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputRegion {
    pub kind: RegionKind,
    pub constraints: Vec<Constraint>,
    /// Indices of the original rates that remain as coordinates.
    pub coords: Vec<usize>,
}

fn check_k(rt: &CumulativeRouting, k: &[u32]) -> Result<()> {
    if k.len() != rt.size() {
        return Err(Error::Param(format!("{} headway multiples for {} ramps", k.len(), rt.size())));
    }
    if k.iter().any(|&x| x < 2) {
        return Err(Error::Param("headway multiples must be at least 2".into()));
    }
    Ok(())
}

fn build(kind: RegionKind, rt: &CumulativeRouting, coef: impl Fn(usize, usize) -> f64) -> ThroughputRegion {
    let m = rt.size();
    let constraints = (0..m).map(|i| Constraint { a: (0..m).map(|j| coef(i, j)).collect(), b: 1.0, link: i }).collect();
    ThroughputRegion { kind, constraints, coords: (0..m).collect() }
}

/// `(k_i - 1) rho_i - (k_i - 2) lambda_i < 1` for every link.
pub fn inner_region_renewal(rt: &CumulativeRouting, k: &[u32]) -> Result<ThroughputRegion> {
    check_k(rt, k)?;
    Ok(build(RegionKind::InnerRenewal, rt, |i, j| {
        let ki = k[i] as f64;
        let own = if i == j { ki - 2.0 } else { 0.0 };
        (ki - 1.0) * rt.get(j, i) - own
    }))
}

/// `(k_i - 1) rho_i < 1` for every link.
pub fn inner_region_fixed_cycle(rt: &CumulativeRouting, k: &[u32]) -> Result<ThroughputRegion> {
    check_k(rt, k)?;
    Ok(build(RegionKind::InnerFixedCycle, rt, |i, j| (k[i] as f64 - 1.0) * rt.get(j, i)))
}

/// `rho_i <= 1` for every link: no policy can push more than one vehicle
/// per step across any point of the mainline.
pub fn outer_region(rt: &CumulativeRouting) -> ThroughputRegion {
    build(RegionKind::Outer, rt, |i, j| rt.get(j, i))
}

impl ThroughputRegion {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn strict(&self) -> bool {
        self.kind != RegionKind::Outer
    }

    pub fn contains(&self, lambda: &[f64]) -> bool {
        self.constraints.iter().all(|c| {
            let x = c.lhs(lambda);
            if self.strict() {
                x < c.b
            } else {
                x <= c.b
            }
        })
    }

    /// Membership in the closure, with slack `tol`.
    pub fn closure_contains(&self, lambda: &[f64], tol: f64) -> bool {
        self.constraints.iter().all(|c| c.lhs(lambda) <= c.b + tol)
    }

    /// Largest `alpha` such that `alpha * dir` lies in the closure.
    pub fn scale_limit(&self, dir: &[f64]) -> f64 {
        self.constraints
            .iter()
            .filter_map(|c| {
                let s = c.lhs(dir);
                (s > 0.0).then(|| c.b / s)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Fixes the rates given as `Some` and keeps the rest as coordinates.
    pub fn restrict(&self, fixed: &[Option<f64>]) -> Result<ThroughputRegion> {
        if fixed.len() != self.dim() {
            return Err(Error::Param(format!("{} values for a {}-dimensional region", fixed.len(), self.dim())));
        }
        let keep: Vec<usize> = (0..fixed.len()).filter(|&j| fixed[j].is_none()).collect();
        let constraints = self
            .constraints
            .iter()
            .map(|c| {
                let shift: f64 = fixed.iter().zip(&c.a).filter_map(|(f, a)| f.map(|v| a * v)).sum();
                Constraint { a: keep.iter().map(|&j| c.a[j]).collect(), b: c.b - shift, link: c.link }
            })
            .collect();
        Ok(ThroughputRegion { kind: self.kind, constraints, coords: keep.iter().map(|&j| self.coords[j]).collect() })
    }

    /// Drops constraints implied by the others over the unit box of rates.
    pub fn binding(&self) -> ThroughputRegion {
        let mut kept: Vec<Constraint> =
            self.constraints.iter().filter(|c| !(c.a.iter().all(|&a| a == 0.0) && c.b > 0.0)).cloned().collect();
        let mut i = 0;
        while i < kept.len() {
            let others: Vec<&Constraint> = kept.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| c).collect();
            match max_over(&kept[i].a, &others) {
                Some(best) if best <= kept[i].b + 1e-12 => {
                    kept.remove(i);
                }
                _ => i += 1,
            }
        }
        ThroughputRegion { kind: self.kind, constraints: kept, coords: self.coords.clone() }
    }

    /// Points on the boundary of a two-dimensional region, `n` abscissae
    /// from zero to the largest feasible first rate.
    pub fn boundary_2d(&self, n: usize) -> Vec<(f64, f64)> {
        if self.dim() != 2 || n == 0 {
            return Vec::new();
        }
        let x_max = self.scale_limit(&[1.0, 0.0]).min(1.0);
        (0..n)
            .map(|s| {
                let x = x_max * s as f64 / (n - 1).max(1) as f64;
                let y = self
                    .constraints
                    .iter()
                    .filter(|c| c.a[1] > 0.0)
                    .map(|c| (c.b - c.a[0] * x) / c.a[1])
                    .fold(1.0, f64::min)
                    .max(0.0);
                (x, y)
            })
            .collect()
    }

    /// Writes `kind,link,a_<coord>...,b,strict` rows.
    pub fn write_csv<W: Write>(regions: &[ThroughputRegion], w: W) -> Result<()> {
        let dim = regions.iter().map(|r| r.dim()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(w);
        let mut head = vec!["kind".to_string(), "link".to_string()];
        let coords = regions.first().map(|r| r.coords.clone()).unwrap_or_default();
        head.extend((0..dim).map(|j| format!("a_lambda{}", coords.get(j).map_or(j, |c| *c) + 1)));
        head.extend(["b".to_string(), "strict".to_string()]);
        w.write_record(&head)?;
        for r in regions {
            for c in &r.constraints {
                let mut row = vec![r.kind.name().to_string(), (c.link + 1).to_string()];
                row.extend(c.a.iter().map(|a| a.to_string()));
                row.extend([c.b.to_string(), r.strict().to_string()]);
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `max a . x` subject to `others` and `0 <= x <= 1`, or `None` when the
/// program is infeasible.
fn max_over(a: &[f64], others: &[&Constraint]) -> Option<f64> {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = a.iter().map(|&c| p.add_var(c, (0.0, 1.0))).collect();
    for c in others {
        let expr: Vec<_> = vars.iter().zip(&c.a).map(|(&v, &x)| (v, x)).collect();
        p.add_constraint(&expr[..], ComparisonOp::Le, c.b);
    }
    p.solve().ok().map(|s| s.objective())
}

/// Reference inputs for the region calculators.
pub mod examples {
    use super::*;
    use crate::geometry::Shape;
    use crate::model::{cumulative_routing, RoutingMatrix};

    /// A region case: kind, headway multiples, and the third rate held fixed.
    #[derive(Clone, Debug)]
    pub struct RegionCase {
        pub name: &'static str,
        pub kind: RegionKind,
        pub k: [u32; 3],
        pub lambda3: f64,
    }

    pub const CASES: &[RegionCase] = &[
        RegionCase { name: "renewal_slow_ramp2", kind: RegionKind::InnerRenewal, k: [2, 3, 2], lambda3: 0.5 },
        RegionCase { name: "fixed_cycle_slow_ramp2", kind: RegionKind::InnerFixedCycle, k: [2, 3, 2], lambda3: 0.5 },
        RegionCase { name: "fixed_cycle_all_vf", kind: RegionKind::InnerFixedCycle, k: [2, 2, 2], lambda3: 0.5 },
    ];

    pub fn get(name: &str) -> Option<&'static RegionCase> {
        CASES.iter().find(|c| c.name == name)
    }

    impl RegionCase {
        /// The region in `(lambda1, lambda2)` with redundant constraints removed.
        pub fn region(&self) -> Result<ThroughputRegion> {
            let rt = cumulative_routing(&RoutingMatrix::example(), Shape::Ring)?;
            let full = match self.kind {
                RegionKind::InnerRenewal => inner_region_renewal(&rt, &self.k)?,
                RegionKind::InnerFixedCycle => inner_region_fixed_cycle(&rt, &self.k)?,
                RegionKind::Outer => outer_region(&rt),
            };
            Ok(full.restrict(&[None, None, Some(self.lambda3)])?.binding())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape;
    use crate::model::{cumulative_routing, RoutingMatrix};

    fn rt() -> CumulativeRouting {
        cumulative_routing(&RoutingMatrix::example(), Shape::Ring).unwrap()
    }

    #[test]
    fn all_two_reduces_to_loads() {
        let a = inner_region_renewal(&rt(), &[2, 2, 2]).unwrap();
        let o = outer_region(&rt());
        for (x, y) in a.constraints.iter().zip(&o.constraints) {
            assert_eq!(x.a, y.a);
        }
    }

    #[test]
    fn equal_rates_outer_limit() {
        let lim = outer_region(&rt()).scale_limit(&[1.0; 3]);
        assert!((lim - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_multiples() {
        assert!(inner_region_fixed_cycle(&rt(), &[2, 1, 2]).is_err());
        assert!(inner_region_renewal(&rt(), &[2, 2]).is_err());
    }

    #[test]
    fn identity_routing_decouples() {
        let r = RoutingMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let o = outer_region(&cumulative_routing(&r, Shape::Ring).unwrap());
        assert!(o.contains(&[1.0, 1.0]));
        assert!(!o.contains(&[1.01, 0.0]));
    }

    #[test]
    fn binding_drops_slack_rows() {
        let reg = examples::get("renewal_slow_ramp2").unwrap().region().unwrap();
        assert_eq!(reg.constraints.len(), 1);
        assert_eq!(reg.constraints[0].link, 1);
    }

    #[test]
    fn boundary_samples_lie_on_the_boundary() {
        let reg = examples::get("fixed_cycle_all_vf").unwrap().region().unwrap();
        let pts = reg.boundary_2d(11);
        assert_eq!(pts.len(), 11);
        for (x, y) in pts {
            assert!(reg.closure_contains(&[x, y], 1e-12));
            assert!(!reg.closure_contains(&[x, y + 1e-6], 0.0) || y >= 1.0);
        }
    }
}
