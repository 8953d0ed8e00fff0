use crate::params::Params;

/// What the monitors need to know about one vehicle.
#[derive(Clone, Copy, Debug, Default)]
pub struct MonitorInput {
    pub link: usize,
    pub safety: bool,
    pub ever_safety: bool,
    pub connected: bool,
    pub v: f64,
    pub a: f64,
    /// Largest spacing shortfall seen in the current window.
    pub delta: f64,
    /// Largest predicted shortfall at a merge seen in the current window.
    pub delta_hat: f64,
    /// Current shortfall against the leader, if any.
    pub shortfall_now: f64,
    /// Current predicted merge shortfall, if merging.
    pub predicted_now: f64,
    /// `y - (h v + S0)` against the real leader, if any.
    pub headway_error: Option<f64>,
}

/// Monitor values at one instant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonitorSample {
    pub x_f1: f64,
    pub x_f2: f64,
    pub x_g1: f64,
    pub x_g2: f64,
    /// `x_f1 + x_f2` restricted to each link.
    pub per_link: Vec<f64>,
    /// `sum |y - (h v + S0)|` over safety-mode vehicles.
    pub spacing_error: f64,
}

impl MonitorSample {
    pub fn empty(m: usize) -> Self {
        MonitorSample { per_link: vec![0.0; m], ..Default::default() }
    }

    pub fn x_f(&self) -> f64 {
        self.x_f1 + self.x_f2
    }

    pub fn x_g(&self) -> f64 {
        self.x_g1 + self.x_g2
    }
}

/// Contributions below this are treated as zero so that a vehicle that has
/// converged numerically does not keep the monitors alive forever.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deadband {
    pub speed: f64,
    pub accel: f64,
    pub spacing: f64,
}

impl Default for Deadband {
    fn default() -> Self {
        Deadband { speed: 0.05, accel: 0.05, spacing: 0.05 }
    }
}

fn cut(x: f64, band: f64) -> f64 {
    if x.abs() < band {
        0.0
    } else {
        x.abs()
    }
}

/// Aggregates the monitors over `vehicles` plus window maxima carried by
/// vehicles that exited during the window (`exited`, per link).
/// Non-connected vehicles are skipped.
pub fn compute_monitors(
    vehicles: &[MonitorInput],
    exited: &[f64],
    m: usize,
    p: &Params,
    band: &Deadband,
) -> MonitorSample {
    let mut s = MonitorSample::empty(m);
    for (i, &x) in exited.iter().enumerate() {
        s.x_f2 += x;
        s.per_link[i] += x;
    }
    for e in vehicles.iter().filter(|e| e.connected) {
        let motion = p.w1 * cut(e.v - p.v_free, band.speed) + p.w2 * cut(e.a, band.accel);
        let spacing = p.w3 * (cut(e.delta, band.spacing) + cut(e.delta_hat, band.spacing));
        let f1 = if e.safety { motion } else { 0.0 };
        s.x_f1 += f1;
        s.x_f2 += spacing;
        s.per_link[e.link] += f1 + spacing;
        if e.ever_safety {
            s.x_g1 += motion;
        }
        s.x_g2 += p.w4 * (cut(e.shortfall_now, band.spacing) + cut(e.predicted_now, band.spacing));
        if e.safety {
            if let Some(err) = e.headway_error {
                s.spacing_error += err.abs();
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracking_vehicles_contribute_nothing() {
        let p = Params::default();
        let v = MonitorInput { v: 3.0, a: 1.0, connected: true, ..Default::default() };
        let s = compute_monitors(&[v; 4], &[], 1, &p, &Deadband::default());
        assert_eq!(s.x_f1, 0.0);
    }

    #[test]
    fn congested_start_values() {
        let p = Params::default();
        let v = MonitorInput { v: 6.7, safety: true, ever_safety: true, connected: true, ..Default::default() };
        let s = compute_monitors(&vec![v; 100], &[], 1, &p, &Deadband::default());
        assert!((s.x_f1 - 830.0).abs() < 1e-9);
        assert!((0.01 * s.x_f1 - 8.3).abs() < 1e-9);
    }

    #[test]
    fn spacing_window_terms() {
        let p = Params::default();
        let v = MonitorInput { delta: 2.0, delta_hat: 1.0, v: 15.0, connected: true, ..Default::default() };
        let s = compute_monitors(&[v], &[], 1, &p, &Deadband::default());
        assert!((s.x_f2 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_vehicles_are_invisible() {
        let p = Params::default();
        let v = MonitorInput { v: 6.7, safety: true, connected: false, ..Default::default() };
        assert_eq!(compute_monitors(&[v], &[], 1, &p, &Deadband::default()), MonitorSample::empty(1));
    }
}
