use super::{merge_window_clear, JerkProfile, Track, VehicleState};
use crate::params::Params;

/// Which free-flow lattice positions around a merging vehicle's eventual
/// slot must be empty. Offsets count slots relative to that slot: an occupant
/// at `+o` is fine when `o >= ahead`, one at `-o` when `o >= behind`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockingOffsets {
    pub ahead: u32,
    pub behind: u32,
}

impl BlockingOffsets {
    /// Headway between leader and follower needed for the merge, in steps.
    pub fn multiple(&self) -> u32 {
        self.ahead + self.behind
    }

    pub fn blocks(&self, offset: i64) -> bool {
        offset < self.ahead as i64 && offset > -(self.behind as i64)
    }
}

const MAX_OFFSET: u32 = 64;

/// Scans lattice offsets for a vehicle released at rest `ramp_run` metres
/// upstream of the merge point. `extra` widens every required gap.
pub fn blocking_offsets(ramp_run: f64, extra: f64, p: &Params) -> BlockingOffsets {
    let profile = JerkProfile::speed_tracking(0.0, 0.0, p);
    let ego = Track { profile: profile.clone(), t0: 0.0, p0: -ramp_run };
    let t_end = profile.duration();
    // Front position of the eventual slot at t = 0.
    let slot0 = -ramp_run - profile.deficit();
    let pitch = p.slot_pitch();
    let clear = |o: i64| {
        let occ = VehicleState::cruising(u64::MAX, slot0 + o as f64 * pitch, p.v_free, 0.0);
        merge_window_clear(&ego, [&occ], 0.0, t_end, extra, |_, _| true, p)
    };
    let ahead = (1..=MAX_OFFSET).find(|&o| clear(o as i64)).unwrap_or(MAX_OFFSET);
    let behind = (1..=MAX_OFFSET).find(|&o| clear(-(o as i64))).unwrap_or(MAX_OFFSET);
    BlockingOffsets { ahead, behind }
}

/// Distance from a standing start needed to reach `speed`.
pub fn run_for_merge_speed(speed: f64, p: &Params) -> f64 {
    let profile = JerkProfile::speed_tracking(0.0, 0.0, p);
    profile.eval(profile.time_to_speed(speed.min(p.v_free))).x
}

/// Smallest `k >= 2` such that a vehicle merging at `merge_speed` fits
/// between two free-flow vehicles `k` steps apart without either side
/// dropping below the safety distance.
pub fn merge_headway_multiple(merge_speed: f64, p: &Params) -> u32 {
    blocking_offsets(run_for_merge_speed(merge_speed, p), 0.0, p).multiple().max(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_flow_merge_needs_two() {
        let p = Params::default();
        assert_eq!(merge_headway_multiple(p.v_free, &p), 2);
        let b = blocking_offsets(run_for_merge_speed(p.v_free, &p), 0.0, &p);
        assert_eq!(b, BlockingOffsets { ahead: 1, behind: 1 });
    }

    #[test]
    fn slow_merge_needs_three() {
        let p = Params::default();
        assert_eq!(merge_headway_multiple(5.0, &p), 3);
    }

    #[test]
    fn extra_gap_only_widens() {
        let p = Params::default();
        let run = run_for_merge_speed(5.0, &p);
        let base = blocking_offsets(run, 0.0, &p);
        let wide = blocking_offsets(run, 8.3, &p);
        assert!(wide.ahead >= base.ahead && wide.behind >= base.behind);
    }
}
