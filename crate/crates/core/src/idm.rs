//! Intelligent Driver Model car following.
//!
//! Acceleration of a following vehicle:
//!
//! ```text
//! accel = a * [1 - (v / v0)^delta - (phi_desired / gap)^2]
//! phi_desired = s0 + v*T + v*dv / (2*sqrt(a*b)),   dv = v_back - v_front
//! ```
//!
//! `gap` is the bumper-to-bumper distance to the leader.

use serde::{Deserialize, Serialize};

use crate::geometry::PathGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Desired time gap (s).
    pub time_gap: f64,
    /// Minimum standstill gap (m).
    pub s0: f64,
    pub delta: f64,
    /// Maximum acceleration (m/s^2).
    pub a: f64,
    /// Comfortable deceleration (m/s^2).
    pub b: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 6.0,
            time_gap: 1.0,
            s0: 2.0,
            delta: 4.0,
            a: 5.0,
            b: 5.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("v0", self.v0),
            ("time_gap", self.time_gap),
            ("s0", self.s0),
            ("delta", self.delta),
            ("a", self.a),
            ("b", self.b),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("idm.{name} must be strictly positive, got {value}"));
            }
        }
        if self.delta < 1.0 {
            return Err(format!("idm.delta must be >= 1, got {}", self.delta));
        }
        Ok(())
    }

    /// Hard-brake floor applied to every returned acceleration.
    pub fn emergency_decel(&self) -> f64 {
        2.0 * self.b
    }
}

/// Desired dynamic gap `s0 + v*T + v*dv / (2*sqrt(a*b))`.
pub fn desired_gap(v_back: f64, v_front: f64, p: &IdmParams) -> f64 {
    let dv = v_back - v_front;
    p.s0 + v_back * p.time_gap + v_back * dv / (2.0 * (p.a * p.b).sqrt())
}

/// IDM acceleration before the emergency clamp. `gap` must be positive.
pub fn idm_acceleration_unclamped(v_back: f64, v_front: f64, gap: f64, p: &IdmParams) -> f64 {
    let free = (v_back / p.v0).powf(p.delta);
    let interaction = (desired_gap(v_back, v_front, p) / gap).powi(2);
    p.a * (1.0 - free - interaction)
}

/// IDM acceleration clamped to `[-2b, a]`. A non-positive gap means the pair
/// already overlaps and returns the hard-brake value `-2b`.
pub fn idm_acceleration(v_back: f64, v_front: f64, gap: f64, p: &IdmParams) -> f64 {
    if gap <= 0.0 {
        log::debug!("degenerate IDM gap {gap}, hard braking");
        return -p.emergency_decel();
    }
    idm_acceleration_unclamped(v_back, v_front, gap, p).clamp(-p.emergency_decel(), p.a)
}

/// Acceleration without any leader (free road).
pub fn idm_free_road(v: f64, p: &IdmParams) -> f64 {
    (p.a * (1.0 - (v / p.v0).powf(p.delta))).clamp(-p.emergency_decel(), p.a)
}

pub const LEADER_SEARCH_RADIUS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Index into the candidate slice.
    pub index: usize,
    pub gap: f64,
    pub speed: f64,
}

/// A vehicle considered when searching for a leader.
#[derive(Debug, Clone, Copy)]
pub struct LeaderCandidate {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

/// Find the closest candidate ahead on `path`: strictly positive arclength
/// lead of at most [`LEADER_SEARCH_RADIUS`] and a footprint reaching into the
/// lane (lateral offset within half a lane width plus half the candidate's
/// width). Gap is center distance along the path minus both half lengths.
pub fn find_leader_on_path(
    path: &PathGeometry,
    own_arclength: f64,
    own_length: f64,
    candidates: &[LeaderCandidate],
    skip: Option<usize>,
) -> Option<Leader> {
    let half_lane = 0.5 * path.lane_width();
    let own = path.pose_at(own_arclength);
    let hi = own_arclength + LEADER_SEARCH_RADIUS;
    let mut best: Option<(f64, Leader)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        // cheap reject: anything further than the search radius plus a lane
        // cannot qualify
        let reach = half_lane + 0.5 * c.width;
        if (c.x - own.x).hypot(c.y - own.y) > LEADER_SEARCH_RADIUS + reach + 1e-9 {
            continue;
        }
        let proj = path.project_window([c.x, c.y], own_arclength, hi);
        let lead = proj.arclength - own_arclength;
        if lead <= 0.0 || lead > LEADER_SEARCH_RADIUS || proj.lateral_offset.abs() > reach {
            continue;
        }
        if best.map_or(true, |(d, _)| lead < d) {
            let gap = lead - 0.5 * (c.length + own_length);
            best = Some((
                lead,
                Leader {
                    index: i,
                    gap,
                    speed: c.speed,
                },
            ));
        }
    }
    best.map(|(_, l)| l)
}
