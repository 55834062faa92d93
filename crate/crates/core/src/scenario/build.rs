//! Procedural construction of the four bundled maps. The JSON assets under
//! `assets/scenarios/` are generated from these functions by
//! `cargo run -p svoflow-core --example author_scenarios`.

use std::f64::consts::PI;

use crate::geometry::{Polygon, PolylineKind, Pose2D, StaticPolyline};
use crate::idm::IdmParams;

use super::{PolylineDoc, ScenarioDocument, ScenarioName, SpawnSlot, VehicleParams, FORMAT_VERSION};

const LANE_WIDTH: f64 = 4.0;
const SAMPLE_SPACING: f64 = 1.0;

/// Accumulates a dense point sequence from straight and circular pieces.
struct PathBuilder {
    pts: Vec<[f64; 2]>,
}

impl PathBuilder {
    fn start(p: [f64; 2]) -> Self {
        Self { pts: vec![p] }
    }

    fn last(&self) -> [f64; 2] {
        *self.pts.last().unwrap()
    }

    fn push(&mut self, p: [f64; 2]) {
        let l = self.last();
        if (p[0] - l[0]).hypot(p[1] - l[1]) > 1e-9 {
            self.pts.push(p);
        }
    }

    fn line_to(mut self, p: [f64; 2]) -> Self {
        let a = self.last();
        let len = (p[0] - a[0]).hypot(p[1] - a[1]);
        let n = (len / 0.25).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            self.push([a[0] + t * (p[0] - a[0]), a[1] + t * (p[1] - a[1])]);
        }
        self
    }

    /// Circular arc around `center` from angle `from` to angle `to`
    /// (radians; the sign of `to - from` sets the direction).
    fn arc(mut self, center: [f64; 2], radius: f64, from: f64, to: f64) -> Self {
        let n = ((to - from).abs() * radius / 0.25).ceil().max(1.0) as usize;
        for k in 0..=n {
            let a = from + (to - from) * k as f64 / n as f64;
            self.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
        }
        self
    }

    /// Follow `y = f(x)` from the current x to `x_end`.
    fn graph(mut self, x_end: f64, f: impl Fn(f64) -> f64) -> Self {
        let x0 = self.last()[0];
        let n = ((x_end - x0).abs() / 0.1).ceil().max(1.0) as usize;
        for k in 1..=n {
            let x = x0 + (x_end - x0) * k as f64 / n as f64;
            self.push([x, f(x)]);
        }
        self
    }

    fn finish(self) -> Vec<[f64; 2]> {
        resample(&self.pts, SAMPLE_SPACING)
    }
}

/// Points at uniform arclength spacing (the last step may be shorter).
fn resample(pts: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let n = (total / spacing).ceil() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for k in 0..=n {
        let s = (k as f64 * spacing).min(total);
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let a = pts[seg];
        let b = pts[seg + 1];
        out.push([round6(a[0] + t * (b[0] - a[0])), round6(a[1] + t * (b[1] - a[1]))]);
    }
    out.dedup();
    out
}

/// Assets store micrometre-rounded coordinates so the JSON stays readable.
fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn rotate(p: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [round6(c * p[0] - s * p[1]), round6(s * p[0] + c * p[1])]
}

fn rotate_all(pts: &[[f64; 2]], angle: f64) -> Vec<[f64; 2]> {
    pts.iter().map(|&p| rotate(p, angle)).collect()
}

fn line(a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    PathBuilder::start(a).line_to(b).finish()
}

fn circle(radius: f64, from_deg: f64, to_deg: f64) -> Vec<[f64; 2]> {
    let first = [radius * from_deg.to_radians().cos(), radius * from_deg.to_radians().sin()];
    PathBuilder::start(first)
        .arc([0.0, 0.0], radius, from_deg.to_radians(), to_deg.to_radians())
        .finish()
}

fn polyline(kind: PolylineKind, pts: &[[f64; 2]], lane_width: f64) -> PolylineDoc {
    let mut p = StaticPolyline::from_points(kind, pts, lane_width);
    for v in &mut p.vectors {
        v.theta = round6(v.theta);
    }
    PolylineDoc::from(&p)
}

/// Closed strip of half-width `half` around a polyline.
fn strip(pts: &[[f64; 2]], half: f64) -> Polygon {
    let n = pts.len();
    let normal = |i: usize| {
        let (a, b) = if i + 1 < n { (pts[i], pts[i + 1]) } else { (pts[i - 1], pts[i]) };
        let h = (b[1] - a[1]).atan2(b[0] - a[0]);
        [-h.sin(), h.cos()]
    };
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for (i, p) in pts.iter().enumerate() {
        let nl = normal(i);
        left.push([round6(p[0] + half * nl[0]), round6(p[1] + half * nl[1])]);
        right.push([round6(p[0] - half * nl[0]), round6(p[1] - half * nl[1])]);
    }
    right.reverse();
    left.extend(right);
    Polygon::new(left)
}

fn slots_along(path_ids: &[usize], paths: &[Vec<[f64; 2]>], offsets: &[f64]) -> Vec<SpawnSlot> {
    let mut slots = Vec::new();
    for &off in offsets {
        for &pid in path_ids {
            let geom = crate::geometry::PathGeometry::new(&StaticPolyline::from_points(
                PolylineKind::GlobalPath,
                &paths[pid],
                LANE_WIDTH,
            ));
            let pose = geom.pose_at(off);
            slots.push(SpawnSlot {
                pose: Pose2D::new(round6(pose.x), round6(pose.y), round6(pose.theta)),
                path: pid,
            });
        }
    }
    slots
}

fn assemble(
    name: ScenarioName,
    agents: usize,
    drivable_area: Vec<Polygon>,
    interaction_zone: Polygon,
    centerlines: Vec<Vec<[f64; 2]>>,
    sidelines: Vec<Vec<[f64; 2]>>,
    paths: Vec<Vec<[f64; 2]>>,
    spawn_slots: Vec<SpawnSlot>,
) -> ScenarioDocument {
    ScenarioDocument {
        format_version: FORMAT_VERSION,
        name,
        default_agent_count: agents,
        vehicle_params: vec![VehicleParams::default()],
        idm: Some(IdmParams::default()),
        drivable_area,
        interaction_zone,
        centerlines: centerlines
            .iter()
            .map(|c| polyline(PolylineKind::Centerline, c, LANE_WIDTH))
            .collect(),
        sidelines: sidelines
            .iter()
            .map(|c| polyline(PolylineKind::Sideline, c, 0.0))
            .collect(),
        candidate_paths: paths
            .iter()
            .map(|c| polyline(PolylineKind::GlobalPath, c, LANE_WIDTH))
            .collect(),
        spawn_slots,
    }
}

/// Document for one of the bundled maps.
pub fn authored_document(name: ScenarioName) -> ScenarioDocument {
    match name {
        ScenarioName::Intersection => intersection(),
        ScenarioName::Bottleneck => bottleneck(),
        ScenarioName::Merge => merge(),
        ScenarioName::Roundabout => roundabout(),
    }
}

/// Arm rotations: west, south, east, north. Each arm is authored as the west
/// arm and rotated counter-clockwise.
const ARM_ROTATIONS_DEG: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
const SPAWN_OFFSETS: [f64; 6] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0];

/// Four-arm unsignalized crossing, one lane per direction, 24 m square box.
fn intersection() -> ScenarioDocument {
    let half_box = 12.0;
    let arm = 70.0;
    let start_x = -(half_box + 60.0);
    let exit_len = 30.0;

    let straight = PathBuilder::start([start_x, -2.0])
        .line_to([half_box + exit_len, -2.0])
        .finish();
    let right = PathBuilder::start([start_x, -2.0])
        .line_to([-10.0, -2.0])
        .arc([-10.0, -10.0], 8.0, PI / 2.0, 0.0)
        .line_to([-2.0, -(half_box + exit_len)])
        .finish();
    let left = PathBuilder::start([start_x, -2.0])
        .line_to([-10.0, -2.0])
        .arc([-10.0, 10.0], 12.0, -PI / 2.0, 0.0)
        .line_to([2.0, half_box + exit_len])
        .finish();

    let mut drivable = vec![Polygon::rectangle(-half_box, -half_box, half_box, half_box)];
    let mut centerlines = Vec::new();
    let mut sidelines = Vec::new();
    let mut paths = Vec::new();
    let far = -(half_box + arm);
    for rot in ARM_ROTATIONS_DEG {
        let r = rot.to_radians();
        drivable.push(Polygon::new(rotate_all(
            &[[far, -4.0], [-half_box, -4.0], [-half_box, 4.0], [far, 4.0]],
            r,
        )));
        centerlines.push(rotate_all(&line([far, -2.0], [-half_box, -2.0]), r));
        centerlines.push(rotate_all(&line([-half_box, 2.0], [far, 2.0]), r));
        sidelines.push(rotate_all(&line([far, -4.0], [-half_box, -4.0]), r));
        sidelines.push(rotate_all(&line([-half_box, 4.0], [far, 4.0]), r));
        let corner = PathBuilder::start([-half_box, -4.0])
            .line_to([-half_box, -half_box])
            .line_to([-4.0, -half_box])
            .finish();
        sidelines.push(rotate_all(&corner, r));
        for p in [&left, &straight, &right] {
            paths.push(rotate_all(p, r));
        }
    }
    let mut slots = Vec::new();
    for arm_idx in 0..4 {
        let ids: Vec<usize> = (arm_idx * 3..arm_idx * 3 + 3).collect();
        slots.extend(slots_along(&ids, &paths, &SPAWN_OFFSETS));
    }
    assemble(
        ScenarioName::Intersection,
        16,
        drivable,
        Polygon::rectangle(-half_box, -half_box, half_box, half_box),
        centerlines,
        sidelines,
        paths,
        slots,
    )
}

fn blend(from: f64, to: f64, x0: f64, x1: f64) -> impl Fn(f64) -> f64 {
    move |x| {
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        from + (to - from) * (1.0 - (PI * t).cos()) / 2.0
    }
}

/// Three one-way lanes funnelled into a single-lane neck and fanned out again.
fn bottleneck() -> ScenarioDocument {
    let lanes = [-4.0, 0.0, 4.0];
    let drivable = vec![
        Polygon::rectangle(-84.0, -6.0, -20.0, 6.0),
        Polygon::new(vec![[-20.0, -6.0], [0.0, -3.0], [0.0, 3.0], [-20.0, 6.0]]),
        Polygon::rectangle(0.0, -3.0, 20.0, 3.0),
        Polygon::new(vec![[20.0, -3.0], [40.0, -6.0], [40.0, 6.0], [20.0, 3.0]]),
        Polygon::rectangle(40.0, -6.0, 104.0, 6.0),
    ];
    let zone = Polygon::new(vec![
        [-20.0, -6.0],
        [0.0, -3.0],
        [20.0, -3.0],
        [40.0, -6.0],
        [40.0, 6.0],
        [20.0, 3.0],
        [0.0, 3.0],
        [-20.0, 6.0],
    ]);
    let mut centerlines: Vec<Vec<[f64; 2]>> =
        lanes.iter().map(|&y| line([-84.0, y], [-20.0, y])).collect();
    centerlines.push(line([0.0, 0.0], [20.0, 0.0]));
    centerlines.extend(lanes.iter().map(|&y| line([40.0, y], [104.0, y])));
    let outline_top = [[-84.0, 6.0], [-20.0, 6.0], [0.0, 3.0], [20.0, 3.0], [40.0, 6.0], [104.0, 6.0]];
    let sidelines: Vec<Vec<[f64; 2]>> = [1.0, -1.0]
        .iter()
        .map(|&sign| {
            let mut b = PathBuilder::start([outline_top[0][0], sign * outline_top[0][1]]);
            for p in &outline_top[1..] {
                b = b.line_to([p[0], sign * p[1]]);
            }
            b.finish()
        })
        .collect();
    let mut paths = Vec::new();
    for &yi in &lanes {
        for &yo in &lanes {
            paths.push(
                PathBuilder::start([-76.0, yi])
                    .line_to([-20.0, yi])
                    .graph(0.0, blend(yi, 0.0, -20.0, 0.0))
                    .line_to([20.0, 0.0])
                    .graph(40.0, blend(0.0, yo, 20.0, 40.0))
                    .line_to([70.0, yo])
                    .finish(),
            );
        }
    }
    let mut slots = Vec::new();
    for lane in 0..3 {
        let ids: Vec<usize> = (lane * 3..lane * 3 + 3).collect();
        slots.extend(slots_along(&ids, &paths, &SPAWN_OFFSETS));
    }
    assemble(
        ScenarioName::Bottleneck,
        16,
        drivable,
        zone,
        centerlines,
        sidelines,
        paths,
        slots,
    )
}

/// Two-lane main road with an on-ramp joining the right lane.
fn merge() -> ScenarioDocument {
    let ramp_y = |x: f64| -24.0 * (1.0 + (PI * (x + 90.0) / 90.0).cos()) / 2.0;
    let ramp_curve = PathBuilder::start([-94.0, -24.0])
        .line_to([-90.0, -24.0])
        .graph(0.0, ramp_y)
        .finish();
    let drivable = vec![
        Polygon::rectangle(-104.0, -2.0, 104.0, 6.0),
        strip(&ramp_curve, 3.0),
    ];
    let zone = Polygon::rectangle(-30.0, -2.0, 30.0, 6.0);
    let centerlines = vec![
        line([-104.0, 0.0], [104.0, 0.0]),
        line([-104.0, 4.0], [104.0, 4.0]),
        ramp_curve.clone(),
    ];
    let ramp_left: Vec<[f64; 2]> = {
        let s = strip(&ramp_curve, 3.0);
        s.vertices()[..ramp_curve.len()].to_vec()
    };
    let sidelines = vec![
        line([-104.0, 6.0], [104.0, 6.0]),
        line([0.0, -2.0], [104.0, -2.0]),
        line([-104.0, -2.0], [-20.0, -2.0]),
        resample(&ramp_left, SAMPLE_SPACING),
    ];
    let paths = vec![
        line([-90.0, 0.0], [70.0, 0.0]),
        line([-90.0, 4.0], [70.0, 4.0]),
        PathBuilder::start([-90.0, -24.0])
            .graph(0.0, ramp_y)
            .line_to([70.0, 0.0])
            .finish(),
    ];
    let mut slots = Vec::new();
    for pid in 0..3 {
        slots.extend(slots_along(&[pid], &paths, &SPAWN_OFFSETS));
    }
    assemble(
        ScenarioName::Merge,
        12,
        drivable,
        zone,
        centerlines,
        sidelines,
        paths,
        slots,
    )
}

/// Single-lane counter-clockwise ring (lane radius 14 m) with four two-way arms.
fn roundabout() -> ScenarioDocument {
    let ring_r: f64 = 14.0;
    let inner = 10.0;
    let outer = 18.0;
    let conn_r: f64 = 8.0;
    // connector circle tangent to the arm lane (y = -2) and externally
    // tangent to the ring lane
    let cx = -((ring_r + conn_r).powi(2) - (2.0 + conn_r).powi(2)).sqrt();
    let cy = -2.0 - conn_r;
    let tangent_dir = (-cy).atan2(-cx); // from connector center towards origin
    let ring_entry = (cy + conn_r * tangent_dir.sin()).atan2(cx + conn_r * tangent_dir.cos());
    let ring_entry = ring_entry.rem_euclid(2.0 * PI);
    let arm_far = -84.0;

    let mut drivable = Vec::new();
    for k in 0..36 {
        let a0 = (k as f64 * 10.0).to_radians();
        let a1 = ((k + 1) as f64 * 10.0).to_radians();
        drivable.push(Polygon::new(vec![
            [round6(inner * a0.cos()), round6(inner * a0.sin())],
            [round6(outer * a0.cos()), round6(outer * a0.sin())],
            [round6(outer * a1.cos()), round6(outer * a1.sin())],
            [round6(inner * a1.cos()), round6(inner * a1.sin())],
        ]));
    }
    let mut zone = Vec::new();
    for k in 0..=36 {
        let a = (k as f64 * 10.0).to_radians();
        zone.push([round6(outer * a.cos()), round6(outer * a.sin())]);
    }
    for k in (0..=36).rev() {
        let a = (k as f64 * 10.0).to_radians();
        zone.push([round6(inner * a.cos()), round6(inner * a.sin())]);
    }

    let entry_connector = PathBuilder::start([cx, -2.0])
        .arc([cx, cy], conn_r, PI / 2.0, tangent_dir)
        .finish();
    let exit_connector = PathBuilder::start([-cx + conn_r * (PI - tangent_dir).cos(), cy + conn_r * (PI - tangent_dir).sin()])
        .arc([-cx, cy], conn_r, PI - tangent_dir, PI / 2.0)
        .finish();

    let mut centerlines = vec![circle(ring_r, -5.0, 365.0)];
    let mut sidelines = vec![circle(outer, 0.0, 360.0), circle(inner, 0.0, 360.0)];
    let mut paths = Vec::new();
    for rot in ARM_ROTATIONS_DEG {
        let r = rot.to_radians();
        drivable.push(Polygon::new(rotate_all(
            &[[arm_far, -4.0], [-12.0, -4.0], [-12.0, 4.0], [arm_far, 4.0]],
            r,
        )));
        drivable.push(Polygon::new(rotate_all(strip(&entry_connector, 3.5).vertices(), r)));
        // exit connectors of this arm are authored on the east side
        drivable.push(Polygon::new(rotate_all(strip(&exit_connector, 3.5).vertices(), r + PI)));
        centerlines.push(rotate_all(&line([arm_far, -2.0], [-20.0, -2.0]), r));
        centerlines.push(rotate_all(&line([-20.0, 2.0], [arm_far, 2.0]), r));
        sidelines.push(rotate_all(&line([arm_far, -4.0], [-outer, -4.0]), r));
        sidelines.push(rotate_all(&line([-outer, 4.0], [arm_far, 4.0]), r));

        // from this (west-authored) arm to the next three arms counter-clockwise
        for hop in 1..=3 {
            let exit_arm = PI + hop as f64 * PI / 2.0;
            // the ring leaves towards an exit arm `tangent_dir` before its axis
            let exit_angle = exit_arm - tangent_dir;
            let conn_center = rotate([-cx, cy], exit_arm);
            let ring_exit = [ring_r * exit_angle.cos(), ring_r * exit_angle.sin()];
            let arc_from = (ring_exit[1] - conn_center[1]).atan2(ring_exit[0] - conn_center[0]);
            let mut arc_to = PI / 2.0 + exit_arm;
            while arc_to > arc_from {
                arc_to -= 2.0 * PI;
            }
            while arc_to < arc_from - 2.0 * PI {
                arc_to += 2.0 * PI;
            }
            let p = PathBuilder::start([-76.0, -2.0])
                .line_to([cx, -2.0])
                .arc([cx, cy], conn_r, PI / 2.0, tangent_dir)
                .arc([0.0, 0.0], ring_r, ring_entry, exit_angle)
                .arc(conn_center, conn_r, arc_from, arc_to)
                .line_to(rotate([-cx + 30.0, -2.0], exit_arm))
                .finish();
            paths.push(rotate_all(&p, r));
        }
    }
    let mut slots = Vec::new();
    for arm_idx in 0..4 {
        let ids: Vec<usize> = (arm_idx * 3..arm_idx * 3 + 3).collect();
        slots.extend(slots_along(&ids, &paths, &SPAWN_OFFSETS));
    }
    assemble(
        ScenarioName::Roundabout,
        16,
        drivable,
        Polygon::new(zone),
        centerlines,
        sidelines,
        paths,
        slots,
    )
}
