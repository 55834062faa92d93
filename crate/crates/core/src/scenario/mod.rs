//! Scenario maps and evaluation cases.
//!
//! A scenario document is JSON with a top-level `format_version: 1`; see
//! `docs/formats.md` for the schema. Loading validates every structural
//! invariant and fails loudly on the first breach.

mod build;
mod cases;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    union_contains, PathGeometry, Polygon, PolylineKind, Pose2D, StaticPolyline, StaticVector,
};
use crate::idm::IdmParams;

pub use build::authored_document;
pub use cases::{
    generate_cases, generate_cases_with_count, load_cases, save_cases, CaseAgent, CaseError,
    CaseFile, CaseSpec, SvoMode, MAX_PLACEMENT_ATTEMPTS,
};

pub const FORMAT_VERSION: u32 = 1;
/// Default bound on the distance between consecutive static vectors.
pub const MAX_VECTOR_SPACING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Intersection,
    Bottleneck,
    Merge,
    Roundabout,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Intersection,
        ScenarioName::Bottleneck,
        ScenarioName::Merge,
        ScenarioName::Roundabout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Intersection => "intersection",
            ScenarioName::Bottleneck => "bottleneck",
            ScenarioName::Merge => "merge",
            ScenarioName::Roundabout => "roundabout",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ScenarioError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    pub sigma_max: f64,
    pub accel_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 2.0,
            wheelbase: 2.8,
            v_max: 10.0,
            sigma_max: 0.6,
            accel_max: 5.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err("vehicle footprint must have positive extents".into());
        }
        if !(self.wheelbase > 0.0 && self.wheelbase < self.length) {
            return Err(format!(
                "vehicle wheelbase must satisfy 0 < wheelbase < length, got {}",
                self.wheelbase
            ));
        }
        if !(self.v_max > 0.0) {
            return Err("vehicle v_max must be positive".into());
        }
        if !(self.sigma_max > 0.0 && self.sigma_max < std::f64::consts::FRAC_PI_2) {
            return Err("vehicle sigma_max must lie in (0, pi/2)".into());
        }
        if !(self.accel_max > 0.0) {
            return Err("vehicle accel_max must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnSlot {
    pub pose: Pose2D,
    pub path: usize,
}

/// Polyline as stored in documents: rows of `[x, y, theta, lane_width, k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolylineDoc {
    pub kind: PolylineKind,
    pub vectors: Vec<[f64; 5]>,
}

impl From<&StaticPolyline> for PolylineDoc {
    fn from(p: &StaticPolyline) -> Self {
        Self {
            kind: p.kind,
            vectors: p.vectors.iter().map(StaticVector::to_array).collect(),
        }
    }
}

impl PolylineDoc {
    fn to_polyline(&self, what: &str) -> Result<StaticPolyline, ScenarioError> {
        let mut vectors = Vec::with_capacity(self.vectors.len());
        for row in &self.vectors {
            let k = row[4];
            if !(k >= 0.0 && k.fract() == 0.0 && k <= u32::MAX as f64) {
                return Err(ScenarioError::Validation(format!(
                    "{what}: vector index {k} is not a nonnegative integer"
                )));
            }
            vectors.push(StaticVector {
                x: row[0],
                y: row[1],
                theta: row[2],
                lane_width: row[3],
                index: k as u32,
            });
        }
        Ok(StaticPolyline {
            kind: self.kind,
            vectors,
        })
    }
}

/// On-disk scenario representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub format_version: u32,
    pub name: ScenarioName,
    pub default_agent_count: usize,
    pub vehicle_params: Vec<VehicleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idm: Option<IdmParams>,
    pub drivable_area: Vec<Polygon>,
    pub interaction_zone: Polygon,
    pub centerlines: Vec<PolylineDoc>,
    pub sidelines: Vec<PolylineDoc>,
    pub candidate_paths: Vec<PolylineDoc>,
    pub spawn_slots: Vec<SpawnSlot>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to parse scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("scenario validation failed: {0}")]
    Validation(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

/// Validated, immutable scenario with precomputed path geometry.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub default_agent_count: usize,
    pub vehicle_params: Vec<VehicleParams>,
    pub idm: IdmParams,
    pub drivable_area: Vec<Polygon>,
    pub interaction_zone: Polygon,
    pub centerlines: Vec<StaticPolyline>,
    pub sidelines: Vec<StaticPolyline>,
    pub candidate_paths: Vec<StaticPolyline>,
    pub spawn_slots: Vec<SpawnSlot>,
    path_geometry: Vec<PathGeometry>,
    centerline_geometry: Vec<PathGeometry>,
    zone_exit: Vec<f64>,
    slot_arclength: Vec<f64>,
}

impl ScenarioSpec {
    pub fn from_document(doc: ScenarioDocument) -> Result<Self, ScenarioError> {
        if doc.format_version != FORMAT_VERSION {
            return Err(ScenarioError::UnsupportedVersion(doc.format_version));
        }
        if doc.centerlines.is_empty() {
            return Err(invalid("centerlines must be nonempty"));
        }
        if doc.candidate_paths.is_empty() {
            return Err(invalid("candidate_paths must be nonempty"));
        }
        if doc.spawn_slots.is_empty() {
            return Err(invalid("spawn_slots must be nonempty"));
        }
        if doc.drivable_area.is_empty() {
            return Err(invalid("drivable_area must be nonempty"));
        }
        if doc.default_agent_count == 0 {
            return Err(invalid("default_agent_count must be >= 1"));
        }
        if doc.vehicle_params.is_empty() {
            return Err(invalid("vehicle_params must be nonempty"));
        }
        for (i, vp) in doc.vehicle_params.iter().enumerate() {
            vp.validate()
                .map_err(|e| invalid(format!("vehicle_params[{i}]: {e}")))?;
        }
        let idm = doc.idm.unwrap_or_default();
        idm.validate().map_err(invalid)?;
        for (i, poly) in doc
            .drivable_area
            .iter()
            .chain(std::iter::once(&doc.interaction_zone))
            .enumerate()
        {
            if poly.vertices().len() < 3 {
                return Err(invalid(format!("polygon {i} has fewer than 3 vertices")));
            }
        }

        let centerlines = convert_all(&doc.centerlines, "centerlines", PolylineKind::Centerline)?;
        let sidelines = convert_all(&doc.sidelines, "sidelines", PolylineKind::Sideline)?;
        let candidate_paths =
            convert_all(&doc.candidate_paths, "candidate_paths", PolylineKind::GlobalPath)?;
        for (i, s) in sidelines.iter().enumerate() {
            if s.vectors.iter().any(|v| v.lane_width != 0.0) {
                return Err(invalid(format!("sidelines[{i}]: lane_width must be 0")));
            }
        }
        for (what, lines) in [("centerlines", &centerlines), ("candidate_paths", &candidate_paths)] {
            for (i, l) in lines.iter().enumerate() {
                if l.vectors.len() < 2 {
                    return Err(invalid(format!("{what}[{i}] needs at least 2 vectors")));
                }
                if l.vectors.iter().any(|v| !(v.lane_width > 0.0)) {
                    return Err(invalid(format!("{what}[{i}]: lane_width must be positive")));
                }
            }
        }

        check_zone_inside(&doc.interaction_zone, &doc.drivable_area)?;

        let path_geometry: Vec<PathGeometry> = candidate_paths.iter().map(PathGeometry::new).collect();
        let centerline_geometry = centerlines.iter().map(PathGeometry::new).collect();

        let mut slot_arclength = Vec::with_capacity(doc.spawn_slots.len());
        for (i, slot) in doc.spawn_slots.iter().enumerate() {
            let p = [slot.pose.x, slot.pose.y];
            if !union_contains(&doc.drivable_area, p) {
                return Err(invalid(format!(
                    "spawn_slots[{i}] at ({:.3}, {:.3}) lies outside drivable_area",
                    p[0], p[1]
                )));
            }
            let geom = path_geometry
                .get(slot.path)
                .ok_or_else(|| invalid(format!("spawn_slots[{i}] references unknown path {}", slot.path)))?;
            let proj = geom.project(p);
            if proj.lateral_offset.abs() > 1e-4 {
                return Err(invalid(format!("spawn_slots[{i}] is not on path {}", slot.path)));
            }
            slot_arclength.push(proj.arclength);
        }

        let mut zone_exit = Vec::with_capacity(candidate_paths.len());
        for (i, geom) in path_geometry.iter().enumerate() {
            let starts_at_slot = doc
                .spawn_slots
                .iter()
                .zip(&slot_arclength)
                .any(|(slot, &s)| slot.path == i && s.abs() < 1e-4);
            if !starts_at_slot {
                return Err(invalid(format!("candidate_paths[{i}] does not start at a spawn slot")));
            }
            let exit = zone_exit_arclength(geom, &doc.interaction_zone).ok_or_else(|| {
                invalid(format!("candidate_paths[{i}] does not exit the interaction zone"))
            })?;
            zone_exit.push(exit);
        }

        Ok(Self {
            name: doc.name,
            default_agent_count: doc.default_agent_count,
            vehicle_params: doc.vehicle_params,
            idm,
            drivable_area: doc.drivable_area,
            interaction_zone: doc.interaction_zone,
            centerlines,
            sidelines,
            candidate_paths,
            spawn_slots: doc.spawn_slots,
            path_geometry,
            centerline_geometry,
            zone_exit,
            slot_arclength,
        })
    }

    pub fn to_document(&self) -> ScenarioDocument {
        ScenarioDocument {
            format_version: FORMAT_VERSION,
            name: self.name,
            default_agent_count: self.default_agent_count,
            vehicle_params: self.vehicle_params.clone(),
            idm: Some(self.idm),
            drivable_area: self.drivable_area.clone(),
            interaction_zone: self.interaction_zone.clone(),
            centerlines: self.centerlines.iter().map(PolylineDoc::from).collect(),
            sidelines: self.sidelines.iter().map(PolylineDoc::from).collect(),
            candidate_paths: self.candidate_paths.iter().map(PolylineDoc::from).collect(),
            spawn_slots: self.spawn_slots.clone(),
        }
    }

    /// One of the four maps shipped with the crate.
    pub fn bundled(name: ScenarioName) -> Self {
        let text = match name {
            ScenarioName::Intersection => include_str!("../../assets/scenarios/intersection.json"),
            ScenarioName::Bottleneck => include_str!("../../assets/scenarios/bottleneck.json"),
            ScenarioName::Merge => include_str!("../../assets/scenarios/merge.json"),
            ScenarioName::Roundabout => include_str!("../../assets/scenarios/roundabout.json"),
        };
        load_scenario(text).expect("bundled scenario is valid")
    }

    pub fn path(&self, id: usize) -> &PathGeometry {
        &self.path_geometry[id]
    }

    pub fn centerline_geometry(&self) -> &[PathGeometry] {
        &self.centerline_geometry
    }

    /// Arclength on path `id` where it leaves the interaction zone.
    pub fn zone_exit(&self, id: usize) -> f64 {
        self.zone_exit[id]
    }

    pub fn slot_arclength(&self, slot: usize) -> f64 {
        self.slot_arclength[slot]
    }

    pub fn is_drivable(&self, p: [f64; 2]) -> bool {
        union_contains(&self.drivable_area, p)
    }
}

fn convert_all(
    docs: &[PolylineDoc],
    what: &str,
    expected: PolylineKind,
) -> Result<Vec<StaticPolyline>, ScenarioError> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let label = format!("{what}[{i}]");
            if d.kind != expected {
                return Err(invalid(format!("{label}: expected kind {expected:?}, got {:?}", d.kind)));
            }
            let p = d.to_polyline(&label)?;
            if p.is_empty() {
                return Err(invalid(format!("{label} is empty")));
            }
            if p.vectors.windows(2).any(|w| w[1].index <= w[0].index) {
                return Err(invalid(format!("{label}: vector index must be strictly increasing")));
            }
            if p.max_spacing() > MAX_VECTOR_SPACING + 1e-9 {
                return Err(invalid(format!(
                    "{label}: consecutive vectors {:.3} m apart exceed {MAX_VECTOR_SPACING} m",
                    p.max_spacing()
                )));
            }
            Ok(p)
        })
        .collect()
}

const CONTAINMENT_TOLERANCE: f64 = 1e-6;

fn inside_or_on(polys: &[Polygon], p: [f64; 2]) -> bool {
    union_contains(polys, p)
        || polys
            .iter()
            .any(|poly| poly.boundary_distance(p) <= CONTAINMENT_TOLERANCE)
}

/// Sampled containment check of the zone polygon (edges every 0.5 m plus a
/// 1 m interior grid) against the drivable union.
fn check_zone_inside(zone: &Polygon, drivable: &[Polygon]) -> Result<(), ScenarioError> {
    let verts = zone.vertices();
    let n = verts.len();
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let steps = (len / 0.5).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            if !inside_or_on(drivable, p) {
                return Err(invalid(format!(
                    "interaction_zone boundary point ({:.3}, {:.3}) lies outside drivable_area",
                    p[0], p[1]
                )));
            }
        }
    }
    let (min, max) = zone.bounds();
    let mut x = min[0].floor();
    while x <= max[0] {
        let mut y = min[1].floor();
        while y <= max[1] {
            let p = [x, y];
            if zone.contains(p) && !inside_or_on(drivable, p) {
                return Err(invalid(format!(
                    "interaction_zone point ({x:.3}, {y:.3}) lies outside drivable_area"
                )));
            }
            y += 1.0;
        }
        x += 1.0;
    }
    Ok(())
}

/// Arclength of the last inside-to-outside crossing of `zone` along the path,
/// refined by bisection. None if the path never enters the zone or ends
/// inside it.
fn zone_exit_arclength(path: &PathGeometry, zone: &Polygon) -> Option<f64> {
    let inside = |s: f64| {
        let p = path.pose_at(s);
        zone.contains([p.x, p.y])
    };
    let total = path.total_length();
    if inside(total) {
        return None;
    }
    let step = 0.25;
    let n = (total / step).ceil() as usize;
    let mut last_exit = None;
    let mut prev_in = inside(0.0);
    for k in 1..=n {
        let s = (k as f64 * step).min(total);
        let now_in = inside(s);
        if prev_in && !now_in {
            let (mut lo, mut hi) = ((k - 1) as f64 * step, s);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            last_exit = Some(hi);
        }
        prev_in = now_in;
    }
    last_exit
}

/// Parse and validate a scenario document.
pub fn load_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let doc: ScenarioDocument = serde_json::from_str(text)?;
    ScenarioSpec::from_document(doc)
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

/// Resolve either a bundled scenario name or a path to a scenario document.
pub fn resolve_scenario(spec: &str) -> Result<ScenarioSpec, ScenarioError> {
    match spec.parse::<ScenarioName>() {
        Ok(name) => Ok(ScenarioSpec::bundled(name)),
        Err(_) => load_scenario_file(Path::new(spec)),
    }
}
