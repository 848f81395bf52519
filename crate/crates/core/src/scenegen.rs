//! Procedural rooms, constrained agent placement, referent placement with a
//! quasi-static gravity settle, and rejection sampling into valid scenes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{self, AdversaryPolicy};
use crate::geom::{
    mask_iou, partner_camera_visible, relative_yaw, sphere_visibility_mask, sphere_visible_at_least,
    sphere_visible_fraction, wrap_degrees, Figure, OrientedBox, Pose, Role, Room, Sphere, Vec3, World,
    VISIBILITY_THRESHOLD,
};
use crate::rng;

pub const CEILING_HEIGHT: f64 = 2.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_referents: usize,
    pub d_max: f64,
    pub d_min: f64,
    pub camera_height: (f64, f64),
    /// Accepted deviation of ψ′ from the requested yaw gap, degrees.
    pub yaw_tolerance: f64,
    pub agent_attempts: usize,
    pub referent_attempts: usize,
    pub env_attempts: usize,
    pub radius: f64,
    pub visibility_threshold: f64,
    pub drop_height: f64,
    pub grid_step: f64,
    /// Minimum floor distance from an agent to walls and furniture.
    pub agent_clearance: f64,
    pub min_agent_separation: f64,
    /// Candidate tuples scored per adversarial proposal.
    pub adversary_candidates: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_referents: 3,
            d_max: 10.0,
            d_min: 0.3,
            camera_height: (1.5, 1.9),
            yaw_tolerance: 5.0,
            agent_attempts: 500,
            referent_attempts: 200,
            env_attempts: 20,
            radius: 0.1,
            visibility_threshold: VISIBILITY_THRESHOLD,
            drop_height: 1.8,
            grid_step: 0.1,
            agent_clearance: 0.4,
            min_agent_separation: 0.8,
            adversary_candidates: 64,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidConfig(m.to_string()));
        if self.n_referents < 2 {
            return bad("n_referents must be at least 2");
        }
        if self.d_min <= 2.0 * self.radius {
            return bad("d_min must exceed twice the referent radius");
        }
        if self.camera_height.0 > self.camera_height.1 || self.camera_height.0 <= 0.0 {
            return bad("camera_height range is empty");
        }
        if self.grid_step <= 0.0 || self.radius <= 0.0 {
            return bad("grid_step and radius must be positive");
        }
        if !(0.0..=1.0).contains(&self.visibility_threshold) {
            return bad("visibility_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("could not pack landmarks for environment seed {seed}")]
    LandmarkPacking { seed: u64 },
    #[error("agent placement budget exhausted")]
    AgentPlacement,
    #[error("referent placement budget exhausted")]
    ReferentPlacement,
    #[error("yaw gap target {0} outside [0, 180]")]
    YawGap(f64),
    #[error("scene generation failed after {attempts} environment resamples")]
    Exhausted { attempts: usize },
    #[error("generated scene failed validity checks: {0:?}")]
    Invalid(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Table,
    Shelf,
    Sofa,
    Door,
    Window,
    Rug,
    Lamp,
    Plant,
    Chair,
    Cabinet,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Table,
        Category::Shelf,
        Category::Sofa,
        Category::Door,
        Category::Window,
        Category::Rug,
        Category::Lamp,
        Category::Plant,
        Category::Chair,
        Category::Cabinet,
    ];

    pub fn noun(self) -> &'static str {
        match self {
            Category::Table => "table",
            Category::Shelf => "shelf",
            Category::Sofa => "sofa",
            Category::Door => "door",
            Category::Window => "window",
            Category::Rug => "rug",
            Category::Lamp => "lamp",
            Category::Plant => "plant",
            Category::Chair => "chair",
            Category::Cabinet => "cabinet",
        }
    }

    pub fn wall_mounted(self) -> bool {
        matches!(self, Category::Door | Category::Window)
    }

    /// Nominal (width, depth, height) and bottom height.
    fn nominal(self) -> (f64, f64, f64, f64) {
        match self {
            Category::Table => (1.2, 0.8, 0.75, 0.0),
            Category::Shelf => (1.0, 0.35, 1.8, 0.0),
            Category::Sofa => (2.0, 0.9, 0.85, 0.0),
            Category::Door => (0.9, 0.08, 2.05, 0.0),
            Category::Window => (1.2, 0.08, 1.1, 0.9),
            Category::Rug => (2.0, 1.4, 0.01, 0.0),
            Category::Lamp => (0.3, 0.3, 1.6, 0.0),
            Category::Plant => (0.4, 0.4, 0.9, 0.0),
            Category::Chair => (0.5, 0.5, 0.9, 0.0),
            Category::Cabinet => (0.9, 0.5, 1.0, 0.0),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.noun())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.noun() == s)
            .ok_or_else(|| format!("unknown landmark category `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: usize,
    pub category: Category,
    /// Local `+x` is the front of the object; local `y` spans its width.
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
}

impl Landmark {
    pub fn front(&self) -> Vec3 {
        self.bbox.axes().0
    }

    /// Whether referents can rest on it (thin floor coverings count).
    pub fn is_support(&self) -> bool {
        !self.category.wall_mounted()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub extents: Room,
    pub floor: f64,
    pub walls: Vec<WallSegment>,
    pub landmarks: Vec<Landmark>,
    pub seed: u64,
}

impl Environment {
    pub fn room(&self) -> Room {
        self.extents
    }

    pub fn area(&self) -> f64 {
        self.extents.area()
    }

    pub fn landmark_world(&self) -> World {
        World::new(self.extents).with_landmarks(self.landmarks.iter().map(|l| (l.id, &l.bbox)))
    }

    pub fn landmark(&self, category: Category) -> Option<&Landmark> {
        self.landmarks.iter().find(|l| l.category == category)
    }

    /// Floor position usable by a standing agent.
    pub fn agent_position_free(&self, x: f64, y: f64, clearance: f64) -> bool {
        let r = &self.extents;
        if x < r.min.x + clearance || x > r.max.x - clearance || y < r.min.y + clearance || y > r.max.y - clearance {
            return false;
        }
        self.landmarks
            .iter()
            .filter(|l| l.category != Category::Rug)
            .all(|l| l.bbox.footprint_distance(x, y) >= clearance)
    }
}

/// Referent sphere: center and radius. Its index is its list position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Referent {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub radius: f64,
}

impl Referent {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self {
            x: center.x,
            y: center.y,
            z: center.z,
            radius,
        }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn sphere(&self) -> Sphere {
        Sphere {
            center: self.center(),
            radius: self.radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    Random,
    Adversarial,
}

impl PlacementMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlacementMode::Random => "random",
            PlacementMode::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for PlacementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlacementMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PlacementMode::Random),
            "adversarial" => Ok(PlacementMode::Adversarial),
            other => Err(format!("unknown placement mode `{other}`")),
        }
    }
}

/// How referents are placed when building a scene.
#[derive(Clone, Copy, Debug)]
pub enum Placement<'a> {
    Random,
    Adversarial(&'a AdversaryPolicy),
}

impl Placement<'_> {
    pub fn mode(&self) -> PlacementMode {
        match self {
            Placement::Random => PlacementMode::Random,
            Placement::Adversarial(_) => PlacementMode::Adversarial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub psi_prime: f64,
    pub fov_overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub seed: u64,
    pub mode: PlacementMode,
    pub yaw_gap_target: f64,
    pub env: Environment,
    pub speaker_pose: Pose,
    pub listener_pose: Pose,
    pub referents: Vec<Referent>,
    /// 0-based index into `referents`.
    pub target_index: usize,
    pub achieved: Achieved,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Scene {
    pub fn pose(&self, role: Role) -> &Pose {
        match role {
            Role::Speaker => &self.speaker_pose,
            Role::Listener => &self.listener_pose,
        }
    }

    pub fn spheres(&self) -> Vec<Sphere> {
        self.referents.iter().map(Referent::sphere).collect()
    }

    /// Landmarks, referents and both agent figures.
    pub fn world(&self) -> World {
        self.env
            .landmark_world()
            .with_referents(&self.spheres())
            .with_figure(Role::Speaker, &self.speaker_pose)
            .with_figure(Role::Listener, &self.listener_pose)
    }

    pub fn psi_prime(&self) -> f64 {
        relative_yaw(self.speaker_pose.yaw, self.listener_pose.yaw)
    }

    pub fn visibility_mask(&self, world: &World, role: Role, index: usize) -> Vec<bool> {
        sphere_visibility_mask(world, self.pose(role), role, &self.referents[index].sphere())
    }

    pub fn visible_fraction(&self, role: Role, index: usize) -> f64 {
        sphere_visible_fraction(&self.world(), self.pose(role), role, &self.referents[index].sphere())
    }

    /// Mean over referents of the IoU of both agents' visible surface samples.
    pub fn fov_overlap(&self) -> f64 {
        fov_overlap_of(&self.world(), &self.speaker_pose, &self.listener_pose, &self.spheres())
    }

    /// Whether the listener sees the speaker's head.
    pub fn listener_sees_speaker(&self) -> bool {
        partner_camera_visible(&self.world(), &self.listener_pose, Role::Listener, &self.speaker_pose)
    }

    pub fn speaker_sees_listener(&self) -> bool {
        partner_camera_visible(&self.world(), &self.speaker_pose, Role::Speaker, &self.listener_pose)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }
}

pub fn fov_overlap_of(world: &World, speaker: &Pose, listener: &Pose, spheres: &[Sphere]) -> f64 {
    if spheres.is_empty() {
        return 0.0;
    }
    let total: f64 = spheres
        .iter()
        .map(|s| {
            let a = sphere_visibility_mask(world, speaker, Role::Speaker, s);
            let b = sphere_visibility_mask(world, listener, Role::Listener, s);
            mask_iou(&a, &b)
        })
        .sum();
    total / spheres.len() as f64
}

fn yaw_of(v: Vec3) -> f64 {
    wrap_degrees(v.y.atan2(v.x).to_degrees())
}

fn place_landmark(cat: Category, room: &Room, existing: &[Landmark], rng: &mut rng::Rng) -> Option<OrientedBox> {
    let (w, d, h, bottom) = cat.nominal();
    for _ in 0..200 {
        let mut jitter = || rng.random_range(0.85..=1.15);
        let (w, d, h) = if cat.wall_mounted() {
            (w * jitter(), d, h * jitter())
        } else {
            (w * jitter(), d * jitter(), h * jitter())
        };
        let half = Vec3::new(d * 0.5, w * 0.5, h * 0.5);
        let bbox = if cat.wall_mounted() {
            let wall = rng.random_range(0..4u8);
            let (len, yaw) = match wall {
                0 | 1 => (room.max.y - room.min.y, if wall == 0 { 0.0 } else { 180.0 }),
                _ => (room.max.x - room.min.x, if wall == 2 { 90.0 } else { 270.0 }),
            };
            let margin = half.y + 0.2;
            if len <= 2.0 * margin {
                continue;
            }
            let along = rng.random_range(margin..len - margin);
            let (x, y) = match wall {
                0 => (room.min.x + half.x, room.min.y + along),
                1 => (room.max.x - half.x, room.min.y + along),
                2 => (room.min.x + along, room.min.y + half.x),
                _ => (room.min.x + along, room.max.y - half.x),
            };
            let bottom = if cat == Category::Window { bottom * rng.random_range(0.95..=1.05) } else { 0.0 };
            OrientedBox {
                center: Vec3::new(x, y, bottom + half.z),
                half,
                yaw,
            }
        } else {
            let yaw = wrap_degrees(rng.random_range(0..4) as f64 * 90.0 + rng.random_range(-20.0..=20.0));
            let x = rng.random_range(room.min.x..room.max.x);
            let y = rng.random_range(room.min.y..room.max.y);
            OrientedBox {
                center: Vec3::new(x, y, half.z),
                half,
                yaw,
            }
        };
        let inside = bbox.corners_2d().iter().all(|&(x, y)| {
            x >= room.min.x - 1e-9 && x <= room.max.x + 1e-9 && y >= room.min.y - 1e-9 && y <= room.max.y + 1e-9
        }) && bbox.top() <= room.max.z;
        if inside && existing.iter().all(|l| !l.bbox.overlaps(&bbox, 0.0)) {
            return Some(bbox);
        }
    }
    None
}

/// Deterministic room with 4–10 non-interpenetrating landmarks.
pub fn generate_environment(seed: u64, config: &GenConfig) -> Result<Environment, GenError> {
    config.validate()?;
    let mut rng = rng::stream(seed, "environment");
    for _ in 0..config.env_attempts.max(1) {
        let (lx, ly) = loop {
            let lx: f64 = rng.random_range(3.5..=8.0);
            let ly: f64 = rng.random_range(3.5..=7.5);
            if (12.0..=60.0).contains(&(lx * ly)) {
                break (lx, ly);
            }
        };
        let room = Room {
            min: Vec3::ZERO,
            max: Vec3::new(lx, ly, CEILING_HEIGHT),
        };
        let count = (4 + ((lx * ly - 12.0) / 8.0).floor() as usize).min(10);
        let mut cats = Category::ALL.to_vec();
        cats.shuffle(&mut rng);
        cats.truncate(count);
        let mut landmarks: Vec<Landmark> = Vec::with_capacity(count);
        let mut packed = true;
        for cat in cats {
            match place_landmark(cat, &room, &landmarks, &mut rng) {
                Some(bbox) => landmarks.push(Landmark {
                    id: landmarks.len(),
                    category: cat,
                    bbox,
                }),
                None => {
                    packed = false;
                    break;
                }
            }
        }
        if !packed {
            continue;
        }
        let c = [(0.0, 0.0), (lx, 0.0), (lx, ly), (0.0, ly)];
        let walls = (0..4)
            .map(|i| WallSegment {
                from: [c[i].0, c[i].1],
                to: [c[(i + 1) % 4].0, c[(i + 1) % 4].1],
                height: CEILING_HEIGHT,
            })
            .collect();
        return Ok(Environment {
            extents: room,
            floor: 0.0,
            walls,
            landmarks,
            seed,
        });
    }
    Err(GenError::LandmarkPacking { seed })
}

/// Drops a sphere of `radius` straight down from `initial` and returns its
/// resting center on the highest support below it, or on the floor.
pub fn settle(initial: Vec3, radius: f64, env: &Environment) -> Vec3 {
    let support = env
        .landmarks
        .iter()
        .filter(|l| l.is_support() && l.bbox.top() <= initial.z + 1e-9 && l.bbox.footprint_contains(initial.x, initial.y))
        .map(|l| l.bbox.top())
        .fold(env.floor, f64::max);
    Vec3::new(initial.x, initial.y, support + radius)
}

/// Height of the support a resting sphere at `center` sits on.
pub fn support_height(center: Vec3, radius: f64, env: &Environment) -> f64 {
    settle(Vec3::new(center.x, center.y, center.z - radius + 1e-3), radius, env).z - radius
}

/// Grid of drop points over the room interior, minus landmark interiors.
pub fn empty_coordinates(env: &Environment, config: &GenConfig) -> Vec<Vec3> {
    let r = &env.extents;
    let step = config.grid_step;
    let nx = ((r.max.x - r.min.x) / step).floor() as usize;
    let ny = ((r.max.y - r.min.y) / step).floor() as usize;
    let mut out = Vec::new();
    for i in 1..nx {
        for j in 1..ny {
            let p = Vec3::new(r.min.x + i as f64 * step, r.min.y + j as f64 * step, env.floor + config.drop_height);
            if !env.landmarks.iter().any(|l| l.bbox.contains(p)) {
                out.push(p);
            }
        }
    }
    out
}

/// Sphere at `center` intersects no landmark, wall or agent figure.
pub fn clear_of_geometry(center: Vec3, radius: f64, env: &Environment, figures: &[Figure]) -> bool {
    let r = &env.extents;
    let tol = 1e-6;
    if center.x - radius < r.min.x - tol
        || center.x + radius > r.max.x + tol
        || center.y - radius < r.min.y - tol
        || center.y + radius > r.max.y + tol
        || center.z + radius > r.max.z + tol
    {
        return false;
    }
    env.landmarks.iter().all(|l| l.bbox.distance(center) >= radius - tol)
        && figures.iter().all(|f| f.distance(center) >= radius - tol)
}

/// Settled positions from the empty-coordinate grid that are individually
/// valid for a referent: inside both frusta, not clipping, and visible to
/// both agents at the threshold.
pub fn viable_points(env: &Environment, speaker: &Pose, listener: &Pose, config: &GenConfig) -> Vec<Vec3> {
    let figures = [Figure::at(speaker), Figure::at(listener)];
    let world = env
        .landmark_world()
        .with_figure(Role::Speaker, speaker)
        .with_figure(Role::Listener, listener);
    let r = config.radius;
    empty_coordinates(env, config)
        .into_par_iter()
        .filter_map(|p| {
            let c = settle(p, r, env);
            if !speaker.in_frustum(c) || !listener.in_frustum(c) || !clear_of_geometry(c, r, env, &figures) {
                return None;
            }
            let s = Sphere { center: c, radius: r };
            (sphere_visible_at_least(&world, speaker, Role::Speaker, &s, config.visibility_threshold)
                && sphere_visible_at_least(&world, listener, Role::Listener, &s, config.visibility_threshold))
            .then_some(c)
        })
        .collect()
}

/// Every referent still meets the visibility threshold for both agents
/// once all of them are in the scene.
pub fn mutually_visible(env: &Environment, speaker: &Pose, listener: &Pose, centers: &[Vec3], config: &GenConfig) -> bool {
    let spheres: Vec<Sphere> = centers
        .iter()
        .map(|c| Sphere {
            center: *c,
            radius: config.radius,
        })
        .collect();
    let world = env
        .landmark_world()
        .with_referents(&spheres)
        .with_figure(Role::Speaker, speaker)
        .with_figure(Role::Listener, listener);
    spheres.iter().all(|s| {
        sphere_visible_at_least(&world, speaker, Role::Speaker, s, config.visibility_threshold)
            && sphere_visible_at_least(&world, listener, Role::Listener, s, config.visibility_threshold)
    })
}

/// One attempt at drawing N mutually spaced points from the viable set.
pub fn draw_spaced(viable: &[Vec3], n: usize, d_min: f64, rng: &mut rng::Rng) -> Option<Vec<Vec3>> {
    if viable.len() < n {
        return None;
    }
    let mut chosen: Vec<Vec3> = Vec::with_capacity(n);
    let mut tries = 0;
    while chosen.len() < n {
        tries += 1;
        if tries > 50 * n {
            return None;
        }
        let p = viable[rng.random_range(0..viable.len())];
        if chosen.iter().all(|q| q.distance(p) >= d_min) {
            chosen.push(p);
        }
    }
    Some(chosen)
}

/// Random-mode referent placement over a precomputed viable set.
pub fn random_referents(
    env: &Environment,
    speaker: &Pose,
    listener: &Pose,
    viable: &[Vec3],
    rng: &mut rng::Rng,
    config: &GenConfig,
) -> Option<(Vec<Referent>, usize)> {
    for _ in 0..config.referent_attempts {
        let centers = draw_spaced(viable, config.n_referents, config.d_min, rng)?;
        if mutually_visible(env, speaker, listener, &centers, config) {
            let t = rng.random_range(0..config.n_referents);
            let refs = centers.into_iter().map(|c| Referent::new(c, config.radius)).collect();
            return Some((refs, t));
        }
    }
    None
}

fn probe_points(room: &Room) -> impl Iterator<Item = Vec3> + '_ {
    let step = 0.5;
    let nx = ((room.max.x - room.min.x) / step) as usize;
    let ny = ((room.max.y - room.min.y) / step) as usize;
    (1..nx).flat_map(move |i| {
        (1..ny).flat_map(move |j| {
            [0.2, 0.9].into_iter().map(move |z| Vec3::new(room.min.x + i as f64 * step, room.min.y + j as f64 * step, z))
        })
    })
}

/// Samples speaker and listener poses satisfying distance, frustum overlap
/// and relative-yaw constraints. The agent that sees the other becomes the
/// speaker; if both see each other the roles are a coin flip.
pub fn place_agents(env: &Environment, yaw_gap_target: f64, seed: u64, config: &GenConfig) -> Result<(Pose, Pose), GenError> {
    if !(0.0..=180.0).contains(&yaw_gap_target) {
        return Err(GenError::YawGap(yaw_gap_target));
    }
    let mut rng = rng::stream(seed, "agents");
    let room = env.extents;
    let lo = (yaw_gap_target - config.yaw_tolerance).max(0.0);
    let hi = (yaw_gap_target + config.yaw_tolerance).min(180.0);
    let base = env.landmark_world();
    let free = |rng: &mut rng::Rng| -> Option<(f64, f64)> {
        for _ in 0..50 {
            let x = rng.random_range(room.min.x..room.max.x);
            let y = rng.random_range(room.min.y..room.max.y);
            if env.agent_position_free(x, y, config.agent_clearance) {
                return Some((x, y));
            }
        }
        None
    };
    for _ in 0..config.agent_attempts {
        let (Some(a), Some(b)) = (free(&mut rng), free(&mut rng)) else {
            continue;
        };
        let ha = rng.random_range(config.camera_height.0..=config.camera_height.1);
        let hb = rng.random_range(config.camera_height.0..=config.camera_height.1);
        let pa = Vec3::new(a.0, a.1, env.floor + ha);
        let pb = Vec3::new(b.0, b.1, env.floor + hb);
        let sep = pa.horizontal_distance(pb);
        if sep < config.min_agent_separation || pa.distance(pb) > config.d_max {
            continue;
        }
        // Aim the first agent roughly at the second; the gap fixes the other.
        let yaw_a = wrap_degrees(yaw_of(pb - pa) + rng.random_range(-45.0..=45.0));
        let gap = rng.random_range(lo..=hi);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let yaw_b = wrap_degrees(yaw_a + sign * gap);
        let pose_a = Pose::level(pa, yaw_a);
        let pose_b = Pose::level(pb, yaw_b);
        let psi = relative_yaw(pose_a.yaw, pose_b.yaw);
        if psi < lo - 1e-9 || psi > hi + 1e-9 {
            continue;
        }
        if !probe_points(&room).any(|p| pose_a.in_frustum(p) && pose_b.in_frustum(p)) {
            continue;
        }
        let world = base.clone().with_figure(Role::Speaker, &pose_a).with_figure(Role::Listener, &pose_b);
        let a_sees_b = partner_camera_visible(&world, &pose_a, Role::Speaker, &pose_b);
        let b_sees_a = partner_camera_visible(&world, &pose_b, Role::Listener, &pose_a);
        let a_speaks = match (a_sees_b, b_sees_a) {
            (true, true) => rng.random_bool(0.5),
            (true, false) => true,
            (false, true) => false,
            (false, false) => continue,
        };
        return Ok(if a_speaks { (pose_a, pose_b) } else { (pose_b, pose_a) });
    }
    Err(GenError::AgentPlacement)
}

/// An environment with placed agents and its viable referent positions.
#[derive(Clone, Debug)]
pub struct AgentPlacement {
    pub seed: u64,
    pub yaw_gap_target: f64,
    pub env: Environment,
    pub speaker: Pose,
    pub listener: Pose,
    pub viable: Vec<Vec3>,
    /// The random-mode referent draw that certified this placement.
    pub random: (Vec<Referent>, usize),
}

/// Resamples environments and agent poses until a random referent draw
/// succeeds. Both placement modes of a seed share this result.
pub fn sample_agent_placement(seed: u64, yaw_gap_target: f64, config: &GenConfig) -> Result<AgentPlacement, GenError> {
    config.validate()?;
    if !(0.0..=180.0).contains(&yaw_gap_target) {
        return Err(GenError::YawGap(yaw_gap_target));
    }
    let yaw_key = (yaw_gap_target * 1000.0).round() as u64;
    for attempt in 0..config.env_attempts {
        let env_seed = rng::derive_indexed(seed, "env", attempt as u64);
        let Ok(env) = generate_environment(env_seed, config) else {
            continue;
        };
        for k in 0..4u64 {
            let agent_seed = rng::derive_indexed(rng::derive_indexed(env_seed, "yaw", yaw_key), "agents", k);
            let Ok((speaker, listener)) = place_agents(&env, yaw_gap_target, agent_seed, config) else {
                continue;
            };
            let viable = viable_points(&env, &speaker, &listener, config);
            let mut rng = rng::stream(agent_seed, "referents");
            if let Some(random) = random_referents(&env, &speaker, &listener, &viable, &mut rng, config) {
                return Ok(AgentPlacement {
                    seed,
                    yaw_gap_target,
                    env,
                    speaker,
                    listener,
                    viable,
                    random,
                });
            }
        }
    }
    Err(GenError::Exhausted {
        attempts: config.env_attempts,
    })
}

/// Places referents for already placed agents. Adversarial mode falls back
/// to random placement (flagged) when too few candidate tuples exist.
pub fn place_referents(
    env: &Environment,
    speaker: &Pose,
    listener: &Pose,
    placement: Placement<'_>,
    seed: u64,
    config: &GenConfig,
) -> Result<(Vec<Referent>, usize, Vec<String>), GenError> {
    let viable = viable_points(env, speaker, listener, config);
    let mut rng = rng::stream(seed, "referents");
    if let Placement::Adversarial(policy) = placement {
        match adversary::propose_placements(policy, env, speaker, listener, &viable, seed, config.adversary_candidates, config) {
            Ok(p) => return Ok((p.referents, p.target, Vec::new())),
            Err(_) => {
                let (r, t) = random_referents(env, speaker, listener, &viable, &mut rng, config).ok_or(GenError::ReferentPlacement)?;
                return Ok((r, t, vec!["adversary_fallback_random".into()]));
            }
        }
    }
    let (r, t) = random_referents(env, speaker, listener, &viable, &mut rng, config).ok_or(GenError::ReferentPlacement)?;
    Ok((r, t, Vec::new()))
}

pub fn scene_id(seed: u64, yaw_gap_target: f64, mode: PlacementMode) -> String {
    let yaw = if yaw_gap_target.fract() == 0.0 {
        format!("{:03}", yaw_gap_target as u32)
    } else {
        format!("{yaw_gap_target:.2}")
    };
    format!("s{seed:016x}-y{yaw}-{mode}")
}

/// Finishes a scene from a placement and a referent set, then validates it.
pub fn assemble_scene(
    placement: &AgentPlacement,
    mode: PlacementMode,
    referents: Vec<Referent>,
    target_index: usize,
    flags: Vec<String>,
    config: &GenConfig,
) -> Result<Scene, GenError> {
    let mut scene = Scene {
        scene_id: scene_id(placement.seed, placement.yaw_gap_target, mode),
        seed: placement.seed,
        mode,
        yaw_gap_target: placement.yaw_gap_target,
        env: placement.env.clone(),
        speaker_pose: placement.speaker,
        listener_pose: placement.listener,
        referents,
        target_index,
        achieved: Achieved {
            psi_prime: 0.0,
            fov_overlap: 0.0,
        },
        flags,
    };
    scene.achieved = Achieved {
        psi_prime: scene.psi_prime(),
        fov_overlap: scene.fov_overlap(),
    };
    let violations = validate_scene(&scene, config);
    if violations.is_empty() {
        Ok(scene)
    } else {
        Err(GenError::Invalid(violations))
    }
}

fn adversarial_scene(placement: &AgentPlacement, policy: &AdversaryPolicy, config: &GenConfig) -> Result<Scene, GenError> {
    let seed = rng::derive(placement.seed, "adversary");
    match adversary::propose_placements(
        policy,
        &placement.env,
        &placement.speaker,
        &placement.listener,
        &placement.viable,
        seed,
        config.adversary_candidates,
        config,
    ) {
        Ok(p) => assemble_scene(placement, PlacementMode::Adversarial, p.referents, p.target, Vec::new(), config),
        Err(_) => {
            let (r, t) = placement.random.clone();
            assemble_scene(placement, PlacementMode::Adversarial, r, t, vec!["adversary_fallback_random".into()], config)
        }
    }
}

/// Composes environment, agents and referents into a validated scene.
pub fn build_scene(seed: u64, yaw_gap_target: f64, placement: Placement<'_>, config: &GenConfig) -> Result<Scene, GenError> {
    let ap = sample_agent_placement(seed, yaw_gap_target, config)?;
    match placement {
        Placement::Random => {
            let (r, t) = ap.random.clone();
            assemble_scene(&ap, PlacementMode::Random, r, t, Vec::new(), config)
        }
        Placement::Adversarial(policy) => adversarial_scene(&ap, policy, config),
    }
}

/// Random and adversarial scenes sharing environment and agent poses.
pub fn build_scene_pair(seed: u64, yaw_gap_target: f64, policy: &AdversaryPolicy, config: &GenConfig) -> Result<(Scene, Scene), GenError> {
    let ap = sample_agent_placement(seed, yaw_gap_target, config)?;
    let (r, t) = ap.random.clone();
    let random = assemble_scene(&ap, PlacementMode::Random, r, t, Vec::new(), config)?;
    let adversarial = adversarial_scene(&ap, policy, config)?;
    Ok((random, adversarial))
}

/// Deterministic validity checks; returns one message per violation.
pub fn validate_scene(scene: &Scene, config: &GenConfig) -> Vec<String> {
    let mut v = Vec::new();
    let n = scene.referents.len();
    if n != config.n_referents {
        v.push(format!("expected {} referents, found {n}", config.n_referents));
    }
    if scene.target_index >= n {
        v.push(format!("target index {} out of range", scene.target_index));
    }
    let (s, l) = (&scene.speaker_pose, &scene.listener_pose);
    for (name, p) in [("speaker", s), ("listener", l)] {
        if p.pitch != 0.0 || p.roll != 0.0 || !(0.0..360.0).contains(&p.yaw) {
            v.push(format!("{name} pose not level or yaw out of range"));
        }
        if !scene.env.extents.contains(p.position) {
            v.push(format!("{name} outside the room"));
        }
    }
    let d = s.position.distance(l.position);
    if d > config.d_max {
        v.push(format!("agents {d:.3} m apart"));
    }
    let psi = scene.psi_prime();
    if (psi - scene.yaw_gap_target).abs() > config.yaw_tolerance + 1e-9 {
        v.push(format!("psi' {psi:.2} outside requested {} ± {}", scene.yaw_gap_target, config.yaw_tolerance));
    }
    for i in 0..n {
        for j in i + 1..n {
            let dij = scene.referents[i].center().distance(scene.referents[j].center());
            if dij < config.d_min {
                v.push(format!("referents {i},{j} only {dij:.3} m apart"));
            }
        }
    }
    let figures = [Figure::at(s), Figure::at(l)];
    let world = scene.world();
    for (i, r) in scene.referents.iter().enumerate() {
        if (r.radius - config.radius).abs() > 1e-12 {
            v.push(format!("referent {i} radius {}", r.radius));
        }
        let c = r.center();
        let rest = settle(Vec3::new(c.x, c.y, c.z - r.radius + 1e-3), r.radius, &scene.env);
        if (rest.z - c.z).abs() > 1e-3 {
            v.push(format!("referent {i} not resting on a support"));
        }
        if !clear_of_geometry(c, r.radius, &scene.env, &figures) {
            v.push(format!("referent {i} clips geometry"));
        }
        for role in [Role::Speaker, Role::Listener] {
            let pose = scene.pose(role);
            if !pose.in_frustum(c) {
                v.push(format!("referent {i} center outside the {role} image"));
            }
            let f = sphere_visible_fraction(&world, pose, role, &r.sphere());
            if f < config.visibility_threshold {
                v.push(format!("referent {i} {role} visibility {f:.3}"));
            }
        }
    }
    v
}
