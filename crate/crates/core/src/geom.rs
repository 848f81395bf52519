//! Vector and pose math, ray casting against the scene primitives, and the
//! surface-sampling visibility metrics shared by generation, rendering and
//! the geometric agents.
//!
//! Coordinates are meters with `z` up. Angles on poses are degrees; a yaw of
//! 0 faces `+x` and yaw grows counter-clockwise seen from above.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Surface samples per referent sphere.
pub const SURFACE_SAMPLES: usize = 256;

/// A referent counts as visible to an agent at or above this fraction.
pub const VISIBILITY_THRESHOLD: f64 = 0.15;

/// Horizontal and vertical field of view of every agent camera.
pub const FOV_DEG: f64 = 90.0;

const RAY_EPS: f64 = 1e-9;
const SURFACE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction. Zero vectors are returned unchanged.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn horizontal_distance(self, o: Vec3) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2)).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotates about the vertical axis through the origin.
    pub fn rotate_z(self, degrees: f64) -> Vec3 {
        let (s, c) = degrees.to_radians().sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Which of the two embodied agents a quantity belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Speaker,
    Listener,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Speaker => Role::Listener,
            Role::Listener => Role::Speaker,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Speaker => "speaker",
            Role::Listener => "listener",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "speaker" => Ok(Role::Speaker),
            "listener" => Ok(Role::Listener),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// Camera pose. Angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose {
    /// A pose with zero pitch and roll, yaw wrapped into `[0, 360)`.
    pub fn level(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            yaw: wrap_degrees(yaw),
            pitch: 0.0,
            roll: 0.0,
        }
    }

    /// `(forward, right, up)` unit vectors of the camera.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (sy, cy) = self.yaw.to_radians().sin_cos();
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        let forward = Vec3::new(cy * cp, sy * cp, sp);
        let right0 = Vec3::new(sy, -cy, 0.0);
        let up0 = right0.cross(forward);
        if self.roll == 0.0 {
            return (forward, right0, up0);
        }
        let (sr, cr) = self.roll.to_radians().sin_cos();
        let right = right0 * cr + up0 * sr;
        let up = up0 * cr - right0 * sr;
        (forward, right, up)
    }

    /// World point to camera frame: `x` right, `y` up, `z` forward (depth).
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let (f, r, u) = self.basis();
        let d = p - self.position;
        Vec3::new(d.dot(r), d.dot(u), d.dot(f))
    }

    /// Camera-frame direction back to a world direction.
    pub fn camera_dir_to_world(&self, c: Vec3) -> Vec3 {
        let (f, r, u) = self.basis();
        r * c.x + u * c.y + f * c.z
    }

    /// Closed 90°×90° frustum test (any depth in front of the camera).
    pub fn in_frustum(&self, p: Vec3) -> bool {
        let c = self.to_camera(p);
        let t = (FOV_DEG * 0.5).to_radians().tan();
        c.z > 0.0 && c.x.abs() <= t * c.z && c.y.abs() <= t * c.z
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn wrap_degrees(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Minimal angular difference between two headings, in `[0, 180]`.
pub fn relative_yaw(yaw_a: f64, yaw_b: f64) -> f64 {
    let d = (wrap_degrees(yaw_a) - wrap_degrees(yaw_b)).abs();
    d.min(360.0 - d)
}

/// Box with a vertical local `z` axis, rotated by `yaw` degrees about it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    /// Half extents along the local axes.
    pub half: Vec3,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn axes(&self) -> (Vec3, Vec3) {
        let (s, c) = self.yaw.to_radians().sin_cos();
        (Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0))
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let (ax, ay) = self.axes();
        let d = p - self.center;
        Vec3::new(d.dot(ax), d.dot(ay), d.z)
    }

    pub fn from_local(&self, l: Vec3) -> Vec3 {
        let (ax, ay) = self.axes();
        self.center + ax * l.x + ay * l.y + Vec3::UP * l.z
    }

    pub fn top(&self) -> f64 {
        self.center.z + self.half.z
    }

    pub fn bottom(&self) -> f64 {
        self.center.z - self.half.z
    }

    /// Strict interior test.
    pub fn contains(&self, p: Vec3) -> bool {
        let l = self.to_local(p);
        l.x.abs() < self.half.x && l.y.abs() < self.half.y && l.z.abs() < self.half.z
    }

    /// Whether the vertical projection of the box contains `(x, y)`.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let l = self.to_local(Vec3::new(x, y, self.center.z));
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y
    }

    /// Euclidean distance from `p` to the solid box (0 inside).
    pub fn distance(&self, p: Vec3) -> f64 {
        let l = self.to_local(p);
        let dx = (l.x.abs() - self.half.x).max(0.0);
        let dy = (l.y.abs() - self.half.y).max(0.0);
        let dz = (l.z.abs() - self.half.z).max(0.0);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Footprint-only distance from `(x, y)` to the box outline (0 inside).
    pub fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let l = self.to_local(Vec3::new(x, y, self.center.z));
        let dx = (l.x.abs() - self.half.x).max(0.0);
        let dy = (l.y.abs() - self.half.y).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }

    /// Footprint corners, counter-clockwise.
    pub fn corners_2d(&self) -> [(f64, f64); 4] {
        let (ax, ay) = self.axes();
        let c = self.center;
        let hx = self.half.x;
        let hy = self.half.y;
        let pt = |sx: f64, sy: f64| {
            let p = c + ax * (sx * hx) + ay * (sy * hy);
            (p.x, p.y)
        };
        [pt(-1.0, -1.0), pt(1.0, -1.0), pt(1.0, 1.0), pt(-1.0, 1.0)]
    }

    /// Slab intersection. Returns the entry distance, or the exit distance
    /// when the origin is inside.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let (ax, ay) = self.axes();
        let d0 = origin - self.center;
        let o = [d0.dot(ax), d0.dot(ay), d0.z];
        let d = [dir.dot(ax), dir.dot(ay), dir.z];
        let h = [self.half.x, self.half.y, self.half.z];
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i].abs() > h[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[i];
            let mut t0 = (-h[i] - o[i]) * inv;
            let mut t1 = (h[i] - o[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return None;
            }
        }
        if t_min > RAY_EPS {
            Some(t_min)
        } else if t_max > RAY_EPS {
            Some(t_max)
        } else {
            None
        }
    }

    /// Overlap test between two boxes: separating axes on the footprints
    /// plus vertical interval overlap.
    pub fn overlaps(&self, other: &OrientedBox, clearance: f64) -> bool {
        if self.bottom() >= other.top() + clearance || other.bottom() >= self.top() + clearance {
            return false;
        }
        let a = self.corners_2d();
        let b = other.corners_2d();
        for poly in [&a, &b] {
            for i in 0..4 {
                let (x0, y0) = poly[i];
                let (x1, y1) = poly[(i + 1) % 4];
                let n = (y1 - y0, x0 - x1);
                let len = (n.0 * n.0 + n.1 * n.1).sqrt();
                let n = (n.0 / len, n.1 / len);
                let proj = |p: &(f64, f64)| p.0 * n.0 + p.1 * n.1;
                let (amin, amax) = minmax(a.iter().map(proj));
                let (bmin, bmax) = minmax(b.iter().map(proj));
                if amax + clearance <= bmin || bmax + clearance <= amin {
                    return false;
                }
            }
        }
        true
    }
}

fn minmax(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    /// Nearest positive intersection distance.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_sq() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t0 = -b - s;
        if t0 > RAY_EPS {
            return Some(t0);
        }
        let t1 = -b + s;
        (t1 > RAY_EPS).then_some(t1)
    }
}

/// Axis-aligned room interior; `min.z` is the floor, `max.z` the ceiling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub min: Vec3,
    pub max: Vec3,
}

impl Room {
    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }

    /// Where a ray from inside the room leaves it.
    pub fn exit(&self, origin: Vec3, dir: Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let faces = [
            (dir.x, self.min.x - origin.x, EntityId::Wall(0)),
            (dir.x, self.max.x - origin.x, EntityId::Wall(1)),
            (dir.y, self.min.y - origin.y, EntityId::Wall(2)),
            (dir.y, self.max.y - origin.y, EntityId::Wall(3)),
            (dir.z, self.min.z - origin.z, EntityId::Floor),
            (dir.z, self.max.z - origin.z, EntityId::Ceiling),
        ];
        for (d, gap, entity) in faces {
            if d.abs() < 1e-15 {
                continue;
            }
            let t = gap / d;
            if t > RAY_EPS && best.map_or(true, |b| t < b.distance) {
                best = Some(Hit { entity, distance: t });
            }
        }
        best
    }
}

/// Identity of anything a ray can hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityId {
    Floor,
    Ceiling,
    Wall(u8),
    Landmark(usize),
    Referent(usize),
    Figure(Role),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub entity: EntityId,
    pub distance: f64,
}

/// Stylized articulated human figure standing at a camera pose: head
/// sphere around the camera, torso, two arms, two legs.
#[derive(Clone, Debug)]
pub struct Figure {
    pub head: Sphere,
    pub parts: Vec<OrientedBox>,
}

impl Figure {
    pub const HEAD_RADIUS: f64 = 0.11;

    pub fn at(pose: &Pose) -> Self {
        let eye = pose.position;
        let h = eye.z;
        let (f, _, _) = Pose::level(eye, pose.yaw).basis();
        let head = Sphere {
            center: eye - f * 0.03,
            radius: Self::HEAD_RADIUS,
        };
        let base = Vec3::new(eye.x, eye.y, 0.0) - f * 0.03;
        let yaw = pose.yaw;
        let part = |local: Vec3, half: Vec3| OrientedBox {
            center: base + local.rotate_z(yaw),
            half,
            yaw,
        };
        let hip = (h - 0.75).max(0.3);
        let shoulder = h - 0.2;
        let torso_half = ((shoulder - hip) * 0.5).max(0.05);
        let leg_half = hip * 0.5;
        let arm_top = shoulder;
        let arm_half = ((arm_top - (hip - 0.05)) * 0.5).max(0.05);
        let parts = vec![
            part(
                Vec3::new(0.0, 0.0, hip + torso_half),
                Vec3::new(0.11, 0.19, torso_half),
            ),
            part(Vec3::new(0.0, 0.1, leg_half), Vec3::new(0.07, 0.07, leg_half)),
            part(Vec3::new(0.0, -0.1, leg_half), Vec3::new(0.07, 0.07, leg_half)),
            part(
                Vec3::new(0.0, 0.25, arm_top - arm_half),
                Vec3::new(0.05, 0.05, arm_half),
            ),
            part(
                Vec3::new(0.0, -0.25, arm_top - arm_half),
                Vec3::new(0.05, 0.05, arm_half),
            ),
        ];
        Self { head, parts }
    }

    /// Points used to decide whether the figure is seen: head center first.
    pub fn probe_points(&self) -> Vec<Vec3> {
        let mut pts = vec![self.head.center];
        pts.extend(self.parts.iter().map(|b| b.center));
        pts
    }

    pub fn distance(&self, p: Vec3) -> f64 {
        let head = (p.distance(self.head.center) - self.head.radius).max(0.0);
        self.parts
            .iter()
            .map(|b| b.distance(p))
            .fold(head, f64::min)
    }
}

/// Everything opaque in a scene, flattened for ray casting. A linear scan
/// is fast enough at this primitive count.
#[derive(Clone, Debug)]
pub struct World {
    pub room: Room,
    pub boxes: Vec<(EntityId, OrientedBox)>,
    pub spheres: Vec<(EntityId, Sphere)>,
}

impl World {
    pub fn new(room: Room) -> Self {
        Self {
            room,
            boxes: Vec::new(),
            spheres: Vec::new(),
        }
    }

    pub fn with_landmarks<'a>(mut self, boxes: impl IntoIterator<Item = (usize, &'a OrientedBox)>) -> Self {
        self.boxes
            .extend(boxes.into_iter().map(|(i, b)| (EntityId::Landmark(i), *b)));
        self
    }

    pub fn with_referents(mut self, referents: &[Sphere]) -> Self {
        self.spheres.extend(
            referents
                .iter()
                .enumerate()
                .map(|(i, s)| (EntityId::Referent(i), *s)),
        );
        self
    }

    pub fn with_figure(mut self, role: Role, pose: &Pose) -> Self {
        let fig = Figure::at(pose);
        self.spheres.push((EntityId::Figure(role), fig.head));
        self.boxes
            .extend(fig.parts.into_iter().map(|b| (EntityId::Figure(role), b)));
        self
    }

    /// Closest hit along a unit-direction ray. Parts of the figure named
    /// by `ignore` are transparent (an agent does not see its own body).
    pub fn cast(&self, origin: Vec3, dir: Vec3, ignore: Option<Role>) -> Option<Hit> {
        let skip = |e: &EntityId| matches!((e, ignore), (EntityId::Figure(r), Some(i)) if *r == i);
        let mut best = if self.room.contains(origin) {
            self.room.exit(origin, dir)
        } else {
            None
        };
        let mut consider = |entity: EntityId, t: Option<f64>| {
            if let Some(t) = t {
                if best.map_or(true, |b| t < b.distance) {
                    best = Some(Hit { entity, distance: t });
                }
            }
        };
        for (e, b) in &self.boxes {
            if !skip(e) {
                consider(*e, b.intersect(origin, dir));
            }
        }
        for (e, s) in &self.spheres {
            if !skip(e) {
                consider(*e, s.intersect(origin, dir));
            }
        }
        best
    }

    /// True when nothing opaque lies strictly between the camera and `p`.
    pub fn surface_point_visible(&self, pose: &Pose, viewer: Role, p: Vec3) -> bool {
        if !pose.in_frustum(p) {
            return false;
        }
        let d = p - pose.position;
        let dist = d.norm();
        match self.cast(pose.position, d * (1.0 / dist), Some(viewer)) {
            Some(hit) => hit.distance >= dist - SURFACE_TOL,
            None => true,
        }
    }

    /// True when the first thing hit on the way to `p` is `target`.
    pub fn entity_point_visible(&self, pose: &Pose, viewer: Role, target: EntityId, p: Vec3) -> bool {
        if !pose.in_frustum(p) {
            return false;
        }
        let d = p - pose.position;
        let dist = d.norm();
        if dist <= RAY_EPS {
            return false;
        }
        matches!(self.cast(pose.position, d * (1.0 / dist), Some(viewer)), Some(h) if h.entity == target)
    }
}

/// Ray cast against a world; `None` is a valid miss.
pub fn cast_ray(origin: Vec3, direction: Vec3, world: &World) -> Option<Hit> {
    world.cast(origin, direction, None)
}

/// Deterministic spherical Fibonacci lattice of unit vectors.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// The shared 256-point lattice.
pub fn surface_lattice() -> &'static [Vec3] {
    static LATTICE: OnceLock<Vec<Vec3>> = OnceLock::new();
    LATTICE.get_or_init(|| fibonacci_sphere(SURFACE_SAMPLES))
}

/// Per-lattice-point visibility of a sphere from an agent camera.
pub fn sphere_visibility_mask(world: &World, pose: &Pose, viewer: Role, sphere: &Sphere) -> Vec<bool> {
    surface_lattice()
        .iter()
        .map(|u| world.surface_point_visible(pose, viewer, sphere.center + *u * sphere.radius))
        .collect()
}

/// Early-exit test for `visible fraction ≥ min_fraction`. Agrees exactly
/// with thresholding [`sphere_visible_fraction`].
pub fn sphere_visible_at_least(world: &World, pose: &Pose, viewer: Role, sphere: &Sphere, min_fraction: f64) -> bool {
    let lattice = surface_lattice();
    let n = lattice.len();
    let need = (min_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let (mut seen, mut left) = (0usize, n);
    for u in lattice {
        if seen >= need {
            return true;
        }
        if seen + left < need {
            return false;
        }
        left -= 1;
        if world.surface_point_visible(pose, viewer, sphere.center + *u * sphere.radius) {
            seen += 1;
        }
    }
    seen >= need
}

pub fn mask_fraction(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&v| v).count() as f64 / mask.len() as f64
}

/// Fraction of the sphere's lattice points inside the frustum and unoccluded.
pub fn sphere_visible_fraction(world: &World, pose: &Pose, viewer: Role, sphere: &Sphere) -> f64 {
    mask_fraction(&sphere_visibility_mask(world, pose, viewer, sphere))
}

/// Intersection over union of two equal-length masks; 0 when the union is empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Surface sample points of a box: a 4×4 grid on each face, nudged outward.
pub fn box_surface_points(b: &OrientedBox) -> Vec<Vec3> {
    const G: usize = 4;
    let mut pts = Vec::with_capacity(6 * G * G);
    let h = [b.half.x, b.half.y, b.half.z];
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..G {
                for j in 0..G {
                    let s = (i as f64 + 0.5) / G as f64 * 2.0 - 1.0;
                    let t = (j as f64 + 0.5) / G as f64 * 2.0 - 1.0;
                    let mut l = [0.0; 3];
                    l[axis] = sign * (h[axis] + 1e-4);
                    l[ua] = s * h[ua];
                    l[va] = t * h[va];
                    pts.push(b.from_local(Vec3::new(l[0], l[1], l[2])));
                }
            }
        }
    }
    pts
}

/// Fraction of a box's surface samples that an agent sees.
pub fn box_visible_fraction(world: &World, pose: &Pose, viewer: Role, b: &OrientedBox) -> f64 {
    let pts = box_surface_points(b);
    let seen = pts
        .iter()
        .filter(|p| world.surface_point_visible(pose, viewer, **p))
        .count();
    seen as f64 / pts.len() as f64
}

/// Fraction of a partner figure's probe points the viewer sees.
pub fn figure_visible_fraction(world: &World, pose: &Pose, viewer: Role, partner: &Pose) -> f64 {
    let fig = Figure::at(partner);
    let pts = fig.probe_points();
    let target = EntityId::Figure(viewer.other());
    let seen = pts
        .iter()
        .filter(|p| world.entity_point_visible(pose, viewer, target, **p))
        .count();
    seen as f64 / pts.len() as f64
}

/// Whether the viewer sees the partner's head (the partner's camera).
pub fn partner_camera_visible(world: &World, pose: &Pose, viewer: Role, partner: &Pose) -> bool {
    let head = Figure::at(partner).head.center;
    world.entity_point_visible(pose, viewer, EntityId::Figure(viewer.other()), head)
}
