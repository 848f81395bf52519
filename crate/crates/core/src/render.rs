//! Per-agent observations: a ray-cast raster with role-dependent referent
//! colors, the list of visible entities with camera-frame geometry, and the
//! cheaper structured [`AgentView`] used by the geometric agents.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    box_visible_fraction, partner_camera_visible, surface_lattice, EntityId, Figure, Pose, Role, Vec3, World,
    FOV_DEG,
};
use crate::scenegen::{Category, Scene};

/// Landmarks count as seen by an agent at or above this surface fraction.
pub const LANDMARK_VISIBILITY: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("observation has no visible referents")]
    NoVisibleReferents,
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub hfov: f64,
    pub vfov: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
            hfov: FOV_DEG,
            vfov: FOV_DEG,
        }
    }
}

impl RenderConfig {
    pub fn with_size(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidConfig("image size must be positive".into()));
        }
        if !(self.hfov > 0.0 && self.hfov < 180.0 && self.vfov > 0.0 && self.vfov < 180.0) {
            return Err(RenderError::InvalidConfig("fov must lie in (0, 180)".into()));
        }
        Ok(())
    }

    pub fn fx(&self) -> f64 {
        self.width as f64 * 0.5 / (self.hfov * 0.5).to_radians().tan()
    }

    pub fn fy(&self) -> f64 {
        self.height as f64 * 0.5 / (self.vfov * 0.5).to_radians().tan()
    }
}

/// Pinhole projection to continuous pixel coordinates, `None` outside the
/// image or behind the camera.
pub fn project_point(pose: &Pose, point: Vec3, config: &RenderConfig) -> Option<(f64, f64)> {
    let c = pose.to_camera(point);
    if c.z <= 0.0 {
        return None;
    }
    let (w, h) = (config.width as f64, config.height as f64);
    let u = w * 0.5 + config.fx() * c.x / c.z;
    let v = h * 0.5 - config.fy() * c.y / c.z;
    ((0.0..w).contains(&u) && (0.0..h).contains(&v)).then_some((u, v))
}

/// Unit world-space direction through continuous pixel `(u, v)`.
pub fn pixel_ray(pose: &Pose, u: f64, v: f64, config: &RenderConfig) -> Vec3 {
    let x = (u - config.width as f64 * 0.5) / config.fx();
    let y = (config.height as f64 * 0.5 - v) / config.fy();
    pose.camera_dir_to_world(Vec3::new(x, y, 1.0)).normalized()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Referent,
    Landmark,
    Partner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibleEntity {
    pub id: EntityId,
    pub kind: EntityKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub camera_position: Vec3,
    /// Projected center in pixels.
    pub center: [f64; 2],
    /// Pixel box `[x0, y0, x1, y1)`.
    pub bbox: [f64; 4],
    pub visible_fraction: f64,
    pub pixels: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Observation {
    pub role: Role,
    pub width: u32,
    pub height: u32,
    #[serde(skip)]
    pub raster: Vec<u8>,
    pub entities: Vec<VisibleEntity>,
    pub partner_visible: bool,
}

impl Observation {
    pub fn referents(&self) -> impl Iterator<Item = &VisibleEntity> {
        self.entities.iter().filter(|e| e.kind == EntityKind::Referent)
    }

    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = ((v * self.width + u) * 3) as usize;
        [self.raster[i], self.raster[i + 1], self.raster[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        encode_png(&self.raster, self.width, self.height)
    }
}

pub fn encode_png(rgb: &[u8], width: u32, height: u32) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(rgb)?;
    }
    Ok(out)
}

pub const REFERENT_RED: [u8; 3] = [220, 30, 30];
pub const TARGET_BLUE: [u8; 3] = [30, 60, 230];

fn landmark_color(c: Category) -> [u8; 3] {
    match c {
        Category::Table => [140, 95, 55],
        Category::Shelf => [110, 80, 60],
        Category::Sofa => [70, 110, 90],
        Category::Door => [150, 120, 90],
        Category::Window => [150, 190, 210],
        Category::Rug => [150, 100, 110],
        Category::Lamp => [210, 200, 120],
        Category::Plant => [60, 140, 60],
        Category::Chair => [120, 90, 70],
        Category::Cabinet => [160, 140, 120],
    }
}

fn shade(c: [u8; 3], depth: f64) -> [u8; 3] {
    let k = (1.0 / (1.0 + 0.06 * depth)).max(0.35);
    c.map(|x| (x as f64 * k).round() as u8)
}

fn base_color(scene: &Scene, role: Role, entity: EntityId, point: Vec3) -> [u8; 3] {
    match entity {
        EntityId::Floor => {
            let near = |x: f64| {
                let f = (x / 0.5).rem_euclid(1.0);
                f < 0.02 || f > 0.98
            };
            if near(point.x) || near(point.y) {
                [120, 115, 105]
            } else {
                [170, 160, 145]
            }
        }
        EntityId::Ceiling => [225, 225, 220],
        EntityId::Wall(_) => [200, 195, 185],
        EntityId::Landmark(i) => landmark_color(scene.env.landmarks[i].category),
        EntityId::Referent(i) => {
            if role == Role::Speaker && i == scene.target_index {
                TARGET_BLUE
            } else {
                REFERENT_RED
            }
        }
        EntityId::Figure(r) => {
            let head = Figure::at(scene.pose(r)).head;
            if point.distance(head.center) <= head.radius + 1e-6 {
                [200, 170, 140]
            } else {
                [70, 90, 120]
            }
        }
    }
}

/// First entity hit through each pixel center, row-major.
pub fn id_buffer(scene: &Scene, world: &World, role: Role, config: &RenderConfig) -> Vec<Option<(EntityId, f64)>> {
    let pose = *scene.pose(role);
    let (w, h) = (config.width as usize, config.height as usize);
    (0..h)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..w).map(move |u| {
                let dir = pixel_ray(&pose, u as f64 + 0.5, v as f64 + 0.5, config);
                world.cast(pose.position, dir, Some(role)).map(|hit| (hit.entity, hit.distance))
            })
        })
        .collect()
}

/// Renders one agent's view of a scene.
pub fn render_observation(scene: &Scene, role: Role, config: &RenderConfig) -> Observation {
    let world = scene.world();
    let pose = *scene.pose(role);
    let ids = id_buffer(scene, &world, role, config);
    let (w, h) = (config.width as usize, config.height as usize);
    let mut raster = vec![0u8; w * h * 3];
    raster.par_chunks_mut(w * 3).enumerate().for_each(|(v, row)| {
        for u in 0..w {
            let c = match ids[v * w + u] {
                Some((e, d)) => {
                    let dir = pixel_ray(&pose, u as f64 + 0.5, v as f64 + 0.5, config);
                    shade(base_color(scene, role, e, pose.position + dir * d), d)
                }
                None => [0, 0, 0],
            };
            row[u * 3..u * 3 + 3].copy_from_slice(&c);
        }
    });

    let mut boxes: std::collections::BTreeMap<EntityId, ([usize; 4], usize)> = Default::default();
    for (i, id) in ids.iter().enumerate() {
        let Some((e, _)) = id else { continue };
        if !matches!(e, EntityId::Referent(_) | EntityId::Landmark(_) | EntityId::Figure(_)) {
            continue;
        }
        let (u, v) = (i % w, i / w);
        let entry = boxes.entry(*e).or_insert(([u, v, u, v], 0));
        let b = &mut entry.0;
        b[0] = b[0].min(u);
        b[1] = b[1].min(v);
        b[2] = b[2].max(u);
        b[3] = b[3].max(v);
        entry.1 += 1;
    }
    let to_bbox = |b: [usize; 4]| [b[0] as f64, b[1] as f64, b[2] as f64 + 1.0, b[3] as f64 + 1.0];
    let bbox_center = |b: &[f64; 4]| [(b[0] + b[2]) * 0.5, (b[1] + b[3]) * 0.5];

    let mut entities = Vec::new();
    for (i, r) in scene.referents.iter().enumerate() {
        let id = EntityId::Referent(i);
        let sphere = r.sphere();
        let frac = crate::geom::sphere_visible_fraction(&world, &pose, role, &sphere);
        let hit = boxes.get(&id);
        if hit.is_none() && frac < crate::geom::VISIBILITY_THRESHOLD {
            continue;
        }
        let bbox = match hit {
            Some((b, _)) => to_bbox(*b),
            None => {
                // Too small to catch a pixel center: bound the visible samples.
                let pts: Vec<(f64, f64)> = surface_lattice()
                    .iter()
                    .map(|u| sphere.center + *u * sphere.radius)
                    .filter(|p| world.surface_point_visible(&pose, role, *p))
                    .filter_map(|p| project_point(&pose, p, config))
                    .collect();
                if pts.is_empty() {
                    continue;
                }
                let (x0, x1) = pts.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
                let (y0, y1) = pts.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
                [x0.floor(), y0.floor(), x1.floor() + 1.0, y1.floor() + 1.0]
            }
        };
        let center = project_point(&pose, sphere.center, config)
            .map(|(u, v)| [u, v])
            .unwrap_or_else(|| bbox_center(&bbox));
        entities.push(VisibleEntity {
            id,
            kind: EntityKind::Referent,
            index: Some(i),
            category: None,
            camera_position: pose.to_camera(sphere.center),
            center,
            bbox,
            visible_fraction: frac,
            pixels: hit.map_or(0, |h| h.1),
        });
    }
    for l in &scene.env.landmarks {
        let id = EntityId::Landmark(l.id);
        let Some((b, n)) = boxes.get(&id) else { continue };
        let bbox = to_bbox(*b);
        entities.push(VisibleEntity {
            id,
            kind: EntityKind::Landmark,
            index: Some(l.id),
            category: Some(l.category),
            camera_position: pose.to_camera(l.bbox.center),
            center: project_point(&pose, l.bbox.center, config)
                .map(|(u, v)| [u, v])
                .unwrap_or_else(|| bbox_center(&bbox)),
            bbox,
            visible_fraction: box_visible_fraction(&world, &pose, role, &l.bbox),
            pixels: *n,
        });
    }
    let partner = role.other();
    let partner_pose = scene.pose(partner);
    if let Some((b, n)) = boxes.get(&EntityId::Figure(partner)) {
        let bbox = to_bbox(*b);
        let head = Figure::at(partner_pose).head.center;
        entities.push(VisibleEntity {
            id: EntityId::Figure(partner),
            kind: EntityKind::Partner,
            index: None,
            category: None,
            camera_position: pose.to_camera(head),
            center: project_point(&pose, head, config)
                .map(|(u, v)| [u, v])
                .unwrap_or_else(|| bbox_center(&bbox)),
            bbox,
            visible_fraction: crate::geom::figure_visible_fraction(&world, &pose, role, partner_pose),
            pixels: *n,
        });
    }
    Observation {
        role,
        width: config.width,
        height: config.height,
        raster,
        entities,
        partner_visible: partner_camera_visible(&world, &pose, role, partner_pose),
    }
}

/// Referent whose projected center is nearest to `click` (pixels); ties go
/// to the lower index.
pub fn nearest_rendered_referent(obs: &Observation, click: (f64, f64)) -> Result<usize, RenderError> {
    let mut best: Option<(usize, f64)> = None;
    let mut refs: Vec<&VisibleEntity> = obs.referents().collect();
    refs.sort_by_key(|e| e.index);
    for e in refs {
        let d = (e.center[0] - click.0).hypot(e.center[1] - click.1);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((e.index.unwrap_or(0), d));
        }
    }
    best.map(|b| b.0).ok_or(RenderError::NoVisibleReferents)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferentView {
    pub index: usize,
    pub camera_position: Vec3,
    pub visible_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkView {
    pub id: usize,
    pub category: Category,
    pub visible_fraction: f64,
}

/// What a geometric agent perceives, without rasterizing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub role: Role,
    pub pose: Pose,
    pub referents: Vec<ReferentView>,
    pub landmarks: Vec<LandmarkView>,
    pub partner_visible: bool,
    /// Exact partner pose when the partner's head is in view.
    pub partner_pose: Option<Pose>,
}

impl AgentView {
    pub fn landmark_visible(&self, category: Category) -> bool {
        self.landmarks
            .iter()
            .any(|l| l.category == category && l.visible_fraction >= LANDMARK_VISIBILITY)
    }

    pub fn landmark_fraction(&self, category: Category) -> f64 {
        self.landmarks
            .iter()
            .find(|l| l.category == category)
            .map_or(0.0, |l| l.visible_fraction)
    }
}

pub fn agent_view(scene: &Scene, role: Role) -> AgentView {
    agent_view_in(scene, &scene.world(), role)
}

pub fn agent_view_in(scene: &Scene, world: &World, role: Role) -> AgentView {
    let pose = *scene.pose(role);
    let referents = scene
        .referents
        .iter()
        .enumerate()
        .map(|(i, r)| ReferentView {
            index: i,
            camera_position: pose.to_camera(r.center()),
            visible_fraction: crate::geom::sphere_visible_fraction(world, &pose, role, &r.sphere()),
        })
        .collect();
    let landmarks = scene
        .env
        .landmarks
        .iter()
        .map(|l| LandmarkView {
            id: l.id,
            category: l.category,
            visible_fraction: box_visible_fraction(world, &pose, role, &l.bbox),
        })
        .collect();
    let partner = *scene.pose(role.other());
    let partner_visible = partner_camera_visible(world, &pose, role, &partner);
    AgentView {
        role,
        pose,
        referents,
        landmarks,
        partner_visible,
        partner_pose: partner_visible.then_some(partner),
    }
}
