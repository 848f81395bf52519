//! Independent reference implementations used to cross-check the library.
//! They share no code with the modules under test beyond plain data types.
#![allow(dead_code)]

use embref_core::geom::{EntityId, OrientedBox, Pose, Role, Sphere, Vec3, World};
use embref_core::language::{Anchor, ExpressionAst, Frame, Relation, ResolveInput};

/// Brute-force ray cast: every primitive is intersected with its own
/// textbook method and the nearest positive hit wins.
pub fn brute_cast(world: &World, origin: Vec3, dir: Vec3) -> Option<(EntityId, f64)> {
    brute_cast_ignoring(world, origin, dir, None)
}

/// As [`brute_cast`], with one agent's own figure transparent.
pub fn brute_cast_ignoring(world: &World, origin: Vec3, dir: Vec3, ignore: Option<Role>) -> Option<(EntityId, f64)> {
    let skip = |e: &EntityId| ignore.is_some_and(|r| *e == EntityId::Figure(r));
    let mut hits: Vec<(EntityId, f64)> = Vec::new();
    let r = &world.room;
    let inside = origin.x >= r.min.x
        && origin.x <= r.max.x
        && origin.y >= r.min.y
        && origin.y <= r.max.y
        && origin.z >= r.min.z
        && origin.z <= r.max.z;
    if inside {
        let planes = [
            (EntityId::Wall(0), Vec3::new(1.0, 0.0, 0.0), r.min.x),
            (EntityId::Wall(1), Vec3::new(1.0, 0.0, 0.0), r.max.x),
            (EntityId::Wall(2), Vec3::new(0.0, 1.0, 0.0), r.min.y),
            (EntityId::Wall(3), Vec3::new(0.0, 1.0, 0.0), r.max.y),
            (EntityId::Floor, Vec3::new(0.0, 0.0, 1.0), r.min.z),
            (EntityId::Ceiling, Vec3::new(0.0, 0.0, 1.0), r.max.z),
        ];
        for (e, n, d) in planes {
            let denom = n.dot(dir);
            if denom.abs() < 1e-15 {
                continue;
            }
            let t = (d - n.dot(origin)) / denom;
            if t > 1e-9 {
                hits.push((e, t));
            }
        }
    }
    for (e, b) in world.boxes.iter().filter(|(e, _)| !skip(e)) {
        if let Some(t) = box_by_faces(b, origin, dir) {
            hits.push((*e, t));
        }
    }
    for (e, s) in world.spheres.iter().filter(|(e, _)| !skip(e)) {
        if let Some(t) = sphere_geometric(s, origin, dir) {
            hits.push((*e, t));
        }
    }
    hits.into_iter().min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Sphere hit via the closest-approach construction.
pub fn sphere_geometric(s: &Sphere, o: Vec3, d: Vec3) -> Option<f64> {
    let l = s.center - o;
    let tca = l.dot(d);
    let d2 = l.dot(l) - tca * tca;
    let r2 = s.radius * s.radius;
    if d2 > r2 {
        return None;
    }
    let thc = (r2 - d2).sqrt();
    let (t0, t1) = (tca - thc, tca + thc);
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}

/// Box hit by intersecting the six face planes and keeping hits that land
/// inside the face rectangle.
pub fn box_by_faces(b: &OrientedBox, o: Vec3, d: Vec3) -> Option<f64> {
    let (s, c) = b.yaw.to_radians().sin_cos();
    let axes = [Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0), Vec3::new(0.0, 0.0, 1.0)];
    let half = [b.half.x, b.half.y, b.half.z];
    let mut best: Option<f64> = None;
    for k in 0..3 {
        for sign in [-1.0, 1.0] {
            let n = axes[k] * sign;
            let p0 = b.center + n * half[k];
            let denom = n.dot(d);
            if denom.abs() < 1e-15 {
                continue;
            }
            let t = (p0 - o).dot(n) / denom;
            if t <= 1e-9 {
                continue;
            }
            let q = o + d * t - b.center;
            let ok = (0..3).all(|j| j == k || q.dot(axes[j]).abs() <= half[j] + 1e-9);
            if ok && best.map_or(true, |x| t < x) {
                best = Some(t);
            }
        }
    }
    best
}

fn bearing(pose: &Pose, p: Vec3) -> f64 {
    // Angle to the right of the heading, from the world-frame heading vector.
    let h = pose.yaw.to_radians();
    let fwd = (h.cos(), h.sin());
    let v = (p.x - pose.position.x, p.y - pose.position.y);
    let ahead = v.0 * fwd.0 + v.1 * fwd.1;
    let right = v.0 * fwd.1 - v.1 * fwd.0;
    right.atan2(ahead)
}

fn depth(pose: &Pose, p: Vec3) -> f64 {
    let h = pose.yaw.to_radians();
    (p.x - pose.position.x) * h.cos() + (p.y - pose.position.y) * h.sin()
}

fn obb_distance(b: &OrientedBox, p: Vec3) -> f64 {
    let (s, c) = (-b.yaw).to_radians().sin_cos();
    let d = p - b.center;
    let lx = d.x * c - d.y * s;
    let ly = d.x * s + d.y * c;
    let ex = (lx.abs() - b.half.x).max(0.0);
    let ey = (ly.abs() - b.half.y).max(0.0);
    let ez = (d.z.abs() - b.half.z).max(0.0);
    (ex * ex + ey * ey + ez * ez).sqrt()
}

fn seg_dist(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = (b.x - a.x, b.y - a.y);
    let ap = (p.x - a.x, p.y - a.y);
    let l2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if l2 == 0.0 { 0.0 } else { ((ap.0 * ab.0 + ap.1 * ab.1) / l2).clamp(0.0, 1.0) };
    ((ap.0 - t * ab.0).powi(2) + (ap.1 - t * ab.1).powi(2)).sqrt()
}

/// Crisp interpretation of an expression. Returns the unique referent it
/// picks when the case is unambiguous (clear superlative winner, or exactly
/// one referent clearly satisfying a threshold relation), else `None`.
pub fn hard_rule(ast: &ExpressionAst, input: &ResolveInput<'_>) -> Option<usize> {
    use Relation::*;
    let r = input.referents;
    let n = r.len();
    let speaker_needed = ast.frame == Frame::Speaker || ast.anchor == Anchor::SelfAgent;
    if speaker_needed && input.speaker.is_none() {
        return None;
    }
    let visible = |c| input.visible_landmarks.contains(&c);
    let lm = match ast.anchor {
        Anchor::Landmark(c) if visible(c) => input.landmarks.iter().find(|l| l.category == c),
        Anchor::Landmark(_) => return None,
        _ => None,
    };
    let pose = match ast.frame {
        Frame::Speaker => input.speaker.unwrap(),
        _ => input.viewer,
    };
    let others = |i: usize| (0..n).filter(move |&j| j != i);
    // (score, winner must lead by at least this much)
    let superlative = |v: Vec<f64>, gap: f64| -> Option<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| v[*b].total_cmp(&v[*a]));
        (v[idx[0]] - v[idx[1]] >= gap).then_some(idx[0])
    };
    // Exactly one referent satisfies `v > 0`, all clear of the boundary.
    let threshold = |v: Vec<f64>, tol: f64| -> Option<usize> {
        if v.iter().any(|x| x.abs() < tol) {
            return None;
        }
        let yes: Vec<usize> = (0..n).filter(|&i| v[i] > 0.0).collect();
        (yes.len() == 1).then(|| yes[0])
    };
    let angle_gap = 4f64.to_radians();
    match ast.relation {
        Nearest | ClosestTo | FarthestFrom => {
            let far = ast.relation == FarthestFrom;
            let d: Vec<f64> = match ast.anchor {
                Anchor::OtherReferents => (0..n)
                    .map(|i| others(i).map(|j| r[i].distance(r[j])).sum::<f64>() / (n - 1) as f64)
                    .collect(),
                Anchor::Landmark(_) => {
                    let c = lm?.bbox.center;
                    r.iter().map(|p| p.distance(c)).collect()
                }
                Anchor::SelfAgent => r.iter().map(|p| p.horizontal_distance(input.speaker.unwrap().position)).collect(),
                _ => r.iter().map(|p| p.horizontal_distance(input.viewer.position)).collect(),
            };
            superlative(d.into_iter().map(|x| if far { x } else { -x }).collect(), 0.15)
        }
        NextTo => match lm {
            Some(l) => threshold(r.iter().map(|p| 0.5 - obb_distance(&l.bbox, *p)).collect(), 0.05),
            None => threshold(
                (0..n)
                    .map(|i| 0.5 - others(i).map(|j| r[i].distance(r[j])).sum::<f64>() / (n - 1) as f64)
                    .collect(),
                0.05,
            ),
        },
        Between => match (lm, ast.secondary) {
            (Some(a), Some(Anchor::Landmark(c))) => {
                if !visible(c) {
                    return None;
                }
                let b = input.landmarks.iter().find(|l| l.category == c)?;
                superlative(r.iter().map(|p| -seg_dist(*p, a.bbox.center, b.bbox.center)).collect(), 0.15)
            }
            _ => superlative(
                (0..n)
                    .map(|i| {
                        let o: Vec<usize> = others(i).collect();
                        -seg_dist(r[i], r[o[0]], r[o[1]])
                    })
                    .collect(),
                0.15,
            ),
        },
        Leftmost | Rightmost | Middle => {
            let b: Vec<f64> = r.iter().map(|p| bearing(&pose, *p)).collect();
            match ast.relation {
                Leftmost => superlative(b.iter().map(|x| -x).collect(), angle_gap),
                Rightmost => superlative(b, angle_gap),
                _ => {
                    // The middle one has one neighbor on each side.
                    let mid = (0..n).find(|&i| {
                        let left = others(i).filter(|&j| b[j] < b[i] - angle_gap).count();
                        let right = others(i).filter(|&j| b[j] > b[i] + angle_gap).count();
                        left == 1 && right == 1
                    });
                    mid
                }
            }
        }
        LeftOf | RightOf | InFrontOf | Behind => {
            let lateral = matches!(ast.relation, LeftOf | RightOf);
            let positive = matches!(ast.relation, RightOf | InFrontOf);
            if let (Some(l), Frame::AnchorIntrinsic) = (lm, ast.frame) {
                let (s, c) = l.bbox.yaw.to_radians().sin_cos();
                let front = Vec3::new(c, s, 0.0);
                let right = Vec3::new(s, -c, 0.0);
                let v = r
                    .iter()
                    .map(|p| {
                        let d = *p - l.bbox.center;
                        let (axis, half) = if lateral { (right, l.bbox.half.y) } else { (front, l.bbox.half.x) };
                        let along = d.dot(axis);
                        if positive {
                            along - half
                        } else {
                            -along - half
                        }
                    })
                    .collect();
                return threshold(v, 0.05);
            }
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let p = r[i];
                    if lateral {
                        let ref_b = match (ast.anchor, lm) {
                            (_, Some(l)) => bearing(&pose, l.bbox.center),
                            (Anchor::OtherReferents, _) => {
                                others(i).map(|j| bearing(&pose, r[j])).sum::<f64>() / (n - 1) as f64
                            }
                            _ => 0.0,
                        };
                        let x = bearing(&pose, p) - ref_b;
                        if positive {
                            x
                        } else {
                            -x
                        }
                    } else {
                        let ref_d = match (ast.anchor, lm) {
                            (_, Some(l)) => depth(&pose, l.bbox.center),
                            (Anchor::OtherReferents, _) => {
                                others(i).map(|j| depth(&pose, r[j])).sum::<f64>() / (n - 1) as f64
                            }
                            _ => 0.0,
                        };
                        let x = ref_d - depth(&pose, p);
                        if positive {
                            x
                        } else {
                            -x
                        }
                    }
                })
                .collect();
            let tol = if lateral { 3f64.to_radians() } else { 0.1 };
            threshold(v, tol)
        }
    }
}

/// Monte Carlo visible fraction of a sphere: uniformly random surface
/// points, an independent frustum test and [`brute_cast_ignoring`].
pub fn monte_carlo_visibility(world: &World, pose: &Pose, viewer: Role, s: &Sphere, n: usize, seed: u64) -> f64 {
    let mut state = seed | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let h = pose.yaw.to_radians();
    let fwd = Vec3::new(h.cos(), h.sin(), 0.0);
    let right = Vec3::new(h.sin(), -h.cos(), 0.0);
    let mut seen = 0usize;
    for _ in 0..n {
        let z = 2.0 * next() - 1.0;
        let phi = 2.0 * std::f64::consts::PI * next();
        let rxy = (1.0 - z * z).sqrt();
        let p = s.center + Vec3::new(rxy * phi.cos(), rxy * phi.sin(), z) * s.radius;
        let d = p - pose.position;
        let (cz, cx, cy) = (d.dot(fwd), d.dot(right), d.z);
        if cz <= 0.0 || cx.abs() > cz || cy.abs() > cz {
            continue;
        }
        let dist = d.norm();
        match brute_cast_ignoring(world, pose.position, d * (1.0 / dist), Some(viewer)) {
            Some((_, t)) if t < dist - 1e-6 => {}
            _ => seen += 1,
        }
    }
    seen as f64 / n as f64
}
