//! Reference renderer shared by the integration tests.
//!
//! It shares only the public scene description and the sampling conventions
//! with the crate (pixel centres, 1/256-pixel vertex snapping, top-left fill,
//! depth in `[0, 1]`). Projection, coverage and compositing are written out
//! independently: every fragment of every triangle is collected per pixel,
//! the nearest opaque fragment is found, and the occluder fragments in front
//! of it are sorted by their own depth and folded with "over".

#![allow(dead_code)]

use dichoptic::raster::BACKGROUND;
use dichoptic::scene::AlphaRole;
use dichoptic::{animate, Eye, Rgb, Scene, StereoRig, Vec3};

pub mod protocol;

const SNAP: f64 = 256.0;

#[derive(Clone, Copy)]
struct Vert {
    x: f64,
    y: f64,
    depth: f64,
    inv_dist: f64,
    u: f64,
    v: f64,
}

#[derive(Clone, Copy)]
pub struct Frag {
    pub depth: f64,
    pub color: Rgb,
    pub occluder: bool,
    pub back_facing: bool,
    pub id: u32,
}

/// Project a world point for an eye at `offset` along the rig's right vector.
/// Returns screen position (pixels, y down), depth in [0, 1] and eye distance.
pub fn project(
    rig: &StereoRig,
    offset: f64,
    p: Vec3,
    width: usize,
    height: usize,
) -> Option<(f64, f64, f64, f64)> {
    let (right, up, back) = rig.pose.basis();
    let eye = rig.pose.position + right * offset;
    let d = p - eye;
    let (xe, ye, dist) = (d.dot(right), d.dot(up), -d.dot(back));
    if dist <= rig.near {
        return None;
    }
    let top = rig.near * (rig.fov_y / 2.0).tan();
    let half_w = top * rig.aspect;
    let centre = -offset * rig.near / rig.convergence_distance;
    let x_near = rig.near * xe / dist;
    let y_near = rig.near * ye / dist;
    let ndc_x = (x_near - centre) / half_w;
    let ndc_y = y_near / top;
    let depth = rig.far * (dist - rig.near) / (dist * (rig.far - rig.near));
    Some((
        (ndc_x + 1.0) / 2.0 * width as f64,
        (1.0 - ndc_y) / 2.0 * height as f64,
        depth,
        dist,
    ))
}

fn orient(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// An edge owns samples lying exactly on it when it is a top edge (horizontal,
/// triangle below it on screen) or a left edge (triangle to its right).
fn owns_boundary(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    if a.1 == b.1 {
        c.1 > a.1
    } else {
        // Sign of (c.x - x_on_edge(c.y)), without dividing.
        let s = ((c.0 - a.0) * (b.1 - a.1) - (c.1 - a.1) * (b.0 - a.0)) * (b.1 - a.1).signum();
        s > 0.0
    }
}

/// All fragments per pixel, for one eye of the scene posed at `t`.
pub fn fragments(
    scene: &Scene,
    rig: &StereoRig,
    eye: Eye,
    t: f64,
    width: usize,
    height: usize,
) -> Vec<Vec<Frag>> {
    let posed = animate(scene, t);
    let offset = rig.eye_offset(eye);
    let mut out: Vec<Vec<Frag>> = vec![Vec::new(); width * height];
    let mut id = 0u32;
    for object in posed.objects() {
        let world = posed.world_vertices(object);
        let mesh = &object.mesh;
        let occluder = mesh.material.role == AlphaRole::DichopticOccluder;
        for tri in mesh.triangles() {
            let this_id = id;
            id += 1;
            let mut v = [Vert {
                x: 0.0,
                y: 0.0,
                depth: 0.0,
                inv_dist: 0.0,
                u: 0.0,
                v: 0.0,
            }; 3];
            let mut visible = true;
            for k in 0..3 {
                let i = tri[k] as usize;
                match project(rig, offset, world[i], width, height) {
                    Some((x, y, depth, dist)) => {
                        let uv = mesh.uvs()[i];
                        v[k] = Vert {
                            x: (x * SNAP).round() / SNAP,
                            y: (y * SNAP).round() / SNAP,
                            depth,
                            inv_dist: 1.0 / dist,
                            u: uv[0],
                            v: uv[1],
                        };
                    }
                    None => visible = false,
                }
            }
            if !visible {
                continue;
            }
            let p = |k: usize| (v[k].x, v[k].y);
            let area = orient(p(0), p(1), p(2));
            if area == 0.0 {
                continue;
            }
            // Mesh winding is counter-clockwise seen from outside with y up,
            // so a visible face has negative area once y points down.
            let back_facing = area > 0.0;
            let edges = [(1, 2, 0), (2, 0, 1), (0, 1, 2)];
            let min_x = v.iter().map(|q| q.x).fold(f64::INFINITY, f64::min);
            let max_x = v.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max);
            let min_y = v.iter().map(|q| q.y).fold(f64::INFINITY, f64::min);
            let max_y = v.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max);
            let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
            let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
            let x1 = ((max_x - 0.5).floor()).min(width as f64 - 1.0);
            let y1 = ((max_y - 0.5).floor()).min(height as f64 - 1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for py in y0..=y1 as usize {
                for px in x0..=x1 as usize {
                    let c = (px as f64 + 0.5, py as f64 + 0.5);
                    let mut lambda = [0.0; 3];
                    let mut inside = true;
                    for (k, &(a, b, o)) in edges.iter().enumerate() {
                        let w = orient(p(a), p(b), c) / area;
                        if w < 0.0 || (w == 0.0 && !owns_boundary(p(a), p(b), p(o))) {
                            inside = false;
                            break;
                        }
                        lambda[k] = w;
                    }
                    if !inside {
                        continue;
                    }
                    let depth: f64 = (0..3).map(|k| lambda[k] * v[k].depth).sum();
                    if !(0.0..=1.0).contains(&depth) {
                        continue;
                    }
                    let inv: f64 = (0..3).map(|k| lambda[k] * v[k].inv_dist).sum();
                    let u = (0..3)
                        .map(|k| lambda[k] * v[k].u * v[k].inv_dist)
                        .sum::<f64>()
                        / inv;
                    let tv = (0..3)
                        .map(|k| lambda[k] * v[k].v * v[k].inv_dist)
                        .sum::<f64>()
                        / inv;
                    out[py * width + px].push(Frag {
                        depth,
                        color: mesh.material.texture.sample(u, tv),
                        occluder,
                        back_facing,
                        id: this_id,
                    });
                }
            }
        }
    }
    out
}

fn over(src: Rgb, a: f64, dst: Rgb) -> Rgb {
    Rgb::new(
        src.r * a + dst.r * (1.0 - a),
        src.g * a + dst.g * (1.0 - a),
        src.b * a + dst.b * (1.0 - a),
    )
}

/// Resolve one pixel's fragments with occluder alpha `alpha`.
pub fn shade(frags: &[Frag], alpha: f64) -> Rgb {
    let opaque = frags
        .iter()
        .filter(|f| !f.occluder && f.depth < 1.0)
        .min_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    let (mut color, limit) = opaque.map_or((BACKGROUND, 1.0), |f| (f.color, f.depth));
    let mut layers: Vec<&Frag> = frags
        .iter()
        .filter(|f| f.occluder && f.depth < limit)
        .collect();
    layers.sort_by(|a, b| {
        b.depth
            .total_cmp(&a.depth)
            .then(b.back_facing.cmp(&a.back_facing))
            .then(a.id.cmp(&b.id))
    });
    for f in layers {
        color = over(f.color, alpha, color);
    }
    color
}

pub fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Oracle image as RGBA8.
pub fn render(
    scene: &Scene,
    rig: &StereoRig,
    eye: Eye,
    alpha: f64,
    t: f64,
    width: usize,
    height: usize,
) -> Vec<u8> {
    fragments(scene, rig, eye, t, width, height)
        .iter()
        .flat_map(|f| {
            let c = shade(f, alpha);
            [to_u8(c.r), to_u8(c.g), to_u8(c.b), 255]
        })
        .collect()
}

/// Largest per-channel difference and the number of differing channels.
pub fn compare(a: &[u8], b: &[u8]) -> (u8, usize) {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold((0, 0), |(max, n), (x, y)| {
        let d = x.abs_diff(*y);
        (max.max(d), n + usize::from(d > 0))
    })
}

/// Pose `k` of a deterministic family of views around the scene.
pub fn test_pose(k: u32) -> (StereoRig, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0000 + k as u64);
    let yaw: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let elevation: f64 = rng.gen_range(-0.6..0.9);
    let distance: f64 = rng.gen_range(3.2..6.0);
    let position = Vec3::new(
        distance * elevation.cos() * yaw.sin(),
        distance * elevation.sin(),
        distance * elevation.cos() * yaw.cos(),
    );
    let rig = StereoRig {
        eye_separation: rng.gen_range(0.0..0.12),
        convergence_distance: distance,
        pose: dichoptic::scene::RigPose::looking_at(position, Vec3::ZERO),
        ..StereoRig::default()
    };
    (rig, rng.gen_range(0.0..30.0))
}
