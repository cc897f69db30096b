//! Deterministic software rasterizer with per-eye occluder opacity.
//!
//! A frame is drawn in two passes. Opaque triangles are z-buffered (nearest
//! fragment wins). The occluder is then drawn back to front, depth tested
//! against the opaque depth without writing it, and every surviving fragment is
//! blended over the framebuffer with the alpha chosen for the eye being drawn.
//!
//! Vertices are snapped to a fixed-point grid of `1 / 2^SUBPIXEL_BITS` pixels so
//! coverage is decided with exact integer edge functions. Pixel centres are
//! sampled and ties on an edge follow the top-left rule.

use crate::math::{Mat4, Rgb, Vec3};
use crate::scene::{animate, ndc_to_screen, AlphaRole, Scene, StereoRig, Texture};
use serde::{Deserialize, Serialize};

pub const SUBPIXEL_BITS: u32 = 8;
pub const SUBPIXEL_SCALE: i64 = 1 << SUBPIXEL_BITS;

/// Clear colour behind the scene.
pub const BACKGROUND: Rgb = Rgb::new(0.08, 0.08, 0.08);

/// Depth buffer clear value (the far plane).
pub const FAR_DEPTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub const BOTH: [Eye; 2] = [Eye::Left, Eye::Right];

    /// Stereo eye index: 0 for left, 1 for right.
    pub fn index(self) -> u32 {
        match self {
            Eye::Left => 0,
            Eye::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Eye::Left => "left",
            Eye::Right => "right",
        }
    }
}

/// Opacity controls for the occluder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpacityState {
    pub left_alpha: f64,
    pub right_alpha: f64,
    pub dichoptic_enabled: bool,
}

impl OpacityState {
    /// Alphas are clamped to `[0, 1]`; NaN becomes 0.
    pub fn new(left_alpha: f64, right_alpha: f64, dichoptic_enabled: bool) -> Self {
        Self {
            left_alpha: clamp_unit(left_alpha),
            right_alpha: clamp_unit(right_alpha),
            dichoptic_enabled,
        }
    }

    pub fn uniform(alpha: f64) -> Self {
        Self::new(alpha, alpha, false)
    }

    pub fn clamped(self) -> Self {
        Self::new(self.left_alpha, self.right_alpha, self.dichoptic_enabled)
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Alpha used for the occluder when drawing `eye`.
///
/// With the dichoptic flag off both eyes use the left alpha. With it on the
/// eye index selects between the two: `right * i + left * (1 - i)`.
pub fn resolve_alpha(eye: Eye, state: OpacityState) -> f64 {
    let state = state.clamped();
    let mut alpha = state.left_alpha;
    if state.dichoptic_enabled {
        let index = eye.index() as f64;
        alpha = state.right_alpha * index + state.left_alpha * (1.0 - index);
    }
    alpha
}

/// The "over" operator: `alpha * src + (1 - alpha) * dst` per channel.
pub fn blend_over(src: Rgb, alpha: f64, dst: Rgb) -> Rgb {
    let mix = |s: f64, d: f64| alpha * s + (1.0 - alpha) * d;
    Rgb::new(mix(src.r, dst.r), mix(src.g, dst.g), mix(src.b, dst.b))
}

pub fn quantize(channel: f64) -> u8 {
    (clamp_unit(channel) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    width: usize,
    height: usize,
    color: Vec<Rgb>,
    depth: Vec<f64>,
}

impl Framebuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            color: vec![BACKGROUND; width * height],
            depth: vec![FAR_DEPTH; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.color[y * self.width + x]
    }

    pub fn depth(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.color
    }

    /// 8-bit RGBA, row-major, top row first; alpha is always 255.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.color.len() * 4);
        for c in &self.color {
            out.extend([quantize(c.r), quantize(c.g), quantize(c.b), 255]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoFrame {
    pub left: Framebuffer,
    pub right: Framebuffer,
    pub time: f64,
    pub opacity: OpacityState,
}

impl StereoFrame {
    pub fn eye(&self, eye: Eye) -> &Framebuffer {
        match eye {
            Eye::Left => &self.left,
            Eye::Right => &self.right,
        }
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }
}

/// A projected vertex: fixed-point screen position plus the attributes needed
/// for depth and perspective-correct UV interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub x: i64,
    pub y: i64,
    /// Normalised device depth in `[0, 1]`, affine in screen space.
    pub depth: f64,
    pub inv_w: f64,
    pub u_over_w: f64,
    pub v_over_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawTriangle {
    /// Stable identity, independent of submission order.
    pub id: u32,
    pub vertices: [ScreenVertex; 3],
    pub texture: Texture,
    pub role: AlphaRole,
    /// Mean eye-space distance of the three vertices.
    pub centroid_depth: f64,
    pub front_facing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawList {
    pub width: usize,
    pub height: usize,
    pub triangles: Vec<DrawTriangle>,
}

/// Edge function of `p` against the directed edge `a -> b`, in fixed point.
/// Positive when `p` is on the interior side for the orientation used here.
#[inline]
pub fn edge(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> i64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Top-left rule for a positively oriented triangle in y-down screen space.
#[inline]
fn is_top_left(a: (i64, i64), b: (i64, i64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    dy < 0 || (dy == 0 && dx > 0)
}

/// Project every triangle of the posed scene for one eye.
///
/// Triangles with a vertex on or behind the near plane are dropped: there is no
/// near-plane clipping, the experiment scene always sits in front of the rig.
pub fn build_draw_list(
    scene: &Scene,
    rig: &StereoRig,
    eye: Eye,
    width: usize,
    height: usize,
) -> DrawList {
    let eye_tf = rig.eye_transforms(eye);
    let mut triangles = Vec::new();
    let mut next_id = 0u32;
    for object in scene.objects() {
        let model = scene.model_matrix(object);
        let model_view: Mat4 = eye_tf.view * model;
        let mesh = &object.mesh;
        let projected: Vec<Option<(ScreenVertex, f64)>> = mesh
            .vertices()
            .iter()
            .zip(mesh.uvs())
            .map(|(&v, uv)| {
                project(
                    &model_view,
                    &eye_tf.projection,
                    v,
                    *uv,
                    rig.near,
                    width,
                    height,
                )
            })
            .collect();
        for tri in mesh.triangles() {
            let id = next_id;
            next_id += 1;
            let [a, b, c] = tri.map(|i| projected[i as usize]);
            let (Some(a), Some(b), Some(c)) = (a, b, c) else {
                continue;
            };
            let verts = [a.0, b.0, c.0];
            let area = edge(
                (verts[0].x, verts[0].y),
                (verts[1].x, verts[1].y),
                (verts[2].x, verts[2].y),
            );
            if area == 0 {
                continue;
            }
            triangles.push(DrawTriangle {
                id,
                vertices: verts,
                texture: mesh.material.texture,
                role: mesh.material.role,
                centroid_depth: (a.1 + b.1 + c.1) / 3.0,
                // Counter-clockwise in world becomes clockwise once y points down.
                front_facing: area < 0,
            });
        }
    }
    DrawList {
        width,
        height,
        triangles,
    }
}

fn project(
    model_view: &Mat4,
    projection: &Mat4,
    v: Vec3,
    uv: [f64; 2],
    near: f64,
    width: usize,
    height: usize,
) -> Option<(ScreenVertex, f64)> {
    let view_pos = model_view.transform(v.extend(1.0));
    let distance = -view_pos.z;
    if distance <= near {
        return None;
    }
    let clip = projection.transform(view_pos);
    let inv_w = 1.0 / clip.w;
    let ndc_x = clip.x * inv_w;
    let ndc_y = clip.y * inv_w;
    let [sx, sy] = ndc_to_screen(ndc_x, ndc_y, width, height);
    let snap = |s: f64| (s * SUBPIXEL_SCALE as f64).round() as i64;
    Some((
        ScreenVertex {
            x: snap(sx),
            y: snap(sy),
            depth: clip.z * inv_w,
            inv_w,
            u_over_w: uv[0] * inv_w,
            v_over_w: uv[1] * inv_w,
        },
        distance,
    ))
}

/// One covered pixel of a triangle.
#[derive(Debug, Clone, Copy)]
struct Fragment {
    x: usize,
    y: usize,
    depth: f64,
    color: Rgb,
}

/// Visit every pixel centre covered by `tri`, in row-major order.
fn for_each_fragment(tri: &DrawTriangle, width: usize, height: usize, mut f: impl FnMut(Fragment)) {
    let mut v = tri.vertices;
    let p = |sv: &ScreenVertex| (sv.x, sv.y);
    let mut area = edge(p(&v[0]), p(&v[1]), p(&v[2]));
    if area < 0 {
        v.swap(1, 2);
        area = -area;
    }
    let (p0, p1, p2) = (p(&v[0]), p(&v[1]), p(&v[2]));

    let half = SUBPIXEL_SCALE / 2;
    let min_x = p0.0.min(p1.0).min(p2.0);
    let max_x = p0.0.max(p1.0).max(p2.0);
    let min_y = p0.1.min(p1.1).min(p2.1);
    let max_y = p0.1.max(p1.1).max(p2.1);
    // Pixel i has its centre at i * S + S/2.
    let first = |lo: i64| ((lo - half) as f64 / SUBPIXEL_SCALE as f64).ceil().max(0.0) as i64;
    let last = |hi: i64, n: usize| {
        (((hi - half) as f64 / SUBPIXEL_SCALE as f64).floor() as i64).min(n as i64 - 1)
    };
    let (x0, x1) = (first(min_x), last(max_x, width));
    let (y0, y1) = (first(min_y), last(max_y, height));
    if x0 > x1 || y0 > y1 {
        return;
    }

    let bias = |a, b| if is_top_left(a, b) { 0 } else { 1 };
    let bias0 = bias(p1, p2);
    let bias1 = bias(p2, p0);
    let bias2 = bias(p0, p1);
    let area_f = area as f64;

    for py in y0..=y1 {
        let cy = py * SUBPIXEL_SCALE + half;
        for px in x0..=x1 {
            let c = (px * SUBPIXEL_SCALE + half, cy);
            let w0 = edge(p1, p2, c);
            let w1 = edge(p2, p0, c);
            let w2 = edge(p0, p1, c);
            if w0 < bias0 || w1 < bias1 || w2 < bias2 {
                continue;
            }
            let (l0, l1, l2) = (w0 as f64 / area_f, w1 as f64 / area_f, w2 as f64 / area_f);
            let depth = l0 * v[0].depth + l1 * v[1].depth + l2 * v[2].depth;
            if !(0.0..=1.0).contains(&depth) {
                continue;
            }
            let inv_w = l0 * v[0].inv_w + l1 * v[1].inv_w + l2 * v[2].inv_w;
            let u = (l0 * v[0].u_over_w + l1 * v[1].u_over_w + l2 * v[2].u_over_w) / inv_w;
            let t = (l0 * v[0].v_over_w + l1 * v[1].v_over_w + l2 * v[2].v_over_w) / inv_w;
            f(Fragment {
                x: px as usize,
                y: py as usize,
                depth,
                color: tri.texture.sample(u, t),
            });
        }
    }
}

/// Order in which occluder triangles are blended: back faces before front
/// faces, then farther centroid first, then by id.
pub fn transparent_order(triangles: &[DrawTriangle]) -> Vec<usize> {
    let mut order: Vec<usize> = triangles
        .iter()
        .enumerate()
        .filter(|(_, t)| t.role == AlphaRole::DichopticOccluder)
        .map(|(i, _)| i)
        .collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&triangles[a], &triangles[b]);
        ta.front_facing
            .cmp(&tb.front_facing)
            .then(tb.centroid_depth.total_cmp(&ta.centroid_depth))
            .then(ta.id.cmp(&tb.id))
    });
    order
}

/// Rasterize a prepared draw list with the given occluder alpha.
pub fn rasterize(list: &DrawList, occluder_alpha: f64) -> Framebuffer {
    let alpha = clamp_unit(occluder_alpha);
    let (w, h) = (list.width, list.height);
    let mut fb = Framebuffer::new(w, h);
    // Winning opaque triangle per pixel; equal depths go to the lower id so the
    // result does not depend on submission order.
    let mut owner = vec![u32::MAX; w * h];

    for tri in list
        .triangles
        .iter()
        .filter(|t| t.role == AlphaRole::Opaque)
    {
        for_each_fragment(tri, w, h, |frag| {
            let i = frag.y * w + frag.x;
            let closer =
                frag.depth < fb.depth[i] || (frag.depth == fb.depth[i] && tri.id < owner[i]);
            if closer {
                fb.depth[i] = frag.depth;
                fb.color[i] = frag.color;
                owner[i] = tri.id;
            }
        });
    }

    for idx in transparent_order(&list.triangles) {
        let tri = &list.triangles[idx];
        for_each_fragment(tri, w, h, |frag| {
            let i = frag.y * w + frag.x;
            if frag.depth < fb.depth[i] {
                fb.color[i] = blend_over(frag.color, alpha, fb.color[i]);
            }
        });
    }
    fb
}

/// Render one eye of the scene posed at time `t`.
pub fn render_eye(
    scene: &Scene,
    rig: &StereoRig,
    eye: Eye,
    state: OpacityState,
    t: f64,
    width: usize,
    height: usize,
) -> Framebuffer {
    assert!(width > 0 && height > 0, "framebuffer must be non-empty");
    let posed = animate(scene, t);
    let list = build_draw_list(&posed, rig, eye, width, height);
    rasterize(&list, resolve_alpha(eye, state))
}

/// Render both eyes; the two renders run on separate threads.
pub fn render_stereo(
    scene: &Scene,
    rig: &StereoRig,
    state: OpacityState,
    t: f64,
    width: usize,
    height: usize,
) -> StereoFrame {
    let state = state.clamped();
    let (left, right) = std::thread::scope(|s| {
        let left = s.spawn(|| render_eye(scene, rig, Eye::Left, state, t, width, height));
        let right = render_eye(scene, rig, Eye::Right, state, t, width, height);
        (left.join().expect("left eye render panicked"), right)
    });
    StereoFrame {
        left,
        right,
        time: t,
        opacity: state,
    }
}
