//! The experiment scene: a textured pyramid nested inside a textured cube,
//! spinning about the world vertical, viewed through an off-axis stereo rig.
//!
//! Everything here is a pure function of the configuration and the time
//! argument, so callers can evaluate scenes from several threads at once.

use crate::math::{Mat4, Rgb, Vec3};
use crate::raster::Eye;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

/// Default configuration file, also documented in the README.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

/// Number of rotation angles sampled when checking that the cube contains the pyramid.
pub const CONTAINMENT_SAMPLES: usize = 360;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    Checker { cells: u32 },
    Stripes { count: u32 },
}

/// Procedural two-colour texture addressed by UV in `[0, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub pattern: Pattern,
    pub colors: [Rgb; 2],
}

impl Texture {
    pub fn sample(&self, u: f64, v: f64) -> Rgb {
        let cell = |t: f64, n: u32| -> u64 {
            let n = n.max(1);
            let i = (t.clamp(0.0, 1.0) * n as f64).floor() as u64;
            i.min(n as u64 - 1)
        };
        let parity = match self.pattern {
            Pattern::Checker { cells } => (cell(u, cells) + cell(v, cells)) % 2,
            Pattern::Stripes { count } => cell(u, count) % 2,
        };
        self.colors[parity as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRole {
    Opaque,
    DichopticOccluder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub texture: Texture,
    pub role: AlphaRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    uvs: Vec<[f64; 2]>,
    pub material: Material,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        uvs: Vec<[f64; 2]>,
        material: Material,
    ) -> Result<Self, SceneError> {
        if uvs.len() != vertices.len() {
            return Err(SceneError::InvalidMesh(format!(
                "{} uvs for {} vertices",
                uvs.len(),
                vertices.len()
            )));
        }
        if let Some(bad) = triangles
            .iter()
            .flatten()
            .find(|&&i| i as usize >= vertices.len())
        {
            return Err(SceneError::InvalidMesh(format!(
                "triangle index {bad} out of range for {} vertices",
                vertices.len()
            )));
        }
        if !uvs.iter().flatten().all(|c| c.is_finite()) {
            return Err(SceneError::InvalidMesh("non-finite uv".into()));
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(SceneError::InvalidMesh("non-finite vertex".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            uvs,
            material,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn uvs(&self) -> &[[f64; 2]] {
        &self.uvs
    }

    /// Axis-aligned cube centred on the origin, four vertices per face so each
    /// face carries its own full `[0,1]²` UV square.
    pub fn cube(half_extent: f64, material: Material) -> Result<Self, SceneError> {
        let h = half_extent;
        // (outward normal, u axis, v axis); u × v = normal keeps faces CCW from outside.
        let faces = [
            (Vec3::X, -Vec3::Z, Vec3::Y),
            (-Vec3::X, Vec3::Z, Vec3::Y),
            (Vec3::Y, Vec3::X, -Vec3::Z),
            (-Vec3::Y, Vec3::X, Vec3::Z),
            (Vec3::Z, Vec3::X, Vec3::Y),
            (-Vec3::Z, -Vec3::X, Vec3::Y),
        ];
        let mut vertices = Vec::with_capacity(24);
        let mut uvs = Vec::with_capacity(24);
        let mut triangles = Vec::with_capacity(12);
        for (n, u, v) in faces {
            let base = vertices.len() as u32;
            for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                vertices.push((n + u * su + v * sv) * h);
                uvs.push([(su + 1.0) / 2.0, (sv + 1.0) / 2.0]);
            }
            triangles.push([base, base + 1, base + 2]);
            triangles.push([base, base + 2, base + 3]);
        }
        Mesh::new(vertices, triangles, uvs, material)
    }

    /// Square pyramid: base of half-width `scale` at `y = -scale`, apex at `y = +scale`.
    pub fn pyramid(scale: f64, material: Material) -> Result<Self, SceneError> {
        let s = scale;
        let apex = Vec3::new(0.0, s, 0.0);
        let corners = [
            Vec3::new(-s, -s, s),
            Vec3::new(s, -s, s),
            Vec3::new(s, -s, -s),
            Vec3::new(-s, -s, -s),
        ];
        let mut vertices = Vec::with_capacity(16);
        let mut uvs = Vec::with_capacity(16);
        let mut triangles = Vec::with_capacity(6);
        for i in 0..4 {
            let base = vertices.len() as u32;
            vertices.extend([corners[i], corners[(i + 1) % 4], apex]);
            uvs.extend([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]]);
            triangles.push([base, base + 1, base + 2]);
        }
        let base = vertices.len() as u32;
        // Base faces down: wind clockwise seen from above.
        vertices.extend([corners[3], corners[2], corners[1], corners[0]]);
        uvs.extend([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        triangles.push([base, base + 1, base + 2]);
        triangles.push([base, base + 2, base + 3]);
        Mesh::new(vertices, triangles, uvs, material)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Radians per second about the world vertical through the origin.
    pub rotation_rate: f64,
    pub pyramid_local_offset: Vec3,
    pub cube_half_extent: f64,
    pub pyramid_scale: f64,
    pub cube_texture: Texture,
    pub pyramid_texture: Texture,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rotation_rate: 0.25,
            pyramid_local_offset: Vec3::ZERO,
            cube_half_extent: 1.0,
            pyramid_scale: 0.5,
            cube_texture: Texture {
                pattern: Pattern::Checker { cells: 4 },
                colors: [Rgb::new(0.10, 0.30, 0.85), Rgb::new(0.55, 0.75, 1.0)],
            },
            pyramid_texture: Texture {
                pattern: Pattern::Stripes { count: 6 },
                colors: [Rgb::new(1.0, 0.85, 0.10), Rgb::new(0.85, 0.45, 0.05)],
            },
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if !self.rotation_rate.is_finite() {
            return bad("rotation_rate must be finite");
        }
        if !(self.cube_half_extent.is_finite() && self.cube_half_extent > 0.0) {
            return bad("cube_half_extent must be positive");
        }
        if !(self.pyramid_scale.is_finite() && self.pyramid_scale > 0.0) {
            return bad("pyramid_scale must be positive");
        }
        if !self.pyramid_local_offset.is_finite() {
            return bad("pyramid_local_offset must be finite");
        }
        for tex in [&self.cube_texture, &self.pyramid_texture] {
            if !tex.colors.iter().all(|c| c.is_finite()) {
                return bad("texture colours must be finite");
            }
        }
        Ok(())
    }
}

/// A mesh plus its placement relative to the rotating frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub mesh: Mesh,
    pub local: Mat4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cube: SceneObject,
    pub pyramid: SceneObject,
    pub rotation_rate: f64,
    /// Seconds since the start of the animation.
    pub time: f64,
}

impl Scene {
    pub fn angle(&self) -> f64 {
        self.rotation_rate * self.time
    }

    pub fn model_matrix(&self, object: &SceneObject) -> Mat4 {
        Mat4::rotation_y(self.angle()) * object.local
    }

    /// Opaque objects first, then the occluder; this is the submission order.
    pub fn objects(&self) -> [&SceneObject; 2] {
        [&self.pyramid, &self.cube]
    }

    pub fn world_vertices(&self, object: &SceneObject) -> Vec<Vec3> {
        let m = self.model_matrix(object);
        object
            .mesh
            .vertices()
            .iter()
            .map(|&v| m.transform_point(v))
            .collect()
    }
}

pub fn build_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let cube = Mesh::cube(
        config.cube_half_extent,
        Material {
            texture: config.cube_texture,
            role: AlphaRole::DichopticOccluder,
        },
    )?;
    let pyramid = Mesh::pyramid(
        config.pyramid_scale,
        Material {
            texture: config.pyramid_texture,
            role: AlphaRole::Opaque,
        },
    )?;
    let scene = Scene {
        cube: SceneObject {
            mesh: cube,
            local: Mat4::IDENTITY,
        },
        pyramid: SceneObject {
            mesh: pyramid,
            local: Mat4::translation(config.pyramid_local_offset),
        },
        rotation_rate: config.rotation_rate,
        time: 0.0,
    };
    check_containment(&scene, config.cube_half_extent)?;
    Ok(scene)
}

/// Every pyramid vertex must lie strictly inside the cube at each sampled angle.
fn check_containment(scene: &Scene, half_extent: f64) -> Result<(), SceneError> {
    for i in 0..CONTAINMENT_SAMPLES {
        let angle = 2.0 * PI * i as f64 / CONTAINMENT_SAMPLES as f64;
        let rot = Mat4::rotation_y(angle);
        let to_cube_local = (rot * scene.cube.local).transpose_rigid();
        let pyramid_model = rot * scene.pyramid.local;
        for &v in scene.pyramid.mesh.vertices() {
            let p = to_cube_local.transform_point(pyramid_model.transform_point(v));
            if p.x.abs() >= half_extent || p.y.abs() >= half_extent || p.z.abs() >= half_extent {
                return Err(SceneError::InvalidConfig(format!(
                    "pyramid vertex escapes the cube at angle {angle:.4} rad"
                )));
            }
        }
    }
    Ok(())
}

/// Pose of the scene at time `t`.
pub fn animate(scene: &Scene, t: f64) -> Scene {
    Scene {
        time: t,
        ..scene.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigPose {
    pub position: Vec3,
    /// Rotation about world `+Y`; zero looks down `-Z`.
    pub yaw: f64,
    /// Elevation of the view direction; negative looks down.
    pub pitch: f64,
}

impl RigPose {
    pub fn looking_at(position: Vec3, target: Vec3) -> Self {
        let d = target - position;
        let yaw = (-d.x).atan2(-d.z);
        let pitch = d.y.atan2((d.x * d.x + d.z * d.z).sqrt());
        Self {
            position,
            yaw,
            pitch,
        }
    }

    /// Orthonormal (right, up, back) basis of the rig.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = Vec3::new(-sy * cp, sp, -cy * cp);
        let right = Vec3::new(cy, 0.0, -sy);
        let back = -forward;
        let up = back.cross(right);
        (right, up, back)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StereoRig {
    pub eye_separation: f64,
    pub convergence_distance: f64,
    pub fov_y: f64,
    pub aspect: f64,
    pub near: f64,
    pub far: f64,
    pub pose: RigPose,
}

impl Default for StereoRig {
    fn default() -> Self {
        let position = Vec3::new(0.0, 1.5, 3.5);
        Self {
            eye_separation: 0.065,
            convergence_distance: position.length(),
            fov_y: 60f64.to_radians(),
            aspect: 1.0,
            near: 0.1,
            far: 100.0,
            pose: RigPose::looking_at(position, Vec3::ZERO),
        }
    }
}

/// Map normalised device coordinates to pixels, y pointing down.
pub fn ndc_to_screen(ndc_x: f64, ndc_y: f64, width: usize, height: usize) -> [f64; 2] {
    [
        (ndc_x + 1.0) * 0.5 * width as f64,
        (1.0 - ndc_y) * 0.5 * height as f64,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeTransforms {
    pub position: Vec3,
    pub view: Mat4,
    pub projection: Mat4,
}

impl StereoRig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = self.near > 0.0
            && self.near < self.convergence_distance
            && self.convergence_distance < self.far
            && self.far.is_finite()
            && self.eye_separation >= 0.0
            && self.eye_separation.is_finite()
            && self.fov_y > 0.0
            && self.fov_y < PI
            && self.aspect > 0.0
            && self.aspect.is_finite()
            && self.pose.position.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidConfig(
                "stereo rig requires 0 < near < convergence < far, fov in (0, pi), \
                 positive aspect and non-negative eye separation"
                    .into(),
            ))
        }
    }

    /// Signed horizontal offset of the eye from the rig centre.
    pub fn eye_offset(&self, eye: Eye) -> f64 {
        match eye {
            Eye::Left => -self.eye_separation / 2.0,
            Eye::Right => self.eye_separation / 2.0,
        }
    }

    pub fn eye_transforms(&self, eye: Eye) -> EyeTransforms {
        self.transforms_for_offset(self.eye_offset(eye))
    }

    /// Screen position in pixels (x right, y down, pixel centres at `.5`) of a
    /// world point seen by `eye`, or `None` if it is not in front of the near plane.
    pub fn screen_position(
        &self,
        eye: Eye,
        point: Vec3,
        width: usize,
        height: usize,
    ) -> Option<[f64; 2]> {
        let tf = self.eye_transforms(eye);
        let view_pos = tf.view.transform(point.extend(1.0));
        if -view_pos.z <= self.near {
            return None;
        }
        let clip = tf.projection.transform(view_pos);
        Some(ndc_to_screen(
            clip.x / clip.w,
            clip.y / clip.w,
            width,
            height,
        ))
    }

    /// Horizontal disparity `x_right - x_left` in pixels of a world point.
    pub fn disparity(&self, point: Vec3, width: usize, height: usize) -> Option<f64> {
        let l = self.screen_position(Eye::Left, point, width, height)?;
        let r = self.screen_position(Eye::Right, point, width, height)?;
        Some(r[0] - l[0])
    }

    /// Parallel-axis camera shifted by `offset` along the rig's right vector, with
    /// an asymmetric frustum so both eyes share the window on the convergence plane.
    pub fn transforms_for_offset(&self, offset: f64) -> EyeTransforms {
        let (right, up, back) = self.pose.basis();
        let position = self.pose.position + right * offset;
        let view = Mat4::view_from_basis(position, right, up, back);

        let half_h = self.near * (self.fov_y / 2.0).tan();
        let half_w = half_h * self.aspect;
        let shift = offset * self.near / self.convergence_distance;
        let projection = Mat4::frustum(
            -half_w - shift,
            half_w - shift,
            -half_h,
            half_h,
            self.near,
            self.far,
        );
        EyeTransforms {
            position,
            view,
            projection,
        }
    }
}

/// Configuration file contents: scene and rig, both optional and defaulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    pub scene: SceneConfig,
    pub rig: StereoRig,
}

impl ViewConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        let cfg: ViewConfig = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        cfg.scene.validate()?;
        cfg.rig.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("view config always serializes")
    }
}
