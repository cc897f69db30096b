//! Stereoscopic software renderer with per-eye occluder opacity, plus the
//! three-task selection experiment and the analysis of its results.
//!
//! Modules, bottom up:
//! - [`scene`]: the cube-and-pyramid scene, its animation and the stereo rig.
//! - [`raster`]: z-buffered rasterizer with back-to-front blending and per-eye alpha.
//! - [`compositor`]: side-by-side, anaglyph and per-eye image outputs.
//! - [`experiment`]: the task state machine, session records and logs.
//! - [`analysis`]: descriptive statistics, outlier exclusion and preference.
//! - [`fixture`]: synthetic datasets with independently computed expected stats.
//! - [`service`]: localhost frame streaming and command intake.

pub mod analysis;
pub mod compositor;
pub mod experiment;
pub mod fixture;
pub mod math;
pub mod raster;
pub mod scene;
pub mod service;

pub use math::{Mat4, Rgb, Vec3};
pub use raster::{
    blend_over, render_eye, render_stereo, resolve_alpha, Eye, Framebuffer, OpacityState,
    StereoFrame,
};
pub use scene::{animate, build_scene, Scene, SceneConfig, StereoRig};
