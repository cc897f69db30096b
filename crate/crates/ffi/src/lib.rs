//! C ABI over the `dichoptic` crate.
//!
//! Conventions:
//! - Fallible functions return a [`DchStatus`]; on failure a description is
//!   available from [`dch_last_error_message`] on the same thread.
//! - Objects are opaque handles created by `*_new` functions and released with
//!   the matching `*_free`. Passing NULL to a `*_free` is a no-op.
//! - Strings returned through `char **` are owned by the caller and must be
//!   released with [`dch_string_free`].

use dichoptic::analysis::{self, AnalysisOptions};
use dichoptic::compositor::{composite, CompositeMode, Image};
use dichoptic::experiment::{Command, ExperimentConfig, ExperimentError, Session};
use dichoptic::scene::ViewConfig;
use dichoptic::{
    build_scene, render_eye, render_stereo, resolve_alpha, Eye, OpacityState, Scene, StereoRig,
};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DchStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IllegalCommand = 4,
    IncompleteSession = 5,
    InsufficientData = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DchEye {
    Left = 0,
    Right = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DchCompositeMode {
    SideBySide = 0,
    Anaglyph = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DchOpacity {
    pub left_alpha: f64,
    pub right_alpha: f64,
    pub dichoptic_enabled: bool,
}

/// Scene plus stereo rig.
pub struct DchRenderer {
    scene: Scene,
    rig: StereoRig,
}

/// One participant's experiment session.
pub struct DchSession {
    inner: Session,
}

/// An 8-bit RGBA image, row-major, top row first.
pub struct DchImage {
    inner: Image,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: DchStatus, message: impl Into<String>) -> DchStatus {
    set_error(message);
    status
}

/// Run `f`, turning a panic into `Internal`.
fn guard(f: impl FnOnce() -> DchStatus) -> DchStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(DchStatus::Internal, "internal panic"),
    }
}

/// Enum parameters cross the boundary as integers so that an out-of-range
/// value from C is reported instead of being undefined behaviour.
fn eye_arg(eye: u32) -> Result<Eye, DchStatus> {
    match eye {
        x if x == DchEye::Left as u32 => Ok(Eye::Left),
        x if x == DchEye::Right as u32 => Ok(Eye::Right),
        other => Err(fail(
            DchStatus::InvalidArgument,
            format!("unknown eye {other}"),
        )),
    }
}

fn mode_arg(mode: u32) -> Result<CompositeMode, DchStatus> {
    match mode {
        x if x == DchCompositeMode::SideBySide as u32 => Ok(CompositeMode::SideBySide),
        x if x == DchCompositeMode::Anaglyph as u32 => Ok(CompositeMode::Anaglyph),
        other => Err(fail(
            DchStatus::InvalidArgument,
            format!("unknown composite mode {other}"),
        )),
    }
}

impl From<DchOpacity> for OpacityState {
    fn from(o: DchOpacity) -> OpacityState {
        OpacityState::new(o.left_alpha, o.right_alpha, o.dichoptic_enabled)
    }
}

impl From<OpacityState> for DchOpacity {
    fn from(o: OpacityState) -> DchOpacity {
        DchOpacity {
            left_alpha: o.left_alpha,
            right_alpha: o.right_alpha,
            dichoptic_enabled: o.dichoptic_enabled,
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, DchStatus> {
    if p.is_null() {
        return Err(fail(DchStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            DchStatus::InvalidArgument,
            format!("{name} is not valid UTF-8"),
        )
    })
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> DchStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            DchStatus::Ok
        }
        Err(_) => fail(DchStatus::Internal, "output contains NUL"),
    }
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dch_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dch_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Occluder alpha used for `eye` (a `DchEye` value) under `opacity`, or NaN
/// for an unknown eye.
#[no_mangle]
pub extern "C" fn dch_resolve_alpha(eye: u32, opacity: DchOpacity) -> f64 {
    eye_arg(eye).map_or(f64::NAN, |e| resolve_alpha(e, opacity.into()))
}

/// Renderer for the default scene and rig.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dch_renderer_new_default(out: *mut *mut DchRenderer) -> DchStatus {
    dch_renderer_from_view(out, ViewConfig::default())
}

/// Renderer configured from TOML text with `[scene]` and `[rig]` tables.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dch_renderer_new_from_toml(
    toml: *const c_char,
    out: *mut *mut DchRenderer,
) -> DchStatus {
    let text = match str_arg(toml, "toml") {
        Ok(t) => t,
        Err(s) => return s,
    };
    match ViewConfig::from_toml_str(text) {
        Ok(view) => dch_renderer_from_view(out, view),
        Err(e) => fail(DchStatus::ParseError, e.to_string()),
    }
}

unsafe fn dch_renderer_from_view(out: *mut *mut DchRenderer, view: ViewConfig) -> DchStatus {
    if out.is_null() {
        return fail(DchStatus::NullPointer, "out is NULL");
    }
    guard(|| match build_scene(&view.scene) {
        Ok(scene) => {
            *out = Box::into_raw(Box::new(DchRenderer {
                scene,
                rig: view.rig,
            }));
            DchStatus::Ok
        }
        Err(e) => fail(DchStatus::InvalidArgument, e.to_string()),
    })
}

/// # Safety
/// `renderer` must be NULL or a handle from `dch_renderer_new_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dch_renderer_free(renderer: *mut DchRenderer) {
    if !renderer.is_null() {
        drop(Box::from_raw(renderer));
    }
}

/// Render one eye (a `DchEye` value) into `out_rgba`, which must hold `width * height * 4` bytes.
///
/// # Safety
/// `renderer` must be a live handle; `out_rgba` must point to `out_len`
/// writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dch_render_eye(
    renderer: *const DchRenderer,
    eye: u32,
    opacity: DchOpacity,
    t: f64,
    width: u32,
    height: u32,
    out_rgba: *mut u8,
    out_len: usize,
) -> DchStatus {
    if renderer.is_null() || out_rgba.is_null() {
        return fail(DchStatus::NullPointer, "renderer or out_rgba is NULL");
    }
    if width == 0 || height == 0 || !t.is_finite() {
        return fail(
            DchStatus::InvalidArgument,
            "width and height must be positive and t finite",
        );
    }
    let needed = width as usize * height as usize * 4;
    if out_len < needed {
        return fail(
            DchStatus::BufferTooSmall,
            format!("buffer holds {out_len} bytes, {needed} needed"),
        );
    }
    let eye = match eye_arg(eye) {
        Ok(e) => e,
        Err(s) => return s,
    };
    let r = &*renderer;
    guard(|| {
        let fb = render_eye(
            &r.scene,
            &r.rig,
            eye,
            opacity.into(),
            t,
            width as usize,
            height as usize,
        );
        let rgba = fb.to_rgba8();
        ptr::copy_nonoverlapping(rgba.as_ptr(), out_rgba, rgba.len());
        DchStatus::Ok
    })
}

/// Render both eyes and composite them (a `DchCompositeMode` value) into a new image.
///
/// # Safety
/// `renderer` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dch_render_composite(
    renderer: *const DchRenderer,
    opacity: DchOpacity,
    t: f64,
    width: u32,
    height: u32,
    mode: u32,
    out: *mut *mut DchImage,
) -> DchStatus {
    if renderer.is_null() || out.is_null() {
        return fail(DchStatus::NullPointer, "renderer or out is NULL");
    }
    if width == 0 || height == 0 || !t.is_finite() {
        return fail(
            DchStatus::InvalidArgument,
            "width and height must be positive and t finite",
        );
    }
    let r = &*renderer;
    let mode = match mode_arg(mode) {
        Ok(m) => m,
        Err(s) => return s,
    };
    guard(|| {
        let frame = render_stereo(
            &r.scene,
            &r.rig,
            opacity.into(),
            t,
            width as usize,
            height as usize,
        );
        let image = composite(&frame, mode).remove(0).image;
        *out = Box::into_raw(Box::new(DchImage { inner: image }));
        DchStatus::Ok
    })
}

/// # Safety
/// `image` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dch_image_width(image: *const DchImage) -> u32 {
    image.as_ref().map_or(0, |i| i.inner.width as u32)
}

/// # Safety
/// `image` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dch_image_height(image: *const DchImage) -> u32 {
    image.as_ref().map_or(0, |i| i.inner.height as u32)
}

/// Pixel bytes, valid until the image is freed. Length is `width * height * 4`.
///
/// # Safety
/// `image` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dch_image_data(image: *const DchImage) -> *const u8 {
    image
        .as_ref()
        .map_or(ptr::null(), |i| i.inner.rgba.as_ptr())
}

/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dch_image_free(image: *mut DchImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Start a session with the default scene and rig.
///
/// # Safety
/// `participant_id` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dch_session_new(
    participant_id: *const c_char,
    alpha_step: f64,
    rng_seed: u64,
    initial_alpha: f64,
    out: *mut *mut DchSession,
) -> DchStatus {
    let id = match str_arg(participant_id, "participant_id") {
        Ok(s) => s,
        Err(s) => return s,
    };
    if out.is_null() {
        return fail(DchStatus::NullPointer, "out is NULL");
    }
    let config = ExperimentConfig {
        alpha_step,
        rng_seed,
        initial_alpha,
        ..ExperimentConfig::default()
    };
    guard(|| match Session::new(id, &config) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(DchSession { inner }));
            DchStatus::Ok
        }
        Err(e) => fail(DchStatus::InvalidArgument, e.to_string()),
    })
}

/// # Safety
/// `session` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dch_session_free(session: *mut DchSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Apply command `code` (1 through 8, see the wire protocol) at time `t`.
/// On success the opacity now on screen is written to `out_opacity` if it is
/// not NULL. A rejected command leaves the session unchanged.
///
/// # Safety
/// `session` must be a live handle; `out_opacity` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dch_session_apply(
    session: *mut DchSession,
    code: u8,
    t: f64,
    out_opacity: *mut DchOpacity,
) -> DchStatus {
    let Some(s) = session.as_mut() else {
        return fail(DchStatus::NullPointer, "session is NULL");
    };
    let Some(command) = Command::from_code(code) else {
        return fail(
            DchStatus::InvalidArgument,
            format!("unknown command code {code}"),
        );
    };
    guard(|| match s.inner.apply_command(command, t) {
        Ok(state) => {
            if !out_opacity.is_null() {
                *out_opacity = state.into();
            }
            DchStatus::Ok
        }
        Err(e @ ExperimentError::IllegalCommand { .. }) => {
            fail(DchStatus::IllegalCommand, e.to_string())
        }
        Err(e) => fail(DchStatus::Internal, e.to_string()),
    })
}

/// Current phase as its ordinal: 0 Briefing through 9 Done.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dch_session_phase(session: *const DchSession) -> i32 {
    session
        .as_ref()
        .map_or(-1, |s| s.inner.phase().ordinal() as i32)
}

/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dch_session_opacity(
    session: *const DchSession,
    out: *mut DchOpacity,
) -> DchStatus {
    match (session.as_ref(), out.is_null()) {
        (Some(s), false) => {
            *out = s.inner.opacity().into();
            DchStatus::Ok
        }
        _ => fail(DchStatus::NullPointer, "session or out is NULL"),
    }
}

/// Session record as JSON. Fails with `IncompleteSession` before `Done`.
///
/// # Safety
/// `session` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dch_session_export_json(
    session: *const DchSession,
    out_json: *mut *mut c_char,
) -> DchStatus {
    let Some(s) = session.as_ref() else {
        return fail(DchStatus::NullPointer, "session is NULL");
    };
    if out_json.is_null() {
        return fail(DchStatus::NullPointer, "out_json is NULL");
    }
    match s.inner.export() {
        Ok(record) => put_string(out_json, record.to_json()),
        Err(e) => fail(DchStatus::IncompleteSession, e.to_string()),
    }
}

/// Analyse CSV text with default options; the statistics are returned as JSON.
///
/// # Safety
/// `csv` must be a NUL-terminated string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dch_analyze_csv(
    csv: *const c_char,
    out_json: *mut *mut c_char,
) -> DchStatus {
    let text = match str_arg(csv, "csv") {
        Ok(t) => t,
        Err(s) => return s,
    };
    if out_json.is_null() {
        return fail(DchStatus::NullPointer, "out_json is NULL");
    }
    let rows = match analysis::parse_csv(text) {
        Ok(r) => r,
        Err(e) => return fail(DchStatus::ParseError, e.to_string()),
    };
    match analysis::analyze(&rows, &AnalysisOptions::default()) {
        Ok(stats) => put_string(out_json, stats.to_json()),
        Err(e @ analysis::AnalysisError::InsufficientData { .. }) => {
            fail(DchStatus::InsufficientData, e.to_string())
        }
        Err(e) => fail(DchStatus::ParseError, e.to_string()),
    }
}
