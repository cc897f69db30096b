//! Turns a stereo frame into images viewable on an ordinary monitor.
//!
//! File names follow `frame{index:04}_{mode}[_{eye}].png`, for example
//! `frame0003_anaglyph.png`, `frame0000_sbs.png` or `frame0012_split_left.png`.

use crate::raster::{clamp_unit, quantize, Eye, Framebuffer, StereoFrame};
use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Weights mapping the left eye's colour to the anaglyph red channel.
/// Green and blue are copied from the right eye unchanged.
pub const ANAGLYPH_LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompositeMode {
    SideBySide,
    Anaglyph,
    SplitFiles,
}

impl CompositeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CompositeMode::SideBySide => "sbs",
            CompositeMode::Anaglyph => "anaglyph",
            CompositeMode::SplitFiles => "split",
        }
    }
}

impl fmt::Display for CompositeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompositeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sbs" | "side-by-side" => Ok(CompositeMode::SideBySide),
            "anaglyph" => Ok(CompositeMode::Anaglyph),
            "split" => Ok(CompositeMode::SplitFiles),
            other => Err(format!(
                "unknown mode `{other}` (expected sbs, anaglyph or split)"
            )),
        }
    }
}

/// 8-bit RGBA image, row-major, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgba: Vec<u8>,
}

impl Image {
    pub fn from_framebuffer(fb: &Framebuffer) -> Self {
        Self {
            width: fb.width(),
            height: fb.height(),
            rgba: fb.to_rgba8(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [
            self.rgba[i],
            self.rgba[i + 1],
            self.rgba[i + 2],
            self.rgba[i + 3],
        ]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        self.write_png_to(&mut out)?;
        Ok(out)
    }

    fn write_png_to<W: Write>(&self, w: W) -> Result<(), ImageError> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.rgba)?;
        writer.finish()?;
        Ok(())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        let file = std::fs::File::create(path)?;
        self.write_png_to(BufWriter::new(file))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(bytes);
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf)?;
        if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Unsupported(format!(
                "{:?} at {:?}",
                info.color_type, info.bit_depth
            )));
        }
        buf.truncate(info.buffer_size());
        Ok(Self {
            width: info.width as usize,
            height: info.height as usize,
            rgba: buf,
        })
    }

    pub fn read_png(path: &Path) -> Result<Self, ImageError> {
        Self::decode_png(&std::fs::read(path)?)
    }
}

/// What a composited image shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageRole {
    Combined,
    Eye(Eye),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeImage {
    pub role: ImageRole,
    pub image: Image,
}

pub fn composite(frame: &StereoFrame, mode: CompositeMode) -> Vec<CompositeImage> {
    match mode {
        CompositeMode::SideBySide => vec![CompositeImage {
            role: ImageRole::Combined,
            image: side_by_side(frame),
        }],
        CompositeMode::Anaglyph => vec![CompositeImage {
            role: ImageRole::Combined,
            image: anaglyph(frame),
        }],
        CompositeMode::SplitFiles => Eye::BOTH
            .iter()
            .map(|&eye| CompositeImage {
                role: ImageRole::Eye(eye),
                image: Image::from_framebuffer(frame.eye(eye)),
            })
            .collect(),
    }
}

fn side_by_side(frame: &StereoFrame) -> Image {
    let (w, h) = (frame.width(), frame.height());
    let left = frame.left.to_rgba8();
    let right = frame.right.to_rgba8();
    let mut rgba = Vec::with_capacity(w * h * 8);
    for y in 0..h {
        let row = y * w * 4..(y + 1) * w * 4;
        rgba.extend_from_slice(&left[row.clone()]);
        rgba.extend_from_slice(&right[row]);
    }
    Image {
        width: 2 * w,
        height: h,
        rgba,
    }
}

fn anaglyph(frame: &StereoFrame) -> Image {
    let mut rgba = Vec::with_capacity(frame.width() * frame.height() * 4);
    for (l, r) in frame.left.colors().iter().zip(frame.right.colors()) {
        let luma = ANAGLYPH_LUMA[0] * clamp_unit(l.r)
            + ANAGLYPH_LUMA[1] * clamp_unit(l.g)
            + ANAGLYPH_LUMA[2] * clamp_unit(l.b);
        rgba.extend([quantize(luma), quantize(r.g), quantize(r.b), 255]);
    }
    Image {
        width: frame.width(),
        height: frame.height(),
        rgba,
    }
}

/// Split a side-by-side image back into its two eye images.
pub fn split_side_by_side(image: &Image) -> (Image, Image) {
    let w = image.width / 2;
    let mut left = Vec::with_capacity(w * image.height * 4);
    let mut right = Vec::with_capacity(w * image.height * 4);
    for y in 0..image.height {
        let row = &image.rgba[y * image.width * 4..(y + 1) * image.width * 4];
        left.extend_from_slice(&row[..w * 4]);
        right.extend_from_slice(&row[w * 4..]);
    }
    let mk = |rgba| Image {
        width: w,
        height: image.height,
        rgba,
    };
    (mk(left), mk(right))
}

pub fn file_name(frame_index: usize, mode: CompositeMode, role: ImageRole) -> String {
    match role {
        ImageRole::Combined => format!("frame{frame_index:04}_{mode}.png"),
        ImageRole::Eye(eye) => format!("frame{frame_index:04}_{mode}_{}.png", eye.name()),
    }
}

/// Composite `frame` and write the resulting PNGs into `dir`.
pub fn write_frame(
    frame: &StereoFrame,
    mode: CompositeMode,
    frame_index: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>, ImageError> {
    composite(frame, mode)
        .into_iter()
        .map(|c| {
            let path = dir.join(file_name(frame_index, mode, c.role));
            c.image.write_png(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render_stereo, OpacityState};
    use crate::scene::{build_scene, SceneConfig, StereoRig};

    fn frame(state: OpacityState, sep: f64) -> StereoFrame {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let rig = StereoRig {
            eye_separation: sep,
            ..StereoRig::default()
        };
        render_stereo(&scene, &rig, state, 0.7, 64, 64)
    }

    #[test]
    fn side_by_side_layout() {
        let f = frame(OpacityState::new(0.2, 0.8, true), 0.065);
        let out = composite(&f, CompositeMode::SideBySide);
        assert_eq!(out.len(), 1);
        let img = &out[0].image;
        assert_eq!((img.width, img.height), (128, 64));
        let left = Image::from_framebuffer(&f.left);
        let right = Image::from_framebuffer(&f.right);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(img.pixel(x, y), left.pixel(x, y));
                assert_eq!(img.pixel(x + 64, y), right.pixel(x, y));
            }
        }
        assert_eq!(split_side_by_side(img), (left, right));
    }

    #[test]
    fn split_files_are_the_eye_images() {
        let f = frame(OpacityState::new(0.1, 0.9, true), 0.065);
        let out = composite(&f, CompositeMode::SplitFiles);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].role, ImageRole::Eye(Eye::Left));
        assert_eq!(out[0].image.rgba, f.left.to_rgba8());
        assert_eq!(out[1].image.rgba, f.right.to_rgba8());
    }

    #[test]
    fn anaglyph_of_identical_eyes_is_luma_consistent() {
        let f = frame(OpacityState::uniform(0.5), 0.0);
        assert_eq!(f.left, f.right);
        let img = &composite(&f, CompositeMode::Anaglyph)[0].image;
        for (i, c) in f.right.colors().iter().enumerate() {
            let px = &img.rgba[i * 4..i * 4 + 4];
            let expected = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
            let diff = (px[0] as f64 - expected * 255.0).abs();
            assert!(
                diff <= 1.0,
                "pixel {i}: red {} vs luma {}",
                px[0],
                expected * 255.0
            );
            assert_eq!(px[1], quantize(c.g));
            assert_eq!(px[2], quantize(c.b));
        }
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let f = frame(OpacityState::new(0.3, 0.6, true), 0.065);
        let img = &composite(&f, CompositeMode::SideBySide)[0].image;
        let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(&back, img);
    }

    #[test]
    fn file_names_encode_mode_eye_and_index() {
        assert_eq!(
            file_name(3, CompositeMode::Anaglyph, ImageRole::Combined),
            "frame0003_anaglyph.png"
        );
        assert_eq!(
            file_name(12, CompositeMode::SplitFiles, ImageRole::Eye(Eye::Left)),
            "frame0012_split_left.png"
        );
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("sbs".parse(), Ok(CompositeMode::SideBySide));
        assert_eq!("split".parse(), Ok(CompositeMode::SplitFiles));
        assert!("stereo".parse::<CompositeMode>().is_err());
    }
}
