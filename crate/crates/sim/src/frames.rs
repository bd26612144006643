//! Frame assets: 16-bit PGM depth in millimetres, binary PPM color.

use arco_core::capture::{ColorFrame, DepthFrame};
use arco_core::geometry::{CameraIntrinsics, Pose};
use arco_core::ids::TimestampMs;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb};

use crate::SimError;

/// Depth image as stored in traces: millimetres, `0` = no measurement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub mm: Vec<u16>,
}

impl DepthImage {
    /// Quantizes meters to millimetres; invalid or out-of-range samples become 0.
    pub fn from_meters(width: u32, height: u32, meters: &[f64]) -> Self {
        let mm = meters
            .iter()
            .map(|&d| {
                if d.is_finite() && d > 0.0 && d * 1000.0 < f64::from(u16::MAX) {
                    (d * 1000.0).round() as u16
                } else {
                    0
                }
            })
            .collect();
        Self { width, height, mm }
    }

    pub fn to_frame(&self, intrinsics: CameraIntrinsics, camera_pose: Pose, timestamp: TimestampMs) -> DepthFrame {
        DepthFrame {
            width: self.width,
            height: self.height,
            depths: self.mm.iter().map(|&m| f32::from(m) / 1000.0).collect(),
            intrinsics,
            camera_pose,
            timestamp,
        }
    }

    /// Binary 16-bit PGM, samples big-endian as the format requires.
    pub fn to_pgm(&self) -> Vec<u8> {
        // The image crate's PNM encoder only writes 8-bit graymaps.
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        out.reserve(self.mm.len() * 2);
        for v in &self.mm {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, SimError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
            .map_err(|e| SimError::TraceInvalid(format!("depth image: {e}")))?;
        match img {
            DynamicImage::ImageLuma16(b) => Ok(Self {
                width: b.width(),
                height: b.height(),
                mm: b.into_raw(),
            }),
            other => Err(SimError::TraceInvalid(format!(
                "depth image must be 16-bit grayscale, got {:?}",
                other.color()
            ))),
        }
    }
}

pub fn color_to_ppm(frame: &ColorFrame) -> Vec<u8> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(frame.width, frame.height, frame.rgb.clone()).expect("buffer matches dimensions");
    let mut out = Vec::new();
    DynamicImage::ImageRgb8(buf)
        .write_with_encoder(PnmEncoder::new(&mut out).with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary)))
        .expect("in-memory PPM encoding");
    out
}

pub fn color_from_ppm(bytes: &[u8]) -> Result<ColorFrame, SimError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| SimError::TraceInvalid(format!("color image: {e}")))?
        .into_rgb8();
    Ok(ColorFrame {
        width: img.width(),
        height: img.height(),
        rgb: img.into_raw(),
    })
}
