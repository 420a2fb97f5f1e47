use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum side length, in pixels, of a cropped region.
pub const MIN_CROP_PX: u32 = 8;

/// An 8-bit RGB image plus the content digest of the bytes it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    digest: u128,
}

impl RawImage {
    /// Wraps a packed row-major RGB buffer. The digest covers the dimensions
    /// and pixel bytes.
    pub fn from_rgb(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Decode(format!("empty image {width}x{height}")));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::Decode(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        let mut hasher = Md5::new();
        hasher.update(width.to_le_bytes());
        hasher.update(height.to_le_bytes());
        hasher.update(&pixels);
        let digest = u128::from_be_bytes(hasher.finalize().into());
        Ok(Self {
            width,
            height,
            pixels,
            digest,
        })
    }

    /// Decodes an encoded image (PNG, JPEG, BMP, GIF). The digest is the MD5
    /// of the encoded bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (width, height) = rgb.dimensions();
        if width == 0 || height == 0 {
            return Err(Error::Decode("empty image".into()));
        }
        Ok(Self {
            width,
            height,
            pixels: rgb.into_raw(),
            digest: content_digest(bytes),
        })
    }

    /// Builds a solid-color image.
    pub fn uniform(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::from_rgb(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn digest(&self) -> u128 {
        self.digest
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Cuts out the region covered by `crop`. The result keeps this image's
    /// digest: deduplication is about the source bytes, not the region.
    pub fn crop(&self, crop: &CropRect) -> Result<RawImage> {
        let (x0, y0, x1, y1) = crop.pixel_bounds(self.width, self.height);
        let (w, h) = (x1 - x0, y1 - y0);
        if w < MIN_CROP_PX || h < MIN_CROP_PX {
            return Err(Error::InvalidCrop(format!(
                "cropped region {w}x{h} is smaller than {MIN_CROP_PX}x{MIN_CROP_PX}"
            )));
        }
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for y in y0..y1 {
            let start = (y as usize * self.width as usize + x0 as usize) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * 3]);
        }
        Ok(RawImage {
            width: w,
            height: h,
            pixels,
            digest: self.digest,
        })
    }
}

pub fn content_digest(bytes: &[u8]) -> u128 {
    u128::from_be_bytes(Md5::digest(bytes).into())
}

/// Normalized crop rectangle, clamped to the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl CropRect {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCrop("non-finite coordinate".into()));
        }
        let c = |v: f32| v.clamp(0.0, 1.0);
        let rect = CropRect {
            x0: c(x0),
            y0: c(y0),
            x1: c(x1),
            y1: c(y1),
        };
        if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 {
            return Err(Error::InvalidCrop(format!(
                "empty area after clamping: ({}, {}, {}, {})",
                rect.x0, rect.y0, rect.x1, rect.y1
            )));
        }
        Ok(rect)
    }

    pub fn full() -> Self {
        CropRect {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        }
    }

    /// Re-validates a rectangle that arrived over the wire.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.x0, self.y0, self.x1, self.y1)
    }

    /// Half-open pixel bounds `(x0, y0, x1, y1)` of the region.
    pub fn pixel_bounds(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let lo = |v: f32, n: u32| ((v * n as f32).floor() as u32).min(n);
        let hi = |v: f32, n: u32| ((v * n as f32).ceil() as u32).min(n);
        (
            lo(self.x0, width),
            lo(self.y0, height),
            hi(self.x1, width),
            hi(self.y1, height),
        )
    }

    /// Stable byte encoding for cache keys.
    pub fn key_bytes(&self) -> [u8; 16] {
        let mut out = [0u8; 16];
        for (i, v) in [self.x0, self.y0, self.x1, self.y1].iter().enumerate() {
            out[i * 4..i * 4 + 4].copy_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }
}
