//! 8-bit raster images and their PNG/JPEG codecs.

use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ColorType, DynamicImage, ImageEncoder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ImageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }
}

/// Row-major, interleaved, 8 bits per channel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: Channels,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(
        width: u32,
        height: u32,
        channels: Channels,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        let expected = width as usize * height as usize * channels.count();
        if pixels.len() != expected {
            return Err(ImageError::LengthMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Uniform image. Panics on a zero dimension.
    pub fn filled(width: u32, height: u32, channels: Channels, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be >= 1");
        let len = width as usize * height as usize * channels.count();
        Self {
            width,
            height,
            channels,
            pixels: vec![value; len],
        }
    }

    /// Builds an image from a per-(x, y, channel) function. Panics on a zero dimension.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: Channels,
        mut f: impl FnMut(u32, u32, usize) -> u8,
    ) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be >= 1");
        let c = channels.count();
        let mut pixels = Vec::with_capacity(width as usize * height as usize * c);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..c {
                    pixels.push(f(x, y, ch));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, channel: usize) -> u8 {
        let c = self.channels.count();
        self.pixels[(y as usize * self.width as usize + x as usize) * c + channel]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, channel: usize, value: u8) {
        let c = self.channels.count();
        self.pixels[(y as usize * self.width as usize + x as usize) * c + channel] = value;
    }

    /// Integer BT.601 luma; gray images are returned as-is.
    pub fn to_gray(&self) -> ImageBuffer {
        match self.channels {
            Channels::Gray => self.clone(),
            Channels::Rgb => {
                let pixels = self
                    .pixels
                    .chunks_exact(3)
                    .map(|p| {
                        let v = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                        ((v + 500) / 1000) as u8
                    })
                    .collect();
                ImageBuffer {
                    width: self.width,
                    height: self.height,
                    channels: Channels::Gray,
                    pixels,
                }
            }
        }
    }

    /// Hex SHA-256 over dimensions, channel count and pixels.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update([self.channels.count() as u8]);
        hasher.update(&self.pixels);
        hex_string(&hasher.finalize())
    }

    /// Decodes PNG or JPEG (or anything else the codec set recognises).
    /// Alpha is dropped; 16-bit input is reduced to 8 bits.
    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let decoded =
            image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(decoded))
    }

    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| ImageError::Decode(format!("{}: {e}", path.as_ref().display())))?;
        Self::decode(&bytes)
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let color = img.color();
        let gray = matches!(
            color,
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
        );
        if gray {
            let buf = img.to_luma8();
            let (w, h) = buf.dimensions();
            Self {
                width: w,
                height: h,
                channels: Channels::Gray,
                pixels: buf.into_raw(),
            }
        } else {
            let buf = img.to_rgb8();
            let (w, h) = buf.dimensions();
            Self {
                width: w,
                height: h,
                channels: Channels::Rgb,
                pixels: buf.into_raw(),
            }
        }
    }

    /// PNG with fixed settings (default zlib level, no row filtering) so the
    /// same buffer always yields the same bytes.
    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let encoder = PngEncoder::new_with_quality(
            Cursor::new(&mut out),
            CompressionType::Default,
            FilterType::NoFilter,
        );
        let color = match self.channels {
            Channels::Gray => image::ExtendedColorType::L8,
            Channels::Rgb => image::ExtendedColorType::Rgb8,
        };
        encoder
            .write_image(&self.pixels, self.width, self.height, color)
            .expect("in-memory PNG encoding of a validated buffer");
        out
    }

    pub fn save_png(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        std::fs::write(path, self.encode_png())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}
