//! Executes one validated augmentation against an image.

use serde::{Deserialize, Serialize};

use super::filters;
use super::image::ImageBuffer;
use super::ops::{AugmentationOp, Factor, FlipAxis, Rotation};
use crate::error::ErrorMessage;

/// Bounds the executor enforces regardless of what the parser accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecLimits {
    pub min_factor: Factor,
    pub max_factor: Factor,
    pub max_kernel: u32,
    /// Largest image (width * height) an operation may produce.
    pub max_pixels: u64,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            min_factor: Factor::new(1, 8).unwrap(),
            max_factor: Factor::integer(8).unwrap(),
            max_kernel: 31,
            max_pixels: 4_194_304,
        }
    }
}

impl ExecLimits {
    pub fn factor_in_range(&self, f: Factor) -> bool {
        f.cmp_exact(self.min_factor).is_ge() && f.cmp_exact(self.max_factor).is_le()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ExecError {
    #[error("Error: crop box (x0={x0}, y0={y0}, x1={x1}, y1={y1}) exceeds the image bounds {width}x{height}.")]
    OutOfBounds {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },
    #[error("Error: crop box (x0={x0}, y0={y0}, x1={x1}, y1={y1}) has zero area; require x0 < x1 and y0 < y1.")]
    DegenerateRegion { x0: u32, y0: u32, x1: u32, y1: u32 },
    #[error("Error: {op} factor {factor} is out of range; allowed range is [{min}, {max}].")]
    FactorOutOfRange {
        op: String,
        factor: String,
        min: String,
        max: String,
    },
    #[error("Error: kernel_size {kernel_size} is invalid; it must be an odd integer between 3 and {max}.")]
    KernelInvalid { kernel_size: u32, max: u32 },
    #[error("Error: the result would be {width}x{height} pixels, exceeding the limit of {max_pixels} pixels.")]
    ResolutionCapExceeded {
        width: u64,
        height: u64,
        max_pixels: u64,
    },
}

impl ExecError {
    pub fn code(&self) -> &'static str {
        match self {
            ExecError::OutOfBounds { .. } => "out_of_bounds",
            ExecError::DegenerateRegion { .. } => "degenerate_region",
            ExecError::FactorOutOfRange { .. } => "factor_out_of_range",
            ExecError::KernelInvalid { .. } => "kernel_invalid",
            ExecError::ResolutionCapExceeded { .. } => "resolution_cap_exceeded",
        }
    }

    pub fn to_message(&self) -> ErrorMessage {
        ErrorMessage::new(self.code(), self.to_string())
    }
}

/// Result of one execution plus what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub result: Result<ImageBuffer, ExecError>,
    pub provenance: AugmentationOp,
    pub source_generation: u32,
}

impl ExecOutcome {
    pub fn image(&self) -> Option<&ImageBuffer> {
        self.result.as_ref().ok()
    }

    pub fn error(&self) -> Option<&ExecError> {
        self.result.as_ref().err()
    }
}

/// Everything the executor needs besides the image and the op.
#[derive(Debug, Clone, Copy)]
pub struct ExecContext<'a> {
    /// Generation-0 query image at full resolution.
    pub original: &'a ImageBuffer,
    /// Whether the input is known to be a rescaled view of `original`.
    /// `None` asks the executor to check pixel-exactly.
    pub full_frame: Option<bool>,
    pub limits: &'a ExecLimits,
    pub source_generation: u32,
}

/// Applies `op` to `image`. `original` enables resize-up recall: when `image`
/// is a downsampled copy of `original`, enlarging it resamples `original`
/// instead of interpolating the smaller copy.
pub fn apply_op(
    image: &ImageBuffer,
    op: &AugmentationOp,
    original: &ImageBuffer,
    limits: &ExecLimits,
) -> ExecOutcome {
    apply_op_in(
        image,
        op,
        &ExecContext {
            original,
            full_frame: None,
            limits,
            source_generation: 0,
        },
    )
}

pub fn apply_op_in(image: &ImageBuffer, op: &AugmentationOp, ctx: &ExecContext<'_>) -> ExecOutcome {
    ExecOutcome {
        result: execute(image, op, ctx),
        provenance: *op,
        source_generation: ctx.source_generation,
    }
}

fn execute(
    image: &ImageBuffer,
    op: &AugmentationOp,
    ctx: &ExecContext<'_>,
) -> Result<ImageBuffer, ExecError> {
    let limits = ctx.limits;
    match *op {
        AugmentationOp::Crop { x0, y0, x1, y1 } => crop(image, x0, y0, x1, y1),
        AugmentationOp::ResizeUp { factor } => {
            check_factor("resize_up", factor, limits, factor.cmp_one().is_ge())?;
            resize_up(image, factor, ctx)
        }
        AugmentationOp::ResizeDown { factor } => {
            check_factor("resize_down", factor, limits, factor.cmp_one().is_le())?;
            let (w, h) = (
                factor.scale_len(image.width()),
                factor.scale_len(image.height()),
            );
            check_cap(w, h, limits)?;
            Ok(filters::resample_bilinear(image, w as u32, h as u32))
        }
        AugmentationOp::Rotate { degrees } => Ok(rotate(image, degrees)),
        AugmentationOp::Flip { axis } => Ok(flip(image, axis)),
        AugmentationOp::Denoise {
            method,
            kernel_size,
        } => {
            if kernel_size < 3 || kernel_size % 2 == 0 || kernel_size > limits.max_kernel {
                return Err(ExecError::KernelInvalid {
                    kernel_size,
                    max: limits.max_kernel,
                });
            }
            Ok(match method {
                super::ops::DenoiseMethod::Gaussian => filters::gaussian(image, kernel_size),
                super::ops::DenoiseMethod::Median => filters::median(image, kernel_size),
                super::ops::DenoiseMethod::Bilateral => filters::bilateral(image, kernel_size),
            })
        }
        AugmentationOp::Edge => Ok(filters::sobel(image)),
    }
}

fn check_factor(
    op: &str,
    factor: Factor,
    limits: &ExecLimits,
    direction_ok: bool,
) -> Result<(), ExecError> {
    if direction_ok && limits.factor_in_range(factor) {
        return Ok(());
    }
    let (min, max) = match op {
        "resize_up" => (Factor::ONE, limits.max_factor),
        _ => (limits.min_factor, Factor::ONE),
    };
    Err(ExecError::FactorOutOfRange {
        op: op.to_string(),
        factor: factor.to_string(),
        min: min.to_string(),
        max: max.to_string(),
    })
}

fn check_cap(w: u64, h: u64, limits: &ExecLimits) -> Result<(), ExecError> {
    if w.saturating_mul(h) > limits.max_pixels || w > u32::MAX as u64 || h > u32::MAX as u64 {
        return Err(ExecError::ResolutionCapExceeded {
            width: w,
            height: h,
            max_pixels: limits.max_pixels,
        });
    }
    Ok(())
}

fn crop(image: &ImageBuffer, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<ImageBuffer, ExecError> {
    if x0 >= x1 || y0 >= y1 {
        return Err(ExecError::DegenerateRegion { x0, y0, x1, y1 });
    }
    if x1 > image.width() || y1 > image.height() {
        return Err(ExecError::OutOfBounds {
            x0,
            y0,
            x1,
            y1,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(ImageBuffer::from_fn(
        x1 - x0,
        y1 - y0,
        image.channels(),
        |x, y, c| image.get(x0 + x, y0 + y, c),
    ))
}

/// True when `image` is exactly what resampling `original` to its size yields.
fn is_downsampled_view(image: &ImageBuffer, original: &ImageBuffer) -> bool {
    let smaller = image.width() <= original.width()
        && image.height() <= original.height()
        && (image.width(), image.height()) != (original.width(), original.height());
    smaller
        && image.channels() == original.channels()
        && filters::resample_bilinear(original, image.width(), image.height()) == *image
}

fn resize_up(
    image: &ImageBuffer,
    factor: Factor,
    ctx: &ExecContext<'_>,
) -> Result<ImageBuffer, ExecError> {
    let original = ctx.original;
    let (mut w, mut h) = (
        factor.scale_len(image.width()),
        factor.scale_len(image.height()),
    );
    let downsampled = image.channels() == original.channels()
        && (image.width() < original.width() || image.height() < original.height())
        && match ctx.full_frame {
            Some(flag) => flag,
            None => is_downsampled_view(image, original),
        };
    if downsampled {
        let (ow, oh) = (original.width() as u64, original.height() as u64);
        // rounding from the earlier downsample can leave the target a pixel or
        // two off the original size
        let ceil = factor.num().div_ceil(factor.den()) as u64;
        let slack = ceil.div_ceil(2).max(1);
        if w.abs_diff(ow) <= slack && h.abs_diff(oh) <= slack {
            (w, h) = (ow, oh);
        }
        if w <= ow && h <= oh {
            check_cap(w, h, ctx.limits)?;
            return Ok(filters::resample_bilinear(original, w as u32, h as u32));
        }
    }
    check_cap(w, h, ctx.limits)?;
    Ok(filters::resample_bilinear(image, w as u32, h as u32))
}

/// Counter-clockwise rotation.
fn rotate(image: &ImageBuffer, rotation: Rotation) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    match rotation {
        Rotation::Deg90 => {
            ImageBuffer::from_fn(h, w, image.channels(), |x, y, c| image.get(w - 1 - y, x, c))
        }
        Rotation::Deg180 => ImageBuffer::from_fn(w, h, image.channels(), |x, y, c| {
            image.get(w - 1 - x, h - 1 - y, c)
        }),
        Rotation::Deg270 => {
            ImageBuffer::from_fn(h, w, image.channels(), |x, y, c| image.get(y, h - 1 - x, c))
        }
    }
}

fn flip(image: &ImageBuffer, axis: FlipAxis) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    match axis {
        FlipAxis::Horizontal => {
            ImageBuffer::from_fn(w, h, image.channels(), |x, y, c| image.get(w - 1 - x, y, c))
        }
        FlipAxis::Vertical => {
            ImageBuffer::from_fn(w, h, image.channels(), |x, y, c| image.get(x, h - 1 - y, c))
        }
    }
}

/// Smallest side length the compression experiment will produce.
pub const MIN_COMPRESSED_SIDE: u32 = 28;

/// A fraction in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CompressionRate(f64);

impl CompressionRate {
    pub fn new(rate: f64) -> Option<Self> {
        (rate > 0.0 && rate <= 1.0).then_some(Self(rate))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for CompressionRate {
    type Error = String;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v).ok_or_else(|| format!("compression rate {v} is outside (0, 1]"))
    }
}

impl From<CompressionRate> for f64 {
    fn from(r: CompressionRate) -> f64 {
        r.0
    }
}

/// Scales both sides by `rate` (nearest, floor of 28). Images with a side
/// already at or below 28 are returned unchanged.
pub fn downsample_for_compression(image: &ImageBuffer, rate: CompressionRate) -> ImageBuffer {
    if image.width() <= MIN_COMPRESSED_SIDE || image.height() <= MIN_COMPRESSED_SIDE {
        return image.clone();
    }
    let scale = |len: u32| ((len as f64 * rate.0).round() as u32).max(MIN_COMPRESSED_SIDE);
    filters::resample_bilinear(image, scale(image.width()), scale(image.height()))
}
