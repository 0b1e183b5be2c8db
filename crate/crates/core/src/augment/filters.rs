//! Pixel kernels behind the executor. All borders replicate the edge pixel.

use super::image::{Channels, ImageBuffer};

#[inline]
fn clamp_idx(v: i64, len: u32) -> u32 {
    v.clamp(0, len as i64 - 1) as u32
}

#[inline]
fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear sample positions for one axis using pixel-centre alignment:
/// `src = (dst + 0.5) * src_len / dst_len - 0.5`, evaluated in exact integers.
fn axis_taps(src_len: u32, dst_len: u32) -> Vec<(u32, u32, f64)> {
    let den = 2 * dst_len as i64;
    (0..dst_len)
        .map(|d| {
            let num = (2 * d as i64 + 1) * src_len as i64 - dst_len as i64;
            if num <= 0 {
                return (0, 0, 0.0);
            }
            let lo = num / den;
            let rem = num % den;
            if lo >= src_len as i64 - 1 {
                let last = src_len - 1;
                return (last, last, 0.0);
            }
            (lo as u32, lo as u32 + 1, rem as f64 / den as f64)
        })
        .collect()
}

/// Bilinear resample to an exact size. Same-size input is copied unchanged.
pub fn resample_bilinear(src: &ImageBuffer, width: u32, height: u32) -> ImageBuffer {
    if src.width() == width && src.height() == height {
        return src.clone();
    }
    let xs = axis_taps(src.width(), width);
    let ys = axis_taps(src.height(), height);
    let c = src.channels().count();
    let mut out = Vec::with_capacity(width as usize * height as usize * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let a = src.get(x0, y0, ch) as f64;
                let b = src.get(x1, y0, ch) as f64;
                let p = src.get(x0, y1, ch) as f64;
                let q = src.get(x1, y1, ch) as f64;
                let top = a + (b - a) * fx;
                let bottom = p + (q - p) * fx;
                out.push(round_u8(top + (bottom - top) * fy));
            }
        }
    }
    ImageBuffer::new(width, height, src.channels(), out).expect("sized by construction")
}

pub fn median(src: &ImageBuffer, kernel: u32) -> ImageBuffer {
    let r = (kernel / 2) as i64;
    let c = src.channels().count();
    let (w, h) = (src.width(), src.height());
    let mut window = Vec::with_capacity((kernel * kernel) as usize);
    let mid = (kernel * kernel / 2) as usize;
    let mut out = Vec::with_capacity(src.pixels().len());
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for ch in 0..c {
                window.clear();
                for dy in -r..=r {
                    let sy = clamp_idx(y + dy, h);
                    for dx in -r..=r {
                        window.push(src.get(clamp_idx(x + dx, w), sy, ch));
                    }
                }
                let (_, m, _) = window.select_nth_unstable(mid);
                out.push(*m);
            }
        }
    }
    ImageBuffer::new(w, h, src.channels(), out).expect("same shape")
}

/// Separable Gaussian with sigma = kernel / 6.
pub fn gaussian(src: &ImageBuffer, kernel: u32) -> ImageBuffer {
    let sigma = kernel as f64 / 6.0;
    let r = (kernel / 2) as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();

    let c = src.channels().count();
    let (w, h) = (src.width(), src.height());
    let idx = |x: u32, y: u32, ch: usize| (y as usize * w as usize + x as usize) * c + ch;

    let mut horizontal = vec![0.0f64; src.pixels().len()];
    for y in 0..h {
        for x in 0..w as i64 {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sx = clamp_idx(x + k as i64 - r, w);
                    acc += wt * src.get(sx, y, ch) as f64;
                }
                horizontal[idx(x as u32, y, ch)] = acc;
            }
        }
    }
    let mut out = vec![0u8; src.pixels().len()];
    for y in 0..h as i64 {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sy = clamp_idx(y + k as i64 - r, h);
                    acc += wt * horizontal[idx(x, sy, ch)];
                }
                out[idx(x, y as u32, ch)] = round_u8(acc);
            }
        }
    }
    ImageBuffer::new(w, h, src.channels(), out).expect("same shape")
}

pub const BILATERAL_SIGMA_COLOR: f64 = 25.0;

/// Per-channel bilateral filter; sigma_space = kernel / 2, sigma_color = 25.
pub fn bilateral(src: &ImageBuffer, kernel: u32) -> ImageBuffer {
    let sigma_space = kernel as f64 / 2.0;
    let r = (kernel / 2) as i64;
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| {
            (-r..=r).map(move |dx| {
                (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_space * sigma_space)).exp()
            })
        })
        .collect();
    let range: Vec<f64> = (0..256)
        .map(|d| {
            let d = d as f64;
            (-(d * d) / (2.0 * BILATERAL_SIGMA_COLOR * BILATERAL_SIGMA_COLOR)).exp()
        })
        .collect();

    let c = src.channels().count();
    let (w, h) = (src.width(), src.height());
    let mut out = Vec::with_capacity(src.pixels().len());
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for ch in 0..c {
                let centre = src.get(x as u32, y as u32, ch);
                let (mut num, mut den) = (0.0, 0.0);
                let mut k = 0;
                for dy in -r..=r {
                    let sy = clamp_idx(y + dy, h);
                    for dx in -r..=r {
                        let v = src.get(clamp_idx(x + dx, w), sy, ch);
                        let wt = spatial[k] * range[centre.abs_diff(v) as usize];
                        num += wt * v as f64;
                        den += wt;
                        k += 1;
                    }
                }
                out.push(round_u8(num / den));
            }
        }
    }
    ImageBuffer::new(w, h, src.channels(), out).expect("same shape")
}

/// 3x3 Sobel gradient magnitude on the luma plane, scaled so the largest
/// possible magnitude (1020 * sqrt 2) maps to 255.
pub fn sobel(src: &ImageBuffer) -> ImageBuffer {
    let gray = src.to_gray();
    let (w, h) = (gray.width(), gray.height());
    let scale = 255.0 / (1020.0 * std::f64::consts::SQRT_2);
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let p =
                |dx: i64, dy: i64| gray.get(clamp_idx(x + dx, w), clamp_idx(y + dy, h), 0) as i32;
            let gx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            let mag = ((gx * gx + gy * gy) as f64).sqrt();
            out.push(round_u8(mag * scale));
        }
    }
    ImageBuffer::new(w, h, Channels::Gray, out).expect("same shape")
}
