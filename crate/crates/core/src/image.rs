//! Raster containers and the pixel-level conversions every other stage
//! builds on.
//!
//! Coordinates are `x` = column (width axis) and `y` = row (height axis),
//! both 0-based. Samples are stored row-major and channel-interleaved.

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "image dimensions must be non-zero, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width * height * channels as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                left: data.len(),
                right: expected,
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grayscale image by evaluating `f(x, y)` at every pixel.
    pub fn from_gray_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    /// Builds an RGB image by evaluating `f(x, y)` at every pixel.
    pub fn from_rgb_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    /// Gray value at `(x, y)`; panics on RGB images.
    #[inline]
    pub fn gray(&self, x: usize, y: usize) -> u8 {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        debug_assert_eq!(self.channels, 3);
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Iterates RGB triples in row-major order.
    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        debug_assert_eq!(self.channels, 3);
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn require_channels(&self, expected: u8) -> Result<()> {
        if self.channels != expected {
            return Err(Error::Channel {
                expected,
                actual: self.channels,
            });
        }
        Ok(())
    }

    /// Replicates a gray image into three identical channels. RGB input is
    /// returned unchanged.
    pub fn to_rgb(&self) -> ImageBuf {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Rotates by 90 degrees clockwise (exact raster rotation).
    pub fn rotate90(&self) -> ImageBuf {
        let (w, h, c) = (self.width, self.height, self.channels as usize);
        let mut data = vec![0u8; self.data.len()];
        // output is h wide, w tall; out(x', y') = in(y', h - 1 - x')
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = (h - 1 - y, x);
                let src = (y * w + x) * c;
                let dst = (ny * h + nx) * c;
                data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        ImageBuf {
            width: h,
            height: w,
            channels: self.channels,
            data,
        }
    }

    /// Nearest-neighbor resize to `width`x`height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> ImageBuf {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            let sy = (y * self.height / height).min(self.height - 1);
            for x in 0..width {
                let sx = (x * self.width / width).min(self.width - 1);
                let i = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[i..i + c]);
            }
        }
        ImageBuf {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    /// Writes the image as PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Decode(other.to_string()),
        })
    }
}

/// Position of a pixel: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelCoord {
    pub x: usize,
    pub y: usize,
}

impl PixelCoord {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                left: bits.len(),
                right: width * height,
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Drops `border` pixels from every side, matching planes that exclude
    /// the image border (such as LBP code maps).
    pub fn crop_border(&self, border: usize) -> Mask {
        let w = self.width.saturating_sub(2 * border);
        let h = self.height.saturating_sub(2 * border);
        let mut bits = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = (y + border) * self.width + border;
            bits.extend_from_slice(&self.bits[row..row + w]);
        }
        Mask {
            width: w,
            height: h,
            bits,
        }
    }
}

/// HSV planes with every component in `[0, 1]`; hue is degrees / 360.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

/// Decodes a PNG or JPEG byte stream.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuf> {
    let decoded = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    from_dynamic(decoded)
}

/// Reads and decodes an image file.
pub fn open_image(path: &Path) -> Result<ImageBuf> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

fn from_dynamic(img: image::DynamicImage) -> Result<ImageBuf> {
    use image::ColorType;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
            ImageBuf::new(w, h, 1, img.into_luma8().into_raw())
        }
        _ => ImageBuf::new(w, h, 3, img.into_rgb8().into_raw()),
    }
}

/// Converts one RGB pixel to `(h, s, v)` with every component in `[0, 1]`.
pub fn rgb_pixel_to_hsv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let r = r as f64 / 255.0;
    let g = g as f64 / 255.0;
    let b = b as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    // rem_euclid can land exactly on 1.0 for tiny negative inputs
    let h = if h >= 1.0 { 0.0 } else { h };
    (h, s, v)
}

pub fn rgb_to_hsv(img: &ImageBuf) -> Result<HsvImage> {
    img.require_channels(3)?;
    let n = img.len();
    let mut out = HsvImage {
        width: img.width(),
        height: img.height(),
        h: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for px in img.rgb_pixels() {
        let (h, s, v) = rgb_pixel_to_hsv(px);
        out.h.push(h);
        out.s.push(s);
        out.v.push(v);
    }
    Ok(out)
}

/// Luma `round(0.299 R + 0.587 G + 0.114 B)`; gray input is returned as is.
pub fn to_grayscale(img: &ImageBuf) -> ImageBuf {
    if img.is_gray() {
        return img.clone();
    }
    let data = img
        .rgb_pixels()
        .map(|[r, g, b]| {
            let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImageBuf {
        width: img.width(),
        height: img.height(),
        channels: 1,
        data,
    }
}

/// The 8-bit HSV value channel, `max(R, G, B)`.
pub fn value_channel(img: &ImageBuf) -> ImageBuf {
    if img.is_gray() {
        return img.clone();
    }
    let data = img
        .rgb_pixels()
        .map(|[r, g, b]| r.max(g).max(b))
        .collect();
    ImageBuf {
        width: img.width(),
        height: img.height(),
        channels: 1,
        data,
    }
}

/// Crops a `side`x`side` window centered on `center`. For even sides the
/// center sits at offset `side / 2`. Pixels outside the source are filled by
/// replicating the nearest edge pixel.
pub fn crop_patch(img: &ImageBuf, center: PixelCoord, side: usize) -> ImageBuf {
    assert!(side >= 1, "patch side must be at least 1");
    let c = img.channels as usize;
    let half = (side / 2) as isize;
    let x0 = center.x as isize - half;
    let y0 = center.y as isize - half;
    let max_x = img.width as isize - 1;
    let max_y = img.height as isize - 1;
    let mut data = Vec::with_capacity(side * side * c);
    for dy in 0..side as isize {
        let sy = (y0 + dy).clamp(0, max_y) as usize;
        for dx in 0..side as isize {
            let sx = (x0 + dx).clamp(0, max_x) as usize;
            let i = (sy * img.width + sx) * c;
            data.extend_from_slice(&img.data[i..i + c]);
        }
    }
    ImageBuf {
        width: side,
        height: side,
        channels: img.channels,
        data,
    }
}
