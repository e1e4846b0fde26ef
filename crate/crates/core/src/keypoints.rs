//! Difference-of-Gaussians interest points and fixed-size patch extraction.
//!
//! Only detection is done here; patches stay axis-aligned because the
//! moment descriptor supplies rotation invariance itself.

use crate::error::{Error, Result};
use crate::image::{crop_patch, ImageBuf, PixelCoord};
use crate::saliency::RegionMasks;

/// Smallest image side the detector accepts.
pub const MIN_DETECT_SIDE: usize = 32;
/// Spacing of the fallback keypoint grid.
pub const GRID_SPACING: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub position: PixelCoord,
    /// Gaussian sigma of the detecting scale, in full-resolution pixels.
    pub scale: f64,
    /// `|DoG|` at the extremum; intensities are on `[0, 1]`.
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f64,
    /// Blur already present in the input image.
    pub input_sigma: f64,
    pub threshold: f64,
    pub max_keypoints: usize,
    /// Start the pyramid on a 2x bilinear upsampling of the input, so the
    /// first octave resolves blobs a few pixels across.
    pub upsample: bool,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales_per_octave: 3,
            base_sigma: 1.6,
            input_sigma: 0.5,
            threshold: 0.03,
            max_keypoints: 500,
            upsample: true,
        }
    }
}

#[derive(Debug, Clone)]
struct FloatImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FloatImage {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn downsample(&self) -> FloatImage {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        FloatImage {
            width: w,
            height: h,
            data,
        }
    }

    fn upsample(&self) -> FloatImage {
        let (w, h) = (self.width * 2, self.height * 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = (y as f32 / 2.0).min((self.height - 1) as f32);
            let (y0, fy) = (sy.floor() as usize, sy.fract());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..w {
                let sx = (x as f32 / 2.0).min((self.width - 1) as f32);
                let (x0, fx) = (sx.floor() as usize, sx.fract());
                let x1 = (x0 + 1).min(self.width - 1);
                let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
                let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        FloatImage {
            width: w,
            height: h,
            data,
        }
    }

    fn sub(&self, other: &FloatImage) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with edge replication.
fn blur(img: &FloatImage, sigma: f64) -> FloatImage {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = vec![0.0f32; img.data.len()];
    for y in 0..h {
        let row = &img.data[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sx = (x + i as isize - r).clamp(0, w - 1) as usize;
                acc += k * row[sx];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sy = (y + i as isize - r).clamp(0, h - 1) as usize;
                acc += k * tmp[sy * w as usize + x as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    FloatImage {
        width: img.width,
        height: img.height,
        data: out,
    }
}

fn is_extremum(dogs: &[FloatImage], s: usize, x: usize, y: usize) -> bool {
    let v = dogs[s].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for layer in &dogs[s - 1..=s + 1] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if std::ptr::eq(layer, &dogs[s]) && nx == x && ny == y {
                    continue;
                }
                let n = layer.at(nx, ny);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

/// Scale-space extrema of the difference-of-Gaussians pyramid, strongest
/// first. Several scales firing at the same pixel collapse into the
/// strongest one, since they would produce identical patches.
pub fn detect_keypoints(gray: &ImageBuf, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    gray.require_channels(1)?;
    if gray.width() < MIN_DETECT_SIDE || gray.height() < MIN_DETECT_SIDE {
        return Err(Error::TooSmall {
            width: gray.width(),
            height: gray.height(),
            min: MIN_DETECT_SIDE,
        });
    }
    let s = params.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    let sigma0 = params.base_sigma;

    let mut input = FloatImage {
        width: gray.width(),
        height: gray.height(),
        data: gray.data().iter().map(|&v| v as f32 / 255.0).collect(),
    };
    let mut input_sigma = params.input_sigma;
    if params.upsample {
        input = input.upsample();
        input_sigma *= 2.0;
    }
    // full-resolution pixels per pyramid pixel, times two
    let mut step2 = if params.upsample { 1 } else { 2 };
    let initial = (sigma0 * sigma0 - input_sigma * input_sigma)
        .max(0.01)
        .sqrt();
    let mut base = blur(&input, initial);

    let mut found = Vec::new();
    for _ in 0..params.octaves {
        if base.width < 3 || base.height < 3 {
            break;
        }
        let mut gauss = vec![base.clone()];
        for i in 1..s + 3 {
            let prev = sigma0 * k.powi(i as i32 - 1);
            let cur = sigma0 * k.powi(i as i32);
            let step = (cur * cur - prev * prev).sqrt();
            let next = blur(&gauss[i - 1], step);
            gauss.push(next);
        }
        let dogs: Vec<FloatImage> = gauss.windows(2).map(|w| w[1].sub(&w[0])).collect();
        let factor = step2 as f64 / 2.0;
        for layer in 1..=s {
            for y in 1..base.height - 1 {
                for x in 1..base.width - 1 {
                    let v = dogs[layer].at(x, y) as f64;
                    if v.abs() < params.threshold || !is_extremum(&dogs, layer, x, y) {
                        continue;
                    }
                    let position = PixelCoord::new(
                        (x * step2 / 2).min(gray.width() - 1),
                        (y * step2 / 2).min(gray.height() - 1),
                    );
                    found.push(Keypoint {
                        position,
                        scale: sigma0 * k.powi(layer as i32) * factor,
                        response: v.abs(),
                    });
                }
            }
        }
        base = gauss[s].downsample();
        step2 *= 2;
    }

    found.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.position.cmp(&b.position))
            .then(a.scale.total_cmp(&b.scale))
    });
    let mut seen = std::collections::HashSet::new();
    found.retain(|kp| seen.insert(kp.position));
    found.truncate(params.max_keypoints);
    if found.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(found)
}

/// Regular grid of keypoints at the centers of `spacing`-sized cells; used
/// when detection finds nothing. Images smaller than one cell get a single
/// keypoint at their center.
pub fn grid_keypoints(width: usize, height: usize, spacing: usize) -> Vec<Keypoint> {
    let axis = |len: usize| -> Vec<usize> {
        if len < spacing {
            vec![len / 2]
        } else {
            (0..len / spacing).map(|i| i * spacing + spacing / 2).collect()
        }
    };
    let (xs, ys) = (axis(width), axis(height));
    ys.iter()
        .flat_map(|&y| {
            xs.iter().map(move |&x| Keypoint {
                position: PixelCoord::new(x, y),
                scale: spacing as f64 / 2.0,
                response: 0.0,
            })
        })
        .collect()
}

/// Detected keypoints, or the fallback grid when detection yields nothing or
/// the image is below the detector's minimum size.
pub fn keypoints_or_grid(gray: &ImageBuf, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    match detect_keypoints(gray, params) {
        Ok(kps) => Ok(kps),
        Err(Error::EmptyResult) | Err(Error::TooSmall { .. }) => {
            let mut grid = grid_keypoints(gray.width(), gray.height(), GRID_SPACING);
            grid.truncate(params.max_keypoints);
            Ok(grid)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: ImageBuf,
    pub keypoint: Keypoint,
    pub in_foreground: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// One `side`x`side` patch per keypoint, flagged with the foreground mask
/// value at the keypoint.
pub fn extract_patches(
    gray: &ImageBuf,
    keypoints: &[Keypoint],
    masks: &RegionMasks,
    side: usize,
) -> PatchSet {
    let patches = keypoints
        .iter()
        .map(|kp| Patch {
            image: crop_patch(gray, kp.position, side),
            keypoint: *kp,
            in_foreground: masks.foreground.get(kp.position.x, kp.position.y),
        })
        .collect();
    PatchSet { patches }
}
