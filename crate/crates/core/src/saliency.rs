//! Histogram-contrast saliency and foreground/background segmentation.
//!
//! Each color's saliency is its frequency-weighted Lab distance to every
//! other color in the image, so the map depends only on the color histogram
//! and on each pixel's own color.

use crate::error::{Error, Result};
use crate::image::{ImageBuf, Mask};

/// Quantization levels per RGB channel.
pub const QUANT_LEVELS: usize = 12;
/// Fraction of pixels the retained (most frequent) colors must cover.
pub const COLOR_COVERAGE: f64 = 0.95;

const FOREGROUND_MAX_FRACTION: f64 = 0.95;

/// Per-pixel prominence in `[0, 1]`, same size as the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                left: values.len(),
                right: width * height,
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Foreground and background partition of the pixel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMasks {
    pub foreground: Mask,
    pub background: Mask,
}

impl RegionMasks {
    pub fn from_foreground(foreground: Mask) -> Self {
        let background = foreground.complement();
        Self {
            foreground,
            background,
        }
    }
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (D65) to CIE L*a*b*.
pub fn rgb_to_lab(rgb: [u8; 3], linear: &[f64; 256]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| linear[c as usize]);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / 0.950_47), lab_f(y), lab_f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn linear_table() -> [f64; 256] {
    let mut t = [0.0; 256];
    for (i, v) in t.iter_mut().enumerate() {
        *v = srgb_to_linear(i as u8);
    }
    t
}

#[inline]
fn lab_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[inline]
fn quantize(rgb: [u8; 3]) -> usize {
    let q = |c: u8| c as usize * QUANT_LEVELS / 256;
    (q(rgb[0]) * QUANT_LEVELS + q(rgb[1])) * QUANT_LEVELS + q(rgb[2])
}

/// Histogram-contrast saliency of an RGB image.
pub fn compute_saliency_hc(img: &ImageBuf) -> Result<SaliencyMap> {
    img.require_channels(3)?;
    let linear = linear_table();
    let bins = QUANT_LEVELS.pow(3);
    let n = img.len();

    let mut counts = vec![0usize; bins];
    let mut lab_sums = vec![[0.0f64; 3]; bins];
    let mut pixel_bin = Vec::with_capacity(n);
    for px in img.rgb_pixels() {
        let b = quantize(px);
        let lab = rgb_to_lab(px, &linear);
        counts[b] += 1;
        for (s, l) in lab_sums[b].iter_mut().zip(lab) {
            *s += l;
        }
        pixel_bin.push(b);
    }

    // most frequent first; ties by bin id
    let mut order: Vec<usize> = (0..bins).filter(|&b| counts[b] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let needed = (COLOR_COVERAGE * n as f64).ceil() as usize;
    let mut covered = 0;
    let mut kept = 0;
    for &b in &order {
        covered += counts[b];
        kept += 1;
        if covered >= needed {
            break;
        }
    }

    let mean = |b: usize| lab_sums[b].map(|s| s / counts[b] as f64);
    let kept_bins = &order[..kept];
    let kept_means: Vec<[f64; 3]> = kept_bins.iter().map(|&b| mean(b)).collect();

    // every occupied bin maps to a retained color
    let mut color_of_bin = vec![usize::MAX; bins];
    for (i, &b) in kept_bins.iter().enumerate() {
        color_of_bin[b] = i;
    }
    for &b in &order[kept..] {
        let m = mean(b);
        let nearest = kept_means
            .iter()
            .enumerate()
            .map(|(i, c)| (i, lab_distance(&m, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .expect("at least one color is retained");
        color_of_bin[b] = nearest;
    }

    // merged statistics of each retained color
    let k = kept;
    let mut color_counts = vec![0usize; k];
    let mut color_sums = vec![[0.0f64; 3]; k];
    for &b in &order {
        let c = color_of_bin[b];
        color_counts[c] += counts[b];
        for (s, l) in color_sums[c].iter_mut().zip(lab_sums[b]) {
            *s += l;
        }
    }
    let colors: Vec<[f64; 3]> = color_sums
        .iter()
        .zip(&color_counts)
        .map(|(s, &c)| s.map(|v| v / c as f64))
        .collect();
    let freq: Vec<f64> = color_counts.iter().map(|&c| c as f64 / n as f64).collect();

    let mut dist = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = lab_distance(&colors[i], &colors[j]);
            dist[i * k + j] = d;
            dist[j * k + i] = d;
        }
    }
    let raw: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| freq[j] * dist[i * k + j]).sum())
        .collect();

    // color-space smoothing over the m nearest colors (self included)
    let m = k.div_ceil(4);
    let smoothed: Vec<f64> = (0..k)
        .map(|i| {
            if m < 2 {
                return raw[i];
            }
            let mut nearest: Vec<usize> = (0..k).collect();
            nearest.sort_by(|&a, &b| dist[i * k + a].total_cmp(&dist[i * k + b]).then(a.cmp(&b)));
            let nearest = &nearest[..m];
            let t: f64 = nearest.iter().map(|&j| dist[i * k + j]).sum();
            let mut weight_sum = 0.0;
            let mut acc = 0.0;
            for &j in nearest {
                let w = t - dist[i * k + j];
                weight_sum += w;
                acc += w * raw[j];
            }
            if weight_sum > 0.0 {
                acc / weight_sum
            } else {
                raw[i]
            }
        })
        .collect();

    let (lo, hi) = smoothed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let normalized: Vec<f64> = if range > 1e-12 {
        smoothed.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; k]
    };

    let values = pixel_bin
        .iter()
        .map(|&b| normalized[color_of_bin[b]])
        .collect();
    SaliencyMap::new(img.width(), img.height(), values)
}

#[inline]
fn histogram_bin(v: f64) -> usize {
    ((v * 256.0) as usize).min(255)
}

/// Otsu threshold on a 256-bin histogram: returns the bin index `t` that
/// maximizes the between-class variance of `bins <= t` vs `bins > t`.
pub fn otsu_bin(hist: &[usize; 256]) -> usize {
    let total: usize = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total_f - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1).powi(2);
        if var > best_var {
            best_var = var;
            best = t;
        }
    }
    best
}

/// Splits a saliency map into foreground and background.
///
/// Otsu's threshold first; if that leaves the foreground empty or above 95%
/// of the image, pixels at or above twice the mean saliency; if that is
/// still degenerate, the 25% most salient pixels (ties broken by position).
pub fn segment(map: &SaliencyMap) -> RegionMasks {
    let n = map.values.len();
    let acceptable = |count: usize| count > 0 && (count as f64) <= FOREGROUND_MAX_FRACTION * n as f64;

    let mut hist = [0usize; 256];
    for &v in &map.values {
        hist[histogram_bin(v)] += 1;
    }
    let t = otsu_bin(&hist);
    let otsu: Vec<bool> = map.values.iter().map(|&v| histogram_bin(v) > t).collect();
    if acceptable(otsu.iter().filter(|&&b| b).count()) {
        return masks(map, otsu);
    }

    let mean = map.values.iter().sum::<f64>() / n as f64;
    let doubled: Vec<bool> = map.values.iter().map(|&v| v >= 2.0 * mean).collect();
    if acceptable(doubled.iter().filter(|&&b| b).count()) {
        return masks(map, doubled);
    }

    let keep = n.div_ceil(4).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    let mut top = vec![false; n];
    for &i in &idx[..keep] {
        top[i] = true;
    }
    masks(map, top)
}

fn masks(map: &SaliencyMap, bits: Vec<bool>) -> RegionMasks {
    let fg = Mask::new(map.width, map.height, bits).expect("mask matches map size");
    RegionMasks::from_foreground(fg)
}

/// 8-bit rendering of the map, `round(255 * s)` with halves rounded up.
pub fn saliency_to_image(map: &SaliencyMap) -> ImageBuf {
    ImageBuf::from_gray_fn(map.width, map.height, |x, y| {
        (255.0 * map.get(x, y) + 0.5).floor().clamp(0.0, 255.0) as u8
    })
}
