//! Region histograms (hue, saturation, value-channel LBP), the LBP of the
//! saliency map, and the eight-slot weighted feature bundle.

use crate::error::{Error, Result};
use crate::image::{rgb_to_hsv, value_channel, ImageBuf, Mask};
use crate::saliency::{saliency_to_image, RegionMasks, SaliencyMap};

pub const DEFAULT_HS_BINS: usize = 32;
pub const DEFAULT_LBP_BINS: usize = 256;

/// 8-neighbor radius-1 LBP codes; the one-pixel image border is excluded,
/// so the plane is `(width - 2) x (height - 2)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePlane {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u8>,
}

// clockwise from the top-left neighbor; bit k is 2^k
const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

pub fn lbp_code_map(gray: &ImageBuf) -> Result<CodePlane> {
    gray.require_channels(1)?;
    let (w, h) = (gray.width(), gray.height());
    if w < 3 || h < 3 {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let data = gray.data();
    let mut codes = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let center = data[y * w + x];
            let mut code = 0u8;
            for (k, (dx, dy)) in NEIGHBORS.iter().enumerate() {
                let nx = (x as isize + dx) as usize;
                let ny = (y as isize + dy) as usize;
                if data[ny * w + nx] >= center {
                    code |= 1 << k;
                }
            }
            codes.push(code);
        }
    }
    Ok(CodePlane {
        width: w - 2,
        height: h - 2,
        codes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<f64>,
    pub normalized: bool,
}

impl Histogram {
    pub fn zeros(bins: usize) -> Self {
        Self {
            bins: vec![0.0; bins],
            normalized: true,
        }
    }

    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        let bins = if total == 0 {
            vec![0.0; counts.len()]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        Self {
            bins,
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.bins.iter().all(|&b| b == 0.0)
    }
}

/// Maps a sample onto one of `bins` equal-width bins.
pub trait Binnable: Copy {
    fn bin(self, bins: usize) -> usize;
}

/// 8-bit codes and intensities span `0..256`.
impl Binnable for u8 {
    #[inline]
    fn bin(self, bins: usize) -> usize {
        self as usize * bins / 256
    }
}

/// Unit-interval values; 1.0 falls in the last bin.
impl Binnable for f64 {
    #[inline]
    fn bin(self, bins: usize) -> usize {
        ((self * bins as f64) as usize).min(bins - 1)
    }
}

/// L1-normalized histogram over the samples selected by `mask`; all zeros
/// when the mask selects nothing.
pub fn masked_histogram<T: Binnable>(values: &[T], mask: &Mask, bins: usize) -> Result<Histogram> {
    if values.len() != mask.bits().len() {
        return Err(Error::DimensionMismatch {
            left: values.len(),
            right: mask.bits().len(),
        });
    }
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    for (&v, &keep) in values.iter().zip(mask.bits()) {
        if keep {
            counts[v.bin(bins)] += 1;
        }
    }
    Ok(Histogram::from_counts(&counts))
}

/// Slot names in bundle order.
pub const SLOT_NAMES: [&str; 8] = [
    "fg_hue", "fg_sat", "fg_lbp_v", "fg_words", "bg_hue", "bg_sat", "bg_lbp_v", "sal_lbp",
];

/// One weight per bundle slot, in slot order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWeights(pub [f64; 8]);

impl Default for FeatureWeights {
    fn default() -> Self {
        Self([2.0, 2.0, 3.0, 1.5, 1.0, 1.0, 2.0, 1.5])
    }
}

impl FeatureWeights {
    pub const SALIENCY_LBP: usize = 7;

    pub fn with_saliency_lbp(mut self, weight: f64) -> Self {
        self.0[Self::SALIENCY_LBP] = weight;
        self
    }
}

/// The eight per-image features: foreground hue, saturation, V-channel LBP
/// and visual-word histograms; background hue, saturation and V-channel
/// LBP; and the LBP histogram of the whole saliency map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub slots: [Histogram; 8],
    pub weights: FeatureWeights,
}

impl FeatureBundle {
    pub fn fg_hue(&self) -> &Histogram {
        &self.slots[0]
    }

    pub fn fg_sat(&self) -> &Histogram {
        &self.slots[1]
    }

    pub fn fg_lbp_v(&self) -> &Histogram {
        &self.slots[2]
    }

    pub fn fg_words(&self) -> &Histogram {
        &self.slots[3]
    }

    pub fn bg_hue(&self) -> &Histogram {
        &self.slots[4]
    }

    pub fn bg_sat(&self) -> &Histogram {
        &self.slots[5]
    }

    pub fn bg_lbp_v(&self) -> &Histogram {
        &self.slots[6]
    }

    pub fn sal_lbp(&self) -> &Histogram {
        &self.slots[7]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBins {
    pub hs: usize,
    pub lbp: usize,
}

impl Default for HistogramBins {
    fn default() -> Self {
        Self {
            hs: DEFAULT_HS_BINS,
            lbp: DEFAULT_LBP_BINS,
        }
    }
}

/// Assembles the bundle for an RGB image. `word_hist` is the foreground
/// visual-word histogram.
pub fn build_bundle(
    img: &ImageBuf,
    masks: &RegionMasks,
    saliency: &SaliencyMap,
    word_hist: Histogram,
    weights: FeatureWeights,
    bins: HistogramBins,
) -> Result<FeatureBundle> {
    let rgb = img.to_rgb();
    let hsv = rgb_to_hsv(&rgb)?;
    let v_codes = lbp_code_map(&value_channel(&rgb))?;
    let sal_codes = lbp_code_map(&saliency_to_image(saliency))?;

    let fg = &masks.foreground;
    let bg = &masks.background;
    let (fg_inner, bg_inner) = (fg.crop_border(1), bg.crop_border(1));
    let everywhere = Mask::filled(sal_codes.width, sal_codes.height, true);

    Ok(FeatureBundle {
        slots: [
            masked_histogram(&hsv.h, fg, bins.hs)?,
            masked_histogram(&hsv.s, fg, bins.hs)?,
            masked_histogram(&v_codes.codes, &fg_inner, bins.lbp)?,
            word_hist,
            masked_histogram(&hsv.h, bg, bins.hs)?,
            masked_histogram(&hsv.s, bg, bins.hs)?,
            masked_histogram(&v_codes.codes, &bg_inner, bins.lbp)?,
            masked_histogram(&sal_codes.codes, &everywhere, bins.lbp)?,
        ],
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::{compute_saliency_hc, segment};
    use proptest::prelude::*;

    #[test]
    fn lbp_reference_codes() {
        let flat = ImageBuf::from_gray_fn(5, 4, |_, _| 77);
        let codes = lbp_code_map(&flat).unwrap();
        assert_eq!((codes.width, codes.height), (3, 2));
        assert!(codes.codes.iter().all(|&c| c == 255));

        let peak = ImageBuf::new(3, 3, 1, vec![0, 0, 0, 0, 255, 0, 0, 0, 0]).unwrap();
        assert_eq!(lbp_code_map(&peak).unwrap().codes, vec![0]);

        let bars = ImageBuf::new(3, 3, 1, vec![5, 5, 5, 0, 9, 0, 5, 5, 5]).unwrap();
        assert_eq!(lbp_code_map(&bars).unwrap().codes, vec![0]);

        // only the right neighbor (bit 3) and the top-left (bit 0) are >= center
        let two = ImageBuf::new(3, 3, 1, vec![9, 1, 1, 1, 5, 6, 1, 1, 1]).unwrap();
        assert_eq!(lbp_code_map(&two).unwrap().codes, vec![0b0000_1001]);
    }

    #[test]
    fn lbp_too_small() {
        let img = ImageBuf::from_gray_fn(2, 10, |_, _| 0);
        assert!(matches!(lbp_code_map(&img), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn histogram_examples() {
        let plane = vec![40u8; 12];
        let all = Mask::filled(4, 3, true);
        let h = masked_histogram(&plane, &all, 256).unwrap();
        assert_eq!(h.bins[40], 1.0);
        assert_eq!(h.sum(), 1.0);

        let none = Mask::filled(4, 3, false);
        assert!(masked_histogram(&plane, &none, 256).unwrap().is_zero());

        let split: Vec<u8> = (0..12).map(|i| if i % 4 < 2 { 10 } else { 200 }).collect();
        let left = Mask::new(4, 3, (0..12).map(|i| i % 4 < 2).collect()).unwrap();
        let a = masked_histogram(&split, &left, 256).unwrap();
        let b = masked_histogram(&split, &left.complement(), 256).unwrap();
        assert_eq!((a.bins[10], b.bins[200]), (1.0, 1.0));

        let wrong = Mask::filled(5, 3, true);
        assert!(matches!(
            masked_histogram(&plane, &wrong, 8),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unit_values_bin_edges() {
        assert_eq!(0.0f64.bin(32), 0);
        assert_eq!(1.0f64.bin(32), 31);
        assert_eq!(0.5f64.bin(32), 16);
        assert_eq!(255u8.bin(32), 31);
        assert_eq!(255u8.bin(256), 255);
    }

    fn scene() -> ImageBuf {
        ImageBuf::from_rgb_fn(48, 40, |x, y| {
            let dx = x as f64 - 24.0;
            let dy = y as f64 - 20.0;
            if dx * dx + dy * dy < 100.0 {
                [220, (x * 3) as u8, 40]
            } else {
                [30, 90 + (y % 7) as u8, 160]
            }
        })
    }

    #[test]
    fn bundle_layout_and_defaults() {
        let img = scene();
        let sal = compute_saliency_hc(&img).unwrap();
        let masks = segment(&sal);
        let words = Histogram::from_counts(&[3, 1, 0, 0, 4]);
        let bundle = build_bundle(
            &img,
            &masks,
            &sal,
            words.clone(),
            FeatureWeights::default(),
            HistogramBins::default(),
        )
        .unwrap();
        assert_eq!(bundle.slots.len(), 8);
        assert_eq!(bundle.weights.0, [2.0, 2.0, 3.0, 1.5, 1.0, 1.0, 2.0, 1.5]);
        assert_eq!(bundle.fg_words(), &words);
        assert_eq!(bundle.fg_hue().len(), 32);
        assert_eq!(bundle.bg_lbp_v().len(), 256);
        for slot in &bundle.slots {
            let s = slot.sum();
            assert!((s - 1.0).abs() < 1e-9 || slot.is_zero());
        }
    }

    #[test]
    fn empty_foreground_gives_zero_histograms() {
        let img = scene();
        let sal = compute_saliency_hc(&img).unwrap();
        let masks = RegionMasks::from_foreground(Mask::filled(48, 40, false));
        let bundle = build_bundle(
            &img,
            &masks,
            &sal,
            Histogram::zeros(10),
            FeatureWeights::default(),
            HistogramBins::default(),
        )
        .unwrap();
        assert!(bundle.fg_hue().is_zero() && bundle.fg_sat().is_zero() && bundle.fg_lbp_v().is_zero());
        assert!((bundle.bg_hue().sum() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn lbp_ignores_monotonic_remap(
            pixels in proptest::collection::vec(0u8..64, 36),
            steps in proptest::collection::vec(1u8..=3, 64),
        ) {
            // strictly increasing lookup table on 0..64
            let mut lut = [0u8; 64];
            for i in 1..64 {
                lut[i] = lut[i - 1] + steps[i];
            }
            let img = ImageBuf::new(6, 6, 1, pixels.clone()).unwrap();
            let remapped = ImageBuf::new(6, 6, 1, pixels.iter().map(|&p| lut[p as usize]).collect()).unwrap();
            prop_assert_eq!(lbp_code_map(&img).unwrap(), lbp_code_map(&remapped).unwrap());
        }

        #[test]
        fn region_histograms_partition(values in proptest::collection::vec(0u8..=255, 64), bits in proptest::collection::vec(any::<bool>(), 64)) {
            let fg = Mask::new(8, 8, bits).unwrap();
            let bg = fg.complement();
            let full = masked_histogram(&values, &Mask::filled(8, 8, true), 16).unwrap();
            let a = masked_histogram(&values, &fg, 16).unwrap();
            let b = masked_histogram(&values, &bg, 16).unwrap();
            let (na, nb) = (fg.count() as f64, bg.count() as f64);
            for i in 0..16 {
                prop_assert!((na * a.bins[i] + nb * b.bins[i] - 64.0 * full.bins[i]).abs() < 1e-9);
            }
            for h in [&a, &b] {
                prop_assert!((h.sum() - 1.0).abs() < 1e-9 || h.is_zero());
            }
        }
    }
}
