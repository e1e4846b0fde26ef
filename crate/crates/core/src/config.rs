//! Flat `key=value` configuration shared by indexing and querying.

use std::fmt::Write as _;
use std::path::Path;

use crate::bovw::DEFAULT_VOCAB_K;
use crate::error::{Error, Result};
use crate::features::{FeatureWeights, HistogramBins};
use crate::keypoints::DetectorParams;
use crate::moments::IkmMode;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub patch_side: usize,
    pub vocab_k: usize,
    pub ikm_mode: IkmMode,
    pub hs_bins: usize,
    pub lbp_bins: usize,
    pub weights: FeatureWeights,
    pub seed: u64,
    pub max_keypoints: usize,
    pub dog_threshold: f64,
    pub dog_octaves: usize,
    pub dog_scales: usize,
    pub dog_upsample: bool,
    pub skip_grayscale: bool,
}

impl Default for Config {
    fn default() -> Self {
        let dog = DetectorParams::default();
        let bins = HistogramBins::default();
        Self {
            patch_side: 30,
            vocab_k: DEFAULT_VOCAB_K,
            ikm_mode: IkmMode::Single,
            hs_bins: bins.hs,
            lbp_bins: bins.lbp,
            weights: FeatureWeights::default(),
            seed: 42,
            max_keypoints: dog.max_keypoints,
            dog_threshold: dog.threshold,
            dog_octaves: dog.octaves,
            dog_scales: dog.scales_per_octave,
            dog_upsample: dog.upsample,
            skip_grayscale: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut sal_weight = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "patch_side" => cfg.patch_side = parse(key, value)?,
                "vocab_k" => cfg.vocab_k = parse(key, value)?,
                "ikm_mode" => cfg.ikm_mode = value.parse()?,
                "hs_bins" => cfg.hs_bins = parse(key, value)?,
                "lbp_bins" => cfg.lbp_bins = parse(key, value)?,
                "weights" => {
                    let w: Vec<f64> = value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?;
                    cfg.weights = FeatureWeights(w.try_into().map_err(|w: Vec<f64>| {
                        Error::Config(format!("weights needs 8 values, got {}", w.len()))
                    })?);
                }
                "lbp_sm_weight" => sal_weight = Some(parse(key, value)?),
                "seed" => cfg.seed = parse(key, value)?,
                "max_keypoints" => cfg.max_keypoints = parse(key, value)?,
                "dog_threshold" => cfg.dog_threshold = parse(key, value)?,
                "dog_octaves" => cfg.dog_octaves = parse(key, value)?,
                "dog_scales" => cfg.dog_scales = parse(key, value)?,
                "dog_upsample" => cfg.dog_upsample = parse(key, value)?,
                "skip_grayscale" => cfg.skip_grayscale = parse(key, value)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        if let Some(w) = sal_weight {
            cfg.weights = cfg.weights.with_saliency_lbp(w);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.patch_side < 4 {
            return fail("patch_side must be at least 4");
        }
        if self.vocab_k == 0 {
            return fail("vocab_k must be at least 1");
        }
        if self.hs_bins == 0 || self.lbp_bins == 0 || self.lbp_bins > 256 {
            return fail("histogram bins must be in 1..=256");
        }
        if self.weights.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return fail("weights must be finite and non-negative");
        }
        if self.dog_octaves == 0 || self.dog_scales == 0 {
            return fail("dog_octaves and dog_scales must be at least 1");
        }
        if !(self.dog_threshold >= 0.0) {
            return fail("dog_threshold must be non-negative");
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let weights: Vec<String> = self.weights.0.iter().map(|w| w.to_string()).collect();
        vec![
            ("patch_side", self.patch_side.to_string()),
            ("vocab_k", self.vocab_k.to_string()),
            ("ikm_mode", self.ikm_mode.as_str().into()),
            ("hs_bins", self.hs_bins.to_string()),
            ("lbp_bins", self.lbp_bins.to_string()),
            ("weights", weights.join(",")),
            ("seed", self.seed.to_string()),
            ("max_keypoints", self.max_keypoints.to_string()),
            ("dog_threshold", self.dog_threshold.to_string()),
            ("dog_octaves", self.dog_octaves.to_string()),
            ("dog_scales", self.dog_scales.to_string()),
            ("dog_upsample", self.dog_upsample.to_string()),
            ("skip_grayscale", self.skip_grayscale.to_string()),
        ]
    }

    pub fn detector(&self) -> DetectorParams {
        DetectorParams {
            octaves: self.dog_octaves,
            scales_per_octave: self.dog_scales,
            threshold: self.dog_threshold,
            max_keypoints: self.max_keypoints,
            upsample: self.dog_upsample,
            ..DetectorParams::default()
        }
    }

    pub fn bins(&self) -> HistogramBins {
        HistogramBins {
            hs: self.hs_bins,
            lbp: self.lbp_bins,
        }
    }
}
