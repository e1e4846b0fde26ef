//! Dataset loading, the end-to-end indexing pipeline and mAP evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::bovw::{train_vocabulary, word_histogram};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{build_bundle, FeatureBundle, FeatureWeights, Histogram};
use crate::image::{open_image, to_grayscale, ImageBuf};
use crate::keypoints::{extract_patches, keypoints_or_grid};
use crate::moments::{IkmDescriptor, IkmExtractor};
use crate::retrieval::{query_weighted, IndexEntry, RetrievalIndex};
use crate::saliency::{compute_saliency_hc, saliency_to_image, segment};

/// Wang category names, indexed by `id / 100`.
pub const WANG_CLASSES: [&str; 10] = [
    "African", "beach", "building", "bus", "dinosaur", "elephant", "flower", "horse", "mountain", "food",
];

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestItem {
    pub path: PathBuf,
    /// Path relative to the dataset root, `/`-separated.
    pub image_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_count(&self) -> usize {
        let mut labels: Vec<&str> = self.items.iter().map(|i| i.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    }
}

fn layout(path: &Path, reason: impl Into<String>) -> Error {
    Error::Layout {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn wang_label(id: u64) -> Option<&'static str> {
    WANG_CLASSES.get((id / 100) as usize).copied()
}

fn wang_id(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.parse().ok()
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| layout(dir, e.to_string()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Reads either a flat directory of `<id>.jpg` files (label from `id / 100`)
/// or a directory of class subdirectories.
pub fn load_wang(root: &Path) -> Result<DatasetManifest> {
    let listing = sorted_dir(root)?;
    let files: Vec<&PathBuf> = listing.iter().filter(|p| p.is_file() && is_image(p)).collect();
    let dirs: Vec<&PathBuf> = listing.iter().filter(|p| p.is_dir()).collect();

    if !files.is_empty() {
        let mut items = Vec::with_capacity(files.len());
        for path in files {
            let id = wang_id(path).ok_or_else(|| layout(path, "file name is not a numeric image id"))?;
            let label = wang_label(id).ok_or_else(|| layout(path, format!("image id {id} is outside 0..1000")))?;
            items.push((id, path, label));
        }
        items.sort();
        return Ok(DatasetManifest {
            root: root.to_path_buf(),
            items: items
                .into_iter()
                .map(|(_, path, label)| ManifestItem {
                    path: path.clone(),
                    image_id: file_name(path),
                    label: label.to_string(),
                })
                .collect(),
        });
    }

    let mut items = Vec::new();
    for dir in dirs {
        let label = file_name(dir);
        for path in sorted_dir(dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            items.push(ManifestItem {
                image_id: format!("{label}/{}", file_name(&path)),
                path,
                label: label.clone(),
            });
        }
    }
    if items.is_empty() {
        return Err(layout(root, "no numbered images and no class subdirectories with images"));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        items,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Manifest from a list file of root-relative paths, one per line. The label
/// is the parent directory name, or the Wang category for bare numeric names.
pub fn load_list(root: &Path, list: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(list).map_err(|e| layout(list, e.to_string()))?;
    let mut items = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let rel = Path::new(line);
        let path = root.join(rel);
        if !path.is_file() {
            return Err(layout(&path, "listed file does not exist"));
        }
        let parent = rel.parent().map(file_name).filter(|p| !p.is_empty());
        let label = match parent {
            Some(dir) => dir,
            None => wang_id(rel)
                .and_then(wang_label)
                .ok_or_else(|| layout(&path, "cannot derive a class label"))?
                .to_string(),
        };
        items.push(ManifestItem {
            path,
            image_id: line.replace('\\', "/"),
            label,
        });
    }
    if items.is_empty() {
        return Err(layout(list, "list is empty"));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        items,
    })
}

/// Seconds spent per stage. Per-image stages are summed over images, so
/// they exceed wall time when images run in parallel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub decode: f64,
    pub saliency: f64,
    pub keypoints: f64,
    pub descriptors: f64,
    pub histograms: f64,
    pub clustering: f64,
    pub wall: f64,
}

impl StageTimings {
    fn add(&mut self, o: &StageTimings) {
        self.decode += o.decode;
        self.saliency += o.saliency;
        self.keypoints += o.keypoints;
        self.descriptors += o.descriptors;
        self.histograms += o.histograms;
    }

    pub fn feature_extraction(&self) -> f64 {
        self.decode + self.saliency + self.keypoints + self.descriptors + self.histograms
    }
}

fn lap(t: &mut Instant) -> f64 {
    let now = Instant::now();
    let d: Duration = now - *t;
    *t = now;
    d.as_secs_f64()
}

/// Everything computed for one image before the vocabulary exists. The
/// word slot of `bundle` is empty until [`assign_words`] runs.
#[derive(Debug, Clone)]
pub struct ImageFeatures {
    pub bundle: FeatureBundle,
    pub descriptors: Vec<IkmDescriptor>,
    pub in_foreground: Vec<bool>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Directory receiving one saliency PNG per image.
    pub debug_saliency: Option<PathBuf>,
}

/// Saliency, segmentation, keypoints, patch descriptors and the seven
/// vocabulary-independent histograms of one decoded image.
pub fn extract_features(
    img: &ImageBuf,
    config: &Config,
    extractor: &IkmExtractor,
    debug_png: Option<&Path>,
) -> Result<ImageFeatures> {
    let mut timings = StageTimings::default();
    let mut t = Instant::now();
    let rgb = img.to_rgb();
    let saliency = compute_saliency_hc(&rgb)?;
    let masks = segment(&saliency);
    if let Some(path) = debug_png {
        saliency_to_image(&saliency).save_png(path)?;
    }
    timings.saliency = lap(&mut t);

    let gray = to_grayscale(&rgb);
    let keypoints = keypoints_or_grid(&gray, &config.detector())?;
    let patches = extract_patches(&gray, &keypoints, &masks, config.patch_side);
    timings.keypoints = lap(&mut t);

    let mut descriptors = Vec::with_capacity(patches.len());
    let mut in_foreground = Vec::with_capacity(patches.len());
    for p in &patches.patches {
        match extractor.describe(&p.image) {
            Ok(d) => {
                descriptors.push(d);
                in_foreground.push(p.in_foreground);
            }
            Err(Error::DegenerateImage) => {}
            Err(e) => return Err(e),
        }
    }
    timings.descriptors = lap(&mut t);

    let bundle = build_bundle(
        &rgb,
        &masks,
        &saliency,
        Histogram::zeros(config.vocab_k),
        config.weights,
        config.bins(),
    )?;
    timings.histograms = lap(&mut t);
    Ok(ImageFeatures {
        bundle,
        descriptors,
        in_foreground,
        timings,
    })
}

pub fn assign_words(features: &mut ImageFeatures, index_vocab: &crate::bovw::Vocabulary) -> Result<()> {
    features.bundle.slots[3] = word_histogram(&features.descriptors, &features.in_foreground, index_vocab)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub index: RetrievalIndex,
    pub timings: StageTimings,
    /// `(image_id, error)` for every image that was skipped.
    pub failures: Vec<(String, String)>,
    pub skipped_grayscale: usize,
}

pub fn run_pipeline(manifest: &DatasetManifest, config: &Config) -> Result<PipelineOutput> {
    run_pipeline_with(manifest, config, &PipelineOptions::default())
}

pub fn run_pipeline_with(
    manifest: &DatasetManifest,
    config: &Config,
    options: &PipelineOptions,
) -> Result<PipelineOutput> {
    config.validate()?;
    let wall = Instant::now();
    let extractor = IkmExtractor::for_mode(config.patch_side, config.ikm_mode)?;
    if let Some(dir) = &options.debug_saliency {
        std::fs::create_dir_all(dir)?;
    }

    enum Outcome {
        Done(Box<ImageFeatures>),
        Gray,
        Failed(String),
    }

    let outcomes: Vec<Outcome> = manifest
        .items
        .par_iter()
        .map(|item| {
            let mut t = Instant::now();
            let img = match open_image(&item.path) {
                Ok(img) => img,
                Err(e) => return Outcome::Failed(e.to_string()),
            };
            if config.skip_grayscale && img.is_gray() {
                return Outcome::Gray;
            }
            let decode = lap(&mut t);
            let debug = options
                .debug_saliency
                .as_ref()
                .map(|d| d.join(format!("{}.saliency.png", item.image_id.replace('/', "_"))));
            match extract_features(&img, config, &extractor, debug.as_deref()) {
                Ok(mut f) => {
                    f.timings.decode = decode;
                    Outcome::Done(Box::new(f))
                }
                Err(e) => Outcome::Failed(e.to_string()),
            }
        })
        .collect();

    let mut timings = StageTimings::default();
    let mut failures = Vec::new();
    let mut skipped_grayscale = 0;
    let mut kept = Vec::new();
    for (item, outcome) in manifest.items.iter().zip(outcomes) {
        match outcome {
            Outcome::Done(f) => {
                timings.add(&f.timings);
                kept.push((item, *f));
            }
            Outcome::Gray => skipped_grayscale += 1,
            Outcome::Failed(e) => {
                log::warn!("skipping {}: {e}", item.image_id);
                failures.push((item.image_id.clone(), e));
            }
        }
    }
    let attempted = manifest.len() - skipped_grayscale;
    if failures.len() * 10 > attempted || kept.is_empty() {
        return Err(Error::Pipeline {
            failed: failures.len(),
            total: attempted,
        });
    }

    let t = Instant::now();
    let pool: Vec<IkmDescriptor> = kept.iter().flat_map(|(_, f)| f.descriptors.iter().cloned()).collect();
    let vocab = train_vocabulary(&pool, config.vocab_k, config.seed)?;
    timings.clustering = t.elapsed().as_secs_f64();

    let entries = kept
        .into_iter()
        .map(|(item, mut f)| {
            assign_words(&mut f, &vocab)?;
            Ok(IndexEntry {
                image_id: item.image_id.clone(),
                class_label: item.label.clone(),
                bundle: f.bundle,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = RetrievalIndex::new(entries, vocab, config.clone())?;
    timings.wall = wall.elapsed().as_secs_f64();
    log::info!(
        "indexed {} images ({} failed, {} grayscale skipped) in {:.2}s",
        index.len(),
        failures.len(),
        skipped_grayscale,
        timings.wall
    );
    Ok(PipelineOutput {
        index,
        timings,
        failures,
        skipped_grayscale,
    })
}

/// Full bundle for an image outside the index, using the index's
/// vocabulary and configuration.
pub fn bundle_for_image(img: &ImageBuf, index: &RetrievalIndex) -> Result<FeatureBundle> {
    let config = &index.config;
    let extractor = IkmExtractor::for_mode(config.patch_side, index.vocab.mode())?;
    let mut f = extract_features(img, config, &extractor, None)?;
    assign_words(&mut f, &index.vocab)?;
    Ok(f.bundle)
}

/// Mean of precision@rank over the ranks holding relevant items; `None`
/// when nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, _) in relevant.iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (rank + 1) as f64;
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone)]
pub struct QueryBundle {
    pub image_id: String,
    pub label: String,
    pub bundle: FeatureBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_class_map: BTreeMap<String, f64>,
    pub per_class_queries: BTreeMap<String, usize>,
    pub overall_map: f64,
    pub queries: usize,
    /// Queries whose class has no other member in the index.
    pub skipped_queries: usize,
    pub config: BTreeMap<String, String>,
    pub timings: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Ranks the index against every query (a query that is itself an index
/// entry is excluded from its own ranking) and averages AP per class.
pub fn evaluate_queries(index: &RetrievalIndex, queries: &[QueryBundle], weights: &FeatureWeights) -> Result<EvalReport> {
    let t = Instant::now();
    let aps: Vec<Option<f64>> = queries
        .par_iter()
        .map(|q| {
            let ranked = query_weighted(index, &q.bundle, weights, Some(&q.image_id))?;
            let relevant: Vec<bool> = ranked
                .ranked
                .iter()
                .map(|r| index.entries[index.position(&r.image_id).unwrap()].class_label == q.label)
                .collect();
            Ok(average_precision(&relevant))
        })
        .collect::<Result<_>>()?;

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for (q, ap) in queries.iter().zip(&aps) {
        match ap {
            Some(ap) => {
                let e = sums.entry(q.label.clone()).or_default();
                e.0 += ap;
                e.1 += 1;
            }
            None => skipped += 1,
        }
    }
    let evaluated: usize = sums.values().map(|s| s.1).sum();
    let total: f64 = sums.values().map(|s| s.0).sum();
    let mut config: BTreeMap<String, String> = index
        .config
        .pairs()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    config.insert(
        "weights".into(),
        weights.0.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
    );
    Ok(EvalReport {
        per_class_map: sums.iter().map(|(k, s)| (k.clone(), s.0 / s.1 as f64)).collect(),
        per_class_queries: sums.iter().map(|(k, s)| (k.clone(), s.1)).collect(),
        overall_map: if evaluated > 0 { total / evaluated as f64 } else { 0.0 },
        queries: evaluated,
        skipped_queries: skipped,
        config,
        timings: BTreeMap::from([("ranking".to_string(), t.elapsed().as_secs_f64())]),
    })
}

/// Leave-one-out evaluation with every index entry as a query.
pub fn evaluate_index(index: &RetrievalIndex, weights: &FeatureWeights) -> Result<EvalReport> {
    let queries: Vec<QueryBundle> = index
        .entries
        .iter()
        .map(|e| QueryBundle {
            image_id: e.image_id.clone(),
            label: e.class_label.clone(),
            bundle: e.bundle.clone(),
        })
        .collect();
    evaluate_queries(index, &queries, weights)
}

/// Evaluates the images of `queries` against `index`, computing their
/// bundles with the index's vocabulary.
pub fn evaluate_map(index: &RetrievalIndex, queries: &DatasetManifest) -> Result<EvalReport> {
    let t = Instant::now();
    let bundles: Vec<QueryBundle> = queries
        .items
        .par_iter()
        .map(|item| {
            let img = open_image(&item.path)?;
            Ok(QueryBundle {
                image_id: item.image_id.clone(),
                label: item.label.clone(),
                bundle: bundle_for_image(&img, index)?,
            })
        })
        .collect::<Result<_>>()?;
    let extraction = t.elapsed().as_secs_f64();
    let mut report = evaluate_queries(index, &bundles, &index.config.weights)?;
    report.timings.insert("feature_extraction".into(), extraction);
    Ok(report)
}
