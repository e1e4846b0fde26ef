//! Chi-square distances, per-feature z-scores, weighted fusion, ranking and
//! the on-disk index.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;

use crate::bovw::Vocabulary;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{FeatureBundle, FeatureWeights, Histogram};

pub const CHI_SQUARE_EPS: f64 = 1e-10;
pub const INDEX_MAGIC: &[u8; 4] = b"SMIK";
pub const INDEX_VERSION: u8 = 1;

pub fn chi_square(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.len() != h2.len() {
        return Err(Error::DimensionMismatch {
            left: h1.len(),
            right: h2.len(),
        });
    }
    Ok(h1
        .bins
        .iter()
        .zip(&h2.bins)
        .map(|(a, b)| (a - b) * (a - b) / (a + b + CHI_SQUARE_EPS))
        .sum())
}

/// `(x - mean) / std` with the population standard deviation; a constant
/// column maps to zeros.
pub fn zscore_normalize(column: &[f64]) -> Vec<f64> {
    if column.is_empty() {
        return Vec::new();
    }
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return vec![0.0; column.len()];
    }
    column.iter().map(|x| (x - mean) / std).collect()
}

/// Weighted sum across feature columns; all columns must share one length.
pub fn fuse(columns: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if columns.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            left: columns.len(),
            right: weights.len(),
        });
    }
    let len = columns.first().map_or(0, Vec::len);
    if let Some(bad) = columns.iter().find(|c| c.len() != len) {
        return Err(Error::DimensionMismatch {
            left: len,
            right: bad.len(),
        });
    }
    let mut fused = vec![0.0; len];
    for (col, &w) in columns.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (f, d) in fused.iter_mut().zip(col) {
            *f += w * d;
        }
    }
    Ok(fused)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub image_id: String,
    pub class_label: String,
    pub bundle: FeatureBundle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
    pub vocab: Vocabulary,
    pub config: Config,
}

impl RetrievalIndex {
    pub fn new(entries: Vec<IndexEntry>, vocab: Vocabulary, config: Config) -> Result<Self> {
        let mut ids: Vec<&str> = entries.iter().map(|e| e.image_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Format(format!("duplicate image id {:?}", w[0])));
        }
        for e in &entries {
            check_vocab(&vocab, &e.bundle)?;
        }
        Ok(Self {
            entries,
            vocab,
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.image_id == image_id)
    }
}

fn check_vocab(vocab: &Vocabulary, bundle: &FeatureBundle) -> Result<()> {
    let words = bundle.fg_words().len();
    if words != vocab.k() {
        return Err(Error::VocabMismatch {
            index: vocab.k(),
            bundle: words,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub image_id: String,
    pub distance: f64,
    /// Raw chi-square distance per bundle slot.
    pub per_feature: [f64; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub ranked: Vec<RankedItem>,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<&str> {
        self.ranked.iter().map(|r| r.image_id.as_str()).collect()
    }
}

/// Ranks every entry against `bundle` using the index's configured weights.
/// The entry named `exclude`, if any, is dropped after normalization.
pub fn query(index: &RetrievalIndex, bundle: &FeatureBundle, exclude: Option<&str>) -> Result<RankedResult> {
    query_weighted(index, bundle, &index.config.weights, exclude)
}

pub fn query_weighted(
    index: &RetrievalIndex,
    bundle: &FeatureBundle,
    weights: &FeatureWeights,
    exclude: Option<&str>,
) -> Result<RankedResult> {
    check_vocab(&index.vocab, bundle)?;
    let raw: Vec<[f64; 8]> = index
        .entries
        .par_iter()
        .map(|e| {
            let mut d = [0.0; 8];
            for (slot, out) in d.iter_mut().enumerate() {
                *out = chi_square(&bundle.slots[slot], &e.bundle.slots[slot])?;
            }
            Ok(d)
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = (0..8)
        .map(|slot| zscore_normalize(&raw.iter().map(|d| d[slot]).collect::<Vec<_>>()))
        .collect();
    let fused = fuse(&columns, &weights.0)?;

    let mut ranked: Vec<RankedItem> = index
        .entries
        .iter()
        .zip(fused)
        .zip(raw)
        .filter(|((e, _), _)| Some(e.image_id.as_str()) != exclude)
        .map(|((e, distance), per_feature)| RankedItem {
            image_id: e.image_id.clone(),
            distance,
            per_feature,
        })
        .collect();
    ranked.sort_by(|a, b| match a.distance.total_cmp(&b.distance) {
        Ordering::Equal => a.image_id.cmp(&b.image_id),
        o => o,
    });
    Ok(RankedResult { ranked })
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("length {v} exceeds u32")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u32(b.len())?;
        self.buf.extend_from_slice(b);
        Ok(())
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Serializes `index`:
/// magic, version byte, then the payload (config text, vocabulary, entries),
/// then the little-endian CRC32 of the payload.
pub fn encode_index(index: &RetrievalIndex) -> Result<Vec<u8>> {
    let mut w = Writer { buf: Vec::new() };
    w.bytes(index.config.to_text().as_bytes())?;
    w.u32(index.vocab.k())?;
    w.u32(index.vocab.dim())?;
    w.f64s(index.vocab.centroids());
    w.u32(index.entries.len())?;
    for e in &index.entries {
        w.bytes(e.image_id.as_bytes())?;
        w.bytes(e.class_label.as_bytes())?;
        for h in &e.bundle.slots {
            w.u32(h.len())?;
            w.f64s(&h.bins);
        }
    }
    let crc = crc32fast::hash(&w.buf);
    let mut out = Vec::with_capacity(w.buf.len() + 9);
    out.extend_from_slice(INDEX_MAGIC);
    out.push(INDEX_VERSION);
    out.extend_from_slice(&w.buf);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_index(bytes: &[u8]) -> Result<RetrievalIndex> {
    if bytes.len() < 4 || &bytes[..4] != INDEX_MAGIC {
        return Err(Error::BadMagic);
    }
    match bytes.get(4) {
        Some(&INDEX_VERSION) => {}
        Some(&v) => return Err(Error::FormatVersion(v)),
        None => return Err(Error::Checksum),
    }
    if bytes.len() < 9 {
        return Err(Error::Checksum);
    }
    let (payload, crc) = bytes[5..].split_at(bytes.len() - 9);
    if crc32fast::hash(payload) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::Checksum);
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let config = Config::parse(&r.string()?)?;
    let (k, dim) = (r.u32()?, r.u32()?);
    let vocab = Vocabulary::new(k, r.f64s(k * dim)?)?;
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let image_id = r.string()?;
        let class_label = r.string()?;
        let mut slots = Vec::with_capacity(8);
        for _ in 0..8 {
            let n = r.u32()?;
            slots.push(Histogram {
                bins: r.f64s(n)?,
                normalized: true,
            });
        }
        let slots: [Histogram; 8] = slots.try_into().unwrap();
        entries.push(IndexEntry {
            image_id,
            class_label,
            bundle: FeatureBundle {
                slots,
                weights: config.weights,
            },
        });
    }
    if r.pos != payload.len() {
        return Err(Error::Format(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    RetrievalIndex::new(entries, vocab, config)
}

pub fn save_index(index: &RetrievalIndex, path: &Path) -> Result<()> {
    std::fs::write(path, encode_index(index)?)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<RetrievalIndex> {
    decode_index(&std::fs::read(path)?)
}
