//! Visual vocabulary: k-means over IKM descriptors and word histograms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::Histogram;
use crate::moments::{IkmDescriptor, IkmMode};

pub const DEFAULT_VOCAB_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this.
    pub tolerance: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `centroids`; the lowest index wins ties.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        let c = &centroids[start..];
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(sq_dist(&data[i * dim..(i + 1) * dim], c));
        });
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding over `data`, a row-major
/// `n x dim` matrix.
pub fn kmeans(data: &[f64], dim: usize, k: usize, seed: u64, params: KMeansParams) -> Result<KMeans> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Parameter(format!(
            "{} values do not form rows of length {dim}",
            data.len()
        )));
    }
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::NotEnoughData {
            available: n,
            requested: k,
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite descriptor value".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, dim, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;

    while iterations < params.max_iterations {
        iterations += 1;
        assignments
            .par_iter_mut()
            .zip(dists.par_iter_mut())
            .enumerate()
            .for_each(|(i, (a, d))| {
                let (j, dd) = nearest(&data[i * dim..(i + 1) * dim], &centroids, dim);
                *a = j;
                *d = dd;
            });
        inertia.push(dists.iter().sum());

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                *s += v;
            }
        }
        let mut next = sums;
        for (j, &c) in counts.iter().enumerate() {
            if c > 0 {
                next[j * dim..(j + 1) * dim].iter_mut().for_each(|s| *s /= c as f64);
            }
        }
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = dists
                .iter()
                .enumerate()
                .fold(0, |best, (i, &d)| if d > dists[best] { i } else { best });
            next[j * dim..(j + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
            dists[far] = 0.0;
        }

        let shift = centroids
            .chunks_exact(dim)
            .zip(next.chunks_exact(dim))
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0f64, f64::max)
            .sqrt();
        centroids = next;
        if shift < params.tolerance {
            break;
        }
    }

    Ok(KMeans {
        k,
        dim,
        centroids,
        assignments,
        inertia,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    k: usize,
    centroids: Vec<f64>,
    mode: IkmMode,
}

impl Vocabulary {
    /// `centroids` is row-major `k x dim` with `dim` 6 or 30.
    pub fn new(k: usize, centroids: Vec<f64>) -> Result<Self> {
        if k == 0 || centroids.len() % k != 0 {
            return Err(Error::Parameter(format!(
                "{} centroid values for k = {k}",
                centroids.len()
            )));
        }
        let dim = centroids.len() / k;
        let mode = IkmMode::from_dim(dim)
            .ok_or_else(|| Error::Parameter(format!("vocabulary dimension {dim} is not 6 or 30")))?;
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite centroid".into()));
        }
        Ok(Self { k, centroids, mode })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.mode.dim()
    }

    pub fn mode(&self) -> IkmMode {
        self.mode
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.centroids[i * d..(i + 1) * d]
    }
}

fn flatten(descriptors: &[IkmDescriptor]) -> Result<(Vec<f64>, usize)> {
    let dim = descriptors.first().map_or(0, |d| d.len());
    let mut data = Vec::with_capacity(descriptors.len() * dim);
    for d in descriptors {
        if d.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: d.len(),
            });
        }
        data.extend_from_slice(&d.values);
    }
    Ok((data, dim))
}

pub fn train_vocabulary(descriptors: &[IkmDescriptor], k: usize, seed: u64) -> Result<Vocabulary> {
    if descriptors.len() < k || descriptors.is_empty() {
        return Err(Error::NotEnoughData {
            available: descriptors.len(),
            requested: k,
        });
    }
    let (data, dim) = flatten(descriptors)?;
    if IkmMode::from_dim(dim).is_none() {
        return Err(Error::Parameter(format!("descriptor dimension {dim} is not 6 or 30")));
    }
    let result = kmeans(&data, dim, k, seed, KMeansParams::default())?;
    log::debug!(
        "vocabulary: k={k} dim={dim} iterations={} wcss={:.6}",
        result.iterations,
        result.inertia.last().copied().unwrap_or(0.0)
    );
    Vocabulary::new(k, result.centroids)
}

pub fn quantize(desc: &IkmDescriptor, vocab: &Vocabulary) -> Result<usize> {
    if desc.len() != vocab.dim() {
        return Err(Error::DimensionMismatch {
            left: desc.len(),
            right: vocab.dim(),
        });
    }
    Ok(nearest(&desc.values, &vocab.centroids, vocab.dim()).0)
}

/// L1-normalized word counts over the descriptors flagged as foreground.
pub fn word_histogram(descs: &[IkmDescriptor], in_foreground: &[bool], vocab: &Vocabulary) -> Result<Histogram> {
    if descs.len() != in_foreground.len() {
        return Err(Error::DimensionMismatch {
            left: descs.len(),
            right: in_foreground.len(),
        });
    }
    let mut counts = vec![0usize; vocab.k()];
    for (d, _) in descs.iter().zip(in_foreground).filter(|(_, &fg)| fg) {
        counts[quantize(d, vocab)?] += 1;
    }
    Ok(Histogram::from_counts(&counts))
}
