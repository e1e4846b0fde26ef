//! Geometric moments, rotation/scale/translation invariant geometric moments,
//! weighted Krawtchouk polynomials, and the invariant Krawtchouk moment (IKM)
//! patch descriptor.
//!
//! Conventions: `x` runs over columns `0..width`, `y` over rows `0..height`.
//! For an `N`x`M` image the Krawtchouk bases are built on the domains
//! `{0..N-1}` and `{0..M-1}`, i.e. with polynomial parameters `N - 1` and
//! `M - 1`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::ImageBuf;

/// Moment orders `(n, m)` of the six-element descriptor, in output order:
/// `Q02, Q20, Q12, Q21, Q30, Q03` where `n` is the order along `x`.
pub const IKM_ORDERS: [(usize, usize); 6] = [(0, 2), (2, 0), (1, 2), (2, 1), (3, 0), (0, 3)];

/// `(p_x, p_y)` pairs of the multi-order descriptor, in concatenation order.
pub const MULTI_ORDER_PAIRS: [(f64, f64); 5] = [
    (0.25, 0.25),
    (0.25, 0.75),
    (0.5, 0.5),
    (0.75, 0.25),
    (0.75, 0.75),
];

pub const SINGLE_ORDER_PAIRS: [(f64, f64); 1] = [(0.5, 0.5)];

/// Highest total order the descriptor needs.
const IKM_MAX_ORDER: usize = 3;

/// Row-major plane of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    /// Raw 8-bit values as floats in `[0, 255]`.
    pub fn from_gray(img: &ImageBuf) -> Result<Self> {
        img.require_channels(1)?;
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| v as f64).collect(),
        })
    }

    /// 8-bit values scaled to `[0, 1]`.
    pub fn from_gray_unit(img: &ImageBuf) -> Result<Self> {
        img.require_channels(1)?;
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| v as f64 / 255.0).collect(),
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// `(x, y)` of the largest sample; the first one in row-major order wins
    /// ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Table of `m_pq` for `p + q <= max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricMoments {
    max_order: usize,
    values: Vec<f64>,
}

impl GeometricMoments {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// `m_pq`; panics if `p + q` exceeds the computed order.
    pub fn get(&self, p: usize, q: usize) -> f64 {
        assert!(p + q <= self.max_order, "moment order {p}+{q} not computed");
        self.values[p * (self.max_order + 1) + q]
    }
}

/// `m_pq = sum_x sum_y x^p y^q f(x, y)` over raw 8-bit intensities.
pub fn geometric_moments(img: &ImageBuf, max_order: usize) -> Result<GeometricMoments> {
    Ok(plane_moments(&Plane::from_gray(img)?, max_order))
}

pub fn plane_moments(plane: &Plane, max_order: usize) -> GeometricMoments {
    let stride = max_order + 1;
    let mut values = vec![0.0; stride * stride];
    let mut xpow = vec![0.0; stride];
    let mut ypow = vec![0.0; stride];
    for y in 0..plane.height {
        powers(y as f64, &mut ypow);
        // accumulate the row first: sum_x x^p f(x, y)
        let mut row = vec![0.0; stride];
        for x in 0..plane.width {
            let f = plane.get(x, y);
            if f == 0.0 {
                continue;
            }
            powers(x as f64, &mut xpow);
            for (p, r) in row.iter_mut().enumerate() {
                *r += xpow[p] * f;
            }
        }
        for p in 0..=max_order {
            for q in 0..=(max_order - p) {
                values[p * stride + q] += row[p] * ypow[q];
            }
        }
    }
    GeometricMoments { max_order, values }
}

#[inline]
fn powers(base: f64, out: &mut [f64]) {
    let mut acc = 1.0;
    for o in out.iter_mut() {
        *o = acc;
        acc *= base;
    }
}

/// Centroid, orientation and the normalized invariant moments
/// `v_nm = M00^(-(n+m)/2 - 1) sum f(x, y) u^n w^m` with
/// `u = (x - x_c) cos t + (y - y_c) sin t` and
/// `w = -(x - x_c) sin t + (y - y_c) cos t`.
///
/// `theta` aligns `u` with the major principal axis. The remaining half-turn
/// ambiguity is resolved by making the first non-vanishing of
/// `v30, v03, v21, v12` positive, so `theta` lies in `(-pi/2, 3pi/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantMomentContext {
    pub x_c: f64,
    pub y_c: f64,
    pub theta: f64,
    pub mass: f64,
    pub mu11: f64,
    pub mu20: f64,
    pub mu02: f64,
    max_order: usize,
    v: Vec<f64>,
}

impl InvariantMomentContext {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn v(&self, n: usize, m: usize) -> f64 {
        assert!(n + m <= self.max_order, "invariant order {n}+{m} not computed");
        self.v[n * (self.max_order + 1) + m]
    }
}

/// Invariant moments up to order 3 of a gray image (raw intensities).
pub fn invariant_context(img: &ImageBuf) -> Result<InvariantMomentContext> {
    plane_invariant_context(&Plane::from_gray(img)?, IKM_MAX_ORDER)
}

/// Below this magnitude a normalized third-order moment is treated as zero
/// when picking the half-turn orientation.
const SIGN_EPS: f64 = 1e-9;

pub fn plane_invariant_context(plane: &Plane, max_order: usize) -> Result<InvariantMomentContext> {
    let raw = plane_moments(plane, 1);
    let mass = raw.get(0, 0);
    if !(mass > 0.0) {
        return Err(Error::DegenerateImage);
    }
    let x_c = raw.get(1, 0) / mass;
    let y_c = raw.get(0, 1) / mass;

    let (mut mu11, mut mu20, mut mu02) = (0.0, 0.0, 0.0);
    for y in 0..plane.height {
        let dy = y as f64 - y_c;
        for x in 0..plane.width {
            let f = plane.get(x, y);
            if f == 0.0 {
                continue;
            }
            let dx = x as f64 - x_c;
            mu11 += dx * dy * f;
            mu20 += dx * dx * f;
            mu02 += dy * dy * f;
        }
    }

    let theta0 = 0.5 * (2.0 * mu11).atan2(mu20 - mu02);
    let mut v = rotated_moments(plane, x_c, y_c, theta0, mass, max_order);

    let stride = max_order + 1;
    let mut theta = theta0;
    if max_order >= 3 {
        let key = [(3, 0), (0, 3), (2, 1), (1, 2)]
            .iter()
            .map(|&(p, q)| v[p * stride + q])
            .find(|s| s.abs() > SIGN_EPS);
        if matches!(key, Some(s) if s < 0.0) {
            // a half turn negates u and w
            theta += PI;
            for p in 0..=max_order {
                for q in 0..=(max_order - p) {
                    if (p + q) % 2 == 1 {
                        v[p * stride + q] = -v[p * stride + q];
                    }
                }
            }
        }
    }

    Ok(InvariantMomentContext {
        x_c,
        y_c,
        theta,
        mass,
        mu11,
        mu20,
        mu02,
        max_order,
        v,
    })
}

fn rotated_moments(
    plane: &Plane,
    x_c: f64,
    y_c: f64,
    theta: f64,
    mass: f64,
    max_order: usize,
) -> Vec<f64> {
    let stride = max_order + 1;
    let (sin, cos) = theta.sin_cos();
    let mut sums = vec![0.0; stride * stride];
    let mut upow = vec![0.0; stride];
    let mut wpow = vec![0.0; stride];
    for y in 0..plane.height {
        let dy = y as f64 - y_c;
        for x in 0..plane.width {
            let f = plane.get(x, y);
            if f == 0.0 {
                continue;
            }
            let dx = x as f64 - x_c;
            powers(dx * cos + dy * sin, &mut upow);
            powers(-dx * sin + dy * cos, &mut wpow);
            for p in 0..=max_order {
                let fu = f * upow[p];
                for q in 0..=(max_order - p) {
                    sums[p * stride + q] += fu * wpow[q];
                }
            }
        }
    }
    for p in 0..=max_order {
        for q in 0..=(max_order - p) {
            let scale = mass.powf(-((p + q) as f64) / 2.0 - 1.0);
            sums[p * stride + q] *= scale;
        }
    }
    sums
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "Krawtchouk parameter p must lie in (0, 1), got {p}"
        )))
    }
}

fn ln_binomial_row(n: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    row.push(acc);
    for x in 0..n {
        acc += ((n - x) as f64).ln() - ((x + 1) as f64).ln();
        row.push(acc);
    }
    row
}

/// Binomial weights `w(x; p, n) = C(n, x) p^x (1 - p)^(n - x)` for
/// `x = 0..=n`, evaluated in log space.
pub fn binomial_weights(p: f64, n: usize) -> Result<Vec<f64>> {
    check_p(p)?;
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    Ok(ln_binomial_row(n)
        .iter()
        .enumerate()
        .map(|(x, lc)| (lc + x as f64 * lp + (n - x) as f64 * lq).exp())
        .collect())
}

/// Squared norm `rho(order; p, n) = ((1 - p) / p)^order / C(n, order)`.
pub fn krawtchouk_norm(order: usize, p: f64, n: usize) -> Result<f64> {
    check_p(p)?;
    if order > n {
        return Err(Error::Parameter(format!(
            "order {order} exceeds polynomial parameter {n}"
        )));
    }
    let lc = ln_binomial_row(n)[order];
    Ok((order as f64 * ((1.0 - p) / p).ln() - lc).exp())
}

/// Monomial coefficients of the classic polynomials: `table[order][k]` is
/// the coefficient of `x^k` in `K_order(x; p, n)`. Built from
/// `p(n-i) K_{i+1} = (p(n-i) + i(1-p) - x) K_i - i(1-p) K_{i-1}`.
fn coefficient_table(p: f64, n: usize, max_order: usize) -> Vec<Vec<f64>> {
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(max_order + 1);
    table.push(vec![1.0]);
    for i in 0..max_order {
        let c = p * (n - i) as f64;
        let a = c + i as f64 * (1.0 - p);
        let b = i as f64 * (1.0 - p);
        let mut next = vec![0.0; i + 2];
        for (k, &coef) in table[i].iter().enumerate() {
            next[k] += a * coef;
            next[k + 1] -= coef;
        }
        if i > 0 {
            for (k, &coef) in table[i - 1].iter().enumerate() {
                next[k] -= b * coef;
            }
        }
        for coef in next.iter_mut() {
            *coef /= c;
        }
        table.push(next);
    }
    table
}

/// Weighted (orthonormal) Krawtchouk basis on `x = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrawtchoukBasis {
    n: usize,
    p: f64,
    max_order: usize,
    weights: Vec<f64>,
    norms: Vec<f64>,
    kbar: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
}

impl KrawtchoukBasis {
    pub fn new(n: usize, p: f64, max_order: usize) -> Result<Self> {
        check_p(p)?;
        if max_order > n || n == 0 {
            return Err(Error::Parameter(format!(
                "need 0 < N and max_order <= N, got N = {n}, max_order = {max_order}"
            )));
        }
        let weights = binomial_weights(p, n)?;
        let norms = (0..=max_order)
            .map(|order| krawtchouk_norm(order, p, n))
            .collect::<Result<Vec<_>>>()?;

        let mut raw = vec![vec![1.0; n + 1]];
        for i in 0..max_order {
            let c = p * (n - i) as f64;
            let b = i as f64 * (1.0 - p);
            let next: Vec<f64> = (0..=n)
                .map(|x| {
                    let prev = if i > 0 { raw[i - 1][x] } else { 0.0 };
                    ((c + b - x as f64) * raw[i][x] - b * prev) / c
                })
                .collect();
            raw.push(next);
        }
        let kbar = raw
            .iter()
            .zip(&norms)
            .map(|(row, rho)| {
                row.iter()
                    .zip(&weights)
                    .map(|(k, w)| k * (w / rho).sqrt())
                    .collect()
            })
            .collect();

        Ok(Self {
            n,
            p,
            max_order,
            weights,
            norms,
            kbar,
            coefficients: coefficient_table(p, n, max_order),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// `K̄_order(x)`.
    pub fn kbar(&self, order: usize, x: usize) -> f64 {
        self.kbar[order][x]
    }

    pub fn kbar_row(&self, order: usize) -> &[f64] {
        &self.kbar[order]
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn norm(&self, order: usize) -> f64 {
        self.norms[order]
    }

    /// Coefficient of `x^k` in the classic polynomial `K_order`.
    pub fn coefficient(&self, k: usize, order: usize) -> f64 {
        self.coefficients[order].get(k).copied().unwrap_or(0.0)
    }

    pub fn coefficients(&self, order: usize) -> &[f64] {
        &self.coefficients[order]
    }

    /// Classic (unweighted) `K_order(x)` from the monomial expansion.
    pub fn eval_classic(&self, order: usize, x: f64) -> f64 {
        self.coefficients[order]
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * x + c)
    }
}

pub fn krawtchouk_basis(n: usize, p: f64, max_order: usize) -> Result<KrawtchoukBasis> {
    KrawtchoukBasis::new(n, p, max_order)
}

/// `f̃(x, y) = sqrt(w(x; p_x, N-1) w(y; p_y, M-1)) f(x, y)` on raw
/// intensities.
pub fn weighted_image(img: &ImageBuf, p_x: f64, p_y: f64) -> Result<Plane> {
    weighted_plane(&Plane::from_gray(img)?, p_x, p_y)
}

pub fn weighted_plane(plane: &Plane, p_x: f64, p_y: f64) -> Result<Plane> {
    let wx = binomial_weights(p_x, plane.width - 1)?;
    let wy = binomial_weights(p_y, plane.height - 1)?;
    let mut data = Vec::with_capacity(plane.data.len());
    for (y, wyv) in wy.iter().enumerate() {
        for (x, wxv) in wx.iter().enumerate() {
            data.push((wxv * wyv).sqrt() * plane.get(x, y));
        }
    }
    Ok(Plane {
        width: plane.width,
        height: plane.height,
        data,
    })
}

/// Weighted Krawtchouk moments `Q̄_nm` of a gray image (raw intensities),
/// computed from the geometric moments of the weighted image:
/// `Q̄_nm = [rho(n) rho(m)]^(-1/2) sum_i sum_j a_in a_jm m_ij(f̃)`.
///
/// Orders beyond an axis' polynomial parameter (for example any `m > 0` on a
/// single-row image) have no basis function and yield 0.
pub fn weighted_krawtchouk_moments(
    img: &ImageBuf,
    p_x: f64,
    p_y: f64,
    orders: &[(usize, usize)],
) -> Result<Vec<f64>> {
    plane_weighted_krawtchouk_moments(&Plane::from_gray(img)?, p_x, p_y, orders)
}

pub fn plane_weighted_krawtchouk_moments(
    plane: &Plane,
    p_x: f64,
    p_y: f64,
    orders: &[(usize, usize)],
) -> Result<Vec<f64>> {
    check_p(p_x)?;
    check_p(p_y)?;
    let (nx, ny) = (plane.width - 1, plane.height - 1);
    let max_n = orders.iter().map(|o| o.0).max().unwrap_or(0).min(nx);
    let max_m = orders.iter().map(|o| o.1).max().unwrap_or(0).min(ny);
    let weighted = weighted_plane(plane, p_x, p_y)?;
    let moments = plane_moments(&weighted, max_n + max_m);

    let ax = coefficient_table(p_x, nx, max_n);
    let ay = coefficient_table(p_y, ny, max_m);
    orders
        .iter()
        .map(|&(n, m)| {
            if n > nx || m > ny {
                return Ok(0.0);
            }
            let scale = (krawtchouk_norm(n, p_x, nx)? * krawtchouk_norm(m, p_y, ny)?).sqrt();
            let mut acc = 0.0;
            for (i, a) in ax[n].iter().enumerate() {
                for (j, b) in ay[m].iter().enumerate() {
                    acc += a * b * moments.get(i, j);
                }
            }
            Ok(acc / scale)
        })
        .collect()
}

/// Which `(p_x, p_y)` pairs a descriptor is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IkmMode {
    /// `(0.5, 0.5)` only; 6 values.
    Single,
    /// The five focus-zone pairs; 30 values.
    Multi,
}

impl IkmMode {
    pub fn pairs(self) -> &'static [(f64, f64)] {
        match self {
            IkmMode::Single => &SINGLE_ORDER_PAIRS,
            IkmMode::Multi => &MULTI_ORDER_PAIRS,
        }
    }

    pub fn dim(self) -> usize {
        self.pairs().len() * IKM_ORDERS.len()
    }

    pub fn from_dim(dim: usize) -> Option<Self> {
        match dim {
            6 => Some(IkmMode::Single),
            30 => Some(IkmMode::Multi),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IkmMode::Single => "single",
            IkmMode::Multi => "multi",
        }
    }
}

impl std::str::FromStr for IkmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(IkmMode::Single),
            "multi" => Ok(IkmMode::Multi),
            other => Err(Error::Config(format!("unknown ikm_mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkmDescriptor {
    pub values: Vec<f64>,
    pub order_pairs: Vec<(f64, f64)>,
}

impl IkmDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
struct PairTables {
    ax: Vec<Vec<f64>>,
    ay: Vec<Vec<f64>>,
    inv_norms: [f64; 6],
}

/// Precomputed coefficient tables for one patch size. Cheap to share across
/// threads.
///
/// The invariant moments `v_pq` of the patch are mapped back onto the patch
/// domain before the Krawtchouk expansion:
/// `ṽ_ij = sum_p sum_q C(i,p) C(j,q) S^((p+q)/2 + 1) c_x^(i-p) c_y^(j-q) v_pq`
/// with `S = N M / 2` and `(c_x, c_y)` the domain center. This places the
/// normalized object at the middle of an `N`x`M` frame with mass `S`.
#[derive(Debug, Clone)]
pub struct IkmExtractor {
    width: usize,
    height: usize,
    pairs: Vec<(f64, f64)>,
    tables: Vec<PairTables>,
}

impl IkmExtractor {
    pub fn new(width: usize, height: usize, pairs: &[(f64, f64)]) -> Result<Self> {
        if width <= IKM_MAX_ORDER || height <= IKM_MAX_ORDER {
            return Err(Error::TooSmall {
                width,
                height,
                min: IKM_MAX_ORDER + 1,
            });
        }
        if pairs.is_empty() {
            return Err(Error::Parameter("at least one (p_x, p_y) pair is required".into()));
        }
        let (nx, ny) = (width - 1, height - 1);
        let tables = pairs
            .iter()
            .map(|&(px, py)| {
                check_p(px)?;
                check_p(py)?;
                let mut inv_norms = [0.0; 6];
                for (slot, &(n, m)) in IKM_ORDERS.iter().enumerate() {
                    inv_norms[slot] =
                        1.0 / (krawtchouk_norm(n, px, nx)? * krawtchouk_norm(m, py, ny)?).sqrt();
                }
                Ok(PairTables {
                    ax: coefficient_table(px, nx, IKM_MAX_ORDER),
                    ay: coefficient_table(py, ny, IKM_MAX_ORDER),
                    inv_norms,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            pairs: pairs.to_vec(),
            tables,
        })
    }

    pub fn for_mode(side: usize, mode: IkmMode) -> Result<Self> {
        Self::new(side, side, mode.pairs())
    }

    pub fn dim(&self) -> usize {
        self.pairs.len() * IKM_ORDERS.len()
    }

    /// Describes a gray patch. All-black patches fail with `DegenerateImage`.
    pub fn describe(&self, patch: &ImageBuf) -> Result<IkmDescriptor> {
        if patch.width() != self.width || patch.height() != self.height {
            return Err(Error::DimensionMismatch {
                left: patch.len(),
                right: self.width * self.height,
            });
        }
        self.describe_plane(&Plane::from_gray_unit(patch)?)
    }

    pub fn describe_plane(&self, plane: &Plane) -> Result<IkmDescriptor> {
        let ctx = plane_invariant_context(plane, IKM_MAX_ORDER)?;
        let vt = self.standardized(&ctx);
        let mut values = Vec::with_capacity(self.dim());
        for t in &self.tables {
            for (slot, &(n, m)) in IKM_ORDERS.iter().enumerate() {
                let mut acc = 0.0;
                for (i, a) in t.ax[n].iter().enumerate() {
                    for (j, b) in t.ay[m].iter().enumerate() {
                        acc += a * b * vt[i][j];
                    }
                }
                values.push(acc * t.inv_norms[slot]);
            }
        }
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Ok(IkmDescriptor {
            values,
            order_pairs: self.pairs.clone(),
        })
    }

    fn standardized(&self, ctx: &InvariantMomentContext) -> [[f64; 4]; 4] {
        let s = (self.width * self.height) as f64 / 2.0;
        let cx = (self.width - 1) as f64 / 2.0;
        let cy = (self.height - 1) as f64 / 2.0;
        let mut out = [[0.0; 4]; 4];
        for i in 0..=IKM_MAX_ORDER {
            for j in 0..=(IKM_MAX_ORDER - i) {
                let mut acc = 0.0;
                for p in 0..=i {
                    for q in 0..=j {
                        acc += binomial(i, p)
                            * binomial(j, q)
                            * s.powf((p + q) as f64 / 2.0 + 1.0)
                            * cx.powi((i - p) as i32)
                            * cy.powi((j - q) as i32)
                            * ctx.v(p, q);
                    }
                }
                out[i][j] = acc;
            }
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// One-shot descriptor; prefer [`IkmExtractor`] when describing many patches
/// of the same size.
pub fn ikm_descriptor(patch: &ImageBuf, order_pairs: &[(f64, f64)]) -> Result<IkmDescriptor> {
    patch.require_channels(1)?;
    IkmExtractor::new(patch.width(), patch.height(), order_pairs)?.describe(patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `2F1(-n, -x; -N; 1/p)`, terminating after `n` terms.
    fn hypergeometric_k(order: usize, x: usize, p: f64, n: usize) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..order {
            let k = k as f64;
            term *= (-(order as f64) + k) * (-(x as f64) + k) / ((-(n as f64) + k) * (k + 1.0) * p);
            sum += term;
        }
        sum
    }

    fn binom_direct(n: usize, k: usize) -> f64 {
        (1..=k).fold(1.0, |acc, i| acc * (n + 1 - i) as f64 / i as f64)
    }

    #[test]
    fn geometric_moment_examples() {
        let img = ImageBuf::new(2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        let m = geometric_moments(&img, 2).unwrap();
        assert_eq!(m.get(0, 0), 10.0);
        // x = column: pixels at x = 1 are 2 and 4
        assert_eq!(m.get(1, 0), 6.0);
        assert_eq!(m.get(0, 1), 7.0);
        assert_eq!(m.get(1, 1), 4.0);

        let zero = ImageBuf::from_gray_fn(5, 4, |_, _| 0);
        let m = geometric_moments(&zero, 3).unwrap();
        assert!((0..=3).all(|p| (0..=3 - p).all(|q| m.get(p, q) == 0.0)));

        let dot = ImageBuf::from_gray_fn(6, 6, |x, y| if x == 0 && y == 0 { 255 } else { 0 });
        let m = geometric_moments(&dot, 2).unwrap();
        assert_eq!((m.get(0, 0), m.get(1, 0), m.get(0, 1)), (255.0, 0.0, 0.0));
    }

    #[test]
    fn symmetric_square_is_centered_and_unrotated() {
        let img = ImageBuf::from_gray_fn(21, 21, |x, y| {
            if (6..15).contains(&x) && (6..15).contains(&y) { 200 } else { 0 }
        });
        let ctx = invariant_context(&img).unwrap();
        assert!((ctx.x_c - 10.0).abs() < 1e-12);
        assert!((ctx.y_c - 10.0).abs() < 1e-12);
        assert!(ctx.mu11.abs() < 1e-9);
        assert_eq!(ctx.theta, 0.0);
        assert!((ctx.v(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_moments_ignore_translation() {
        let shape = |x: usize, y: usize| -> u8 {
            let (x, y) = (x as i64, y as i64);
            if y >= 2 && y < 9 && x >= 1 && x <= y { (40 + 20 * x) as u8 } else { 0 }
        };
        let small = ImageBuf::from_gray_fn(14, 12, shape);
        let shifted = ImageBuf::from_gray_fn(24, 20, |x, y| {
            if x >= 5 && y >= 3 { shape(x - 5, y - 3) } else { 0 }
        });
        let a = invariant_context(&small).unwrap();
        let b = invariant_context(&shifted).unwrap();
        assert!((b.x_c - a.x_c - 5.0).abs() < 1e-9);
        for n in 0..=3 {
            for m in 0..=3 - n {
                assert!((a.v(n, m) - b.v(n, m)).abs() < 1e-6, "v{n}{m}");
            }
        }
    }

    #[test]
    fn zero_mass_is_degenerate() {
        let img = ImageBuf::from_gray_fn(8, 8, |_, _| 0);
        assert!(matches!(invariant_context(&img), Err(Error::DegenerateImage)));
        assert!(matches!(
            ikm_descriptor(&img, &SINGLE_ORDER_PAIRS),
            Err(Error::DegenerateImage)
        ));
    }

    #[test]
    fn low_order_polynomials() {
        let b = krawtchouk_basis(4, 0.5, 2).unwrap();
        for x in 0..=4 {
            assert_eq!(b.eval_classic(0, x as f64), 1.0);
        }
        assert_eq!(b.eval_classic(1, 0.0), 1.0);
        assert!(b.eval_classic(1, 2.0).abs() < 1e-15);
        let w = binomial_weights(0.3, 7).unwrap();
        assert!((w[0] - 0.7f64.powi(7)).abs() < 1e-15);
        assert!((krawtchouk_norm(0, 0.3, 7).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn second_order_closed_form() {
        let (n, p) = (12usize, 0.35);
        let b = krawtchouk_basis(n, p, 2).unwrap();
        let nf = n as f64;
        for x in 0..=n {
            let x = x as f64;
            let c2 = 1.0 / (nf * (nf - 1.0) * p * p);
            let expected = 1.0 - (2.0 / (nf * p) + c2) * x + c2 * x * x;
            assert!((b.eval_classic(2, x) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrence_matches_hypergeometric_series() {
        for &(n, p) in &[(5usize, 0.5), (29, 0.25), (29, 0.75), (40, 0.6)] {
            let b = krawtchouk_basis(n, p, 3).unwrap();
            for order in 0..=3 {
                for x in 0..=n {
                    let direct = hypergeometric_k(order, x, p, n);
                    let via_coeffs = b.eval_classic(order, x as f64);
                    let via_recurrence = b.kbar(order, x) / (b.weight(x) / b.norm(order)).sqrt();
                    let tol = 1e-9 * direct.abs().max(1.0);
                    assert!((direct - via_coeffs).abs() < tol, "n={n} p={p} k={order} x={x}");
                    assert!((direct - via_recurrence).abs() < tol, "n={n} p={p} k={order} x={x}");
                }
            }
        }
    }

    #[test]
    fn norm_matches_pochhammer_form() {
        for &(n, p) in &[(10usize, 0.5f64), (29, 0.25)] {
            for order in 0..=5 {
                let mut poch = 1.0;
                for i in 0..order {
                    poch *= -(n as f64) + i as f64;
                }
                let fact: f64 = (1..=order).map(|i| i as f64).product();
                let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
                let expected = sign * ((1.0 - p) / p).powi(order as i32) * fact / poch;
                let got = krawtchouk_norm(order, p, n).unwrap();
                assert!((got - expected).abs() < 1e-12 * expected.abs());
            }
        }
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(krawtchouk_basis(10, 0.0, 2), Err(Error::Parameter(_))));
        assert!(matches!(krawtchouk_basis(10, 1.0, 2), Err(Error::Parameter(_))));
        assert!(matches!(krawtchouk_basis(2, 0.5, 3), Err(Error::Parameter(_))));
        let img = ImageBuf::from_gray_fn(4, 4, |_, _| 1);
        assert!(matches!(weighted_image(&img, 1.5, 0.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn weight_sums_to_one() {
        for &p in &[0.1f64, 0.25, 0.5, 0.75, 0.9] {
            for n in [1usize, 2, 7, 29, 63, 200] {
                let s: f64 = binomial_weights(p, n).unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "p={p} n={n} sum={s}");
                let w = binomial_weights(p, n).unwrap();
                let x = n / 3;
                let direct = binom_direct(n, x) * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32);
                assert!((w[x] - direct).abs() < 1e-12 * direct.max(1e-300));
            }
        }
    }

    #[test]
    fn weighted_image_focus() {
        let flat = ImageBuf::from_gray_fn(31, 31, |_, _| 100);
        let centered = weighted_image(&flat, 0.5, 0.5).unwrap();
        assert_eq!(centered.argmax(), (15, 15));
        let corner = weighted_image(&flat, 0.25, 0.25).unwrap();
        let (x, y) = corner.argmax();
        assert!(x < 15 && y < 15);
        assert!((x as f64 - 30.0 * 0.25).abs() <= 1.0);
        let zero = weighted_image(&ImageBuf::from_gray_fn(9, 7, |_, _| 0), 0.5, 0.5).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
    }

    fn direct_moment(img: &ImageBuf, px: f64, py: f64, n: usize, m: usize) -> f64 {
        let bx = krawtchouk_basis(img.width() - 1, px, n).unwrap();
        let by = krawtchouk_basis(img.height() - 1, py, m).unwrap();
        let mut acc = 0.0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                acc += img.gray(x, y) as f64 * bx.kbar(n, x) * by.kbar(m, y);
            }
        }
        acc
    }

    #[test]
    fn expansion_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = ImageBuf::from_gray_fn(17, 13, |_, _| rng.gen());
        let got = weighted_krawtchouk_moments(&img, 0.4, 0.65, &IKM_ORDERS).unwrap();
        for (g, &(n, m)) in got.iter().zip(&IKM_ORDERS) {
            let d = direct_moment(&img, 0.4, 0.65, n, m);
            assert!((g - d).abs() <= 1e-8 * d.abs().max(1.0), "Q{n}{m}: {g} vs {d}");
        }
        let zero = ImageBuf::from_gray_fn(9, 9, |_, _| 0);
        let q = weighted_krawtchouk_moments(&zero, 0.5, 0.5, &IKM_ORDERS).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_has_no_vertical_orders() {
        let row = ImageBuf::from_gray_fn(20, 1, |x, _| (10 * x) as u8);
        let q = weighted_krawtchouk_moments(&row, 0.5, 0.5, &[(0, 0), (2, 0), (0, 1), (1, 2), (3, 3)])
            .unwrap();
        assert!(q[0] > 0.0);
        assert!(q[1] != 0.0);
        assert_eq!(&q[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn descriptor_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let patch = ImageBuf::from_gray_fn(30, 30, |_, _| rng.gen_range(1..=255));
        let single = ikm_descriptor(&patch, IkmMode::Single.pairs()).unwrap();
        assert_eq!(single.len(), 6);
        let multi = ikm_descriptor(&patch, IkmMode::Multi.pairs()).unwrap();
        assert_eq!(multi.len(), 30);
        assert!(multi.values.iter().all(|v| v.is_finite()));
        // the (0.5, 0.5) block of the multi-order vector is the single-order one
        assert_eq!(&multi.values[12..18], &single.values[..]);
    }

    #[test]
    fn mode_round_trip() {
        for mode in [IkmMode::Single, IkmMode::Multi] {
            assert_eq!(mode.as_str().parse::<IkmMode>().unwrap(), mode);
            assert_eq!(IkmMode::from_dim(mode.dim()), Some(mode));
        }
        assert!("triple".parse::<IkmMode>().is_err());
    }

    #[test]
    fn descriptor_survives_quarter_turn() {
        // asymmetric gray blob, well inside the patch
        let patch = ImageBuf::from_gray_fn(30, 30, |x, y| {
            let (dx, dy) = (x as f64 - 13.0, y as f64 - 15.0);
            let r = (dx * dx / 36.0 + dy * dy / 9.0).sqrt();
            if r < 1.0 { (120.0 + 8.0 * dx + 3.0 * dy).clamp(1.0, 255.0) as u8 } else { 0 }
        });
        let ex = IkmExtractor::for_mode(30, IkmMode::Multi).unwrap();
        let base = ex.describe(&patch).unwrap();
        let mut rotated = patch.clone();
        for _ in 0..3 {
            rotated = rotated.rotate90();
            let d = ex.describe(&rotated).unwrap();
            for (a, b) in base.values.iter().zip(&d.values) {
                assert!((a - b).abs() <= 0.05 * a.abs().max(b.abs()), "{a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn orthonormal_basis(n in 5usize..=64, pi in 0usize..3) {
            let p = [0.25, 0.5, 0.75][pi];
            let b = krawtchouk_basis(n, p, 5).unwrap();
            for i in 0..=5 {
                for j in 0..=5 {
                    let dot: f64 = b.kbar_row(i).iter().zip(b.kbar_row(j)).map(|(u, v)| u * v).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - target).abs() < 1e-8, "n={} p={} ({},{}) {}", n, p, i, j, dot);
                }
            }
        }

        #[test]
        fn invariants_are_translation_free(dx in 0usize..10, dy in 0usize..10, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blob: Vec<u8> = (0..64).map(|_| rng.gen_range(0..=255)).collect();
            let place = |ox: usize, oy: usize| {
                ImageBuf::from_gray_fn(20, 20, |x, y| {
                    if x >= ox && x < ox + 8 && y >= oy && y < oy + 8 { blob[(y - oy) * 8 + x - ox] } else { 0 }
                })
            };
            prop_assume!(blob.iter().any(|&v| v > 0));
            let a = invariant_context(&place(1, 1)).unwrap();
            let b = invariant_context(&place(1 + dx, 1 + dy)).unwrap();
            for n in 0..=3 {
                for m in 0..=3 - n {
                    prop_assert!((a.v(n, m) - b.v(n, m)).abs() < 1e-9);
                }
            }
        }
    }
}
