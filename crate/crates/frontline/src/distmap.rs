//! Regression targets from front lines.
//!
//! The target for the pixel-wise regression model is a normalized distance
//! map: the exact Euclidean distance transform of the front mask, rescaled to
//! `(1 - D / max D)^gamma` so the value is 1 on the front and decays to 0 at
//! the farthest pixel. Distance is always measured *to* the front set (a true
//! pixel in the input mask is a front pixel); the inversion mentioned
//! alongside the transform in the literature is a labeling convention, not an
//! extra operation.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster, ValueDomain};

/// Decay exponent controlling how sharply the normalized map falls off away
/// from the front. The reference configuration uses 7.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecayParam {
    gamma: f64,
}

impl DecayParam {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::Parameter(format!(
                "decay parameter must be positive and finite, got {gamma}"
            )));
        }
        Ok(DecayParam { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

const INF: f64 = f64::INFINITY;

/// 1-D squared-distance transform by lower envelope of parabolas
/// (Felzenszwalb & Huttenlocher). `f` holds squared distances sampled on the
/// grid; the result is `min_j (i - j)^2 + f[j]` for every i.
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        if f[q] == INF {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] == INF {
                // Parabola at p is everywhere above; replace it.
                if k == 0 {
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k -= 1;
                continue;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = if f[p] == INF {
            INF
        } else {
            ((q as i64 - p as i64) * (q as i64 - p as i64)) as f64 + f[p]
        };
    }
}

/// Exact Euclidean distance transform: per-pixel distance (in pixels) to the
/// nearest true pixel of `mask`.
///
/// Two separable passes over squared distances keep the result exact, so the
/// output matches a brute-force all-pairs scan to floating rounding. Errors
/// with [`Error::NoFront`] when the mask has no true pixel.
pub fn euclidean_distance_transform(mask: &BinaryMask) -> Result<Raster> {
    if !mask.any() {
        return Err(Error::NoFront);
    }
    let (w, h) = (mask.width(), mask.height());

    // Pass 1: squared distance within each column.
    let mut g = vec![INF; w * h];
    for x in 0..w {
        let mut col: Vec<f64> = (0..h)
            .map(|y| if mask.get(x, y) { 0.0 } else { INF })
            .collect();
        let mut d = vec![0.0; h];
        let mut v = vec![0usize; h];
        let mut z = vec![0.0; h + 1];
        dt_1d(&col, &mut d, &mut v, &mut z);
        col.copy_from_slice(&d);
        for y in 0..h {
            g[y * w + x] = col[y];
        }
    }

    // Pass 2: combine across rows.
    let mut sq = vec![0.0; w * h];
    let mut d = vec![0.0; w];
    let mut v = vec![0usize; w];
    let mut z = vec![0.0; w + 1];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        dt_1d(row, &mut d, &mut v, &mut z);
        sq[y * w..(y + 1) * w].copy_from_slice(&d);
    }

    let pixels: Vec<f64> = sq.into_iter().map(f64::sqrt).collect();
    Ok(Raster::from_parts_unchecked(
        w,
        h,
        pixels,
        mask.resolution(),
        ValueDomain::Raw,
    ))
}

/// Normalizes a raw distance map to `(1 - D / max D)^gamma`.
///
/// The result is 1 exactly where D = 0, 0 exactly where D reaches its
/// maximum, and pointwise non-increasing in D. An identically-zero map (front
/// everywhere) degenerates to the all-ones map.
pub fn normalize_distance_map(distances: &Raster, gamma: DecayParam) -> Result<Raster> {
    let mut max = 0.0f64;
    for &v in distances.pixels() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Domain(format!(
                "raw distances must be finite and non-negative, got {v}"
            )));
        }
        max = max.max(v);
    }
    let pixels: Vec<f64> = if max == 0.0 {
        vec![1.0; distances.pixels().len()]
    } else {
        distances
            .pixels()
            .iter()
            .map(|&v| (1.0 - v / max).powf(gamma.gamma()))
            .collect()
    };
    Ok(Raster::from_parts_unchecked(
        distances.width(),
        distances.height(),
        pixels,
        distances.resolution(),
        ValueDomain::Distance01,
    ))
}

/// Full target construction: exact EDT of the front mask, then decay
/// normalization.
pub fn front_to_distance_target(front: &BinaryMask, gamma: DecayParam) -> Result<Raster> {
    let distances = euclidean_distance_transform(front)?;
    normalize_distance_map(&distances, gamma)
}
