//! Fully connected CRF post-processing.
//!
//! The predicted distance map supplies a two-class unary (front /
//! background); the pairwise term couples every pixel pair through a
//! bilateral kernel (spatial distance + intensity difference on the SAR
//! image) and a spatial Gaussian kernel under a Potts compatibility. Inference
//! is synchronous mean field with per-kernel message normalization, the
//! convention of the reference dense-CRF implementations; the configured
//! kernel weights are calibrated for normalized messages.
//!
//! Message passing is exact (all pairs) on small images and truncated to a
//! square window on larger ones. One inference call is a single sequential
//! task with a fixed summation order, so repeated runs are bit-identical;
//! run distinct images concurrently instead.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster, Resolution};

/// Largest image edge still processed with exact all-pairs messages.
const EXACT_LIMIT: usize = 96;

/// Weights and scales of the pairwise potentials plus the iteration count.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenseCrfParams {
    /// Bilateral (appearance) kernel weight.
    pub w1: f64,
    /// Spatial Gaussian (smoothness) kernel weight.
    pub w2: f64,
    /// Spatial standard deviation of the bilateral kernel, in pixels.
    pub sigma_alpha: f64,
    /// Intensity standard deviation of the bilateral kernel, on [0,1] values.
    pub sigma_beta: f64,
    /// Spatial standard deviation of the Gaussian kernel, in pixels.
    pub sigma_gamma: f64,
    /// Mean-field iterations.
    pub iterations: usize,
    /// Optional truncation radius in pixels; `None` selects exact messages up
    /// to 96x96 and `ceil(3 * max(sigma_alpha, sigma_gamma))` beyond that.
    pub window: Option<usize>,
}

impl Default for DenseCrfParams {
    /// Reference configuration: bilateral-only coupling with a wide spatial
    /// scale (sigma_alpha = 512, w2 = 0), intensity scale 13/255 on [0,1]
    /// intensities, ten iterations.
    fn default() -> Self {
        DenseCrfParams {
            w1: 4.0,
            w2: 0.0,
            sigma_alpha: 512.0,
            sigma_beta: 0.0513,
            sigma_gamma: 3.0,
            iterations: 10,
            window: None,
        }
    }
}

impl DenseCrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
            ("sigma_gamma", self.sigma_gamma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("w1", self.w1), ("w2", self.w2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Label index of the calving front class.
pub const FRONT: usize = 0;
/// Label index of the background class.
pub const BACKGROUND: usize = 1;

/// Per-pixel two-class distribution (front, background). Rows are
/// normalized: entries are non-negative and sum to 1 within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    width: usize,
    height: usize,
    resolution: Resolution,
    q: Vec<[f64; 2]>,
}

impl LabelDistribution {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// (front, background) probabilities at a pixel.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.q[y * self.width + x]
    }

    pub fn probabilities(&self) -> &[[f64; 2]] {
        &self.q
    }

    /// Negative log of the stored probabilities (the unary potentials).
    pub fn potentials(&self) -> Vec<[f64; 2]> {
        self.q.iter().map(|p| [-p[0].ln(), -p[1].ln()]).collect()
    }
}

/// Builds the unary distribution from a predicted distance map: the front
/// probability is the map value clamped to [epsilon, 1 - epsilon] and the
/// background probability is its complement.
pub fn unary_from_distance_map(dmap: &Raster, epsilon: f64) -> Result<LabelDistribution> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= 0.5 {
        return Err(Error::Parameter(format!(
            "epsilon must be in (0, 0.5), got {epsilon}"
        )));
    }
    let mut q = Vec::with_capacity(dmap.pixels().len());
    for &v in dmap.pixels() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "distance map value {v} outside [0,1]"
            )));
        }
        let front = v.clamp(epsilon, 1.0 - epsilon);
        q.push([front, 1.0 - front]);
    }
    Ok(LabelDistribution {
        width: dmap.width(),
        height: dmap.height(),
        resolution: dmap.resolution(),
        q,
    })
}

/// Mean-field inference over the dense CRF.
///
/// Each iteration computes, for every pixel i and label l, the normalized
/// per-kernel messages
///
/// ```text
/// mb_i(l) = sum_{j != i} kb(i,j) q_j(l) / sum_{j != i} kb(i,j)
/// mg_i(l) = sum_{j != i} kg(i,j) q_j(l) / sum_{j != i} kg(i,j)
/// ```
///
/// with `kb = exp(-|p_i-p_j|^2 / 2 sigma_alpha^2 - (I_i-I_j)^2 / 2 sigma_beta^2)`
/// and `kg = exp(-|p_i-p_j|^2 / 2 sigma_gamma^2)`, then applies the Potts
/// transform (a label is penalized by the opposite label's message) and
/// renormalizes:
///
/// ```text
/// q_i(l) <- softmax_l( ln P_i(l) - w1 * mb_i(1-l) - w2 * mg_i(1-l) )
/// ```
///
/// All updates within an iteration read the previous iteration's q.
pub fn mean_field_infer(
    unary: &LabelDistribution,
    image: &Raster,
    params: &DenseCrfParams,
) -> Result<LabelDistribution> {
    params.validate()?;
    if unary.width() != image.width() || unary.height() != image.height() {
        return Err(Error::Dimension(format!(
            "unary {}x{} does not match image {}x{}",
            unary.width(),
            unary.height(),
            image.width(),
            image.height()
        )));
    }
    let (w, h) = (unary.width(), unary.height());

    let window = params.window.or_else(|| {
        if w.max(h) > EXACT_LIMIT {
            Some((3.0 * params.sigma_alpha.max(params.sigma_gamma)).ceil() as usize)
        } else {
            None
        }
    });
    let (win_x, win_y) = match window {
        Some(r) => (r.min(w - 1) as i64, r.min(h - 1) as i64),
        None => ((w - 1) as i64, (h - 1) as i64),
    };

    // Spatial kernel factors by offset, shared across all pixels.
    let tw = 2 * win_x as usize + 1;
    let th = 2 * win_y as usize + 1;
    let inv_2sa2 = 1.0 / (2.0 * params.sigma_alpha * params.sigma_alpha);
    let inv_2sg2 = 1.0 / (2.0 * params.sigma_gamma * params.sigma_gamma);
    let mut spatial_b = vec![0.0; tw * th];
    let mut spatial_g = vec![0.0; tw * th];
    for dy in -win_y..=win_y {
        for dx in -win_x..=win_x {
            let d2 = (dx * dx + dy * dy) as f64;
            let idx = (dy + win_y) as usize * tw + (dx + win_x) as usize;
            spatial_b[idx] = (-d2 * inv_2sa2).exp();
            spatial_g[idx] = (-d2 * inv_2sg2).exp();
        }
    }

    let inv_2sb2 = 1.0 / (2.0 * params.sigma_beta * params.sigma_beta);
    let log_p: Vec<[f64; 2]> = unary.q.iter().map(|p| [p[0].ln(), p[1].ln()]).collect();
    let pixels = image.pixels();

    let mut q = unary.q.clone();
    let mut next = vec![[0.0f64; 2]; w * h];
    let use_bilateral = params.w1 > 0.0;
    let use_gaussian = params.w2 > 0.0;

    for _ in 0..params.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ii = pixels[i];
                let mut bf = 0.0;
                let mut bb = 0.0;
                let mut bz = 0.0;
                let mut gf = 0.0;
                let mut gb = 0.0;
                let mut gz = 0.0;
                let y0 = (y as i64 - win_y).max(0) as usize;
                let y1 = ((y as i64 + win_y) as usize).min(h - 1);
                let x0 = (x as i64 - win_x).max(0) as usize;
                let x1 = ((x as i64 + win_x) as usize).min(w - 1);
                for yy in y0..=y1 {
                    let trow = (yy as i64 - y as i64 + win_y) as usize * tw;
                    let row = yy * w;
                    for xx in x0..=x1 {
                        let j = row + xx;
                        if j == i {
                            continue;
                        }
                        let tidx = trow + (xx as i64 - x as i64 + win_x) as usize;
                        let qj = q[j];
                        if use_bilateral {
                            let di = ii - pixels[j];
                            let kb = spatial_b[tidx] * (-di * di * inv_2sb2).exp();
                            bf += kb * qj[0];
                            bb += kb * qj[1];
                            bz += kb;
                        }
                        if use_gaussian {
                            let kg = spatial_g[tidx];
                            gf += kg * qj[0];
                            gb += kg * qj[1];
                            gz += kg;
                        }
                    }
                }
                let mut m = [0.0f64; 2];
                if use_bilateral && bz > 0.0 {
                    m[0] += params.w1 * bf / bz;
                    m[1] += params.w1 * bb / bz;
                }
                if use_gaussian && gz > 0.0 {
                    m[0] += params.w2 * gf / gz;
                    m[1] += params.w2 * gb / gz;
                }
                // Potts compatibility: label l pays the other label's message.
                let e_front = log_p[i][0] - m[1];
                let e_back = log_p[i][1] - m[0];
                let peak = e_front.max(e_back);
                let ef = (e_front - peak).exp();
                let eb = (e_back - peak).exp();
                let z = ef + eb;
                next[i] = [ef / z, eb / z];
            }
        }
        std::mem::swap(&mut q, &mut next);
    }

    Ok(LabelDistribution {
        width: w,
        height: h,
        resolution: unary.resolution,
        q,
    })
}

/// Per-pixel argmax labeling; an exact tie goes to background.
pub fn map_labels(q: &LabelDistribution) -> BinaryMask {
    let bits = q.q.iter().map(|p| p[FRONT] > p[BACKGROUND]).collect();
    BinaryMask::new(q.width, q.height, bits, q.resolution).expect("same dimensions as input")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ValueDomain;
    use rand::{Rng, SeedableRng};

    fn res() -> Resolution {
        Resolution::isotropic(20.0)
    }

    fn dmap(values: Vec<f64>, w: usize, h: usize) -> Raster {
        Raster::new(w, h, values, res(), ValueDomain::Distance01).unwrap()
    }

    #[test]
    fn unary_clamps_extremes() {
        let u = unary_from_distance_map(&dmap(vec![1.0, 0.5, 0.0], 3, 1), 1e-6).unwrap();
        let p0 = u.get(0, 0);
        assert!((p0[FRONT] - (1.0 - 1e-6)).abs() < 1e-15);
        assert!((p0[BACKGROUND] - 1e-6).abs() < 1e-15);
        assert_eq!(u.get(1, 0), [0.5, 0.5]);
        let p2 = u.get(2, 0);
        assert!((p2[FRONT] - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn unary_rejects_out_of_range() {
        let bad = Raster::new(2, 1, vec![0.5, 1.5], res(), ValueDomain::Raw).unwrap();
        assert!(matches!(
            unary_from_distance_map(&bad, 1e-6),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unary_potential_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let u = unary_from_distance_map(&dmap(values, 8, 8), 1e-6).unwrap();
        for (p, theta) in u.probabilities().iter().zip(u.potentials()) {
            // exp(-theta) renormalized recovers the probabilities.
            let e = [(-theta[0]).exp(), (-theta[1]).exp()];
            let z = e[0] + e[1];
            assert!((e[0] / z - p[0]).abs() < 1e-9);
            assert!((e[1] / z - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weights_reduce_to_unary_argmax() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..16 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let d = dmap(values, 16, 16);
        let image = Raster::filled(16, 16, 0.5, res(), ValueDomain::Intensity01).unwrap();
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let params = DenseCrfParams {
            w1: 0.0,
            w2: 0.0,
            ..DenseCrfParams::default()
        };
        let q = mean_field_infer(&u, &image, &params).unwrap();
        // With no pairwise term the update renormalizes exp(ln P), i.e. P.
        for (a, b) in q.probabilities().iter().zip(u.probabilities()) {
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
        assert_eq!(map_labels(&q), map_labels(&u));
    }

    #[test]
    fn iterations_zero_rejected() {
        let d = dmap(vec![0.5; 4], 2, 2);
        let image = Raster::filled(2, 2, 0.5, res(), ValueDomain::Intensity01).unwrap();
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let params = DenseCrfParams {
            iterations: 0,
            ..DenseCrfParams::default()
        };
        assert!(matches!(
            mean_field_infer(&u, &image, &params),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn two_pixel_single_iteration_matches_hand_update() {
        let d = dmap(vec![0.9, 0.3], 2, 1);
        let image = Raster::new(2, 1, vec![0.2, 0.8], res(), ValueDomain::Intensity01).unwrap();
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let params = DenseCrfParams {
            w1: 2.0,
            w2: 0.5,
            sigma_alpha: 1.5,
            sigma_beta: 0.25,
            sigma_gamma: 2.0,
            iterations: 1,
            window: None,
        };
        let q = mean_field_infer(&u, &image, &params).unwrap();

        // By hand: a single neighbor makes each normalized kernel message
        // equal that neighbor's distribution, so m_i(l) = (w1 + w2) q_j(l).
        let p = [[0.9, 0.1], [0.3, 0.7]];
        for i in 0..2 {
            let other = p[1 - i];
            let ef = (p[i][0] as f64).ln() - 2.5 * other[1];
            let eb = (p[i][1] as f64).ln() - 2.5 * other[0];
            let z = ef.exp() + eb.exp();
            let got = q.get(i, 0);
            assert!((got[0] - ef.exp() / z).abs() < 1e-12);
            assert!((got[1] - eb.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn three_pixel_kernel_weighting_matches_hand_update() {
        // Three pixels in a row with distinct intensities: kernel weights no
        // longer cancel in the normalization.
        let d = dmap(vec![0.8, 0.5, 0.1], 3, 1);
        let image = Raster::new(3, 1, vec![0.0, 0.5, 1.0], res(), ValueDomain::Intensity01).unwrap();
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let params = DenseCrfParams {
            w1: 1.5,
            w2: 0.75,
            sigma_alpha: 2.0,
            sigma_beta: 0.3,
            sigma_gamma: 1.0,
            iterations: 1,
            window: None,
        };
        let q = mean_field_infer(&u, &image, &params).unwrap();

        let p: [[f64; 2]; 3] = [[0.8, 0.2], [0.5, 0.5], [0.1, 0.9]];
        let ints = [0.0f64, 0.5, 1.0];
        let kb = |i: usize, j: usize| -> f64 {
            let d2 = ((i as f64) - (j as f64)).powi(2);
            let di2 = (ints[i] - ints[j]).powi(2);
            (-d2 / (2.0 * 4.0) - di2 / (2.0 * 0.09)).exp()
        };
        let kg = |i: usize, j: usize| -> f64 {
            let d2 = ((i as f64) - (j as f64)).powi(2);
            (-d2 / 2.0).exp()
        };
        for i in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let bz: f64 = others.iter().map(|&j| kb(i, j)).sum();
            let gz: f64 = others.iter().map(|&j| kg(i, j)).sum();
            let mut m = [0.0f64; 2];
            for l in 0..2 {
                let bs: f64 = others.iter().map(|&j| kb(i, j) * p[j][l]).sum();
                let gs: f64 = others.iter().map(|&j| kg(i, j) * p[j][l]).sum();
                m[l] = 1.5 * bs / bz + 0.75 * gs / gz;
            }
            let ef = p[i][0].ln() - m[1];
            let eb = p[i][1].ln() - m[0];
            let z = ef.exp() + eb.exp();
            let got = q.get(i, 0);
            assert!((got[0] - ef.exp() / z).abs() < 1e-12, "pixel {i}");
        }
    }

    #[test]
    fn uniform_inputs_stay_uniform() {
        let d = dmap(vec![0.5; 36], 6, 6);
        let image = Raster::filled(6, 6, 0.4, res(), ValueDomain::Intensity01).unwrap();
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let q = mean_field_infer(&u, &image, &DenseCrfParams::default()).unwrap();
        for p in q.probabilities() {
            assert!((p[0] - 0.5).abs() < 1e-12);
            assert!((p[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_stay_normalized_and_runs_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0.0..1.0)).collect();
        let ivals: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0.0..1.0)).collect();
        let d = dmap(values, 32, 32);
        let image = Raster::new(32, 32, ivals, res(), ValueDomain::Intensity01).unwrap();
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let params = DenseCrfParams {
            w1: 3.0,
            w2: 1.0,
            sigma_alpha: 8.0,
            sigma_beta: 0.1,
            sigma_gamma: 2.0,
            iterations: 4,
            window: None,
        };
        let q1 = mean_field_infer(&u, &image, &params).unwrap();
        let q2 = mean_field_infer(&u, &image, &params).unwrap();
        for (a, b) in q1.probabilities().iter().zip(q2.probabilities()) {
            assert_eq!(a, b, "inference not deterministic");
        }
        for p in q1.probabilities() {
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn label_swap_symmetry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..8 * 8).map(|_| rng.random_range(0.0..1.0)).collect();
        let ivals: Vec<f64> = (0..8 * 8).map(|_| rng.random_range(0.0..1.0)).collect();
        let d = dmap(values.clone(), 8, 8);
        let image = Raster::new(8, 8, ivals, res(), ValueDomain::Intensity01).unwrap();
        let params = DenseCrfParams {
            w1: 2.0,
            w2: 1.0,
            sigma_alpha: 4.0,
            sigma_beta: 0.2,
            sigma_gamma: 2.0,
            iterations: 3,
            window: None,
        };
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let swapped = LabelDistribution {
            width: u.width,
            height: u.height,
            resolution: u.resolution,
            q: u.q.iter().map(|p| [p[1], p[0]]).collect(),
        };
        let a = mean_field_infer(&u, &image, &params).unwrap();
        let b = mean_field_infer(&swapped, &image, &params).unwrap();
        for (pa, pb) in a.probabilities().iter().zip(b.probabilities()) {
            assert!((pa[0] - pb[1]).abs() < 1e-12);
            assert!((pa[1] - pb[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let d = dmap(vec![0.5; 4], 2, 2);
        let image = Raster::filled(3, 2, 0.5, res(), ValueDomain::Intensity01).unwrap();
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        assert!(matches!(
            mean_field_infer(&u, &image, &DenseCrfParams::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn map_labels_cases_and_oracle() {
        let d = dmap(vec![0.9, 0.5, 0.2], 3, 1);
        let u = unary_from_distance_map(&d, 1e-6).unwrap();
        let m = map_labels(&u);
        assert!(m.get(0, 0)); // 0.9 > 0.1
        assert!(!m.get(1, 0)); // tie -> background
        assert!(!m.get(2, 0));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let values: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
        let u = unary_from_distance_map(&dmap(values.clone(), 10, 10), 1e-6).unwrap();
        let m = map_labels(&u);
        for (i, &v) in values.iter().enumerate() {
            let p = v.clamp(1e-6, 1.0 - 1e-6);
            assert_eq!(m.bits()[i], p > 1.0 - p, "pixel {i}");
        }
    }
}
