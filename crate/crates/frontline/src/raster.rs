//! Core raster containers and resampling.
//!
//! A [`Raster`] is a single-channel 2-D grid of real values with a declared
//! [`ValueDomain`] and meters-per-pixel [`Resolution`]; a [`BinaryMask`] is
//! its boolean counterpart for front lines, zones, and structuring-element
//! results. Interpolation uses pixel-center alignment (sample position
//! `(i + 0.5) * scale - 0.5`, align-corners = false) so results are
//! deterministic and testable.

use crate::error::{Error, Result};

/// What the pixel values of a [`Raster`] mean, and therefore which range
/// they must lie in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    /// Normalized image intensity in [0, 1].
    Intensity01,
    /// Normalized distance map in [0, 1] (1 on the front, decaying outward).
    Distance01,
    /// Class probability in [0, 1].
    Probability01,
    /// Unconstrained real values (e.g. raw pixel distances).
    Raw,
}

impl ValueDomain {
    /// True for domains whose values must lie in [0, 1].
    pub fn is_unit(self) -> bool {
        !matches!(self, ValueDomain::Raw)
    }
}

/// Meters per pixel, per axis. Resampling with different scale factors per
/// axis makes the resolution anisotropic; metric conversions then use the
/// geometric mean.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Resolution {
    pub x_m: f64,
    pub y_m: f64,
}

impl Resolution {
    pub fn isotropic(meters_per_pixel: f64) -> Self {
        Resolution {
            x_m: meters_per_pixel,
            y_m: meters_per_pixel,
        }
    }

    pub fn is_isotropic(&self) -> bool {
        self.x_m == self.y_m
    }

    /// Scalar meters-per-pixel used for metric conversions.
    pub fn geometric_mean_m(&self) -> f64 {
        (self.x_m * self.y_m).sqrt()
    }

    fn validate(&self) -> Result<()> {
        for (axis, v) in [("x", self.x_m), ("y", self.y_m)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Parameter(format!(
                    "resolution must be positive and finite, got {v} on {axis} axis"
                )));
            }
        }
        Ok(())
    }
}

/// Single-channel 2-D real-valued image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    resolution: Resolution,
    domain: ValueDomain,
}

impl Raster {
    /// Builds a raster, validating the shape, the resolution, and (for unit
    /// domains) that every pixel lies in [0, 1].
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        resolution: Resolution,
        domain: ValueDomain,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        resolution.validate()?;
        let raster = Raster {
            width,
            height,
            pixels,
            resolution,
            domain,
        };
        raster.validate_domain()?;
        Ok(raster)
    }

    /// Constant-valued raster.
    pub fn filled(
        width: usize,
        height: usize,
        value: f64,
        resolution: Resolution,
        domain: ValueDomain,
    ) -> Result<Self> {
        Raster::new(width, height, vec![value; width * height], resolution, domain)
    }

    fn validate_domain(&self) -> Result<()> {
        for &v in &self.pixels {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite pixel value {v}")));
            }
            if self.domain.is_unit() && !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "pixel value {v} outside [0,1] for domain {:?}",
                    self.domain
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x] = value;
    }

    /// (min, max) over all pixels.
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.pixels {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Re-tags the raster with a new domain, re-validating pixel ranges.
    pub fn with_domain(mut self, domain: ValueDomain) -> Result<Self> {
        self.domain = domain;
        self.validate_domain()?;
        Ok(self)
    }

    /// Internal constructor for values already known to satisfy the domain.
    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        resolution: Resolution,
        domain: ValueDomain,
    ) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Raster {
            width,
            height,
            pixels,
            resolution,
            domain,
        }
    }
}

/// Boolean raster, row-major. True marks foreground (front, glacier zone,
/// structuring-element hit).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    resolution: Resolution,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>, resolution: Resolution) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::Dimension(format!(
                "bit count {} does not match {width}x{height}",
                bits.len()
            )));
        }
        resolution.validate()?;
        Ok(BinaryMask {
            width,
            height,
            bits,
            resolution,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool, resolution: Resolution) -> Result<Self> {
        BinaryMask::new(width, height, vec![value; width * height], resolution)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y * self.width + x] = value;
    }

    /// Number of true pixels.
    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// Row-major iterator over (x, y) of true pixels.
    pub fn iter_true(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % width, i / width))
    }

    /// Pixelwise complement.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
            resolution: self.resolution,
        }
    }

    /// 0/1 raster view of the mask.
    pub fn to_raster(&self, domain: ValueDomain) -> Raster {
        Raster::from_parts_unchecked(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            self.resolution,
            domain,
        )
    }
}

/// Interpolation kernel for [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    /// 2x2 convex combination; output bounded by input min/max.
    Bilinear,
    /// Catmull-Rom cubic (a = -0.5); may overshoot, clamped for unit domains.
    Bicubic,
}

/// Normalizes a 16-bit sample grid to an intensity raster (value / 65535).
pub fn normalize_from_u16(
    width: usize,
    height: usize,
    raw: &[u16],
    resolution: Resolution,
) -> Result<Raster> {
    if width == 0 || height == 0 || raw.is_empty() {
        return Err(Error::Dimension(format!(
            "empty grid: {width}x{height} with {} samples",
            raw.len()
        )));
    }
    if raw.len() != width * height {
        return Err(Error::Dimension(format!(
            "sample count {} does not match {width}x{height}",
            raw.len()
        )));
    }
    let pixels = raw.iter().map(|&v| f64::from(v) / 65535.0).collect();
    Raster::new(width, height, pixels, resolution, ValueDomain::Intensity01)
}

#[inline]
fn clamp_index(i: i64, len: usize) -> usize {
    i.clamp(0, len as i64 - 1) as usize
}

/// Catmull-Rom weights for the four taps at offsets -1..2 around the sample.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    // Kernel w(d) with a = -0.5 evaluated at d = t+1, t, 1-t, 2-t.
    const A: f64 = -0.5;
    let near = |d: f64| ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0;
    let far = |d: f64| ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Resamples a raster to `target` dimensions.
///
/// Sampling uses pixel-center alignment: source position of output index `i`
/// is `(i + 0.5) * in/out - 0.5`, with border replication. The per-axis
/// resolution is rescaled by `old/new`; bicubic output is clamped to [0, 1]
/// when the raster's domain is a unit domain.
pub fn resize(image: &Raster, target: (usize, usize), method: ResizeMethod) -> Result<Raster> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::Dimension(format!(
            "resize target must be positive, got {tw}x{th}"
        )));
    }
    let (iw, ih) = (image.width(), image.height());
    let scale_x = iw as f64 / tw as f64;
    let scale_y = ih as f64 / th as f64;

    let mut out = vec![0.0; tw * th];
    match method {
        ResizeMethod::Bilinear => {
            for oy in 0..th {
                let sy = (oy as f64 + 0.5) * scale_y - 0.5;
                let y0 = sy.floor();
                let fy = sy - y0;
                let y0i = clamp_index(y0 as i64, ih);
                let y1i = clamp_index(y0 as i64 + 1, ih);
                for ox in 0..tw {
                    let sx = (ox as f64 + 0.5) * scale_x - 0.5;
                    let x0 = sx.floor();
                    let fx = sx - x0;
                    let x0i = clamp_index(x0 as i64, iw);
                    let x1i = clamp_index(x0 as i64 + 1, iw);
                    let top = image.get(x0i, y0i) * (1.0 - fx) + image.get(x1i, y0i) * fx;
                    let bot = image.get(x0i, y1i) * (1.0 - fx) + image.get(x1i, y1i) * fx;
                    out[oy * tw + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        ResizeMethod::Bicubic => {
            for oy in 0..th {
                let sy = (oy as f64 + 0.5) * scale_y - 0.5;
                let y0 = sy.floor();
                let wy = cubic_weights(sy - y0);
                let ys: [usize; 4] =
                    std::array::from_fn(|k| clamp_index(y0 as i64 + k as i64 - 1, ih));
                for ox in 0..tw {
                    let sx = (ox as f64 + 0.5) * scale_x - 0.5;
                    let x0 = sx.floor();
                    let wx = cubic_weights(sx - x0);
                    let xs: [usize; 4] =
                        std::array::from_fn(|k| clamp_index(x0 as i64 + k as i64 - 1, iw));
                    let mut acc = 0.0;
                    for (ky, &yy) in ys.iter().enumerate() {
                        let mut row = 0.0;
                        for (kx, &xx) in xs.iter().enumerate() {
                            row += wx[kx] * image.get(xx, yy);
                        }
                        acc += wy[ky] * row;
                    }
                    out[oy * tw + ox] = acc;
                }
            }
            if image.domain().is_unit() {
                for v in &mut out {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
    }

    let res = Resolution {
        x_m: image.resolution().x_m * iw as f64 / tw as f64,
        y_m: image.resolution().y_m * ih as f64 / th as f64,
    };
    Ok(Raster::from_parts_unchecked(
        tw,
        th,
        out,
        res,
        image.domain(),
    ))
}

/// Nearest-neighbor mask resampling: source index = floor(target index * scale).
pub fn resize_mask(mask: &BinaryMask, target: (usize, usize)) -> Result<BinaryMask> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::Dimension(format!(
            "resize target must be positive, got {tw}x{th}"
        )));
    }
    let (iw, ih) = (mask.width(), mask.height());
    let scale_x = iw as f64 / tw as f64;
    let scale_y = ih as f64 / th as f64;
    let mut bits = vec![false; tw * th];
    for oy in 0..th {
        let sy = ((oy as f64 * scale_y) as usize).min(ih - 1);
        for ox in 0..tw {
            let sx = ((ox as f64 * scale_x) as usize).min(iw - 1);
            bits[oy * tw + ox] = mask.get(sx, sy);
        }
    }
    let res = Resolution {
        x_m: mask.resolution().x_m * iw as f64 / tw as f64,
        y_m: mask.resolution().y_m * ih as f64 / th as f64,
    };
    BinaryMask::new(tw, th, bits, res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn res20() -> Resolution {
        Resolution::isotropic(20.0)
    }

    #[test]
    fn normalize_u16_bounds() {
        let r = normalize_from_u16(3, 1, &[0, 65535, 32768], res20()).unwrap();
        assert_eq!(r.get(0, 0), 0.0);
        assert_eq!(r.get(1, 0), 1.0);
        assert!((r.get(2, 0) - 32768.0 / 65535.0).abs() < 1e-12);
        assert_eq!(r.domain(), ValueDomain::Intensity01);
    }

    #[test]
    fn normalize_u16_empty_is_dimension_error() {
        assert!(matches!(
            normalize_from_u16(0, 0, &[], res20()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn resize_constant_is_constant() {
        let img = Raster::filled(7, 5, 0.37, res20(), ValueDomain::Intensity01).unwrap();
        for method in [ResizeMethod::Bilinear, ResizeMethod::Bicubic] {
            let out = resize(&img, (13, 3), method).unwrap();
            for &v in out.pixels() {
                assert!((v - 0.37).abs() < 1e-6, "{method:?} broke constancy: {v}");
            }
        }
    }

    #[test]
    fn resize_identity_bilinear() {
        let img = Raster::new(
            2,
            2,
            vec![0.0, 1.0, 0.0, 1.0],
            res20(),
            ValueDomain::Intensity01,
        )
        .unwrap();
        let out = resize(&img, (2, 2), ResizeMethod::Bilinear).unwrap();
        assert_eq!(out.pixels(), img.pixels());
    }

    #[test]
    fn resize_zero_target_rejected() {
        let img = Raster::filled(4, 4, 0.5, res20(), ValueDomain::Intensity01).unwrap();
        assert!(matches!(
            resize(&img, (0, 4), ResizeMethod::Bilinear),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn bilinear_downscale_bounded_by_input_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pixels: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
        let img = Raster::new(64, 64, pixels, res20(), ValueDomain::Intensity01).unwrap();
        let (lo, hi) = img.min_max();
        let out = resize(&img, (32, 32), ResizeMethod::Bilinear).unwrap();
        for &v in out.pixels() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
        // Resolution doubles per axis on a 2x downscale.
        assert!((out.resolution().x_m - 40.0).abs() < 1e-12);
    }

    #[test]
    fn resize_round_trip_preserves_ramp() {
        // Interior pixels round-trip exactly; the border-replication clamp
        // perturbs edge pixels by 0.125 * per-pixel step, which stays inside
        // the 1e-3 budget for ramps of this granularity.
        let (w, h) = (200, 16);
        let pixels: Vec<f64> = (0..w * h).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
        let img = Raster::new(w, h, pixels, res20(), ValueDomain::Intensity01).unwrap();
        let up = resize(&img, (2 * w, 2 * h), ResizeMethod::Bilinear).unwrap();
        let back = resize(&up, (w, h), ResizeMethod::Bilinear).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn bicubic_clamped_to_unit_domain() {
        // A sharp step overshoots under Catmull-Rom; tagged domains clamp.
        let mut pixels = vec![0.0; 8 * 8];
        for y in 0..8 {
            for x in 4..8 {
                pixels[y * 8 + x] = 1.0;
            }
        }
        let img = Raster::new(8, 8, pixels, res20(), ValueDomain::Intensity01).unwrap();
        let out = resize(&img, (16, 16), ResizeMethod::Bicubic).unwrap();
        for &v in out.pixels() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn resize_mask_all_false_and_identity() {
        let empty = BinaryMask::filled(4, 4, false, res20()).unwrap();
        assert_eq!(resize_mask(&empty, (2, 2)).unwrap().count_true(), 0);

        let mut m = BinaryMask::filled(4, 4, false, res20()).unwrap();
        m.set(1, 2, true);
        m.set(3, 0, true);
        assert_eq!(resize_mask(&m, (4, 4)).unwrap(), m);
    }

    #[test]
    fn resize_mask_nearest_index_mapping() {
        let mut m = BinaryMask::filled(4, 4, false, res20()).unwrap();
        m.set(0, 0, true);
        let out = resize_mask(&m, (2, 2)).unwrap();
        assert!(out.get(0, 0));
        assert_eq!(out.count_true(), 1);
    }

    #[test]
    fn resize_mask_zero_target_rejected() {
        let m = BinaryMask::filled(4, 4, true, res20()).unwrap();
        assert!(matches!(resize_mask(&m, (4, 0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn unit_domain_validation() {
        assert!(matches!(
            Raster::new(1, 1, vec![1.5], res20(), ValueDomain::Intensity01),
            Err(Error::Domain(_))
        ));
        assert!(Raster::new(1, 1, vec![1.5], res20(), ValueDomain::Raw).is_ok());
    }

    #[test]
    fn anisotropic_resolution_carried_per_axis() {
        let img = Raster::filled(8, 4, 0.1, res20(), ValueDomain::Intensity01).unwrap();
        let out = resize(&img, (4, 4), ResizeMethod::Bilinear).unwrap();
        assert!((out.resolution().x_m - 40.0).abs() < 1e-12);
        assert!((out.resolution().y_m - 20.0).abs() < 1e-12);
        assert!(!out.resolution().is_isotropic());
        assert!((out.resolution().geometric_mean_m() - (40.0f64 * 20.0).sqrt()).abs() < 1e-12);
    }
}
