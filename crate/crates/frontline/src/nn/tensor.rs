//! N x C x H x W value grid for network activations and parameters.

use crate::error::{Error, Result};
use crate::raster::{Raster, Resolution, ValueDomain};

/// Dense 4-D grid, row-major within each plane; also used as the container
/// for convolution kernels (out-channels x in-channels x kh x kw).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl TensorGrid {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        TensorGrid {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    /// Builds a grid from raw values, checking the count and finiteness.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Dimension(format!(
                "value count {} does not match {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("tensor values must be finite".into()));
        }
        Ok(TensorGrid { n, c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let size = self.h * self.w;
        let start = (n * self.c + c) * size;
        &self.data[start..start + size]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let size = self.h * self.w;
        let start = (n * self.c + c) * size;
        &mut self.data[start..start + size]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set_at(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        self.data[((n * self.c + c) * self.h + y) * self.w + x] = v;
    }

    /// Stacks single-channel rasters into an (N, 1, H, W) batch.
    pub fn from_rasters(images: &[&Raster]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack an empty raster list".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.width() != w || img.height() != h {
                return Err(Error::Dimension(format!(
                    "raster {}x{} does not match batch {}x{}",
                    img.width(),
                    img.height(),
                    w,
                    h
                )));
            }
            data.extend_from_slice(img.pixels());
        }
        Ok(TensorGrid {
            n: images.len(),
            c: 1,
            h,
            w,
            data,
        })
    }

    /// Extracts batch element `n`, channel 0 as a raster.
    pub fn to_raster(&self, n: usize, resolution: Resolution, domain: ValueDomain) -> Result<Raster> {
        if n >= self.n || self.c != 1 {
            return Err(Error::Dimension(format!(
                "to_raster needs a single-channel grid and n < {}, got n={n} c={}",
                self.n, self.c
            )));
        }
        Raster::new(self.w, self.h, self.plane(n, 0).to_vec(), resolution, domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates() {
        assert!(TensorGrid::from_vec(1, 2, 2, 2, vec![0.0; 8]).is_ok());
        assert!(matches!(
            TensorGrid::from_vec(1, 2, 2, 2, vec![0.0; 7]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            TensorGrid::from_vec(1, 1, 1, 2, vec![0.0, f64::NAN]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn plane_indexing() {
        let t = TensorGrid::from_vec(2, 2, 1, 2, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.plane(0, 0), &[0.0, 1.0]);
        assert_eq!(t.plane(0, 1), &[2.0, 3.0]);
        assert_eq!(t.plane(1, 0), &[4.0, 5.0]);
        assert_eq!(t.at(1, 1, 0, 1), 7.0);
    }

    #[test]
    fn raster_round_trip() {
        let r = Raster::new(
            2,
            2,
            vec![0.1, 0.2, 0.3, 0.4],
            Resolution::isotropic(20.0),
            ValueDomain::Intensity01,
        )
        .unwrap();
        let t = TensorGrid::from_rasters(&[&r, &r]).unwrap();
        assert_eq!(t.shape(), (2, 1, 2, 2));
        let back = t.to_raster(1, r.resolution(), ValueDomain::Intensity01).unwrap();
        assert_eq!(back.pixels(), r.pixels());
    }
}
