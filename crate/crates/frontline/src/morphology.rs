//! Binary morphology and edge operators.
//!
//! Everything downstream of the distance-map model manipulates masks through
//! these primitives: width adjustment and tolerance dilation (dilate/erode),
//! the zone baseline (close, largest component, Canny), and skeletonization
//! for the threshold extractor. Connectivity is 8-connected for foreground
//! throughout.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster};

/// Neighborhood kernel of a morphological operation. `size` is the full
/// width (odd); a disk keeps the offsets within radius `(size-1)/2` of the
/// center, a square keeps them all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    size: usize,
    shape: SeShape,
    offsets: Vec<(i32, i32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeShape {
    Square,
    Disk,
}

impl StructuringElement {
    pub fn new(size: usize, shape: SeShape) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::Parameter(format!(
                "structuring element size must be odd and positive, got {size}"
            )));
        }
        let r = (size as i32 - 1) / 2;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let keep = match shape {
                    SeShape::Square => true,
                    SeShape::Disk => dx * dx + dy * dy <= r * r,
                };
                if keep {
                    offsets.push((dx, dy));
                }
            }
        }
        Ok(StructuringElement { size, shape, offsets })
    }

    pub fn square(size: usize) -> Result<Self> {
        StructuringElement::new(size, SeShape::Square)
    }

    pub fn disk(size: usize) -> Result<Self> {
        StructuringElement::new(size, SeShape::Disk)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn shape(&self) -> SeShape {
        self.shape
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }
}

/// Dilation: true wherever the element translated to a pixel intersects the
/// mask. Extensive for center-containing elements.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = vec![false; w * h];
    for (x, y) in mask.iter_true() {
        for &(dx, dy) in se.offsets() {
            let nx = x as i32 + dx;
            let ny = y as i32 + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                out[ny as usize * w + nx as usize] = true;
            }
        }
    }
    BinaryMask::new(w, h, out, mask.resolution()).expect("same dimensions as input")
}

/// Erosion: true only where the element fits entirely inside the mask;
/// outside the image counts as false.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = vec![false; w * h];
    'pixels: for (x, y) in mask.iter_true() {
        for &(dx, dy) in se.offsets() {
            let nx = x as i32 + dx;
            let ny = y as i32 + dy;
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue 'pixels;
            }
            if !mask.get(nx as usize, ny as usize) {
                continue 'pixels;
            }
        }
        out[y * w + x] = true;
    }
    BinaryMask::new(w, h, out, mask.resolution()).expect("same dimensions as input")
}

/// Morphological closing: dilation followed by erosion with the same
/// element. Fills holes and gaps smaller than the element; extensive and
/// idempotent.
pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode(&dilate(mask, se), se)
}

#[inline]
fn neighbors8(mask: &[bool], w: usize, h: usize, x: usize, y: usize) -> [bool; 8] {
    let at = |dx: i32, dy: i32| -> bool {
        let nx = x as i32 + dx;
        let ny = y as i32 + dy;
        nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && mask[ny as usize * w + nx as usize]
    };
    // p2..p9 clockwise from north, matching the usual thinning notation.
    [
        at(0, -1),
        at(1, -1),
        at(1, 0),
        at(1, 1),
        at(0, 1),
        at(-1, 1),
        at(-1, 0),
        at(-1, -1),
    ]
}

/// Morphological thinning to a skeleton.
///
/// Zhang-Suen deletion conditions, applied sequentially in row-major order
/// within each subiteration. Sequential application keeps every deletion a
/// simple-point deletion (crossing number 1), so the 8-connected component
/// count is preserved exactly and the result is a fixed point of the
/// operation; the parallel variant can dissolve isolated 2x2 blocks.
pub fn thin(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut bits = mask.bits().to_vec();
    loop {
        let mut changed = false;
        for sub in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    if !bits[y * w + x] {
                        continue;
                    }
                    let p = neighbors8(&bits, w, h, x, y);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let mut a = 0;
                    for k in 0..8 {
                        if !p[k] && p[(k + 1) % 8] {
                            a += 1;
                        }
                    }
                    if a != 1 {
                        continue;
                    }
                    // p2=p[0] N, p4=p[2] E, p6=p[4] S, p8=p[6] W.
                    let ok = if sub == 0 {
                        !(p[0] && p[2] && p[4]) && !(p[2] && p[4] && p[6])
                    } else {
                        !(p[0] && p[2] && p[6]) && !(p[0] && p[4] && p[6])
                    };
                    if ok {
                        bits[y * w + x] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask::new(w, h, bits, mask.resolution()).expect("same dimensions as input")
}

/// Result of [`connected_components`]: a label per pixel (0 = background)
/// and the pixel count per label.
#[derive(Debug, Clone)]
pub struct ComponentLabeling {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Label raster, row-major; 0 is background, components are 1..=count().
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of components.
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Pixel count of component `label` (1-based).
    pub fn size_of(&self, label: u32) -> usize {
        self.sizes[label as usize - 1]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// 8-connected component labeling. Labels are assigned in row-major order of
/// each component's first pixel, so the result is deterministic.
pub fn connected_components(mask: &BinaryMask) -> ComponentLabeling {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0usize;
        labels[start] = label;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let (x, y) = (idx % w, idx / w);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i32 + dx;
                    let ny = y as i32 + dy;
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if mask.bits()[nidx] && labels[nidx] == 0 {
                        labels[nidx] = label;
                        queue.push_back(nidx);
                    }
                }
            }
        }
        sizes.push(size);
    }
    ComponentLabeling {
        width: w,
        height: h,
        labels,
        sizes,
    }
}

/// Keeps only the largest 8-connected component; ties go to the component
/// whose first pixel comes earliest in row-major order (the lower label).
pub fn largest_component(mask: &BinaryMask) -> Result<BinaryMask> {
    if !mask.any() {
        return Err(Error::EmptyMask("largest_component needs a nonempty mask"));
    }
    let labeling = connected_components(mask);
    let mut best_label = 1u32;
    let mut best_size = labeling.size_of(1);
    for label in 2..=labeling.count() as u32 {
        let size = labeling.size_of(label);
        if size > best_size {
            best_size = size;
            best_label = label;
        }
    }
    let bits = labeling.labels().iter().map(|&l| l == best_label).collect();
    BinaryMask::new(mask.width(), mask.height(), bits, mask.resolution())
}

#[inline]
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur(image: &Raster, sigma: f64) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i32;
    let clamp = |v: i32, hi: usize| v.clamp(0, hi as i32 - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sx = clamp(x as i32 + i as i32 - radius, w);
                acc += kv * image.get(sx, y);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sy = clamp(y as i32 + i as i32 - radius, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression along the quantized gradient direction, hysteresis linking.
/// Thresholds apply to raw Sobel magnitudes of the (typically [0, 1]) image.
pub fn canny_edges(image: &Raster, low: f64, high: f64, sigma: f64) -> Result<BinaryMask> {
    if !(low.is_finite() && high.is_finite()) || low < 0.0 || low > high {
        return Err(Error::Parameter(format!(
            "canny thresholds need 0 <= low <= high, got low={low} high={high}"
        )));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::Parameter(format!("canny sigma must be positive, got {sigma}")));
    }
    let (w, h) = (image.width(), image.height());
    let smoothed = blur(image, sigma);
    let at = |x: i32, y: i32| -> f64 {
        let cx = x.clamp(0, w as i32 - 1) as usize;
        let cy = y.clamp(0, h as i32 - 1) as usize;
        smoothed[cy * w + cx]
    };

    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as i32, y as i32);
            let sx = (at(xi + 1, yi - 1) + 2.0 * at(xi + 1, yi) + at(xi + 1, yi + 1))
                - (at(xi - 1, yi - 1) + 2.0 * at(xi - 1, yi) + at(xi - 1, yi + 1));
            let sy = (at(xi - 1, yi + 1) + 2.0 * at(xi, yi + 1) + at(xi + 1, yi + 1))
                - (at(xi - 1, yi - 1) + 2.0 * at(xi, yi - 1) + at(xi + 1, yi - 1));
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
            mag[y * w + x] = sx.hypot(sy);
        }
    }

    // Non-maximum suppression along the quantized gradient direction; ties
    // keep both pixels, so step edges may be two pixels wide.
    let mag_at = |x: i32, y: i32| -> f64 {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thinned = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let angle = gy[y * w + x].atan2(gx[y * w + x]).to_degrees();
            let angle = if angle < 0.0 { angle + 180.0 } else { angle };
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            if m >= mag_at(x as i32 + dx, y as i32 + dy) && m >= mag_at(x as i32 - dx, y as i32 - dy) {
                thinned[y * w + x] = m;
            }
        }
    }

    // Hysteresis: seeds above the high threshold, growth through pixels
    // above the low threshold, 8-connected.
    let mut edges = vec![false; w * h];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..w * h {
        if thinned[i] > high {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(idx) = queue.pop_front() {
        let (x, y) = (idx % w, idx / w);
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nx = x as i32 + dx;
                let ny = y as i32 + dy;
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if !edges[nidx] && thinned[nidx] > low {
                    edges[nidx] = true;
                    queue.push_back(nidx);
                }
            }
        }
    }
    BinaryMask::new(w, h, edges, image.resolution())
}
