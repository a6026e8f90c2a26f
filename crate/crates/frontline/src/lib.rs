//! Glacier calving-front delineation at desk scale.
//!
//! The pipeline turns a one-pixel front line into a dense regression target
//! (a normalized Euclidean distance map), trains a small U-Net to predict
//! that map from SAR intensity imagery, and extracts the front line back out
//! of the prediction with one of three post-processors:
//!
//! 1. **Threshold** – per-image quantile threshold followed by thinning.
//! 2. **CRF** – fully connected conditional random field over the predicted
//!    map and the SAR image, mean-field inference, argmax labeling.
//! 3. **Second U-Net** – a segmentation network trained on predicted maps.
//!
//! A zone-segmentation baseline (closing, largest component, Canny edge) and
//! tolerance-dilated dice/IoU evaluation complete the pipeline. Everything is
//! deterministic given seeds; per-image work is safe to parallelize.

pub mod crf;
pub mod dataset;
pub mod distmap;
mod error;
pub mod metrics;
pub mod morphology;
pub mod nn;
pub mod postprocess;
pub mod raster;

pub use error::{Error, Result};
pub use raster::{BinaryMask, Raster, Resolution, ValueDomain};
