//! Handwritten-graphic symbol detection: InkML parsing, rasterization, a
//! small autodiff engine, a toy Faster R-CNN and mAP evaluation.

pub mod boxes;
pub mod detector;
pub mod eval;
pub mod ink;
pub mod raster;
pub mod tensor;

pub use boxes::{iou, nms, BBox, BoxDelta, ScoredBox};
pub use detector::{Detection, Detector, DetectorConfig, DetectorError, StepMetrics};
pub use ink::{parse_inkml, ClassVocabulary, InkError, InkGraphic};
pub use raster::{RasterConfig, RasterError, RasterImage, RasterSample};
pub use tensor::{Tensor, TensorError};
