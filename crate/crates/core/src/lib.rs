//! Car-wheel rim inspection.
//!
//! Stages, in pipeline order:
//!
//! 1. [`hough`] / [`providers`]: car and wheel detection per frame.
//! 2. [`features`]: HOG descriptors and a one-vs-rest linear SVM rim classifier.
//! 3. [`ellipsefit`]: rim contour and bolt pitch-circle ellipses, converted to
//!    millimeters through the known pitch-circle diameter.
//! 4. [`tracking`]: IoU tracking, per-track class votes and the four-wheel verdict.
//!
//! [`eval`] scores detections and classifications, [`synth`] renders
//! wheel scenes with exact ground truth, and [`pipeline`] wires everything
//! together for the `rim-inspect` binary.

pub mod commands;
pub mod ellipsefit;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod hough;
pub mod image;
pub mod imgproc;
pub mod pipeline;
pub mod providers;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use geom::{iou, BBox, Circle, Conic, Detection, Ellipse, Label, RimClass};
pub use image::Image;
