//! Density-map counting toolkit for point-annotated crowd frames.
//!
//! The crate covers the whole counting pipeline that does not need a trained
//! network:
//!
//! * [`annotations`] loads head-point annotations and fixes the pixel/grid
//!   coordinate conventions used everywhere else.
//! * [`density`] turns head points into ground-truth density maps, integrates
//!   maps into counts and renders red-channel overlays.
//! * [`bayes_loss`] evaluates the point-supervised Bayesian counting loss
//!   (posteriors, background modeling, expected counts) and its subgradient.
//! * [`fit`] minimizes that loss directly over a free density field.
//! * [`detect_count`] counts `person` detections from an external detector.
//! * [`evalreport`] compares both counting paths against ground truth.
//! * [`cdm`] reads and writes the `CDM1` density raster format.

pub mod annotations;
pub mod bayes_loss;
pub mod cdm;
pub mod density;
pub mod detect_count;
pub mod evalreport;
pub mod fit;

mod error;

pub use annotations::{FrameAnnotation, GridSpec, Point};
pub use bayes_loss::{BayesConfig, DistanceMode, LossResult, PosteriorTable};
pub use density::{DensityGrid, KernelParams};
pub use error::{Error, Result};
