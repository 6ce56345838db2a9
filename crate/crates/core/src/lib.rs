//! Cube engine for region analysis: regions and feature views over cubes, region
//! analysis models, top-down crawling, cube join, metric-change attribution and
//! chunked storage.

pub mod attribution;
pub mod crawler;
pub mod cube;
pub mod error;
pub mod join;
pub mod ram;
pub mod scalar;
pub mod store;

pub use crawler::{CrawlOptions, CrawlSpec, ResultCube};
pub use cube::{Cube, FeatureFrame, FeatureRequest, Region, Value};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SegmentedMetricsF64 = attribution::SegmentedMetrics<f64>;
pub type SegmentedMetricsF32 = attribution::SegmentedMetrics<f32>;
pub type AttributionResultF64 = attribution::AttributionResult<f64>;
pub type AttributionResultF32 = attribution::AttributionResult<f32>;
pub type GaussLegendreF64 = attribution::GaussLegendre<f64>;
