//! Correction of building-footprint annotations against a building-probability raster.
//!
//! The pipeline has three stages:
//!
//! 1. **Align**: footprints are clustered into groups, groups form a k-nearest
//!    neighbour graph, and one integer translation per group is chosen by
//!    minimizing a Markov random field energy with iterated conditional modes.
//! 2. **Remove**: aligned footprints whose mean probability falls below a
//!    histogram minimum threshold are dropped.
//! 3. **Add**: candidate buildings from a fixed catalog of 18 shape priors are
//!    scored on a stride-4 lattice, filtered, and greedily de-overlapped.
//!
//! Geometry and energies are generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` / `*F32` aliases below fix the scalar for the common cases.

pub mod addition;
pub mod alignment;
pub mod error;
pub mod evaluation;
pub mod geojson;
pub mod geometry;
pub mod grouping;
pub mod pipeline;
pub mod raster;
pub mod removal;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Displacement, Mask, PixelRect, Source};
pub use scalar::Scalar;

pub type PointF64 = geometry::Point<f64>;
pub type PolygonF64 = geometry::Polygon<f64>;
pub type FootprintF64 = geometry::Footprint<f64>;
pub type ProbMapF64 = raster::ProbMap<f64>;

pub type PointF32 = geometry::Point<f32>;
pub type PolygonF32 = geometry::Polygon<f32>;
pub type FootprintF32 = geometry::Footprint<f32>;
pub type ProbMapF32 = raster::ProbMap<f32>;
