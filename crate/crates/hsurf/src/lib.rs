//! Horizontal geometry, first and second variation of the H-perimeter, and
//! stability tests for hypersurfaces in Carnot groups.
//!
//! The pieces, bottom up:
//!
//! * [`algebra`] — graded structure constants, validation, dilations, the
//!   left-invariant frame, connection and curvature;
//! * [`jets`] — truncated Taylor jets and derivatives along the frame;
//! * [`geometry`] — unit normal, `ν_H`, `ϖ`, adapted bases at a point;
//! * [`curvature`] — shape operator, `H_cc`, tangential operators, `B_TS`;
//! * [`identities`] — residuals of the structural identities tying these
//!   together;
//! * [`variation`] — quadrature over graph patches, perimeter, variations,
//!   stability certificates;
//! * [`examples`] — reference surfaces with closed forms;
//! * [`expr`] — a small expression language for defining functions.

pub mod algebra;
pub mod curvature;
pub mod examples;
pub mod expr;
pub mod geometry;
pub mod identities;
pub mod jets;
pub mod variation;

pub use algebra::{CarnotGroup, FrameMatrix};
pub use curvature::{HorizontalShape, StabilityDensity};
pub use geometry::{GeometryError, LocalGeometry, SurfaceFrame};
pub use jets::{Jet3, ScalarField};
