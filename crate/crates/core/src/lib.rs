//! Eikonal phases, dyadic parametrices and their dispersive and Strichartz
//! bounds on foliated Lorentzian spacetimes, checked numerically.

pub mod bessel;
pub mod eikonal;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod metric;
pub mod ode;
pub mod parametrix;
pub mod phase_geometry;
pub mod quadrature;
pub mod search;
pub mod snapshot;
pub mod sphere;
pub mod strichartz;
pub mod window;

pub use error::{Error, Result};
pub use grid::{SpacetimeGrid, SpacetimePoint};
pub use metric::{make_metric, MetricKind, MetricSpec, SpacetimeMetric};
pub use sphere::Vec3;
