//! Flexibility region of an active distribution network.

pub mod corners;
pub mod feeder;
pub mod polygon;
pub mod scan;

pub use corners::{corner_points_2bus, corner_polygon, CornerPoint};
pub use feeder::{BranchCurrentLimit, ExtraConstraint, FeederBase, FeederObjective, FeederOpf};
pub use polygon::{convex_hull, half_plane_coeffs, hausdorff, polygon_contains, FlexPolygon, Pt};
pub use scan::{fr_boundary_point, radial_scan, reduce_polygon, FrReport, ScanOptions, ScanPoint, ScanResult, Sense};
