//! Meshes, surface sampling, tangent frames and ray casting.

mod bvh;
mod mesh;
mod obj;
mod primitives;
mod sampling;

pub use bvh::{intersect_triangle, ray_intersect_brute, Hit, RayCaster};
pub use mesh::{Mesh, Normalization, DEGENERATE_AREA};
pub use obj::{load_mesh, parse_obj};
pub use primitives::{grid_quad, icosphere};
pub use sampling::{
    load_point_cloud, sample_surface, tangent_frame, visibility_filter, write_point_cloud, AreaSampler, PointCloud,
    SampleSource, SurfaceSample,
};

/// Double-precision 3-vector used throughout the geometry code.
pub type Vec3 = nalgebra::Vector3<f64>;
