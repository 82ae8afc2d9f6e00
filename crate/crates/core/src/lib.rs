//! Relightable 3D Gaussian point rendering: splatting, physically based
//! shading, BVH ray tracing, inverse rendering, and scene I/O.

pub mod bvh;
pub mod camera;
pub mod error;
pub mod fixtures;
pub mod gaussian;
pub mod io;
pub mod optim;
pub mod par;
pub mod render;
pub mod scene;
pub mod sh;
pub mod shading;

pub use camera::{Camera, CameraSpec};
pub use error::{Error, Result};
pub use gaussian::{Aabb, GaussianPoint};
pub use scene::{Scene, ShDegrees};
pub use sh::ShBlock;
