//! Morton-ordered radix tree over Gaussians, ray transmittance, and
//! visibility baking.

mod bake;
mod lbvh;
pub mod morton;
mod trace;

pub use bake::{
    bake_visibility, bake_visibility_into, evaluate_visibility, BakeResult, DEFAULT_BAKE_RAYS,
};
pub use lbvh::{build_lbvh, cutoff_sigma, leaf_box, refit_bvh, Bvh, InternalNode, NodeRef, RAY_ALPHA_MIN};
pub use morton::morton_encode;
pub use trace::{
    ray_gaussian_alpha, ray_gaussian_peak_t, ray_hits, trace_transmittance, trace_transmittance_ordered,
    traced_visibility, Ray, TraversalOrder, RAY_ALPHA_MAX,
};

/// Ray origin offset from a point's mean in units of its largest scale.
pub const BAKE_K_OFFSET: f64 = 1.0;

/// Transmittance below which ray traversal stops.
pub const DEFAULT_T_STOP: f64 = 1e-4;
