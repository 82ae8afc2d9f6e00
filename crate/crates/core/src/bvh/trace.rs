//! Ray queries through semi-transparent Gaussians.

use nalgebra::Vector3;

use super::lbvh::{ray_gaussian, Bvh, NodeRef, RayGaussian, RAY_ALPHA_MIN};
use crate::gaussian::GaussianPoint;
use crate::scene::Scene;

/// Largest opacity a single Gaussian contributes along a ray.
pub const RAY_ALPHA_MAX: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
    pub t_min: f64,
    pub t_max: f64,
    /// Point index ignored by the query.
    pub exclude: Option<usize>,
}

impl Ray {
    /// Unbounded ray starting at `origin`.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction,
            t_min: 0.0,
            t_max: f64::INFINITY,
            exclude: None,
        }
    }

    pub fn excluding(mut self, index: usize) -> Self {
        self.exclude = Some(index);
        self
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Order in which the two children of an internal node are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraversalOrder {
    #[default]
    LeftFirst,
    RightFirst,
}

/// Ray parameter maximizing the Gaussian density along the ray,
/// `((mu - o)^T Sigma^-1 d) / (d^T Sigma^-1 d)`.
pub fn ray_gaussian_peak_t(point: &GaussianPoint, ray: &Ray) -> f64 {
    peak_t(&ray_gaussian(point), ray)
}

fn peak_t(g: &RayGaussian, ray: &Ray) -> f64 {
    let sd = g.inv_cov * ray.direction;
    (g.mean - ray.origin).dot(&sd) / ray.direction.dot(&sd)
}

fn alpha_of(g: &RayGaussian, ray: &Ray) -> f64 {
    let t = peak_t(g, ray).clamp(ray.t_min, ray.t_max);
    if !t.is_finite() {
        return 0.0;
    }
    let d = ray.at(t) - g.mean;
    let alpha = g.opacity * (-0.5 * d.dot(&(g.inv_cov * d))).exp();
    if alpha < RAY_ALPHA_MIN {
        0.0
    } else {
        alpha.min(RAY_ALPHA_MAX)
    }
}

/// Opacity of point `index` seen by `ray` at its density peak on `[t_min, t_max]`.
/// Contributions below 1/255 are dropped, the result is clamped to 0.99,
/// and the excluded index contributes nothing.
pub fn ray_gaussian_alpha(point: &GaussianPoint, index: usize, ray: &Ray) -> f64 {
    if ray.exclude == Some(index) {
        return 0.0;
    }
    alpha_of(&ray_gaussian(point), ray)
}

/// Transmittance along `ray`, stopping once it falls below `t_stop`.
pub fn trace_transmittance(bvh: &Bvh, scene: &Scene, ray: &Ray, t_stop: f64) -> f64 {
    trace_transmittance_ordered(bvh, scene, ray, t_stop, TraversalOrder::LeftFirst)
}

/// [`trace_transmittance`] with an explicit child visitation order.
pub fn trace_transmittance_ordered(bvh: &Bvh, _scene: &Scene, ray: &Ray, t_stop: f64, order: TraversalOrder) -> f64 {
    let mut t = 1.0;
    visit_hits(bvh, ray, order, |alpha| {
        t *= 1.0 - alpha;
        t >= t_stop
    });
    t
}

/// Every nonzero `(point index, alpha)` along `ray`, in traversal order.
pub fn ray_hits(bvh: &Bvh, ray: &Ray) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut stack = Vec::with_capacity(64);
    walk(bvh, ray, TraversalOrder::LeftFirst, &mut stack, |index, alpha| {
        out.push((index, alpha));
        true
    });
    out
}

fn visit_hits(bvh: &Bvh, ray: &Ray, order: TraversalOrder, mut f: impl FnMut(f64) -> bool) {
    let mut stack = Vec::with_capacity(64);
    walk(bvh, ray, order, &mut stack, |_, alpha| f(alpha));
}

fn walk(
    bvh: &Bvh,
    ray: &Ray,
    order: TraversalOrder,
    stack: &mut Vec<NodeRef>,
    mut f: impl FnMut(usize, f64) -> bool,
) {
    if bvh.leaf_order.is_empty() {
        return;
    }
    let inv_dir = ray.direction.map(|x| 1.0 / x);
    stack.clear();
    stack.push(bvh.root());
    while let Some(node) = stack.pop() {
        if !bvh.node_aabb(node).hit(&ray.origin, &inv_dir, ray.t_min, ray.t_max) {
            continue;
        }
        match node {
            NodeRef::Leaf(slot) => {
                let index = bvh.leaf_order[slot as usize] as usize;
                if ray.exclude == Some(index) {
                    continue;
                }
                let alpha = alpha_of(&bvh.gaussians[index], ray);
                if alpha > 0.0 && !f(index, alpha) {
                    return;
                }
            }
            NodeRef::Internal(i) => {
                let n = &bvh.internal_nodes[i as usize];
                match order {
                    TraversalOrder::LeftFirst => {
                        stack.push(n.right);
                        stack.push(n.left);
                    }
                    TraversalOrder::RightFirst => {
                        stack.push(n.left);
                        stack.push(n.right);
                    }
                }
            }
        }
    }
}

/// Transmittance from point `index` toward `direction`, starting
/// `k_offset` max-scale units off the mean and ignoring the point itself.
pub fn traced_visibility(bvh: &Bvh, scene: &Scene, index: usize, direction: &Vector3<f64>, k_offset: f64, t_stop: f64) -> f64 {
    let p = &scene.points[index];
    let ray = Ray::new(p.mean + direction * (k_offset * p.max_scale()), *direction).excluding(index);
    trace_transmittance(bvh, scene, &ray, t_stop)
}
