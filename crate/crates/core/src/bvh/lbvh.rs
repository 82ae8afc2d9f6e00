//! Binary radix tree over Morton-sorted Gaussians.
//!
//! Internal node `i` is built independently of every other node from the
//! sorted key array, so topology construction is parallel over nodes. Keys
//! are `(morton << 32) | point_index`, which makes them unique even when
//! points coincide.

use nalgebra::{Matrix3, Vector3};

use super::morton::morton_encode;
use crate::error::{Error, Result};
use crate::gaussian::{Aabb, GaussianPoint};
use crate::par;
use crate::scene::Scene;

/// Opacity contributions below this are ignored by ray queries.
pub const RAY_ALPHA_MIN: f64 = 1.0 / 255.0;

/// Child reference: leaves are positions in `leaf_order`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Internal(u32),
    Leaf(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalNode {
    pub left: NodeRef,
    pub right: NodeRef,
    pub aabb: Aabb,
}

/// Per-point data needed by ray queries, cached at build/refit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RayGaussian {
    pub mean: Vector3<f64>,
    pub inv_cov: Matrix3<f64>,
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    /// Point indices in Morton order.
    pub leaf_order: Vec<u32>,
    /// `n - 1` internal nodes; node 0 is the root when `n >= 2`.
    pub internal_nodes: Vec<InternalNode>,
    /// Box of each leaf, indexed like `leaf_order`.
    pub leaf_aabbs: Vec<Aabb>,
    pub(crate) gaussians: Vec<RayGaussian>,
}

/// Mahalanobis radius beyond which a Gaussian of opacity `o` falls below
/// [`RAY_ALPHA_MIN`].
pub fn cutoff_sigma(opacity: f64) -> f64 {
    if opacity > RAY_ALPHA_MIN {
        (2.0 * (opacity / RAY_ALPHA_MIN).ln()).sqrt()
    } else {
        0.0
    }
}

pub(crate) fn ray_gaussian(p: &GaussianPoint) -> RayGaussian {
    RayGaussian {
        mean: p.mean,
        inv_cov: p
            .covariance()
            .try_inverse()
            .expect("positive scales give an invertible covariance"),
        opacity: p.opacity(),
    }
}

/// Leaf box enclosing the region where the Gaussian can reach [`RAY_ALPHA_MIN`].
pub fn leaf_box(p: &GaussianPoint) -> Aabb {
    crate::gaussian::aabb_of_gaussian(p, cutoff_sigma(p.opacity()))
}

impl Bvh {
    pub fn leaf_count(&self) -> usize {
        self.leaf_order.len()
    }

    pub fn root(&self) -> NodeRef {
        if self.internal_nodes.is_empty() {
            NodeRef::Leaf(0)
        } else {
            NodeRef::Internal(0)
        }
    }

    pub fn node_aabb(&self, node: NodeRef) -> &Aabb {
        match node {
            NodeRef::Internal(i) => &self.internal_nodes[i as usize].aabb,
            NodeRef::Leaf(i) => &self.leaf_aabbs[i as usize],
        }
    }

    /// Recomputes every box bottom-up, keeping the Morton order.
    pub fn refit(&mut self, scene: &Scene) -> Result<()> {
        if scene.len() != self.leaf_count() {
            return Err(Error::invalid(format!(
                "refit with {} points, tree was built for {}",
                scene.len(),
                self.leaf_count()
            )));
        }
        self.gaussians = par::map_slice(&scene.points, ray_gaussian);
        self.leaf_aabbs = par::map_slice(&self.leaf_order, |&id| leaf_box(&scene.points[id as usize]));
        self.compute_internal_boxes();
        Ok(())
    }

    fn compute_internal_boxes(&mut self) {
        if self.internal_nodes.is_empty() {
            return;
        }
        // Post-order walk from the root.
        let mut stack = vec![(0u32, false)];
        while let Some((i, expanded)) = stack.pop() {
            let node = self.internal_nodes[i as usize];
            if expanded {
                let aabb = self.node_aabb(node.left).union(self.node_aabb(node.right));
                self.internal_nodes[i as usize].aabb = aabb;
                continue;
            }
            stack.push((i, true));
            for child in [node.left, node.right] {
                if let NodeRef::Internal(c) = child {
                    stack.push((c, false));
                }
            }
        }
    }
}

/// Builds the radix tree over `scene`.
pub fn build_lbvh(scene: &Scene) -> Result<Bvh> {
    let n = scene.len();
    if n == 0 {
        return Err(Error::invalid("cannot build a BVH over an empty scene"));
    }
    if n > u32::MAX as usize / 2 {
        return Err(Error::invalid("too many points for a 32-bit BVH"));
    }
    let bounds = scene.bounds();
    let mut keys: Vec<u64> = par::map_range(n, |i| {
        (u64::from(morton_encode(&scene.points[i].mean, &bounds)) << 32) | i as u64
    });
    keys.sort_unstable();
    let leaf_order: Vec<u32> = keys.iter().map(|k| (*k & 0xffff_ffff) as u32).collect();

    let internal_nodes = if n >= 2 {
        par::map_range(n - 1, |i| build_node(&keys, i))
    } else {
        Vec::new()
    };
    let mut bvh = Bvh {
        leaf_order,
        internal_nodes,
        leaf_aabbs: Vec::new(),
        gaussians: Vec::new(),
    };
    bvh.refit(scene)?;
    Ok(bvh)
}

fn common_prefix(keys: &[u64], i: i64, j: i64) -> i32 {
    if j < 0 || j >= keys.len() as i64 {
        return -1;
    }
    (keys[i as usize] ^ keys[j as usize]).leading_zeros() as i32
}

fn build_node(keys: &[u64], i: usize) -> InternalNode {
    let i = i as i64;
    let d: i64 = if common_prefix(keys, i, i + 1) > common_prefix(keys, i, i - 1) {
        1
    } else {
        -1
    };
    let delta_min = common_prefix(keys, i, i - d);
    let mut l_max: i64 = 2;
    while common_prefix(keys, i, i + l_max * d) > delta_min {
        l_max *= 2;
    }
    let mut l = 0;
    let mut t = l_max / 2;
    while t >= 1 {
        if common_prefix(keys, i, i + (l + t) * d) > delta_min {
            l += t;
        }
        t /= 2;
    }
    let j = i + l * d;
    let delta_node = common_prefix(keys, i, j);
    let mut s = 0;
    let mut div = 2;
    loop {
        let t = (l + div - 1) / div;
        if common_prefix(keys, i, i + (s + t) * d) > delta_node {
            s += t;
        }
        if t <= 1 {
            break;
        }
        div *= 2;
    }
    let gamma = i + s * d + d.min(0);
    let left = if i.min(j) == gamma {
        NodeRef::Leaf(gamma as u32)
    } else {
        NodeRef::Internal(gamma as u32)
    };
    let right = if i.max(j) == gamma + 1 {
        NodeRef::Leaf(gamma as u32 + 1)
    } else {
        NodeRef::Internal(gamma as u32 + 1)
    };
    InternalNode {
        left,
        right,
        aabb: Aabb::empty(),
    }
}

/// Recomputes boxes of an existing tree for moved or re-shaped points.
pub fn refit_bvh(bvh: &Bvh, scene: &Scene) -> Result<Bvh> {
    let mut out = bvh.clone();
    out.refit(scene)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Scene {
        let points = (0..n)
            .map(|_| {
                GaussianPoint {
                    mean: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    scale: Vector3::new(rng.gen_range(0.01..0.1), rng.gen_range(0.01..0.1), rng.gen_range(0.01..0.1)),
                    ..Default::default()
                }
                .with_opacity(rng.gen_range(0.1..0.99))
            })
            .collect();
        Scene::new(points)
    }

    fn collect_leaves(bvh: &Bvh) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![bvh.root()];
        while let Some(node) = stack.pop() {
            match node {
                NodeRef::Leaf(i) => out.push(bvh.leaf_order[i as usize]),
                NodeRef::Internal(i) => {
                    let n = &bvh.internal_nodes[i as usize];
                    let union = bvh.node_aabb(n.left).union(bvh.node_aabb(n.right));
                    assert_eq!(union, n.aabb);
                    stack.push(n.left);
                    stack.push(n.right);
                }
            }
        }
        out
    }

    fn subtree_leaves(bvh: &Bvh, node: NodeRef, out: &mut Vec<u32>) {
        match node {
            NodeRef::Leaf(i) => out.push(i),
            NodeRef::Internal(i) => {
                let n = bvh.internal_nodes[i as usize];
                subtree_leaves(bvh, n.left, out);
                subtree_leaves(bvh, n.right, out);
            }
        }
    }

    #[test]
    fn empty_scene_is_rejected() {
        assert!(matches!(build_lbvh(&Scene::new(vec![])), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn single_point_has_no_internal_nodes() {
        let bvh = build_lbvh(&Scene::new(vec![GaussianPoint::default()])).unwrap();
        assert!(bvh.internal_nodes.is_empty());
        assert_eq!(bvh.root(), NodeRef::Leaf(0));
    }

    #[test]
    fn two_points_share_one_root() {
        let a = GaussianPoint::default();
        let b = GaussianPoint {
            mean: Vector3::new(3.0, 0.0, 0.0),
            ..Default::default()
        };
        let bvh = build_lbvh(&Scene::new(vec![a, b])).unwrap();
        assert_eq!(bvh.internal_nodes.len(), 1);
        assert_eq!(bvh.internal_nodes[0].aabb, bvh.leaf_aabbs[0].union(&bvh.leaf_aabbs[1]));
    }

    #[test]
    fn identical_points_still_form_a_tree() {
        let scene = Scene::new(vec![GaussianPoint::default(); 37]);
        let bvh = build_lbvh(&scene).unwrap();
        assert_eq!(bvh.internal_nodes.len(), 36);
        let mut leaves = collect_leaves(&bvh);
        leaves.sort();
        assert_eq!(leaves, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn every_leaf_reachable_once_and_boxes_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for n in [2, 3, 17, 1000] {
            let scene = random_scene(&mut rng, n);
            let bvh = build_lbvh(&scene).unwrap();
            assert_eq!(bvh.internal_nodes.len(), n - 1);
            let mut leaves = collect_leaves(&bvh);
            leaves.sort();
            assert_eq!(leaves, (0..n as u32).collect::<Vec<_>>());
            for i in 0..bvh.internal_nodes.len() {
                let mut sub = Vec::new();
                subtree_leaves(&bvh, NodeRef::Internal(i as u32), &mut sub);
                for leaf in sub {
                    assert!(bvh.internal_nodes[i].aabb.contains_box(&bvh.leaf_aabbs[leaf as usize]));
                }
            }
        }
    }

    #[test]
    fn refit_without_motion_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let scene = random_scene(&mut rng, 200);
        let bvh = build_lbvh(&scene).unwrap();
        assert_eq!(refit_bvh(&bvh, &scene).unwrap(), bvh);
    }

    #[test]
    fn refit_follows_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut scene = random_scene(&mut rng, 100);
        let bvh = build_lbvh(&scene).unwrap();
        let shift = Vector3::new(0.5, -1.0, 2.0);
        for p in &mut scene.points {
            p.mean += shift;
        }
        let moved = refit_bvh(&bvh, &scene).unwrap();
        for (a, b) in bvh.internal_nodes.iter().zip(&moved.internal_nodes) {
            assert!((a.aabb.min + shift - b.aabb.min).abs().max() < 1e-12);
            assert!((a.aabb.max + shift - b.aabb.max).abs().max() < 1e-12);
        }
    }

    #[test]
    fn refit_rejects_count_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut scene = random_scene(&mut rng, 10);
        let bvh = build_lbvh(&scene).unwrap();
        scene.points.pop();
        assert!(refit_bvh(&bvh, &scene).is_err());
    }
}
