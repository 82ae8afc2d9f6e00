use nalgebra::Vector3;

use crate::gaussian::Aabb;

/// Spreads the low 10 bits of `v` so bit `i` lands on bit `3 i`.
#[inline]
pub fn expand_bits(v: u32) -> u32 {
    let mut x = v & 0x3ff;
    x = (x | (x << 16)) & 0x0300_00ff;
    x = (x | (x << 8)) & 0x0300_f00f;
    x = (x | (x << 4)) & 0x030c_30c3;
    x = (x | (x << 2)) & 0x0924_9249;
    x
}

/// 10-bit cell index of `p` along each axis of `bounds`, clamped.
pub fn quantize(p: &Vector3<f64>, bounds: &Aabb) -> [u32; 3] {
    let ext = bounds.extent();
    std::array::from_fn(|a| {
        let t = if ext[a] > 0.0 {
            (p[a] - bounds.min[a]) / ext[a]
        } else {
            0.0
        };
        ((t.clamp(0.0, 1.0) * 1024.0) as u32).min(1023)
    })
}

/// 30-bit Morton code with `x` in the least-significant position of each triple.
pub fn morton_encode(p: &Vector3<f64>, bounds: &Aabb) -> u32 {
    let [x, y, z] = quantize(p, bounds);
    expand_bits(x) | (expand_bits(y) << 1) | (expand_bits(z) << 2)
}
