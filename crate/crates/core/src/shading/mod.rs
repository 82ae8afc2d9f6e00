//! Gaussian-level physically based shading.

pub mod brdf;
pub mod sampling;
mod shade;

pub use brdf::{diffuse_brdf, fresnel_schlick, geometry_ggx, ndf_sg, specular_brdf};
pub use sampling::{fibonacci_hemisphere, IncidentSample};
pub use shade::{
    incident_light, light_deviation, shade_gaussian, Gamma, ShadeGrad, ShadeOutput, Shader, ShadingConfig, VisibilityMode,
};

/// Roughness never drops below this during shading and optimization.
pub const ROUGHNESS_FLOOR: f64 = 0.02;

/// Sample count for interactive rendering.
pub const ONLINE_SAMPLES: usize = 24;
/// Sample count for high-quality offline rendering.
pub const OFFLINE_SAMPLES: usize = 384;

/// sRGB opto-electronic transfer of a linear value.
pub fn linear_to_srgb(x: f64) -> f64 {
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

/// Derivative of [`linear_to_srgb`].
pub fn linear_to_srgb_grad(x: f64) -> f64 {
    if x <= 0.003_130_8 {
        12.92
    } else {
        1.055 / 2.4 * x.powf(1.0 / 2.4 - 1.0)
    }
}

pub fn srgb_to_linear(x: f64) -> f64 {
    if x <= 0.040_45 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}
