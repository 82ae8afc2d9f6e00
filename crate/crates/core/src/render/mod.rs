//! Tile-based splatting of Gaussians into feature maps, and its reverse pass.

mod backward;
mod image;
mod normals;
mod raster;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use backward::{ChannelGrads, SceneGrad};
pub use image::FloatImage;
pub use normals::{pseudo_normal_from_depth, world_normals_from_depth, PSEUDO_NORMAL_MIN_OPACITY};
pub use raster::{rasterize, rasterize_with_bvh, sort_by_depth, Frame, TILE_SIZE};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::shading::ShadingConfig;

/// Default per-Gaussian opacity below which a splat is skipped.
pub const DEFAULT_ALPHA_MIN: f64 = 1.0 / 255.0;
/// Default transmittance below which a pixel stops accumulating.
pub const DEFAULT_T_STOP: f64 = 1e-4;
/// Largest opacity one splat contributes to a pixel.
pub const ALPHA_MAX: f64 = 0.99;

/// A renderable feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// View-dependent SH color.
    Color,
    /// Physically based shaded color.
    Pbr,
    /// Camera-space depth of the means.
    Depth,
    /// World-space Gaussian normals.
    Normal,
    /// World-space normal estimated from the rendered depth.
    PseudoNormal,
    BaseColor,
    Roughness,
    Metallic,
    /// Accumulated opacity.
    Opacity,
    /// Mean hemisphere visibility of the shaded Gaussians.
    Visibility,
}

impl Channel {
    pub const ALL: [Channel; 10] = [
        Channel::Color,
        Channel::Pbr,
        Channel::Depth,
        Channel::Normal,
        Channel::PseudoNormal,
        Channel::BaseColor,
        Channel::Roughness,
        Channel::Metallic,
        Channel::Opacity,
        Channel::Visibility,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Color => "color",
            Channel::Pbr => "pbr",
            Channel::Depth => "depth",
            Channel::Normal => "normal",
            Channel::PseudoNormal => "pseudo_normal",
            Channel::BaseColor => "base_color",
            Channel::Roughness => "roughness",
            Channel::Metallic => "metallic",
            Channel::Opacity => "opacity",
            Channel::Visibility => "visibility",
        }
    }

    pub fn parse(name: &str) -> Result<Channel> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown channel '{name}'")))
    }

    /// Parses a comma-separated channel list.
    pub fn parse_list(list: &str) -> Result<Vec<Channel>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Channel::parse)
            .collect()
    }

    pub fn components(self) -> usize {
        match self {
            Channel::Color | Channel::Pbr | Channel::Normal | Channel::PseudoNormal | Channel::BaseColor => 3,
            _ => 1,
        }
    }

    /// Radiance-like channels written as sRGB PNG.
    pub fn is_color_like(self) -> bool {
        matches!(self, Channel::Color | Channel::Pbr | Channel::BaseColor)
    }

    /// Channels that show the request background where nothing is splatted.
    pub fn uses_background(self) -> bool {
        matches!(self, Channel::Color | Channel::Pbr)
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to render one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub camera: Camera,
    pub channels: Vec<Channel>,
    pub shading: ShadingConfig,
    /// Linear RGB shown behind the color and PBR channels.
    pub background: [f64; 3],
    pub alpha_min: f64,
    pub t_stop: f64,
}

impl RenderRequest {
    pub fn new(camera: Camera, channels: &[Channel]) -> Self {
        Self {
            camera,
            channels: channels.to_vec(),
            shading: ShadingConfig::default(),
            background: [0.0; 3],
            alpha_min: DEFAULT_ALPHA_MIN,
            t_stop: DEFAULT_T_STOP,
        }
    }

    pub fn with_shading(mut self, shading: ShadingConfig) -> Self {
        self.shading = shading;
        self
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.camera.width == 0 || self.camera.height == 0 {
            return Err(Error::invalid("camera image size must be nonzero"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < 1.0) {
            return Err(Error::invalid("alpha_min must lie in (0, 1)"));
        }
        if !(self.t_stop > 0.0 && self.t_stop < 1.0) {
            return Err(Error::invalid("t_stop must lie in (0, 1)"));
        }
        self.shading.validate()
    }

    pub fn wants(&self, channel: Channel) -> bool {
        self.channels.contains(&channel)
    }
}

/// Rendered feature maps keyed by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: u32,
    pub height: u32,
    pub maps: BTreeMap<Channel, FloatImage>,
    /// Transmittance left after the last blended splat, per pixel.
    pub final_transmittance: Vec<f64>,
}

impl RenderBuffers {
    pub fn get(&self, channel: Channel) -> Option<&FloatImage> {
        self.maps.get(&channel)
    }

    pub fn require(&self, channel: Channel) -> Result<&FloatImage> {
        self.get(channel)
            .ok_or_else(|| Error::invalid(format!("channel '{channel}' was not rendered")))
    }
}
