//! Render jobs shared by the command line and the HTTP API.

use relight_core::bvh::Bvh;
use relight_core::io::{encode_fmap, encode_png, Transfer};
use relight_core::render::{rasterize, rasterize_with_bvh, Channel, FloatImage, RenderBuffers, RenderRequest};
use relight_core::shading::{Gamma, ShadingConfig, VisibilityMode};
use relight_core::{Camera, CameraSpec, Error, Result, Scene};
use serde::{Deserialize, Serialize};

/// Largest accepted incident-light sample count.
pub const MAX_SAMPLES: usize = 4096;

/// Rendering quality preset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Baked visibility, few light samples.
    #[default]
    Online,
    /// Traced visibility, many light samples.
    Offline,
}

impl Mode {
    pub fn shading(self) -> ShadingConfig {
        match self {
            Mode::Online => ShadingConfig::online(),
            Mode::Offline => ShadingConfig::offline(),
        }
    }
}

/// Shading overrides on top of a [`Mode`] preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadingOptions {
    pub mode: Mode,
    pub n_samples: Option<usize>,
    pub visibility_mode: Option<VisibilityMode>,
    pub gamma: Option<Gamma>,
    pub enable_specular: Option<bool>,
    pub enable_local_light: Option<bool>,
}

impl ShadingOptions {
    pub fn resolve(&self) -> Result<ShadingConfig> {
        let mut cfg = self.mode.shading();
        if let Some(n) = self.n_samples {
            cfg.n_samples = n;
        }
        if !(1..=MAX_SAMPLES).contains(&cfg.n_samples) {
            return Err(Error::InvalidInput(format!(
                "n_samples must lie in [1, {MAX_SAMPLES}], got {}",
                cfg.n_samples
            )));
        }
        if let Some(v) = self.visibility_mode {
            cfg.visibility_mode = v;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(s) = self.enable_specular {
            cfg.enable_specular = s;
        }
        if let Some(l) = self.enable_local_light {
            cfg.enable_local_light = l;
        }
        Ok(cfg)
    }
}

/// Byte encoding of one rendered channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// 8-bit PNG, only for color-like channels.
    Png,
    /// 32-bit float map.
    Fmap,
}

impl Encoding {
    pub fn default_for(channel: Channel) -> Self {
        if channel.is_color_like() {
            Encoding::Png
        } else {
            Encoding::Fmap
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Encoding::Png => "png",
            Encoding::Fmap => "fmap",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Encoding::Png => "image/png",
            Encoding::Fmap => "application/octet-stream",
        }
    }
}

/// JSON body of a render request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderJob {
    pub camera: CameraSpec,
    pub channels: Vec<Channel>,
    #[serde(default)]
    pub shading: ShadingOptions,
    #[serde(default)]
    pub background: [f64; 3],
    #[serde(default)]
    pub encoding: Option<Encoding>,
}

impl RenderJob {
    pub fn request(&self) -> Result<RenderRequest> {
        if self.channels.is_empty() {
            return Err(Error::InvalidInput("at least one channel is required".into()));
        }
        let camera = Camera::from_spec(&self.camera)?;
        let req = RenderRequest::new(camera, &self.channels)
            .with_shading(self.shading.resolve()?)
            .with_background(self.background);
        req.validate()?;
        Ok(req)
    }
}

/// Renders `req`, using `bvh` for traced visibility when one is given.
pub fn render(scene: &Scene, req: &RenderRequest, bvh: Option<&Bvh>) -> Result<RenderBuffers> {
    match bvh {
        Some(b) => rasterize_with_bvh(scene, req, Some(b)),
        None => rasterize(scene, req),
    }
}

/// Encodes one channel. PNG output applies the sRGB transfer to the shaded
/// channel when the request asks for it; stored channels are written as is.
pub fn encode_channel(img: &FloatImage, channel: Channel, gamma: Gamma, encoding: Encoding) -> Result<Vec<u8>> {
    match encoding {
        Encoding::Fmap => Ok(encode_fmap(img)),
        Encoding::Png => {
            if !channel.is_color_like() {
                return Err(Error::InvalidInput(format!(
                    "channel '{channel}' holds data values; request the fmap encoding"
                )));
            }
            let transfer = if channel == Channel::Pbr && gamma == Gamma::Srgb {
                Transfer::Srgb
            } else {
                Transfer::Linear
            };
            encode_png(img, transfer)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_bounds_are_enforced() {
        for (n, ok) in [(0, false), (1, true), (4096, true), (4097, false)] {
            let opts = ShadingOptions {
                n_samples: Some(n),
                ..Default::default()
            };
            assert_eq!(opts.resolve().is_ok(), ok, "n = {n}");
        }
    }

    #[test]
    fn presets() {
        let off = ShadingOptions {
            mode: Mode::Offline,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(off, ShadingConfig::offline());
        assert_eq!(ShadingOptions::default().resolve().unwrap(), ShadingConfig::online());
    }

    #[test]
    fn data_channels_refuse_png() {
        let img = FloatImage::new(2, 2, 1);
        assert!(encode_channel(&img, Channel::Depth, Gamma::Srgb, Encoding::Png).is_err());
        assert!(encode_channel(&img, Channel::Depth, Gamma::Srgb, Encoding::Fmap).is_ok());
        assert_eq!(Encoding::default_for(Channel::Normal), Encoding::Fmap);
        assert_eq!(Encoding::default_for(Channel::Pbr), Encoding::Png);
    }

    #[test]
    fn job_parses_minimal_body() {
        let body = r#"{"camera": {"width": 4, "height": 4, "fx": 4, "fy": 4, "cx": 2, "cy": 2,
            "world_to_camera": [1,0,0,0, 0,1,0,0, 0,0,1,3, 0,0,0,1]}, "channels": ["pbr"]}"#;
        let job: RenderJob = serde_json::from_str(body).unwrap();
        let req = job.request().unwrap();
        assert_eq!(req.shading, ShadingConfig::online());
        assert!(serde_json::from_str::<RenderJob>(r#"{"channels": ["pbr"]}"#).is_err());
    }
}
