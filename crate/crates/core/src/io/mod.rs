//! Scene files, images, environment maps, datasets and composition.

mod compose;
mod dataset;
mod env;
mod image_io;
mod ply;

pub use compose::{compose_scenes, transform_scene, Similarity, TransformSpec};
pub use dataset::{load_dataset, save_training_set, CamerasFile, Dataset, DatasetItem};
pub use env::{decode_env_map, latlong_direction, load_env_map, project_env_image};
pub use image_io::{
    decode_fmap, decode_hdr, decode_png, encode_fmap, encode_hdr, encode_png, load_fmap, load_png, save_fmap, save_png,
    Transfer,
};
pub use ply::{decode_scene, encode_scene, load_scene, property_names, save_scene};

use std::path::Path;

use crate::camera::{Camera, CameraSpec};
use crate::error::{Error, Result};

/// Reads a camera from a JSON [`CameraSpec`] file.
pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let spec: CameraSpec = serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
    Camera::from_spec(&spec).map_err(|e| Error::load(path, e.to_string()))
}
