//! Multi-view datasets on disk.
//!
//! ```text
//! root/cameras.json            {views: [CameraSpec...], holdout: [indices]}
//! root/images/<name>.png       sRGB color
//! root/masks/<name>.png        object mask, nonzero inside
//! root/depths/<name>.fmap      optional external depth, one channel
//! root/depths/<name>.valid.png optional depth validity, nonzero valid
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::{load_fmap, load_png, save_fmap, save_png, Transfer};
use crate::camera::{Camera, CameraSpec};
use crate::error::{Error, Result};
use crate::optim::{Supervision, TrainingSet};
use crate::render::FloatImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamerasFile {
    pub views: Vec<CameraSpec>,
    #[serde(default)]
    pub holdout: Vec<usize>,
}

/// One loaded view.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub name: String,
    pub camera: Camera,
    pub image_path: PathBuf,
    pub image: FloatImage,
    pub mask_path: PathBuf,
    pub mask: FloatImage,
    pub depth_path: Option<PathBuf>,
    /// Depth and per-pixel validity.
    pub depth: Option<(FloatImage, Vec<bool>)>,
    pub holdout: bool,
}

impl DatasetItem {
    pub fn supervision(&self) -> Result<Supervision> {
        Supervision::new(self.camera.clone(), self.image.clone(), Some(self.mask.clone()), self.depth.clone())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Sorted by name.
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    pub fn training_set(&self) -> Result<TrainingSet> {
        let mut set = TrainingSet::default();
        for item in &self.items {
            let sup = item.supervision()?;
            if item.holdout {
                set.holdout.push(sup);
            } else {
                set.train.push(sup);
            }
        }
        Ok(set)
    }
}

fn file_stem(name: &str) -> &str {
    name.strip_suffix(".png").unwrap_or(name)
}

fn check_size(path: &Path, img: &FloatImage, cam: &Camera) -> Result<()> {
    if img.width != cam.width || img.height != cam.height {
        return Err(Error::load(
            path,
            format!("is {}x{}, camera expects {}x{}", img.width, img.height, cam.width, cam.height),
        ));
    }
    Ok(())
}

fn to_rgb(img: FloatImage) -> FloatImage {
    if img.channels == 3 {
        return img;
    }
    let data = img.data.iter().flat_map(|v| [*v; 3]).collect();
    FloatImage::from_data(img.width, img.height, 3, data).expect("size")
}

fn to_gray(img: &FloatImage) -> FloatImage {
    let data = img.data.chunks(img.channels).map(|p| p[0]).collect();
    FloatImage::from_data(img.width, img.height, 1, data).expect("size")
}

fn load_item(root: &Path, spec: &CameraSpec, holdout: bool) -> Result<DatasetItem> {
    let cams_path = root.join("cameras.json");
    if spec.name.is_empty() {
        return Err(Error::load(&cams_path, "every view needs a name"));
    }
    let camera = Camera::from_spec(spec).map_err(|e| Error::load(&cams_path, format!("view {}: {e}", spec.name)))?;
    let stem = file_stem(&spec.name);
    let image_path = root.join("images").join(format!("{stem}.png"));
    if !image_path.is_file() {
        return Err(Error::load(&image_path, "image file is missing"));
    }
    let image = to_rgb(load_png(&image_path)?);
    check_size(&image_path, &image, &camera)?;
    let mask_path = root.join("masks").join(format!("{stem}.png"));
    if !mask_path.is_file() {
        return Err(Error::load(&mask_path, "mask file is missing"));
    }
    let mask = to_gray(&load_png(&mask_path)?).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    check_size(&mask_path, &mask, &camera)?;
    let depth_file = root.join("depths").join(format!("{stem}.fmap"));
    let (depth_path, depth) = if depth_file.is_file() {
        let d = load_fmap(&depth_file)?;
        if d.channels != 1 {
            return Err(Error::load(&depth_file, "depth map must have one channel"));
        }
        check_size(&depth_file, &d, &camera)?;
        let valid_path = root.join("depths").join(format!("{stem}.valid.png"));
        let valid: Vec<bool> = if valid_path.is_file() {
            let v = to_gray(&load_png(&valid_path)?);
            check_size(&valid_path, &v, &camera)?;
            v.data.iter().zip(&d.data).map(|(m, z)| *m > 0.0 && z.is_finite() && *z > 0.0).collect()
        } else {
            d.data.iter().map(|z| z.is_finite() && *z > 0.0).collect()
        };
        (Some(depth_file), Some((d, valid)))
    } else {
        (None, None)
    };
    Ok(DatasetItem {
        name: spec.name.clone(),
        camera,
        image_path,
        image,
        mask_path,
        mask,
        depth_path,
        depth,
        holdout,
    })
}

/// Loads and validates every view under `root`, sorted by name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let cams_path = root.join("cameras.json");
    let text = std::fs::read_to_string(&cams_path).map_err(|e| Error::load(&cams_path, e.to_string()))?;
    let file: CamerasFile = serde_json::from_str(&text).map_err(|e| Error::load(&cams_path, e.to_string()))?;
    if file.views.is_empty() {
        return Err(Error::load(&cams_path, "no views"));
    }
    if let Some(bad) = file.holdout.iter().find(|i| **i >= file.views.len()) {
        return Err(Error::load(&cams_path, format!("holdout index {bad} out of range")));
    }
    let mut names: Vec<&str> = file.views.iter().map(|v| v.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::load(&cams_path, "duplicate view names"));
    }
    let entries: Vec<(usize, &CameraSpec)> = file.views.iter().enumerate().collect();
    let loaded = crate::par::map_slice(&entries, |(i, spec)| load_item(root, spec, file.holdout.contains(i)));
    let mut items = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    items.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(Dataset { items })
}

/// Writes a training set in the layout [`load_dataset`] reads; views are
/// named `view_000`, `view_001`, ... with held-out views last.
pub fn save_training_set(root: impl AsRef<Path>, set: &TrainingSet) -> Result<()> {
    let root = root.as_ref();
    for dir in ["images", "masks", "depths"] {
        std::fs::create_dir_all(root.join(dir)).map_err(|e| Error::load(root.join(dir), e.to_string()))?;
    }
    let mut views = Vec::new();
    let mut holdout = Vec::new();
    for (i, sup) in set.train.iter().chain(&set.holdout).enumerate() {
        let name = format!("view_{i:03}");
        save_png(&sup.image, Transfer::Linear, root.join("images").join(format!("{name}.png")))?;
        let mask = sup
            .mask
            .clone()
            .unwrap_or_else(|| FloatImage::filled(sup.camera.width, sup.camera.height, 1, 1.0));
        save_png(&mask, Transfer::Linear, root.join("masks").join(format!("{name}.png")))?;
        if let (Some(d), Some(valid)) = (&sup.depth, &sup.depth_valid) {
            save_fmap(d, root.join("depths").join(format!("{name}.fmap")))?;
            let v = FloatImage::from_data(d.width, d.height, 1, valid.iter().map(|b| f64::from(u8::from(*b))).collect())?;
            save_png(&v, Transfer::Linear, root.join("depths").join(format!("{name}.valid.png")))?;
        }
        if i >= set.train.len() {
            holdout.push(i);
        }
        views.push(sup.camera.to_spec(&name));
    }
    let file = CamerasFile { views, holdout };
    let path = root.join("cameras.json");
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::load(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::Vector3;

    fn small_set(views: usize) -> TrainingSet {
        let mut train = Vec::new();
        for i in 0..views {
            let cam = fixtures::orbit_camera(Vector3::zeros(), 3.0, i as f64, 0.2, 0.8, 8, 6);
            let image = FloatImage::filled(8, 6, 3, 0.25 * i as f64 % 1.0);
            let mut mask = FloatImage::new(8, 6, 1);
            mask.data[5] = 1.0;
            train.push(Supervision::new(cam, image, Some(mask), None).unwrap());
        }
        TrainingSet { train, holdout: Vec::new() }
    }

    #[test]
    fn round_trip_four_views() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = small_set(4);
        set.holdout.push(set.train.pop().unwrap());
        save_training_set(dir.path(), &set).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.items.len(), 4);
        assert_eq!(ds.items.iter().filter(|i| i.holdout).count(), 1);
        assert!(ds.items.windows(2).all(|w| w[0].name < w[1].name));
        assert_eq!(ds.items[0].mask.data[5], 1.0);
        let ts = ds.training_set().unwrap();
        assert_eq!((ts.train.len(), ts.holdout.len()), (3, 1));
    }

    #[test]
    fn missing_mask_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        save_training_set(dir.path(), &small_set(2)).unwrap();
        std::fs::remove_file(dir.path().join("masks/view_001.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("view_001.png"), "{err}");
    }

    #[test]
    fn depth_is_optional_per_view() {
        let dir = tempfile::tempdir().unwrap();
        save_training_set(dir.path(), &small_set(3)).unwrap();
        let depth = FloatImage::filled(8, 6, 1, 2.5);
        save_fmap(&depth, dir.path().join("depths/view_001.fmap")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let with: Vec<bool> = ds.items.iter().map(|i| i.depth.is_some()).collect();
        assert_eq!(with, vec![false, true, false]);
        assert!(ds.items[1].depth.as_ref().unwrap().1.iter().all(|v| *v));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_training_set(dir.path(), &small_set(1)).unwrap();
        save_png(&FloatImage::new(4, 4, 1), Transfer::Linear, dir.path().join("masks/view_000.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("view_000.png") && err.contains("4x4"), "{err}");
    }
}
