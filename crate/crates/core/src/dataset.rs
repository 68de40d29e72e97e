//! Multi-view training datasets and their on-disk layout.
//!
//! A dataset directory holds `cameras.json`, `images/NNN.png`,
//! `depth/NNN.pfm`, and `meta.json` with the reference-view id (and, for
//! synthetic data, the applied perturbation record). See `docs/FORMATS.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraRecord};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::warp::DepthImage;

/// One training view.
#[derive(Debug, Clone)]
pub struct View {
    pub id: usize,
    pub camera: Camera,
    pub image: Image,
    pub depth: Option<DepthImage>,
}

/// Views plus the designated reference view.
#[derive(Debug, Clone)]
pub struct ViewDataset {
    pub views: Vec<View>,
    pub reference_view: usize,
}

impl ViewDataset {
    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn validate_for_training(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::Config(format!(
                "training needs at least 2 views, got {}",
                self.views.len()
            )));
        }
        if self.reference_view >= self.views.len() {
            return Err(Error::Config(format!(
                "reference view {} out of range for {} views",
                self.reference_view,
                self.views.len()
            )));
        }
        Ok(())
    }
}

/// `meta.json` contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub reference_view: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbations: Option<serde_json::Value>,
}

/// Resolved file listing for a dataset directory: every path checked to
/// exist before anything heavy is loaded.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub cameras: Vec<CameraRecord>,
    pub image_paths: Vec<PathBuf>,
    pub depth_paths: Vec<Option<PathBuf>>,
    pub reference_view: usize,
}

impl DatasetManifest {
    /// Scans a dataset directory. Image files are required per view; depth
    /// files are optional.
    pub fn scan(root: &Path) -> Result<Self> {
        let cam_path = root.join("cameras.json");
        let cam_text =
            std::fs::read_to_string(&cam_path).map_err(|e| Error::io(&cam_path, e))?;
        let cameras: Vec<CameraRecord> = serde_json::from_str(&cam_text)?;
        if cameras.is_empty() {
            return Err(Error::parse(&cam_path, "camera list is empty"));
        }

        let meta_path = root.join("meta.json");
        let meta: DatasetMeta = if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            serde_json::from_str(&text)?
        } else {
            DatasetMeta {
                reference_view: 0,
                perturbations: None,
            }
        };
        if meta.reference_view >= cameras.len() {
            return Err(Error::parse(
                &meta_path,
                format!(
                    "reference view {} out of range for {} cameras",
                    meta.reference_view,
                    cameras.len()
                ),
            ));
        }

        let mut image_paths = Vec::with_capacity(cameras.len());
        let mut depth_paths = Vec::with_capacity(cameras.len());
        let mut missing = Vec::new();
        for i in 0..cameras.len() {
            let img = root.join("images").join(format!("{i:03}.png"));
            if img.exists() {
                image_paths.push(img);
            } else {
                missing.push(i);
                image_paths.push(img);
            }
            let depth = root.join("depth").join(format!("{i:03}.pfm"));
            depth_paths.push(depth.exists().then_some(depth));
        }
        if !missing.is_empty() {
            return Err(Error::MissingViews { ids: missing });
        }

        Ok(Self {
            root: root.to_path_buf(),
            cameras,
            image_paths,
            depth_paths,
            reference_view: meta.reference_view,
        })
    }

    pub fn load(&self) -> Result<ViewDataset> {
        let mut views = Vec::with_capacity(self.cameras.len());
        for (i, rec) in self.cameras.iter().enumerate() {
            let camera = Camera::try_from(rec)?;
            let image = io::read_png(&self.image_paths[i])?;
            if image.width != camera.width() || image.height != camera.height() {
                return Err(Error::DimensionMismatch(format!(
                    "view {i}: image {}x{} vs camera {}x{}",
                    image.width,
                    image.height,
                    camera.width(),
                    camera.height()
                )));
            }
            let depth = match &self.depth_paths[i] {
                Some(p) => Some(DepthImage::new(io::read_pfm(p)?)),
                None => None,
            };
            views.push(View {
                id: i,
                camera,
                image,
                depth,
            });
        }
        Ok(ViewDataset {
            views,
            reference_view: self.reference_view,
        })
    }
}

/// Writes a dataset directory in the standard layout.
pub fn save_dataset(
    root: &Path,
    dataset: &ViewDataset,
    perturbations: Option<serde_json::Value>,
) -> Result<()> {
    let images_dir = root.join("images");
    let depth_dir = root.join("depth");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;

    let cameras: Vec<CameraRecord> = dataset.views.iter().map(|v| (&v.camera).into()).collect();
    let cam_path = root.join("cameras.json");
    std::fs::write(&cam_path, serde_json::to_string_pretty(&cameras)?)
        .map_err(|e| Error::io(&cam_path, e))?;

    let meta = DatasetMeta {
        reference_view: dataset.reference_view,
        perturbations,
    };
    let meta_path = root.join("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;

    for view in &dataset.views {
        io::write_png(&images_dir.join(format!("{:03}.png", view.id)), &view.image)?;
        if let Some(depth) = &view.depth {
            io::write_pfm(&depth_dir.join(format!("{:03}.pfm", view.id)), &depth.pixels)?;
        }
    }
    Ok(())
}

/// Loads a dataset directory (scan + load).
pub fn load_dataset(root: &Path) -> Result<ViewDataset> {
    DatasetManifest::scan(root)?.load()
}
