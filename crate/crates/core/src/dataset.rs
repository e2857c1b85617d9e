//! A manifest together with its feature views, and the on-disk data
//! directory layout: `manifest.csv` plus `views/<name>.fvw` for every view
//! the manifest references.

use std::path::{Path, PathBuf};

use crate::corpus::{load_manifest_checked, write_manifest, Manifest};
use crate::error::{Error, Result};
use crate::features::{load_views, mean_pool, write_view, FeatureViews};
use crate::nn::Matrix;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const VIEWS_DIR: &str = "views";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub views: FeatureViews,
}

impl Dataset {
    pub fn new(manifest: Manifest, views: FeatureViews) -> Result<Self> {
        views.check_coverage(&manifest)?;
        Ok(Self { manifest, views })
    }

    pub fn view_path(dir: &Path, name: &str) -> PathBuf {
        dir.join(VIEWS_DIR).join(format!("{name}.fvw"))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let views_dir = dir.join(VIEWS_DIR);
        let mut available = Vec::new();
        if views_dir.is_dir() {
            let entries = std::fs::read_dir(&views_dir).map_err(|e| Error::io(&views_dir, e))?;
            for entry in entries {
                let path = entry.map_err(|e| Error::io(&views_dir, e))?.path();
                if path.extension().is_some_and(|e| e == "fvw") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        available.push(stem.to_owned());
                    }
                }
            }
        }
        let manifest = load_manifest_checked(dir.join(MANIFEST_FILE), &available)?;
        let paths: Vec<(String, PathBuf)> = manifest
            .declared_views()
            .into_iter()
            .map(|v| {
                let p = Self::view_path(dir, &v);
                (v, p)
            })
            .collect();
        let views = load_views(&manifest, &paths)?;
        Ok(Self { manifest, views })
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let views_dir = dir.join(VIEWS_DIR);
        std::fs::create_dir_all(&views_dir).map_err(|e| Error::io(&views_dir, e))?;
        write_manifest(&self.manifest, dir.join(MANIFEST_FILE))?;
        for v in self.views.views() {
            write_view(v, Self::view_path(dir, v.name()))?;
        }
        Ok(())
    }

    /// Pooled features of `ids` from one view, one row per id.
    pub fn pooled_matrix<S: AsRef<str>>(&self, view: &str, ids: &[S]) -> Result<Matrix> {
        let v = self
            .views
            .get(view)
            .ok_or_else(|| Error::Validation(format!("unknown feature view {view}")))?;
        let mut data = Vec::with_capacity(ids.len() * v.dim());
        for id in ids {
            let id = id.as_ref();
            let frames = v.get(id).ok_or_else(|| {
                Error::Validation(format!("view {view} has no features for segment {id}"))
            })?;
            data.extend(mean_pool(frames)?);
        }
        Matrix::from_vec(ids.len(), v.dim(), data)
    }
}
