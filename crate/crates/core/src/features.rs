//! Per-segment feature views and the `FVW1` binary file format.
//!
//! Layout (little-endian): magic `FVW1`, u32 segment count, u32 D, then per
//! segment a u32 id length, the UTF-8 id, a u32 frame count T and T*D f64
//! values row-major. T = 1 is a plain vector.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::corpus::Manifest;
use crate::error::{Error, Result};

pub const VIEW_MAGIC: &[u8; 4] = b"FVW1";

/// A T x D block of frame features for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    frames: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Frames {
    pub fn new(frames: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * dim {
            return Err(Error::Shape(format!(
                "{frames}x{dim} frames need {} values, got {}",
                frames * dim,
                values.len()
            )));
        }
        Ok(Self {
            frames,
            dim,
            values,
        })
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            frames: 1,
            dim: values.len(),
            values,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// Column-wise arithmetic mean over frames.
pub fn mean_pool(frames: &Frames) -> Result<Vec<f64>> {
    if frames.frames == 0 {
        return Err(Error::Shape("cannot pool an empty segment (T = 0)".into()));
    }
    let mut out = vec![0.0; frames.dim];
    for t in 0..frames.frames {
        for (o, v) in out.iter_mut().zip(frames.frame(t)) {
            *o += v;
        }
    }
    let inv = 1.0 / frames.frames as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureView {
    name: String,
    dim: usize,
    ids: Vec<String>,
    payloads: Vec<Frames>,
    index: HashMap<String, usize>,
}

impl FeatureView {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            ids: Vec::new(),
            payloads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, segment_id: impl Into<String>, payload: Frames) -> Result<()> {
        let segment_id = segment_id.into();
        if payload.dim != self.dim {
            return Err(Error::Validation(format!(
                "view {}: segment {segment_id} has dimension {}, expected {}",
                self.name, payload.dim, self.dim
            )));
        }
        if payload.frames == 0 {
            return Err(Error::Validation(format!(
                "view {}: segment {segment_id} has no frames",
                self.name
            )));
        }
        if let Some(pos) = payload.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "view {}: segment {segment_id} has non-finite value at frame {}, column {}",
                self.name,
                pos / self.dim,
                pos % self.dim
            )));
        }
        if self.index.contains_key(&segment_id) {
            return Err(Error::Validation(format!(
                "view {}: duplicate segment {segment_id}",
                self.name
            )));
        }
        self.index.insert(segment_id.clone(), self.ids.len());
        self.ids.push(segment_id);
        self.payloads.push(payload);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, segment_id: &str) -> Option<&Frames> {
        self.index.get(segment_id).map(|&i| &self.payloads[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Frames)> {
        self.ids.iter().map(String::as_str).zip(&self.payloads)
    }

    /// The pooled D-vector for one segment.
    pub fn pooled(&self, segment_id: &str) -> Result<Vec<f64>> {
        let frames = self.get(segment_id).ok_or_else(|| {
            Error::Validation(format!("view {}: missing segment {segment_id}", self.name))
        })?;
        mean_pool(frames)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(VIEW_MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, p) in self.ids.iter().zip(&self.payloads) {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(p.frames as u32).to_le_bytes());
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(name: &str, bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != VIEW_MAGIC {
            return Err(Error::parse(path, 0, "bad magic, expected FVW1"));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::parse(path, 8, "dimension must be positive"));
        }
        let mut view = FeatureView::new(name, dim);
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::parse(path, at, "segment id is not UTF-8"))?
                .to_owned();
            let frames = r.u32()? as usize;
            let n = frames
                .checked_mul(dim)
                .ok_or_else(|| Error::parse(path, at, "frame count overflow"))?;
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::parse(path, at, "frame count overflow"))?,
            )?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            view.insert(id, Frames::new(frames, dim, values)?)
                .map_err(|e| Error::parse(path, at, e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(
                path,
                r.pos,
                "trailing bytes after last segment",
            ));
        }
        Ok(view)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(self.path, self.pos, "unexpected end of file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_view(name: &str, path: impl AsRef<Path>) -> Result<FeatureView> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureView::from_bytes(name, &bytes, path)
}

pub fn write_view(view: &FeatureView, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, view.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Named views in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureViews {
    views: Vec<FeatureView>,
}

impl FeatureViews {
    pub fn new(views: Vec<FeatureView>) -> Result<Self> {
        for (i, v) in views.iter().enumerate() {
            if views[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::Validation(format!("duplicate view name {}", v.name)));
            }
        }
        Ok(Self { views })
    }

    pub fn get(&self, name: &str) -> Option<&FeatureView> {
        self.views.iter().find(|v| v.name == name)
    }

    pub fn views(&self) -> &[FeatureView] {
        &self.views
    }

    pub fn names(&self) -> Vec<String> {
        self.views.iter().map(|v| v.name.clone()).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.dim).collect()
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Checks that every manifest segment has a payload in every view.
    pub fn check_coverage(&self, manifest: &Manifest) -> Result<()> {
        for view in &self.views {
            for s in manifest.segments() {
                if view.get(&s.segment_id).is_none() {
                    return Err(Error::Validation(format!(
                        "view {} is missing segment {}",
                        view.name, s.segment_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loads the listed view files and checks them against the manifest.
pub fn load_views(manifest: &Manifest, paths: &[(String, PathBuf)]) -> Result<FeatureViews> {
    let views = paths
        .iter()
        .map(|(name, p)| read_view(name, p))
        .collect::<Result<Vec<_>>>()?;
    let views = FeatureViews::new(views)?;
    views.check_coverage(manifest)?;
    Ok(views)
}
