use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tilscope_core::pyramid::{DiskPyramid, PyramidError, RegionSource};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("listing {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlideSummary {
    pub slide_id: String,
    pub width: u32,
    pub height: u32,
}

/// Every `<id>.dzi` under a root directory, opened once at startup.
#[derive(Debug, Clone, Default)]
pub struct SlideStore {
    slides: BTreeMap<String, DiskPyramid>,
}

/// What a `/slides/...` path names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlidePath {
    Descriptor(String),
    Tile {
        slide: String,
        level: u32,
        col: u32,
        row: u32,
        ext: String,
    },
}

impl SlidePath {
    /// Parses `<id>.dzi` or `<id>_files/<level>/<col>_<row>.<ext>`.
    pub fn parse(path: &str) -> Option<Self> {
        let parts: Vec<&str> = path.split('/').collect();
        match parts.as_slice() {
            [file] => {
                let id = file.strip_suffix(".dzi")?;
                (!id.is_empty()).then(|| SlidePath::Descriptor(id.to_string()))
            }
            [dir, level, tile] => {
                let slide = dir.strip_suffix("_files")?;
                let (stem, ext) = tile.rsplit_once('.')?;
                let (col, row) = stem.split_once('_')?;
                Some(SlidePath::Tile {
                    slide: slide.to_string(),
                    level: level.parse().ok()?,
                    col: col.parse().ok()?,
                    row: row.parse().ok()?,
                    ext: ext.to_string(),
                })
            }
            _ => None,
        }
    }
}

impl SlideStore {
    /// Opens every descriptor in `root`. A missing root is an empty store;
    /// an unreadable descriptor is an error.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let mut slides = BTreeMap::new();
        if !root.exists() {
            return Ok(Self { slides });
        }
        let read = |source| StoreError::Read {
            path: root.to_path_buf(),
            source,
        };
        for entry in std::fs::read_dir(root).map_err(read)? {
            let path = entry.map_err(read)?.path();
            if path.extension().is_some_and(|e| e == "dzi") && path.is_file() {
                let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                slides.insert(id, DiskPyramid::open(&path)?);
            }
        }
        Ok(Self { slides })
    }

    pub fn get(&self, id: &str) -> Option<&DiskPyramid> {
        self.slides.get(id)
    }

    pub fn summaries(&self) -> Vec<SlideSummary> {
        self.slides
            .iter()
            .map(|(id, p)| SlideSummary {
                slide_id: id.clone(),
                width: p.descriptor().width,
                height: p.descriptor().height,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_slide_paths() {
        assert_eq!(SlidePath::parse("a.dzi"), Some(SlidePath::Descriptor("a".into())));
        assert_eq!(
            SlidePath::parse("my_slide_files/12/3_4.jpeg"),
            Some(SlidePath::Tile {
                slide: "my_slide".into(),
                level: 12,
                col: 3,
                row: 4,
                ext: "jpeg".into()
            })
        );
        for bad in ["", ".dzi", "a", "a_files/x/1_2.jpeg", "a/1/1_2.jpeg", "a_files/1/12.jpeg", "a_files/1/1_2"] {
            assert_eq!(SlidePath::parse(bad), None, "{bad}");
        }
    }
}
