//! DeepZoom pyramids: level arithmetic, tile layout on disk, the `.dzi`
//! descriptor and region reads at any level.
//!
//! Level `max_level` is the full-resolution image and level 0 is 1×1. Each
//! level is the 2×2 box average of the one above it.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{RasterError, RasterImage};

pub const DEFAULT_TILE_SIZE: u32 = 254;
pub const DEFAULT_OVERLAP: u32 = 1;
pub const JPEG_QUALITY: u8 = 90;
const DZI_NAMESPACE: &str = "http://schemas.microsoft.com/deepzoom/2008";

#[derive(Debug, Error)]
pub enum PyramidError {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("region ({x},{y}) {w}x{h} is outside level {level} ({width}x{height})")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        level: u32,
        width: u32,
        height: u32,
    },
    #[error("level {level} does not exist (max level {max_level})")]
    NoSuchLevel { level: u32, max_level: u32 },
    #[error("tile {col}_{row} does not exist at level {level}")]
    NoSuchTile { level: u32, col: u32, row: u32 },
    #[error("malformed descriptor: {0}")]
    Dzi(String),
    #[error("unsupported source {path}: {message}")]
    UnsupportedSource { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileFormat {
    Jpeg,
    Png,
}

impl TileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TileFormat::Jpeg => "jpeg",
            TileFormat::Png => "png",
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            TileFormat::Jpeg => "image/jpeg",
            TileFormat::Png => "image/png",
        }
    }
}

impl fmt::Display for TileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for TileFormat {
    type Err = PyramidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jpeg" => Ok(TileFormat::Jpeg),
            "png" => Ok(TileFormat::Png),
            other => Err(PyramidError::InvalidDescriptor(format!("unknown tile format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidDescriptor {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub overlap: u32,
    pub format: TileFormat,
}

/// Rectangle `(x, y, w, h)` in pixels of some level.
pub type Rect = (u32, u32, u32, u32);

impl PyramidDescriptor {
    pub fn new(width: u32, height: u32, tile_size: u32, overlap: u32, format: TileFormat) -> Result<Self, PyramidError> {
        let d = Self {
            width,
            height,
            tile_size,
            overlap,
            format,
        };
        d.validate()?;
        Ok(d)
    }

    /// Default tiling (254 px, overlap 1, JPEG).
    pub fn with_defaults(width: u32, height: u32) -> Result<Self, PyramidError> {
        Self::new(width, height, DEFAULT_TILE_SIZE, DEFAULT_OVERLAP, TileFormat::Jpeg)
    }

    pub fn validate(&self) -> Result<(), PyramidError> {
        if self.width == 0 || self.height == 0 {
            return Err(PyramidError::InvalidDescriptor("image dimensions must be positive".into()));
        }
        if self.tile_size == 0 {
            return Err(PyramidError::InvalidDescriptor("tile size must be >= 1".into()));
        }
        Ok(())
    }

    /// `ceil(log2(max(width, height)))`.
    pub fn max_level(&self) -> u32 {
        let m = self.width.max(self.height);
        if m <= 1 {
            0
        } else {
            32 - (m - 1).leading_zeros()
        }
    }

    pub fn level_count(&self) -> u32 {
        self.max_level() + 1
    }

    /// Downsampling factor of `level` relative to full resolution.
    pub fn scale(&self, level: u32) -> u64 {
        1u64 << (self.max_level() - level.min(self.max_level()))
    }

    pub fn level_dimensions(&self, level: u32) -> Option<(u32, u32)> {
        if level > self.max_level() {
            return None;
        }
        let s = self.scale(level);
        Some((
            (self.width as u64).div_ceil(s) as u32,
            (self.height as u64).div_ceil(s) as u32,
        ))
    }

    /// `(cols, rows)` of the tile grid at `level`.
    pub fn tile_grid(&self, level: u32) -> Option<(u32, u32)> {
        self.level_dimensions(level)
            .map(|(w, h)| (w.div_ceil(self.tile_size), h.div_ceil(self.tile_size)))
    }

    /// Pixel rectangle of a tile including its overlap margins, clipped to
    /// the level.
    pub fn tile_rect(&self, level: u32, col: u32, row: u32) -> Option<Rect> {
        let (w, h) = self.level_dimensions(level)?;
        let (cols, rows) = self.tile_grid(level)?;
        if col >= cols || row >= rows {
            return None;
        }
        let span = |i: u32, extent: u32| {
            let start = (i * self.tile_size).saturating_sub(self.overlap);
            let end = ((i + 1) * self.tile_size + self.overlap).min(extent);
            (start, end - start)
        };
        let (x, tw) = span(col, w);
        let (y, th) = span(row, h);
        Some((x, y, tw, th))
    }

    fn check_region(&self, level: u32, r: Rect) -> Result<(), PyramidError> {
        let (lw, lh) = self.level_dimensions(level).ok_or(PyramidError::NoSuchLevel {
            level,
            max_level: self.max_level(),
        })?;
        let (x, y, w, h) = r;
        let fits = w > 0
            && h > 0
            && x.checked_add(w).is_some_and(|e| e <= lw)
            && y.checked_add(h).is_some_and(|e| e <= lh);
        if fits {
            Ok(())
        } else {
            Err(PyramidError::OutOfBounds {
                x,
                y,
                w,
                h,
                level,
                width: lw,
                height: lh,
            })
        }
    }

    /// Maps a full-resolution rectangle to the smallest covering rectangle
    /// at `level`.
    pub fn full_res_to_level(&self, level: u32, r: Rect) -> Option<Rect> {
        let (lw, lh) = self.level_dimensions(level)?;
        let s = self.scale(level);
        let (x, y, w, h) = (r.0 as u64, r.1 as u64, r.2 as u64, r.3 as u64);
        let (x0, y0) = (x / s, y / s);
        let x1 = (x + w).div_ceil(s).min(lw as u64);
        let y1 = (y + h).div_ceil(s).min(lh as u64);
        Some((x0 as u32, y0 as u32, x1.saturating_sub(x0) as u32, y1.saturating_sub(y0) as u32))
    }
}

/// Serializes a descriptor. Output is byte-stable for a given input.
pub fn write_dzi(d: &PyramidDescriptor) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <Image xmlns=\"{DZI_NAMESPACE}\" Format=\"{}\" Overlap=\"{}\" TileSize=\"{}\">\n  \
         <Size Height=\"{}\" Width=\"{}\"/>\n\
         </Image>\n",
        d.format, d.overlap, d.tile_size, d.height, d.width
    )
}

pub fn parse_dzi(xml: &str) -> Result<PyramidDescriptor, PyramidError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| PyramidError::Dzi(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "Image" {
        return Err(PyramidError::Dzi(format!("root element is <{}>", root.tag_name().name())));
    }
    let size = root
        .children()
        .find(|n| n.is_element() && n.tag_name().name() == "Size")
        .ok_or_else(|| PyramidError::Dzi("missing <Size>".into()))?;
    let num = |node: roxmltree::Node, attr: &str| -> Result<u32, PyramidError> {
        node.attribute(attr)
            .ok_or_else(|| PyramidError::Dzi(format!("missing {attr}")))?
            .trim()
            .parse()
            .map_err(|_| PyramidError::Dzi(format!("{attr} is not a non-negative integer")))
    };
    let format = root
        .attribute("Format")
        .ok_or_else(|| PyramidError::Dzi("missing Format".into()))?
        .parse()?;
    PyramidDescriptor::new(
        num(size, "Width")?,
        num(size, "Height")?,
        num(root, "TileSize")?,
        num(root, "Overlap")?,
        format,
    )
}

pub fn encode_tile(img: &RasterImage, format: TileFormat) -> Result<Vec<u8>, PyramidError> {
    let mut out = Cursor::new(Vec::new());
    let (w, h) = (img.width(), img.height());
    match format {
        TileFormat::Jpeg => {
            JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY).write_image(img.pixels(), w, h, ExtendedColorType::Rgb8)?
        }
        TileFormat::Png => PngEncoder::new(&mut out).write_image(img.pixels(), w, h, ExtendedColorType::Rgb8)?,
    }
    Ok(out.into_inner())
}

/// Crops tile `(col, row)` out of a level raster.
pub fn cut_tile(d: &PyramidDescriptor, level_img: &RasterImage, level: u32, col: u32, row: u32) -> Result<RasterImage, PyramidError> {
    let (x, y, w, h) = d.tile_rect(level, col, row).ok_or(PyramidError::NoSuchTile { level, col, row })?;
    Ok(level_img.crop(x, y, w, h)?)
}

/// Anything that can return pixels of a pyramid level.
pub trait RegionSource {
    fn descriptor(&self) -> &PyramidDescriptor;

    /// Exact crop of `level` at `(x, y)` in that level's pixel grid.
    fn read_region(&self, x: u32, y: u32, w: u32, h: u32, level: u32) -> Result<RasterImage, PyramidError>;
}

/// All levels held in memory; index = level.
#[derive(Debug, Clone)]
pub struct MemoryPyramid {
    descriptor: PyramidDescriptor,
    levels: Vec<RasterImage>,
}

impl MemoryPyramid {
    pub fn new(source: RasterImage, tile_size: u32, overlap: u32, format: TileFormat) -> Result<Self, PyramidError> {
        let descriptor = PyramidDescriptor::new(source.width(), source.height(), tile_size, overlap, format)?;
        let mut levels = vec![source];
        for _ in 0..descriptor.max_level() {
            let next = levels.last().expect("non-empty").downsample(2);
            levels.push(next);
        }
        levels.reverse();
        Ok(Self { descriptor, levels })
    }

    pub fn level(&self, level: u32) -> Option<&RasterImage> {
        self.levels.get(level as usize)
    }

    pub fn tile(&self, level: u32, col: u32, row: u32) -> Result<RasterImage, PyramidError> {
        let img = self.level(level).ok_or(PyramidError::NoSuchLevel {
            level,
            max_level: self.descriptor.max_level(),
        })?;
        cut_tile(&self.descriptor, img, level, col, row)
    }
}

impl RegionSource for MemoryPyramid {
    fn descriptor(&self) -> &PyramidDescriptor {
        &self.descriptor
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32, level: u32) -> Result<RasterImage, PyramidError> {
        self.descriptor.check_region(level, (x, y, w, h))?;
        Ok(self.levels[level as usize].crop(x, y, w, h)?)
    }
}

/// `<dir>/<name>.dzi` and `<dir>/<name>_files`.
pub fn pyramid_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.dzi")), dir.join(format!("{name}_files")))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PyramidError + '_ {
    move |source| PyramidError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a flat PNG/JPEG/TIFF slide.
pub fn load_source(path: &Path) -> Result<RasterImage, PyramidError> {
    match RasterImage::load(path) {
        Ok(img) => Ok(img),
        Err(RasterError::Image(image::ImageError::IoError(e))) => Err(io_err(path)(e)),
        Err(RasterError::Image(e)) => Err(PyramidError::UnsupportedSource {
            path: path.to_path_buf(),
            message: e.to_string(),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Writes every tile of every level plus the descriptor under `out_dir`.
/// Levels are produced top-down, one raster at a time; tiles within a level
/// are encoded in parallel.
pub fn build_pyramid(
    source: RasterImage,
    tile_size: u32,
    overlap: u32,
    format: TileFormat,
    out_dir: &Path,
    name: &str,
) -> Result<PyramidDescriptor, PyramidError> {
    let d = PyramidDescriptor::new(source.width(), source.height(), tile_size, overlap, format)?;
    let (dzi, files) = pyramid_paths(out_dir, name);
    let mut img = source;
    for level in (0..=d.max_level()).rev() {
        let dir = files.join(level.to_string());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let (cols, rows) = d.tile_grid(level).expect("level in range");
        let cells: Vec<(u32, u32)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (c, r))).collect();
        cells.par_iter().try_for_each(|&(c, r)| {
            let bytes = encode_tile(&cut_tile(&d, &img, level, c, r)?, format)?;
            let path = dir.join(format!("{c}_{r}.{}", format.extension()));
            fs::write(&path, bytes).map_err(io_err(&path))
        })?;
        if level > 0 {
            img = img.downsample(2);
        }
    }
    fs::write(&dzi, write_dzi(&d)).map_err(io_err(&dzi))?;
    Ok(d)
}

/// A pyramid on disk, read tile by tile.
#[derive(Debug, Clone)]
pub struct DiskPyramid {
    descriptor: PyramidDescriptor,
    dzi_path: PathBuf,
    files_dir: PathBuf,
}

impl DiskPyramid {
    /// Opens `<dir>/<name>.dzi`; tiles are expected in `<dir>/<name>_files`.
    pub fn open(dzi_path: &Path) -> Result<Self, PyramidError> {
        let xml = fs::read_to_string(dzi_path).map_err(io_err(dzi_path))?;
        let descriptor = parse_dzi(&xml)?;
        let stem = dzi_path
            .file_stem()
            .ok_or_else(|| PyramidError::Dzi(format!("{} has no file stem", dzi_path.display())))?
            .to_string_lossy();
        let files_dir = dzi_path.with_file_name(format!("{stem}_files"));
        Ok(Self {
            descriptor,
            dzi_path: dzi_path.to_path_buf(),
            files_dir,
        })
    }

    pub fn dzi_path(&self) -> &Path {
        &self.dzi_path
    }

    pub fn tile_path(&self, level: u32, col: u32, row: u32) -> Option<PathBuf> {
        self.descriptor.tile_rect(level, col, row)?;
        Some(
            self.files_dir
                .join(level.to_string())
                .join(format!("{col}_{row}.{}", self.descriptor.format.extension())),
        )
    }

    pub fn tile_bytes(&self, level: u32, col: u32, row: u32) -> Result<Vec<u8>, PyramidError> {
        let path = self.tile_path(level, col, row).ok_or(PyramidError::NoSuchTile { level, col, row })?;
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn read_tile(&self, level: u32, col: u32, row: u32) -> Result<RasterImage, PyramidError> {
        Ok(RasterImage::decode(&self.tile_bytes(level, col, row)?)?)
    }
}

impl RegionSource for DiskPyramid {
    fn descriptor(&self) -> &PyramidDescriptor {
        &self.descriptor
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32, level: u32) -> Result<RasterImage, PyramidError> {
        let d = &self.descriptor;
        d.check_region(level, (x, y, w, h))?;
        let ts = d.tile_size;
        let mut out = RasterImage::filled(w, h, [0, 0, 0]);
        for row in y / ts..=(y + h - 1) / ts {
            for col in x / ts..=(x + w - 1) / ts {
                let tile = self.read_tile(level, col, row)?;
                let (tx, ty, _, _) = d.tile_rect(level, col, row).expect("tile in grid");
                // core of the tile (without overlap) intersected with the request
                let cx0 = (col * ts).max(x);
                let cy0 = (row * ts).max(y);
                let cx1 = ((col + 1) * ts).min(x + w);
                let cy1 = ((row + 1) * ts).min(y + h);
                let part = tile.crop(cx0 - tx, cy0 - ty, cx1 - cx0, cy1 - cy0)?;
                out.blit(&part, cx0 - x, cy0 - y);
            }
        }
        Ok(out)
    }
}
