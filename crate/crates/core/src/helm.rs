//! Rule-based nucleus detector.
//!
//! The image is deconvolved into stain concentrations, H and E are rescaled
//! to 0–255 over the fixed optical-density window `[0, od_max]`, and pixels
//! with strong hematoxylin and weak eosin form the raw mask. Two masks are
//! derived by a cascade of openings (elliptical, then square). Outer
//! contours of both masks are filtered by area and circularity and merged
//! with overlap-based duplicate removal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contour::{self, Point};
use crate::interval::Interval;
use crate::morphology::{self, Kernel};
use crate::raster::{BinaryMask, RasterImage};
use crate::stain::{self, StainMatrix};

pub const INFLAMMATORY: &str = "inflammatory";

#[derive(Debug, Error, PartialEq)]
pub enum HelmError {
    #[error("image {width}x{height} is smaller than the {kernel}px kernel")]
    ImageTooSmall { width: u32, height: u32, kernel: u32 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HelmParams {
    /// Hematoxylin window on the rescaled 0–255 channel.
    pub h_range: Interval,
    /// Eosin window on the rescaled 0–255 channel.
    pub e_range: Interval,
    /// Accepted contour area in px².
    pub area_range: Interval,
    /// Minimum circularity on the 0–100 scale.
    pub min_circularity: f64,
    pub ellipse_kernel_diameter: u32,
    pub square_kernel_side: u32,
    pub dedupe_iou: f64,
}

impl Default for HelmParams {
    fn default() -> Self {
        Self {
            h_range: Interval::new(220.0, 255.0),
            e_range: Interval::new(0.0, 50.0),
            area_range: Interval::new(190.0, 600.0),
            min_circularity: 65.0,
            ellipse_kernel_diameter: 5,
            square_kernel_side: 3,
            dedupe_iou: 0.5,
        }
    }
}

impl HelmParams {
    pub fn validate(&self) -> Result<(), HelmError> {
        let bad = |m: &str| Err(HelmError::InvalidParams(m.to_string()));
        if !self.h_range.is_valid() || !self.e_range.is_valid() || !self.area_range.is_valid() {
            return bad("ranges must be finite with lo <= hi");
        }
        if self.area_range.lo < 1.0 {
            return bad("area_range.lo must be >= 1");
        }
        if !(0.0..=100.0).contains(&self.min_circularity) {
            return bad("min_circularity must lie in [0, 100]");
        }
        for k in [self.ellipse_kernel_diameter, self.square_kernel_side] {
            if k == 0 || k % 2 == 0 {
                return bad("kernel sizes must be odd and >= 1");
            }
        }
        if !(0.0..=1.0).contains(&self.dedupe_iou) {
            return bad("dedupe_iou must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A detected nucleus. Coordinates are pixel centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub contour: Vec<Point>,
    pub centroid: [f64; 2],
    pub area: f64,
    pub circularity: f64,
    #[serde(rename = "class")]
    pub class_label: String,
}

impl Detection {
    /// Builds a detection from a closed contour; `None` for degenerate
    /// contours (fewer than three vertices or zero area).
    pub fn from_contour(contour: Vec<Point>, class_label: impl Into<String>) -> Option<Self> {
        if contour.len() < 3 {
            return None;
        }
        let area = contour::polygon_area(&contour);
        if area <= 0.0 {
            return None;
        }
        let perimeter = contour::polygon_perimeter(&contour);
        let filled = contour::fill_polygon(&contour);
        let n = filled.len() as f64;
        let (sx, sy) = filled
            .iter()
            .fold((0i64, 0i64), |(sx, sy), p| (sx + p[0] as i64, sy + p[1] as i64));
        Some(Self {
            centroid: [sx as f64 / n, sy as f64 / n],
            area,
            circularity: contour::circularity(area, perimeter),
            contour,
            class_label: class_label.into(),
        })
    }

    pub fn bounds(&self) -> (i32, i32, i32, i32) {
        contour::bounds(&self.contour)
    }

    pub fn filled_pixels(&self) -> Vec<Point> {
        contour::fill_polygon(&self.contour)
    }

    /// Maps coordinates with `p' = p * scale + offset`.
    pub fn transformed(&self, scale: i32, offset: [i32; 2]) -> Self {
        let s = scale as f64;
        Self {
            contour: self
                .contour
                .iter()
                .map(|p| [p[0] * scale + offset[0], p[1] * scale + offset[1]])
                .collect(),
            centroid: [
                self.centroid[0] * s + offset[0] as f64,
                self.centroid[1] * s + offset[1] as f64,
            ],
            area: self.area * s * s,
            circularity: self.circularity,
            class_label: self.class_label.clone(),
        }
    }
}

/// IoU of the filled contours of two detections.
pub fn filled_iou(a: &Detection, b: &Detection) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    let fa = a.filled_pixels();
    let fb = b.filled_pixels();
    if ax1 < bx0 || bx1 < ax0 || ay1 < by0 || by1 < ay0 {
        return 0.0;
    }
    // both lists are sorted in raster order
    let key = |p: &Point| (p[1], p[0]);
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < fa.len() && j < fb.len() {
        match key(&fa[i]).cmp(&key(&fb[j])) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = fa.len() + fb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Maps a concentration to the 0–255 threshold scale.
pub fn rescale_concentration(c: f64) -> f64 {
    (c / stain::od_max() * 255.0).clamp(0.0, 255.0)
}

/// Pixels passing the H and E windows, before any morphology.
pub fn raw_stain_mask(img: &RasterImage, p: &HelmParams, m: &StainMatrix) -> BinaryMask {
    let hed = stain::rgb_to_hed(img, m).expect("helm stain matrix is invertible");
    let bits = hed
        .values()
        .iter()
        .map(|c| {
            p.h_range.contains(rescale_concentration(c[0]))
                && p.e_range.contains(rescale_concentration(c[1]))
        })
        .collect();
    BinaryMask::from_bits(img.width(), img.height(), bits).expect("same dimensions")
}

/// Returns `(mask₁, mask₂)`: the raw mask opened by the elliptical kernel,
/// then that result opened by the square kernel.
pub fn build_stain_masks(img: &RasterImage, p: &HelmParams) -> Result<(BinaryMask, BinaryMask), HelmError> {
    p.validate()?;
    let kernel = p.ellipse_kernel_diameter.max(p.square_kernel_side);
    if img.width() < kernel || img.height() < kernel {
        return Err(HelmError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            kernel,
        });
    }
    let raw = raw_stain_mask(img, p, &stain::default_he_matrix());
    let first = morphology::open(&raw, &Kernel::ellipse(p.ellipse_kernel_diameter));
    let second = morphology::open(&first, &Kernel::square(p.square_kernel_side));
    Ok((first, second))
}

/// Outer contours of `mask` that pass the area and circularity filters.
pub fn find_candidates(mask: &BinaryMask, p: &HelmParams) -> Vec<Detection> {
    contour::components(mask)
        .iter()
        .filter_map(|c| Detection::from_contour(contour::component_contour(c), INFLAMMATORY))
        .filter(|d| p.area_range.contains(d.area) && d.circularity >= p.min_circularity)
        .collect()
}

/// Merges two candidate lists, dropping the smaller member of every pair
/// whose filled-contour IoU reaches `iou_threshold`. Ties keep the member of
/// `a`.
pub fn dedupe(a: &[Detection], b: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<(usize, &Detection)> = a.iter().chain(b).enumerate().collect();
    // stable: equal areas keep list order, so `a` precedes `b`
    order.sort_by(|x, y| y.1.area.total_cmp(&x.1.area));
    let mut kept: Vec<(usize, &Detection)> = Vec::new();
    for (idx, d) in order {
        if kept.iter().all(|(_, k)| filled_iou(k, d) < iou_threshold) {
            kept.push((idx, d));
        }
    }
    kept.sort_by_key(|(idx, _)| *idx);
    kept.into_iter().map(|(_, d)| d.clone()).collect()
}

pub fn helm_detect(img: &RasterImage, p: &HelmParams) -> Result<Vec<Detection>, HelmError> {
    let (first, second) = build_stain_masks(img, p)?;
    let a = find_candidates(&first, p);
    let b = find_candidates(&second, p);
    Ok(dedupe(&a, &b, p.dedupe_iou))
}

/// Synthetic fixtures shared by tests and the acceptance suite.
pub mod fixtures {
    use crate::raster::RasterImage;
    use crate::stain::{self, default_he_matrix, reconvolve};

    /// Hematoxylin concentration used for synthetic nuclei; rescales to ≈238
    /// on the 0–255 threshold scale.
    pub const NUCLEUS_H: f64 = 2.25;

    pub fn nucleus_rgb() -> [u8; 3] {
        let od = reconvolve([NUCLEUS_H, 0.0, 0.0], &default_he_matrix());
        [
            stain::od_to_intensity(od[0]),
            stain::od_to_intensity(od[1]),
            stain::od_to_intensity(od[2]),
        ]
    }

    /// Light eosin background that never passes the hematoxylin window.
    pub fn stroma_rgb() -> [u8; 3] {
        let od = reconvolve([0.05, 0.25, 0.0], &default_he_matrix());
        [
            stain::od_to_intensity(od[0]),
            stain::od_to_intensity(od[1]),
            stain::od_to_intensity(od[2]),
        ]
    }

    pub fn paint_disk(img: &mut RasterImage, cx: i32, cy: i32, r: i32, rgb: [u8; 3]) {
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy <= r * r
                    && x >= 0
                    && y >= 0
                    && (x as u32) < img.width()
                    && (y as u32) < img.height()
                {
                    img.put(x as u32, y as u32, rgb);
                }
            }
        }
    }

    pub fn paint_rect(img: &mut RasterImage, x: u32, y: u32, w: u32, h: u32, rgb: [u8; 3]) {
        for yy in y..(y + h).min(img.height()) {
            for xx in x..(x + w).min(img.width()) {
                img.put(xx, yy, rgb);
            }
        }
    }

    /// Centres of the five compliant radius-9 nuclei in [`five_disk_patch`].
    pub const DISK_CENTRES: [(i32, i32); 5] = [(60, 60), (200, 80), (400, 120), (120, 300), (330, 380)];

    /// White `size`×`size` patch holding five radius-9 nuclei.
    pub fn five_disk_patch(size: u32) -> RasterImage {
        let mut img = RasterImage::filled(size, size, [255, 255, 255]);
        for (cx, cy) in DISK_CENTRES {
            paint_disk(&mut img, cx, cy, 9, nucleus_rgb());
        }
        img
    }

    /// 512×512 patch: five compliant nuclei, one oversized disk (r = 16) and
    /// one 40×6 bar, all on a light stroma background.
    pub fn acceptance_patch() -> RasterImage {
        let mut img = RasterImage::filled(512, 512, stroma_rgb());
        for (cx, cy) in DISK_CENTRES {
            paint_disk(&mut img, cx, cy, 9, nucleus_rgb());
        }
        paint_disk(&mut img, 440, 250, 16, nucleus_rgb());
        paint_rect(&mut img, 230, 440, 40, 6, nucleus_rgb());
        img
    }
}
