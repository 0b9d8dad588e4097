//! Slide-to-cohort plumbing: tissue detection, grid patch extraction,
//! per-patient aggregation of inflammatory cell counts and cohort CSVs.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::helm::{Detection, INFLAMMATORY};
use crate::morphology::{close, Kernel};
use crate::raster::{BinaryMask, RasterImage};
use crate::survival::{median, SurvivalRecord};

pub const DEFAULT_PATCH_SIDE: u32 = 4019;
pub const DEFAULT_RESOLUTION_UM: f64 = 0.2428;
pub const DEFAULT_MAX_PATCHES: usize = 15;
pub const DEFAULT_MIN_TISSUE_FRACTION: f64 = 0.5;
/// Longest side of the thumbnail used for tissue detection.
pub const DEFAULT_THUMBNAIL_MAX: u32 = 2048;
pub const MIN_THUMBNAIL_SIDE: u32 = 64;
/// Saturation floor (0–255) below which a pixel is never tissue, whatever
/// Otsu picks. Keeps blank slides blank.
pub const MIN_TISSUE_SATURATION: u8 = 18;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("thumbnail {width}x{height} is smaller than {min}x{min}")]
    ThumbnailTooSmall { width: u32, height: u32, min: u32 },
    #[error("no patch of slide {0} reaches the tissue threshold")]
    NoTissue(String),
    #[error("invalid patch parameters: {0}")]
    InvalidParams(String),
    #[error("patient {0} has no patches")]
    NoPatches(String),
    #[error("join failed; only quantified: {only_scores:?}; only clinical: {only_clinical:?}")]
    JoinMiss {
        only_scores: Vec<String>,
        only_clinical: Vec<String>,
    },
    #[error("score column {0:?} not found")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
}

/// HSV saturation scaled to 0–255.
pub fn saturation(rgb: [u8; 3]) -> u8 {
    let max = *rgb.iter().max().expect("three channels") as u32;
    let min = *rgb.iter().min().expect("three channels") as u32;
    if max == 0 {
        0
    } else {
        ((255 * (max - min) + max / 2) / max) as u8
    }
}

/// Otsu's threshold: values `> t` form the upper class.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0);
    let (mut best_t, mut best_var) = (0u8, -1.0);
    for t in 0..256 {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// Tissue = saturation above the Otsu threshold (and above
/// [`MIN_TISSUE_SATURATION`]), followed by a 3×3 closing.
pub fn tissue_mask(thumbnail: &RasterImage) -> Result<BinaryMask, CohortError> {
    let (w, h) = (thumbnail.width(), thumbnail.height());
    if w < MIN_THUMBNAIL_SIDE || h < MIN_THUMBNAIL_SIDE {
        return Err(CohortError::ThumbnailTooSmall {
            width: w,
            height: h,
            min: MIN_THUMBNAIL_SIDE,
        });
    }
    let sat: Vec<u8> = thumbnail
        .pixels()
        .chunks_exact(3)
        .map(|p| saturation([p[0], p[1], p[2]]))
        .collect();
    let mut hist = [0u64; 256];
    for &s in &sat {
        hist[s as usize] += 1;
    }
    let t = otsu_threshold(&hist).max(MIN_TISSUE_SATURATION - 1);
    let bits = sat.iter().map(|&s| s > t).collect();
    let mask = BinaryMask::from_bits(w, h, bits)?;
    Ok(close(&mask, &Kernel::square(3)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub slide_id: String,
    /// Top-left corner in full-resolution pixels.
    pub origin: [u32; 2],
    pub side: u32,
    pub resolution_um: f64,
    pub tissue_fraction: f64,
}

impl PatchSpec {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.png", self.slide_id, self.origin[0], self.origin[1])
    }

    pub fn overlaps(&self, o: &PatchSpec) -> bool {
        let (a, b) = (self.origin, o.origin);
        a[0] < b[0] + o.side && b[0] < a[0] + self.side && a[1] < b[1] + o.side && b[1] < a[1] + self.side
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchParams {
    pub side: u32,
    pub max_patches: usize,
    pub min_tissue_fraction: f64,
    pub resolution_um: f64,
    pub thumbnail_max: u32,
}

impl Default for PatchParams {
    fn default() -> Self {
        Self {
            side: DEFAULT_PATCH_SIDE,
            max_patches: DEFAULT_MAX_PATCHES,
            min_tissue_fraction: DEFAULT_MIN_TISSUE_FRACTION,
            resolution_um: DEFAULT_RESOLUTION_UM,
            thumbnail_max: DEFAULT_THUMBNAIL_MAX,
        }
    }
}

impl PatchParams {
    pub fn validate(&self) -> Result<(), CohortError> {
        let bad = |m: &str| Err(CohortError::InvalidParams(m.to_string()));
        if self.side == 0 {
            return bad("side must be >= 1");
        }
        if self.max_patches == 0 {
            return bad("max_patches must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.min_tissue_fraction) {
            return bad("min_tissue_fraction must lie in [0, 1]");
        }
        if !(self.resolution_um > 0.0) {
            return bad("resolution_um must be positive");
        }
        if self.thumbnail_max < MIN_THUMBNAIL_SIDE {
            return bad("thumbnail_max is below the minimum thumbnail side");
        }
        Ok(())
    }
}

/// Non-overlapping grid patches whose tissue fraction reaches the threshold,
/// row-major, truncated at `max_patches`. Partial patches at the slide edge
/// are never emitted.
pub fn extract_patches(slide: &RasterImage, slide_id: &str, p: &PatchParams) -> Result<Vec<PatchSpec>, CohortError> {
    p.validate()?;
    let (cols, rows) = (slide.width() / p.side, slide.height() / p.side);
    if cols == 0 || rows == 0 {
        return Err(CohortError::NoTissue(slide_id.to_string()));
    }
    let longest = slide.width().max(slide.height());
    let factor = longest.div_ceil(p.thumbnail_max).max(1);
    let mask = tissue_mask(&slide.downsample(factor))?;

    let mut out = Vec::new();
    'grid: for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c * p.side, r * p.side);
            let frac = mask_fraction(&mask, factor, x, y, p.side);
            if frac >= p.min_tissue_fraction {
                out.push(PatchSpec {
                    slide_id: slide_id.to_string(),
                    origin: [x, y],
                    side: p.side,
                    resolution_um: p.resolution_um,
                    tissue_fraction: frac,
                });
                if out.len() == p.max_patches {
                    break 'grid;
                }
            }
        }
    }
    if out.is_empty() {
        return Err(CohortError::NoTissue(slide_id.to_string()));
    }
    Ok(out)
}

/// Fraction of tissue in a full-resolution square, weighting each thumbnail
/// pixel by its overlap with the square.
fn mask_fraction(mask: &BinaryMask, factor: u32, x: u32, y: u32, side: u32) -> f64 {
    let (x1, y1) = (x + side, y + side);
    let mut tissue = 0u64;
    for ty in y / factor..y1.div_ceil(factor).min(mask.height()) {
        let oy = (y1.min((ty + 1) * factor) - y.max(ty * factor)) as u64;
        for tx in x / factor..x1.div_ceil(factor).min(mask.width()) {
            if mask.get(tx, ty) {
                let ox = (x1.min((tx + 1) * factor) - x.max(tx * factor)) as u64;
                tissue += ox * oy;
            }
        }
    }
    tissue as f64 / (side as u64 * side as u64) as f64
}

/// Runs `detect` on every patch in parallel; output follows `specs`.
pub fn detect_patches<E: Send>(
    slide: &RasterImage,
    specs: &[PatchSpec],
    detect: impl Fn(&RasterImage) -> Result<Vec<Detection>, E> + Sync,
) -> Result<Vec<(PatchSpec, Vec<Detection>)>, E> {
    specs
        .par_iter()
        .map(|s| {
            let patch = slide
                .crop(s.origin[0], s.origin[1], s.side, s.side)
                .expect("specs lie inside the slide");
            detect(&patch).map(|d| (s.clone(), d))
        })
        .collect()
}

pub fn count_inflammatory(detections: &[Detection]) -> usize {
    detections.iter().filter(|d| d.class_label == INFLAMMATORY).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientQuant {
    pub patient_id: String,
    pub counts: Vec<usize>,
    pub median: f64,
}

impl PatientQuant {
    pub fn from_counts(patient_id: impl Into<String>, counts: Vec<usize>) -> Result<Self, CohortError> {
        let patient_id = patient_id.into();
        let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let median = median(&values).ok_or_else(|| CohortError::NoPatches(patient_id.clone()))?;
        Ok(Self {
            patient_id,
            counts,
            median,
        })
    }
}

/// Median inflammatory count over a patient's patches.
pub fn quantify_patient(patient_id: &str, patches: &[(PatchSpec, Vec<Detection>)]) -> Result<PatientQuant, CohortError> {
    PatientQuant::from_counts(patient_id, patches.iter().map(|(_, d)| count_inflammatory(d)).collect())
}

/// One row of `quants.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantRow {
    pub patient_id: String,
    pub patch_id: String,
    pub inflammatory_count: usize,
}

pub fn write_quants<W: Write>(rows: &[QuantRow], w: W) -> Result<(), CohortError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_quants<R: Read>(r: R) -> Result<Vec<QuantRow>, CohortError> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}

/// Groups patch rows by patient, sorted by patient id.
pub fn quants_by_patient(rows: &[QuantRow]) -> Vec<PatientQuant> {
    let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in rows {
        by.entry(&r.patient_id).or_default().push(r.inflammatory_count);
    }
    by.into_iter()
        .map(|(id, counts)| PatientQuant::from_counts(id, counts).expect("grouped rows are non-empty"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRow {
    pub patient_id: String,
    pub time_months: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub patient_id: String,
    pub time_months: f64,
    pub event: bool,
    pub scores: BTreeMap<String, f64>,
}

impl CohortRow {
    pub fn record(&self, score_col: &str) -> Result<SurvivalRecord, CohortError> {
        let score = *self
            .scores
            .get(score_col)
            .ok_or_else(|| CohortError::MissingColumn(score_col.to_string()))?;
        Ok(SurvivalRecord::new(self.patient_id.clone(), self.time_months, self.event, score))
    }
}

pub fn survival_records(rows: &[CohortRow], score_col: &str) -> Result<Vec<SurvivalRecord>, CohortError> {
    rows.iter().map(|r| r.record(score_col)).collect()
}

/// Joins per-patient scores (patient → column → value) with clinical rows.
/// Every patient must appear on both sides. Output is sorted by patient id.
pub fn export_cohort(
    scores: &BTreeMap<String, BTreeMap<String, f64>>,
    clinical: &[ClinicalRow],
) -> Result<Vec<CohortRow>, CohortError> {
    let clin: BTreeMap<&str, &ClinicalRow> = clinical.iter().map(|c| (c.patient_id.as_str(), c)).collect();
    let only_scores: Vec<String> = scores.keys().filter(|k| !clin.contains_key(k.as_str())).cloned().collect();
    let only_clinical: Vec<String> = clin
        .keys()
        .filter(|k| !scores.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !only_scores.is_empty() || !only_clinical.is_empty() {
        return Err(CohortError::JoinMiss {
            only_scores,
            only_clinical,
        });
    }
    Ok(scores
        .iter()
        .map(|(id, s)| {
            let c = clin[id.as_str()];
            CohortRow {
                patient_id: id.clone(),
                time_months: c.time_months,
                event: c.event,
                scores: s.clone(),
            }
        })
        .collect())
}

/// `patient → {column: median}` from quantified patients.
pub fn score_table(quants: &[PatientQuant], column: &str) -> BTreeMap<String, BTreeMap<String, f64>> {
    quants
        .iter()
        .map(|q| (q.patient_id.clone(), [(column.to_string(), q.median)].into()))
        .collect()
}

const FIXED_COLUMNS: [&str; 3] = ["patient_id", "time_months", "event"];

/// Writes `patient_id,time_months,event,<score columns…>`. Score columns are
/// the union over rows, sorted; missing values are left empty.
pub fn write_cohort<W: Write>(rows: &[CohortRow], w: W) -> Result<(), CohortError> {
    let mut cols: Vec<&str> = rows.iter().flat_map(|r| r.scores.keys().map(String::as_str)).collect();
    cols.sort_unstable();
    cols.dedup();
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(FIXED_COLUMNS.iter().copied().chain(cols.iter().copied()))?;
    for r in rows {
        let mut rec = vec![
            r.patient_id.clone(),
            r.time_months.to_string(),
            if r.event { "1" } else { "0" }.to_string(),
        ];
        rec.extend(cols.iter().map(|c| r.scores.get(*c).map_or(String::new(), |v| v.to_string())));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn parse_event(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a cohort CSV. Any column beyond the three fixed ones is a numeric
/// score column; empty cells are skipped.
pub fn read_cohort<R: Read>(r: R) -> Result<Vec<CohortRow>, CohortError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let idx = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CohortError::MissingColumn(name.to_string()))
    };
    let (ip, it, ie) = (idx("patient_id")?, idx("time_months")?, idx("event")?);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |message: String| CohortError::BadRow { row, message };
        let time_months = rec[it]
            .trim()
            .parse::<f64>()
            .map_err(|e| bad(format!("time_months: {e}")))?;
        let event = parse_event(&rec[ie]).ok_or_else(|| bad(format!("event {:?} is not 0/1", &rec[ie])))?;
        let mut scores = BTreeMap::new();
        for (j, h) in headers.iter().enumerate() {
            if j == ip || j == it || j == ie || rec[j].trim().is_empty() {
                continue;
            }
            let v = rec[j].trim().parse::<f64>().map_err(|e| bad(format!("{h}: {e}")))?;
            scores.insert(h.trim().to_string(), v);
        }
        out.push(CohortRow {
            patient_id: rec[ip].to_string(),
            time_months,
            event,
            scores,
        });
    }
    Ok(out)
}

/// Reads a clinical table with at least `patient_id,time_months,event`.
pub fn read_clinical<R: Read>(r: R) -> Result<Vec<ClinicalRow>, CohortError> {
    Ok(read_cohort(r)?
        .into_iter()
        .map(|c| ClinicalRow {
            patient_id: c.patient_id,
            time_months: c.time_months,
            event: c.event,
        })
        .collect())
}
