//! Loading instance maps from disk and evaluating whole directories.
//!
//! A ground-truth or predicted image `X` is stored either as `X.png` (16-bit
//! or 8-bit grey label image, 0 = background) with an `X.json` sidecar
//! mapping id to class, or, for predictions only, as `X.json` holding a
//! detections array which is rasterized at the ground-truth dimensions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use super::classification::ReplicationAlphas;
use super::instance::{class_remap, ClassLabel, InstanceMap};
use super::report::{MetricsReport, MetricsTally};
use super::segmentation::Dice2Mode;
use super::MetricsError;
use crate::helm::Detection;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: sidecar key {key:?} is not an instance id")]
    BadSidecarKey { path: PathBuf, key: String },
    #[error("no prediction found for {0}")]
    MissingPrediction(String),
    #[error("ground-truth directory {0} holds no label images")]
    EmptyCorpus(PathBuf),
    #[error("{name}: {source}")]
    Metrics { name: String, source: MetricsError },
}

/// Classes reported per class and an optional merge applied to both sides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub classes: Vec<ClassLabel>,
    #[serde(default)]
    pub remap: BTreeMap<ClassLabel, ClassLabel>,
}

impl ClassConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        read_json(path)
    }

    /// Identity on the reported classes, overridden by `remap`.
    pub fn mapping(&self) -> BTreeMap<ClassLabel, ClassLabel> {
        let mut m: BTreeMap<_, _> = self.classes.iter().map(|c| (c.clone(), c.clone())).collect();
        m.extend(self.remap.clone());
        m
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.into(),
        source,
    })
}

/// Reads a grey label PNG plus its id→class sidecar.
pub fn load_label_image(png: &Path, sidecar: &Path) -> Result<InstanceMap, IoError> {
    let img = image::open(png)
        .map_err(|source| IoError::Image {
            path: png.into(),
            source,
        })?
        .into_luma16();
    let raw: BTreeMap<String, ClassLabel> = read_json(sidecar)?;
    let mut classes = BTreeMap::new();
    for (k, v) in raw {
        let id = k.parse::<u32>().map_err(|_| IoError::BadSidecarKey {
            path: sidecar.into(),
            key: k.clone(),
        })?;
        classes.insert(id, v);
    }
    let (w, h) = img.dimensions();
    let labels = img.into_raw().into_iter().map(u32::from).collect();
    InstanceMap::new(w, h, labels, classes).map_err(|source| IoError::Metrics {
        name: png.display().to_string(),
        source,
    })
}

/// Writes `map` as a 16-bit label PNG plus sidecar. Ids must fit in 16 bits.
pub fn save_label_image(map: &InstanceMap, png: &Path, sidecar: &Path) -> Result<(), IoError> {
    let data: Vec<u16> = map.labels().iter().map(|&l| l as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width(), map.height(), data).expect("buffer matches dimensions");
    buf.save(png).map_err(|source| IoError::Image {
        path: png.into(),
        source,
    })?;
    let classes: BTreeMap<String, &str> = map.classes().iter().map(|(k, v)| (k.to_string(), v.as_str())).collect();
    fs::write(sidecar, serde_json::to_vec_pretty(&classes).expect("string map")).map_err(|source| IoError::Read {
        path: sidecar.into(),
        source,
    })
}

pub fn load_detections(path: &Path, width: u32, height: u32) -> Result<InstanceMap, IoError> {
    let dets: Vec<Detection> = read_json(path)?;
    Ok(InstanceMap::from_detections(width, height, &dets))
}

/// Loads prediction `name` from `dir`: a label image if `name.png` exists,
/// otherwise a detections array in `name.json`.
pub fn load_prediction(dir: &Path, name: &str, width: u32, height: u32) -> Result<InstanceMap, IoError> {
    let png = dir.join(format!("{name}.png"));
    let json = dir.join(format!("{name}.json"));
    if png.exists() {
        load_label_image(&png, &json)
    } else if json.exists() {
        load_detections(&json, width, height)
    } else {
        Err(IoError::MissingPrediction(name.to_string()))
    }
}

/// Stems of every `*.png` in `dir`, sorted.
pub fn label_stems(dir: &Path) -> Result<Vec<String>, IoError> {
    let rd = fs::read_dir(dir).map_err(|source| IoError::Read {
        path: dir.into(),
        source,
    })?;
    let mut out: Vec<String> = rd
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub dice2_mode: Dice2Mode,
    pub alphas: ReplicationAlphas,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: super::DEFAULT_IOU_THRESHOLD,
            dice2_mode: Dice2Mode::default(),
            alphas: ReplicationAlphas::default(),
        }
    }
}

/// Tally for one image after remapping both sides.
pub fn eval_pair(
    gt: &InstanceMap,
    pred: &InstanceMap,
    config: &ClassConfig,
    iou_threshold: f64,
) -> Result<MetricsTally, MetricsError> {
    let mapping = config.mapping();
    let gt = class_remap(gt, &mapping)?;
    let pred = class_remap(pred, &mapping)?;
    MetricsTally::from_maps(&gt, &pred, &config.classes, iou_threshold)
}

/// Evaluates every ground-truth image in `gt_dir` against `pred_dir`.
/// Images are processed in parallel; counts are summed before ratios.
pub fn eval_dirs(
    gt_dir: &Path,
    pred_dir: &Path,
    config: &ClassConfig,
    opts: &EvalOptions,
) -> Result<MetricsReport, IoError> {
    let stems = label_stems(gt_dir)?;
    if stems.is_empty() {
        return Err(IoError::EmptyCorpus(gt_dir.into()));
    }
    let tallies = stems
        .par_iter()
        .map(|name| {
            let gt = load_label_image(&gt_dir.join(format!("{name}.png")), &gt_dir.join(format!("{name}.json")))?;
            let pred = load_prediction(pred_dir, name, gt.width(), gt.height())?;
            eval_pair(&gt, &pred, config, opts.iou_threshold).map_err(|source| IoError::Metrics {
                name: name.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = MetricsTally::default();
    for t in &tallies {
        total.merge(t);
    }
    Ok(total.report(opts.dice2_mode, &opts.alphas))
}
