use std::collections::{BTreeMap, BTreeSet};

use super::MetricsError;
use crate::helm::Detection;

pub type ClassLabel = String;

/// Per-pixel instance ids (0 = background) plus a class per instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    classes: BTreeMap<u32, ClassLabel>,
}

impl InstanceMap {
    /// Validates that every id present in `labels` has a class. Class
    /// entries for ids without pixels are dropped.
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u32>,
        mut classes: BTreeMap<u32, ClassLabel>,
    ) -> Result<Self, MetricsError> {
        let expected = width as usize * height as usize;
        if labels.len() != expected {
            return Err(MetricsError::BufferLength {
                expected,
                actual: labels.len(),
            });
        }
        let present: BTreeSet<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
        if let Some(&missing) = present.iter().find(|id| !classes.contains_key(id)) {
            return Err(MetricsError::MissingClass(missing));
        }
        classes.retain(|id, _| present.contains(id));
        Ok(Self {
            width,
            height,
            labels,
            classes,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
            classes: BTreeMap::new(),
        }
    }

    /// Rasterizes filled detection contours; instance ids follow list order
    /// starting at 1 and later detections overwrite earlier ones.
    pub fn from_detections(width: u32, height: u32, detections: &[Detection]) -> Self {
        let mut labels = vec![0u32; width as usize * height as usize];
        let mut classes = BTreeMap::new();
        for (i, d) in detections.iter().enumerate() {
            let id = i as u32 + 1;
            for p in d.filled_pixels() {
                if p[0] >= 0 && p[1] >= 0 && (p[0] as u32) < width && (p[1] as u32) < height {
                    labels[p[1] as usize * width as usize + p[0] as usize] = id;
                }
            }
            classes.insert(id, d.class_label.clone());
        }
        Self::new(width, height, labels, classes).expect("every rasterized id has a class")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn classes(&self) -> &BTreeMap<u32, ClassLabel> {
        &self.classes
    }

    pub fn class_of(&self, id: u32) -> Option<&str> {
        self.classes.get(&id).map(String::as_str)
    }

    /// Instance ids in ascending order.
    pub fn instance_ids(&self) -> Vec<u32> {
        self.classes.keys().copied().collect()
    }

    pub fn instance_count(&self) -> usize {
        self.classes.len()
    }

    pub fn areas(&self) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        for &l in &self.labels {
            if l != 0 {
                *out.entry(l).or_insert(0) += 1;
            }
        }
        out
    }

    /// Renames instance ids through `f`, which must be injective.
    pub fn relabeled(&self, f: impl Fn(u32) -> u32) -> Self {
        let labels = self.labels.iter().map(|&l| if l == 0 { 0 } else { f(l) }).collect();
        let classes = self.classes.iter().map(|(&k, v)| (f(k), v.clone())).collect();
        Self::new(self.width, self.height, labels, classes).expect("relabeling preserves classes")
    }
}

/// Replaces every class through `mapping`; instance geometry is untouched.
pub fn class_remap(map: &InstanceMap, mapping: &BTreeMap<ClassLabel, ClassLabel>) -> Result<InstanceMap, MetricsError> {
    let mut classes = BTreeMap::new();
    for (&id, c) in &map.classes {
        let to = mapping
            .get(c)
            .ok_or_else(|| MetricsError::UnmappedClass(c.clone()))?;
        classes.insert(id, to.clone());
    }
    Ok(InstanceMap {
        classes,
        ..map.clone()
    })
}

/// Areas and pairwise pixel intersections between two instance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapTable {
    pub gt_area: BTreeMap<u32, u64>,
    pub pred_area: BTreeMap<u32, u64>,
    /// Non-zero intersections keyed by `(gt_id, pred_id)`.
    pub intersections: BTreeMap<(u32, u32), u64>,
    /// Foreground pixels in both maps.
    pub fg_both: u64,
    /// Foreground in prediction only.
    pub fg_pred_only: u64,
    /// Foreground in ground truth only.
    pub fg_gt_only: u64,
}

impl OverlapTable {
    pub fn new(gt: &InstanceMap, pred: &InstanceMap) -> Result<Self, MetricsError> {
        if gt.dimensions() != pred.dimensions() {
            return Err(MetricsError::DimensionMismatch {
                gt: gt.dimensions(),
                pred: pred.dimensions(),
            });
        }
        let mut intersections = BTreeMap::new();
        let (mut both, mut pred_only, mut gt_only) = (0, 0, 0);
        for (&g, &p) in gt.labels.iter().zip(&pred.labels) {
            match (g != 0, p != 0) {
                (true, true) => {
                    both += 1;
                    *intersections.entry((g, p)).or_insert(0) += 1;
                }
                (true, false) => gt_only += 1,
                (false, true) => pred_only += 1,
                (false, false) => {}
            }
        }
        Ok(Self {
            gt_area: gt.areas(),
            pred_area: pred.areas(),
            intersections,
            fg_both: both,
            fg_pred_only: pred_only,
            fg_gt_only: gt_only,
        })
    }

    pub fn intersection(&self, g: u32, p: u32) -> u64 {
        self.intersections.get(&(g, p)).copied().unwrap_or(0)
    }

    pub fn union(&self, g: u32, p: u32) -> u64 {
        self.gt_area[&g] + self.pred_area[&p] - self.intersection(g, p)
    }

    pub fn iou(&self, g: u32, p: u32) -> f64 {
        let i = self.intersection(g, p);
        if i == 0 {
            return 0.0;
        }
        i as f64 / self.union(g, p) as f64
    }

    /// Predictions overlapping ground-truth instance `g`, ascending by id.
    pub fn overlapping_preds(&self, g: u32) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.intersections
            .range((g, 0)..=(g, u32::MAX))
            .map(|(&(_, p), &n)| (p, n))
    }
}
