use std::collections::BTreeMap;

use serde::ser::{Serialize, SerializeMap, Serializer};
use serde_json::{json, Value};

use super::classification::{ClassCounts, ClassScores, ReplicationAlphas, ReplicationScores};
use super::instance::{ClassLabel, InstanceMap, OverlapTable};
use super::matching::ledger_from_table;
use super::segmentation::{panoptic_from_counts, ratio_or, Dice2Mode};
use super::MetricsError;

/// Additive per-image counts. Merging tallies and then calling
/// [`report`](Self::report) yields dataset-level ratios.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTally {
    pub images: usize,
    pub dice_tp: u64,
    pub dice_fp: u64,
    pub dice_fn: u64,
    pub dice2_num: u64,
    pub dice2_den: u64,
    pub dice2_per_pair_sum: f64,
    pub aji_inter: u64,
    pub aji_union: u64,
    pub aji_plus_inter: u64,
    pub aji_plus_union: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
    pub classes: BTreeMap<ClassLabel, ClassCounts>,
}

impl MetricsTally {
    /// Counts for one image pair. `classes` lists the labels reported per
    /// class; other labels still take part in matching.
    pub fn from_maps(
        gt: &InstanceMap,
        pred: &InstanceMap,
        classes: &[ClassLabel],
        iou_threshold: f64,
    ) -> Result<Self, MetricsError> {
        let table = OverlapTable::new(gt, pred)?;
        let ledger = ledger_from_table(&table, gt, pred, iou_threshold);
        let (dice_tp, dice_fp, dice_fn) = table.dice_counts();
        let (aji_inter, aji_union) = table.aji_sums();
        let (aji_plus_inter, aji_plus_union) = table.aji_plus_sums();
        Ok(Self {
            images: 1,
            dice_tp,
            dice_fp,
            dice_fn,
            dice2_num: ledger.pairs.iter().map(|p| 2 * p.intersection).sum(),
            dice2_den: ledger.pairs.iter().map(|p| p.gt_area + p.pred_area).sum(),
            dice2_per_pair_sum: ledger
                .pairs
                .iter()
                .map(|p| 2.0 * p.intersection as f64 / (p.gt_area + p.pred_area) as f64)
                .sum(),
            aji_inter,
            aji_union,
            aji_plus_inter,
            aji_plus_union,
            tp: ledger.pairs.len() as u64,
            fp: ledger.fp_d(),
            fn_: ledger.fn_d(),
            iou_sum: ledger.pairs.iter().map(|p| p.iou).sum(),
            classes: classes
                .iter()
                .map(|c| (c.clone(), ClassCounts::from_ledger(&ledger, c)))
                .collect(),
        })
    }

    pub fn merge(&mut self, o: &MetricsTally) {
        self.images += o.images;
        self.dice_tp += o.dice_tp;
        self.dice_fp += o.dice_fp;
        self.dice_fn += o.dice_fn;
        self.dice2_num += o.dice2_num;
        self.dice2_den += o.dice2_den;
        self.dice2_per_pair_sum += o.dice2_per_pair_sum;
        self.aji_inter += o.aji_inter;
        self.aji_union += o.aji_union;
        self.aji_plus_inter += o.aji_plus_inter;
        self.aji_plus_union += o.aji_plus_union;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.iou_sum += o.iou_sum;
        for (k, v) in &o.classes {
            self.classes.entry(k.clone()).or_default().add(v);
        }
    }

    pub fn report(&self, mode: Dice2Mode, alphas: &ReplicationAlphas) -> MetricsReport {
        let no_instances = self.tp + self.fp + self.fn_ == 0;
        let dice2 = if no_instances {
            1.0
        } else {
            match mode {
                Dice2Mode::RatioOfSums => ratio_or(self.dice2_num as f64, self.dice2_den as f64, 0.0),
                Dice2Mode::MeanPerNucleus => ratio_or(self.dice2_per_pair_sum, self.tp as f64, 0.0),
            }
        };
        let pan = panoptic_from_counts(self.tp, self.fp, self.fn_, self.iou_sum);
        let per_class = self
            .classes
            .iter()
            .map(|(k, c)| {
                (
                    k.clone(),
                    ClassReport {
                        recall_d: c.detection_recall(),
                        classification: c.classification_scores(),
                        integrated: c.integrated_scores(),
                        replication: c.replication_scores(self.fp, self.fn_, alphas),
                    },
                )
            })
            .collect();
        MetricsReport {
            images: self.images,
            dice: ratio_or(
                2.0 * self.dice_tp as f64,
                (2 * self.dice_tp + self.dice_fp + self.dice_fn) as f64,
                1.0,
            ),
            dice2,
            aji: ratio_or(self.aji_inter as f64, self.aji_union as f64, 1.0),
            aji_plus: ratio_or(self.aji_plus_inter as f64, self.aji_plus_union as f64, 1.0),
            dq: pan.dq,
            sq: pan.sq,
            pq: pan.pq,
            per_class,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassReport {
    pub recall_d: Option<f64>,
    pub classification: ClassScores,
    pub integrated: ClassScores,
    pub replication: ReplicationScores,
}

/// Dataset-level metrics. Serializes with table-style row names, values
/// rounded to 4 decimals and `null` for undefined ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub images: usize,
    pub dice: f64,
    pub dice2: f64,
    pub aji: f64,
    pub aji_plus: f64,
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
    pub per_class: BTreeMap<ClassLabel, ClassReport>,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(round4(x)))
}

impl MetricsReport {
    /// Row name → value for one class, in table order.
    pub fn class_rows(c: &ClassReport) -> Vec<(&'static str, Option<f64>)> {
        let (k, i, r) = (&c.classification, &c.integrated, &c.replication);
        vec![
            ("Recall_d", c.recall_d),
            ("Accuracy_c", k.accuracy),
            ("Precision_c", k.precision),
            ("Recall_c", k.recall),
            ("F1_c", k.f1),
            ("Accuracy_dc", i.accuracy),
            ("Precision_dc", i.precision),
            ("Recall_dc", i.recall),
            ("F1_dc", i.f1),
            ("F_dcr", r.f_dcr),
            ("Precision_dcr", r.precision_dcr),
            ("Recall_dcr", r.recall_dcr),
        ]
    }

    pub fn segmentation_rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("Dice", self.dice),
            ("Dice2", self.dice2),
            ("AJI", self.aji),
            ("AJI+", self.aji_plus),
            ("DQ", self.dq),
            ("SQ", self.sq),
            ("PQ", self.pq),
        ]
    }
}

impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let seg: serde_json::Map<String, Value> = self
            .segmentation_rows()
            .into_iter()
            .map(|(k, v)| (k.to_string(), json!(round4(v))))
            .collect();
        let classes: serde_json::Map<String, Value> = self
            .per_class
            .iter()
            .map(|(name, c)| {
                let rows: serde_json::Map<String, Value> = Self::class_rows(c)
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), opt(v)))
                    .collect();
                (name.clone(), Value::Object(rows))
            })
            .collect();
        let mut m = s.serialize_map(Some(4))?;
        m.serialize_entry("images", &self.images)?;
        m.serialize_entry("segmentation", &seg)?;
        m.serialize_entry("classes", &classes)?;
        m.serialize_entry(
            "conventions",
            "ratios over counts summed across images; empty ground truth and prediction score 1.0, one side empty scores 0.0; null marks an undefined ratio",
        )?;
        m.end()
    }
}
