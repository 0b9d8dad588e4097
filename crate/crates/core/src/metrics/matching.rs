use serde::Serialize;

use super::instance::{ClassLabel, InstanceMap, OverlapTable};
use super::MetricsError;

/// Pairs need IoU strictly above this; at 0.5 every instance can satisfy it
/// with at most one partner.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub gt_id: u32,
    pub pred_id: u32,
    pub iou: f64,
    pub intersection: u64,
    pub gt_area: u64,
    pub pred_area: u64,
    pub gt_class: ClassLabel,
    pub pred_class: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnmatchedInstance {
    pub id: u32,
    pub area: u64,
    pub class: ClassLabel,
}

/// One-to-one pairing of ground-truth and predicted instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchLedger {
    pub threshold: f64,
    /// Sorted by ground-truth id.
    pub pairs: Vec<MatchedPair>,
    /// Missed ground truth (FN_d), ascending id.
    pub unmatched_gt: Vec<UnmatchedInstance>,
    /// Spurious predictions (FP_d), ascending id.
    pub unmatched_pred: Vec<UnmatchedInstance>,
}

impl MatchLedger {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.unmatched_gt.is_empty() && self.unmatched_pred.is_empty()
    }

    pub fn fp_d(&self) -> u64 {
        self.unmatched_pred.len() as u64
    }

    pub fn fn_d(&self) -> u64 {
        self.unmatched_gt.len() as u64
    }
}

/// Pairs every `(g, p)` with IoU above `iou_threshold`. Below 0.5 several
/// partners can qualify; those conflicts resolve greedily by descending IoU
/// (ties by ascending ids).
pub fn match_instances(gt: &InstanceMap, pred: &InstanceMap, iou_threshold: f64) -> Result<MatchLedger, MetricsError> {
    let table = OverlapTable::new(gt, pred)?;
    Ok(ledger_from_table(&table, gt, pred, iou_threshold))
}

pub(crate) fn ledger_from_table(
    table: &OverlapTable,
    gt: &InstanceMap,
    pred: &InstanceMap,
    iou_threshold: f64,
) -> MatchLedger {
    let mut candidates: Vec<(u32, u32, f64)> = table
        .intersections
        .keys()
        .map(|&(g, p)| (g, p, table.iou(g, p)))
        .filter(|&(_, _, iou)| iou > iou_threshold)
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut gt_taken = std::collections::BTreeSet::new();
    let mut pred_taken = std::collections::BTreeSet::new();
    let mut pairs = Vec::new();
    for (g, p, iou) in candidates {
        if gt_taken.contains(&g) || pred_taken.contains(&p) {
            continue;
        }
        gt_taken.insert(g);
        pred_taken.insert(p);
        pairs.push(MatchedPair {
            gt_id: g,
            pred_id: p,
            iou,
            intersection: table.intersection(g, p),
            gt_area: table.gt_area[&g],
            pred_area: table.pred_area[&p],
            gt_class: gt.class_of(g).expect("validated map").to_string(),
            pred_class: pred.class_of(p).expect("validated map").to_string(),
        });
    }
    pairs.sort_by_key(|p| p.gt_id);

    let unmatched = |areas: &std::collections::BTreeMap<u32, u64>,
                     taken: &std::collections::BTreeSet<u32>,
                     map: &InstanceMap| {
        areas
            .iter()
            .filter(|(id, _)| !taken.contains(id))
            .map(|(&id, &area)| UnmatchedInstance {
                id,
                area,
                class: map.class_of(id).expect("validated map").to_string(),
            })
            .collect::<Vec<_>>()
    };
    MatchLedger {
        threshold: iou_threshold,
        unmatched_gt: unmatched(&table.gt_area, &gt_taken, gt),
        unmatched_pred: unmatched(&table.pred_area, &pred_taken, pred),
        pairs,
    }
}
