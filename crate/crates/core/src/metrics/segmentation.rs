use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::instance::{InstanceMap, OverlapTable};
use super::matching::MatchLedger;
use super::MetricsError;

/// Aggregation used by [`dice2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dice2Mode {
    /// `Σ 2|G∩P| / Σ (|G| + |P|)` over matched pairs.
    #[default]
    RatioOfSums,
    /// Mean of the per-pair Dice coefficients.
    MeanPerNucleus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Panoptic {
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
}

pub(crate) fn ratio_or(num: f64, den: f64, empty: f64) -> f64 {
    if den == 0.0 {
        empty
    } else {
        num / den
    }
}

impl OverlapTable {
    /// `(tp, fp, fn)` over binarized foreground.
    pub fn dice_counts(&self) -> (u64, u64, u64) {
        (self.fg_both, self.fg_pred_only, self.fg_gt_only)
    }

    /// `(Σ|G∩P|, Σ|G∪P| + Σ unused |P|)` with ground truth visited in
    /// ascending id order; each prediction can be claimed once.
    pub fn aji_sums(&self) -> (u64, u64) {
        let mut used = BTreeSet::new();
        let (mut inter, mut union) = (0u64, 0u64);
        for (&g, &g_area) in &self.gt_area {
            let mut best: Option<(u32, u64, u64)> = None;
            let mut best_iou = 0.0;
            for (p, i) in self.overlapping_preds(g) {
                if used.contains(&p) {
                    continue;
                }
                let u = g_area + self.pred_area[&p] - i;
                let iou = i as f64 / u as f64;
                // strict comparison keeps the smallest id on ties
                if iou > best_iou {
                    best_iou = iou;
                    best = Some((p, i, u));
                }
            }
            match best {
                Some((p, i, u)) => {
                    used.insert(p);
                    inter += i;
                    union += u;
                }
                None => union += g_area,
            }
        }
        union += self
            .pred_area
            .iter()
            .filter(|(p, _)| !used.contains(p))
            .map(|(_, a)| a)
            .sum::<u64>();
        (inter, union)
    }

    /// Like [`aji_sums`](Self::aji_sums) but with a globally one-to-one
    /// assignment built greedily by descending pairwise Jaccard index.
    pub fn aji_plus_sums(&self) -> (u64, u64) {
        let mut cand: Vec<(u32, u32, f64)> = self
            .intersections
            .keys()
            .map(|&(g, p)| (g, p, self.iou(g, p)))
            .collect();
        cand.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut g_used = BTreeSet::new();
        let mut p_used = BTreeSet::new();
        let (mut inter, mut union) = (0u64, 0u64);
        for (g, p, _) in cand {
            if g_used.contains(&g) || p_used.contains(&p) {
                continue;
            }
            g_used.insert(g);
            p_used.insert(p);
            inter += self.intersection(g, p);
            union += self.union(g, p);
        }
        union += self
            .gt_area
            .iter()
            .filter(|(g, _)| !g_used.contains(g))
            .map(|(_, a)| a)
            .sum::<u64>();
        union += self
            .pred_area
            .iter()
            .filter(|(p, _)| !p_used.contains(p))
            .map(|(_, a)| a)
            .sum::<u64>();
        (inter, union)
    }
}

/// Foreground Dice; 1.0 when both maps are empty.
pub fn dice(gt: &InstanceMap, pred: &InstanceMap) -> Result<f64, MetricsError> {
    let (tp, fp, fn_) = OverlapTable::new(gt, pred)?.dice_counts();
    Ok(ratio_or(2.0 * tp as f64, (2 * tp + fp + fn_) as f64, 1.0))
}

/// Per-nucleus Dice over matched pairs; 0 without pairs unless both maps
/// are empty.
pub fn dice2(ledger: &MatchLedger, mode: Dice2Mode) -> f64 {
    if ledger.is_empty() {
        return 1.0;
    }
    if ledger.pairs.is_empty() {
        return 0.0;
    }
    match mode {
        Dice2Mode::RatioOfSums => {
            let num: u64 = ledger.pairs.iter().map(|p| 2 * p.intersection).sum();
            let den: u64 = ledger.pairs.iter().map(|p| p.gt_area + p.pred_area).sum();
            num as f64 / den as f64
        }
        Dice2Mode::MeanPerNucleus => {
            let s: f64 = ledger
                .pairs
                .iter()
                .map(|p| 2.0 * p.intersection as f64 / (p.gt_area + p.pred_area) as f64)
                .sum();
            s / ledger.pairs.len() as f64
        }
    }
}

pub fn aji(gt: &InstanceMap, pred: &InstanceMap) -> Result<f64, MetricsError> {
    let (i, u) = OverlapTable::new(gt, pred)?.aji_sums();
    Ok(ratio_or(i as f64, u as f64, 1.0))
}

pub fn aji_plus(gt: &InstanceMap, pred: &InstanceMap) -> Result<f64, MetricsError> {
    let (i, u) = OverlapTable::new(gt, pred)?.aji_plus_sums();
    Ok(ratio_or(i as f64, u as f64, 1.0))
}

/// Detection, segmentation and panoptic quality from a ledger.
pub fn panoptic(ledger: &MatchLedger) -> Panoptic {
    panoptic_from_counts(
        ledger.pairs.len() as u64,
        ledger.fp_d(),
        ledger.fn_d(),
        ledger.pairs.iter().map(|p| p.iou).sum(),
    )
}

pub(crate) fn panoptic_from_counts(tp: u64, fp: u64, fn_: u64, iou_sum: f64) -> Panoptic {
    if tp + fp + fn_ == 0 {
        return Panoptic {
            dq: 1.0,
            sq: 1.0,
            pq: 1.0,
        };
    }
    let dq = tp as f64 / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64);
    let sq = ratio_or(iou_sum, tp as f64, 0.0);
    Panoptic { dq, sq, pq: dq * sq }
}

/// `TP_d / (TP_d + FN_d)` over ground truth of class `t`; `None` when the
/// ground truth has no instance of that class.
pub fn detection_recall(ledger: &MatchLedger, t: &str) -> Option<f64> {
    let tp = ledger.pairs.iter().filter(|p| p.gt_class == t).count();
    let fn_ = ledger.unmatched_gt.iter().filter(|u| u.class == t).count();
    if tp + fn_ == 0 {
        None
    } else {
        Some(tp as f64 / (tp + fn_) as f64)
    }
}
