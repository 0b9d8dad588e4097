use serde::{Deserialize, Serialize};

use super::matching::MatchLedger;

/// Confusion counts for one class `t` at the three evaluation levels.
///
/// - classification (`c_*`): matched pairs only.
/// - integrated (`dc_*`): matched pairs plus spurious predictions (whose
///   effective ground truth is "none") and missed ground truth. A missed
///   instance only counts as FN for its own class.
/// - replication (`dcr_*`): matched pairs only; TN counts correctly
///   classified pairs of other classes. Detection errors enter the
///   F-score through the ledger's global FP_d / FN_d.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub det_tp: u64,
    pub det_fn: u64,
    pub c_tp: u64,
    pub c_tn: u64,
    pub c_fp: u64,
    pub c_fn: u64,
    pub dc_tp: u64,
    pub dc_tn: u64,
    pub dc_fp: u64,
    pub dc_fn: u64,
    pub dcr_tp: u64,
    pub dcr_tn: u64,
    pub dcr_fp: u64,
    pub dcr_fn: u64,
}

impl ClassCounts {
    pub fn from_ledger(ledger: &MatchLedger, t: &str) -> Self {
        let mut c = ClassCounts::default();
        for p in &ledger.pairs {
            let (g, q) = (p.gt_class == t, p.pred_class == t);
            match (g, q) {
                (true, true) => {
                    c.det_tp += 1;
                    c.c_tp += 1;
                    c.dc_tp += 1;
                    c.dcr_tp += 1;
                }
                (true, false) => {
                    c.det_tp += 1;
                    c.c_fn += 1;
                    c.dc_fn += 1;
                    c.dcr_fn += 1;
                }
                (false, true) => {
                    c.c_fp += 1;
                    c.dc_fp += 1;
                    c.dcr_fp += 1;
                }
                (false, false) => {
                    c.c_tn += 1;
                    c.dc_tn += 1;
                    if p.gt_class == p.pred_class {
                        c.dcr_tn += 1;
                    }
                }
            }
        }
        for u in &ledger.unmatched_pred {
            if u.class == t {
                c.dc_fp += 1;
            } else {
                c.dc_tn += 1;
            }
        }
        for u in &ledger.unmatched_gt {
            if u.class == t {
                c.det_fn += 1;
                c.dc_fn += 1;
            }
        }
        c
    }

    pub fn add(&mut self, o: &ClassCounts) {
        self.det_tp += o.det_tp;
        self.det_fn += o.det_fn;
        self.c_tp += o.c_tp;
        self.c_tn += o.c_tn;
        self.c_fp += o.c_fp;
        self.c_fn += o.c_fn;
        self.dc_tp += o.dc_tp;
        self.dc_tn += o.dc_tn;
        self.dc_fp += o.dc_fp;
        self.dc_fn += o.dc_fn;
        self.dcr_tp += o.dcr_tp;
        self.dcr_tn += o.dcr_tn;
        self.dcr_fp += o.dcr_fp;
        self.dcr_fn += o.dcr_fn;
    }

    pub fn detection_recall(&self) -> Option<f64> {
        frac(self.det_tp as f64, (self.det_tp + self.det_fn) as f64)
    }

    /// All absent when no matched pair involves the class.
    pub fn classification_scores(&self) -> ClassScores {
        if self.c_tp + self.c_fp + self.c_fn == 0 {
            return ClassScores::default();
        }
        ClassScores::from_confusion(self.c_tp, self.c_tn, self.c_fp, self.c_fn)
    }

    pub fn integrated_scores(&self) -> ClassScores {
        ClassScores::from_confusion(self.dc_tp, self.dc_tn, self.dc_fp, self.dc_fn)
    }

    pub fn replication_scores(&self, fp_d: u64, fn_d: u64, a: &ReplicationAlphas) -> ReplicationScores {
        let tpn = (self.dcr_tp + self.dcr_tn) as f64;
        let (fp_dcr, fn_dcr) = (self.dcr_fp as f64, self.dcr_fn as f64);
        let (fp_d, fn_d) = (fp_d as f64, fn_d as f64);
        let f_den = 2.0 * tpn + a.fp_dcr * fp_dcr + a.fn_dcr * fn_dcr + a.fp_d * fp_d + a.fn_d * fn_d;
        let fp = 2.0 * fp_dcr + fp_d;
        let fn_ = 2.0 * fn_dcr + fn_d;
        ReplicationScores {
            f_dcr: frac(2.0 * tpn, f_den),
            precision_dcr: frac(tpn, tpn + fp),
            recall_dcr: frac(tpn, tpn + fn_),
        }
    }
}

fn frac(num: f64, den: f64) -> Option<f64> {
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Accuracy, precision, recall and F1; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassScores {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassScores {
    pub fn from_confusion(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
        Self {
            accuracy: frac(tp + tn, tp + tn + fp + fn_),
            precision: frac(tp, tp + fp),
            recall: frac(tp, tp + fn_),
            f1: frac(tp, tp + 0.5 * (fp + fn_)),
        }
    }
}

/// Weights of the replication F-score denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationAlphas {
    pub fp_dcr: f64,
    pub fn_dcr: f64,
    pub fp_d: f64,
    pub fn_d: f64,
}

impl Default for ReplicationAlphas {
    fn default() -> Self {
        Self {
            fp_dcr: 2.0,
            fn_dcr: 2.0,
            fp_d: 1.0,
            fn_d: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ReplicationScores {
    pub f_dcr: Option<f64>,
    pub precision_dcr: Option<f64>,
    pub recall_dcr: Option<f64>,
}

pub fn classification_metrics(ledger: &MatchLedger, t: &str) -> ClassScores {
    ClassCounts::from_ledger(ledger, t).classification_scores()
}

pub fn integrated_metrics(ledger: &MatchLedger, t: &str) -> ClassScores {
    ClassCounts::from_ledger(ledger, t).integrated_scores()
}

pub fn replication_fscore(ledger: &MatchLedger, t: &str, alphas: &ReplicationAlphas) -> ReplicationScores {
    ClassCounts::from_ledger(ledger, t).replication_scores(ledger.fp_d(), ledger.fn_d(), alphas)
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f1_from_pr(precision: f64, recall: f64) -> Option<f64> {
    frac(2.0 * precision * recall, precision + recall)
}
