//! Brute-force reference for the instance metrics, written over explicit
//! pixel sets with exhaustive matching. Shared by the metric and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilscope_core::metrics::InstanceMap;

pub type Pixels = BTreeSet<(u32, u32)>;

#[derive(Debug, Clone)]
pub struct Inst {
    pub id: u32,
    pub class: String,
    pub px: Pixels,
}

pub fn instances(m: &InstanceMap) -> Vec<Inst> {
    let mut by: BTreeMap<u32, Pixels> = BTreeMap::new();
    for (i, &l) in m.labels().iter().enumerate() {
        if l != 0 {
            by.entry(l)
                .or_default()
                .insert((i as u32 % m.width(), i as u32 / m.width()));
        }
    }
    by.into_iter()
        .map(|(id, px)| Inst {
            id,
            class: m.class_of(id).unwrap().to_string(),
            px,
        })
        .collect()
}

fn inter(a: &Pixels, b: &Pixels) -> usize {
    a.intersection(b).count()
}

fn union(a: &Pixels, b: &Pixels) -> usize {
    a.union(b).count()
}

fn iou(a: &Pixels, b: &Pixels) -> f64 {
    inter(a, b) as f64 / union(a, b) as f64
}

/// Maximum-cardinality matching over edges with IoU > 0.5, by exhaustive
/// search. Returns index pairs into the instance lists.
pub fn exhaustive_matching(gt: &[Inst], pred: &[Inst]) -> Vec<(usize, usize)> {
    fn go(i: usize, gt: &[Inst], pred: &[Inst], used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, best: &mut Vec<(usize, usize)>) {
        if i == gt.len() {
            if cur.len() > best.len() {
                *best = cur.clone();
            }
            return;
        }
        go(i + 1, gt, pred, used, cur, best);
        for j in 0..pred.len() {
            if !used[j] && iou(&gt[i].px, &pred[j].px) > 0.5 {
                used[j] = true;
                cur.push((i, j));
                go(i + 1, gt, pred, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = Vec::new();
    go(0, gt, pred, &mut vec![false; pred.len()], &mut Vec::new(), &mut best);
    best
}

#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub dice: f64,
    pub dice2: f64,
    pub aji: f64,
    pub aji_plus: f64,
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub per_class: BTreeMap<String, ClassRef>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassRef {
    pub recall_d: Option<f64>,
    /// accuracy, precision, recall, f1
    pub c: [Option<f64>; 4],
    pub dc: [Option<f64>; 4],
    /// f, precision, recall
    pub dcr: [Option<f64>; 3],
}

fn div(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| a / b)
}

fn scores(tp: f64, tn: f64, fp: f64, fn_: f64) -> [Option<f64>; 4] {
    [
        div(tp + tn, tp + tn + fp + fn_),
        div(tp, tp + fp),
        div(tp, tp + fn_),
        div(tp, tp + 0.5 * (fp + fn_)),
    ]
}

pub fn reference(gt_map: &InstanceMap, pred_map: &InstanceMap, classes: &[&str]) -> Reference {
    let gt = instances(gt_map);
    let pred = instances(pred_map);
    let fg_g: Pixels = gt.iter().flat_map(|i| i.px.iter().copied()).collect();
    let fg_p: Pixels = pred.iter().flat_map(|i| i.px.iter().copied()).collect();
    let both_empty = gt.is_empty() && pred.is_empty();

    let dice = if fg_g.is_empty() && fg_p.is_empty() {
        1.0
    } else {
        2.0 * inter(&fg_g, &fg_p) as f64 / (fg_g.len() + fg_p.len()) as f64
    };

    let m = exhaustive_matching(&gt, &pred);
    let (tp, fp, fn_) = (m.len(), pred.len() - m.len(), gt.len() - m.len());
    let dice2 = if both_empty {
        1.0
    } else if m.is_empty() {
        0.0
    } else {
        let num: usize = m.iter().map(|&(g, p)| 2 * inter(&gt[g].px, &pred[p].px)).sum();
        let den: usize = m.iter().map(|&(g, p)| gt[g].px.len() + pred[p].px.len()).sum();
        num as f64 / den as f64
    };

    // AJI: ground truth in ascending id; each prediction claimed once
    let aji = {
        let mut used = vec![false; pred.len()];
        let (mut i_sum, mut u_sum) = (0usize, 0usize);
        for g in &gt {
            let mut best: Option<(usize, f64)> = None;
            for (j, p) in pred.iter().enumerate() {
                if used[j] || inter(&g.px, &p.px) == 0 {
                    continue;
                }
                let v = iou(&g.px, &p.px);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    used[j] = true;
                    i_sum += inter(&g.px, &pred[j].px);
                    u_sum += union(&g.px, &pred[j].px);
                }
                None => u_sum += g.px.len(),
            }
        }
        u_sum += pred.iter().zip(&used).filter(|(_, &u)| !u).map(|(p, _)| p.px.len()).sum::<usize>();
        if u_sum == 0 {
            1.0
        } else {
            i_sum as f64 / u_sum as f64
        }
    };

    let aji_plus = {
        let mut pairs = Vec::new();
        for (a, g) in gt.iter().enumerate() {
            for (b, p) in pred.iter().enumerate() {
                if inter(&g.px, &p.px) > 0 {
                    pairs.push((iou(&g.px, &p.px), g.id, p.id, a, b));
                }
            }
        }
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let (mut gu, mut pu) = (vec![false; gt.len()], vec![false; pred.len()]);
        let (mut i_sum, mut u_sum) = (0usize, 0usize);
        for (_, _, _, a, b) in pairs {
            if gu[a] || pu[b] {
                continue;
            }
            gu[a] = true;
            pu[b] = true;
            i_sum += inter(&gt[a].px, &pred[b].px);
            u_sum += union(&gt[a].px, &pred[b].px);
        }
        u_sum += gt.iter().zip(&gu).filter(|(_, &u)| !u).map(|(g, _)| g.px.len()).sum::<usize>();
        u_sum += pred.iter().zip(&pu).filter(|(_, &u)| !u).map(|(p, _)| p.px.len()).sum::<usize>();
        if u_sum == 0 {
            1.0
        } else {
            i_sum as f64 / u_sum as f64
        }
    };

    let (dq, sq) = if tp + fp + fn_ == 0 {
        (1.0, 1.0)
    } else {
        let dq = tp as f64 / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64);
        let sq = if tp == 0 {
            0.0
        } else {
            m.iter().map(|&(g, p)| iou(&gt[g].px, &pred[p].px)).sum::<f64>() / tp as f64
        };
        (dq, sq)
    };

    let matched_g: BTreeSet<usize> = m.iter().map(|x| x.0).collect();
    let matched_p: BTreeSet<usize> = m.iter().map(|x| x.1).collect();
    let mut per_class = BTreeMap::new();
    for &t in classes {
        let pairs: Vec<(&str, &str)> = m
            .iter()
            .map(|&(g, p)| (gt[g].class.as_str(), pred[p].class.as_str()))
            .collect();
        let spurious: Vec<&str> = (0..pred.len())
            .filter(|j| !matched_p.contains(j))
            .map(|j| pred[j].class.as_str())
            .collect();
        let missed: Vec<&str> = (0..gt.len())
            .filter(|i| !matched_g.contains(i))
            .map(|i| gt[i].class.as_str())
            .collect();

        let det_tp = pairs.iter().filter(|p| p.0 == t).count();
        let det_fn = missed.iter().filter(|&&c| c == t).count();

        let c_tp = pairs.iter().filter(|p| p.0 == t && p.1 == t).count() as f64;
        let c_fn = pairs.iter().filter(|p| p.0 == t && p.1 != t).count() as f64;
        let c_fp = pairs.iter().filter(|p| p.0 != t && p.1 == t).count() as f64;
        let c_tn = pairs.iter().filter(|p| p.0 != t && p.1 != t).count() as f64;
        let c = if c_tp + c_fp + c_fn == 0.0 {
            [None; 4]
        } else {
            scores(c_tp, c_tn, c_fp, c_fn)
        };

        // spurious predictions carry effective ground truth "none"
        let eff: Vec<(&str, &str)> = pairs.iter().copied().chain(spurious.iter().map(|&c| ("none", c))).collect();
        let dc_tp = eff.iter().filter(|p| p.0 == t && p.1 == t).count() as f64;
        let dc_tn = eff.iter().filter(|p| p.0 != t && p.1 != t).count() as f64;
        let dc_fp = eff.iter().filter(|p| p.0 != t && p.1 == t).count() as f64;
        let dc_fn = c_fn + det_fn as f64;
        let dc = scores(dc_tp, dc_tn, dc_fp, dc_fn);

        let tn_dcr = pairs.iter().filter(|p| p.0 != t && p.0 == p.1).count() as f64;
        let tpn = c_tp + tn_dcr;
        let (fpd, fnd) = (fp as f64, fn_ as f64);
        let dcr = [
            div(2.0 * tpn, 2.0 * tpn + 2.0 * c_fp + 2.0 * c_fn + fpd + fnd),
            div(tpn, tpn + 2.0 * c_fp + fpd),
            div(tpn, tpn + 2.0 * c_fn + fnd),
        ];
        per_class.insert(
            t.to_string(),
            ClassRef {
                recall_d: div(det_tp as f64, (det_tp + det_fn) as f64),
                c,
                dc,
                dcr,
            },
        );
    }

    Reference {
        dice,
        dice2,
        aji,
        aji_plus,
        dq,
        sq,
        pq: dq * sq,
        tp,
        fp,
        fn_,
        per_class,
    }
}

pub const CLASSES: [&str; 3] = ["inflammatory", "cancer", "other"];

/// Paints up to `max_inst` random rectangles or blobs into a label map.
fn paint_random(rng: &mut ChaCha8Rng, w: u32, h: u32, max_inst: u32, labels: &mut [u32], classes: &mut BTreeMap<u32, String>, first_id: u32) {
    let n = rng.random_range(0..=max_inst);
    for k in 0..n {
        let id = first_id + k * rng.random_range(1..4);
        let (rw, rh) = (rng.random_range(1..=w.min(12)), rng.random_range(1..=h.min(12)));
        let (x0, y0) = (rng.random_range(0..=w - rw), rng.random_range(0..=h - rh));
        let round = rng.random_bool(0.5);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let (dx, dy) = (2 * (x - x0) as i32 - rw as i32 + 1, 2 * (y - y0) as i32 - rh as i32 + 1);
                let inside = !round || (dx * dx) as f64 / (rw * rw) as f64 + (dy * dy) as f64 / (rh * rh) as f64 <= 1.0;
                if inside {
                    labels[(y * w + x) as usize] = id;
                }
            }
        }
        classes.insert(id, CLASSES[rng.random_range(0..3)].to_string());
    }
}

/// Random `(gt, pred)` pair, at most 32×32 with at most 6 instances and 3
/// classes per map. Predictions are usually perturbed copies of the ground
/// truth so that matches occur.
pub fn random_pair(seed: u64) -> (InstanceMap, InstanceMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(2..=32), rng.random_range(2..=32));
    let mut gl = vec![0u32; (w * h) as usize];
    let mut gc = BTreeMap::new();
    paint_random(&mut rng, w, h, 6, &mut gl, &mut gc, 1);
    let gt = InstanceMap::new(w, h, gl.clone(), gc.clone()).unwrap();

    let mut pl = vec![0u32; (w * h) as usize];
    let mut pc = BTreeMap::new();
    if rng.random_bool(0.2) {
        paint_random(&mut rng, w, h, 6, &mut pl, &mut pc, 1);
    } else {
        // perturbed copy: shift, erode one edge, drop, reclassify, relabel
        let (sx, sy) = (rng.random_range(-1i32..=1), rng.random_range(-1i32..=1));
        let shift = rng.random_bool(0.3);
        let offset = rng.random_range(0..50);
        let mut keep = BTreeMap::new();
        for (&id, c) in gt.classes() {
            if rng.random_bool(0.85) {
                let class = if rng.random_bool(0.25) {
                    CLASSES[rng.random_range(0..3)].to_string()
                } else {
                    c.clone()
                };
                keep.insert(id, (id + offset, class));
            }
        }
        for y in 0..h {
            for x in 0..w {
                let (tx, ty) = if shift { (x as i32 + sx, y as i32 + sy) } else { (x as i32, y as i32) };
                if tx < 0 || ty < 0 || tx >= w as i32 || ty >= h as i32 {
                    continue;
                }
                let g = gl[(y * w + x) as usize];
                if let Some((nid, _)) = keep.get(&g) {
                    if rng.random_bool(0.93) {
                        pl[(ty as u32 * w + tx as u32) as usize] = *nid;
                    }
                }
            }
        }
        for (nid, c) in keep.values() {
            pc.insert(*nid, c.clone());
        }
        // occasional spurious instances
        let extra_first = 200;
        if rng.random_bool(0.4) {
            paint_random(&mut rng, w, h, 2, &mut pl, &mut pc, extra_first);
        }
    }
    pc.retain(|id, _| pl.contains(id));
    let pred = InstanceMap::new(w, h, pl, pc).unwrap();
    (gt, pred)
}

/// Adds one new prediction on pixels that are background in both maps.
/// Returns `None` when no such pixel exists.
pub fn with_spurious(gt: &InstanceMap, pred: &InstanceMap, class: &str) -> Option<InstanceMap> {
    let free = gt
        .labels()
        .iter()
        .zip(pred.labels())
        .position(|(&g, &p)| g == 0 && p == 0)?;
    let id = pred.instance_ids().last().copied().unwrap_or(0) + 1;
    let mut labels = pred.labels().to_vec();
    labels[free] = id;
    let mut classes = pred.classes().clone();
    classes.insert(id, class.to_string());
    Some(InstanceMap::new(pred.width(), pred.height(), labels, classes).unwrap())
}
