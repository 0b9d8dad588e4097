//! Survival statistics for dichotomized cohorts: Kaplan–Meier curves,
//! two-group log-rank tests, univariable Cox hazard ratios, cut-off sweeps
//! and Pearson correlation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("patient {patient_id}: time {time} is not a finite positive number of months")]
    InvalidTime { patient_id: String, time: f64 },
    #[error("no events in either group")]
    NoEvents,
    #[error("the {0} group has no events; the hazard ratio is not estimable")]
    Separation(Group),
    #[error("degenerate split: {low} low / {high} high")]
    DegenerateSplit { low: usize, high: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("the partial likelihood is monotone; the hazard ratio diverges")]
    MonotoneLikelihood,
    #[error("Newton iteration did not converge after {0} steps")]
    NonConvergence(usize),
    #[error("invalid cutoff {0:?}")]
    InvalidCutoff(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub patient_id: String,
    /// Months from diagnosis.
    pub time: f64,
    /// Disease-specific death.
    pub event: bool,
    pub score: f64,
}

impl SurvivalRecord {
    pub fn new(patient_id: impl Into<String>, time: f64, event: bool, score: f64) -> Self {
        Self {
            patient_id: patient_id.into(),
            time,
            event,
            score,
        }
    }
}

fn validate(records: &[SurvivalRecord]) -> Result<(), SurvivalError> {
    if records.is_empty() {
        return Err(SurvivalError::EmptyCohort);
    }
    for r in records {
        if !(r.time.is_finite() && r.time > 0.0) {
            return Err(SurvivalError::InvalidTime {
                patient_id: r.patient_id.clone(),
                time: r.time,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Low,
    High,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::Low => Group::High,
            Group::High => Group::Low,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Low => "low",
            Group::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KmStep {
    pub time: f64,
    /// Survival just after `time`.
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    /// One step per distinct event time, ascending.
    pub steps: Vec<KmStep>,
    /// Times of censored subjects, ascending.
    pub censored: Vec<f64>,
    pub n: usize,
}

/// Distinct times with (at risk, events, censored), ascending.
fn risk_table<'a>(records: impl IntoIterator<Item = &'a SurvivalRecord>) -> Vec<(f64, usize, usize, usize)> {
    let mut rs: Vec<(f64, bool)> = records.into_iter().map(|r| (r.time, r.event)).collect();
    rs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut at_risk = rs.len();
    let mut i = 0;
    while i < rs.len() {
        let t = rs[i].0;
        let (mut d, mut c) = (0, 0);
        while i < rs.len() && rs[i].0 == t {
            if rs[i].1 {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        out.push((t, at_risk, d, c));
        at_risk -= d + c;
    }
    out
}

/// Product-limit estimator. Subjects censored at an event time are still at
/// risk for that event.
pub fn km_curve(records: &[SurvivalRecord]) -> Result<KmCurve, SurvivalError> {
    validate(records)?;
    let mut s = 1.0;
    let mut steps = Vec::new();
    let mut censored = Vec::new();
    for (t, n, d, c) in risk_table(records) {
        if d > 0 {
            s *= 1.0 - d as f64 / n as f64;
            steps.push(KmStep {
                time: t,
                survival: s,
                at_risk: n,
                events: d,
            });
        }
        censored.extend(std::iter::repeat_n(t, c));
    }
    Ok(KmCurve {
        steps,
        censored,
        n: records.len(),
    })
}

/// Right-continuous step value at `t`.
pub fn survival_at(curve: &KmCurve, t: f64) -> f64 {
    curve
        .steps
        .iter()
        .take_while(|s| s.time <= t)
        .last()
        .map_or(1.0, |s| s.survival)
}

/// Earliest time at which survival drops to 0.5 or below.
pub fn median_survival(curve: &KmCurve) -> Option<f64> {
    curve
        .steps
        .iter()
        .find(|s| s.survival <= 0.5 + 1e-12)
        .map(|s| s.time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    pub p_value: f64,
    pub observed: [f64; 2],
    pub expected: [f64; 2],
    pub variance: f64,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi_square_p(chi: f64) -> f64 {
    ChiSquared::new(1.0).expect("valid dof").sf(chi.max(0.0))
}

pub fn logrank(a: &[SurvivalRecord], b: &[SurvivalRecord]) -> Result<LogRankResult, SurvivalError> {
    validate(a)?;
    validate(b)?;
    if !a.iter().chain(b).any(|r| r.event) {
        return Err(SurvivalError::NoEvents);
    }
    let mut all: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|r| (r.time, r.event, true))
        .chain(b.iter().map(|r| (r.time, r.event, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    let (mut n_a, mut n) = (a.len() as f64, all.len() as f64);
    let (mut o_a, mut e_a, mut v) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let (mut d, mut d_a, mut leave, mut leave_a) = (0.0, 0.0, 0.0, 0.0);
        while i < all.len() && all[i].0 == t {
            let (_, ev, in_a) = all[i];
            leave += 1.0;
            if in_a {
                leave_a += 1.0;
            }
            if ev {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            o_a += d_a;
            e_a += d * n_a / n;
            if n > 1.0 {
                v += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        n -= leave;
        n_a -= leave_a;
    }
    let total: f64 = a.iter().chain(b).filter(|r| r.event).count() as f64;
    let chi_square = if v > 0.0 { (o_a - e_a).powi(2) / v } else { 0.0 };
    Ok(LogRankResult {
        chi_square,
        p_value: chi_square_p(chi_square),
        observed: [o_a, total - o_a],
        expected: [e_a, total - e_a],
        variance: v,
    })
}

/// Log-rank test between the two groups of a labelled cohort.
pub fn logrank_groups(records: &[SurvivalRecord], groups: &[Group]) -> Result<LogRankResult, SurvivalError> {
    let (low, high) = partition(records, groups)?;
    logrank(&low, &high)
}

fn partition(
    records: &[SurvivalRecord],
    groups: &[Group],
) -> Result<(Vec<SurvivalRecord>, Vec<SurvivalRecord>), SurvivalError> {
    if records.len() != groups.len() {
        return Err(SurvivalError::LengthMismatch(records.len(), groups.len()));
    }
    let (mut low, mut high) = (Vec::new(), Vec::new());
    for (r, g) in records.iter().zip(groups) {
        match g {
            Group::Low => low.push(r.clone()),
            Group::High => high.push(r.clone()),
        }
    }
    if low.is_empty() || high.is_empty() {
        return Err(SurvivalError::DegenerateSplit {
            low: low.len(),
            high: high.len(),
        });
    }
    Ok((low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HazardEstimate {
    /// Hazard of `group` relative to `reference`.
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub beta: f64,
    pub se: f64,
    pub group: Group,
    pub reference: Group,
    pub iterations: usize,
}

const COX_TOL: f64 = 1e-9;
const COX_MAX_ITER: usize = 50;
/// A log hazard ratio this large only arises when the likelihood has no
/// finite maximum.
const COX_MAX_ABS_BETA: f64 = 20.0;

/// Efron partial log-likelihood with its first and second derivative for a
/// single binary covariate.
fn efron_terms(data: &[(f64, bool, f64)], beta: f64) -> (f64, f64, f64) {
    let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
    // data sorted by time descending so the risk set grows as we go
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < data.len() {
        let t = data[i].0;
        let (mut a0, mut a1, mut a2, mut d, mut xsum) = (0.0, 0.0, 0.0, 0usize, 0.0);
        while i < data.len() && data[i].0 == t {
            let (_, ev, x) = data[i];
            let w = (beta * x).exp();
            s0 += w;
            s1 += w * x;
            s2 += w * x * x;
            if ev {
                a0 += w;
                a1 += w * x;
                a2 += w * x * x;
                d += 1;
                xsum += x;
            }
            i += 1;
        }
        if d == 0 {
            continue;
        }
        ll += beta * xsum;
        score += xsum;
        for l in 0..d {
            let f = l as f64 / d as f64;
            let (r0, r1, r2) = (s0 - f * a0, s1 - f * a1, s2 - f * a2);
            ll -= r0.ln();
            score -= r1 / r0;
            info += r2 / r0 - (r1 / r0).powi(2);
        }
    }
    (ll, score, info)
}

/// Univariable proportional-hazards estimate of `High` relative to `Low`
/// with Efron ties, Newton iteration and a Wald 95% interval.
pub fn hazard_ratio(records: &[SurvivalRecord], group_of: impl Fn(&SurvivalRecord) -> Group) -> Result<HazardEstimate, SurvivalError> {
    let groups: Vec<Group> = records.iter().map(group_of).collect();
    hazard_ratio_groups(records, &groups, Group::Low)
}

/// As [`hazard_ratio`] with labels given per record and an explicit
/// reference group.
pub fn hazard_ratio_groups(
    records: &[SurvivalRecord],
    groups: &[Group],
    reference: Group,
) -> Result<HazardEstimate, SurvivalError> {
    if records.len() != groups.len() {
        return Err(SurvivalError::LengthMismatch(records.len(), groups.len()));
    }
    validate(records)?;
    let mut data: Vec<(f64, bool, f64)> = records
        .iter()
        .zip(groups)
        .map(|(r, &g)| (r.time, r.event, if g == reference { 0.0 } else { 1.0 }))
        .collect();
    let n1 = data.iter().filter(|d| d.2 == 1.0).count();
    if n1 == 0 || n1 == data.len() {
        return Err(SurvivalError::DegenerateSplit {
            low: data.len() - n1,
            high: n1,
        });
    }
    for (x, g) in [(0.0, reference), (1.0, reference.other())] {
        if !data.iter().any(|d| d.2 == x && d.1) {
            return Err(SurvivalError::Separation(g));
        }
    }
    data.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = efron_terms(&data, beta);
    let mut iterations = 0;
    loop {
        if iterations == COX_MAX_ITER {
            return Err(SurvivalError::NonConvergence(COX_MAX_ITER));
        }
        iterations += 1;
        let full = score / info;
        let mut step = full;
        let mut next = efron_terms(&data, beta + step);
        // halve the step if the likelihood went down by more than rounding
        while next.0 < ll - 1e-12 * ll.abs().max(1.0) && step.abs() > COX_TOL {
            step /= 2.0;
            next = efron_terms(&data, beta + step);
        }
        beta += step;
        (ll, score, info) = next;
        if beta.abs() > COX_MAX_ABS_BETA || !(info > 0.0) {
            return Err(SurvivalError::MonotoneLikelihood);
        }
        if full.abs() < COX_TOL {
            break;
        }
    }
    let se = 1.0 / info.sqrt();
    let z = Normal::standard().inverse_cdf(0.975);
    Ok(HazardEstimate {
        hr: beta.exp(),
        ci_low: (beta - z * se).exp(),
        ci_high: (beta + z * se).exp(),
        beta,
        se,
        group: reference.other(),
        reference,
        iterations,
    })
}

/// How a cohort is split into low and high groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    Median,
    Value(f64),
}

impl FromStr for Cutoff {
    type Err = SurvivalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(Cutoff::Median);
        }
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Cutoff::Value)
            .ok_or_else(|| SurvivalError::InvalidCutoff(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Split {
    pub cutoff: f64,
    pub groups: Vec<Group>,
    pub n_low: usize,
    pub n_high: usize,
}

/// `score <= cutoff` is low.
pub fn dichotomize(scores: &[f64], cutoff: f64) -> Result<Split, SurvivalError> {
    if scores.len() < 2 {
        return Err(SurvivalError::TooFew {
            needed: 2,
            got: scores.len(),
        });
    }
    let groups: Vec<Group> = scores
        .iter()
        .map(|&s| if s <= cutoff { Group::Low } else { Group::High })
        .collect();
    let n_low = groups.iter().filter(|&&g| g == Group::Low).count();
    let n_high = groups.len() - n_low;
    if n_low == 0 || n_high == 0 {
        return Err(SurvivalError::DegenerateSplit { low: n_low, high: n_high });
    }
    Ok(Split {
        cutoff,
        groups,
        n_low,
        n_high,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Splits at the sample median. When ties at the median would leave the
/// high group empty, the tied scores go high instead.
pub fn median_dichotomize(scores: &[f64]) -> Result<Split, SurvivalError> {
    let m = median(scores).ok_or(SurvivalError::TooFew { needed: 2, got: 0 })?;
    match dichotomize(scores, m) {
        Err(SurvivalError::DegenerateSplit { high: 0, .. }) => {
            match scores.iter().copied().filter(|&v| v < m).max_by(f64::total_cmp) {
                Some(below) => dichotomize(scores, below),
                None => dichotomize(scores, m),
            }
        }
        r => r,
    }
}

pub fn split_by(scores: &[f64], cutoff: Cutoff) -> Result<Split, SurvivalError> {
    match cutoff {
        Cutoff::Median => median_dichotomize(scores),
        Cutoff::Value(v) => dichotomize(scores, v),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub cutoff: f64,
    pub n_low: usize,
    pub n_high: usize,
    /// Absent when a group is below the minimum size or has no events.
    pub p_value: Option<f64>,
}

pub const DEFAULT_MIN_GROUP_FRACTION: f64 = 0.1;

/// Log-rank p at every midpoint between consecutive distinct scores,
/// ascending by cutoff.
pub fn cutoff_sweep(records: &[SurvivalRecord], min_group_fraction: f64) -> Result<Vec<SweepPoint>, SurvivalError> {
    validate(records)?;
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let mut distinct = scores.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(SurvivalError::TooFew {
            needed: 2,
            got: distinct.len(),
        });
    }
    let min_size = min_group_fraction * records.len() as f64;
    Ok(distinct
        .windows(2)
        .map(|w| (w[0] + w[1]) / 2.0)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|cutoff| {
            let split = dichotomize(&scores, cutoff).expect("midpoint splits distinct scores");
            let p_value = if (split.n_low as f64) < min_size || (split.n_high as f64) < min_size {
                None
            } else {
                logrank_groups(records, &split.groups).ok().map(|r| r.p_value)
            };
            SweepPoint {
                cutoff,
                n_low: split.n_low,
                n_high: split.n_high,
                p_value,
            }
        })
        .collect())
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, SurvivalError> {
    if x.len() != y.len() {
        return Err(SurvivalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(SurvivalError::TooFew { needed: 3, got: x.len() });
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(SurvivalError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Three decimals, or `<0.001`.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

/// Per-group row of a survival summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: Group,
    pub n: usize,
    pub percent: f64,
    pub events: usize,
    pub five_year: f64,
    /// `None` when the curve never reaches 0.5.
    pub median_months: Option<f64>,
    pub curve: KmCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub cutoff: f64,
    pub groups: [GroupSummary; 2],
    pub logrank: LogRankResult,
    pub p_formatted: String,
    /// High relative to low; absent with `hazard_note` set when not estimable.
    pub hazard: Option<HazardEstimate>,
    pub hazard_note: Option<String>,
}

/// Dichotomizes the cohort and summarizes both groups.
pub fn analyze(records: &[SurvivalRecord], cutoff: Cutoff) -> Result<Analysis, SurvivalError> {
    validate(records)?;
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let split = split_by(&scores, cutoff)?;
    let (low, high) = partition(records, &split.groups)?;
    let lr = logrank(&low, &high)?;
    let summary = |group: Group, rs: &[SurvivalRecord]| -> Result<GroupSummary, SurvivalError> {
        let curve = km_curve(rs)?;
        Ok(GroupSummary {
            group,
            n: rs.len(),
            percent: 100.0 * rs.len() as f64 / records.len() as f64,
            events: rs.iter().filter(|r| r.event).count(),
            five_year: survival_at(&curve, 60.0),
            median_months: median_survival(&curve),
            curve,
        })
    };
    let (hazard, hazard_note) = match hazard_ratio_groups(records, &split.groups, Group::Low) {
        Ok(h) => (Some(h), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Analysis {
        cutoff: split.cutoff,
        groups: [summary(Group::Low, &low)?, summary(Group::High, &high)?],
        p_formatted: format_p(lr.p_value),
        logrank: lr,
        hazard,
        hazard_note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(time: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord::new("p", time, event, 0.0)
    }

    fn example() -> Vec<SurvivalRecord> {
        vec![rec(5.0, true), rec(8.0, true), rec(12.0, false), rec(20.0, true), rec(25.0, false)]
    }

    #[test]
    fn km_example() {
        let c = km_curve(&example()).unwrap();
        let s: Vec<f64> = c.steps.iter().map(|s| s.survival).collect();
        assert!((s[0] - 0.8).abs() < 1e-12);
        assert!((s[1] - 0.6).abs() < 1e-12);
        assert!((s[2] - 0.3).abs() < 1e-12);
        assert_eq!(c.censored, vec![12.0, 25.0]);
        assert_eq!(survival_at(&c, 0.0), 1.0);
        assert_eq!(survival_at(&c, 4.9), 1.0);
        assert!((survival_at(&c, 60.0) - 0.3).abs() < 1e-12);
        assert_eq!(median_survival(&c), Some(20.0));
    }

    #[test]
    fn km_edge_cases() {
        let c = km_curve(&[rec(3.0, false), rec(4.0, false)]).unwrap();
        assert!(c.steps.is_empty());
        assert_eq!(survival_at(&c, 100.0), 1.0);
        assert_eq!(median_survival(&c), None);

        let c = km_curve(&[rec(1.0, true), rec(2.0, true), rec(3.0, true), rec(4.0, true)]).unwrap();
        for (k, s) in c.steps.iter().enumerate() {
            assert!((s.survival - (3 - k) as f64 / 4.0).abs() < 1e-12);
        }
        assert_eq!(median_survival(&c), Some(2.0));

        // event and censor tied at t=2: the censored subject is still at risk
        let c = km_curve(&[rec(2.0, true), rec(2.0, false), rec(3.0, true)]).unwrap();
        assert_eq!(c.steps[0].at_risk, 3);
        assert!((c.steps[0].survival - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(km_curve(&[]), Err(SurvivalError::EmptyCohort));
        assert!(matches!(km_curve(&[rec(0.0, true)]), Err(SurvivalError::InvalidTime { .. })));
    }

    #[test]
    fn logrank_symmetry_and_self_comparison() {
        let a = example();
        let r = logrank(&a, &a).unwrap();
        assert!(r.chi_square.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let b = vec![rec(2.0, true), rec(3.0, true), rec(9.0, false)];
        let ab = logrank(&a, &b).unwrap();
        let ba = logrank(&b, &a).unwrap();
        assert!((ab.chi_square - ba.chi_square).abs() < 1e-12);
        assert_eq!(ab.observed, [ba.observed[1], ba.observed[0]]);
        let censored = vec![rec(2.0, false)];
        assert_eq!(logrank(&censored, &censored), Err(SurvivalError::NoEvents));
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson_r(&[1., 2., 3., 4.], &[2., 1., 4., 3.]).unwrap() - 0.6).abs() < 1e-12);
        assert!((pearson_r(&[1., 2., 3.], &[1., 2., 3.]).unwrap() - 1.0).abs() < 1e-12);
        let x = [1., 2., 5., 7.];
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert!((pearson_r(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson_r(&[1., 1., 1.], &[1., 2., 3.]), Err(SurvivalError::ZeroVariance));
        assert!(pearson_r(&[1., 2.], &[1., 2.]).is_err());
    }

    #[test]
    fn dichotomize_cases() {
        let s = dichotomize(&[1., 2., 3., 4.], 2.5).unwrap();
        assert_eq!(s.groups, vec![Group::Low, Group::Low, Group::High, Group::High]);
        assert!(matches!(median_dichotomize(&[3., 3., 3.]), Err(SurvivalError::DegenerateSplit { .. })));
        let s = median_dichotomize(&[0., 1., 1., 1.]).unwrap();
        assert_eq!((s.n_low, s.n_high), (1, 3));
        let scores: Vec<f64> = (0..87).map(|i| i as f64 * 0.37).collect();
        let s = median_dichotomize(&scores).unwrap();
        assert_eq!((s.n_low, s.n_high), (44, 43));
        assert_eq!("median".parse::<Cutoff>().unwrap(), Cutoff::Median);
        assert_eq!("2.5".parse::<Cutoff>().unwrap(), Cutoff::Value(2.5));
        assert!("x".parse::<Cutoff>().is_err());
    }

    /// A: 3E 5E 9C 12E; B: 4E 6C 8E 8E 15E 16C.
    fn two_groups() -> (Vec<SurvivalRecord>, Vec<SurvivalRecord>) {
        let a = vec![rec(3.0, true), rec(5.0, true), rec(9.0, false), rec(12.0, true)];
        let b = vec![
            rec(4.0, true),
            rec(6.0, false),
            rec(8.0, true),
            rec(8.0, true),
            rec(15.0, true),
            rec(16.0, false),
        ];
        (a, b)
    }

    #[test]
    fn logrank_hand_table() {
        // t   n  nA  d  E_A            V
        // 3  10  4   1  4/10           .4*.6
        // 4   9  3   1  3/9            (1/3)(2/3)
        // 5   8  3   1  3/8            .375*.625
        // 8   6  2   2  2*2/6          2(1/3)(2/3)(4/5)
        // 12  3  1   1  1/3            (1/3)(2/3)
        // 15  2  0   1  0              0
        let (a, b) = two_groups();
        let r = logrank(&a, &b).unwrap();
        let e_a = 0.4 + 1.0 / 3.0 + 0.375 + 2.0 / 3.0 + 1.0 / 3.0;
        let v = 0.24 + 2.0 / 9.0 + 0.234375 + 16.0 / 45.0 + 2.0 / 9.0;
        assert_eq!(r.observed, [3.0, 4.0]);
        assert!((r.expected[0] - e_a).abs() < 1e-12);
        assert!((r.variance - v).abs() < 1e-12);
        assert!((r.chi_square - (3.0 - e_a).powi(2) / v).abs() < 1e-12);
        assert!((r.chi_square - 0.6238897062830361).abs() < 1e-10);
        assert!((r.p_value - 0.42960550878636283).abs() < 1e-10);
    }

    #[test]
    fn efron_cox_reference_values() {
        let (a, b) = two_groups();
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let groups: Vec<Group> = (0..all.len()).map(|i| if i < a.len() { Group::Low } else { Group::High }).collect();
        let h = hazard_ratio_groups(&all, &groups, Group::Low).unwrap();
        assert!((h.beta - -0.5669015405113198).abs() < 1e-8);
        assert!((h.se - 0.8182496476959061).abs() < 1e-8);
        assert!((h.ci_low - 0.11410441).abs() < 1e-6);
        assert!((h.ci_high - 2.820286).abs() < 1e-5);
        assert!(h.ci_low <= h.hr && h.hr <= h.ci_high);

        let swapped = hazard_ratio_groups(&all, &groups, Group::High).unwrap();
        assert!((swapped.hr - 1.0 / h.hr).abs() < 1e-9);
        assert!((swapped.ci_low - 1.0 / h.ci_high).abs() < 1e-9);
        assert!((swapped.ci_high - 1.0 / h.ci_low).abs() < 1e-9);

        let only_low_events: Vec<Group> = all.iter().map(|r| if r.event { Group::Low } else { Group::High }).collect();
        assert_eq!(
            hazard_ratio_groups(&all, &only_low_events, Group::Low),
            Err(SurvivalError::Separation(Group::High))
        );
    }

    #[test]
    fn identical_groups_have_unit_hazard() {
        let (a, _) = two_groups();
        let all: Vec<_> = a.iter().chain(&a).cloned().collect();
        let groups: Vec<Group> = (0..8).map(|i| if i < 4 { Group::Low } else { Group::High }).collect();
        let h = hazard_ratio_groups(&all, &groups, Group::Low).unwrap();
        assert!((h.hr - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sweep_counts_and_median_agreement() {
        let recs: Vec<SurvivalRecord> = (0..30)
            .map(|i| SurvivalRecord::new(format!("p{i}"), 5.0 + ((i * 7) % 30) as f64, i % 3 != 0, i as f64))
            .collect();
        let sweep = cutoff_sweep(&recs, DEFAULT_MIN_GROUP_FRACTION).unwrap();
        assert_eq!(sweep.len(), 29);
        assert!(sweep.windows(2).all(|w| w[0].cutoff < w[1].cutoff));
        assert!(sweep[0].p_value.is_none() && sweep[28].p_value.is_none());
        assert!(sweep[2].p_value.is_some());

        let scores: Vec<f64> = recs.iter().map(|r| r.score).collect();
        let split = median_dichotomize(&scores).unwrap();
        let p = logrank_groups(&recs, &split.groups).unwrap().p_value;
        let at = sweep.iter().find(|s| s.n_low == split.n_low).unwrap();
        assert_eq!(at.p_value, Some(p));
    }

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.0004), "<0.001");
        assert_eq!(format_p(0.001), "0.001");
        assert_eq!(format_p(0.04567), "0.046");
        assert_eq!(format_p(1.0), "1.000");
    }
}
