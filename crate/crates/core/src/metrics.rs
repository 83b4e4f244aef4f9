//! Evaluation statistics: rank-based ROC-AUC, thresholded precision / recall /
//! F1, the unintended-bias AUCs (Subgroup, BPSN), their generalized power
//! mean, and the two-sample Kolmogorov–Smirnov test.
//!
//! An AUC over a set that lacks one of the two classes is [`Score::Undefined`],
//! never a silent 0.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::POSITIVE_THRESHOLD;
use crate::{Error, Result};

pub const DEFAULT_POWER: f64 = -5.0;

/// A statistic that may be mathematically undefined. Serializes as a number
/// or `null`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Score {
    Defined(f64),
    Undefined,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Defined(v) => Some(v),
            Score::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Score::Defined(_))
    }
}

impl From<Option<f64>> for Score {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Score::Undefined, Score::Defined)
    }
}

impl From<Score> for Option<f64> {
    fn from(s: Score) -> Self {
        s.value()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub score: f64,
    pub label: bool,
    /// Identities this comment mentions.
    pub subgroups: BTreeSet<String>,
}

impl ScoredExample {
    pub fn new<I, S>(score: f64, label: bool, subgroups: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScoredExample { score, label, subgroups: subgroups.into_iter().map(Into::into).collect() }
    }

    fn in_subgroup(&self, name: &str) -> bool {
        self.subgroups.contains(name)
    }
}

/// Mann–Whitney AUC with midranks for ties:
/// `(R_pos − n_pos(n_pos + 1)/2) / (n_pos · n_neg)`.
pub fn roc_auc_scores(scores: &[f64], labels: &[bool]) -> Score {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Score::Undefined;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // positions i..j share midrank ((i + 1) + j) / 2
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += midrank * pos_in_tie as f64;
        i = j;
    }
    let np = n_pos as f64;
    Score::Defined((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

pub fn roc_auc(examples: &[ScoredExample]) -> Score {
    let scores: Vec<f64> = examples.iter().map(|e| e.score).collect();
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    roc_auc_scores(&scores, &labels)
}

/// AUC over a restricted set, with the class counts it was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedAuc {
    pub auc: Score,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn restricted<'a>(examples: impl Iterator<Item = &'a ScoredExample>) -> RestrictedAuc {
    let (scores, labels): (Vec<f64>, Vec<bool>) = examples.map(|e| (e.score, e.label)).unzip();
    let n_pos = labels.iter().filter(|&&l| l).count();
    RestrictedAuc { auc: roc_auc_scores(&scores, &labels), n_pos, n_neg: labels.len() - n_pos }
}

/// AUC restricted to comments that mention `subgroup`.
pub fn subgroup_auc(examples: &[ScoredExample], subgroup: &str) -> RestrictedAuc {
    restricted(examples.iter().filter(|e| e.in_subgroup(subgroup)))
}

/// Background-positive, subgroup-negative AUC: non-toxic comments that
/// mention `subgroup` against toxic comments that do not.
pub fn bpsn_auc(examples: &[ScoredExample], subgroup: &str) -> RestrictedAuc {
    restricted(examples.iter().filter(|e| e.in_subgroup(subgroup) != e.label))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `false` when the corresponding denominator was zero and the value was
    /// reported as 0.
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Positive-class precision, recall and F1; a score `>= threshold` is a
/// positive prediction.
pub fn prf1(examples: &[ScoredExample], threshold: f64) -> Prf1 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for e in examples {
        match (e.score >= threshold, e.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { (0.0, false) } else { (num as f64 / den as f64, true) };
    let (precision, precision_defined) = ratio(tp, tp + fp);
    let (recall, recall_defined) = ratio(tp, tp + fn_);
    let (f1, f1_defined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), true)
    } else {
        (0.0, false)
    };
    Prf1 { precision, recall, f1, precision_defined, recall_defined, f1_defined, tp, fp, fn_ }
}

/// Power mean `((1/N) Σ m_s^p)^(1/p)`; `p = 0` is the geometric mean.
/// Undefined for an empty input, and for a zero value when `p < 0`.
pub fn generalized_mean_bias(values: &[f64], p: f64) -> Score {
    if values.is_empty() {
        return Score::Undefined;
    }
    let n = values.len() as f64;
    if p == 0.0 {
        if values.contains(&0.0) {
            return Score::Defined(0.0);
        }
        let mean_log = values.iter().map(|&v| libm::log(v)).sum::<f64>() / n;
        return Score::Defined(libm::exp(mean_log));
    }
    if p < 0.0 && values.contains(&0.0) {
        return Score::Undefined;
    }
    let mean = values.iter().map(|&v| libm::pow(v, p)).sum::<f64>() / n;
    Score::Defined(libm::pow(mean, 1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test. `D = sup |F_a − F_b|`; the p-value is
/// the asymptotic Kolmogorov tail `Q(√n_e · D)` with `n_e = n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("both KS samples must be nonempty".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { layer: "ks sample", timestep: None });
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = xs[i].min(ys[j]);
        while i < na && xs[i] <= v {
            i += 1;
        }
        while j < nb && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf(libm::sqrt(ne) * d) })
}

/// `Q(λ) = P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    use core::f64::consts::PI;
    if lambda <= 0.0 {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        // 1 − (√(2π)/λ) Σ_{j≥1} exp(−(2j−1)² π² / (8λ²))
        let y = PI * PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for j in 1..=50u32 {
            let k = f64::from(2 * j - 1);
            let term = libm::exp(-k * k * y);
            s += term;
            if term < 1e-18 {
                break;
            }
        }
        1.0 - libm::sqrt(2.0 * PI) / lambda * s
    } else {
        // 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)
        let mut s = 0.0;
        for j in 1..=100u32 {
            let jf = f64::from(j);
            let term = libm::exp(-2.0 * jf * jf * lambda * lambda);
            s += if j % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        2.0 * s
    };
    q.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub name: String,
    /// Number of comments mentioning the subgroup.
    pub size: usize,
    pub subgroup_auc: RestrictedAuc,
    pub bpsn_auc: RestrictedAuc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub n: usize,
    pub overall_auc: Score,
    pub threshold: f64,
    pub prf1: Prf1,
    pub subgroups: Vec<SubgroupReport>,
    /// Power mean of the defined Subgroup AUCs.
    pub generalized_mean_bias_auc: Score,
    /// How many Subgroup AUCs entered the power mean.
    pub n_effective: usize,
    pub p: f64,
}

impl BiasReport {
    pub fn subgroup(&self, name: &str) -> Option<&SubgroupReport> {
        self.subgroups.iter().find(|s| s.name == name)
    }
}

/// Assembles overall and per-subgroup metrics at the standard 0.5 threshold.
pub fn bias_report<S: AsRef<str>>(examples: &[ScoredExample], subgroups: &[S], p: f64) -> BiasReport {
    let reports: Vec<SubgroupReport> = subgroups
        .iter()
        .map(|s| {
            let name = s.as_ref();
            SubgroupReport {
                name: name.into(),
                size: examples.iter().filter(|e| e.in_subgroup(name)).count(),
                subgroup_auc: subgroup_auc(examples, name),
                bpsn_auc: bpsn_auc(examples, name),
            }
        })
        .collect();
    let defined: Vec<f64> = reports.iter().filter_map(|r| r.subgroup_auc.auc.value()).collect();
    BiasReport {
        n: examples.len(),
        overall_auc: roc_auc(examples),
        threshold: POSITIVE_THRESHOLD,
        prf1: prf1(examples, POSITIVE_THRESHOLD),
        generalized_mean_bias_auc: generalized_mean_bias(&defined, p),
        n_effective: defined.len(),
        subgroups: reports,
        p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ex(score: f64, label: bool, groups: &[&str]) -> ScoredExample {
        ScoredExample::new(score, label, groups.iter().copied())
    }

    #[test]
    fn auc_basic_cases() {
        assert_eq!(roc_auc_scores(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Score::Defined(1.0));
        assert_eq!(roc_auc_scores(&[0.5; 4], &[false, true, false, true]), Score::Defined(0.5));
        assert_eq!(roc_auc_scores(&[0.1, 0.2], &[true, true]), Score::Undefined);
        assert_eq!(roc_auc_scores(&[], &[]), Score::Undefined);
    }

    #[test]
    fn prf1_counting() {
        // TP = 3, FP = 1, FN = 2
        let mut xs = vec![ex(0.9, true, &[]); 3];
        xs.push(ex(0.5, false, &[]));
        xs.extend(vec![ex(0.1, true, &[]); 2]);
        xs.push(ex(0.49, false, &[]));
        let r = prf1(&xs, 0.5);
        assert_eq!((r.precision, r.recall), (0.75, 0.6));
        assert!((r.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);

        let none = prf1(&[ex(0.1, true, &[]), ex(0.2, false, &[])], 0.5);
        assert!(!none.precision_defined);
        assert_eq!(none.recall, 0.0);
        assert!(none.recall_defined);

        let all = prf1(&[ex(0.9, true, &[]), ex(0.2, false, &[])], 0.5);
        assert_eq!((all.precision, all.recall, all.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn subgroup_and_bpsn_restrictions() {
        let xs = vec![
            ex(0.9, true, &["a"]),
            ex(0.2, false, &["a"]),
            ex(0.8, true, &[]),
            ex(0.1, false, &[]),
        ];
        assert_eq!(subgroup_auc(&xs, "a").auc, Score::Defined(1.0));
        assert_eq!(subgroup_auc(&xs, "b").auc, Score::Undefined);
        assert_eq!(bpsn_auc(&xs, "a").auc, Score::Defined(1.0));
        assert_eq!(bpsn_auc(&xs, "a").n_pos, 1);

        // Identity mentions always outrank background toxics.
        let biased = vec![ex(0.95, false, &["a"]), ex(0.9, false, &["a"]), ex(0.3, true, &[]), ex(0.2, true, &[])];
        assert_eq!(bpsn_auc(&biased, "a").auc, Score::Defined(0.0));
    }

    #[test]
    fn power_mean_cases() {
        assert!((generalized_mean_bias(&[0.7; 4], -5.0).value().unwrap() - 0.7).abs() < 1e-15);
        assert!((generalized_mean_bias(&[0.2, 0.4], 1.0).value().unwrap() - 0.3).abs() < 1e-15);
        // mpmath, 50 digits
        let want = 0.77550879120210056735_f64;
        assert!((generalized_mean_bias(&[0.9, 0.8, 0.7], -5.0).value().unwrap() - want).abs() < 1e-12);
        assert_eq!(generalized_mean_bias(&[0.9, 0.0], -5.0), Score::Undefined);
        assert_eq!(generalized_mean_bias(&[], -5.0), Score::Undefined);
    }

    #[test]
    fn ks_cases() {
        let r = ks_two_sample(&[0.3, 0.1, 0.2], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(r, KsResult { statistic: 0.0, p_value: 1.0 });
        // n = m = 3 cannot reach 5% even at D = 1: p ≈ 2·exp(−3).
        let r = ks_two_sample(&[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value > 0.05);
        let r = ks_two_sample(&[0.0; 10], &[1.0; 10]).unwrap();
        assert!(r.p_value < 1e-3);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // Both series are valid everywhere; compare them near the switch point.
        use core::f64::consts::PI;
        for &l in &[0.9, 1.1, 1.18, 1.3] {
            let y = PI * PI / (8.0 * l * l);
            let small: f64 = 1.0 - libm::sqrt(2.0 * PI) / l * (1..50).map(|j| libm::exp(-((2 * j - 1) as f64).powi(2) * y)).sum::<f64>();
            let large: f64 = 2.0 * (1..100).map(|j| {
                let t = libm::exp(-2.0 * (j * j) as f64 * l * l);
                if j % 2 == 1 { t } else { -t }
            }).sum::<f64>();
            assert!((small - large).abs() < 1e-12, "{l}: {small} vs {large}");
        }
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn report_with_no_subgroups() {
        let xs = vec![ex(0.9, true, &["a"]), ex(0.1, false, &[])];
        let r = bias_report::<&str>(&xs, &[], DEFAULT_POWER);
        assert!(r.subgroups.is_empty());
        assert_eq!(r.generalized_mean_bias_auc, Score::Undefined);
        assert_eq!(r.n_effective, 0);
        assert_eq!(r.overall_auc, Score::Defined(1.0));
    }
}
