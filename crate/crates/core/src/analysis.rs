//! Detection scores and the statistical tests used to relate distances to
//! noise and to circuit characteristics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::metrics::MetricKind;
use crate::mutate::Label;
use crate::{Error, Result};

/// Significance level used for strength labels.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub mutant_id: String,
    pub true_label: Label,
    pub detected: bool,
    pub metric: MetricKind,
    pub strategy: String,
    pub backend: String,
    pub input_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Non-equivalent mutants are the positive class.
    pub fn record(&mut self, non_equivalent: bool, detected: bool) {
        match (non_equivalent, detected) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// FP / (FP + TN): share of equivalent mutants flagged as detected.
    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn false_negative_rate(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }

    /// (FP + FN) / total.
    pub fn misclassification_rate(&self) -> f64 {
        ratio(self.fp + self.fn_, self.total())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision, recall or F1 had a zero denominator.
    pub degenerate: bool,
}

impl Scores {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        if cm.total() == 0 {
            return Err(Error::InvalidArgument(
                "no detection records to score".into(),
            ));
        }
        let mut degenerate = false;
        let mut safe = |num: f64, den: f64| {
            if den == 0.0 {
                degenerate = true;
                0.0
            } else {
                num / den
            }
        };
        let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
        let precision = safe(tp, tp + fp);
        let recall = safe(tp, tp + fn_);
        let f1 = safe(2.0 * precision * recall, precision + recall);
        Ok(Self {
            confusion: cm,
            accuracy: (tp + tn) / (tp + tn + fp + fn_),
            precision,
            recall,
            f1,
            degenerate,
        })
    }
}

pub fn confusion_and_scores(records: &[DetectionRecord]) -> Result<Scores> {
    let mut cm = ConfusionMatrix::default();
    for r in records {
        let non_eq = match r.true_label {
            Label::Equivalent => false,
            Label::NonEquivalent => true,
            Label::Unlabeled => {
                return Err(Error::InvalidArgument(format!(
                    "mutant `{}` has no ground-truth label",
                    r.mutant_id
                )))
            }
        };
        cm.record(non_eq, r.detected);
    }
    Scores::from_confusion(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    NotSignificant,
    Negligible,
    Weak,
    Moderate,
    Strong,
}

impl fmt::Display for Strength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strength::NotSignificant => "not_significant",
            Strength::Negligible => "negligible",
            Strength::Weak => "weak",
            Strength::Moderate => "moderate",
            Strength::Strong => "strong",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Variance ratio with the Fligner–Killeen scale test.
    VarianceRatio,
    MannWhitney,
    KruskalWallis,
    Pearson,
}

impl TestKind {
    /// Cut points on |effect| for weak, moderate and strong.
    fn cuts(self) -> Option<[f64; 3]> {
        match self {
            TestKind::VarianceRatio => None,
            // Cliff's δ
            TestKind::MannWhitney => Some([0.15, 0.33, 0.47]),
            // η²[H]
            TestKind::KruskalWallis => Some([0.01, 0.06, 0.14]),
            TestKind::Pearson => Some([0.10, 0.30, 0.50]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestKind::VarianceRatio => "fligner_killeen",
            TestKind::MannWhitney => "mann_whitney",
            TestKind::KruskalWallis => "kruskal_wallis",
            TestKind::Pearson => "pearson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispersion {
    Scattered,
    Concentrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub test: TestKind,
    /// U, H, r or the Fligner–Killeen chi-square, depending on the test.
    pub statistic: f64,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_adjusted: Option<f64>,
    /// Cliff's δ, η²[H], r or the variance ratio.
    pub effect_size: f64,
    /// Z/√N for Mann–Whitney.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_effect: Option<f64>,
    /// Absent for the variance ratio, which has no cut table.
    pub strength: Option<Strength>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<Dispersion>,
}

impl StatResult {
    fn new(test: TestKind, statistic: f64, p_value: f64, effect_size: f64) -> Self {
        let mut r = Self {
            test,
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            p_adjusted: None,
            effect_size,
            z_effect: None,
            strength: None,
            dispersion: None,
        };
        r.relabel();
        r
    }

    /// The p-value strength labels are judged on.
    pub fn p_effective(&self) -> f64 {
        self.p_adjusted.unwrap_or(self.p_value)
    }

    pub fn set_adjusted(&mut self, p: f64) {
        self.p_adjusted = Some(p);
        self.relabel();
    }

    fn relabel(&mut self) {
        self.strength = self.test.cuts().map(|cuts| {
            let p = self.p_effective();
            if p.is_nan() || p >= ALPHA {
                return Strength::NotSignificant;
            }
            let e = self.effect_size.abs();
            if e < cuts[0] {
                Strength::Negligible
            } else if e < cuts[1] {
                Strength::Weak
            } else if e < cuts[2] {
                Strength::Moderate
            } else {
                Strength::Strong
            }
        });
    }
}

/// Inverse standard normal CDF, Wichura's algorithm AS 241 (PPND16).
#[allow(clippy::excessive_precision, clippy::inconsistent_digit_grouping)]
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_7)
                * r
                + 45921.953_931_549_87)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_71)
                * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive df").sf(x)
}

/// Midranks (1-based) of `values`, plus Σ(t³ − t) over tie groups.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_sum)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (denominator n − 1).
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Fligner–Killeen median-centred test for equal scale; returns (chi², p).
pub fn fligner_killeen(groups: &[&[f64]]) -> Result<(f64, f64)> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidArgument(
            "Fligner–Killeen needs at least two non-empty groups".into(),
        ));
    }
    let mut dev = Vec::new();
    let mut sizes = Vec::new();
    for g in groups {
        let m = median(g);
        dev.extend(g.iter().map(|x| (x - m).abs()));
        sizes.push(g.len());
    }
    let n = dev.len();
    let (ranks, _) = midranks(&dev);
    let a: Vec<f64> = ranks
        .iter()
        .map(|r| normal_quantile(0.5 + r / (2.0 * (n as f64 + 1.0))))
        .collect();
    let var_a = variance(&a);
    if var_a.is_nan() || var_a <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let a_bar = mean(&a);
    let mut stat = 0.0;
    let mut start = 0;
    for &ni in &sizes {
        let gm = mean(&a[start..start + ni]);
        stat += ni as f64 * (gm - a_bar) * (gm - a_bar);
        start += ni;
    }
    stat /= var_a;
    Ok((stat, chi2_sf(stat, (groups.len() - 1) as f64)))
}

/// σ²_noisy / σ²_noiseless with a Fligner–Killeen p-value. Zero noiseless
/// variance gives `+∞` (or 1 when both variances are zero).
pub fn variance_ratio(noisy: &[f64], noiseless: &[f64]) -> Result<StatResult> {
    if noisy.len() < 2 || noiseless.len() < 2 {
        return Err(Error::InvalidArgument(
            "variance ratio needs at least two values per group".into(),
        ));
    }
    let (vn, vq) = (variance(noisy), variance(noiseless));
    let vr = if vq > 0.0 {
        vn / vq
    } else if vn > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let (stat, p) = fligner_killeen(&[noisy, noiseless])?;
    let mut r = StatResult::new(TestKind::VarianceRatio, stat, p, vr);
    r.dispersion = Some(if vr > 1.0 {
        Dispersion::Scattered
    } else {
        Dispersion::Concentrated
    });
    Ok(r)
}

/// Number of pairs with `a > b` and with `a < b`, via sorted search.
fn dominance_counts(a: &[f64], b: &[f64]) -> (u64, u64) {
    let mut sb = b.to_vec();
    sb.sort_by(f64::total_cmp);
    let (mut gt, mut lt) = (0u64, 0u64);
    for &x in a {
        let below = sb.partition_point(|&y| y < x);
        let not_above = sb.partition_point(|&y| y <= x);
        gt += below as u64;
        lt += (sb.len() - not_above) as u64;
    }
    (gt, lt)
}

/// Mann–Whitney U (normal approximation, tie-corrected, no continuity
/// correction) with Cliff's δ as the effect size. The statistic is U of `a`.
pub fn mann_whitney_cliffs(a: &[f64], b: &[f64]) -> Result<StatResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "Mann–Whitney needs two non-empty samples".into(),
        ));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_sum) = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)).max(1.0));
    let z = if var > 0.0 {
        (u - mu) / var.sqrt()
    } else {
        0.0
    };
    let p = if var > 0.0 {
        2.0 * std_normal().sf(z.abs())
    } else {
        1.0
    };
    let (gt, lt) = dominance_counts(a, b);
    let delta = (gt as f64 - lt as f64) / (n1 * n2);
    let mut r = StatResult::new(TestKind::MannWhitney, u, p, delta);
    r.z_effect = Some(z / n.sqrt());
    Ok(r)
}

/// Kruskal–Wallis H (tie-corrected) with η²[H] = (H − k + 1)/(n − k) as the
/// effect size, clamped to [0, 1].
pub fn kruskal_wallis_eta(groups: &[&[f64]]) -> Result<StatResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(
            "Kruskal–Wallis needs at least two groups".into(),
        ));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidArgument(
            "Kruskal–Wallis groups must be non-empty".into(),
        ));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let k = groups.len() as f64;
    let (ranks, tie_sum) = midranks(&pooled);
    let mut sum = 0.0;
    let mut start = 0;
    for g in groups {
        let r: f64 = ranks[start..start + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        start += g.len();
    }
    let correction = 1.0 - tie_sum / (n * n * n - n);
    let h = if correction > 0.0 {
        (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction
    } else {
        0.0
    };
    let h = h.max(0.0);
    let p = chi2_sf(h, k - 1.0);
    let eta = if n > k {
        ((h - k + 1.0) / (n - k)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(StatResult::new(TestKind::KruskalWallis, h, p, eta))
}

/// Product-moment correlation with a two-sided t-test.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<StatResult> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidArgument(
            "Pearson needs two equal-length samples of at least 3 values".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "Pearson is undefined for zero variance".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (x.len() - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        2.0 * StudentsT::new(0.0, 1.0, df)
            .expect("positive df")
            .sf(t.abs())
    };
    Ok(StatResult::new(TestKind::Pearson, r, p, r))
}

/// Holm step-down adjustment, returned in the input order.
pub fn holm_correct(pvalues: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "p-value {p} outside [0, 1]"
        )));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * pvalues[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    NQubits,
    NGates,
    Depth,
    RelativePosition,
    GateType,
    InputType,
    OutputType,
    Algorithm,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    Quantitative,
    Binary,
    MultiValued,
}

impl Variable {
    pub const ALL: [Variable; 9] = [
        Variable::NQubits,
        Variable::NGates,
        Variable::Depth,
        Variable::RelativePosition,
        Variable::GateType,
        Variable::InputType,
        Variable::OutputType,
        Variable::Algorithm,
        Variable::Operator,
    ];

    pub fn kind(self) -> VariableKind {
        match self {
            Variable::NQubits | Variable::NGates | Variable::Depth | Variable::RelativePosition => {
                VariableKind::Quantitative
            }
            Variable::GateType | Variable::InputType | Variable::OutputType => VariableKind::Binary,
            Variable::Algorithm | Variable::Operator => VariableKind::MultiValued,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::NQubits => "n_qubits",
            Variable::NGates => "n_gates",
            Variable::Depth => "depth",
            Variable::RelativePosition => "relative_position",
            Variable::GateType => "gate_type",
            Variable::InputType => "input_type",
            Variable::OutputType => "output_type",
            Variable::Algorithm => "algorithm",
            Variable::Operator => "operator",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s
            .trim_start_matches('#')
            .to_ascii_lowercase()
            .replace([' ', '-'], "_");
        let alias = match norm.as_str() {
            "qubits" => "n_qubits",
            "gates" => "n_gates",
            other => other,
        };
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == alias)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variable `{s}`")))
    }
}

/// Values of one characteristic, aligned with a distance column.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Factor {
    fn len(&self) -> usize {
        match self {
            Factor::Numeric(v) => v.len(),
            Factor::Categorical(v) => v.len(),
        }
    }
}

fn group_by<'a>(distances: &[f64], labels: &'a [String]) -> BTreeMap<&'a str, Vec<f64>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (d, l) in distances.iter().zip(labels) {
        groups.entry(l.as_str()).or_default().push(*d);
    }
    groups
}

/// Pearson for quantitative variables, Mann–Whitney for binary ones and
/// Kruskal–Wallis for multi-valued ones. Constant distances carry no signal
/// and give a zero effect with p = 1.
pub fn correlate_characteristics(
    distances: &[f64],
    variable: Variable,
    factor: &Factor,
) -> Result<StatResult> {
    if factor.len() != distances.len() {
        return Err(Error::Dimension(format!(
            "{} distances but {} values of {variable}",
            distances.len(),
            factor.len()
        )));
    }
    let constant = distances.windows(2).all(|w| w[0] == w[1]);
    let test = match variable.kind() {
        VariableKind::Quantitative => TestKind::Pearson,
        VariableKind::Binary => TestKind::MannWhitney,
        VariableKind::MultiValued => TestKind::KruskalWallis,
    };
    match (variable.kind(), factor) {
        (VariableKind::Quantitative, Factor::Numeric(x)) => {
            let flat_x = x.windows(2).all(|w| w[0] == w[1]);
            if (constant || flat_x) && distances.len() >= 3 {
                return Ok(StatResult::new(test, 0.0, 1.0, 0.0));
            }
            pearson_r(x, distances)
        }
        (VariableKind::Binary, Factor::Categorical(labels)) => {
            let groups = group_by(distances, labels);
            if groups.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "{variable} needs exactly two categories, found {}",
                    groups.len()
                )));
            }
            let g: Vec<&Vec<f64>> = groups.values().collect();
            mann_whitney_cliffs(g[0], g[1])
        }
        (VariableKind::MultiValued, Factor::Categorical(labels)) => {
            let groups = group_by(distances, labels);
            let g: Vec<&[f64]> = groups.values().map(Vec::as_slice).collect();
            kruskal_wallis_eta(&g)
        }
        _ => Err(Error::InvalidArgument(format!(
            "{variable} was given values of the wrong type"
        ))),
    }
}

/// Runs several variables against the same distances and applies Holm
/// across the ones that could be tested.
pub fn correlate_batch(
    distances: &[f64],
    factors: &[(Variable, Factor)],
) -> Vec<(Variable, Result<StatResult>)> {
    let mut out: Vec<(Variable, Result<StatResult>)> = factors
        .iter()
        .map(|(v, f)| (*v, correlate_characteristics(distances, *v, f)))
        .collect();
    let ps: Vec<f64> = out
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(|s| s.p_value))
        .collect();
    let adjusted = holm_correct(&ps).expect("p-values are clamped to [0, 1]");
    let mut it = adjusted.into_iter();
    for (_, r) in out.iter_mut() {
        if let Ok(s) = r {
            s.set_adjusted(it.next().expect("one adjusted value per result"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    fn rec(label: Label, detected: bool) -> DetectionRecord {
        DetectionRecord {
            mutant_id: "m".into(),
            true_label: label,
            detected,
            metric: MetricKind::Hellinger,
            strategy: "noiseless".into(),
            backend: "noiseless".into(),
            input_id: "c0".into(),
        }
    }

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    #[test]
    fn score_examples() {
        let s = confusion_and_scores(&[rec(Label::NonEquivalent, true)]).unwrap();
        assert_eq!((s.accuracy, s.f1), (1.0, 1.0));
        assert!(!s.degenerate);

        let s = Scores::from_confusion(counts(1, 1, 1, 1)).unwrap();
        assert_eq!(
            (s.accuracy, s.precision, s.recall, s.f1),
            (0.5, 0.5, 0.5, 0.5)
        );

        let s = Scores::from_confusion(counts(3, 1, 4, 2)).unwrap();
        assert!((s.precision - 0.75).abs() < 1e-15);
        assert!((s.recall - 0.6).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.accuracy - 0.7).abs() < 1e-15);

        let s = Scores::from_confusion(counts(0, 0, 5, 3)).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.f1, 0.0);
        assert!(confusion_and_scores(&[]).is_err());
        assert!(confusion_and_scores(&[rec(Label::Unlabeled, true)]).is_err());
    }

    #[test]
    fn normal_quantile_agrees_with_reference() {
        let reference = std_normal();
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!(
                (normal_quantile(p) - reference.inverse_cdf(p)).abs() < 1e-9,
                "{p}"
            );
        }
        for p in [1e-10, 1e-6, 0.999_999, 1.0 - 1e-10] {
            assert!(
                (normal_quantile(p) - reference.inverse_cdf(p)).abs() < 1e-7,
                "{p}"
            );
        }
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn variance_ratio_examples() {
        let base = [0.1, 0.4, 0.2, 0.8, 0.5, 0.3];
        let same = variance_ratio(&base, &base).unwrap();
        assert!((same.effect_size - 1.0).abs() < 1e-12);
        assert!(same.p_value > 0.99);
        assert_eq!(same.strength, None);

        let doubled: Vec<f64> = base.iter().map(|x| 2.0 * x).collect();
        let r = variance_ratio(&doubled, &base).unwrap();
        assert!((r.effect_size - 4.0).abs() < 1e-12);
        assert_eq!(r.dispersion, Some(Dispersion::Scattered));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let wide = NormalDist::new(0.0, 2.0).unwrap();
        let narrow = NormalDist::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..200).map(|_| wide.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..200).map(|_| narrow.sample(&mut rng)).collect();
        let r = variance_ratio(&a, &b).unwrap();
        assert!((3.0..=5.0).contains(&r.effect_size), "{}", r.effect_size);
        assert!(r.p_value < 0.05);

        let flat = variance_ratio(&[0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(flat.effect_size, f64::INFINITY);
        assert!(variance_ratio(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fligner_matches_hand_computation() {
        // groups [1,2,3] and [1,3,5]: deviations from medians 2 and 3
        let (stat, p) = fligner_killeen(&[&[1.0, 2.0, 3.0], &[1.0, 3.0, 5.0]]).unwrap();
        let dev = [1.0, 0.0, 1.0, 2.0, 0.0, 2.0];
        let ranks = [3.5, 1.5, 3.5, 5.5, 1.5, 5.5];
        let a: Vec<f64> = ranks
            .iter()
            .map(|r| normal_quantile(0.5 + r / 14.0))
            .collect();
        let abar = a.iter().sum::<f64>() / 6.0;
        let var = a.iter().map(|x| (x - abar).powi(2)).sum::<f64>() / 5.0;
        let g1 = a[..3].iter().sum::<f64>() / 3.0;
        let g2 = a[3..].iter().sum::<f64>() / 3.0;
        let expect = (3.0 * (g1 - abar).powi(2) + 3.0 * (g2 - abar).powi(2)) / var;
        assert_eq!(dev.len(), 6);
        assert!((stat - expect).abs() < 1e-12);
        assert!((p - chi2_sf(expect, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_examples() {
        let r = mann_whitney_cliffs(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.effect_size, -1.0);
        assert_eq!(r.statistic, 0.0);
        let a = [0.3, 0.1, 0.7, 0.7];
        let same = mann_whitney_cliffs(&a, &a).unwrap();
        assert_eq!(same.effect_size, 0.0);
        assert_eq!(same.statistic, 8.0);
        assert!((same.p_value - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x: Vec<f64> = (0..20)
            .map(|_| (rng.random::<f64>() * 10.0).round())
            .collect();
        let y: Vec<f64> = (0..20)
            .map(|_| (rng.random::<f64>() * 12.0).round())
            .collect();
        let mut gt = 0i64;
        let mut lt = 0i64;
        for a in &x {
            for b in &y {
                if a > b {
                    gt += 1;
                } else if a < b {
                    lt += 1;
                }
            }
        }
        let r = mann_whitney_cliffs(&x, &y).unwrap();
        assert_eq!(r.effect_size, (gt - lt) as f64 / 400.0);
    }

    #[test]
    fn mann_whitney_large_sample_p() {
        // two shifted uniform samples with a textbook-size effect
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64 + 25.5).collect();
        let r = mann_whitney_cliffs(&a, &b).unwrap();
        assert!(r.p_value < 1e-4);
        assert_eq!(r.strength, Some(Strength::Strong));
        assert!(r.z_effect.unwrap() < 0.0);
    }

    #[test]
    fn kruskal_examples() {
        let g = [0.2, 0.5, 0.9];
        let r = kruskal_wallis_eta(&[&g, &g, &g]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.effect_size, 0.0);

        // ranks 1..6 with sums 3, 7, 11: H = 12/42·89.5 − 21 = 32/7
        let r = kruskal_wallis_eta(&[&[1.0, 2.0], &[10.0, 11.0], &[20.0, 21.0]]).unwrap();
        assert!((r.statistic - 32.0 / 7.0).abs() < 1e-12);
        assert!((r.effect_size - 6.0 / 7.0).abs() < 1e-12);
        assert!((r.p_value - (-16.0f64 / 7.0).exp()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let a: Vec<f64> = (0..30)
                .map(|_| (rng.random::<f64>() * 20.0).round())
                .collect();
            let b: Vec<f64> = (0..25)
                .map(|_| (rng.random::<f64>() * 24.0).round())
                .collect();
            let kw = kruskal_wallis_eta(&[&a, &b]).unwrap();
            let mw = mann_whitney_cliffs(&a, &b).unwrap();
            assert!((kw.p_value - mw.p_value).abs() < 0.02);
        }
        assert!(kruskal_wallis_eta(&[&[1.0]]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_r(&x, &y).unwrap().effect_size - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap().effect_size + 1.0).abs() < 1e-12);
        let r = pearson_r(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.effect_size - 0.8).abs() < 1e-12);
        // t = 0.8·√2/0.6, two-sided with 2 df: p = 1 − t/√(t² + 2)
        let t = 0.8 * 2f64.sqrt() / 0.6;
        assert!((r.p_value - (1.0 - t / (t * t + 2.0).sqrt())).abs() < 1e-9);
        assert!(pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_correct(&[0.05]).unwrap(), vec![0.05]);
        assert_eq!(holm_correct(&[0.01, 0.04]).unwrap(), vec![0.02, 0.04]);
        assert_eq!(holm_correct(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
        assert_eq!(holm_correct(&[0.04, 0.01]).unwrap(), vec![0.04, 0.02]);
        assert!(holm_correct(&[1.2]).is_err());
    }

    #[test]
    fn strength_requires_significance() {
        let mut r = StatResult::new(TestKind::Pearson, 0.6, 0.01, 0.6);
        assert_eq!(r.strength, Some(Strength::Strong));
        r.set_adjusted(0.2);
        assert_eq!(r.strength, Some(Strength::NotSignificant));
        for (e, s) in [
            (0.05, Strength::Negligible),
            (0.2, Strength::Weak),
            (0.4, Strength::Moderate),
        ] {
            assert_eq!(
                StatResult::new(TestKind::Pearson, e, 0.001, e).strength,
                Some(s)
            );
        }
    }

    #[test]
    fn characteristic_dispatch() {
        let n = 24;
        let qubits: Vec<f64> = (0..n).map(|i| (2 + i % 4) as f64).collect();
        let linear: Vec<f64> = qubits.iter().map(|q| 0.1 * q).collect();
        let r =
            correlate_characteristics(&linear, Variable::NQubits, &Factor::Numeric(qubits.clone()))
                .unwrap();
        assert!((r.effect_size - 1.0).abs() < 1e-12);
        assert_eq!(r.strength, Some(Strength::Strong));

        let constant = vec![0.3; n];
        let r = correlate_characteristics(&constant, Variable::NQubits, &Factor::Numeric(qubits))
            .unwrap();
        assert_eq!(r.effect_size, 0.0);
        let algos: Vec<String> = (0..n)
            .map(|i| ["ghz", "qft", "bell"][i % 3].to_string())
            .collect();
        let r = correlate_characteristics(
            &constant,
            Variable::Algorithm,
            &Factor::Categorical(algos.clone()),
        )
        .unwrap();
        assert_eq!(r.effect_size, 0.0);
        assert_ne!(r.strength, Some(Strength::Strong));

        let separated: Vec<f64> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    0.1 + 0.001 * i as f64
                } else {
                    0.8 + 0.001 * i as f64
                }
            })
            .collect();
        let two: Vec<String> = (0..n).map(|i| ["a", "b"][i % 2].to_string()).collect();
        let kw = correlate_characteristics(
            &separated,
            Variable::Algorithm,
            &Factor::Categorical(two.clone()),
        )
        .unwrap();
        assert_eq!(kw.test, TestKind::KruskalWallis);
        assert_eq!(kw.strength, Some(Strength::Strong));
        assert!((kw.effect_size - 16.28 / 22.0).abs() < 1e-9);
        let mw =
            correlate_characteristics(&separated, Variable::InputType, &Factor::Categorical(two))
                .unwrap();
        assert_eq!(mw.test, TestKind::MannWhitney);
        assert!(correlate_characteristics(
            &separated,
            Variable::InputType,
            &Factor::Categorical(algos)
        )
        .is_err());
        assert!("#gates".parse::<Variable>().unwrap() == Variable::NGates);
        assert!("colour".parse::<Variable>().is_err());
    }

    #[test]
    fn batch_applies_holm() {
        let n = 30;
        let d: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let factors = vec![
            (
                Variable::NGates,
                Factor::Numeric((0..n).map(|i| i as f64 * 2.0).collect()),
            ),
            (
                Variable::Depth,
                Factor::Numeric((0..n).map(|i| ((i * 7) % 11) as f64).collect()),
            ),
        ];
        let out = correlate_batch(&d, &factors);
        let ps: Vec<f64> = out
            .iter()
            .map(|(_, r)| r.as_ref().unwrap().p_value)
            .collect();
        let adj = holm_correct(&ps).unwrap();
        for ((_, r), a) in out.iter().zip(adj) {
            assert_eq!(r.as_ref().unwrap().p_adjusted, Some(a));
        }
    }

    proptest! {
        #[test]
        fn u_statistics_are_complementary(
            a in prop::collection::btree_set(0u32..10_000, 1..30),
            b in prop::collection::btree_set(10_000u32..20_000, 1..30),
            shuffle in any::<u64>(),
        ) {
            // distinct values across both samples, interleaved by a hash
            let mix = |v: u32| ((v as u64).wrapping_mul(shuffle | 1) % 1_000_003) as f64 + v as f64 * 1e-7;
            let a: Vec<f64> = a.into_iter().map(mix).collect();
            let b: Vec<f64> = b.into_iter().map(mix).collect();
            let ab = mann_whitney_cliffs(&a, &b).unwrap();
            let ba = mann_whitney_cliffs(&b, &a).unwrap();
            let nn = (a.len() * b.len()) as f64;
            prop_assert!((ab.statistic + ba.statistic - nn).abs() < 1e-9);
            prop_assert!((ab.effect_size - (2.0 * ab.statistic / nn - 1.0)).abs() < 1e-12);
        }

        #[test]
        fn holm_is_monotone_and_bounded(ps in prop::collection::vec(0.0f64..=1.0, 1..20)) {
            let adj = holm_correct(&ps).unwrap();
            let mut pairs: Vec<(f64, f64)> = ps.iter().copied().zip(adj.iter().copied()).collect();
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            for (p, a) in ps.iter().zip(&adj) {
                prop_assert!(a >= p && *a <= 1.0);
            }
        }

        #[test]
        fn confusion_is_order_free(
            labels in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60),
            seed in any::<u64>(),
        ) {
            let recs: Vec<_> = labels
                .iter()
                .map(|&(ne, d)| rec(if ne { Label::NonEquivalent } else { Label::Equivalent }, d))
                .collect();
            let mut shuffled = recs.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = confusion_and_scores(&recs).unwrap();
            let b = confusion_and_scores(&shuffled).unwrap();
            prop_assert_eq!(a.confusion, b.confusion);
            prop_assert_eq!(a.confusion.total(), recs.len() as u64);
            for s in [a.accuracy, a.precision, a.recall, a.f1] {
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn eta_squared_is_bounded(
            groups in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..10), 2..5)
        ) {
            let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
            let r = kruskal_wallis_eta(&refs).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.effect_size));
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
