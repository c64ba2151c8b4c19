//! Detection thresholds: calibration against noiseless references, the
//! derived middle and above thresholds, and classification.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::inputs::TestSuite;
use crate::metrics::{
    expectation_diff, fidelity, hellinger_probs, jensen_shannon_probs, trace_distance, MetricKind,
    Orientation,
};
use crate::rng::{derive_seed, fnv1a64};
use crate::sim::{
    expectation_from_counts, expectation_from_density, readout_probabilities, run_density,
    sample_from, NoiseModel,
};
use crate::store::{read_json, write_json};
use crate::{compose, emit_qasm, Circuit, Error, Result};

/// Noiseless trace-distance threshold: float noise on identical states.
pub const NOISELESS_TRACE_DISTANCE: f64 = 1e-13;
/// Noiseless fidelity threshold.
pub const NOISELESS_FIDELITY: f64 = 1.0 - 1e-14;

pub const DEFAULT_PERCENTILE: f64 = 0.875;
pub const DEFAULT_RUNS: usize = 30;
pub const DEFAULT_SHOTS: u64 = 10_000;

/// Backend label used in seeds, file names and threshold tables.
pub fn backend_name(nm: Option<&NoiseModel>) -> &str {
    match nm {
        Some(m) if !m.is_noiseless() => &m.name,
        _ => "noiseless",
    }
}

/// Linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty list".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "percentile {q} outside [0, 1]"
        )));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let h = (x.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(x[lo] + (h - lo as f64) * (x[hi] - x[lo]))
}

/// Per-run distances of one program to its noiseless reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub program_id: String,
    pub distances: Vec<f64>,
}

impl CalibrationSample {
    pub fn mean(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len() as f64
    }

    /// Sample standard deviation (denominator r − 1).
    pub fn std_dev(&self) -> f64 {
        let r = self.distances.len();
        if r < 2 {
            return 0.0;
        }
        let mu = self.mean();
        let ss: f64 = self.distances.iter().map(|d| (d - mu) * (d - mu)).sum();
        (ss / (r - 1) as f64).sqrt()
    }

    pub fn std_error(&self) -> f64 {
        self.std_dev() / (self.distances.len() as f64).sqrt()
    }
}

/// `Q_μ + Q_σ`, or for a similarity metric the lower-tail mirror
/// `Q_{1−q}(μ) − Q_q(σ)`.
pub fn threshold_from_samples(
    samples: &[CalibrationSample],
    orientation: Orientation,
    q: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "calibration needs at least one program".into(),
        ));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile {q} outside (0, 1)"
        )));
    }
    let means: Vec<f64> = samples.iter().map(CalibrationSample::mean).collect();
    let errors: Vec<f64> = samples.iter().map(CalibrationSample::std_error).collect();
    let q_sigma = percentile(&errors, q)?;
    Ok(match orientation {
        Orientation::Dissimilarity => percentile(&means, q)? + q_sigma,
        Orientation::Similarity => percentile(&means, 1.0 - q)? - q_sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub runs: usize,
    pub shots: u64,
    pub percentile: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            shots: DEFAULT_SHOTS,
            percentile: DEFAULT_PERCENTILE,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    fn check(&self) -> Result<()> {
        if self.runs < 2 {
            return Err(Error::InvalidArgument(
                "calibration needs r ≥ 2 runs".into(),
            ));
        }
        if self.shots == 0 {
            return Err(Error::InvalidArgument("shots must be at least 1".into()));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "percentile {} outside (0, 1)",
                self.percentile
            )));
        }
        Ok(())
    }
}

/// One CUT with its inputs.
pub type CorpusEntry = (Circuit, TestSuite);

fn is_noiseless(backend: Option<&NoiseModel>) -> bool {
    backend.is_none_or(NoiseModel::is_noiseless)
}

/// Per-program distances for several metrics at once. Each (CUT, input) pair
/// is one program; samples come back in corpus order.
pub fn calibration_samples(
    corpus: &[CorpusEntry],
    backend: Option<&NoiseModel>,
    metrics: &[MetricKind],
    cfg: &CalibrationConfig,
) -> Result<BTreeMap<MetricKind, Vec<CalibrationSample>>> {
    cfg.check()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("calibration corpus is empty".into()));
    }
    if is_noiseless(backend) {
        if let Some(m) = metrics.iter().find(|m| m.is_density_based()) {
            return Err(Error::InvalidArgument(format!(
                "{m} is not calibrated on the noiseless backend; its threshold is a fixed constant"
            )));
        }
    }
    let programs: Vec<(&Circuit, &crate::inputs::TestInput)> = corpus
        .iter()
        .flat_map(|(cut, suite)| suite.inputs.iter().map(move |input| (cut, input)))
        .collect();
    let bname = backend_name(backend);
    let per_program: Vec<Vec<(MetricKind, CalibrationSample)>> = programs
        .par_iter()
        .map(|(cut, input)| {
            let program = compose(&input.prep, cut)?;
            let ideal = run_density(&program, None)?;
            let ideal_p = ideal.probabilities();
            let ideal_z = expectation_from_density(&ideal);
            let observed = run_density(&program, backend)?;
            let observed_p = readout_probabilities(&observed, backend)?;
            let mut distances: BTreeMap<MetricKind, Vec<f64>> = BTreeMap::new();
            // the simulated density matrix does not vary between runs
            let mut density_d = BTreeMap::new();
            for &m in metrics {
                match m {
                    MetricKind::TraceDistance => {
                        density_d.insert(m, trace_distance(&ideal, &observed)?);
                    }
                    MetricKind::Fidelity => {
                        density_d.insert(m, fidelity(&ideal, &observed)?);
                    }
                    _ => {}
                }
            }
            let needs_shots = metrics.iter().any(|m| !m.is_density_based());
            for run in 0..cfg.runs {
                let counts = if needs_shots {
                    let seed = derive_seed(
                        cfg.seed,
                        &[&cut.name, "cut", &input.id, bname, &run.to_string()],
                    );
                    Some(sample_from(&observed_p, cfg.shots, seed)?)
                } else {
                    None
                };
                for &m in metrics {
                    let d = match (m, &counts) {
                        (MetricKind::TraceDistance | MetricKind::Fidelity, _) => density_d[&m],
                        (MetricKind::Hellinger, Some(c)) => {
                            hellinger_probs(&ideal_p, &c.probabilities())?
                        }
                        (MetricKind::JensenShannon, Some(c)) => {
                            jensen_shannon_probs(&ideal_p, &c.probabilities())?
                        }
                        (MetricKind::ExpectationDiff, Some(c)) => {
                            expectation_diff(ideal_z, expectation_from_counts(c))
                        }
                        _ => unreachable!("shots are drawn whenever a sample metric is requested"),
                    };
                    distances.entry(m).or_default().push(d);
                }
            }
            let program_id = format!("{}|{}", cut.name, input.id);
            Ok(distances
                .into_iter()
                .map(|(m, d)| {
                    (
                        m,
                        CalibrationSample {
                            program_id: program_id.clone(),
                            distances: d,
                        },
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out: BTreeMap<MetricKind, Vec<CalibrationSample>> = BTreeMap::new();
    for program in per_program {
        for (m, s) in program {
            out.entry(m).or_default().push(s);
        }
    }
    Ok(out)
}

/// Calibrated threshold of one metric on one backend.
pub fn calibrate_threshold(
    corpus: &[CorpusEntry],
    backend: Option<&NoiseModel>,
    metric: MetricKind,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    let samples = calibration_samples(corpus, backend, &[metric], cfg)?;
    threshold_from_samples(&samples[&metric], metric.orientation(), cfg.percentile)
}

/// Midpoint between the noiseless threshold and the noise threshold nearest to it.
pub fn derive_middle(t_noiseless: f64, t_noise: &[f64], orientation: Orientation) -> Result<f64> {
    let nearest = nearest_noise(t_noise, orientation)?;
    Ok((nearest + t_noiseless) / 2.0)
}

/// As far beyond the farthest noise threshold as the middle sits before the nearest.
pub fn derive_above(t_noise: &[f64], t_middle: f64, orientation: Orientation) -> Result<f64> {
    let nearest = nearest_noise(t_noise, orientation)?;
    let farthest = farthest_noise(t_noise, orientation)?;
    Ok(match orientation {
        Orientation::Dissimilarity => farthest + (nearest - t_middle),
        Orientation::Similarity => farthest - (t_middle - nearest),
    })
}

fn nearest_noise(t_noise: &[f64], orientation: Orientation) -> Result<f64> {
    extreme(t_noise, orientation == Orientation::Similarity)
}

fn farthest_noise(t_noise: &[f64], orientation: Orientation) -> Result<f64> {
    extreme(t_noise, orientation == Orientation::Dissimilarity)
}

fn extreme(values: &[f64], max: bool) -> Result<f64> {
    let it = values.iter().copied();
    let v = if max {
        it.reduce(f64::max)
    } else {
        it.reduce(f64::min)
    };
    v.ok_or_else(|| Error::InvalidArgument("no noise thresholds to derive from".into()))
}

/// Strict comparison: a value equal to the threshold is not detected.
pub fn classify(value: f64, threshold: f64, orientation: Orientation) -> bool {
    match orientation {
        Orientation::Dissimilarity => value > threshold,
        Orientation::Similarity => value < threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Noiseless,
    Noise(String),
    Middle,
    Above,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Noiseless => f.write_str("noiseless"),
            Strategy::Noise(name) => write!(f, "noise:{name}"),
            Strategy::Middle => f.write_str("middle"),
            Strategy::Above => f.write_str("above"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noiseless" => Ok(Strategy::Noiseless),
            "middle" => Ok(Strategy::Middle),
            "above" => Ok(Strategy::Above),
            _ => match s.strip_prefix("noise:") {
                Some(name) if !name.is_empty() => Ok(Strategy::Noise(name.to_string())),
                _ => Err(Error::InvalidArgument(format!("unknown strategy `{s}`"))),
            },
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricThresholds {
    pub noiseless: f64,
    #[serde(default)]
    pub noise: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub middle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub above: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMeta {
    pub q: f64,
    pub r: usize,
    pub shots: u64,
    pub seed: u64,
    pub corpus_hash: String,
    /// How the similarity metric was calibrated.
    #[serde(default)]
    pub fidelity_convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub meta: ThresholdMeta,
    pub thresholds: BTreeMap<MetricKind, MetricThresholds>,
}

/// Hash of the emitted QASM of every CUT and input, in corpus order.
pub fn corpus_hash(corpus: &[CorpusEntry]) -> String {
    let mut text = String::new();
    for (cut, suite) in corpus {
        text.push_str(&emit_qasm(cut));
        for input in &suite.inputs {
            text.push_str(&input.id);
            text.push_str(&emit_qasm(&input.prep));
        }
    }
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

pub const FIDELITY_CONVENTION: &str = "mirrored: Q_(1-q)(means) - Q_q(standard errors)";

/// Calibrates every metric on the noiseless backend and on each noise model,
/// then derives the middle and above thresholds.
pub fn calibrate_set(
    corpus: &[CorpusEntry],
    noise_models: &[NoiseModel],
    cfg: &CalibrationConfig,
) -> Result<ThresholdSet> {
    let sample_metrics: Vec<MetricKind> = MetricKind::ALL
        .into_iter()
        .filter(|m| !m.is_density_based())
        .collect();
    let noiseless = calibration_samples(corpus, None, &sample_metrics, cfg)?;
    let mut thresholds = BTreeMap::new();
    for m in MetricKind::ALL {
        let t = match m {
            MetricKind::TraceDistance => NOISELESS_TRACE_DISTANCE,
            MetricKind::Fidelity => NOISELESS_FIDELITY,
            _ => threshold_from_samples(&noiseless[&m], m.orientation(), cfg.percentile)?,
        };
        thresholds.insert(
            m,
            MetricThresholds {
                noiseless: t,
                noise: BTreeMap::new(),
                middle: None,
                above: None,
            },
        );
    }
    for nm in noise_models {
        if nm.is_noiseless() {
            return Err(Error::InvalidArgument(format!(
                "noise model `{}` has no noise; it is covered by the noiseless backend",
                nm.name
            )));
        }
        let samples = calibration_samples(corpus, Some(nm), &MetricKind::ALL, cfg)?;
        for m in MetricKind::ALL {
            let t = threshold_from_samples(&samples[&m], m.orientation(), cfg.percentile)?;
            thresholds
                .get_mut(&m)
                .expect("all metrics present")
                .noise
                .insert(nm.name.clone(), t);
        }
    }
    let mut set = ThresholdSet {
        meta: ThresholdMeta {
            q: cfg.percentile,
            r: cfg.runs,
            shots: cfg.shots,
            seed: cfg.seed,
            corpus_hash: corpus_hash(corpus),
            fidelity_convention: FIDELITY_CONVENTION.into(),
        },
        thresholds,
    };
    set.derive()?;
    Ok(set)
}

impl ThresholdSet {
    /// Fills in middle and above from the noiseless and noise thresholds.
    /// Metrics without noise thresholds are left untouched.
    pub fn derive(&mut self) -> Result<()> {
        for (m, t) in self.thresholds.iter_mut() {
            if t.noise.is_empty() {
                continue;
            }
            let noise: Vec<f64> = t.noise.values().copied().collect();
            let middle = derive_middle(t.noiseless, &noise, m.orientation())?;
            t.middle = Some(middle);
            t.above = Some(derive_above(&noise, middle, m.orientation())?);
        }
        Ok(())
    }

    pub fn get(&self, metric: MetricKind, strategy: &Strategy) -> Option<f64> {
        let t = self.thresholds.get(&metric)?;
        match strategy {
            Strategy::Noiseless => Some(t.noiseless),
            Strategy::Noise(name) => t.noise.get(name).copied(),
            Strategy::Middle => t.middle,
            Strategy::Above => t.above,
        }
    }

    /// Every strategy that has a value for at least one metric.
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out = vec![Strategy::Noiseless];
        let mut names: Vec<&String> = self
            .thresholds
            .values()
            .flat_map(|t| t.noise.keys())
            .collect();
        names.sort();
        names.dedup();
        out.extend(names.into_iter().map(|n| Strategy::Noise(n.clone())));
        if self.thresholds.values().any(|t| t.middle.is_some()) {
            out.push(Strategy::Middle);
            out.push(Strategy::Above);
        }
        out
    }

    /// Noiseless ≤ Middle ≤ min Noise ≤ max Noise ≤ Above for distances,
    /// reversed for similarities. Returns the violations found.
    pub fn ordering_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (m, t) in &self.thresholds {
            let Some(min) = t.noise.values().copied().reduce(f64::min) else {
                continue;
            };
            let max = t
                .noise
                .values()
                .copied()
                .reduce(f64::max)
                .expect("non-empty");
            let mut chain = vec![("noiseless", t.noiseless)];
            if let Some(mid) = t.middle {
                chain.push(("middle", mid));
            }
            let (near, far) = if m.is_similarity() {
                (max, min)
            } else {
                (min, max)
            };
            chain.push(("nearest noise", near));
            chain.push(("farthest noise", far));
            if let Some(above) = t.above {
                chain.push(("above", above));
            }
            for w in chain.windows(2) {
                let ok = if m.is_similarity() {
                    w[0].1 >= w[1].1
                } else {
                    w[0].1 <= w[1].1
                };
                if !ok {
                    out.push(format!(
                        "{m}: {} {} out of order with {} {}",
                        w[0].0, w[0].1, w[1].0, w[1].1
                    ));
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}
