//! The on-disk workflow: mutant generation and selection, execution,
//! distance measurement, threshold application, reporting and analysis.
//!
//! A run directory looks like
//!
//! ```text
//! manifest.json
//! circuits/<cut>.qasm
//! suites/<cut>/{manifest.json, <input>.qasm}
//! mutants/<cut>/{manifest.json, <mutant>.qasm}
//! executions/<backend>/<cut>/<program>.json
//! density/<content hash>.bin
//! ```
//!
//! where `<program>` is `cut` for the circuit under test and the mutant id
//! otherwise.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    correlate_characteristics, holm_correct, variance_ratio, ConfusionMatrix, Dispersion, Factor,
    Scores, StatResult, Strength, TestKind, Variable,
};
use crate::circuit::read_qasm_file;
use crate::inputs::{build_suite, InputType, TestSuite};
use crate::metrics::{
    expectation_diff, fidelity, hellinger, hellinger_probs, jensen_shannon, jensen_shannon_probs,
    trace_distance,
};
use crate::mutate::{
    enumerate_mutants, gen_equivalent, label_all, load_mutants, sample_balanced, save_mutants,
    EnumerateOptions, GateType, Label, Mutant, Operator, Segment, EQUIVALENCE_TOL,
};
use crate::rng::{derive_seed, fnv1a64, RNG_ALGORITHM};
use crate::sim::{
    density_from_bytes, density_to_bytes, expectation_from_counts, expectation_from_density,
    readout_probabilities, run_density, sample_from, DEFAULT_QUBIT_CAP,
};
use crate::store::{ensure_dir, read_json, write_bytes_atomic, write_json, write_text};
use crate::thresholds::{
    calibrate_set, classify, corpus_hash, CalibrationConfig, CorpusEntry, Strategy, ThresholdSet,
    DEFAULT_PERCENTILE, DEFAULT_RUNS, DEFAULT_SHOTS,
};
use crate::{
    characteristics, compose, emit_qasm, Circuit, DensityMatrix, Error, MetricKind, NoiseModel,
    OutputDistribution, Result,
};

/// Backend name of the ideal simulator.
pub const NOISELESS: &str = "noiseless";
/// Program name used for the circuit under test in execution paths.
pub const CUT_PROGRAM: &str = "cut";
/// Header of the distances CSV.
pub const DISTANCES_HEADER: &str = "algorithm,circuit_id,n_qubits,mutant_id,mutant_label,operator,gate_type,segment,input_id,input_type,backend,run_index,metric,value";

/// What a mutant execution is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// The exact noiseless output of the CUT on the same input, which is also
    /// what thresholds are calibrated against.
    #[default]
    Theoretical,
    /// The CUT execution with the same input, backend and run index.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus_dir: PathBuf,
    pub operators: Vec<Operator>,
    /// Sampled mutants per CUT.
    pub mutant_quota: usize,
    /// Equivalent-by-construction mutants per CUT.
    pub equivalents: usize,
    pub shots: u64,
    pub runs: usize,
    pub percentile: f64,
    pub noise_models: Vec<NoiseModel>,
    pub include_noiseless: bool,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub reference: Reference,
    pub qubit_cap: usize,
}

impl ExperimentConfig {
    pub fn new(corpus_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus_dir: corpus_dir.into(),
            operators: Operator::ALL.to_vec(),
            mutant_quota: 20,
            equivalents: 50,
            shots: DEFAULT_SHOTS,
            runs: DEFAULT_RUNS,
            percentile: DEFAULT_PERCENTILE,
            noise_models: Vec::new(),
            include_noiseless: true,
            master_seed: 0,
            out_dir: out_dir.into(),
            reference: Reference::Theoretical,
            qubit_cap: DEFAULT_QUBIT_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if self.runs < 2 {
            return bad(format!("runs must be at least 2, got {}", self.runs));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return bad(format!("percentile {} outside (0, 1)", self.percentile));
        }
        if self.operators.is_empty() {
            return bad("at least one mutation operator is required".into());
        }
        if !self.include_noiseless && self.noise_models.is_empty() {
            return bad("no backend selected".into());
        }
        let mut names = BTreeSet::new();
        for nm in &self.noise_models {
            nm.validate()?;
            if nm.name == NOISELESS || nm.name == CUT_PROGRAM {
                return bad(format!("noise model name `{}` is reserved", nm.name));
            }
            if !names.insert(&nm.name) {
                return bad(format!("duplicate noise model `{}`", nm.name));
            }
        }
        Ok(())
    }

    /// Backend names in execution order.
    pub fn backends(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.include_noiseless {
            out.push(NOISELESS.to_string());
        }
        out.extend(self.noise_models.iter().map(|m| m.name.clone()));
        out
    }

    fn noise_model(&self, backend: &str) -> Option<&NoiseModel> {
        self.noise_models.iter().find(|m| m.name == backend)
    }
}

/// Loads noise models from JSON files, in the order given.
pub fn load_noise_models(paths: &[PathBuf]) -> Result<Vec<NoiseModel>> {
    paths.iter().map(|p| NoiseModel::load(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputType {
    /// A single most likely outcome with probability at least one half.
    Dominant,
    Diverse,
}

impl fmt::Display for OutputType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputType::Dominant => "dominant",
            OutputType::Diverse => "diverse",
        })
    }
}

/// Classifies the noiseless output of `cut` on |0…0⟩.
pub fn output_type(cut: &Circuit) -> Result<OutputType> {
    let p = run_density(cut, None)?.probabilities();
    let mut sorted: Vec<f64> = p.values().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let unique_top = sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9;
    Ok(if unique_top && sorted[0] >= 0.5 - 1e-12 {
        OutputType::Dominant
    } else {
        OutputType::Diverse
    })
}

/// `qft_4` → `qft`.
pub fn algorithm_name(stem: &str) -> &str {
    stem.rsplit_once('_').map_or(stem, |(head, _)| head)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutInfo {
    pub name: String,
    pub algorithm: String,
    pub n_qubits: usize,
    pub n_gates: usize,
    pub depth: usize,
    pub output_type: OutputType,
    pub n_mutants: usize,
    pub n_equivalent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub rng_algorithm: String,
    pub corpus_hash: String,
    pub backends: Vec<String>,
    pub cuts: Vec<CutInfo>,
    /// Corpus files left out, with the reason.
    pub skipped: Vec<String>,
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub cuts: Vec<RunCut>,
}

#[derive(Debug, Clone)]
pub struct RunCut {
    pub info: CutInfo,
    pub circuit: Circuit,
    pub suite: TestSuite,
    pub mutants: Vec<Mutant>,
}

impl Run {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
        let mut cuts = Vec::with_capacity(manifest.cuts.len());
        for info in &manifest.cuts {
            let mut circuit =
                read_qasm_file(&dir.join("circuits").join(format!("{}.qasm", info.name)))?;
            circuit.name = info.name.clone();
            cuts.push(RunCut {
                circuit,
                suite: TestSuite::load(&dir.join("suites").join(&info.name))?,
                mutants: load_mutants(&dir.join("mutants").join(&info.name))?,
                info: info.clone(),
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            cuts,
        })
    }

    pub fn corpus(&self) -> Vec<CorpusEntry> {
        self.cuts
            .iter()
            .map(|c| (c.circuit.clone(), c.suite.clone()))
            .collect()
    }

    fn execution_path(&self, backend: &str, cut: &str, program: &str) -> PathBuf {
        execution_path(&self.dir, backend, cut, program)
    }
}

fn execution_path(dir: &Path, backend: &str, cut: &str, program: &str) -> PathBuf {
    dir.join("executions")
        .join(backend)
        .join(cut)
        .join(format!("{program}.json"))
}

fn density_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join("density").join(format!("{hash}.bin"))
}

/// Reads every `*.qasm` directly inside `dir`, sorted by file name. Circuits
/// above `cap` qubits are skipped with a warning and reported back.
pub fn load_corpus(dir: &Path, cap: usize) -> Result<(Vec<Circuit>, Vec<String>)> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "qasm"))
        .collect();
    paths.sort();
    let mut circuits = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let c = read_qasm_file(&path)?;
        if c.n_qubits > cap {
            warn!(
                "skipping {}: {} qubits exceeds the cap of {cap}",
                path.display(),
                c.n_qubits
            );
            skipped.push(format!("{}: {} qubits > cap {cap}", c.name, c.n_qubits));
            continue;
        }
        circuits.push(c);
    }
    if circuits.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no usable circuits in {}",
            dir.display()
        )));
    }
    Ok((circuits, skipped))
}

/// Stage A: builds suites, generates, labels and samples mutants, and writes
/// everything except executions to `cfg.out_dir`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Run> {
    cfg.validate()?;
    let (circuits, skipped) = load_corpus(&cfg.corpus_dir, cfg.qubit_cap)?;
    let dir = cfg.out_dir.clone();
    ensure_dir(&dir)?;
    let opts = EnumerateOptions {
        operators: cfg.operators.iter().copied().collect(),
        ..EnumerateOptions::default()
    };
    let mut cuts = Vec::with_capacity(circuits.len());
    for cut in circuits {
        let name = cut.name.clone();
        let suite = build_suite(
            cut.n_qubits,
            derive_seed(cfg.master_seed, &[&name, "suite"]),
        )?;
        let mut pool = enumerate_mutants(
            &cut,
            &opts,
            derive_seed(cfg.master_seed, &[&name, "enumerate"]),
        )?;
        let quota = cfg.mutant_quota.min(pool.len());
        if quota < cfg.mutant_quota {
            warn!(
                "{name}: only {} mutants available for a quota of {}",
                pool.len(),
                cfg.mutant_quota
            );
        }
        let mut mutants = if quota == 0 {
            Vec::new()
        } else {
            pool.sort_by(|a, b| a.id.cmp(&b.id));
            sample_balanced(
                &pool,
                quota,
                derive_seed(cfg.master_seed, &[&name, "sample"]),
            )?
        };
        if cfg.equivalents > 0 {
            mutants.extend(gen_equivalent(
                &cut,
                cfg.equivalents,
                derive_seed(cfg.master_seed, &[&name, "equivalent"]),
            )?);
        }
        if !mutants.is_empty() {
            label_all(&cut, &mut mutants, &suite, EQUIVALENCE_TOL)?;
        }
        mutants.sort_by(|a, b| a.id.cmp(&b.id));
        let ch = characteristics(&cut);
        let info = CutInfo {
            algorithm: algorithm_name(&name).to_string(),
            n_qubits: cut.n_qubits,
            n_gates: ch.n_gates,
            depth: ch.depth,
            output_type: output_type(&cut)?,
            n_mutants: mutants.len(),
            n_equivalent: mutants
                .iter()
                .filter(|m| m.label == Label::Equivalent)
                .count(),
            name,
        };
        info!(
            "{}: {} mutants ({} equivalent), {} inputs",
            info.name,
            info.n_mutants,
            info.n_equivalent,
            suite.len()
        );
        write_text(
            &dir.join("circuits").join(format!("{}.qasm", info.name)),
            &emit_qasm(&cut),
        )?;
        suite.save(&dir.join("suites").join(&info.name))?;
        save_mutants(&dir.join("mutants").join(&info.name), &mutants)?;
        cuts.push(RunCut {
            info,
            circuit: cut,
            suite,
            mutants,
        });
    }
    let corpus: Vec<CorpusEntry> = cuts
        .iter()
        .map(|c| (c.circuit.clone(), c.suite.clone()))
        .collect();
    let manifest = RunManifest {
        config: cfg.clone(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        corpus_hash: corpus_hash(&corpus),
        backends: cfg.backends(),
        cuts: cuts.iter().map(|c| c.info.clone()).collect(),
        skipped,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(Run {
        dir,
        manifest,
        cuts,
    })
}

/// One (program, input, backend, run) execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub circuit_id: String,
    pub program: String,
    pub input_id: String,
    pub backend: String,
    pub run_index: usize,
    pub seed: u64,
    pub shots: u64,
    pub counts: BTreeMap<String, u64>,
    /// ⟨Z^⊗n⟩ estimated from the counts.
    pub expectation: f64,
    /// Content hash of the final density matrix under `density/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
}

impl ExecutionRecord {
    pub fn distribution(&self, n_qubits: usize) -> Result<OutputDistribution> {
        OutputDistribution::new(n_qubits, self.counts.clone())
    }
}

fn store_density(dir: &Path, rho: &DensityMatrix) -> Result<String> {
    let bytes = density_to_bytes(rho);
    let hash = format!("{:016x}", fnv1a64(&bytes));
    let path = density_path(dir, &hash);
    if !path.exists() {
        write_bytes_atomic(&path, &bytes)?;
    }
    Ok(hash)
}

pub fn load_density(run_dir: &Path, hash: &str) -> Result<DensityMatrix> {
    let path = density_path(run_dir, hash);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    density_from_bytes(&bytes).map_err(|e| e.in_file(path))
}

fn execute_program(
    run: &Run,
    cut: &RunCut,
    program: &str,
    circuit: &Circuit,
    backend: &str,
) -> Result<usize> {
    let cfg = &run.manifest.config;
    let nm = cfg.noise_model(backend);
    let mut records = Vec::with_capacity(cut.suite.len() * cfg.runs);
    for input in &cut.suite.inputs {
        let rho = run_density(&compose(&input.prep, circuit)?, nm)?;
        let hash = store_density(&run.dir, &rho)?;
        let p = readout_probabilities(&rho, nm)?;
        for run_index in 0..cfg.runs {
            let seed = derive_seed(
                cfg.master_seed,
                &[
                    &cut.info.name,
                    program,
                    &input.id,
                    backend,
                    &run_index.to_string(),
                ],
            );
            let dist = sample_from(&p, cfg.shots, seed)?;
            records.push(ExecutionRecord {
                circuit_id: cut.info.name.clone(),
                program: program.to_string(),
                input_id: input.id.clone(),
                backend: backend.to_string(),
                run_index,
                seed,
                shots: cfg.shots,
                expectation: expectation_from_counts(&dist).value(),
                counts: dist.counts,
                density: Some(hash.clone()),
            });
        }
    }
    let path = run.execution_path(backend, &cut.info.name, program);
    write_json(&path, &records)?;
    Ok(records.len())
}

/// Stage B: executes every (CUT ∪ mutants) × input × backend × run of a
/// prepared run directory. Returns the number of execution records.
pub fn execute(run: &Run) -> Result<usize> {
    let mut tasks: Vec<(&RunCut, &str, &Circuit, &str)> = Vec::new();
    for cut in &run.cuts {
        for backend in &run.manifest.backends {
            tasks.push((cut, CUT_PROGRAM, &cut.circuit, backend));
            for m in &cut.mutants {
                tasks.push((cut, &m.id, &m.circuit, backend));
            }
        }
    }
    let counts: Vec<usize> = tasks
        .par_iter()
        .map(|(cut, program, circuit, backend)| {
            execute_program(run, cut, program, circuit, backend)
        })
        .collect::<Result<_>>()?;
    let total = counts.iter().sum();
    info!("{total} executions written under {}", run.dir.display());
    Ok(total)
}

/// Stages A and B.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Run> {
    let run = prepare(cfg)?;
    execute(&run)?;
    Ok(run)
}

pub fn read_executions(
    run: &Run,
    backend: &str,
    cut: &str,
    program: &str,
) -> Result<Vec<ExecutionRecord>> {
    let path = run.execution_path(backend, cut, program);
    if !path.exists() {
        return Err(Error::Missing(format!(
            "no executions for {program} of {cut} on {backend} ({})",
            path.display()
        )));
    }
    read_json(&path)
}

/// One row of the distances CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub algorithm: String,
    pub circuit_id: String,
    pub n_qubits: usize,
    pub mutant_id: String,
    pub mutant_label: Label,
    pub operator: Operator,
    pub gate_type: GateType,
    pub segment: Segment,
    pub input_id: String,
    pub input_type: InputType,
    pub backend: String,
    pub run_index: usize,
    pub metric: MetricKind,
    pub value: f64,
}

impl DistanceRecord {
    fn sort_key(&self) -> (&str, &str, &str, usize, MetricKind) {
        (
            &self.mutant_id,
            &self.input_id,
            &self.backend,
            self.run_index,
            self.metric,
        )
    }
}

struct CutReference {
    rho: DensityMatrix,
    probs: crate::sim::Probabilities,
    z: crate::sim::ExpectationValue,
}

fn mutant_distances(
    run: &Run,
    cut: &RunCut,
    mutant: &Mutant,
    backend: &str,
    theory: &HashMap<&str, CutReference>,
) -> Result<Vec<DistanceRecord>> {
    let n = cut.info.n_qubits;
    let records = read_executions(run, backend, &cut.info.name, &mutant.id)?;
    let paired: Option<HashMap<(String, usize), ExecutionRecord>> =
        match run.manifest.config.reference {
            Reference::Theoretical => None,
            Reference::Paired => Some(
                read_executions(run, backend, &cut.info.name, CUT_PROGRAM)?
                    .into_iter()
                    .map(|r| ((r.input_id.clone(), r.run_index), r))
                    .collect(),
            ),
        };
    let mut density_cache: HashMap<(String, String), (f64, f64)> = HashMap::new();
    let mut out = Vec::with_capacity(records.len() * MetricKind::ALL.len());
    for rec in &records {
        let input = cut.suite.get(&rec.input_id).ok_or_else(|| {
            Error::Missing(format!(
                "input `{}` is not in the suite of {}",
                rec.input_id, cut.info.name
            ))
        })?;
        let dist = rec.distribution(n)?;
        let mut values: Vec<(MetricKind, f64)> = Vec::with_capacity(5);
        let (ref_hash, ref_rho) = match &paired {
            None => {
                let t = &theory[rec.input_id.as_str()];
                values.push((
                    MetricKind::Hellinger,
                    hellinger_probs(&t.probs, &dist.probabilities())?,
                ));
                values.push((
                    MetricKind::JensenShannon,
                    jensen_shannon_probs(&t.probs, &dist.probabilities())?,
                ));
                values.push((
                    MetricKind::ExpectationDiff,
                    expectation_diff(t.z, crate::sim::ExpectationValue::new(rec.expectation)?),
                ));
                (String::from("theory"), Some(&t.rho))
            }
            Some(map) => {
                let other = map
                    .get(&(rec.input_id.clone(), rec.run_index))
                    .ok_or_else(|| {
                        Error::Missing(format!(
                            "no CUT execution for input {} run {} on {backend}",
                            rec.input_id, rec.run_index
                        ))
                    })?;
                let cut_dist = other.distribution(n)?;
                values.push((MetricKind::Hellinger, hellinger(&cut_dist, &dist)?));
                values.push((MetricKind::JensenShannon, jensen_shannon(&cut_dist, &dist)?));
                values.push((
                    MetricKind::ExpectationDiff,
                    (other.expectation - rec.expectation).abs(),
                ));
                (other.density.clone().unwrap_or_default(), None)
            }
        };
        if let Some(hash) = &rec.density {
            let key = (ref_hash.clone(), hash.clone());
            let (td, f) = match density_cache.get(&key) {
                Some(v) => *v,
                None => {
                    let rho = load_density(&run.dir, hash)?;
                    let reference = match ref_rho {
                        Some(r) => r.clone(),
                        None => load_density(&run.dir, &ref_hash)?,
                    };
                    let v = (
                        trace_distance(&reference, &rho)?,
                        fidelity(&reference, &rho)?,
                    );
                    density_cache.insert(key, v);
                    v
                }
            };
            values.push((MetricKind::TraceDistance, td));
            values.push((MetricKind::Fidelity, f));
        }
        for (metric, value) in values {
            out.push(DistanceRecord {
                algorithm: cut.info.algorithm.clone(),
                circuit_id: cut.info.name.clone(),
                n_qubits: n,
                mutant_id: mutant.id.clone(),
                mutant_label: mutant.label,
                operator: mutant.mutation.operator,
                gate_type: mutant.mutation.gate_type,
                segment: mutant.mutation.segment,
                input_id: rec.input_id.clone(),
                input_type: input.input_type,
                backend: backend.to_string(),
                run_index: rec.run_index,
                metric,
                value,
            });
        }
    }
    Ok(out)
}

/// Stage C: distances of every mutant execution to its reference, sorted by
/// (mutant, input, backend, run, metric).
pub fn compute_distances(run: &Run) -> Result<Vec<DistanceRecord>> {
    let mut tasks = Vec::new();
    let mut theory: HashMap<&str, HashMap<&str, CutReference>> = HashMap::new();
    for cut in &run.cuts {
        let mut refs = HashMap::new();
        for input in &cut.suite.inputs {
            let rho = run_density(&compose(&input.prep, &cut.circuit)?, None)?;
            refs.insert(
                input.id.as_str(),
                CutReference {
                    probs: rho.probabilities(),
                    z: expectation_from_density(&rho),
                    rho,
                },
            );
        }
        theory.insert(cut.info.name.as_str(), refs);
        for backend in &run.manifest.backends {
            for m in &cut.mutants {
                tasks.push((cut, m, backend.as_str()));
            }
        }
    }
    let chunks: Vec<Vec<DistanceRecord>> = tasks
        .par_iter()
        .map(|(cut, m, backend)| {
            mutant_distances(run, cut, m, backend, &theory[cut.info.name.as_str()])
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<DistanceRecord> = chunks.into_iter().flatten().collect();
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: Option<&str>) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_path(path)
        .map_err(|e| Error::format(path, e))?;
    if rows.is_empty() {
        if let Some(h) = header {
            w.write_record(h.split(','))
                .map_err(|e| Error::format(path, e))?;
        }
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e)))
        .collect()
}

pub fn write_distances(path: &Path, rows: &[DistanceRecord]) -> Result<()> {
    write_csv(path, rows, Some(DISTANCES_HEADER))
}

pub fn read_distances(path: &Path) -> Result<Vec<DistanceRecord>> {
    read_csv(path)
}

/// Calibrates thresholds on the run's corpus and noise models.
pub fn calibrate_run(run: &Run) -> Result<ThresholdSet> {
    let cfg = &run.manifest.config;
    let cal = CalibrationConfig {
        runs: cfg.runs,
        shots: cfg.shots,
        percentile: cfg.percentile,
        seed: derive_seed(cfg.master_seed, &["calibrate"]),
    };
    calibrate_set(&run.corpus(), &cfg.noise_models, &cal)
}

/// One row of a detections CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub circuit_id: String,
    pub mutant_id: String,
    pub mutant_label: Label,
    pub input_id: String,
    pub backend: String,
    pub run_index: usize,
    pub metric: MetricKind,
    pub value: f64,
    pub strategy: Strategy,
    pub threshold: f64,
    pub detected: bool,
}

/// Stage D: flags each distance with the threshold of `strategy`.
pub fn apply_thresholds(
    rows: &[DistanceRecord],
    set: &ThresholdSet,
    strategy: &Strategy,
) -> Result<Vec<DetectionRow>> {
    let mut cache: BTreeMap<MetricKind, f64> = BTreeMap::new();
    rows.iter()
        .map(|r| {
            let t = match cache.get(&r.metric) {
                Some(t) => *t,
                None => {
                    let t = set.get(r.metric, strategy).ok_or_else(|| {
                        Error::Missing(format!("no {strategy} threshold for {}", r.metric))
                    })?;
                    cache.insert(r.metric, t);
                    t
                }
            };
            Ok(DetectionRow {
                circuit_id: r.circuit_id.clone(),
                mutant_id: r.mutant_id.clone(),
                mutant_label: r.mutant_label,
                input_id: r.input_id.clone(),
                backend: r.backend.clone(),
                run_index: r.run_index,
                metric: r.metric,
                value: r.value,
                strategy: strategy.clone(),
                threshold: t,
                detected: classify(r.value, t, r.metric.orientation()),
            })
        })
        .collect()
}

pub fn write_detections(path: &Path, rows: &[DetectionRow]) -> Result<()> {
    write_csv(path, rows, None)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    read_csv(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub metric: MetricKind,
    pub strategy: Strategy,
    pub backend: String,
    pub n_mutants: usize,
    /// A mutant counts as detected when any of its executions is flagged.
    pub per_mutant: Scores,
    /// Every (mutant, input, run) comparison scored on its own.
    pub per_comparison: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<ReportCell>,
}

impl Report {
    pub fn cell(
        &self,
        metric: MetricKind,
        strategy: &Strategy,
        backend: &str,
    ) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.metric == metric && &c.strategy == strategy && c.backend == backend)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn non_equivalent(label: Label, mutant_id: &str) -> Result<bool> {
    match label {
        Label::Equivalent => Ok(false),
        Label::NonEquivalent => Ok(true),
        Label::Unlabeled => Err(Error::InvalidArgument(format!(
            "mutant `{mutant_id}` has no ground-truth label"
        ))),
    }
}

/// Stage E: confusion matrices and scores per (metric, strategy, backend).
pub fn report(rows: &[DetectionRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no detections to report".into()));
    }
    type Cell<'a> = (ConfusionMatrix, BTreeMap<&'a str, (bool, bool)>);
    let mut cells: BTreeMap<(MetricKind, &Strategy, &str), Cell> = BTreeMap::new();
    for r in rows {
        let ne = non_equivalent(r.mutant_label, &r.mutant_id)?;
        let cell = cells
            .entry((r.metric, &r.strategy, r.backend.as_str()))
            .or_default();
        cell.0.record(ne, r.detected);
        let m = cell.1.entry(r.mutant_id.as_str()).or_insert((ne, false));
        m.1 |= r.detected;
    }
    let cells = cells
        .into_iter()
        .map(|((metric, strategy, backend), (comparisons, mutants))| {
            let mut per_mutant = ConfusionMatrix::default();
            for (ne, detected) in mutants.values() {
                per_mutant.record(*ne, *detected);
            }
            Ok(ReportCell {
                metric,
                strategy: strategy.clone(),
                backend: backend.to_string(),
                n_mutants: mutants.len(),
                per_mutant: Scores::from_confusion(per_mutant)?,
                per_comparison: Scores::from_confusion(comparisons)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Report { cells })
}

/// How p-values are grouped for the Holm adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolmScope {
    /// One batch per (backend, label, metric) over the characteristic variables.
    #[default]
    PerMetric,
    /// One batch over everything.
    Global,
}

/// One row of the characteristics statistics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub backend: String,
    pub label: Label,
    pub metric: MetricKind,
    pub variable: Variable,
    pub test: TestKind,
    pub n: usize,
    pub statistic: f64,
    pub p: f64,
    pub p_holm: f64,
    pub effect: f64,
    pub strength: Strength,
}

/// Noisy against noiseless spread of the distances of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub backend: String,
    pub label: Label,
    pub metric: MetricKind,
    pub n_noisy: usize,
    pub n_noiseless: usize,
    pub variance_ratio: f64,
    pub statistic: f64,
    pub p: f64,
    pub p_holm: f64,
    pub dispersion: Dispersion,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Analysis {
    pub stats: Vec<StatRow>,
    pub dispersion: Vec<DispersionRow>,
}

impl Analysis {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join("stats.csv"), &self.stats, None)?;
        write_csv(&dir.join("dispersion.csv"), &self.dispersion, None)
    }
}

struct Comparison<'a> {
    row: &'a DistanceRecord,
    mean: f64,
}

fn factor_of(
    variable: Variable,
    comps: &[Comparison],
    cuts: &HashMap<&str, &CutInfo>,
    positions: &HashMap<&str, usize>,
) -> Result<Factor> {
    let cut = |c: &Comparison| -> Result<&CutInfo> {
        cuts.get(c.row.circuit_id.as_str()).copied().ok_or_else(|| {
            Error::Missing(format!("circuit `{}` is not in the run", c.row.circuit_id))
        })
    };
    let numeric = |f: &dyn Fn(&Comparison) -> Result<f64>| -> Result<Factor> {
        Ok(Factor::Numeric(comps.iter().map(f).collect::<Result<_>>()?))
    };
    let text = |f: &dyn Fn(&Comparison) -> Result<String>| -> Result<Factor> {
        Ok(Factor::Categorical(
            comps.iter().map(f).collect::<Result<_>>()?,
        ))
    };
    match variable {
        Variable::NQubits => numeric(&|c| Ok(c.row.n_qubits as f64)),
        Variable::NGates => numeric(&|c| Ok(cut(c)?.n_gates as f64)),
        Variable::Depth => numeric(&|c| Ok(cut(c)?.depth as f64)),
        Variable::RelativePosition => numeric(&|c| {
            let pos = positions.get(c.row.mutant_id.as_str()).ok_or_else(|| {
                Error::Missing(format!("mutant `{}` is not in the run", c.row.mutant_id))
            })?;
            Ok((*pos as f64 / cut(c)?.n_gates.max(1) as f64).min(1.0))
        }),
        Variable::GateType => text(&|c| Ok(c.row.gate_type.to_string())),
        Variable::InputType => text(&|c| Ok(format!("{:?}", c.row.input_type).to_lowercase())),
        Variable::OutputType => text(&|c| Ok(cut(c)?.output_type.to_string())),
        Variable::Algorithm => text(&|c| Ok(c.row.algorithm.clone())),
        Variable::Operator => text(&|c| Ok(c.row.operator.to_string())),
    }
}

/// Stage E statistics: characteristic correlations per (backend, label,
/// metric) on run-averaged comparison distances, and the noisy/noiseless
/// variance ratio of every noisy backend on the raw distances.
pub fn analyze(run: &Run, rows: &[DistanceRecord], scope: HolmScope) -> Result<Analysis> {
    let cuts: HashMap<&str, &CutInfo> = run
        .cuts
        .iter()
        .map(|c| (c.info.name.as_str(), &c.info))
        .collect();
    let positions: HashMap<&str, usize> = run
        .cuts
        .iter()
        .flat_map(|c| {
            c.mutants
                .iter()
                .map(|m| (m.id.as_str(), m.mutation.position))
        })
        .collect();

    // (backend, label, metric) → (mutant, input) → values over runs
    type Groups<'a> = BTreeMap<
        (&'a str, Label, MetricKind),
        BTreeMap<(&'a str, &'a str), Vec<&'a DistanceRecord>>,
    >;
    let mut groups: Groups = BTreeMap::new();
    for r in rows {
        if r.mutant_label == Label::Unlabeled {
            continue;
        }
        groups
            .entry((r.backend.as_str(), r.mutant_label, r.metric))
            .or_default()
            .entry((r.mutant_id.as_str(), r.input_id.as_str()))
            .or_default()
            .push(r);
    }

    let cells: Vec<_> = groups.iter().collect();
    let per_cell: Vec<Vec<(StatRow, usize)>> = cells
        .par_iter()
        .enumerate()
        .map(|(ci, ((backend, label, metric), comps))| {
            let comps: Vec<Comparison> = comps
                .values()
                .map(|rs| Comparison {
                    row: rs[0],
                    mean: rs.iter().map(|r| r.value).sum::<f64>() / rs.len() as f64,
                })
                .collect();
            let distances: Vec<f64> = comps.iter().map(|c| c.mean).collect();
            let mut out = Vec::new();
            for variable in Variable::ALL {
                let factor = factor_of(variable, &comps, &cuts, &positions)?;
                match correlate_characteristics(&distances, variable, &factor) {
                    Ok(s) => out.push((
                        stat_row(backend, *label, *metric, variable, distances.len(), &s),
                        ci,
                    )),
                    Err(e) => log::debug!("{backend}/{label:?}/{metric}/{variable}: skipped ({e})"),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut stats: Vec<(StatRow, usize)> = per_cell.into_iter().flatten().collect();
    apply_holm(&mut stats, scope);
    let stats = stats.into_iter().map(|(s, _)| s).collect();

    let mut dispersion = Vec::new();
    let noiseless: BTreeMap<(Label, MetricKind), Vec<f64>> = rows
        .iter()
        .filter(|r| r.backend == NOISELESS && r.mutant_label != Label::Unlabeled)
        .fold(BTreeMap::new(), |mut acc, r| {
            acc.entry((r.mutant_label, r.metric))
                .or_default()
                .push(r.value);
            acc
        });
    let mut noisy: BTreeMap<(&str, Label, MetricKind), Vec<f64>> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.backend != NOISELESS && r.mutant_label != Label::Unlabeled)
    {
        noisy
            .entry((r.backend.as_str(), r.mutant_label, r.metric))
            .or_default()
            .push(r.value);
    }
    for ((backend, label, metric), values) in &noisy {
        let Some(base) = noiseless.get(&(*label, *metric)) else {
            continue;
        };
        match variance_ratio(values, base) {
            Ok(s) => dispersion.push(DispersionRow {
                backend: backend.to_string(),
                label: *label,
                metric: *metric,
                n_noisy: values.len(),
                n_noiseless: base.len(),
                variance_ratio: s.effect_size,
                statistic: s.statistic,
                p: s.p_value,
                p_holm: s.p_value,
                dispersion: s.dispersion.expect("variance ratio sets dispersion"),
            }),
            Err(e) => log::debug!("{backend}/{label:?}/{metric}: no variance ratio ({e})"),
        }
    }
    let batches: BTreeMap<MetricKind, Vec<usize>> =
        dispersion
            .iter()
            .enumerate()
            .fold(BTreeMap::new(), |mut acc, (i, d)| {
                let key = match scope {
                    HolmScope::PerMetric => d.metric,
                    HolmScope::Global => MetricKind::ALL[0],
                };
                acc.entry(key).or_default().push(i);
                acc
            });
    for idx in batches.values() {
        let ps: Vec<f64> = idx.iter().map(|&i| dispersion[i].p).collect();
        for (&i, adj) in idx.iter().zip(holm_correct(&ps)?) {
            dispersion[i].p_holm = adj;
        }
    }
    Ok(Analysis { stats, dispersion })
}

fn stat_row(
    backend: &str,
    label: Label,
    metric: MetricKind,
    variable: Variable,
    n: usize,
    s: &StatResult,
) -> StatRow {
    StatRow {
        backend: backend.to_string(),
        label,
        metric,
        variable,
        test: s.test,
        n,
        statistic: s.statistic,
        p: s.p_value,
        p_holm: s.p_value,
        effect: s.effect_size,
        strength: s.strength.unwrap_or(Strength::NotSignificant),
    }
}

fn apply_holm(stats: &mut [(StatRow, usize)], scope: HolmScope) {
    let mut batches: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, cell)) in stats.iter().enumerate() {
        let key = match scope {
            HolmScope::PerMetric => *cell,
            HolmScope::Global => 0,
        };
        batches.entry(key).or_default().push(i);
    }
    for idx in batches.values() {
        let ps: Vec<f64> = idx.iter().map(|&i| stats[i].0.p).collect();
        let adjusted = holm_correct(&ps).expect("p-values lie in [0, 1]");
        for (&i, adj) in idx.iter().zip(adjusted) {
            let row = &mut stats[i].0;
            let mut s = StatResult {
                test: row.test,
                statistic: row.statistic,
                p_value: row.p,
                p_adjusted: None,
                effect_size: row.effect,
                z_effect: None,
                strength: None,
                dispersion: None,
            };
            s.set_adjusted(adj);
            row.p_holm = adj;
            row.strength = s.strength.unwrap_or(Strength::NotSignificant);
        }
    }
}

/// Paths written by [`run_all`], relative to the run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub run_dir: PathBuf,
    pub distances: PathBuf,
    pub thresholds: PathBuf,
    pub report: PathBuf,
    pub stats: PathBuf,
    pub dispersion: PathBuf,
    pub n_executions: usize,
    pub n_distances: usize,
}

/// Every stage end to end. Detections are scored for every threshold
/// strategy; `detections/<strategy>.csv` is written only when
/// `keep_detections` is set.
pub fn run_all(
    cfg: &ExperimentConfig,
    keep_detections: bool,
    scope: HolmScope,
) -> Result<Artifacts> {
    let run = prepare(cfg)?;
    let n_executions = execute(&run)?;
    let distances = compute_distances(&run)?;
    let dir = run.dir.clone();
    let distances_path = dir.join("distances.csv");
    write_distances(&distances_path, &distances)?;
    let set = calibrate_run(&run)?;
    let thresholds_path = dir.join("thresholds.json");
    set.save(&thresholds_path)?;
    let mut detections = Vec::new();
    for strategy in set.strategies() {
        let rows = apply_thresholds(&distances, &set, &strategy)?;
        if keep_detections {
            write_detections(
                &dir.join("detections")
                    .join(format!("{}.csv", strategy_file(&strategy))),
                &rows,
            )?;
        }
        detections.extend(rows);
    }
    let report_path = dir.join("report.json");
    report(&detections)?.save(&report_path)?;
    let analysis = analyze(&run, &distances, scope)?;
    analysis.save(&dir)?;
    Ok(Artifacts {
        run_dir: dir.clone(),
        distances: distances_path,
        thresholds: thresholds_path,
        report: report_path,
        stats: dir.join("stats.csv"),
        dispersion: dir.join("dispersion.csv"),
        n_executions,
        n_distances: distances.len(),
    })
}

/// File-name form of a strategy (`noise:x` → `noise-x`).
pub fn strategy_file(s: &Strategy) -> String {
    s.to_string().replace(':', "-")
}
