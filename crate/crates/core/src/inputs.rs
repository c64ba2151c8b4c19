//! Test inputs: classical basis states and parametrized entangled states.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::circuit::{emit_qasm, read_qasm_file};
use crate::rng::{derive_seed, rng};
use crate::sim::{bitstring, DEFAULT_QUBIT_CAP};
use crate::store::{ensure_dir, read_json, write_json, write_text};
use crate::{Circuit, Error, GateKind, Result};

/// Largest register that still gets every classical input.
pub const EXHAUSTIVE_MAX_QUBITS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    Classical,
    Quantum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicalRegime {
    Exhaustive,
    HalfSampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestInput {
    pub id: String,
    pub input_type: InputType,
    /// Measurement-free preparation applied to |0…0⟩.
    pub prep: Circuit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSuite {
    pub n_qubits: usize,
    pub seed: u64,
    pub inputs: Vec<TestInput>,
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "inputs need at least one qubit".into(),
        ));
    }
    if n > DEFAULT_QUBIT_CAP {
        return Err(Error::TooManyQubits {
            n_qubits: n,
            cap: DEFAULT_QUBIT_CAP,
        });
    }
    Ok(())
}

/// `x` on every set bit of `k`.
pub fn basis_prep(n: usize, k: usize) -> Circuit {
    let mut c = Circuit::new(format!("c{}", bitstring(k, n)), n);
    for q in (0..n).filter(|q| k >> q & 1 == 1) {
        c.push(GateKind::X, &[q], &[]).expect("qubit in range");
    }
    c
}

/// Basis indices used for classical inputs, ascending.
pub fn classical_indices(n: usize, regime: ClassicalRegime, seed: u64) -> Result<Vec<usize>> {
    check_size(n)?;
    let total = 1usize << n;
    Ok(match regime {
        ClassicalRegime::Exhaustive => (0..total).collect(),
        ClassicalRegime::HalfSampled => {
            let mut idx = rand::seq::index::sample(&mut rng(seed), total, total / 2).into_vec();
            idx.sort_unstable();
            idx
        }
    })
}

pub fn gen_classical(n: usize, regime: ClassicalRegime, seed: u64) -> Result<Vec<Circuit>> {
    Ok(classical_indices(n, regime, seed)?
        .into_iter()
        .map(|k| basis_prep(n, k))
        .collect())
}

/// A `u` layer with uniform angles followed by a CNOT chain.
pub fn gen_quantum(n: usize, count: usize, seed: u64) -> Result<Vec<Circuit>> {
    check_size(n)?;
    if count == 0 {
        return Err(Error::InvalidArgument(
            "quantum input count must be ≥ 1".into(),
        ));
    }
    let width = (count - 1).to_string().len().max(2);
    let mut r = rng(seed);
    Ok((0..count)
        .map(|i| {
            let mut c = Circuit::new(format!("q{i:0width$}"), n);
            for q in 0..n {
                let angles: [f64; 3] = std::array::from_fn(|_| r.random_range(0.0..TAU));
                c.push(GateKind::U, &[q], &angles).expect("valid u");
            }
            for q in 1..n {
                c.push(GateKind::Cx, &[q - 1, q], &[]).expect("valid cx");
            }
            c
        })
        .collect())
}

/// Exhaustive classical inputs plus as many quantum ones for up to four
/// qubits; half the classical states plus as many quantum ones above that.
pub fn build_suite(n: usize, seed: u64) -> Result<TestSuite> {
    check_size(n)?;
    let regime = if n <= EXHAUSTIVE_MAX_QUBITS {
        ClassicalRegime::Exhaustive
    } else {
        ClassicalRegime::HalfSampled
    };
    let classical = gen_classical(n, regime, derive_seed(seed, &["classical"]))?;
    let quantum = gen_quantum(n, classical.len(), derive_seed(seed, &["quantum"]))?;
    let inputs = classical
        .into_iter()
        .map(|prep| (InputType::Classical, prep))
        .chain(quantum.into_iter().map(|prep| (InputType::Quantum, prep)))
        .map(|(input_type, prep)| TestInput {
            id: prep.name.clone(),
            input_type,
            prep,
        })
        .collect();
    Ok(TestSuite {
        n_qubits: n,
        seed,
        inputs,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    #[serde(rename = "type")]
    input_type: InputType,
    file: String,
    seed: u64,
}

impl TestSuite {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TestInput> {
        self.inputs.iter().find(|i| i.id == id)
    }

    /// The all-zeros classical input, if present.
    pub fn zero_input(&self) -> Option<&TestInput> {
        self.get(&format!("c{}", bitstring(0, self.n_qubits)))
    }

    /// Writes one QASM file per input plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut manifest = Vec::with_capacity(self.inputs.len());
        for input in &self.inputs {
            let file = format!("{}.qasm", input.id);
            write_text(&dir.join(&file), &emit_qasm(&input.prep))?;
            manifest.push(ManifestEntry {
                id: input.id.clone(),
                input_type: input.input_type,
                file,
                seed: self.seed,
            });
        }
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: Vec<ManifestEntry> = read_json(&manifest_path)?;
        let mut inputs = Vec::with_capacity(manifest.len());
        for e in &manifest {
            let mut prep = read_qasm_file(&dir.join(&e.file))?;
            prep.name = e.id.clone();
            inputs.push(TestInput {
                id: e.id.clone(),
                input_type: e.input_type,
                prep,
            });
        }
        let n_qubits = inputs
            .first()
            .map(|i| i.prep.n_qubits)
            .ok_or_else(|| Error::format(&manifest_path, "empty test suite"))?;
        if inputs.iter().any(|i| i.prep.n_qubits != n_qubits) {
            return Err(Error::format(
                &manifest_path,
                "inputs disagree on qubit count",
            ));
        }
        Ok(Self {
            n_qubits,
            seed: manifest[0].seed,
            inputs,
        })
    }
}
