//! Density-matrix execution under optional noise, shot sampling and
//! Pauli-Z expectation values.

mod kernel;
mod noise;
mod persist;

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

pub use kernel::embed;
pub use noise::{
    amplitude_damping_kraus, completeness_deviation, depolarizing_kraus, phase_damping_kraus,
    Confusion, NoiseModel, Readout,
};
pub use persist::{
    density_from_bytes, density_to_bytes, read_density, write_density, DENSITY_MAGIC,
};

use crate::circuit::{ccx_decomposition, Circuit, GateKind, GateOp};
use crate::linalg::{CMatrix, ONE};
use crate::{Error, Result};

/// Default register cap for density-matrix simulation.
pub const DEFAULT_QUBIT_CAP: usize = 12;

/// A 2^n × 2^n density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    data: CMatrix,
}

impl DensityMatrix {
    /// |0…0⟩⟨0…0|.
    pub fn zero_state(n_qubits: usize) -> Self {
        let mut data = CMatrix::zeros(1 << n_qubits);
        data[(0, 0)] = ONE;
        Self { n_qubits, data }
    }

    pub fn from_pure(n_qubits: usize, psi: &[Complex64]) -> Result<Self> {
        if psi.len() != 1 << n_qubits {
            return Err(Error::Dimension(format!(
                "state vector of length {} for {n_qubits} qubits",
                psi.len()
            )));
        }
        Ok(Self {
            n_qubits,
            data: CMatrix::outer(psi),
        })
    }

    /// Wraps a raw matrix without checking the density-matrix invariants;
    /// see [`DensityMatrix::validate`].
    pub fn from_matrix(n_qubits: usize, data: CMatrix) -> Result<Self> {
        if data.dim() != 1 << n_qubits {
            return Err(Error::Dimension(format!(
                "{}x{} matrix for {n_qubits} qubits",
                data.dim(),
                data.dim()
            )));
        }
        Ok(Self { n_qubits, data })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.trace().re
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                // Tr(ρρ) = Σ ρ_ij ρ_ji = Σ |ρ_ij|² for Hermitian ρ
                acc += (self.data[(i, j)] * self.data[(j, i)]).re;
            }
        }
        acc
    }

    /// Diagonal as a probability vector; tiny negative drift is clipped.
    pub fn probabilities(&self) -> Probabilities {
        let p: Vec<f64> = (0..self.dim())
            .map(|i| self.data[(i, i)].re.max(0.0))
            .collect();
        Probabilities::from_weights(self.n_qubits, p)
    }

    /// Checks Hermiticity (1e-10), unit trace (1e-10) and PSD (−1e-9).
    pub fn validate(&self) -> Result<()> {
        let dev = self.data.hermitian_deviation();
        if dev > 1e-10 {
            return Err(Error::NotHermitian { deviation: dev });
        }
        if (self.trace() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "trace {} ≠ 1",
                self.trace()
            )));
        }
        let eig = crate::metrics::hermitian_eigenvalues(&self.data)?;
        if eig.first().is_some_and(|&e| e < -1e-9) {
            return Err(Error::InvalidArgument(format!(
                "not positive semidefinite (min eigenvalue {:e})",
                eig[0]
            )));
        }
        Ok(())
    }

    /// Reduced state on `keep`, tracing out the rest.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix> {
        if let Some(&q) = keep.iter().find(|&&q| q >= self.n_qubits) {
            return Err(Error::InvalidArgument(format!("qubit {q} out of range")));
        }
        let traced: Vec<usize> = (0..self.n_qubits).filter(|q| !keep.contains(q)).collect();
        let k = keep.len();
        let mut out = CMatrix::zeros(1 << k);
        let spread = |local: usize, qs: &[usize]| -> usize {
            qs.iter()
                .enumerate()
                .filter(|(b, _)| local >> b & 1 == 1)
                .map(|(_, &q)| 1 << q)
                .sum()
        };
        for i in 0..1usize << k {
            for j in 0..1usize << k {
                let (gi, gj) = (spread(i, keep), spread(j, keep));
                let mut acc = Complex64::new(0.0, 0.0);
                for e in 0..1usize << traced.len() {
                    let ge = spread(e, &traced);
                    acc += self.data[(gi | ge, gj | ge)];
                }
                out[(i, j)] = acc;
            }
        }
        DensityMatrix::from_matrix(k, out)
    }
}

/// Exact or empirical outcome probabilities, dense over all 2^n bitstrings.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    n_qubits: usize,
    values: Vec<f64>,
}

impl Probabilities {
    /// Normalises non-negative weights. An all-zero vector stays all-zero.
    pub fn from_weights(n_qubits: usize, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), 1 << n_qubits);
        let total: f64 = values.iter().sum();
        if total > 0.0 {
            values.iter_mut().for_each(|v| *v /= total);
        }
        Self { n_qubits, values }
    }

    /// Builds from a bitstring map; absent outcomes get probability 0.
    pub fn from_map(n_qubits: usize, map: &BTreeMap<String, f64>) -> Result<Self> {
        let mut values = vec![0.0; 1 << n_qubits];
        for (k, &v) in map {
            let idx = parse_bitstring(k, n_qubits)?;
            if v.is_nan() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("negative weight for {k}")));
            }
            values[idx] += v;
        }
        Ok(Self::from_weights(n_qubits, values))
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

/// Renders basis index `idx` with qubit 0 as the rightmost character.
pub fn bitstring(idx: usize, n_qubits: usize) -> String {
    format!("{idx:0n_qubits$b}")
}

pub fn parse_bitstring(s: &str, n_qubits: usize) -> Result<usize> {
    if s.len() != n_qubits || !s.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(Error::InvalidArgument(format!(
            "`{s}` is not a {n_qubits}-bit string"
        )));
    }
    Ok(usize::from_str_radix(s, 2).expect("validated bitstring"))
}

/// Measurement counts keyed by bitstring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDistribution {
    pub n_qubits: usize,
    pub counts: BTreeMap<String, u64>,
    pub shots: u64,
}

impl OutputDistribution {
    pub fn new(n_qubits: usize, counts: BTreeMap<String, u64>) -> Result<Self> {
        for k in counts.keys() {
            parse_bitstring(k, n_qubits)?;
        }
        let shots = counts.values().sum();
        if shots == 0 {
            return Err(Error::InvalidArgument(
                "distribution with zero shots".into(),
            ));
        }
        Ok(Self {
            n_qubits,
            counts,
            shots,
        })
    }

    /// Convenience for literals: `[("00", 75), ("11", 25)]`.
    pub fn from_pairs(n_qubits: usize, pairs: &[(&str, u64)]) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for &(k, v) in pairs {
            *counts.entry(k.to_string()).or_insert(0) += v;
        }
        Self::new(n_qubits, counts)
    }

    pub fn probabilities(&self) -> Probabilities {
        let mut values = vec![0.0; 1 << self.n_qubits];
        for (k, &v) in &self.counts {
            values[parse_bitstring(k, self.n_qubits).expect("validated key")] = v as f64;
        }
        Probabilities::from_weights(self.n_qubits, values)
    }
}

/// ⟨Z^⊗n⟩, always within [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpectationValue(f64);

impl ExpectationValue {
    pub fn new(value: f64) -> Result<Self> {
        if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "expectation {value} outside [-1, 1]"
            )));
        }
        Ok(Self(value.clamp(-1.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_cap(c: &Circuit, cap: usize) -> Result<()> {
    if c.n_qubits > cap {
        return Err(Error::TooManyQubits {
            n_qubits: c.n_qubits,
            cap,
        });
    }
    Ok(())
}

/// Final pre-measurement state of `c` started from |0…0⟩.
///
/// With a noise model, every gate is followed by its channels on the gate's
/// qubits; `ccx` is expanded into one- and two-qubit gates first so that each
/// piece picks up the matching noise.
pub fn run_density(c: &Circuit, nm: Option<&NoiseModel>) -> Result<DensityMatrix> {
    run_density_capped(c, nm, DEFAULT_QUBIT_CAP)
}

pub fn run_density_capped(
    c: &Circuit,
    nm: Option<&NoiseModel>,
    cap: usize,
) -> Result<DensityMatrix> {
    check_cap(c, cap)?;
    c.validate()?;
    let nm = nm.filter(|m| !m.is_noiseless());
    let n = c.n_qubits;
    let Some(nm) = nm else {
        // pure evolution: a state vector is exact and much cheaper
        let psi = run_statevector(c)?;
        return DensityMatrix::from_pure(n, &psi);
    };
    let mut rho = DensityMatrix::zero_state(n);
    let one_q = nm.channels_after(1);
    let two_q = nm.channels_after(2);
    let step = |op: &GateOp, rho: &mut DensityMatrix| {
        kernel::conjugate(&mut rho.data, n, &op.matrix(), &op.qubits);
        let channels = match op.kind.arity() {
            1 => &one_q,
            2 => &two_q,
            _ => return,
        };
        for kraus in channels {
            kernel::kraus_map(&mut rho.data, n, kraus, &op.qubits);
        }
    };
    for op in &c.ops {
        match op.kind {
            GateKind::Barrier | GateKind::Measure => {}
            GateKind::Ccx => {
                for piece in ccx_decomposition(op.qubits[0], op.qubits[1], op.qubits[2]) {
                    step(&piece, &mut rho);
                }
            }
            _ => step(op, &mut rho),
        }
    }
    Ok(rho)
}

/// Noiseless state vector of `c` from |0…0⟩.
pub fn run_statevector(c: &Circuit) -> Result<Vec<Complex64>> {
    c.validate()?;
    let n = c.n_qubits;
    let mut psi = vec![Complex64::new(0.0, 0.0); 1 << n];
    psi[0] = ONE;
    for op in c.ops.iter().filter(|op| !op.kind.is_pseudo()) {
        kernel::apply_to_vector(&mut psi, n, &op.matrix(), &op.qubits);
    }
    Ok(psi)
}

/// `Σ K ρ K†` with the Kraus operators acting on `targets`.
pub fn apply_channel(
    rho: &DensityMatrix,
    kraus: &[CMatrix],
    targets: &[usize],
) -> Result<DensityMatrix> {
    let local = 1usize << targets.len();
    if kraus.iter().any(|k| k.dim() != local) {
        return Err(Error::Dimension(format!(
            "Kraus operators must be {local}x{local} for {} target(s)",
            targets.len()
        )));
    }
    if targets.iter().any(|&t| t >= rho.n_qubits) {
        return Err(Error::InvalidArgument("channel target out of range".into()));
    }
    let deviation = completeness_deviation(kraus);
    if deviation > 1e-10 {
        return Err(Error::KrausCompleteness { deviation });
    }
    let mut out = rho.clone();
    kernel::kraus_map(&mut out.data, rho.n_qubits, kraus, targets);
    Ok(out)
}

/// Outcome probabilities after bit-wise readout confusion.
pub fn readout_probabilities(
    rho: &DensityMatrix,
    nm: Option<&NoiseModel>,
) -> Result<Probabilities> {
    let mut p = rho.probabilities();
    let Some(ro) = nm.and_then(|m| m.readout.as_ref()) else {
        return Ok(p);
    };
    let n = rho.n_qubits;
    for q in 0..n {
        let m = ro
            .for_qubit(q)
            .ok_or_else(|| Error::NoiseModel(format!("readout matrix missing for qubit {q}")))?;
        let bit = 1usize << q;
        for idx in (0..p.values.len()).filter(|i| i & bit == 0) {
            let (p0, p1) = (p.values[idx], p.values[idx | bit]);
            p.values[idx] = p0 * m[0][0] + p1 * m[1][0];
            p.values[idx | bit] = p0 * m[0][1] + p1 * m[1][1];
        }
    }
    Ok(p)
}

/// Multinomial draw of `shots` outcomes via sequential binomials.
pub fn sample_from(p: &Probabilities, shots: u64, seed: u64) -> Result<OutputDistribution> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let mut rng = crate::rng::rng(seed);
    let n = p.n_qubits;
    let mut counts = BTreeMap::new();
    let mut remaining = shots;
    let mut mass: f64 = p.values.iter().sum();
    let last = p.values.iter().rposition(|&v| v > 0.0).unwrap_or(0);
    for (idx, &pi) in p.values.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let k = if idx == last {
            remaining
        } else if pi <= 0.0 {
            0
        } else {
            let frac = (pi / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, frac)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(&mut rng)
        };
        mass -= pi;
        remaining -= k;
        if k > 0 {
            counts.insert(bitstring(idx, n), k);
        }
        if idx == last {
            break;
        }
    }
    OutputDistribution::new(n, counts)
}

/// Simulates, applies readout error and samples `shots` outcomes.
pub fn sample_counts(
    c: &Circuit,
    nm: Option<&NoiseModel>,
    shots: u64,
    seed: u64,
) -> Result<OutputDistribution> {
    let rho = run_density(c, nm)?;
    sample_from(&readout_probabilities(&rho, nm)?, shots, seed)
}

fn parity_sign(idx: usize) -> f64 {
    if idx.count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Tr(ρ Z^⊗n).
pub fn expectation_from_density(rho: &DensityMatrix) -> ExpectationValue {
    let v: f64 = (0..rho.dim())
        .map(|i| rho.data[(i, i)].re * parity_sign(i))
        .sum();
    ExpectationValue(v.clamp(-1.0, 1.0))
}

/// Parity-weighted empirical mean of Z^⊗n.
pub fn expectation_from_counts(d: &OutputDistribution) -> ExpectationValue {
    let v: f64 = d
        .counts
        .iter()
        .map(|(k, &n)| {
            let idx = parse_bitstring(k, d.n_qubits).expect("validated key");
            n as f64 * parity_sign(idx)
        })
        .sum::<f64>()
        / d.shots as f64;
    ExpectationValue(v.clamp(-1.0, 1.0))
}

/// Same as [`expectation_from_counts`] for exact probabilities.
pub fn expectation_from_probabilities(p: &Probabilities) -> ExpectationValue {
    let v: f64 = p
        .values
        .iter()
        .enumerate()
        .map(|(i, &x)| x * parity_sign(i))
        .sum();
    ExpectationValue(v.clamp(-1.0, 1.0))
}
