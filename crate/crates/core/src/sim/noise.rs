use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::circuit::GateKind;
use crate::linalg::{r, CMatrix, ZERO};
use crate::{Error, Result};

/// Row-stochastic 2×2 readout confusion: `m[true_bit][reported_bit]`.
pub type Confusion = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Readout {
    Global(Confusion),
    PerQubit(Vec<Confusion>),
}

impl Readout {
    pub fn for_qubit(&self, q: usize) -> Option<&Confusion> {
        match self {
            Readout::Global(m) => Some(m),
            Readout::PerQubit(v) => v.get(q),
        }
    }

    fn matrices(&self) -> Vec<&Confusion> {
        match self {
            Readout::Global(m) => vec![m],
            Readout::PerQubit(v) => v.iter().collect(),
        }
    }
}

/// Parametric noise: depolarizing after every gate, amplitude and phase
/// damping after single-qubit gates, bit-wise readout confusion at measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub name: String,
    #[serde(default)]
    pub oneq_depolarizing: f64,
    #[serde(default)]
    pub twoq_depolarizing: f64,
    #[serde(default)]
    pub amplitude_damping: f64,
    #[serde(default)]
    pub phase_damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Readout>,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::depolarizing("noiseless", 0.0, 0.0)
    }

    pub fn depolarizing(name: impl Into<String>, p1: f64, p2: f64) -> Self {
        Self {
            name: name.into(),
            oneq_depolarizing: p1,
            twoq_depolarizing: p2,
            amplitude_damping: 0.0,
            phase_damping: 0.0,
            readout: None,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.oneq_depolarizing == 0.0
            && self.twoq_depolarizing == 0.0
            && self.amplitude_damping == 0.0
            && self.phase_damping == 0.0
            && self.readout.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::NoiseModel(format!("{}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\', '|']) {
            return bad("name must be non-empty and free of path separators".into());
        }
        for (label, p) in [
            ("oneq_depolarizing", self.oneq_depolarizing),
            ("twoq_depolarizing", self.twoq_depolarizing),
            ("amplitude_damping", self.amplitude_damping),
            ("phase_damping", self.phase_damping),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{label} = {p} is outside [0, 1]"));
            }
        }
        if let Some(ro) = &self.readout {
            for m in ro.matrices() {
                for row in m {
                    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return bad(format!("readout row {row:?} has entries outside [0, 1]"));
                    }
                    if (row[0] + row[1] - 1.0).abs() > 1e-12 {
                        return bad(format!("readout row {row:?} does not sum to 1"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let nm: NoiseModel =
            serde_json::from_str(text).map_err(|e| Error::NoiseModel(e.to_string()))?;
        nm.validate()?;
        Ok(nm)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.in_file(path))
    }

    /// Kraus sets fired, in order, after a gate of the given arity.
    pub(crate) fn channels_after(&self, arity: usize) -> Vec<Vec<CMatrix>> {
        let mut out = Vec::new();
        match arity {
            1 => {
                if self.oneq_depolarizing > 0.0 {
                    out.push(depolarizing_kraus(self.oneq_depolarizing, 1));
                }
                if self.amplitude_damping > 0.0 {
                    out.push(amplitude_damping_kraus(self.amplitude_damping));
                }
                if self.phase_damping > 0.0 {
                    out.push(phase_damping_kraus(self.phase_damping));
                }
            }
            2 if self.twoq_depolarizing > 0.0 => {
                out.push(depolarizing_kraus(self.twoq_depolarizing, 2));
            }
            _ => {}
        }
        out
    }
}

fn pauli(i: usize) -> CMatrix {
    match i {
        0 => CMatrix::identity(2),
        1 => GateKind::X.matrix(&[]),
        2 => GateKind::Y.matrix(&[]),
        _ => GateKind::Z.matrix(&[]),
    }
}

/// `rho → (1 − p) rho + p I/d` on `k` qubits, as the uniform Pauli mixture.
pub fn depolarizing_kraus(p: f64, k: usize) -> Vec<CMatrix> {
    let n_paulis = 1usize << (2 * k);
    let d2 = n_paulis as f64;
    (0..n_paulis)
        .map(|idx| {
            // local qubit j takes Pauli (idx >> 2j) & 3; kron puts the last factor on bit 0
            let mut m = CMatrix::identity(1);
            for j in (0..k).rev() {
                m = m.kron(&pauli(idx >> (2 * j) & 3));
            }
            let weight = if idx == 0 {
                1.0 - p * (d2 - 1.0) / d2
            } else {
                p / d2
            };
            m.scale(r(weight.max(0.0).sqrt()))
        })
        .collect()
}

pub fn amplitude_damping_kraus(gamma: f64) -> Vec<CMatrix> {
    vec![
        CMatrix::from_rows([[r(1.0), ZERO], [ZERO, r((1.0 - gamma).sqrt())]]),
        CMatrix::from_rows([[ZERO, r(gamma.sqrt())], [ZERO, ZERO]]),
    ]
}

pub fn phase_damping_kraus(lambda: f64) -> Vec<CMatrix> {
    vec![
        CMatrix::from_rows([[r(1.0), ZERO], [ZERO, r((1.0 - lambda).sqrt())]]),
        CMatrix::from_rows([[ZERO, ZERO], [ZERO, r(lambda.sqrt())]]),
    ]
}

/// ‖Σ K†K − I‖_max.
pub fn completeness_deviation(kraus: &[CMatrix]) -> f64 {
    let Some(first) = kraus.first() else {
        return f64::INFINITY;
    };
    let mut sum = CMatrix::zeros(first.dim());
    for k in kraus {
        sum.add_assign(&k.adjoint().matmul(k));
    }
    sum.max_abs_diff(&CMatrix::identity(first.dim()))
}
