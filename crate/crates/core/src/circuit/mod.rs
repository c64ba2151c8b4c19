//! Circuit intermediate representation, QASM I/O and structural characteristics.

mod gate;
mod qasm;

pub(crate) use gate::ccx_decomposition;
pub use gate::{GateKind, GateOp};
pub use qasm::{emit_qasm, parse_qasm, read_qasm_file};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An ordered gate list over `n_qubits` qubits.
///
/// Qubit 0 is the least significant bit of every basis index; rendered
/// bitstrings put qubit 0 in the rightmost position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub name: String,
    pub n_qubits: usize,
    pub ops: Vec<GateOp>,
    /// Whether a terminal full-register measurement is declared.
    pub measured: bool,
}

impl Circuit {
    pub fn new(name: impl Into<String>, n_qubits: usize) -> Self {
        Self {
            name: name.into(),
            n_qubits,
            ops: Vec::new(),
            measured: false,
        }
    }

    /// Builds and validates a circuit.
    pub fn with_ops(
        name: impl Into<String>,
        n_qubits: usize,
        ops: Vec<GateOp>,
        measured: bool,
    ) -> Result<Self> {
        let c = Self {
            name: name.into(),
            n_qubits,
            ops,
            measured,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 {
            return Err(Error::InvalidCircuit(
                "a circuit needs at least one qubit".into(),
            ));
        }
        for op in &self.ops {
            if op.kind == GateKind::Measure {
                return Err(Error::InvalidCircuit(
                    "measurement is a circuit flag, not an op".into(),
                ));
            }
            op.check(self.n_qubits)?;
        }
        Ok(())
    }

    /// Appends a gate, validating it against this register.
    pub fn push(&mut self, kind: GateKind, qubits: &[usize], params: &[f64]) -> Result<&mut Self> {
        let op = GateOp {
            kind,
            qubits: qubits.to_vec(),
            params: params.to_vec(),
        };
        op.check(self.n_qubits)?;
        self.ops.push(op);
        Ok(self)
    }

    pub fn measured(mut self) -> Self {
        self.measured = true;
        self
    }

    /// Indices into `ops` of the real gates (barriers skipped).
    pub fn gate_positions(&self) -> Vec<usize> {
        self.ops
            .iter()
            .enumerate()
            .filter(|(_, op)| !op.kind.is_pseudo())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_gates(&self) -> usize {
        self.ops.iter().filter(|op| !op.kind.is_pseudo()).count()
    }
}

/// Prepends `prep` to `body`. The measurement flag comes from `body`.
pub fn compose(prep: &Circuit, body: &Circuit) -> Result<Circuit> {
    if prep.n_qubits != body.n_qubits {
        return Err(Error::QubitMismatch {
            left: prep.n_qubits,
            right: body.n_qubits,
        });
    }
    if prep.measured {
        return Err(Error::InvalidCircuit(format!(
            "preparation circuit `{}` must not measure",
            prep.name
        )));
    }
    let mut ops = Vec::with_capacity(prep.ops.len() + body.ops.len());
    ops.extend(prep.ops.iter().cloned());
    ops.extend(body.ops.iter().cloned());
    Ok(Circuit {
        name: body.name.clone(),
        n_qubits: body.n_qubits,
        ops,
        measured: body.measured,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitCharacteristics {
    pub n_qubits: usize,
    pub n_gates: usize,
    pub depth: usize,
    pub n_single_qubit_gates: usize,
    pub n_multi_qubit_gates: usize,
}

/// Gate counts and depth, ignoring barriers.
pub fn characteristics(c: &Circuit) -> CircuitCharacteristics {
    let mut level = vec![0usize; c.n_qubits];
    let mut single = 0;
    let mut multi = 0;
    for op in c.ops.iter().filter(|op| !op.kind.is_pseudo()) {
        if op.is_single_qubit() {
            single += 1;
        } else {
            multi += 1;
        }
        let next = op.qubits.iter().map(|&q| level[q]).max().unwrap_or(0) + 1;
        for &q in &op.qubits {
            level[q] = next;
        }
    }
    CircuitCharacteristics {
        n_qubits: c.n_qubits,
        n_gates: single + multi,
        depth: level.into_iter().max().unwrap_or(0),
        n_single_qubit_gates: single,
        n_multi_qubit_gates: multi,
    }
}
