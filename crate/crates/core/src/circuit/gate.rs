use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{c, r, CMatrix, I, ONE, ZERO};

/// Gates understood by the parser, simulator and mutation operators.
///
/// Multi-qubit gates list their controls first: for `cx`, `qubits[0]` is the
/// control and `qubits[1]` the target; for `ccx` the first two are controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Id,
    X,
    Y,
    Z,
    H,
    S,
    Sdg,
    T,
    Tdg,
    Rx,
    Ry,
    Rz,
    P,
    U,
    Cx,
    Cz,
    Cp,
    Crx,
    Cry,
    Crz,
    Swap,
    Ccx,
    Measure,
    Barrier,
}

impl GateKind {
    pub const ALL: [GateKind; 24] = [
        GateKind::Id,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::H,
        GateKind::S,
        GateKind::Sdg,
        GateKind::T,
        GateKind::Tdg,
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::P,
        GateKind::U,
        GateKind::Cx,
        GateKind::Cz,
        GateKind::Cp,
        GateKind::Crx,
        GateKind::Cry,
        GateKind::Crz,
        GateKind::Swap,
        GateKind::Ccx,
        GateKind::Measure,
        GateKind::Barrier,
    ];

    /// Every kind that carries a unitary.
    pub fn unitary_kinds() -> impl Iterator<Item = GateKind> {
        Self::ALL.into_iter().filter(|k| !k.is_pseudo())
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Id => "id",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::H => "h",
            GateKind::S => "s",
            GateKind::Sdg => "sdg",
            GateKind::T => "t",
            GateKind::Tdg => "tdg",
            GateKind::Rx => "rx",
            GateKind::Ry => "ry",
            GateKind::Rz => "rz",
            GateKind::P => "p",
            GateKind::U => "u",
            GateKind::Cx => "cx",
            GateKind::Cz => "cz",
            GateKind::Cp => "cp",
            GateKind::Crx => "crx",
            GateKind::Cry => "cry",
            GateKind::Crz => "crz",
            GateKind::Swap => "swap",
            GateKind::Ccx => "ccx",
            GateKind::Measure => "measure",
            GateKind::Barrier => "barrier",
        }
    }

    /// Resolves a QASM gate name, including the common qelib1 aliases.
    pub fn from_name(name: &str) -> Option<GateKind> {
        let kind = match name {
            "u3" | "U" => GateKind::U,
            "u1" => GateKind::P,
            "CX" | "cnot" => GateKind::Cx,
            "toffoli" => GateKind::Ccx,
            "i" => GateKind::Id,
            "cu1" => GateKind::Cp,
            other => return Self::ALL.into_iter().find(|k| k.name() == other),
        };
        Some(kind)
    }

    /// Qubits acted on. Barriers and measurements are variadic and report 0.
    pub fn arity(self) -> usize {
        match self {
            GateKind::Measure | GateKind::Barrier => 0,
            GateKind::Cx
            | GateKind::Cz
            | GateKind::Cp
            | GateKind::Crx
            | GateKind::Cry
            | GateKind::Crz
            | GateKind::Swap => 2,
            GateKind::Ccx => 3,
            _ => 1,
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            GateKind::Rx
            | GateKind::Ry
            | GateKind::Rz
            | GateKind::P
            | GateKind::Cp
            | GateKind::Crx
            | GateKind::Cry
            | GateKind::Crz => 1,
            GateKind::U => 3,
            _ => 0,
        }
    }

    pub fn is_pseudo(self) -> bool {
        matches!(self, GateKind::Measure | GateKind::Barrier)
    }

    /// Smallest `m > 0` with `G^m = I` for the fixed-angle gates used to build
    /// equivalent-by-construction mutants.
    pub fn self_inverse_period(self) -> Option<usize> {
        match self {
            GateKind::X
            | GateKind::Y
            | GateKind::Z
            | GateKind::H
            | GateKind::Cx
            | GateKind::Cz
            | GateKind::Swap => Some(2),
            GateKind::S | GateKind::Sdg => Some(4),
            GateKind::T | GateKind::Tdg => Some(8),
            _ => None,
        }
    }

    /// Unitary of dimension `2^arity` in the local little-endian basis:
    /// bit `j` of the local index belongs to `qubits[j]`.
    ///
    /// Panics for pseudo-ops or a wrong parameter count; callers validate
    /// through [`GateOp::new`].
    pub fn matrix(self, params: &[f64]) -> CMatrix {
        assert_eq!(params.len(), self.param_count(), "{self}: bad param count");
        match self {
            GateKind::Id => CMatrix::identity(2),
            GateKind::X => CMatrix::from_rows([[ZERO, ONE], [ONE, ZERO]]),
            GateKind::Y => CMatrix::from_rows([[ZERO, -I], [I, ZERO]]),
            GateKind::Z => CMatrix::from_rows([[ONE, ZERO], [ZERO, -ONE]]),
            GateKind::H => {
                let h = r(FRAC_1_SQRT_2);
                CMatrix::from_rows([[h, h], [h, -h]])
            }
            GateKind::S => phase(std::f64::consts::FRAC_PI_2),
            GateKind::Sdg => phase(-std::f64::consts::FRAC_PI_2),
            GateKind::T => phase(std::f64::consts::FRAC_PI_4),
            GateKind::Tdg => phase(-std::f64::consts::FRAC_PI_4),
            GateKind::Rx => rx(params[0]),
            GateKind::Ry => ry(params[0]),
            GateKind::Rz => rz(params[0]),
            GateKind::P => phase(params[0]),
            GateKind::U => u3(params[0], params[1], params[2]),
            GateKind::Cx => controlled(&GateKind::X.matrix(&[]), 1),
            GateKind::Cz => controlled(&GateKind::Z.matrix(&[]), 1),
            GateKind::Cp => controlled(&phase(params[0]), 1),
            GateKind::Crx => controlled(&rx(params[0]), 1),
            GateKind::Cry => controlled(&ry(params[0]), 1),
            GateKind::Crz => controlled(&rz(params[0]), 1),
            GateKind::Swap => {
                let mut m = CMatrix::zeros(4);
                m[(0, 0)] = ONE;
                m[(1, 2)] = ONE;
                m[(2, 1)] = ONE;
                m[(3, 3)] = ONE;
                m
            }
            GateKind::Ccx => controlled(&GateKind::X.matrix(&[]), 2),
            GateKind::Measure | GateKind::Barrier => {
                panic!("{self} has no unitary")
            }
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn phase(lambda: f64) -> CMatrix {
    CMatrix::from_rows([[ONE, ZERO], [ZERO, Complex64::from_polar(1.0, lambda)]])
}

fn rx(theta: f64) -> CMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    CMatrix::from_rows([[r(co), c(0.0, -s)], [c(0.0, -s), r(co)]])
}

fn ry(theta: f64) -> CMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    CMatrix::from_rows([[r(co), r(-s)], [r(s), r(co)]])
}

fn rz(theta: f64) -> CMatrix {
    CMatrix::from_rows([
        [Complex64::from_polar(1.0, -theta / 2.0), ZERO],
        [ZERO, Complex64::from_polar(1.0, theta / 2.0)],
    ])
}

fn u3(theta: f64, phi: f64, lambda: f64) -> CMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    CMatrix::from_rows([
        [r(co), -Complex64::from_polar(s, lambda)],
        [
            Complex64::from_polar(s, phi),
            Complex64::from_polar(co, phi + lambda),
        ],
    ])
}

/// Adds `n_controls` control bits below a single-qubit target.
fn controlled(target: &CMatrix, n_controls: usize) -> CMatrix {
    let dim = 1 << (n_controls + 1);
    let mask = (1 << n_controls) - 1;
    let t = 1 << n_controls;
    let mut m = CMatrix::identity(dim);
    m[(mask, mask)] = target[(0, 0)];
    m[(mask, mask | t)] = target[(0, 1)];
    m[(mask | t, mask)] = target[(1, 0)];
    m[(mask | t, mask | t)] = target[(1, 1)];
    m
}

/// One instruction of a circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub params: Vec<f64>,
}

impl GateOp {
    /// Validates arity, parameter count and qubit distinctness.
    pub fn new(kind: GateKind, qubits: Vec<usize>, params: Vec<f64>) -> crate::Result<Self> {
        let op = Self {
            kind,
            qubits,
            params,
        };
        op.check(usize::MAX)?;
        Ok(op)
    }

    pub(crate) fn check(&self, n_qubits: usize) -> crate::Result<()> {
        let bad = |msg: String| Err(crate::Error::InvalidCircuit(msg));
        if !self.kind.is_pseudo() && self.qubits.len() != self.kind.arity() {
            return bad(format!(
                "{} expects {} qubit(s), got {}",
                self.kind,
                self.kind.arity(),
                self.qubits.len()
            ));
        }
        if self.params.len() != self.kind.param_count() {
            return bad(format!(
                "{} expects {} parameter(s), got {}",
                self.kind,
                self.kind.param_count(),
                self.params.len()
            ));
        }
        if let Some(q) = self.qubits.iter().find(|&&q| q >= n_qubits) {
            return bad(format!("{} acts on q[{q}] outside the register", self.kind));
        }
        for (i, q) in self.qubits.iter().enumerate() {
            if self.qubits[..i].contains(q) {
                return bad(format!("{} repeats q[{q}]", self.kind));
            }
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return bad(format!("{} has a non-finite parameter", self.kind));
        }
        Ok(())
    }

    pub fn is_single_qubit(&self) -> bool {
        self.kind.arity() == 1
    }

    pub fn matrix(&self) -> CMatrix {
        self.kind.matrix(&self.params)
    }
}

/// Standard six-CNOT Toffoli decomposition over {h, t, tdg, cx}.
pub(crate) fn ccx_decomposition(a: usize, b: usize, target: usize) -> Vec<GateOp> {
    use GateKind::*;
    let g = |kind, qubits: &[usize]| GateOp {
        kind,
        qubits: qubits.to_vec(),
        params: Vec::new(),
    };
    vec![
        g(H, &[target]),
        g(Cx, &[b, target]),
        g(Tdg, &[target]),
        g(Cx, &[a, target]),
        g(T, &[target]),
        g(Cx, &[b, target]),
        g(Tdg, &[target]),
        g(Cx, &[a, target]),
        g(T, &[b]),
        g(T, &[target]),
        g(H, &[target]),
        g(Cx, &[a, b]),
        g(T, &[a]),
        g(Tdg, &[b]),
        g(Cx, &[a, b]),
    ]
}
