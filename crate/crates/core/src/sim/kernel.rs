//! Local operators lifted onto a register without building full-size matrices.

use num_complex::Complex64;

use crate::linalg::{CMatrix, ZERO};

/// Global basis indices touched by a local operator on `targets`, grouped so
/// that `groups[g][j]` is the index whose target bits spell local index `j`.
fn index_groups(n_qubits: usize, targets: &[usize]) -> Vec<Vec<usize>> {
    let dim = 1usize << n_qubits;
    let mask: usize = targets.iter().map(|&t| 1 << t).sum();
    let local = 1usize << targets.len();
    let offsets: Vec<usize> = (0..local)
        .map(|j| {
            targets
                .iter()
                .enumerate()
                .filter(|(bit, _)| j >> bit & 1 == 1)
                .map(|(_, &t)| 1 << t)
                .sum()
        })
        .collect();
    (0..dim)
        .filter(|b| b & mask == 0)
        .map(|b| offsets.iter().map(|o| b | o).collect())
        .collect()
}

/// `rho ← op · rho` where `op` acts on `targets`.
pub(crate) fn apply_left(rho: &mut CMatrix, n_qubits: usize, op: &CMatrix, targets: &[usize]) {
    let dim = rho.dim();
    let local = op.dim();
    let groups = index_groups(n_qubits, targets);
    let mut buf = vec![ZERO; local];
    for col in 0..dim {
        for idx in &groups {
            for (j, &g) in idx.iter().enumerate() {
                buf[j] = rho[(g, col)];
            }
            for (i, &g) in idx.iter().enumerate() {
                let mut acc = ZERO;
                for (j, b) in buf.iter().enumerate() {
                    acc += op[(i, j)] * b;
                }
                rho[(g, col)] = acc;
            }
        }
    }
}

/// `rho ← rho · op†` where `op` acts on `targets`.
pub(crate) fn apply_right_adjoint(
    rho: &mut CMatrix,
    n_qubits: usize,
    op: &CMatrix,
    targets: &[usize],
) {
    let dim = rho.dim();
    let local = op.dim();
    let groups = index_groups(n_qubits, targets);
    let mut buf = vec![ZERO; local];
    for row in 0..dim {
        for idx in &groups {
            for (j, &g) in idx.iter().enumerate() {
                buf[j] = rho[(row, g)];
            }
            for (i, &g) in idx.iter().enumerate() {
                let mut acc = ZERO;
                for (j, b) in buf.iter().enumerate() {
                    acc += b * op[(i, j)].conj();
                }
                rho[(row, g)] = acc;
            }
        }
    }
}

/// `rho ← U rho U†`.
pub(crate) fn conjugate(rho: &mut CMatrix, n_qubits: usize, u: &CMatrix, targets: &[usize]) {
    apply_left(rho, n_qubits, u, targets);
    apply_right_adjoint(rho, n_qubits, u, targets);
}

/// `rho ← Σ_k K_k rho K_k†`.
pub(crate) fn kraus_map(rho: &mut CMatrix, n_qubits: usize, kraus: &[CMatrix], targets: &[usize]) {
    let mut acc = CMatrix::zeros(rho.dim());
    for k in kraus {
        let mut term = rho.clone();
        conjugate(&mut term, n_qubits, k, targets);
        acc.add_assign(&term);
    }
    *rho = acc;
}

/// `U |psi⟩` for a state vector.
pub(crate) fn apply_to_vector(
    psi: &mut [Complex64],
    n_qubits: usize,
    u: &CMatrix,
    targets: &[usize],
) {
    let groups = index_groups(n_qubits, targets);
    let mut buf = vec![ZERO; u.dim()];
    for idx in &groups {
        for (j, &g) in idx.iter().enumerate() {
            buf[j] = psi[g];
        }
        for (i, &g) in idx.iter().enumerate() {
            psi[g] = (0..buf.len()).map(|j| u[(i, j)] * buf[j]).sum();
        }
    }
}

/// Embeds a local operator into the full register: I ⊗ … ⊗ op ⊗ … ⊗ I.
/// Only used by tests and oracles; simulation never materialises this.
pub fn embed(n_qubits: usize, op: &CMatrix, targets: &[usize]) -> CMatrix {
    let mut full = CMatrix::identity(1 << n_qubits);
    apply_left(&mut full, n_qubits, op, targets);
    full
}
