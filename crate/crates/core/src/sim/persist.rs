//! Binary density-matrix files: 8-byte magic, little-endian `u32` qubit
//! count, then the row-major entries as interleaved little-endian `f64`
//! (re, im) pairs.

use std::path::Path;

use num_complex::Complex64;

use super::DensityMatrix;
use crate::linalg::CMatrix;
use crate::{Error, Result};

pub const DENSITY_MAGIC: &[u8; 8] = b"QMDENS01";

pub fn density_to_bytes(rho: &DensityMatrix) -> Vec<u8> {
    let data = rho.matrix().data();
    let mut out = Vec::with_capacity(12 + data.len() * 16);
    out.extend_from_slice(DENSITY_MAGIC);
    out.extend_from_slice(&(rho.n_qubits() as u32).to_le_bytes());
    for z in data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn density_from_bytes(bytes: &[u8]) -> Result<DensityMatrix> {
    let bad = |m: &str| Error::InvalidArgument(format!("density file: {m}"));
    if bytes.len() < 12 || &bytes[..8] != DENSITY_MAGIC {
        return Err(bad("bad magic"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if n > 30 {
        return Err(bad("implausible qubit count"));
    }
    let dim = 1usize << n;
    let body = &bytes[12..];
    if body.len() != dim * dim * 16 {
        return Err(bad("truncated payload"));
    }
    let data = body
        .chunks_exact(16)
        .map(|ch| {
            let re = f64::from_le_bytes(ch[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(ch[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    DensityMatrix::from_matrix(n, CMatrix::from_vec(dim, data))
}

pub fn write_density(path: &Path, rho: &DensityMatrix) -> Result<()> {
    std::fs::write(path, density_to_bytes(rho)).map_err(|e| Error::io(path, e))
}

pub fn read_density(path: &Path) -> Result<DensityMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    density_from_bytes(&bytes).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::parse_qasm;
    use crate::sim::run_density;

    #[test]
    fn layout_and_round_trip() {
        let c = parse_qasm("OPENQASM 2.0; qreg q[2]; h q[0]; rx(0.3) q[1];", "t").unwrap();
        let rho = run_density(&c, None).unwrap();
        let bytes = density_to_bytes(&rho);
        assert_eq!(&bytes[..8], b"QMDENS01");
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 16 * 16);
        let re0 = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
        assert_eq!(re0, rho.matrix()[(0, 0)].re);
        assert_eq!(density_from_bytes(&bytes).unwrap(), rho);
        assert!(density_from_bytes(&bytes[..40]).is_err());
        assert!(density_from_bytes(b"NOTMAGIC\0\0\0\0").is_err());
    }
}
