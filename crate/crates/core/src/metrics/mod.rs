//! Divergence metrics between circuit outputs.

mod eigen;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use eigen::{hermitian_eigen, hermitian_eigenvalues, HermitianEigen, MAX_SWEEPS};

use crate::linalg::CMatrix;
use crate::sim::{DensityMatrix, ExpectationValue, OutputDistribution, Probabilities};
use crate::{Error, Result};

const PURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    TraceDistance,
    Fidelity,
    Hellinger,
    JensenShannon,
    ExpectationDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Larger values mean the outputs differ more.
    Dissimilarity,
    /// Larger values mean the outputs agree more.
    Similarity,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::TraceDistance,
        MetricKind::Fidelity,
        MetricKind::Hellinger,
        MetricKind::JensenShannon,
        MetricKind::ExpectationDiff,
    ];

    pub fn orientation(self) -> Orientation {
        match self {
            MetricKind::Fidelity => Orientation::Similarity,
            _ => Orientation::Dissimilarity,
        }
    }

    pub fn is_similarity(self) -> bool {
        self.orientation() == Orientation::Similarity
    }

    /// Whether the metric compares density matrices rather than samples.
    pub fn is_density_based(self) -> bool {
        matches!(self, MetricKind::TraceDistance | MetricKind::Fidelity)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::TraceDistance => "trace_distance",
            MetricKind::Fidelity => "fidelity",
            MetricKind::Hellinger => "hellinger",
            MetricKind::JensenShannon => "jensen_shannon",
            MetricKind::ExpectationDiff => "expectation_diff",
        }
    }

    /// Upper end of the metric's range (the lower end is always 0).
    pub fn max_value(self) -> f64 {
        match self {
            MetricKind::ExpectationDiff => 2.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "trace_distance" | "td" | "trace" => Ok(MetricKind::TraceDistance),
            "fidelity" | "f" => Ok(MetricKind::Fidelity),
            "hellinger" | "h" => Ok(MetricKind::Hellinger),
            "jensen_shannon" | "js" => Ok(MetricKind::JensenShannon),
            "expectation_diff" | "expectation" | "ev" => Ok(MetricKind::ExpectationDiff),
            _ => Err(Error::InvalidArgument(format!("unknown metric `{s}`"))),
        }
    }
}

fn check_dims(s: &DensityMatrix, t: &DensityMatrix) -> Result<()> {
    if s.n_qubits() != t.n_qubits() {
        return Err(Error::QubitMismatch {
            left: s.n_qubits(),
            right: t.n_qubits(),
        });
    }
    Ok(())
}

/// Fixed argument order for the two-state kernels, so that swapping the
/// inputs runs exactly the same arithmetic.
fn canonical<'a>(
    s: &'a DensityMatrix,
    t: &'a DensityMatrix,
) -> (&'a DensityMatrix, &'a DensityMatrix) {
    let ord = s
        .matrix()
        .data()
        .iter()
        .zip(t.matrix().data())
        .map(|(a, b)| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    if ord == Ordering::Greater {
        (t, s)
    } else {
        (s, t)
    }
}

/// `½‖σ − τ‖₁`, the sum of absolute eigenvalues of the difference halved.
pub fn trace_distance(s: &DensityMatrix, t: &DensityMatrix) -> Result<f64> {
    check_dims(s, t)?;
    let (a, b) = canonical(s, t);
    let diff = a.matrix().sub(b.matrix());
    let eig = hermitian_eigenvalues(&diff)?;
    let d = 0.5 * eig.iter().map(|l| l.abs()).sum::<f64>();
    Ok(d.clamp(0.0, 1.0))
}

fn real_trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    // Tr(AB) = Σ_ij A_ij B_ji
    let n = a.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// Uhlmann fidelity `(Tr √(√σ τ √σ))²`.
///
/// When either state is pure this reduces to `Tr(στ)`, which is used directly.
pub fn fidelity(s: &DensityMatrix, t: &DensityMatrix) -> Result<f64> {
    check_dims(s, t)?;
    let (a, b) = canonical(s, t);
    if a.purity() > 1.0 - PURE_TOL || b.purity() > 1.0 - PURE_TOL {
        return Ok(real_trace_product(a.matrix(), b.matrix()).clamp(0.0, 1.0));
    }
    let sqrt_a = hermitian_eigen(a.matrix())?.map_values(|l| l.max(0.0).sqrt());
    let mut inner = sqrt_a.matmul(b.matrix()).matmul(&sqrt_a);
    // remove the rounding-level anti-Hermitian part
    let n = inner.dim();
    for i in 0..n {
        for j in i..n {
            let avg = (inner[(i, j)] + inner[(j, i)].conj()) * 0.5;
            inner[(i, j)] = avg;
            inner[(j, i)] = avg.conj();
        }
    }
    let root_sum: f64 = hermitian_eigenvalues(&inner)?
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    Ok((root_sum * root_sum).clamp(0.0, 1.0))
}

fn check_probs(p: &Probabilities, q: &Probabilities) -> Result<()> {
    if p.n_qubits() != q.n_qubits() {
        return Err(Error::QubitMismatch {
            left: p.n_qubits(),
            right: q.n_qubits(),
        });
    }
    Ok(())
}

/// Hellinger distance between two probability vectors.
pub fn hellinger_probs(p: &Probabilities, q: &Probabilities) -> Result<f64> {
    check_probs(p, q)?;
    let sum: f64 = p
        .values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((sum / 2.0).sqrt().clamp(0.0, 1.0))
}

/// Jensen–Shannon distance (base-2 logarithm) between two probability vectors.
pub fn jensen_shannon_probs(p: &Probabilities, q: &Probabilities) -> Result<f64> {
    check_probs(p, q)?;
    let (mut kl_p, mut kl_q) = (0.0, 0.0);
    for (&a, &b) in p.values().iter().zip(q.values()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            kl_p += a * (a / m).log2();
        }
        if b > 0.0 {
            kl_q += b * (b / m).log2();
        }
    }
    Ok((0.5 * (kl_p + kl_q)).max(0.0).sqrt().clamp(0.0, 1.0))
}

pub fn hellinger(p: &OutputDistribution, q: &OutputDistribution) -> Result<f64> {
    hellinger_probs(&p.probabilities(), &q.probabilities())
}

pub fn jensen_shannon(p: &OutputDistribution, q: &OutputDistribution) -> Result<f64> {
    jensen_shannon_probs(&p.probabilities(), &q.probabilities())
}

pub fn expectation_diff(a: ExpectationValue, b: ExpectationValue) -> f64 {
    (a.value() - b.value()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, r};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn ket(n: usize, amps: &[Complex64]) -> DensityMatrix {
        DensityMatrix::from_pure(n, amps).unwrap()
    }

    fn random_pure(n: usize, rng: &mut impl Rng) -> DensityMatrix {
        let amps: Vec<Complex64> = (0..1 << n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        ket(n, &amps.iter().map(|a| a / norm).collect::<Vec<_>>())
    }

    /// Random full-rank state: G G† / Tr(G G†).
    fn random_mixed(n: usize, rng: &mut impl Rng) -> DensityMatrix {
        let d = 1 << n;
        let g = CMatrix::from_vec(
            d,
            (0..d * d)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        );
        let m = g.matmul(&g.adjoint());
        let tr = m.trace().re;
        DensityMatrix::from_matrix(n, m.scale(r(1.0 / tr))).unwrap()
    }

    fn random_probs(n: usize, rng: &mut impl Rng) -> Probabilities {
        let w = (0..1 << n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect::<Vec<_>>();
        let mut p = Probabilities::from_weights(n, w);
        if p.values().iter().all(|&v| v == 0.0) {
            p = Probabilities::from_weights(n, vec![1.0; 1 << n]);
        }
        p
    }

    fn probs(n: usize, pairs: &[(&str, f64)]) -> Probabilities {
        let map = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Probabilities::from_map(n, &map).unwrap()
    }

    #[test]
    fn orientation_and_names() {
        for m in MetricKind::ALL {
            assert_eq!(m.is_similarity(), m == MetricKind::Fidelity);
            assert_eq!(m.name().parse::<MetricKind>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
    }

    #[test]
    fn reference_values() {
        let zero = ket(1, &[r(1.0), r(0.0)]);
        let one = ket(1, &[r(0.0), r(1.0)]);
        let plus = ket(1, &[r(FRAC_1_SQRT_2), r(FRAC_1_SQRT_2)]);
        assert!(trace_distance(&zero, &zero).unwrap().abs() < 1e-15);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-15);
        assert!((trace_distance(&zero, &plus).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((fidelity(&zero, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!(fidelity(&zero, &one).unwrap().abs() < 1e-15);
        assert!((fidelity(&zero, &plus).unwrap() - 0.5).abs() < 1e-12);

        let bell = probs(2, &[("00", 0.5), ("11", 0.5)]);
        let zz = probs(2, &[("00", 1.0)]);
        assert!((hellinger_probs(&bell, &zz).unwrap() - 0.541_196_100_146_197).abs() < 1e-12);
        let p = probs(1, &[("0", 0.5), ("1", 0.5)]);
        let q = probs(1, &[("0", 0.75), ("1", 0.25)]);
        // independent evaluation of the two KL terms
        let m = [0.625f64, 0.375];
        let kl_p = 0.5 * (0.5 / m[0]).log2() + 0.5 * (0.5 / m[1]).log2();
        let kl_q = 0.75 * (0.75 / m[0]).log2() + 0.25 * (0.25 / m[1]).log2();
        let js = ((kl_p + kl_q) / 2.0).sqrt();
        assert!((jensen_shannon_probs(&p, &q).unwrap() - js).abs() < 1e-14);
        assert!((js - 0.220_89).abs() < 1e-4);

        let a = OutputDistribution::from_pairs(1, &[("0", 100)]).unwrap();
        let b = OutputDistribution::from_pairs(1, &[("1", 100)]).unwrap();
        assert!((hellinger(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((jensen_shannon(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(hellinger(&a, &a).unwrap(), 0.0);
        assert_eq!(jensen_shannon(&a, &a).unwrap(), 0.0);

        let ev = |x| ExpectationValue::new(x).unwrap();
        assert_eq!(expectation_diff(ev(0.3), ev(0.3)), 0.0);
        assert_eq!(expectation_diff(ev(1.0), ev(-1.0)), 2.0);
        assert_eq!(expectation_diff(ev(1.0), ev(0.0)), 1.0);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let a = DensityMatrix::zero_state(1);
        let b = DensityMatrix::zero_state(2);
        assert!(trace_distance(&a, &b).is_err());
        assert!(fidelity(&a, &b).is_err());
        let p = OutputDistribution::from_pairs(1, &[("0", 1)]).unwrap();
        let q = OutputDistribution::from_pairs(2, &[("00", 1)]).unwrap();
        assert!(hellinger(&p, &q).is_err());
        assert!(jensen_shannon(&p, &q).is_err());
    }

    #[test]
    fn range_symmetry_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for i in 0..1000 {
            let n = 1 + i % 3;
            let (a, b) = if i % 2 == 0 {
                (random_mixed(n, &mut rng), random_mixed(n, &mut rng))
            } else {
                (random_pure(n, &mut rng), random_mixed(n, &mut rng))
            };
            let d = trace_distance(&a, &b).unwrap();
            let f = fidelity(&a, &b).unwrap();
            assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&f));
            assert_eq!(d, trace_distance(&b, &a).unwrap());
            assert_eq!(f, fidelity(&b, &a).unwrap());
            if i % 10 == 0 {
                assert!(trace_distance(&a, &a).unwrap() < 1e-12);
                assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            }

            let (p, q) = (random_probs(n, &mut rng), random_probs(n, &mut rng));
            for metric in [hellinger_probs, jensen_shannon_probs] {
                let v = metric(&p, &q).unwrap();
                assert!((0.0..=1.0).contains(&v));
                assert_eq!(v, metric(&q, &p).unwrap());
                assert!(metric(&p, &p).unwrap() < 1e-12);
            }
            let (x, y) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            let ev = |v| ExpectationValue::new(v).unwrap();
            let e = expectation_diff(ev(x), ev(y));
            assert!((0.0..=2.0).contains(&e));
            assert_eq!(e, expectation_diff(ev(y), ev(x)));
        }
    }

    #[test]
    fn pure_states_link_trace_distance_and_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for i in 0..200 {
            let n = 1 + i % 3;
            let a = random_pure(n, &mut rng);
            let b = random_pure(n, &mut rng);
            let d = trace_distance(&a, &b).unwrap();
            let f = fidelity(&a, &b).unwrap();
            assert!((d - (1.0 - f).sqrt()).abs() < 1e-8, "{d} vs {f}");
        }
    }

    #[test]
    fn general_fidelity_path_matches_pure_formula() {
        // a mixture that is pure up to 1e-9 falls through to the eigen route
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_pure(2, &mut rng);
        let b = random_mixed(2, &mut rng);
        let eps = 1e-6;
        let mut m = a.matrix().scale(r(1.0 - eps));
        m.add_assign(&CMatrix::identity(4).scale(r(eps / 4.0)));
        let near = DensityMatrix::from_matrix(2, m).unwrap();
        assert!(near.purity() < 1.0 - PURE_TOL);
        let expect = (1.0 - eps) * real_trace_product(a.matrix(), b.matrix()) + eps / 4.0;
        // F ≥ Tr(στ) with equality for pure σ; the gap is O(√eps)
        let f = fidelity(&near, &b).unwrap();
        assert!(f >= expect - 1e-12 && f - expect < 1e-2, "{f} vs {expect}");
    }

    #[test]
    fn triangle_inequalities() {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        for i in 0..200 {
            let n = 1 + i % 3;
            let s: Vec<_> = (0..3).map(|_| random_mixed(n, &mut rng)).collect();
            let ab = trace_distance(&s[0], &s[1]).unwrap();
            let bc = trace_distance(&s[1], &s[2]).unwrap();
            let ac = trace_distance(&s[0], &s[2]).unwrap();
            assert!(ac <= ab + bc + 1e-10);
            let p: Vec<_> = (0..3).map(|_| random_probs(n, &mut rng)).collect();
            let ab = hellinger_probs(&p[0], &p[1]).unwrap();
            let bc = hellinger_probs(&p[1], &p[2]).unwrap();
            let ac = hellinger_probs(&p[0], &p[2]).unwrap();
            assert!(ac <= ab + bc + 1e-10);
        }
    }
}
